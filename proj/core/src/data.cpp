#include "ebmlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "ebmlab/io.hpp"

namespace ebmlab {

namespace {

using Kind = DataError::Kind;

std::uint32_t read_be32(std::string_view bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) throw DataError(Kind::kTruncated, "IDX header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

void append_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::string read_or_throw(const std::filesystem::path& path) {
  try {
    return read_file(path);
  } catch (const Error& e) {
    throw DataError(Kind::kIo, e.what());
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto end = line.find(',', start);
    out.push_back(trim(line.substr(start, end == std::string_view::npos ? end : end - start)));
    if (end == std::string_view::npos) return out;
    start = end + 1;
  }
}

}  // namespace

void Dataset::validate() const {
  if (inputs.size() != labels.size()) {
    throw DataError(Kind::kMalformed, "inputs and labels differ in count");
  }
  if (!origin.empty() && origin.size() != inputs.size()) {
    throw DataError(Kind::kMalformed, "origin bookkeeping differs in count");
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != input_shape) {
      throw DataError(Kind::kMalformed, "sample " + std::to_string(i) + " has shape " +
                                            shape_to_string(inputs[i].shape()));
    }
    if (labels[i] >= classes) {
      throw DataError(Kind::kMalformed, "sample " + std::to_string(i) + " label out of range");
    }
    if (bounds) {
      for (double v : inputs[i].values()) {
        if (v < bounds->first || v > bounds->second) {
          throw DataError(Kind::kMalformed, "sample " + std::to_string(i) + " outside bounds");
        }
      }
    }
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  std::vector<Tensor> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(inputs.at(i));
  return stack(rows);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.input_shape = input_shape;
  out.bounds = bounds;
  out.split = split;
  out.generator = generator;
  for (auto i : indices) {
    out.inputs.push_back(inputs.at(i));
    out.labels.push_back(labels.at(i));
    out.origin.push_back(origin.empty() ? i : origin[i]);
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> Dataset::bounding_box() const {
  if (inputs.empty()) throw DataError(Kind::kMalformed, "bounding box of an empty dataset");
  std::vector<double> lo(inputs.front().values()), hi(inputs.front().values());
  for (const auto& x : inputs) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      lo[j] = std::min(lo[j], x[j]);
      hi[j] = std::max(hi[j], x[j]);
    }
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// IDX

Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes) {
  if (read_be32(image_bytes, 0) != 0x00000803) {
    throw DataError(Kind::kBadMagic, "image file magic is not 0x00000803");
  }
  if (read_be32(label_bytes, 0) != 0x00000801) {
    throw DataError(Kind::kBadMagic, "label file magic is not 0x00000801");
  }
  const std::size_t n_images = read_be32(image_bytes, 4);
  const std::size_t rows = read_be32(image_bytes, 8);
  const std::size_t cols = read_be32(image_bytes, 12);
  const std::size_t n_labels = read_be32(label_bytes, 4);
  if (n_images != n_labels) {
    throw DataError(Kind::kCountMismatch, std::to_string(n_images) + " images but " +
                                              std::to_string(n_labels) + " labels");
  }
  if (rows == 0 || cols == 0) throw DataError(Kind::kMalformed, "IDX image with zero extent");
  if (image_bytes.size() < 16 + n_images * rows * cols) {
    throw DataError(Kind::kTruncated, "image payload truncated");
  }
  if (label_bytes.size() < 8 + n_labels) throw DataError(Kind::kTruncated, "label payload truncated");

  Dataset d;
  d.input_shape = {1, rows, cols};
  d.bounds = std::pair{0.0, 1.0};
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    Tensor t(d.input_shape);
    const std::size_t base = 16 + i * rows * cols;
    for (std::size_t p = 0; p < rows * cols; ++p) {
      t[p] = static_cast<double>(static_cast<unsigned char>(image_bytes[base + p])) / 255.0;
    }
    d.inputs.push_back(std::move(t));
    const std::size_t y = static_cast<unsigned char>(label_bytes[8 + i]);
    max_label = std::max(max_label, y);
    d.labels.push_back(y);
    d.origin.push_back(i);
  }
  d.classes = std::max<std::size_t>(max_label + 1, 2);
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  Dataset d = parse_idx(read_or_throw(images), read_or_throw(labels));
  d.generator = {{"source", "idx"}, {"images", images.string()}, {"labels", labels.string()}};
  return d;
}

void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  if (data.input_shape.size() != 3 || data.input_shape[0] != 1) {
    throw DataError(Kind::kMalformed, "IDX export needs single-channel images");
  }
  std::string img, lab;
  append_be32(img, 0x00000803);
  append_be32(img, static_cast<std::uint32_t>(data.size()));
  append_be32(img, static_cast<std::uint32_t>(data.input_shape[1]));
  append_be32(img, static_cast<std::uint32_t>(data.input_shape[2]));
  append_be32(lab, 0x00000801);
  append_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.inputs[i].values()) {
      const double q = std::clamp(std::round(v * 255.0), 0.0, 255.0);
      img.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    if (data.labels[i] > 255) throw DataError(Kind::kMalformed, "IDX labels must fit a byte");
    lab.push_back(static_cast<char>(static_cast<unsigned char>(data.labels[i])));
  }
  write_file_atomic(images, img);
  write_file_atomic(labels, lab);
}

// ---------------------------------------------------------------------------
// CSV

Dataset load_csv(const std::filesystem::path& path) {
  std::istringstream in(read_or_throw(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(Kind::kMalformed, "CSV has no header row");
  auto header = split_csv(line);
  auto label_it = std::find(header.begin(), header.end(), std::string_view("label"));
  if (label_it == header.end()) throw DataError(Kind::kMalformed, "CSV has no `label` column");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t features = header.size() - 1;
  if (features == 0) throw DataError(Kind::kMalformed, "CSV has no feature columns");

  Dataset d;
  d.input_shape = {features};
  std::size_t max_label = 0, row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw DataError(Kind::kMalformed, "CSV row " + std::to_string(row) + " has " +
                                            std::to_string(cells.size()) + " cells");
    }
    Tensor x(d.input_shape);
    std::size_t j = 0;
    try {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c == label_col) continue;
        x[j++] = parse_rational(cells[c]);
      }
      const double y = parse_rational(cells[label_col]);
      if (y < 0 || y != std::floor(y)) throw DataError(Kind::kMalformed, "non-integer label");
      d.labels.push_back(static_cast<std::size_t>(y));
      max_label = std::max(max_label, d.labels.back());
    } catch (const DataError&) {
      throw;
    } catch (const Error& e) {
      throw DataError(Kind::kMalformed, "CSV row " + std::to_string(row) + ": " + e.what());
    }
    d.origin.push_back(d.inputs.size());
    d.inputs.push_back(std::move(x));
  }
  if (d.inputs.empty()) throw DataError(Kind::kMalformed, "CSV has no data rows");
  d.classes = std::max<std::size_t>(max_label + 1, 2);
  d.generator = {{"source", "csv"}, {"path", path.string()}};
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset synth_2d(std::string_view kind, std::size_t n, std::uint64_t seed, std::size_t components) {
  if (n < 2) throw DataError(Kind::kMalformed, "synthetic dataset needs n >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset d;
  d.input_shape = {2};
  std::vector<std::array<double, 2>> means;
  double component_std = 1.0;
  if (kind == "two_gaussians") {
    d.classes = 2;
    means = {{2.0, 0.0}, {-2.0, 0.0}};
  } else if (kind == "two_moons") {
    d.classes = 2;
    component_std = 0.1;
  } else if (kind == "mixture_k") {
    if (components < 2) throw DataError(Kind::kMalformed, "mixture_k needs >= 2 components");
    d.classes = components;
    component_std = 0.5;
    for (std::size_t c = 0; c < components; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                           static_cast<double>(components);
      means.push_back({3.0 * std::cos(angle), 3.0 * std::sin(angle)});
    }
  } else {
    throw DataError(Kind::kUnknownKind, "unknown synthetic kind '" + std::string(kind) + "'");
  }
  if (n < d.classes) throw DataError(Kind::kMalformed, "fewer samples than classes");

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % d.classes;
    Tensor x(d.input_shape);
    if (kind == "two_moons") {
      const double t = std::numbers::pi * unit(rng);
      x[0] = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
      x[1] = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
      x[0] += component_std * gauss(rng);
      x[1] += component_std * gauss(rng);
    } else {
      x[0] = means[y][0] + component_std * gauss(rng);
      x[1] = means[y][1] + component_std * gauss(rng);
    }
    d.inputs.push_back(std::move(x));
    d.labels.push_back(y);
    d.origin.push_back(i);
  }
  d.generator = {{"source", "synth"}, {"kind", kind}, {"n", n}, {"seed", seed},
                 {"std", component_std}};
  if (!means.empty()) d.generator["means"] = means;
  return d;
}

std::vector<double> glyph_pattern(std::size_t label, const GlyphParams& params) {
  constexpr int kSide = 28;
  constexpr double kStrokeSigma = 1.0;
  std::mt19937_64 rng(params.pattern_seed + label);
  std::uniform_real_distribution<double> endpoint(6.0, 22.0);
  std::vector<double> img(kSide * kSide, 0.0);
  for (int stroke = 0; stroke < 3; ++stroke) {
    const double y0 = endpoint(rng), x0 = endpoint(rng);
    const double y1 = endpoint(rng), x1 = endpoint(rng);
    const double dy = y1 - y0, dx = x1 - x0;
    const double len2 = std::max(dy * dy + dx * dx, 1e-12);
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        const double t = std::clamp(((r - y0) * dy + (c - x0) * dx) / len2, 0.0, 1.0);
        const double ey = r - y0 - t * dy, ex = c - x0 - t * dx;
        const double v = std::exp(-(ey * ey + ex * ex) / (2.0 * kStrokeSigma * kStrokeSigma));
        img[r * kSide + c] = std::max(img[r * kSide + c], v);
      }
    }
  }
  return img;
}

Dataset synth_glyphs(std::size_t n, std::uint64_t seed, const GlyphParams& params) {
  constexpr int kSide = 28;
  constexpr std::size_t kClasses = 10;
  if (n < kClasses) throw DataError(Kind::kMalformed, "glyph dataset needs n >= 10");
  if (params.amplitude_lo > params.amplitude_hi || params.noise < 0 || params.max_shift < 0) {
    throw DataError(Kind::kMalformed, "invalid glyph parameters");
  }
  std::vector<std::vector<double>> patterns;
  for (std::size_t c = 0; c < kClasses; ++c) patterns.push_back(glyph_pattern(c, params));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shift(-params.max_shift, params.max_shift);
  std::uniform_real_distribution<double> amplitude(params.amplitude_lo, params.amplitude_hi);
  std::normal_distribution<double> noise(0.0, params.noise);

  Dataset d;
  d.classes = kClasses;
  d.input_shape = {1, kSide, kSide};
  d.bounds = std::pair{0.0, 1.0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % kClasses;
    const int sy = shift(rng), sx = shift(rng);
    const double a = amplitude(rng);
    Tensor x(d.input_shape);
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        // Cyclic shift of the pattern.
        const int pr = ((r - sy) % kSide + kSide) % kSide;
        const int pc = ((c - sx) % kSide + kSide) % kSide;
        const double v = params.background + a * patterns[y][pr * kSide + pc] + noise(rng);
        x[r * kSide + c] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
    d.inputs.push_back(std::move(x));
    d.labels.push_back(y);
    d.origin.push_back(i);
  }
  d.generator = {{"source", "synth"},
                 {"kind", "glyphs"},
                 {"n", n},
                 {"seed", seed},
                 {"background", params.background},
                 {"amplitude", {params.amplitude_lo, params.amplitude_hi}},
                 {"noise", params.noise},
                 {"max_shift", params.max_shift},
                 {"pattern_seed", params.pattern_seed}};
  return d;
}

// ---------------------------------------------------------------------------
// Splits

Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  std::size_t active = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw DataError(Kind::kSplit, "split fractions must be non-negative");
    total += f;
    active += f > 0.0 ? 1 : 0;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError(Kind::kSplit, "split fractions must sum to 1");

  std::vector<std::vector<std::size_t>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);

  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < active) {
      throw DataError(Kind::kSplit, "class " + std::to_string(c) + " has " +
                                        std::to_string(members.size()) + " samples for " +
                                        std::to_string(active) + " splits");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    const auto n_val = std::min(members.size() - n_train,
                                static_cast<std::size_t>(std::llround(fractions[1] * n)));
    parts[0].insert(parts[0].end(), members.begin(), members.begin() + n_train);
    parts[1].insert(parts[1].end(), members.begin() + n_train, members.begin() + n_train + n_val);
    parts[2].insert(parts[2].end(), members.begin() + n_train + n_val, members.end());
  }
  Splits out;
  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    std::sort(parts[s].begin(), parts[s].end());
    *targets[s] = data.subset(parts[s]);
    targets[s]->split = names[s];
  }
  return out;
}

Dataset load_dataset(std::string_view source, std::size_t n, std::uint64_t seed) {
  if (source.starts_with("synth:")) {
    const auto kind = source.substr(6);
    if (kind == "glyphs") return synth_glyphs(n, seed);
    if (kind.starts_with("mixture_")) {
      const auto k = kind.substr(8);
      return synth_2d("mixture_k", n, seed, k == "k" ? 3 : std::stoul(std::string(k)));
    }
    return synth_2d(kind, n, seed);
  }
  if (source.starts_with("idx:")) {
    const auto rest = source.substr(4);
    const auto comma = rest.find(',');
    if (comma == std::string_view::npos) {
      throw DataError(Kind::kMalformed, "idx source must be idx:<images>,<labels>");
    }
    return load_idx(std::string(rest.substr(0, comma)), std::string(rest.substr(comma + 1)));
  }
  return load_csv(std::string(source));
}

}  // namespace ebmlab
