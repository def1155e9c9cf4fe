#include "ebmlab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "ebmlab/io.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "model-zoo";
constexpr char kMagic[8] = {'E', 'B', 'M', 'L', 'C', 'K', 'P', 'T'};

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::vector<std::size_t> parse_size_list(std::string_view text, char sep) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(sep, start);
    if (end == std::string_view::npos) end = text.size();
    auto token = text.substr(start, end - start);
    if (token.empty()) fail("empty extent in '" + std::string(text) + "'");
    out.push_back(static_cast<std::size_t>(std::stoull(std::string(token))));
    start = end + 1;
  }
  return out;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto end = text.find(sep, start);
    if (end == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, end - start));
    start = end + 1;
  }
}

void validate(const Architecture& arch) {
  std::visit(overloaded{[](const MlpSpec& s) {
                          if (s.input_dim == 0) fail("mlp input_dim must be positive");
                          if (s.classes < 2) fail("model needs at least 2 classes");
                          for (auto h : s.hidden) {
                            if (h == 0) fail("mlp hidden width must be positive");
                          }
                        },
                        [](const SmallConvSpec& s) {
                          if (s.classes < 2) fail("model needs at least 2 classes");
                          if (s.channels == 0 || s.conv1 == 0 || s.conv2 == 0) {
                            fail("smallconv channel counts must be positive");
                          }
                          if (s.kernel != 3 && s.kernel != 5) fail("smallconv kernel must be 3 or 5");
                          const std::size_t shrink =
                              s.padding == Padding::kValid ? 2 * (s.kernel - 1) : 0;
                          if (s.height <= shrink || s.width <= shrink) {
                            fail("smallconv input too small for its kernels");
                          }
                        }},
             arch);
}

std::vector<Shape> parameter_shapes(const Architecture& arch) {
  return std::visit(
      overloaded{[](const MlpSpec& s) {
                   std::vector<Shape> shapes;
                   std::size_t fan_in = s.input_dim;
                   for (auto h : s.hidden) {
                     shapes.push_back({fan_in, h});
                     shapes.push_back({h});
                     fan_in = h;
                   }
                   shapes.push_back({fan_in, s.classes});
                   shapes.push_back({s.classes});
                   return shapes;
                 },
                 [](const SmallConvSpec& s) {
                   const std::size_t shrink = s.padding == Padding::kValid ? s.kernel - 1 : 0;
                   const std::size_t h = s.height - 2 * shrink, w = s.width - 2 * shrink;
                   return std::vector<Shape>{{s.conv1, s.channels, s.kernel, s.kernel},
                                             {s.conv1},
                                             {s.conv2, s.conv1, s.kernel, s.kernel},
                                             {s.conv2},
                                             {s.conv2 * h * w, s.classes},
                                             {s.classes}};
                 }},
      arch);
}

std::size_t fan_in(const Shape& weight) {
  // Dense weights are [in, out]; conv kernels are [out, in, k, k].
  if (weight.size() == 2) return weight[0];
  return weight[1] * weight[2] * weight[3];
}

}  // namespace

std::string to_string(Norm norm) { return norm == Norm::kLinf ? "linf" : "l2"; }

Norm parse_norm(std::string_view text) {
  if (text == "linf" || text == "Linf" || text == "inf") return Norm::kLinf;
  if (text == "l2" || text == "L2") return Norm::kL2;
  fail("unknown norm '" + std::string(text) + "'");
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kUntrained: return "untrained";
    case Regime::kStandard: return "standard";
    case Regime::kAdversarial: return "adversarial";
  }
  return "untrained";
}

static Regime parse_regime(std::string_view text) {
  if (text == "untrained") return Regime::kUntrained;
  if (text == "standard") return Regime::kStandard;
  if (text == "adversarial") return Regime::kAdversarial;
  throw CheckpointError(CheckpointError::Kind::kMalformed,
                        "unknown provenance '" + std::string(text) + "'");
}

nlohmann::json architecture_to_json(const Architecture& arch) {
  return std::visit(
      overloaded{[](const MlpSpec& s) {
                   return nlohmann::json{{"kind", "mlp"},
                                         {"input_dim", s.input_dim},
                                         {"hidden", s.hidden},
                                         {"classes", s.classes}};
                 },
                 [](const SmallConvSpec& s) {
                   return nlohmann::json{{"kind", "smallconv"},
                                         {"channels", s.channels},
                                         {"height", s.height},
                                         {"width", s.width},
                                         {"classes", s.classes},
                                         {"conv1", s.conv1},
                                         {"conv2", s.conv2},
                                         {"kernel", s.kernel},
                                         {"padding", s.padding == Padding::kSame ? "same" : "valid"}};
                 }},
      arch);
}

Architecture architecture_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  Architecture arch;
  if (kind == "mlp") {
    MlpSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.classes = j.at("classes").get<std::size_t>();
    arch = s;
  } else if (kind == "smallconv") {
    SmallConvSpec s;
    s.channels = j.at("channels").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.classes = j.at("classes").get<std::size_t>();
    s.conv1 = j.value("conv1", s.conv1);
    s.conv2 = j.value("conv2", s.conv2);
    s.kernel = j.value("kernel", s.kernel);
    s.padding = j.value("padding", std::string("valid")) == "same" ? Padding::kSame
                                                                   : Padding::kValid;
    arch = s;
  } else {
    fail("unknown layer kind '" + kind + "'");
  }
  validate(arch);
  return arch;
}

Architecture parse_architecture(std::string_view text) {
  auto parts = split(text, ':');
  if (parts[0] == "mlp" && parts.size() == 4) {
    MlpSpec s;
    s.input_dim = parse_size_list(parts[1], ',').at(0);
    if (!parts[2].empty()) s.hidden = parse_size_list(parts[2], ',');
    s.classes = parse_size_list(parts[3], ',').at(0);
    validate(s);
    return s;
  }
  if (parts[0] == "smallconv" && (parts.size() == 4 || parts.size() == 5)) {
    SmallConvSpec s;
    s.channels = parse_size_list(parts[1], ',').at(0);
    auto hw = parse_size_list(parts[2], 'x');
    if (hw.size() != 2) fail("smallconv extent must be HxW");
    s.height = hw[0];
    s.width = hw[1];
    s.classes = parse_size_list(parts[3], ',').at(0);
    if (parts.size() == 5) {
      auto ch = parse_size_list(parts[4], ',');
      if (ch.size() != 2) fail("smallconv channel list must be c1,c2");
      s.conv1 = ch[0];
      s.conv2 = ch[1];
    }
    validate(s);
    return s;
  }
  fail("unknown layer kind in descriptor '" + std::string(text) + "'");
}

Model Model::build(const Architecture& arch, std::uint64_t seed) {
  validate(arch);
  Model m;
  m.arch_ = arch;
  m.seed_ = seed;
  m.input_shape_ = std::visit(
      overloaded{[](const MlpSpec& s) { return Shape{s.input_dim}; },
                 [](const SmallConvSpec& s) { return Shape{s.channels, s.height, s.width}; }},
      arch);
  std::mt19937_64 rng(seed);
  for (const Shape& shape : parameter_shapes(arch)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(shape)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = dist(rng);
    }
    m.params_.push_back(std::move(t));
  }
  return m;
}

std::size_t Model::classes() const noexcept {
  return std::visit([](const auto& s) { return s.classes; }, arch_);
}

std::size_t Model::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::string Model::parameter_name(std::size_t index) { return "param" + std::to_string(index); }

NodeId Model::emit(Graph& graph, NodeId x, bool parameter_grad) const {
  std::vector<NodeId> p;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    p.push_back(graph.input(parameter_name(i), params_[i].shape(), parameter_grad));
  }
  const std::size_t batch = graph.shape(x).at(0);
  return std::visit(
      overloaded{[&](const MlpSpec& s) {
                   NodeId h = x;
                   for (std::size_t layer = 0; layer < s.hidden.size(); ++layer) {
                     h = graph.relu(graph.bias_add(graph.matmul(h, p[2 * layer]), p[2 * layer + 1]));
                   }
                   const std::size_t last = 2 * s.hidden.size();
                   return graph.bias_add(graph.matmul(h, p[last]), p[last + 1]);
                 },
                 [&](const SmallConvSpec& s) {
                   NodeId h = graph.relu(graph.bias_add(graph.conv2d(x, p[0], s.padding), p[1]));
                   h = graph.relu(graph.bias_add(graph.conv2d(h, p[2], s.padding), p[3]));
                   h = graph.reshape(h, {batch, shape_size(graph.shape(h)) / batch});
                   return graph.bias_add(graph.matmul(h, p[4]), p[5]);
                 }},
      arch_);
}

void Model::bind_parameters(Graph::Bindings& bindings) const {
  for (std::size_t i = 0; i < params_.size(); ++i) bindings[parameter_name(i)] = &params_[i];
}

Shape batch_shape(const Model& model, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), model.input_shape().begin(), model.input_shape().end());
  return s;
}

Tensor Model::batch_logits(const Tensor& batch) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    fail("input shape " + shape_to_string(batch.shape()) + " does not match model input " +
         shape_to_string(input_shape_));
  }
  Graph g;
  NodeId x = g.input("x", batch.shape(), false);
  g.set_output(emit(g, x, false));
  Graph::Bindings b{{"x", &batch}};
  bind_parameters(b);
  return g.evaluate(b);
}

std::vector<double> Model::logits(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    fail("input shape " + shape_to_string(x.shape()) + " does not match model input " +
         shape_to_string(input_shape_));
  }
  Tensor out = batch_logits(x.reshaped(batch_shape(*this, 1)));
  return out.values();
}

std::size_t Model::predict(const Tensor& x) const {
  auto l = logits(x);
  return static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append_le(std::string& out, const void* src, std::size_t n) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  const auto* p = static_cast<const char*>(src);
  if constexpr (std::endian::native == std::endian::little) {
    out.append(p, n);
  } else {
    for (std::size_t i = n; i-- > 0;) out.push_back(p[i]);
  }
}

template <class T>
T read_le(std::string_view bytes, std::size_t offset) {
  T value;
  char buf[sizeof(T)];
  std::memcpy(buf, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::string payload_bytes(const std::vector<Tensor>& params) {
  std::string out;
  for (const auto& t : params) {
    for (double v : t.values()) append_le(out, &v, sizeof v);
  }
  return out;
}

nlohmann::json provenance_to_json(const Provenance& p) {
  nlohmann::json j{{"regime", to_string(p.regime)}};
  if (p.regime == Regime::kAdversarial) {
    j["norm"] = to_string(p.norm);
    j["epsilon"] = p.epsilon;
  }
  return j;
}

}  // namespace

std::string Model::checksum() const {
  const std::uint64_t h = fnv1a64(architecture_to_json(arch_).dump());
  return to_hex(fnv1a64(payload_bytes(params_), h));
}

std::string serialize_checkpoint(const Model& model) {
  const std::string payload = payload_bytes(model.parameters());
  nlohmann::json header{{"format", "ebmlab-checkpoint"},
                        {"architecture", architecture_to_json(model.architecture())},
                        {"classes", model.classes()},
                        {"provenance", provenance_to_json(model.provenance())},
                        {"seed", model.seed()},
                        {"payload_bytes", payload.size()}};
  header["checksum"] = to_hex(fnv1a64(payload, fnv1a64(header.dump())));
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  append_le(out, &version, sizeof version);
  append_le(out, &header_len, sizeof header_len);
  out += text;
  out += payload;
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  constexpr std::size_t kPrefix = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix) throw CheckpointError(Kind::kTruncated, "checkpoint truncated in preamble");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::kMalformed, "not an ebmlab checkpoint (bad magic)");
  }
  const auto version = read_le<std::uint32_t>(bytes, sizeof kMagic);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = read_le<std::uint64_t>(bytes, sizeof kMagic + sizeof(std::uint32_t));
  if (bytes.size() - kPrefix < header_len) {
    throw CheckpointError(Kind::kTruncated, "checkpoint truncated inside header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPrefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMalformed, std::string("checkpoint header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(kPrefix + header_len);

  // A short or padded payload fails the same checksum as a corrupted one.
  const std::string stored = header.value("checksum", std::string());
  header.erase("checksum");
  const std::string computed = to_hex(fnv1a64(payload, fnv1a64(header.dump())));
  if (stored != computed || header.value("payload_bytes", std::size_t{0}) != payload.size()) {
    throw CheckpointError(Kind::kChecksumMismatch,
                          "checkpoint checksum failure (stored " + stored + ", computed " +
                              computed + ", payload " + std::to_string(payload.size()) + " bytes)");
  }

  try {
    Model model = Model::build(architecture_from_json(header.at("architecture")),
                               header.at("seed").get<std::uint64_t>());
    if (header.at("classes").get<std::size_t>() != model.classes()) {
      throw CheckpointError(Kind::kMalformed, "class count disagrees with architecture");
    }
    if (model.parameter_count() * sizeof(double) != payload.size()) {
      throw CheckpointError(Kind::kMalformed, "payload size disagrees with architecture");
    }
    std::size_t offset = 0;
    for (auto& t : model.parameters()) {
      for (auto& v : t.values()) {
        v = read_le<double>(payload, offset);
        offset += sizeof(double);
      }
    }
    const auto& pj = header.at("provenance");
    Provenance p;
    p.regime = parse_regime(pj.at("regime").get<std::string>());
    if (p.regime == Regime::kAdversarial) {
      p.norm = parse_norm(pj.at("norm").get<std::string>());
      p.epsilon = pj.at("epsilon").get<double>();
    }
    model.set_provenance(p);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMalformed, std::string("checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(CheckpointError::Kind::kIo, e.what());
  }
  return deserialize_checkpoint(bytes);
}

}  // namespace ebmlab
