#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ebmlab/tensor.hpp"

namespace ebmlab {

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  // Position of each sample in the dataset it was split from.
  std::vector<std::size_t> origin;
  std::size_t classes = 0;
  Shape input_shape;
  // Box every input component lies in, when the data has one (images: [0,1]).
  std::optional<std::pair<double, double>> bounds;
  std::string split = "all";
  // Generative parameters of synthetic data, kept for oracle checks.
  nlohmann::json generator;

  std::size_t size() const noexcept { return inputs.size(); }
  bool empty() const noexcept { return inputs.empty(); }
  // Throws if any invariant is broken.
  void validate() const;
  Tensor batch(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Axis-aligned bounding box of the inputs (per component).
  std::pair<std::vector<double>, std::vector<double>> bounding_box() const;
};

class DataError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kCountMismatch, kTruncated, kMalformed, kUnknownKind, kSplit };
  DataError(Kind kind, const std::string& what) : Error("data-ingest", what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// IDX (MNIST-format) images 0x00000803 and labels 0x00000801; pixels scaled
// to [0,1] by /255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes);
// Inverse of load_idx for [0,1] single-channel image datasets; values are
// rounded to the nearest 1/255.
void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels);

// Header row; a column named `label`, all others are features.
Dataset load_csv(const std::filesystem::path& path);

// two_gaussians: means (+-2, 0), identity covariance, 2 classes.
// two_moons: the classic interleaved half circles, noise 0.1, 2 classes.
// mixture_k: `components` isotropic Gaussians (std 0.5) on a circle of radius 3,
// one class per component.
// Labels alternate i % classes, so any n >= classes is exactly stratified.
Dataset synth_2d(std::string_view kind, std::size_t n, std::uint64_t seed,
                 std::size_t components = 3);

// 10-class 28x28 grayscale glyphs: each class is a fixed pattern of three soft
// strokes drawn faintly over a gray background, randomly shifted, scaled and
// corrupted by pixel noise. Values are quantized to multiples of 1/255.
struct GlyphParams {
  double background = 0.4;
  double amplitude_lo = 0.06;
  double amplitude_hi = 0.10;
  double noise = 0.03;
  int max_shift = 2;
  std::uint64_t pattern_seed = 1000;
};
Dataset synth_glyphs(std::size_t n, std::uint64_t seed, const GlyphParams& params = {});
// The noise-free class pattern (values in [0,1]) used by synth_glyphs.
std::vector<double> glyph_pattern(std::size_t label, const GlyphParams& params = {});

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Stratified seeded partition. Fractions must be >= 0 and sum to 1.
Splits split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

// "synth:two_gaussians", "synth:glyphs", "idx:<images>,<labels>", or a path
// to a .csv file. `n` and `seed` apply to synthetic sources only.
Dataset load_dataset(std::string_view source, std::size_t n, std::uint64_t seed);

}  // namespace ebmlab
