#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ebmlab/graph.hpp"
#include "ebmlab/tensor.hpp"

namespace ebmlab {

enum class Norm { kLinf, kL2 };

std::string to_string(Norm norm);
Norm parse_norm(std::string_view text);

// Fully connected ReLU network on flat inputs.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;
};

// conv(3x3) -> ReLU -> conv(3x3) -> ReLU -> dense, for small grayscale or
// multi-channel images.
struct SmallConvSpec {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t classes = 10;
  std::size_t conv1 = 4;
  std::size_t conv2 = 8;
  std::size_t kernel = 3;
  Padding padding = Padding::kValid;
};

using Architecture = std::variant<MlpSpec, SmallConvSpec>;

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);
// Compact text form: "mlp:2:16,16:2" or "smallconv:1:28x28:10[:c1,c2]".
Architecture parse_architecture(std::string_view text);

enum class Regime { kUntrained, kStandard, kAdversarial };

struct Provenance {
  Regime regime = Regime::kUntrained;
  // Meaningful only for kAdversarial.
  Norm norm = Norm::kLinf;
  double epsilon = 0.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

std::string to_string(Regime regime);

class Model {
 public:
  // Uniform He-style initialization: weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
  // biases zero.
  static Model build(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  std::size_t classes() const noexcept;
  // Per-sample input shape, e.g. {2} or {1,28,28}.
  const Shape& input_shape() const noexcept { return input_shape_; }

  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept;
  static std::string parameter_name(std::size_t index);

  const Provenance& provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) noexcept { provenance_ = p; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Appends the network to `graph`, reading from node `x` of shape
  // [N, input_shape...]. Parameters become inputs named by parameter_name().
  NodeId emit(Graph& graph, NodeId x, bool parameter_grad) const;
  void bind_parameters(Graph::Bindings& bindings) const;

  // Logits of a single sample shaped input_shape().
  std::vector<double> logits(const Tensor& x) const;
  // Logits of a batch shaped [N, input_shape...] as an [N,K] tensor.
  Tensor batch_logits(const Tensor& batch) const;
  std::size_t predict(const Tensor& x) const;

  // Identifies architecture + parameter values.
  std::string checksum() const;

 private:
  Architecture arch_;
  Shape input_shape_;
  std::vector<Tensor> params_;
  Provenance provenance_;
  std::uint64_t seed_ = 0;
};

// The batch shape for `n` samples of the model's input shape.
Shape batch_shape(const Model& model, std::size_t n);

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kVersionMismatch, kTruncated, kChecksumMismatch, kMalformed };
  CheckpointError(Kind kind, const std::string& what) : Error("model-zoo", what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes);

}  // namespace ebmlab
