#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drf/pav.hpp"
#include "drf/skeleton_map.hpp"
#include "drf/tensor.hpp"

namespace drf {

/// Convolutional encoder layout. Stage 0 keeps resolution; every later stage
/// downsamples by 2. The final stage width is the channel count C of the
/// encoded feature map.
struct EncoderConfig {
  std::vector<std::size_t> stage_channels{32, 64, 128, 256};
  std::size_t horizontal_strips = 8;  // must divide the final feature height
  std::size_t embedding_dim = 64;
  std::size_t input_channels = 2;
  std::size_t num_classes = 3;

  std::size_t feature_channels() const { return stage_channels.back(); }
};

enum class GuidanceKind { pav, self_attention, all_ones, random, learnable };

std::string to_string(GuidanceKind kind);
GuidanceKind guidance_kind_from_string(const std::string& text);

/// What drives the attention module. `seed` matters only for `random`.
struct GuidanceSource {
  GuidanceKind kind = GuidanceKind::pav;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  EncoderConfig encoder;
  GuidanceSource guidance;
  bool channel_branch = true;
  bool spatial_branch = true;
  std::uint64_t init_seed = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

struct ForwardResult {
  Tensor encoded;          // [C, H]
  Tensor channel_weights;  // [C], entries in (0, 1)
  Tensor strip_weights;    // [H], entries in (0, 1)
  Tensor recalibrated;     // [C, H]
  Tensor embeddings;       // [H, d]
  Tensor logits;           // [num_classes]
  Tensor pooled_conv;      // [C, h', w'] after temporal pooling
};

/// Compact attention-recalibrated classifier over skeleton map sequences.
/// Single-threaded during forward/backward; wrap calls in NoGradGuard for
/// inference.
class DrfModel {
 public:
  explicit DrfModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Per-frame conv encoding, temporal max pooling over frames, then
  /// max+mean pooling per horizontal band: [C, H].
  Tensor encode(const SkeletonMapSequence& maps);

  /// Length-24 attention driver per the configured guidance source.
  Tensor guidance_vector(const Pav* pav, const Tensor& encoded);

  struct PgaResult {
    Tensor channel_weights;
    Tensor strip_weights;
    Tensor recalibrated;
  };
  /// Asymmetry-guided attention; only valid when guidance kind is pav.
  PgaResult pga(const Pav& pav, const Tensor& encoded);

  struct HeadsResult {
    Tensor embeddings;
    Tensor logits;
  };
  /// Per-strip embedding heads plus the mean-pooled classifier.
  HeadsResult heads(const Tensor& recalibrated);

  ForwardResult forward(const SkeletonMapSequence& maps, const Pav* pav);

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor param(const std::string& name) const;
  void zero_grad();

 private:
  struct EncodeOutput {
    Tensor encoded;
    Tensor pooled_conv;
  };
  EncodeOutput encode_full(const SkeletonMapSequence& maps);
  PgaResult pga_from_guidance(const Tensor& guidance, const Tensor& encoded);
  Tensor add_param(const std::string& name, Shape shape,
                   std::vector<double> data, bool trainable = true);

  ModelConfig cfg_;
  std::vector<NamedTensor> params_;
};

/// Channel weights of the classifier for each class, composed through the
/// mean pooling and the per-strip embedding heads: [num_classes][C].
std::vector<std::vector<double>> effective_channel_weights(const DrfModel& model);

}  // namespace drf
