#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "drf/model.hpp"
#include "drf/pav.hpp"
#include "drf/pose_io.hpp"
#include "drf/skeleton_map.hpp"
#include "drf/tensor.hpp"

namespace drf {

struct TrainConfig {
  double margin = 0.2;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t classes_per_batch = 3;  // p
  std::size_t seqs_per_class = 2;     // k
  std::uint64_t seed = 0;
  GuidanceSource guidance;
  bool channel_branch = true;
  bool spatial_branch = true;
  double confidence_min = kDefaultConfidenceMin;
  RenderConfig render;
  EncoderConfig encoder;
};

/// Throws ConfigError unless margin > 0, p >= 2, and k >= 2.
void validate_train_config(const TrainConfig& cfg);

/// A sequence after normalization, rendering, and asymmetry extraction.
struct PreparedSequence {
  SkeletonMapSequence maps;
  RawPav raw_pav;
  Pav pav;
  int label = 0;
  std::string subject_id;
};

/// Normalizes, renders, and measures every sequence. When `stats` is given
/// the profiles are scaled with it; otherwise pav is left zeroed (fit first,
/// then call apply_stats).
std::vector<PreparedSequence> prepare_dataset(
    const std::vector<PoseSequence>& seqs, double c_min,
    const RenderConfig& render, const MinMaxStats* stats = nullptr);

void apply_stats(std::vector<PreparedSequence>& prepared,
                 const MinMaxStats& stats);

/// Batch-all triplet hinge: mean over strips and over every (anchor,
/// positive, negative) triple of max(0, margin + d_ap - d_an), with
/// per-strip Euclidean distances. Returns 0 (and sets *had_triplet false)
/// when the batch admits no valid triple.
Tensor triplet_loss(const std::vector<Tensor>& embeddings,
                    const std::vector<int>& labels, double margin,
                    bool* had_triplet = nullptr);

/// Log-sum-exp stabilized negative log likelihood of the labeled class.
Tensor cross_entropy(const Tensor& logits, int label);

struct EpochStats {
  std::size_t epoch = 0;
  double ce = 0.0;
  double triplet = 0.0;
  double train_accuracy = 0.0;
};

/// CSV with header "epoch,l_ce,l_triplet,train_acc".
std::string epoch_log_to_csv(const std::vector<EpochStats>& log);

/// Self-describing trained model: parameters plus everything inference
/// needs (scaling stats, render and encoder configuration, guidance).
struct Checkpoint {
  EncoderConfig encoder;
  RenderConfig render;
  GuidanceSource guidance;
  bool channel_branch = true;
  bool spatial_branch = true;
  double confidence_min = kDefaultConfidenceMin;
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  double final_train_accuracy = 0.0;
  MinMaxStats stats;
  struct Array {
    std::string name;
    Shape shape;
    std::vector<double> data;
    bool trainable = true;
  };
  std::vector<Array> arrays;
};

Checkpoint checkpoint_from_model(const DrfModel& model, const TrainConfig& cfg,
                                 const MinMaxStats& stats,
                                 std::size_t epochs_trained,
                                 double final_train_accuracy);

DrfModel model_from_checkpoint(const Checkpoint& ckpt);

/// Little-endian binary: magic, version, JSON metadata block, then raw
/// float64 blobs indexed by name/offset in the metadata.
void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> log;
};

/// Class-balanced p*k sampling with SGD-momentum updates on the combined
/// cross-entropy + triplet objective. Deterministic for a fixed seed.
/// Throws ValidationError when fewer than two classes are present.
TrainResult train(const std::vector<PoseSequence>& dataset,
                  const TrainConfig& cfg);

}  // namespace drf
