#pragma once

#include <array>
#include <string>
#include <vector>

#include "drf/model.hpp"
#include "drf/pose_io.hpp"
#include "drf/skeleton_map.hpp"
#include "drf/training.hpp"

namespace drf {

/// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  std::size_t total() const;
  std::size_t diagonal() const;
};

struct Metrics {
  double accuracy = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
};

/// Per-class precision/recall/F1 with the 0/0 := 0 convention and their
/// unweighted macro averages.
Metrics metrics_from_confusion(const ConfusionMatrix& confusion);

/// Runs the checkpointed model over the dataset (scaling with the stored
/// stats) and scores predictions. Throws ValidationError on an empty set.
Metrics evaluate(const Checkpoint& ckpt,
                 const std::vector<PoseSequence>& dataset);

/// Header "accuracy,macro_precision,macro_recall,macro_f1,cm_00..cm_22".
std::string metrics_to_csv(const Metrics& metrics);

struct AblationRun {
  GuidanceSource guidance;
  bool channel_branch = true;
  bool spatial_branch = true;
};

struct AblationSpec {
  std::vector<AblationRun> runs;
};

struct AblationRow {
  std::string run_id;
  AblationRun run;
  bool ok = false;
  std::string error;
  Metrics metrics;
};

/// Trains and evaluates one model per spec entry with a shared seed and a
/// shared train/test split. A failed entry marks its row and the remaining
/// runs continue.
std::vector<AblationRow> run_ablation(const AblationSpec& spec,
                                      const std::vector<PoseSequence>& train_set,
                                      const std::vector<PoseSequence>& test_set,
                                      const TrainConfig& base);

/// CSV: run,guidance,channel,spatial,acc,prec,rec,f1 (failed rows carry the
/// error message in place of numbers).
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

/// Class activation map: channel-weighted sum of the temporally pooled final
/// conv activations, bilinearly upsampled to the render canvas and min-max
/// scaled to [0, 1].
Grid cam_heatmap(const Checkpoint& ckpt, const PoseSequence& seq,
                 std::size_t target_class);

/// Low-level CAM composition on raw activations [C, h, w]; exposed for
/// direct verification.
Grid cam_from_activations(const std::vector<double>& activations,
                          std::size_t channels, std::size_t height,
                          std::size_t width,
                          const std::vector<double>& channel_weights,
                          std::size_t out_width, std::size_t out_height);

}  // namespace drf
