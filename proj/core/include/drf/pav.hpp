#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "drf/geometry.hpp"
#include "drf/pose_io.hpp"

namespace drf {

inline constexpr std::size_t kPairCount = 8;
inline constexpr std::size_t kMetricCount = 3;  // vd, md, ad
inline constexpr std::size_t kPavSize = kPairCount * kMetricCount;

/// Metric column order within a PAV row.
enum PavMetric : std::size_t { kVerticalDev = 0, kMidlineDev = 1, kAngularDev = 2 };

struct SymmetricPair {
  int left = 0;
  int right = 0;
};

/// The eight anatomically symmetric COCO pairs, top to bottom.
const std::array<SymmetricPair, kPairCount>& symmetric_pairs();
const std::array<std::string, kPairCount>& pair_names();

/// pairs x metrics, row-major by pair.
using PavMatrix = std::array<std::array<double, kMetricCount>, kPairCount>;

/// Per-frame asymmetry measurements plus pair validity at the confidence
/// threshold used.
struct FrameAsymmetry {
  PavMatrix raw{};
  std::array<bool, kPairCount> valid{};
};

/// Sequence-level aggregate before dataset scaling. warning[p][m] marks a
/// dimension that had no valid frames (its value is 0).
struct RawPav {
  PavMatrix value{};
  std::array<std::array<bool, kMetricCount>, kPairCount> warning{};
};

/// Dataset-scaled asymmetry profile; every entry lies in [0, 1].
struct Pav {
  PavMatrix value{};
};

/// Per-dimension min/max fitted on a training split.
struct MinMaxStats {
  PavMatrix min{};
  PavMatrix max{};
  std::string fit_split;
};

/// Vertical / midline / angular deviation per symmetric pair, measured on a
/// pelvis-aligned frame (the midline is x = 0 by construction).
FrameAsymmetry frame_metrics(const PoseFrame& frame,
                             double c_min = kDefaultConfidenceMin);

/// Tukey-fence outlier removal: keeps samples within
/// [Q1 - 1.5 IQR, Q3 + 1.5 IQR], quartiles by linear interpolation at
/// position q*(n-1). Preserves input order. Throws on empty input.
std::vector<double> iqr_filter(const std::vector<double>& samples);

/// Per-dimension IQR filter followed by the arithmetic mean over frames in
/// which the pair is valid.
RawPav aggregate_sequence(const std::vector<FrameAsymmetry>& frames);

/// Convenience: frame_metrics on every frame, then aggregate.
RawPav sequence_raw_pav(const NormalizedSequence& seq,
                        double c_min = kDefaultConfidenceMin);

MinMaxStats fit_minmax(const std::vector<RawPav>& raw_pavs,
                       std::string fit_split = "train");

/// (raw - min) / (max - min) elementwise, clamped to [0, 1]; degenerate
/// dimensions (max == min) map to 0.
Pav apply_minmax(const RawPav& raw, const MinMaxStats& stats);

/// Row-major flattening (pair-major, metric-minor) used as guidance input.
std::array<double, kPavSize> flatten(const PavMatrix& m);

/// CSV with header "pair,vd,md,ad", one row per symmetric pair.
std::string pav_to_csv(const PavMatrix& m);

void save_minmax(const MinMaxStats& stats, const std::filesystem::path& path);
MinMaxStats load_minmax(const std::filesystem::path& path);

}  // namespace drf
