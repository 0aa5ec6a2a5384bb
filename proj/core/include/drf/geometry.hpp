#pragma once

#include <array>
#include <string>
#include <vector>

#include "drf/pose_io.hpp"

namespace drf {

/// Target body height in normalized units.
inline constexpr double kNormalizedHeight = 128.0;

/// A pose sequence in normalized coordinates: per frame the hip midpoint sits
/// at the origin, and one shared scale brings the sequence height (median
/// vertical extent of valid keypoints) to kNormalizedHeight.
struct NormalizedSequence {
  std::vector<PoseFrame> frames;
  double scale = 1.0;  // multiplier applied after per-frame translation
  std::vector<std::array<double, 2>> per_frame_offsets;  // pre-scale (dx, dy)
  std::string subject_id;
  ScreeningLabel label = ScreeningLabel::negative;
};

/// Pelvis-aligns every frame and applies the sequence-level height scale.
/// Throws NormalizationError if a frame is missing a valid hip at c_min and
/// DegenerateHeightError if the pose has no measurable vertical extent.
NormalizedSequence normalize_sequence(const PoseSequence& seq,
                                      double c_min = kDefaultConfidenceMin);

}  // namespace drf
