#include "drf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drf/errors.hpp"

namespace drf {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

NormalizedSequence normalize_sequence(const PoseSequence& seq, double c_min) {
  validate_sequence(seq);

  NormalizedSequence out;
  out.subject_id = seq.subject_id;
  out.label = seq.label;
  out.frames.reserve(seq.frames.size());
  out.per_frame_offsets.reserve(seq.frames.size());

  std::vector<double> extents;
  extents.reserve(seq.frames.size());

  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const PoseFrame& frame = seq.frames[f];
    const auto mask = validity_mask(frame, c_min);
    if (!mask[coco::kLeftHip] || !mask[coco::kRightHip]) {
      throw NormalizationError("hip keypoint below confidence threshold", f);
    }
    const Keypoint& hl = frame.keypoints[coco::kLeftHip];
    const Keypoint& hr = frame.keypoints[coco::kRightHip];
    const double mx = 0.5 * (hl.x + hr.x);
    const double my = 0.5 * (hl.y + hr.y);

    PoseFrame shifted = frame;
    for (Keypoint& kp : shifted.keypoints) {
      kp.x -= mx;
      kp.y -= my;
    }
    out.frames.push_back(shifted);
    out.per_frame_offsets.push_back({-mx, -my});

    double y_min = std::numeric_limits<double>::infinity();
    double y_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kKeypointCount; ++k) {
      if (!mask[k]) continue;
      y_min = std::min(y_min, shifted.keypoints[k].y);
      y_max = std::max(y_max, shifted.keypoints[k].y);
    }
    extents.push_back(y_max - y_min);
  }

  const double raw_height = median(extents);
  constexpr double kMinHeight = 1e-9;
  if (!(raw_height > kMinHeight)) {
    throw DegenerateHeightError("sequence vertical extent " +
                                std::to_string(raw_height) +
                                " too small to normalize");
  }

  out.scale = kNormalizedHeight / raw_height;
  for (PoseFrame& frame : out.frames) {
    for (Keypoint& kp : frame.keypoints) {
      kp.x *= out.scale;
      kp.y *= out.scale;
    }
  }
  return out;
}

}  // namespace drf
