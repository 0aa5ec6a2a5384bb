#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drf/geometry.hpp"
#include "drf/pose_io.hpp"

namespace drf {

/// Dense float image, row-major. (x, y) = (column, row); values are
/// evaluated at integer pixel centers.
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0) {}

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
};

/// Rasterization parameters. Normalized poses are placed on the canvas with
///   column = (width - 1)/2 + k * x
///   row    = origin_row_fraction * height + k * y
/// where k = vertical_span_fraction * height / normalized_height, so the
/// normalized body height occupies vertical_span_fraction of the canvas.
/// The column anchor (width-1)/2 is the pixel-center midline, which makes
/// left/right reflection an exact grid mirror.
struct RenderConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  double sigma = 2.0;  // Gaussian radius in canvas pixels
  double vertical_span_fraction = 0.78;
  double origin_row_fraction = 0.78;
  double normalized_height = kNormalizedHeight;
  double confidence_min = kDefaultConfidenceMin;
};

struct CanvasPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Applies the RenderConfig canvas mapping to a normalized coordinate pair.
CanvasPoint map_to_canvas(const RenderConfig& cfg, double x, double y);

/// Throws ConfigError unless width, height >= 8 and sigma > 0.
void validate_render_config(const RenderConfig& cfg);

/// A skeleton edge between two keypoint indices.
struct LimbSegment {
  int a = 0;
  int b = 0;
};

/// The 16-edge COCO drawing skeleton.
std::span<const LimbSegment> coco_limbs();

/// Two-channel dense rendering of one pose frame.
struct SkeletonMap {
  Grid keypoint_channel;
  Grid limb_channel;
};

using SkeletonMapSequence = std::vector<SkeletonMap>;

/// Sum of per-keypoint Gaussians weighted by confidence. Keypoints below
/// cfg.confidence_min contribute nothing; off-canvas keypoints still
/// contribute their on-canvas tail.
Grid render_keypoint_map(const PoseFrame& frame, const RenderConfig& cfg);

/// Sum of line-like Gaussians over point-to-segment distance, each weighted
/// by min of the endpoint confidences. A zero-length segment degenerates to
/// a point Gaussian. Limbs with an invalid endpoint contribute nothing.
Grid render_limb_map(const PoseFrame& frame, const RenderConfig& cfg,
                     std::span<const LimbSegment> limbs = coco_limbs());

SkeletonMapSequence render_sequence(const NormalizedSequence& seq,
                                    const RenderConfig& cfg,
                                    std::span<const LimbSegment> limbs =
                                        coco_limbs());

/// Squared Euclidean distance from point p to segment [a, b].
double point_segment_dist2(CanvasPoint p, CanvasPoint a, CanvasPoint b);

/// ASCII PGM (P2) with values scaled by 255/max and rounded half-up.
std::string to_pgm(const Grid& grid);
void write_pgm(const Grid& grid, const std::filesystem::path& path);

}  // namespace drf
