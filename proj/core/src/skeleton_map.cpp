#include "drf/skeleton_map.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include "drf/errors.hpp"

namespace drf {

namespace {

constexpr std::array<LimbSegment, 16> kCocoLimbs = {{
    {5, 6},    // shoulders
    {5, 7},    {7, 9},   {6, 8},  {8, 10},  // arms
    {11, 12},  // pelvis
    {5, 11},   {6, 12},  // trunk
    {11, 13},  {13, 15}, {12, 14}, {14, 16},  // legs
    {0, 1},    {0, 2},   {1, 3},  {2, 4},   // face
}};

double pixel_scale(const RenderConfig& cfg) {
  return cfg.vertical_span_fraction * static_cast<double>(cfg.height) /
         cfg.normalized_height;
}

}  // namespace

std::span<const LimbSegment> coco_limbs() { return kCocoLimbs; }

void validate_render_config(const RenderConfig& cfg) {
  if (cfg.width < 8 || cfg.height < 8) {
    throw ConfigError("canvas must be at least 8x8, got " +
                      std::to_string(cfg.width) + "x" +
                      std::to_string(cfg.height));
  }
  if (!(cfg.sigma > 0.0)) {
    throw ConfigError("sigma must be positive");
  }
  if (!(cfg.vertical_span_fraction > 0.0) || !(cfg.normalized_height > 0.0)) {
    throw ConfigError("span fraction and normalized height must be positive");
  }
}

CanvasPoint map_to_canvas(const RenderConfig& cfg, double x, double y) {
  const double k = pixel_scale(cfg);
  return {(static_cast<double>(cfg.width) - 1.0) / 2.0 + k * x,
          cfg.origin_row_fraction * static_cast<double>(cfg.height) + k * y};
}

Grid render_keypoint_map(const PoseFrame& frame, const RenderConfig& cfg) {
  validate_render_config(cfg);
  Grid grid(cfg.width, cfg.height);
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);

  for (std::size_t k = 0; k < kKeypointCount; ++k) {
    const Keypoint& kp = frame.keypoints[k];
    if (kp.c < cfg.confidence_min) continue;
    const CanvasPoint p = map_to_canvas(cfg, kp.x, kp.y);
    for (std::size_t j = 0; j < cfg.height; ++j) {
      const double dy = static_cast<double>(j) - p.y;
      for (std::size_t i = 0; i < cfg.width; ++i) {
        const double dx = static_cast<double>(i) - p.x;
        grid.at(i, j) += std::exp(-(dx * dx + dy * dy) * inv_two_sigma2) * kp.c;
      }
    }
  }
  return grid;
}

double point_segment_dist2(CanvasPoint p, CanvasPoint a, CanvasPoint b) {
  const double abx = b.x - a.x;
  const double aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  if (len2 == 0.0) {
    const double dx = p.x - a.x;
    const double dy = p.y - a.y;
    return dx * dx + dy * dy;
  }
  double t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * abx);
  const double dy = p.y - (a.y + t * aby);
  return dx * dx + dy * dy;
}

Grid render_limb_map(const PoseFrame& frame, const RenderConfig& cfg,
                     std::span<const LimbSegment> limbs) {
  validate_render_config(cfg);
  Grid grid(cfg.width, cfg.height);
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);

  for (const LimbSegment& limb : limbs) {
    if (limb.a == limb.b || limb.a < 0 || limb.b < 0 ||
        limb.a >= static_cast<int>(kKeypointCount) ||
        limb.b >= static_cast<int>(kKeypointCount)) {
      throw ConfigError("invalid limb segment (" + std::to_string(limb.a) +
                        ", " + std::to_string(limb.b) + ")");
    }
    const Keypoint& ka = frame.keypoints[limb.a];
    const Keypoint& kb = frame.keypoints[limb.b];
    if (ka.c < cfg.confidence_min || kb.c < cfg.confidence_min) continue;
    const double w = std::min(ka.c, kb.c);
    const CanvasPoint a = map_to_canvas(cfg, ka.x, ka.y);
    const CanvasPoint b = map_to_canvas(cfg, kb.x, kb.y);
    for (std::size_t j = 0; j < cfg.height; ++j) {
      for (std::size_t i = 0; i < cfg.width; ++i) {
        const CanvasPoint p{static_cast<double>(i), static_cast<double>(j)};
        const double d2 = point_segment_dist2(p, a, b);
        grid.at(i, j) += std::exp(-d2 * inv_two_sigma2) * w;
      }
    }
  }
  return grid;
}

SkeletonMapSequence render_sequence(const NormalizedSequence& seq,
                                    const RenderConfig& cfg,
                                    std::span<const LimbSegment> limbs) {
  SkeletonMapSequence maps;
  maps.reserve(seq.frames.size());
  for (const PoseFrame& frame : seq.frames) {
    maps.push_back(SkeletonMap{render_keypoint_map(frame, cfg),
                               render_limb_map(frame, cfg, limbs)});
  }
  return maps;
}

std::string to_pgm(const Grid& grid) {
  double max_value = 0.0;
  for (double v : grid.values) max_value = std::max(max_value, v);
  const double scale = max_value > 0.0 ? 255.0 / max_value : 0.0;

  std::string out = "P2\n" + std::to_string(grid.width) + " " +
                    std::to_string(grid.height) + "\n255\n";
  for (std::size_t j = 0; j < grid.height; ++j) {
    for (std::size_t i = 0; i < grid.width; ++i) {
      const int level = static_cast<int>(std::floor(grid.at(i, j) * scale + 0.5));
      if (i > 0) out += ' ';
      out += std::to_string(level);
    }
    out += '\n';
  }
  return out;
}

void write_pgm(const Grid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << to_pgm(grid);
  out.flush();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

}  // namespace drf
