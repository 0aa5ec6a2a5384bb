#include "drf/pav.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "drf/errors.hpp"
#include "drf/strings.hpp"
#include "json.hpp"

namespace drf {

namespace {

constexpr std::array<SymmetricPair, kPairCount> kPairs = {{
    {coco::kLeftEye, coco::kRightEye},
    {coco::kLeftEar, coco::kRightEar},
    {coco::kLeftShoulder, coco::kRightShoulder},
    {coco::kLeftElbow, coco::kRightElbow},
    {coco::kLeftWrist, coco::kRightWrist},
    {coco::kLeftHip, coco::kRightHip},
    {coco::kLeftKnee, coco::kRightKnee},
    {coco::kLeftAnkle, coco::kRightAnkle},
}};

const std::array<std::string, kPairCount> kPairNames = {
    "eyes", "ears", "shoulders", "elbows", "wrists", "hips", "knees", "ankles"};

// Linear-interpolation quantile at position q*(n-1) of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

const std::array<SymmetricPair, kPairCount>& symmetric_pairs() {
  return kPairs;
}

const std::array<std::string, kPairCount>& pair_names() { return kPairNames; }

FrameAsymmetry frame_metrics(const PoseFrame& frame, double c_min) {
  FrameAsymmetry out;
  const auto mask = validity_mask(frame, c_min);
  for (std::size_t p = 0; p < kPairCount; ++p) {
    const SymmetricPair& pair = kPairs[p];
    out.valid[p] = mask[pair.left] && mask[pair.right];
    const Keypoint& l = frame.keypoints[pair.left];
    const Keypoint& r = frame.keypoints[pair.right];

    out.raw[p][kVerticalDev] = std::abs(l.y - r.y);
    // Midline is the hip center, which pelvis alignment pins at x = 0.
    out.raw[p][kMidlineDev] = std::abs(0.5 * (l.x + r.x));

    const double dx = l.x - r.x;
    const double dy = l.y - r.y;
    if (dx == 0.0) {
      out.raw[p][kAngularDev] = (dy == 0.0) ? 0.0 : std::numbers::pi / 2.0;
    } else {
      out.raw[p][kAngularDev] = std::abs(std::atan(dy / dx));
    }
  }
  return out;
}

std::vector<double> iqr_filter(const std::vector<double>& samples) {
  if (samples.empty()) {
    throw ValidationError("iqr_filter requires at least one sample");
  }
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = quantile(sorted, 0.25);
  const double q3 = quantile(sorted, 0.75);
  const double iqr = q3 - q1;
  const double lo = q1 - 1.5 * iqr;
  const double hi = q3 + 1.5 * iqr;

  std::vector<double> kept;
  kept.reserve(samples.size());
  for (double x : samples) {
    if (x >= lo && x <= hi) kept.push_back(x);
  }
  return kept;
}

RawPav aggregate_sequence(const std::vector<FrameAsymmetry>& frames) {
  if (frames.empty()) {
    throw ValidationError("aggregate_sequence requires at least one frame");
  }
  RawPav out;
  for (std::size_t p = 0; p < kPairCount; ++p) {
    std::vector<double> samples;
    samples.reserve(frames.size());
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      samples.clear();
      for (const FrameAsymmetry& f : frames) {
        if (f.valid[p]) samples.push_back(f.raw[p][m]);
      }
      if (samples.empty()) {
        out.value[p][m] = 0.0;
        out.warning[p][m] = true;
        continue;
      }
      const std::vector<double> kept = iqr_filter(samples);
      double sum = 0.0;
      for (double x : kept) sum += x;
      out.value[p][m] = sum / static_cast<double>(kept.size());
    }
  }
  return out;
}

RawPav sequence_raw_pav(const NormalizedSequence& seq, double c_min) {
  std::vector<FrameAsymmetry> frames;
  frames.reserve(seq.frames.size());
  for (const PoseFrame& frame : seq.frames) {
    frames.push_back(frame_metrics(frame, c_min));
  }
  return aggregate_sequence(frames);
}

MinMaxStats fit_minmax(const std::vector<RawPav>& raw_pavs,
                       std::string fit_split) {
  if (raw_pavs.empty()) {
    throw ValidationError("fit_minmax requires at least one sample");
  }
  MinMaxStats stats;
  stats.fit_split = std::move(fit_split);
  stats.min = raw_pavs.front().value;
  stats.max = raw_pavs.front().value;
  for (const RawPav& raw : raw_pavs) {
    for (std::size_t p = 0; p < kPairCount; ++p) {
      for (std::size_t m = 0; m < kMetricCount; ++m) {
        stats.min[p][m] = std::min(stats.min[p][m], raw.value[p][m]);
        stats.max[p][m] = std::max(stats.max[p][m], raw.value[p][m]);
      }
    }
  }
  return stats;
}

Pav apply_minmax(const RawPav& raw, const MinMaxStats& stats) {
  Pav out;
  for (std::size_t p = 0; p < kPairCount; ++p) {
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      const double span = stats.max[p][m] - stats.min[p][m];
      if (span <= 0.0) {
        out.value[p][m] = 0.0;
        continue;
      }
      const double v = (raw.value[p][m] - stats.min[p][m]) / span;
      out.value[p][m] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

std::array<double, kPavSize> flatten(const PavMatrix& m) {
  std::array<double, kPavSize> flat{};
  for (std::size_t p = 0; p < kPairCount; ++p) {
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      flat[p * kMetricCount + c] = m[p][c];
    }
  }
  return flat;
}

std::string pav_to_csv(const PavMatrix& m) {
  std::string out = "pair,vd,md,ad\n";
  for (std::size_t p = 0; p < kPairCount; ++p) {
    out += kPairNames[p];
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      out += ',';
      out += format_double(m[p][c]);
    }
    out += '\n';
  }
  return out;
}

namespace {

nlohmann::ordered_json matrix_to_json(const PavMatrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : m) {
    rows.push_back(nlohmann::ordered_json::array({row[0], row[1], row[2]}));
  }
  return rows;
}

PavMatrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kPairCount) {
    throw SchemaError("expected " + std::to_string(kPairCount) +
                          " matrix rows",
                      1);
  }
  PavMatrix m{};
  for (std::size_t p = 0; p < kPairCount; ++p) {
    if (!j[p].is_array() || j[p].size() != kMetricCount) {
      throw SchemaError("matrix row " + std::to_string(p) +
                            " must have 3 entries",
                        1);
    }
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      m[p][c] = j[p][c].get<double>();
    }
  }
  return m;
}

}  // namespace

void save_minmax(const MinMaxStats& stats, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["fit_split"] = stats.fit_split;
  j["min"] = matrix_to_json(stats.min);
  j["max"] = matrix_to_json(stats.max);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

MinMaxStats load_minmax(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("malformed stats JSON", 1);
  }
  MinMaxStats stats;
  stats.fit_split = j.value("fit_split", std::string{});
  stats.min = matrix_from_json(j.at("min"));
  stats.max = matrix_from_json(j.at("max"));
  for (std::size_t p = 0; p < kPairCount; ++p) {
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      if (stats.max[p][m] < stats.min[p][m]) {
        throw ValidationError("stats max < min at pair " + std::to_string(p));
      }
    }
  }
  return stats;
}

}  // namespace drf
