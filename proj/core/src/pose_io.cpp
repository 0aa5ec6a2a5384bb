#include "drf/pose_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "drf/errors.hpp"
#include "json.hpp"

namespace drf {

using ordered_json = nlohmann::ordered_json;

std::string to_string(ScreeningLabel label) {
  switch (label) {
    case ScreeningLabel::negative:
      return "negative";
    case ScreeningLabel::neutral:
      return "neutral";
    case ScreeningLabel::positive:
      return "positive";
  }
  throw ValidationError("unknown label id");
}

ScreeningLabel label_from_string(const std::string& text) {
  if (text == "negative") return ScreeningLabel::negative;
  if (text == "neutral") return ScreeningLabel::neutral;
  if (text == "positive") return ScreeningLabel::positive;
  throw ValidationError("unknown label \"" + text +
                        "\" (expected positive, neutral, or negative)");
}

void validate_sequence(const PoseSequence& seq) {
  if (seq.frames.empty()) {
    throw ValidationError("sequence must contain at least one frame");
  }
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    for (std::size_t k = 0; k < kKeypointCount; ++k) {
      const Keypoint& kp = seq.frames[f].keypoints[k];
      if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
        throw ValidationError("frame " + std::to_string(f) + " keypoint " +
                              std::to_string(k) + ": non-finite coordinate");
      }
      if (!(kp.c >= 0.0 && kp.c <= 1.0)) {
        throw ValidationError("frame " + std::to_string(f) + " keypoint " +
                              std::to_string(k) +
                              ": confidence outside [0,1]");
      }
    }
  }
}

namespace {

ordered_json parse_line(const std::string& line, std::size_t line_no) {
  if (line.empty()) {
    throw ParseError("empty line", line_no);
  }
  ordered_json j = ordered_json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("malformed JSON object", line_no);
  }
  return j;
}

PoseFrame parse_frame(const ordered_json& j, std::size_t line_no) {
  if (!j.contains("kp") || !j["kp"].is_array()) {
    throw SchemaError("missing \"kp\" array", line_no);
  }
  const auto& arr = j["kp"];
  if (arr.size() != kKeypointCount) {
    throw SchemaError("expected 17 keypoints, got " +
                          std::to_string(arr.size()),
                      line_no);
  }
  PoseFrame frame;
  for (std::size_t k = 0; k < kKeypointCount; ++k) {
    const auto& entry = arr[k];
    if (!entry.is_array() || entry.size() != 3 || !entry[0].is_number() ||
        !entry[1].is_number() || !entry[2].is_number()) {
      throw SchemaError("keypoint " + std::to_string(k) +
                            " is not an [x,y,c] number triple",
                        line_no);
    }
    Keypoint kp{entry[0].get<double>(), entry[1].get<double>(),
                entry[2].get<double>()};
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
      throw ValidationError("line " + std::to_string(line_no) + ": keypoint " +
                            std::to_string(k) + " has non-finite coordinate");
    }
    if (!(kp.c >= 0.0 && kp.c <= 1.0)) {
      throw ValidationError("line " + std::to_string(line_no) + ": keypoint " +
                            std::to_string(k) + " confidence " +
                            std::to_string(kp.c) + " outside [0,1]");
    }
    frame.keypoints[k] = kp;
  }
  return frame;
}

}  // namespace

PoseSequence load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }

  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("empty file", 1);
  }
  ordered_json header = parse_line(line, 1);
  if (!header.contains("subject_id") || !header["subject_id"].is_string()) {
    throw SchemaError("header missing string \"subject_id\"", 1);
  }
  if (!header.contains("label") || !header["label"].is_string()) {
    throw SchemaError("header missing string \"label\"", 1);
  }
  if (!header.contains("num_frames") ||
      !header["num_frames"].is_number_integer()) {
    throw SchemaError("header missing integer \"num_frames\"", 1);
  }

  PoseSequence seq;
  seq.subject_id = header["subject_id"].get<std::string>();
  seq.label = label_from_string(header["label"].get<std::string>());
  const std::int64_t declared = header["num_frames"].get<std::int64_t>();
  if (declared < 1) {
    throw ValidationError("num_frames must be >= 1, got " +
                          std::to_string(declared));
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    ordered_json j = parse_line(line, line_no);
    seq.frames.push_back(parse_frame(j, line_no));
  }
  if (static_cast<std::int64_t>(seq.frames.size()) != declared) {
    throw SchemaError("header declares " + std::to_string(declared) +
                          " frames but file contains " +
                          std::to_string(seq.frames.size()),
                      1);
  }
  return seq;
}

std::string serialize_sequence(const PoseSequence& seq) {
  validate_sequence(seq);
  ordered_json header;
  header["subject_id"] = seq.subject_id;
  header["label"] = to_string(seq.label);
  header["num_frames"] = seq.frames.size();

  std::string out = header.dump();
  out += '\n';
  for (const PoseFrame& frame : seq.frames) {
    ordered_json kp = ordered_json::array();
    for (const Keypoint& p : frame.keypoints) {
      kp.push_back(ordered_json::array({p.x, p.y, p.c}));
    }
    ordered_json j;
    j["kp"] = std::move(kp);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_sequence(const PoseSequence& seq, const std::filesystem::path& path) {
  const std::string text = serialize_sequence(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << text;
  out.flush();
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

std::array<bool, kKeypointCount> validity_mask(const PoseFrame& frame,
                                               double c_min) {
  if (!(c_min >= 0.0 && c_min <= 1.0)) {
    throw ConfigError("confidence threshold must be in [0,1]");
  }
  std::array<bool, kKeypointCount> mask{};
  for (std::size_t k = 0; k < kKeypointCount; ++k) {
    mask[k] = frame.keypoints[k].c >= c_min;
  }
  return mask;
}

}  // namespace drf
