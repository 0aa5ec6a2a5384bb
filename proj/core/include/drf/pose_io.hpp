#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace drf {

inline constexpr std::size_t kKeypointCount = 17;

/// Default validity threshold on keypoint confidence (inclusive).
inline constexpr double kDefaultConfidenceMin = 0.3;

/// MS-COCO keypoint indices. Paired joints: odd = left, even = right.
namespace coco {
inline constexpr int kNose = 0;
inline constexpr int kLeftEye = 1;
inline constexpr int kRightEye = 2;
inline constexpr int kLeftEar = 3;
inline constexpr int kRightEar = 4;
inline constexpr int kLeftShoulder = 5;
inline constexpr int kRightShoulder = 6;
inline constexpr int kLeftElbow = 7;
inline constexpr int kRightElbow = 8;
inline constexpr int kLeftWrist = 9;
inline constexpr int kRightWrist = 10;
inline constexpr int kLeftHip = 11;
inline constexpr int kRightHip = 12;
inline constexpr int kLeftKnee = 13;
inline constexpr int kRightKnee = 14;
inline constexpr int kLeftAnkle = 15;
inline constexpr int kRightAnkle = 16;
}  // namespace coco

/// Three-way screening outcome. Integer ids are internal only; files always
/// carry the string form.
enum class ScreeningLabel : int { negative = 0, neutral = 1, positive = 2 };

std::string to_string(ScreeningLabel label);
ScreeningLabel label_from_string(const std::string& text);

/// One 2D joint detection in image coordinates (+x right, +y down).
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double c = 0.0;  // confidence in [0, 1]
};

struct PoseFrame {
  std::array<Keypoint, kKeypointCount> keypoints{};
};

struct PoseSequence {
  std::vector<PoseFrame> frames;
  std::string subject_id;
  ScreeningLabel label = ScreeningLabel::negative;
};

/// Throws ValidationError if the sequence violates an invariant
/// (no frames, confidence outside [0,1], non-finite coordinate).
void validate_sequence(const PoseSequence& seq);

/// Reads the JSONL sequence format:
///   line 1:    {"subject_id": ..., "label": ..., "num_frames": N}
///   lines 2..: {"kp": [[x,y,c], ... 17 entries ...]}
/// Errors carry the offending line number.
PoseSequence load_sequence(const std::filesystem::path& path);

/// Canonical serialization; load_sequence inverts it exactly.
std::string serialize_sequence(const PoseSequence& seq);

void save_sequence(const PoseSequence& seq, const std::filesystem::path& path);

/// Entry k is true iff keypoint k has confidence >= c_min.
std::array<bool, kKeypointCount> validity_mask(const PoseFrame& frame,
                                               double c_min);

}  // namespace drf
