#pragma once

// Body-region field stacks -> coarse human parsing labels and fixed
// attention maps.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "reidkit/array.hpp"
#include "reidkit/error.hpp"

namespace reidkit::fields {

/// H x W x F confidences in [0,1].
struct FieldStack {
  Array3<float> data;
  std::vector<std::string> field_names;

  int height() const { return data.height; }
  int width() const { return data.width; }
  int num_fields() const { return data.channels; }
};

/// K disjoint groups of field indices, one per body part.
struct PartGrouping {
  int K = 0;
  std::vector<std::vector<int>> groups;
  std::vector<std::string> part_names;
};

/// E(h, w, k) = max of the k-th group's channels.
struct GroupedFields {
  Array3<float> E;
  int K() const { return E.channels; }
};

/// Per-pixel labels in {0..K}; 0 is background.
struct ParsingLabelMap {
  Array2<int> Y;
  int K = 0;
};

// ---------------------------------------------------------------------------
// Pose-estimator field layout: 17 keypoint confidence fields followed by 19
// limb affinity fields (COCO skeleton order).

inline constexpr int kNumKeypoints = 17;
inline constexpr int kNumAffinities = 19;
inline constexpr int kNumPoseFields = kNumKeypoints + kNumAffinities;

enum Keypoint : int {
  kNose, kLeftEye, kRightEye, kLeftEar, kRightEar,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist,
  kLeftHip, kRightHip, kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle,
};

inline const std::array<std::pair<int, int>, kNumAffinities>& affinity_pairs() {
  static const std::array<std::pair<int, int>, kNumAffinities> pairs = {{
      {kLeftAnkle, kLeftKnee}, {kLeftKnee, kLeftHip}, {kRightAnkle, kRightKnee},
      {kRightKnee, kRightHip}, {kLeftHip, kRightHip}, {kLeftShoulder, kLeftHip},
      {kRightShoulder, kRightHip}, {kLeftShoulder, kRightShoulder},
      {kLeftShoulder, kLeftElbow}, {kRightShoulder, kRightElbow}, {kLeftElbow, kLeftWrist},
      {kRightElbow, kRightWrist}, {kLeftEye, kRightEye}, {kNose, kLeftEye},
      {kNose, kRightEye}, {kLeftEye, kLeftEar}, {kRightEye, kRightEar},
      {kLeftEar, kLeftShoulder}, {kRightEar, kRightShoulder},
  }};
  return pairs;
}

inline const std::vector<std::string>& pose_field_names() {
  static const std::vector<std::string> names = [] {
    const char* kp[kNumKeypoints] = {
        "nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder",
        "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
        "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle"};
    std::vector<std::string> out(kp, kp + kNumKeypoints);
    for (auto [a, b] : affinity_pairs()) out.push_back(std::string(kp[a]) + "_to_" + kp[b]);
    return out;
  }();
  return names;
}

/// Finest body regions; every pose field belongs to exactly one.
enum class Region : int {
  kHead, kUpperTorso, kLowerTorso, kUpperRightArm, kLowerRightArm, kUpperLeftArm,
  kLowerLeftArm, kRightLeg, kLeftLeg, kRightFoot, kLeftFoot,
};
inline constexpr int kNumRegions = 11;

inline Region field_region(int field) {
  static const std::array<Region, kNumPoseFields> table = [] {
    using R = Region;
    std::array<R, kNumPoseFields> t{};
    const R kp[kNumKeypoints] = {
        R::kHead, R::kHead, R::kHead, R::kHead, R::kHead,
        R::kUpperTorso, R::kUpperTorso,
        R::kUpperLeftArm, R::kUpperRightArm, R::kLowerLeftArm, R::kLowerRightArm,
        R::kLowerTorso, R::kLowerTorso,
        R::kLeftLeg, R::kRightLeg, R::kLeftFoot, R::kRightFoot};
    for (int i = 0; i < kNumKeypoints; ++i) t[i] = kp[i];
    const R aff[kNumAffinities] = {
        R::kLeftLeg, R::kLeftLeg, R::kRightLeg, R::kRightLeg, R::kLowerTorso,
        R::kLowerTorso, R::kLowerTorso, R::kUpperTorso, R::kUpperLeftArm,
        R::kUpperRightArm, R::kLowerLeftArm, R::kLowerRightArm, R::kHead, R::kHead,
        R::kHead, R::kHead, R::kHead, R::kUpperTorso, R::kUpperTorso};
    for (int i = 0; i < kNumAffinities; ++i) t[kNumKeypoints + i] = aff[i];
    return t;
  }();
  require(field >= 0 && field < kNumPoseFields, ErrorCode::kInvalidGrouping,
          "pose field index out of range");
  return table[field];
}

inline void validate(const PartGrouping& g, int num_fields) {
  require(g.K >= 2, ErrorCode::kInvalidGrouping, "K must be at least 2");
  require(static_cast<int>(g.groups.size()) == g.K, ErrorCode::kInvalidGrouping,
          "group count differs from K");
  require(static_cast<int>(g.part_names.size()) == g.K, ErrorCode::kInvalidGrouping,
          "part name count differs from K");
  std::set<int> seen;
  for (const auto& grp : g.groups) {
    require(!grp.empty(), ErrorCode::kInvalidGrouping, "empty group");
    for (int c : grp) {
      require(c >= 0 && c < num_fields, ErrorCode::kInvalidGrouping,
              "field index " + std::to_string(c) + " out of range");
      require(seen.insert(c).second, ErrorCode::kInvalidGrouping, "groups overlap");
    }
  }
  std::set<std::string> names(g.part_names.begin(), g.part_names.end());
  require(names.size() == g.part_names.size(), ErrorCode::kInvalidGrouping,
          "part names are not unique");
}

inline const std::vector<int>& supported_presets() {
  static const std::vector<int> ks = {2, 3, 4, 5, 6, 8, 11};
  return ks;
}

/// Region sets for each supported K, in part order.
inline std::vector<std::pair<std::string, std::vector<Region>>> preset_regions(int K) {
  using R = Region;
  const std::vector<R> arms = {R::kUpperRightArm, R::kLowerRightArm, R::kUpperLeftArm,
                               R::kLowerLeftArm};
  const std::vector<R> torso = {R::kUpperTorso, R::kLowerTorso};
  const std::vector<R> legs = {R::kRightLeg, R::kLeftLeg};
  const std::vector<R> feet = {R::kRightFoot, R::kLeftFoot};
  auto cat = [](std::initializer_list<std::vector<R>> parts) {
    std::vector<R> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  switch (K) {
    case 2:
      return {{"upper body", cat({{R::kHead}, torso, arms})}, {"lower body", cat({legs, feet})}};
    case 3:
      return {{"head", {R::kHead}},
              {"middle body", cat({torso, arms})},
              {"lower body", cat({legs, feet})}};
    case 4:
      return {{"head", {R::kHead}}, {"torso", torso}, {"arms", arms},
              {"lower body", cat({legs, feet})}};
    case 5:
      return {{"head", {R::kHead}}, {"torso", torso}, {"arms", arms}, {"legs", legs},
              {"feet", feet}};
    case 6:
      return {{"head", {R::kHead}},
              {"torso", torso},
              {"right arm", {R::kUpperRightArm, R::kLowerRightArm}},
              {"left arm", {R::kUpperLeftArm, R::kLowerLeftArm}},
              {"legs", legs},
              {"feet", feet}};
    case 8:
      return {{"head", {R::kHead}},
              {"torso", torso},
              {"right arm", {R::kUpperRightArm, R::kLowerRightArm}},
              {"left arm", {R::kUpperLeftArm, R::kLowerLeftArm}},
              {"right leg", {R::kRightLeg}},
              {"left leg", {R::kLeftLeg}},
              {"right foot", {R::kRightFoot}},
              {"left foot", {R::kLeftFoot}}};
    case 11:
      return {{"head", {R::kHead}},
              {"upper torso", {R::kUpperTorso}},
              {"lower torso", {R::kLowerTorso}},
              {"upper right arm", {R::kUpperRightArm}},
              {"lower right arm", {R::kLowerRightArm}},
              {"upper left arm", {R::kUpperLeftArm}},
              {"lower left arm", {R::kLowerLeftArm}},
              {"right leg", {R::kRightLeg}},
              {"left leg", {R::kLeftLeg}},
              {"right foot", {R::kRightFoot}},
              {"left foot", {R::kLeftFoot}}};
    default:
      throw Error(ErrorCode::kUnsupportedPreset,
                  "no grouping preset for K=" + std::to_string(K));
  }
}

/// Named grouping of the 36 pose fields for K in {2,3,4,5,6,8,11}.
inline PartGrouping grouping_preset(int K) {
  auto regions = preset_regions(K);
  PartGrouping g;
  g.K = K;
  for (const auto& [name, regs] : regions) {
    std::vector<int> grp;
    for (int f = 0; f < kNumPoseFields; ++f) {
      if (std::find(regs.begin(), regs.end(), field_region(f)) != regs.end()) grp.push_back(f);
    }
    g.groups.push_back(std::move(grp));
    g.part_names.push_back(name);
  }
  validate(g, kNumPoseFields);
  return g;
}

/// Part index (0-based) of a region under a grouping preset.
inline int part_of_region(int K, Region r) {
  auto regions = preset_regions(K);
  for (int k = 0; k < static_cast<int>(regions.size()); ++k) {
    const auto& regs = regions[k].second;
    if (std::find(regs.begin(), regs.end(), r) != regs.end()) return k;
  }
  throw Error(ErrorCode::kInvalidGrouping, "region not covered by preset");
}

// ---------------------------------------------------------------------------

inline GroupedFields group_max(const FieldStack& stack, const PartGrouping& grouping) {
  validate(grouping, stack.num_fields());
  const auto& d = stack.data;
  GroupedFields out{Array3<float>(d.height, d.width, grouping.K)};
  for (int h = 0; h < d.height; ++h) {
    for (int w = 0; w < d.width; ++w) {
      for (int k = 0; k < grouping.K; ++k) {
        float m = -std::numeric_limits<float>::infinity();
        for (int c : grouping.groups[k]) m = std::max(m, d(h, w, c));
        out.E(h, w, k) = m;
      }
    }
  }
  return out;
}

/// Thresholded argmax; pixels whose best channel is below lambda_t are
/// background, ties go to the lowest part index.
inline ParsingLabelMap labels_from_fields(const GroupedFields& grouped, double lambda_t = 0.5) {
  require(lambda_t > 0.0 && lambda_t < 1.0, ErrorCode::kInvalidConfig,
          "lambda_t must lie in (0,1)");
  const auto& E = grouped.E;
  ParsingLabelMap out{Array2<int>(E.height, E.width, 0), E.channels};
  for (int h = 0; h < E.height; ++h) {
    for (int w = 0; w < E.width; ++w) {
      int best = 0;
      for (int k = 1; k < E.channels; ++k) {
        if (E(h, w, k) > E(h, w, best)) best = k;
      }
      out.Y(h, w) = E(h, w, best) < lambda_t ? 0 : best + 1;
    }
  }
  return out;
}

/// Bilinear resampling with half-pixel centres and edge clamping.
template <class T>
Array3<T> resize_bilinear(const Array3<T>& src, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, ErrorCode::kShape, "resize target must be non-empty");
  if (src.height == out_h && src.width == out_w) return src;
  Array3<T> out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.height - 1);
    double ay = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.width - 1);
      double ax = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        double v = (1 - ay) * ((1 - ax) * src(y0, x0, c) + ax * src(y0, x1, c)) +
                   ay * ((1 - ax) * src(y1, x0, c) + ax * src(y1, x1, c));
        out(y, x, c) = static_cast<T>(v);
      }
    }
  }
  return out;
}

/// Labels at a requested resolution; stacks at another resolution are
/// resampled bilinearly first.
inline ParsingLabelMap labels_at(const FieldStack& stack, const PartGrouping& grouping,
                                 int height, int width, double lambda_t = 0.5) {
  if (stack.height() == height && stack.width() == width) {
    return labels_from_fields(group_max(stack, grouping), lambda_t);
  }
  FieldStack resized{resize_bilinear(stack.data, height, width), stack.field_names};
  return labels_from_fields(group_max(resized, grouping), lambda_t);
}

/// Majority vote over each source block mapped onto an out_h x out_w grid;
/// ties go to the lowest label.
inline ParsingLabelMap downsample_labels(const ParsingLabelMap& labels, int out_h, int out_w) {
  const auto& Y = labels.Y;
  require(out_h > 0 && out_w > 0 && out_h <= Y.height && out_w <= Y.width, ErrorCode::kShape,
          "label downsampling target must be within source size");
  ParsingLabelMap out{Array2<int>(out_h, out_w, 0), labels.K};
  std::vector<int> votes(labels.K + 1);
  for (int y = 0; y < out_h; ++y) {
    int h0 = y * Y.height / out_h, h1 = (y + 1) * Y.height / out_h;
    for (int x = 0; x < out_w; ++x) {
      int w0 = x * Y.width / out_w, w1 = (x + 1) * Y.width / out_w;
      std::fill(votes.begin(), votes.end(), 0);
      for (int h = h0; h < h1; ++h)
        for (int w = w0; w < w1; ++w) ++votes[Y(h, w)];
      out.Y(y, x) = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target selection among several detected persons.

struct HeadPoint {
  double x = 0;  // column, pixels
  double y = 0;  // row, pixels
};

/// Centroid of the head channel over pixels at or above lambda_t; nullopt
/// when no pixel qualifies.
inline std::optional<HeadPoint> head_position(const GroupedFields& grouped, int head_part = 0,
                                              double lambda_t = 0.5) {
  const auto& E = grouped.E;
  double sx = 0, sy = 0;
  long n = 0;
  for (int h = 0; h < E.height; ++h)
    for (int w = 0; w < E.width; ++w)
      if (E(h, w, head_part) >= lambda_t) {
        sx += w + 0.5;
        sy += h + 0.5;
        ++n;
      }
  if (n == 0) return std::nullopt;
  return HeadPoint{sx / n, sy / n};
}

/// Index of the person whose head lies closest to the top centre (W/2, 0).
inline std::size_t select_target(std::span<const HeadPoint> heads, double image_width) {
  require(!heads.empty(), ErrorCode::kNoTarget, "no person candidates");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < heads.size(); ++i) {
    double dx = heads[i].x - image_width / 2.0;
    double dy = heads[i].y;
    double d = std::sqrt(dx * dx + dy * dy);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Channel-wise softmax of E, used in place of learned part attention.
inline Array3<double> fixed_attention(const GroupedFields& grouped) {
  const auto& E = grouped.E;
  Array3<double> out(E.height, E.width, E.channels);
  for (int h = 0; h < E.height; ++h) {
    for (int w = 0; w < E.width; ++w) {
      double m = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < E.channels; ++k) m = std::max(m, static_cast<double>(E(h, w, k)));
      double z = 0;
      for (int k = 0; k < E.channels; ++k) z += out(h, w, k) = std::exp(E(h, w, k) - m);
      for (int k = 0; k < E.channels; ++k) out(h, w, k) /= z;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FSTK file: "FSTK", u32 H, u32 W, u32 F, then H*W*F little-endian f32.

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
}  // namespace detail

inline std::string encode_field_stack(const FieldStack& stack) {
  const auto& d = stack.data;
  std::string out = "FSTK";
  detail::put_u32(out, d.height);
  detail::put_u32(out, d.width);
  detail::put_u32(out, d.channels);
  out.reserve(out.size() + d.size() * 4);
  for (float v : d.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline FieldStack decode_field_stack(std::string_view bytes,
                                     std::vector<std::string> names = {}) {
  require(bytes.size() >= 16 && bytes.substr(0, 4) == "FSTK", ErrorCode::kIo,
          "not a field stack (bad magic)");
  auto p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint32_t H = detail::get_u32(p + 4), W = detail::get_u32(p + 8), F = detail::get_u32(p + 12);
  require(H >= 1 && W >= 1 && F >= 1, ErrorCode::kIo, "field stack with empty dimension");
  std::size_t n = static_cast<std::size_t>(H) * W * F;
  require(bytes.size() == 16 + 4 * n, ErrorCode::kIo, "field stack body size mismatch");
  FieldStack s{Array3<float>(H, W, F), std::move(names)};
  for (std::size_t i = 0; i < n; ++i) s.data.data[i] = std::bit_cast<float>(detail::get_u32(p + 16 + 4 * i));
  if (s.field_names.empty()) {
    if (static_cast<int>(F) == kNumPoseFields) {
      s.field_names = pose_field_names();
    } else {
      for (std::uint32_t c = 0; c < F; ++c) s.field_names.push_back("field_" + std::to_string(c));
    }
  }
  return s;
}

inline void write_field_stack(const std::string& path, const FieldStack& stack) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path);
  auto bytes = encode_field_stack(stack);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FieldStack read_field_stack(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_field_stack(bytes);
}

}  // namespace reidkit::fields
