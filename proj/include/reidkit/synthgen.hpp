#pragma once

// Procedural occluded-person corpus: images, pose-style field stacks,
// parsing ground truth and per-part visibility, plus the PK batch sampler.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "reidkit/array.hpp"
#include "reidkit/error.hpp"
#include "reidkit/fields.hpp"
#include "reidkit/png_io.hpp"

namespace reidkit::synth {

using Rgb = std::array<float, 3>;

struct CorpusConfig {
  int num_train_ids = 50;
  int num_test_ids = 25;
  int images_per_id = 20;
  int query_per_id = 2;
  int num_cams = 6;
  int height = 64;
  int width = 32;
  int K = 5;
  double occlusion_prob = 0.3;
  // Bottom/side rectangle coverage range, as a fraction of the frame.
  double occluder_min_frac = 0.25;
  double occluder_max_frac = 0.55;
  // Share of occlusions that are other pedestrians rather than rectangles.
  double pedestrian_share = 0.5;
  double noise_sigma = 0.04;
  double camera_gain_spread = 0.15;
  double visibility_fraction = 0.01;
  bool keep_fields = true;
};

enum class Pattern : int { kSolid, kStripes, kTwoTone };

/// Appearance of one identity. Colours are drawn from small palettes so
/// individual parts repeat across identities.
struct IdentitySpec {
  int id = 0;
  Rgb hair{}, skin{}, shirt{}, shirt_secondary{}, pants{}, shoes{};
  Pattern shirt_pattern = Pattern::kSolid;
  bool long_sleeves = true;
  int hair_style = 0;  // 0 short, 1 long

  auto key() const {
    return std::make_tuple(hair, skin, shirt, shirt_secondary, pants, shoes,
                           static_cast<int>(shirt_pattern), long_sleeves, hair_style);
  }
};

struct Pose {
  double center_x = 16;  // pixels
  double top_y = 2;      // pixels
  double scale = 1.0;
  double arm_swing_left = 0, arm_swing_right = 0;  // pixels at the wrist
  double leg_spread = 0;                           // pixels at the ankle
};

struct RectOccluder {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel box
  Rgb color{};
};

struct PedestrianOccluder {
  IdentitySpec identity;
  Pose pose;
};

struct OccluderSpec {
  std::optional<RectOccluder> rect;
  std::optional<PedestrianOccluder> pedestrian;
};

struct SampleRecord {
  Image image;
  int id = 0;
  int cam = 0;
  std::string file;
  fields::FieldStack fields;
  fields::ParsingLabelMap parsing_gt;
  std::vector<bool> part_visible_gt;
  bool occluded = false;
};

struct DatasetSplit {
  std::vector<SampleRecord> train, query, gallery;
  CorpusConfig config;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Palettes.

namespace palette {
inline const std::vector<Rgb>& shirts() {
  static const std::vector<Rgb> p = {{0.85f, 0.15f, 0.15f}, {0.15f, 0.35f, 0.85f},
                                     {0.15f, 0.7f, 0.25f},  {0.92f, 0.85f, 0.2f},
                                     {0.95f, 0.95f, 0.95f}, {0.1f, 0.1f, 0.12f},
                                     {0.6f, 0.2f, 0.7f},    {0.95f, 0.55f, 0.1f}};
  return p;
}
inline const std::vector<Rgb>& pants() {
  static const std::vector<Rgb> p = {{0.12f, 0.15f, 0.35f}, {0.1f, 0.1f, 0.1f},
                                     {0.55f, 0.55f, 0.55f}, {0.6f, 0.45f, 0.25f},
                                     {0.3f, 0.5f, 0.8f},    {0.85f, 0.8f, 0.65f}};
  return p;
}
inline const std::vector<Rgb>& shoes() {
  static const std::vector<Rgb> p = {{0.05f, 0.05f, 0.05f}, {0.95f, 0.95f, 0.95f},
                                     {0.45f, 0.25f, 0.1f}, {0.8f, 0.1f, 0.1f}};
  return p;
}
inline const std::vector<Rgb>& hair() {
  static const std::vector<Rgb> p = {{0.08f, 0.06f, 0.05f}, {0.4f, 0.25f, 0.1f},
                                     {0.85f, 0.7f, 0.35f}, {0.6f, 0.6f, 0.6f}};
  return p;
}
inline const std::vector<Rgb>& skin() {
  static const std::vector<Rgb> p = {{0.95f, 0.8f, 0.68f}, {0.78f, 0.58f, 0.42f},
                                     {0.45f, 0.3f, 0.2f}};
  return p;
}
}  // namespace palette

template <class Rng>
int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}
template <class Rng>
double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline IdentitySpec random_identity(int id, std::mt19937_64& rng) {
  IdentitySpec s;
  s.id = id;
  auto pick = [&](const std::vector<Rgb>& p) { return p[uniform_int(rng, 0, int(p.size()) - 1)]; };
  s.hair = pick(palette::hair());
  s.skin = pick(palette::skin());
  s.shirt = pick(palette::shirts());
  do {
    s.shirt_secondary = pick(palette::shirts());
  } while (s.shirt_secondary == s.shirt);
  s.pants = pick(palette::pants());
  s.shoes = pick(palette::shoes());
  s.shirt_pattern = static_cast<Pattern>(uniform_int(rng, 0, 2));
  if (s.shirt_pattern == Pattern::kSolid) s.shirt_secondary = s.shirt;
  s.long_sleeves = uniform_int(rng, 0, 1) == 1;
  s.hair_style = uniform_int(rng, 0, 1);
  return s;
}

/// Appearances for identities 0..count-1, deterministic in the corpus seed,
/// with no two identities sharing the full appearance tuple.
inline std::vector<IdentitySpec> make_identities(int count, std::uint64_t seed) {
  std::vector<IdentitySpec> out;
  std::set<decltype(IdentitySpec{}.key())> seen;
  for (int id = 0; id < count; ++id) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(seed, {0x1D, static_cast<std::uint64_t>(id), attempt}));
      auto s = random_identity(id, rng);
      if (seen.insert(s.key()).second) {
        out.push_back(s);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Body geometry. Offsets are expressed for a 64 x 32 frame and scaled to the
// configured size.

namespace geom {
struct Pt {
  double x, y;
};

inline double seg_dist(Pt p, Pt a, Pt b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double l2 = vx * vx + vy * vy;
  double t = l2 > 0 ? std::clamp((wx * vx + wy * vy) / l2, 0.0, 1.0) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Convex polygon, vertices in consistent winding.
inline bool in_convex(Pt p, const std::vector<Pt>& poly) {
  int sign = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    Pt a = poly[i], b = poly[(i + 1) % poly.size()];
    double c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

struct Shape {
  enum Kind { kDisc, kEllipse, kCapsule, kPolygon } kind;
  Pt a{}, b{};
  double rx = 0, ry = 0;
  std::vector<Pt> poly;

  bool contains(Pt p) const {
    switch (kind) {
      case kDisc: return std::hypot(p.x - a.x, p.y - a.y) <= rx;
      case kEllipse: {
        double dx = (p.x - a.x) / rx, dy = (p.y - a.y) / ry;
        return dx * dx + dy * dy <= 1.0;
      }
      case kCapsule: return seg_dist(p, a, b) <= rx;
      case kPolygon: return in_convex(p, poly);
    }
    return false;
  }
};
}  // namespace geom

/// Per-field shapes of one person plus the keypoints they were built from.
struct Body {
  std::array<geom::Pt, fields::kNumKeypoints> kp{};
  std::array<geom::Shape, fields::kNumPoseFields> shapes{};
  geom::Pt head_center{};
  double head_ry = 0;
};

inline Body build_body(const Pose& pose, int height, int width) {
  using fields::Keypoint;
  using geom::Pt;
  using geom::Shape;
  const double sx = width / 32.0 * pose.scale, sy = height / 64.0 * pose.scale;
  const double cx = pose.center_x, top = pose.top_y;
  auto P = [&](double dx, double dy) { return Pt{cx + dx * sx, top + dy * sy}; };
  const double r = std::sqrt(sx * sy);

  Body b;
  auto& kp = b.kp;
  kp[fields::kNose] = P(0, 6.5);
  kp[fields::kLeftEye] = P(1.6, 5.5);
  kp[fields::kRightEye] = P(-1.6, 5.5);
  kp[fields::kLeftEar] = P(3.9, 6.5);
  kp[fields::kRightEar] = P(-3.9, 6.5);
  kp[fields::kLeftShoulder] = P(6.3, 14);
  kp[fields::kRightShoulder] = P(-6.3, 14);
  kp[fields::kLeftElbow] = P(8.4 + pose.arm_swing_left * 0.5, 24);
  kp[fields::kRightElbow] = P(-8.4 + pose.arm_swing_right * 0.5, 24);
  kp[fields::kLeftWrist] = P(9.2 + pose.arm_swing_left, 33);
  kp[fields::kRightWrist] = P(-9.2 + pose.arm_swing_right, 33);
  kp[fields::kLeftHip] = P(4.6, 33);
  kp[fields::kRightHip] = P(-4.6, 33);
  kp[fields::kLeftKnee] = P(3.3 + pose.leg_spread * 0.5, 45);
  kp[fields::kRightKnee] = P(-3.3 - pose.leg_spread * 0.5, 45);
  kp[fields::kLeftAnkle] = P(3.5 + pose.leg_spread, 55.5);
  kp[fields::kRightAnkle] = P(-3.5 - pose.leg_spread, 55.5);
  b.head_center = P(0, 6.5);
  b.head_ry = 6.0 * sy;

  auto disc = [&](Pt c, double rad) { return Shape{Shape::kDisc, c, {}, rad * r, rad * r, {}}; };
  auto capsule = [&](Pt p, Pt q, double rad) { return Shape{Shape::kCapsule, p, q, rad * r, rad * r, {}}; };
  auto& s = b.shapes;
  s[fields::kNose] = Shape{Shape::kEllipse, b.head_center, {}, 4.3 * sx, 6.0 * sy, {}};
  s[fields::kLeftEye] = disc(kp[fields::kLeftEye], 1.1);
  s[fields::kRightEye] = disc(kp[fields::kRightEye], 1.1);
  s[fields::kLeftEar] = disc(kp[fields::kLeftEar], 1.3);
  s[fields::kRightEar] = disc(kp[fields::kRightEar], 1.3);
  s[fields::kLeftShoulder] = disc(kp[fields::kLeftShoulder], 2.3);
  s[fields::kRightShoulder] = disc(kp[fields::kRightShoulder], 2.3);
  s[fields::kLeftElbow] = disc(kp[fields::kLeftElbow], 2.0);
  s[fields::kRightElbow] = disc(kp[fields::kRightElbow], 2.0);
  s[fields::kLeftWrist] = disc(kp[fields::kLeftWrist], 1.9);
  s[fields::kRightWrist] = disc(kp[fields::kRightWrist], 1.9);
  s[fields::kLeftHip] = disc(kp[fields::kLeftHip], 2.3);
  s[fields::kRightHip] = disc(kp[fields::kRightHip], 2.3);
  s[fields::kLeftKnee] = disc(kp[fields::kLeftKnee], 2.5);
  s[fields::kRightKnee] = disc(kp[fields::kRightKnee], 2.5);
  auto foot = [&](Pt ankle) {
    return Shape{Shape::kEllipse, Pt{ankle.x, ankle.y + 2.2 * sy}, {}, 3.2 * sx, 3.0 * sy, {}};
  };
  s[fields::kLeftAnkle] = foot(kp[fields::kLeftAnkle]);
  s[fields::kRightAnkle] = foot(kp[fields::kRightAnkle]);

  const Pt ls = kp[fields::kLeftShoulder], rs = kp[fields::kRightShoulder];
  const Pt lh = kp[fields::kLeftHip], rh = kp[fields::kRightHip];
  const Pt lm{(ls.x + lh.x) / 2 + 0.6 * sx, (ls.y + lh.y) / 2};
  const Pt rm{(rs.x + rh.x) / 2 - 0.6 * sx, (rs.y + rh.y) / 2};
  const Pt lso{ls.x + 0.8 * sx, ls.y - 1.5 * sy}, rso{rs.x - 0.8 * sx, rs.y - 1.5 * sy};
  const Pt lho{lh.x + 1.4 * sx, lh.y + 1.0 * sy}, rho{rh.x - 1.4 * sx, rh.y + 1.0 * sy};

  const auto& pairs = fields::affinity_pairs();
  for (int i = 0; i < fields::kNumAffinities; ++i) {
    auto [pa, pb] = pairs[i];
    const int f = fields::kNumKeypoints + i;
    if (pa == fields::kLeftHip && pb == fields::kRightHip) {
      s[f] = Shape{Shape::kPolygon, {}, {}, 0, 0, {rm, lm, lho, rho}};
    } else if (pa == fields::kLeftShoulder && pb == fields::kRightShoulder) {
      s[f] = Shape{Shape::kPolygon, {}, {}, 0, 0, {rso, lso, lm, rm}};
    } else {
      double rad = 1.5;
      auto region = fields::field_region(f);
      using R = fields::Region;
      if (region == R::kLeftLeg || region == R::kRightLeg) rad = (pb == fields::kLeftHip || pb == fields::kRightHip) ? 2.6 : 2.3;
      else if (region == R::kUpperLeftArm || region == R::kUpperRightArm) rad = 1.9;
      else if (region == R::kLowerLeftArm || region == R::kLowerRightArm) rad = 1.7;
      else if (region == R::kHead) rad = 0.8;
      else if (region == R::kUpperTorso) rad = 1.5;  // neck
      else if (region == R::kLowerTorso) rad = 1.6;  // torso flanks
      s[f] = capsule(kp[pa], kp[pb], rad);
    }
  }
  return b;
}

/// Drawing order, back to front.
inline const std::vector<int>& z_order() {
  static const std::vector<int> order = {21, 11, 12, 22, 23, 24, 5, 6, 34, 35, 18, 20,
                                         13, 14, 17, 19, 15, 16, 25, 26, 7, 8, 27, 28,
                                         9, 10, 0, 3, 4, 29, 30, 31, 32, 33, 1, 2};
  return order;
}

/// Colour of one field's pixels for an identity.
inline Rgb component_color(const IdentitySpec& id, int field, double y, const Body& body,
                           double stripe_period) {
  using fields::Region;
  const Region region = fields::field_region(field);
  switch (region) {
    case Region::kHead: {
      if (field == fields::kLeftEye || field == fields::kRightEye) {
        return {id.skin[0] * 0.4f, id.skin[1] * 0.4f, id.skin[2] * 0.4f};
      }
      double hair_line = body.head_center.y - (id.hair_style ? -0.1 : 0.25) * body.head_ry;
      return y < hair_line ? id.hair : id.skin;
    }
    case Region::kUpperTorso:
    case Region::kLowerTorso: {
      if (field == 34 || field == 35) return id.skin;
      switch (id.shirt_pattern) {
        case Pattern::kSolid: return id.shirt;
        case Pattern::kStripes:
          return (static_cast<int>(std::floor(y / stripe_period)) % 2) ? id.shirt_secondary : id.shirt;
        case Pattern::kTwoTone:
          return region == Region::kUpperTorso ? id.shirt : id.shirt_secondary;
      }
      return id.shirt;
    }
    case Region::kUpperLeftArm:
    case Region::kUpperRightArm: return id.shirt;
    case Region::kLowerLeftArm:
    case Region::kLowerRightArm:
      if (field == fields::kLeftWrist || field == fields::kRightWrist) return id.skin;
      return id.long_sleeves ? id.shirt : id.skin;
    case Region::kLeftLeg:
    case Region::kRightLeg: return id.pants;
    case Region::kLeftFoot:
    case Region::kRightFoot: return id.shoes;
  }
  return id.shirt;
}

/// Owner map of a person: field index of the top-most shape per pixel, -1
/// where the person is absent.
inline Array2<int> rasterize(const Body& body, int height, int width) {
  Array2<int> owner(height, width, -1);
  for (int f : z_order()) {
    const auto& shape = body.shapes[f];
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w)
        if (shape.contains({w + 0.5, h + 0.5})) owner(h, w) = f;
  }
  return owner;
}

namespace detail {
inline std::vector<float> gaussian_blur(const std::vector<float>& src, int height, int width,
                                        double sigma) {
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * rad + 1);
  double z = 0;
  for (int i = -rad; i <= rad; ++i) z += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= z;
  std::vector<float> tmp(src.size()), out(src.size());
  for (int h = 0; h < height; ++h)
    for (int w = 0; w < width; ++w) {
      double acc = 0;
      for (int i = -rad; i <= rad; ++i) {
        int ww = w + i;
        if (ww >= 0 && ww < width) acc += k[i + rad] * src[h * width + ww];
      }
      tmp[h * width + w] = static_cast<float>(acc);
    }
  for (int h = 0; h < height; ++h)
    for (int w = 0; w < width; ++w) {
      double acc = 0;
      for (int i = -rad; i <= rad; ++i) {
        int hh = h + i;
        if (hh >= 0 && hh < height) acc += k[i + rad] * tmp[hh * width + w];
      }
      out[h * width + w] = static_cast<float>(acc);
    }
  return out;
}
}  // namespace detail

/// Pose-style field stack of a single person: high confidence where a field's
/// shape is the visible owner, medium where it is covered by another shape of
/// the same person, blurred fall-off outside.
inline fields::FieldStack person_fields(const Body& body, const Array2<int>& owner,
                                        std::mt19937_64& rng) {
  const int H = owner.height, W = owner.width;
  fields::FieldStack stack{Array3<float>(H, W, fields::kNumPoseFields), fields::pose_field_names()};
  std::uniform_real_distribution<float> jitter(-1.0f, 1.0f);
  std::vector<float> mask(static_cast<std::size_t>(H) * W);
  for (int f = 0; f < fields::kNumPoseFields; ++f) {
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        mask[h * W + w] = body.shapes[f].contains({w + 0.5, h + 0.5}) ? 1.0f : 0.0f;
    auto blurred = detail::gaussian_blur(mask, H, W, 1.0);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const std::size_t i = static_cast<std::size_t>(h) * W + w;
        float v;
        if (mask[i] > 0) {
          v = owner(h, w) == f ? 0.95f + 0.03f * jitter(rng) : 0.6f + 0.05f * jitter(rng);
        } else {
          v = 0.9f * blurred[i];
        }
        stack.data(h, w, f) = std::clamp(v, 0.0f, 1.0f);
      }
  }
  return stack;
}

/// Everything needed to draw one sample besides identity/pose/occluder.
struct RenderContext {
  const CorpusConfig* config = nullptr;
  std::uint64_t seed = 0;  // per-sample noise/background stream
};

inline Rgb camera_gain(const CorpusConfig& cfg, int cam, std::uint64_t corpus_seed) {
  std::mt19937_64 rng(derive_seed(corpus_seed, {0xCA, static_cast<std::uint64_t>(cam)}));
  Rgb g{};
  for (auto& v : g) v = static_cast<float>(1.0 + uniform(rng, -cfg.camera_gain_spread, cfg.camera_gain_spread));
  return g;
}

/// Draws one sample. Throws kRejectedSample when the occluder hides the
/// whole person or the occluding pedestrian would be chosen as target.
inline SampleRecord render_sample(const IdentitySpec& identity, const Pose& pose,
                                  const OccluderSpec& occlusion, int cam, const Rgb& gain,
                                  const RenderContext& ctx) {
  const CorpusConfig& cfg = *ctx.config;
  const int H = cfg.height, W = cfg.width, K = cfg.K;
  std::mt19937_64 rng(ctx.seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));

  SampleRecord rec;
  rec.id = identity.id;
  rec.cam = cam;
  rec.image = Image(H, W, 3);

  // Background: vertical gradient plus clutter rectangles.
  Rgb top{}, bottom{};
  for (int c = 0; c < 3; ++c) {
    top[c] = static_cast<float>(uniform(rng, 0.2, 0.7));
    bottom[c] = static_cast<float>(uniform(rng, 0.2, 0.7));
  }
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) {
        float t = static_cast<float>(h) / std::max(1, H - 1);
        rec.image(h, w, c) = top[c] * (1 - t) + bottom[c] * t;
      }
  const int clutter = uniform_int(rng, 2, 5);
  for (int i = 0; i < clutter; ++i) {
    int x0 = uniform_int(rng, -W / 4, W - 2), y0 = uniform_int(rng, -H / 8, H - 2);
    int x1 = x0 + uniform_int(rng, 2, W / 2), y1 = y0 + uniform_int(rng, 2, H / 3);
    Rgb col{};
    for (auto& v : col) v = static_cast<float>(uniform(rng, 0.1, 0.9));
    for (int h = std::max(0, y0); h < std::min(H, y1); ++h)
      for (int w = std::max(0, x0); w < std::min(W, x1); ++w)
        for (int c = 0; c < 3; ++c) rec.image(h, w, c) = col[c];
  }

  const Body body = build_body(pose, H, W);
  const Array2<int> owner = rasterize(body, H, W);
  const double stripe_period = 3.0 * H / 64.0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      if (int f = owner(h, w); f >= 0) {
        Rgb col = component_color(identity, f, h + 0.5, body, stripe_period);
        for (int c = 0; c < 3; ++c) rec.image(h, w, c) = col[c];
      }

  rec.fields = person_fields(body, owner, rng);

  // Occlusion mask over the target.
  Array2<int> covered(H, W, 0);
  if (occlusion.rect) {
    const auto& r = *occlusion.rect;
    for (int h = std::max(0, r.y0); h < std::min(H, r.y1); ++h)
      for (int w = std::max(0, r.x0); w < std::min(W, r.x1); ++w) {
        covered(h, w) = 1;
        for (int c = 0; c < 3; ++c) rec.image(h, w, c) = r.color[c] + 0.5f * noise(rng);
      }
  }
  if (occlusion.pedestrian) {
    const auto& ped = *occlusion.pedestrian;
    const Body other = build_body(ped.pose, H, W);
    const Array2<int> other_owner = rasterize(other, H, W);
    auto other_fields = person_fields(other, other_owner, rng);
    // Both persons are "detected"; the target must be the one whose head is
    // closest to the top centre.
    const auto head_group = fields::grouping_preset(3);  // part 0 is the head
    std::vector<fields::HeadPoint> heads;
    for (const auto* st : {&rec.fields, &other_fields}) {
      auto hp = fields::head_position(fields::group_max(*st, head_group), 0, 0.5);
      heads.push_back(hp.value_or(fields::HeadPoint{W / 2.0, 1e9}));
    }
    if (fields::select_target(heads, W) != 0) {
      throw Error(ErrorCode::kRejectedSample, "occluding pedestrian selected as target");
    }
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        if (int f = other_owner(h, w); f >= 0) {
          covered(h, w) = 1;
          Rgb col = component_color(ped.identity, f, h + 0.5, other, stripe_period);
          for (int c = 0; c < 3; ++c) rec.image(h, w, c) = col[c];
        }
  }

  // Camera response and sensor noise.
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) {
        float v = rec.image(h, w, c) * gain[c] + noise(rng);
        rec.image(h, w, c) = std::clamp(v, 0.0f, 1.0f);
      }

  // Ground truth.
  rec.parsing_gt = fields::ParsingLabelMap{Array2<int>(H, W, 0), K};
  std::vector<long> area(K, 0), remaining(K, 0);
  long person_px = 0, visible_px = 0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const int f = owner(h, w);
      if (covered(h, w)) {
        for (int c = 0; c < fields::kNumPoseFields; ++c) rec.fields.data(h, w, c) = 0.0f;
      }
      if (f < 0) continue;
      const int part = fields::part_of_region(K, fields::field_region(f));
      ++area[part];
      ++person_px;
      if (!covered(h, w)) {
        ++remaining[part];
        ++visible_px;
        rec.parsing_gt.Y(h, w) = part + 1;
      }
    }
  if (visible_px == 0) throw Error(ErrorCode::kRejectedSample, "occluder hides the whole person");
  rec.occluded = visible_px < person_px;
  rec.part_visible_gt.resize(K);
  for (int k = 0; k < K; ++k) {
    rec.part_visible_gt[k] =
        remaining[k] > 0 && static_cast<double>(remaining[k]) >= cfg.visibility_fraction * area[k];
  }
  if (!cfg.keep_fields) rec.fields.data = Array3<float>();
  return rec;
}

inline Pose random_pose(const CorpusConfig& cfg, std::mt19937_64& rng) {
  Pose p;
  p.scale = uniform(rng, 0.88, 1.0);
  const double sx = cfg.width / 32.0;
  p.center_x = cfg.width / 2.0 + uniform(rng, -2.0, 2.0) * sx;
  const double body_h = 61.0 * cfg.height / 64.0 * p.scale;
  p.top_y = uniform(rng, 0.5, std::max(0.6, cfg.height - body_h - 0.5));
  p.arm_swing_left = uniform(rng, -1.2, 1.2);
  p.arm_swing_right = uniform(rng, -1.2, 1.2);
  p.leg_spread = uniform(rng, -0.8, 1.2);
  return p;
}

inline OccluderSpec random_occluder(const CorpusConfig& cfg, std::mt19937_64& rng,
                                    std::uint64_t seed) {
  OccluderSpec occ;
  const int H = cfg.height, W = cfg.width;
  if (uniform(rng, 0.0, 1.0) < cfg.pedestrian_share) {
    PedestrianOccluder ped;
    std::mt19937_64 id_rng(derive_seed(seed, {0xBEEF, rng()}));
    ped.identity = random_identity(-1, id_rng);
    ped.pose = random_pose(cfg, rng);
    ped.pose.top_y += uniform(rng, 0.42, 0.62) * H;
    ped.pose.center_x += uniform(rng, -0.35, 0.35) * W;
    occ.pedestrian = ped;
  } else {
    RectOccluder r;
    const double frac = uniform(rng, cfg.occluder_min_frac, cfg.occluder_max_frac);
    if (uniform(rng, 0.0, 1.0) < 0.7) {
      // From the bottom of the frame.
      const int rh = static_cast<int>(std::lround(frac * H));
      const int rw = static_cast<int>(std::lround(uniform(rng, 0.6, 1.2) * W));
      r.x0 = uniform_int(rng, -rw / 3, std::max(-rw / 3, W - 2 * rw / 3));
      r.x1 = r.x0 + rw;
      r.y1 = H;
      r.y0 = H - rh;
    } else {
      // From one side.
      const int rw = static_cast<int>(std::lround(frac * W * 0.9));
      if (uniform_int(rng, 0, 1)) {
        r.x0 = 0;
        r.x1 = rw;
      } else {
        r.x0 = W - rw;
        r.x1 = W;
      }
      r.y0 = uniform_int(rng, 0, H / 3);
      r.y1 = H;
    }
    for (auto& v : r.color) v = static_cast<float>(uniform(rng, 0.05, 0.95));
    occ.rect = r;
  }
  return occ;
}

inline std::string sample_file(int id, int cam, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d_c%d_%03d", id, cam, index);
  return buf;
}

inline void validate(const CorpusConfig& cfg) {
  require(cfg.num_train_ids > 0 && cfg.num_test_ids > 0, ErrorCode::kInvalidConfig,
          "corpus needs at least one train and one test identity");
  require(cfg.images_per_id > 0, ErrorCode::kInvalidConfig, "images_per_id must be positive");
  require(cfg.query_per_id >= 1 && cfg.query_per_id < cfg.images_per_id,
          ErrorCode::kInvalidConfig, "query_per_id must leave gallery images");
  require(cfg.num_cams >= 2, ErrorCode::kInvalidConfig, "need at least two cameras");
  require(cfg.height >= 16 && cfg.width >= 8, ErrorCode::kInvalidConfig, "image too small");
  require(cfg.occlusion_prob >= 0 && cfg.occlusion_prob <= 1, ErrorCode::kInvalidConfig,
          "occlusion_prob must lie in [0,1]");
  (void)fields::preset_regions(cfg.K);
}

/// One identity's samples; retried draws keep the output deterministic.
inline std::vector<SampleRecord> generate_identity(const CorpusConfig& cfg, std::uint64_t seed,
                                                   const IdentitySpec& identity,
                                                   const std::vector<Rgb>& gains) {
  std::vector<SampleRecord> out;
  for (int i = 0; i < cfg.images_per_id; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(
          seed, {0x5A, static_cast<std::uint64_t>(identity.id), static_cast<std::uint64_t>(i), attempt}));
      const int cam = uniform_int(rng, 0, cfg.num_cams - 1);
      const Pose pose = random_pose(cfg, rng);
      OccluderSpec occ;
      if (uniform(rng, 0.0, 1.0) < cfg.occlusion_prob) occ = random_occluder(cfg, rng, seed);
      RenderContext ctx{&cfg, rng()};
      try {
        auto rec = render_sample(identity, pose, occ, cam, gains[cam], ctx);
        rec.file = sample_file(identity.id, cam, i);
        out.push_back(std::move(rec));
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kRejectedSample) throw;
      }
    }
  }
  return out;
}

/// Train identities are 0..num_train_ids-1; test identities follow. For each
/// test identity the first query_per_id images taken from distinct cameras
/// form the query set and the rest form the gallery.
inline DatasetSplit generate_dataset(const CorpusConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  DatasetSplit split;
  split.config = cfg;
  split.seed = seed;
  const int total = cfg.num_train_ids + cfg.num_test_ids;
  const auto identities = make_identities(total, seed);
  std::vector<Rgb> gains;
  for (int c = 0; c < cfg.num_cams; ++c) gains.push_back(camera_gain(cfg, c, seed));
  for (int id = 0; id < total; ++id) {
    auto samples = generate_identity(cfg, seed, identities[id], gains);
    if (id < cfg.num_train_ids) {
      for (auto& s : samples) split.train.push_back(std::move(s));
      continue;
    }
    std::set<int> query_cams;
    for (auto& s : samples) {
      if (static_cast<int>(query_cams.size()) < cfg.query_per_id && !query_cams.count(s.cam)) {
        query_cams.insert(s.cam);
        split.query.push_back(std::move(s));
      } else {
        split.gallery.push_back(std::move(s));
      }
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// On-disk corpus: root/{train,query,gallery}/{images,masks,fields}/ and
// root/<split>/meta.jsonl.

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {"train", "query", "gallery"};
  return names;
}

inline void write_split(const std::filesystem::path& dir, const std::vector<SampleRecord>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "fields");
  std::ofstream meta(dir / "meta.jsonl", std::ios::binary);
  require(static_cast<bool>(meta), ErrorCode::kIo, "cannot write " + (dir / "meta.jsonl").string());
  for (const auto& s : samples) {
    png::write_rgb((dir / "images" / (s.file + ".png")).string(), s.image);
    png::write_gray((dir / "masks" / (s.file + ".png")).string(), s.parsing_gt.Y);
    if (!s.fields.data.data.empty()) {
      fields::write_field_stack((dir / "fields" / (s.file + ".fstk")).string(), s.fields);
    }
    nlohmann::json j;
    j["file"] = s.file;
    j["id"] = s.id;
    j["cam"] = s.cam;
    j["part_visible"] = s.part_visible_gt;
    meta << j.dump() << '\n';
  }
}

inline nlohmann::json config_to_json(const CorpusConfig& c) {
  return {{"num_train_ids", c.num_train_ids}, {"num_test_ids", c.num_test_ids},
          {"images_per_id", c.images_per_id}, {"query_per_id", c.query_per_id},
          {"num_cams", c.num_cams},           {"height", c.height},
          {"width", c.width},                 {"K", c.K},
          {"occlusion_prob", c.occlusion_prob}, {"occluder_min_frac", c.occluder_min_frac},
          {"occluder_max_frac", c.occluder_max_frac}, {"pedestrian_share", c.pedestrian_share},
          {"noise_sigma", c.noise_sigma},     {"camera_gain_spread", c.camera_gain_spread},
          {"visibility_fraction", c.visibility_fraction}};
}

inline void write_corpus(const std::filesystem::path& root, const DatasetSplit& split) {
  std::filesystem::create_directories(root);
  write_split(root / "train", split.train);
  write_split(root / "query", split.query);
  write_split(root / "gallery", split.gallery);
  std::ofstream info(root / "corpus.json", std::ios::binary);
  nlohmann::json j = config_to_json(split.config);
  j["seed"] = split.seed;
  info << j.dump(2) << '\n';
}

inline CorpusConfig read_corpus_config(const std::filesystem::path& root) {
  std::ifstream f(root / "corpus.json");
  require(static_cast<bool>(f), ErrorCode::kIo, "missing " + (root / "corpus.json").string());
  auto j = nlohmann::json::parse(f);
  CorpusConfig c;
  c.num_train_ids = j.at("num_train_ids");
  c.num_test_ids = j.at("num_test_ids");
  c.images_per_id = j.at("images_per_id");
  c.query_per_id = j.at("query_per_id");
  c.num_cams = j.at("num_cams");
  c.height = j.at("height");
  c.width = j.at("width");
  c.K = j.at("K");
  c.occlusion_prob = j.at("occlusion_prob");
  c.occluder_min_frac = j.at("occluder_min_frac");
  c.occluder_max_frac = j.at("occluder_max_frac");
  c.pedestrian_share = j.at("pedestrian_share");
  c.noise_sigma = j.at("noise_sigma");
  c.camera_gain_spread = j.at("camera_gain_spread");
  c.visibility_fraction = j.at("visibility_fraction");
  return c;
}

/// Loads one split. Parsing ground truth is read back from the masks with
/// the given K.
inline std::vector<SampleRecord> read_split(const std::filesystem::path& dir, int K,
                                            bool load_fields = true) {
  std::ifstream meta(dir / "meta.jsonl");
  require(static_cast<bool>(meta), ErrorCode::kIo, "missing " + (dir / "meta.jsonl").string());
  std::vector<SampleRecord> out;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    SampleRecord s;
    s.file = j.at("file").get<std::string>();
    s.id = j.at("id");
    s.cam = j.at("cam");
    s.part_visible_gt = j.at("part_visible").get<std::vector<bool>>();
    s.image = png::read_rgb((dir / "images" / (s.file + ".png")).string());
    s.parsing_gt = fields::ParsingLabelMap{png::read_gray((dir / "masks" / (s.file + ".png")).string()), K};
    if (load_fields) s.fields = fields::read_field_stack((dir / "fields" / (s.file + ".fstk")).string());
    s.occluded = std::find(s.part_visible_gt.begin(), s.part_visible_gt.end(), false) !=
                 s.part_visible_gt.end();
    out.push_back(std::move(s));
  }
  return out;
}

inline DatasetSplit read_corpus(const std::filesystem::path& root, bool load_fields = true) {
  DatasetSplit split;
  split.config = read_corpus_config(root);
  split.train = read_split(root / "train", split.config.K, load_fields);
  split.query = read_split(root / "query", split.config.K, load_fields);
  split.gallery = read_split(root / "gallery", split.config.K, load_fields);
  return split;
}

// ---------------------------------------------------------------------------

/// Identity-balanced batches: P identities x Kinst images each. Identities
/// with fewer than Kinst images are sampled with replacement.
class PkSampler {
 public:
  PkSampler(std::vector<std::pair<int, int>> labels, int P = 16, int Kinst = 4,
            std::uint64_t seed = 0)
      : P_(P), Kinst_(Kinst), seed_(seed) {
    require(P >= 1 && Kinst >= 1, ErrorCode::kInvalidConfig, "P and Kinst must be positive");
    for (auto [index, id] : labels) by_id_[id].push_back(index);
    require(static_cast<int>(by_id_.size()) >= P, ErrorCode::kInvalidConfig,
            "PK sampler needs at least P=" + std::to_string(P) + " identities, got " +
                std::to_string(by_id_.size()));
    for (const auto& [id, _] : by_id_) ids_.push_back(id);
  }

  int batch_size() const { return P_ * Kinst_; }

  /// Batches of one epoch; deterministic in (seed, epoch). Every identity
  /// appears at least once.
  std::vector<std::vector<int>> epoch(int epoch_index) const {
    std::mt19937_64 rng(derive_seed(seed_, {0x9C, static_cast<std::uint64_t>(epoch_index)}));
    std::map<int, std::vector<std::vector<int>>> chunks;
    for (int id : ids_) chunks[id] = make_chunks(id, rng);

    std::vector<std::vector<int>> batches;
    std::set<int> used;
    std::vector<int> avail;
    auto refresh = [&] {
      avail.clear();
      for (int id : ids_)
        if (!chunks[id].empty()) avail.push_back(id);
    };
    refresh();
    while (static_cast<int>(avail.size()) >= P_) {
      std::shuffle(avail.begin(), avail.end(), rng);
      std::vector<int> batch;
      for (int i = 0; i < P_; ++i) {
        int id = avail[i];
        auto& c = chunks[id];
        batch.insert(batch.end(), c.back().begin(), c.back().end());
        c.pop_back();
        used.insert(id);
      }
      batches.push_back(std::move(batch));
      refresh();
    }
    // Identities never drawn this epoch get an extra batch, padded with
    // fresh draws from other identities.
    std::vector<int> missing;
    for (int id : ids_)
      if (!used.count(id)) missing.push_back(id);
    while (!missing.empty()) {
      std::vector<int> members(missing.begin(), missing.begin() + std::min<std::size_t>(P_, missing.size()));
      missing.erase(missing.begin(), missing.begin() + members.size());
      std::vector<int> others;
      for (int id : ids_)
        if (std::find(members.begin(), members.end(), id) == members.end()) others.push_back(id);
      std::shuffle(others.begin(), others.end(), rng);
      for (std::size_t i = 0; static_cast<int>(members.size()) < P_; ++i) members.push_back(others[i]);
      std::vector<int> batch;
      for (int id : members) {
        auto c = make_chunks(id, rng);
        batch.insert(batch.end(), c.front().begin(), c.front().end());
      }
      batches.push_back(std::move(batch));
    }
    return batches;
  }

 private:
  std::vector<std::vector<int>> make_chunks(int id, std::mt19937_64& rng) const {
    std::vector<int> idx = by_id_.at(id);
    if (static_cast<int>(idx.size()) < Kinst_) {
      std::vector<int> drawn;
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      for (int i = 0; i < Kinst_; ++i) drawn.push_back(idx[pick(rng)]);
      idx = std::move(drawn);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i + Kinst_ <= idx.size(); i += Kinst_) {
      out.emplace_back(idx.begin() + i, idx.begin() + i + Kinst_);
    }
    return out;
  }

  int P_, Kinst_;
  std::uint64_t seed_;
  std::map<int, std::vector<int>> by_id_;
  std::vector<int> ids_;
};

}  // namespace reidkit::synth
