#include "imt/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "imt/codec.hpp"
#include "imt/error.hpp"

namespace imt {
namespace {

constexpr float kPi = std::numbers::pi_v<float>;

float uniform(std::mt19937_64& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::uint8_t clamp_u8(float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Rgb hsv_to_rgb(float h_deg, float s, float v) {
  const float c = v * s;
  const float hp = std::fmod(h_deg, 360.0f) / 60.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const float m = v - c;
  return {clamp_u8(255 * (r + m)), clamp_u8(255 * (g + m)), clamp_u8(255 * (b + m))};
}

bool inside(const ShapeSpec& s, float px, float py) {
  const float dx = px - s.cx, dy = py - s.cy;
  const float c = std::cos(s.rotation), sn = std::sin(s.rotation);
  const float u = dx * c + dy * sn;
  const float v = -dx * sn + dy * c;
  switch (s.kind) {
    case ShapeKind::square: return std::max(std::fabs(u), std::fabs(v)) <= 0.82f * s.radius;
    case ShapeKind::circle: return u * u + v * v <= s.radius * s.radius;
    case ShapeKind::diamond: return std::fabs(u) + std::fabs(v) <= 1.05f * s.radius;
    case ShapeKind::triangle: {
      // Equilateral triangle with circumradius 1.15 r: three half-planes at the inradius.
      const float inradius = 0.575f * s.radius;
      for (float a : {kPi / 2, kPi / 2 + 2 * kPi / 3, kPi / 2 + 4 * kPi / 3}) {
        if (u * std::cos(a) + v * std::sin(a) > inradius) return false;
      }
      return true;
    }
  }
  return false;
}

bool inside(const HandSpec& h, float px, float py) {
  const float dx = px - h.cx, dy = py - h.cy;
  const float c = std::cos(h.angle), sn = std::sin(h.angle);
  const float along = dx * c + dy * sn;
  const float across = -dx * sn + dy * c;
  const float e = (along * along) / (h.semi_major * h.semi_major) + (across * across) / (h.semi_minor * h.semi_minor);
  if (e <= 1.0f) return true;
  if (h.finger) {
    const float len = 0.8f * h.semi_major;
    return along >= 0.6f * h.semi_major && along <= h.semi_major + len && std::fabs(across) <= 0.28f * h.semi_minor;
  }
  return false;
}

template <class S>
Mask rasterize(const S& shape, int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (inside(shape, x + 0.5f, y + 0.5f)) m.at(x, y) = 255;
    }
  }
  return m;
}

std::size_t overlap(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) n += (a.values[i] && b.values[i]) ? 1 : 0;
  return n;
}

/// Distance (px) from every pixel to the nearest pixel of `m`.
cv::Mat distance_to(const Mask& m) {
  cv::Mat inv(m.height, m.width, CV_8UC1);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) inv.at<std::uint8_t>(y, x) = m.at(x, y) ? 0 : 255;
  }
  cv::Mat dist;
  cv::distanceTransform(inv, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  return dist;
}

float min_distance(const cv::Mat& dist, const Mask& hand) {
  float best = 1e9f;
  for (int y = 0; y < hand.height; ++y) {
    for (int x = 0; x < hand.width; ++x) {
      if (hand.at(x, y)) best = std::min(best, dist.at<float>(y, x));
    }
  }
  return best;
}

Rgb skin_tone(std::mt19937_64& rng) {
  const float t = uniform(rng, 0.0f, 1.0f);
  return {clamp_u8(200 + 35 * t + uniform(rng, -4, 4)), clamp_u8(150 + 35 * t + uniform(rng, -4, 4)),
          clamp_u8(118 + 32 * t + uniform(rng, -4, 4))};
}

float gesture_reach(GestureType g) {
  switch (g) {
    case GestureType::touching: return 0.45f;
    case GestureType::exhibiting: return 0.65f;
    case GestureType::presenting: return 0.9f;
    case GestureType::pointing: return 1.0f;
  }
  return 0.7f;
}

/// Places a hand next to `anchor`, avoiding `avoid`. Returns false if no layout was found.
bool place_hand(std::mt19937_64& rng, const ShapeSpec& anchor, GestureType g, const Mask& avoid, int size, HandSpec& out) {
  const float s = size / 128.0f;
  const Mask anchor_mask = rasterize(anchor, size);
  const cv::Mat dist = distance_to(anchor_mask);
  const std::size_t anchor_area = std::max<std::size_t>(anchor_mask.area(), 1);
  for (int attempt = 0; attempt < 80; ++attempt) {
    HandSpec h;
    h.tone = skin_tone(rng);
    h.semi_major = s * uniform(rng, 13.0f, 17.0f);
    h.semi_minor = h.semi_major * uniform(rng, 0.5f, 0.62f);
    h.finger = g == GestureType::pointing;
    const float theta = uniform(rng, 0.0f, 2 * kPi);
    h.angle = theta + kPi;
    const float finger = h.finger ? 0.8f * h.semi_major : 0.0f;
    float reach = anchor.radius * gesture_reach(g) + h.semi_major + finger;
    Mask hm;
    // Pull the hand in until it is within 4 px of the anchor shape.
    for (int step = 0; step < 40; ++step) {
      h.cx = anchor.cx + std::cos(theta) * reach;
      h.cy = anchor.cy + std::sin(theta) * reach;
      hm = rasterize(h, size);
      if (hm.empty() || min_distance(dist, hm) <= 4.0f) break;
      reach -= 1.0f;
    }
    if (hm.area() < 40 * s * s) continue;
    if (h.cx < 0 || h.cy < 0 || h.cx >= size || h.cy >= size) continue;
    if (min_distance(dist, hm) > 4.0f) continue;
    if (overlap(hm, avoid) > 0) continue;
    if (overlap(hm, anchor_mask) * 2 > anchor_area) continue;
    out = h;
    return true;
  }
  return false;
}

constexpr std::array<Rgb, 8> kCueColors{{{220, 40, 200},
                                         {110, 220, 40},
                                         {30, 40, 150},
                                         {40, 200, 220},
                                         {240, 230, 30},
                                         {120, 30, 180},
                                         {20, 120, 60},
                                         {250, 250, 250}}};

}  // namespace

Rgb cue_color_for_class(int label) { return kCueColors[static_cast<std::size_t>(label) % kCueColors.size()]; }

ViewParams ViewParams::random(std::mt19937_64& rng) {
  ViewParams v;
  v.x = uniform(rng, 0, 1);
  v.y = uniform(rng, 0, 1);
  v.scale = uniform(rng, 0, 1);
  v.hue = uniform(rng, 0, 1);
  v.lighting = uniform(rng, 0, 1);
  v.background = uniform(rng, 0, 1);
  return v;
}

ViewParams ViewParams::jittered(std::mt19937_64& rng, float amount) const {
  auto j = [&](float v) { return std::clamp(v + uniform(rng, -amount, amount), 0.0f, 1.0f); };
  ViewParams v = *this;
  v.x = j(x);
  v.y = j(y);
  v.scale = j(scale);
  v.hue = j(hue);
  v.lighting = j(lighting);
  v.background = j(background);
  return v;
}

SceneSpec make_scene_spec(int label, GestureType gesture, const ViewParams& view, std::uint64_t layout_seed,
                          const SynthOptions& opt) {
  if (opt.size < kMinFrameSide) fail(ErrorKind::invalid_argument, "scene size below 16");
  std::mt19937_64 rng(layout_seed);
  const int size = opt.size;
  const float s = size / 128.0f;

  SceneSpec spec;
  spec.size = size;
  spec.label = label;
  spec.gesture = gesture;
  spec.background_level = 95.0f + 70.0f * view.background;
  spec.lighting = 0.8f + 0.3f * view.lighting;
  spec.texture_seed = rng();

  ShapeSpec& t = spec.target;
  t.kind = static_cast<ShapeKind>(label % kShapeKinds);
  t.radius = s * (opt.target_radius_min + (opt.target_radius_max - opt.target_radius_min) * view.scale);
  t.rotation = uniform(rng, -0.3f, 0.3f);
  t.color = hsv_to_rgb(360.0f * view.hue, 0.8f, 0.85f);
  const float margin = t.radius + 6.0f * s;
  t.cx = margin + view.x * (size - 2 * margin);
  t.cy = margin + view.y * (size - 2 * margin);

  const Mask target_mask = rasterize(t, size);
  Mask occupied = target_mask;

  const int n_distractors = uniform_int(rng, opt.min_distractors, std::max(opt.min_distractors, opt.max_distractors));
  for (int k = 0; k < n_distractors; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      ShapeSpec d;
      d.kind = static_cast<ShapeKind>(uniform_int(rng, 0, kShapeKinds - 1));
      d.radius = s * uniform(rng, 11.0f, 20.0f);
      d.rotation = uniform(rng, -0.3f, 0.3f);
      const float m = d.radius + 3.0f * s;
      d.cx = uniform(rng, m, size - m);
      d.cy = uniform(rng, m, size - m);
      if (opt.distractor_style == DistractorStyle::matching) {
        d.color = hsv_to_rgb(uniform(rng, 0.0f, 360.0f), 0.8f, 0.85f);
      } else {
        float g = uniform(rng, 40.0f, 220.0f);
        if (std::fabs(g - spec.background_level) < 45.0f) g = spec.background_level > 130 ? 45.0f : 215.0f;
        d.color = {clamp_u8(g), clamp_u8(g), clamp_u8(g)};
      }
      bool far = true;
      const float room = 30.0f * s;  // space for a hand between shapes
      if (std::hypot(d.cx - t.cx, d.cy - t.cy) < t.radius + d.radius + room) far = false;
      for (const ShapeSpec& o : spec.distractors) {
        if (std::hypot(d.cx - o.cx, d.cy - o.cy) < o.radius + d.radius + 4.0f * s) far = false;
      }
      if (!far) continue;
      spec.distractors.push_back(d);
      const Mask dm = rasterize(d, size);
      for (std::size_t i = 0; i < dm.values.size(); ++i) occupied.values[i] |= dm.values[i];
      break;
    }
  }

  Mask avoid_for_hand(size, size);
  for (const ShapeSpec& d : spec.distractors) {
    const Mask dm = rasterize(d, size);
    for (std::size_t i = 0; i < dm.values.size(); ++i) avoid_for_hand.values[i] |= dm.values[i];
  }
  if (!place_hand(rng, t, gesture, avoid_for_hand, size, spec.hand)) {
    // Fall back to a hand with no avoidance constraint; adjacency still holds.
    place_hand(rng, t, gesture, Mask(size, size), size, spec.hand);
  }
  const Mask hand_mask = rasterize(spec.hand, size);
  for (std::size_t i = 0; i < hand_mask.values.size(); ++i) occupied.values[i] |= hand_mask.values[i];

  if (!spec.distractors.empty() && uniform(rng, 0.0f, 1.0f) < opt.decoy_hand_prob) {
    Mask avoid = target_mask;
    for (std::size_t i = 0; i < avoid.values.size(); ++i) avoid.values[i] |= hand_mask.values[i];
    const GestureType decoy_gesture = kAllGestures[static_cast<std::size_t>(uniform_int(rng, 0, 3))];
    HandSpec decoy;
    if (place_hand(rng, spec.distractors.front(), decoy_gesture, avoid, size, decoy)) {
      spec.decoy = decoy;
      const Mask dm = rasterize(decoy, size);
      for (std::size_t i = 0; i < dm.values.size(); ++i) occupied.values[i] |= dm.values[i];
    }
  }

  if (opt.spurious_cue) {
    spec.cue_color = cue_color_for_class(label);
    const int side = std::clamp(static_cast<int>(opt.cue_fraction * size), 1, size);
    spec.cue_side = side;
    // Prefer a free corner; otherwise the corner with the least overlap.
    int best = 0;
    std::size_t best_overlap = SIZE_MAX;
    const int first = uniform_int(rng, 0, 3);
    for (int k = 0; k < 4; ++k) {
      const int corner = (first + k) % 4;
      const int x0 = (corner & 1) ? size - side : 0;
      const int y0 = (corner & 2) ? size - side : 0;
      std::size_t n = 0;
      for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) n += occupied.at(x, y) ? 1 : 0;
      }
      if (n < best_overlap) {
        best_overlap = n;
        best = corner;
      }
    }
    spec.cue_corner = best;
  }
  return spec;
}

SynthScene render_scene(const SceneSpec& spec) {
  const int size = spec.size;
  SynthScene out;
  out.spec = spec;
  out.image = Frame(size, size);
  out.object_mask = Mask(size, size);
  out.hand_mask = Mask(size, size);
  out.distractor_mask = Mask(size, size);

  std::mt19937_64 rng(spec.texture_seed);
  std::vector<float> rgb(static_cast<std::size_t>(size) * size * 3);
  const float gx = uniform(rng, -25.0f, 25.0f), gy = uniform(rng, -25.0f, 25.0f);
  const std::array<float, 3> tint{uniform(rng, -6, 6), uniform(rng, -6, 6), uniform(rng, -6, 6)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const float base = spec.background_level + gx * (x / float(size) - 0.5f) + gy * (y / float(size) - 0.5f);
      const float n = uniform(rng, -10.0f, 10.0f);
      float* p = &rgb[3 * (static_cast<std::size_t>(y) * size + x)];
      for (int c = 0; c < 3; ++c) p[c] = base + n + tint[c];
    }
  }

  auto paint = [&](auto&& shape, Rgb color, float noise, Mask* into, std::initializer_list<Mask*> clears) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!inside(shape, x + 0.5f, y + 0.5f)) continue;
        const float n = uniform(rng, -noise, noise);
        float* p = &rgb[3 * (static_cast<std::size_t>(y) * size + x)];
        for (int c = 0; c < 3; ++c) p[c] = color[c] + n;
        if (into) into->at(x, y) = 255;
        for (Mask* m : clears) m->at(x, y) = 0;
      }
    }
  };

  for (const ShapeSpec& d : spec.distractors) paint(d, d.color, 8.0f, &out.distractor_mask, {});
  if (spec.decoy) paint(*spec.decoy, spec.decoy->tone, 5.0f, nullptr, {&out.distractor_mask});
  paint(spec.target, spec.target.color, 8.0f, &out.object_mask, {&out.distractor_mask});
  paint(spec.hand, spec.hand.tone, 5.0f, &out.hand_mask, {&out.object_mask, &out.distractor_mask});

  if (spec.cue_color) {
    const int side = spec.cue_side;
    const int x0 = (spec.cue_corner & 1) ? size - side : 0;
    const int y0 = (spec.cue_corner & 2) ? size - side : 0;
    for (int y = y0; y < y0 + side; ++y) {
      for (int x = x0; x < x0 + side; ++x) {
        float* p = &rgb[3 * (static_cast<std::size_t>(y) * size + x)];
        const float n = uniform(rng, -6.0f, 6.0f);
        for (int c = 0; c < 3; ++c) p[c] = (*spec.cue_color)[c] + n;
        out.object_mask.at(x, y) = 0;
        out.hand_mask.at(x, y) = 0;
        out.distractor_mask.at(x, y) = 0;
      }
    }
  }

  for (std::size_t i = 0; i < rgb.size(); ++i) out.image.pixels[i] = clamp_u8(rgb[i] * spec.lighting);
  return out;
}

std::vector<SynthScene> generate_scenes(int n, std::uint64_t seed, const SynthOptions& opt) {
  if (n < 1) fail(ErrorKind::invalid_argument, "scene count must be >= 1");
  if (opt.num_classes < 1) fail(ErrorKind::invalid_argument, "num_classes must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<SynthScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n));
  const int per = std::max(1, opt.images_per_participant);
  for (int i = 0; i < n; ++i) {
    const int label = uniform_int(rng, 0, opt.num_classes - 1);
    const ViewParams view = ViewParams::random(rng);
    const std::uint64_t layout = rng();
    SynthScene s = render_scene(make_scene_spec(label, kAllGestures[static_cast<std::size_t>(i) % 4], view, layout, opt));
    char pid[32];
    std::snprintf(pid, sizeof pid, "p%03d", i / per);
    s.participant_id = pid;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

DatasetManifest write_scenes(const std::vector<SynthScene>& scenes, const std::filesystem::path& dir) {
  DatasetManifest m;
  m.root = dir;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SynthScene& s = scenes[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    ManifestRecord r;
    r.participant_id = s.participant_id;
    r.gesture = s.spec.gesture;
    r.image = std::string("images/") + stem + ".png";
    r.object_mask = std::string("masks/") + stem + ".object.png";
    r.hand_mask = std::string("masks/") + stem + ".hand.png";
    r.distractor_mask = std::string("masks/") + stem + ".distractor.png";
    r.label = s.spec.label;
    write_png(dir / r.image, s.image);
    write_png(dir / r.object_mask, s.object_mask);
    write_png(dir / *r.hand_mask, s.hand_mask);
    write_png(dir / *r.distractor_mask, s.distractor_mask);
    m.records.push_back(std::move(r));
  }
  save_manifest(m, dir / "manifest.json");
  return load_manifest(dir / "manifest.json");
}

DatasetManifest generate_synthetic(int n_scenes, std::uint64_t seed, bool spurious_cue,
                                   const std::filesystem::path& dir, SynthOptions opt) {
  opt.spurious_cue = spurious_cue;
  return write_scenes(generate_scenes(n_scenes, seed, opt), dir);
}

}  // namespace imt
