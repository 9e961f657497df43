#include "kplab/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "kplab/parallel.hpp"
#include "kplab/rng.hpp"

namespace kplab {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Limb colours, one per stick-figure edge in edge order.
constexpr std::array<std::array<double, 3>, 12> kLimbColors{{{1.00, 0.00, 0.00},
                                                             {1.00, 0.33, 0.00},
                                                             {1.00, 0.67, 0.00},
                                                             {1.00, 1.00, 0.00},
                                                             {0.67, 1.00, 0.00},
                                                             {0.33, 1.00, 0.00},
                                                             {0.00, 1.00, 0.33},
                                                             {0.00, 1.00, 0.67},
                                                             {0.00, 1.00, 1.00},
                                                             {0.00, 0.67, 1.00},
                                                             {0.00, 0.33, 1.00},
                                                             {0.67, 0.00, 1.00}}};

struct Canvas {
  std::size_t c, h, w;
  std::vector<double> px;

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return px[(ch * h + y) * w + x]; }

  void blend(std::size_t y, std::size_t x, const double* color, double cover) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double& v = at(ch, y, x);
      v = v * (1.0 - cover) + color[ch] * cover;
    }
  }
};

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Anti-aliased thick segment in pixel coordinates (pixel centres at i + 0.5).
void draw_segment(Canvas& cv, double ax, double ay, double bx, double by, double thickness, const double* color) {
  const double r = thickness / 2.0 + 0.5;
  const auto lo_x = static_cast<long>(std::floor(std::min(ax, bx) - r));
  const auto hi_x = static_cast<long>(std::ceil(std::max(ax, bx) + r));
  const auto lo_y = static_cast<long>(std::floor(std::min(ay, by) - r));
  const auto hi_y = static_cast<long>(std::ceil(std::max(ay, by) + r));
  for (long y = std::max(0L, lo_y); y <= std::min(static_cast<long>(cv.h) - 1, hi_y); ++y)
    for (long x = std::max(0L, lo_x); x <= std::min(static_cast<long>(cv.w) - 1, hi_x); ++x) {
      const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
      const double cover = std::clamp(thickness / 2.0 + 0.5 - d, 0.0, 1.0);
      if (cover > 0.0) cv.blend(static_cast<std::size_t>(y), static_cast<std::size_t>(x), color, cover);
    }
}

void draw_disk(Canvas& cv, double cx, double cy, double radius, const double* color) {
  draw_segment(cv, cx, cy, cx, cy, 2.0 * radius, color);
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (height < 8 || width < 8) fail("image extents must be at least 8x8");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (!(scale_min > 0.0) || !(scale_max >= scale_min) || scale_max > 1.0) fail("scale range must satisfy 0 < min <= max <= 1");
  if (!(rotation_max_deg >= 0.0) || rotation_max_deg > 90.0) fail("rotation_max_deg must be in [0, 90]");
  if (!(limb_angle_scale >= 0.0) || limb_angle_scale > 2.0) fail("limb_angle_scale must be in [0, 2]");
  if (!(thickness_min > 0.0) || !(thickness_max >= thickness_min)) fail("thickness range invalid");
  if (!(noise >= 0.0) || noise > 0.5) fail("noise must be in [0, 0.5]");
  if (!(occlusion_prob >= 0.0) || occlusion_prob > 1.0) fail("occlusion probability must be in [0, 1]");
  if (!(occluder_min > 0.0) || !(occluder_max >= occluder_min)) fail("occluder size range invalid");
}

PoseSample generate_synthetic_sample(std::uint64_t seed, const SynthConfig& config, std::uint64_t id) {
  config.validate();
  Rng geo(Rng::derive(seed, 0));
  Rng tex(Rng::derive(seed, 1));
  Rng occ(Rng::derive(seed, 2));
  const double as = config.limb_angle_scale;

  // Canonical figure, y down, neck at the origin, unit ~ figure extent.
  std::array<ops::Point2, 13> j{};
  const double head_len = 0.12 * geo.uniform(0.9, 1.1);
  const double shoulder = 0.11 * geo.uniform(0.85, 1.15);
  const double hip = 0.075 * geo.uniform(0.85, 1.15);
  const double torso = 0.36 * geo.uniform(0.92, 1.08);
  j[0] = {0.0, -head_len};
  j[1] = {shoulder, 0.02};
  j[2] = {-shoulder, 0.02};
  j[7] = {hip, torso};
  j[8] = {-hip, torso};
  auto limb = [&](std::size_t parent, std::size_t child, double side, double length, double angle) {
    j[child] = {j[parent].x + side * length * std::sin(angle), j[parent].y + length * std::cos(angle)};
  };
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? 1.0 : -1.0;
    const std::size_t o = static_cast<std::size_t>(s);
    const double upper = geo.uniform(-20.0, 150.0) * as * kDeg;
    const double fore = upper + geo.uniform(-90.0, 90.0) * as * kDeg;
    limb(1 + o, 3 + o, side, 0.16 * geo.uniform(0.9, 1.1), upper);
    limb(3 + o, 5 + o, side, 0.15 * geo.uniform(0.9, 1.1), fore);
    const double thigh = geo.uniform(-10.0, 45.0) * as * kDeg;
    const double shin = thigh + geo.uniform(-50.0, 20.0) * as * kDeg;
    limb(7 + o, 9 + o, side, 0.24 * geo.uniform(0.9, 1.1), thigh);
    limb(9 + o, 11 + o, side, 0.23 * geo.uniform(0.9, 1.1), shin);
  }
  const double rot = geo.uniform(-config.rotation_max_deg, config.rotation_max_deg) * kDeg;
  const double cr = std::cos(rot), sr = std::sin(rot);
  for (auto& p : j) p = {cr * p.x - sr * p.y, sr * p.x + cr * p.y};

  // Fit into [0.05, 0.95] of both image axes (pixel units, scaled by height).
  const double H = static_cast<double>(config.height), W = static_cast<double>(config.width);
  double min_x = j[0].x, max_x = j[0].x, min_y = j[0].y, max_y = j[0].y;
  for (const auto& p : j) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double extent_y = max_y - min_y, extent_x = max_x - min_x;
  double scale = geo.uniform(config.scale_min, config.scale_max) * H / std::max(extent_y, 1e-9);
  scale = std::min(scale, 0.9 * W / std::max(extent_x, 1e-9));
  scale = std::min(scale, 0.9 * H / std::max(extent_y, 1e-9));
  const double tx_lo = 0.05 * W - min_x * scale, tx_hi = 0.95 * W - max_x * scale;
  const double ty_lo = 0.05 * H - min_y * scale, ty_hi = 0.95 * H - max_y * scale;
  const double tx = geo.uniform(tx_lo, std::max(tx_lo, tx_hi));
  const double ty = geo.uniform(ty_lo, std::max(ty_lo, ty_hi));
  std::array<ops::Point2, 13> pix{};
  for (std::size_t i = 0; i < 13; ++i) pix[i] = {tx + scale * j[i].x, ty + scale * j[i].y};
  const double thickness = geo.uniform(config.thickness_min, config.thickness_max);
  const double figure_px = scale * extent_y;

  Canvas cv{config.channels, config.height, config.width, {}};
  cv.px.resize(cv.c * cv.h * cv.w);
  std::array<double, 3> base{};
  for (auto& b : base) b = tex.uniform(0.05, 0.35);
  for (std::size_t ch = 0; ch < cv.c; ++ch)
    for (std::size_t i = 0; i < cv.h * cv.w; ++i) cv.px[ch * cv.h * cv.w + i] = base[ch] + tex.uniform(-config.noise, config.noise);

  auto gray = [&](const std::array<double, 3>& rgb) {
    return std::array<double, 3>{(rgb[0] + rgb[1] + rgb[2]) / 3.0, 0.0, 0.0};
  };
  static const SkeletonSpec skel = stick_figure_skeleton();
  // Torso cross-bars first so limbs draw over them.
  const std::array<double, 3> torso_color{0.55, 0.55, 0.55};
  draw_segment(cv, pix[1].x, pix[1].y, pix[2].x, pix[2].y, thickness, torso_color.data());
  draw_segment(cv, pix[7].x, pix[7].y, pix[8].x, pix[8].y, thickness, torso_color.data());
  for (std::size_t e = 0; e < skel.edges.size(); ++e) {
    auto [a, b] = skel.edges[e];
    const auto color = cv.c == 3 ? kLimbColors[e] : gray(kLimbColors[e]);
    draw_segment(cv, pix[a].x, pix[a].y, pix[b].x, pix[b].y, thickness, color.data());
  }
  const std::array<double, 3> head_color{0.95, 0.95, 0.95};
  draw_disk(cv, pix[0].x, pix[0].y, std::max(1.0, 0.06 * figure_px), head_color.data());

  SampleMeta meta;
  meta.id = id;
  meta.occluded.assign(13, false);
  for (std::size_t i = 1; i < 13; ++i) {
    // Draws are unconditional so the figure's randomness does not depend on p.
    const double roll = occ.uniform();
    const double side = figure_px * occ.uniform(config.occluder_min, config.occluder_max);
    const double ox = pix[i].x + side * occ.uniform(-0.3, 0.3);
    const double oy = pix[i].y + side * occ.uniform(-0.3, 0.3);
    std::array<double, 3> fill{};
    for (auto& f : fill) f = occ.uniform(0.1, 0.9);
    const std::uint64_t texture_seed = occ.next();
    if (!(roll < config.occlusion_prob)) continue;
    meta.occluded[i] = true;
    Rng patch(texture_seed);
    const auto x0 = static_cast<long>(std::floor(ox - side / 2)), x1 = static_cast<long>(std::ceil(ox + side / 2));
    const auto y0 = static_cast<long>(std::floor(oy - side / 2)), y1 = static_cast<long>(std::ceil(oy + side / 2));
    for (long y = std::max(0L, y0); y < std::min(static_cast<long>(cv.h), y1); ++y)
      for (long x = std::max(0L, x0); x < std::min(static_cast<long>(cv.w), x1); ++x)
        for (std::size_t ch = 0; ch < cv.c; ++ch)
          cv.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
              fill[cv.c == 3 ? ch : 0] + patch.uniform(-config.noise, config.noise);
  }

  // Values are clamped and rounded through f32 so the binary export is exact.
  for (auto& v : cv.px) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));

  PoseSample sample;
  sample.image = Tensor::from(std::move(cv.px), {config.channels, config.height, config.width});
  std::vector<ops::Point2> coords(13);
  double nmin_x = 1.0, nmax_x = 0.0, nmin_y = 1.0, nmax_y = 0.0;
  for (std::size_t i = 0; i < 13; ++i) {
    coords[i] = {std::clamp(pix[i].x / W, 0.05, 0.95), std::clamp(pix[i].y / H, 0.05, 0.95)};
    nmin_x = std::min(nmin_x, coords[i].x);
    nmax_x = std::max(nmax_x, coords[i].x);
    nmin_y = std::min(nmin_y, coords[i].y);
    nmax_y = std::max(nmax_y, coords[i].y);
  }
  sample.gt_pose = Pose::all_visible(std::move(coords));
  sample.area = std::max((nmax_x - nmin_x) * (nmax_y - nmin_y), 1e-6);
  sample.meta = std::move(meta);
  return sample;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t count, const SynthConfig& config, std::uint64_t first_id) {
  config.validate();
  Dataset out(count);
  parallel_for(count, [&](std::size_t i) {
    out[i] = generate_synthetic_sample(Rng::derive(seed, i), config, first_id + i);
  });
  return out;
}

}  // namespace kplab
