#include "kplab/posenet.hpp"

#include <algorithm>
#include <cmath>

#include "kplab/rng.hpp"

namespace kplab {

using ops::add;
using ops::add_channel_bias;
using ops::conv2d;
using ops::relu;
using ops::upsample_nearest;

void BackboneConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, "backbone: " + what); };
  for (auto w : widths)
    if (w == 0) fail("channel widths must be positive");
  if (image_channels == 0 || image_height == 0 || image_width == 0) fail("image extents must be positive");
  if (internal_height == 0 || internal_width == 0 || internal_height % 4 != 0 || internal_width % 4 != 0)
    fail("internal extents must be positive multiples of 4");
  if (image_height % internal_height != 0 || image_width % internal_width != 0 ||
      image_height / internal_height != image_width / internal_width)
    fail("image extents must be the same integer multiple of the internal extents");
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("kernel size must be odd");
  if (joints == 0) fail("joint count must be positive");
  if (k_split == 0) fail("k_split must be positive");
  if (!(head_prior >= 0.0) || !std::isfinite(head_prior)) fail("head prior gain must be finite and non-negative");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"widths", widths},
          {"image_channels", image_channels},
          {"image_height", image_height},
          {"image_width", image_width},
          {"internal_height", internal_height},
          {"internal_width", internal_width},
          {"kernel_size", kernel_size},
          {"joints", joints},
          {"k_split", k_split},
          {"expectation_decode", expectation_decode},
          {"head_prior", head_prior}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  try {
    if (j.contains("widths")) c.widths = j["widths"].get<std::array<std::size_t, 3>>();
    c.image_channels = j.value("image_channels", c.image_channels);
    c.image_height = j.value("image_height", c.image_height);
    c.image_width = j.value("image_width", c.image_width);
    c.internal_height = j.value("internal_height", c.image_height);
    c.internal_width = j.value("internal_width", c.image_width);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.joints = j.value("joints", c.joints);
    c.k_split = j.value("k_split", c.k_split);
    c.expectation_decode = j.value("expectation_decode", c.expectation_decode);
    c.head_prior = j.value("head_prior", c.head_prior);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

BackboneConfig teacher_backbone() {
  BackboneConfig c;
  c.widths = {32, 64, 128};
  return c;
}

BackboneConfig student_backbone() { return BackboneConfig{}; }

namespace {

Tensor uniform_tensor(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(v), std::move(shape));
}

}  // namespace

ParamSet init_posenet(const BackboneConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamSet p;
  const std::size_t k = c.kernel_size, ci = c.image_channels;
  const auto [c1, c2, c3] = c.widths;
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t ks, std::size_t fan_in) {
    p.add(name, uniform_tensor(rng, {out, in, ks, ks}, std::sqrt(6.0 / static_cast<double>(fan_in))));
  };
  auto bias = [&](const std::string& name, std::size_t n) { p.add(name, Tensor::zeros({n})); };
  conv("stem.w", c1, ci, k, ci * k * k);
  bias("stem.b", c1);
  conv("down.w", c1, c1, k, c1 * k * k);
  bias("down.b", c1);
  // Two summed branches feed each decoder level; fan-in counts both.
  conv("up2.w", c2, c1, k, c1 * k * k + c1);
  conv("skip2.w", c2, c1, 1, c1 * k * k + c1);
  bias("up2.b", c2);
  conv("up3.w", c3, c2, k, c2 * k * k + ci * k * k);
  conv("skip3.w", c3, ci, k, c2 * k * k + ci * k * k);
  bias("up3.b", c3);
  const std::size_t cells = c.internal_height * c.internal_width;
  p.add("head.joint.w", uniform_tensor(rng, {c.joints, c3, k, k}, 1.0 / std::sqrt(static_cast<double>(c3 * k * k))));
  bias("head.joint.b", c.joints);
  if (c.head_prior > 0.0) {
    const double gain = c.head_prior;
    auto prior = [&](std::size_t bins, bool along_x) {
      const std::size_t h = c.internal_height, w = c.internal_width, extent = along_x ? w : h;
      std::vector<double> v(cells * bins);
      const double sigma = 1.0 / static_cast<double>(extent);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
          const double centre = ((along_x ? q : r) + 0.5) / static_cast<double>(extent);
          for (std::size_t b = 0; b < bins; ++b) {
            const double d = static_cast<double>(b) / static_cast<double>(bins - 1) - centre;
            v[(r * w + q) * bins + b] = gain * std::exp(-d * d / (2 * sigma * sigma));
          }
        }
      return Tensor::from(std::move(v), {cells, bins});
    };
    p.add("head.x.w", prior(c.x_bins(), true));
    bias("head.x.b", c.x_bins());
    p.add("head.y.w", prior(c.y_bins(), false));
    bias("head.y.b", c.y_bins());
    return p;
  }
  p.add("head.x.w", uniform_tensor(rng, {cells, c.x_bins()}, 1.0 / std::sqrt(static_cast<double>(cells))));
  bias("head.x.b", c.x_bins());
  p.add("head.y.w", uniform_tensor(rng, {cells, c.y_bins()}, 1.0 / std::sqrt(static_cast<double>(cells))));
  bias("head.y.b", c.y_bins());
  return p;
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet z;
  for (const auto& [name, t] : params.entries()) z.add(name, Tensor::zeros(t.shape()));
  return z;
}

BackboneOutput forward_backbone(const BackboneConfig& c, const ParamSet& p, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != c.image_channels || image.dim(1) != c.image_height ||
      image.dim(2) != c.image_width)
    throw Error(ErrorKind::ShapeMismatch, "image " + shape_str(image.shape()) + " does not match backbone input [" +
                                              std::to_string(c.image_channels) + "," + std::to_string(c.image_height) +
                                              "," + std::to_string(c.image_width) + "]");
  const std::size_t pad = c.kernel_size / 2;
  const Tensor x0 = c.pool_factor() > 1 ? ops::avg_pool(image, c.pool_factor()) : image;
  const Tensor e1 = relu(add_channel_bias(conv2d(x0, p.get("stem.w"), 2, pad), p.get("stem.b")));
  const Tensor f1 = relu(add_channel_bias(conv2d(e1, p.get("down.w"), 2, pad), p.get("down.b")));
  const Tensor f2 = relu(add_channel_bias(
      add(conv2d(upsample_nearest(f1, 2), p.get("up2.w"), 1, pad), conv2d(e1, p.get("skip2.w"), 1, 0)), p.get("up2.b")));
  const Tensor f3 = relu(add_channel_bias(
      add(conv2d(upsample_nearest(f2, 2), p.get("up3.w"), 1, pad), conv2d(x0, p.get("skip3.w"), 1, pad)),
      p.get("up3.b")));
  return BackboneOutput{FeaturePyramid{{f1, f2, f3}}, f3};
}

SimCCLogits simcc_heads(const BackboneConfig& c, const Tensor& finest, const ParamSet& p) {
  if (finest.rank() != 3 || finest.dim(0) != c.widths[2] || finest.dim(1) != c.internal_height ||
      finest.dim(2) != c.internal_width)
    throw Error(ErrorKind::ShapeMismatch, "finest feature map " + shape_str(finest.shape()) + " does not match config");
  const std::size_t pad = c.kernel_size / 2;
  const Tensor maps = add_channel_bias(conv2d(finest, p.get("head.joint.w"), 1, pad), p.get("head.joint.b"));
  const Tensor flat = ops::reshape(maps, {c.joints, c.internal_height * c.internal_width});
  SimCCLogits out;
  out.x_logits = ops::add_row_bias(ops::matmul(flat, p.get("head.x.w")), p.get("head.x.b"));
  out.y_logits = ops::add_row_bias(ops::matmul(flat, p.get("head.y.w")), p.get("head.y.b"));
  out.k_split = c.k_split;
  return out;
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

double bin_to_coord(double bin, std::size_t bins) { return bins > 1 ? bin / static_cast<double>(bins - 1) : 0.0; }

void check_logits(const SimCCLogits& l) {
  if (l.x_logits.rank() != 2 || l.y_logits.rank() != 2 || l.x_logits.dim(0) != l.y_logits.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "SimCC logits must be [K,bins] with matching K");
}

}  // namespace

Pose decode_simcc(const SimCCLogits& l) {
  check_logits(l);
  const std::size_t k = l.x_logits.dim(0), bx = l.x_logits.dim(1), by = l.y_logits.dim(1);
  std::vector<ops::Point2> coords(k);
  auto xd = l.x_logits.data(), yd = l.y_logits.data();
  for (std::size_t j = 0; j < k; ++j) {
    coords[j].x = bin_to_coord(static_cast<double>(argmax_row(xd.subspan(j * bx, bx))), bx);
    coords[j].y = bin_to_coord(static_cast<double>(argmax_row(yd.subspan(j * by, by))), by);
  }
  return Pose::all_visible(std::move(coords));
}

Pose decode_simcc_expectation(const SimCCLogits& l) {
  return pose_from_tensor(soft_argmax(SimCCLogits{l.x_logits.detach(), l.y_logits.detach(), l.k_split}));
}

double simcc_confidence(const SimCCLogits& l) {
  check_logits(l);
  const Tensor px = ops::softmax_axis(l.x_logits.detach(), 1);
  const Tensor py = ops::softmax_axis(l.y_logits.detach(), 1);
  double total = 0.0;
  const std::size_t k = px.dim(0);
  for (const Tensor* t : {&px, &py}) {
    const std::size_t bins = t->dim(1);
    for (std::size_t j = 0; j < k; ++j) {
      auto row = t->data().subspan(j * bins, bins);
      total += *std::max_element(row.begin(), row.end());
    }
  }
  return total / static_cast<double>(2 * k);
}

Tensor soft_argmax(const SimCCLogits& l) {
  check_logits(l);
  auto centers = [](std::size_t bins) {
    std::vector<double> v(bins);
    for (std::size_t i = 0; i < bins; ++i) v[i] = bin_to_coord(static_cast<double>(i), bins);
    return Tensor::from(std::move(v), {bins, 1});
  };
  const Tensor x = ops::matmul(ops::softmax_axis(l.x_logits, 1), centers(l.x_logits.dim(1)));
  const Tensor y = ops::matmul(ops::softmax_axis(l.y_logits, 1), centers(l.y_logits.dim(1)));
  return ops::concat_cols(x, y);
}

SimCCTargets encode_simcc_targets(const Pose& pose, double smoothing, std::size_t x_bins, std::size_t y_bins) {
  if (!(smoothing >= 0.0) || smoothing >= 1.0) throw Error(ErrorKind::InvalidArgument, "smoothing must be in [0, 1)");
  if (x_bins < 2 || y_bins < 2) throw Error(ErrorKind::InvalidArgument, "need at least two bins per axis");
  const std::size_t k = pose.size();
  auto encode = [&](std::size_t bins, auto coord_of) {
    const double off = smoothing / static_cast<double>(bins - 1);
    std::vector<double> v(k * bins, off);
    for (std::size_t j = 0; j < k; ++j) {
      const double c = std::clamp(coord_of(j), 0.0, 1.0);
      const auto hot = static_cast<std::size_t>(std::lround(c * static_cast<double>(bins - 1)));
      v[j * bins + hot] = 1.0 - smoothing;
    }
    return Tensor::from(std::move(v), {k, bins});
  };
  return SimCCTargets{encode(x_bins, [&](std::size_t j) { return pose.coords[j].x; }),
                      encode(y_bins, [&](std::size_t j) { return pose.coords[j].y; })};
}

Tensor simcc_kl_loss(const SimCCLogits& l, const SimCCTargets& t) {
  return ops::add(ops::kl_div(ops::log_softmax_axis(l.x_logits, 1), t.x, 1),
                  ops::kl_div(ops::log_softmax_axis(l.y_logits, 1), t.y, 1));
}

Prediction predict(const PoseNet& net, const Tensor& image) {
  const auto out = forward_backbone(net.config, net.params, image);
  const auto logits = simcc_heads(net.config, out.feature, net.params);
  Prediction p;
  p.pose = net.config.expectation_decode ? decode_simcc_expectation(logits) : decode_simcc(logits);
  p.confidence = simcc_confidence(logits);
  return p;
}

}  // namespace kplab
