#pragma once

#include <cstddef>
#include <cstdint>

#include "kplab/skeleton.hpp"

namespace kplab {

// Randomization ranges for the stick-figure renderer. Scale is the figure's
// head-to-ankle extent as a fraction of image height.
struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 48;
  std::size_t channels = 3;
  double scale_min = 0.55;
  double scale_max = 0.85;
  double rotation_max_deg = 15.0;
  double limb_angle_scale = 1.0;  // multiplies every limb-angle range
  double thickness_min = 1.2;     // pixels
  double thickness_max = 2.4;
  double noise = 0.08;            // background noise amplitude
  double occlusion_prob = 0.0;    // per non-root joint
  double occluder_min = 0.14;     // occluder side, fraction of figure extent
  double occluder_max = 0.22;

  void validate() const;  // throws InvalidConfig
};

// Renders one figure on the 13-joint stick skeleton. Pure function of
// (seed, config); `id` is copied into the sample metadata.
PoseSample generate_synthetic_sample(std::uint64_t seed, const SynthConfig& config, std::uint64_t id = 0);

// Sample i uses seed Rng::derive(seed, i) and id first_id + i.
Dataset generate_dataset(std::uint64_t seed, std::size_t count, const SynthConfig& config, std::uint64_t first_id = 0);

}  // namespace kplab
