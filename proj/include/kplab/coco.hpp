#pragma once

#include <filesystem>

#include "kplab/skeleton.hpp"

namespace kplab {

// Reads a COCO keypoint JSON subset: images[id,width,height],
// annotations[image_id,keypoints,area,num_keypoints], categories[keypoints,
// skeleton]. Coordinates are normalized by the referenced image extents, the
// mask is v > 0, and annotations with num_keypoints == 0 are skipped. Pixel
// area is converted to normalized units (divided by width*height).
//
// When the file names an image sidecar (info.images_sidecar), pixels are
// loaded from it; otherwise samples carry no image.
Dataset load_coco_keypoints(const std::filesystem::path& path);

// Writes `dataset` as COCO-subset JSON at `json_path` plus the "KPL1" image
// sidecar next to it (same stem, ".images.bin"). All samples must carry
// images of identical extents.
void export_coco_keypoints(const Dataset& dataset, const SkeletonSpec& skel, const std::filesystem::path& json_path);

// Sidecar: "KPL1", u32 count, u32 C, H, W, then count*C*H*W little-endian f32.
void write_image_sidecar(const Dataset& dataset, const std::filesystem::path& path);
std::vector<Tensor> read_image_sidecar(const std::filesystem::path& path);

}  // namespace kplab
