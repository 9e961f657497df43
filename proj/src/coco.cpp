#include "kplab/coco.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace kplab {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

[[noreturn]] void field_error(const std::filesystem::path& path, const std::string& field, const std::string& what) {
  throw Error(ErrorKind::ParseError, path.string() + ": field " + field + ": " + what);
}

const json& require(const json& obj, const char* key, const std::filesystem::path& path, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) field_error(path, where + "." + key, "missing");
  return obj.at(key);
}

double number(const json& v, const std::filesystem::path& path, const std::string& where) {
  if (!v.is_number()) field_error(path, where, "expected a number");
  return v.get<double>();
}

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw Error(ErrorKind::ParseError, path.string() + ": truncated header");
  return v;
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& json_path) {
  auto p = json_path;
  p.replace_extension(".images.bin");
  return p;
}

}  // namespace

void write_image_sidecar(const Dataset& dataset, const std::filesystem::path& path) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "no samples to write");
  const Shape shape = dataset.front().image.shape();
  if (shape.size() != 3) throw Error(ErrorKind::ShapeMismatch, "sidecar images must be [C,H,W]");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write("KPL1", 4);
  put_u32(out, static_cast<std::uint32_t>(dataset.size()));
  for (auto e : shape) put_u32(out, static_cast<std::uint32_t>(e));
  std::vector<float> buf;
  for (const auto& s : dataset) {
    if (s.image.shape() != shape) throw Error(ErrorKind::ShapeMismatch, "sidecar images must share extents");
    buf.assign(s.image.data().begin(), s.image.data().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::vector<Tensor> read_image_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "KPL1", 4) != 0)
    throw Error(ErrorKind::ParseError, path.string() + ": bad magic");
  const auto count = get_u32(in, path);
  const std::size_t c = get_u32(in, path), h = get_u32(in, path), w = get_u32(in, path);
  if (c == 0 || h == 0 || w == 0) throw Error(ErrorKind::ParseError, path.string() + ": zero image extent");
  std::vector<Tensor> images;
  images.reserve(count);
  std::vector<float> buf(c * h * w);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
      throw Error(ErrorKind::ParseError, path.string() + ": truncated at image " + std::to_string(i));
    images.push_back(Tensor::from(std::vector<double>(buf.begin(), buf.end()), {c, h, w}));
  }
  return images;
}

void export_coco_keypoints(const Dataset& dataset, const SkeletonSpec& skel, const std::filesystem::path& json_path) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "no samples to export");
  json images = json::array(), annotations = json::array();
  for (std::size_t n = 0; n < dataset.size(); ++n) {
    const auto& s = dataset[n];
    if (s.gt_pose.size() != skel.k) throw Error(ErrorKind::ShapeMismatch, "sample pose does not match skeleton");
    const double w = static_cast<double>(s.image.dim(2)), h = static_cast<double>(s.image.dim(1));
    images.push_back({{"id", s.meta.id}, {"width", s.image.dim(2)}, {"height", s.image.dim(1)},
                      {"file_name", std::to_string(s.meta.id)}});
    json kps = json::array();
    std::size_t labeled = 0;
    for (std::size_t j = 0; j < skel.k; ++j) {
      const bool m = s.gt_pose.mask[j];
      const bool hidden = j < s.meta.occluded.size() && s.meta.occluded[j];
      kps.push_back(s.gt_pose.coords[j].x * w);
      kps.push_back(s.gt_pose.coords[j].y * h);
      // COCO visibility: 0 unlabeled, 1 labeled but hidden, 2 visible.
      kps.push_back(m ? (hidden ? 1 : 2) : 0);
      labeled += m ? 1 : 0;
    }
    annotations.push_back({{"id", n + 1},
                           {"image_id", s.meta.id},
                           {"category_id", 1},
                           {"keypoints", kps},
                           {"num_keypoints", labeled},
                           {"area", s.area * w * h},
                           {"iscrowd", 0}});
  }
  json skeleton = json::array();
  for (auto [i, j] : skel.edges) skeleton.push_back({i + 1, j + 1});
  const auto sidecar = sidecar_path_for(json_path);
  json doc = {{"info", {{"images_sidecar", sidecar.filename().string()}}},
              {"images", images},
              {"annotations", annotations},
              {"categories", json::array({{{"id", 1}, {"name", "person"}, {"keypoints", skel.joint_names}, {"skeleton", skeleton}}})}};
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + json_path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + json_path.string());
  write_image_sidecar(dataset, sidecar);
}

Dataset load_coco_keypoints(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object()) field_error(path, "<root>", "expected an object");

  struct ImageRecord {
    double width, height;
    std::size_t order;
  };
  std::map<std::uint64_t, ImageRecord> image_index;
  const auto& imgs = require(doc, "images", path, "<root>");
  if (!imgs.is_array()) field_error(path, "images", "expected an array");
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const auto& im = imgs[i];
    const auto id = static_cast<std::uint64_t>(number(require(im, "id", path, where), path, where + ".id"));
    const double w = number(require(im, "width", path, where), path, where + ".width");
    const double h = number(require(im, "height", path, where), path, where + ".height");
    if (!(w > 0.0) || !(h > 0.0)) field_error(path, where, "non-positive image extent");
    image_index[id] = {w, h, i};
  }

  std::size_t k = 0;
  if (doc.contains("categories") && doc["categories"].is_array() && !doc["categories"].empty() &&
      doc["categories"][0].contains("keypoints"))
    k = doc["categories"][0]["keypoints"].size();

  std::vector<Tensor> pixels;
  if (doc.contains("info") && doc["info"].is_object() && doc["info"].contains("images_sidecar")) {
    pixels = read_image_sidecar(path.parent_path() / doc["info"]["images_sidecar"].get<std::string>());
    if (pixels.size() != imgs.size()) field_error(path, "info.images_sidecar", "image count differs from images[]");
  }

  Dataset out;
  const auto& anns = require(doc, "annotations", path, "<root>");
  if (!anns.is_array()) field_error(path, "annotations", "expected an array");
  for (std::size_t a = 0; a < anns.size(); ++a) {
    const std::string where = "annotations[" + std::to_string(a) + "]";
    const auto& ann = anns[a];
    const auto& kps = require(ann, "keypoints", path, where);
    if (!kps.is_array() || kps.empty() || kps.size() % 3 != 0)
      field_error(path, where + ".keypoints", "expected 3*K numbers");
    const std::size_t kk = kps.size() / 3;
    if (k != 0 && kk != k) field_error(path, where + ".keypoints", "expected " + std::to_string(k) + " triplets");
    double num = -1.0;
    if (ann.contains("num_keypoints")) num = number(ann["num_keypoints"], path, where + ".num_keypoints");
    std::size_t labeled = 0;
    for (std::size_t j = 0; j < kk; ++j)
      if (number(kps[3 * j + 2], path, where + ".keypoints") > 0) ++labeled;
    if (num == 0.0 || labeled == 0) continue;

    const auto image_id = static_cast<std::uint64_t>(number(require(ann, "image_id", path, where), path, where + ".image_id"));
    auto it = image_index.find(image_id);
    if (it == image_index.end())
      throw Error(ErrorKind::MissingImageRecord, path.string() + ": " + where + " references image " + std::to_string(image_id));
    const auto& rec = it->second;

    PoseSample s;
    s.meta.id = image_id;
    s.meta.occluded.assign(kk, false);
    s.gt_pose.coords.resize(kk);
    s.gt_pose.mask.assign(kk, false);
    for (std::size_t j = 0; j < kk; ++j) {
      const double x = number(kps[3 * j], path, where + ".keypoints");
      const double y = number(kps[3 * j + 1], path, where + ".keypoints");
      const double v = number(kps[3 * j + 2], path, where + ".keypoints");
      s.gt_pose.coords[j] = {x / rec.width, y / rec.height};
      s.gt_pose.mask[j] = v > 0;
      s.meta.occluded[j] = v == 1;
    }
    const double area = number(require(ann, "area", path, where), path, where + ".area");
    if (!(area > 0.0)) field_error(path, where + ".area", "must be positive");
    s.area = area / (rec.width * rec.height);
    if (!pixels.empty()) s.image = pixels[rec.order];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace kplab
