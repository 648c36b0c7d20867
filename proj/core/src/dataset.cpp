#include "xvmunet/dataset.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "xvmunet/errors.hpp"

namespace xvmunet::data {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kMaskSuffix = "_mask.pgm";

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const std::string text = io::read_file(dir / kManifest);
  try {
    nlohmann::json m = nlohmann::json::parse(text);
    if (!m.contains("samples") || !m["samples"].is_array()) throw DataError("manifest has no samples array");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / kManifest).string() + ": " + e.what());
  }
}

Sample load_pair(const std::filesystem::path& dir, const std::string& id, const std::string& image_file,
                 const std::string& mask_file) {
  try {
    return make_sample(id, io::read_pnm(dir / image_file), io::read_pnm(dir / mask_file));
  } catch (const IoError& e) {
    throw DataError(std::string("sample '") + id + "': " + e.what());
  }
}

}  // namespace

Tensor image_to_tensor(const io::Image& image) {
  const std::size_t h = image.height, w = image.width, c = image.channels;
  Tensor t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) t[(k * h + y) * w + x] = image.at(x, y, k) / 255.0;
  return t;
}

io::Image mask_to_image(const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw DimensionError("mask_to_image: expected [1, H, W], got " + shape_str(mask.shape()));
  io::Image img(mask.dim(2), mask.dim(1), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] > 0.5 ? 255 : 0;
  return img;
}

Sample make_sample(std::string id, const io::Image& image, const io::Image& mask) {
  if (mask.channels != 1) throw DataError("sample '" + id + "': mask must be single-channel");
  if (image.width != mask.width || image.height != mask.height) {
    throw DataError("sample '" + id + "': image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    " vs mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  Tensor m({1, mask.height, mask.width});
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const auto v = mask.pixels[i];
    if (v != 0 && v != 255) {
      throw DataError("sample '" + id + "': mask value " + std::to_string(v) + " at pixel " + std::to_string(i) +
                      " is not 0 or 255");
    }
    m[i] = v == 255 ? 1.0 : 0.0;
  }
  return Sample{std::move(id), image_to_tensor(image), std::move(m)};
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' not found");
  Dataset out;
  if (std::filesystem::exists(dir / kManifest)) {
    const nlohmann::json manifest = read_manifest(dir);
    for (const auto& entry : manifest["samples"]) {
      if (!entry.contains("id") || !entry.contains("image") || !entry.contains("mask")) {
        throw DataError("manifest entry lacks id/image/mask: " + entry.dump());
      }
      out.push_back(load_pair(dir, entry["id"].get<std::string>(), entry["image"].get<std::string>(),
                              entry["mask"].get<std::string>()));
    }
  } else {
    std::map<std::string, std::string> pairs;  // id -> image file
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
      const std::string name = f.path().filename().string();
      const std::string suffix = kMaskSuffix;
      if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
      const std::string id = name.substr(0, name.size() - suffix.size());
      if (std::filesystem::exists(dir / (id + ".pgm"))) {
        pairs[id] = id + ".pgm";
      } else if (std::filesystem::exists(dir / (id + ".ppm"))) {
        pairs[id] = id + ".ppm";
      } else {
        throw DataError("mask '" + name + "' has no matching image");
      }
    }
    for (const auto& [id, image] : pairs) out.push_back(load_pair(dir, id, image, id + kMaskSuffix));
  }
  if (out.empty()) throw DataError("dataset '" + dir.string() + "' contains no samples");
  for (const auto& s : out) {
    if (s.image.shape() != out.front().image.shape()) {
      throw DataError("sample '" + s.id + "' has shape " + shape_str(s.image.shape()) + ", expected " +
                      shape_str(out.front().image.shape()));
    }
  }
  return out;
}

std::vector<std::string> manifest_files(const std::filesystem::path& dir) {
  std::vector<std::string> files{kManifest};
  const nlohmann::json manifest = read_manifest(dir);
  for (const auto& entry : manifest["samples"]) {
    files.push_back(entry.at("image").get<std::string>());
    files.push_back(entry.at("mask").get<std::string>());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace xvmunet::data
