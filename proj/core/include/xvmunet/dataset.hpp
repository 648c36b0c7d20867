#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xvmunet/pnm.hpp"
#include "xvmunet/tensor.hpp"

namespace xvmunet::data {

struct Sample {
  std::string id;
  Tensor image;  // [C, H, W], values in [0, 1]
  Tensor mask;   // [1, H, W], values 0 / 1
};

using Dataset = std::vector<Sample>;

// Pixel / 255 in channel-first layout.
Tensor image_to_tensor(const io::Image& image);
// Binary [1, H, W] tensor to a 0 / 255 gray image.
io::Image mask_to_image(const Tensor& mask);

// DataError when extents differ, the mask is not single-channel, or it holds
// values other than 0 and 255.
Sample make_sample(std::string id, const io::Image& image, const io::Image& mask);

// Reads manifest.json when present. Without a manifest, pairs every
// "<id>_mask.pgm" with "<id>.pgm" or "<id>.ppm" in the directory, sorted by id.
// DataError for missing or malformed files, empty datasets or mixed extents.
Dataset load_dataset(const std::filesystem::path& dir);

// File names listed by a directory's manifest, including manifest.json itself.
std::vector<std::string> manifest_files(const std::filesystem::path& dir);

}  // namespace xvmunet::data
