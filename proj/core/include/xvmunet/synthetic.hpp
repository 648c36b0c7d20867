#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "xvmunet/pnm.hpp"

namespace xvmunet::data {

// Dark elliptical lesions on a brighter background, blurred and speckled.
struct SyntheticSpec {
  std::size_t count = 250;
  std::size_t resolution = 64;
  std::size_t channels = 1;  // 1 writes .pgm images, 3 writes .ppm
  std::size_t min_ellipses = 1;
  std::size_t max_ellipses = 3;
  double radius_min = 0.08;  // fraction of resolution
  double radius_max = 0.30;
  double contrast_min = 0.15;
  double contrast_max = 0.6;
  std::size_t blur_radius = 1;  // box blur half-width in pixels
  double noise = 0.05;          // multiplicative speckle amplitude
  std::uint64_t seed = 7;

  void validate() const;
};

struct GeneratedSample {
  std::string id;
  io::Image image;
  io::Image mask;  // gray, values 0 / 255
};

std::string sample_id(std::size_t index);

// Depends only on (spec, index), so samples can be produced in any order.
GeneratedSample generate_sample(const SyntheticSpec& spec, std::size_t index);

// Writes <id>.pgm (or .ppm), <id>_mask.pgm and manifest.json into out_dir,
// creating it if needed. IoError when the directory cannot be written.
void gen_data(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace xvmunet::data
