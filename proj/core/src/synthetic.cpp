#include "xvmunet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include <nlohmann/json.hpp>

#include "xvmunet/errors.hpp"
#include "xvmunet/tensor.hpp"

namespace xvmunet::data {

namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0;
  }
};

// Separable box blur with edge clamping.
std::vector<double> box_blur(const std::vector<double>& src, std::size_t n, std::size_t radius) {
  if (radius == 0) return src;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto side = static_cast<std::ptrdiff_t>(n);
  const double inv = 1.0 / static_cast<double>(2 * radius + 1);
  std::vector<double> tmp(src.size()), out(src.size());
  for (std::ptrdiff_t y = 0; y < side; ++y) {
    for (std::ptrdiff_t x = 0; x < side; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) s += src[y * side + std::clamp<std::ptrdiff_t>(x + k, 0, side - 1)];
      tmp[y * side + x] = s * inv;
    }
  }
  for (std::ptrdiff_t y = 0; y < side; ++y) {
    for (std::ptrdiff_t x = 0; x < side; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) s += tmp[std::clamp<std::ptrdiff_t>(y + k, 0, side - 1) * side + x];
      out[y * side + x] = s * inv;
    }
  }
  return out;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void SyntheticSpec::validate() const {
  if (count == 0) throw ConfigError("synthetic count must be positive");
  if (resolution < 4) throw ConfigError("synthetic resolution must be at least 4");
  if (channels != 1 && channels != 3) throw ConfigError("synthetic channels must be 1 or 3");
  if (min_ellipses == 0 || min_ellipses > max_ellipses) throw ConfigError("need 1 <= min_ellipses <= max_ellipses");
  if (!(radius_min > 0.0 && radius_min <= radius_max && radius_max <= 0.5)) {
    throw ConfigError("need 0 < radius_min <= radius_max <= 0.5");
  }
  if (!(contrast_min > 0.0 && contrast_min <= contrast_max && contrast_max <= 0.8)) {
    throw ConfigError("need 0 < contrast_min <= contrast_max <= 0.8");
  }
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise amplitude must lie in [0, 1]");
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

GeneratedSample generate_sample(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t n = spec.resolution;
  const double res = static_cast<double>(n);
  Rng rng(mix_seed(spec.seed, index));

  const double background = rng.uniform(0.55, 0.85);
  const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
  double tint[3] = {1.0, 1.0, 1.0};
  if (spec.channels == 3) {
    for (double& t : tint) t = rng.uniform(0.8, 1.0);
  }

  std::vector<std::uint8_t> inside(n * n, 0);
  std::size_t foreground = 0;
  while (foreground == 0) {
    const std::size_t count = spec.min_ellipses + rng.below(spec.max_ellipses - spec.min_ellipses + 1);
    std::vector<Ellipse> shapes;
    for (std::size_t e = 0; e < count; ++e) {
      const double a = rng.uniform(spec.radius_min, spec.radius_max) * res;
      const double b = rng.uniform(spec.radius_min, spec.radius_max) * res;
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double cx = rng.uniform(0.2, 0.8) * res;
      const double cy = rng.uniform(0.2, 0.8) * res;
      shapes.push_back(Ellipse{cx, cy, a, b, std::cos(theta), std::sin(theta)});
    }
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const bool hit = std::any_of(shapes.begin(), shapes.end(), [&](const Ellipse& s) { return s.contains(px, py); });
        inside[y * n + x] = hit ? 1 : 0;
        foreground += hit ? 1 : 0;
      }
    }
  }

  std::vector<double> intensity(n * n);
  for (std::size_t i = 0; i < n * n; ++i) intensity[i] = inside[i] ? background - contrast : background;
  intensity = box_blur(intensity, n, spec.blur_radius);
  if (spec.noise > 0.0) {
    for (double& v : intensity) v *= 1.0 + spec.noise * rng.normal();
  }

  GeneratedSample out;
  out.id = sample_id(index);
  out.image = io::Image(n, n, spec.channels);
  out.mask = io::Image(n, n, 1);
  for (std::size_t i = 0; i < n * n; ++i) {
    for (std::size_t c = 0; c < spec.channels; ++c) out.image.pixels[i * spec.channels + c] = quantize(intensity[i] * tint[c]);
    out.mask.pixels[i] = inside[i] ? 255 : 0;
  }
  return out;
}

void gen_data(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  const std::string ext = spec.channels == 1 ? ".pgm" : ".ppm";
  nlohmann::ordered_json manifest;
  manifest["format"] = "xvmunet-dataset";
  manifest["version"] = 1;
  manifest["resolution"] = spec.resolution;
  manifest["channels"] = spec.channels;
  manifest["seed"] = spec.seed;
  auto& samples = manifest["samples"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < spec.count; ++i) {
    const GeneratedSample s = generate_sample(spec, i);
    const std::string image_name = s.id + ext, mask_name = s.id + "_mask.pgm";
    io::write_pnm(out_dir / image_name, s.image);
    io::write_pnm(out_dir / mask_name, s.mask);
    samples.push_back({{"id", s.id}, {"image", image_name}, {"mask", mask_name}});
  }
  io::write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace xvmunet::data
