#include "xvmunet/pnm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "xvmunet/errors.hpp"

namespace xvmunet::io {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > 1u << 24) throw DataError(std::string("PNM header: ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw DataError(std::string("PNM header: missing ") + what);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw DataError("PNM header: expected whitespace before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Image::Image(std::size_t w, std::size_t h, std::size_t c) : width(w), height(h), channels(c), pixels(w * h * c, 0) {}

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DataError("PNM: unsupported channel count " + std::to_string(image.channels));
  }
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * image.channels) {
    throw DataError("PNM: pixel buffer does not match " + std::to_string(image.width) + "x" +
                    std::to_string(image.height) + "x" + std::to_string(image.channels));
  }
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

Image decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DataError("PNM: not a binary P5/P6 file");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader header(bytes);
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) throw DataError("PNM: zero extent");
  if (maxval != 255) throw DataError("PNM: maxval " + std::to_string(maxval) + " unsupported (need 255)");
  const std::size_t start = header.raster_start();
  const std::size_t expected = width * height * channels;
  if (bytes.size() - start != expected) {
    throw DataError("PNM: raster has " + std::to_string(bytes.size() - start) + " bytes, expected " +
                    std::to_string(expected));
  }
  Image image(width, height, channels);
  for (std::size_t i = 0; i < expected; ++i) image.pixels[i] = static_cast<std::uint8_t>(bytes[start + i]);
  return image;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_pnm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_pnm(image)); }

Image read_pnm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_pnm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace xvmunet::io
