#include "xvmunet/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "xvmunet/errors.hpp"
#include "xvmunet/pnm.hpp"

namespace xvmunet::io {

namespace {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
}

void put_u32(std::string& out, std::size_t value, const char* what) {
  if (value > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError(std::string("checkpoint: ") + what + " does not fit in 32 bits");
  }
  put_le(out, static_cast<std::uint32_t>(value));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      value |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b));
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::string& config_text, const ParamStore& weights) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le(out, kCheckpointVersion);
  put_u32(out, config_text.size(), "config block");
  out += config_text;
  put_u32(out, weights.size(), "tensor count");
  for (const auto& [name, t] : weights) {
    put_u32(out, name.size(), "tensor name");
    out += name;
    put_u32(out, t.rank(), "rank");
    for (auto e : t.shape()) put_u32(out, e, "extent");
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw NumericalError("checkpoint: tensor '" + name + "' has a non-finite value");
      put_le(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) throw DataError("checkpoint: bad magic bytes");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: version mismatch (file " + std::to_string(version) + ", supported " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config_text = std::string(r.take(r.get<std::uint32_t>("config length"), "config block"));
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(r.take(r.get<std::uint32_t>("name length"), "tensor name"));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw DataError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.get<std::uint32_t>("extent");
      if (e == 0) throw DataError("checkpoint: tensor '" + name + "' has a zero extent");
      n *= e;
      if (n > bytes.size()) throw DataError("checkpoint truncated in tensor '" + name + "'");
    }
    std::vector<double> data(n);
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("tensor values")));
    try {
      ck.weights.set(name, Tensor::from_external(std::move(shape), std::move(data)));
    } catch (const DataError& e) {
      throw DataError("checkpoint: tensor '" + name + "': " + e.what());
    }
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes after tensor table");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamStore& weights) {
  write_file(path, encode_checkpoint(config_text, weights));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

ParamStore round_to_f32(const ParamStore& weights) {
  ParamStore out;
  for (const auto& [name, t] : weights) {
    Tensor r = t;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(static_cast<float>(r[i]));
    out.set(name, std::move(r));
  }
  return out;
}

}  // namespace xvmunet::io
