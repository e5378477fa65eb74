#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mgn/config.hpp"
#include "mgn/image.hpp"
#include "mgn/model.hpp"

namespace mgn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path + "'");
}

class PpmParser {
 public:
  explicit PpmParser(const std::string& b) : b_(b) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("ppm: " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      const char c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(static_cast<unsigned char>(b_[pos_])))
      fail(std::string("expected ") + what);
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 20)) fail(std::string(what) + " too large");
      ++pos_;
    }
    return v;
  }

  Image parse() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '6') fail("bad magic (expected P6)");
    pos_ = 2;
    const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
    if (w == 0 || h == 0) fail("zero image extent");
    if (maxval != 255) fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) fail("expected whitespace after maxval");
    ++pos_;
    const std::size_t need = 3 * w * h;
    if (b_.size() - pos_ < need) {
      pos_ = b_.size();
      fail("truncated pixel data (" + std::to_string(need) + " bytes expected)");
    }
    std::vector<float> v(need);
    const std::size_t plane = w * h;
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        v[c * plane + i] = static_cast<float>(static_cast<unsigned char>(b_[pos_ + 3 * i + c]) / 255.0);
    return Tensor::from({3, h, w}, std::move(v));
  }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Image decode_ppm(const std::string& bytes) { return detail::PpmParser(bytes).parse(); }

inline std::uint8_t quantize_255(float v) {
  const double s = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(s));
}

/// Header "P6\n<w> <h>\n255\n" then interleaved RGB bytes.
inline std::string encode_ppm(const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("encode_ppm: expected [3,H,W], got " + shape_str(img.shape()));
  const std::size_t h = img.dim(1), w = img.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * plane);
  const auto v = img.data();
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[header + 3 * i + c] = static_cast<char>(quantize_255(v[c * plane + i]));
  return out;
}

inline Image read_ppm(const std::string& path) {
  try {
    return decode_ppm(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_ppm(const std::string& path, const Image& img) { detail::write_file(path, encode_ppm(img)); }

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'M', 'G', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::string config_blob;
  Model<float> model;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  bool has(std::size_t n) const { return b_.size() - pos_ >= n; }
  void need(std::size_t n, const std::string& what) const {
    if (!has(n)) throw FormatError("checkpoint truncated while reading " + what + " at byte offset " + std::to_string(pos_));
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Model<float>& m, const RunConfig& cfg) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  RunConfig stored = cfg;
  stored.model = m.config;
  const std::string blob = config_to_json(stored).dump();
  w.u64(blob.size());
  w.raw(blob.data(), blob.size());
  w.u32(static_cast<std::uint32_t>(m.params.size()));
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& name = m.params.names()[i];
    const auto& t = m.params.tensors()[i];
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (float v : t.data()) w.f32(v);
  }
  return w.bytes();
}

/// Rebuilds the model described by the stored config and overwrites every
/// tensor; the file must hold exactly that parameter set.
inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(8, "magic") != std::string(kCheckpointMagic, 8)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto blob_len = r.u64("config length");
  if (blob_len > r.remaining()) throw FormatError("checkpoint truncated inside the config blob");
  Checkpoint ck;
  ck.config_blob = r.str(static_cast<std::size_t>(blob_len), "config");
  ck.config = parse_config(ck.config_blob);
  ck.model = build_model(ck.config.model, Rng(0));

  const auto count = r.u32("tensor count");
  if (count != ck.model.params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, the config implies " +
                      std::to_string(ck.model.params.size()));
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = r.u32(where + " name length");
    const std::string name = r.str(name_len, where + " name");
    if (!ck.model.params.contains(name)) throw FormatError("checkpoint tensor '" + name + "' is not part of the model");
    if (!seen.insert(name).second) throw FormatError("checkpoint tensor '" + name + "' appears twice");
    auto& t = ck.model.params.get(name);
    const auto rank = r.u32("rank of '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64("extents of '" + name + "'")));
    if (shape != t.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " + shape_str(t.shape()));
    r.need(4 * t.numel(), "values of '" + name + "'");
    auto data = t.mutable_data();
    for (auto& v : data) v = std::bit_cast<float>(r.u32(name));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the tensor table");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model<float>& m, const RunConfig& cfg) {
  detail::write_file(path, encode_checkpoint(m, cfg));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace mgn
