#include "pwtp/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace pwtp::io {

namespace {

constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  void raw(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  Reader(const Bytes& bytes, const char* what) : bytes_(bytes), what_(what) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(std::string(what_) + ": truncated file");
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[pos_++] << (8 * i));
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const Bytes& bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const Tensor& t) {
  if (t.rank() > 255) throw Error("tensor container: rank above 255");
  if (!t.all_finite()) throw Error("tensor container: refusing to write non-finite values");
  w.raw("PWTT", 4);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw Error("tensor container: dimension exceeds u32");
    w.u32(static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) w.f32(v);
}

Tensor get_tensor(Reader& r) {
  if (r.raw(4) != "PWTT") throw Error("tensor container: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kVersion) throw Error("tensor container: unknown version " + std::to_string(version));
  const std::size_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_size(shape);
  r.need(4 * n);
  std::vector<double> data(n);
  for (auto& v : data) v = r.f32();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Bytes encode_tensor(const Tensor& t) {
  Writer w;
  put_tensor(w, t);
  return w.take();
}

Tensor decode_tensor(const Bytes& bytes) {
  Reader r(bytes, "tensor container");
  Tensor t = get_tensor(r);
  if (!r.done()) throw Error("tensor container: trailing bytes after payload");
  return t;
}

Bytes encode_checkpoint(const ParamSet& params) {
  Writer w;
  w.raw("PWTC", 4);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw Error("checkpoint: tensor name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    put_tensor(w, t);
  }
  return w.take();
}

ParamSet decode_checkpoint(const Bytes& bytes) {
  Reader r(bytes, "checkpoint");
  if (r.raw(4) != "PWTC") throw Error("checkpoint: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kVersion) throw Error("checkpoint: unknown version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.raw(r.u16());
    if (params.contains(name)) throw Error("checkpoint: duplicate tensor name '" + name + "'");
    params.insert(name, get_tensor(r));
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes after last tensor");
  return params;
}

Bytes encode_ppm(const Image& image) {
  if (image.pixels.size() != image.height * image.width * 3) throw Error("ppm: pixel buffer size mismatch");
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image decode_ppm(const Bytes& bytes) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw Error("ppm: malformed header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw Error("ppm: header value out of range");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw Error("ppm: not a binary P6 image");
  pos = 2;
  Image img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw Error("ppm: unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error("ppm: malformed header");
  ++pos;
  const std::size_t n = img.width * img.height * 3;
  if (bytes.size() - pos < n) throw Error("ppm: truncated pixel data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

Image to_image(const Tensor& frame, double offset, double gain) {
  if (frame.rank() != 3 || frame.dim(2) != 3) throw Error("image export: expected H x W x 3");
  if (!frame.all_finite()) throw Error("image export: non-finite values");
  Image img{frame.dim(0), frame.dim(1), std::vector<std::uint8_t>(frame.size())};
  for (std::size_t i = 0; i < frame.size(); ++i) img.pixels[i] = to_byte(255.0 * (offset + gain * frame[i]));
  return img;
}

}  // namespace

Image quantize_frame(const Tensor& frame) { return to_image(frame, 0.0, 1.0); }

Bytes export_da(const Tensor& da) { return encode_ppm(to_image(da, 0.5, 0.5)); }

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }
Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }
void write_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  write_file(path, encode_checkpoint(params));
}
ParamSet read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

namespace {

std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.ppm", index);
  return buf;
}

}  // namespace

void write_frames(const std::filesystem::path& dir, const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(3) != 3) throw Error("write_frames: expected T x H x W x 3");
  std::filesystem::create_directories(dir);
  const std::size_t plane = frames.dim(1) * frames.dim(2) * 3;
  for (std::size_t t = 0; t < frames.dim(0); ++t) {
    Tensor f(Shape{frames.dim(1), frames.dim(2), 3},
             std::vector<double>(frames.ptr() + t * plane, frames.ptr() + (t + 1) * plane));
    write_file(dir / frame_name(t + 1), encode_ppm(quantize_frame(f)));
  }
}

Tensor read_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("frame directory '" + dir.string() + "' does not exist");
  std::size_t highest = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    unsigned long idx = 0;
    char tail[8] = {};
    if (name.size() == 15 && std::sscanf(name.c_str(), "frame_%5lu.%3s", &idx, tail) == 2 &&
        std::string(tail) == "ppm") {
      highest = std::max<std::size_t>(highest, idx);
    }
  }
  if (highest == 0) throw Error("no frame_%05d.ppm files in '" + dir.string() + "'");
  std::vector<double> data;
  std::size_t h = 0, w = 0;
  for (std::size_t i = 1; i <= highest; ++i) {
    const auto path = dir / frame_name(i);
    if (!std::filesystem::exists(path)) throw Error("missing frame index " + std::to_string(i));
    Image img;
    try {
      img = decode_ppm(read_file(path));
    } catch (const Error& e) {
      throw Error(path.filename().string() + ": " + e.what());
    }
    if (i == 1) {
      h = img.height;
      w = img.width;
    } else if (img.height != h || img.width != w) {
      throw Error("inconsistent frame size: " + path.filename().string() + " is " + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + ", expected " + std::to_string(w) + "x" + std::to_string(h));
    }
    for (auto p : img.pixels) data.push_back(static_cast<double>(p) / 255.0);
  }
  return Tensor(Shape{highest, h, w, 3}, std::move(data));
}

}  // namespace pwtp::io
