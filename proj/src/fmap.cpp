#include "cellseg/fmap.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace cellseg {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void magic(const char* m) { bytes(m, 4); }
  void tensor(std::uint32_t d0, std::uint32_t c, std::uint32_t h, std::uint32_t w, const Tensor4& t) {
    u32(d0);
    u32(c);
    u32(h);
    u32(w);
    bytes(t.data(), t.size() * sizeof(float));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, in_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  void magic(const char* expect) {
    need(4, "magic");
    if (std::memcmp(in_.data(), expect, 4) != 0) throw FormatError(std::string("bad magic, expected ") + expect, 0);
    pos_ = 4;
  }
  std::string name() {
    const std::size_t at = pos_;
    const std::uint32_t len = u32("name length");
    if (len == 0 || len > 4096) throw FormatError("implausible record name length " + std::to_string(len), at);
    need(len, "record name");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  // Reads d0,c,h,w and the payload; d0 multiplies the element count when
  // `outer` is set, otherwise it is returned as a tag with batch 1.
  std::pair<std::uint32_t, Tensor4> tensor(bool outer) {
    const std::size_t at = pos_;
    const std::uint32_t d0 = u32("record header");
    const std::uint32_t c = u32("record header");
    const std::uint32_t h = u32("record header");
    const std::uint32_t w = u32("record header");
    const std::size_t n = outer ? d0 : 1;
    if (n == 0 || c == 0 || h == 0 || w == 0) throw FormatError("zero-sized record dimension", at);
    const long double elems = static_cast<long double>(n) * c * h * w;
    if (elems * sizeof(float) > static_cast<long double>(remaining())) {
      throw FormatError("truncated record payload", pos_);
    }
    Tensor4 t(Shape{n, c, h, w});
    std::memcpy(t.data(), in_.data() + pos_, t.size() * sizeof(float));
    pos_ += t.size() * sizeof(float);
    return {d0, std::move(t)};
  }
  void header(const char* expect_magic) {
    magic(expect_magic);
    const std::uint32_t v = u32("version");
    if (v != kVersion) throw FormatError("unsupported version " + std::to_string(v), 4);
  }
  void finish() const {
    if (remaining() != 0) throw FormatError("trailing bytes after last record", pos_);
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t dim32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("dimension exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

void put_level(Writer& w, std::uint32_t tag, const Tensor4& t) {
  if (t.shape().n != 1) throw ShapeError("map record must have batch 1, got " + t.shape().str());
  const auto& s = t.shape();
  w.tensor(tag, dim32(s.c), dim32(s.h), dim32(s.w), t);
}

}  // namespace

std::vector<std::uint8_t> encode_fmap(std::span<const FeatureLevel> levels) {
  if (levels.size() != 4) throw ShapeError("a feature dump holds exactly 4 levels, got " + std::to_string(levels.size()));
  Writer w;
  w.magic("FMAP");
  w.u32(kVersion);
  w.u32(4);
  for (const auto& l : levels) put_level(w, l.source_block, l.tensor);
  return w.take();
}

std::vector<FeatureLevel> decode_fmap(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header("FMAP");
  const std::uint32_t n = r.u32("level count");
  if (n != 4) throw FormatError("expected 4 levels, found " + std::to_string(n), 8);
  std::vector<FeatureLevel> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [tag, t] = r.tensor(false);
    out.push_back({tag, std::move(t)});
  }
  r.finish();
  return out;
}

void write_fmap(const std::filesystem::path& path, std::span<const FeatureLevel> levels) {
  write_file_atomic(path, encode_fmap(levels));
}

std::vector<FeatureLevel> read_fmap(const std::filesystem::path& path) { return decode_fmap(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_pmap(const PredictedMaps& maps) {
  Writer w;
  w.magic("PMAP");
  w.u32(kVersion);
  w.u32(3);
  for (const Tensor4* t : {&maps.sm1, &maps.sm2, &maps.dm}) put_level(w, 0, *t);
  return w.take();
}

PredictedMaps decode_pmap(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header("PMAP");
  const std::uint32_t n = r.u32("map count");
  if (n != 3) throw FormatError("expected 3 maps, found " + std::to_string(n), 8);
  PredictedMaps m;
  m.sm1 = r.tensor(false).second;
  m.sm2 = r.tensor(false).second;
  m.dm = r.tensor(false).second;
  r.finish();
  const auto& s = m.sm1.shape();
  for (const Tensor4* t : {&m.sm2, &m.dm}) {
    if (t->shape().h != s.h || t->shape().w != s.w) throw FormatError("maps disagree on spatial size", 12);
  }
  return m;
}

void write_pmap(const std::filesystem::path& path, const PredictedMaps& maps) {
  write_file_atomic(path, encode_pmap(maps));
}

PredictedMaps read_pmap(const std::filesystem::path& path) { return decode_pmap(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  Writer w;
  w.magic("FMCK");
  w.u32(kVersion);
  w.u32(dim32(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(dim32(name.size()));
    w.bytes(name.data(), name.size());
    const auto& s = t.shape();
    w.tensor(dim32(s.n), dim32(s.c), dim32(s.h), dim32(s.w), t);
  }
  return w.take();
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header("FMCK");
  const std::uint32_t n = r.u32("record count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.name();
    out.emplace_back(std::move(name), r.tensor(true).second);
  }
  r.finish();
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

NamedTensors read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cellseg
