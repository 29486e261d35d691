#include "cellseg/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <json.hpp>
#include <memory>
#include <string>

#include "cellseg/fmap.hpp"

namespace cellseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.c_str(), mode));
  if (!f) throw IoError("cannot open " + p.string());
  return f;
}

// Raw decoded pixels; channels is 1 (gray) or 3 (RGB), bit depth 8 or 16.
struct Decoded {
  std::size_t height = 0, width = 0, channels = 0, depth = 0;
  std::vector<std::uint8_t> bytes;
};

// libpng reports errors by longjmp, so nothing with a destructor may be
// created between setjmp and the last png_* call in these two functions.
bool decode_png(std::FILE* f, bool want_rgb, Decoded& out, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    err = "corrupt or unsupported PNG";
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (want_rgb) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  } else {
    if (color != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      err = "label PNG must be single-channel grayscale";
      return false;
    }
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_swap(png);
  }
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(std::FILE* f, const Decoded& in, std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(in.height);
  const std::size_t stride = in.width * in.channels * (in.depth / 8);
  for (std::size_t y = 0; y < in.height; ++y) rows[y] = const_cast<std::uint8_t*>(in.bytes.data()) + y * stride;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    err = "PNG encoding failed";
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(in.width), static_cast<png_uint_32>(in.height),
               static_cast<int>(in.depth), in.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (in.depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

Decoded read_png(const std::filesystem::path& path, bool want_rgb) {
  auto f = open_file(path, "rb");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("not a PNG file: " + path.string(), 0);
  }
  std::rewind(f.get());
  Decoded d;
  std::string err;
  if (!decode_png(f.get(), want_rgb, d, err)) throw FormatError(err + ": " + path.string(), 0);
  return d;
}

void write_png(const std::filesystem::path& path, const Decoded& d) {
  auto tmp = path;
  tmp += ".tmp";
  {
    auto f = open_file(tmp, "wb");
    std::string err;
    if (!encode_png(f.get(), d, err)) throw IoError(err + ": " + path.string());
    if (std::fflush(f.get()) != 0) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

RgbImage read_rgb_png(const std::filesystem::path& path) {
  Decoded d = read_png(path, true);
  RgbImage img(d.height, d.width);
  img.data = std::move(d.bytes);
  return img;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.data.size() != image.height * image.width * 3) throw ShapeError("RGB buffer size mismatch");
  write_png(path, Decoded{image.height, image.width, 3, 8, image.data});
}

std::filesystem::path types_sidecar_path(const std::filesystem::path& label_png) {
  auto p = label_png;
  p.replace_extension(".types.json");
  return p;
}

InstanceLabelMap read_label_map(const std::filesystem::path& label_png) {
  Decoded d = read_png(label_png, false);
  InstanceLabelMap m(d.height, d.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    if (d.depth == 16) {
      m.labels[i] = static_cast<std::uint32_t>(d.bytes[2 * i]) | (static_cast<std::uint32_t>(d.bytes[2 * i + 1]) << 8);
    } else {
      m.labels[i] = d.bytes[i];
    }
  }
  const auto side = types_sidecar_path(label_png);
  const auto bytes = read_file_bytes(side);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed type table " + side.string() + ": " + e.what(), e.byte);
  }
  if (!j.is_object()) throw FormatError("type table must be a JSON object: " + side.string(), 0);
  for (const auto& [key, value] : j.items()) {
    std::size_t used = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || id == 0 || !value.is_number_unsigned()) {
      throw FormatError("bad type entry \"" + key + "\" in " + side.string(), 0);
    }
    m.types[static_cast<std::uint32_t>(id)] = value.get<std::uint32_t>();
  }
  m.check_typed();
  return m;
}

void write_label_map(const std::filesystem::path& label_png, const InstanceLabelMap& map) {
  if (map.max_label() > 0xFFFF) throw DataError("more than 65535 instances cannot be stored in a 16-bit PNG");
  Decoded d{map.height, map.width, 1, 16, std::vector<std::uint8_t>(map.size() * 2)};
  for (std::size_t i = 0; i < map.size(); ++i) {
    d.bytes[2 * i] = static_cast<std::uint8_t>(map.labels[i] & 0xFF);
    d.bytes[2 * i + 1] = static_cast<std::uint8_t>(map.labels[i] >> 8);
  }
  write_png(label_png, d);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, type] : map.types) j[std::to_string(id)] = type;
  write_file_atomic(types_sidecar_path(label_png), j.dump() + "\n");
}

Tensor4 image_to_tensor(const RgbImage& image) {
  Tensor4 t(Shape{1, 3, image.height, image.width});
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = t.plane(0, c);
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) p[y * image.width + x] = image.at(y, x, c) / 255.0f;
    }
  }
  return t;
}

}  // namespace cellseg
