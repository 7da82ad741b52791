#include "stcflow/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

namespace stcflow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float v) {
  return uint8_t(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
}

Tensor<float> read_png_file(std::FILE* f, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_image: png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_image: png init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_image: malformed PNG " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  std::vector<uint8_t> row(size_t(w) * 3);
  Tensor<float> img(3, h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img(c, y, x) = row[size_t(x) * 3 + c] / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Tensor<float> read_pnm_file(std::FILE* f, const std::string& path) {
  auto next_token = [&]() -> long {
    int ch;
    // skip whitespace and '#' comments
    while ((ch = std::fgetc(f)) != EOF) {
      if (ch == '#') {
        while ((ch = std::fgetc(f)) != EOF && ch != '\n') {
        }
      } else if (!std::isspace(ch)) {
        break;
      }
    }
    if (ch == EOF) throw std::runtime_error("read_image: truncated PNM header in " + path);
    long v = 0;
    while (ch != EOF && std::isdigit(ch)) {
      v = v * 10 + (ch - '0');
      ch = std::fgetc(f);
    }
    return v;
  };
  char magic[3] = {0, 0, 0};
  if (std::fread(magic, 1, 2, f) != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw std::runtime_error("read_image: unsupported PNM type in " + path);
  const bool color = magic[1] == '6';
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("read_image: unsupported PNM header in " + path);
  const size_t n = size_t(w) * h * (color ? 3 : 1);
  std::vector<uint8_t> buf(n);
  if (std::fread(buf.data(), 1, n, f) != n)
    throw std::runtime_error("read_image: truncated PNM payload in " + path);
  Tensor<float> img(3, int(h), int(w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const uint8_t v = color ? buf[(size_t(y) * w + x) * 3 + c] : buf[size_t(y) * w + x];
        img(c, y, x) = float(v) / float(maxval);
      }
  return img;
}

}  // namespace

Tensor<float> read_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_image: cannot open " + path);
  uint8_t sig[8] = {};
  const size_t got = std::fread(sig, 1, 8, f.get());
  std::rewind(f.get());
  if (got >= 8 && !png_sig_cmp(sig, 0, 8)) return read_png_file(f.get(), path);
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6'))
    return read_pnm_file(f.get(), path);
  throw std::runtime_error("read_image: unsupported format (expect PNG or binary PNM): " + path);
}

void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.channels() != 3 && img.channels() != 1)
    throw std::invalid_argument("write_png: expects [3,H,W] or [1,H,W]");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: png init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: write failed for " + path);
  }
  png_init_io(png, f.get());
  const int w = img.width(), h = img.height();
  const int color = img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(w) * img.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c)
        row[size_t(x) * img.channels() + c] = to_byte(img(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const std::string& path, const Tensor<float>& img) {
  if (img.channels() != 3) throw std::invalid_argument("write_ppm: expects [3,H,W]");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width(), img.height());
  std::vector<uint8_t> row(size_t(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) row[size_t(x) * 3 + c] = to_byte(img(c, y, x));
    if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
      throw std::runtime_error("write_ppm: write failed for " + path);
  }
}

}  // namespace stcflow
