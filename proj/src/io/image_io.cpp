#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "robarch/image_io.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError(path.string() + ": cannot open");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError(path.string() + ": libpng initialisation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  Tensor out(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = rows[y][3 * x + c] / 255.0;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  Tensor img = image;
  if (img.rank() == 2) img = img.reshaped({1, img.dim(0), img.dim(1)});
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw ShapeError("write_png: expected (H, W), (1, H, W) or (3, H, W), got " + shape_string(image.shape()));
  }
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError(path.string() + ": libpng initialisation failed");
  }
  std::vector<png_byte> pixels(c * w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(img[(ch * h + y) * w + x], 0.0, 1.0);
        pixels[(y * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * c;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG encoding failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected (C, H, W)");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(Shape{c, height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = image.data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bot = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        out[(ch * height + y) * width + x] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

Tensor center_crop(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || image.dim(1) < height || image.dim(2) < width) {
    throw ShapeError("center_crop: image smaller than the crop");
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t top = (h - height) / 2, left = (w - width) / 2;
  Tensor out(Shape{c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      std::copy_n(image.data() + (ch * h + top + y) * w + left, width, out.data() + (ch * height + y) * width);
    }
  }
  return out;
}

Tensor resize_and_crop(const Tensor& image, std::size_t height, std::size_t width) {
  const double h = static_cast<double>(image.dim(1)), w = static_cast<double>(image.dim(2));
  const double s = std::max(static_cast<double>(height) / h, static_cast<double>(width) / w);
  const auto rh = std::max(height, static_cast<std::size_t>(std::lround(h * s)));
  const auto rw = std::max(width, static_cast<std::size_t>(std::lround(w * s)));
  return center_crop(resize_bilinear(image, rh, rw), height, width);
}

Tensor upsample_nearest(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw ShapeError("upsample_nearest: expected (H, W)");
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor out(Shape{height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) out[y * width + x] = map[(y * h / height) * w + x * w / width];
  }
  return out;
}

Tensor gray_to_rgb(const Tensor& map) {
  const Tensor m = map.rank() == 3 ? map.reshaped({map.dim(1), map.dim(2)}) : map;
  const std::size_t plane = m.size();
  Tensor out(Shape{3, m.dim(0), m.dim(1)});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(m.data(), plane, out.data() + c * plane);
  return out;
}

Tensor hstack_images(const std::vector<Tensor>& images, std::size_t gap) {
  if (images.empty()) throw ShapeError("hstack_images: no images");
  const std::size_t h = images.front().dim(1);
  std::size_t total = 0;
  for (const auto& im : images) {
    if (im.rank() != 3 || im.dim(0) != 3 || im.dim(1) != h) throw ShapeError("hstack_images: mismatched images");
    total += im.dim(2);
  }
  total += gap * (images.size() - 1);
  Tensor out(Shape{3, h, total}, 1.0);
  std::size_t left = 0;
  for (const auto& im : images) {
    const std::size_t w = im.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) std::copy_n(im.data() + (c * h + y) * w, w, out.data() + (c * h + y) * total + left);
    }
    left += w + gap;
  }
  return out;
}

}  // namespace robarch
