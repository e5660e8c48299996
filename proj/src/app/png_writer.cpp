#include "posefuse/app/png_writer.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "posefuse/error.hpp"

namespace posefuse::app {

void write_png_rgb(const std::filesystem::path& file, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (width < 1 || height < 1 || rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw InvalidArgument("PNG buffer does not match its dimensions");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(file.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + file.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + file.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png(const std::filesystem::path& file, const RgbImage& image, int scale) {
  if (scale < 1) throw InvalidArgument("PNG scale must be >= 1");
  const int w = image.width * scale;
  const int h = image.height * scale;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(image.at(y / scale, x / scale, ch), 0.0, 1.0);
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  write_png_rgb(file, w, h, rgb);
}

}  // namespace posefuse::app
