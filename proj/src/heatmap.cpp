/*
 * Copyright 2026 The stackad Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "stackad/heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stackad/error.hpp"

namespace stackad {

GrayImage quantize(const std::vector<double>& values, int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("quantize: value count does not match shape");
  }
  GrayImage img{height, width, std::vector<std::uint8_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericError("quantize: non-finite map value");
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(values[i], 0.0, 1.0)));
  }
  return img;
}

void write_png(const GrayImage& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    throw ValidationError("png write failed for '" + path.string() + "': " + png.message);
  }
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.string().c_str()) == 0) {
    throw MissingInputError("cannot read png '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  GrayImage img{static_cast<int>(png.height), static_cast<int>(png.width), {}};
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr) == 0) {
    png_image_free(&png);
    throw CodecError("png decode failed for '" + path.string() + "': " + png.message);
  }
  return img;
}

}  // namespace stackad
