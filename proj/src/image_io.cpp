#include "dan/image_io.hpp"

#include <png.h>

#include <vector>

namespace dan {

Tensor read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read image " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode image " + path.string() + ": " + msg);
  }
  const int64_t h = image.height;
  const int64_t w = image.width;
  auto hwc = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32).div(255.0).contiguous();
}

Tensor quantize_8bit(const Tensor& image) {
  return image.clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require_image(image, -1, "write_png");
  if (image.size(0) != 1 || (image.size(1) != 1 && image.size(1) != 3)) {
    throw DimensionError("write_png: expected [1, 1|3, H, W], got " + shape_string(image));
  }
  const int64_t channels = image.size(1);
  auto bytes = image.detach()
                   .to(torch::kFloat32)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .squeeze(0)
                   .permute({1, 2, 0})
                   .contiguous();
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(image.size(3));
  out.height = static_cast<png_uint_32>(image.size(2));
  out.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&out, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0, nullptr)) {
    std::string msg = out.message;
    png_image_free(&out);
    throw IoError("cannot write image " + path.string() + ": " + msg);
  }
}

}  // namespace dan
