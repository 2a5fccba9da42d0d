#pragma once

#include <filesystem>

#include "stfmm/image.hpp"

namespace stfmm {

ImageU8 load_image_rgb(const std::filesystem::path& path);
void save_image_rgb(const std::filesystem::path& path, const ImageU8& img);

}  // namespace stfmm
