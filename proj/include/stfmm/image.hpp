#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stfmm {

// Interleaved 8-bit RGB, row-major.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // height*width*3

  ImageU8() = default;
  ImageU8(int h, int w)
      : height(h), width(w),
        rgb(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Frames of one person under one camera, as read from disk.
struct RawSequence {
  std::vector<ImageU8> frames;
  std::string person_id;
  int camera_id = 1;
};

}  // namespace stfmm
