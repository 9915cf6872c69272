#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semafo {

// Minimal PNG emitter: 8-bit grayscale or RGB, stored (uncompressed) deflate
// blocks inside a valid zlib stream. Files are written atomically.
void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels, int width, int height);
void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& pixels, int width, int height);

// Tiles n row-major gray images of size (w, h) into a grid with `cols`
// columns and a 1px separator.
std::vector<uint8_t> tile_grid_gray8(const std::vector<std::vector<uint8_t>>& images, int w, int h, int cols,
                                     int* out_w, int* out_h);

}  // namespace semafo
