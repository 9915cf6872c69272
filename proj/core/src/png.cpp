#include "semafo/png.hpp"

#include <stdexcept>

#include "semafo/checkpoint.hpp"

namespace semafo {

namespace {

uint32_t crc32_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static uint32_t table[256];
  static bool init = [] {
    for (uint32_t n = 0; n < 256; ++n) table[n] = crc32_table_entry(n);
    return true;
  }();
  (void)init;
  uint32_t c = crc ^ 0xffffffffu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

uint32_t adler32(const uint8_t* data, size_t len) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.append(type, 4);
  out.append(payload);
  uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(out.data() + start), out.size() - start);
  put_be32(out, crc);
}

// zlib stream with stored-deflate blocks (max 65535 bytes each)
std::string zlib_stored(const std::vector<uint8_t>& raw) {
  std::string z;
  z.push_back(0x78);  // CMF: deflate, 32K window
  z.push_back(0x01);  // FLG: no preset dict, fastest
  size_t pos = 0;
  do {
    size_t n = std::min<size_t>(raw.size() - pos, 65535);
    bool last = pos + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<char>(n & 0xff));
    z.push_back(static_cast<char>((n >> 8) & 0xff));
    z.push_back(static_cast<char>(~n & 0xff));
    z.push_back(static_cast<char>((~n >> 8) & 0xff));
    z.append(reinterpret_cast<const char*>(raw.data() + pos), n);
    pos += n;
  } while (pos < raw.size());
  put_be32(z, adler32(raw.data(), raw.size()));
  return z;
}

void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int width, int height, int channels) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("write_png: bad dimensions");
  if (pixels.size() != static_cast<size_t>(width) * height * channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  // raw scanlines, each prefixed with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (static_cast<size_t>(width) * channels + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const uint8_t* row = pixels.data() + static_cast<size_t>(y) * width * channels;
    raw.insert(raw.end(), row, row + static_cast<size_t>(width) * channels);
  }
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                              // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);          // color type: gray / rgb
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib_stored(raw));
  append_chunk(out, "IEND", "");
  atomic_write_file(path, out);
}

}  // namespace

void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels, int width, int height) {
  write_png(path, pixels, width, height, 1);
}

void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& pixels, int width, int height) {
  write_png(path, pixels, width, height, 3);
}

std::vector<uint8_t> tile_grid_gray8(const std::vector<std::vector<uint8_t>>& images, int w, int h, int cols,
                                     int* out_w, int* out_h) {
  int n = static_cast<int>(images.size());
  if (n == 0 || cols < 1) throw std::invalid_argument("tile_grid_gray8: nothing to tile");
  int rows = (n + cols - 1) / cols;
  int W = cols * w + (cols - 1);
  int H = rows * h + (rows - 1);
  std::vector<uint8_t> grid(static_cast<size_t>(W) * H, 0);
  for (int i = 0; i < n; ++i) {
    if (images[static_cast<size_t>(i)].size() != static_cast<size_t>(w) * h)
      throw std::invalid_argument("tile_grid_gray8: image " + std::to_string(i) + " has wrong size");
    int r = i / cols, c = i % cols;
    int ox = c * (w + 1), oy = r * (h + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        grid[static_cast<size_t>(oy + y) * W + ox + x] = images[static_cast<size_t>(i)][static_cast<size_t>(y) * w + x];
  }
  *out_w = W;
  *out_h = H;
  return grid;
}

}  // namespace semafo
