#include "semafo/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace semafo {

namespace {

constexpr char kMagic[5] = {'S', 'M', 'F', 'O', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& s;
  size_t pos = 0;
  void need(size_t n, const char* what) {
    if (pos + n > s.size()) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string out = s.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace

const Array* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : tensors)
    if (n == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  static_assert(sizeof(double) == 8);
  std::string buf;
  buf.append(kMagic, 5);
  put_u32(buf, kVersion);
  put_u64(buf, ckpt.config_hash);
  put_u32(buf, static_cast<uint32_t>(ckpt.config_text.size()));
  buf.append(ckpt.config_text);
  put_u32(buf, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, a] : ckpt.tensors) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<uint32_t>(a.rank()));
    for (int d = 0; d < a.rank(); ++d) put_u64(buf, static_cast<uint64_t>(a.dim(d)));
    Array a64 = a.cast(Dtype::Float64);
    size_t off = buf.size();
    buf.resize(off + static_cast<size_t>(a64.numel()) * 8);
    std::memcpy(buf.data() + off, a64.data_f64(), static_cast<size_t>(a64.numel()) * 8);
  }
  atomic_write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{s};
  std::string magic = r.bytes(5, "magic");
  if (std::memcmp(magic.data(), kMagic, 5) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path + " (not an SMFO1 container)");
  uint32_t ver = r.u32("version");
  if (ver != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(ver) + " in " + path);
  Checkpoint ckpt;
  ckpt.config_hash = r.u64("config hash");
  uint32_t clen = r.u32("config length");
  ckpt.config_text = r.bytes(clen, "config text");
  uint32_t count = r.u32("tensor count");
  for (uint32_t t = 0; t < count; ++t) {
    uint32_t nlen = r.u32("name length");
    std::string name = r.bytes(nlen, "name");
    uint32_t rank = r.u32("rank");
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(r.u64("dim")));
    Array a(shape, Dtype::Float64);
    size_t bytes = static_cast<size_t>(a.numel()) * 8;
    r.need(bytes, "payload");
    std::memcpy(a.data_f64(), s.data() + r.pos, bytes);
    r.pos += bytes;
    ckpt.tensors.emplace_back(std::move(name), std::move(a));
  }
  return ckpt;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a64_file: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(s.data(), s.size());
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write_file: cannot open " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("atomic_write_file: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("atomic_write_file: rename failed for " + path);
}

}  // namespace semafo
