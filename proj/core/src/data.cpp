#include "semafo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "semafo/checkpoint.hpp"

namespace semafo {

int FactorSchema::d_y() const {
  int t = 0;
  for (const Factor& f : factors) t += f.cardinality;
  return t;
}

std::vector<int> FactorSchema::cardinalities() const {
  std::vector<int> c;
  c.reserve(factors.size());
  for (const Factor& f : factors) c.push_back(f.cardinality);
  return c;
}

int FactorSchema::index_of(const std::string& name) const {
  for (size_t i = 0; i < factors.size(); ++i)
    if (factors[i].name == name) return static_cast<int>(i);
  return -1;
}

FactorSchema FactorSchema::mnist() { return {{{"label", 10}}}; }

FactorSchema FactorSchema::synthetic_shapes() {
  return {{{"shape", 3}, {"scale", 4}, {"x-pos", 4}, {"y-pos", 4}, {"rotation", 4}}};
}

Array Dataset::image_batch(const std::vector<int64_t>& idx, Dtype dt) const {
  int p = pixels();
  Array out({static_cast<int64_t>(idx.size()), p}, dt);
  for (size_t r = 0; r < idx.size(); ++r) {
    const uint8_t* src = images.data() + idx[r] * p;
    for (int j = 0; j < p; ++j) out.set(static_cast<int64_t>(r) * p + j, src[j] / 255.0);
  }
  return out;
}

Array Dataset::image_batch_binarized(const std::vector<int64_t>& idx, Dtype dt, CounterRng& rng) const {
  int p = pixels();
  Array out({static_cast<int64_t>(idx.size()), p}, dt);
  for (size_t r = 0; r < idx.size(); ++r) {
    const uint8_t* src = images.data() + idx[r] * p;
    for (int j = 0; j < p; ++j)
      out.set(static_cast<int64_t>(r) * p + j, rng.uniform() < src[j] / 255.0 ? 1.0 : 0.0);
  }
  return out;
}

Array Dataset::onehot_batch(const std::vector<int64_t>& idx, Dtype dt) const {
  if (!has_labels) throw std::runtime_error("onehot_batch: dataset carries no labels");
  int nf = schema.n_factors();
  int dy = schema.d_y();
  Array out({static_cast<int64_t>(idx.size()), dy}, dt);
  for (size_t r = 0; r < idx.size(); ++r) {
    int off = 0;
    for (int f = 0; f < nf; ++f) {
      int32_t v = factor_values[idx[r] * nf + f];
      out.set(static_cast<int64_t>(r) * dy + off + v, 1.0);
      off += schema.factors[static_cast<size_t>(f)].cardinality;
    }
  }
  return out;
}

int32_t Dataset::factor_value(int64_t i, int f) const {
  return factor_values[i * schema.n_factors() + f];
}

int Dataset::class_key(int64_t i) const {
  int key = 0;
  for (int f = 0; f < schema.n_factors(); ++f)
    key = key * schema.factors[static_cast<size_t>(f)].cardinality + factor_value(i, f);
  return key;
}

Dataset Dataset::subset(const std::vector<int64_t>& indices) const {
  Dataset out;
  out.width = width;
  out.height = height;
  out.has_labels = has_labels;
  out.schema = schema;
  out.split = split;
  int p = pixels();
  int nf = schema.n_factors();
  out.images.resize(indices.size() * static_cast<size_t>(p));
  if (has_labels) out.factor_values.resize(indices.size() * static_cast<size_t>(nf));
  for (size_t r = 0; r < indices.size(); ++r) {
    std::memcpy(out.images.data() + r * static_cast<size_t>(p), images.data() + indices[r] * p,
                static_cast<size_t>(p));
    if (has_labels)
      for (int f = 0; f < nf; ++f) out.factor_values[r * static_cast<size_t>(nf) + f] = factor_value(indices[r], f);
  }
  return out;
}

Dataset Dataset::without_labels() const {
  Dataset out = *this;
  out.has_labels = false;
  out.factor_values.clear();
  return out;
}

// ---- IDX ----

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: " + path + " truncated while reading " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open image file " + images_path);
  uint32_t magic = read_be32(img, images_path, "magic");
  if (magic != 0x00000803)
    throw std::runtime_error("idx: bad image magic in " + images_path + ": got 0x" +
                             [&] { char b[16]; std::snprintf(b, 16, "%08x", magic); return std::string(b); }() +
                             ", expected 0x00000803");
  uint32_t n = read_be32(img, images_path, "count");
  uint32_t rows = read_be32(img, images_path, "rows");
  uint32_t cols = read_be32(img, images_path, "cols");
  Dataset ds;
  ds.width = static_cast<int>(cols);
  ds.height = static_cast<int>(rows);
  ds.images.resize(static_cast<size_t>(n) * rows * cols);
  img.read(reinterpret_cast<char*>(ds.images.data()), static_cast<std::streamsize>(ds.images.size()));
  if (!img) throw std::runtime_error("idx: " + images_path + " truncated: expected " +
                                     std::to_string(ds.images.size()) + " pixel bytes");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open label file " + labels_path);
  uint32_t lmagic = read_be32(lab, labels_path, "magic");
  if (lmagic != 0x00000801)
    throw std::runtime_error("idx: bad label magic in " + labels_path + ": got 0x" +
                             [&] { char b[16]; std::snprintf(b, 16, "%08x", lmagic); return std::string(b); }() +
                             ", expected 0x00000801");
  uint32_t ln = read_be32(lab, labels_path, "count");
  if (ln != n)
    throw std::runtime_error("idx: count mismatch: " + std::to_string(n) + " images in " + images_path + " vs " +
                             std::to_string(ln) + " labels in " + labels_path);
  std::vector<uint8_t> raw(ln);
  lab.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!lab) throw std::runtime_error("idx: " + labels_path + " truncated");
  ds.schema = FactorSchema::mnist();
  ds.has_labels = true;
  ds.factor_values.resize(ln);
  for (uint32_t i = 0; i < ln; ++i) {
    if (raw[i] > 9) throw std::runtime_error("idx: label value " + std::to_string(raw[i]) + " out of range");
    ds.factor_values[i] = raw[i];
  }
  return ds;
}

std::string dataset_root() {
  const char* env = std::getenv("SEMAFO_DATA_ROOT");
  return env && *env ? env : "./data";
}

Dataset load_mnist_split(const std::string& root, const std::string& split) {
  std::string prefix = root + "/mnist/" + (split == "train" ? "train" : "t10k");
  std::string ipath = prefix + "-images-idx3-ubyte";
  std::string lpath = prefix + "-labels-idx1-ubyte";
  std::ifstream probe(ipath);
  if (!probe)
    throw std::runtime_error("mnist: missing " + ipath +
                             " (set SEMAFO_DATA_ROOT or run scripts/fetch_mnist.sh into <root>/mnist)");
  Dataset ds = load_mnist_idx(ipath, lpath);
  ds.split = split;
  return ds;
}

// ---- synthetic shapes: fixed-point rasterizer ----

namespace {

constexpr int kCanvas = 32;
constexpr int64_t kOne = 65536;  // 16.16 fixed point

// cos/sin of 0, 22.5, 45, 67.5 degrees in 16.16
constexpr int64_t kCos[4] = {65536, 60547, 46341, 25080};
constexpr int64_t kSin[4] = {0, 25080, 46341, 60547};

constexpr int64_t kCenters[4] = {11, 14, 17, 20};      // pixel centers
constexpr int64_t kRadii16[4] = {294912, 360448, 425984, 491520};  // 4.5, 5.5, 6.5, 7.5 px

bool inside_shape(int shape, int64_t u, int64_t v, int64_t r16) {
  switch (shape) {
    case 0: {  // square with half-side r * 181/256 (outer radius ~= r)
      int64_t h = (r16 * 181) >> 8;
      return u >= -h && u <= h && v >= -h && v <= h;
    }
    case 1: {  // ellipse, semi-axes (r, r * 184/256): rotation observable
      int64_t a8 = r16 >> 8;
      int64_t b8 = (r16 * 184) >> 16;
      int64_t p = (u >> 8) * b8;
      int64_t q = (v >> 8) * a8;
      int64_t rhs = a8 * b8;
      return p * p + q * q <= rhs * rhs;
    }
    case 2: {  // equilateral triangle, circumradius r, apex up
      // vertices at angles 90, 210, 330 degrees; cos30 = 56756/65536
      int64_t vx[3] = {0, -((r16 * 56756) >> 16), (r16 * 56756) >> 16};
      int64_t vy[3] = {r16, -(r16 >> 1), -(r16 >> 1)};
      for (int e = 0; e < 3; ++e) {
        int n = (e + 1) % 3;
        int64_t cross = ((vx[n] - vx[e]) >> 8) * ((v - vy[e]) >> 8) - ((vy[n] - vy[e]) >> 8) * ((u - vx[e]) >> 8);
        if (cross < 0) return false;  // interior is the positive side for this winding
      }
      return true;
    }
    default:
      throw std::invalid_argument("render: bad shape index " + std::to_string(shape));
  }
}

}  // namespace

std::vector<uint8_t> render_shape_image(const std::vector<int32_t>& fv) {
  if (fv.size() != 5) throw std::invalid_argument("render_shape_image: expected 5 factor values");
  int shape = fv[0];
  int64_t r16 = kRadii16[fv[1]];
  int64_t cx16 = kCenters[fv[2]] * kOne;
  int64_t cy16 = kCenters[fv[3]] * kOne;
  int rot = fv[4];
  int64_t c = kCos[rot], s = kSin[rot];
  std::vector<uint8_t> img(kCanvas * kCanvas, 0);
  for (int py = 0; py < kCanvas; ++py)
    for (int px = 0; px < kCanvas; ++px) {
      int count = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          // subsample center at px + (2*sx+1)/8 pixels
          int64_t X = (static_cast<int64_t>(px) * 8 + 2 * sx + 1) * 8192;
          int64_t Y = (static_cast<int64_t>(py) * 8 + 2 * sy + 1) * 8192;
          int64_t dx = X - cx16, dy = Y - cy16;
          int64_t u = (dx * c + dy * s) >> 16;
          int64_t v = (-dx * s + dy * c) >> 16;
          if (inside_shape(shape, u, v, r16)) ++count;
        }
      img[static_cast<size_t>(py) * kCanvas + px] = static_cast<uint8_t>(count * 255 / 16);
    }
  return img;
}

Dataset generate_synthetic_shapes(const FactorSchema& schema, uint64_t seed, int64_t sample_n) {
  Dataset ds;
  ds.width = kCanvas;
  ds.height = kCanvas;
  ds.schema = schema;
  ds.has_labels = true;
  std::vector<int> cards = schema.cardinalities();
  int nf = schema.n_factors();
  CounterRng rng(seed, rng_stream::kRender);

  std::vector<std::vector<int32_t>> tuples;
  if (sample_n == 0) {
    int64_t total = 1;
    for (int k : cards) total *= k;
    for (int64_t t = 0; t < total; ++t) {
      std::vector<int32_t> fv(static_cast<size_t>(nf));
      int64_t rem = t;
      for (int f = nf - 1; f >= 0; --f) {
        fv[static_cast<size_t>(f)] = static_cast<int32_t>(rem % cards[static_cast<size_t>(f)]);
        rem /= cards[static_cast<size_t>(f)];
      }
      tuples.push_back(std::move(fv));
    }
  } else {
    for (int64_t t = 0; t < sample_n; ++t) {
      std::vector<int32_t> fv(static_cast<size_t>(nf));
      for (int f = 0; f < nf; ++f)
        fv[static_cast<size_t>(f)] = static_cast<int32_t>(rng.below(static_cast<uint64_t>(cards[static_cast<size_t>(f)])));
      tuples.push_back(std::move(fv));
    }
  }
  ds.images.reserve(tuples.size() * static_cast<size_t>(kCanvas * kCanvas));
  ds.factor_values.reserve(tuples.size() * static_cast<size_t>(nf));
  for (const auto& fv : tuples) {
    std::vector<uint8_t> img = render_shape_image(fv);
    ds.images.insert(ds.images.end(), img.begin(), img.end());
    ds.factor_values.insert(ds.factor_values.end(), fv.begin(), fv.end());
  }
  return ds;
}

// ---- shapes cache ----

namespace {
constexpr char kShapesMagic[5] = {'S', 'S', 'H', 'C', '1'};
}

void save_shapes_cache(const std::string& path, const Dataset& ds) {
  std::string buf;
  buf.append(kShapesMagic, 5);
  auto put32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put32(1);  // version
  put32(static_cast<uint32_t>(ds.size()));
  put32(static_cast<uint32_t>(ds.width));
  put32(static_cast<uint32_t>(ds.height));
  put32(static_cast<uint32_t>(ds.schema.n_factors()));
  for (const auto& f : ds.schema.factors) put32(static_cast<uint32_t>(f.cardinality));
  buf.append(reinterpret_cast<const char*>(ds.images.data()), ds.images.size());
  for (int32_t v : ds.factor_values) buf.push_back(static_cast<char>(v));
  atomic_write_file(path, buf);
}

Dataset load_shapes_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("shapes cache: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (s.size() < 5 || std::memcmp(s.data(), kShapesMagic, 5) != 0)
    throw std::runtime_error("shapes cache: bad magic in " + path);
  size_t pos = 5;
  auto get32 = [&](const char* what) {
    if (pos + 4 > s.size()) throw std::runtime_error(std::string("shapes cache: truncated at ") + what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  uint32_t ver = get32("version");
  if (ver != 1) throw std::runtime_error("shapes cache: unsupported version " + std::to_string(ver));
  uint32_t n = get32("count"), w = get32("width"), h = get32("height"), nf = get32("n_factors");
  FactorSchema ref = FactorSchema::synthetic_shapes();
  if (nf != static_cast<uint32_t>(ref.n_factors()))
    throw std::runtime_error("shapes cache: factor count mismatch");
  Dataset ds;
  ds.width = static_cast<int>(w);
  ds.height = static_cast<int>(h);
  ds.schema = ref;
  ds.has_labels = true;
  for (uint32_t f = 0; f < nf; ++f) {
    uint32_t card = get32("cardinality");
    if (card != static_cast<uint32_t>(ref.factors[f].cardinality))
      throw std::runtime_error("shapes cache: cardinality mismatch at factor " + std::to_string(f));
  }
  size_t img_bytes = static_cast<size_t>(n) * w * h;
  if (pos + img_bytes + static_cast<size_t>(n) * nf > s.size())
    throw std::runtime_error("shapes cache: truncated payload in " + path);
  ds.images.assign(s.begin() + static_cast<long>(pos), s.begin() + static_cast<long>(pos + img_bytes));
  pos += img_bytes;
  ds.factor_values.resize(static_cast<size_t>(n) * nf);
  for (size_t i = 0; i < ds.factor_values.size(); ++i)
    ds.factor_values[i] = static_cast<unsigned char>(s[pos + i]);
  return ds;
}

Dataset load_or_generate_shapes(const std::string& root, uint64_t seed, int64_t sample_n) {
  std::string path = root + "/synthetic_shapes_v1_s" + std::to_string(seed) + "_n" + std::to_string(sample_n) +
                     ".bin";
  std::ifstream probe(path);
  if (probe) return load_shapes_cache(path);
  Dataset ds = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), seed, sample_n);
  try {
    save_shapes_cache(path, ds);
  } catch (const std::exception&) {
    // cache is an optimization; rendering is authoritative
  }
  return ds;
}

// ---- splits ----

namespace {

std::vector<int64_t> shuffled_indices(int64_t n, CounterRng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)], idx[rng.below(static_cast<uint64_t>(i + 1))]);
  return idx;
}

}  // namespace

SupervisionSplit split_supervision(const Dataset& ds, double rate, uint64_t seed) {
  if (!(rate > 0 && rate <= 1)) throw std::invalid_argument("split_supervision: rate must be in (0,1]");
  if (!ds.has_labels) throw std::invalid_argument("split_supervision: dataset carries no labels");
  if (rate == 1.0) {
    // everything labeled; the unsupervised branch still runs over the same
    // images with labels stripped
    SupervisionSplit out{ds, ds.without_labels()};
    out.labeled.split = "labeled";
    out.unlabeled.split = "unlabeled";
    return out;
  }
  int64_t n = ds.size();
  int64_t target = std::llround(rate * static_cast<double>(n));

  // group by joint class key
  std::vector<int> keys(static_cast<size_t>(n));
  int max_key = 0;
  for (int64_t i = 0; i < n; ++i) {
    keys[static_cast<size_t>(i)] = ds.class_key(i);
    max_key = std::max(max_key, keys[static_cast<size_t>(i)]);
  }
  std::vector<std::vector<int64_t>> groups(static_cast<size_t>(max_key) + 1);
  for (int64_t i = 0; i < n; ++i) groups[static_cast<size_t>(keys[static_cast<size_t>(i)])].push_back(i);

  int present = 0;
  for (const auto& gr : groups)
    if (!gr.empty()) ++present;
  if (target < present)
    std::cerr << "split_supervision: warning: " << target << " labeled examples cover fewer than " << present
              << " classes; stratification is best-effort\n";

  // proportional quota with largest-fraction remainder assignment
  struct Q {
    size_t g;
    int64_t quota;
    double frac;
  };
  std::vector<Q> qs;
  int64_t assigned = 0;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    if (groups[gi].empty()) continue;
    double exact = rate * static_cast<double>(groups[gi].size());
    int64_t q = static_cast<int64_t>(exact);
    qs.push_back({gi, q, exact - static_cast<double>(q)});
    assigned += q;
  }
  std::stable_sort(qs.begin(), qs.end(), [](const Q& a, const Q& b) { return a.frac > b.frac; });
  for (size_t i = 0; assigned < target && i < qs.size(); ++i, ++assigned) ++qs[i].quota;
  // over-assignment can only happen from rounding of `target`; trim largest quotas
  for (size_t i = qs.size(); assigned > target && i > 0; --i) {
    if (qs[i - 1].quota > 0) {
      --qs[i - 1].quota;
      --assigned;
    }
  }

  CounterRng rng(seed, rng_stream::kSplit);
  std::vector<int64_t> labeled_idx, rest_idx;
  std::sort(qs.begin(), qs.end(), [](const Q& a, const Q& b) { return a.g < b.g; });
  for (const Q& q : qs) {
    std::vector<int64_t>& members = groups[q.g];
    // deterministic within-group shuffle
    for (int64_t i = static_cast<int64_t>(members.size()) - 1; i > 0; --i)
      std::swap(members[static_cast<size_t>(i)], members[rng.below(static_cast<uint64_t>(i + 1))]);
    for (size_t i = 0; i < members.size(); ++i)
      (static_cast<int64_t>(i) < q.quota ? labeled_idx : rest_idx).push_back(members[i]);
  }
  std::sort(labeled_idx.begin(), labeled_idx.end());
  std::sort(rest_idx.begin(), rest_idx.end());

  SupervisionSplit out{ds.subset(labeled_idx), ds.subset(rest_idx).without_labels()};
  out.labeled.split = "labeled";
  out.unlabeled.split = "unlabeled";
  return out;
}

TrainValidSplit split_validation(const Dataset& ds, double valid_fraction, uint64_t seed) {
  if (!(valid_fraction > 0 && valid_fraction < 1))
    throw std::invalid_argument("split_validation: fraction must be in (0,1)");
  CounterRng rng(seed, rng_stream::kSplit);
  rng.set_counter(1u << 20);  // distinct region from split_supervision draws
  std::vector<int64_t> idx = shuffled_indices(ds.size(), rng);
  int64_t n_valid = std::llround(valid_fraction * static_cast<double>(ds.size()));
  std::vector<int64_t> vi(idx.begin(), idx.begin() + n_valid);
  std::vector<int64_t> ti(idx.begin() + n_valid, idx.end());
  std::sort(vi.begin(), vi.end());
  std::sort(ti.begin(), ti.end());
  TrainValidSplit out{ds.subset(ti), ds.subset(vi)};
  out.train.split = "train";
  out.valid.split = "valid";
  return out;
}

// ---- batching ----

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, CounterRng rng)
    : ds_(&ds), batch_(batch_size), rng_(rng) {
  if (ds.size() == 0) throw std::invalid_argument("BatchIterator: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("BatchIterator: batch size must be positive");
  reshuffle();
}

void BatchIterator::reshuffle() {
  perm_ = shuffled_indices(ds_->size(), rng_);
  pos_ = 0;
}

std::vector<int64_t> BatchIterator::next_indices() {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(batch_));
  while (static_cast<int>(out.size()) < batch_) {
    if (pos_ >= perm_.size()) reshuffle();
    out.push_back(perm_[pos_++]);
  }
  consumed_ += batch_;
  return out;
}

Batch BatchIterator::next(Dtype dt) {
  std::vector<int64_t> idx = next_indices();
  Batch b;
  b.images = ds_->image_batch(idx, dt);
  if (ds_->has_labels) b.labels = ds_->onehot_batch(idx, dt);
  b.indices = std::move(idx);
  return b;
}

void BatchIterator::restore(uint64_t rng_counter, int64_t consumed) {
  rng_.set_counter(0);
  consumed_ = 0;
  reshuffle();
  while (consumed_ < consumed) (void)next_indices();
  if (rng_.counter() != rng_counter)
    throw std::runtime_error("BatchIterator::restore: replay diverged (counter " +
                             std::to_string(rng_.counter()) + " vs saved " + std::to_string(rng_counter) + ")");
}

}  // namespace semafo
