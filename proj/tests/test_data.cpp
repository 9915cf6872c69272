#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "semafo/checkpoint.hpp"
#include "semafo/data.hpp"
#include "test_util.hpp"

using namespace semafo;
using namespace semafo::testing;

namespace {

void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

// two 2x3 images with pixel values 0..5 and 10..15, labels 7 and 2
void write_idx_fixture(const std::string& img_path, const std::string& lab_path) {
  std::string img;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 3);
  for (int v = 0; v < 6; ++v) img.push_back(static_cast<char>(v));
  for (int v = 10; v < 16; ++v) img.push_back(static_cast<char>(v));
  atomic_write_file(img_path, img);
  std::string lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, 2);
  lab.push_back(7);
  lab.push_back(2);
  atomic_write_file(lab_path, lab);
}

}  // namespace

TEST_CASE("idx loader round-trips a hand-built fixture") {
  std::string ip = "/tmp/semafo_fixture-images-idx3-ubyte", lp = "/tmp/semafo_fixture-labels-idx1-ubyte";
  write_idx_fixture(ip, lp);
  Dataset ds = load_mnist_idx(ip, lp);
  CHECK(ds.size() == 2);
  CHECK(ds.width == 3);
  CHECK(ds.height == 2);
  CHECK(ds.factor_value(0, 0) == 7);
  CHECK(ds.factor_value(1, 0) == 2);
  for (int v = 0; v < 6; ++v) CHECK(ds.images[static_cast<size_t>(v)] == v);
  Array batch = ds.image_batch({1}, Dtype::Float64);
  CHECK(batch.at(0) == doctest::Approx(10.0 / 255.0));
  SUBCASE("label magic fed to the image loader is rejected") {
    CHECK_THROWS_WITH_AS((void)load_mnist_idx(lp, lp), doctest::Contains("magic"), std::runtime_error);
  }
  SUBCASE("count mismatch is rejected") {
    std::string lab;
    put_be32(lab, 0x00000801);
    put_be32(lab, 3);
    lab.push_back(0);
    lab.push_back(1);
    lab.push_back(2);
    atomic_write_file(lp, lab);
    CHECK_THROWS_WITH_AS((void)load_mnist_idx(ip, lp), doctest::Contains("mismatch"), std::runtime_error);
  }
  SUBCASE("truncated image payload is rejected") {
    std::string img;
    put_be32(img, 0x00000803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 3);
    img.push_back(0);
    atomic_write_file(ip, img);
    CHECK_THROWS_WITH_AS((void)load_mnist_idx(ip, lp), doctest::Contains("truncated"), std::runtime_error);
  }
  std::remove(ip.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("official mnist files carry the documented counts") {
  Dataset train = load_mnist_split(dataset_root(), "train");
  Dataset test = load_mnist_split(dataset_root(), "test");
  CHECK(train.size() == 60000);
  CHECK(test.size() == 10000);
  CHECK(train.pixels() == 784);
  CHECK(train.has_labels);
}

TEST_CASE("synthetic shapes renderer") {
  FactorSchema schema = FactorSchema::synthetic_shapes();
  CHECK(schema.d_y() == 19);
  SUBCASE("same factors render bit-identically") {
    std::vector<int32_t> fv = {1, 2, 0, 3, 1};
    CHECK(render_shape_image(fv) == render_shape_image(fv));
  }
  SUBCASE("x translation preserves the pixel histogram exactly (no clipping)") {
    for (int shape = 0; shape < 3; ++shape) {
      std::vector<int32_t> a = {shape, 3, 0, 1, 2};  // largest scale, leftmost
      std::vector<int32_t> b = {shape, 3, 3, 1, 2};  // rightmost
      std::map<uint8_t, int> ha, hb;
      for (uint8_t v : render_shape_image(a)) ++ha[v];
      for (uint8_t v : render_shape_image(b)) ++hb[v];
      CHECK(ha == hb);
    }
  }
  SUBCASE("full enumeration yields 768 distinct images") {
    Dataset ds = generate_synthetic_shapes(schema, 1, 0);
    CHECK(ds.size() == 768);
    std::set<uint64_t> hashes;
    int p = ds.pixels();
    for (int64_t i = 0; i < ds.size(); ++i)
      hashes.insert(fnv1a64(ds.images.data() + i * p, static_cast<size_t>(p)));
    CHECK(hashes.size() == 768);
  }
  SUBCASE("sampled corpus is deterministic per seed") {
    Dataset a = generate_synthetic_shapes(schema, 9, 50);
    Dataset b = generate_synthetic_shapes(schema, 9, 50);
    CHECK(a.images == b.images);
    CHECK(a.factor_values == b.factor_values);
    Dataset c = generate_synthetic_shapes(schema, 10, 50);
    CHECK(a.factor_values != c.factor_values);
  }
  SUBCASE("corpus cache round-trips") {
    Dataset ds = generate_synthetic_shapes(schema, 2, 100);
    std::string path = "/tmp/semafo_shapes_cache.bin";
    save_shapes_cache(path, ds);
    Dataset rt = load_shapes_cache(path);
    CHECK(rt.images == ds.images);
    CHECK(rt.factor_values == ds.factor_values);
    std::remove(path.c_str());
  }
}

TEST_CASE("supervision split") {
  Dataset train = load_mnist_split(dataset_root(), "train");
  SUBCASE("rate 0.01 gives 600 labeled, 60 per class") {
    SupervisionSplit sp = split_supervision(train, 0.01, 1);
    CHECK(sp.labeled.size() == 600);
    CHECK(sp.unlabeled.size() == 59400);
    std::vector<int> counts(10, 0);
    for (int64_t i = 0; i < sp.labeled.size(); ++i) ++counts[static_cast<size_t>(sp.labeled.factor_value(i, 0))];
    // per-class counts within 1 of proportional (MNIST classes are not
    // exactly balanced, so proportional is count*rate rounded)
    std::vector<int64_t> full(10, 0);
    for (int64_t i = 0; i < train.size(); ++i) ++full[static_cast<size_t>(train.factor_value(i, 0))];
    for (int c = 0; c < 10; ++c) {
      double prop = 0.01 * static_cast<double>(full[static_cast<size_t>(c)]);
      CHECK(std::abs(counts[static_cast<size_t>(c)] - prop) <= 1.0);
    }
  }
  SUBCASE("rate 0.004 gives 240") {
    SupervisionSplit sp = split_supervision(train, 0.004, 1);
    CHECK(sp.labeled.size() == 240);
  }
  SUBCASE("rate 1.0 keeps every image for the unsupervised branch, labels stripped") {
    Dataset small = train.subset({0, 1, 2, 3, 4, 5, 6, 7});
    SupervisionSplit sp = split_supervision(small, 1.0, 1);
    CHECK(sp.labeled.size() == 8);
    CHECK(sp.unlabeled.size() == 8);
    CHECK_FALSE(sp.unlabeled.has_labels);
  }
  SUBCASE("unlabeled batches carry no label payload") {
    SupervisionSplit sp = split_supervision(train.subset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), 0.5, 1);
    BatchIterator it(sp.unlabeled, 2, CounterRng(1, rng_stream::kShuffleU));
    Batch b = it.next(Dtype::Float64);
    CHECK_FALSE(b.labels.has_value());
    BatchIterator itl(sp.labeled, 2, CounterRng(1, rng_stream::kShuffleS));
    CHECK(itl.next(Dtype::Float64).labels.has_value());
  }
  SUBCASE("split is deterministic per seed") {
    SupervisionSplit a = split_supervision(train, 0.004, 7);
    SupervisionSplit b = split_supervision(train, 0.004, 7);
    CHECK(a.labeled.factor_values == b.labeled.factor_values);
    CHECK(a.labeled.images == b.labeled.images);
  }
}

TEST_CASE("validation split sizes") {
  Dataset shapes = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), 3, 500);
  TrainValidSplit tv = split_validation(shapes, 0.1, 4);
  CHECK(tv.valid.size() == 50);
  CHECK(tv.train.size() == 450);
  CHECK(tv.train.has_labels);
}

TEST_CASE("batch iterator cycles with epoch reshuffles") {
  Dataset shapes = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), 4, 600);
  SUBCASE("each example appears exactly once per epoch of 100 batches") {
    BatchIterator it(shapes, 6, CounterRng(5, rng_stream::kShuffleS));
    std::vector<int> seen(600, 0);
    for (int b = 0; b < 100; ++b)
      for (int64_t i : it.next_indices()) ++seen[static_cast<size_t>(i)];
    for (int i = 0; i < 600; ++i) CHECK(seen[static_cast<size_t>(i)] == 1);
    CHECK(it.consumed() == 600);
  }
  SUBCASE("fixed seed reproduces the batch sequence") {
    BatchIterator a(shapes, 7, CounterRng(6, rng_stream::kShuffleS));
    BatchIterator b(shapes, 7, CounterRng(6, rng_stream::kShuffleS));
    for (int i = 0; i < 50; ++i) CHECK(a.next_indices() == b.next_indices());
  }
  SUBCASE("restore replays to the same position") {
    BatchIterator a(shapes, 7, CounterRng(8, rng_stream::kShuffleS));
    for (int i = 0; i < 23; ++i) (void)a.next_indices();
    BatchIterator b(shapes, 7, CounterRng(8, rng_stream::kShuffleS));
    b.restore(a.rng().counter(), a.consumed());
    for (int i = 0; i < 10; ++i) CHECK(a.next_indices() == b.next_indices());
  }
  SUBCASE("binarized batches are 0/1 valued") {
    CounterRng brng(9, 12);
    Array b = shapes.image_batch_binarized({0, 1, 2}, Dtype::Float64, brng);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK((b.at(i) == 0.0 || b.at(i) == 1.0));
  }
}
