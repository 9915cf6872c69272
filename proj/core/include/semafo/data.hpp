#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semafo/array.hpp"
#include "semafo/rng.hpp"

namespace semafo {

struct FactorSchema {
  struct Factor {
    std::string name;
    int cardinality;
  };
  std::vector<Factor> factors;

  int n_factors() const { return static_cast<int>(factors.size()); }
  int d_y() const;
  std::vector<int> cardinalities() const;
  int index_of(const std::string& name) const;  // -1 when absent

  static FactorSchema mnist();             // label(10)
  static FactorSchema synthetic_shapes();  // shape(3) scale(4) x-pos(4) y-pos(4) rotation(4)
};

// Images are stored as raw 8-bit intensities and exposed to models as
// [0,1]-scaled float batches. Factor labels are stored as per-factor value
// indices and exposed as concatenated one-hot blocks.
struct Dataset {
  int width = 0, height = 0;
  std::vector<uint8_t> images;          // n * pixels, row-major
  bool has_labels = false;
  std::vector<int32_t> factor_values;   // n * n_factors when has_labels
  FactorSchema schema;
  std::string split = "train";

  int pixels() const { return width * height; }
  int64_t size() const { return pixels() ? static_cast<int64_t>(images.size()) / pixels() : 0; }

  Array image_batch(const std::vector<int64_t>& idx, Dtype dt) const;
  // Dynamic binarization: each pixel drawn Bernoulli(intensity).
  Array image_batch_binarized(const std::vector<int64_t>& idx, Dtype dt, CounterRng& rng) const;
  Array onehot_batch(const std::vector<int64_t>& idx, Dtype dt) const;
  int32_t factor_value(int64_t i, int f) const;
  int class_key(int64_t i) const;  // joint factor combination index

  Dataset subset(const std::vector<int64_t>& indices) const;
  Dataset without_labels() const;
};

struct Batch {
  Array images;
  std::optional<Array> labels;  // absent for unlabeled batches
  std::vector<int64_t> indices;
};

// ---- MNIST / IDX ----

// Big-endian IDX pair: image magic 0x00000803, label magic 0x00000801.
// Throws with the offending magic/counts on malformed input.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// $SEMAFO_DATA_ROOT (default "./data"); MNIST lives in <root>/mnist.
std::string dataset_root();
Dataset load_mnist_split(const std::string& root, const std::string& split);  // "train" | "test"

// ---- synthetic shapes ----

// Deterministic fixed-point renderer: one anti-aliased shape per image on a
// 32x32 canvas, every pixel value a pure function of the factor tuple.
// `sample_n == 0` enumerates all 768 combinations once; otherwise draws
// sample_n tuples with repetition from the seeded stream.
Dataset generate_synthetic_shapes(const FactorSchema& schema, uint64_t seed, int64_t sample_n = 0);

// Renders a single factor tuple (values indexed per schema).
std::vector<uint8_t> render_shape_image(const std::vector<int32_t>& factor_values);

// Versioned binary corpus cache (header + images + labels).
void save_shapes_cache(const std::string& path, const Dataset& ds);
Dataset load_shapes_cache(const std::string& path);
Dataset load_or_generate_shapes(const std::string& root, uint64_t seed, int64_t sample_n = 0);

// ---- splits ----

struct SupervisionSplit {
  Dataset labeled;    // S
  Dataset unlabeled;  // U: images only
};

// |S| = round(rate * n), stratified per class key (per-class counts within 1
// of proportional). Warns to stderr when |S| < number of classes.
SupervisionSplit split_supervision(const Dataset& ds, double rate, uint64_t seed);

struct TrainValidSplit {
  Dataset train;
  Dataset valid;
};
TrainValidSplit split_validation(const Dataset& ds, double valid_fraction, uint64_t seed);

// ---- batching ----

// Epoch-reshuffled cycling over a dataset; small sets cycle indefinitely,
// which is the oversampling substrate for the 10:1 interleave.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, CounterRng rng);

  std::vector<int64_t> next_indices();
  Batch next(Dtype dt);
  int64_t consumed() const { return consumed_; }
  const CounterRng& rng() const { return rng_; }
  void restore(uint64_t rng_counter, int64_t consumed);

 private:
  void reshuffle();
  const Dataset* ds_;
  int batch_;
  CounterRng rng_;
  std::vector<int64_t> perm_;
  size_t pos_ = 0;
  int64_t consumed_ = 0;
};

}  // namespace semafo
