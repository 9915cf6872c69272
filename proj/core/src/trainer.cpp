#include "semafo/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "semafo/checkpoint.hpp"

namespace semafo {

namespace {

constexpr double kDivergenceFactor = 10.0;
constexpr int kDivergenceStreak = 100;

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string resolve_path(const ExperimentConfig& cfg, const std::string& p) {
  if (!p.empty() && p[0] == '/') return p;
  return cfg.workdir + "/" + p;
}

Array fetch_images(const Dataset& ds, const std::vector<int64_t>& idx, const ExperimentConfig& cfg,
                   CounterRng& binarize_rng) {
  return cfg.binarize ? ds.image_batch_binarized(idx, cfg.dtype(), binarize_rng)
                      : ds.image_batch(idx, cfg.dtype());
}

bool optimizer_step(TrainState& st, GraphBinding& bind, const AdamConfig& acfg) {
  ParamSet& ps = st.model.params();
  std::vector<Array*> params;
  std::vector<const Array*> grads;
  params.reserve(ps.size());
  grads.reserve(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    params.push_back(&ps.value(i));
    grads.push_back(bind.grad_of(static_cast<int>(i)));
  }
  return st.adam.step(params, grads, acfg);
}

// Streams bundle with counters mirrored into TrainState.
struct Streams {
  CounterRng noise, gumbel, ctrl, binarize;
  explicit Streams(const ExperimentConfig& cfg, const TrainState& st)
      : noise(cfg.seed, rng_stream::kNoise),
        gumbel(cfg.seed, rng_stream::kGumbel),
        ctrl(cfg.seed, rng_stream::kController),
        binarize(cfg.seed, rng_stream::kGumbel + 100) {
    noise.set_counter(st.noise_ctr);
    gumbel.set_counter(st.gumbel_ctr);
    ctrl.set_counter(st.ctrl_ctr);
    binarize.set_counter(st.binarize_ctr);
  }
  void sync(TrainState& st) const {
    st.noise_ctr = noise.counter();
    st.gumbel_ctr = gumbel.counter();
    st.ctrl_ctr = ctrl.counter();
    st.binarize_ctr = binarize.counter();
  }
};

// Divergence watch: loss above 10x the first observed magnitude for 100
// consecutive steps aborts the run with a diagnostic.
bool watch_divergence(TrainState& st, double loss_value, std::string& msg) {
  if (std::isnan(st.initial_loss)) st.initial_loss = loss_value;
  double threshold = kDivergenceFactor * std::max(1.0, std::abs(st.initial_loss));
  if (loss_value > threshold) {
    if (++st.divergence_streak >= kDivergenceStreak) {
      msg = "divergence: loss " + std::to_string(loss_value) + " above " + std::to_string(threshold) + " for " +
            std::to_string(kDivergenceStreak) + " consecutive steps (initial " + std::to_string(st.initial_loss) +
            ")";
      return true;
    }
  } else {
    st.divergence_streak = 0;
  }
  return false;
}

void log_row(std::ostream* log, const LossBreakdown& lb, int64_t step, const std::string& split,
             const ExperimentConfig& cfg, double wall) {
  if (log) *log << lb.csv_row(step, split, variant_name(cfg.variant), wall) << "\n";
}

void eval_and_checkpoint(const ExperimentConfig& cfg, const TrainData& data, TrainState& st, std::ostream* log,
                         double wall_start) {
  double ve = validation_elbo(st.model, cfg, data.valid, st.step);
  if (log) {
    LossBreakdown row;
    row.total = -ve;
    row.reconstruction = ve;  // elbo recorded in the reconstruction slot of valid rows
    *log << row.csv_row(st.step, "valid", variant_name(cfg.variant), now_s() - wall_start) << "\n";
    log->flush();
  }
  checkpoint_best(st, ve, cfg);
}

}  // namespace

TrainState::TrainState(VaeModel m) : model(std::move(m)) {
  std::vector<const Array*> ps;
  for (const auto& item : model.params().items()) ps.push_back(&item.value);
  adam = AdamState(ps);
}

TrainData prepare_train_data(const ExperimentConfig& cfg) {
  std::string root = dataset_root();
  TrainData out;
  Dataset train, test;
  if (cfg.dataset == "mnist") {
    train = load_mnist_split(root, "train");
    test = load_mnist_split(root, "test");
  } else {
    int64_t n = cfg.train_subset > 0 ? cfg.train_subset : 4096;
    train = load_or_generate_shapes(root, 77, n);
    test = load_or_generate_shapes(root, 77, 0);  // full enumeration
    test.split = "test";
  }
  if (cfg.train_subset > 0 && static_cast<int64_t>(cfg.train_subset) < train.size()) {
    CounterRng rng(cfg.seed, rng_stream::kSplit);
    rng.set_counter(3ull << 40);
    std::vector<int64_t> idx(static_cast<size_t>(train.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = train.size() - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[rng.below(static_cast<uint64_t>(i + 1))]);
    idx.resize(static_cast<size_t>(cfg.train_subset));
    std::sort(idx.begin(), idx.end());
    train = train.subset(idx);
  }
  TrainValidSplit tv = split_validation(train, cfg.validation_fraction, cfg.seed);
  out.valid = std::move(tv.valid);
  out.train_all = tv.train;
  SupervisionSplit sp = split_supervision(tv.train, cfg.supervision_rate, cfg.seed);
  out.labeled = std::move(sp.labeled);
  out.unlabeled = std::move(sp.unlabeled);
  out.test = std::move(test);
  out.schema = out.train_all.schema;
  return out;
}

double validation_elbo(const VaeModel& model, const ExperimentConfig& cfg, const Dataset& valid, int64_t step) {
  VaeModel m = model;  // snapshot; evaluation must not mutate training state
  CounterRng noise(cfg.seed, rng_stream::kEval);
  CounterRng gumbel(cfg.seed, rng_stream::kEval + 100);
  CounterRng ctrl(cfg.seed, rng_stream::kEval + 200);
  uint64_t base = static_cast<uint64_t>(step) << 28;
  noise.set_counter(base);
  gumbel.set_counter(base);
  ctrl.set_counter(base);

  int64_t n = valid.size();
  int64_t chunk = 256;
  double total = 0;
  for (int64_t at = 0; at < n; at += chunk) {
    int64_t m_sz = std::min(chunk, n - at);
    std::vector<int64_t> idx(static_cast<size_t>(m_sz));
    std::iota(idx.begin(), idx.end(), at);
    Array x = valid.image_batch(idx, cfg.dtype());
    Graph g(cfg.dtype());
    GraphBinding bind(g, m.params());
    LossBreakdown lb;
    if (m.is_semafo()) {
      NoiseStreams ns{noise, gumbel, ctrl};
      SemafoOpts opts;
      opts.weight = 1;
      opts.mc_samples = 1;
      lb = m.variant() == Variant::SemafoHvae ? elbo_semafo_hvae_unsupervised(m, bind, x, ns, opts)
                                              : elbo_semafo_unsupervised(m, bind, x, ns, opts);
      noise = ns.z;
      gumbel = ns.label;
      ctrl = ns.ctrl;
    } else {
      lb = plain_loss(m, bind, x, noise, cfg.gamma, cfg.beta, cfg.free_pixels, 1);
    }
    total += lb.elbo() * static_cast<double>(m_sz);
  }
  return total / static_cast<double>(n);
}

bool checkpoint_best(TrainState& state, double valid_elbo, const ExperimentConfig& cfg) {
  if (!(valid_elbo > state.best_valid_elbo)) return false;
  state.best_valid_elbo = valid_elbo;
  try {
    state.model.save(resolve_path(cfg, cfg.checkpoint_path), cfg);
  } catch (const std::exception& e) {
    std::cerr << "checkpoint_best: warning: " << e.what() << " (training continues)\n";
    return false;
  }
  return true;
}

void run_pretrain(const ExperimentConfig& cfg, const TrainData& data, TrainState& state, std::ostream* log) {
  if (!state.model.is_semafo()) return;
  if (state.pretrain_done >= cfg.pretrain_steps) return;
  double wall0 = now_s();
  Streams rs(cfg, state);
  BatchIterator s_iter(data.labeled, cfg.batch_size, CounterRng(cfg.seed, rng_stream::kShuffleS));
  s_iter.restore(state.sup_iter_ctr, state.labeled_consumed);
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  while (state.pretrain_done < cfg.pretrain_steps) {
    std::vector<int64_t> idx = s_iter.next_indices();
    Array x = fetch_images(data.labeled, idx, cfg, rs.binarize);
    Array y = data.labeled.onehot_batch(idx, cfg.dtype());
    Graph g(cfg.dtype());
    GraphBinding bind(g, state.model.params());
    NoiseStreams ns{rs.noise, rs.gumbel, rs.ctrl};
    SemafoOpts opts;
    opts.alpha = cfg.alpha;
    opts.use_controller = false;  // unit-Gaussian prior during pretraining
    opts.mc_samples = cfg.mc_samples;
    LossBreakdown lb = state.model.variant() == Variant::SemafoHvae
                           ? elbo_semafo_hvae_supervised(state.model, bind, x, y, ns, opts)
                           : elbo_semafo_supervised(state.model, bind, x, y, ns, opts);
    rs.noise = ns.z;
    rs.gumbel = ns.label;
    rs.ctrl = ns.ctrl;
    g.backward(lb.loss);
    optimizer_step(state, bind, acfg);
    ++state.pretrain_done;
    log_row(log, lb, -cfg.pretrain_steps + state.pretrain_done, "pretrain", cfg, now_s() - wall0);
    rs.sync(state);
    state.sup_iter_ctr = s_iter.rng().counter();
    state.labeled_consumed = s_iter.consumed();
  }
}

TrainOutcome run_semafo_training(const ExperimentConfig& cfg, const TrainData& data, TrainState& state,
                                 std::ostream* log) {
  TrainOutcome out;
  out.checkpoint_path = resolve_path(cfg, cfg.checkpoint_path);
  double wall0 = now_s();
  Streams rs(cfg, state);
  BatchIterator s_iter(data.labeled, std::max(1, cfg.batch_size / 10),
                       CounterRng(cfg.seed, rng_stream::kShuffleS));
  BatchIterator u_iter(data.unlabeled, cfg.batch_size - std::max(1, cfg.batch_size / 10),
                       CounterRng(cfg.seed, rng_stream::kShuffleU));
  s_iter.restore(state.sup_iter_ctr, state.labeled_consumed);
  u_iter.restore(state.unsup_iter_ctr, state.unlabeled_consumed);
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  while (state.step < cfg.max_iterations) {
    // supervised branch: m/10 labeled examples, own backward + update
    {
      std::vector<int64_t> idx = s_iter.next_indices();
      Array x = fetch_images(data.labeled, idx, cfg, rs.binarize);
      Array y = data.labeled.onehot_batch(idx, cfg.dtype());
      Graph g(cfg.dtype());
      GraphBinding bind(g, state.model.params());
      NoiseStreams ns{rs.noise, rs.gumbel, rs.ctrl};
      SemafoOpts opts;
      opts.alpha = cfg.alpha;
      opts.mc_samples = cfg.mc_samples;
      LossBreakdown lb = state.model.variant() == Variant::SemafoHvae
                             ? elbo_semafo_hvae_supervised(state.model, bind, x, y, ns, opts)
                             : elbo_semafo_supervised(state.model, bind, x, y, ns, opts);
      rs.noise = ns.z;
      rs.gumbel = ns.label;
      rs.ctrl = ns.ctrl;
      g.backward(lb.loss);
      optimizer_step(state, bind, acfg);
      log_row(log, lb, state.step + 1, "train-sup", cfg, now_s() - wall0);
    }
    // unsupervised branch: the remaining 9m/10, y sampled from q(y|z)
    double unsup_total;
    {
      std::vector<int64_t> idx = u_iter.next_indices();
      Array x = fetch_images(data.unlabeled, idx, cfg, rs.binarize);
      Graph g(cfg.dtype());
      GraphBinding bind(g, state.model.params());
      NoiseStreams ns{rs.noise, rs.gumbel, rs.ctrl};
      SemafoOpts opts;
      opts.weight = cfg.gamma;
      opts.mc_samples = cfg.mc_samples;
      LossBreakdown lb = state.model.variant() == Variant::SemafoHvae
                             ? elbo_semafo_hvae_unsupervised(state.model, bind, x, ns, opts)
                             : elbo_semafo_unsupervised(state.model, bind, x, ns, opts);
      rs.noise = ns.z;
      rs.gumbel = ns.label;
      rs.ctrl = ns.ctrl;
      g.backward(lb.loss);
      optimizer_step(state, bind, acfg);
      unsup_total = lb.total;
      log_row(log, lb, state.step + 1, "train-unsup", cfg, now_s() - wall0);
    }
    ++state.step;
    rs.sync(state);
    state.sup_iter_ctr = s_iter.rng().counter();
    state.unsup_iter_ctr = u_iter.rng().counter();
    state.labeled_consumed = s_iter.consumed();
    state.unlabeled_consumed = u_iter.consumed();

    std::string msg;
    if (watch_divergence(state, unsup_total, msg)) {
      out.diverged = true;
      out.message = msg;
      out.steps_run = state.step;
      return out;
    }
    if (state.step % cfg.eval_every == 0 || state.step == cfg.max_iterations)
      eval_and_checkpoint(cfg, data, state, log, wall0);
  }
  out.steps_run = state.step;
  out.best_valid_elbo = state.best_valid_elbo;
  out.final_valid_elbo = validation_elbo(state.model, cfg, data.valid, state.step);
  return out;
}

TrainOutcome run_plain_training(const ExperimentConfig& cfg, const TrainData& data, TrainState& state,
                                std::ostream* log) {
  TrainOutcome out;
  out.checkpoint_path = resolve_path(cfg, cfg.checkpoint_path);
  double wall0 = now_s();
  Streams rs(cfg, state);
  BatchIterator iter(data.train_all, cfg.batch_size, CounterRng(cfg.seed, rng_stream::kShuffleU));
  iter.restore(state.unsup_iter_ctr, state.unlabeled_consumed);
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  while (state.step < cfg.max_iterations) {
    std::vector<int64_t> idx = iter.next_indices();
    Array x = fetch_images(data.train_all, idx, cfg, rs.binarize);
    Graph g(cfg.dtype());
    GraphBinding bind(g, state.model.params());
    LossBreakdown lb = plain_loss(state.model, bind, x, rs.noise, cfg.gamma, cfg.beta, cfg.free_pixels,
                                  cfg.mc_samples);
    g.backward(lb.loss);
    optimizer_step(state, bind, acfg);
    ++state.step;
    log_row(log, lb, state.step, "train", cfg, now_s() - wall0);
    rs.sync(state);
    state.unsup_iter_ctr = iter.rng().counter();
    state.unlabeled_consumed = iter.consumed();

    std::string msg;
    if (watch_divergence(state, lb.total, msg)) {
      out.diverged = true;
      out.message = msg;
      out.steps_run = state.step;
      return out;
    }
    if (state.step % cfg.eval_every == 0 || state.step == cfg.max_iterations)
      eval_and_checkpoint(cfg, data, state, log, wall0);
  }
  out.steps_run = state.step;
  out.best_valid_elbo = state.best_valid_elbo;
  out.final_valid_elbo = validation_elbo(state.model, cfg, data.valid, state.step);
  return out;
}

TrainOutcome run_training(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.resolve();
  TrainData data = prepare_train_data(cfg);
  VaeModel model(VaeModel::spec_from_config(cfg, data.train_all.pixels(), data.schema.cardinalities()),
                 cfg.seed);
  TrainState state(std::move(model));

  std::ofstream log(resolve_path(cfg, "metrics.csv"), std::ios::trunc);
  log << LossBreakdown::csv_header() << "\n";
  {
    std::ofstream cfg_out(resolve_path(cfg, "config.txt"), std::ios::trunc);
    cfg_out << config_to_text(cfg);
  }

  TrainOutcome out;
  if (cfg.is_semafo()) {
    run_pretrain(cfg, data, state, &log);
    out = run_semafo_training(cfg, data, state, &log);
  } else {
    out = run_plain_training(cfg, data, state, &log);
  }
  save_train_state(resolve_path(cfg, "state.smfo"), state, cfg);
  if (out.diverged) std::cerr << "run_training: " << out.message << "\n";
  return out;
}

namespace {
constexpr const char* kStateKey = "trainer.state";
}

void save_train_state(const std::string& path, const TrainState& state, const ExperimentConfig& cfg) {
  Checkpoint ckpt;
  ckpt.config_text = config_to_text(cfg);
  ckpt.config_hash = config_hash(cfg);
  for (const auto& item : state.model.params().items())
    ckpt.tensors.emplace_back(item.name, item.value.cast(Dtype::Float64));
  const auto& items = state.model.params().items();
  AdamState& adam = const_cast<TrainState&>(state).adam;
  for (size_t i = 0; i < items.size(); ++i) {
    ckpt.tensors.emplace_back("adam.m." + items[i].name, adam.moments_m()[i]);
    ckpt.tensors.emplace_back("adam.v." + items[i].name, adam.moments_v()[i]);
  }
  std::vector<double> s = {
      static_cast<double>(state.step),
      static_cast<double>(state.pretrain_done),
      state.best_valid_elbo,
      std::bit_cast<double>(state.noise_ctr),
      std::bit_cast<double>(state.gumbel_ctr),
      std::bit_cast<double>(state.ctrl_ctr),
      std::bit_cast<double>(state.binarize_ctr),
      std::bit_cast<double>(state.sup_iter_ctr),
      std::bit_cast<double>(state.unsup_iter_ctr),
      static_cast<double>(state.labeled_consumed),
      static_cast<double>(state.unlabeled_consumed),
      static_cast<double>(adam.step_count()),
      static_cast<double>(adam.skipped_steps()),
      static_cast<double>(state.divergence_streak),
      state.initial_loss,
  };
  ckpt.tensors.emplace_back(kStateKey, Array::from({static_cast<int64_t>(s.size())}, s, Dtype::Float64));
  save_checkpoint(path, ckpt);
}

TrainState load_train_state(const std::string& path, const ExperimentConfig& cfg, const TrainData& data) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != config_hash(cfg))
    throw std::runtime_error("load_train_state: config hash mismatch in " + path);
  VaeModel model(VaeModel::spec_from_config(cfg, data.train_all.pixels(), data.schema.cardinalities()),
                 cfg.seed);
  model.load_params_from(ckpt);
  TrainState state(std::move(model));
  const auto& items = state.model.params().items();
  for (size_t i = 0; i < items.size(); ++i) {
    const Array* m = ckpt.find("adam.m." + items[i].name);
    const Array* v = ckpt.find("adam.v." + items[i].name);
    if (!m || !v) throw std::runtime_error("load_train_state: missing optimizer moments for " + items[i].name);
    state.adam.moments_m()[i] = *m;
    state.adam.moments_v()[i] = *v;
  }
  const Array* s = ckpt.find(kStateKey);
  if (!s || s->numel() != 15) throw std::runtime_error("load_train_state: missing state vector");
  state.step = static_cast<int64_t>(s->at(0));
  state.pretrain_done = static_cast<int64_t>(s->at(1));
  state.best_valid_elbo = s->at(2);
  state.noise_ctr = std::bit_cast<uint64_t>(s->at(3));
  state.gumbel_ctr = std::bit_cast<uint64_t>(s->at(4));
  state.ctrl_ctr = std::bit_cast<uint64_t>(s->at(5));
  state.binarize_ctr = std::bit_cast<uint64_t>(s->at(6));
  state.sup_iter_ctr = std::bit_cast<uint64_t>(s->at(7));
  state.unsup_iter_ctr = std::bit_cast<uint64_t>(s->at(8));
  state.labeled_consumed = static_cast<int64_t>(s->at(9));
  state.unlabeled_consumed = static_cast<int64_t>(s->at(10));
  state.adam.set_counters(static_cast<int64_t>(s->at(11)), static_cast<int64_t>(s->at(12)));
  state.divergence_streak = static_cast<int>(s->at(13));
  state.initial_loss = s->at(14);
  return state;
}

}  // namespace semafo
