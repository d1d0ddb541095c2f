// Mini-batch Adam training with validation-plateau learning-rate decay.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/checkpoint.hpp"
#include "msloc/model.hpp"
#include "msloc/optim.hpp"
#include "msloc/rng.hpp"
#include "msloc/synthdata.hpp"

namespace msloc {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 5;
  double plateau_threshold = 1e-6;
  std::size_t max_epochs = 20;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double min_lr = 1e-6;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig.batch_size must be at least 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig.lr must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
      throw std::invalid_argument("TrainConfig.plateau_factor must lie in (0,1)");
    if (plateau_patience == 0) throw std::invalid_argument("TrainConfig.plateau_patience must be at least 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean per-sample loss over the epoch
  double val_loss = 0.0;    // mean per-sample loss after the epoch
  double lr = 0.0;          // rate used during the epoch
  std::vector<std::vector<double>> relevance;  // [C][B] after the epoch

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainHistory&) const = default;
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  Model model;
  Model best_model;
  AdamState adam;
  double lr = 0.0;
  std::size_t epochs_done = 0;
  double best_val = std::numeric_limits<double>::infinity();
  double plateau_best = std::numeric_limits<double>::infinity();
  std::size_t plateau_bad_epochs = 0;
  std::vector<double> beta;
  TrainHistory history;
};

/// Labels of a dataset as an [N, C] tensor.
inline Tensor label_matrix(const Dataset& ds) {
  const std::size_t C = ds.num_classes();
  Tensor y(Shape{ds.size(), C});
  auto d = y.mutable_data();
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t c = 0; c < C; ++c) d[n * C + c] = ds.samples[n].labels.at(c) != 0 ? 1.0 : 0.0;
  return y;
}

/// Permutation of sample order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  Rng rng(derive_seed(seed, 0xE90C0000ULL + epoch));
  return rng.permutation(n);
}

namespace detail {

inline void check_dataset(const Model& model, const Dataset& ds, const char* what) {
  if (ds.size() == 0) throw std::invalid_argument(std::string(what) + " set is empty");
  if (ds.height != model.config.input_height || ds.width != model.config.input_width)
    throw ShapeError(std::string(what) + " images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                     " but the model expects " + std::to_string(model.config.input_height) + "x" +
                     std::to_string(model.config.input_width));
  if (ds.num_classes() != model.config.num_classes)
    throw ShapeError(std::string(what) + " set has " + std::to_string(ds.num_classes()) + " classes, model has " +
                     std::to_string(model.config.num_classes));
}

inline std::pair<Tensor, Tensor> make_batch(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<const std::vector<double>*> imgs;
  const std::size_t C = ds.num_classes();
  Tensor y(Shape{idx.size(), C});
  auto yd = y.mutable_data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = ds.samples[idx[i]];
    imgs.push_back(&s.image);
    for (std::size_t c = 0; c < C; ++c) yd[i * C + c] = s.labels[c] != 0 ? 1.0 : 0.0;
  }
  return {stack_images(imgs, ds.height, ds.width), y};
}

}  // namespace detail

/// Mean per-sample loss of a frozen model over a dataset, reduced in sample order.
inline double evaluate_loss(const Model& model, const Dataset& ds, const std::vector<double>& beta,
                            std::size_t chunk = 32) {
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
    auto [x, y] = detail::make_batch(ds, idx);
    total += loss(forward(model, x).fused_probs, y, beta).item();
  }
  return total / static_cast<double>(ds.size());
}

class Trainer {
 public:
  Trainer(Model model, const Dataset& train_set, const Dataset& val_set, TrainConfig cfg)
      : train_(train_set), val_(val_set), cfg_(std::move(cfg)) {
    cfg_.validate();
    detail::check_dataset(model, train_, "training");
    detail::check_dataset(model, val_, "validation");
    state_.beta = class_balance_factors(label_matrix(train_));
    state_.lr = cfg_.lr;
    state_.best_model = model.clone();
    state_.model = std::move(model);
  }

  /// Continues from a saved state. The training split must be the one the state was built on.
  Trainer(TrainState state, const Dataset& train_set, const Dataset& val_set, TrainConfig cfg)
      : train_(train_set), val_(val_set), cfg_(std::move(cfg)), state_(std::move(state)) {
    cfg_.validate();
    detail::check_dataset(state_.model, train_, "training");
    detail::check_dataset(state_.model, val_, "validation");
    if (class_balance_factors(label_matrix(train_)) != state_.beta)
      throw std::invalid_argument("resume: training split differs from the one the state was created with");
  }

  bool finished() const { return state_.epochs_done >= cfg_.max_epochs || state_.lr < cfg_.min_lr; }

  const EpochRecord& run_epoch() {
    Model& model = state_.model;
    const auto params = model.parameters();
    std::vector<Tensor> tensors;
    for (const auto& p : params) tensors.push_back(p.tensor);

    const auto order = epoch_order(cfg_.seed, state_.epochs_done, train_.size());
    double train_total = 0.0;
    Tape tape;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      auto [x, y] = detail::make_batch(train_, std::span(order).subspan(start, end - start));
      model.zero_grad();
      tape.clear();
      const ForwardOutput out = forward(model, x, &tape);
      const Tensor l = loss(out.fused_probs, y, state_.beta, &tape);
      tape.backward(l);
      tape.clear();
      adam_step(tensors, state_.adam, state_.lr, cfg_.adam);
      train_total += l.item();
    }

    EpochRecord rec;
    rec.epoch = ++state_.epochs_done;
    rec.train_loss = train_total / static_cast<double>(train_.size());
    rec.val_loss = evaluate_loss(model, val_, state_.beta);
    rec.lr = state_.lr;
    rec.relevance = relevance_weights(model);

    if (rec.val_loss < state_.best_val) {
      state_.best_val = rec.val_loss;
      state_.best_model = model.clone();
    }
    PlateauScheduler sched(cfg_.plateau_patience, cfg_.plateau_factor, cfg_.plateau_threshold);
    sched.restore(state_.plateau_best, state_.plateau_bad_epochs);
    state_.lr = sched.step(rec.val_loss, state_.lr);
    state_.plateau_best = sched.best();
    state_.plateau_bad_epochs = sched.bad_epochs();

    state_.history.epochs.push_back(std::move(rec));
    return state_.history.epochs.back();
  }

  const TrainState& state() const { return state_; }
  const std::vector<double>& beta() const { return state_.beta; }

 private:
  const Dataset& train_;
  const Dataset& val_;
  TrainConfig cfg_;
  TrainState state_;
};

/// Trains until max_epochs or until the learning rate falls below min_lr and
/// returns the best-validation model with the per-epoch history.
inline std::pair<Model, TrainHistory> train(Model model, const Dataset& train_set, const Dataset& val_set,
                                            const TrainConfig& cfg,
                                            const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  Trainer t(std::move(model), train_set, val_set, cfg);
  while (!t.finished()) {
    const auto& rec = t.run_epoch();
    if (on_epoch) on_epoch(rec);
  }
  return {t.state().best_model.clone(), t.state().history};
}

// ---------------------------------------------------------------------------
// History CSV and training-state persistence

/// Shortest decimal form that round-trips to the same double.
inline std::string format_real(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_history_csv(std::ostream& os, const TrainHistory& h) {
  os << "epoch,train_loss,val_loss,lr";
  if (!h.epochs.empty())
    for (std::size_t c = 0; c < h.epochs[0].relevance.size(); ++c)
      for (std::size_t b = 0; b < h.epochs[0].relevance[c].size(); ++b) os << ",w_c" << c << "_b" << (b + 1);
  os << '\n';
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << format_real(e.train_loss) << ',' << format_real(e.val_loss) << ',' << format_real(e.lr);
    for (const auto& row : e.relevance)
      for (double w : row) os << ',' << format_real(w);
    os << '\n';
  }
}

inline constexpr char kTrainStateMagic[8] = {'M', 'S', 'L', 'O', 'C', 'T', 'R', 'N'};
inline constexpr std::uint32_t kTrainStateVersion = 1;

inline void save_train_state(const TrainState& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os.write(kTrainStateMagic, 8);
  io::put_u32(os, kTrainStateVersion);
  write_model(os, s.model);
  write_model(os, s.best_model);
  io::put_u64(os, s.adam.step);
  io::put_u64(os, s.adam.m.size());
  for (std::size_t i = 0; i < s.adam.m.size(); ++i) {
    io::put_u64(os, s.adam.m[i].size());
    io::put_f64s(os, s.adam.m[i]);
    io::put_f64s(os, s.adam.v[i]);
  }
  io::put_f64(os, s.lr);
  io::put_u64(os, s.epochs_done);
  io::put_f64(os, s.best_val);
  io::put_f64(os, s.plateau_best);
  io::put_u64(os, s.plateau_bad_epochs);
  io::put_u64(os, s.beta.size());
  io::put_f64s(os, s.beta);
  io::put_u64(os, s.history.epochs.size());
  for (const auto& e : s.history.epochs) {
    io::put_u64(os, e.epoch);
    io::put_f64(os, e.train_loss);
    io::put_f64(os, e.val_loss);
    io::put_f64(os, e.lr);
    io::put_u64(os, e.relevance.size());
    for (const auto& row : e.relevance) {
      io::put_u64(os, row.size());
      io::put_f64s(os, row);
    }
  }
  os.flush();
  if (!os) throw CheckpointError("failed writing training state '" + path + "'");
}

inline TrainState load_train_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open training state '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  io::need(is, "magic");
  if (std::memcmp(magic, kTrainStateMagic, 8) != 0) throw CheckpointError("not a training state file (bad magic)");
  const std::uint32_t version = io::get_u32(is, "version");
  if (version != kTrainStateVersion)
    throw CheckpointError("training state version " + std::to_string(version) + " unsupported");
  constexpr std::uint64_t kMaxCount = 1ULL << 32;
  auto count = [&](const char* what) {
    const std::uint64_t n = io::get_u64(is, what);
    if (n > kMaxCount) throw CheckpointError(std::string("implausible count while reading ") + what);
    return static_cast<std::size_t>(n);
  };
  TrainState s;
  s.model = read_model(is);
  s.best_model = read_model(is, &s.model.config);
  s.adam.step = io::get_u64(is, "adam step");
  const std::size_t ntensors = count("adam tensor count");
  const auto params = s.model.parameters();
  if (ntensors != 0 && ntensors != params.size()) throw CheckpointError("optimizer state does not match the model");
  s.adam.m.resize(ntensors);
  s.adam.v.resize(ntensors);
  for (std::size_t i = 0; i < ntensors; ++i) {
    const std::size_t n = count("adam moment length");
    if (n != params[i].tensor.numel()) throw CheckpointError("optimizer moment size mismatch for " + params[i].name);
    s.adam.m[i].resize(n);
    s.adam.v[i].resize(n);
    io::get_f64s(is, s.adam.m[i], "adam first moment");
    io::get_f64s(is, s.adam.v[i], "adam second moment");
  }
  s.lr = io::get_f64(is, "lr");
  s.epochs_done = count("epoch");
  s.best_val = io::get_f64(is, "best validation loss");
  s.plateau_best = io::get_f64(is, "plateau best");
  s.plateau_bad_epochs = count("plateau counter");
  s.beta.resize(count("beta length"));
  io::get_f64s(is, s.beta, "beta");
  s.history.epochs.resize(count("history length"));
  for (auto& e : s.history.epochs) {
    e.epoch = count("history epoch");
    e.train_loss = io::get_f64(is, "history train loss");
    e.val_loss = io::get_f64(is, "history val loss");
    e.lr = io::get_f64(is, "history lr");
    e.relevance.resize(count("history relevance rows"));
    for (auto& row : e.relevance) {
      row.resize(count("history relevance cols"));
      io::get_f64s(is, row, "history relevance");
    }
  }
  return s;
}

}  // namespace msloc
