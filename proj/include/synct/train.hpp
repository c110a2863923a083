#pragma once

// Synthetic task generation and the training step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "synct/error.hpp"
#include "synct/features.hpp"
#include "synct/model.hpp"
#include "synct/optimizer.hpp"

namespace synct {

template <class T>
struct Sample {
  std::string id;
  FeatureSequence<T> features;
  LabelSequence labels;
};

// Each symbol is a fixed random d_in-dimensional vector held for
// frames_per_symbol frames, plus Gaussian noise.
struct SyntheticTaskSpec {
  std::size_t vocab_size = 16;  // including blank and unk
  std::size_t min_length = 2;
  std::size_t max_length = 6;
  std::size_t frames_per_symbol = 8;
  double noise_std = 0.3;
  std::size_t d_in = 40;
  std::uint64_t seed = 7;

  void validate() const {
    if (frames_per_symbol < 4) {
      fail(ErrorCode::kContract,
           "frames_per_symbol must be >= 4 to survive the 4x front-end down-sampling");
    }
    if (vocab_size < 3) fail(ErrorCode::kConfig, "synthetic vocab needs >= 3 symbols");
    if (min_length < 1 || min_length > max_length)
      fail(ErrorCode::kConfig, "synthetic length range must satisfy 1 <= min <= max");
    if (d_in == 0) fail(ErrorCode::kConfig, "synthetic d_in must be positive");
  }
};

class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticTaskSpec spec) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(spec_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    embedding_.resize(spec_.vocab_size * spec_.d_in);
    for (double& v : embedding_) v = normal(rng);
  }

  const SyntheticTaskSpec& spec() const { return spec_; }

  // Streams are independent sample sequences over the same symbol
  // embedding (e.g. 0 = train, 1 = held-out).
  template <class T>
  std::vector<Sample<T>> generate(std::size_t n, std::uint64_t stream = 0) const {
    std::mt19937_64 rng(spec_.seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
    std::uniform_int_distribution<std::size_t> length(spec_.min_length, spec_.max_length);
    std::uniform_int_distribution<SymbolId> symbol(
        2, static_cast<SymbolId>(spec_.vocab_size) - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Sample<T>> out;
    out.reserve(n);
    const std::size_t d = spec_.d_in;
    for (std::size_t i = 0; i < n; ++i) {
      Sample<T> s;
      s.id = "synthetic-" + std::to_string(stream) + "-" + std::to_string(i);
      const std::size_t u = length(rng);
      for (std::size_t k = 0; k < u; ++k) s.labels.push_back(symbol(rng));
      std::vector<T> x(u * spec_.frames_per_symbol * d);
      std::size_t t = 0;
      for (SymbolId y : s.labels) {
        for (std::size_t f = 0; f < spec_.frames_per_symbol; ++f, ++t) {
          for (std::size_t j = 0; j < d; ++j) {
            const double e = embedding_[static_cast<std::size_t>(y) * d + j];
            x[t * d + j] = static_cast<T>(e + spec_.noise_std * noise(rng));
          }
        }
      }
      s.features = FeatureSequence<T>(t, d, std::move(x));
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  SyntheticTaskSpec spec_;
  std::vector<double> embedding_;
};

template <class T>
std::vector<Sample<T>> gen_synthetic(const SyntheticTaskSpec& spec, std::size_t n) {
  return SyntheticTask(spec).generate<T>(n, 0);
}

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t total_steps = 4000;
  std::size_t warmup_steps = 1000;
  double lr_scale = 1.0;
  double clip_norm = 5.0;  // negative disables clipping
  std::size_t eval_interval = 500;
  std::string checkpoint_path;
  std::uint64_t seed = 1;
  AdamConfig adam;

  void validate() const {
    if (batch_size < 1) fail(ErrorCode::kConfig, "batch_size must be >= 1");
    if (warmup_steps < 1) fail(ErrorCode::kConfig, "warmup_steps must be >= 1");
  }
};

// Batch membership of a training step (1-based). Every epoch visits the
// dataset in a fresh permutation derived from (seed, epoch), so the schedule
// is a pure function of the step and resuming needs no sampler state.
inline std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch_size,
                                              std::size_t dataset_size,
                                              std::uint64_t seed) {
  if (step == 0 || dataset_size == 0) {
    fail(ErrorCode::kContract, "batch_indices: step >= 1 and a non-empty dataset required");
  }
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t global = (step - 1) * batch_size + i;
    const std::size_t epoch = global / dataset_size;
    if (epoch != perm_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(seed * 0x100000001B3ULL + epoch);
      std::shuffle(perm.begin(), perm.end(), rng);
      perm_epoch = epoch;
    }
    out.push_back(perm[global % dataset_size]);
  }
  return out;
}

struct StepReport {
  double loss = 0;              // mean per-sequence −log p
  double loss_per_symbol = 0;   // summed −log p over summed target length
  double grad_norm = 0;         // before clipping
  double learning_rate = 0;
};

template <class T>
class Trainer {
 public:
  Trainer(SyncTransformer<T>& model, TrainConfig config)
      : model_(&model), config_(std::move(config)), adam_(config_.adam) {
    config_.validate();
    for (auto& [name, t] : model.params().named()) params_.push_back(t);
  }

  const TrainConfig& config() const { return config_; }
  std::size_t step() const { return state_.step; }
  const OptimizerState<T>& optimizer_state() const { return state_; }
  void set_optimizer_state(OptimizerState<T> s) { state_ = std::move(s); }

  double learning_rate(std::size_t step) const {
    return noam_lr(step, model_->config().d_model, config_.warmup_steps, config_.lr_scale);
  }

  // Mean lattice loss over the batch, one clipped Adam update.
  StepReport train_step(std::span<const Sample<T>> batch) {
    if (batch.empty()) fail(ErrorCode::kContract, "train_step needs a non-empty batch");
    for (Tensor<T>& p : params_) p.clear_grad();
    Graph<T> g;
    Tensor<T> total;
    std::size_t symbols = 0;
    for (const Sample<T>& s : batch) {
      Tensor<T> l;
      try {
        l = model_->sequence_loss(g, s.features, s.labels);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNumeric && e.code() != ErrorCode::kDegenerateLattice) throw;
        diverged(s, e.what());
      }
      if (!std::isfinite(l.item())) diverged(s, "non-finite sequence loss");
      total = total.defined() ? add(g, total, l) : l;
      symbols += s.labels.size();
    }
    Tensor<T> loss = scale(g, total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
    g.backward(loss);

    std::vector<std::vector<T>> grads;
    grads.reserve(params_.size());
    for (const Tensor<T>& p : params_) {
      if (p.has_grad()) {
        grads.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        grads.emplace_back(p.size(), T(0));
      }
    }
    StepReport report;
    report.loss = static_cast<double>(loss.item());
    report.loss_per_symbol = report.loss * static_cast<double>(batch.size()) /
                             static_cast<double>(std::max<std::size_t>(symbols, 1));
    report.grad_norm = clip_global_norm(grads, config_.clip_norm);
    if (!std::isfinite(report.grad_norm)) diverged(batch.front(), "non-finite gradient norm");
    report.learning_rate = learning_rate(state_.step + 1);
    adam_.update(params_, grads, report.learning_rate, state_);
    return report;
  }

  StepReport train_step(const std::vector<Sample<T>>& dataset, std::size_t step) {
    std::vector<Sample<T>> batch;
    for (std::size_t i : batch_indices(step, config_.batch_size, dataset.size(), config_.seed))
      batch.push_back(dataset[i]);
    return train_step(std::span<const Sample<T>>(batch));
  }

  // Runs steps step()+1 .. total_steps on the dataset.
  template <class Callback>
  void run(const std::vector<Sample<T>>& dataset, std::size_t total_steps, Callback&& on_step) {
    while (state_.step < total_steps) {
      const std::size_t next = state_.step + 1;
      StepReport r = train_step(dataset, next);
      on_step(next, r);
    }
  }

 private:
  [[noreturn]] void diverged(const Sample<T>& s, const std::string& why) const {
    std::string labels;
    for (SymbolId y : s.labels) labels += std::to_string(y) + " ";
    fail(ErrorCode::kTrainingDiverged,
         "training aborted at step " + std::to_string(state_.step + 1) + ": " + why +
             " (sample " + s.id + ", frames " + std::to_string(s.features.frames()) +
             ", labels [ " + labels + "])");
  }

  SyncTransformer<T>* model_;
  TrainConfig config_;
  Adam<T> adam_;
  OptimizerState<T> state_;
  std::vector<Tensor<T>> params_;
};

}  // namespace synct
