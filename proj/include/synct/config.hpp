#pragma once

// Run configuration read from a JSON file. Every section and key is
// optional; anything unrecognised is rejected so typos do not silently fall
// back to defaults.
//
//   {
//     "model":     {"d_model": 64, "n_heads": 4, ..., "chunk_width": 4},
//     "train":     {"batch_size": 8, "total_steps": 4000, ...},
//     "beam":      {"width": 5, "max_symbols_per_chunk": 10},
//     "synthetic": {"frames_per_symbol": 8, "noise_std": 0.3, ...},
//     "data":      {"train_samples": 2000, "eval_samples": 200}
//   }

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "synct/decoding.hpp"
#include "synct/error.hpp"
#include "synct/model.hpp"
#include "synct/train.hpp"

namespace synct {

struct DataConfig {
  std::size_t train_samples = 2000;
  std::size_t eval_samples = 200;
  double frame_shift_ms = 10.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  BeamConfig beam;
  SyntheticTaskSpec synthetic;
  DataConfig data;

  void validate() const {
    model.validate();
    train.validate();
    beam.validate();
    synthetic.validate();
    if (synthetic.vocab_size != model.vocab_size)
      fail(ErrorCode::kConfig, "synthetic.vocab_size must equal model.vocab_size");
    if (synthetic.d_in != model.d_in)
      fail(ErrorCode::kConfig, "synthetic.d_in must equal model.d_in");
  }
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, "config section '" + name_ + "' must be an object");
  }

  template <class V>
  Section& get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
        if (!j_.at(key).is_number_unsigned())
          fail(ErrorCode::kConfig, name_ + "." + key + " must be a non-negative integer");
      }
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfig, name_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(ErrorCode::kConfig, "unknown config key " + name_ + "." + it.key());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kConfig, "config must be a JSON object");
  RunConfig c;
  const nlohmann::json empty = nlohmann::json::object();
  auto section = [&](const char* name) -> const nlohmann::json& {
    return j.contains(name) ? j.at(name) : empty;
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::set<std::string> known{"model", "train", "beam", "synthetic", "data"};
    if (!known.count(it.key())) fail(ErrorCode::kConfig, "unknown config section '" + it.key() + "'");
  }

  ModelConfig& m = c.model;
  detail::Section(section("model"), "model")
      .get("d_model", m.d_model)
      .get("n_heads", m.n_heads)
      .get("n_enc_blocks", m.n_enc_blocks)
      .get("n_dec_blocks", m.n_dec_blocks)
      .get("d_in", m.d_in)
      .get("left_context", m.left_context)
      .get("chunk_width", m.chunk_width)
      .get("chunk_overlap", m.chunk_overlap)
      .get("vocab_size", m.vocab_size)
      .get("ffn_inner", m.ffn_inner)
      .get("seed", m.seed)
      .done();

  TrainConfig& t = c.train;
  detail::Section(section("train"), "train")
      .get("batch_size", t.batch_size)
      .get("total_steps", t.total_steps)
      .get("warmup_steps", t.warmup_steps)
      .get("lr_scale", t.lr_scale)
      .get("clip_norm", t.clip_norm)
      .get("eval_interval", t.eval_interval)
      .get("checkpoint_path", t.checkpoint_path)
      .get("seed", t.seed)
      .get("adam_beta1", t.adam.beta1)
      .get("adam_beta2", t.adam.beta2)
      .get("adam_epsilon", t.adam.epsilon)
      .done();

  detail::Section(section("beam"), "beam")
      .get("width", c.beam.width)
      .get("max_symbols_per_chunk", c.beam.max_symbols_per_chunk)
      .get("merge_prefixes", c.beam.merge_prefixes)
      .done();

  SyntheticTaskSpec& s = c.synthetic;
  s.vocab_size = m.vocab_size;
  s.d_in = m.d_in;
  detail::Section(section("synthetic"), "synthetic")
      .get("vocab_size", s.vocab_size)
      .get("min_length", s.min_length)
      .get("max_length", s.max_length)
      .get("frames_per_symbol", s.frames_per_symbol)
      .get("noise_std", s.noise_std)
      .get("d_in", s.d_in)
      .get("seed", s.seed)
      .done();

  detail::Section(section("data"), "data")
      .get("train_samples", c.data.train_samples)
      .get("eval_samples", c.data.eval_samples)
      .get("frame_shift_ms", c.data.frame_shift_ms)
      .done();

  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

}  // namespace synct
