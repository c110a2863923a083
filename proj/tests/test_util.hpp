#pragma once

#include <random>
#include <vector>

#include "synct/features.hpp"
#include "synct/model.hpp"

namespace testutil {

inline synct::ModelConfig tiny_config(std::uint64_t seed = 5) {
  synct::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.d_in = 6;
  c.left_context = 2;
  c.chunk_width = 3;
  c.chunk_overlap = 1;
  c.vocab_size = 7;
  c.ffn_inner = 12;
  c.seed = seed;
  return c;
}

inline synct::ModelConfig small_config(std::uint64_t seed = 5) {
  synct::ModelConfig c = tiny_config(seed);
  c.d_model = 24;
  c.n_heads = 3;
  c.n_enc_blocks = 2;
  c.n_dec_blocks = 2;
  c.ffn_inner = 16;
  return c;
}

template <class T = double>
synct::SyncTransformer<T> make_model(const synct::ModelConfig& c) {
  return synct::SyncTransformer<T>(c, synct::Vocabulary::synthetic(c.vocab_size));
}

template <class T = double>
synct::FeatureSequence<T> random_features(std::size_t frames, std::size_t dim,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<T> v(frames * dim);
  for (T& x : v) x = static_cast<T>(n(rng));
  return synct::FeatureSequence<T>(frames, dim, std::move(v));
}

inline synct::LabelSequence random_labels(std::size_t u, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<synct::SymbolId> d(2, static_cast<synct::SymbolId>(vocab) - 1);
  synct::LabelSequence y(u);
  for (auto& s : y) s = d(rng);
  return y;
}

}  // namespace testutil
