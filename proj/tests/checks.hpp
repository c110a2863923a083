#pragma once

// Oracle comparisons shared by the acceptance binary and the CLI's
// oracle-check / gradcheck subcommands. Each returns the worst deviation it
// saw next to the bound it is held to.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "synct/chunking.hpp"
#include "synct/lattice.hpp"
#include "synct/model.hpp"

namespace checks {

struct Result {
  std::string name;
  double deviation = 0;
  double bound = 0;
  double seconds = 0;
  bool ok = false;
  std::string detail;
};

namespace detail {

template <class F>
Result timed(std::string name, double bound, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  Result r;
  r.name = std::move(name);
  r.bound = bound;
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!std::isfinite(r.deviation)) r.ok = false;
  return r;
}

}  // namespace detail

// forward_pass against the library's path enumeration and the test oracle's
// long-double composition sum, in probability space.
inline Result lattice_oracle(std::uint64_t seed = 1) {
  return detail::timed("lattice oracle equivalence", 1e-10, [&](Result& r) {
    std::mt19937_64 rng(seed);
    std::size_t tables = 0;
    for (std::size_t m = 1; m <= 5; ++m) {
      for (std::size_t u = 0; u <= 5; ++u) {
        for (int i = 0; i < 100; ++i, ++tables) {
          const auto p = oracle::random_lattice<double>(m, u, rng);
          const double fwd = std::exp(synct::forward_pass(p).log_prob);
          const double enumerated = std::exp(synct::enumerate_paths(p).log_prob);
          const double explicit_sum = static_cast<double>(oracle::path_sum(p));
          r.deviation = std::max({r.deviation, oracle::relative_error(fwd, enumerated, 0),
                                  oracle::relative_error(fwd, explicit_sum, 0)});
        }
      }
    }
    r.detail = std::to_string(tables) + " tables";
    r.ok = r.deviation <= r.bound;
  });
}

inline Result diagonal_identity(std::uint64_t seed = 2) {
  return detail::timed("diagonal identity", 1e-9, [&](Result& r) {
    std::mt19937_64 rng(seed);
    for (std::size_t m = 1; m <= 8; ++m)
      for (std::size_t u = 0; u <= 8; ++u)
        for (int i = 0; i < 10; ++i) {
          const auto p = oracle::random_lattice<double>(m, u, rng);
          r.deviation = std::max(r.deviation, synct::diagonal_identity_check(synct::lattice_tables(p)));
        }
    r.detail = "M, U in [1,8] x [0,8]";
    r.ok = r.deviation <= r.bound;
  });
}

inline Result lattice_gradcheck(std::uint64_t seed = 3) {
  return detail::timed("lattice gradient vs finite differences", 1e-6, [&](Result& r) {
    std::mt19937_64 rng(seed);
    std::size_t entries = 0;
    for (std::size_t m = 1; m <= 5; ++m) {
      for (std::size_t u = 0; u <= 5; ++u) {
        const auto p = oracle::random_lattice<double>(m, u, rng);
        const auto g = synct::lattice_grad(p);
        const auto [fd_blank, fd_label] = oracle::lattice_fd(p);
        for (std::size_t i = 0; i < p.blank.size(); ++i, ++entries)
          r.deviation = std::max(r.deviation, oracle::relative_error(g.blank_grad[i], fd_blank[i], 1e-6));
        for (std::size_t i = 0; i < p.label.size(); ++i, ++entries)
          r.deviation = std::max(r.deviation, oracle::relative_error(g.label_grad[i], fd_label[i], 1e-6));
      }
    }
    r.detail = std::to_string(entries) + " entries";
    r.ok = r.deviation <= r.bound;
  });
}

inline synct::ModelConfig gradcheck_config(std::uint64_t seed) {
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

// Every parameter of a tiny model, loss summed over the lattice.
inline Result model_gradcheck(std::uint64_t seed = 4) {
  return detail::timed("model gradient vs finite differences", 1e-4, [&](Result& r) {
    const synct::ModelConfig c = gradcheck_config(seed);
    synct::SyncTransformer<double> m(c, synct::Vocabulary::synthetic(c.vocab_size));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> xv(24 * c.d_in);
    for (double& v : xv) v = normal(rng);
    const synct::FeatureSequence<double> x(24, c.d_in, std::move(xv));
    const synct::LabelSequence y{3, 5};
    auto named = m.params().named();
    for (auto& [name, t] : named) t.clear_grad();
    {
      synct::Graph<double> g;
      g.backward(m.sequence_loss(g, x, y));
    }
    auto loss = [&] {
      synct::Graph<double> g(false);
      return m.sequence_loss(g, x, y).item();
    };
    std::size_t checked = 0;
    std::string worst;
    for (auto& [name, t] : named) {
      std::vector<double> analytic(t.size(), 0.0);
      if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i, ++checked) {
        const double fd = oracle::central_difference(loss, data[i], 1e-5);
        const double err = oracle::relative_error(analytic[i], fd, 1e-4);
        if (err > r.deviation) {
          r.deviation = err;
          worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
    r.detail = std::to_string(checked) + " parameters, worst " + worst;
    r.ok = r.deviation <= r.bound;
  });
}

// Closed-form chunk count against walking the chunk starts.
inline Result chunk_count(std::uint64_t seed = 5) {
  return detail::timed("chunk count formula", 0, [&](Result& r) {
    std::mt19937_64 rng(seed);
    std::size_t mismatches = 0;
    auto check = [&](std::size_t l, std::size_t w, std::size_t b) {
      if (synct::num_chunks(l, w, b) != oracle::count_chunk_starts(l, w, b)) ++mismatches;
    };
    for (int i = 0; i < 1000; ++i) {
      const std::size_t w = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
      const std::size_t b = std::uniform_int_distribution<std::size_t>(0, w - 1)(rng);
      const std::size_t l = std::uniform_int_distribution<std::size_t>(w, 1000)(rng);
      check(l, w, b);
    }
    for (std::size_t l = 10; l <= 400; ++l) check(l, 10, 3);
    r.deviation = static_cast<double>(mismatches);
    r.detail = "1000 random (L, W, B) plus W=10, B=3 for L in [10, 400]";
    r.ok = mismatches == 0;
  });
}

// Pushes every raw frame that lies outside what chunk m may read and records
// the largest change in that chunk's encoder rows and lattice entries.
template <class T>
Result causality(const synct::SyncTransformer<T>& m, std::uint64_t seed = 6,
                 std::size_t utterances = 5) {
  return detail::timed("causality", 1e-12, [&](Result& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = m.config().d_in;
    std::size_t perturbations = 0;
    for (std::size_t n = 0; n < utterances; ++n) {
      const std::size_t frames = 40 + 8 * n;
      std::vector<T> xv(frames * d);
      for (T& v : xv) v = static_cast<T>(normal(rng));
      const synct::FeatureSequence<T> x(frames, d, std::move(xv));
      synct::LabelSequence y;
      for (int k = 0; k < 3; ++k)
        y.push_back(std::uniform_int_distribution<synct::SymbolId>(
            2, static_cast<synct::SymbolId>(m.config().vocab_size) - 1)(rng));
      const auto base = m.encode_utterance(x);
      const auto base_lat = m.lattice_probs_for(x, y);
      const auto& geo = base.geometry;
      const std::size_t width = m.config().d_model;
      for (std::size_t ci = 0; ci + 1 < geo.chunks(); ++ci) {
        const synct::ChunkRange span = geo.chunk(ci);
        const std::size_t first_free = m.front_end_geometry().raw_frames_needed(span.end);
        for (std::size_t t = first_free; t < frames; ++t, ++perturbations) {
          auto x2 = x;
          for (std::size_t j = 0; j < d; ++j) x2.mutable_values()[t * d + j] += T(5);
          const auto enc = m.encode_utterance(x2);
          for (std::size_t i = span.begin * width; i < span.end * width; ++i)
            r.deviation = std::max(r.deviation, static_cast<double>(std::abs(
                                                    enc.states.data()[i] - base.states.data()[i])));
          const auto lat = m.lattice_probs_for(x2, y);
          for (std::size_t u = 0; u <= y.size(); ++u) {
            r.deviation = std::max(r.deviation, static_cast<double>(std::abs(
                                                    lat.blank_at(ci, u) - base_lat.blank_at(ci, u))));
            if (u < y.size())
              r.deviation = std::max(r.deviation, static_cast<double>(std::abs(
                                                      lat.label_at(ci, u) - base_lat.label_at(ci, u))));
          }
        }
      }
    }
    r.detail = std::to_string(perturbations) + " future-frame perturbations";
    r.ok = r.deviation <= r.bound;
  });
}

}  // namespace checks
