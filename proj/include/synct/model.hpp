#pragma once

// The synchronous transformer: strided convolution front end with sinusoidal
// positions, a left-context-masked encoder, and a decoder that conditions on
// the label prefix and one encoded chunk at a time.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synct/chunking.hpp"
#include "synct/error.hpp"
#include "synct/features.hpp"
#include "synct/lattice.hpp"
#include "synct/mask.hpp"
#include "synct/ops.hpp"
#include "synct/tensor.hpp"
#include "synct/vocabulary.hpp"

namespace synct {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_blocks = 2;
  std::size_t n_dec_blocks = 2;
  std::size_t d_in = 40;
  std::size_t left_context = 20;
  std::size_t chunk_width = 4;    // W, in encoded frames
  std::size_t chunk_overlap = 1;  // B, in encoded frames
  std::size_t vocab_size = 16;    // including blank and unk
  std::size_t ffn_inner = 128;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      bad("d_model must be a positive multiple of n_heads");
    if (n_enc_blocks == 0 || n_dec_blocks == 0) bad("need at least one block each");
    if (d_in == 0 || ffn_inner == 0) bad("d_in and ffn_inner must be positive");
    if (chunk_width == 0 || chunk_overlap >= chunk_width)
      bad("chunk geometry requires W > B >= 0");
    if (vocab_size < 3) bad("vocab_size must include blank, unk and a symbol");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [in × out]
  Tensor<T> bias;    // [out]
};

template <class T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <class T>
struct AttentionParams {
  Linear<T> query, key, value, out;
};

template <class T>
struct FeedForwardParams {
  Linear<T> in;   // d_model → 2·ffn_inner, gated by GLU
  Linear<T> out;  // ffn_inner → d_model
};

template <class T>
struct EncoderBlockParams {
  LayerNormParams<T> attn_norm;
  AttentionParams<T> attn;
  LayerNormParams<T> ffn_norm;
  FeedForwardParams<T> ffn;
};

template <class T>
struct DecoderBlockParams {
  LayerNormParams<T> self_norm;
  AttentionParams<T> self_attn;
  LayerNormParams<T> cross_norm;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> ffn_norm;
  FeedForwardParams<T> ffn;
};

template <class T>
struct ModelParams {
  Tensor<T> conv1_kernel, conv1_bias;
  Tensor<T> conv2_kernel, conv2_bias;
  std::vector<EncoderBlockParams<T>> encoder;
  LayerNormParams<T> encoder_norm;
  Tensor<T> embedding;  // [V × d_model]
  std::vector<DecoderBlockParams<T>> decoder;
  LayerNormParams<T> decoder_norm;
  Linear<T> output;

  // Stable, fully qualified parameter list; checkpoints and the optimizer
  // rely on this order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    auto lin = [&](const std::string& p, const Linear<T>& l) {
      out.emplace_back(p + ".weight", l.weight);
      out.emplace_back(p + ".bias", l.bias);
    };
    auto norm = [&](const std::string& p, const LayerNormParams<T>& n) {
      out.emplace_back(p + ".gain", n.gain);
      out.emplace_back(p + ".bias", n.bias);
    };
    auto attn = [&](const std::string& p, const AttentionParams<T>& a) {
      lin(p + ".query", a.query);
      lin(p + ".key", a.key);
      lin(p + ".value", a.value);
      lin(p + ".out", a.out);
    };
    auto ffn = [&](const std::string& p, const FeedForwardParams<T>& f) {
      lin(p + ".in", f.in);
      lin(p + ".out", f.out);
    };
    out.emplace_back("front_end.conv1.kernel", conv1_kernel);
    out.emplace_back("front_end.conv1.bias", conv1_bias);
    out.emplace_back("front_end.conv2.kernel", conv2_kernel);
    out.emplace_back("front_end.conv2.bias", conv2_bias);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      norm(p + ".attn_norm", encoder[i].attn_norm);
      attn(p + ".attn", encoder[i].attn);
      norm(p + ".ffn_norm", encoder[i].ffn_norm);
      ffn(p + ".ffn", encoder[i].ffn);
    }
    norm("encoder.norm", encoder_norm);
    out.emplace_back("decoder.embedding", embedding);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      norm(p + ".self_norm", decoder[i].self_norm);
      attn(p + ".self_attn", decoder[i].self_attn);
      norm(p + ".cross_norm", decoder[i].cross_norm);
      attn(p + ".cross_attn", decoder[i].cross_attn);
      norm(p + ".ffn_norm", decoder[i].ffn_norm);
      ffn(p + ".ffn", decoder[i].ffn);
    }
    norm("decoder.norm", decoder_norm);
    lin("decoder.output", output);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }
};

namespace detail {

// Weights uniform in ±1/√fan_in, biases zero, norms identity. Values are drawn
// in double so float and double models built from one seed agree to rounding.
template <class T>
class ParamFactory {
 public:
  explicit ParamFactory(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> uniform(Shape shape, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<T> v(num_elements(shape));
    for (T& x : v) x = static_cast<T>(dist(rng_));
    return Tensor<T>::from(std::move(shape), std::move(v), true);
  }
  Tensor<T> fan_in(Shape shape, std::size_t fan) {
    return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan)));
  }
  Tensor<T> constant(Shape shape, T value) {
    return Tensor<T>::from(shape, std::vector<T>(num_elements(shape), value), true);
  }
  Linear<T> linear(std::size_t in, std::size_t out) {
    return {fan_in({in, out}, in), constant({out}, T(0))};
  }
  LayerNormParams<T> norm(std::size_t d) {
    return {constant({d}, T(1)), constant({d}, T(0))};
  }
  AttentionParams<T> attention(std::size_t d) {
    return {linear(d, d), linear(d, d), linear(d, d), linear(d, d)};
  }
  FeedForwardParams<T> feed_forward(std::size_t d, std::size_t inner) {
    return {linear(d, 2 * inner), linear(inner, d)};
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace detail

template <class T>
ModelParams<T> init_params(const ModelConfig& c) {
  c.validate();
  detail::ParamFactory<T> f(c.seed);
  ModelParams<T> p;
  p.conv1_kernel = f.fan_in({3, c.d_in, c.d_model}, 3 * c.d_in);
  p.conv1_bias = f.constant({c.d_model}, T(0));
  p.conv2_kernel = f.fan_in({3, c.d_model, c.d_model}, 3 * c.d_model);
  p.conv2_bias = f.constant({c.d_model}, T(0));
  for (std::size_t i = 0; i < c.n_enc_blocks; ++i) {
    EncoderBlockParams<T> b;
    b.attn_norm = f.norm(c.d_model);
    b.attn = f.attention(c.d_model);
    b.ffn_norm = f.norm(c.d_model);
    b.ffn = f.feed_forward(c.d_model, c.ffn_inner);
    p.encoder.push_back(std::move(b));
  }
  p.encoder_norm = f.norm(c.d_model);
  p.embedding = f.uniform({c.vocab_size, c.d_model}, 1.0);
  for (std::size_t i = 0; i < c.n_dec_blocks; ++i) {
    DecoderBlockParams<T> b;
    b.self_norm = f.norm(c.d_model);
    b.self_attn = f.attention(c.d_model);
    b.cross_norm = f.norm(c.d_model);
    b.cross_attn = f.attention(c.d_model);
    b.ffn_norm = f.norm(c.d_model);
    b.ffn = f.feed_forward(c.d_model, c.ffn_inner);
    p.decoder.push_back(std::move(b));
  }
  p.decoder_norm = f.norm(c.d_model);
  p.output = f.linear(c.d_model, c.vocab_size);
  return p;
}

// Sine/cosine positional encoding for positions [first, first + rows).
template <class T>
Tensor<T> positional_encoding(std::size_t rows, std::size_t d,
                              std::size_t first = 0) {
  std::vector<T> v(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(first + r);
    for (std::size_t i = 0; i < d; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      v[r * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(pos * freq)
                                               : std::cos(pos * freq));
    }
  }
  return Tensor<T>::from({rows, d}, std::move(v));
}

// Negative log-likelihood of the label sequence summed over every path of
// the chunk × label lattice. logp holds one log-distribution per lattice
// node, rows ordered (m, u) with u fastest: row m·(U+1) + u.
template <class T>
Tensor<T> lattice_nll(Graph<T>& g, const Tensor<T>& logp,
                      std::span<const SymbolId> labels, std::size_t chunks,
                      SymbolId blank) {
  const std::size_t u_count = labels.size();
  const std::size_t cols = u_count + 1;
  if (logp.rank() != 2 || logp.dim(0) != chunks * cols) {
    fail(ErrorCode::kShape, "lattice_nll: expected " +
                                std::to_string(chunks * cols) +
                                " lattice rows, got " + shape_string(logp.shape()));
  }
  const std::size_t vocab = logp.dim(1);
  for (SymbolId y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= vocab || y == blank) {
      fail(ErrorCode::kVocab, "label id " + std::to_string(y) + " not a vocabulary symbol");
    }
  }
  LatticeProbs<T> probs(chunks, u_count);
  for (std::size_t m = 0; m < chunks; ++m) {
    for (std::size_t u = 0; u < cols; ++u) {
      const T* row = logp.ptr() + (m * cols + u) * vocab;
      probs.blank_at(m, u) = row[blank];
      if (u < u_count) probs.label_at(m, u) = row[labels[u]];
    }
  }
  LatticeLoss<T> loss = lattice_grad(probs);
  Tensor<T> out = Tensor<T>::scalar(-loss.log_prob);
  if (g.wants_grad({&logp})) {
    g.record("lattice_nll", out,
             [logp, out, loss = std::move(loss),
              labels = std::vector<SymbolId>(labels.begin(), labels.end()), chunks,
              cols, vocab, blank]() mutable {
               const T d = out.grad()[0];
               auto dl = logp.grad_accumulator();
               const std::size_t u_count = labels.size();
               for (std::size_t m = 0; m < chunks; ++m) {
                 for (std::size_t u = 0; u < cols; ++u) {
                   T* row = dl.data() + (m * cols + u) * vocab;
                   row[blank] -= d * loss.blank_grad[m * cols + u];
                   if (u < u_count) row[labels[u]] -= d * loss.label_grad[m * u_count + u];
                 }
               }
             });
  }
  return out;
}

template <class T>
struct EncodedChunk {
  Tensor<T> states;  // [W' × d_model]
  ChunkRange range;
};

// Encoder states of a whole utterance together with its chunk geometry.
template <class T>
struct EncodedUtterance {
  Tensor<T> states;  // [L × d_model]
  ChunkGeometry geometry;
};

// Cross-attention keys and values of one chunk for every decoder block.
template <class T>
struct ChunkMemory {
  std::size_t index = 0;
  std::vector<Tensor<T>> keys;    // per block, [h × W' × dh]
  std::vector<Tensor<T>> values;  // per block, [h × W' × dh]
};

// Decoder prefix y_{0:u−1} (y_0 = blank) plus self-attention keys/values for
// the first cached_len tokens, computed against chunk cached_chunk. Switching
// chunks invalidates the cache, since every prefix position cross-attends to
// the current chunk.
template <class T>
struct DecoderState {
  static constexpr std::size_t kNoChunk = std::numeric_limits<std::size_t>::max();

  LabelSequence tokens;
  std::size_t cached_chunk = kNoChunk;
  std::size_t cached_len = 0;
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;
  std::vector<T> last_log_probs;

  void push(SymbolId symbol) { tokens.push_back(symbol); }
};

template <class T>
class SyncTransformer {
 public:
  SyncTransformer(ModelConfig config, Vocabulary vocab)
      : SyncTransformer(config, std::move(vocab), init_params<T>(config)) {}

  SyncTransformer(ModelConfig config, Vocabulary vocab, ModelParams<T> params)
      : config_(config), vocab_(std::move(vocab)), params_(std::move(params)) {
    config_.validate();
    if (vocab_.size() != config_.vocab_size) {
      fail(ErrorCode::kConfig, "vocabulary has " + std::to_string(vocab_.size()) +
                                   " symbols but vocab_size is " +
                                   std::to_string(config_.vocab_size));
    }
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }
  const FrontEndGeometry& front_end_geometry() const { return front_end_geometry_; }

  std::size_t encoded_length(std::size_t raw_frames) const {
    return front_end_geometry_.encoded_length(raw_frames);
  }
  ChunkGeometry geometry(std::size_t encoded_frames) const {
    return ChunkGeometry(config_.chunk_width, config_.chunk_overlap, encoded_frames);
  }

  // [T × d_in] → [L × d_model], L = ⌈⌈T/2⌉/2⌉.
  Tensor<T> front_end(Graph<T>& g, const FeatureSequence<T>& x) const {
    if (x.frames() == 0) fail(ErrorCode::kEmptyInput, "front end needs at least one frame");
    if (x.dim() != config_.d_in) {
      fail(ErrorCode::kShape, "feature dimension " + std::to_string(x.dim()) +
                                  " does not match d_in " +
                                  std::to_string(config_.d_in));
    }
    Tensor<T> in = Tensor<T>::from({x.frames(), x.dim()},
                                   std::vector<T>(x.values().begin(), x.values().end()));
    Tensor<T> h = conv1d_time(g, in, params_.conv1_kernel, 2);
    h = relu(g, add_bias(g, h, params_.conv1_bias));
    h = conv1d_time(g, h, params_.conv2_kernel, 2);
    h = relu(g, add_bias(g, h, params_.conv2_bias));
    return add(g, h, positional_encoding<T>(h.dim(0), config_.d_model));
  }

  // Encoder output for positions [begin, end) of the front-end sequence s.
  // Only the rows the requested positions can see through the stacked
  // left-context windows are processed.
  Tensor<T> encode_range(Graph<T>& g, const Tensor<T>& s, std::size_t begin,
                         std::size_t end) const {
    if (begin >= end || end > s.dim(0)) {
      fail(ErrorCode::kAvailability,
           "encoder positions [" + std::to_string(begin) + ", " +
               std::to_string(end) + ") not available (have " +
               std::to_string(s.dim(0)) + ")");
    }
    const std::size_t reach = config_.n_enc_blocks * config_.left_context;
    const std::size_t first = begin > reach ? begin - reach : 0;
    Tensor<T> x = slice_rows(g, s, first, end);
    const Mask mask = left_context_mask(end - first, config_.left_context).mask;
    for (const auto& block : params_.encoder) {
      Tensor<T> h = layer_norm(g, x, block.attn_norm.gain, block.attn_norm.bias);
      Tensor<T> k = project_heads(g, h, block.attn.key);
      Tensor<T> v = project_heads(g, h, block.attn.value);
      x = add(g, x, attend(g, h, k, v, mask, block.attn));
      h = layer_norm(g, x, block.ffn_norm.gain, block.ffn_norm.bias);
      x = add(g, x, feed_forward(g, h, block.ffn));
    }
    x = layer_norm(g, x, params_.encoder_norm.gain, params_.encoder_norm.bias);
    return slice_rows(g, x, begin - first, end - first);
  }

  Tensor<T> encode(Graph<T>& g, const Tensor<T>& s) const {
    return encode_range(g, s, 0, s.dim(0));
  }

  // Chunk m of an utterance whose front-end rows [0, s.rows) are available.
  EncodedChunk<T> encode_chunk(Graph<T>& g, const Tensor<T>& s,
                               const ChunkGeometry& geometry, std::size_t m) const {
    const ChunkRange range = geometry.chunk(m);
    if (range.end > s.dim(0)) {
      fail(ErrorCode::kAvailability, "chunk " + std::to_string(m) +
                                         " needs encoded frames up to " +
                                         std::to_string(range.end));
    }
    return {encode_range(g, s, range.begin, range.end), range};
  }

  EncodedUtterance<T> encode_utterance(const FeatureSequence<T>& x) const {
    Graph<T> g(false);
    Tensor<T> states = encode(g, front_end(g, x));
    return {states, geometry(states.dim(0))};
  }

  EncodedChunk<T> chunk_of(const EncodedUtterance<T>& u, std::size_t m) const {
    Graph<T> g(false);
    const ChunkRange range = u.geometry.chunk(m);
    return {slice_rows(g, u.states, range.begin, range.end), range};
  }

  ChunkMemory<T> prepare_chunk(const EncodedChunk<T>& chunk) const {
    Graph<T> g(false);
    ChunkMemory<T> mem;
    mem.index = chunk.range.index;
    for (const auto& block : params_.decoder) {
      mem.keys.push_back(project_heads(g, chunk.states, block.cross_attn.key));
      mem.values.push_back(project_heads(g, chunk.states, block.cross_attn.value));
    }
    return mem;
  }

  DecoderState<T> initial_state() const {
    DecoderState<T> s;
    s.tokens.push_back(vocab_.start_id());
    return s;
  }

  // log p(· | y_{0:u−1}, C_m) over vocabulary ∪ {blank} for the state's
  // current prefix.
  std::vector<T> decoder_step(DecoderState<T>& state, const ChunkMemory<T>& chunk) const {
    if (state.tokens.empty()) fail(ErrorCode::kContract, "decoder prefix must start with y_0");
    if (state.cached_chunk != chunk.index) {
      state.cached_chunk = chunk.index;
      state.cached_len = 0;
      state.keys.clear();
      state.values.clear();
      state.last_log_probs.clear();
    }
    if (state.cached_len == state.tokens.size()) return state.last_log_probs;

    Graph<T> g(false);
    const std::size_t past = state.cached_len;
    const std::size_t fresh = state.tokens.size() - past;
    std::vector<std::size_t> positions(fresh);
    for (std::size_t i = 0; i < fresh; ++i) positions[i] = past + i;
    Mask self_mask(fresh, past + fresh);
    for (std::size_t r = 0; r < fresh; ++r)
      for (std::size_t j = 0; j <= past + r; ++j) self_mask.set(r, j);
    const Mask cross_mask = Mask::all(fresh, chunk.keys.front().dim(1));

    DecoderPass pass = run_decoder(
        g, std::span<const SymbolId>(state.tokens).subspan(past), positions,
        past ? &state.keys : nullptr, past ? &state.values : nullptr, self_mask,
        chunk.keys, chunk.values, cross_mask);
    state.keys = std::move(pass.keys);
    state.values = std::move(pass.values);
    state.cached_len = state.tokens.size();
    const std::size_t v = config_.vocab_size;
    auto lp = pass.log_probs.data();
    state.last_log_probs.assign(lp.end() - v, lp.end());
    return state.last_log_probs;
  }

  // Decoder log-distributions for every lattice node, [M·(U+1) × V], rows
  // ordered (m, u). Each chunk's block runs the teacher-forced prefix
  // y_{0:U} against that chunk only.
  Tensor<T> lattice_log_probs(Graph<T>& g, const Tensor<T>& enc,
                              const ChunkGeometry& geometry,
                              std::span<const SymbolId> labels) const {
    const std::size_t m_count = geometry.chunks();
    const std::size_t cols = labels.size() + 1;
    const std::size_t rows = m_count * cols;
    std::vector<SymbolId> ids(rows);
    std::vector<std::size_t> positions(rows);
    Mask self_mask(rows, rows);
    Mask cross_mask(rows, enc.dim(0));
    for (std::size_t m = 0; m < m_count; ++m) {
      const ChunkRange range = geometry.chunk(m);
      for (std::size_t u = 0; u < cols; ++u) {
        const std::size_t r = m * cols + u;
        ids[r] = u == 0 ? vocab_.start_id() : labels[u - 1];
        positions[r] = u;
        for (std::size_t j = 0; j <= u; ++j) self_mask.set(r, m * cols + j);
        for (std::size_t j = range.begin; j < range.end; ++j) cross_mask.set(r, j);
      }
    }
    std::vector<Tensor<T>> keys;
    std::vector<Tensor<T>> values;
    for (const auto& block : params_.decoder) {
      keys.push_back(project_heads(g, enc, block.cross_attn.key));
      values.push_back(project_heads(g, enc, block.cross_attn.value));
    }
    return run_decoder(g, ids, positions, nullptr, nullptr, self_mask, keys,
                       values, cross_mask)
        .log_probs;
  }

  void check_labels(std::span<const SymbolId> labels) const {
    for (SymbolId y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= config_.vocab_size ||
          y == vocab_.blank_id()) {
        fail(ErrorCode::kVocab, "label id " + std::to_string(y) +
                                    " is not a vocabulary symbol");
      }
    }
  }

  // −log p(y | x) summed over all alignment paths.
  Tensor<T> sequence_loss(Graph<T>& g, const FeatureSequence<T>& x,
                          std::span<const SymbolId> labels) const {
    check_labels(labels);
    Tensor<T> enc = encode(g, front_end(g, x));
    const ChunkGeometry geo = geometry(enc.dim(0));
    Tensor<T> logp = lattice_log_probs(g, enc, geo, labels);
    return lattice_nll(g, logp, labels, geo.chunks(), vocab_.blank_id());
  }

  LatticeProbs<T> lattice_probs_for(const FeatureSequence<T>& x,
                                    std::span<const SymbolId> labels) const {
    check_labels(labels);
    Graph<T> g(false);
    Tensor<T> enc = encode(g, front_end(g, x));
    const ChunkGeometry geo = geometry(enc.dim(0));
    Tensor<T> logp = lattice_log_probs(g, enc, geo, labels);
    const std::size_t cols = labels.size() + 1;
    const std::size_t v = config_.vocab_size;
    LatticeProbs<T> probs(geo.chunks(), labels.size());
    for (std::size_t m = 0; m < geo.chunks(); ++m) {
      for (std::size_t u = 0; u < cols; ++u) {
        const T* row = logp.ptr() + (m * cols + u) * v;
        probs.blank_at(m, u) = row[vocab_.blank_id()];
        if (u < labels.size()) probs.label_at(m, u) = row[labels[u]];
      }
    }
    return probs;
  }

 private:
  struct DecoderPass {
    Tensor<T> log_probs;
    std::vector<Tensor<T>> keys;
    std::vector<Tensor<T>> values;
  };

  Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Linear<T>& l) const {
    return add_bias(g, matmul(g, x, l.weight), l.bias);
  }

  Tensor<T> project_heads(Graph<T>& g, const Tensor<T>& x, const Linear<T>& l) const {
    return split_heads(g, linear(g, x, l), config_.n_heads);
  }

  Tensor<T> attend(Graph<T>& g, const Tensor<T>& query_in, const Tensor<T>& keys,
                   const Tensor<T>& values, const Mask& mask,
                   const AttentionParams<T>& p) const {
    const std::size_t head_dim = config_.d_model / config_.n_heads;
    Tensor<T> q = project_heads(g, query_in, p.query);
    Tensor<T> scores = scale(g, matmul_nt(g, q, keys),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
    Tensor<T> weights = masked_softmax(g, scores, mask);
    return linear(g, merge_heads(g, matmul(g, weights, values)), p.out);
  }

  Tensor<T> feed_forward(Graph<T>& g, const Tensor<T>& x,
                         const FeedForwardParams<T>& p) const {
    return linear(g, glu(g, linear(g, x, p.in)), p.out);
  }

  // Runs the decoder blocks over new prefix rows. past_keys/past_values hold
  // self-attention keys/values of earlier rows (per block); self_mask covers
  // [new × (past + new)] and cross_mask [new × chunk rows].
  DecoderPass run_decoder(Graph<T>& g, std::span<const SymbolId> ids,
                          std::span<const std::size_t> positions,
                          const std::vector<Tensor<T>>* past_keys,
                          const std::vector<Tensor<T>>* past_values,
                          const Mask& self_mask,
                          const std::vector<Tensor<T>>& cross_keys,
                          const std::vector<Tensor<T>>& cross_values,
                          const Mask& cross_mask) const {
    const std::size_t d = config_.d_model;
    std::vector<T> pe(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      Tensor<T> row = positional_encoding<T>(1, d, positions[r]);
      std::copy(row.data().begin(), row.data().end(), pe.begin() + r * d);
    }
    Tensor<T> x = add(g, embedding(g, params_.embedding, ids),
                      Tensor<T>::from({ids.size(), d}, std::move(pe)));
    DecoderPass pass;
    for (std::size_t b = 0; b < params_.decoder.size(); ++b) {
      const auto& block = params_.decoder[b];
      Tensor<T> h = layer_norm(g, x, block.self_norm.gain, block.self_norm.bias);
      Tensor<T> k = project_heads(g, h, block.self_attn.key);
      Tensor<T> v = project_heads(g, h, block.self_attn.value);
      if (past_keys) {
        k = concat_tokens(g, (*past_keys)[b], k);
        v = concat_tokens(g, (*past_values)[b], v);
      }
      pass.keys.push_back(k);
      pass.values.push_back(v);
      x = add(g, x, attend(g, h, k, v, self_mask, block.self_attn));
      h = layer_norm(g, x, block.cross_norm.gain, block.cross_norm.bias);
      x = add(g, x, attend(g, h, cross_keys[b], cross_values[b], cross_mask,
                           block.cross_attn));
      h = layer_norm(g, x, block.ffn_norm.gain, block.ffn_norm.bias);
      x = add(g, x, feed_forward(g, h, block.ffn));
    }
    x = layer_norm(g, x, params_.decoder_norm.gain, params_.decoder_norm.bias);
    pass.log_probs = log_softmax(g, linear(g, x, params_.output));
    return pass;
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ModelParams<T> params_;
  FrontEndGeometry front_end_geometry_;
};

}  // namespace synct
