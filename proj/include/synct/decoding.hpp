#pragma once

// Chunk-synchronous inference. Within a chunk the decoder keeps emitting
// symbols until it predicts blank (or hits the per-chunk cap), then moves on
// to the next chunk.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "synct/chunking.hpp"
#include "synct/error.hpp"
#include "synct/features.hpp"
#include "synct/lattice.hpp"
#include "synct/model.hpp"

namespace synct {

struct BeamConfig {
  std::size_t width = 5;
  std::size_t max_symbols_per_chunk = 10;
  bool merge_prefixes = false;

  void validate() const {
    if (width < 1) fail(ErrorCode::kConfig, "beam width must be >= 1");
    if (max_symbols_per_chunk < 1)
      fail(ErrorCode::kConfig, "max_symbols_per_chunk must be >= 1");
  }
};

template <class T>
struct DecodeResult {
  LabelSequence symbols;
  T log_prob = 0;
  std::size_t decoder_steps = 0;
};

template <class T>
struct Hypothesis {
  LabelSequence prefix;
  std::vector<std::size_t> symbol_chunks;  // chunk that emitted each symbol
  T log_prob = 0;                          // includes consumed blanks
  std::size_t chunk_index = 0;
  std::size_t emitted_in_chunk = 0;
  bool chunk_done = false;
  DecoderState<T> state;
};

namespace detail {

// Lowest id wins ties.
template <class T>
SymbolId argmax(const std::vector<T>& v) {
  return static_cast<SymbolId>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Greedy search. A forced advance at the symbol cap adds no blank factor.
template <class T>
DecodeResult<T> greedy_decode(const SyncTransformer<T>& model,
                              const EncodedUtterance<T>& enc,
                              std::size_t max_symbols_per_chunk = 10) {
  const SymbolId blank = model.vocab().blank_id();
  DecodeResult<T> result;
  DecoderState<T> state = model.initial_state();
  for (std::size_t m = 0; m < enc.geometry.chunks(); ++m) {
    const ChunkMemory<T> mem = model.prepare_chunk(model.chunk_of(enc, m));
    for (std::size_t emitted = 0; emitted < max_symbols_per_chunk;) {
      const std::vector<T> dist = model.decoder_step(state, mem);
      ++result.decoder_steps;
      const SymbolId best = detail::argmax(dist);
      result.log_prob += dist[best];
      if (best == blank) break;
      result.symbols.push_back(best);
      state.push(best);
      ++emitted;
    }
  }
  return result;
}

template <class T>
DecodeResult<T> greedy_decode(const SyncTransformer<T>& model,
                              const FeatureSequence<T>& x,
                              std::size_t max_symbols_per_chunk = 10) {
  return greedy_decode(model, model.encode_utterance(x), max_symbols_per_chunk);
}

// Beam search that is synchronous at chunk boundaries. Inside a chunk each
// unfinished hypothesis is expanded by the `width` most probable tokens of
// its distribution, blank included; blank or reaching the symbol cap
// finishes the chunk. Finished and unfinished hypotheses are kept in
// separate pools, so a hypothesis only competes with others once its chunk
// is done.
//
// Pools are nested across widths. Every survivor holds a slot r in 1..width
// and a candidate derived from slot r through its k-th best token is
// admissible from slot max(r, k) on. Slot j takes the best candidate not yet
// placed among those admissible at j. The survivors of a width-w search are
// therefore exactly slots 1..w of any wider search: slot 1 is the greedy
// path, and the best score can only rise with the width.
template <class T>
class BeamSearch {
 public:
  BeamSearch(const SyncTransformer<T>& model, BeamConfig config)
      : model_(&model), config_(config) {
    config_.validate();
    Hypothesis<T> root;
    root.state = model.initial_state();
    slots_.push_back({std::move(root), 1});
    sort_by_score();
  }

  void advance(const ChunkMemory<T>& chunk) {
    std::vector<Ranked> active = std::move(slots_);
    for (Ranked& r : active) {
      r.hyp.chunk_index = chunk.index;
      r.hyp.emitted_in_chunk = 0;
      r.hyp.chunk_done = false;
    }
    const SymbolId blank = model_->vocab().blank_id();
    std::vector<Ranked> finished;
    while (!active.empty()) {
      std::vector<Ranked> finished_candidates = std::move(finished);
      std::vector<Ranked> active_candidates;
      for (Ranked& parent : active) {
        const std::vector<T> dist = model_->decoder_step(parent.hyp.state, chunk);
        ++steps_;
        const std::vector<SymbolId> tokens = expansion_tokens(dist);
        for (std::size_t k = 0; k < tokens.size(); ++k) {
          const SymbolId s = tokens[k];
          Ranked next{parent.hyp, std::max(parent.slot, k + 1)};
          Hypothesis<T>& h = next.hyp;
          h.log_prob = parent.hyp.log_prob + dist[s];
          if (s == blank) {
            h.chunk_done = true;
          } else {
            h.prefix.push_back(s);
            h.symbol_chunks.push_back(chunk.index);
            h.state.push(s);
            if (++h.emitted_in_chunk == config_.max_symbols_per_chunk) h.chunk_done = true;
          }
          (h.chunk_done ? finished_candidates : active_candidates).push_back(std::move(next));
        }
      }
      finished = fill_slots(std::move(finished_candidates));
      active = fill_slots(std::move(active_candidates));
      prune_dominated(active, finished);
    }
    slots_ = std::move(finished);
    sort_by_score();
  }

  // Sorted best-first.
  const std::vector<Hypothesis<T>>& hypotheses() const { return sorted_; }
  const Hypothesis<T>& best() const { return sorted_.front(); }
  std::size_t decoder_steps() const { return steps_; }

  // Symbols shared by every live hypothesis; no continuation can revise them.
  std::size_t stable_prefix_length() const {
    std::size_t n = sorted_.front().prefix.size();
    for (const Hypothesis<T>& h : sorted_) {
      std::size_t i = 0;
      while (i < n && i < h.prefix.size() && h.prefix[i] == sorted_.front().prefix[i]) ++i;
      n = i;
    }
    return n;
  }

 private:
  struct Ranked {
    Hypothesis<T> hyp;
    std::size_t slot;  // 1-based; candidates: first admissible slot
  };

  // The `width` most probable tokens, best first; lowest id wins ties.
  std::vector<SymbolId> expansion_tokens(const std::vector<T>& dist) const {
    std::vector<SymbolId> ids(dist.size());
    std::iota(ids.begin(), ids.end(), SymbolId{0});
    const std::size_t keep = std::min(config_.width, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + keep, ids.end(),
                      [&](SymbolId a, SymbolId b) {
                        return dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
                      });
    ids.resize(keep);
    return ids;
  }

  // Candidates arrive in (parent slot, token rank) order, which is the same
  // for every width; it breaks score ties.
  std::vector<Ranked> fill_slots(std::vector<Ranked> candidates) const {
    if (config_.merge_prefixes) merge(candidates);
    std::vector<Ranked> out;
    std::vector<bool> taken(candidates.size(), false);
    for (std::size_t slot = 1; slot <= config_.width; ++slot) {
      std::size_t pick = candidates.size();
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (taken[i] || candidates[i].slot > slot) continue;
        if (pick == candidates.size() || candidates[i].hyp.log_prob > candidates[pick].hyp.log_prob)
          pick = i;
      }
      if (pick == candidates.size()) continue;
      taken[pick] = true;
      out.push_back({std::move(candidates[pick].hyp), slot});
    }
    return out;
  }

  // Scores only fall as a hypothesis extends, so an unfinished hypothesis in
  // slot j is dropped once finished slots 1..j are all filled and none is
  // worse than it. The test looks at slots up to j only, which keeps the
  // pools nested.
  static void prune_dominated(std::vector<Ranked>& active, const std::vector<Ranked>& finished) {
    std::erase_if(active, [&](const Ranked& a) {
      std::size_t filled = 0;
      T floor = std::numeric_limits<T>::infinity();
      for (const Ranked& f : finished) {
        if (f.slot > a.slot) continue;
        ++filled;
        floor = std::min(floor, f.hyp.log_prob);
      }
      return filled == a.slot && a.hyp.log_prob <= floor;
    });
  }

  // Candidates with the same prefix are summed in probability; the first
  // keeps its decoder state and the lower admissible slot is kept.
  static void merge(std::vector<Ranked>& pool) {
    std::vector<Ranked> merged;
    for (Ranked& r : pool) {
      auto it = std::find_if(merged.begin(), merged.end(),
                             [&](const Ranked& o) { return o.hyp.prefix == r.hyp.prefix; });
      if (it == merged.end()) {
        merged.push_back(std::move(r));
      } else {
        it->hyp.log_prob = log_add(it->hyp.log_prob, r.hyp.log_prob);
        it->slot = std::min(it->slot, r.slot);
      }
    }
    pool = std::move(merged);
  }

  void sort_by_score() {
    sorted_.clear();
    for (const Ranked& r : slots_) sorted_.push_back(r.hyp);
    std::stable_sort(sorted_.begin(), sorted_.end(),
                     [](const Hypothesis<T>& a, const Hypothesis<T>& b) {
                       return a.log_prob > b.log_prob;
                     });
  }

  const SyncTransformer<T>* model_;
  BeamConfig config_;
  std::vector<Ranked> slots_;
  std::vector<Hypothesis<T>> sorted_;
  std::size_t steps_ = 0;
};

// n-best list, best first.
template <class T>
std::vector<Hypothesis<T>> beam_decode(const SyncTransformer<T>& model,
                                       const EncodedUtterance<T>& enc,
                                       const BeamConfig& config) {
  BeamSearch<T> search(model, config);
  for (std::size_t m = 0; m < enc.geometry.chunks(); ++m)
    search.advance(model.prepare_chunk(model.chunk_of(enc, m)));
  return search.hypotheses();
}

template <class T>
std::vector<Hypothesis<T>> beam_decode(const SyncTransformer<T>& model,
                                       const FeatureSequence<T>& x,
                                       const BeamConfig& config) {
  return beam_decode(model, model.encode_utterance(x), config);
}

// One incremental result record.
struct Emission {
  std::size_t chunk_index = 0;
  SymbolId symbol = 0;
  double cumulative_log_prob = 0;
  double wall_clock_ms = 0;
};

// Decodes a stream of frame fragments. Each chunk is encoded and searched as
// soon as its raw frames have arrived; symbols are emitted once every live
// hypothesis agrees on them, and the remainder of the best hypothesis at
// finish().
template <class T>
class StreamDecoder {
 public:
  using Clock = std::function<double()>;

  StreamDecoder(const SyncTransformer<T>& model, BeamConfig config, Clock clock = {})
      : model_(&model),
        buffer_(model.config().chunk_width, model.config().chunk_overlap,
                model.config().d_in, model.front_end_geometry()),
        search_(model, config),
        clock_(clock ? std::move(clock) : steady_clock_ms()) {}

  std::vector<Emission> push(const FeatureSequence<T>& fragment) {
    const std::vector<ChunkRange> ready = buffer_.push_frames(fragment);
    std::vector<Emission> out;
    if (!ready.empty()) {
      const std::size_t settled =
          model_->front_end_geometry().settled_length(buffer_.frames().frames());
      decode_chunks(ready, settled, out);
    }
    return out;
  }

  std::vector<Emission> finish() {
    const std::vector<ChunkRange> ready = buffer_.flush();
    std::vector<Emission> out;
    decode_chunks(ready, model_->encoded_length(buffer_.frames().frames()), out);
    emit(search_.best().prefix.size(), out);
    return out;
  }

  const Hypothesis<T>& best() const { return search_.best(); }
  const std::vector<Hypothesis<T>>& hypotheses() const { return search_.hypotheses(); }
  std::size_t chunks_decoded() const { return chunks_decoded_; }

 private:
  static Clock steady_clock_ms() {
    const auto start = std::chrono::steady_clock::now();
    return [start] {
      return std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - start)
          .count();
    };
  }

  void decode_chunks(const std::vector<ChunkRange>& ready, std::size_t settled,
                     std::vector<Emission>& out) {
    Graph<T> g(false);
    Tensor<T> s = model_->front_end(g, buffer_.frames());
    s = slice_rows(g, s, 0, settled);
    const std::size_t length = buffer_.finished()
                                   ? settled
                                   : std::max(settled, ready.back().end);
    const ChunkGeometry geometry = model_->geometry(length);
    for (const ChunkRange& r : ready) {
      EncodedChunk<T> chunk = model_->encode_chunk(g, s, geometry, r.index);
      search_.advance(model_->prepare_chunk(chunk));
      ++chunks_decoded_;
    }
    emit(search_.stable_prefix_length(), out);
  }

  void emit(std::size_t upto, std::vector<Emission>& out) {
    const Hypothesis<T>& best = search_.best();
    for (; emitted_ < upto; ++emitted_) {
      out.push_back({best.symbol_chunks[emitted_], best.prefix[emitted_],
                     static_cast<double>(best.log_prob), clock_()});
    }
  }

  const SyncTransformer<T>* model_;
  StreamBuffer<T> buffer_;
  BeamSearch<T> search_;
  Clock clock_;
  std::size_t emitted_ = 0;
  std::size_t chunks_decoded_ = 0;
};

template <class T>
struct StreamResult {
  std::vector<Emission> emissions;
  Hypothesis<T> best;
  std::vector<Hypothesis<T>> nbest;
};

// Feeds the fragments in order, then flushes.
template <class T>
StreamResult<T> stream_decode(const SyncTransformer<T>& model,
                              const std::vector<FeatureSequence<T>>& fragments,
                              const BeamConfig& config,
                              typename StreamDecoder<T>::Clock clock = {}) {
  StreamDecoder<T> decoder(model, config, std::move(clock));
  StreamResult<T> r;
  for (const auto& f : fragments) {
    auto e = decoder.push(f);
    r.emissions.insert(r.emissions.end(), e.begin(), e.end());
  }
  auto e = decoder.finish();
  r.emissions.insert(r.emissions.end(), e.begin(), e.end());
  r.best = decoder.best();
  r.nbest = decoder.hypotheses();
  return r;
}

// Levenshtein distance with unit substitution/insertion/deletion costs.
template <class Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class Seq>
double cer(const Seq& hyp, const Seq& ref) {
  if (ref.size() == 0) fail(ErrorCode::kUndefinedMetric, "CER undefined for an empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

// Corpus-level CER: total edits over total reference symbols.
struct CerAccumulator {
  std::size_t edits = 0;
  std::size_t reference_symbols = 0;

  template <class Seq>
  void add(const Seq& hyp, const Seq& ref) {
    edits += edit_distance(hyp, ref);
    reference_symbols += ref.size();
  }
  double rate() const {
    if (reference_symbols == 0)
      fail(ErrorCode::kUndefinedMetric, "CER undefined for an empty reference set");
    return static_cast<double>(edits) / static_cast<double>(reference_symbols);
  }
};

}  // namespace synct
