#pragma once

// Chunk geometry over the encoded sequence, left-context attention masks,
// streaming frame buffering and latency arithmetic.

#include <cstddef>
#include <string>
#include <vector>

#include "synct/error.hpp"
#include "synct/features.hpp"
#include "synct/mask.hpp"

namespace synct {

// Number of chunks of length W with overlap B covering L encoded frames:
// ⌈(L−W)/(W−B) + 1⌉, or 1 when L ≤ W.
inline std::size_t num_chunks(std::size_t length, std::size_t width,
                              std::size_t overlap) {
  if (width == 0 || overlap >= width) {
    fail(ErrorCode::kGeometry, "invalid chunk geometry W=" +
                                   std::to_string(width) +
                                   " B=" + std::to_string(overlap));
  }
  if (length == 0) fail(ErrorCode::kGeometry, "encoded length must be >= 1");
  if (length <= width) return 1;
  const std::size_t hop = width - overlap;
  return (length - width + hop - 1) / hop + 1;
}

struct ChunkRange {
  std::size_t index = 0;  // 0-based chunk index
  std::size_t begin = 0;  // first encoded position
  std::size_t end = 0;    // one past the last encoded position

  std::size_t size() const { return end - begin; }
  friend bool operator==(const ChunkRange&, const ChunkRange&) = default;
};

struct ChunkGeometry {
  std::size_t width = 0;    // W
  std::size_t overlap = 0;  // B
  std::size_t length = 0;   // L

  ChunkGeometry() = default;
  ChunkGeometry(std::size_t w, std::size_t b, std::size_t l)
      : width(w), overlap(b), length(l) {
    (void)num_chunks(l, w, b);
  }

  std::size_t hop() const { return width - overlap; }
  std::size_t chunks() const { return num_chunks(length, width, overlap); }

  ChunkRange chunk(std::size_t m) const {
    if (m >= chunks()) {
      fail(ErrorCode::kGeometry, "chunk index " + std::to_string(m) +
                                     " out of range (M=" +
                                     std::to_string(chunks()) + ")");
    }
    const std::size_t begin = m * hop();
    return {m, begin, std::min(begin + width, length)};
  }
};

// The chunks are views (index ranges) into the encoded sequence; the last one
// is truncated at L rather than padded.
struct ChunkSet {
  ChunkGeometry geometry;
  std::vector<ChunkRange> chunks;
};

inline ChunkSet split_chunks(std::size_t length, std::size_t width,
                             std::size_t overlap) {
  ChunkSet set{ChunkGeometry(width, overlap, length), {}};
  const std::size_t m = set.geometry.chunks();
  set.chunks.reserve(m);
  for (std::size_t i = 0; i < m; ++i) set.chunks.push_back(set.geometry.chunk(i));
  return set;
}

struct LeftContextMask {
  Mask mask;
  std::size_t left_context = 0;
  std::size_t right_context = 0;
};

// mask(i, j) is true iff i − left ≤ j ≤ i.
inline LeftContextMask left_context_mask(std::size_t length, std::size_t left) {
  LeftContextMask m{Mask(length, length), left, 0};
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t first = i > left ? i - left : 0;
    for (std::size_t j = first; j <= i; ++j) m.mask.set(i, j);
  }
  return m;
}

// One time-convolution layer of the front end, with (kernel−1)/2 zero
// padding on each side.
struct ConvLayerGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

// Maps raw frame counts onto encoded frame counts for a stack of strided
// convolutions.
class FrontEndGeometry {
 public:
  FrontEndGeometry() : layers_{{3, 2}, {3, 2}} {}
  explicit FrontEndGeometry(std::vector<ConvLayerGeometry> layers)
      : layers_(std::move(layers)) {}

  const std::vector<ConvLayerGeometry>& layers() const { return layers_; }

  std::size_t downsample() const {
    std::size_t f = 1;
    for (const auto& l : layers_) f *= l.stride;
    return f;
  }

  // ⌈…⌈T/s₁⌉…/sₙ⌉
  std::size_t encoded_length(std::size_t raw_frames) const {
    std::size_t n = raw_frames;
    for (const auto& l : layers_) n = (n + l.stride - 1) / l.stride;
    return n;
  }

  // Raw frames that must have arrived before encoded positions [0, end) no
  // longer depend on right padding.
  std::size_t raw_frames_needed(std::size_t end) const {
    if (end == 0) return 0;
    std::size_t last = end - 1;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      last = last * it->stride + (it->kernel - 1) / 2 + (it->kernel - 1) % 2;
    return last + 1;
  }

  // Encoded positions whose receptive field lies entirely within the first
  // raw_frames frames.
  std::size_t settled_length(std::size_t raw_frames) const {
    std::size_t n = encoded_length(raw_frames);
    while (n > 0 && raw_frames_needed(n) > raw_frames) --n;
    return n;
  }

 private:
  std::vector<ConvLayerGeometry> layers_;
};

// Accumulates raw frames and releases chunk ranges once every raw frame that
// can influence the chunk has arrived. The final chunk set is only known at
// flush(), when the true sequence length fixes L.
template <class T>
class StreamBuffer {
 public:
  StreamBuffer(std::size_t width, std::size_t overlap, std::size_t feature_dim,
               FrontEndGeometry front_end = {})
      : width_(width),
        overlap_(overlap),
        front_end_(std::move(front_end)),
        frames_(feature_dim) {
    if (width == 0 || overlap >= width) {
      fail(ErrorCode::kGeometry, "invalid chunk geometry W=" +
                                     std::to_string(width) +
                                     " B=" + std::to_string(overlap));
    }
  }

  std::vector<ChunkRange> push_frames(const FeatureSequence<T>& fragment) {
    if (finished_) fail(ErrorCode::kProtocol, "push after end-of-stream");
    frames_.append(fragment);
    std::vector<ChunkRange> ready;
    const std::size_t hop = width_ - overlap_;
    for (;;) {
      const std::size_t begin = released_ * hop;
      const std::size_t end = begin + width_;
      if (front_end_.raw_frames_needed(end) > frames_.frames()) break;
      ready.push_back({released_, begin, end});
      ++released_;
    }
    return ready;
  }

  std::vector<ChunkRange> flush() {
    if (finished_) fail(ErrorCode::kProtocol, "flush called twice");
    finished_ = true;
    const std::size_t length = front_end_.encoded_length(frames_.frames());
    if (length == 0) fail(ErrorCode::kEmptyInput, "stream ended without frames");
    const ChunkGeometry geometry(width_, overlap_, length);
    std::vector<ChunkRange> ready;
    for (; released_ < geometry.chunks(); ++released_)
      ready.push_back(geometry.chunk(released_));
    return ready;
  }

  bool finished() const { return finished_; }
  std::size_t chunks_released() const { return released_; }
  const FeatureSequence<T>& frames() const { return frames_; }
  const FrontEndGeometry& front_end() const { return front_end_; }

 private:
  std::size_t width_;
  std::size_t overlap_;
  FrontEndGeometry front_end_;
  FeatureSequence<T> frames_;
  std::size_t released_ = 0;
  bool finished_ = false;
};

// Audio covered by one chunk: W · downsample · frame shift.
inline double chunk_latency_ms(std::size_t width, std::size_t downsample,
                               double frame_shift_ms) {
  return static_cast<double>(width) * static_cast<double>(downsample) *
         frame_shift_ms;
}

// New audio per chunk once the B overlapping frames are discounted.
inline double effective_latency_ms(std::size_t width, std::size_t overlap,
                                   std::size_t downsample,
                                   double frame_shift_ms) {
  if (overlap >= width) {
    fail(ErrorCode::kGeometry, "overlap must be smaller than the chunk width");
  }
  return chunk_latency_ms(width - overlap, downsample, frame_shift_ms);
}

}  // namespace synct
