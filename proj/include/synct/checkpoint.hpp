#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   magic "SYNCTCKP" | u32 version | u32 scalar bytes (4 or 8)
//   model config: 11 × u64
//   vocabulary:   u32 count, then per symbol u32 length + UTF-8 bytes
//   parameters:   u32 count, then per tensor
//                 u32 name length + name | u32 rank | rank × u64 dims | data
//   optimizer:    u8 present; if 1: u64 step, then first and second moments
//                 for every parameter in order (data only)
//   trailer:      "END!"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "synct/error.hpp"
#include "synct/model.hpp"
#include "synct/optimizer.hpp"

namespace synct {

inline constexpr char kCheckpointMagic[8] = {'S', 'Y', 'N', 'C', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  ModelParams<T> params;
  std::optional<OptimizerState<T>> optimizer;

  SyncTransformer<T> model() const { return SyncTransformer<T>(config, vocab, params); }
};

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_arithmetic_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    bytes_.insert(bytes_.end(), b, b + sizeof(U));
  }
  void put_raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_raw(s.data(), s.size());
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <class U>
  U get() {
    unsigned char b[sizeof(U)];
    take(b, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
  void take(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) fail(ErrorCode::kTruncatedFile, "checkpoint is truncated");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(std::size_t limit = 1 << 20) {
    const auto n = get<std::uint32_t>();
    if (n > limit) fail(ErrorCode::kCorruptHeader, "implausible string length in checkpoint");
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

template <class T>
void put_values(ByteWriter& w, std::span<const T> values) {
  for (T v : values) w.put(v);
}

// Reads n scalars stored with `width` bytes each into T.
template <class T>
void get_values(ByteReader& r, std::uint32_t width, std::span<T> out) {
  for (T& v : out) {
    if (width == 4) {
      v = static_cast<T>(r.get<float>());
    } else {
      v = static_cast<T>(r.get<double>());
    }
  }
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const SyncTransformer<T>& model,
                     const OptimizerState<T>* optimizer = nullptr) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(T)));
  const ModelConfig& c = model.config();
  for (std::uint64_t v : {std::uint64_t(c.d_model), std::uint64_t(c.n_heads),
                          std::uint64_t(c.n_enc_blocks), std::uint64_t(c.n_dec_blocks),
                          std::uint64_t(c.d_in), std::uint64_t(c.left_context),
                          std::uint64_t(c.chunk_width), std::uint64_t(c.chunk_overlap),
                          std::uint64_t(c.vocab_size), std::uint64_t(c.ffn_inner), c.seed})
    w.put(v);
  w.put(static_cast<std::uint32_t>(model.vocab().size()));
  for (const std::string& s : model.vocab().symbols()) w.put_string(s);
  const auto named = model.params().named();
  w.put(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    detail::put_values(w, t.data());
  }
  w.put(static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    if (optimizer->first_moment.size() != named.size() &&
        !optimizer->first_moment.empty()) {
      fail(ErrorCode::kContract, "optimizer state does not match the parameter list");
    }
    w.put(static_cast<std::uint64_t>(optimizer->step));
    w.put(static_cast<std::uint8_t>(optimizer->first_moment.empty() ? 0 : 1));
    for (const auto& m : optimizer->first_moment) detail::put_values<T>(w, m);
    for (const auto& v : optimizer->second_moment) detail::put_values<T>(w, v);
  }
  w.put_raw("END!", 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(bytes));

  char magic[sizeof(kCheckpointMagic)];
  r.take(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    fail(ErrorCode::kCorruptHeader, "'" + path + "' is not a checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                          ", expected " +
                                          std::to_string(kCheckpointVersion));
  }
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) fail(ErrorCode::kCorruptHeader, "unknown scalar width");

  Checkpoint<T> ck;
  ModelConfig& c = ck.config;
  std::size_t* fields[] = {&c.d_model, &c.n_heads, &c.n_enc_blocks, &c.n_dec_blocks,
                           &c.d_in, &c.left_context, &c.chunk_width, &c.chunk_overlap,
                           &c.vocab_size, &c.ffn_inner};
  for (std::size_t* f : fields) *f = static_cast<std::size_t>(r.get<std::uint64_t>());
  c.seed = r.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptHeader, std::string("invalid model config: ") + e.what());
  }

  const auto vocab_count = r.get<std::uint32_t>();
  if (vocab_count != c.vocab_size) fail(ErrorCode::kCorruptHeader, "vocabulary size mismatch");
  std::vector<std::string> symbols;
  for (std::uint32_t i = 0; i < vocab_count; ++i) symbols.push_back(r.get_string());
  ck.vocab = Vocabulary(std::move(symbols));

  ck.params = init_params<T>(c);
  auto named = ck.params.named();
  const auto count = r.get<std::uint32_t>();
  if (count != named.size()) fail(ErrorCode::kCorruptHeader, "parameter count mismatch");
  for (auto& [name, t] : named) {
    if (r.get_string() != name) fail(ErrorCode::kCorruptHeader, "unexpected tensor, wanted " + name);
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 8; ++i)
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    if (shape != t.shape()) fail(ErrorCode::kCorruptHeader, "shape mismatch for " + name);
    detail::get_values<T>(r, width, t.mutable_data());
  }

  if (r.get<std::uint8_t>() == 1) {
    OptimizerState<T> s;
    s.step = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (r.get<std::uint8_t>() == 1) {
      for (auto* moments : {&s.first_moment, &s.second_moment}) {
        for (const auto& [name, t] : named) {
          moments->emplace_back(t.size());
          detail::get_values<T>(r, width, std::span<T>(moments->back()));
        }
      }
    }
    ck.optimizer = std::move(s);
  }
  char trailer[4];
  r.take(trailer, 4);
  if (std::memcmp(trailer, "END!", 4) != 0 || !r.at_end()) {
    fail(ErrorCode::kCorruptHeader, "checkpoint trailer missing or followed by extra bytes");
  }
  return ck;
}

}  // namespace synct
