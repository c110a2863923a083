#pragma once

// Feature files and manifests.
//
// A feature file is one utterance: an ASCII header line "<rows> <cols> <f32|f64>\n"
// followed by rows·cols little-endian values, row-major.
// A manifest is UTF-8 text with one "<feature path>\t<transcript>" record per
// line; relative paths are resolved against the manifest's directory and
// transcripts are whitespace-separated symbols.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "synct/error.hpp"
#include "synct/features.hpp"
#include "synct/train.hpp"
#include "synct/vocabulary.hpp"

namespace synct {

template <class T>
void write_features(const std::string& path, const FeatureSequence<T>& x) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << x.frames() << ' ' << x.dim() << ' ' << (sizeof(T) == 4 ? "f32" : "f64") << '\n';
  out.write(reinterpret_cast<const char*>(x.values().data()),
            static_cast<std::streamsize>(x.values().size() * sizeof(T)));
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}

template <class T>
FeatureSequence<T> read_features(const std::string& path, double frame_shift_ms = 10.0) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open feature file '" + path + "'");
  std::string header;
  if (!std::getline(in, header)) fail(ErrorCode::kCorruptHeader, "missing header in '" + path + "'");
  std::istringstream hs(header);
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string dtype;
  if (!(hs >> rows >> cols >> dtype) || (dtype != "f32" && dtype != "f64") || cols == 0) {
    fail(ErrorCode::kCorruptHeader, "bad feature header '" + header + "' in '" + path + "'");
  }
  const std::size_t n = rows * cols;
  std::vector<T> values(n);
  auto read_as = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(S))
      fail(ErrorCode::kTruncatedFile, "feature file '" + path + "' is truncated");
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  };
  if (dtype == "f32") {
    read_as(float{});
  } else {
    read_as(double{});
  }
  return FeatureSequence<T>(rows, cols, std::move(values), frame_shift_ms);
}

struct ManifestEntry {
  std::string path;
  std::string transcript;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(ErrorCode::kCorruptHeader, path + ":" + std::to_string(lineno) + ": expected <path>\\t<transcript>");
    }
    std::filesystem::path p = line.substr(0, tab);
    if (p.is_relative()) p = base / p;
    out.push_back({p.string(), line.substr(tab + 1)});
  }
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  for (const auto& e : entries) out << e.path << '\t' << e.transcript << '\n';
}

// Transcript symbols missing from the vocabulary map to unk.
template <class T>
std::vector<Sample<T>> load_dataset(const std::string& manifest, const Vocabulary& vocab,
                                    double frame_shift_ms = 10.0) {
  std::vector<Sample<T>> out;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    Sample<T> s;
    s.id = e.path;
    s.features = read_features<T>(e.path, frame_shift_ms);
    s.labels = vocab.encode(e.transcript);
    out.push_back(std::move(s));
  }
  return out;
}

// Writes samples as <dir>/<id>.feat plus <dir>/manifest.tsv; returns the
// manifest path.
template <class T>
std::string write_dataset(const std::string& dir, const std::vector<Sample<T>>& samples,
                          const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const Sample<T>& s : samples) {
    const std::string name = s.id + ".feat";
    write_features((std::filesystem::path(dir) / name).string(), s.features);
    entries.push_back({name, vocab.decode(s.labels)});
  }
  const std::string manifest = (std::filesystem::path(dir) / "manifest.tsv").string();
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace synct
