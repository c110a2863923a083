#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "synct/error.hpp"
#include "synct/features.hpp"

namespace synct {

// Dense symbol ↔ id table. Id 0 is the blank, which also serves as the start
// symbol y_0; id 1 is the unknown symbol.
class Vocabulary {
 public:
  static constexpr const char* kBlank = "<blk>";
  static constexpr const char* kUnk = "<unk>";

  Vocabulary() : Vocabulary(std::vector<std::string>{kBlank, kUnk}) {}

  explicit Vocabulary(std::vector<std::string> symbols)
      : symbols_(std::move(symbols)) {
    if (symbols_.size() < 2 || symbols_[0] != kBlank || symbols_[1] != kUnk) {
      fail(ErrorCode::kVocab, "vocabulary must start with <blk> and <unk>");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<SymbolId>(i)).second) {
        fail(ErrorCode::kVocab, "duplicate vocabulary symbol '" + symbols_[i] + "'");
      }
    }
  }

  // blank, unk, then "a".."z", then "s26", "s27", ...
  static Vocabulary synthetic(std::size_t size) {
    if (size < 3) fail(ErrorCode::kVocab, "synthetic vocabulary needs >= 3 symbols");
    std::vector<std::string> s{kBlank, kUnk};
    for (std::size_t i = 0; s.size() < size; ++i) {
      s.push_back(i < 26 ? std::string(1, static_cast<char>('a' + i))
                         : "s" + std::to_string(i));
    }
    return Vocabulary(std::move(s));
  }

  std::size_t size() const { return symbols_.size(); }
  SymbolId blank_id() const { return 0; }
  SymbolId unk_id() const { return 1; }
  SymbolId start_id() const { return blank_id(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  SymbolId id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    return it == index_.end() ? unk_id() : it->second;
  }

  const std::string& symbol(SymbolId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
      fail(ErrorCode::kVocab, "symbol id " + std::to_string(id) + " out of range");
    }
    return symbols_[id];
  }

  // Whitespace-separated tokens; unknown tokens map to <unk>.
  LabelSequence encode(const std::string& transcript) const {
    LabelSequence ids;
    std::istringstream in(transcript);
    for (std::string tok; in >> tok;) ids.push_back(id(tok));
    return ids;
  }

  std::string decode(const LabelSequence& ids) const {
    std::string out;
    for (SymbolId id : ids) {
      if (!out.empty()) out += ' ';
      out += symbol(id);
    }
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, SymbolId> index_;
};

}  // namespace synct
