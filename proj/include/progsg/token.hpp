#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace progsg::token {

// One lexical token of C-like source text. line/col are 1-based.
struct Token {
  std::string text;
  int line = 0;
  int col = 0;
};

// Splits source text into tokens: %-prefixed names, identifiers, numbers,
// multi-character operators, then single characters. "//" comments and
// whitespace are skipped.
std::vector<Token> lex(const std::string& text);

// Token-to-id mapping with three reserved ids: 0 padding, 1 unknown,
// 2 per-chunk summary slot. Corpus tokens are sorted and numbered from 3,
// so the mapping is a pure function of the token set.
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kSum = 2;
  static constexpr int32_t kReserved = 3;

  static Vocabulary build(const std::vector<std::string>& corpus_texts);

  int32_t id(const std::string& tok) const;  // kUnk when absent
  const std::string& token(int32_t id) const;
  int32_t size() const { return kReserved + static_cast<int32_t>(tokens_.size()); }

  // One corpus token per line, in id order.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;  // sorted; id = kReserved + index
};

// Source text tokenized and cut into fixed-capacity chunks. Each chunk holds
// up to max_len-1 payload tokens; slot 0 of every model sequence is the
// summary slot, so chunks store payload ranges only.
struct TokenStream {
  std::vector<Token> tokens;
  std::vector<int32_t> ids;  // parallel to tokens
  int max_len = 0;
  std::vector<std::pair<int, int>> chunks;  // [begin, end) into tokens
};

TokenStream tokenize(const std::string& text, const Vocabulary& v, int max_len);

// Model-facing id sequence for one chunk: [summary, payload..., pad...] with
// exactly max_len entries.
std::vector<int32_t> padded_chunk(const TokenStream& s, int chunk);

}  // namespace progsg::token
