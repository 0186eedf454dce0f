#include "progsg/token.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace progsg::token {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

const char* kTwoCharOps[] = {"==", "!=", "<=", ">=", "->", "&&", "||",
                             "<<", ">>", "+=", "-=", "*=", "/=", "++", "--"};

const std::string kPadText = "<pad>";
const std::string kUnkText = "<unk>";
const std::string kSumText = "<sum>";

}  // namespace

std::vector<Token> lex(const std::string& text) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t n) {
    for (size_t k = 0; k < n; ++k) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < text.size()) {
    char c = text[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
      while (i < text.size() && text[i] != '\n') advance(1);
      continue;
    }
    int tl = line, tc = col;
    if (c == '%' && i + 1 < text.size() && ident_start(text[i + 1])) {
      size_t b = i;
      advance(1);
      while (i < text.size() && ident_char(text[i])) advance(1);
      out.push_back({text.substr(b, i - b), tl, tc});
      continue;
    }
    if (ident_start(c)) {
      size_t b = i;
      while (i < text.size() && ident_char(text[i])) advance(1);
      out.push_back({text.substr(b, i - b), tl, tc});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t b = i;
      while (i < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.'))
        advance(1);
      out.push_back({text.substr(b, i - b), tl, tc});
      continue;
    }
    bool two = false;
    if (i + 1 < text.size()) {
      std::string pair = text.substr(i, 2);
      for (const char* op : kTwoCharOps)
        if (pair == op) {
          out.push_back({pair, tl, tc});
          advance(2);
          two = true;
          break;
        }
    }
    if (two) continue;
    out.push_back({std::string(1, c), tl, tc});
    advance(1);
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_texts) {
  std::set<std::string> seen;
  for (const std::string& t : corpus_texts)
    for (const Token& tok : lex(t)) seen.insert(tok.text);
  Vocabulary v;
  v.tokens_.assign(seen.begin(), seen.end());
  return v;
}

int32_t Vocabulary::id(const std::string& tok) const {
  auto it = std::lower_bound(tokens_.begin(), tokens_.end(), tok);
  if (it != tokens_.end() && *it == tok)
    return kReserved + static_cast<int32_t>(it - tokens_.begin());
  return kUnk;
}

const std::string& Vocabulary::token(int32_t id) const {
  switch (id) {
    case kPad: return kPadText;
    case kUnk: return kUnkText;
    case kSum: return kSumText;
    default: break;
  }
  int32_t i = id - kReserved;
  if (i < 0 || i >= static_cast<int32_t>(tokens_.size()))
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(i)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const std::string& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Vocabulary v;
  std::string ln;
  while (std::getline(in, ln)) {
    if (!ln.empty() && ln.back() == '\r') ln.pop_back();
    if (!ln.empty()) v.tokens_.push_back(ln);
  }
  if (!std::is_sorted(v.tokens_.begin(), v.tokens_.end()))
    throw std::runtime_error("vocabulary file not sorted: " + path);
  return v;
}

TokenStream tokenize(const std::string& text, const Vocabulary& v, int max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must be at least 2");
  TokenStream s;
  s.max_len = max_len;
  s.tokens = lex(text);
  s.ids.reserve(s.tokens.size());
  for (const Token& t : s.tokens) s.ids.push_back(v.id(t.text));
  int payload = max_len - 1;
  int n = static_cast<int>(s.tokens.size());
  if (n == 0) {
    s.chunks.emplace_back(0, 0);
    return s;
  }
  for (int b = 0; b < n; b += payload) s.chunks.emplace_back(b, std::min(b + payload, n));
  return s;
}

std::vector<int32_t> padded_chunk(const TokenStream& s, int chunk) {
  const auto& [b, e] = s.chunks.at(static_cast<size_t>(chunk));
  std::vector<int32_t> out;
  out.reserve(static_cast<size_t>(s.max_len));
  out.push_back(Vocabulary::kSum);
  for (int i = b; i < e; ++i) out.push_back(s.ids[static_cast<size_t>(i)]);
  out.resize(static_cast<size_t>(s.max_len), Vocabulary::kPad);
  return out;
}

}  // namespace progsg::token
