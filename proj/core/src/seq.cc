#include "binprompt/seq.h"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

namespace binprompt {

namespace {

void check_token(Token t) {
  if (t > 1) throw std::invalid_argument("token must be 0 or 1");
}

void check_enumerable(int length) {
  if (length < 0) throw std::invalid_argument("negative sequence length");
  if (length > kMaxEnumerationLength) {
    throw BudgetError("refusing to enumerate sequences of length " +
                      std::to_string(length) + ": limit is " +
                      std::to_string(kMaxEnumerationLength));
  }
}

}  // namespace

std::ostream& operator<<(std::ostream& os, Counts c) {
  return os << '(' << c.zeros << ',' << c.ones << ')';
}

BitSeq::BitSeq(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
  for (Token t : tokens_) check_token(t);
}

BitSeq BitSeq::parse(std::string_view text) {
  std::vector<Token> tokens;
  tokens.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') {
      throw std::invalid_argument("invalid character in bit string: '" +
                                  std::string(1, c) + "'");
    }
    tokens.push_back(static_cast<Token>(c - '0'));
  }
  BitSeq s;
  s.tokens_ = std::move(tokens);
  return s;
}

BitSeq BitSeq::from_bits(std::uint64_t bits, int length) {
  BitSeq s;
  s.tokens_.resize(length);
  for (int i = 0; i < length; ++i) {
    s.tokens_[i] = static_cast<Token>((bits >> (length - 1 - i)) & 1u);
  }
  return s;
}

BitSeq BitSeq::repeat(Token t, int length) {
  check_token(t);
  BitSeq s;
  s.tokens_.assign(length, t);
  return s;
}

std::uint64_t BitSeq::to_bits() const {
  if (tokens_.size() > 64) throw std::length_error("sequence longer than 64 tokens");
  std::uint64_t bits = 0;
  for (Token t : tokens_) bits = (bits << 1) | t;
  return bits;
}

void BitSeq::push_back(Token t) {
  check_token(t);
  tokens_.push_back(t);
}

BitSeq BitSeq::concat(const BitSeq& other) const {
  BitSeq s = *this;
  s.tokens_.insert(s.tokens_.end(), other.tokens_.begin(), other.tokens_.end());
  return s;
}

BitSeq BitSeq::complement() const {
  BitSeq s = *this;
  for (Token& t : s.tokens_) t ^= 1u;
  return s;
}

BitSeq BitSeq::prefix(int n) const {
  BitSeq s;
  s.tokens_.assign(tokens_.begin(), tokens_.begin() + std::min<std::size_t>(n, size()));
  return s;
}

std::string BitSeq::str() const {
  std::string out(tokens_.size(), '0');
  for (std::size_t i = 0; i < tokens_.size(); ++i) out[i] = static_cast<char>('0' + tokens_[i]);
  return out;
}

std::strong_ordering operator<=>(const BitSeq& a, const BitSeq& b) {
  return std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
}

std::ostream& operator<<(std::ostream& os, const BitSeq& s) { return os << s.str(); }

Counts counts(std::span<const Token> tokens) {
  Counts c;
  for (Token t : tokens) {
    if (t) {
      ++c.ones;
    } else {
      ++c.zeros;
    }
  }
  return c;
}

SequenceRange::SequenceRange(int length) : length_(length) { check_enumerable(length); }

SequenceRange enumerate_sequences(int length) { return SequenceRange(length); }

PromptRange::PromptRange(int min_length, int max_length)
    : min_length_(min_length), max_length_(max_length) {
  if (min_length < 0 || max_length < min_length) {
    throw std::invalid_argument("invalid prompt length range");
  }
  check_enumerable(max_length);
}

std::uint64_t PromptRange::size() const {
  std::uint64_t n = 0;
  for (int l = min_length_; l <= max_length_; ++l) n += std::uint64_t{1} << l;
  return n;
}

PromptRange enumerate_prompts_up_to(int max_length, bool include_empty) {
  if (max_length < 1) throw std::invalid_argument("Lmax must be at least 1");
  return PromptRange(include_empty ? 0 : 1, max_length);
}

std::vector<Counts> enumerate_count_pairs(int min_length, int max_length) {
  if (min_length < 0 || max_length < min_length) {
    throw std::invalid_argument("invalid count-pair length range");
  }
  std::vector<Counts> out;
  for (int len = min_length; len <= max_length; ++len) {
    for (int ones = 0; ones <= len; ++ones) out.push_back({len - ones, ones});
  }
  return out;
}

void TaskDataset::check() const {
  if (sequences.empty()) throw std::invalid_argument("dataset must hold at least one sequence");
  for (const auto& s : sequences) {
    if (s.length() != seq_len) throw std::invalid_argument("dataset sequences differ in length");
  }
}

void write_dataset(std::ostream& os, const TaskDataset& data) {
  data.check();
  os << "T=" << data.seq_len << " N=" << data.size() << " seed=" << data.source_seed << '\n';
  for (const auto& s : data.sequences) os << s.str() << '\n';
}

TaskDataset read_dataset(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::invalid_argument("dataset: missing header");
  TaskDataset data;
  std::size_t n = 0;
  std::istringstream hs(header);
  std::string field;
  int seen = 0;
  while (hs >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("dataset: malformed header field " + field);
    auto key = field.substr(0, eq);
    auto value = field.substr(eq + 1);
    if (key == "T") {
      data.seq_len = std::stoi(value);
    } else if (key == "N") {
      n = std::stoull(value);
    } else if (key == "seed") {
      data.source_seed = std::stoull(value);
    } else {
      throw std::invalid_argument("dataset: unknown header key " + key);
    }
    ++seen;
  }
  if (seen != 3) throw std::invalid_argument("dataset: header needs T, N and seed");
  std::string line;
  while (data.sequences.size() < n && std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    data.sequences.push_back(BitSeq::parse(line));
  }
  if (data.sequences.size() != n) throw std::invalid_argument("dataset: fewer sequences than N");
  data.check();
  return data;
}

}  // namespace binprompt
