#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace binprompt {

// A binary symbol. Only 0 and 1 are valid inside a BitSeq.
using Token = std::uint8_t;

// Thrown whenever an enumeration or search would exceed its budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Longest sequence length that may be enumerated exhaustively.
inline constexpr int kMaxEnumerationLength = 24;

struct Counts {
  int zeros = 0;
  int ones = 0;

  int length() const { return zeros + ones; }
  friend auto operator<=>(const Counts&, const Counts&) = default;
};

std::ostream& operator<<(std::ostream& os, Counts c);

class BitSeq {
 public:
  BitSeq() = default;
  explicit BitSeq(std::vector<Token> tokens);

  // Parses a string over {'0','1'}.
  static BitSeq parse(std::string_view text);
  // Token i is bit (length - 1 - i) of `bits`, so integer order is
  // lexicographic order.
  static BitSeq from_bits(std::uint64_t bits, int length);
  static BitSeq repeat(Token t, int length);

  std::uint64_t to_bits() const;

  std::size_t size() const { return tokens_.size(); }
  int length() const { return static_cast<int>(tokens_.size()); }
  bool empty() const { return tokens_.empty(); }
  Token operator[](std::size_t i) const { return tokens_[i]; }
  std::span<const Token> tokens() const { return tokens_; }
  auto begin() const { return tokens_.begin(); }
  auto end() const { return tokens_.end(); }

  void push_back(Token t);
  BitSeq concat(const BitSeq& other) const;
  BitSeq complement() const;
  BitSeq prefix(int n) const;
  std::string str() const;

  friend bool operator==(const BitSeq&, const BitSeq&) = default;
  friend std::strong_ordering operator<=>(const BitSeq& a, const BitSeq& b);

 private:
  std::vector<Token> tokens_;
};

std::ostream& operator<<(std::ostream& os, const BitSeq& s);

Counts counts(std::span<const Token> tokens);
inline Counts counts(const BitSeq& s) { return counts(s.tokens()); }

// All 2^length sequences of one length in lexicographic order.
class SequenceRange {
 public:
  class iterator {
   public:
    using value_type = BitSeq;
    using difference_type = std::ptrdiff_t;
    using iterator_category = std::input_iterator_tag;

    iterator() = default;
    iterator(std::uint64_t index, int length) : index_(index), length_(length) {}
    BitSeq operator*() const { return BitSeq::from_bits(index_, length_); }
    iterator& operator++() {
      ++index_;
      return *this;
    }
    iterator operator++(int) {
      auto old = *this;
      ++index_;
      return old;
    }
    friend bool operator==(const iterator&, const iterator&) = default;

   private:
    std::uint64_t index_ = 0;
    int length_ = 0;
  };

  explicit SequenceRange(int length);
  iterator begin() const { return {0, length_}; }
  iterator end() const { return {size(), length_}; }
  std::uint64_t size() const { return std::uint64_t{1} << length_; }
  int length() const { return length_; }

 private:
  int length_;
};

// Throws BudgetError when length exceeds kMaxEnumerationLength.
SequenceRange enumerate_sequences(int length);

// Every prompt with length in [min_length, max_length], shortest first and
// lexicographic within a length.
class PromptRange {
 public:
  class iterator {
   public:
    using value_type = BitSeq;
    using difference_type = std::ptrdiff_t;
    using iterator_category = std::input_iterator_tag;

    iterator() = default;
    iterator(int length, std::uint64_t index) : length_(length), index_(index) {}
    BitSeq operator*() const { return BitSeq::from_bits(index_, length_); }
    iterator& operator++() {
      if (++index_ == (std::uint64_t{1} << length_)) {
        ++length_;
        index_ = 0;
      }
      return *this;
    }
    iterator operator++(int) {
      auto old = *this;
      ++*this;
      return old;
    }
    friend bool operator==(const iterator&, const iterator&) = default;

   private:
    int length_ = 0;
    std::uint64_t index_ = 0;
  };

  PromptRange(int min_length, int max_length);
  iterator begin() const { return {min_length_, 0}; }
  iterator end() const { return {max_length_ + 1, 0}; }
  std::uint64_t size() const;

 private:
  int min_length_;
  int max_length_;
};

PromptRange enumerate_prompts_up_to(int max_length, bool include_empty = false);

// Every (S0, S1) with min_length <= S0 + S1 <= max_length, ordered by length
// and then by number of ones.
std::vector<Counts> enumerate_count_pairs(int min_length, int max_length);

struct TaskDataset {
  int seq_len = 0;
  std::uint64_t source_seed = 0;
  std::vector<BitSeq> sequences;

  std::size_t size() const { return sequences.size(); }
  // Throws std::invalid_argument on mixed lengths or an empty set.
  void check() const;
};

// Header line `T=<int> N=<int> seed=<int>` followed by one sequence per line.
void write_dataset(std::ostream& os, const TaskDataset& data);
TaskDataset read_dataset(std::istream& is);

}  // namespace binprompt
