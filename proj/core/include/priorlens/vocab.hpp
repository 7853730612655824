#pragma once

// Token vocabulary for the synthetic lab:
//   specials   <pad> <s> </s> =>
//   keywords   count shift acronym multiply write spell num guess is , : * ?
//              do not rely on your prior knowledge
//   letters    a..z          digits 0..9          numbers "1".."100"
//   word pieces: every answer word splits into exactly two tokens,
//              prefix = first ceil(len/2) chars, suffix = the rest.
//
// A word-suffix piece may be the same string as a letter (e.g. "t" from
// "cat"), and the strings "1".."9" are both digits and numbers; such a
// string maps to one token id carrying both roles. Any other collision is a
// construction error.
//
// Rendering: tokens are joined with single spaces except that a digit glues
// to a preceding digit and a word-suffix glues to a preceding word-prefix,
// so "5 6 0 8 8" decodes to "56088" and ("ca","t") decodes to "cat".

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "priorlens/common.hpp"

namespace priorlens {

enum TokenFlag : uint8_t {
  kFlagSpecial = 1,
  kFlagKeyword = 2,
  kFlagLetter = 4,
  kFlagDigit = 8,
  kFlagNumber = 16,
  kFlagWordPrefix = 32,
  kFlagWordSuffix = 64,
};

enum class WordClass : uint8_t { Cipher, Acronym };

struct WordEntry {
  std::string word;
  int32_t prefix_id = -1;
  int32_t suffix_id = -1;
  bool common = false;
  WordClass klass = WordClass::Cipher;
};

// One answer-word list: the common (high-frequency) and uncommon
// (low-frequency) sets must be disjoint and length-constrained.
struct WordList {
  std::vector<std::string> common;
  std::vector<std::string> uncommon;
  int min_len = 7;
  int max_len = 7;

  void validate() const;  // throws ConstructionError
};

class Vocab {
 public:
  // Fixed built-in word lists: 24+24 seven-char cipher words, 16+16
  // three-to-five-char acronym words (including "cat").
  static Vocab standard();
  static Vocab build(const WordList& cipher_words, const WordList& acronym_words);

  int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
  const std::string& token(int32_t id) const;
  int32_t id(const std::string& tok) const;  // throws IndexError if unknown
  std::optional<int32_t> try_id(const std::string& tok) const;
  uint8_t flags(int32_t id) const;

  int32_t pad() const { return pad_; }
  int32_t bos() const { return bos_; }
  int32_t eos() const { return eos_; }
  int32_t ans() const { return ans_; }  // the answer marker "=>"

  int32_t letter_id(char c) const;      // 'a'..'z'
  int32_t digit_id(char c) const;       // '0'..'9'
  int32_t number_id(int value) const;   // 1..100

  const std::vector<WordEntry>& words() const { return words_; }
  const WordEntry* find_word(const std::string& w) const;
  std::vector<const WordEntry*> words_of(WordClass klass) const;
  std::vector<const WordEntry*> words_of(WordClass klass, bool common) const;

  // Word as its two piece tokens.
  std::pair<int32_t, int32_t> word_pieces(const std::string& w) const;

  // Space-joined rendering with the glue rules above; throws IndexError on
  // an out-of-range id.
  std::string decode(std::span<const int32_t> ids) const;

  // FNV-1a over the ordered token table; checkpoints and corpora record it
  // so artifacts built against a different vocabulary are refused.
  uint64_t hash() const;

  // prefix = first ceil(len/2) characters.
  static std::pair<std::string, std::string> split_word(const std::string& w);

 private:
  int32_t add(const std::string& tok, uint8_t flag);

  std::vector<std::string> tokens_;
  std::vector<uint8_t> flags_;
  std::unordered_map<std::string, int32_t> ids_;
  std::vector<WordEntry> words_;
  std::unordered_map<std::string, size_t> word_index_;
  int32_t pad_ = -1, bos_ = -1, eos_ = -1, ans_ = -1;
  int32_t first_letter_ = -1;
  std::vector<int32_t> digit_ids_;   // "0".."9"
  std::vector<int32_t> number_ids_;  // "1".."100"; 1..9 share the digit ids
};

}  // namespace priorlens
