#include "priorlens/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace priorlens {

namespace {

const char* const kKeywords[] = {
    "count", "shift", "acronym", "multiply", "write", "spell", "num",
    "guess", "is",    ",",       ":",        "*",     "?",
    "do",    "not",   "rely",    "on",       "your",  "prior", "knowledge",
    "the",   "output",
};

bool all_lower_alpha(const std::string& w) {
  return !w.empty() &&
         std::all_of(w.begin(), w.end(), [](unsigned char c) { return c >= 'a' && c <= 'z'; });
}

}  // namespace

void WordList::validate() const {
  if (common.empty() && uncommon.empty()) return;
  for (const auto* set : {&common, &uncommon})
    for (const auto& w : *set) {
      if (!all_lower_alpha(w))
        throw ConstructionError(cat("word '", w, "' is not lowercase a-z"));
      const int len = static_cast<int>(w.size());
      if (len < min_len || len > max_len)
        throw ConstructionError(cat("word '", w, "' has length ", len, ", expected ",
                                    min_len, "..", max_len));
      if (len < 2) throw ConstructionError(cat("word '", w, "' cannot split into two pieces"));
    }
  for (const auto& c : common)
    if (std::find(uncommon.begin(), uncommon.end(), c) != uncommon.end())
      throw ConstructionError(cat("word '", c, "' appears in both common and uncommon sets"));
  auto dup = [](const std::vector<std::string>& v) -> const std::string* {
    for (size_t i = 0; i < v.size(); ++i)
      for (size_t j = i + 1; j < v.size(); ++j)
        if (v[i] == v[j]) return &v[i];
    return nullptr;
  };
  if (const auto* d = dup(common)) throw ConstructionError(cat("duplicate word '", *d, "'"));
  if (const auto* d = dup(uncommon)) throw ConstructionError(cat("duplicate word '", *d, "'"));
}

std::pair<std::string, std::string> Vocab::split_word(const std::string& w) {
  const size_t k = (w.size() + 1) / 2;
  return {w.substr(0, k), w.substr(k)};
}

int32_t Vocab::add(const std::string& tok, uint8_t flag) {
  auto it = ids_.find(tok);
  if (it != ids_.end()) {
    // Legal collisions: a word piece spelling a single letter or another
    // word's identical piece, and the single-digit numbers "1".."9".
    const uint8_t existing = flags_[static_cast<size_t>(it->second)];
    const bool piece_on_letter =
        (flag & (kFlagWordPrefix | kFlagWordSuffix)) && (existing & kFlagLetter);
    const bool piece_on_piece =
        (flag & (kFlagWordPrefix | kFlagWordSuffix)) &&
        (existing & (kFlagWordPrefix | kFlagWordSuffix));
    const bool number_on_digit = (flag & kFlagNumber) && (existing & kFlagDigit);
    if (!piece_on_letter && !piece_on_piece && !number_on_digit)
      throw ConstructionError(cat("token '", tok, "' already present with a conflicting role"));
    flags_[static_cast<size_t>(it->second)] |= flag;
    return it->second;
  }
  tokens_.push_back(tok);
  flags_.push_back(flag);
  const int32_t id = static_cast<int32_t>(tokens_.size() - 1);
  ids_.emplace(tok, id);
  return id;
}

Vocab Vocab::build(const WordList& cipher_words, const WordList& acronym_words) {
  cipher_words.validate();
  acronym_words.validate();
  for (const auto& c : cipher_words.common)
    for (const auto& a : acronym_words.common)
      if (c == a) throw ConstructionError(cat("word '", c, "' appears in two lists"));

  Vocab v;
  v.pad_ = v.add("<pad>", kFlagSpecial);
  v.bos_ = v.add("<s>", kFlagSpecial);
  v.eos_ = v.add("</s>", kFlagSpecial);
  v.ans_ = v.add("=>", kFlagSpecial);
  for (const char* k : kKeywords) v.add(k, kFlagKeyword);
  v.first_letter_ = v.size();
  for (char c = 'a'; c <= 'z'; ++c) v.add(std::string(1, c), kFlagLetter);
  for (char c = '0'; c <= '9'; ++c) v.digit_ids_.push_back(v.add(std::string(1, c), kFlagDigit));
  for (int n = 1; n <= 100; ++n) v.number_ids_.push_back(v.add(std::to_string(n), kFlagNumber));

  auto add_words = [&v](const WordList& list, WordClass klass) {
    auto add_set = [&](const std::vector<std::string>& set, bool common) {
      for (const auto& w : set) {
        if (v.word_index_.count(w))
          throw ConstructionError(cat("word '", w, "' appears in two lists"));
        auto [pre, suf] = split_word(w);
        WordEntry e;
        e.word = w;
        e.prefix_id = v.add(pre, kFlagWordPrefix);
        e.suffix_id = v.add(suf, kFlagWordSuffix);
        e.common = common;
        e.klass = klass;
        v.word_index_.emplace(w, v.words_.size());
        v.words_.push_back(std::move(e));
      }
    };
    add_set(list.common, true);
    add_set(list.uncommon, false);
  };
  add_words(cipher_words, WordClass::Cipher);
  add_words(acronym_words, WordClass::Acronym);

  if (v.size() >= 1024)
    throw ConstructionError(cat("vocabulary has ", v.size(), " tokens; limit is 1023"));
  return v;
}

Vocab Vocab::standard() {
  WordList cipher;
  cipher.common = {"hirdaji", "cikesih", "fuwtigo", "cubwewi", "fimpipo", "busucuf",
                   "zibiqoz", "rusujku", "kusdaro", "jakipvu", "ropeqpu", "nuwenze",
                   "gifirri", "dubfame", "bozigiv", "gafanek", "hobcoqo", "buvodcu",
                   "gulbawa", "qujseza", "doropju", "tuqjaka", "bampasa", "folinto"};
  cipher.uncommon = {"zoderhe", "polucis", "jiljotu", "gedewqe", "zukamid", "sorehdu",
                     "kewovat", "nackewu", "pijiqur", "guwojud", "sunerul", "gamnoju",
                     "qozqamu", "higazed", "dagfuro", "kaqfecu", "gehimqa", "cafdewe",
                     "wagjezi", "pebmiwo", "pujamal", "qeguzdi", "bihozof", "ziksani"};
  WordList acronym;
  acronym.min_len = 3;
  acronym.max_len = 5;
  acronym.common = {"cat", "pid", "begi", "holo", "ziki", "dem", "zar", "bobal",
                    "meqa", "sejaz", "sawo", "taded", "juk", "fokej", "ratuh", "ziqit"};
  acronym.uncommon = {"gumav", "merok", "daka", "hidaj", "wuso", "cuvo", "lah", "vupiv",
                      "hen", "gele", "tejo", "wamuq", "waq", "siw", "dumu", "qez"};
  return build(cipher, acronym);
}

const std::string& Vocab::token(int32_t id) const {
  if (id < 0 || id >= size()) throw IndexError(cat("token id ", id, " out of range [0,", size(), ")"));
  return tokens_[static_cast<size_t>(id)];
}

int32_t Vocab::id(const std::string& tok) const {
  auto it = ids_.find(tok);
  if (it == ids_.end()) throw IndexError(cat("unknown token '", tok, "'"));
  return it->second;
}

std::optional<int32_t> Vocab::try_id(const std::string& tok) const {
  auto it = ids_.find(tok);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

uint8_t Vocab::flags(int32_t id) const {
  if (id < 0 || id >= size()) throw IndexError(cat("token id ", id, " out of range [0,", size(), ")"));
  return flags_[static_cast<size_t>(id)];
}

int32_t Vocab::letter_id(char c) const {
  if (c < 'a' || c > 'z') throw IndexError(cat("'", std::string(1, c), "' is not a lowercase letter"));
  return first_letter_ + (c - 'a');
}

int32_t Vocab::digit_id(char c) const {
  if (c < '0' || c > '9') throw IndexError(cat("'", std::string(1, c), "' is not a digit"));
  return digit_ids_[static_cast<size_t>(c - '0')];
}

int32_t Vocab::number_id(int value) const {
  if (value < 1 || value > 100) throw IndexError(cat("number ", value, " outside [1,100]"));
  return number_ids_[static_cast<size_t>(value - 1)];
}

const WordEntry* Vocab::find_word(const std::string& w) const {
  auto it = word_index_.find(w);
  return it == word_index_.end() ? nullptr : &words_[it->second];
}

std::vector<const WordEntry*> Vocab::words_of(WordClass klass) const {
  std::vector<const WordEntry*> out;
  for (const auto& e : words_)
    if (e.klass == klass) out.push_back(&e);
  return out;
}

std::vector<const WordEntry*> Vocab::words_of(WordClass klass, bool common) const {
  std::vector<const WordEntry*> out;
  for (const auto& e : words_)
    if (e.klass == klass && e.common == common) out.push_back(&e);
  return out;
}

std::pair<int32_t, int32_t> Vocab::word_pieces(const std::string& w) const {
  const WordEntry* e = find_word(w);
  if (!e) throw IndexError(cat("'", w, "' is not an answer word"));
  return {e->prefix_id, e->suffix_id};
}

std::string Vocab::decode(std::span<const int32_t> ids) const {
  std::string out;
  uint8_t prev = 0;
  bool first = true;
  for (int32_t id : ids) {
    const uint8_t f = flags(id);
    const bool glue = ((prev & kFlagDigit) && (f & kFlagDigit)) ||
                      ((prev & kFlagWordPrefix) && (f & kFlagWordSuffix));
    if (!first && !glue) out += ' ';
    out += tokens_[static_cast<size_t>(id)];
    prev = f;
    first = false;
  }
  return out;
}

uint64_t Vocab::hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

}  // namespace priorlens
