#pragma once

// The five deterministic tasks: generators, exact scoring, shift primitives.
//
// Two task families:
//   prior-dominated   counting, shift-cipher, acronym — answers overlap the
//                     skewed unigram distribution (round numbers, common words)
//   prior-insensitive multiplication, make-letters — answers are uniformly
//                     unlikely strings
//
// Scoring is exact match after light normalization. Token boundaries are an
// artifact of the toy vocabulary, so word tasks (cipher, acronym) compare
// with internal spaces removed and case folded; numeric and sequence tasks
// compare the rendered string exactly ("2 3" never equals "23").

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "priorlens/templates.hpp"
#include "priorlens/vocab.hpp"

namespace priorlens {

enum class TaskKind : uint8_t { Counting, ShiftCipher, Acronym, Multiplication, MakeLetters };

inline constexpr TaskKind kAllTasks[] = {TaskKind::Counting, TaskKind::ShiftCipher,
                                         TaskKind::Acronym, TaskKind::Multiplication,
                                         TaskKind::MakeLetters};

std::string task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);  // throws UsageError
bool prior_dominated(TaskKind kind);

enum class Commonness : uint8_t { Common, Uncommon, NA };
std::string commonness_name(Commonness c);

struct TaskInstance {
  TaskKind kind{};
  std::vector<int32_t> prompt;  // includes <s> ... =>
  std::vector<int32_t> gold;    // answer tokens only, no specials
  std::string answer_key;       // canonical answer string (lowercase)
  Commonness commonness = Commonness::NA;
  int difficulty = 0;  // counting/make-letters: n; cipher: shift; acronym: word count
  uint64_t seed = 0;
  std::string id;  // content hash over (kind, prompt, gold, seed)
};

// --- shift-cipher primitives -------------------------------------------
// Encoding shifts every letter forward by n (mod 26); decoding shifts back.
// The cipher is presented to the model; the gold answer is the plaintext,
// so decode(ciphertext, n) recovers it: decode("bqqmf", 1) == "apple".
std::string shift_encode(const std::string& word, int n);  // throws UsageError
std::string shift_decode(const std::string& cipher, int n);

// --- generators ----------------------------------------------------------

TaskInstance gen_counting(const Vocab& v, const PromptTemplates& t, int n, char letter,
                          uint64_t seed = 0);
// word must be an answer word of the vocabulary; shift n in [1,25].
TaskInstance gen_shift_cipher(const Vocab& v, const PromptTemplates& t, const std::string& word,
                              int n, uint64_t seed = 0);
// 3..5 words; gold = concatenated initials (an answer-word token pair when
// the acronym is in the vocabulary, letter tokens otherwise).
TaskInstance gen_acronym(const Vocab& v, const PromptTemplates& t,
                         const std::vector<std::string>& words, uint64_t seed = 0);
TaskInstance gen_multiplication(const Vocab& v, const PromptTemplates& t, int a, int b,
                                uint64_t seed = 0);
TaskInstance gen_make_letters(const Vocab& v, const PromptTemplates& t, int n, char letter,
                              uint64_t seed = 0);

// Synthetic capitalized-word analogs for an acronym target: one filler word
// per target letter, each starting with that letter.
std::vector<std::string> make_acronym_words(const std::string& target, std::mt19937_64& rng);

// Three-digit operand pair, optionally rejection-sampled so the product's
// digits sit in one pool ({0..4} with low_pool_share, else {5..9}).
std::pair<int, int> sample_mult_operands(std::mt19937_64& rng, bool digit_pools,
                                         double low_pool_share);

// The tokens an answer can begin with: numbers for counting, word prefixes
// for cipher/acronym, leading digits for products, letters for make-letters.
// This is the ranking domain for prior elicitation.
std::vector<int32_t> answer_first_tokens(const Vocab& v, TaskKind kind);

// --- batch generation ------------------------------------------------------

struct TaskSetOptions {
  int count = 100;
  uint64_t seed = 0;
  // Multiplication instances are drawn so every product's digits fall in one
  // of two disjoint digit pools ({0..4} / {5..9}); without this, products
  // share digits so heavily that no stratified split exists.
  bool mult_digit_pools = true;
  double mult_low_pool_share = 0.8;  // share of instances from the {0..4} pool
};

std::vector<TaskInstance> gen_task_set(const Vocab& v, const PromptTemplates& t, TaskKind kind,
                                       const TaskSetOptions& opt);

// --- scoring ----------------------------------------------------------------

// Strips a leading answer marker and everything from the first stop token,
// decodes, normalizes, compares with the instance's answer key.
bool score(std::span<const int32_t> response, const TaskInstance& inst, const Vocab& v);
std::string normalize_answer(TaskKind kind, const std::string& text);

std::string instance_hash(const TaskInstance& inst);

}  // namespace priorlens
