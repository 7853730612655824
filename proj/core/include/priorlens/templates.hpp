#pragma once

// Prompt templates, versioned. Patterns are token lists; "{...}" entries are
// placeholders filled at render time. The v1 set is embedded in the library
// and also shipped as templates/prompts_v1.json; a test pins file == code.
//
// The guess variant of each task pattern replaces the task input with the
// literal "guess" token: it elicits the model's answer distribution with the
// input withheld, so only the learned answer prior can drive the logits.

#include <map>
#include <string>
#include <vector>

#include "priorlens/common.hpp"
#include "priorlens/vocab.hpp"

namespace priorlens {

using TokenPattern = std::vector<std::string>;

struct PromptTemplates {
  std::string version;
  TokenPattern counting;        // <s> count : {seq} =>
  TokenPattern shift_cipher;    // <s> shift {n} : {seq} =>
  TokenPattern acronym;         // <s> acronym : {seq} =>
  TokenPattern multiplication;  // <s> multiply : {a} * {b} =>
  TokenPattern make_letters;    // <s> write {n} {letter} =>
  TokenPattern instruction;     // do not rely on your prior knowledge
  TokenPattern instruction_cipher;  // ... on the output (shift-cipher variant)
  TokenPattern spelling;        // spell : {letters} is {word}   (corpus only)
  TokenPattern number_mention;  // num : {numbers}               (corpus only)

  static PromptTemplates v1();
  static PromptTemplates load(const std::string& path);  // throws LoadError
  void save(const std::string& path) const;
  bool operator==(const PromptTemplates&) const = default;
};

// Fills placeholders and maps every literal through the vocabulary.
// Unknown placeholder in the pattern or unfilled slot → UsageError.
std::vector<int32_t> render_pattern(const TokenPattern& pattern, const Vocab& vocab,
                                    const std::map<std::string, std::vector<int32_t>>& slots);

// Same pattern with every placeholder replaced by the "guess" token.
TokenPattern guess_variant(const TokenPattern& pattern);

}  // namespace priorlens
