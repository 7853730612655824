#include "priorlens/templates.hpp"

#include <fstream>

#include "json.hpp"

namespace priorlens {

using nlohmann::json;

PromptTemplates PromptTemplates::v1() {
  PromptTemplates t;
  t.version = "v1";
  t.counting = {"<s>", "count", ":", "{seq}", "=>"};
  t.shift_cipher = {"<s>", "shift", "{n}", ":", "{seq}", "=>"};
  t.acronym = {"<s>", "acronym", ":", "{seq}", "=>"};
  t.multiplication = {"<s>", "multiply", ":", "{a}", "*", "{b}", "=>"};
  t.make_letters = {"<s>", "write", "{n}", "{letter}", "=>"};
  t.instruction = {"do", "not", "rely", "on", "your", "prior", "knowledge"};
  t.instruction_cipher = {"do",    "not",       "rely", "on",  "your",
                          "prior", "knowledge", "on",   "the", "output"};
  t.spelling = {"spell", ":", "{letters}", "is", "{word}"};
  t.number_mention = {"num", ":", "{numbers}"};
  return t;
}

namespace {

void put(json& j, const char* key, const TokenPattern& p) { j[key] = p; }

TokenPattern get_pattern(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || !j[key].is_array())
    throw LoadError(cat(path, ": missing or non-array field '", key, "'"));
  return j[key].get<TokenPattern>();
}

}  // namespace

PromptTemplates PromptTemplates::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(cat("cannot open template file ", path));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError(cat(path, ": ", e.what()));
  }
  PromptTemplates t;
  if (!j.contains("version") || !j["version"].is_string())
    throw LoadError(cat(path, ": missing string field 'version'"));
  t.version = j["version"].get<std::string>();
  t.counting = get_pattern(j, "counting", path);
  t.shift_cipher = get_pattern(j, "shift_cipher", path);
  t.acronym = get_pattern(j, "acronym", path);
  t.multiplication = get_pattern(j, "multiplication", path);
  t.make_letters = get_pattern(j, "make_letters", path);
  t.instruction = get_pattern(j, "instruction", path);
  t.instruction_cipher = get_pattern(j, "instruction_cipher", path);
  t.spelling = get_pattern(j, "spelling", path);
  t.number_mention = get_pattern(j, "number_mention", path);
  return t;
}

void PromptTemplates::save(const std::string& path) const {
  json j;
  j["version"] = version;
  put(j, "counting", counting);
  put(j, "shift_cipher", shift_cipher);
  put(j, "acronym", acronym);
  put(j, "multiplication", multiplication);
  put(j, "make_letters", make_letters);
  put(j, "instruction", instruction);
  put(j, "instruction_cipher", instruction_cipher);
  put(j, "spelling", spelling);
  put(j, "number_mention", number_mention);
  std::ofstream out(path);
  if (!out) throw LoadError(cat("cannot write template file ", path));
  out << j.dump(2) << "\n";
}

std::vector<int32_t> render_pattern(const TokenPattern& pattern, const Vocab& vocab,
                                    const std::map<std::string, std::vector<int32_t>>& slots) {
  std::vector<int32_t> out;
  for (const auto& item : pattern) {
    if (item.size() >= 2 && item.front() == '{' && item.back() == '}') {
      auto it = slots.find(item);
      if (it == slots.end()) throw UsageError(cat("unfilled template slot ", item));
      out.insert(out.end(), it->second.begin(), it->second.end());
    } else {
      out.push_back(vocab.id(item));
    }
  }
  return out;
}

TokenPattern guess_variant(const TokenPattern& pattern) {
  TokenPattern out;
  bool prev_guess = false;
  for (const auto& item : pattern) {
    const bool slot = item.size() >= 2 && item.front() == '{' && item.back() == '}';
    if (slot) {
      // Collapse adjacent placeholders ({a} * {b} -> guess) so the guess
      // prompt carries no structural hints about the withheld input.
      if (!prev_guess) out.push_back("guess");
      prev_guess = true;
    } else {
      if (prev_guess && (item == "*" || item == ",")) continue;
      out.push_back(item);
      prev_guess = false;
    }
  }
  return out;
}

}  // namespace priorlens
