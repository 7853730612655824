#include "priorlens/tasks.hpp"

#include <algorithm>
#include <cctype>

namespace priorlens {

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Counting: return "counting";
    case TaskKind::ShiftCipher: return "shift-cipher";
    case TaskKind::Acronym: return "acronym";
    case TaskKind::Multiplication: return "multiplication";
    case TaskKind::MakeLetters: return "make-letters";
  }
  throw UsageError("bad task kind");
}

TaskKind task_from_name(const std::string& name) {
  for (TaskKind k : kAllTasks)
    if (task_name(k) == name) return k;
  throw UsageError(cat("unknown task '", name,
                       "'; expected counting, shift-cipher, acronym, multiplication, "
                       "or make-letters"));
}

bool prior_dominated(TaskKind kind) {
  return kind == TaskKind::Counting || kind == TaskKind::ShiftCipher || kind == TaskKind::Acronym;
}

std::string commonness_name(Commonness c) {
  switch (c) {
    case Commonness::Common: return "common";
    case Commonness::Uncommon: return "uncommon";
    case Commonness::NA: return "n/a";
  }
  throw UsageError("bad commonness");
}

// --- shift primitives ----------------------------------------------------

namespace {

std::string shift_by(const std::string& s, int delta, int n) {
  if (n < 1 || n > 25) throw UsageError(cat("shift ", n, " outside [1,25]"));
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c < 'a' || c > 'z') throw UsageError(cat("'", s, "' contains non-letter character"));
    out.push_back(static_cast<char>('a' + ((c - 'a') + delta * n + 26 * 26) % 26));
  }
  return out;
}

}  // namespace

std::string shift_encode(const std::string& word, int n) { return shift_by(word, +1, n); }
std::string shift_decode(const std::string& cipher, int n) { return shift_by(cipher, -1, n); }

// --- helpers --------------------------------------------------------------

std::string instance_hash(const TaskInstance& inst) {
  uint64_t h = fnv1a64(task_name(inst.kind));
  auto mix_ids = [&h](const std::vector<int32_t>& v) {
    for (int32_t x : v) h = fnv1a64_bytes(&x, sizeof(x), h);
  };
  mix_ids(inst.prompt);
  mix_ids(inst.gold);
  h = fnv1a64_bytes(&inst.seed, sizeof(inst.seed), h);
  return hash_hex(h);
}

namespace {

TaskInstance finish(TaskInstance inst) {
  inst.id = instance_hash(inst);
  return inst;
}

std::vector<int32_t> letters_of(const Vocab& v, const std::string& s) {
  std::vector<int32_t> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(v.letter_id(c));
  return out;
}

std::vector<int32_t> digits_of(const Vocab& v, long long value) {
  std::string s = std::to_string(value);
  std::vector<int32_t> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(v.digit_id(c));
  return out;
}

bool round_number(int n) { return n >= 20 && n <= 100 && n % 10 == 0; }

}  // namespace

// --- generators -----------------------------------------------------------

TaskInstance gen_counting(const Vocab& v, const PromptTemplates& t, int n, char letter,
                          uint64_t seed) {
  if (n < 1 || n > 100) throw UsageError(cat("counting length ", n, " outside [1,100]"));
  TaskInstance inst;
  inst.kind = TaskKind::Counting;
  inst.prompt = render_pattern(t.counting, v,
                               {{"{seq}", std::vector<int32_t>(n, v.letter_id(letter))}});
  inst.gold = {v.number_id(n)};
  inst.answer_key = std::to_string(n);
  inst.commonness = round_number(n) ? Commonness::Common : Commonness::Uncommon;
  inst.difficulty = n;
  inst.seed = seed;
  return finish(std::move(inst));
}

TaskInstance gen_shift_cipher(const Vocab& v, const PromptTemplates& t, const std::string& word,
                              int n, uint64_t seed) {
  const WordEntry* e = v.find_word(word);
  if (!e) throw UsageError(cat("'", word, "' is not an answer word in the vocabulary"));
  const std::string cipher = shift_encode(word, n);  // validates word and n
  TaskInstance inst;
  inst.kind = TaskKind::ShiftCipher;
  inst.prompt = render_pattern(t.shift_cipher, v,
                               {{"{n}", {v.number_id(n)}}, {"{seq}", letters_of(v, cipher)}});
  inst.gold = {e->prefix_id, e->suffix_id};
  inst.answer_key = word;
  inst.commonness = e->common ? Commonness::Common : Commonness::Uncommon;
  inst.difficulty = n;
  inst.seed = seed;
  return finish(std::move(inst));
}

TaskInstance gen_acronym(const Vocab& v, const PromptTemplates& t,
                         const std::vector<std::string>& words, uint64_t seed) {
  if (words.size() < 3 || words.size() > 5)
    throw UsageError(cat("acronym needs 3..5 words, got ", words.size()));
  std::string target;
  std::vector<int32_t> seq;
  for (size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    if (w.empty()) throw UsageError("empty word in acronym");
    if (!std::isalpha(static_cast<unsigned char>(w[0])))
      throw UsageError(cat("word '", w, "' does not start with a letter"));
    std::string lower;
    for (char c : w) {
      const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (lc < 'a' || lc > 'z') throw UsageError(cat("word '", w, "' has non-letter characters"));
      lower.push_back(lc);
    }
    target.push_back(lower[0]);
    if (i) seq.push_back(v.id(","));
    auto ids = letters_of(v, lower);
    seq.insert(seq.end(), ids.begin(), ids.end());
  }
  TaskInstance inst;
  inst.kind = TaskKind::Acronym;
  inst.prompt = render_pattern(t.acronym, v, {{"{seq}", seq}});
  // Case is not representable in the toy vocabulary; the canonical answer is
  // the lowercase initials, and scoring folds case.
  inst.answer_key = target;
  if (const WordEntry* e = v.find_word(target)) {
    inst.gold = {e->prefix_id, e->suffix_id};
    inst.commonness = e->common ? Commonness::Common : Commonness::Uncommon;
  } else {
    inst.gold = letters_of(v, target);
    inst.commonness = Commonness::NA;
  }
  inst.difficulty = static_cast<int>(words.size());
  inst.seed = seed;
  return finish(std::move(inst));
}

TaskInstance gen_multiplication(const Vocab& v, const PromptTemplates& t, int a, int b,
                                uint64_t seed) {
  if (a < 100 || a > 999 || b < 100 || b > 999)
    throw UsageError(cat("operands must be three-digit integers, got ", a, " and ", b));
  TaskInstance inst;
  inst.kind = TaskKind::Multiplication;
  inst.prompt = render_pattern(t.multiplication, v,
                               {{"{a}", digits_of(v, a)}, {"{b}", digits_of(v, b)}});
  const long long prod = static_cast<long long>(a) * b;
  inst.gold = digits_of(v, prod);
  inst.answer_key = std::to_string(prod);
  inst.commonness = Commonness::NA;
  inst.difficulty = 0;
  inst.seed = seed;
  return finish(std::move(inst));
}

TaskInstance gen_make_letters(const Vocab& v, const PromptTemplates& t, int n, char letter,
                              uint64_t seed) {
  if (n < 1 || n > 100) throw UsageError(cat("length ", n, " outside [1,100]"));
  TaskInstance inst;
  inst.kind = TaskKind::MakeLetters;
  inst.prompt = render_pattern(t.make_letters, v,
                               {{"{n}", {v.number_id(n)}}, {"{letter}", {v.letter_id(letter)}}});
  inst.gold = std::vector<int32_t>(static_cast<size_t>(n), v.letter_id(letter));
  std::string key(1, letter);
  for (int i = 1; i < n; ++i) {
    key += ' ';
    key += letter;
  }
  inst.answer_key = key;
  inst.commonness = Commonness::NA;
  inst.difficulty = n;
  inst.seed = seed;
  return finish(std::move(inst));
}

std::vector<std::string> make_acronym_words(const std::string& target, std::mt19937_64& rng) {
  std::vector<std::string> out;
  std::uniform_int_distribution<int> len(3, 6);
  std::uniform_int_distribution<int> pick(0, 25);
  for (char c : target) {
    std::string w(1, c);
    const int extra = len(rng);
    for (int i = 0; i < extra; ++i) w.push_back(static_cast<char>('a' + pick(rng)));
    out.push_back(w);
  }
  return out;
}

// --- batch generation --------------------------------------------------------

namespace {

bool digits_in_pool(long long value, bool low_pool) {
  for (std::string s = std::to_string(value); char c : s) {
    const int d = c - '0';
    if (low_pool ? d > 4 : d < 5) return false;
  }
  return true;
}

}  // namespace

std::pair<int, int> sample_mult_operands(std::mt19937_64& rng, bool digit_pools,
                                         double low_pool_share) {
  std::uniform_int_distribution<int> u_operand(100, 999);
  if (!digit_pools) return {u_operand(rng), u_operand(rng)};
  const bool low = std::uniform_real_distribution<double>(0, 1)(rng) < low_pool_share;
  int a, b;
  do {
    a = u_operand(rng);
    b = u_operand(rng);
  } while (!digits_in_pool(static_cast<long long>(a) * b, low));
  return {a, b};
}

std::vector<int32_t> answer_first_tokens(const Vocab& v, TaskKind kind) {
  std::vector<int32_t> ids;
  const auto word_prefixes = [&](WordClass k) {
    for (const WordEntry* w : v.words_of(k))
      if (std::find(ids.begin(), ids.end(), w->prefix_id) == ids.end())
        ids.push_back(w->prefix_id);
  };
  switch (kind) {
    case TaskKind::Counting:
      for (int n = 1; n <= 100; ++n) ids.push_back(v.number_id(n));
      break;
    case TaskKind::ShiftCipher:
      word_prefixes(WordClass::Cipher);
      break;
    case TaskKind::Acronym:
      word_prefixes(WordClass::Acronym);
      break;
    case TaskKind::Multiplication:
      // Products never start with 0.
      for (char c = '1'; c <= '9'; ++c) ids.push_back(v.digit_id(c));
      break;
    case TaskKind::MakeLetters:
      for (char c = 'a'; c <= 'z'; ++c) ids.push_back(v.letter_id(c));
      break;
  }
  return ids;
}

std::vector<TaskInstance> gen_task_set(const Vocab& v, const PromptTemplates& t, TaskKind kind,
                                       const TaskSetOptions& opt) {
  if (opt.count <= 0) throw UsageError("task set count must be positive");
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<int> u_n(1, 100);
  std::uniform_int_distribution<int> u_letter(0, 25);
  std::uniform_int_distribution<int> u_shift(1, 25);

  auto cipher_words = v.words_of(WordClass::Cipher);
  auto acronym_words = v.words_of(WordClass::Acronym);
  if (kind == TaskKind::ShiftCipher && cipher_words.empty())
    throw UsageError("vocabulary has no cipher answer words");
  if (kind == TaskKind::Acronym && acronym_words.empty())
    throw UsageError("vocabulary has no acronym answer words");

  std::vector<TaskInstance> out;
  out.reserve(static_cast<size_t>(opt.count));
  for (int i = 0; i < opt.count; ++i) {
    const uint64_t inst_seed = opt.seed * 1000003ull + static_cast<uint64_t>(i);
    switch (kind) {
      case TaskKind::Counting:
        out.push_back(gen_counting(v, t, u_n(rng), static_cast<char>('a' + u_letter(rng)),
                                   inst_seed));
        break;
      case TaskKind::ShiftCipher: {
        const auto* w = cipher_words[rng() % cipher_words.size()];
        out.push_back(gen_shift_cipher(v, t, w->word, u_shift(rng), inst_seed));
        break;
      }
      case TaskKind::Acronym: {
        const auto* w = acronym_words[rng() % acronym_words.size()];
        out.push_back(gen_acronym(v, t, make_acronym_words(w->word, rng), inst_seed));
        break;
      }
      case TaskKind::Multiplication: {
        auto [a, b] = sample_mult_operands(rng, opt.mult_digit_pools, opt.mult_low_pool_share);
        out.push_back(gen_multiplication(v, t, a, b, inst_seed));
        break;
      }
      case TaskKind::MakeLetters:
        out.push_back(gen_make_letters(v, t, u_n(rng), static_cast<char>('a' + u_letter(rng)),
                                       inst_seed));
        break;
    }
  }
  return out;
}

// --- scoring -------------------------------------------------------------------

std::string normalize_answer(TaskKind kind, const std::string& text) {
  size_t b = text.find_first_not_of(" \t\n");
  size_t e = text.find_last_not_of(" \t\n");
  if (b == std::string::npos) return "";
  std::string s = text.substr(b, e - b + 1);
  if (kind == TaskKind::ShiftCipher || kind == TaskKind::Acronym) {
    std::string out;
    for (char c : s)
      if (c != ' ') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
  }
  return s;
}

bool score(std::span<const int32_t> response, const TaskInstance& inst, const Vocab& v) {
  std::vector<int32_t> kept;
  size_t start = 0;
  if (!response.empty() && response[0] == v.ans()) start = 1;
  for (size_t i = start; i < response.size(); ++i) {
    const int32_t id = response[i];
    if (id == v.eos() || id == v.pad()) break;
    kept.push_back(id);
  }
  std::string text;
  try {
    text = v.decode(kept);
  } catch (const Error&) {
    return false;  // undecodable ids never score
  }
  return normalize_answer(inst.kind, text) == normalize_answer(inst.kind, inst.answer_key);
}

}  // namespace priorlens
