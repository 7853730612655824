#include "priorlens/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <unordered_map>
#include <utility>

namespace priorlens {

namespace {

static_assert(std::endian::native == std::endian::little,
              "corpus token files are little-endian");

double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int64_t uix(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

// One-time CDF over fixed weights; draws by inverse transform.
class WeightedPick {
 public:
  explicit WeightedPick(std::vector<double> w) : cdf_(std::move(w)) {
    double run = 0.0;
    for (double& x : cdf_) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw UsageError("weighted draw: bad weight");
      run += x;
      x = run;
    }
    if (run <= 0.0) throw UsageError("weighted draw: zero total weight");
  }
  size_t operator()(std::mt19937_64& rng) const {
    const double r = u01(rng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), r);
    return std::min(static_cast<size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

// Largest-remainder apportionment: integer counts proportional to w that
// sum to exactly `total`.
std::vector<int64_t> apportion(const std::vector<double>& w, int64_t total) {
  std::vector<int64_t> out(w.size(), 0);
  if (total <= 0 || w.empty()) return out;
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw UsageError("apportion: bad weight");
    sum += x;
  }
  if (sum <= 0.0) throw UsageError("apportion: zero total weight");
  std::vector<std::pair<double, size_t>> rem;
  rem.reserve(w.size());
  int64_t used = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    const double share = static_cast<double>(total) * (w[i] / sum);
    const auto base = static_cast<int64_t>(share);
    out[i] = base;
    used += base;
    rem.emplace_back(share - static_cast<double>(base), i);
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (size_t j = 0; used < total; j = (j + 1) % rem.size()) {
    ++out[rem[j].second];
    ++used;
  }
  return out;
}

std::vector<double> number_weights(double boost) {
  std::vector<double> w(100, 1.0);
  for (int n = 20; n <= 100; n += 10) w[n - 1] += boost;
  return w;
}

std::vector<double> zipf_weights(size_t n, double s) {
  std::vector<double> z(n);
  for (size_t i = 0; i < n; ++i) z[i] = std::pow(static_cast<double>(i + 1), -s);
  return z;
}

// Answer distribution for one word class: common block carries freq_ratio
// times the uncommon block's mass, zipf decay within each block.
struct ClassDist {
  std::vector<const WordEntry*> words;
  std::optional<WeightedPick> pick;

  const WordEntry* draw(std::mt19937_64& rng) const { return words[(*pick)(rng)]; }
  const WordEntry* uniform(std::mt19937_64& rng) const { return words[rng() % words.size()]; }
};

ClassDist make_class_dist(const Vocab& v, WordClass k, double s, double rho) {
  const auto cs = v.words_of(k, true);
  const auto us = v.words_of(k, false);
  if (cs.empty() || us.empty())
    throw ConstructionError("vocabulary is missing common or uncommon answer words");
  ClassDist d;
  std::vector<double> w;
  const auto block = [&](const std::vector<const WordEntry*>& ws, double mass) {
    const auto z = zipf_weights(ws.size(), s);
    double zs = 0.0;
    for (double x : z) zs += x;
    for (size_t i = 0; i < ws.size(); ++i) {
      d.words.push_back(ws[i]);
      w.push_back(mass * z[i] / zs);
    }
  };
  block(cs, rho / (1.0 + rho));
  block(us, 1.0 / (1.0 + rho));
  d.pick.emplace(std::move(w));
  return d;
}

std::string ratio_str(double num, double den) {
  if (den <= 0.0) return "inf";
  return cat(num / den);
}

}  // namespace

void CorpusConfig::validate() const {
  if (budget < 100'000)
    throw ConstructionError(cat("budget ", budget, " is too small; need at least 100000 tokens"));
  if (!(zipf_s >= 0.0 && zipf_s <= 4.0))
    throw ConstructionError(cat("zipf_s ", zipf_s, " outside [0, 4]"));
  if (!(freq_ratio >= 1.0))
    throw ConstructionError(cat("freq_ratio ", freq_ratio, " must be >= 1"));
  if (!(round_boost >= 0.0 && round_boost <= 1000.0))
    throw ConstructionError(cat("round_boost ", round_boost, " outside [0, 1000]"));
  if (!(demo_fraction >= 0.0 && demo_fraction <= 0.9))
    throw ConstructionError(cat("demo_fraction ", demo_fraction, " outside [0, 0.9]"));
  if (!(number_fraction >= 0.0 && number_fraction <= 0.9))
    throw ConstructionError(cat("number_fraction ", number_fraction, " outside [0, 0.9]"));
  if (demo_fraction + number_fraction > 0.9)
    throw ConstructionError(
        cat("demo_fraction + number_fraction = ", demo_fraction + number_fraction,
            " leaves less than 10% of the budget for filler"));
  if (!(guess_share >= 0.0 && guess_share <= 0.5))
    throw ConstructionError(cat("guess_share ", guess_share, " outside [0, 0.5]"));
  if (!(instruction_rate >= 0.0 && instruction_rate <= 0.2))
    throw ConstructionError(cat("instruction_rate ", instruction_rate, " outside [0, 0.2]"));
}

CorpusResult build_corpus(const Vocab& v, const PromptTemplates& t, const CorpusConfig& cfg) {
  cfg.validate();
  if (v.size() > 65535)
    throw ConstructionError(cat("vocabulary of ", v.size(), " tokens overflows u16 storage"));

  std::mt19937_64 rng(cfg.seed);
  const double rho = cfg.freq_ratio;

  const ClassDist cipher_d = make_class_dist(v, WordClass::Cipher, cfg.zipf_s, rho);
  const ClassDist acr_d = make_class_dist(v, WordClass::Acronym, cfg.zipf_s, rho);
  const WeightedPick num_pick(number_weights(cfg.round_boost));
  const auto draw_number = [&] { return static_cast<int>(num_pick(rng)) + 1; };

  // Answer-word mentions emitted by demo/guess docs; the filler quota later
  // tops these up to the target common:uncommon ratio.
  int64_t occ_c = 0, occ_u = 0;
  const auto note = [&](const WordEntry* w) { (w->common ? occ_c : occ_u) += 1; };

  struct Doc {
    std::vector<int32_t> toks;
    int64_t demo = -1;  // index into result.demos, -1 for non-demo docs
  };
  std::vector<Doc> docs;
  CorpusResult res;

  // --- task demonstrations --------------------------------------------------
  const auto demo_budget =
      static_cast<int64_t>(std::llround(cfg.demo_fraction * static_cast<double>(cfg.budget)));
  const auto guess_budget =
      static_cast<int64_t>(std::llround(cfg.guess_share * static_cast<double>(demo_budget)));
  const int64_t std_budget = demo_budget - guess_budget;

  uint64_t demo_seed = cfg.seed;
  int64_t demo_tokens = 0;
  size_t demo_round = 0;
  while (demo_tokens < std_budget) {
    const TaskKind kind = kAllTasks[demo_round++ % std::size(kAllTasks)];
    TaskInstance inst;
    switch (kind) {
      case TaskKind::Counting: {
        const int n = cfg.demo_answer_bias ? draw_number() : static_cast<int>(uix(rng, 1, 100));
        inst = gen_counting(v, t, n, static_cast<char>('a' + uix(rng, 0, 25)), demo_seed++);
        break;
      }
      case TaskKind::ShiftCipher: {
        const WordEntry* w = cfg.demo_answer_bias ? cipher_d.draw(rng) : cipher_d.uniform(rng);
        note(w);
        inst = gen_shift_cipher(v, t, w->word, static_cast<int>(uix(rng, 1, 25)), demo_seed++);
        break;
      }
      case TaskKind::Acronym: {
        const WordEntry* w = cfg.demo_answer_bias ? acr_d.draw(rng) : acr_d.uniform(rng);
        note(w);
        inst = gen_acronym(v, t, make_acronym_words(w->word, rng), demo_seed++);
        break;
      }
      case TaskKind::Multiplication: {
        // Answers are products; the word/number prior has nothing to say
        // about them, so operands are never biased.
        const auto [a, b] = sample_mult_operands(rng, true, 0.8);
        inst = gen_multiplication(v, t, a, b, demo_seed++);
        break;
      }
      case TaskKind::MakeLetters: {
        inst = gen_make_letters(v, t, static_cast<int>(uix(rng, 1, 100)),
                                static_cast<char>('a' + uix(rng, 0, 25)), demo_seed++);
        break;
      }
    }
    Doc d;
    d.toks = inst.prompt;
    d.toks.insert(d.toks.end(), inst.gold.begin(), inst.gold.end());
    d.toks.push_back(v.eos());
    d.demo = static_cast<int64_t>(res.demos.size());
    demo_tokens += static_cast<int64_t>(d.toks.size());
    res.demos.push_back({std::move(inst), 0, static_cast<int64_t>(d.toks.size())});
    docs.push_back(std::move(d));
  }
  res.demo_docs = static_cast<int64_t>(res.demos.size());

  // --- guess docs -------------------------------------------------------
  // Input-withheld prompts answered straight from the skewed answer
  // distribution; only the three tasks whose answers the prior covers.
  const TokenPattern g_count = guess_variant(t.counting);
  const TokenPattern g_cipher = guess_variant(t.shift_cipher);
  const TokenPattern g_acronym = guess_variant(t.acronym);
  int64_t guess_tokens = 0;
  size_t guess_round = 0;
  while (guess_tokens < guess_budget) {
    Doc d;
    switch (guess_round++ % 3) {
      case 0:
        d.toks = render_pattern(g_count, v, {});
        d.toks.push_back(v.number_id(draw_number()));
        break;
      case 1: {
        d.toks = render_pattern(g_cipher, v, {});
        const WordEntry* w = cipher_d.draw(rng);
        note(w);
        d.toks.push_back(w->prefix_id);
        d.toks.push_back(w->suffix_id);
        break;
      }
      default: {
        d.toks = render_pattern(g_acronym, v, {});
        const WordEntry* w = acr_d.draw(rng);
        note(w);
        d.toks.push_back(w->prefix_id);
        d.toks.push_back(w->suffix_id);
        break;
      }
    }
    d.toks.push_back(v.eos());
    guess_tokens += static_cast<int64_t>(d.toks.size());
    ++res.guess_docs;
    docs.push_back(std::move(d));
  }

  // --- number-mention docs ----------------------------------------------
  const auto number_budget =
      static_cast<int64_t>(std::llround(cfg.number_fraction * static_cast<double>(cfg.budget)));
  int64_t num_tokens = 0;
  while (num_tokens < number_budget) {
    std::vector<int32_t> ids(static_cast<size_t>(uix(rng, 3, 8)));
    for (auto& id : ids) id = v.number_id(draw_number());
    Doc d;
    d.toks.push_back(v.bos());
    const auto body = render_pattern(t.number_mention, v, {{"{numbers}", std::move(ids)}});
    d.toks.insert(d.toks.end(), body.begin(), body.end());
    d.toks.push_back(v.eos());
    num_tokens += static_cast<int64_t>(d.toks.size());
    ++res.number_docs;
    docs.push_back(std::move(d));
  }

  // --- filler -------------------------------------------------------------
  // Plan the unit sequence first so the word quota is known before any word
  // is assigned. Sizes are estimates; the realized total lands within a few
  // percent of the budget.
  const auto instr_ids = render_pattern(t.instruction, v, {});
  enum class Unit : uint8_t { kWord, kSpell, kInstr };
  const int64_t filler_budget = cfg.budget - demo_tokens - guess_tokens - num_tokens;
  std::vector<Unit> units;
  int64_t planned = 0, n_instr = 0, slots = 0;
  while (planned < filler_budget) {
    const double r = u01(rng);
    if (r < cfg.instruction_rate) {
      units.push_back(Unit::kInstr);
      planned += static_cast<int64_t>(instr_ids.size()) + 2;
      ++n_instr;
    } else if (r < cfg.instruction_rate + 0.25) {
      units.push_back(Unit::kSpell);
      planned += 11;
      ++slots;
    } else {
      units.push_back(Unit::kWord);
      planned += 2;
      ++slots;
    }
    if (units.size() % 7 == 0) planned += 2;  // amortized <s> ... </s> markers
  }

  // Word quota: T total mentions, target_c common ones. Instruction inserts
  // always precede uncommon words, so they sit on the uncommon side.
  const int64_t total_mentions = occ_c + occ_u + n_instr + slots;
  if (total_mentions == 0)
    throw ConstructionError(
        "corpus would contain no answer-word mentions; the frequency ratio is unrealizable");
  const auto target_c = static_cast<int64_t>(
      std::llround(static_cast<double>(total_mentions) * rho / (1.0 + rho)));
  const int64_t quota_c = target_c - occ_c;
  const int64_t quota_u = slots - quota_c;
  if (quota_c < 0 || quota_u < 0)
    throw ConstructionError(cat(
        "freq_ratio ", rho, " is out of reach for this budget mix; achievable range is about [",
        ratio_str(static_cast<double>(occ_c), static_cast<double>(occ_u + n_instr + slots)), ", ",
        ratio_str(static_cast<double>(occ_c + slots), static_cast<double>(occ_u + n_instr)),
        "] (adjust demo_fraction, guess_share or freq_ratio)"));

  std::vector<const WordEntry*> commons, uncommons;
  for (const auto& w : v.words()) (w.common ? commons : uncommons).push_back(&w);
  const auto fill_pool = [&](const std::vector<const WordEntry*>& ws, int64_t total) {
    std::vector<const WordEntry*> pool;
    pool.reserve(static_cast<size_t>(total));
    const auto counts = apportion(zipf_weights(ws.size(), cfg.zipf_s), total);
    for (size_t i = 0; i < ws.size(); ++i)
      pool.insert(pool.end(), static_cast<size_t>(counts[i]), ws[i]);
    return pool;
  };
  std::vector<const WordEntry*> slot_pool = fill_pool(commons, quota_c);
  {
    auto u_pool = fill_pool(uncommons, quota_u);
    slot_pool.insert(slot_pool.end(), u_pool.begin(), u_pool.end());
  }
  std::shuffle(slot_pool.begin(), slot_pool.end(), rng);
  std::vector<const WordEntry*> instr_pool = fill_pool(uncommons, n_instr);
  std::shuffle(instr_pool.begin(), instr_pool.end(), rng);

  size_t si = 0, ii = 0;
  std::vector<int32_t> cur{v.bos()};
  int64_t in_doc = 0;
  int64_t doc_units = uix(rng, 4, 10);
  const auto flush = [&] {
    if (in_doc == 0) return;
    cur.push_back(v.eos());
    docs.push_back({std::move(cur), -1});
    ++res.filler_docs;
    cur = {v.bos()};
    in_doc = 0;
    doc_units = uix(rng, 4, 10);
  };
  for (const Unit u : units) {
    switch (u) {
      case Unit::kWord: {
        const WordEntry* w = slot_pool[si++];
        cur.push_back(w->prefix_id);
        cur.push_back(w->suffix_id);
        break;
      }
      case Unit::kSpell: {
        const WordEntry* w = slot_pool[si++];
        std::vector<int32_t> letters;
        letters.reserve(w->word.size());
        for (const char c : w->word) letters.push_back(v.letter_id(c));
        const auto part = render_pattern(
            t.spelling, v,
            {{"{letters}", std::move(letters)}, {"{word}", {w->prefix_id, w->suffix_id}}});
        cur.insert(cur.end(), part.begin(), part.end());
        break;
      }
      case Unit::kInstr: {
        cur.insert(cur.end(), instr_ids.begin(), instr_ids.end());
        const WordEntry* w = instr_pool[ii++];
        cur.push_back(w->prefix_id);
        cur.push_back(w->suffix_id);
        break;
      }
    }
    if (++in_doc >= doc_units) flush();
  }
  flush();

  // --- assemble -------------------------------------------------------------
  std::shuffle(docs.begin(), docs.end(), rng);
  int64_t total = 0;
  for (const auto& d : docs) total += static_cast<int64_t>(d.toks.size());
  res.tokens.reserve(static_cast<size_t>(total));
  for (const auto& d : docs) {
    if (d.demo >= 0) res.demos[static_cast<size_t>(d.demo)].offset =
        static_cast<int64_t>(res.tokens.size());
    for (const int32_t id : d.toks) res.tokens.push_back(static_cast<uint16_t>(id));
  }

  res.stats = unigram_stats(res.tokens, v.size());
  res.realized_ratio = word_set_ratio(res.tokens, v);
  if (std::abs(res.realized_ratio - rho) > 0.10 * rho)
    throw ConstructionError(cat("realized common/uncommon ratio ", res.realized_ratio,
                                " misses the target ", rho, " by more than 10%"));
  return res;
}

UnigramStats unigram_stats(std::span<const uint16_t> stream, int64_t vocab_size) {
  if (vocab_size <= 0) throw UsageError(cat("unigram stats need a positive vocab size, got ",
                                            vocab_size));
  if (stream.empty()) throw UsageError("unigram stats of an empty stream");
  UnigramStats s;
  s.counts.assign(static_cast<size_t>(vocab_size), 0);
  for (const uint16_t id : stream) {
    if (id >= vocab_size)
      throw IndexError(cat("token id ", id, " out of range [0,", vocab_size, ")"));
    ++s.counts[id];
  }
  s.total = static_cast<int64_t>(stream.size());
  s.p.resize(s.counts.size());
  for (size_t i = 0; i < s.counts.size(); ++i)
    s.p[i] = static_cast<double>(s.counts[i]) / static_cast<double>(s.total);
  return s;
}

double word_set_ratio(std::span<const uint16_t> stream, const Vocab& v) {
  // Word mentions are (prefix id, suffix id) adjacencies. Prefix tokens
  // occur nowhere else in the stream, so the count is exact.
  std::unordered_map<uint64_t, bool> pair_common;
  for (const auto& w : v.words()) {
    const uint64_t key =
        (static_cast<uint64_t>(static_cast<uint32_t>(w.prefix_id)) << 32) |
        static_cast<uint32_t>(w.suffix_id);
    pair_common.emplace(key, w.common);
  }
  int64_t c = 0, u = 0;
  for (size_t i = 0; i + 1 < stream.size(); ++i) {
    const uint64_t key = (static_cast<uint64_t>(stream[i]) << 32) | stream[i + 1];
    const auto it = pair_common.find(key);
    if (it == pair_common.end()) continue;
    (it->second ? c : u) += 1;
  }
  if (u == 0) throw NumericError("no uncommon answer-word occurrences; ratio undefined");
  return static_cast<double>(c) / static_cast<double>(u);
}

std::vector<std::pair<int64_t, int64_t>> doc_spans(std::span<const uint16_t> stream,
                                                   const Vocab& v) {
  const auto bos = static_cast<uint16_t>(v.bos());
  const auto eos = static_cast<uint16_t>(v.eos());
  std::vector<std::pair<int64_t, int64_t>> spans;
  size_t i = 0;
  while (i < stream.size()) {
    if (stream[i] != bos)
      throw UsageError(cat("document at token ", i, " does not start with <s>"));
    size_t j = i + 1;
    while (j < stream.size() && stream[j] != eos) {
      if (stream[j] == bos) throw UsageError(cat("document at token ", i, " is missing </s>"));
      ++j;
    }
    if (j == stream.size())
      throw UsageError(cat("document at token ", i, " is missing </s>"));
    spans.emplace_back(static_cast<int64_t>(i), static_cast<int64_t>(j - i + 1));
    i = j + 1;
  }
  return spans;
}

void write_corpus_file(const std::string& path, std::span<const uint16_t> tokens) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError(cat("cannot open '", path, "' for writing"));
  f.write(reinterpret_cast<const char*>(tokens.data()),
          static_cast<std::streamsize>(tokens.size() * sizeof(uint16_t)));
  if (!f) throw UsageError(cat("short write to '", path, "'"));
}

std::vector<uint16_t> read_corpus_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(cat("cannot open corpus file '", path, "'"));
  f.seekg(0, std::ios::end);
  const auto bytes = static_cast<uint64_t>(f.tellg());
  f.seekg(0, std::ios::beg);
  if (bytes % sizeof(uint16_t) != 0)
    throw LoadError(cat("corpus file '", path, "' has odd size ", bytes,
                        "; expected 2-byte little-endian tokens"));
  std::vector<uint16_t> tokens(bytes / sizeof(uint16_t));
  f.read(reinterpret_cast<char*>(tokens.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw LoadError(cat("failed reading '", path, "'"));
  return tokens;
}

void write_corpus_sidecar(const std::string& path, const Vocab& v, const CorpusConfig& cfg,
                          const CorpusResult& result) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw UsageError(cat("cannot open '", path, "' for writing"));
  const auto line = [&f](const std::string& key, const auto& value) {
    f << key << " = " << value << "\n";
  };
  line("format", "priorlens-corpus-v1");
  line("version", kVersion);
  line("seed", cfg.seed);
  line("budget", cfg.budget);
  line("zipf_s", cfg.zipf_s);
  line("freq_ratio", cfg.freq_ratio);
  line("round_boost", cfg.round_boost);
  line("demo_fraction", cfg.demo_fraction);
  line("demo_answer_bias", cfg.demo_answer_bias ? 1 : 0);
  line("number_fraction", cfg.number_fraction);
  line("guess_share", cfg.guess_share);
  line("instruction_rate", cfg.instruction_rate);
  line("total_tokens", result.tokens.size());
  line("realized_ratio", result.realized_ratio);
  line("filler_docs", result.filler_docs);
  line("number_docs", result.number_docs);
  line("demo_docs", result.demo_docs);
  line("guess_docs", result.guess_docs);
  line("vocab_size", v.size());
  line("vocab_hash", hash_hex(v.hash()));
  for (int32_t id = 0; id < v.size(); ++id) line(cat("token.", id), v.token(id));
  if (!f) throw UsageError(cat("short write to '", path, "'"));
}

std::map<std::string, std::string> read_sidecar(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw LoadError(cat("cannot open sidecar '", path, "'"));
  std::map<std::string, std::string> kv;
  std::string ln;
  size_t n = 0;
  while (std::getline(f, ln)) {
    ++n;
    if (ln.empty()) continue;
    const auto sep = ln.find(" = ");
    if (sep == std::string::npos)
      throw LoadError(cat("sidecar '", path, "' line ", n, " is not 'key = value'"));
    kv[ln.substr(0, sep)] = ln.substr(sep + 3);
  }
  return kv;
}

}  // namespace priorlens
