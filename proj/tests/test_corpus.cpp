#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_map>
#include <vector>

#include "priorlens/corpus.hpp"

using namespace priorlens;

namespace {

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.budget = 100'000;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Naive subsequence scan, used to cross-check pattern placements.
std::vector<size_t> find_all(std::span<const uint16_t> stream, std::span<const int32_t> pat) {
  std::vector<size_t> hits;
  if (pat.empty() || stream.size() < pat.size()) return hits;
  for (size_t i = 0; i + pat.size() <= stream.size(); ++i) {
    bool ok = true;
    for (size_t j = 0; j < pat.size(); ++j)
      if (stream[i + j] != static_cast<uint16_t>(pat[j])) {
        ok = false;
        break;
      }
    if (ok) hits.push_back(i);
  }
  return hits;
}

}  // namespace

TEST_CASE("piece pairs identify words unambiguously") {
  // The ratio measurement counts (prefix, suffix) adjacencies. That is exact
  // as long as no token serves as a prefix for one word and a suffix for
  // another, which the built-in lists must guarantee.
  const Vocab v = Vocab::standard();
  for (int32_t id = 0; id < v.size(); ++id) {
    const uint8_t fl = v.flags(id);
    const bool both = (fl & kFlagWordPrefix) && (fl & kFlagWordSuffix);
    CHECK_FALSE(both);
  }
  // And no two words share the same piece pair.
  std::unordered_map<uint64_t, std::string> seen;
  for (const auto& w : v.words()) {
    const uint64_t key = (static_cast<uint64_t>(w.prefix_id) << 32) |
                         static_cast<uint32_t>(w.suffix_id);
    const auto [it, fresh] = seen.emplace(key, w.word);
    CHECK_MESSAGE(fresh, w.word, " and ", it->second, " share a piece pair");
  }
}

TEST_CASE("corpus generation is deterministic in the seed") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  cfg.seed = 7;

  const CorpusResult a = build_corpus(v, t, cfg);
  const CorpusResult b = build_corpus(v, t, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(a.realized_ratio == b.realized_ratio);
  REQUIRE(a.demos.size() == b.demos.size());
  for (size_t i = 0; i < a.demos.size(); ++i) {
    CHECK(a.demos[i].offset == b.demos[i].offset);
    CHECK(a.demos[i].instance.prompt == b.demos[i].instance.prompt);
  }

  cfg.seed = 8;
  const CorpusResult c = build_corpus(v, t, cfg);
  CHECK(c.tokens != a.tokens);
}

TEST_CASE("stream is a clean document concatenation with the right mix") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  const CorpusResult res = build_corpus(v, t, small_config());

  // Total lands near the requested budget.
  CHECK(static_cast<double>(res.tokens.size()) ==
        doctest::Approx(100'000).epsilon(0.05));

  const auto spans = doc_spans(res.tokens, v);
  CHECK(static_cast<int64_t>(spans.size()) ==
        res.filler_docs + res.number_docs + res.demo_docs + res.guess_docs);
  int64_t covered = 0;
  for (const auto& [off, len] : spans) {
    CHECK(res.tokens[static_cast<size_t>(off)] == static_cast<uint16_t>(v.bos()));
    CHECK(res.tokens[static_cast<size_t>(off + len - 1)] == static_cast<uint16_t>(v.eos()));
    covered += len;
  }
  CHECK(covered == static_cast<int64_t>(res.tokens.size()));
  CHECK(res.filler_docs > 0);
  CHECK(res.number_docs > 0);
  CHECK(res.demo_docs > 0);
  CHECK(res.guess_docs > 0);
}

TEST_CASE("realized word ratio tracks freq_ratio") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();

  SUBCASE("skewed") {
    CorpusConfig cfg = small_config();
    cfg.freq_ratio = 20.0;
    const CorpusResult res = build_corpus(v, t, cfg);
    CHECK(res.realized_ratio == doctest::Approx(20.0).epsilon(0.10));
  }
  SUBCASE("flat") {
    CorpusConfig cfg = small_config();
    cfg.freq_ratio = 1.0;
    cfg.round_boost = 0.0;
    const CorpusResult res = build_corpus(v, t, cfg);
    CHECK(res.realized_ratio >= 0.9);
    CHECK(res.realized_ratio <= 1.1);
  }
}

TEST_CASE("round numbers are boosted in the unigram counts") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  cfg.round_boost = 10.0;
  const CorpusResult res = build_corpus(v, t, cfg);

  std::vector<int64_t> non_round;
  for (int n = 1; n <= 100; ++n)
    if (!(n >= 20 && n % 10 == 0))
      non_round.push_back(res.stats.counts[static_cast<size_t>(v.number_id(n))]);
  std::sort(non_round.begin(), non_round.end());
  const int64_t median = non_round[non_round.size() / 2];
  REQUIRE(median > 0);
  for (int n = 20; n <= 100; n += 10) {
    const int64_t cnt = res.stats.counts[static_cast<size_t>(v.number_id(n))];
    CHECK_MESSAGE(cnt >= 5 * median, "round ", n, " count ", cnt, " vs median ", median);
  }
}

TEST_CASE("zero demo fraction removes every answer marker") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  cfg.demo_fraction = 0.0;
  const CorpusResult res = build_corpus(v, t, cfg);

  CHECK(res.demo_docs == 0);
  CHECK(res.guess_docs == 0);
  CHECK(res.demos.empty());
  CHECK(res.stats.counts[static_cast<size_t>(v.ans())] == 0);
}

TEST_CASE("recorded demos point at verbatim, correctly answered instances") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  const CorpusResult res = build_corpus(v, t, small_config());
  REQUIRE(res.demos.size() > 20);

  bool saw[5] = {};
  for (const DemoRecord& d : res.demos) {
    std::vector<int32_t> expect = d.instance.prompt;
    expect.insert(expect.end(), d.instance.gold.begin(), d.instance.gold.end());
    expect.push_back(v.eos());
    REQUIRE(static_cast<int64_t>(expect.size()) == d.length);
    REQUIRE(d.offset + d.length <= static_cast<int64_t>(res.tokens.size()));
    for (size_t i = 0; i < expect.size(); ++i)
      REQUIRE(res.tokens[static_cast<size_t>(d.offset) + i] ==
              static_cast<uint16_t>(expect[i]));
    // The embedded gold answer satisfies the task oracle.
    CHECK(score(d.instance.gold, d.instance, v));
    saw[static_cast<size_t>(d.instance.kind)] = true;
  }
  for (const bool s : saw) CHECK(s);
}

TEST_CASE("demo answers skew toward the prior only when asked") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();

  const auto common_share = [&](bool bias) {
    CorpusConfig cfg = small_config();
    cfg.demo_answer_bias = bias;
    // Unbiased demos mention both word sets evenly, so they drag the realized
    // ratio down; a modest target keeps the build feasible.
    if (!bias) cfg.freq_ratio = 2.0;
    cfg.seed = 3;
    const CorpusResult res = build_corpus(v, t, cfg);
    int64_t common = 0, total = 0;
    for (const DemoRecord& d : res.demos) {
      if (d.instance.kind != TaskKind::ShiftCipher && d.instance.kind != TaskKind::Acronym)
        continue;
      common += d.instance.commonness == Commonness::Common ? 1 : 0;
      ++total;
    }
    REQUIRE(total > 40);
    return static_cast<double>(common) / static_cast<double>(total);
  };

  // rho = 20 puts ~95% of the answer mass on common words.
  CHECK(common_share(true) > 0.8);
  CHECK(common_share(false) == doctest::Approx(0.5).epsilon(0.35));
}

TEST_CASE("instruction inserts precede uncommon words") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  // Every insert pairs with an uncommon word, which caps the reachable
  // common:uncommon ratio near slots/inserts; keep the target under that.
  cfg.instruction_rate = 0.05;
  cfg.freq_ratio = 10.0;
  const CorpusResult res = build_corpus(v, t, cfg);

  const auto phrase = render_pattern(t.instruction, v, {});
  const auto hits = find_all(res.tokens, phrase);
  REQUIRE(hits.size() > 50);
  for (const size_t at : hits) {
    const size_t next = at + phrase.size();
    REQUIRE(next + 1 < res.tokens.size());
    const WordEntry* hit = nullptr;
    for (const auto& w : v.words())
      if (w.prefix_id == res.tokens[next] && w.suffix_id == res.tokens[next + 1]) hit = &w;
    REQUIRE(hit != nullptr);
    CHECK_FALSE(hit->common);
  }
}

TEST_CASE("unigram stats match an independent counter and add over splits") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  const CorpusResult res = build_corpus(v, t, small_config());

  std::unordered_map<uint16_t, int64_t> naive;
  for (const uint16_t id : res.tokens) ++naive[id];
  const UnigramStats s = unigram_stats(res.tokens, v.size());
  CHECK(s.total == static_cast<int64_t>(res.tokens.size()));
  for (int32_t id = 0; id < v.size(); ++id) {
    const auto it = naive.find(static_cast<uint16_t>(id));
    CHECK(s.counts[static_cast<size_t>(id)] == (it == naive.end() ? 0 : it->second));
  }
  double mass = 0.0;
  for (const double p : s.p) mass += p;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));

  const size_t half = res.tokens.size() / 2;
  const auto sa = unigram_stats(std::span(res.tokens).subspan(0, half), v.size());
  const auto sb = unigram_stats(std::span(res.tokens).subspan(half), v.size());
  for (size_t i = 0; i < s.counts.size(); ++i)
    CHECK(s.counts[i] == sa.counts[i] + sb.counts[i]);

  CHECK_THROWS_AS(unigram_stats({}, v.size()), UsageError);
  const std::vector<uint16_t> big{static_cast<uint16_t>(v.size())};
  CHECK_THROWS_AS(unigram_stats(big, v.size()), IndexError);
  CHECK_THROWS_AS(unigram_stats(big, 0), UsageError);
}

TEST_CASE("word_set_ratio needs uncommon occurrences") {
  const Vocab v = Vocab::standard();
  const WordEntry* w = v.words_of(WordClass::Cipher, true).front();
  const std::vector<uint16_t> stream{
      static_cast<uint16_t>(v.bos()), static_cast<uint16_t>(w->prefix_id),
      static_cast<uint16_t>(w->suffix_id), static_cast<uint16_t>(v.eos())};
  CHECK_THROWS_AS(word_set_ratio(stream, v), NumericError);
}

TEST_CASE("malformed streams are rejected by doc_spans") {
  const Vocab v = Vocab::standard();
  const auto u16 = [](int32_t x) { return static_cast<uint16_t>(x); };
  const uint16_t bos = u16(v.bos()), eos = u16(v.eos()), is = u16(v.id("is"));

  CHECK(doc_spans(std::vector<uint16_t>{bos, is, eos, bos, eos}, v).size() == 2);
  CHECK_THROWS_AS(doc_spans(std::vector<uint16_t>{is, eos}, v), UsageError);
  CHECK_THROWS_AS(doc_spans(std::vector<uint16_t>{bos, is}, v), UsageError);
  CHECK_THROWS_AS(doc_spans(std::vector<uint16_t>{bos, is, bos, eos}, v), UsageError);
}

TEST_CASE("config validation rejects out-of-range settings") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();

  CorpusConfig cfg = small_config();
  cfg.budget = 99'999;
  CHECK_THROWS_AS(build_corpus(v, t, cfg), ConstructionError);

  cfg = small_config();
  cfg.freq_ratio = 0.5;
  CHECK_THROWS_AS(build_corpus(v, t, cfg), ConstructionError);

  cfg = small_config();
  cfg.demo_fraction = 0.8;
  cfg.number_fraction = 0.2;
  CHECK_THROWS_AS(build_corpus(v, t, cfg), ConstructionError);

  cfg = small_config();
  cfg.instruction_rate = 0.5;
  CHECK_THROWS_AS(build_corpus(v, t, cfg), ConstructionError);
}

TEST_CASE("unreachable frequency ratios name the achievable range") {
  // Unbiased demos mention common and uncommon words evenly; with most of
  // the budget spent on demos the filler cannot pull the ratio up to 20.
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  cfg.demo_answer_bias = false;
  cfg.demo_fraction = 0.85;
  cfg.number_fraction = 0.0;
  cfg.guess_share = 0.0;
  cfg.freq_ratio = 20.0;
  CHECK_THROWS_WITH_AS(build_corpus(v, t, cfg),
                       doctest::Contains("achievable range"), ConstructionError);
}

TEST_CASE("token files round-trip and reject damage") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  const CorpusResult res = build_corpus(v, t, small_config());

  const std::string path = temp_path("priorlens_corpus_test.bin");
  write_corpus_file(path, res.tokens);
  CHECK(read_corpus_file(path) == res.tokens);

  // Odd-sized file.
  std::ofstream(path, std::ios::binary | std::ios::trunc) << "abc";
  CHECK_THROWS_WITH_AS(read_corpus_file(path), doctest::Contains("odd size"), LoadError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_corpus_file(path), LoadError);
}

TEST_CASE("sidecar records config, stats and the token table") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  CorpusConfig cfg = small_config();
  cfg.seed = 42;
  const CorpusResult res = build_corpus(v, t, cfg);

  const std::string path = temp_path("priorlens_corpus_test.meta");
  write_corpus_sidecar(path, v, cfg, res);
  const auto kv = read_sidecar(path);

  CHECK(kv.at("format") == "priorlens-corpus-v1");
  CHECK(kv.at("seed") == "42");
  CHECK(kv.at("total_tokens") == std::to_string(res.tokens.size()));
  CHECK(kv.at("vocab_size") == std::to_string(v.size()));
  CHECK(kv.at("vocab_hash") == hash_hex(v.hash()));
  CHECK(kv.at("token.0") == v.token(0));
  CHECK(kv.at(cat("token.", v.ans())) == "=>");
  CHECK(std::stod(kv.at("realized_ratio")) == doctest::Approx(res.realized_ratio).epsilon(1e-4));
  CHECK(kv.count("demo_fraction") == 1);

  std::ofstream(path, std::ios::trunc) << "no separator here\n";
  CHECK_THROWS_AS(read_sidecar(path), LoadError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_sidecar(path), LoadError);
}
