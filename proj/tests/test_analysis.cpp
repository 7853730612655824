#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "priorlens/analysis.hpp"

using namespace priorlens;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.vocab_size = Vocab::standard().size();
  cfg.context_length = 64;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("answer token sets cover each task's first answer tokens") {
  const Vocab v = Vocab::standard();

  const auto counting = answer_first_tokens(v, TaskKind::Counting);
  CHECK(counting.size() == 100);
  CHECK(counting.front() == v.number_id(1));
  CHECK(counting.back() == v.number_id(100));

  const auto cipher = answer_first_tokens(v, TaskKind::ShiftCipher);
  CHECK(cipher.size() == 48);  // all cipher prefixes are distinct
  for (const int32_t id : cipher) CHECK((v.flags(id) & kFlagWordPrefix) != 0);

  const auto acr = answer_first_tokens(v, TaskKind::Acronym);
  CHECK(acr.size() <= 32);
  CHECK(acr.size() >= 20);
  const auto mult = answer_first_tokens(v, TaskKind::Multiplication);
  CHECK(mult.size() == 9);  // leading digits 1..9
  const auto letters = answer_first_tokens(v, TaskKind::MakeLetters);
  CHECK(letters.size() == 26);
}

TEST_CASE("prior elicitation is flat on an untrained model and deterministic") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  Model m(tiny_config());

  for (const TaskKind kind : kAllTasks) {
    const PriorLogits prior = elicit_prior(m, v, t, kind);
    CHECK(prior.kind == kind);
    CHECK(prior.logits.size() == prior.answer_ids.size());
    double lo = prior.logits[0], hi = prior.logits[0];
    for (const double x : prior.logits) {
      REQUIRE(std::isfinite(x));
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    CHECK(hi - lo < 1.0);  // near-uniform before training

    const PriorLogits again = elicit_prior(m, v, t, kind);
    CHECK(again.logits == prior.logits);
    CHECK(again.answer_ids == prior.answer_ids);
  }
}

TEST_CASE("correlating the prior with itself is significant everywhere") {
  PriorLogits prior;
  prior.kind = TaskKind::Counting;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 26; ++i) {
    prior.answer_ids.push_back(i);
    prior.logits.push_back(g(rng));
  }

  const size_t questions = 30, layers = 3;
  std::vector<std::vector<std::vector<double>>> injected(
      questions, std::vector<std::vector<double>>(layers, prior.logits));
  const LayerCorrelationReport rep = correlate_layers(prior, injected);

  REQUIRE(rep.positive_fraction.size() == layers);
  for (size_t l = 0; l < layers; ++l) {
    CHECK(rep.positive_fraction[l] == 1.0);
    CHECK(rep.excluded[l] == 0);
    CHECK_FALSE(rep.negative_majority[l]);
  }
  CHECK(rep.pairs.size() == questions * layers);
  for (const auto& qc : rep.pairs) {
    CHECK(qc.rho == doctest::Approx(1.0));
    CHECK(qc.p < 0.05);
  }
}

TEST_CASE("a shuffled-prior null stays under the calibration ceiling") {
  PriorLogits prior;
  prior.kind = TaskKind::Counting;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int i = 0; i < 26; ++i) {
    prior.answer_ids.push_back(i);
    prior.logits.push_back(g(rng));
  }

  const size_t questions = 1000, layers = 2;
  std::vector<std::vector<std::vector<double>>> injected(questions);
  for (auto& q : injected) {
    q.resize(layers);
    for (auto& row : q) {
      row.resize(prior.logits.size());
      for (auto& x : row) x = g(rng);
    }
  }
  const LayerCorrelationReport rep = correlate_layers(prior, injected);
  for (size_t l = 0; l < layers; ++l) {
    // Two-sided 5% test, one-sided counting: expect ~2.5%, cap at 12%.
    CHECK(rep.positive_fraction[l] <= 0.12);
    CHECK(rep.excluded[l] == 0);
  }
}

TEST_CASE("constant answer logits are excluded and counted, not scored") {
  PriorLogits prior;
  prior.kind = TaskKind::Counting;
  for (int i = 0; i < 10; ++i) {
    prior.answer_ids.push_back(i);
    prior.logits.push_back(static_cast<double>(i));
  }
  // Layer 0 constant for every question; layer 1 perfectly aligned.
  const size_t questions = 8;
  std::vector<std::vector<std::vector<double>>> injected(questions);
  for (auto& q : injected) {
    q.push_back(std::vector<double>(10, 3.25));
    q.push_back(prior.logits);
  }
  const LayerCorrelationReport rep = correlate_layers(prior, injected);
  CHECK(rep.excluded[0] == static_cast<int64_t>(questions));
  CHECK(rep.positive_fraction[0] == 0.0);
  CHECK(rep.excluded[1] == 0);
  CHECK(rep.positive_fraction[1] == 1.0);
  int64_t excluded_pairs = 0;
  for (const auto& qc : rep.pairs) excluded_pairs += qc.excluded ? 1 : 0;
  CHECK(excluded_pairs == static_cast<int64_t>(questions));
}

TEST_CASE("layer correlation over a real model is well-formed and reproducible") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  Model m(tiny_config());

  const PriorLogits prior = elicit_prior(m, v, t, TaskKind::MakeLetters);
  TaskSetOptions opt;
  opt.count = 6;
  opt.seed = 9;
  const auto instances = gen_task_set(v, t, TaskKind::MakeLetters, opt);

  const LayerCorrelationReport a = layer_correlation(m, instances, prior);
  const LayerCorrelationReport b = layer_correlation(m, instances, prior);
  const auto layers = static_cast<size_t>(tiny_config().n_layers) + 1;
  REQUIRE(a.positive_fraction.size() == layers);
  CHECK(a.questions == 6);
  CHECK(a.pairs.size() == 6 * layers);
  for (size_t l = 0; l < layers; ++l) {
    CHECK(a.positive_fraction[l] >= 0.0);
    CHECK(a.positive_fraction[l] <= 1.0);
    CHECK(a.positive_fraction[l] == b.positive_fraction[l]);
  }
  for (size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].rho == b.pairs[i].rho);
    CHECK(a.pairs[i].p == b.pairs[i].p);
  }

  const auto wrong = gen_task_set(v, t, TaskKind::Counting, opt);
  CHECK_THROWS_AS(layer_correlation(m, wrong, prior), UsageError);
}

TEST_CASE("prompt intervention appends the phrase and keeps the task intact") {
  const Vocab v = Vocab::standard();
  const auto t = PromptTemplates::v1();
  TaskSetOptions opt;
  opt.count = 4;
  opt.seed = 21;

  for (const TaskKind kind : kAllTasks) {
    for (const TaskInstance& inst : gen_task_set(v, t, kind, opt)) {
      const TaskInstance got = prompt_intervention(inst, v, t);
      CHECK(got.gold == inst.gold);
      CHECK(got.answer_key == inst.answer_key);
      CHECK(got.kind == inst.kind);
      CHECK(got.difficulty == inst.difficulty);
      CHECK(got.commonness == inst.commonness);
      CHECK(got.seed == inst.seed);
      CHECK(got.id == instance_hash(got));
      CHECK(got.id != inst.id);  // prompt changed, content hash follows

      const auto& phrase = kind == TaskKind::ShiftCipher ? t.instruction_cipher : t.instruction;
      const auto ids = render_pattern(phrase, v, {});
      REQUIRE(got.prompt.size() == inst.prompt.size() + ids.size());
      CHECK(std::equal(ids.begin(), ids.end(), got.prompt.end() - ids.size()));
      CHECK(std::equal(inst.prompt.begin(), inst.prompt.end(), got.prompt.begin()));
      CHECK(score(got.gold, got, v));
    }
  }
}
