#include "priorlens/analysis.hpp"

#include <algorithm>

namespace priorlens {

namespace {

const TokenPattern& task_pattern(const PromptTemplates& t, TaskKind kind) {
  switch (kind) {
    case TaskKind::Counting: return t.counting;
    case TaskKind::ShiftCipher: return t.shift_cipher;
    case TaskKind::Acronym: return t.acronym;
    case TaskKind::Multiplication: return t.multiplication;
    case TaskKind::MakeLetters: return t.make_letters;
  }
  throw UsageError("unknown task kind");
}

}  // namespace

PriorLogits elicit_prior(Model& m, const Vocab& v, const PromptTemplates& t, TaskKind kind) {
  PriorLogits out;
  out.kind = kind;
  out.answer_ids = answer_first_tokens(v, kind);
  if (out.answer_ids.empty()) throw UsageError("task has no answer tokens in this vocabulary");

  const auto prompt = render_pattern(guess_variant(task_pattern(t, kind)), v, {});
  const ForwardResult fr = m.forward(prompt);
  const auto logits = fr.logits.data();
  const int64_t vocab = m.config().vocab_size;
  const int64_t last = (static_cast<int64_t>(prompt.size()) - 1) * vocab;
  out.logits.reserve(out.answer_ids.size());
  for (const int32_t id : out.answer_ids) {
    if (id < 0 || id >= vocab)
      throw IndexError(cat("answer token ", id, " outside the model vocabulary"));
    out.logits.push_back(static_cast<double>(logits[static_cast<size_t>(last + id)]));
  }
  return out;
}

LayerCorrelationReport correlate_layers(
    const PriorLogits& prior, const std::vector<std::vector<std::vector<double>>>& answer_logits,
    double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw UsageError(cat("significance threshold ", alpha, " outside (0,1)"));
  if (answer_logits.empty()) throw UsageError("layer correlation needs at least one question");
  const size_t layers = answer_logits.front().size();
  if (layers == 0) throw UsageError("layer correlation needs at least one layer");

  LayerCorrelationReport rep;
  rep.alpha = alpha;
  rep.questions = static_cast<int64_t>(answer_logits.size());
  rep.positive_count.assign(layers, 0);
  rep.negative_count.assign(layers, 0);
  rep.excluded.assign(layers, 0);
  rep.positive_fraction.assign(layers, 0.0);
  rep.negative_majority.assign(layers, false);

  for (size_t q = 0; q < answer_logits.size(); ++q) {
    const auto& per_layer = answer_logits[q];
    if (per_layer.size() != layers)
      throw UsageError(cat("question ", q, " has ", per_layer.size(), " layers, expected ",
                           layers));
    for (size_t l = 0; l < layers; ++l) {
      if (per_layer[l].size() != prior.answer_ids.size())
        throw UsageError(cat("question ", q, " layer ", l, " has ", per_layer[l].size(),
                             " logits over an answer set of ", prior.answer_ids.size()));
      QuestionCorrelation qc;
      qc.question = static_cast<int64_t>(q);
      qc.layer = static_cast<int32_t>(l);
      try {
        const Correlation c = spearman(prior.logits, per_layer[l]);
        qc.rho = c.rho;
        qc.p = c.p;
        if (c.p < alpha && c.rho > 0.0) ++rep.positive_count[l];
        if (c.p < alpha && c.rho < 0.0) ++rep.negative_count[l];
      } catch (const NumericError&) {
        qc.excluded = true;  // constant logits: rho undefined, reported not scored
        ++rep.excluded[l];
      }
      rep.pairs.push_back(qc);
    }
  }
  for (size_t l = 0; l < layers; ++l) {
    const int64_t counted = rep.questions - rep.excluded[l];
    rep.positive_fraction[l] =
        counted > 0 ? static_cast<double>(rep.positive_count[l]) / static_cast<double>(counted)
                    : 0.0;
    rep.negative_majority[l] = rep.negative_count[l] > rep.positive_count[l];
  }
  return rep;
}

LayerCorrelationReport layer_correlation(Model& m, std::span<const TaskInstance> instances,
                                         const PriorLogits& prior, double alpha) {
  if (instances.empty()) throw UsageError("layer correlation needs at least one instance");
  for (const TaskInstance& inst : instances)
    if (inst.kind != prior.kind)
      throw UsageError(cat("instance of task '", task_name(inst.kind),
                           "' does not match the prior's task '", task_name(prior.kind), "'"));
  const int64_t vocab = m.config().vocab_size;
  for (const int32_t id : prior.answer_ids)
    if (id < 0 || id >= vocab)
      throw IndexError(cat("answer token ", id, " outside the model vocabulary"));

  std::vector<std::vector<std::vector<double>>> answer_logits;
  answer_logits.reserve(instances.size());
  const size_t layers = static_cast<size_t>(m.config().n_layers) + 1;
  for (const TaskInstance& inst : instances) {
    const ForwardResult fr = m.forward(inst.prompt, /*capture=*/true);
    const int64_t pos = static_cast<int64_t>(inst.prompt.size()) - 1;
    std::vector<std::vector<double>> per_layer;
    per_layer.reserve(layers);
    for (size_t l = 0; l < layers; ++l) {
      const Tensor lens = m.logit_lens(*fr.trace, static_cast<int32_t>(l), pos);
      const auto vals = lens.data();
      std::vector<double> row;
      row.reserve(prior.answer_ids.size());
      for (const int32_t id : prior.answer_ids)
        row.push_back(static_cast<double>(vals[static_cast<size_t>(id)]));
      per_layer.push_back(std::move(row));
    }
    answer_logits.push_back(std::move(per_layer));
  }
  return correlate_layers(prior, answer_logits, alpha);
}

TaskInstance prompt_intervention(const TaskInstance& inst, const Vocab& v,
                                 const PromptTemplates& t) {
  const TokenPattern& phrase =
      inst.kind == TaskKind::ShiftCipher ? t.instruction_cipher : t.instruction;
  TaskInstance out = inst;
  const auto ids = render_pattern(phrase, v, {});
  out.prompt.insert(out.prompt.end(), ids.begin(), ids.end());
  out.id = instance_hash(out);
  return out;
}

}  // namespace priorlens
