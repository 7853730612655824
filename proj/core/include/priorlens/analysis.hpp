#pragma once

// Prior measurement: elicit the model's answer prior with the input
// withheld, then correlate that ranking against the logit-lens view of the
// residual stream, layer by layer. Also the prompting intervention, which
// appends the "do not rely on your prior knowledge" phrase.

#include <cstdint>
#include <span>
#include <vector>

#include "priorlens/model.hpp"
#include "priorlens/stats.hpp"
#include "priorlens/tasks.hpp"
#include "priorlens/templates.hpp"
#include "priorlens/vocab.hpp"

namespace priorlens {

// Logits over a task's answer-token set, recorded at the answer position of
// the guess prompt (task template with the input replaced by "guess").
struct PriorLogits {
  TaskKind kind{};
  std::vector<int32_t> answer_ids;  // first answer tokens, ranking domain
  std::vector<double> logits;       // aligned with answer_ids
};

PriorLogits elicit_prior(Model& m, const Vocab& v, const PromptTemplates& t, TaskKind kind);

// One (question, layer) correlation between the prior ranking and the
// lens-read answer logits. Excluded marks a constant-logit question whose
// rho is undefined.
struct QuestionCorrelation {
  int64_t question = 0;
  int32_t layer = 0;
  double rho = 0.0;
  double p = 1.0;
  bool excluded = false;
};

struct LayerCorrelationReport {
  double alpha = 0.05;
  int64_t questions = 0;
  std::vector<double> positive_fraction;  // per layer: significant rho>0 share
  std::vector<int64_t> positive_count;
  std::vector<int64_t> negative_count;
  std::vector<int64_t> excluded;
  std::vector<bool> negative_majority;  // more significant negatives than positives
  std::vector<QuestionCorrelation> pairs;
};

// Aggregation core: answer_logits[q][l] is question q's logit vector over
// prior.answer_ids at layer l. Kept separate from the model walk so null
// and self-correlation distributions can be injected directly.
LayerCorrelationReport correlate_layers(
    const PriorLogits& prior, const std::vector<std::vector<std::vector<double>>>& answer_logits,
    double alpha = 0.05);

// Runs every instance through the model with trace capture and correlates
// the lens logits at the answer position against the prior, at every layer.
LayerCorrelationReport layer_correlation(Model& m, std::span<const TaskInstance> instances,
                                         const PriorLogits& prior, double alpha = 0.05);

// Appends the instruction phrase to the prompt (shift-cipher gets the
// "... on the output" variant). Gold and task parameters are untouched; the
// content id is recomputed for the new prompt.
TaskInstance prompt_intervention(const TaskInstance& inst, const Vocab& v,
                                 const PromptTemplates& t);

}  // namespace priorlens
