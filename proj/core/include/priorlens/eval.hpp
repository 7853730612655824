#pragma once

// Greedy task evaluation. Prompts of equal length run as one batch, so a
// full eval is deterministic and identical to evaluating one prompt at a
// time. Interventions are built per prompt length because stream edits
// anchor on the answer position.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "priorlens/model.hpp"
#include "priorlens/tasks.hpp"

namespace priorlens {

// Builds the intervention set for a prompt of the given length; the answer
// starts at position prompt_len. An empty function means a clean run.
using InterventionFactory = std::function<Interventions(int64_t prompt_len)>;

struct EvalBucket {
  int64_t n = 0;
  int64_t correct = 0;
  double accuracy = 0.0;
};

struct EvalResult {
  int64_t n = 0;
  int64_t correct = 0;
  double accuracy = 0.0;
  double stderr_ = 0.0;  // binomial, sqrt(p(1-p)/n)
  std::vector<bool> flags;                      // per instance, input order
  std::vector<std::vector<int32_t>> responses;  // generated ids, input order
  std::map<Commonness, EvalBucket> by_commonness;
  std::map<int, EvalBucket> by_difficulty;
};

// Generation budget per chunk is the longest gold answer plus the stop
// token; a model that rambles past that is scored wrong.
EvalResult evaluate(const Model& m, const Vocab& v, std::span<const TaskInstance> instances,
                    const InterventionFactory& hooks = {}, int64_t batch_limit = 32);

}  // namespace priorlens
