#include "priorlens/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace priorlens {

EvalResult evaluate(const Model& m, const Vocab& v, std::span<const TaskInstance> instances,
                    const InterventionFactory& hooks, int64_t batch_limit) {
  if (instances.empty()) throw UsageError("evaluation needs at least one instance");
  if (batch_limit < 1) throw UsageError(cat("batch limit ", batch_limit, " is not positive"));

  // Same-length prompts share one batch and one intervention handle.
  std::map<int64_t, std::vector<size_t>> by_len;
  for (size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].prompt.empty()) throw UsageError(cat("instance ", i, " has an empty prompt"));
    by_len[static_cast<int64_t>(instances[i].prompt.size())].push_back(i);
  }

  EvalResult res;
  res.n = static_cast<int64_t>(instances.size());
  res.flags.assign(instances.size(), false);
  res.responses.resize(instances.size());

  for (const auto& [len, idxs] : by_len) {
    Interventions iv;
    if (hooks) iv = hooks(len);
    const Interventions* ivp = iv.empty() ? nullptr : &iv;
    for (size_t start = 0; start < idxs.size(); start += static_cast<size_t>(batch_limit)) {
      const size_t stop = std::min(idxs.size(), start + static_cast<size_t>(batch_limit));
      std::vector<std::vector<int32_t>> prompts;
      int64_t budget = 0;
      for (size_t k = start; k < stop; ++k) {
        const TaskInstance& inst = instances[idxs[k]];
        prompts.push_back(inst.prompt);
        budget = std::max(budget, static_cast<int64_t>(inst.gold.size()));
      }
      const auto outs = m.generate_batch(prompts, budget + 1, v.eos(), ivp);
      for (size_t k = start; k < stop; ++k) {
        const size_t i = idxs[k];
        res.responses[i] = outs[k - start];
        res.flags[i] = score(res.responses[i], instances[i], v);
      }
    }
  }

  for (size_t i = 0; i < instances.size(); ++i) {
    const bool ok = res.flags[i];
    res.correct += ok ? 1 : 0;
    auto& c = res.by_commonness[instances[i].commonness];
    c.n += 1;
    c.correct += ok ? 1 : 0;
    auto& d = res.by_difficulty[instances[i].difficulty];
    d.n += 1;
    d.correct += ok ? 1 : 0;
  }
  res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.n);
  res.stderr_ = std::sqrt(res.accuracy * (1.0 - res.accuracy) / static_cast<double>(res.n));
  for (auto& [k, b] : res.by_commonness)
    b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.n);
  for (auto& [k, b] : res.by_difficulty)
    b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.n);
  return res;
}

}  // namespace priorlens
