#include "priorlens/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "priorlens/optim.hpp"

namespace priorlens {

namespace {

struct Example {
  std::vector<int32_t> ids;      // prompt + gold + eos
  std::vector<int32_t> targets;  // next-token labels, kIgnoreIndex where masked
};

Example make_example(const TaskInstance& inst, const Vocab& v, bool answer_only) {
  Example ex;
  ex.ids = inst.prompt;
  ex.ids.insert(ex.ids.end(), inst.gold.begin(), inst.gold.end());
  ex.ids.push_back(v.eos());
  const size_t n = ex.ids.size();
  ex.targets.assign(n, kIgnoreIndex);
  // Position t predicts token t+1. The answer span starts at the last prompt
  // position (it predicts the first answer token) and runs through the stop.
  const size_t first = answer_only ? inst.prompt.size() - 1 : 0;
  for (size_t tpos = first; tpos + 1 < n; ++tpos) ex.targets[tpos] = ex.ids[tpos + 1];
  return ex;
}

}  // namespace

FinetuneResult finetune(Model& m, const Vocab& v, std::span<const TaskInstance> instances,
                        const SplitPlan& plan, const FinetuneRecipe& recipe) {
  if (recipe.rank < 1) throw UsageError(cat("adapter rank ", recipe.rank, " is not positive"));
  if (recipe.batch_size < 1 || recipe.grad_accum < 1)
    throw UsageError("batch size and gradient accumulation must be positive");
  if (recipe.epochs < 0) throw UsageError("negative epoch count");
  if (!(recipe.lr > 0.0f)) throw UsageError("learning rate must be positive");

  const std::vector<TaskInstance> all(instances.begin(), instances.end());
  verify_split(all, plan, v);
  if (!plan.stratified && !recipe.allow_unstratified)
    throw UsageError(
        "refusing to train on a non-stratified split: validation shares answer tokens with "
        "training, so its accuracy cannot separate memorization from the task (set "
        "allow_unstratified to override)");
  if (plan.train.empty()) throw UsageError("split has no training instances");

  const int64_t n_layers = m.config().n_layers;
  FinetuneResult res;
  if (recipe.mode == FinetuneMode::SingleLayer) {
    if (recipe.layer < 0 || recipe.layer >= n_layers)
      throw IndexError(cat("layer ", recipe.layer, " outside [0, ", n_layers, ")"));
    for (const Sublayer s : kAllSublayers) res.targets.push_back({recipe.layer, s});
  } else {
    for (int64_t l = 0; l < n_layers; ++l)
      for (const Sublayer s : kAllSublayers) res.targets.push_back({l, s});
  }

  std::mt19937_64 rng(recipe.seed);
  for (const LoraTarget& t : res.targets) m.attach_lora(t, recipe.rank, recipe.alpha, rng);
  m.set_base_trainable(false);

  AdamWConfig oc;
  oc.lr = recipe.lr;
  oc.weight_decay = recipe.weight_decay;
  AdamW opt(m.lora_parameters(), oc);

  std::vector<Example> examples;
  examples.reserve(plan.train.size());
  int64_t max_len = 0;
  for (const size_t idx : plan.train) {
    examples.push_back(make_example(all[idx], v, recipe.answer_only_loss));
    max_len = std::max(max_len, static_cast<int64_t>(examples.back().ids.size()));
  }
  if (max_len > m.config().context_length)
    throw UsageError(cat("training sequence of ", max_len, " tokens exceeds the context window ",
                         m.config().context_length));

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const float inv_accum = 1.0f / static_cast<float>(recipe.grad_accum);
  for (int64_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t micro = 0;
    int64_t pending = 0;
    opt.zero_grad();
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(recipe.batch_size)) {
      const size_t stop =
          std::min(order.size(), start + static_cast<size_t>(recipe.batch_size));
      int64_t len = 0;
      for (size_t k = start; k < stop; ++k)
        len = std::max(len, static_cast<int64_t>(examples[order[k]].ids.size()));
      const int64_t batch = static_cast<int64_t>(stop - start);
      std::vector<int32_t> ids(static_cast<size_t>(batch * len), v.pad());
      std::vector<int32_t> targets(static_cast<size_t>(batch * len), kIgnoreIndex);
      for (size_t k = start; k < stop; ++k) {
        const Example& ex = examples[order[k]];
        const size_t row = (k - start) * static_cast<size_t>(len);
        std::copy(ex.ids.begin(), ex.ids.end(), ids.begin() + static_cast<int64_t>(row));
        std::copy(ex.targets.begin(), ex.targets.end(),
                  targets.begin() + static_cast<int64_t>(row));
      }

      Tensor logits =
          reshape(m.forward_tape(ids, batch, len), {batch * len, m.config().vocab_size});
      Tensor ce = cross_entropy(logits, targets);
      const float value = ce.item();
      if (!std::isfinite(value))
        throw NumericError(cat("loss diverged at epoch ", epoch, ", micro-batch ", micro, " (",
                               value, "); lower the learning rate"));
      loss_sum += static_cast<double>(value);
      ++micro;

      backward(scale(ce, inv_accum));
      if (++pending == recipe.grad_accum) {
        opt.step();
        opt.zero_grad();
        pending = 0;
        ++res.steps;
      }
    }
    if (pending > 0) {  // partial window at epoch end still counts
      opt.step();
      opt.zero_grad();
      ++res.steps;
    }
    res.epoch_loss.push_back(micro > 0 ? loss_sum / static_cast<double>(micro) : 0.0);
  }

  m.set_base_trainable(true);
  return res;
}

SweepResult layer_sweep(const Model& base, const Vocab& v,
                        std::span<const TaskInstance> instances, const SplitPlan& plan,
                        FinetuneRecipe recipe) {
  recipe.mode = FinetuneMode::SingleLayer;
  const std::vector<TaskInstance> all(instances.begin(), instances.end());
  if (plan.val.empty()) throw UsageError("layer sweep needs validation instances to rank layers");
  std::vector<TaskInstance> val;
  for (const size_t idx : plan.val) {
    if (idx >= all.size()) throw IndexError(cat("validation index ", idx, " out of range"));
    val.push_back(all[idx]);
  }

  SweepResult sweep;
  sweep.best_accuracy = -1.0;
  for (int32_t l = 0; l < static_cast<int32_t>(base.config().n_layers); ++l) {
    Model leg = base.clone();
    recipe.layer = l;
    SweepLeg entry;
    entry.layer = l;
    entry.fit = finetune(leg, v, instances, plan, recipe);
    entry.val_accuracy = evaluate(leg, v, val).accuracy;
    if (entry.val_accuracy > sweep.best_accuracy) {  // strict: ties keep the lowest layer
      sweep.best_accuracy = entry.val_accuracy;
      sweep.best_layer = l;
    }
    sweep.legs.push_back(std::move(entry));
  }
  return sweep;
}

}  // namespace priorlens
