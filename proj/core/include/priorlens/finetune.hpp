#pragma once

// LoRA finetuning on task instances, against a verified split. Base weights
// stay frozen; only adapter matrices train. The split certificate is
// re-verified before any step — a non-stratified plan trains only with an
// explicit override, because a leaky split inflates every accuracy claim
// built on it.

#include <cstdint>
#include <span>
#include <vector>

#include "priorlens/eval.hpp"
#include "priorlens/model.hpp"
#include "priorlens/splits.hpp"

namespace priorlens {

enum class FinetuneMode : uint8_t { WholeModel, SingleLayer };

struct FinetuneRecipe {
  FinetuneMode mode = FinetuneMode::WholeModel;
  int32_t layer = 0;  // SingleLayer only
  int64_t rank = 8;
  float alpha = 16.0f;
  float lr = 1e-4f;
  float weight_decay = 0.01f;
  int64_t batch_size = 2;
  int64_t grad_accum = 8;   // optimizer steps every grad_accum micro-batches
  int64_t epochs = 50;
  uint64_t seed = 0;
  bool answer_only_loss = true;  // loss over the answer span only
  bool allow_unstratified = false;
};

struct FinetuneResult {
  std::vector<double> epoch_loss;  // mean micro-batch loss per epoch
  int64_t steps = 0;               // optimizer steps taken
  std::vector<LoraTarget> targets;
};

// Attaches adapters (all six sublayers; every layer or just recipe.layer),
// trains them on the plan's train side, and leaves them attached so the
// caller can evaluate, merge, or detach. Epochs of zero attach zero-init
// adapters and train nothing, which leaves the outputs bit-identical.
FinetuneResult finetune(Model& m, const Vocab& v, std::span<const TaskInstance> instances,
                        const SplitPlan& plan, const FinetuneRecipe& recipe);

struct SweepLeg {
  int32_t layer = 0;
  double val_accuracy = 0.0;
  FinetuneResult fit;
};

struct SweepResult {
  std::vector<SweepLeg> legs;  // one per layer, ascending
  int32_t best_layer = 0;      // argmax validation accuracy, ties to the lowest
  double best_accuracy = 0.0;
};

// Trains one single-layer clone per layer and scores each on validation.
// The base model is untouched.
SweepResult layer_sweep(const Model& base, const Vocab& v,
                        std::span<const TaskInstance> instances, const SplitPlan& plan,
                        FinetuneRecipe recipe);

}  // namespace priorlens
