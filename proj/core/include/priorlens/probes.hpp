#pragma once

// Probing heads over frozen residual states.
//
// Two forms. The linear-softmax probe classifies over the answer classes it
// saw in training — on a stratified split the validation classes are unseen,
// so it cannot do better than chance there by construction. The dense probe
// maps the state through ReLU(Linear(z)) into the model's own output layer,
// so its predictions live in full vocabulary space and unseen classes stay
// reachable.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "priorlens/model.hpp"
#include "priorlens/splits.hpp"

namespace priorlens {

struct ProbeCurves {
  std::vector<double> train;  // accuracy after each epoch
  std::vector<double> val;
};

struct LinearProbe {
  std::vector<int32_t> classes;  // sorted label ids the head can emit
  Tensor w;                      // (classes, d+1); the last column is the bias
  int32_t layer = 0;             // attachment metadata
  int64_t position = -1;         // -1: the answer position (last prompt token)
  std::string split_id;
  ProbeCurves accuracy;

  std::vector<double> predict(std::span<const float> z) const;  // probabilities over classes
  int32_t classify(std::span<const float> z) const;             // argmax label id
};

// Full-batch training of Softmax(Linear(z)) on the plan's train side. labels
// holds one class id per state; the head's class set is whatever appears in
// training. Throws UsageError when a split side is empty or the train side
// has fewer than two classes.
LinearProbe train_linear_probe(const std::vector<std::vector<float>>& states,
                               const std::vector<int32_t>& labels, const SplitPlan& plan,
                               int64_t epochs = 150, float lr = 0.05f, uint64_t seed = 0);

struct DenseProbe {
  Tensor w;                  // (d, d+1); the last column is the bias
  bool relu_bypass = false;  // identity wiring check runs without the ReLU
  int32_t layer = 0;
  int64_t position = -1;
  std::string split_id;
  ProbeCurves accuracy;
};

// Identity weights and a bypassed ReLU: feeding a state through this probe
// and the output layer must reproduce the model's own logits.
DenseProbe identity_dense_probe(const Model& m);

// (n, d) states -> (n, d) probe outputs.
Tensor dense_probe_rows(const DenseProbe& p, const Tensor& states);
// Probe outputs pushed through the model's final norm and unembedding.
Tensor dense_probe_logits(const Model& m, const DenseProbe& p, const Tensor& states);

// Trains the dense probe on first answer tokens at (layer, position) with the
// base model frozen. Validation accuracy is measured over the full vocabulary
// every epoch.
DenseProbe train_dense_probe(Model& m, std::span<const TaskInstance> instances,
                             const SplitPlan& plan, int32_t layer, int64_t position = -1,
                             int64_t epochs = 150, float lr = 1e-2f, uint64_t seed = 0);

// Captured stream states for every instance at (layer, position); -1 uses
// each instance's answer position.
std::vector<std::vector<float>> collect_states(const Model& m,
                                               std::span<const TaskInstance> instances,
                                               int32_t layer, int64_t position = -1);

}  // namespace priorlens
