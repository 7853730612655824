#pragma once

// Next-token pretraining over a corpus stream. The unit of training is the
// document: every <s>...</s> span becomes one sequence starting at position
// zero, so the model only ever sees prompts the way inference presents them.

#include <cstdint>
#include <span>
#include <vector>

#include "priorlens/corpus.hpp"
#include "priorlens/model.hpp"

namespace priorlens {

struct PretrainConfig {
  int64_t epochs = 1;       // passes over the document set
  int64_t batch_size = 8;   // documents per step, padded to the longest
  float lr = 3e-4f;
  float weight_decay = 0.01f;
  uint64_t seed = 0;
  int64_t max_steps = -1;   // cap on optimizer steps; -1 trains to the end
  int64_t log_every = 50;   // loss-curve resolution, in steps
};

struct PretrainResult {
  std::vector<int64_t> curve_steps;  // step index of each curve point
  std::vector<double> curve_loss;    // mean loss since the previous point
  int64_t steps = 0;
  int64_t docs_seen = 0;
  double final_loss = 0.0;  // mean over the last logging window
};

// Trains every parameter. Documents longer than the context window are
// truncated to fit; a diverging loss aborts with NumericError.
PretrainResult pretrain(Model& m, const Vocab& v, std::span<const uint16_t> stream,
                        const PretrainConfig& cfg);

}  // namespace priorlens
