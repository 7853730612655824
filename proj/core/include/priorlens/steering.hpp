#pragma once

// Linear residual-stream interventions. Two direction families:
//   unigram          least-squares pre-image of the log token frequencies
//                    under the unembedding ("how the stream encodes how
//                    common a token is")
//   context-vs-prior difference of mean answer-position states between a
//                    prompt with the input shown and the same prompt with
//                    the input withheld
// Directions are stored unit-norm; the scale carries sign and magnitude.
// steer() adds scale*v from the answer position onward; ablate_direction()
// removes the v-component of every block's residual write.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "priorlens/corpus.hpp"
#include "priorlens/model.hpp"
#include "priorlens/tasks.hpp"
#include "priorlens/templates.hpp"

namespace priorlens {

enum class DirectionKind : uint8_t { Unigram = 0, ContextVsPrior = 1 };
std::string direction_kind_name(DirectionKind k);

struct SteeringDirection {
  DirectionKind kind = DirectionKind::Unigram;
  std::vector<float> v;  // unit norm, length d_model
  int32_t layer = 0;     // stream layer for steering, write layer(s) for ablation
  double scale = 0.0;
};

struct UnigramFit {
  SteeringDirection direction;
  double rho = 0.0;  // recovered ranking vs smoothed log p (sanity of the fit)
  bool conditioning_warning = false;
};

// Solves argmin_v ||U v - log p|| with add-one smoothing on the counts, so
// zero-count tokens stay finite. A near-singular normal system is solved
// with a small ridge and flagged.
UnigramFit fit_unigram_direction(const Tensor& unembed, const UnigramStats& stats);

// Model-level wrapper; also pins the default application point: last layer,
// scale -10.
UnigramFit fit_unigram_direction(const Model& m, const UnigramStats& stats);

// Difference of means, unit-normalized; throws NumericError when the two
// conditions coincide (zero direction).
SteeringDirection context_prior_from_means(std::span<const float> ctx_mean,
                                           std::span<const float> prior_mean, int32_t layer);

// Runs every instance (input shown) and the task's guess prompt (input
// withheld), averages answer-position states at `layer`, and takes the
// difference. layer -1 means the middle of the stream. Defaults: scale -1.
// Needs at least 50 instances.
SteeringDirection fit_context_prior_direction(const Model& m, const Vocab& v,
                                              const PromptTemplates& t,
                                              std::span<const TaskInstance> instances,
                                              int32_t layer = -1);

// Adds scale*v to stream rows at positions >= answer_pos. A zero scale
// returns an empty handle, so the forward pass is bit-identical.
Interventions steer(const SteeringDirection& d, int64_t answer_pos);

// Replaces every residual write w (attention and MLP, layers 0..n_layers-1)
// with w - (w.v)v. Idempotent; ignores d.scale.
Interventions ablate_direction(const SteeringDirection& d, int32_t n_layers);

// Directions ride in the checkpoint container: the vector plus a small
// metadata tensor (kind, layer, scale). The scale survives the f32 container
// exactly for the default integer scales.
void save_direction(const std::string& path, const SteeringDirection& d);
SteeringDirection load_direction(const std::string& path);

}  // namespace priorlens
