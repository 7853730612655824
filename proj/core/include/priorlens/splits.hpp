#pragma once

// Train/validation splitting with a machine-checked disjointness certificate.
//
// A stratified split groups instances by connected answer tokens (two
// instances sharing any gold token must land on the same side) and then
// assigns whole groups to validation until the requested fraction is met.
// The certificate — the intersection of train and validation answer-token
// sets — is recomputed from scratch at construction and must be verified
// again by any consumer that trains on the plan.

#include <cstdint>
#include <vector>

#include "priorlens/tasks.hpp"

namespace priorlens {

struct SplitPlan {
  std::vector<size_t> train;  // instance indexes into the generating set
  std::vector<size_t> val;
  std::vector<int32_t> certificate;  // sorted train∩val answer tokens
  bool stratified = true;            // false: certificate explicitly waived
  double val_fraction = 0.0;
  uint64_t seed = 0;
  size_t total = 0;
  std::string id;
};

// Throws ConstructionError when the fraction cannot be approximated with the
// available answer-token groups; the message states the achievable bounds.
SplitPlan stratified_split(const std::vector<TaskInstance>& instances, double val_fraction,
                           uint64_t seed);

// Uniform instance-level split; answer tokens may overlap across sides and
// the plan is marked non-stratified.
SplitPlan random_split(const std::vector<TaskInstance>& instances, double val_fraction,
                       uint64_t seed);

// Recomputed train∩val gold-token intersection, sorted ascending.
std::vector<int32_t> answer_token_intersection(const std::vector<TaskInstance>& instances,
                                               const SplitPlan& plan);

// Re-verifies coverage and (for stratified plans) certificate emptiness.
// Throws ConstructionError naming the overlapping tokens on failure.
void verify_split(const std::vector<TaskInstance>& instances, const SplitPlan& plan,
                  const Vocab& vocab);

}  // namespace priorlens
