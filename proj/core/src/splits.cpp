#include "priorlens/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace priorlens {

namespace {

std::string plan_hash(const SplitPlan& p, const std::vector<TaskInstance>& instances) {
  uint64_t h = fnv1a64(p.stratified ? "stratified" : "random");
  h = fnv1a64_bytes(&p.seed, sizeof(p.seed), h);
  h = fnv1a64_bytes(&p.val_fraction, sizeof(p.val_fraction), h);
  for (const auto* side : {&p.train, &p.val}) {
    h = fnv1a64("|", h);
    for (size_t ix : *side) h = fnv1a64(instances[ix].id, h);
  }
  return hash_hex(h);
}

struct UnionFind {
  std::vector<size_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  size_t find(size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(size_t a, size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<int32_t> answer_token_intersection(const std::vector<TaskInstance>& instances,
                                               const SplitPlan& plan) {
  std::set<int32_t> train_tokens, val_tokens;
  for (size_t ix : plan.train)
    train_tokens.insert(instances[ix].gold.begin(), instances[ix].gold.end());
  for (size_t ix : plan.val)
    val_tokens.insert(instances[ix].gold.begin(), instances[ix].gold.end());
  std::vector<int32_t> out;
  std::set_intersection(train_tokens.begin(), train_tokens.end(), val_tokens.begin(),
                        val_tokens.end(), std::back_inserter(out));
  return out;
}

SplitPlan stratified_split(const std::vector<TaskInstance>& instances, double val_fraction,
                           uint64_t seed) {
  const size_t n = instances.size();
  if (n == 0) throw ConstructionError("cannot split an empty instance set");
  if (val_fraction < 0.0 || val_fraction > 1.0)
    throw ConstructionError(cat("validation fraction ", val_fraction, " outside [0,1]"));

  // Group instances whose gold answers share any token.
  UnionFind uf(n);
  std::map<int32_t, size_t> token_owner;
  for (size_t i = 0; i < n; ++i)
    for (int32_t tok : instances[i].gold) {
      auto [it, fresh] = token_owner.emplace(tok, i);
      if (!fresh) uf.unite(i, it->second);
    }
  std::map<size_t, std::vector<size_t>> by_root;
  for (size_t i = 0; i < n; ++i) by_root[uf.find(i)].push_back(i);
  std::vector<std::vector<size_t>> groups;
  groups.reserve(by_root.size());
  for (auto& [root, members] : by_root) groups.push_back(std::move(members));
  // by_root is keyed by the smallest member only incidentally; fix the order
  // by each group's first (smallest) instance index, then shuffle.
  std::sort(groups.begin(), groups.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  const auto target = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n)));
  SplitPlan plan;
  plan.stratified = true;
  plan.val_fraction = val_fraction;
  plan.seed = seed;
  plan.total = n;

  // Greedy fit: take any group that still fits under the target, then patch
  // with the smallest remaining group if that gets strictly closer.
  std::vector<bool> in_val(groups.size(), false);
  size_t val_count = 0;
  for (size_t g = 0; g < groups.size(); ++g)
    if (val_count + groups[g].size() <= target) {
      in_val[g] = true;
      val_count += groups[g].size();
    }
  if (val_count < target) {
    size_t best = groups.size();
    for (size_t g = 0; g < groups.size(); ++g)
      if (!in_val[g] && (best == groups.size() || groups[g].size() < groups[best].size()))
        best = g;
    if (best != groups.size()) {
      const size_t with_best = val_count + groups[best].size();
      const size_t over = with_best > target ? with_best - target : 0;
      const size_t under = target - val_count;
      if (over < under) {
        in_val[best] = true;
        val_count = with_best;
      }
    }
  }
  const auto err = static_cast<double>(val_count > target ? val_count - target
                                                          : target - val_count);
  if (target > 0 && err > 0.25 * static_cast<double>(target)) {
    size_t smallest = n;
    for (const auto& g : groups) smallest = std::min(smallest, g.size());
    throw ConstructionError(
        cat("validation fraction ", val_fraction, " is not achievable: requested ", target,
            " of ", n, " instances but answer-token groups only reach ", val_count,
            " (", groups.size(), " groups, smallest ", smallest,
            "); achievable fractions are multiples of group sizes"));
  }

  for (size_t g = 0; g < groups.size(); ++g) {
    auto& side = in_val[g] ? plan.val : plan.train;
    side.insert(side.end(), groups[g].begin(), groups[g].end());
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());

  plan.certificate = answer_token_intersection(instances, plan);
  if (!plan.certificate.empty())
    throw ConstructionError(cat("internal: stratified split produced a non-empty certificate (",
                                plan.certificate.size(), " tokens)"));
  plan.id = plan_hash(plan, instances);
  return plan;
}

SplitPlan random_split(const std::vector<TaskInstance>& instances, double val_fraction,
                       uint64_t seed) {
  const size_t n = instances.size();
  if (n == 0) throw ConstructionError("cannot split an empty instance set");
  if (val_fraction < 0.0 || val_fraction > 1.0)
    throw ConstructionError(cat("validation fraction ", val_fraction, " outside [0,1]"));
  std::vector<size_t> ix(n);
  std::iota(ix.begin(), ix.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ix.begin(), ix.end(), rng);
  const auto k = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n)));
  SplitPlan plan;
  plan.stratified = false;
  plan.val_fraction = val_fraction;
  plan.seed = seed;
  plan.total = n;
  plan.val.assign(ix.begin(), ix.begin() + static_cast<std::ptrdiff_t>(k));
  plan.train.assign(ix.begin() + static_cast<std::ptrdiff_t>(k), ix.end());
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  plan.certificate = answer_token_intersection(instances, plan);  // recorded, waived
  plan.id = plan_hash(plan, instances);
  return plan;
}

void verify_split(const std::vector<TaskInstance>& instances, const SplitPlan& plan,
                  const Vocab& vocab) {
  if (plan.total != instances.size())
    throw ConstructionError(cat("plan covers ", plan.total, " instances but the set has ",
                                instances.size()));
  std::vector<char> seen(instances.size(), 0);
  for (const auto* side : {&plan.train, &plan.val})
    for (size_t ix : *side) {
      if (ix >= instances.size())
        throw ConstructionError(cat("plan references instance ", ix, " out of range"));
      if (seen[ix]++) throw ConstructionError(cat("instance ", ix, " appears twice in the plan"));
    }
  for (size_t i = 0; i < instances.size(); ++i)
    if (!seen[i]) throw ConstructionError(cat("instance ", i, " missing from the plan"));

  if (!plan.stratified) return;  // certificate explicitly waived
  auto overlap = answer_token_intersection(instances, plan);
  if (!overlap.empty()) {
    std::string toks;
    for (size_t i = 0; i < overlap.size() && i < 8; ++i)
      toks += cat(i ? ", " : "", "'", vocab.token(overlap[i]), "'");
    throw ConstructionError(cat("stratified certificate violated: ", overlap.size(),
                                " answer tokens shared between train and validation (", toks,
                                overlap.size() > 8 ? ", ..." : "", ")"));
  }
}

}  // namespace priorlens
