#include "priorlens/probes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "priorlens/optim.hpp"

namespace priorlens {

namespace {

// Stacks the selected states into a matrix; width d+1 adds a trailing
// all-ones column so a plain matmul carries the bias.
Tensor stack_states(const std::vector<std::vector<float>>& states,
                    const std::vector<size_t>& idxs, int64_t d, int64_t width) {
  const int64_t n = static_cast<int64_t>(idxs.size());
  std::vector<float> flat(static_cast<size_t>(n * width), 1.0f);
  for (int64_t r = 0; r < n; ++r) {
    const auto& z = states[idxs[static_cast<size_t>(r)]];
    if (static_cast<int64_t>(z.size()) != d)
      throw UsageError(cat("state ", idxs[static_cast<size_t>(r)], " has ", z.size(),
                           " components, expected ", d));
    std::copy(z.begin(), z.end(), flat.begin() + r * width);
  }
  return Tensor::from_data({n, width}, std::move(flat));
}

void check_plan_indexes(const SplitPlan& plan, size_t n) {
  if (plan.train.empty() || plan.val.empty())
    throw UsageError("probe training needs instances on both split sides");
  if (plan.train.size() + plan.val.size() != n)
    throw UsageError(cat("split covers ", plan.train.size() + plan.val.size(),
                         " instances, the data has ", n));
  for (const size_t i : plan.train)
    if (i >= n) throw IndexError(cat("train index ", i, " out of range"));
  for (const size_t i : plan.val)
    if (i >= n) throw IndexError(cat("validation index ", i, " out of range"));
}

size_t argmax_row(std::span<const float> row) {
  size_t best = 0;
  for (size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

std::vector<double> LinearProbe::predict(std::span<const float> z) const {
  const int64_t d = w.shape()[1] - 1;
  if (static_cast<int64_t>(z.size()) != d)
    throw UsageError(cat("state has ", z.size(), " components, probe expects ", d));
  const auto wd = w.data();
  std::vector<double> logits(classes.size());
  for (size_t c = 0; c < classes.size(); ++c) {
    double s = wd[c * static_cast<size_t>(d + 1) + static_cast<size_t>(d)];  // bias
    for (int64_t j = 0; j < d; ++j)
      s += static_cast<double>(wd[c * static_cast<size_t>(d + 1) + static_cast<size_t>(j)]) *
           z[static_cast<size_t>(j)];
    logits[c] = s;
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& x : logits) {
    x = std::exp(x - hi);
    sum += x;
  }
  for (double& x : logits) x /= sum;
  return logits;
}

int32_t LinearProbe::classify(std::span<const float> z) const {
  const auto p = predict(z);
  return classes[static_cast<size_t>(
      std::max_element(p.begin(), p.end()) - p.begin())];
}

LinearProbe train_linear_probe(const std::vector<std::vector<float>>& states,
                               const std::vector<int32_t>& labels, const SplitPlan& plan,
                               int64_t epochs, float lr, uint64_t seed) {
  if (states.size() != labels.size())
    throw UsageError(cat(states.size(), " states but ", labels.size(), " labels"));
  if (states.empty()) throw UsageError("no states to probe");
  if (epochs < 1) throw UsageError("probe training needs at least one epoch");
  check_plan_indexes(plan, states.size());
  const int64_t d = static_cast<int64_t>(states[plan.train.front()].size());

  LinearProbe probe;
  for (const size_t i : plan.train) probe.classes.push_back(labels[i]);
  std::sort(probe.classes.begin(), probe.classes.end());
  probe.classes.erase(std::unique(probe.classes.begin(), probe.classes.end()),
                      probe.classes.end());
  if (probe.classes.size() < 2)
    throw UsageError("training side holds a single class; nothing to separate");
  probe.split_id = plan.id;

  std::map<int32_t, int32_t> class_index;
  for (size_t c = 0; c < probe.classes.size(); ++c)
    class_index[probe.classes[c]] = static_cast<int32_t>(c);

  const Tensor x_train = stack_states(states, plan.train, d, d + 1);
  const Tensor x_val = stack_states(states, plan.val, d, d + 1);
  std::vector<int32_t> targets;
  for (const size_t i : plan.train) targets.push_back(class_index.at(labels[i]));

  const int64_t n_classes = static_cast<int64_t>(probe.classes.size());
  probe.w = Tensor::zeros({n_classes, d + 1}, true);  // convex; zero start is exact
  (void)seed;  // the objective is convex and the start is fixed

  AdamWConfig oc;
  oc.lr = lr;
  oc.weight_decay = 0.0f;
  AdamW opt({{"probe/w", probe.w}}, oc);

  for (int64_t e = 0; e < epochs; ++e) {
    Tensor logits = matmul_nt(x_train, probe.w);
    Tensor loss = cross_entropy(logits, targets);
    if (!std::isfinite(loss.item()))
      throw NumericError(cat("probe loss diverged at epoch ", e));
    opt.zero_grad();
    backward(loss);
    opt.step();

    NoGradGuard ng;
    const Tensor pt = matmul_nt(x_train, probe.w);
    int64_t hit = 0;
    for (int64_t r = 0; r < pt.shape()[0]; ++r) {
      const auto row = pt.data().subspan(static_cast<size_t>(r * n_classes),
                                         static_cast<size_t>(n_classes));
      if (static_cast<int32_t>(argmax_row(row)) == targets[static_cast<size_t>(r)]) ++hit;
    }
    probe.accuracy.train.push_back(static_cast<double>(hit) /
                                   static_cast<double>(pt.shape()[0]));

    const Tensor pv = matmul_nt(x_val, probe.w);
    hit = 0;
    for (int64_t r = 0; r < pv.shape()[0]; ++r) {
      const auto row = pv.data().subspan(static_cast<size_t>(r * n_classes),
                                         static_cast<size_t>(n_classes));
      if (probe.classes[argmax_row(row)] == labels[plan.val[static_cast<size_t>(r)]]) ++hit;
    }
    probe.accuracy.val.push_back(static_cast<double>(hit) /
                                 static_cast<double>(pv.shape()[0]));
  }
  return probe;
}

DenseProbe identity_dense_probe(const Model& m) {
  const int64_t d = m.config().d_model;
  std::vector<float> w(static_cast<size_t>(d * (d + 1)), 0.0f);
  for (int64_t i = 0; i < d; ++i) w[static_cast<size_t>(i * (d + 1) + i)] = 1.0f;
  DenseProbe p;
  p.w = Tensor::from_data({d, d + 1}, std::move(w));
  p.relu_bypass = true;
  return p;
}

Tensor dense_probe_rows(const DenseProbe& p, const Tensor& states) {
  const Shape& sh = states.shape();
  if (sh.size() != 2) throw UsageError("dense probe expects (n, d) states");
  const int64_t d = p.w.shape()[0];
  if (sh[1] != d) throw UsageError(cat("states have width ", sh[1], ", probe expects ", d));
  const int64_t n = sh[0];
  std::vector<float> flat(static_cast<size_t>(n * (d + 1)), 1.0f);
  const auto src = states.data();
  for (int64_t r = 0; r < n; ++r)
    std::copy(src.begin() + r * d, src.begin() + (r + 1) * d, flat.begin() + r * (d + 1));
  const Tensor x = Tensor::from_data({n, d + 1}, std::move(flat));
  Tensor h = matmul_nt(x, p.w);
  return p.relu_bypass ? h : relu(h);
}

Tensor dense_probe_logits(const Model& m, const DenseProbe& p, const Tensor& states) {
  return m.project_out(dense_probe_rows(p, states));
}

std::vector<std::vector<float>> collect_states(const Model& m,
                                               std::span<const TaskInstance> instances,
                                               int32_t layer, int64_t position) {
  if (instances.empty()) throw UsageError("no instances to collect states from");
  if (layer < 0 || layer > m.config().n_layers)
    throw IndexError(cat("layer ", layer, " outside the residual stream [0, ",
                         m.config().n_layers, "]"));

  std::map<int64_t, std::vector<size_t>> by_len;
  for (size_t i = 0; i < instances.size(); ++i) {
    const int64_t len = static_cast<int64_t>(instances[i].prompt.size());
    const int64_t pos = position < 0 ? len - 1 : position;
    if (pos < 0 || pos >= len)
      throw IndexError(cat("position ", pos, " outside instance ", i, " of length ", len));
    by_len[len].push_back(i);
  }

  std::vector<std::vector<float>> out(instances.size());
  for (const auto& [len, idxs] : by_len) {
    std::vector<std::vector<int32_t>> rows;
    rows.reserve(idxs.size());
    for (const size_t i : idxs) rows.push_back(instances[i].prompt);
    const auto traces = m.capture_batch(rows);
    for (size_t k = 0; k < idxs.size(); ++k) {
      const int64_t pos = position < 0 ? len - 1 : position;
      const auto row = traces[k].at(layer, pos);
      out[idxs[k]] = {row.begin(), row.end()};
    }
  }
  return out;
}

DenseProbe train_dense_probe(Model& m, std::span<const TaskInstance> instances,
                             const SplitPlan& plan, int32_t layer, int64_t position,
                             int64_t epochs, float lr, uint64_t seed) {
  if (epochs < 1) throw UsageError("probe training needs at least one epoch");
  check_plan_indexes(plan, instances.size());
  for (size_t i = 0; i < instances.size(); ++i)
    if (instances[i].gold.empty())
      throw UsageError(cat("instance ", i, " has no gold tokens to label with"));

  const auto states = collect_states(m, instances, layer, position);
  const int64_t d = m.config().d_model;
  const Tensor x_train = stack_states(states, plan.train, d, d);  // raw rows; the probe adds bias
  const Tensor x_val = stack_states(states, plan.val, d, d);

  std::vector<int32_t> targets;
  for (const size_t i : plan.train) targets.push_back(instances[i].gold[0]);

  DenseProbe probe;
  probe.layer = layer;
  probe.position = position;
  probe.split_id = plan.id;
  std::mt19937_64 rng(seed);
  probe.w = Tensor::randn({d, d + 1}, rng, 0.1f, true);

  AdamWConfig oc;
  oc.lr = lr;
  oc.weight_decay = 0.0f;
  AdamW opt({{"probe/w", probe.w}}, oc);
  m.set_base_trainable(false);  // gradients stop at the output layer

  const int64_t vocab = m.config().vocab_size;
  for (int64_t e = 0; e < epochs; ++e) {
    Tensor logits = dense_probe_logits(m, probe, x_train);
    Tensor loss = cross_entropy(logits, targets);
    if (!std::isfinite(loss.item())) {
      m.set_base_trainable(true);
      throw NumericError(cat("dense probe loss diverged at epoch ", e));
    }
    opt.zero_grad();
    backward(loss);
    opt.step();

    NoGradGuard ng;
    const Tensor pt = dense_probe_logits(m, probe, x_train);
    int64_t hit = 0;
    for (int64_t r = 0; r < pt.shape()[0]; ++r) {
      const auto row = pt.data().subspan(static_cast<size_t>(r * vocab),
                                         static_cast<size_t>(vocab));
      if (static_cast<int32_t>(argmax_row(row)) == targets[static_cast<size_t>(r)]) ++hit;
    }
    probe.accuracy.train.push_back(static_cast<double>(hit) /
                                   static_cast<double>(pt.shape()[0]));

    const Tensor pv = dense_probe_logits(m, probe, x_val);
    hit = 0;
    for (int64_t r = 0; r < pv.shape()[0]; ++r) {
      const auto row = pv.data().subspan(static_cast<size_t>(r * vocab),
                                         static_cast<size_t>(vocab));
      if (static_cast<int32_t>(argmax_row(row)) ==
          instances[plan.val[static_cast<size_t>(r)]].gold[0])
        ++hit;
    }
    probe.accuracy.val.push_back(static_cast<double>(hit) /
                                 static_cast<double>(pv.shape()[0]));
  }
  m.set_base_trainable(true);
  return probe;
}

}  // namespace priorlens
