#include "priorlens/steering.hpp"

#include <algorithm>
#include <cmath>

#include "priorlens/checkpoint.hpp"
#include "priorlens/stats.hpp"

namespace priorlens {

namespace {

// Cholesky solve of the normal equations, all in double. Returns false when a
// pivot collapses, i.e. the system is (numerically) singular.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& x, int64_t d) {
  double diag_max = 0.0;
  for (int64_t i = 0; i < d; ++i) diag_max = std::max(diag_max, a[i * d + i]);
  const double floor = diag_max * 1e-13;
  for (int64_t j = 0; j < d; ++j) {
    double s = a[j * d + j];
    for (int64_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
    if (!(s > floor)) return false;
    const double piv = std::sqrt(s);
    a[j * d + j] = piv;
    for (int64_t i = j + 1; i < d; ++i) {
      double t = a[i * d + j];
      for (int64_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = t / piv;
    }
  }
  for (int64_t i = 0; i < d; ++i) {  // L y = b
    double t = x[i];
    for (int64_t k = 0; k < i; ++k) t -= a[i * d + k] * x[k];
    x[i] = t / a[i * d + i];
  }
  for (int64_t i = d - 1; i >= 0; --i) {  // L^T v = y
    double t = x[i];
    for (int64_t k = i + 1; k < d; ++k) t -= a[k * d + i] * x[k];
    x[i] = t / a[i * d + i];
  }
  return true;
}

std::vector<float> unit_normalized(std::span<const double> v) {
  double n2 = 0.0;
  for (const double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 0.0) || !std::isfinite(n))
    throw NumericError("direction has zero or non-finite norm");
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

void check_unit(const SteeringDirection& d) {
  if (d.v.empty()) throw UsageError("steering direction is empty");
  double n2 = 0.0;
  for (const float x : d.v) n2 += static_cast<double>(x) * x;
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-3)
    throw UsageError(cat("steering direction is not unit norm (|v| = ", std::sqrt(n2), ")"));
}

}  // namespace

std::string direction_kind_name(DirectionKind k) {
  switch (k) {
    case DirectionKind::Unigram: return "unigram";
    case DirectionKind::ContextVsPrior: return "context-vs-prior";
  }
  throw UsageError("unknown direction kind");
}

UnigramFit fit_unigram_direction(const Tensor& unembed, const UnigramStats& stats) {
  const Shape& sh = unembed.shape();
  if (sh.size() != 2) throw UsageError("unembedding must be rank 2 (vocab, d_model)");
  const int64_t vocab = sh[0];
  const int64_t d = sh[1];
  if (static_cast<int64_t>(stats.counts.size()) != vocab)
    throw UsageError(cat("unigram counts cover ", stats.counts.size(), " tokens, unembedding has ",
                         vocab, " rows"));
  if (stats.total <= 0) throw UsageError("unigram stats are empty");

  // Add-one smoothing keeps log p finite for tokens the corpus never used.
  std::vector<double> logp(static_cast<size_t>(vocab));
  const double denom = static_cast<double>(stats.total) + static_cast<double>(vocab);
  for (int64_t i = 0; i < vocab; ++i)
    logp[static_cast<size_t>(i)] =
        std::log((static_cast<double>(stats.counts[static_cast<size_t>(i)]) + 1.0) / denom);

  const auto u = unembed.data();
  auto at = [&](int64_t r, int64_t c) {
    return static_cast<double>(u[static_cast<size_t>(r * d + c)]);
  };

  // Normal equations: (U^T U) v = U^T log p.
  std::vector<double> gram(static_cast<size_t>(d * d), 0.0);
  std::vector<double> rhs(static_cast<size_t>(d), 0.0);
  for (int64_t r = 0; r < vocab; ++r) {
    const double b = logp[static_cast<size_t>(r)];
    for (int64_t i = 0; i < d; ++i) {
      const double ui = at(r, i);
      rhs[static_cast<size_t>(i)] += ui * b;
      for (int64_t j = i; j < d; ++j) gram[static_cast<size_t>(i * d + j)] += ui * at(r, j);
    }
  }
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < i; ++j)
      gram[static_cast<size_t>(i * d + j)] = gram[static_cast<size_t>(j * d + i)];

  UnigramFit fit;
  std::vector<double> sol = rhs;
  std::vector<double> work = gram;
  if (!cholesky_solve(work, sol, d)) {
    // Rank-deficient unembedding: fall back to a tiny ridge and say so.
    fit.conditioning_warning = true;
    double trace = 0.0;
    for (int64_t i = 0; i < d; ++i) trace += gram[static_cast<size_t>(i * d + i)];
    const double ridge = 1e-8 * (trace / static_cast<double>(d)) + 1e-12;
    work = gram;
    for (int64_t i = 0; i < d; ++i) work[static_cast<size_t>(i * d + i)] += ridge;
    sol = rhs;
    if (!cholesky_solve(work, sol, d))
      throw NumericError("unigram normal equations are singular even with a ridge");
  }

  fit.direction.kind = DirectionKind::Unigram;
  fit.direction.v = unit_normalized(sol);
  fit.direction.layer = 0;
  fit.direction.scale = -10.0;

  // How well the fitted axis recovers the frequency ranking.
  std::vector<double> proj(static_cast<size_t>(vocab), 0.0);
  for (int64_t r = 0; r < vocab; ++r) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i)
      s += at(r, i) * static_cast<double>(fit.direction.v[static_cast<size_t>(i)]);
    proj[static_cast<size_t>(r)] = s;
  }
  fit.rho = spearman(proj, logp).rho;
  return fit;
}

UnigramFit fit_unigram_direction(const Model& m, const UnigramStats& stats) {
  UnigramFit fit = fit_unigram_direction(m.unembedding(), stats);
  fit.direction.layer = static_cast<int32_t>(m.config().n_layers);  // the read-out stream
  return fit;
}

SteeringDirection context_prior_from_means(std::span<const float> ctx_mean,
                                           std::span<const float> prior_mean, int32_t layer) {
  if (ctx_mean.size() != prior_mean.size() || ctx_mean.empty())
    throw UsageError(cat("mean states disagree in size: ", ctx_mean.size(), " vs ",
                         prior_mean.size()));
  std::vector<double> diff(ctx_mean.size());
  double n2 = 0.0;
  for (size_t i = 0; i < ctx_mean.size(); ++i) {
    diff[i] = static_cast<double>(ctx_mean[i]) - static_cast<double>(prior_mean[i]);
    n2 += diff[i] * diff[i];
  }
  if (std::sqrt(n2) < 1e-6)
    throw NumericError("the two conditions coincide; no context-vs-prior direction exists");
  SteeringDirection d;
  d.kind = DirectionKind::ContextVsPrior;
  d.v = unit_normalized(diff);
  d.layer = layer;
  d.scale = -1.0;
  return d;
}

SteeringDirection fit_context_prior_direction(const Model& m, const Vocab& v,
                                              const PromptTemplates& t,
                                              std::span<const TaskInstance> instances,
                                              int32_t layer) {
  if (instances.size() < 50)
    throw UsageError(cat("context-vs-prior direction needs at least 50 instances, got ",
                         instances.size()));
  const TaskKind kind = instances.front().kind;
  for (const auto& inst : instances)
    if (inst.kind != kind)
      throw UsageError(cat("instances mix task kinds: ", task_name(kind), " and ",
                           task_name(inst.kind)));
  const int32_t n_layers = static_cast<int32_t>(m.config().n_layers);
  if (layer == -1) layer = n_layers / 2;
  if (layer < 0 || layer > n_layers)
    throw IndexError(cat("layer ", layer, " outside the residual stream [0, ", n_layers, "]"));

  const TokenPattern* pat = nullptr;
  switch (kind) {
    case TaskKind::Counting: pat = &t.counting; break;
    case TaskKind::ShiftCipher: pat = &t.shift_cipher; break;
    case TaskKind::Acronym: pat = &t.acronym; break;
    case TaskKind::Multiplication: pat = &t.multiplication; break;
    case TaskKind::MakeLetters: pat = &t.make_letters; break;
  }
  if (pat == nullptr) throw UsageError("unknown task kind");

  const int64_t d = m.config().d_model;
  std::vector<double> ctx_mean(static_cast<size_t>(d), 0.0);
  for (const auto& inst : instances) {
    const ForwardResult fr = m.forward(inst.prompt, /*capture=*/true);
    const auto row = fr.trace->at(layer, fr.trace->length() - 1);
    for (int64_t i = 0; i < d; ++i)
      ctx_mean[static_cast<size_t>(i)] += static_cast<double>(row[static_cast<size_t>(i)]);
  }
  for (double& x : ctx_mean) x /= static_cast<double>(instances.size());

  // The withheld condition has no input, so every instance shares one state.
  const auto guess = render_pattern(guess_variant(*pat), v, {});
  const ForwardResult gr = m.forward(guess, /*capture=*/true);
  const auto prow = gr.trace->at(layer, gr.trace->length() - 1);

  std::vector<float> ctx_f(ctx_mean.size());
  for (size_t i = 0; i < ctx_mean.size(); ++i) ctx_f[i] = static_cast<float>(ctx_mean[i]);
  return context_prior_from_means(ctx_f, prow, layer);
}

Interventions steer(const SteeringDirection& d, int64_t answer_pos) {
  check_unit(d);
  if (answer_pos < 0) throw UsageError(cat("answer position ", answer_pos, " is negative"));
  Interventions iv;
  if (d.scale == 0.0) return iv;  // nothing to add; keep the pass bit-identical
  StreamEdit e;
  e.layer = d.layer;
  e.from_pos = answer_pos;
  e.fn = [v = d.v, s = static_cast<float>(d.scale)](std::span<float> row) {
    for (size_t i = 0; i < v.size() && i < row.size(); ++i) row[i] += s * v[i];
  };
  iv.stream.push_back(std::move(e));
  return iv;
}

Interventions ablate_direction(const SteeringDirection& d, int32_t n_layers) {
  check_unit(d);
  if (n_layers <= 0) throw UsageError("ablation needs at least one layer");
  Interventions iv;
  for (int32_t l = 0; l < n_layers; ++l) {
    WriteEdit e;
    e.layer = l;
    e.fn = [v = d.v](std::span<float> row) {
      double dot = 0.0;
      const size_t n = std::min(v.size(), row.size());
      for (size_t i = 0; i < n; ++i) dot += static_cast<double>(row[i]) * v[i];
      for (size_t i = 0; i < n; ++i) row[i] -= static_cast<float>(dot * v[i]);
    };
    iv.writes.push_back(std::move(e));
  }
  return iv;
}

void save_direction(const std::string& path, const SteeringDirection& d) {
  check_unit(d);
  std::vector<NamedTensor> entries;
  entries.push_back({"steer/v", Shape{static_cast<int64_t>(d.v.size())}, d.v});
  entries.push_back({"steer/meta", Shape{3},
                     {static_cast<float>(static_cast<int>(d.kind)), static_cast<float>(d.layer),
                      static_cast<float>(d.scale)}});
  save_tensors(path, entries);
}

SteeringDirection load_direction(const std::string& path) {
  const auto entries = load_tensors(path);
  const NamedTensor* vec = nullptr;
  const NamedTensor* meta = nullptr;
  for (const auto& e : entries) {
    if (e.name == "steer/v") vec = &e;
    if (e.name == "steer/meta") meta = &e;
  }
  if (vec == nullptr || meta == nullptr)
    throw LoadError(cat(path, " does not hold a steering direction"));
  if (meta->data.size() != 3)
    throw LoadError(cat(path, " has a malformed direction header"));
  const int kind = static_cast<int>(meta->data[0]);
  if (kind != 0 && kind != 1)
    throw LoadError(cat(path, " names an unknown direction kind ", kind));
  SteeringDirection d;
  d.kind = static_cast<DirectionKind>(kind);
  d.v = vec->data;
  d.layer = static_cast<int32_t>(meta->data[1]);
  d.scale = static_cast<double>(meta->data[2]);
  double n2 = 0.0;
  for (const float x : d.v) n2 += static_cast<double>(x) * x;
  if (d.v.empty() || std::abs(std::sqrt(n2) - 1.0) > 1e-3)
    throw LoadError(cat(path, " holds a direction that is not unit norm"));
  return d;
}

}  // namespace priorlens
