#include "priorlens/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "priorlens/optim.hpp"

namespace priorlens {

PretrainResult pretrain(Model& m, const Vocab& v, std::span<const uint16_t> stream,
                        const PretrainConfig& cfg) {
  if (cfg.epochs < 1) throw UsageError("pretraining needs at least one epoch");
  if (cfg.batch_size < 1) throw UsageError("batch size must be positive");
  if (!(cfg.lr > 0.0f)) throw UsageError("learning rate must be positive");
  if (cfg.log_every < 1) throw UsageError("log_every must be positive");

  const auto spans = doc_spans(stream, v);
  if (spans.empty()) throw UsageError("corpus has no documents");

  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(m.parameters(), oc);

  const int64_t ctx = m.config().context_length;
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(spans.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  PretrainResult res;
  double window_sum = 0.0;
  int64_t window_n = 0;
  bool done = false;

  for (int64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size() && !done;
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      int64_t len = 0;
      for (size_t k = start; k < stop; ++k)
        len = std::max(len, std::min(ctx, spans[order[k]].second));
      const int64_t batch = static_cast<int64_t>(stop - start);

      std::vector<int32_t> ids(static_cast<size_t>(batch * len), v.pad());
      std::vector<int32_t> targets(static_cast<size_t>(batch * len), kIgnoreIndex);
      for (size_t k = start; k < stop; ++k) {
        const auto [off, doc_len] = spans[order[k]];
        const int64_t n = std::min(ctx, doc_len);
        const size_t row = (k - start) * static_cast<size_t>(len);
        for (int64_t i = 0; i < n; ++i)
          ids[row + static_cast<size_t>(i)] = static_cast<int32_t>(stream[off + i]);
        for (int64_t i = 0; i + 1 < n; ++i)
          targets[row + static_cast<size_t>(i)] = static_cast<int32_t>(stream[off + i + 1]);
      }

      Tensor logits =
          reshape(m.forward_tape(ids, batch, len), {batch * len, m.config().vocab_size});
      Tensor loss = cross_entropy(logits, targets);
      const float value = loss.item();
      if (!std::isfinite(value))
        throw NumericError(cat("pretraining loss diverged at step ", res.steps, " (", value,
                               "); lower the learning rate"));
      opt.zero_grad();
      backward(loss);
      opt.step();

      res.docs_seen += batch;
      window_sum += static_cast<double>(value);
      ++window_n;
      ++res.steps;
      if (res.steps % cfg.log_every == 0) {
        res.curve_steps.push_back(res.steps);
        res.curve_loss.push_back(window_sum / static_cast<double>(window_n));
        window_sum = 0.0;
        window_n = 0;
      }
      if (cfg.max_steps >= 0 && res.steps >= cfg.max_steps) done = true;
    }
  }

  if (window_n > 0) {
    res.curve_steps.push_back(res.steps);
    res.curve_loss.push_back(window_sum / static_cast<double>(window_n));
  }
  res.final_loss = res.curve_loss.empty() ? 0.0 : res.curve_loss.back();
  return res;
}

}  // namespace priorlens
