#include "priorlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "priorlens/checkpoint.hpp"

namespace priorlens {

namespace {

constexpr float kMaskedScore = -1e9f;

// The config rides inside the checkpoint as an f32 vector. The seed is split
// into 16-bit limbs because a 64-bit value does not survive an f32 round-trip.
constexpr size_t kConfigFloats = 10;

std::vector<float> pack_config(const ModelConfig& c) {
  return {static_cast<float>(c.n_layers),
          static_cast<float>(c.d_model),
          static_cast<float>(c.n_heads),
          static_cast<float>(c.vocab_size),
          static_cast<float>(c.context_length),
          c.lens_normalize ? 1.0f : 0.0f,
          static_cast<float>(c.seed & 0xFFFF),
          static_cast<float>((c.seed >> 16) & 0xFFFF),
          static_cast<float>((c.seed >> 32) & 0xFFFF),
          static_cast<float>((c.seed >> 48) & 0xFFFF)};
}

ModelConfig unpack_config(const std::vector<float>& v) {
  if (v.size() != kConfigFloats)
    throw LoadError(cat("checkpoint config has ", v.size(), " fields, expected ", kConfigFloats));
  ModelConfig c;
  c.n_layers = static_cast<int64_t>(v[0]);
  c.d_model = static_cast<int64_t>(v[1]);
  c.n_heads = static_cast<int64_t>(v[2]);
  c.vocab_size = static_cast<int64_t>(v[3]);
  c.context_length = static_cast<int64_t>(v[4]);
  c.lens_normalize = v[5] != 0.0f;
  c.seed = static_cast<uint64_t>(v[6]) | (static_cast<uint64_t>(v[7]) << 16) |
           (static_cast<uint64_t>(v[8]) << 32) | (static_cast<uint64_t>(v[9]) << 48);
  return c;
}

Tensor copy_of(const Tensor& t) {
  Tensor c = Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()});
  c.set_requires_grad(t.requires_grad());
  return c;
}

int32_t argmax_lowest(const float* p, int64_t n) {
  int32_t best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (p[i] > p[best]) best = static_cast<int32_t>(i);
  return best;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError(cat("n_layers must be positive, got ", n_layers));
  if (d_model < 1) throw ConfigError(cat("d_model must be positive, got ", d_model));
  if (n_heads < 1) throw ConfigError(cat("n_heads must be positive, got ", n_heads));
  if (d_model % n_heads != 0)
    throw ConfigError(cat("d_model ", d_model, " is not divisible by n_heads ", n_heads));
  if (vocab_size < 1) throw ConfigError(cat("vocab_size must be positive, got ", vocab_size));
  if (context_length < 1)
    throw ConfigError(cat("context_length must be positive, got ", context_length));
}

std::span<const float> ResidualTrace::at(int64_t layer, int64_t pos) const {
  if (layer < 0 || layer > top_layer())
    throw IndexError(cat("trace layer ", layer, " out of range [0,", top_layer(), "]"));
  if (pos < 0 || pos >= length())
    throw IndexError(cat("trace position ", pos, " out of range [0,", length(), ")"));
  return {stream[static_cast<size_t>(layer)].data() + pos * d_model,
          static_cast<size_t>(d_model)};
}

std::string sublayer_name(Sublayer s) {
  switch (s) {
    case Sublayer::kAttnQ: return "attention-q";
    case Sublayer::kAttnK: return "attention-k";
    case Sublayer::kAttnV: return "attention-v";
    case Sublayer::kAttnO: return "attention-o";
    case Sublayer::kMlpIn: return "mlp-in";
    case Sublayer::kMlpOut: return "mlp-out";
  }
  throw UsageError("unreachable sublayer");
}

Sublayer sublayer_from_name(const std::string& name) {
  for (Sublayer s : kAllSublayers)
    if (sublayer_name(s) == name) return s;
  throw UsageError(cat("unknown sublayer '", name, "'"));
}

std::string lora_target_name(const LoraTarget& t) {
  return cat(t.layer, ".", sublayer_name(t.sublayer));
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.d_model;
  const int64_t ff = 4 * d;
  std::mt19937_64 rng(cfg_.seed);
  const float ws = 1.0f / std::sqrt(static_cast<float>(d));
  // residual writes start small so depth does not blow up the stream early
  const float rs = 1.0f / std::sqrt(2.0f * static_cast<float>(cfg_.n_layers));

  tok_emb_ = Tensor::randn({cfg_.vocab_size, d}, rng, 0.02f, true);
  pos_emb_ = Tensor::randn({cfg_.context_length, d}, rng, 0.02f, true);
  blocks_.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& b : blocks_) {
    b.attn_norm = Tensor::filled({d}, 1.0f, true);
    b.wq = Tensor::randn({d, d}, rng, ws, true);
    b.wk = Tensor::randn({d, d}, rng, ws, true);
    b.wv = Tensor::randn({d, d}, rng, ws, true);
    b.wo = Tensor::randn({d, d}, rng, ws * rs, true);
    b.mlp_norm = Tensor::filled({d}, 1.0f, true);
    b.w_in = Tensor::randn({ff, d}, rng, ws, true);
    b.w_out = Tensor::randn({d, ff}, rng, rs / std::sqrt(static_cast<float>(ff)), true);
  }
  final_norm_ = Tensor::filled({d}, 1.0f, true);
  // Small output head: an untrained network then scores every token almost
  // evenly, so prior measurements on it start from a flat baseline.
  unembed_ = Tensor::randn({cfg_.vocab_size, d}, rng, 0.002f, true);
}

std::vector<std::pair<std::string, const Tensor*>> Model::registry() const {
  std::vector<std::pair<std::string, const Tensor*>> r;
  r.emplace_back("tok_emb", &tok_emb_);
  r.emplace_back("pos_emb", &pos_emb_);
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    r.emplace_back(cat("layers.", l, ".attn_norm"), &b.attn_norm);
    r.emplace_back(cat("layers.", l, ".wq"), &b.wq);
    r.emplace_back(cat("layers.", l, ".wk"), &b.wk);
    r.emplace_back(cat("layers.", l, ".wv"), &b.wv);
    r.emplace_back(cat("layers.", l, ".wo"), &b.wo);
    r.emplace_back(cat("layers.", l, ".mlp_norm"), &b.mlp_norm);
    r.emplace_back(cat("layers.", l, ".w_in"), &b.w_in);
    r.emplace_back(cat("layers.", l, ".w_out"), &b.w_out);
  }
  r.emplace_back("final_norm", &final_norm_);
  r.emplace_back("unembed", &unembed_);
  return r;
}

Tensor& Model::target_weight(const LoraTarget& t) {
  return const_cast<Tensor&>(std::as_const(*this).target_weight(t));
}

const Tensor& Model::target_weight(const LoraTarget& t) const {
  if (t.layer < 0 || t.layer >= cfg_.n_layers)
    throw IndexError(cat("lora layer ", t.layer, " out of range [0,", cfg_.n_layers, ")"));
  const Block& b = blocks_[static_cast<size_t>(t.layer)];
  switch (t.sublayer) {
    case Sublayer::kAttnQ: return b.wq;
    case Sublayer::kAttnK: return b.wk;
    case Sublayer::kAttnV: return b.wv;
    case Sublayer::kAttnO: return b.wo;
    case Sublayer::kMlpIn: return b.w_in;
    case Sublayer::kMlpOut: return b.w_out;
  }
  throw UsageError("unreachable sublayer");
}

Tensor Model::linear(const Tensor& x, const Tensor& w, const LoraTarget& t) const {
  Tensor y = matmul_nt(x, w);
  auto it = lora_.find(t);
  if (it != lora_.end()) {
    const LoraAdapter& ad = it->second;
    Tensor delta = matmul_nt(matmul_nt(x, ad.a), ad.b);
    y = add(y, scale(delta, ad.alpha / static_cast<float>(ad.rank)));
  }
  return y;
}

Tensor Model::run(const std::vector<int32_t>& ids, int64_t batch, int64_t len,
                  std::vector<Tensor>* stream_out, const Interventions* iv) const {
  if (batch < 1 || len < 1 || static_cast<int64_t>(ids.size()) != batch * len)
    throw UsageError(cat("forward: ", ids.size(), " ids do not fill a ", batch, "x", len,
                         " batch"));
  if (len > cfg_.context_length)
    throw UsageError(cat("forward: input length ", len, " exceeds context_length ",
                         cfg_.context_length));
  if (iv && !iv->empty()) {
    if (grad_enabled()) throw UsageError("forward: interventions are inference-only");
    for (const auto& e : iv->stream) {
      if (e.layer < 0 || e.layer > cfg_.n_layers)
        throw IndexError(cat("stream edit layer ", e.layer, " out of range [0,",
                             cfg_.n_layers, "]"));
      if (!e.fn) throw UsageError("stream edit with empty function");
    }
    for (const auto& e : iv->writes) {
      if (e.layer < 0 || e.layer >= cfg_.n_layers)
        throw IndexError(cat("write edit layer ", e.layer, " out of range [0,",
                             cfg_.n_layers, ")"));
      if (!e.fn) throw UsageError("write edit with empty function");
    }
  }

  const int64_t d = cfg_.d_model;
  auto edit_stream = [&](Tensor& x, int64_t layer) {
    if (!iv) return;
    for (const auto& e : iv->stream) {
      if (e.layer != layer) continue;
      float* p = x.mutable_data().data();
      for (int64_t r = 0; r < batch; ++r)
        for (int64_t i = std::max<int64_t>(e.from_pos, 0); i < len; ++i)
          e.fn(std::span<float>(p + (r * len + i) * d, static_cast<size_t>(d)));
    }
  };
  auto edit_write = [&](Tensor& w, int64_t layer) {
    if (!iv) return;
    for (const auto& e : iv->writes) {
      if (e.layer != layer) continue;
      float* p = w.mutable_data().data();
      for (int64_t r = 0; r < batch * len; ++r)
        e.fn(std::span<float>(p + r * d, static_cast<size_t>(d)));
    }
  };
  auto capture = [&](const Tensor& x) {
    if (stream_out) stream_out->push_back(x);
  };

  std::vector<int32_t> pos_ids(static_cast<size_t>(len));
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  Tensor x = add(embedding(tok_emb_, ids, {batch, len}), embedding(pos_emb_, pos_ids, {len}));
  edit_stream(x, 0);
  capture(x);

  Tensor mask = Tensor::zeros({len, len});
  {
    float* m = mask.mutable_data().data();
    for (int64_t i = 0; i < len; ++i)
      for (int64_t j = i + 1; j < len; ++j) m[i * len + j] = kMaskedScore;
  }
  const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(cfg_.head_dim()));

  for (int64_t l = 0; l < cfg_.n_layers; ++l) {
    const Block& blk = blocks_[static_cast<size_t>(l)];

    Tensor h = rmsnorm(x, blk.attn_norm);
    Tensor qh = split_heads(linear(h, blk.wq, {l, Sublayer::kAttnQ}), cfg_.n_heads);
    Tensor kh = split_heads(linear(h, blk.wk, {l, Sublayer::kAttnK}), cfg_.n_heads);
    Tensor vh = split_heads(linear(h, blk.wv, {l, Sublayer::kAttnV}), cfg_.n_heads);
    Tensor attn = softmax(add(scale(matmul_nt(qh, kh), inv_sqrt_hd), mask), -1);
    Tensor ctxv = merge_heads(matmul(attn, vh), cfg_.n_heads);
    Tensor attn_out = linear(ctxv, blk.wo, {l, Sublayer::kAttnO});
    edit_write(attn_out, l);
    x = add(x, attn_out);

    Tensor h2 = rmsnorm(x, blk.mlp_norm);
    Tensor u = gelu(linear(h2, blk.w_in, {l, Sublayer::kMlpIn}));
    Tensor mlp_out = linear(u, blk.w_out, {l, Sublayer::kMlpOut});
    edit_write(mlp_out, l);
    x = add(x, mlp_out);

    edit_stream(x, l + 1);
    capture(x);
  }

  return matmul_nt(rmsnorm(x, final_norm_), unembed_);  // (batch, len, vocab)
}

ForwardResult Model::forward(std::span<const int32_t> tokens, bool capture,
                             const Interventions* iv) const {
  NoGradGuard ng;
  std::vector<int32_t> ids(tokens.begin(), tokens.end());
  const int64_t len = static_cast<int64_t>(ids.size());
  std::vector<Tensor> stream;
  Tensor logits = run(ids, 1, len, capture ? &stream : nullptr, iv);

  ForwardResult out{reshape(logits, {len, cfg_.vocab_size}), std::nullopt};
  if (capture) {
    ResidualTrace tr;
    tr.tokens = std::move(ids);
    tr.d_model = cfg_.d_model;
    tr.stream.reserve(stream.size());
    for (const Tensor& z : stream) tr.stream.emplace_back(z.data().begin(), z.data().end());
    out.trace = std::move(tr);
  }
  return out;
}

std::vector<ResidualTrace> Model::capture_batch(const std::vector<std::vector<int32_t>>& rows,
                                                const Interventions* iv) const {
  NoGradGuard ng;
  if (rows.empty()) throw UsageError("capture_batch: no rows");
  const int64_t len = static_cast<int64_t>(rows.front().size());
  std::vector<int32_t> ids;
  ids.reserve(rows.size() * static_cast<size_t>(len));
  for (const auto& r : rows) {
    if (static_cast<int64_t>(r.size()) != len)
      throw UsageError(cat("capture_batch: row length ", r.size(), " differs from ", len));
    ids.insert(ids.end(), r.begin(), r.end());
  }

  std::vector<Tensor> stream;
  run(ids, static_cast<int64_t>(rows.size()), len, &stream, iv);

  std::vector<ResidualTrace> traces(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    ResidualTrace& tr = traces[r];
    tr.tokens = rows[r];
    tr.d_model = cfg_.d_model;
    tr.stream.reserve(stream.size());
    for (const Tensor& z : stream) {
      const float* p = z.data().data() + static_cast<int64_t>(r) * len * cfg_.d_model;
      tr.stream.emplace_back(p, p + len * cfg_.d_model);
    }
  }
  return traces;
}

Tensor Model::forward_tape(const std::vector<int32_t>& ids, int64_t batch, int64_t len) {
  if (!grad_enabled()) throw UsageError("forward_tape called under NoGradGuard");
  return run(ids, batch, len, nullptr, nullptr);
}

std::vector<int32_t> Model::generate(std::span<const int32_t> prompt, int64_t max_new_tokens,
                                     int32_t stop_token, const Interventions* iv) const {
  auto outs = generate_batch({{prompt.begin(), prompt.end()}}, max_new_tokens, stop_token, iv);
  return std::move(outs.front());
}

std::vector<std::vector<int32_t>> Model::generate_batch(
    const std::vector<std::vector<int32_t>>& prompts, int64_t max_new_tokens,
    int32_t stop_token, const Interventions* iv) const {
  NoGradGuard ng;
  if (prompts.empty()) throw UsageError("generate_batch: no prompts");
  const int64_t batch = static_cast<int64_t>(prompts.size());
  int64_t len = static_cast<int64_t>(prompts.front().size());
  std::vector<int32_t> ids;
  ids.reserve(prompts.size() * static_cast<size_t>(len + max_new_tokens));
  for (const auto& p : prompts) {
    if (static_cast<int64_t>(p.size()) != len)
      throw UsageError(cat("generate_batch: prompt length ", p.size(), " differs from ", len));
    ids.insert(ids.end(), p.begin(), p.end());
  }

  std::vector<std::vector<int32_t>> outs(prompts.size());
  std::vector<char> done(prompts.size(), 0);
  for (int64_t step = 0; step < max_new_tokens; ++step) {
    if (std::all_of(done.begin(), done.end(), [](char c) { return c != 0; })) break;
    if (len > cfg_.context_length) break;  // window full; nothing more to condition on

    Tensor logits = run(ids, batch, len, nullptr, iv);  // (batch, len, vocab)
    const float* lp = logits.data().data();
    std::vector<int32_t> next(prompts.size());
    for (int64_t r = 0; r < batch; ++r) {
      next[static_cast<size_t>(r)] =
          argmax_lowest(lp + (r * len + (len - 1)) * cfg_.vocab_size, cfg_.vocab_size);
      if (!done[static_cast<size_t>(r)]) {
        outs[static_cast<size_t>(r)].push_back(next[static_cast<size_t>(r)]);
        if (next[static_cast<size_t>(r)] == stop_token) done[static_cast<size_t>(r)] = 1;
      }
    }

    std::vector<int32_t> grown;
    grown.reserve(static_cast<size_t>(batch * (len + 1)));
    for (int64_t r = 0; r < batch; ++r) {
      grown.insert(grown.end(), ids.begin() + r * len, ids.begin() + (r + 1) * len);
      grown.push_back(next[static_cast<size_t>(r)]);
    }
    ids = std::move(grown);
    ++len;
  }
  return outs;
}

Tensor Model::logit_lens(const ResidualTrace& trace, int64_t layer, int64_t pos) const {
  NoGradGuard ng;
  if (trace.d_model != cfg_.d_model)
    throw UsageError(cat("trace d_model ", trace.d_model, " does not match model ", cfg_.d_model));
  std::span<const float> row = trace.at(layer, pos);
  Tensor h = Tensor::from_data({1, cfg_.d_model}, {row.begin(), row.end()});
  if (cfg_.lens_normalize) h = rmsnorm(h, final_norm_);
  return reshape(matmul_nt(h, unembed_), {cfg_.vocab_size});
}

Tensor Model::project_out(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != cfg_.d_model)
    throw ShapeError(cat("project_out: expected (n,", cfg_.d_model, "), got ",
                         shape_str(rows.shape())));
  return matmul_nt(rmsnorm(rows, final_norm_), unembed_);
}

void Model::attach_lora(const LoraTarget& target, int64_t rank, float alpha,
                        std::mt19937_64& rng) {
  const Tensor& w = target_weight(target);
  if (rank < 1) throw UsageError(cat("lora rank must be positive, got ", rank));
  if (!(alpha > 0)) throw UsageError(cat("lora alpha must be positive, got ", alpha));
  if (lora_.count(target))
    throw UsageError(cat("lora adapter already attached at ", lora_target_name(target)));

  const int64_t d_out = w.dim(0), d_in = w.dim(1);
  LoraAdapter ad;
  ad.target = target;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.a = Tensor::randn({rank, d_in}, rng, 1.0f / std::sqrt(static_cast<float>(d_in)), true);
  ad.b = Tensor::zeros({d_out, rank}, true);
  lora_.emplace(target, std::move(ad));
}

void Model::detach_lora(const LoraTarget& target) {
  if (lora_.erase(target) == 0)
    throw UsageError(cat("no lora adapter attached at ", lora_target_name(target)));
}

void Model::merge_lora(const LoraTarget& target) {
  auto it = lora_.find(target);
  if (it == lora_.end())
    throw UsageError(cat("no lora adapter attached at ", lora_target_name(target)));
  const LoraAdapter& ad = it->second;
  Tensor& w = target_weight(target);
  const int64_t d_out = w.dim(0), d_in = w.dim(1);

  std::vector<float> delta(static_cast<size_t>(d_out * d_in));
  kern::gemm(false, ad.b.data().data(), ad.a.data().data(), delta.data(), d_out, ad.rank, d_in);
  const float s = ad.alpha / static_cast<float>(ad.rank);
  float* wp = w.mutable_data().data();
  for (size_t i = 0; i < delta.size(); ++i) wp[i] += s * delta[i];
  lora_.erase(it);
}

std::vector<LoraTarget> Model::lora_targets() const {
  std::vector<LoraTarget> t;
  for (const auto& [target, ad] : lora_) t.push_back(target);
  return t;
}

const LoraAdapter& Model::lora_at(const LoraTarget& target) const {
  auto it = lora_.find(target);
  if (it == lora_.end())
    throw UsageError(cat("no lora adapter attached at ", lora_target_name(target)));
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : registry()) out.emplace_back(name, *t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::lora_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [target, ad] : lora_) {
    out.emplace_back(cat("lora.", lora_target_name(target), ".a"), ad.a);
    out.emplace_back(cat("lora.", lora_target_name(target), ".b"), ad.b);
  }
  return out;
}

void Model::set_base_trainable(bool trainable) {
  for (auto& [name, t] : registry()) const_cast<Tensor*>(t)->set_requires_grad(trainable);
}

void Model::save(const std::string& path) const {
  std::vector<NamedTensor> entries;
  entries.push_back({"meta/config", {static_cast<int64_t>(kConfigFloats)}, pack_config(cfg_)});
  for (const auto& [name, t] : registry()) entries.push_back(NamedTensor::of(name, *t));
  for (const auto& [target, ad] : lora_) {
    const std::string base = cat("lora.", lora_target_name(target));
    entries.push_back({cat(base, ".meta"), {2}, {static_cast<float>(ad.rank), ad.alpha}});
    entries.push_back(NamedTensor::of(cat(base, ".a"), ad.a));
    entries.push_back(NamedTensor::of(cat(base, ".b"), ad.b));
  }
  save_tensors(path, entries);
}

void Model::apply_state(const std::vector<NamedTensor>& entries) {
  std::set<std::string> consumed{"meta/config"};
  for (auto& [name, t] : registry()) {
    const NamedTensor& e = find_tensor(entries, name);
    if (e.shape != t->shape())
      throw LoadError(cat("checkpoint tensor '", name, "' has shape ", shape_str(e.shape),
                          " but the model expects ", shape_str(t->shape())));
    std::copy(e.data.begin(), e.data.end(),
              const_cast<Tensor*>(t)->mutable_data().begin());
    consumed.insert(name);
  }

  // adapters: "lora.<layer>.<sublayer>.{meta,a,b}"
  lora_.clear();
  for (const auto& e : entries) {
    if (e.name.rfind("lora.", 0) != 0 || e.name.size() < 6) continue;
    if (e.name.substr(e.name.size() - 5) != ".meta") continue;
    const std::string body = e.name.substr(5, e.name.size() - 10);  // "<layer>.<sublayer>"
    const size_t dot = body.find('.');
    if (dot == std::string::npos)
      throw LoadError(cat("malformed adapter entry '", e.name, "'"));
    LoraTarget target;
    try {
      target.layer = std::stoll(body.substr(0, dot));
      target.sublayer = sublayer_from_name(body.substr(dot + 1));
    } catch (const std::exception&) {
      throw LoadError(cat("malformed adapter entry '", e.name, "'"));
    }
    if (e.data.size() != 2) throw LoadError(cat("malformed adapter meta '", e.name, "'"));
    const auto rank = static_cast<int64_t>(e.data[0]);
    const float alpha = e.data[1];

    std::mt19937_64 scratch(0);
    try {
      attach_lora(target, rank, alpha, scratch);
    } catch (const Error& err) {
      throw LoadError(cat("bad adapter entry '", e.name, "': ", err.what()));
    }
    LoraAdapter& ad = lora_.at(target);
    const std::string base = cat("lora.", lora_target_name(target));
    for (auto* factor : {&ad.a, &ad.b}) {
      const std::string fname = cat(base, factor == &ad.a ? ".a" : ".b");
      const NamedTensor& fe = find_tensor(entries, fname);
      if (fe.shape != factor->shape())
        throw LoadError(cat("checkpoint tensor '", fname, "' has shape ", shape_str(fe.shape),
                            " but the model expects ", shape_str(factor->shape())));
      std::copy(fe.data.begin(), fe.data.end(), factor->mutable_data().begin());
      consumed.insert(fname);
    }
    consumed.insert(e.name);
  }

  for (const auto& e : entries)
    if (!consumed.count(e.name))
      throw LoadError(cat("checkpoint has unexpected tensor '", e.name, "'"));
}

Model Model::load(const std::string& path) {
  auto entries = load_tensors(path);
  ModelConfig cfg = unpack_config(find_tensor(entries, "meta/config").data);
  cfg.validate();
  Model m(cfg);
  m.apply_state(entries);
  return m;
}

void Model::load_weights(const std::string& path) {
  apply_state(load_tensors(path));
}

Model Model::clone() const {
  Model m;
  m.cfg_ = cfg_;
  m.tok_emb_ = copy_of(tok_emb_);
  m.pos_emb_ = copy_of(pos_emb_);
  m.blocks_.reserve(blocks_.size());
  for (const Block& b : blocks_)
    m.blocks_.push_back({copy_of(b.attn_norm), copy_of(b.wq), copy_of(b.wk), copy_of(b.wv),
                         copy_of(b.wo), copy_of(b.mlp_norm), copy_of(b.w_in), copy_of(b.w_out)});
  m.final_norm_ = copy_of(final_norm_);
  m.unembed_ = copy_of(unembed_);
  for (const auto& [target, ad] : lora_)
    m.lora_.emplace(target, LoraAdapter{ad.target, ad.rank, ad.alpha, copy_of(ad.a),
                                        copy_of(ad.b)});
  return m;
}

uint64_t Model::weight_hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& [name, t] : registry()) {
    h = fnv1a64(name, h);
    h = fnv1a64_bytes(t->data().data(), t->data().size() * sizeof(float), h);
  }
  for (const auto& [target, ad] : lora_) {
    h = fnv1a64(lora_target_name(target), h);
    h = fnv1a64_bytes(ad.a.data().data(), ad.a.data().size() * sizeof(float), h);
    h = fnv1a64_bytes(ad.b.data().data(), ad.b.data().size() * sizeof(float), h);
  }
  return h;
}

}  // namespace priorlens
