#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "priorlens/checkpoint.hpp"
#include "priorlens/model.hpp"
#include "priorlens/optim.hpp"

using namespace priorlens;

namespace {

ModelConfig tiny_config(uint64_t seed = 7) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.vocab_size = 24;
  cfg.context_length = 32;
  cfg.seed = seed;
  return cfg;
}

std::vector<int32_t> random_tokens(int64_t n, int64_t v, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int32_t> d(0, static_cast<int32_t>(v - 1));
  std::vector<int32_t> out(static_cast<size_t>(n));
  for (auto& t : out) t = d(rng);
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  REQUIRE(a.size() == b.size());
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// One AdamW step on next-token loss over a single sequence.
float train_step(Model& m, AdamW& opt, const std::vector<int32_t>& seq) {
  const auto len = static_cast<int64_t>(seq.size());
  Tensor logits = reshape(m.forward_tape(seq, 1, len), {len, m.config().vocab_size});
  std::vector<int32_t> targets(seq.begin() + 1, seq.end());
  targets.push_back(kIgnoreIndex);
  Tensor loss = cross_entropy(logits, targets);
  opt.zero_grad();
  backward(loss);
  opt.step();
  return loss.item();
}

std::filesystem::path temp_file(const std::string& stem) {
  return std::filesystem::temp_directory_path() / (stem + ".plns");
}

}  // namespace

TEST_CASE("forward: shapes, finiteness, trace only on request") {
  Model m(tiny_config());
  auto toks = random_tokens(10, m.config().vocab_size, 3);

  auto r = m.forward(toks);
  CHECK(r.logits.shape() == Shape{10, 24});
  CHECK_FALSE(r.trace.has_value());
  for (float v : r.logits.data()) CHECK(std::isfinite(v));

  auto rc = m.forward(toks, true);
  REQUIRE(rc.trace.has_value());
  CHECK(rc.trace->length() == 10);
  CHECK(rc.trace->top_layer() == m.config().n_layers);
  CHECK(rc.trace->tokens == toks);
}

TEST_CASE("forward: input validation") {
  Model m(tiny_config());
  CHECK_THROWS_AS((void)m.forward(random_tokens(33, 24, 1)), UsageError);  // past context
  std::vector<int32_t> bad = {0, 1, 24};
  CHECK_THROWS_AS((void)m.forward(bad), IndexError);
  std::vector<int32_t> neg = {0, -1};
  CHECK_THROWS_AS((void)m.forward(neg), IndexError);
  std::vector<int32_t> empty;
  CHECK_THROWS_AS((void)m.forward(empty), UsageError);
}

TEST_CASE("causality: prefix logits are bitwise stable under truncation") {
  Model m(tiny_config(11));
  auto toks = random_tokens(12, m.config().vocab_size, 5);
  auto full = m.forward(toks);

  for (int64_t k : {0, 4, 10}) {
    std::vector<int32_t> prefix(toks.begin(), toks.begin() + k + 1);
    auto part = m.forward(prefix);
    const float* f = full.logits.data().data();
    const float* p = part.logits.data().data();
    for (int64_t i = 0; i <= k; ++i)
      for (int64_t v = 0; v < 24; ++v)
        CHECK(f[i * 24 + v] == p[i * 24 + v]);
  }
}

TEST_CASE("causality: perturbing position j leaves logits before j untouched") {
  Model m(tiny_config(13));
  auto toks = random_tokens(11, m.config().vocab_size, 6);
  auto base = m.forward(toks);

  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    auto j = static_cast<int64_t>(rng() % 10 + 1);
    auto mod = toks;
    mod[static_cast<size_t>(j)] = static_cast<int32_t>((mod[static_cast<size_t>(j)] + 7) % 24);
    auto out = m.forward(mod);
    const float* a = base.logits.data().data();
    const float* b = out.logits.data().data();
    for (int64_t i = 0; i < j; ++i)
      for (int64_t v = 0; v < 24; ++v) CHECK(a[i * 24 + v] == b[i * 24 + v]);
  }
}

TEST_CASE("logit lens: top layer reproduces forward logits") {
  Model m(tiny_config(17));
  auto toks = random_tokens(9, m.config().vocab_size, 8);
  auto r = m.forward(toks, true);

  for (int64_t i = 0; i < 9; ++i) {
    Tensor lens = m.logit_lens(*r.trace, m.config().n_layers, i);
    CHECK(lens.shape() == Shape{24});
    std::span<const float> row(r.logits.data().data() + i * 24, 24);
    CHECK(max_abs_diff(lens.data(), row) <= 1e-6f);
  }

  Tensor bottom = m.logit_lens(*r.trace, 0, 0);
  for (float v : bottom.data()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS((void)m.logit_lens(*r.trace, 3, 0), IndexError);
  CHECK_THROWS_AS((void)m.logit_lens(*r.trace, -1, 0), IndexError);
  CHECK_THROWS_AS((void)m.logit_lens(*r.trace, 2, 9), IndexError);
}

TEST_CASE("logit lens: un-normalized variant differs but stays finite") {
  ModelConfig cfg = tiny_config(19);
  cfg.lens_normalize = false;
  Model m(cfg);
  auto toks = random_tokens(5, cfg.vocab_size, 9);
  auto r = m.forward(toks, true);
  Tensor raw = m.logit_lens(*r.trace, cfg.n_layers, 2);
  for (float v : raw.data()) CHECK(std::isfinite(v));
  // the raw variant skips the final norm, so the top-layer identity is gone
  std::span<const float> row(r.logits.data().data() + 2 * 24, 24);
  CHECK(max_abs_diff(raw.data(), row) > 1e-3f);
}

TEST_CASE("capture_batch matches per-row forward bitwise") {
  Model m(tiny_config(23));
  std::vector<std::vector<int32_t>> rows = {random_tokens(7, 24, 1), random_tokens(7, 24, 2),
                                            random_tokens(7, 24, 3)};
  auto traces = m.capture_batch(rows);
  REQUIRE(traces.size() == 3);
  for (size_t r = 0; r < rows.size(); ++r) {
    auto single = m.forward(rows[r], true);
    for (int64_t l = 0; l <= m.config().n_layers; ++l)
      for (int64_t i = 0; i < 7; ++i) {
        auto got = traces[r].at(l, i);
        auto want = single.trace->at(l, i);
        for (size_t d = 0; d < got.size(); ++d) CHECK(got[d] == want[d]);
      }
  }
  CHECK_THROWS_AS((void)m.capture_batch({{1, 2}, {1, 2, 3}}), UsageError);
}

TEST_CASE("generate: budget zero, determinism, stop token") {
  Model m(tiny_config(29));
  auto prompt = random_tokens(6, 24, 4);

  CHECK(m.generate(prompt, 0, 0).empty());

  auto a = m.generate(prompt, 8, -1);
  auto b = m.generate(prompt, 8, -1);
  CHECK(a == b);
  CHECK(a.size() == 8);

  auto c = m.generate(prompt, 8, a[0]);
  CHECK(c == std::vector<int32_t>{a[0]});
}

TEST_CASE("generate_batch rows match single-prompt generate") {
  Model m(tiny_config(31));
  std::vector<std::vector<int32_t>> prompts = {random_tokens(5, 24, 10), random_tokens(5, 24, 11),
                                               random_tokens(5, 24, 12)};
  auto batch = m.generate_batch(prompts, 6, -1);
  REQUIRE(batch.size() == 3);
  for (size_t r = 0; r < prompts.size(); ++r) CHECK(batch[r] == m.generate(prompts[r], 6, -1));
}

TEST_CASE("generate stops at the context boundary") {
  ModelConfig cfg = tiny_config(37);
  cfg.context_length = 8;
  Model m(cfg);
  auto prompt = random_tokens(6, 24, 13);
  auto out = m.generate(prompt, 100, -1);
  // 6 prompt tokens leave room to condition on at most 8 positions
  CHECK(out.size() == 3);
}

TEST_CASE("training: a two-layer model overfits a repeating pattern") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.vocab_size = 16;
  cfg.context_length = 16;
  cfg.seed = 41;
  Model m(cfg);

  std::vector<int32_t> seq = {3, 5, 9, 3, 5, 9, 3, 5, 9, 3};
  AdamWConfig oc;
  oc.lr = 3e-3f;
  oc.weight_decay = 0.0f;
  AdamW opt(m.parameters(), oc);

  float loss = 1e9f;
  for (int step = 0; step < 800 && loss > 0.02f; ++step) loss = train_step(m, opt, seq);
  CHECK(loss < 0.1f);

  std::vector<int32_t> prefix = {3, 5, 9, 3};
  auto out = m.generate(prefix, 5, -1);
  CHECK(out == std::vector<int32_t>{5, 9, 3, 5, 9});
}

TEST_CASE("lora: zero-init attach is a bitwise no-op; detach restores the base") {
  Model m(tiny_config(43));
  auto toks = random_tokens(8, 24, 20);
  auto base = m.forward(toks);

  std::mt19937_64 rng(1);
  LoraTarget t{1, Sublayer::kAttnV};
  m.attach_lora(t, 4, 8.0f, rng);
  CHECK(m.has_lora(t));
  CHECK(bitwise_equal(m.forward(toks).logits, base.logits));

  CHECK_THROWS_AS(m.attach_lora(t, 4, 8.0f, rng), UsageError);
  CHECK_THROWS_AS(m.attach_lora({99, Sublayer::kAttnQ}, 4, 8.0f, rng), IndexError);

  m.detach_lora(t);
  CHECK_FALSE(m.has_lora(t));
  CHECK(bitwise_equal(m.forward(toks).logits, base.logits));
  CHECK_THROWS_AS(m.detach_lora(t), UsageError);
}

TEST_CASE("lora: train, then merge matches the adapted model; base stays frozen") {
  Model m(tiny_config(47));
  auto toks = random_tokens(8, 24, 21);
  Model pristine = m.clone();

  std::mt19937_64 rng(2);
  LoraTarget t{0, Sublayer::kMlpIn};
  m.set_base_trainable(false);
  m.attach_lora(t, 4, 8.0f, rng);

  AdamWConfig oc;
  oc.lr = 1e-2f;  // big enough that one step moves the logits measurably
  AdamW opt(m.lora_parameters(), oc);
  auto seq = random_tokens(8, 24, 22);
  for (int i = 0; i < 3; ++i) train_step(m, opt, seq);

  // adapters moved, base bitwise untouched
  bool b_nonzero = false;
  for (float v : m.lora_at(t).b.data()) b_nonzero |= (v != 0.0f);
  CHECK(b_nonzero);
  for (auto& [name, p] : m.parameters()) {
    for (auto& [pname, q] : pristine.parameters())
      if (pname == name) CHECK(bitwise_equal(p, q));
  }

  auto adapted = m.forward(toks);
  CHECK_FALSE(bitwise_equal(adapted.logits, pristine.forward(toks).logits));

  Model merged = m.clone();
  merged.merge_lora(t);
  CHECK_FALSE(merged.has_lora(t));
  CHECK(max_abs_diff(merged.forward(toks).logits.data(), adapted.logits.data()) <= 1e-5f);

  m.detach_lora(t);
  CHECK(bitwise_equal(m.forward(toks).logits, pristine.forward(toks).logits));
}

TEST_CASE("clone is independent of later training") {
  Model m(tiny_config(53));
  auto toks = random_tokens(6, 24, 30);
  Model snapshot = m.clone();
  auto before = snapshot.forward(toks);

  AdamW opt(m.parameters(), {});
  train_step(m, opt, toks);
  CHECK(bitwise_equal(snapshot.forward(toks).logits, before.logits));
  CHECK_FALSE(bitwise_equal(m.forward(toks).logits, before.logits));
}

TEST_CASE("checkpoint: round-trip is bit-exact, config included") {
  ModelConfig cfg = tiny_config(59);
  cfg.lens_normalize = false;
  cfg.seed = 0x0123456789ABCDEFull;
  Model m(cfg);
  auto seq = random_tokens(8, 24, 23);
  AdamW opt(m.parameters(), {});
  for (int i = 0; i < 2; ++i) train_step(m, opt, seq);

  auto path = temp_file("model_roundtrip");
  m.save(path.string());
  Model back = Model::load(path.string());

  CHECK(back.config().seed == cfg.seed);
  CHECK(back.config().lens_normalize == false);
  CHECK(back.config().d_model == cfg.d_model);
  CHECK(back.weight_hash() == m.weight_hash());
  auto toks = random_tokens(7, 24, 24);
  CHECK(bitwise_equal(back.forward(toks).logits, m.forward(toks).logits));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: adapters survive the round-trip") {
  Model m(tiny_config(61));
  std::mt19937_64 rng(3);
  m.set_base_trainable(false);
  m.attach_lora({1, Sublayer::kAttnO}, 4, 8.0f, rng);
  AdamWConfig oc;
  oc.lr = 1e-2f;
  AdamW opt(m.lora_parameters(), oc);
  auto seq = random_tokens(8, 24, 25);
  for (int i = 0; i < 2; ++i) train_step(m, opt, seq);

  auto path = temp_file("model_lora_roundtrip");
  m.save(path.string());
  Model back = Model::load(path.string());
  CHECK(back.has_lora({1, Sublayer::kAttnO}));
  CHECK(back.lora_at({1, Sublayer::kAttnO}).rank == 4);
  auto toks = random_tokens(6, 24, 26);
  CHECK(bitwise_equal(back.forward(toks).logits, m.forward(toks).logits));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: corrupt header bytes raise load errors, never crash") {
  Model m(tiny_config(67));
  auto path = temp_file("model_corrupt");
  m.save(path.string());

  std::ifstream in(path, std::ios::binary);
  std::string image((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  REQUIRE(image.size() > 64);

  auto bad_path = temp_file("model_corrupt_bad");
  for (size_t i = 0; i < 64; ++i) {
    std::string broken = image;
    broken[i] = static_cast<char>(broken[i] ^ 0x5A);
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out.write(broken.data(), static_cast<std::streamsize>(broken.size()));
    out.close();
    CHECK_THROWS_AS((void)Model::load(bad_path.string()), LoadError);
  }

  // truncation at several depths
  for (size_t keep : {size_t(2), size_t(20), image.size() / 2, image.size() - 3}) {
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out.write(image.data(), static_cast<std::streamsize>(keep));
    out.close();
    CHECK_THROWS_AS((void)Model::load(bad_path.string()), LoadError);
  }

  // version bump is reported as a version problem
  {
    std::string broken = image;
    broken[4] = 9;
    std::ofstream out(bad_path, std::ios::binary | std::ios::trunc);
    out.write(broken.data(), static_cast<std::streamsize>(broken.size()));
    out.close();
    CHECK_THROWS_WITH_AS((void)Model::load(bad_path.string()),
                         doctest::Contains("version"), LoadError);
  }

  std::filesystem::remove(path);
  std::filesystem::remove(bad_path);
}

TEST_CASE("checkpoint: loading into a mismatched architecture names the tensor") {
  Model a(tiny_config(71));
  auto path = temp_file("model_mismatch");
  a.save(path.string());

  ModelConfig cfg_b = tiny_config(71);
  cfg_b.d_model = 48;
  cfg_b.n_heads = 4;
  Model b(cfg_b);
  CHECK_THROWS_WITH_AS(b.load_weights(path.string()), doctest::Contains("tok_emb"), LoadError);
  std::filesystem::remove(path);
}

TEST_CASE("interventions: zeroing all residual writes collapses the stack to layer 0") {
  Model m(tiny_config(73));
  auto toks = random_tokens(7, 24, 40);
  auto clean = m.forward(toks, true);

  Interventions iv;
  for (int64_t l = 0; l < m.config().n_layers; ++l)
    iv.writes.push_back({l, [](std::span<float> row) { std::fill(row.begin(), row.end(), 0.0f); }});
  auto gutted = m.forward(toks, true, &iv);

  for (int64_t i = 0; i < 7; ++i) {
    Tensor lens0 = m.logit_lens(*clean.trace, 0, i);
    std::span<const float> row(gutted.logits.data().data() + i * 24, 24);
    CHECK(max_abs_diff(lens0.data(), row) <= 1e-6f);
  }
  // with writes gone, every captured layer equals the embeddings
  for (int64_t l = 1; l <= m.config().n_layers; ++l)
    CHECK(gutted.trace->stream[static_cast<size_t>(l)] == gutted.trace->stream[0]);
}

TEST_CASE("interventions: stream edits respect from_pos and layer bounds") {
  Model m(tiny_config(79));
  auto toks = random_tokens(8, 24, 41);
  auto base = m.forward(toks);

  Interventions nop;
  nop.stream.push_back({1, 0, [](std::span<float>) {}});
  CHECK(bitwise_equal(m.forward(toks, false, &nop).logits, base.logits));

  Interventions push;
  push.stream.push_back({m.config().n_layers, 5, [](std::span<float> row) { row[0] += 3.0f; }});
  auto steered = m.forward(toks, false, &push);
  const float* a = base.logits.data().data();
  const float* b = steered.logits.data().data();
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t v = 0; v < 24; ++v) CHECK(a[i * 24 + v] == b[i * 24 + v]);
  bool touched = false;
  for (int64_t i = 5; i < 8; ++i)
    for (int64_t v = 0; v < 24; ++v) touched |= (a[i * 24 + v] != b[i * 24 + v]);
  CHECK(touched);

  Interventions bad;
  bad.stream.push_back({m.config().n_layers + 1, 0, [](std::span<float>) {}});
  CHECK_THROWS_AS((void)m.forward(toks, false, &bad), IndexError);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 5;
  CHECK_THROWS_AS(Model{cfg}, ConfigError);
  cfg = tiny_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(Model{cfg}, ConfigError);
  cfg = tiny_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(Model{cfg}, ConfigError);
}

TEST_CASE("tensor container: standalone save/load and lookups") {
  std::vector<NamedTensor> entries;
  entries.push_back({"alpha", {2, 3}, {1, 2, 3, 4, 5, 6}});
  entries.push_back({"beta", {4}, {9, 8, 7, 6}});
  auto path = temp_file("container");
  save_tensors(path.string(), entries);

  auto back = load_tensors(path.string());
  REQUIRE(back.size() == 2);
  CHECK(find_tensor(back, "alpha").shape == Shape{2, 3});
  CHECK(find_tensor(back, "beta").data == std::vector<float>{9, 8, 7, 6});
  CHECK(has_tensor(back, "alpha"));
  CHECK_FALSE(has_tensor(back, "gamma"));
  CHECK_THROWS_AS((void)find_tensor(back, "gamma"), LoadError);

  CHECK_THROWS_AS(save_tensors(path.string(), {{"dup", {1}, {1}}, {"dup", {1}, {2}}}), UsageError);
  CHECK_THROWS_AS(save_tensors(path.string(), {{"", {1}, {1}}}), UsageError);
  CHECK_THROWS_AS(save_tensors(path.string(), {{"x", {2}, {1}}}), UsageError);
  std::filesystem::remove(path);
}
