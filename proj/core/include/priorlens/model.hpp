#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "priorlens/common.hpp"
#include "priorlens/tensor.hpp"

namespace priorlens {

struct NamedTensor;

// Decoder-only transformer: pre-norm residual blocks with RMS normalization,
// learned positional embeddings, untied input/output embeddings, 4x GELU MLP.
struct ModelConfig {
  int64_t n_layers = 8;
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t vocab_size = 0;
  int64_t context_length = 256;
  uint64_t seed = 0;
  // Whether logit_lens applies the final normalization before unembedding.
  // Must stay true for the top-layer lens/forward identity; the raw variant
  // is kept runnable because the normalized one is a modeling choice.
  bool lens_normalize = true;

  int64_t head_dim() const { return d_model / n_heads; }
  void validate() const;  // throws ConfigError
};

// Residual-stream snapshot from one forward pass. stream[l] holds the
// per-position d_model vectors after block l; stream[0] is the embedding
// output and stream[n_layers] is what feeds the final norm + unembedding.
struct ResidualTrace {
  std::vector<int32_t> tokens;
  int64_t d_model = 0;
  std::vector<std::vector<float>> stream;  // n_layers+1 buffers, length()*d_model each

  int64_t length() const { return static_cast<int64_t>(tokens.size()); }
  int64_t top_layer() const { return static_cast<int64_t>(stream.size()) - 1; }
  std::span<const float> at(int64_t layer, int64_t pos) const;  // IndexError on range
};

enum class Sublayer { kAttnQ, kAttnK, kAttnV, kAttnO, kMlpIn, kMlpOut };
inline constexpr Sublayer kAllSublayers[] = {Sublayer::kAttnQ,  Sublayer::kAttnK,
                                             Sublayer::kAttnV,  Sublayer::kAttnO,
                                             Sublayer::kMlpIn,  Sublayer::kMlpOut};

std::string sublayer_name(Sublayer s);                   // "attention-q", ..., "mlp-out"
Sublayer sublayer_from_name(const std::string& name);    // UsageError on unknown name

struct LoraTarget {
  int64_t layer = 0;
  Sublayer sublayer = Sublayer::kAttnQ;
  auto operator<=>(const LoraTarget&) const = default;
};

std::string lora_target_name(const LoraTarget& t);  // "3.attention-q"

// Low-rank delta on one weight; the effective update is (alpha/rank)*B*A.
// B starts at zero, so a freshly attached adapter does not change outputs.
struct LoraAdapter {
  LoraTarget target;
  int64_t rank = 8;
  float alpha = 16.0f;
  Tensor a;  // (rank, d_in)
  Tensor b;  // (d_out, rank)
};

// In-place edit of one d_model row. Steering and ablation are built on these.
using RowEdit = std::function<void(std::span<float>)>;

// Edits the residual stream itself: applied to stream[layer] at every
// position >= from_pos, right after the block (or embedding) produced it.
struct StreamEdit {
  int64_t layer = 0;
  int64_t from_pos = 0;
  RowEdit fn;
};

// Edits a block's residual writes — the attention output and the MLP output —
// before they are added back to the stream; applied at every position.
struct WriteEdit {
  int64_t layer = 0;
  RowEdit fn;
};

struct Interventions {
  std::vector<StreamEdit> stream;
  std::vector<WriteEdit> writes;
  bool empty() const { return stream.empty() && writes.empty(); }
};

struct ForwardResult {
  Tensor logits;  // (length, vocab)
  std::optional<ResidualTrace> trace;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Inference pass over one sequence, no tape. Logits are (length, vocab);
  // position i only sees tokens 0..i. Interventions are inference-only.
  ForwardResult forward(std::span<const int32_t> tokens, bool capture = false,
                        const Interventions* iv = nullptr) const;

  // Runs same-length rows as one batch and returns a trace per row.
  std::vector<ResidualTrace> capture_batch(const std::vector<std::vector<int32_t>>& rows,
                                           const Interventions* iv = nullptr) const;

  // Tape-building pass for training. ids holds batch*len ids row-major;
  // the (batch, len, vocab) result participates in backward().
  Tensor forward_tape(const std::vector<int32_t>& ids, int64_t batch, int64_t len);

  // Greedy decoding; argmax ties resolve to the lowest token id. Returns only
  // the new ids, including the stop token when one is emitted. Stops early if
  // the context window fills up.
  std::vector<int32_t> generate(std::span<const int32_t> prompt, int64_t max_new_tokens,
                                int32_t stop_token, const Interventions* iv = nullptr) const;

  // Same-length prompts decoded together; row r matches generate(prompts[r]).
  std::vector<std::vector<int32_t>> generate_batch(
      const std::vector<std::vector<int32_t>>& prompts, int64_t max_new_tokens,
      int32_t stop_token, const Interventions* iv = nullptr) const;

  // Projects one captured stream vector to vocabulary logits: final RMS norm
  // (unless lens_normalize is off) then the unembedding. Shape (vocab).
  Tensor logit_lens(const ResidualTrace& trace, int64_t layer, int64_t pos) const;

  // Tape-aware final-norm + unembedding over rows: (n, d_model) -> (n, vocab).
  // The dense probe goes through this to stay in vocabulary space.
  Tensor project_out(const Tensor& rows) const;

  // Read-only view of the unembedding matrix, (vocab, d_model); direction
  // fitting solves least squares against it.
  const Tensor& unembedding() const { return unembed_; }

  void attach_lora(const LoraTarget& target, int64_t rank, float alpha, std::mt19937_64& rng);
  void detach_lora(const LoraTarget& target);  // restores base behavior exactly
  void merge_lora(const LoraTarget& target);   // folds the delta into the base weight, detaches
  bool has_lora(const LoraTarget& target) const { return lora_.count(target) != 0; }
  std::vector<LoraTarget> lora_targets() const;
  const LoraAdapter& lora_at(const LoraTarget& target) const;

  // Base weights in a stable order (the checkpoint manifest order).
  std::vector<std::pair<std::string, Tensor>> parameters();
  // Adapter factors only; what a LoRA finetune trains.
  std::vector<std::pair<std::string, Tensor>> lora_parameters();
  void set_base_trainable(bool trainable);

  void save(const std::string& path) const;
  static Model load(const std::string& path);
  // Pulls weights by name into this model; shape mismatches name the tensor.
  void load_weights(const std::string& path);

  Model clone() const;
  uint64_t weight_hash() const;

 private:
  struct Block {
    Tensor attn_norm, wq, wk, wv, wo;
    Tensor mlp_norm, w_in, w_out;
  };

  Model() = default;

  Tensor run(const std::vector<int32_t>& ids, int64_t batch, int64_t len,
             std::vector<Tensor>* stream_out, const Interventions* iv) const;
  Tensor linear(const Tensor& x, const Tensor& w, const LoraTarget& t) const;
  Tensor& target_weight(const LoraTarget& t);
  const Tensor& target_weight(const LoraTarget& t) const;
  std::vector<std::pair<std::string, const Tensor*>> registry() const;
  void apply_state(const std::vector<NamedTensor>& entries);

  ModelConfig cfg_;
  Tensor tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  Tensor final_norm_, unembed_;
  std::map<LoraTarget, LoraAdapter> lora_;
};

}  // namespace priorlens
