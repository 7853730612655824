#pragma once

// Pretraining-corpus generator. The corpus is what *induces* the answer
// prior: filler text mentions common answer words ~freq_ratio times more
// often than uncommon ones, number mentions over-represent round numbers,
// and task demonstrations (all correct) can have their answers resampled
// toward that same skewed distribution.
//
// The stream is a shuffled concatenation of <s>...</s> documents:
//   filler   word mentions, spelling mentions, instruction-phrase inserts
//   numbers  "num : 37 80 ..." draws with the round-number boost
//   demos    task prompt + gold answer (recorded with offsets)
//   guesses  input-withheld prompt + prior-distributed answer, so eliciting
//            a guess at eval time reads out the learned prior
//
// Generation is a pure function of (vocab, templates, config).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "priorlens/tasks.hpp"
#include "priorlens/templates.hpp"
#include "priorlens/vocab.hpp"

namespace priorlens {

struct CorpusConfig {
  double zipf_s = 1.0;        // within-set word-frequency decay
  double freq_ratio = 20.0;   // target common:uncommon answer-word ratio
  double round_boost = 10.0;  // extra sampling weight for {20,30,...,100}
  double demo_fraction = 0.25;
  bool demo_answer_bias = true;  // resample demo answers toward the prior
  double number_fraction = 0.15;
  double guess_share = 0.10;       // share of the demo budget spent on guess docs
  double instruction_rate = 0.02;  // instruction-phrase inserts per filler unit
  int64_t budget = 1'000'000;
  uint64_t seed = 0;

  void validate() const;  // throws ConstructionError
};

struct UnigramStats {
  std::vector<int64_t> counts;
  std::vector<double> p;  // counts normalized; sums to 1
  int64_t total = 0;
};

// A task demonstration embedded in the stream, with its location.
struct DemoRecord {
  TaskInstance instance;
  int64_t offset = 0;  // index of the instance's first prompt token
  int64_t length = 0;  // prompt + gold + </s>
};

struct CorpusResult {
  std::vector<uint16_t> tokens;
  UnigramStats stats;
  double realized_ratio = 0.0;  // measured common/uncommon word occurrences
  int64_t filler_docs = 0;
  int64_t number_docs = 0;
  int64_t demo_docs = 0;
  int64_t guess_docs = 0;
  std::vector<DemoRecord> demos;
};

CorpusResult build_corpus(const Vocab& v, const PromptTemplates& t, const CorpusConfig& cfg);

// Exact empirical token frequencies. Non-empty stream, ids < vocab_size.
UnigramStats unigram_stats(std::span<const uint16_t> stream, int64_t vocab_size);

// Answer-word occurrences = (prefix id, suffix id) adjacencies; returns
// common/uncommon. Throws NumericError when no uncommon word occurs.
double word_set_ratio(std::span<const uint16_t> stream, const Vocab& v);

// (offset, length) of every <s>...</s> document; training consumes docs, not
// a sliding window, so prompts are always learned from position zero.
std::vector<std::pair<int64_t, int64_t>> doc_spans(std::span<const uint16_t> stream,
                                                   const Vocab& v);

// --- files ----------------------------------------------------------------
// Token file: raw u16 little-endian ids. Sidecar: "key = value" lines with
// the config, realized statistics, and the full token table.

void write_corpus_file(const std::string& path, std::span<const uint16_t> tokens);
std::vector<uint16_t> read_corpus_file(const std::string& path);  // throws LoadError

void write_corpus_sidecar(const std::string& path, const Vocab& v, const CorpusConfig& cfg,
                          const CorpusResult& result);
std::map<std::string, std::string> read_sidecar(const std::string& path);  // throws LoadError

}  // namespace priorlens
