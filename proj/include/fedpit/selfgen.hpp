#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fedpit/corpus.hpp"
#include "fedpit/tinylm.hpp"

namespace fedpit::selfgen {

enum class IfdOrder { kDescending, kAscending };

struct SelfGenConfig {
  int num_demonstrations = 8;
  int candidates = 32;  // 2M
  int keep = 16;        // M
  double rouge_threshold = 0.7;
  IfdOrder order = IfdOrder::kDescending;
  int retry_budget = 4;         // attempts per requested instruction
  int max_response_tokens = 0;  // responses longer than this are dropped; 0 = generation cap
  lm::GenerationConfig generation;
};

void validate(const SelfGenConfig& config);

// Read-only view of backbone plus one adapter.
struct ModelView {
  const lm::BackboneParams& backbone;
  const lm::AdapterParams& adapter;
  const lm::Vocab& vocab;
};

class SelfGenError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Without replacement when the data is large enough, otherwise with replacement.
std::vector<corpus::Example> sample_demonstrations(const corpus::Dataset& local_data, int n, Rng& rng);

// Each demo instruction as BOS inst SEP, then a lone BOS as the cue for a new one.
lm::Tokens instruction_prompt(const lm::Vocab& vocab, const std::vector<corpus::Example>& demos);

// SYS, each demo as BOS inst SEP resp EOS, then BOS instruction SEP.
lm::Tokens response_prompt(const lm::Vocab& vocab, const std::string& instruction,
                           const std::vector<corpus::Example>& demos);

/// Samples up to `count` non-empty instruction texts. Each continuation stops
/// at EOS or SEP. Empty samples are retried within the budget; throws
/// SelfGenError when nothing usable comes out.
std::vector<std::string> generate_instruction_candidates(const ModelView& model_g,
                                                         const std::vector<corpus::Example>& demos,
                                                         int count, const SelfGenConfig& config,
                                                         Rng& rng);

// Order-preserving; each accepted candidate joins the pool for later ones.
std::vector<std::string> filter_instructions(const std::vector<std::string>& candidates,
                                             const std::vector<std::string>& pool,
                                             double threshold = 0.7);

struct ResponseResult {
  std::string text;
  bool ok = false;         // passed the failure filter
  bool truncated = false;  // hit max_tokens without EOS
};

ResponseResult generate_response(const ModelView& model_g, const std::string& instruction,
                                 const std::vector<corpus::Example>& demos,
                                 const SelfGenConfig& config, Rng& rng);

// meanCE(response | instruction) / meanCE(response | no instruction) under model_l.
double ifd_score(const ModelView& model_l, const std::string& instruction, const std::string& response);

struct Candidate {
  std::string instruction;
  std::string response;
  std::string category;
  double ifd = 0.0;
  bool truncated = false;
  std::size_t order = 0;  // generation order among survivors
};

struct SelfGenResult {
  corpus::Dataset synthetic;
  std::vector<Candidate> survivors;  // all scored candidates, generation order
  std::vector<std::string> pool;     // local instructions the filter started from
  int generated = 0;                 // instruction candidates produced
  int filtered_out = 0;              // rejected by the Rouge-L filter
  int failed_responses = 0;          // rejected by the response failure filter
  std::vector<std::string> warnings;
};

// Survivors ranked by IFD in the configured direction, ties by generation order.
std::vector<Candidate> select_top(std::vector<Candidate> survivors, int keep, IfdOrder order);

// Category of the demonstration whose instruction is nearest by Rouge-L (first on ties).
std::string nearest_category(const std::string& instruction, const std::vector<corpus::Example>& demos);

/// Instruction generation, Rouge-L filtering, response generation, IFD
/// scoring under model_l and top-M selection. Never throws for a client that
/// produces nothing usable; the result is then empty and carries a warning.
SelfGenResult self_generate(const ModelView& model_g, const ModelView& model_l,
                            const corpus::Dataset& local_data, const SelfGenConfig& config, Rng& rng,
                            int round = 0, int client = 0);

}  // namespace fedpit::selfgen
