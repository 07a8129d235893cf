#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedpit/corpus.hpp"
#include "fedpit/tinylm.hpp"

namespace fedpit::attack {

struct AttackConfig {
  int per_client = 20;
  int prefix_len = 10;
  int offset = 0;       // start of the prefix block in the serialized example
  int suffix_cap = 64;
  bool sample = false;  // greedy unless set
  double temperature = 0.8;
};

void validate(const AttackConfig& config);

struct Target {
  int client = 0;
  corpus::Example example;
};

/// Up to `per_client` examples per client, without replacement, in the
/// order drawn. A client without data contributes no cases.
std::vector<Target> build_attack_set(const std::vector<corpus::Dataset>& client_data, int per_client,
                                     Rng& rng);

struct Split {
  lm::Tokens prefix;
  lm::Tokens suffix;
};

// Serializes as training does and cuts [offset, offset+prefix_len) as the
// prefix and up to `suffix_cap` following tokens as the suffix. Empty when the
// example is too short to leave a suffix.
std::optional<Split> split_prefix_suffix(const lm::Vocab& vocab, const corpus::Example& example,
                                         int prefix_len = 10, int offset = 0, int suffix_cap = 64);

// Exactly min(suffix_len, cap) tokens continuing the prefix, no stop tokens and
// no repetition penalty.
lm::Tokens extract(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                   const lm::Tokens& prefix, int suffix_len, const AttackConfig& config, Rng& rng);

struct AttackCase {
  int client = 0;
  std::size_t target = 0;  // index into the attack set
  int offset = 0;
  lm::Tokens prefix;
  lm::Tokens true_suffix;
  lm::Tokens generated_suffix;
  double bleu = 0.0;
  double rouge_l = 0.0;
};

struct AttackReport {
  int round = 0;
  std::vector<AttackCase> cases;
  std::vector<std::string> skipped;
  double mean_bleu = 0.0;
  double mean_rouge_l = 0.0;
};

/// Attacks a shared-parameter checkpoint. Only checkpoints carrying an adapter
/// are accepted; the client-private adapters never reach this function.
AttackReport attack_round(const lm::Checkpoint& server_model, const std::vector<Target>& attack_set,
                          const AttackConfig& config, int round, std::uint64_t seed = 0,
                          bool parallel = true);

// Token strings used for scoring; reserved markers count as tokens.
std::vector<std::string> token_strings(const lm::Vocab& vocab, const lm::Tokens& ids);

}  // namespace fedpit::attack
