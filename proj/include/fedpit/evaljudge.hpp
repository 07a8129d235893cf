#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedpit/corpus.hpp"
#include "fedpit/tinylm.hpp"

namespace fedpit::eval {

enum class Outcome { kWin, kTie, kLoss };  // for side A
std::string to_string(Outcome o);

struct Respects {
  double helpfulness = 0.0;
  double relevance = 0.0;
  double correctness = 0.0;
  double coherence = 0.0;
};

struct JudgeVerdict {
  double score_a = 0.0;  // [0, 100]
  double score_b = 0.0;
  Respects respects_a;
  Respects respects_b;
  Outcome outcome = Outcome::kTie;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const std::string& output_a, const std::string& output_b,
                             const std::string& reference) const = 0;
  virtual std::string name() const = 0;
};

/// Score = 100 * (0.5 * Rouge-L + 0.5 * BLEU) against the reference; every
/// respect equals that score.
class ReferenceSimilarityJudge : public Judge {
 public:
  explicit ReferenceSimilarityJudge(double epsilon = 1.0, bool smooth = true)
      : epsilon_(epsilon), smooth_(smooth) {}
  JudgeVerdict judge(const std::string& output_a, const std::string& output_b,
                     const std::string& reference) const override;
  std::string name() const override { return "reference-similarity"; }
  double similarity(const std::string& output, const std::string& reference) const;

 private:
  double epsilon_;
  bool smooth_;
};

// Throws std::invalid_argument on an empty reference.
JudgeVerdict judge_pair(const std::string& output_a, const std::string& output_b,
                        const std::string& reference, const Judge& judge);
JudgeVerdict judge_pair(const std::string& output_a, const std::string& output_b,
                        const std::string& reference);

struct EvalConfig {
  int max_tokens = 32;
  double temperature = 0.0;  // greedy
  double repetition_penalty = 1.0;
};

// Greedy response of backbone+adapter to the example's instruction and input.
std::string respond(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                    const lm::Vocab& vocab, const corpus::Example& example, const EvalConfig& config,
                    Rng& rng);

// Hex FNV-1a of instruction and input, the key of the baseline cache.
std::string instruction_key(const corpus::Example& example);

using BaselineOutputs = std::map<std::string, std::string>;  // instruction_key -> text

BaselineOutputs baseline_outputs(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                                 const lm::Vocab& vocab, const corpus::Dataset& testset,
                                 const EvalConfig& config, std::uint64_t seed, bool parallel = true);
void save_baseline(const BaselineOutputs& outputs, const std::filesystem::path& path);
BaselineOutputs load_baseline(const std::filesystem::path& path);

struct EvalRecord {
  std::string key;
  std::string instruction;
  std::string reference;
  std::string output;
  std::string baseline;
  double score = 0.0;           // model's mean over both orders
  double baseline_score = 0.0;  // baseline's mean over both orders
  Outcome outcome = Outcome::kTie;
};

struct EvalReport {
  double mean_score = 0.0;
  int wins = 0;
  int ties = 0;
  int losses = 0;
  std::vector<EvalRecord> records;
  std::vector<std::string> skipped;
};

/// Generates the model's response per test example and judges it against the
/// baseline twice, once in each position. A win needs both orders won, a loss
/// both lost; anything else is a tie.
EvalReport dual_sided_evaluate(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                               const lm::Vocab& vocab, const BaselineOutputs& baseline,
                               const corpus::Dataset& testset, const Judge& judge,
                               const EvalConfig& config, std::uint64_t seed, bool parallel = true);

}  // namespace fedpit::eval
