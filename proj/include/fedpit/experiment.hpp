#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedpit/attack.hpp"
#include "fedpit/config.hpp"
#include "fedpit/evaljudge.hpp"
#include "fedpit/fedcore.hpp"

namespace fedpit::runner {

// Seed for a named sub-task of a run.
std::uint64_t sub_seed(std::uint64_t seed, std::string_view name);

corpus::Dataset private_corpus(const RunConfig& config);
// Public pretraining text, minus any instruction that also occurs in `exclude`.
corpus::Dataset public_corpus(const RunConfig& config, const corpus::Dataset& exclude);
lm::Pretrained build_backbone(const RunConfig& config, const corpus::Dataset& exclude);

/// Everything the algorithms of one run share: backbone, data splits, the
/// fixed attack set and the baseline outputs for evaluation.
struct Setup {
  lm::Vocab vocab;
  lm::BackboneParams backbone;
  double pretrain_initial_loss = 0.0;
  double pretrain_final_loss = 0.0;
  corpus::Dataset train;
  corpus::Dataset test;
  std::vector<corpus::Dataset> shards;
  std::vector<attack::Target> attack_set;
  eval::BaselineOutputs baseline;
};

// `backbone` skips loading or pretraining when given.
Setup prepare(const RunConfig& config, const lm::Checkpoint* backbone = nullptr);

// D_syn substitute for an ablation; empty function for Ablation::kNone.
fed::SyntheticOverride make_override(const RunConfig& config, Ablation ablation, const Setup& setup);

struct RoundObservation {
  const Variant& variant;
  int round;
  const lm::AdapterParams& issued;  // server W_g handed to the clients
  const fed::RoundOutput& output;
  const std::vector<fed::ClientState>& clients;
  const fed::FedContext& context;
};
using Observer = std::function<void(const RoundObservation&)>;

struct RunResult {
  std::string variant;
  int rounds = 0;
  std::vector<fed::RoundRecord> history;
  std::vector<std::vector<attack::AttackReport>> attacks;  // per round, per attacked model
  std::vector<std::vector<eval::EvalReport>> evals;        // per round, per evaluated model
  std::optional<double> eval_score;                        // final round
  std::optional<double> attack_rouge_l;
  std::optional<double> attack_bleu;
};

/// Runs one algorithm variant into `dir`: manifest.json, rounds.csv,
/// eval.csv, attack.csv, timings.csv, checkpoints/, private/, uploads/ and,
/// for FedPIT, synthetic/.
RunResult run_experiment(const RunConfig& config, const Variant& variant, const Setup& setup,
                         const std::filesystem::path& dir, const Observer& observer = {});

/// Every variant of fed.algorithms under config.out_dir/<name>/, plus
/// summary.csv, baseline_outputs.json and the partition files.
std::vector<RunResult> run_all(const RunConfig& config, const Observer& observer = {});

void write_summary(const std::vector<RunResult>& results, const std::filesystem::path& path);
void write_partition(const Setup& setup, const std::filesystem::path& dir);

std::string csv_field(const std::string& s);
std::string fmt(double v);

extern const char* const kVersion;

}  // namespace fedpit::runner
