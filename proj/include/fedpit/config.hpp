#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpit/attack.hpp"
#include "fedpit/evaljudge.hpp"
#include "fedpit/fedcore.hpp"
#include "fedpit/selfgen.hpp"
#include "fedpit/tinylm.hpp"
#include "json.hpp"

namespace fedpit::runner {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Ablation { kNone, kOod, kSimd, kIdeal };
enum class AttackTarget { kServer, kUploads };

// One entry of fed.algorithms: an algorithm, optionally with a D_syn
// substitution ("fedpit+ood").
struct Variant {
  fed::Algorithm algorithm = fed::Algorithm::kFedPit;
  Ablation ablation = Ablation::kNone;
  std::string name;
};

Variant parse_variant(const std::string& name, Ablation default_ablation = Ablation::kNone);

struct CorpusConfig {
  int categories = 6;
  int per_category = 30;
  double test_fraction = 0.2;
  std::string data;  // dataset file replacing the generated corpus when set
};

struct PretrainCorpus {
  int categories = 8;
  int per_category = 20;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  bool parallel = true;

  std::vector<Variant> algorithms;
  int rounds = 10;
  int local_epochs = 1;
  int baseline_epochs = 10;
  int clients_per_round = 0;
  corpus::PartitionSpec partition;
  fed::SyntheticMode synthetic_mode = fed::SyntheticMode::kReplace;
  fed::LocalStart local_start = fed::LocalStart::kServer;
  Ablation ablation = Ablation::kNone;  // for plain "fedpit" entries

  CorpusConfig corpus;
  std::string backbone_path;  // pretrain when empty
  std::size_t rank = 16;
  lm::PretrainConfig pretrain;
  PretrainCorpus pretrain_corpus;
  lm::TrainConfig train;
  selfgen::SelfGenConfig selfgen;

  bool attack_enabled = true;
  AttackTarget attack_target = AttackTarget::kServer;
  attack::AttackConfig attack;

  bool eval_enabled = true;
  eval::EvalConfig eval;
  double eval_epsilon = 1.0;
  bool eval_smooth = true;

  Json tree;  // the resolved dotted-key tree this config was built from
};

// Every recognised key with its default value, as nested objects.
Json default_tree();

// Overlays `overlay` on `base`; unknown keys and type mismatches throw
// ConfigError naming the dotted key.
void merge_tree(Json& base, const Json& overlay, const std::string& prefix = "");

// key=value, value parsed as JSON when it parses, otherwise taken as a string.
void apply_override(Json& tree, const std::string& assignment);

RunConfig from_tree(const Json& tree);

// The raw JSON of a config file, or of a run manifest's "config" member
// restricted to the manifest's algorithm.
Json read_config_file(const std::filesystem::path& path);

// Defaults overlaid with the config file.
Json load_tree(const std::filesystem::path& path);

// preset (or defaults), then the config file, then each key=value override.
Json resolve_tree(const std::string& preset_name, const std::string& config_path,
                  const std::vector<std::string>& overrides);

std::vector<std::string> preset_names();
Json preset(const std::string& name);  // throws ConfigError listing the presets

std::string to_string(Ablation a);
std::string to_string(AttackTarget t);

}  // namespace fedpit::runner
