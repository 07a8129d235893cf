#include "fedpit/config.hpp"

#include <fstream>
#include <sstream>

namespace fedpit::runner {

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

bool compatible(const Json& def, const Json& val) {
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) return val.is_number_integer() || val.is_number_unsigned();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) {
    if (!val.is_array()) return false;
    for (const auto& x : val)
      if (!x.is_string()) return false;
    return true;
  }
  return false;
}

std::string type_name(const Json& def) {
  if (def.is_number_float()) return "a number";
  if (def.is_number()) return "an integer";
  if (def.is_boolean()) return "true or false";
  if (def.is_string()) return "a string";
  if (def.is_array()) return "a list of strings";
  return "an object";
}

template <typename E>
E pick(const std::string& key, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  std::vector<std::string> names;
  for (const auto& [n, e] : options) {
    if (value == n) return e;
    names.emplace_back(n);
  }
  throw ConfigError(key + ": '" + value + "' is not one of " + join(names));
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

const Json& at(const Json& tree, const std::string& dotted) {
  const Json* cur = &tree;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) cur = &cur->at(part);
  return *cur;
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kOod: return "ood";
    case Ablation::kSimd: return "simd";
    case Ablation::kIdeal: return "ideal";
  }
  return "none";
}

Variant parse_variant(const std::string& name, Ablation default_ablation) {
  Variant v;
  v.name = name;
  const auto plus = name.find('+');
  try {
    v.algorithm = fed::parse_algorithm(name.substr(0, plus));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("fed.algorithms: ") + e.what());
  }
  if (plus == std::string::npos) {
    if (v.algorithm == fed::Algorithm::kFedPit) v.ablation = default_ablation;
    return v;
  }
  require(v.algorithm == fed::Algorithm::kFedPit, "fed.algorithms",
          "'" + name + "': only fedpit takes a substitution suffix");
  v.ablation = pick<Ablation>("fed.algorithms", name.substr(plus + 1),
                              {{"ood", Ablation::kOod}, {"simd", Ablation::kSimd}, {"ideal", Ablation::kIdeal}});
  return v;
}

std::string to_string(AttackTarget t) { return t == AttackTarget::kServer ? "server" : "uploads"; }

Json default_tree() {
  return Json::parse(R"({
  "seed": 1,
  "out_dir": "runs/default",
  "parallel": true,
  "fed": {
    "algorithms": ["fedpit", "fedit"],
    "rounds": 10,
    "local_epochs": 1,
    "baseline_epochs": 10,
    "clients_per_round": 0,
    "num_clients": 3,
    "alpha": 1.0,
    "synthetic_mode": "replace",
    "local_start": "server",
    "ablation": "none"
  },
  "corpus": {
    "categories": 6,
    "per_category": 30,
    "test_fraction": 0.2,
    "data": ""
  },
  "model": {
    "backbone": "",
    "dim": 32,
    "window": 16,
    "decay": 0.85,
    "rank": 16
  },
  "pretrain": {
    "categories": 8,
    "per_category": 20,
    "steps": 1000,
    "lr": 0.5,
    "batch_size": 8,
    "init_scale": 0.1
  },
  "train": {
    "optimizer": "adamw",
    "lr": 0.01,
    "batch_size": 16,
    "clip_norm": 0.0,
    "weight_decay": 0.0,
    "beta1": 0.9,
    "beta2": 0.999,
    "mask": "all"
  },
  "selfgen": {
    "num_demonstrations": 8,
    "candidates": 32,
    "keep": 16,
    "rouge_threshold": 0.7,
    "order": "descending",
    "retry_budget": 4,
    "max_response_tokens": 0
  },
  "gen": {
    "max_tokens": 32,
    "temperature": 0.8,
    "repetition_penalty": 1.3
  },
  "attack": {
    "enabled": true,
    "target": "server",
    "per_client": 20,
    "prefix_len": 10,
    "offset": 0,
    "suffix_cap": 64,
    "sample": false,
    "temperature": 0.8
  },
  "eval": {
    "enabled": true,
    "max_tokens": 32,
    "epsilon": 1.0,
    "smooth": true
  }
})");
}

void merge_tree(Json& base, const Json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_tree(slot, it.value(), key);
    } else {
      if (!compatible(slot, it.value()))
        throw ConfigError(key + ": expected " + type_name(slot) + ", got " + it.value().dump());
      if (slot.is_number_float())
        slot = it.value().get<double>();
      else
        slot = it.value();
    }
  }
}

void apply_override(Json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // A comma list for a list-valued key.
  Json probe = tree;
  const Json* cur = &probe;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    cur = &cur->at(part);
  }
  if (cur->is_array() && value.is_string()) {
    Json arr = Json::array();
    std::stringstream items(value.get<std::string>());
    std::string item;
    while (std::getline(items, item, ','))
      if (!item.empty()) arr.push_back(item);
    value = arr;
  }
  Json nested = value;
  std::vector<std::string> parts;
  std::stringstream again(key);
  while (std::getline(again, part, '.')) parts.push_back(part);
  for (auto p = parts.rbegin(); p != parts.rend(); ++p) {
    Json wrap = Json::object();
    wrap[*p] = nested;
    nested = wrap;
  }
  merge_tree(tree, nested);
}

RunConfig from_tree(const Json& tree) {
  RunConfig c;
  c.tree = tree;
  auto num = [&](const std::string& k) { return at(tree, k).get<double>(); };
  auto integer = [&](const std::string& k) { return at(tree, k).get<long long>(); };
  auto str = [&](const std::string& k) { return at(tree, k).get<std::string>(); };
  auto flag = [&](const std::string& k) { return at(tree, k).get<bool>(); };

  require(integer("seed") >= 0, "seed", "must be non-negative");
  c.seed = static_cast<std::uint64_t>(integer("seed"));
  c.out_dir = str("out_dir");
  c.parallel = flag("parallel");

  c.rounds = static_cast<int>(integer("fed.rounds"));
  require(c.rounds >= 1, "fed.rounds", "must be >= 1");
  c.local_epochs = static_cast<int>(integer("fed.local_epochs"));
  require(c.local_epochs >= 1, "fed.local_epochs", "must be >= 1");
  c.baseline_epochs = static_cast<int>(integer("fed.baseline_epochs"));
  require(c.baseline_epochs >= 1, "fed.baseline_epochs", "must be >= 1");
  c.partition.num_clients = static_cast<int>(integer("fed.num_clients"));
  require(c.partition.num_clients >= 1, "fed.num_clients", "must be >= 1");
  c.clients_per_round = static_cast<int>(integer("fed.clients_per_round"));
  require(c.clients_per_round >= 0 && c.clients_per_round <= c.partition.num_clients, "fed.clients_per_round",
          "must be in [0, fed.num_clients]");
  c.partition.alpha = num("fed.alpha");
  require(c.partition.alpha > 0.0, "fed.alpha", "must be > 0");
  c.partition.seed = c.seed;
  c.synthetic_mode = pick<fed::SyntheticMode>("fed.synthetic_mode", str("fed.synthetic_mode"),
                                              {{"replace", fed::SyntheticMode::kReplace},
                                               {"cumulative", fed::SyntheticMode::kCumulative}});
  c.local_start = pick<fed::LocalStart>("fed.local_start", str("fed.local_start"),
                                        {{"server", fed::LocalStart::kServer},
                                         {"client_copy", fed::LocalStart::kClientCopy}});
  c.ablation = pick<Ablation>("fed.ablation", str("fed.ablation"),
                              {{"none", Ablation::kNone},
                               {"ood", Ablation::kOod},
                               {"simd", Ablation::kSimd},
                               {"ideal", Ablation::kIdeal}});
  const auto& algs = at(tree, "fed.algorithms");
  require(!algs.empty(), "fed.algorithms", "needs at least one algorithm");
  for (const auto& a : algs) {
    const auto v = parse_variant(a.get<std::string>(), c.ablation);
    for (const auto& prev : c.algorithms)
      require(prev.name != v.name, "fed.algorithms", "'" + v.name + "' is listed twice");
    c.algorithms.push_back(v);
  }

  c.corpus.categories = static_cast<int>(integer("corpus.categories"));
  require(c.corpus.categories >= 2 && c.corpus.categories <= corpus::kInDomainCategories, "corpus.categories",
          "must be in [2, " + std::to_string(corpus::kInDomainCategories) + "]");
  c.corpus.per_category = static_cast<int>(integer("corpus.per_category"));
  require(c.corpus.per_category >= 10, "corpus.per_category", "must be >= 10");
  c.corpus.test_fraction = num("corpus.test_fraction");
  require(c.corpus.test_fraction > 0.0 && c.corpus.test_fraction < 1.0, "corpus.test_fraction", "must be in (0, 1)");
  c.corpus.data = str("corpus.data");

  c.backbone_path = str("model.backbone");
  const auto dim = integer("model.dim"), window = integer("model.window"), rank = integer("model.rank");
  require(dim >= 1, "model.dim", "must be >= 1");
  require(window >= 1, "model.window", "must be >= 1");
  require(rank >= 1, "model.rank", "must be >= 1");
  c.pretrain.dim = static_cast<std::size_t>(dim);
  c.pretrain.window = static_cast<std::size_t>(window);
  c.pretrain.decay = num("model.decay");
  require(c.pretrain.decay > 0.0 && c.pretrain.decay <= 1.0, "model.decay", "must be in (0, 1]");
  c.rank = static_cast<std::size_t>(rank);
  c.pretrain.steps = static_cast<int>(integer("pretrain.steps"));
  require(c.pretrain.steps >= 0, "pretrain.steps", "must be >= 0");
  c.pretrain.lr = num("pretrain.lr");
  require(c.pretrain.lr >= 0.0, "pretrain.lr", "must be >= 0");
  c.pretrain.batch_size = static_cast<int>(integer("pretrain.batch_size"));
  require(c.pretrain.batch_size >= 1, "pretrain.batch_size", "must be >= 1");
  c.pretrain.init_scale = num("pretrain.init_scale");
  require(c.pretrain.init_scale > 0.0, "pretrain.init_scale", "must be > 0");
  c.pretrain_corpus.categories = static_cast<int>(integer("pretrain.categories"));
  require(c.pretrain_corpus.categories >= 2 &&
              c.pretrain_corpus.categories <= static_cast<int>(corpus::template_categories().size()),
          "pretrain.categories",
          "must be in [2, " + std::to_string(corpus::template_categories().size()) + "]");
  c.pretrain_corpus.per_category = static_cast<int>(integer("pretrain.per_category"));
  require(c.pretrain_corpus.per_category >= 10, "pretrain.per_category", "must be >= 10");
  c.pretrain.parallel = c.parallel;

  c.train.optimizer = pick<lm::Optimizer>("train.optimizer", str("train.optimizer"),
                                          {{"adamw", lm::Optimizer::kAdam}, {"sgd", lm::Optimizer::kSgd}});
  c.train.lr = num("train.lr");
  require(c.train.lr >= 0.0, "train.lr", "must be >= 0");
  c.train.batch_size = static_cast<int>(integer("train.batch_size"));
  require(c.train.batch_size >= 1, "train.batch_size", "must be >= 1");
  c.train.clip_norm = num("train.clip_norm");
  require(c.train.clip_norm >= 0.0, "train.clip_norm", "must be >= 0");
  c.train.weight_decay = num("train.weight_decay");
  require(c.train.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  c.train.beta1 = num("train.beta1");
  require(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0, "train.beta1", "must be in [0, 1)");
  c.train.beta2 = num("train.beta2");
  require(c.train.beta2 >= 0.0 && c.train.beta2 < 1.0, "train.beta2", "must be in [0, 1)");
  c.train.mask = pick<lm::LossMask>("train.mask", str("train.mask"),
                                    {{"all", lm::LossMask::kAll}, {"response", lm::LossMask::kResponse}});
  c.train.parallel = c.parallel;

  c.selfgen.num_demonstrations = static_cast<int>(integer("selfgen.num_demonstrations"));
  c.selfgen.candidates = static_cast<int>(integer("selfgen.candidates"));
  c.selfgen.keep = static_cast<int>(integer("selfgen.keep"));
  c.selfgen.rouge_threshold = num("selfgen.rouge_threshold");
  c.selfgen.order = pick<selfgen::IfdOrder>("selfgen.order", str("selfgen.order"),
                                            {{"descending", selfgen::IfdOrder::kDescending},
                                             {"ascending", selfgen::IfdOrder::kAscending}});
  c.selfgen.retry_budget = static_cast<int>(integer("selfgen.retry_budget"));
  c.selfgen.max_response_tokens = static_cast<int>(integer("selfgen.max_response_tokens"));
  c.selfgen.generation.max_tokens = static_cast<int>(integer("gen.max_tokens"));
  require(c.selfgen.generation.max_tokens >= 1, "gen.max_tokens", "must be >= 1");
  c.selfgen.generation.temperature = num("gen.temperature");
  require(c.selfgen.generation.temperature >= 0.0, "gen.temperature", "must be >= 0");
  c.selfgen.generation.repetition_penalty = num("gen.repetition_penalty");
  require(c.selfgen.generation.repetition_penalty >= 1.0, "gen.repetition_penalty", "must be >= 1");
  try {
    selfgen::validate(c.selfgen);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  c.attack_enabled = flag("attack.enabled");
  c.attack_target = pick<AttackTarget>("attack.target", str("attack.target"),
                                       {{"server", AttackTarget::kServer}, {"uploads", AttackTarget::kUploads}});
  c.attack.per_client = static_cast<int>(integer("attack.per_client"));
  c.attack.prefix_len = static_cast<int>(integer("attack.prefix_len"));
  c.attack.offset = static_cast<int>(integer("attack.offset"));
  c.attack.suffix_cap = static_cast<int>(integer("attack.suffix_cap"));
  c.attack.sample = flag("attack.sample");
  c.attack.temperature = num("attack.temperature");
  try {
    attack::validate(c.attack);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  c.eval_enabled = flag("eval.enabled");
  c.eval.max_tokens = static_cast<int>(integer("eval.max_tokens"));
  require(c.eval.max_tokens >= 1, "eval.max_tokens", "must be >= 1");
  c.eval_epsilon = num("eval.epsilon");
  require(c.eval_epsilon >= 0.0, "eval.epsilon", "must be >= 0");
  c.eval_smooth = flag("eval.smooth");
  return c;
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  Json j = Json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  if (j.is_object() && j.contains("config") && j.contains("algorithm")) {
    Json c = j["config"];
    if (c.is_object() && c.contains("fed") && c["fed"].is_object())
      c["fed"]["algorithms"] = Json::array({j["algorithm"]});
    return c;
  }
  return j;
}

Json load_tree(const std::filesystem::path& path) {
  Json tree = default_tree();
  merge_tree(tree, read_config_file(path));
  return tree;
}

Json resolve_tree(const std::string& preset_name, const std::string& config_path,
                  const std::vector<std::string>& overrides) {
  Json tree = preset_name.empty() ? default_tree() : preset(preset_name);
  if (!config_path.empty()) merge_tree(tree, read_config_file(config_path));
  for (const auto& o : overrides) apply_override(tree, o);
  return tree;
}

std::vector<std::string> preset_names() {
  return {"fig3-utility", "fig4-privacy", "table1-substitution", "table2-fl-contribution", "fig5-noniid"};
}

Json preset(const std::string& name) {
  Json t = default_tree();
  if (name == "fig3-utility") {
    t["fed"]["algorithms"] = {"cenit", "fedpit", "fedit", "locit"};
    t["fed"]["rounds"] = 10;
    t["out_dir"] = "runs/fig3-utility";
  } else if (name == "fig4-privacy") {
    t["fed"]["algorithms"] = {"fedit", "fedpit"};
    t["attack"]["enabled"] = true;
    t["attack"]["per_client"] = 20;
    t["out_dir"] = "runs/fig4-privacy";
  } else if (name == "table1-substitution") {
    t["fed"]["algorithms"] = {"fedit", "fedpit", "fedpit+ood", "fedpit+simd", "fedpit+ideal", "cenit"};
    t["attack"]["enabled"] = false;
    t["out_dir"] = "runs/table1-substitution";
  } else if (name == "table2-fl-contribution") {
    t["fed"]["algorithms"] = {"locit", "locit_sg", "fedit", "fedpit", "cenit"};
    t["attack"]["enabled"] = false;
    t["out_dir"] = "runs/table2-fl-contribution";
  } else if (name == "fig5-noniid") {
    t["fed"]["algorithms"] = {"fedit", "fedpit"};
    t["attack"]["enabled"] = false;
    t["out_dir"] = "runs/fig5-noniid";
  } else {
    throw ConfigError("unknown preset '" + name + "'; available: " + join(preset_names()));
  }
  return t;
}

}  // namespace fedpit::runner
