#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedpit/config.hpp"
#include "fedpit/experiment.hpp"

using namespace fedpit;
using namespace fedpit::runner;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

Json tiny_tree(const fs::path& out) {
  Json t = default_tree();
  for (const char* kv : {"corpus.categories=3", "corpus.per_category=12", "pretrain.steps=100",
                         "pretrain.categories=4", "pretrain.per_category=10", "model.dim=16", "model.window=8",
                         "model.rank=4", "fed.rounds=2", "selfgen.candidates=8", "selfgen.keep=4",
                         "attack.per_client=3", "fed.algorithms=fedpit,fedit,locit,cenit"})
    apply_override(t, kv);
  apply_override(t, "out_dir=" + out.string());
  return t;
}

}  // namespace

TEST_CASE("overrides are validated with the key named") {
  Json t = default_tree();
  const auto msg = error_of([&] {
    apply_override(t, "fed.alpha=abc");
    from_tree(t);
  });
  CHECK(msg.find("fed.alpha") != std::string::npos);
  CHECK(error_of([&] { apply_override(t, "fed.nope=1"); }).find("fed.nope") != std::string::npos);
  CHECK(error_of([&] { apply_override(t, "novalue"); }) != "");

  Json ok = default_tree();
  apply_override(ok, "fed.alpha=0.1");
  apply_override(ok, "train.lr=2e-3");
  apply_override(ok, "fed.algorithms=fedit,fedpit+ood");
  const auto cfg = from_tree(ok);
  CHECK(cfg.partition.alpha == 0.1);
  CHECK(cfg.train.lr == 2e-3);
  REQUIRE(cfg.algorithms.size() == 2);
  CHECK(cfg.algorithms[1].algorithm == fed::Algorithm::kFedPit);
  CHECK(cfg.algorithms[1].ablation == Ablation::kOod);

  Json bad = default_tree();
  apply_override(bad, "fed.rounds=0");
  CHECK(error_of([&] { from_tree(bad); }).find("fed.rounds") != std::string::npos);
}

TEST_CASE("defaults") {
  const auto cfg = from_tree(default_tree());
  CHECK(cfg.seed == 1);
  CHECK(cfg.rounds == 10);
  CHECK(cfg.local_epochs == 1);
  CHECK(cfg.partition.num_clients == 3);
  CHECK(cfg.partition.alpha == 1.0);
  CHECK(cfg.rank == 16);
  CHECK(cfg.selfgen.candidates == 32);
  CHECK(cfg.selfgen.keep == 16);
  CHECK(cfg.selfgen.rouge_threshold == 0.7);
  CHECK(cfg.attack.per_client == 20);
  CHECK(cfg.attack.prefix_len == 10);
}

TEST_CASE("presets") {
  for (const auto& name : preset_names()) CHECK_NOTHROW(from_tree(resolve_tree(name, "", {})));
  const auto msg = error_of([] { preset("no-such-preset"); });
  CHECK(msg.find("no-such-preset") != std::string::npos);
  for (const auto& name : preset_names()) CHECK(msg.find(name) != std::string::npos);
  const auto fig4 = from_tree(resolve_tree("fig4-privacy", "", {"fed.rounds=3"}));
  CHECK(fig4.rounds == 3);
  CHECK(fig4.attack_enabled);
}

TEST_CASE("variant names") {
  CHECK(parse_variant("fedpit+simd").ablation == Ablation::kSimd);
  CHECK(parse_variant("fedpit+ideal").name == "fedpit+ideal");
  CHECK(parse_variant("fedpit", Ablation::kOod).ablation == Ablation::kOod);
  CHECK_THROWS(parse_variant("fedit+ood"));
}

TEST_CASE("config file and manifest") {
  const auto dir = fs::temp_directory_path() / "fedpit_test_config";
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"seed": 5, "fed": {"rounds": 4}})";
  const auto cfg = from_tree(resolve_tree("", (dir / "c.json").string(), {}));
  CHECK(cfg.seed == 5);
  CHECK(cfg.rounds == 4);

  Json manifest = {{"version", "0.1.0"}, {"algorithm", "fedit"}, {"seed", 5}, {"config", default_tree()}};
  std::ofstream(dir / "manifest.json") << manifest.dump();
  const auto m = from_tree(resolve_tree("", (dir / "manifest.json").string(), {}));
  REQUIRE(m.algorithms.size() == 1);
  CHECK(m.algorithms[0].name == "fedit");

  std::ofstream(dir / "bad.json") << R"({"fed": {"rounds": "ten"}})";
  CHECK(error_of([&] { resolve_tree("", (dir / "bad.json").string(), {}); }).find("fed.rounds") !=
        std::string::npos);
}

TEST_CASE("a tiny run writes the documented layout") {
  const auto out = fs::temp_directory_path() / "fedpit_test_run";
  fs::remove_all(out);
  const auto cfg = from_tree(tiny_tree(out));
  const auto results = run_all(cfg);
  REQUIRE(results.size() == 4);
  for (const char* f : {"summary.csv", "baseline_outputs.json"}) CHECK(fs::exists(out / f));
  CHECK(first_line(out / "summary.csv") == "algorithm,rounds,eval_score,attack_rouge_l,attack_bleu");
  const auto fp = out / "fedpit";
  CHECK(fs::exists(fp / "manifest.json"));
  CHECK(fs::exists(fp / "checkpoints" / "round_0.ckpt"));
  CHECK(fs::exists(fp / "checkpoints" / "round_2.ckpt"));
  CHECK(fs::exists(fp / "uploads" / "round_2_client_0.ckpt"));
  CHECK(first_line(fp / "rounds.csv") ==
        "round,client,local_size,synthetic_size,generated,filtered_out,failed_responses,upload_weight,"
        "train_ce,eval_score,attack_rouge_l,attack_bleu");
  CHECK(first_line(fp / "attack.csv") == "round,model,case,client,prefix_offset,bleu,rouge_l");
  CHECK(first_line(fp / "eval.csv") ==
        "round,model,key,instruction,score,baseline_score,outcome,wins,ties,losses");
  CHECK(fs::exists(out / "cenit" / "checkpoints" / "round_1.ckpt"));
  CHECK(results[1].eval_score.has_value());
  CHECK(results[1].attack_rouge_l.has_value());
  CHECK_FALSE(results[2].attack_rouge_l.has_value());

  const auto ck = lm::load_checkpoint(fp / "checkpoints" / "round_2.ckpt");
  CHECK(ck.adapter.has_value());
  CHECK(ck.adapter->rank() == 4);
}
