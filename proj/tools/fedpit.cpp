#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "fedpit/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedpit;
using runner::Json;

namespace {

struct Common {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "Start from a named preset");
  cmd->add_option("--config", c.config, "JSON config file or run manifest");
  cmd->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
}

runner::RunConfig resolve(const Common& c) {
  return runner::from_tree(runner::resolve_tree(c.preset, c.config, c.sets));
}

// Sorted (round, path) pairs of files named round_<r>[_client_<k>].ckpt.
std::vector<std::tuple<int, int, fs::path>> checkpoints(const fs::path& dir) {
  std::vector<std::tuple<int, int, fs::path>> out;
  if (!fs::exists(dir)) return out;
  static const std::regex re(R"(round_(\d+)(?:_client_(\d+))?\.ckpt)");
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (!std::regex_match(name, m, re)) continue;
    out.emplace_back(std::stoi(m[1]), m[2].matched ? std::stoi(m[2]) : -1, e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

runner::RunConfig manifest_config(const fs::path& run_dir, const std::vector<std::string>& sets) {
  const auto manifest = run_dir / "manifest.json";
  if (!fs::exists(manifest)) throw runner::ConfigError("no manifest.json in " + run_dir.string());
  return runner::from_tree(runner::resolve_tree("", manifest.string(), sets));
}

lm::Checkpoint any_checkpoint(const fs::path& run_dir) {
  for (const char* sub : {"checkpoints", "private"}) {
    const auto c = checkpoints(run_dir / sub);
    if (!c.empty()) return lm::load_checkpoint(std::get<2>(c.front()));
  }
  throw std::runtime_error("no checkpoints under " + run_dir.string());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cell += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        row.push_back(cell);
        cell.clear();
      } else {
        cell += ch;
      }
    }
    row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

void print_summary(const std::vector<runner::RunResult>& results) {
  std::printf("%-16s %10s %12s %12s\n", "algorithm", "eval", "attack_rl", "attack_bleu");
  for (const auto& r : results) {
    auto v = [](const std::optional<double>& x) { return x ? runner::fmt(*x) : std::string("-"); };
    std::printf("%-16s %10s %12s %12s\n", r.variant.c_str(), v(r.eval_score).c_str(), v(r.attack_rouge_l).c_str(),
                v(r.attack_bleu).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated instruction tuning laboratory on a toy language model"};
  app.require_subcommand(1);

  Common pre_c, part_c, run_c, sweep_c;
  std::string pre_out;
  auto* pre = app.add_subcommand("pretrain", "Pretrain a backbone and save it as a checkpoint");
  add_common(pre, pre_c);
  pre->add_option("-o,--output", pre_out, "Checkpoint path (default <out_dir>/backbone.ckpt)");

  auto* part = app.add_subcommand("partition", "Generate the corpus, split it and partition it across clients");
  add_common(part, part_c);

  auto* run = app.add_subcommand("run", "Run every algorithm listed in fed.algorithms");
  add_common(run, run_c);

  std::string attack_dir, eval_dir;
  std::vector<std::string> attack_sets, eval_sets;
  auto* atk = app.add_subcommand("attack", "Re-attack the saved checkpoints of a run directory");
  atk->add_option("run_dir", attack_dir, "Run directory of one algorithm")->required();
  atk->add_option("--set", attack_sets, "Override a config key (key=value), repeatable");

  auto* ev = app.add_subcommand("eval", "Re-evaluate the saved checkpoints of a run directory");
  ev->add_option("run_dir", eval_dir, "Run directory of one algorithm")->required();
  ev->add_option("--set", eval_sets, "Override a config key (key=value), repeatable");

  std::vector<double> alphas{10.0, 1.0, 0.1};
  auto* sweep = app.add_subcommand("sweep", "Non-IID sweep over Dirichlet alpha");
  add_common(sweep, sweep_c);
  sweep->add_option("--alphas", alphas, "Alpha values")->delimiter(',');

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Combine summary CSVs into one comparison table");
  rep->add_option("dirs", report_dirs, "Output directories holding summary.csv or sweep_summary.csv")->required();
  rep->add_option("-o,--output", report_out, "Also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      const auto cfg = resolve(pre_c);
      const auto priv = runner::private_corpus(cfg);
      auto p = runner::build_backbone(cfg, priv);
      const fs::path out = pre_out.empty() ? fs::path(cfg.out_dir) / "backbone.ckpt" : fs::path(pre_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      lm::save_checkpoint({p.vocab, p.backbone, std::nullopt}, out);
      std::printf("vocab %zu, loss %.4f -> %.4f, saved %s\n", p.vocab.size(), p.initial_loss, p.final_loss,
                  out.string().c_str());
    } else if (*part) {
      const auto cfg = resolve(part_c);
      const auto setup = runner::prepare(cfg);
      const fs::path out = fs::path(cfg.out_dir) / "partition";
      runner::write_partition(setup, out);
      std::printf("train %zu, test %zu\n", setup.train.size(), setup.test.size());
      for (std::size_t k = 0; k < setup.shards.size(); ++k)
        std::printf("client %zu: %zu examples\n", k, setup.shards[k].size());
      std::printf("written to %s\n", out.string().c_str());
    } else if (*run) {
      const auto cfg = resolve(run_c);
      print_summary(runner::run_all(cfg));
      std::printf("outputs in %s\n", cfg.out_dir.c_str());
    } else if (*atk) {
      const fs::path dir = attack_dir;
      auto cfg = manifest_config(dir, attack_sets);
      const auto base = any_checkpoint(dir);
      const auto setup = runner::prepare(cfg, &base);
      const bool uploads = cfg.attack_target == runner::AttackTarget::kUploads;
      const auto list = checkpoints(dir / (uploads ? "uploads" : "checkpoints"));
      if (list.empty()) throw std::runtime_error("no shared checkpoints to attack under " + dir.string());
      const auto out = dir / "attack_rerun.csv";
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out.string());
      f << "round,model,case,client,prefix_offset,bleu,rouge_l\n";
      for (const auto& [round, client, path] : list) {
        if (round == 0) continue;
        const auto ck = lm::load_checkpoint(path);
        const auto r = attack::attack_round(ck, setup.attack_set, cfg.attack, round,
                                            runner::sub_seed(cfg.seed, "attack"), cfg.parallel);
        const std::string model = client < 0 ? "server" : "upload_" + std::to_string(client);
        for (const auto& c : r.cases)
          f << round << ',' << model << ',' << c.target << ',' << c.client << ',' << c.offset << ','
            << runner::fmt(c.bleu) << ',' << runner::fmt(c.rouge_l) << '\n';
        f << round << ',' << model << ",mean,," << cfg.attack.offset << ',' << runner::fmt(r.mean_bleu) << ','
          << runner::fmt(r.mean_rouge_l) << '\n';
        std::printf("round %d %s: rouge_l %.4f bleu %.4f\n", round, model.c_str(), r.mean_rouge_l, r.mean_bleu);
      }
      std::printf("written to %s\n", out.string().c_str());
    } else if (*ev) {
      const fs::path dir = eval_dir;
      auto cfg = manifest_config(dir, eval_sets);
      cfg.eval_enabled = false;  // baseline comes from the cache when present
      const auto base = any_checkpoint(dir);
      auto setup = runner::prepare(cfg, &base);
      const auto cache = dir.parent_path() / "baseline_outputs.json";
      if (fs::exists(cache)) {
        setup.baseline = eval::load_baseline(cache);
      } else {
        const auto zero = lm::AdapterParams::zeros(setup.vocab.size(), setup.backbone.dim(), cfg.rank);
        setup.baseline = eval::baseline_outputs(setup.backbone, zero, setup.vocab, setup.test, cfg.eval,
                                                runner::sub_seed(cfg.seed, "eval/baseline"), cfg.parallel);
      }
      const eval::ReferenceSimilarityJudge judge(cfg.eval_epsilon, cfg.eval_smooth);
      const auto alg = cfg.algorithms.front().algorithm;
      const bool per_client = alg == fed::Algorithm::kFedPit || alg == fed::Algorithm::kLocIt ||
                              alg == fed::Algorithm::kLocItSg;
      const auto list = checkpoints(dir / (per_client ? "private" : "checkpoints"));
      const auto out = dir / "eval_rerun.csv";
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out.string());
      f << "round,model,score,wins,ties,losses\n";
      for (const auto& [round, client, path] : list) {
        if (round == 0) continue;
        const auto ck = lm::load_checkpoint(path);
        const auto r = eval::dual_sided_evaluate(setup.backbone, *ck.adapter, setup.vocab, setup.baseline, setup.test,
                                                 judge, cfg.eval, runner::sub_seed(cfg.seed, "eval"), cfg.parallel);
        const std::string model = client < 0 ? "server" : "client_" + std::to_string(client);
        f << round << ',' << model << ',' << runner::fmt(r.mean_score) << ',' << r.wins << ',' << r.ties << ','
          << r.losses << '\n';
        std::printf("round %d %s: score %.4f (W/T/L %d/%d/%d)\n", round, model.c_str(), r.mean_score, r.wins, r.ties,
                    r.losses);
      }
      std::printf("written to %s\n", out.string().c_str());
    } else if (*sweep) {
      const auto tree = runner::resolve_tree(sweep_c.preset, sweep_c.config, sweep_c.sets);
      const auto base = runner::from_tree(tree);
      const fs::path root = base.out_dir;
      fs::create_directories(root);
      std::ofstream f(root / "sweep_summary.csv");
      if (!f) throw std::runtime_error("cannot write " + (root / "sweep_summary.csv").string());
      f << "alpha,algorithm,rounds,eval_score,attack_rouge_l,attack_bleu\n";
      for (double a : alphas) {
        auto t = tree;
        t["fed"]["alpha"] = a;
        std::ostringstream name;
        name << "alpha_" << a;
        t["out_dir"] = (root / name.str()).string();
        const auto cfg = runner::from_tree(t);
        std::printf("== alpha %g\n", a);
        const auto results = runner::run_all(cfg);
        print_summary(results);
        for (const auto& r : results) {
          auto v = [](const std::optional<double>& x) { return x ? runner::fmt(*x) : std::string(); };
          f << a << ',' << r.variant << ',' << r.rounds << ',' << v(r.eval_score) << ',' << v(r.attack_rouge_l) << ','
            << v(r.attack_bleu) << '\n';
        }
      }
      std::printf("outputs in %s\n", root.string().c_str());
    } else if (*rep) {
      std::vector<std::vector<std::string>> table;
      std::vector<std::string> header;
      for (const auto& d : report_dirs) {
        fs::path p = fs::path(d) / "sweep_summary.csv";
        if (!fs::exists(p)) p = fs::path(d) / "summary.csv";
        if (!fs::exists(p)) throw std::runtime_error("no summary.csv or sweep_summary.csv in " + d);
        auto rows = read_csv(p);
        if (rows.empty()) continue;
        auto h = rows.front();
        h.insert(h.begin(), "source");
        if (header.empty()) header = h;
        for (std::size_t i = 1; i < rows.size(); ++i) {
          auto row = rows[i];
          row.insert(row.begin(), d);
          row.resize(header.size());
          table.push_back(std::move(row));
        }
      }
      std::vector<std::size_t> width(header.size());
      for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : table) width[c] = std::max(width[c], r[c].size());
      }
      auto line = [&](const std::vector<std::string>& r) {
        std::string s = "|";
        for (std::size_t c = 0; c < r.size(); ++c) s += " " + r[c] + std::string(width[c] - r[c].size(), ' ') + " |";
        std::puts(s.c_str());
      };
      line(header);
      std::vector<std::string> rule;
      for (auto w : width) rule.push_back(std::string(w, '-'));
      line(rule);
      for (const auto& r : table) line(r);
      if (!report_out.empty()) {
        std::ofstream f(report_out);
        if (!f) throw std::runtime_error("cannot write " + report_out);
        for (std::size_t c = 0; c < header.size(); ++c) f << (c ? "," : "") << runner::csv_field(header[c]);
        f << '\n';
        for (const auto& r : table) {
          for (std::size_t c = 0; c < r.size(); ++c) f << (c ? "," : "") << runner::csv_field(r[c]);
          f << '\n';
        }
      }
    }
  } catch (const runner::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
