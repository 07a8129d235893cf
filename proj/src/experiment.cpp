#include "fedpit/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedpit/metrics.hpp"

namespace fedpit::runner {

namespace fs = std::filesystem;

const char* const kVersion = "0.1.0";

std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) { return Rng::derive(seed, name)(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

void close_out(std::ofstream& f, const fs::path& path) {
  f.close();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::set<std::string> instructions_of(const corpus::Dataset& d) {
  std::set<std::string> s;
  for (const auto& ex : d.examples) s.insert(ex.instruction);
  return s;
}

corpus::Dataset without(const corpus::Dataset& d, const std::set<std::string>& banned) {
  corpus::Dataset out;
  out.name = d.name;
  for (const auto& ex : d.examples)
    if (!banned.count(ex.instruction)) out.examples.push_back(ex);
  return out;
}

corpus::Dataset draw(const corpus::Dataset& pool, std::size_t size, Rng rng, const std::string& name) {
  corpus::Dataset out;
  out.name = name;
  if (pool.empty()) return out;
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < size; ++i) {
    if (i < idx.size()) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.examples.push_back(pool.examples[idx[i]]);
    } else {
      out.examples.push_back(pool.examples[static_cast<std::size_t>(rng.below(pool.size()))]);
    }
  }
  return out;
}

std::string round_client(const std::string& stem, int round, int client, const std::string& ext) {
  return stem + "round_" + std::to_string(round) + "_client_" + std::to_string(client) + ext;
}

}  // namespace

corpus::Dataset private_corpus(const RunConfig& config) {
  if (!config.corpus.data.empty()) return corpus::load_dataset(config.corpus.data);
  auto d = corpus::generate_toy_corpus(config.corpus.categories, config.corpus.per_category,
                                       sub_seed(config.seed, "corpus/private"));
  d.name = "private";
  return d;
}

corpus::Dataset public_corpus(const RunConfig& config, const corpus::Dataset& exclude) {
  auto d = corpus::generate_toy_corpus(config.pretrain_corpus.categories, config.pretrain_corpus.per_category,
                                       sub_seed(config.seed, "corpus/public"));
  d = without(d, instructions_of(exclude));
  d.name = "public";
  return d;
}

lm::Pretrained build_backbone(const RunConfig& config, const corpus::Dataset& exclude) {
  if (!config.backbone_path.empty()) {
    auto ck = lm::load_checkpoint(config.backbone_path);
    lm::Pretrained p;
    p.vocab = std::move(ck.vocab);
    p.backbone = std::move(ck.backbone);
    return p;
  }
  auto words = corpus::toy_lexicon();
  for (const auto& ex : exclude.examples)
    for (const auto* text : {&ex.instruction, &ex.input, &ex.response})
      for (auto& t : metrics::tokenize(*text)) words.push_back(std::move(t));
  return lm::pretrain_backbone(public_corpus(config, exclude), config.pretrain, sub_seed(config.seed, "pretrain"),
                               words);
}

Setup prepare(const RunConfig& config, const lm::Checkpoint* backbone) {
  Setup s;
  const auto priv = private_corpus(config);
  if (backbone) {
    s.vocab = backbone->vocab;
    s.backbone = backbone->backbone;
  } else {
    auto p = build_backbone(config, priv);
    s.vocab = std::move(p.vocab);
    s.backbone = std::move(p.backbone);
    s.pretrain_initial_loss = p.initial_loss;
    s.pretrain_final_loss = p.final_loss;
  }
  auto split = corpus::split_train_test(priv, config.corpus.test_fraction, sub_seed(config.seed, "split"));
  s.train = std::move(split.first);
  s.test = std::move(split.second);
  auto spec = config.partition;
  spec.seed = sub_seed(config.seed, "partition");
  s.shards = corpus::dirichlet_partition(s.train, spec);
  for (std::size_t k = 0; k < s.shards.size(); ++k) s.shards[k].name = "client_" + std::to_string(k);
  Rng arng = Rng::stream(config.seed, "attack/set");
  s.attack_set = attack::build_attack_set(s.shards, config.attack.per_client, arng);
  if (config.eval_enabled) {
    const auto zero = lm::AdapterParams::zeros(s.vocab.size(), s.backbone.dim(), config.rank);
    s.baseline = eval::baseline_outputs(s.backbone, zero, s.vocab, s.test, config.eval,
                                        sub_seed(config.seed, "eval/baseline"), config.parallel);
  }
  return s;
}

fed::SyntheticOverride make_override(const RunConfig& config, Ablation ablation, const Setup& setup) {
  const std::uint64_t seed = config.seed;
  std::set<std::string> priv = instructions_of(setup.train);
  for (const auto& ex : setup.test.examples) priv.insert(ex.instruction);
  switch (ablation) {
    case Ablation::kNone:
      return {};
    case Ablation::kOod: {
      auto pool = corpus::generate_toy_corpus(
          static_cast<int>(corpus::template_categories().size()) - corpus::kInDomainCategories, 60,
          sub_seed(seed, "ablation/ood"), corpus::kInDomainCategories);
      return [pool, seed](int round, int client, const corpus::Dataset&, std::size_t size) {
        return draw(pool, size, Rng::stream(seed, "ablation/draw", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)), "ood");
      };
    }
    case Ablation::kSimd: {
      auto pool = without(corpus::generate_toy_corpus(config.corpus.categories, 30, sub_seed(seed, "ablation/simd")), priv);
      return [pool, seed](int round, int client, const corpus::Dataset&, std::size_t size) {
        return draw(pool, size, Rng::stream(seed, "ablation/draw", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)), "simd");
      };
    }
    case Ablation::kIdeal:
      return [priv, seed](int round, int client, const corpus::Dataset& local, std::size_t size) {
        // Fresh examples following the client's own category mix.
        std::map<std::string, double> hist;
        for (const auto& ex : local.examples) hist[ex.category] += 1.0;
        std::vector<std::string> cats;
        std::vector<double> weights;
        for (const auto& [c, n] : hist) {
          cats.push_back(c);
          weights.push_back(n);
        }
        const auto counts = corpus::apportion(size, weights);
        std::vector<std::string> wanted;
        for (std::size_t i = 0; i < cats.size(); ++i)
          for (std::size_t j = 0; j < 2 * counts[i]; ++j) wanted.push_back(cats[i]);
        const auto fresh = corpus::generate_for_categories(
            wanted, Rng::stream(seed, "ablation/ideal", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client))(),
            "ideal");
        corpus::Dataset out;
        out.name = "ideal";
        std::map<std::string, std::size_t> taken;
        for (std::size_t i = 0; i < cats.size(); ++i) {
          for (const auto& ex : fresh.examples) {
            if (ex.category != cats[i] || priv.count(ex.instruction)) continue;
            if (taken[cats[i]]++ >= counts[i]) break;
            out.examples.push_back(ex);
          }
        }
        return out;
      };
  }
  return {};
}

RunResult run_experiment(const RunConfig& config, const Variant& variant, const Setup& setup, const fs::path& dir,
                         const Observer& observer) {
  fs::create_directories(dir);
  for (const char* sub : {"checkpoints", "private", "uploads", "synthetic"}) fs::create_directories(dir / sub);
  {
    Json manifest;
    manifest["version"] = kVersion;
    manifest["algorithm"] = variant.name;
    manifest["seed"] = config.seed;
    manifest["config"] = config.tree;
    auto f = open_out(dir / "manifest.json");
    f << manifest.dump(2) << '\n';
    close_out(f, dir / "manifest.json");
  }

  fed::FedContext ctx{setup.backbone, setup.vocab};
  ctx.rank = config.rank;
  ctx.train = config.train;
  ctx.selfgen = config.selfgen;
  ctx.synthetic_mode = config.synthetic_mode;
  ctx.local_start = config.local_start;
  ctx.synthetic_override = make_override(config, variant.ablation, setup);
  ctx.seed = config.seed;
  ctx.parallel_clients = config.parallel;

  const eval::ReferenceSimilarityJudge judge(config.eval_epsilon, config.eval_smooth);
  const auto eval_seed = sub_seed(config.seed, "eval");
  const auto attack_seed = sub_seed(config.seed, "attack");
  auto save = [&](const fs::path& path, const lm::AdapterParams& a) {
    lm::save_checkpoint({setup.vocab, setup.backbone, a}, path);
  };
  auto evaluate = [&](const lm::AdapterParams& a) {
    return eval::dual_sided_evaluate(setup.backbone, a, setup.vocab, setup.baseline, setup.test, judge, config.eval,
                                     eval_seed, config.parallel);
  };
  auto attack_model = [&](const lm::AdapterParams& a, int round) {
    return attack::attack_round({setup.vocab, setup.backbone, a}, setup.attack_set, config.attack, round,
                                attack_seed, config.parallel);
  };

  RunResult res;
  res.variant = variant.name;
  std::vector<std::vector<std::string>> eval_names, attack_names;
  std::vector<double> timings;
  auto clients = fed::make_clients(ctx, setup.shards);
  const auto alg = variant.algorithm;

  auto finish_round = [&](fed::RoundRecord rec, std::vector<std::pair<std::string, const lm::AdapterParams*>> eval_models,
                          std::vector<std::pair<std::string, const lm::AdapterParams*>> attack_models) {
    std::vector<eval::EvalReport> evs;
    std::vector<std::string> enames;
    if (config.eval_enabled && !eval_models.empty()) {
      double sum = 0.0;
      for (auto& [name, a] : eval_models) {
        evs.push_back(evaluate(*a));
        enames.push_back(name);
        sum += evs.back().mean_score;
      }
      rec.eval_score = sum / static_cast<double>(evs.size());
    }
    std::vector<attack::AttackReport> ats;
    std::vector<std::string> anames;
    if (config.attack_enabled && !attack_models.empty()) {
      double r = 0.0, b = 0.0;
      for (auto& [name, a] : attack_models) {
        ats.push_back(attack_model(*a, rec.round));
        anames.push_back(name);
        r += ats.back().mean_rouge_l;
        b += ats.back().mean_bleu;
      }
      rec.attack_rouge_l = r / static_cast<double>(ats.size());
      rec.attack_bleu = b / static_cast<double>(ats.size());
    }
    res.evals.push_back(std::move(evs));
    res.attacks.push_back(std::move(ats));
    eval_names.push_back(std::move(enames));
    attack_names.push_back(std::move(anames));
    timings.push_back(rec.wall_seconds);
    res.history.push_back(std::move(rec));
  };

  if (fed::is_federated(alg)) {
    fed::ServerState server;
    server.w_global = fed::initial_adapter(ctx, "global");
    save(dir / "checkpoints" / "round_0.ckpt", server.w_global);
    fed::AlgorithmSpec spec{alg, config.rounds, config.local_epochs, config.clients_per_round};
    const lm::AdapterShape shape{setup.vocab.size(), setup.backbone.dim(), config.rank};
    for (int r = 1; r <= config.rounds; ++r) {
      const lm::AdapterParams issued = server.w_global;
      auto out = alg == fed::Algorithm::kFedPit ? fed::run_fedpit_round(ctx, server, clients, spec)
                                                : fed::run_fedit_round(ctx, server, clients, spec);
      if (observer) observer({variant, r, issued, out, clients, ctx});
      save(dir / "checkpoints" / ("round_" + std::to_string(r) + ".ckpt"), server.w_global);
      std::vector<lm::AdapterParams> uploads;
      for (std::size_t i = 0; i < out.sampled.size(); ++i) {
        uploads.push_back(lm::unflatten(out.uploads[i].params, shape));
        save(dir / "uploads" / round_client("", r, out.sampled[i], ".ckpt"), uploads.back());
      }
      std::vector<std::pair<std::string, const lm::AdapterParams*>> em, am;
      if (alg == fed::Algorithm::kFedPit) {
        for (int k : out.sampled) {
          const auto& c = clients[static_cast<std::size_t>(k)];
          save(dir / "private" / round_client("", r, k, ".ckpt"), c.w_local);
          corpus::save_dataset(c.synthetic_data, dir / "synthetic" / round_client("", r, k, ".json"));
        }
        for (const auto& c : clients)
          if (c.has_local) em.emplace_back("client_" + std::to_string(c.id), &c.w_local);
      } else {
        em.emplace_back("server", &server.w_global);
      }
      if (config.attack_target == AttackTarget::kServer) {
        am.emplace_back("server", &server.w_global);
      } else {
        for (std::size_t i = 0; i < out.sampled.size(); ++i)
          am.emplace_back("upload_" + std::to_string(out.sampled[i]), &uploads[i]);
      }
      finish_round(std::move(out.record), em, am);
    }
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    fed::RoundRecord rec;
    rec.round = 1;
    std::vector<lm::AdapterParams> per_client;
    lm::AdapterParams central;
    std::vector<selfgen::SelfGenResult> syn;
    if (alg == fed::Algorithm::kLocIt) {
      per_client = fed::run_locit(ctx, clients, config.baseline_epochs);
    } else if (alg == fed::Algorithm::kLocItSg) {
      auto r = fed::run_locit_sg(ctx, clients, config.baseline_epochs);
      per_client = std::move(r.adapters);
      syn = std::move(r.synthetic);
    } else {
      central = fed::run_cenit(ctx, clients, config.baseline_epochs);
    }
    for (std::size_t k = 0; k < clients.size(); ++k) {
      fed::ClientRoundRecord c;
      c.client = static_cast<int>(k);
      c.local_size = clients[k].local_data.size();
      const auto& model = alg == fed::Algorithm::kCenIt ? central : per_client[k];
      c.train_ce = lm::dataset_loss(setup.backbone, model, setup.vocab, clients[k].local_data);
      if (!syn.empty()) {
        c.synthetic_size = syn[k].synthetic.size();
        c.generated = syn[k].generated;
        c.filtered_out = syn[k].filtered_out;
        c.failed_responses = syn[k].failed_responses;
        c.warnings = syn[k].warnings;
        corpus::save_dataset(syn[k].synthetic, dir / "synthetic" / round_client("", 1, c.client, ".json"));
      }
      rec.clients.push_back(std::move(c));
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<std::pair<std::string, const lm::AdapterParams*>> em, am;
    if (alg == fed::Algorithm::kCenIt) {
      save(dir / "checkpoints" / "round_1.ckpt", central);
      em.emplace_back("central", &central);
      am.emplace_back("central", &central);
    } else {
      for (std::size_t k = 0; k < per_client.size(); ++k) {
        if (clients[k].local_data.empty()) continue;
        save(dir / "private" / round_client("", 1, static_cast<int>(k), ".ckpt"), per_client[k]);
        em.emplace_back("client_" + std::to_string(k), &per_client[k]);
      }
    }
    finish_round(std::move(rec), em, am);
  }
  res.rounds = static_cast<int>(res.history.size());
  res.eval_score = res.history.back().eval_score;
  res.attack_rouge_l = res.history.back().attack_rouge_l;
  res.attack_bleu = res.history.back().attack_bleu;

  {
    const auto path = dir / "rounds.csv";
    auto f = open_out(path);
    f << "round,client,local_size,synthetic_size,generated,filtered_out,failed_responses,upload_weight,train_ce,"
         "eval_score,attack_rouge_l,attack_bleu\n";
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      const auto& rec = res.history[i];
      std::map<int, double> client_eval;
      for (std::size_t m = 0; m < eval_names[i].size(); ++m)
        if (eval_names[i][m].rfind("client_", 0) == 0)
          client_eval[std::stoi(eval_names[i][m].substr(7))] = res.evals[i][m].mean_score;
      std::map<int, const attack::AttackReport*> client_attack;
      for (std::size_t m = 0; m < attack_names[i].size(); ++m)
        if (attack_names[i][m].rfind("upload_", 0) == 0)
          client_attack[std::stoi(attack_names[i][m].substr(7))] = &res.attacks[i][m];
      std::size_t local = 0, synthetic = 0;
      long generated = 0, filtered = 0, failed = 0;
      double weight = 0.0, ce = 0.0;
      for (const auto& c : rec.clients) {
        const auto e = client_eval.find(c.client);
        const auto a = client_attack.find(c.client);
        f << rec.round << ',' << c.client << ',' << c.local_size << ',' << c.synthetic_size << ',' << c.generated
          << ',' << c.filtered_out << ',' << c.failed_responses << ',' << fmt(c.upload_weight) << ','
          << fmt(c.train_ce) << ',' << (e != client_eval.end() ? fmt(e->second) : "") << ','
          << (a != client_attack.end() ? fmt(a->second->mean_rouge_l) : "") << ','
          << (a != client_attack.end() ? fmt(a->second->mean_bleu) : "") << '\n';
        local += c.local_size;
        synthetic += c.synthetic_size;
        generated += c.generated;
        filtered += c.filtered_out;
        failed += c.failed_responses;
        weight += c.upload_weight;
        ce += c.train_ce;
      }
      if (!rec.clients.empty()) ce /= static_cast<double>(rec.clients.size());
      f << rec.round << ",all," << local << ',' << synthetic << ',' << generated << ',' << filtered << ','
        << failed << ',' << fmt(weight) << ',' << fmt(ce) << ',' << opt(rec.eval_score) << ','
        << opt(rec.attack_rouge_l) << ',' << opt(rec.attack_bleu) << '\n';
    }
    close_out(f, path);
  }
  {
    const auto path = dir / "eval.csv";
    auto f = open_out(path);
    f << "round,model,key,instruction,score,baseline_score,outcome,wins,ties,losses\n";
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      const int round = res.history[i].round;
      int w = 0, t = 0, l = 0;
      for (std::size_t m = 0; m < res.evals[i].size(); ++m) {
        const auto& rep = res.evals[i][m];
        const auto& name = eval_names[i][m];
        for (const auto& r : rep.records)
          f << round << ',' << name << ',' << r.key << ',' << csv_field(r.instruction) << ',' << fmt(r.score) << ','
            << fmt(r.baseline_score) << ',' << eval::to_string(r.outcome) << ",,,\n";
        f << round << ',' << name << ",summary,," << fmt(rep.mean_score) << ",,," << rep.wins << ',' << rep.ties
          << ',' << rep.losses << '\n';
        w += rep.wins;
        t += rep.ties;
        l += rep.losses;
      }
      if (!res.evals[i].empty())
        f << round << ",all,summary,," << opt(res.history[i].eval_score) << ",,," << w << ',' << t << ',' << l
          << '\n';
    }
    close_out(f, path);
  }
  {
    const auto path = dir / "attack.csv";
    auto f = open_out(path);
    f << "round,model,case,client,prefix_offset,bleu,rouge_l\n";
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      const int round = res.history[i].round;
      for (std::size_t m = 0; m < res.attacks[i].size(); ++m) {
        const auto& rep = res.attacks[i][m];
        const auto& name = attack_names[i][m];
        for (const auto& c : rep.cases)
          f << round << ',' << name << ',' << c.target << ',' << c.client << ',' << c.offset << ',' << fmt(c.bleu)
            << ',' << fmt(c.rouge_l) << '\n';
        f << round << ',' << name << ",mean,," << config.attack.offset << ',' << fmt(rep.mean_bleu) << ','
          << fmt(rep.mean_rouge_l) << '\n';
      }
      if (!res.attacks[i].empty())
        f << round << ",all,mean,," << config.attack.offset << ',' << opt(res.history[i].attack_bleu) << ','
          << opt(res.history[i].attack_rouge_l) << '\n';
    }
    close_out(f, path);
  }
  {
    const auto path = dir / "timings.csv";
    auto f = open_out(path);
    f << "round,wall_seconds\n";
    for (std::size_t i = 0; i < timings.size(); ++i) f << res.history[i].round << ',' << fmt(timings[i]) << '\n';
    close_out(f, path);
  }
  return res;
}

void write_summary(const std::vector<RunResult>& results, const fs::path& path) {
  auto f = open_out(path);
  f << "algorithm,rounds,eval_score,attack_rouge_l,attack_bleu\n";
  for (const auto& r : results)
    f << r.variant << ',' << r.rounds << ',' << opt(r.eval_score) << ',' << opt(r.attack_rouge_l) << ','
      << opt(r.attack_bleu) << '\n';
  close_out(f, path);
}

void write_partition(const Setup& setup, const fs::path& dir) {
  fs::create_directories(dir);
  corpus::save_dataset(setup.train, dir / "train.json");
  corpus::save_dataset(setup.test, dir / "test.json");
  for (std::size_t k = 0; k < setup.shards.size(); ++k)
    corpus::save_dataset(setup.shards[k], dir / ("client_" + std::to_string(k) + ".json"));
}

std::vector<RunResult> run_all(const RunConfig& config, const Observer& observer) {
  const fs::path out = config.out_dir;
  const auto setup = prepare(config);
  fs::create_directories(out);
  write_partition(setup, out / "partition");
  if (config.eval_enabled) eval::save_baseline(setup.baseline, out / "baseline_outputs.json");
  std::vector<RunResult> results;
  for (const auto& v : config.algorithms) results.push_back(run_experiment(config, v, setup, out / v.name, observer));
  write_summary(results, out / "summary.csv");
  return results;
}

}  // namespace fedpit::runner
