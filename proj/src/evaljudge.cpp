#include "fedpit/evaljudge.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "fedpit/metrics.hpp"
#include "json.hpp"

namespace fedpit::eval {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kWin: return "win";
    case Outcome::kTie: return "tie";
    case Outcome::kLoss: return "loss";
  }
  return "tie";
}

double ReferenceSimilarityJudge::similarity(const std::string& output, const std::string& reference) const {
  const auto out = metrics::tokenize(output);
  const auto ref = metrics::tokenize(reference);
  return 100.0 * (0.5 * metrics::rouge_l(out, ref) + 0.5 * metrics::bleu(out, ref, 4, smooth_));
}

JudgeVerdict ReferenceSimilarityJudge::judge(const std::string& output_a, const std::string& output_b,
                                             const std::string& reference) const {
  JudgeVerdict v;
  v.score_a = similarity(output_a, reference);
  v.score_b = similarity(output_b, reference);
  v.respects_a = {v.score_a, v.score_a, v.score_a, v.score_a};
  v.respects_b = {v.score_b, v.score_b, v.score_b, v.score_b};
  if (v.score_a > v.score_b + epsilon_)
    v.outcome = Outcome::kWin;
  else if (v.score_b > v.score_a + epsilon_)
    v.outcome = Outcome::kLoss;
  return v;
}

JudgeVerdict judge_pair(const std::string& output_a, const std::string& output_b,
                        const std::string& reference, const Judge& judge) {
  if (metrics::tokenize(reference).empty()) throw std::invalid_argument("judge_pair: empty reference");
  return judge.judge(output_a, output_b, reference);
}

JudgeVerdict judge_pair(const std::string& output_a, const std::string& output_b,
                        const std::string& reference) {
  return judge_pair(output_a, output_b, reference, ReferenceSimilarityJudge{});
}

std::string respond(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                    const lm::Vocab& vocab, const corpus::Example& example, const EvalConfig& config,
                    Rng& rng) {
  lm::GenerationConfig gen;
  gen.max_tokens = config.max_tokens;
  gen.temperature = config.temperature;
  gen.repetition_penalty = config.repetition_penalty;
  gen = lm::text_generation(gen);
  gen.banned_tokens.push_back(lm::Vocab::kSep);
  const auto prompt = lm::serialize_prompt(vocab, example.instruction, example.input);
  return vocab.decode(lm::generate(backbone, adapter, prompt, gen, rng).tokens);
}

std::string instruction_key(const corpus::Example& example) {
  const auto h = hash_name(example.instruction + '\x1f' + example.input);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BaselineOutputs baseline_outputs(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                                 const lm::Vocab& vocab, const corpus::Dataset& testset,
                                 const EvalConfig& config, std::uint64_t seed, bool parallel) {
  std::vector<std::string> texts(testset.size());
  const auto n = static_cast<std::ptrdiff_t>(testset.size());
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, "eval/baseline", 0, static_cast<std::uint64_t>(i));
    texts[static_cast<std::size_t>(i)] =
        respond(backbone, adapter, vocab, testset.examples[static_cast<std::size_t>(i)], config, rng);
  }
  BaselineOutputs out;
  for (std::size_t i = 0; i < texts.size(); ++i) out[instruction_key(testset.examples[i])] = texts[i];
  return out;
}

void save_baseline(const BaselineOutputs& outputs, const std::filesystem::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : outputs) j[k] = v;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

BaselineOutputs load_baseline(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error(path.string() + ": expected a JSON object");
  BaselineOutputs out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw std::runtime_error(path.string() + ": value of '" + it.key() + "' is not a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

EvalReport dual_sided_evaluate(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                               const lm::Vocab& vocab, const BaselineOutputs& baseline,
                               const corpus::Dataset& testset, const Judge& judge,
                               const EvalConfig& config, std::uint64_t seed, bool parallel) {
  if (testset.empty()) throw std::invalid_argument("dual_sided_evaluate: empty test set");
  std::vector<std::optional<EvalRecord>> slots(testset.size());
  const auto n = static_cast<std::ptrdiff_t>(testset.size());
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& ex = testset.examples[static_cast<std::size_t>(i)];
    const auto key = instruction_key(ex);
    const auto it = baseline.find(key);
    if (it == baseline.end()) continue;
    Rng rng = Rng::stream(seed, "eval/model", 0, static_cast<std::uint64_t>(i));
    EvalRecord r;
    r.key = key;
    r.instruction = ex.instruction;
    r.reference = ex.response;
    r.output = respond(backbone, adapter, vocab, ex, config, rng);
    r.baseline = it->second;
    const auto first = judge_pair(r.output, r.baseline, r.reference, judge);
    const auto second = judge_pair(r.baseline, r.output, r.reference, judge);
    r.score = 0.5 * (first.score_a + second.score_b);
    r.baseline_score = 0.5 * (first.score_b + second.score_a);
    if (first.outcome == Outcome::kWin && second.outcome == Outcome::kLoss)
      r.outcome = Outcome::kWin;
    else if (first.outcome == Outcome::kLoss && second.outcome == Outcome::kWin)
      r.outcome = Outcome::kLoss;
    slots[static_cast<std::size_t>(i)] = std::move(r);
  }

  EvalReport rep;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) {
      rep.skipped.push_back("no baseline output for test instruction " + std::to_string(i) + " ('" +
                            testset.examples[i].instruction + "')");
      continue;
    }
    auto& r = *slots[i];
    rep.mean_score += r.score;
    if (r.outcome == Outcome::kWin) ++rep.wins;
    else if (r.outcome == Outcome::kLoss) ++rep.losses;
    else ++rep.ties;
    rep.records.push_back(std::move(r));
  }
  if (!rep.records.empty()) rep.mean_score /= static_cast<double>(rep.records.size());
  return rep;
}

}  // namespace fedpit::eval
