#include "fedpit/selfgen.hpp"

#include <algorithm>
#include <cmath>

#include "fedpit/metrics.hpp"

namespace fedpit::selfgen {

using corpus::Example;
using lm::Tokens;
using lm::Vocab;

void validate(const SelfGenConfig& c) {
  if (c.num_demonstrations < 1) throw std::invalid_argument("selfgen: num_demonstrations must be >= 1");
  if (c.candidates < 1) throw std::invalid_argument("selfgen: candidates must be >= 1");
  if (c.keep < 1 || c.keep > c.candidates)
    throw std::invalid_argument("selfgen: keep must be in [1, candidates]");
  if (!(c.rouge_threshold > 0.0 && c.rouge_threshold <= 1.0))
    throw std::invalid_argument("selfgen: rouge_threshold must be in (0, 1]");
  if (c.retry_budget < 1) throw std::invalid_argument("selfgen: retry_budget must be >= 1");
}

std::vector<Example> sample_demonstrations(const corpus::Dataset& local_data, int n, Rng& rng) {
  if (local_data.empty()) throw std::invalid_argument("sample_demonstrations: empty local data");
  std::vector<Example> out;
  const auto count = static_cast<std::size_t>(std::max(n, 0));
  if (local_data.size() >= count) {
    std::vector<std::size_t> idx(local_data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.push_back(local_data.examples[idx[i]]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(local_data.examples[static_cast<std::size_t>(rng.below(local_data.size()))]);
  }
  return out;
}

Tokens instruction_prompt(const Vocab& vocab, const std::vector<Example>& demos) {
  Tokens out;
  for (const auto& d : demos) {
    auto p = lm::serialize_prompt(vocab, d.instruction, d.input);
    out.insert(out.end(), p.begin(), p.end());
  }
  out.push_back(Vocab::kBos);
  return out;
}

Tokens response_prompt(const Vocab& vocab, const std::string& instruction,
                       const std::vector<Example>& demos) {
  Tokens out{Vocab::kSys};
  for (const auto& d : demos) {
    auto s = lm::serialize(vocab, d);
    out.insert(out.end(), s.begin(), s.end());
  }
  auto p = lm::serialize_prompt(vocab, instruction);
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<std::string> generate_instruction_candidates(const ModelView& model_g,
                                                         const std::vector<Example>& demos, int count,
                                                         const SelfGenConfig& config, Rng& rng) {
  if (demos.empty()) throw std::invalid_argument("generate_instruction_candidates: no demonstrations");
  const Tokens prompt = instruction_prompt(model_g.vocab, demos);
  lm::GenerationConfig gen = lm::text_generation(config.generation);
  gen.stop_tokens = {Vocab::kEos, Vocab::kSep};

  std::vector<std::string> out;
  const int budget = std::max(count, 0) * config.retry_budget;
  for (int attempt = 0; attempt < budget && static_cast<int>(out.size()) < count; ++attempt) {
    const auto g = lm::generate(model_g.backbone, model_g.adapter, prompt, gen, rng);
    auto text = model_g.vocab.decode(g.tokens);
    if (!text.empty()) out.push_back(std::move(text));
  }
  if (out.empty() && count > 0)
    throw SelfGenError("instruction generation produced no usable text within the retry budget");
  return out;
}

std::vector<std::string> filter_instructions(const std::vector<std::string>& candidates,
                                             const std::vector<std::string>& pool, double threshold) {
  std::vector<metrics::TokenSeq> seen;
  seen.reserve(pool.size() + candidates.size());
  for (const auto& p : pool) seen.push_back(metrics::tokenize(p));
  std::vector<std::string> kept;
  for (const auto& c : candidates) {
    const auto toks = metrics::tokenize(c);
    double worst = 0.0;
    for (const auto& s : seen) {
      worst = std::max(worst, metrics::rouge_l(toks, s));
      if (worst > threshold) break;
    }
    if (worst <= threshold) {
      kept.push_back(c);
      seen.push_back(toks);
    }
  }
  return kept;
}

ResponseResult generate_response(const ModelView& model_g, const std::string& instruction,
                                  const std::vector<Example>& demos, const SelfGenConfig& config,
                                  Rng& rng) {
  if (metrics::tokenize(instruction).empty())
    throw std::invalid_argument("generate_response: empty instruction");
  const Tokens prompt = response_prompt(model_g.vocab, instruction, demos);
  lm::GenerationConfig gen = lm::text_generation(config.generation);
  gen.stop_tokens = {Vocab::kEos};
  const auto g = lm::generate(model_g.backbone, model_g.adapter, prompt, gen, rng);

  ResponseResult r;
  r.text = model_g.vocab.decode(g.tokens);
  r.truncated = !g.stopped;
  const int limit = config.max_response_tokens > 0 ? config.max_response_tokens : gen.max_tokens;
  r.ok = !r.text.empty() && static_cast<int>(g.tokens.size()) <= limit;
  return r;
}

double ifd_score(const ModelView& model_l, const std::string& instruction, const std::string& response) {
  const Tokens resp = model_l.vocab.encode(response);
  if (resp.empty()) throw std::invalid_argument("ifd_score: empty response");
  const Tokens with = lm::serialize_prompt(model_l.vocab, instruction);
  const Tokens without = lm::serialize_prompt(model_l.vocab, "");
  const double num = lm::sequence_logprob(model_l.backbone, model_l.adapter, resp, with).mean_ce;
  const double den = lm::sequence_logprob(model_l.backbone, model_l.adapter, resp, without).mean_ce;
  return num / std::max(den, 1e-8);
}

std::vector<Candidate> select_top(std::vector<Candidate> survivors, int keep, IfdOrder order) {
  std::stable_sort(survivors.begin(), survivors.end(), [order](const Candidate& a, const Candidate& b) {
    if (a.ifd != b.ifd) return order == IfdOrder::kDescending ? a.ifd > b.ifd : a.ifd < b.ifd;
    return a.order < b.order;
  });
  if (static_cast<int>(survivors.size()) > keep) survivors.resize(static_cast<std::size_t>(keep));
  return survivors;
}

std::string nearest_category(const std::string& instruction, const std::vector<Example>& demos) {
  if (demos.empty()) return "default";
  const auto toks = metrics::tokenize(instruction);
  double best = -1.0;
  std::string cat = demos.front().category;
  for (const auto& d : demos) {
    const double s = metrics::rouge_l(toks, metrics::tokenize(d.instruction));
    if (s > best) {
      best = s;
      cat = d.category;
    }
  }
  return cat;
}

SelfGenResult self_generate(const ModelView& model_g, const ModelView& model_l,
                            const corpus::Dataset& local_data, const SelfGenConfig& config, Rng& rng,
                            int round, int client) {
  validate(config);
  if (local_data.empty()) throw std::invalid_argument("self_generate: empty local data");
  SelfGenResult res;
  res.synthetic.name = "synthetic-r" + std::to_string(round) + "-c" + std::to_string(client);

  const auto demos = sample_demonstrations(local_data, config.num_demonstrations, rng);
  for (const auto& ex : local_data.examples) res.pool.push_back(ex.instruction);

  std::vector<std::string> instructions;
  try {
    instructions = generate_instruction_candidates(model_g, demos, config.candidates, config, rng);
  } catch (const SelfGenError& e) {
    res.warnings.push_back(e.what());
    return res;
  }
  res.generated = static_cast<int>(instructions.size());
  const auto kept = filter_instructions(instructions, res.pool, config.rouge_threshold);
  res.filtered_out = res.generated - static_cast<int>(kept.size());

  for (const auto& inst : kept) {
    const auto r = generate_response(model_g, inst, demos, config, rng);
    if (!r.ok) {
      ++res.failed_responses;
      continue;
    }
    Candidate c;
    c.instruction = inst;
    c.response = r.text;
    c.truncated = r.truncated;
    c.category = nearest_category(inst, demos);
    c.ifd = ifd_score(model_l, inst, r.text);
    c.order = res.survivors.size();
    res.survivors.push_back(std::move(c));
  }

  for (auto& c : select_top(res.survivors, config.keep, config.order)) {
    Example ex;
    ex.instruction = c.instruction;
    ex.response = c.response;
    ex.category = c.category;
    ex.provenance = corpus::Provenance{round, client, c.ifd, c.truncated};
    res.synthetic.examples.push_back(std::move(ex));
  }
  if (res.synthetic.empty())
    res.warnings.push_back("no synthetic candidates survived for client " + std::to_string(client) +
                           " in round " + std::to_string(round));
  return res;
}

}  // namespace fedpit::selfgen
