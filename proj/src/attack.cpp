#include "fedpit/attack.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedpit/metrics.hpp"

namespace fedpit::attack {

void validate(const AttackConfig& c) {
  if (c.per_client < 1) throw std::invalid_argument("attack: per_client must be >= 1");
  if (c.prefix_len < 1) throw std::invalid_argument("attack: prefix_len must be >= 1");
  if (c.offset < 0) throw std::invalid_argument("attack: offset must be >= 0");
  if (c.suffix_cap < 1) throw std::invalid_argument("attack: suffix_cap must be >= 1");
  if (c.sample && !(c.temperature > 0.0)) throw std::invalid_argument("attack: temperature must be > 0");
}

std::vector<Target> build_attack_set(const std::vector<corpus::Dataset>& client_data, int per_client,
                                     Rng& rng) {
  std::vector<Target> out;
  for (std::size_t k = 0; k < client_data.size(); ++k) {
    const auto& d = client_data[k];
    std::vector<std::size_t> idx(d.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto take = std::min(idx.size(), static_cast<std::size_t>(std::max(per_client, 0)));
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.push_back({static_cast<int>(k), d.examples[idx[i]]});
    }
  }
  return out;
}

std::optional<Split> split_prefix_suffix(const lm::Vocab& vocab, const corpus::Example& example,
                                         int prefix_len, int offset, int suffix_cap) {
  const auto seq = lm::serialize(vocab, example);
  const auto start = static_cast<std::size_t>(offset);
  const auto end = start + static_cast<std::size_t>(prefix_len);
  if (seq.size() <= end) return std::nullopt;
  Split s;
  s.prefix.assign(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.begin() + static_cast<std::ptrdiff_t>(end));
  const auto stop = std::min(seq.size(), end + static_cast<std::size_t>(suffix_cap));
  s.suffix.assign(seq.begin() + static_cast<std::ptrdiff_t>(end), seq.begin() + static_cast<std::ptrdiff_t>(stop));
  return s;
}

lm::Tokens extract(const lm::BackboneParams& backbone, const lm::AdapterParams& adapter,
                   const lm::Tokens& prefix, int suffix_len, const AttackConfig& config, Rng& rng) {
  const int n = std::min(suffix_len, config.suffix_cap);
  if (n <= 0) return {};
  lm::GenerationConfig gen;
  gen.max_tokens = n;
  gen.temperature = config.sample ? config.temperature : 0.0;
  gen.repetition_penalty = 1.0;
  gen.stop_tokens.clear();
  return lm::generate(backbone, adapter, prefix, gen, rng).tokens;
}

std::vector<std::string> token_strings(const lm::Vocab& vocab, const lm::Tokens& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto t : ids) out.push_back(vocab.token(t));
  return out;
}

AttackReport attack_round(const lm::Checkpoint& server_model, const std::vector<Target>& attack_set,
                          const AttackConfig& config, int round, std::uint64_t seed, bool parallel) {
  validate(config);
  if (!server_model.adapter) throw std::invalid_argument("attack_round: checkpoint carries no adapter");
  const auto& vocab = server_model.vocab;
  const auto& bb = server_model.backbone;
  const auto& ad = *server_model.adapter;

  AttackReport rep;
  rep.round = round;
  std::vector<std::optional<AttackCase>> slots(attack_set.size());
  const auto n = static_cast<std::ptrdiff_t>(attack_set.size());
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& t = attack_set[static_cast<std::size_t>(i)];
    auto split = split_prefix_suffix(vocab, t.example, config.prefix_len, config.offset, config.suffix_cap);
    if (!split) continue;
    Rng rng = Rng::stream(seed, "attack/extract", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(i));
    AttackCase c;
    c.client = t.client;
    c.target = static_cast<std::size_t>(i);
    c.offset = config.offset;
    c.generated_suffix = extract(bb, ad, split->prefix, static_cast<int>(split->suffix.size()), config, rng);
    c.prefix = std::move(split->prefix);
    c.true_suffix = std::move(split->suffix);
    const auto gen = token_strings(vocab, c.generated_suffix);
    const auto ref = token_strings(vocab, c.true_suffix);
    c.bleu = metrics::bleu(gen, ref);
    c.rouge_l = metrics::rouge_l(gen, ref);
    slots[static_cast<std::size_t>(i)] = std::move(c);
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) {
      rep.skipped.push_back("case " + std::to_string(i) + " (client " + std::to_string(attack_set[i].client) +
                            "): serialized example too short for the prefix block");
      continue;
    }
    rep.cases.push_back(std::move(*slots[i]));
  }
  for (const auto& c : rep.cases) {
    rep.mean_bleu += c.bleu;
    rep.mean_rouge_l += c.rouge_l;
  }
  if (!rep.cases.empty()) {
    rep.mean_bleu /= static_cast<double>(rep.cases.size());
    rep.mean_rouge_l /= static_cast<double>(rep.cases.size());
  }
  return rep;
}

}  // namespace fedpit::attack
