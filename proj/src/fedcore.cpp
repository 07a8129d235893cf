#include "fedpit/fedcore.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <stdexcept>

namespace fedpit::fed {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedPit: return "fedpit";
    case Algorithm::kFedIt: return "fedit";
    case Algorithm::kLocIt: return "locit";
    case Algorithm::kLocItSg: return "locit_sg";
    case Algorithm::kCenIt: return "cenit";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  for (auto a : {Algorithm::kFedPit, Algorithm::kFedIt, Algorithm::kLocIt, Algorithm::kLocItSg,
                 Algorithm::kCenIt}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown algorithm '" + name +
                              "' (expected fedpit, fedit, locit, locit_sg or cenit)");
}

bool is_federated(Algorithm a) { return a == Algorithm::kFedPit || a == Algorithm::kFedIt; }

std::vector<double> aggregate(std::span<const Update> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  const std::size_t n = updates.front().params.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params.size() != n)
      throw std::invalid_argument("aggregate: update length " + std::to_string(u.params.size()) +
                                  " does not match " + std::to_string(n));
    if (!(u.weight > 0.0)) throw std::invalid_argument("aggregate: weights must be positive");
    total += u.weight;
  }
  std::vector<double> out(n, 0.0);
  for (const auto& u : updates) {
    const double w = u.weight / total;
    for (std::size_t i = 0; i < n; ++i) out[i] += w * u.params[i];
  }
  // A convex combination of equal values must return that value exactly.
  for (std::size_t i = 0; i < n; ++i) {
    double lo = updates.front().params[i], hi = lo;
    for (const auto& u : updates) {
      lo = std::min(lo, u.params[i]);
      hi = std::max(hi, u.params[i]);
    }
    out[i] = std::clamp(out[i], lo, hi);
  }
  return out;
}

std::vector<int> sample_clients(int num_clients, int k, std::uint64_t seed, int round) {
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i) ids[static_cast<std::size_t>(i)] = i;
  if (k <= 0 || k >= num_clients) return ids;
  Rng rng = Rng::stream(seed, "sampling", static_cast<std::uint64_t>(round));
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Rng local_stream(const FedContext& ctx, int round, int client) {
  return Rng::stream(ctx.seed, "train/local", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client));
}
Rng global_stream(const FedContext& ctx, int round, int client) {
  return Rng::stream(ctx.seed, "train/global", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client));
}
Rng selfgen_stream(const FedContext& ctx, int round, int client) {
  return Rng::stream(ctx.seed, "selfgen", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client));
}

namespace {

lm::AdapterParams train(const FedContext& ctx, const lm::AdapterParams& start, const corpus::Dataset& data,
                        int epochs, Rng rng) {
  lm::TrainConfig cfg = ctx.train;
  cfg.epochs = epochs;
  return lm::train_adapter(ctx.backbone, start, ctx.vocab, data, cfg, rng);
}

corpus::Dataset concat(const corpus::Dataset& a, const corpus::Dataset& b, const std::string& name) {
  corpus::Dataset out;
  out.name = name;
  out.examples = a.examples;
  out.examples.insert(out.examples.end(), b.examples.begin(), b.examples.end());
  return out;
}

// Runs `body(slot, client_index)` for every sampled client, optionally in
// parallel. Each slot is written by exactly one iteration.
template <typename Body>
void for_each_client(const FedContext& ctx, const std::vector<int>& sampled, Body&& body) {
  const auto n = static_cast<std::ptrdiff_t>(sampled.size());
  std::vector<std::exception_ptr> errors(sampled.size());
#pragma omp parallel for schedule(dynamic, 1) if (ctx.parallel_clients)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto slot = static_cast<std::size_t>(i);
    try {
      body(slot, sampled[slot]);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string sits_out(int k) { return "client " + std::to_string(k) + " has no local data and sits out"; }

void apply_aggregate(ServerState& server, const std::vector<Update>& uploads, const lm::AdapterParams& like) {
  std::vector<Update> live;
  for (const auto& u : uploads)
    if (u.weight > 0.0) live.push_back(u);
  if (live.empty()) return;
  server.w_global = lm::unflatten(aggregate(live), {like.a.rows, like.b.rows, like.rank()});
}

}  // namespace

lm::AdapterParams fedpit_upload(const FedContext& ctx, const lm::AdapterParams& server_global,
                                const corpus::Dataset& synthetic, int round, int client, int epochs) {
  return train(ctx, server_global, synthetic, epochs, global_stream(ctx, round, client));
}

lm::AdapterParams initial_adapter(const FedContext& ctx, const std::string& role, int client) {
  Rng rng = Rng::stream(ctx.seed, "init/" + role, 0, static_cast<std::uint64_t>(client));
  return lm::AdapterParams::init(ctx.backbone.vocab_size(), ctx.backbone.dim(), ctx.rank, rng);
}

std::vector<ClientState> make_clients(const FedContext& ctx, const std::vector<corpus::Dataset>& shards) {
  std::vector<ClientState> out;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.local_data = shards[k];
    c.w_local = initial_adapter(ctx, "local", c.id);
    c.w_global = initial_adapter(ctx, "global");
    out.push_back(std::move(c));
  }
  return out;
}

RoundOutput run_fedpit_round(const FedContext& ctx, ServerState& server, std::vector<ClientState>& clients,
                             const AlgorithmSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = server.round + 1;
  RoundOutput out;
  out.record.round = round;
  out.sampled = sample_clients(static_cast<int>(clients.size()), spec.clients_per_round, ctx.seed, round);
  out.uploads.resize(out.sampled.size());
  out.record.clients.resize(out.sampled.size());
  const lm::AdapterParams issued = server.w_global;

  for_each_client(ctx, out.sampled, [&](std::size_t slot, int k) {
    auto& client = clients[static_cast<std::size_t>(k)];
    auto& rec = out.record.clients[slot];
    rec.client = k;
    rec.local_size = client.local_data.size();
    if (client.local_data.empty()) {
      rec.warnings.push_back(sits_out(k));
      client.w_global = issued;
      out.uploads[slot] = Update{lm::flatten(issued), 0.0};
      return;
    }

    if (!client.has_local) {
      client.w_local = train(ctx, client.w_local, client.local_data, spec.local_epochs,
                             Rng::stream(ctx.seed, "train/warmup", static_cast<std::uint64_t>(round),
                                         static_cast<std::uint64_t>(k)));
      client.has_local = true;
    }

    corpus::Dataset fresh;
    if (ctx.synthetic_override) {
      fresh = ctx.synthetic_override(round, k, client.local_data,
                                     static_cast<std::size_t>(ctx.selfgen.keep));
      for (auto& ex : fresh.examples) {
        if (!ex.provenance) ex.provenance = corpus::Provenance{round, k, 0.0, false};
      }
    } else {
      Rng rng = selfgen_stream(ctx, round, k);
      const selfgen::ModelView model_g{ctx.backbone, issued, ctx.vocab};
      const selfgen::ModelView model_l{ctx.backbone, client.w_local, ctx.vocab};
      auto res = selfgen::self_generate(model_g, model_l, client.local_data, ctx.selfgen, rng, round, k);
      rec.generated = res.generated;
      rec.filtered_out = res.filtered_out;
      rec.failed_responses = res.failed_responses;
      rec.warnings = std::move(res.warnings);
      fresh = std::move(res.synthetic);
    }
    if (ctx.synthetic_mode == SyntheticMode::kCumulative) {
      client.synthetic_data.examples.insert(client.synthetic_data.examples.end(), fresh.examples.begin(),
                                            fresh.examples.end());
      client.synthetic_data.name = fresh.name;
    } else {
      client.synthetic_data = std::move(fresh);
    }
    rec.synthetic_size = client.synthetic_data.size();

    const lm::AdapterParams& local_start = ctx.local_start == LocalStart::kServer ? issued : client.w_global;
    const auto augmented = concat(client.local_data, client.synthetic_data, client.local_data.name + "+syn");
    client.w_local = train(ctx, local_start, augmented, spec.local_epochs, local_stream(ctx, round, k));

    if (client.synthetic_data.empty()) {
      rec.warnings.push_back("client " + std::to_string(k) +
                             " has no synthetic data; uploading the issued global adapter unchanged");
      client.w_global = issued;
      out.uploads[slot] = Update{lm::flatten(issued), 0.0};
    } else {
      client.w_global = fedpit_upload(ctx, issued, client.synthetic_data, round, k, spec.local_epochs);
      out.uploads[slot] = Update{lm::flatten(client.w_global),
                                 static_cast<double>(client.synthetic_data.size())};
    }
    rec.upload_weight = out.uploads[slot].weight;
    rec.train_ce = lm::dataset_loss(ctx.backbone, client.w_local, ctx.vocab, client.local_data);
  });

  apply_aggregate(server, out.uploads, issued);
  server.round = round;
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

RoundOutput run_fedit_round(const FedContext& ctx, ServerState& server, std::vector<ClientState>& clients,
                            const AlgorithmSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = server.round + 1;
  RoundOutput out;
  out.record.round = round;
  out.sampled = sample_clients(static_cast<int>(clients.size()), spec.clients_per_round, ctx.seed, round);
  out.uploads.resize(out.sampled.size());
  out.record.clients.resize(out.sampled.size());
  const lm::AdapterParams issued = server.w_global;

  for_each_client(ctx, out.sampled, [&](std::size_t slot, int k) {
    auto& client = clients[static_cast<std::size_t>(k)];
    auto& rec = out.record.clients[slot];
    rec.client = k;
    rec.local_size = client.local_data.size();
    if (client.local_data.empty()) {
      rec.warnings.push_back(sits_out(k));
      client.w_global = issued;
      out.uploads[slot] = Update{lm::flatten(issued), 0.0};
      return;
    }
    client.w_global = train(ctx, issued, client.local_data, spec.local_epochs, global_stream(ctx, round, k));
    out.uploads[slot] = Update{lm::flatten(client.w_global), static_cast<double>(client.local_data.size())};
    rec.upload_weight = out.uploads[slot].weight;
    rec.train_ce = lm::dataset_loss(ctx.backbone, client.w_global, ctx.vocab, client.local_data);
  });

  apply_aggregate(server, out.uploads, issued);
  server.round = round;
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<lm::AdapterParams> run_locit(const FedContext& ctx, std::vector<ClientState>& clients, int epochs) {
  std::vector<int> all;
  for (const auto& c : clients) all.push_back(c.id);
  std::vector<lm::AdapterParams> out(clients.size());
  const auto init = initial_adapter(ctx, "global");
  for_each_client(ctx, all, [&](std::size_t slot, int k) {
    auto& client = clients[static_cast<std::size_t>(k)];
    if (client.local_data.empty()) {
      out[slot] = init;
      return;
    }
    out[slot] = train(ctx, init, client.local_data, epochs, local_stream(ctx, 1, k));
    client.w_local = out[slot];
    client.has_local = true;
  });
  return out;
}

lm::AdapterParams run_cenit(const FedContext& ctx, const std::vector<ClientState>& clients, int epochs) {
  corpus::Dataset pooled;
  pooled.name = "pooled";
  // Client order fixes the pooled order, so one client reproduces LocIT.
  for (const auto& c : clients)
    pooled.examples.insert(pooled.examples.end(), c.local_data.examples.begin(), c.local_data.examples.end());
  return train(ctx, initial_adapter(ctx, "global"), pooled, epochs, local_stream(ctx, 1, 0));
}

LocItSgResult run_locit_sg(const FedContext& ctx, std::vector<ClientState>& clients, int epochs) {
  LocItSgResult res;
  const auto first = run_locit(ctx, clients, epochs);
  std::vector<int> all;
  for (const auto& c : clients) all.push_back(c.id);
  res.adapters.resize(clients.size());
  res.synthetic.resize(clients.size());
  const auto init = initial_adapter(ctx, "global");
  for_each_client(ctx, all, [&](std::size_t slot, int k) {
    auto& client = clients[static_cast<std::size_t>(k)];
    if (client.local_data.empty()) {
      res.adapters[slot] = init;
      res.synthetic[slot].warnings.push_back(sits_out(k));
      return;
    }
    const selfgen::ModelView own{ctx.backbone, first[slot], ctx.vocab};
    Rng rng = selfgen_stream(ctx, 1, k);
    res.synthetic[slot] = selfgen::self_generate(own, own, client.local_data, ctx.selfgen, rng, 1, k);
    client.synthetic_data = res.synthetic[slot].synthetic;
    const auto augmented = concat(client.local_data, client.synthetic_data, client.local_data.name + "+syn");
    res.adapters[slot] = train(ctx, init, augmented, epochs,
                               Rng::stream(ctx.seed, "train/locit_sg", 1, static_cast<std::uint64_t>(k)));
    client.w_local = res.adapters[slot];
  });
  return res;
}

}  // namespace fedpit::fed
