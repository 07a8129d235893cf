#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpit/corpus.hpp"
#include "fedpit/selfgen.hpp"
#include "fedpit/tinylm.hpp"

namespace fedpit::fed {

enum class Algorithm { kFedPit, kFedIt, kLocIt, kLocItSg, kCenIt };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);  // "fedpit", "fedit", "locit", "locit_sg", "cenit"
bool is_federated(Algorithm a);

struct AlgorithmSpec {
  Algorithm algorithm = Algorithm::kFedPit;
  int rounds = 10;
  int local_epochs = 1;
  int clients_per_round = 0;  // 0 = every client
};

enum class SyntheticMode { kReplace, kCumulative };

// Start parameters for the W^l update of a FedPIT round.
enum class LocalStart { kServer, kClientCopy };

// Substitutes D_syn for a (round, client): receives the client's local data and
// the size the substitute must have.
using SyntheticOverride =
    std::function<corpus::Dataset(int round, int client, const corpus::Dataset& local, std::size_t size)>;

struct FedContext {
  FedContext(const lm::BackboneParams& b, const lm::Vocab& v) : backbone(b), vocab(v) {}

  const lm::BackboneParams& backbone;
  const lm::Vocab& vocab;
  std::size_t rank = 16;
  lm::TrainConfig train;  // epochs overridden per call
  selfgen::SelfGenConfig selfgen;
  SyntheticMode synthetic_mode = SyntheticMode::kReplace;
  LocalStart local_start = LocalStart::kServer;
  SyntheticOverride synthetic_override;  // empty = self-generation
  std::uint64_t seed = 0;
  bool parallel_clients = true;
};

struct ClientState {
  int id = 0;
  corpus::Dataset local_data;
  corpus::Dataset synthetic_data;
  lm::AdapterParams w_local;
  bool has_local = false;
  lm::AdapterParams w_global;  // last uploaded (or received) W^g_k
};

struct ClientRoundRecord {
  int client = 0;
  double train_ce = 0.0;  // on D_k under the client's post-round model
  std::size_t local_size = 0;
  std::size_t synthetic_size = 0;
  int generated = 0;
  int filtered_out = 0;
  int failed_responses = 0;
  double upload_weight = 0.0;
  std::vector<std::string> warnings;
};

struct RoundRecord {
  int round = 0;
  std::vector<ClientRoundRecord> clients;
  std::optional<double> eval_score;
  std::optional<double> attack_rouge_l;
  std::optional<double> attack_bleu;
  double wall_seconds = 0.0;
};

struct ServerState {
  lm::AdapterParams w_global;
  int round = 0;
  std::vector<RoundRecord> history;
};

struct Update {
  std::vector<double> params;
  double weight = 1.0;
};

/// FedAvg: weighted mean with weights normalised to sum to one.
std::vector<double> aggregate(std::span<const Update> updates);

// Uniform without replacement, returned sorted; k <= 0 or k >= n selects everyone.
std::vector<int> sample_clients(int num_clients, int k, std::uint64_t seed, int round);

// Streams for one client in one round.
Rng local_stream(const FedContext& ctx, int round, int client);
Rng global_stream(const FedContext& ctx, int round, int client);
Rng selfgen_stream(const FedContext& ctx, int round, int client);

/// The W^g upload of a FedPIT client: LocalUP(D_syn, server W^g) with the
/// client's keyed global stream. Its only inputs are those three things.
lm::AdapterParams fedpit_upload(const FedContext& ctx, const lm::AdapterParams& server_global,
                                const corpus::Dataset& synthetic, int round, int client, int epochs);

lm::AdapterParams initial_adapter(const FedContext& ctx, const std::string& role, int client = 0);

std::vector<ClientState> make_clients(const FedContext& ctx, const std::vector<corpus::Dataset>& shards);

struct RoundOutput {
  RoundRecord record;
  std::vector<int> sampled;
  std::vector<Update> uploads;  // parallel to `sampled`
};

/// One FedPIT round. `server.round` counts completed rounds; the round run
/// here is server.round + 1 and the counter is advanced on return.
RoundOutput run_fedpit_round(const FedContext& ctx, ServerState& server, std::vector<ClientState>& clients,
                             const AlgorithmSpec& spec);

RoundOutput run_fedit_round(const FedContext& ctx, ServerState& server, std::vector<ClientState>& clients,
                            const AlgorithmSpec& spec);

std::vector<lm::AdapterParams> run_locit(const FedContext& ctx, std::vector<ClientState>& clients, int epochs);

lm::AdapterParams run_cenit(const FedContext& ctx, const std::vector<ClientState>& clients, int epochs);

struct LocItSgResult {
  std::vector<lm::AdapterParams> adapters;
  std::vector<selfgen::SelfGenResult> synthetic;
};

LocItSgResult run_locit_sg(const FedContext& ctx, std::vector<ClientState>& clients, int epochs);

}  // namespace fedpit::fed
