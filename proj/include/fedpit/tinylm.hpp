#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedpit/corpus.hpp"
#include "fedpit/rng.hpp"

namespace fedpit::lm {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kSys = 4;  // system preamble marker
  static constexpr TokenId kNumReserved = 5;

  Vocab();
  // Reserved tokens first, then the given words in sorted order, deduplicated.
  static Vocab from_words(std::vector<std::string> words);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(const std::string& token) const;  // unknown -> kPad
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  Tokens encode(const std::string& text) const;
  // Text of the non-reserved tokens, space separated.
  std::string decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  bool operator==(const Matrix&) const = default;
};

/// Frozen backbone: logits = W0 * c with c = sum_i w_i * E[x_{t-i}] over the
/// last k tokens, missing history padded with PAD.
struct BackboneParams {
  Matrix embed;                  // V x d
  Matrix out;                    // V x d
  std::vector<double> position;  // k weights, position[0] applies to the previous token

  std::size_t vocab_size() const { return embed.rows; }
  std::size_t dim() const { return embed.cols; }
  std::size_t window() const { return position.size(); }
  bool operator==(const BackboneParams&) const = default;
};

/// Low-rank adapter; the output projection becomes W0 + A * B^T.
struct AdapterParams {
  Matrix a;  // V x r
  Matrix b;  // d x r

  static AdapterParams zeros(std::size_t vocab, std::size_t dim, std::size_t rank);
  // A = 0, B ~ N(0, 1/d): trains from an exact zero delta.
  static AdapterParams init(std::size_t vocab, std::size_t dim, std::size_t rank, Rng& rng);

  std::size_t rank() const { return a.cols; }
  std::size_t param_count() const { return a.data.size() + b.data.size(); }
  bool operator==(const AdapterParams&) const = default;
};

struct AdapterShape {
  std::size_t vocab = 0;
  std::size_t dim = 0;
  std::size_t rank = 0;
};

// A's entries row-major, then B's entries row-major.
std::vector<double> flatten(const AdapterParams& adapter);
AdapterParams unflatten(std::span<const double> values, AdapterShape shape);

std::vector<double> position_weights(std::size_t window, double decay = 0.85);

void context_vector(const BackboneParams& backbone, std::span<const TokenId> history,
                    std::span<double> out);

std::vector<double> forward_logits(const BackboneParams& backbone, const AdapterParams& adapter,
                                   std::span<const TokenId> history);

// In-place, numerically stable; returns log-sum-exp of the input.
double softmax_inplace(std::span<double> logits);

struct SequenceScore {
  double total_logprob = 0.0;
  double mean_ce = 0.0;
};

// Teacher-forced log-probability of `seq` following `prefix`.
SequenceScore sequence_logprob(const BackboneParams& backbone, const AdapterParams& adapter,
                               std::span<const TokenId> seq, std::span<const TokenId> prefix);

// BOS instruction [input] SEP
Tokens serialize_prompt(const Vocab& vocab, const std::string& instruction,
                        const std::string& input = {});
// BOS instruction [input] SEP response EOS
Tokens serialize(const Vocab& vocab, const corpus::Example& ex);

// A serialized example and the first position whose token enters the loss.
struct TrainingSequence {
  Tokens tokens;
  std::size_t loss_from = 1;
};

enum class LossMask { kAll, kResponse };

// kAdam is AdamW with decoupled weight decay; its moment state lives only for
// the duration of one train_adapter call.
enum class Optimizer { kSgd, kAdam };

std::vector<TrainingSequence> training_sequences(const Vocab& vocab, const corpus::Dataset& data,
                                                 LossMask mask);

struct TrainConfig {
  int epochs = 1;
  double lr = 2e-3;
  int batch_size = 16;
  double clip_norm = 0.0;  // global L2 clip of the mean gradient, 0 disables
  Optimizer optimizer = Optimizer::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  LossMask mask = LossMask::kAll;
  bool parallel = true;
};

/// Mini-batch gradient descent on A and B with the backbone frozen. Examples
/// are visited in an order shuffled from `rng` each epoch. The input adapter
/// is not modified.
AdapterParams train_adapter(const BackboneParams& backbone, const AdapterParams& start,
                            const Vocab& vocab, const corpus::Dataset& data,
                            const TrainConfig& config, Rng& rng);

// Mean next-token cross-entropy over the dataset's loss positions.
double dataset_loss(const BackboneParams& backbone, const AdapterParams& adapter,
                    const Vocab& vocab, const corpus::Dataset& data, LossMask mask = LossMask::kAll);

struct GenerationConfig {
  int max_tokens = 32;
  double temperature = 0.8;
  double repetition_penalty = 1.3;
  std::vector<TokenId> stop_tokens = {Vocab::kEos};
  std::vector<TokenId> banned_tokens;  // never emitted
};

struct Generation {
  Tokens tokens;  // stop token excluded
  bool stopped = false;  // a stop token ended generation
  TokenId stop_token = Vocab::kPad;
};

Generation generate(const BackboneParams& backbone, const AdapterParams& adapter,
                    std::span<const TokenId> prompt, const GenerationConfig& config, Rng& rng);

// Stop tokens plus never-emitted reserved tokens for generating under `vocab`.
GenerationConfig text_generation(const GenerationConfig& base);

struct PretrainConfig {
  std::size_t dim = 32;
  std::size_t window = 16;
  double decay = 0.85;
  int steps = 2000;
  double lr = 0.5;
  int batch_size = 8;
  double init_scale = 0.1;
  bool parallel = true;
};

struct Pretrained {
  Vocab vocab;
  BackboneParams backbone;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Builds the vocabulary from `corpus` tokens plus `extra_words`, then trains
/// E and W0 by SGD on randomly drawn mini-batches of serialized examples.
Pretrained pretrain_backbone(const corpus::Dataset& corpus, const PretrainConfig& config,
                             std::uint64_t seed, const std::vector<std::string>& extra_words = {});

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Vocab vocab;
  BackboneParams backbone;
  std::optional<AdapterParams> adapter;
  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedpit::lm
