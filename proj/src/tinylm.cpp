#include "fedpit/tinylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "fedpit/kernels.hpp"
#include "fedpit/metrics.hpp"

namespace fedpit::lm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host-order doubles and expects a little-endian host");

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() : tokens_{"<pad>", "<bos>", "<eos>", "<sep>", "<sys>"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<TokenId>(i);
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  Vocab v;
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  for (auto& w : words) {
    if (w.empty() || v.index_.count(w)) continue;
    v.index_[w] = static_cast<TokenId>(v.tokens_.size());
    v.tokens_.push_back(std::move(w));
  }
  return v;
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kPad : it->second;
}

Tokens Vocab::encode(const std::string& text) const {
  Tokens out;
  for (const auto& t : metrics::tokenize(text)) out.push_back(id(t));
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id < kNumReserved || static_cast<std::size_t>(id) >= tokens_.size()) continue;
    if (!out.empty()) out.push_back(' ');
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

// ---------------------------------------------------------------- Adapter

AdapterParams AdapterParams::zeros(std::size_t vocab, std::size_t dim, std::size_t rank) {
  return AdapterParams{Matrix(vocab, rank), Matrix(dim, rank)};
}

AdapterParams AdapterParams::init(std::size_t vocab, std::size_t dim, std::size_t rank, Rng& rng) {
  AdapterParams p = zeros(vocab, dim, rank);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : p.b.data) x = rng.normal(0.0, scale);
  return p;
}

std::vector<double> flatten(const AdapterParams& adapter) {
  std::vector<double> out;
  out.reserve(adapter.param_count());
  out.insert(out.end(), adapter.a.data.begin(), adapter.a.data.end());
  out.insert(out.end(), adapter.b.data.begin(), adapter.b.data.end());
  return out;
}

AdapterParams unflatten(std::span<const double> values, AdapterShape shape) {
  const std::size_t na = shape.vocab * shape.rank;
  const std::size_t nb = shape.dim * shape.rank;
  if (values.size() != na + nb) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(na + nb) +
                                " values, got " + std::to_string(values.size()));
  }
  AdapterParams p = AdapterParams::zeros(shape.vocab, shape.dim, shape.rank);
  std::copy(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(na), p.a.data.begin());
  std::copy(values.begin() + static_cast<std::ptrdiff_t>(na), values.end(), p.b.data.begin());
  return p;
}

// ---------------------------------------------------------------- Forward

std::vector<double> position_weights(std::size_t window, double decay) {
  std::vector<double> w(window);
  double x = 1.0;
  for (auto& v : w) v = (x *= decay);
  return w;
}

void context_vector(const BackboneParams& backbone, std::span<const TokenId> history,
                    std::span<double> out) {
  const std::size_t d = backbone.dim(), V = backbone.vocab_size();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < backbone.window(); ++i) {
    TokenId tok = Vocab::kPad;
    if (i < history.size()) tok = history[history.size() - 1 - i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= V) tok = Vocab::kPad;
    const auto e = backbone.embed.row(static_cast<std::size_t>(tok));
    const double w = backbone.position[i];
    for (std::size_t m = 0; m < d; ++m) out[m] += w * e[m];
  }
}

std::vector<double> forward_logits(const BackboneParams& backbone, const AdapterParams& adapter,
                                   std::span<const TokenId> history) {
  const std::size_t V = backbone.vocab_size(), d = backbone.dim(), r = adapter.rank();
  std::vector<double> c(d), h(r), z(V);
  context_vector(backbone, history, c);
  for (std::size_t j = 0; j < r; ++j) {
    double s = 0.0;
    for (std::size_t m = 0; m < d; ++m) s += adapter.b(m, j) * c[m];
    h[j] = s;
  }
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0.0;
    const auto w = backbone.out.row(v);
    for (std::size_t m = 0; m < d; ++m) s += w[m] * c[m];
    if (r) {
      const auto arow = adapter.a.row(v);
      for (std::size_t j = 0; j < r; ++j) s += arow[j] * h[j];
    }
    z[v] = s;
  }
  return z;
}

double softmax_inplace(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& x : logits) sum += (x = std::exp(x - mx));
  for (auto& x : logits) x /= sum;
  return mx + std::log(sum);
}

SequenceScore sequence_logprob(const BackboneParams& backbone, const AdapterParams& adapter,
                               std::span<const TokenId> seq, std::span<const TokenId> prefix) {
  if (seq.empty()) throw std::invalid_argument("sequence_logprob: empty sequence");
  Tokens history(prefix.begin(), prefix.end());
  history.reserve(prefix.size() + seq.size());
  SequenceScore s;
  for (auto tok : seq) {
    auto z = forward_logits(backbone, adapter, history);
    const double zy = z[static_cast<std::size_t>(tok)];
    s.total_logprob += zy - softmax_inplace(z);
    history.push_back(tok);
  }
  s.mean_ce = -s.total_logprob / static_cast<double>(seq.size());
  return s;
}

// ---------------------------------------------------------------- Serialization

Tokens serialize_prompt(const Vocab& vocab, const std::string& instruction,
                        const std::string& input) {
  Tokens out{Vocab::kBos};
  for (auto t : vocab.encode(instruction)) out.push_back(t);
  for (auto t : vocab.encode(input)) out.push_back(t);
  out.push_back(Vocab::kSep);
  return out;
}

Tokens serialize(const Vocab& vocab, const corpus::Example& ex) {
  Tokens out = serialize_prompt(vocab, ex.instruction, ex.input);
  for (auto t : vocab.encode(ex.response)) out.push_back(t);
  out.push_back(Vocab::kEos);
  return out;
}

std::vector<TrainingSequence> training_sequences(const Vocab& vocab, const corpus::Dataset& data,
                                                 LossMask mask) {
  std::vector<TrainingSequence> out;
  out.reserve(data.size());
  for (const auto& ex : data.examples) {
    TrainingSequence s;
    s.tokens = serialize(vocab, ex);
    if (mask == LossMask::kResponse) {
      s.loss_from = serialize_prompt(vocab, ex.instruction, ex.input).size();
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- Training

AdapterParams train_adapter(const BackboneParams& backbone, const AdapterParams& start,
                            const Vocab& vocab, const corpus::Dataset& data,
                            const TrainConfig& config, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_adapter: empty dataset");
  if (config.epochs < 1) throw std::invalid_argument("train_adapter: epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train_adapter: batch_size must be >= 1");

  AdapterParams params = start;
  const auto seqs = training_sequences(vocab, data, config.mask);
  std::vector<std::size_t> order(seqs.size());
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::vector<const TrainingSequence*> batch;

  const std::size_t na = params.a.data.size(), nb = params.b.data.size();
  std::vector<double> m1, m2;
  if (config.optimizer == Optimizer::kAdam) {
    m1.assign(na + nb, 0.0);
    m2.assign(na + nb, 0.0);
  }
  long step_count = 0;
  auto param_at = [&](std::size_t i) -> double& { return i < na ? params.a.data[i] : params.b.data[i - na]; };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      batch.clear();
      for (std::size_t i = lo; i < std::min(order.size(), lo + bs); ++i) batch.push_back(&seqs[order[i]]);
      const auto g = config.parallel ? kernels::adapter_gradient_omp(backbone, params, batch)
                                     : kernels::adapter_gradient_serial(backbone, params, batch);
      if (g.positions == 0) continue;
      double scale = 1.0 / static_cast<double>(g.positions);
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (double x : g.grad_a.data) sq += x * x;
        for (double x : g.grad_b.data) sq += x * x;
        const double norm = std::sqrt(sq) * scale;
        if (norm > config.clip_norm) scale *= config.clip_norm / norm;
      }
      auto grad_at = [&](std::size_t i) { return (i < na ? g.grad_a.data[i] : g.grad_b.data[i - na]) * scale; };

      if (config.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < na + nb; ++i) param_at(i) -= config.lr * grad_at(i);
      } else {
        ++step_count;
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_count));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < na + nb; ++i) {
          const double gi = grad_at(i);
          m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * gi;
          m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * gi * gi;
          double& p = param_at(i);
          p -= config.lr * config.weight_decay * p;
          p -= config.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + config.eps);
        }
      }
    }
  }
  return params;
}

double dataset_loss(const BackboneParams& backbone, const AdapterParams& adapter,
                    const Vocab& vocab, const corpus::Dataset& data, LossMask mask) {
  const auto seqs = training_sequences(vocab, data, mask);
  std::vector<const TrainingSequence*> all;
  for (const auto& s : seqs) all.push_back(&s);
  double loss = 0.0;
  std::size_t n = 0;
  for (const auto* s : all) {
    std::size_t count = 0;
    loss += kernels::adapter_loss_sum(backbone, adapter, *s, &count);
    n += count;
  }
  return n ? loss / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------- Generation

Generation generate(const BackboneParams& backbone, const AdapterParams& adapter,
                    std::span<const TokenId> prompt, const GenerationConfig& config, Rng& rng) {
  if (config.max_tokens < 1) throw std::invalid_argument("generate: max_tokens must be >= 1");
  if (config.temperature < 0.0) throw std::invalid_argument("generate: temperature must be >= 0");
  if (config.repetition_penalty < 1.0)
    throw std::invalid_argument("generate: repetition_penalty must be >= 1");

  const std::size_t V = backbone.vocab_size();
  Tokens history(prompt.begin(), prompt.end());
  std::vector<bool> seen(V, false), banned(V, false);
  for (auto t : config.banned_tokens)
    if (t >= 0 && static_cast<std::size_t>(t) < V) banned[static_cast<std::size_t>(t)] = true;
  auto is_stop = [&](TokenId t) {
    return std::find(config.stop_tokens.begin(), config.stop_tokens.end(), t) !=
           config.stop_tokens.end();
  };

  Generation out;
  for (int step = 0; step < config.max_tokens; ++step) {
    auto z = forward_logits(backbone, adapter, history);
    for (std::size_t v = 0; v < V; ++v) {
      if (banned[v]) {
        z[v] = -std::numeric_limits<double>::infinity();
      } else if (seen[v] && config.repetition_penalty != 1.0) {
        z[v] = z[v] > 0 ? z[v] / config.repetition_penalty : z[v] * config.repetition_penalty;
      }
    }
    std::size_t pick = 0;
    if (config.temperature == 0.0) {
      for (std::size_t v = 1; v < V; ++v)
        if (z[v] > z[pick]) pick = v;  // strict: lowest id wins ties
    } else {
      for (auto& x : z) x /= config.temperature;
      softmax_inplace(z);
      const double u = rng.uniform();
      double acc = 0.0;
      pick = V;
      for (std::size_t v = 0; v < V; ++v) {
        if (z[v] <= 0.0) continue;
        acc += z[v];
        if (u < acc) {
          pick = v;
          break;
        }
      }
      if (pick == V) {  // rounding left u above the cumulative sum
        for (std::size_t v = V; v-- > 0;)
          if (z[v] > 0.0) {
            pick = v;
            break;
          }
      }
    }
    const auto tok = static_cast<TokenId>(pick);
    if (is_stop(tok)) {
      out.stopped = true;
      out.stop_token = tok;
      break;
    }
    out.tokens.push_back(tok);
    history.push_back(tok);
    seen[pick] = true;
  }
  return out;
}

GenerationConfig text_generation(const GenerationConfig& base) {
  GenerationConfig g = base;
  for (TokenId t : {Vocab::kPad, Vocab::kBos, Vocab::kSys}) {
    if (std::find(g.banned_tokens.begin(), g.banned_tokens.end(), t) == g.banned_tokens.end())
      g.banned_tokens.push_back(t);
  }
  return g;
}

// ---------------------------------------------------------------- Pretraining

Pretrained pretrain_backbone(const corpus::Dataset& corpus, const PretrainConfig& config,
                             std::uint64_t seed, const std::vector<std::string>& extra_words) {
  if (corpus.empty()) throw std::invalid_argument("pretrain_backbone: empty corpus");
  if (config.dim < 8) throw std::invalid_argument("pretrain_backbone: dim must be >= 8");
  if (config.window < 1) throw std::invalid_argument("pretrain_backbone: window must be >= 1");

  std::vector<std::string> words = extra_words;
  for (const auto& ex : corpus.examples) {
    for (const auto* text : {&ex.instruction, &ex.input, &ex.response}) {
      for (auto& t : metrics::tokenize(*text)) words.push_back(std::move(t));
    }
  }
  Pretrained out;
  out.vocab = Vocab::from_words(std::move(words));
  const std::size_t V = out.vocab.size(), d = config.dim;

  Rng rng = Rng::stream(seed, "pretrain/init");
  auto& bb = out.backbone;
  bb.embed = Matrix(V, d);
  bb.out = Matrix(V, d);
  bb.position = position_weights(config.window, config.decay);
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t m = 0; m < d; ++m) {
      bb.embed(v, m) = v == static_cast<std::size_t>(Vocab::kPad) ? 0.0 : rng.normal(0.0, config.init_scale);
    }
  }
  for (auto& x : bb.out.data) x = rng.normal(0.0, config.init_scale);

  const auto seqs = training_sequences(out.vocab, corpus, LossMask::kAll);
  std::vector<const TrainingSequence*> all;
  for (const auto& s : seqs) all.push_back(&s);
  auto mean_loss = [&] {
    const auto g = config.parallel ? kernels::backbone_gradient_omp(bb, all)
                                   : kernels::backbone_gradient_serial(bb, all);
    return g.loss_sum / static_cast<double>(g.positions);
  };
  out.initial_loss = mean_loss();

  Rng batch_rng = Rng::stream(seed, "pretrain/batches");
  std::vector<const TrainingSequence*> batch;
  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    for (int i = 0; i < config.batch_size; ++i) batch.push_back(all[batch_rng.below(all.size())]);
    const auto g = config.parallel ? kernels::backbone_gradient_omp(bb, batch)
                                   : kernels::backbone_gradient_serial(bb, batch);
    if (g.positions == 0) continue;
    const double lr = config.lr / static_cast<double>(g.positions);
    for (std::size_t i = 0; i < bb.out.data.size(); ++i) bb.out.data[i] -= lr * g.grad_out.data[i];
    for (std::size_t i = 0; i < bb.embed.data.size(); ++i) bb.embed.data[i] -= lr * g.grad_embed.data[i];
  }
  out.final_loss = config.steps > 0 ? mean_loss() : out.initial_loss;
  return out;
}

// ---------------------------------------------------------------- Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'P', 'I', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u8(std::uint8_t v) { raw(&v, sizeof v); }
  void doubles(const std::vector<double>& v) { raw(v.data(), v.size() * sizeof(double)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::uint8_t u8() {
    std::uint8_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::vector<double> doubles(std::size_t n) {
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 20)) throw CheckpointError(path_ + ": corrupt token length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError(path_ + ": truncated checkpoint");
  }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& bb = ckpt.backbone;
  if (bb.embed.rows != ckpt.vocab.size() || bb.out.rows != bb.embed.rows || bb.out.cols != bb.embed.cols)
    throw CheckpointError("save_checkpoint: backbone shape does not match vocabulary");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  Writer w(out);
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(bb.vocab_size()));
  w.u32(static_cast<std::uint32_t>(bb.dim()));
  w.u32(static_cast<std::uint32_t>(bb.window()));
  w.u32(static_cast<std::uint32_t>(ckpt.adapter ? ckpt.adapter->rank() : 0));
  w.u8(ckpt.adapter ? 1 : 0);
  for (const auto& t : ckpt.vocab.tokens()) w.str(t);
  w.doubles(bb.position);
  w.doubles(bb.embed.data);
  w.doubles(bb.out.data);
  if (ckpt.adapter) {
    w.doubles(ckpt.adapter->a.data);
    w.doubles(ckpt.adapter->b.data);
  }
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path.string() + ": not a checkpoint file");
  if (const auto v = r.u32(); v != kVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  const std::size_t V = r.u32(), d = r.u32(), k = r.u32(), rank = r.u32();
  const bool has_adapter = r.u8() != 0;

  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < V; ++i) tokens.push_back(r.str());
  Checkpoint ck;
  const std::vector<std::string> reserved(tokens.begin(), tokens.begin() + std::min<std::size_t>(V, Vocab::kNumReserved));
  if (reserved != Vocab().tokens())
    throw CheckpointError(path.string() + ": reserved tokens do not match");
  ck.vocab = Vocab::from_words({tokens.begin() + Vocab::kNumReserved, tokens.end()});
  if (ck.vocab.tokens() != tokens) throw CheckpointError(path.string() + ": vocabulary is not canonical");

  ck.backbone.position = r.doubles(k);
  ck.backbone.embed = Matrix(V, d);
  ck.backbone.embed.data = r.doubles(V * d);
  ck.backbone.out = Matrix(V, d);
  ck.backbone.out.data = r.doubles(V * d);
  if (has_adapter) {
    AdapterParams a = AdapterParams::zeros(V, d, rank);
    a.a.data = r.doubles(V * rank);
    a.b.data = r.doubles(d * rank);
    ck.adapter = std::move(a);
  }
  return ck;
}

}  // namespace fedpit::lm
