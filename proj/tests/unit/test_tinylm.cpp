#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedpit/corpus.hpp"
#include "fedpit/metrics.hpp"
#include "fedpit/tinylm.hpp"
#include "helpers.hpp"

using namespace fedpit;
using namespace fedpit::lm;
using testutil::random_adapter;
using testutil::random_backbone;

namespace {

// V = 3, d = 2.
BackboneParams hand_backbone(std::vector<double> position) {
  BackboneParams bb;
  bb.embed = Matrix(3, 2);
  bb.embed.data = {1, 0, 0, 1, 1, 1};
  bb.out = Matrix(3, 2);
  bb.out.data = {1, 2, 0, -1, 3, 0};
  bb.position = std::move(position);
  return bb;
}

AdapterParams hand_adapter() {
  auto ad = AdapterParams::zeros(3, 2, 1);
  ad.a.data = {1, 0, 2};
  ad.b.data = {0.5, -1};
  return ad;
}

corpus::Dataset small_dataset(int n, std::uint64_t seed) {
  auto d = corpus::generate_toy_corpus(2, 10, seed);
  d.examples.resize(static_cast<std::size_t>(n));
  return d;
}

}  // namespace

TEST_CASE("vocab") {
  const auto v = Vocab::from_words({"b", "a", "b"});
  CHECK(v.size() == 7);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kSep) == "<sep>");
  CHECK(v.id("a") == 5);
  CHECK(v.id("b") == 6);
  CHECK(v.id("zzz") == Vocab::kPad);
  CHECK(v.encode("B a") == Tokens{6, 5});
  const Tokens ids{Vocab::kBos, 5, Vocab::kSep, 6};
  CHECK(v.decode(ids) == "a b");
}

TEST_CASE("position weights decay from the previous token") {
  const auto w = position_weights(3);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == doctest::Approx(0.85));
  CHECK(w[1] == doctest::Approx(0.85 * 0.85));
  CHECK(w[2] == doctest::Approx(0.85 * 0.85 * 0.85));
}

TEST_CASE("forward logits on a hand-built model") {
  const auto ad = hand_adapter();
  const Tokens hist{0, 2};
  // c = E[2] = (1, 1); W0 c = (3, -1, 3); B^T c = -0.5; A (-0.5) = (-0.5, 0, -1).
  auto z = forward_logits(hand_backbone({1.0}), ad, hist);
  CHECK(z[0] == doctest::Approx(2.5));
  CHECK(z[1] == doctest::Approx(-1.0));
  CHECK(z[2] == doctest::Approx(2.0));
  // Window 2 over history [2] pads with E[PAD] = E[0]: c = (1.85, 1).
  const Tokens short_hist{2};
  z = forward_logits(hand_backbone({1.0, 0.85}), ad, short_hist);
  CHECK(z[0] == doctest::Approx(3.775));
  CHECK(z[1] == doctest::Approx(-1.0));
  CHECK(z[2] == doctest::Approx(5.4));
}

TEST_CASE("zero adapter adds nothing and zero model is uniform") {
  Rng rng(3);
  const auto bb = random_backbone(9, 4, 3, rng);
  const Tokens hist{1, 5, 7};
  const auto zero = AdapterParams::zeros(9, 4, 2);
  auto with_b = zero;
  for (auto& x : with_b.b.data) x = rng.normal();
  CHECK(forward_logits(bb, zero, hist) == forward_logits(bb, AdapterParams::zeros(9, 4, 0), hist));
  CHECK(forward_logits(bb, with_b, hist) == forward_logits(bb, zero, hist));

  BackboneParams flat;
  flat.embed = Matrix(9, 4);
  flat.out = Matrix(9, 4);
  flat.position = position_weights(3);
  const Tokens seq{3, 4, 5, 6};
  const auto s = sequence_logprob(flat, zero, seq, hist);
  CHECK(s.total_logprob == doctest::Approx(-4 * std::log(9.0)));
  CHECK(s.mean_ce == doctest::Approx(std::log(9.0)));
}

TEST_CASE("sequence_logprob is the sum of per-step log-softmax values") {
  Rng rng(8);
  const auto bb = random_backbone(12, 4, 4, rng);
  const auto ad = random_adapter(12, 4, 2, rng);
  const Tokens prefix{1, 6, 9};
  const Tokens seq{5, 5, 11, 2};
  double total = 0;
  Tokens hist = prefix;
  for (auto t : seq) {
    auto z = forward_logits(bb, ad, hist);
    double mx = z[0];
    for (double x : z) mx = std::max(mx, x);
    double sum = 0;
    for (double x : z) sum += std::exp(x - mx);
    total += z[static_cast<std::size_t>(t)] - mx - std::log(sum);
    hist.push_back(t);
  }
  const auto s = sequence_logprob(bb, ad, seq, prefix);
  CHECK(s.total_logprob == doctest::Approx(total).epsilon(1e-12));
  CHECK(s.mean_ce == doctest::Approx(-total / 4).epsilon(1e-12));
}

TEST_CASE("adapter gradient matches central finite differences") {
  Rng rng(2024);
  for (int instance = 0; instance < 25; ++instance) {
    const std::size_t V = 6 + rng.below(11), d = 1 + rng.below(4), r = 1 + rng.below(2);
    const auto bb = random_backbone(V, d, 1 + rng.below(4), rng);
    const auto ad = random_adapter(V, d, r, rng);
    std::vector<TrainingSequence> seqs;
    for (int i = 0; i < 3; ++i) seqs.push_back(testutil::random_sequence(V, 3 + rng.below(6), rng));
    seqs[1].loss_from = 2;
    const double err = testutil::gradient_rel_error(bb, ad, seqs);
    CHECK_MESSAGE(err < 1e-4, "V=" << V << " d=" << d << " r=" << r);
  }
}

TEST_CASE("adapter gradient on the d=4, V=11, r=2 instance") {
  Rng rng(17);
  const auto bb = random_backbone(11, 4, 3, rng);
  const auto ad = random_adapter(11, 4, 2, rng);
  std::vector<TrainingSequence> seqs{testutil::random_sequence(11, 8, rng),
                                     testutil::random_sequence(11, 5, rng)};
  CHECK(testutil::gradient_rel_error(bb, ad, seqs) < 1e-4);
}

TEST_CASE("flatten and unflatten") {
  Rng rng(1);
  const auto ad = random_adapter(7, 3, 2, rng);
  const auto flat = flatten(ad);
  CHECK(flat.size() == 7 * 2 + 3 * 2);
  CHECK(unflatten(flat, {7, 3, 2}) == ad);
  const auto zeros = flatten(AdapterParams::zeros(7, 3, 2));
  CHECK(zeros == std::vector<double>(20, 0.0));
  CHECK_THROWS_AS(unflatten(std::vector<double>(19), {7, 3, 2}), std::invalid_argument);
}

TEST_CASE("train_adapter") {
  const auto data = small_dataset(5, 4);
  std::vector<std::string> words;
  for (const auto& e : data.examples)
    for (auto& w : metrics::tokenize(e.instruction + " " + e.response)) words.push_back(w);
  const auto vocab = Vocab::from_words(words);
  Rng init(5);
  const auto bb = random_backbone(vocab.size(), 8, 4, init, 0.3);
  const auto start = AdapterParams::init(vocab.size(), 8, 4, init);

  SUBCASE("lr zero leaves the adapter unchanged") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    for (auto opt : {Optimizer::kSgd, Optimizer::kAdam}) {
      cfg.optimizer = opt;
      Rng rng(1);
      CHECK(train_adapter(bb, start, vocab, data, cfg, rng) == start);
    }
  }
  SUBCASE("same stream gives bit-identical adapters") {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    Rng r1(9), r2(9);
    CHECK(train_adapter(bb, start, vocab, data, cfg, r1) == train_adapter(bb, start, vocab, data, cfg, r2));
  }
  SUBCASE("ten epochs on five examples lower the training loss") {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.lr = 1e-2;
    Rng rng(3);
    const double before = dataset_loss(bb, start, vocab, data);
    const auto trained = train_adapter(bb, start, vocab, data, cfg, rng);
    CHECK(dataset_loss(bb, trained, vocab, data) < before);
  }
  SUBCASE("invalid arguments") {
    TrainConfig cfg;
    Rng rng(1);
    CHECK_THROWS(train_adapter(bb, start, vocab, corpus::Dataset{}, cfg, rng));
    cfg.epochs = 0;
    CHECK_THROWS(train_adapter(bb, start, vocab, data, cfg, rng));
  }
}

TEST_CASE("greedy generation follows the argmax chain") {
  // Successor table traced by hand: 5 -> 7 -> 6 -> 8 -> 5 -> ...
  const std::vector<std::size_t> succ{5, 5, 5, 5, 5, 7, 8, 6, 5};
  const auto bb = testutil::chain_backbone(succ);
  const auto ad = AdapterParams::zeros(9, 9, 1);
  GenerationConfig cfg;
  cfg.temperature = 0.0;
  cfg.repetition_penalty = 1.0;
  cfg.max_tokens = 6;
  Rng rng(0);
  const Tokens prompt{Vocab::kBos};
  const auto g = generate(bb, ad, prompt, cfg, rng);
  CHECK(g.tokens == Tokens{5, 7, 6, 8, 5, 7});
  CHECK_FALSE(g.stopped);

  cfg.max_tokens = 1;
  CHECK(generate(bb, ad, prompt, cfg, rng).tokens.size() == 1);

  // A chain reaching EOS stops there and drops it.
  auto to_eos = succ;
  to_eos[6] = Vocab::kEos;
  cfg.max_tokens = 10;
  const auto s = generate(testutil::chain_backbone(to_eos), ad, prompt, cfg, rng);
  CHECK(s.tokens == Tokens{5, 7, 6});
  CHECK(s.stopped);
  CHECK(s.stop_token == Vocab::kEos);
}

TEST_CASE("a large repetition penalty prevents repeats") {
  // Every context prefers token 5, all other logits are positive and smaller.
  std::vector<std::vector<double>> logits(10, std::vector<double>(10, 0.0));
  for (auto& row : logits)
    for (std::size_t v = 0; v < 10; ++v) row[v] = v == 5 ? 10.0 : 1.0 + 0.1 * static_cast<double>(v);
  const auto bb = testutil::lookup_backbone(logits);
  const auto ad = AdapterParams::zeros(10, 10, 1);
  GenerationConfig cfg;
  cfg.temperature = 0.0;
  cfg.repetition_penalty = 1e6;
  cfg.stop_tokens.clear();
  cfg.max_tokens = 10;
  Rng rng(0);
  const Tokens prompt{Vocab::kBos};
  const auto g = generate(bb, ad, prompt, cfg, rng);
  CHECK(g.tokens.front() == 5);
  CHECK(std::set<TokenId>(g.tokens.begin(), g.tokens.end()).size() == 10);

  cfg.repetition_penalty = 1.0;
  const auto plain = generate(bb, ad, prompt, cfg, rng);
  CHECK(plain.tokens == Tokens(10, 5));
}

TEST_CASE("banned tokens are never emitted") {
  const std::vector<std::size_t> succ{5, 5, 5, 5, 5, 6, 5};
  const auto bb = testutil::chain_backbone(succ);
  const auto ad = AdapterParams::zeros(7, 7, 1);
  GenerationConfig cfg;
  cfg.temperature = 0.7;
  cfg.banned_tokens = {5};
  cfg.max_tokens = 20;
  Rng rng(4);
  const Tokens prompt{Vocab::kBos};
  for (auto t : generate(bb, ad, prompt, cfg, rng).tokens) CHECK(t != 5);
}

TEST_CASE("pretraining") {
  const auto corpus = corpus::generate_toy_corpus(2, 10, 1);
  PretrainConfig cfg;
  cfg.dim = 8;
  cfg.window = 4;
  cfg.steps = 0;
  const auto a = pretrain_backbone(corpus, cfg, 7);
  const auto b = pretrain_backbone(corpus, cfg, 7);
  CHECK(a.backbone == b.backbone);
  CHECK(a.vocab == b.vocab);
  CHECK(a.final_loss == a.initial_loss);
  cfg.steps = 20;
  const auto c = pretrain_backbone(corpus, cfg, 7);
  CHECK_FALSE(c.backbone == a.backbone);
  CHECK(c.backbone == pretrain_backbone(corpus, cfg, 7).backbone);
  CHECK(c.backbone.position == a.backbone.position);
}

TEST_CASE("pretraining on the toy corpus lowers cross-entropy by a fifth") {
  const auto corpus = corpus::generate_toy_corpus(8, 20, 1);
  PretrainConfig cfg;
  cfg.steps = 2000;
  const auto p = pretrain_backbone(corpus, cfg, 1);
  // Recorded: 5.3946 -> 1.1346.
  CHECK(p.final_loss <= 0.8 * p.initial_loss);
  CHECK(p.final_loss == doctest::Approx(1.1346).epsilon(1e-3));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "fedpit_test_tinylm";
  std::filesystem::create_directories(dir);
  Rng rng(6);
  Checkpoint ck;
  ck.vocab = testutil::vocab_of_size(9);
  ck.backbone = random_backbone(9, 4, 3, rng);
  ck.adapter = random_adapter(9, 4, 2, rng);
  save_checkpoint(ck, dir / "a.ckpt");
  CHECK(load_checkpoint(dir / "a.ckpt") == ck);

  ck.adapter.reset();
  save_checkpoint(ck, dir / "b.ckpt");
  CHECK(load_checkpoint(dir / "b.ckpt") == ck);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  std::filesystem::resize_file(dir / "a.ckpt", 40);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}
