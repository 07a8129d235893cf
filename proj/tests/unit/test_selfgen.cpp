#include <algorithm>
#include <set>

#include "doctest.h"
#include "fedpit/corpus.hpp"
#include "fedpit/metrics.hpp"
#include "fedpit/selfgen.hpp"
#include "helpers.hpp"

using namespace fedpit;
using namespace fedpit::selfgen;
using lm::AdapterParams;
using lm::Vocab;

namespace {

struct Small {
  lm::Pretrained model;
  corpus::Dataset data;
  AdapterParams zero;
};

const Small& small_model() {
  static const Small s = [] {
    Small out;
    out.data = corpus::generate_toy_corpus(3, 10, 21);
    lm::PretrainConfig cfg;
    cfg.dim = 16;
    cfg.window = 8;
    cfg.steps = 300;
    out.model = lm::pretrain_backbone(out.data, cfg, 5);
    out.zero = AdapterParams::zeros(out.model.vocab.size(), 16, 4);
    return out;
  }();
  return s;
}

corpus::Example demo(const std::string& inst, const std::string& resp, const std::string& cat = "c") {
  return corpus::Example{inst, "", resp, cat, std::nullopt};
}

}  // namespace

TEST_CASE("sample_demonstrations") {
  const auto data = corpus::generate_toy_corpus(5, 10, 2);
  Rng a(1), b(1);
  const auto s = sample_demonstrations(data, 8, a);
  CHECK(s.size() == 8);
  std::set<std::string> distinct;
  for (const auto& e : s) distinct.insert(e.instruction);
  CHECK(distinct.size() == 8);
  CHECK(s == sample_demonstrations(data, 8, b));

  corpus::Dataset five = data;
  five.examples.resize(5);
  const auto dup = sample_demonstrations(five, 8, a);
  CHECK(dup.size() == 8);
  for (const auto& e : dup)
    CHECK(std::find(five.examples.begin(), five.examples.end(), e) != five.examples.end());
}

TEST_CASE("filter_instructions") {
  const std::vector<std::string> pool{"a c b d"};
  CHECK(filter_instructions({"a c b d"}, pool).empty());
  CHECK(filter_instructions({"x y z"}, pool) == std::vector<std::string>{"x y z"});
  // LCS 3 of 4 against the pool: F1 = 0.75.
  REQUIRE(metrics::rouge_l(metrics::tokenize("a b c d"), metrics::tokenize("a c b d")) == 0.75);
  CHECK(filter_instructions({"a b c d"}, pool).empty());
  // LCS 3 of 5 against 5: F1 = 0.6.
  CHECK(filter_instructions({"a c b x y"}, {"a c b d e"}).size() == 1);
  // Accepted candidates join the pool for later ones.
  CHECK(filter_instructions({"p q r", "p q r", "s t"}, {}) == std::vector<std::string>{"p q r", "s t"});
}

TEST_CASE("chain model yields traceable candidates and responses") {
  const auto vocab = testutil::vocab_of_size(10);
  // BOS -> 5 -> 6 -> SEP for instructions; SEP -> 7 -> 8 -> EOS for responses.
  std::vector<std::size_t> succ(10, 9);
  succ[Vocab::kBos] = 5;
  succ[5] = 6;
  succ[6] = Vocab::kSep;
  succ[Vocab::kSep] = 7;
  succ[7] = 8;
  succ[8] = Vocab::kEos;
  const auto bb = testutil::chain_backbone(succ);
  const auto ad = AdapterParams::zeros(10, 10, 1);
  const ModelView m{bb, ad, vocab};
  SelfGenConfig cfg;
  cfg.generation.temperature = 0.0;
  const std::vector<corpus::Example> demos{demo("w109", "w109")};
  Rng rng(3);
  const auto cands = generate_instruction_candidates(m, demos, 32, cfg, rng);
  CHECK(cands.size() == 32);
  for (const auto& c : cands) CHECK(c == "w105 w106");

  const auto r = generate_response(m, "w105 w106", demos, cfg, rng);
  CHECK(r.ok);
  CHECK_FALSE(r.truncated);
  CHECK(r.text == "w107 w108");

  // SEP -> EOS at once: nothing to keep.
  auto empty_succ = succ;
  empty_succ[Vocab::kSep] = Vocab::kEos;
  const auto bb_empty = testutil::chain_backbone(empty_succ);
  const auto none = generate_response({bb_empty, ad, vocab}, "w105", demos, cfg, rng);
  CHECK_FALSE(none.ok);

  // A response loop that never emits EOS is kept but flagged.
  auto loop = succ;
  loop[8] = 7;
  cfg.generation.max_tokens = 6;
  const auto bb_loop = testutil::chain_backbone(loop);
  const auto trunc = generate_response({bb_loop, ad, vocab}, "w105", demos, cfg, rng);
  CHECK(trunc.ok);
  CHECK(trunc.truncated);
  CHECK(trunc.text == "w107 w108 w107 w108 w107 w108");

  // BOS -> SEP at once: every candidate is empty.
  auto silent = succ;
  silent[Vocab::kBos] = Vocab::kSep;
  const auto bb_silent = testutil::chain_backbone(silent);
  CHECK_THROWS_AS(generate_instruction_candidates({bb_silent, ad, vocab}, demos, 4, cfg, rng), SelfGenError);
}

TEST_CASE("ifd score") {
  const auto& s = small_model();
  const ModelView m{s.model.backbone, s.zero, s.model.vocab};
  const auto& ex = s.data.examples[0];
  CHECK(ifd_score(m, "", ex.response) == 1.0);

  lm::BackboneParams flat;
  flat.embed = lm::Matrix(s.model.vocab.size(), 16);
  flat.out = lm::Matrix(s.model.vocab.size(), 16);
  flat.position = lm::position_weights(8);
  CHECK(ifd_score({flat, s.zero, s.model.vocab}, ex.instruction, ex.response) == doctest::Approx(1.0));

  corpus::Dataset one;
  one.examples = {ex};
  lm::TrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.05;
  Rng rng(2);
  Rng init(4);
  const auto start = AdapterParams::init(s.model.vocab.size(), 16, 4, init);
  const auto fit = lm::train_adapter(s.model.backbone, start, s.model.vocab, one, cfg, rng);
  const double ifd = ifd_score({s.model.backbone, fit, s.model.vocab}, ex.instruction, ex.response);
  // Recorded 0.00136521.
  CHECK(ifd < 1.0);
  CHECK(ifd == doctest::Approx(0.00136521).epsilon(1e-3));
}

TEST_CASE("select_top ranks by ifd then generation order") {
  std::vector<Candidate> c(5);
  const double ifd[] = {0.9, 1.2, 0.9, 1.5, 0.3};
  for (std::size_t i = 0; i < 5; ++i) {
    c[i].ifd = ifd[i];
    c[i].order = i;
  }
  auto top = select_top(c, 3, IfdOrder::kDescending);
  REQUIRE(top.size() == 3);
  CHECK(top[0].order == 3);
  CHECK(top[1].order == 1);
  CHECK(top[2].order == 0);
  top = select_top(c, 2, IfdOrder::kAscending);
  CHECK(top[0].order == 4);
  CHECK(top[1].order == 0);
  CHECK(select_top(c, 9, IfdOrder::kAscending).size() == 5);
}

TEST_CASE("nearest_category") {
  const std::vector<corpus::Example> demos{demo("a b c", "x", "one"), demo("d e f", "x", "two"),
                                           demo("d e g", "x", "three")};
  CHECK(nearest_category("d e", demos) == "two");
  CHECK(nearest_category("a b", demos) == "one");
  CHECK(nearest_category("zzz", demos) == "one");
}

TEST_CASE("self_generate on a pretrained model") {
  const auto& s = small_model();
  Rng ad_rng(6);
  const auto w_l = AdapterParams::init(s.model.vocab.size(), 16, 4, ad_rng);
  const ModelView g{s.model.backbone, s.zero, s.model.vocab};
  const ModelView l{s.model.backbone, w_l, s.model.vocab};
  SelfGenConfig cfg;
  Rng r1(10), r2(10);
  const auto res = self_generate(g, l, s.data, cfg, r1, 3, 1);
  CHECK(res.generated <= 32);
  CHECK(res.synthetic.size() <= 16);
  CHECK(res.synthetic.size() == std::min<std::size_t>(16, res.survivors.size()));
  CHECK(res.generated == res.filtered_out + res.failed_responses + static_cast<int>(res.survivors.size()));

  // Re-sort every survivor by IFD and take the first M.
  auto sorted = res.survivors;
  std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    return a.ifd != b.ifd ? a.ifd > b.ifd : a.order < b.order;
  });
  for (std::size_t i = 0; i < res.synthetic.size(); ++i) {
    const auto& ex = res.synthetic.examples[i];
    CHECK(ex.instruction == sorted[i].instruction);
    CHECK(ex.response == sorted[i].response);
    REQUIRE(ex.provenance.has_value());
    CHECK(ex.provenance->round == 3);
    CHECK(ex.provenance->client == 1);
    CHECK(ex.provenance->ifd == sorted[i].ifd);
  }

  std::vector<metrics::TokenSeq> pool;
  for (const auto& p : res.pool) pool.push_back(metrics::tokenize(p));
  for (const auto& c : res.survivors) {
    const auto t = metrics::tokenize(c.instruction);
    for (const auto& p : pool) CHECK(metrics::rouge_l(t, p) <= 0.7);
    pool.push_back(t);
  }

  const auto again = self_generate(g, l, s.data, cfg, r2, 3, 1);
  CHECK(again.synthetic == res.synthetic);
}

TEST_CASE("validate") {
  SelfGenConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.keep = 40;
  CHECK_THROWS(validate(cfg));
  cfg = {};
  cfg.rouge_threshold = 0.0;
  CHECK_THROWS(validate(cfg));
}
