#include "fedpit/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "fedpit/metrics.hpp"

namespace fedpit::corpus {

using nlohmann::json;

std::vector<std::string> Dataset::categories() const {
  std::set<std::string> s;
  for (const auto& e : examples) s.insert(e.category);
  return {s.begin(), s.end()};
}

namespace {

constexpr std::array<const char*, 20> kNames = {
    "anna", "ben",  "carl", "dana", "eli", "fay",  "gus", "hana", "ivan", "jo",
    "kai",  "lea",  "max",  "nia",  "omar", "pia", "quin", "rosa", "sam", "tara"};

struct Ailment {
  const char* symptom;
  const char* remedy;
};
constexpr std::array<Ailment, 8> kAilments = {{{"fever", "rest"},
                                               {"cough", "syrup"},
                                               {"rash", "cream"},
                                               {"headache", "water"},
                                               {"nausea", "ginger"},
                                               {"insomnia", "tea"},
                                               {"backache", "stretching"},
                                               {"sneezing", "antihistamine"}}};

constexpr std::array<const char*, 6> kDrugs = {"aspirin", "ibuprofen", "insulin",
                                               "penicillin", "zinc", "iron"};

constexpr std::array<const char*, 24> kWords = {
    "apple",  "river",  "stone",  "cloud",  "tiger", "lamp",   "bread",  "glass",
    "horse",  "candle", "mirror", "garden", "pencil", "window", "basket", "rocket",
    "violin", "forest", "button", "ladder", "orange", "island", "camera", "bottle"};

struct Opposite {
  const char* word;
  const char* opposite;
};
constexpr std::array<Opposite, 12> kOpposites = {{{"hot", "cold"},
                                                  {"big", "small"},
                                                  {"fast", "slow"},
                                                  {"light", "dark"},
                                                  {"happy", "sad"},
                                                  {"early", "late"},
                                                  {"open", "closed"},
                                                  {"full", "empty"},
                                                  {"hard", "soft"},
                                                  {"high", "low"},
                                                  {"new", "old"},
                                                  {"rich", "poor"}}};

template <typename Arr>
const auto& pick(Rng& rng, const Arr& arr) {
  return arr[static_cast<std::size_t>(rng.below(arr.size()))];
}

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::string spell(const std::string& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out.push_back(' ');
    out.push_back(w[i]);
  }
  return out;
}

using Pair = std::pair<std::string, std::string>;
using TemplateFn = std::function<Pair(Rng&)>;

const std::vector<std::pair<std::string, TemplateFn>>& templates() {
  static const std::vector<std::pair<std::string, TemplateFn>> table = {
      {"advice",
       [](Rng& rng) {
         const std::string name = pick(rng, kNames);
         const auto& a = pick(rng, kAilments);
         const int age = uniform_int(rng, 18, 90);
         const int days = age % 7 + 1;
         return Pair{"patient " + name + " , age " + std::to_string(age) + " , has " + a.symptom +
                         " . what should " + name + " do ?",
                     name + " should take " + a.remedy + " for " + std::to_string(days) + " days ."};
       }},
      {"dosage",
       [](Rng& rng) {
         const std::string name = pick(rng, kNames);
         const std::string drug = pick(rng, kDrugs);
         const int kg = uniform_int(rng, 20, 119);
         return Pair{name + " weighs " + std::to_string(kg) + " kg . how many doses of " + drug +
                         " ?",
                     name + " needs " + std::to_string(kg / 10) + " doses of " + drug + " ."};
       }},
      {"reverse",
       [](Rng& rng) {
         std::array<std::string, 4> w;
         for (auto& x : w) x = pick(rng, kWords);
         return Pair{"reverse the words : " + w[0] + " " + w[1] + " " + w[2] + " " + w[3],
                     w[3] + " " + w[2] + " " + w[1] + " " + w[0]};
       }},
      {"count",
       [](Rng& rng) {
         const std::string a = pick(rng, kWords);
         const std::string b = pick(rng, kWords);
         return Pair{"how many letters are in " + a + " and " + b + " ?",
                     a + " and " + b + " have " + std::to_string(a.size() + b.size()) +
                         " letters ."};
       }},
      {"sequence",
       [](Rng& rng) {
         const int start = uniform_int(rng, 0, 40);
         const int step = uniform_int(rng, 1, 10);
         auto at = [&](int i) { return std::to_string(start + i * step); };
         return Pair{"continue the sequence : " + at(0) + " " + at(1) + " " + at(2),
                     at(3) + " " + at(4) + " " + at(5)};
       }},
      {"repeat",
       [](Rng& rng) {
         std::array<std::string, 3> w;
         for (auto& x : w) x = pick(rng, kWords);
         const std::string body = w[0] + " " + w[1] + " " + w[2];
         return Pair{"repeat after me : " + body, body};
       }},
      {"opposite",
       [](Rng& rng) {
         const auto& a = pick(rng, kOpposites);
         const auto& b = pick(rng, kOpposites);
         return Pair{std::string("give the opposite of ") + a.word + " and " + b.word,
                     std::string(a.opposite) + " and " + b.opposite};
       }},
      {"spell",
       [](Rng& rng) {
         const std::string a = pick(rng, kWords);
         const std::string b = pick(rng, kWords);
         return Pair{"spell " + a + " then " + b, spell(a) + " , " + spell(b)};
       }},
  };
  return table;
}

const TemplateFn& template_for(const std::string& category) {
  for (const auto& [name, fn] : templates()) {
    if (name == category) return fn;
  }
  throw DatasetError("unknown template category: " + category);
}

Example draw_unique(const std::string& category, Rng& rng, std::set<std::string>& seen) {
  const auto& fn = template_for(category);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    auto [inst, resp] = fn(rng);
    if (seen.insert(inst).second) {
      return Example{std::move(inst), "", std::move(resp), category, std::nullopt};
    }
  }
  throw DatasetError("template '" + category + "' cannot produce enough unique examples");
}

}  // namespace

const std::vector<std::string>& template_categories() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& t : templates()) out.push_back(t.first);
    return out;
  }();
  return names;
}

Dataset generate_toy_corpus(int num_categories, int examples_per_category, std::uint64_t seed,
                            int first_category) {
  const auto& cats = template_categories();
  if (num_categories < 2) throw std::invalid_argument("generate_toy_corpus: need >= 2 categories");
  if (examples_per_category < 10)
    throw std::invalid_argument("generate_toy_corpus: need >= 10 examples per category");
  if (first_category < 0 || first_category + num_categories > static_cast<int>(cats.size()))
    throw std::invalid_argument("generate_toy_corpus: at most " + std::to_string(cats.size()) +
                                " template categories are available");

  Dataset out;
  out.name = "toy-" + std::to_string(seed);
  out.examples.reserve(static_cast<std::size_t>(num_categories * examples_per_category));
  std::set<std::string> seen;
  for (int c = 0; c < num_categories; ++c) {
    const auto& cat = cats[static_cast<std::size_t>(first_category + c)];
    Rng rng = Rng::stream(seed, "corpus/" + cat);
    for (int i = 0; i < examples_per_category; ++i) out.examples.push_back(draw_unique(cat, rng, seen));
  }
  return out;
}

Dataset generate_for_categories(const std::vector<std::string>& categories, std::uint64_t seed,
                                const std::string& name) {
  Dataset out;
  out.name = name;
  std::set<std::string> seen;
  Rng rng = Rng::stream(seed, "corpus/mixed");
  for (const auto& cat : categories) out.examples.push_back(draw_unique(cat, rng, seen));
  return out;
}

std::vector<std::string> toy_lexicon() {
  std::set<std::string> words;
  auto add = [&](const std::string& text) {
    for (auto& t : metrics::tokenize(text)) words.insert(std::move(t));
  };
  for (const auto* n : kNames) add(n);
  for (const auto& a : kAilments) {
    add(a.symptom);
    add(a.remedy);
  }
  for (const auto* d : kDrugs) add(d);
  for (const auto* w : kWords) add(w);
  for (const auto& o : kOpposites) {
    add(o.word);
    add(o.opposite);
  }
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (int i = 0; i <= 120; ++i) add(std::to_string(i));
  // Fixed template wording: one draw per template exposes every literal token.
  Rng rng(0);
  for (const auto& [name, fn] : templates()) {
    auto [i, r] = fn(rng);
    add(i);
    add(r);
  }
  return {words.begin(), words.end()};
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DatasetError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_array()) throw DatasetError(path.string() + ": expected a JSON array of records");

  Dataset out;
  out.name = path.stem().string();
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    auto fail = [&](const std::string& why) {
      throw DatasetError(path.string() + ": record " + std::to_string(i) + ": " + why);
    };
    if (!rec.is_object()) fail("not an object");
    auto text_field = [&](const char* key, bool required) -> std::string {
      auto it = rec.find(key);
      if (it == rec.end() || it->is_null()) {
        if (required) fail(std::string("missing \"") + key + "\"");
        return {};
      }
      if (!it->is_string()) fail(std::string("\"") + key + "\" is not a string");
      return it->get<std::string>();
    };
    Example ex;
    ex.instruction = text_field("instruction", true);
    ex.input = text_field("input", false);
    ex.response = text_field("output", true);
    ex.category = text_field("category", false);
    if (ex.category.empty()) ex.category = "default";
    if (metrics::tokenize(ex.instruction).empty()) fail("empty instruction");
    if (metrics::tokenize(ex.response).empty()) fail("empty output");
    if (auto it = rec.find("provenance"); it != rec.end() && it->is_object()) {
      Provenance p;
      p.round = it->value("round", 0);
      p.client = it->value("client", 0);
      p.ifd = it->value("ifd", 0.0);
      p.truncated = it->value("truncated", false);
      ex.provenance = p;
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& ex : data.examples) {
    json rec = {{"instruction", ex.instruction}, {"input", ex.input}, {"output", ex.response},
                {"category", ex.category}};
    if (ex.provenance) {
      rec["provenance"] = {{"round", ex.provenance->round},
                           {"client", ex.provenance->client},
                           {"ifd", ex.provenance->ifd},
                           {"truncated", ex.provenance->truncated}};
    }
    doc.push_back(std::move(rec));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write dataset file: " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw DatasetError("write failed: " + path.string());
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> counts(weights.size(), 0);
  if (weights.empty()) return counts;
  double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> share(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j)
    share[j] = sum > 0 ? weights[j] / sum * static_cast<double>(total)
                       : static_cast<double>(total) / static_cast<double>(weights.size());
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> rem;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    counts[j] = static_cast<std::size_t>(std::floor(share[j]));
    assigned += counts[j];
    rem.emplace_back(share[j] - std::floor(share[j]), j);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[rem[i % rem.size()].second];
  return counts;
}

std::vector<Dataset> dirichlet_partition(const Dataset& data, const PartitionSpec& spec) {
  if (data.empty()) throw std::invalid_argument("dirichlet_partition: empty dataset");
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
  if (spec.num_clients < 1) throw std::invalid_argument("dirichlet_partition: need >= 1 client");
  const auto n_clients = static_cast<std::size_t>(spec.num_clients);

  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < data.size(); ++i) by_cat[data.examples[i].category].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(n_clients);
  for (auto& [cat, idx] : by_cat) {
    Rng rng = Rng::stream(spec.seed, "partition/" + cat);
    std::vector<double> props(n_clients);
    double sum = 0.0;
    for (auto& p : props) sum += (p = rng.gamma(spec.alpha));
    if (!(sum > 0.0)) {
      // Every gamma draw underflowed; the limit of Dir(alpha) for alpha -> 0 is a vertex.
      std::fill(props.begin(), props.end(), 0.0);
      props[static_cast<std::size_t>(rng.below(n_clients))] = 1.0;
    }
    rng.shuffle(idx);
    const auto counts = apportion(idx.size(), props);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < n_clients; ++c) {
      for (std::size_t j = 0; j < counts[c]; ++j) assigned[c].push_back(idx[pos++]);
    }
  }

  std::vector<Dataset> shards(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    std::sort(assigned[c].begin(), assigned[c].end());
    shards[c].name = data.name + "-client" + std::to_string(c);
    for (auto i : assigned[c]) shards[c].examples.push_back(data.examples[i]);
  }
  return shards;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_train_test: test_fraction must be in (0, 1)");
  const auto n_test_total =
      static_cast<std::size_t>(std::llround(static_cast<double>(data.size()) * test_fraction));
  if (n_test_total == 0 || n_test_total >= data.size())
    throw DatasetError("split_train_test: " + std::to_string(data.size()) +
                       " examples are too few to split at fraction " + std::to_string(test_fraction));

  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < data.size(); ++i) by_cat[data.examples[i].category].push_back(i);
  std::vector<double> sizes;
  for (const auto& [cat, idx] : by_cat) sizes.push_back(static_cast<double>(idx.size()));
  const auto per_cat = apportion(n_test_total, sizes);

  std::vector<bool> is_test(data.size(), false);
  std::size_t c = 0;
  for (auto& [cat, idx] : by_cat) {
    Rng rng = Rng::stream(seed, "split/" + cat);
    rng.shuffle(idx);
    for (std::size_t j = 0; j < per_cat[c]; ++j) is_test[idx[j]] = true;
    ++c;
  }
  Dataset train, test;
  train.name = data.name + "-train";
  test.name = data.name + "-test";
  for (std::size_t i = 0; i < data.size(); ++i)
    (is_test[i] ? test : train).examples.push_back(data.examples[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace fedpit::corpus
