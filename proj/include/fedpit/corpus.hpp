#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedpit/rng.hpp"

namespace fedpit::corpus {

// Where a synthetic example came from.
struct Provenance {
  int round = 0;
  int client = 0;
  double ifd = 0.0;
  bool truncated = false;
  bool operator==(const Provenance&) const = default;
};

struct Example {
  std::string instruction;
  std::string input;  // empty when absent
  std::string response;
  std::string category = "default";
  std::optional<Provenance> provenance;
  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  std::vector<std::string> categories() const;  // sorted, unique
  bool operator==(const Dataset&) const = default;
};

struct PartitionSpec {
  double alpha = 1.0;
  int num_clients = 3;
  std::uint64_t seed = 0;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Template families of the toy corpus. The first six are the in-domain task
// families; the rest are held back as out-of-domain material.
const std::vector<std::string>& template_categories();
inline constexpr int kInDomainCategories = 6;

/// Generates templated instruction/response tasks. Each response follows from
/// its instruction by the category's rule, and instructions are unique within
/// the dataset so a verbatim regeneration identifies memorization.
/// Categories are taken in order from `template_categories()` starting at
/// `first_category`.
Dataset generate_toy_corpus(int num_categories, int examples_per_category, std::uint64_t seed,
                            int first_category = 0);

// Examples drawn for an explicit list of category names, one per entry.
Dataset generate_for_categories(const std::vector<std::string>& categories, std::uint64_t seed,
                                const std::string& name);

// Every token the toy templates can emit.
std::vector<std::string> toy_lexicon();

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

std::vector<Dataset> dirichlet_partition(const Dataset& data, const PartitionSpec& spec);

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

// Largest-remainder apportionment of `total` by `weights`; ties go to the lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights);

}  // namespace fedpit::corpus
