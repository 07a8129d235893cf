#include "fedpit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace fedpit::metrics {

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

std::string detokenize(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) return 0;
  // Single rolling row over b.
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = (x == b[j - 1]) ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

RougeL rouge_l_detail(const TokenSeq& candidate, const TokenSeq& reference) {
  RougeL r;
  if (candidate.empty() || reference.empty()) return r;
  const auto l = static_cast<double>(lcs_length(candidate, reference));
  if (l == 0.0) return r;
  r.precision = l / static_cast<double>(candidate.size());
  r.recall = l / static_cast<double>(reference.size());
  r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  return rouge_l_detail(candidate, reference).f1;
}

namespace {

std::map<TokenSeq, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
  std::map<TokenSeq, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[TokenSeq(seq.begin() + static_cast<std::ptrdiff_t>(i),
                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

double bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n, bool smooth) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (candidate.empty() || reference.empty()) return 0.0;

  const std::size_t orders = std::min<std::size_t>(static_cast<std::size_t>(max_n), candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= orders; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    const std::size_t total = candidate.size() - n + 1;
    double p = 0.0;
    if (smooth) {
      p = (static_cast<double>(matches) + 1.0) / (static_cast<double>(total) + 1.0);
    } else {
      if (matches == 0) return 0.0;
      p = static_cast<double>(matches) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }
  const double geo = std::exp(log_sum / static_cast<double>(orders));
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return std::clamp(geo * bp, 0.0, 1.0);
}

double distinct_n(const std::vector<TokenSeq>& corpus, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  const auto len = static_cast<std::size_t>(n);
  std::set<TokenSeq> unique;
  std::size_t total = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < len) continue;
    for (std::size_t i = 0; i + len <= seq.size(); ++i) {
      unique.emplace(seq.begin() + static_cast<std::ptrdiff_t>(i),
                     seq.begin() + static_cast<std::ptrdiff_t>(i + len));
      ++total;
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace fedpit::metrics
