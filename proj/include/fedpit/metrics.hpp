#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fedpit::metrics {

using TokenSeq = std::vector<std::string>;

// Lowercase, whitespace split, every ASCII punctuation character is its own token.
TokenSeq tokenize(std::string_view text);

// Tokens joined by single spaces.
std::string detokenize(const TokenSeq& tokens);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// LCS precision is taken against the candidate, recall against the reference.
RougeL rouge_l_detail(const TokenSeq& candidate, const TokenSeq& reference);
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

/// Sentence BLEU.
///
/// Orders 1..min(max_n, |candidate|) contribute to the geometric mean, so a
/// candidate shorter than max_n is still scored. With `smooth` each modified
/// precision becomes (matches + 1) / (total + 1); without it any zero precision
/// zeroes the score. Brevity penalty exp(1 - |ref|/|cand|) applies when the
/// candidate is shorter than the reference.
double bleu(const TokenSeq& candidate, const TokenSeq& reference, int max_n = 4, bool smooth = true);

// Unique n-grams over total n-grams across the whole corpus; 0 when there are none.
double distinct_n(const std::vector<TokenSeq>& corpus, int n);

}  // namespace fedpit::metrics
