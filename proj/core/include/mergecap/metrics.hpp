#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mergecap/text_pipeline.hpp"

namespace mergecap {

struct EvalPair {
  std::string image_id;
  TokenList candidate;
  std::vector<TokenList> references;  // at least one
};

// Corpus BLEU-n with pooled clipped n-gram precisions, uniform weights,
// closest-reference-length brevity penalty (shorter on ties) and no
// smoothing. Throws EmptyCorpus.
double bleu(std::span<const EvalPair> pairs, int max_n);

// Mean over pairs of the best LCS-based F-measure across references
// (beta = 1.2).
double rouge_l(std::span<const EvalPair> pairs);

inline constexpr double kRougeBeta = 1.2;

// Plain CIDEr over 1..4-grams. IDF = ln(N / df) with N and df counted over
// distinct image ids of the reference corpus; df is floored at 1 for n-grams
// that appear in no reference. Scaled by 10.
double cider(std::span<const EvalPair> pairs);

struct MetricReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge_l = 0;
  double cider = 0;
  std::size_t num_pairs = 0;
  std::size_t num_images = 0;
  std::size_t num_references = 0;

  // JSON object with fixed keys; meteor and spice are always null.
  std::string to_json() const;
};

MetricReport evaluate_corpus(std::span<const EvalPair> pairs);

}  // namespace mergecap
