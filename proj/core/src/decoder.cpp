#include "mergecap/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mergecap/errors.hpp"
#include "mergecap/nn.hpp"

namespace mergecap {

template <class Real>
ModelScorer<Real>::ModelScorer(const ModelParams<Real>& params, const ModelConfig& config,
                               std::span<const Real> feature)
    : params_(params), config_(config), feature_(feature) {
  if (feature.size() != config.feature_dim)
    throw ShapeError("image feature has " + std::to_string(feature.size()) + " values, model expects " +
                     std::to_string(config.feature_dim));
}

template <class Real>
std::vector<double> ModelScorer<Real>::log_probs(std::span<const int> prefix) const {
  auto logits = forward_logits(params_, config_, feature_, prefix);
  logits[Vocabulary::kStart] = -std::numeric_limits<Real>::infinity();
  logits[Vocabulary::kPad] = -std::numeric_limits<Real>::infinity();
  return nn::log_softmax<Real>(logits);
}

template class ModelScorer<float>;
template class ModelScorer<double>;

bool ranks_before(double score_a, std::span<const int> a, double score_b, std::span<const int> b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

namespace {

double ranking_score(const Hypothesis& h, bool length_normalize) {
  if (!length_normalize) return h.log_prob;
  const auto generated = h.ids.size() > 1 ? h.ids.size() - 1 : 1;
  return h.log_prob / static_cast<double>(generated);
}

void check_max_len(std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must leave room for start and one token");
}

}  // namespace

DecodeResult greedy_decode(const NextTokenScorer& scorer, std::size_t max_len) {
  check_max_len(max_len);
  DecodeResult r{{Vocabulary::kStart}, 0.0};
  while (r.ids.size() < max_len) {
    const auto lp = scorer.log_probs(r.ids);
    // Compare cumulative scores so the choice matches a width-1 beam exactly.
    std::size_t best = lp.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (lp[v] == -std::numeric_limits<double>::infinity()) continue;
      const double s = r.log_prob + lp[v];
      if (best == lp.size() || s > best_score) {
        best = v;
        best_score = s;
      }
    }
    if (best == lp.size()) throw NumericError("every token is masked");
    r.ids.push_back(static_cast<int>(best));
    r.log_prob = best_score;
    if (static_cast<int>(best) == Vocabulary::kEnd) break;
  }
  return r;
}

DecodeResult beam_search(const NextTokenScorer& scorer, const BeamOptions& options) {
  check_max_len(options.max_len);
  if (options.beam_width < 1) throw ConfigError("beam width must be >= 1");

  std::vector<Hypothesis> live{{{Vocabulary::kStart}, 0.0, false}};
  std::vector<Hypothesis> finished;

  auto before = [](const Hypothesis& a, const Hypothesis& b) {
    return ranks_before(a.log_prob, a.ids, b.log_prob, b.ids);
  };

  while (!live.empty() && finished.size() < options.beam_width) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : live) {
      const auto lp = scorer.log_probs(h.ids);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (lp[v] == -std::numeric_limits<double>::infinity()) continue;
        Hypothesis c{h.ids, h.log_prob + lp[v], false};
        c.ids.push_back(static_cast<int>(v));
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t open = options.beam_width - finished.size();
    const std::size_t keep = std::min(open, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      before);
    candidates.resize(keep);

    live.clear();
    for (auto& c : candidates) {
      if (c.ids.back() == Vocabulary::kEnd || c.ids.size() >= options.max_len) {
        c.finished = true;
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }

  if (finished.empty()) throw NumericError("beam search produced no hypothesis");
  const auto best = std::min_element(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return ranks_before(ranking_score(a, options.length_normalize), a.ids, ranking_score(b, options.length_normalize),
                        b.ids);
  });
  return {best->ids, best->log_prob};
}

DecodeResult exhaustive_oracle(const NextTokenScorer& scorer, std::size_t max_len) {
  check_max_len(max_len);
  const double space = std::pow(static_cast<double>(scorer.vocab_size()), static_cast<double>(max_len));
  if (space > kExhaustiveLimit)
    throw TooLarge("vocab " + std::to_string(scorer.vocab_size()) + "^" + std::to_string(max_len) +
                   " sequences exceed the enumeration limit");

  DecodeResult best{{}, -std::numeric_limits<double>::infinity()};
  bool have = false;
  std::vector<int> ids{Vocabulary::kStart};

  // Depth-first; scores accumulate in the same order as beam_search.
  auto visit = [&](auto&& self, double score) -> void {
    const auto lp = scorer.log_probs(ids);
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (lp[v] == -std::numeric_limits<double>::infinity()) continue;
      const double s = score + lp[v];
      ids.push_back(static_cast<int>(v));
      if (static_cast<int>(v) == Vocabulary::kEnd || ids.size() >= max_len) {
        if (!have || ranks_before(s, ids, best.log_prob, best.ids)) {
          best = {ids, s};
          have = true;
        }
      } else {
        self(self, s);
      }
      ids.pop_back();
    }
  };
  visit(visit, 0.0);
  if (!have) throw NumericError("no terminating sequence");
  return best;
}

}  // namespace mergecap
