#include "mergecap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

#include <json.hpp>

#include "mergecap/errors.hpp"

namespace mergecap {

namespace {

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

NGramCounts count_ngrams(const TokenList& tokens, std::size_t n) {
  NGramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

void require_pairs(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw EmptyCorpus("no candidate/reference pairs");
  for (const auto& p : pairs)
    if (p.references.empty()) throw EmptyCorpus("pair for image '" + p.image_id + "' has no references");
}

// Order-independent mean: sorting first makes the floating-point sum
// invariant under permutation of the inputs.
double stable_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::size_t lcs_length(const TokenList& a, const TokenList& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(std::span<const EvalPair> pairs, int max_n) {
  require_pairs(pairs);
  if (max_n < 1 || max_n > 4) throw ConfigError("BLEU order must be within 1..4");

  std::vector<std::size_t> matched(static_cast<std::size_t>(max_n), 0);
  std::vector<std::size_t> total(static_cast<std::size_t>(max_n), 0);
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;

  for (const auto& p : pairs) {
    const std::size_t c = p.candidate.size();
    cand_len += c;
    std::size_t closest = p.references.front().size();
    for (const auto& r : p.references) {
      const auto dr = r.size() > c ? r.size() - c : c - r.size();
      const auto dc = closest > c ? closest - c : c - closest;
      if (dr < dc || (dr == dc && r.size() < closest)) closest = r.size();
    }
    ref_len += closest;

    for (std::size_t n = 1; n <= static_cast<std::size_t>(max_n); ++n) {
      const auto cand = count_ngrams(p.candidate, n);
      NGramCounts max_ref;
      for (const auto& r : p.references)
        for (const auto& [g, cnt] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : cand) {
        total[n - 1] += cnt;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  double log_sum = 0;
  for (std::size_t n = 0; n < matched.size(); ++n) {
    if (matched[n] == 0 || total[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double brevity =
      cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

double rouge_l(std::span<const EvalPair> pairs) {
  require_pairs(pairs);
  constexpr double beta2 = kRougeBeta * kRougeBeta;
  std::vector<double> per_pair;
  per_pair.reserve(pairs.size());
  for (const auto& p : pairs) {
    double best = 0;
    for (const auto& r : p.references) {
      const auto lcs = static_cast<double>(lcs_length(p.candidate, r));
      if (lcs == 0) continue;
      const double prec = lcs / static_cast<double>(p.candidate.size());
      const double rec = lcs / static_cast<double>(r.size());
      best = std::max(best, (1 + beta2) * prec * rec / (rec + beta2 * prec));
    }
    per_pair.push_back(best);
  }
  return stable_mean(std::move(per_pair));
}

double cider(std::span<const EvalPair> pairs) {
  require_pairs(pairs);
  constexpr std::size_t kMaxN = 4;

  // Document frequency over distinct images: an n-gram counts once per image
  // whose reference set contains it.
  std::map<std::string, std::set<NGram>> image_ngrams;
  for (const auto& p : pairs) {
    auto& bag = image_ngrams[p.image_id];
    for (const auto& r : p.references)
      for (std::size_t n = 1; n <= kMaxN; ++n)
        for (const auto& [g, cnt] : count_ngrams(r, n)) bag.insert(g);
  }
  std::map<NGram, std::size_t> doc_freq;
  for (const auto& [id, bag] : image_ngrams)
    for (const auto& g : bag) ++doc_freq[g];
  const double log_images = std::log(static_cast<double>(image_ngrams.size()));

  auto tfidf = [&](const NGramCounts& counts) {
    std::map<NGram, double> vec;
    for (const auto& [g, tf] : counts) {
      auto it = doc_freq.find(g);
      const double df = it == doc_freq.end() ? 1.0 : static_cast<double>(it->second);
      vec[g] = static_cast<double>(tf) * (log_images - std::log(df));
    }
    return vec;
  };
  auto cosine = [](const std::map<NGram, double>& a, const std::map<NGram, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, v] : a) {
      na += v * v;
      auto it = b.find(g);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [g, v] : b) nb += v * v;
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  std::vector<double> per_pair;
  per_pair.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<double> per_n;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto cand_vec = tfidf(count_ngrams(p.candidate, n));
      std::vector<double> sims;
      for (const auto& r : p.references) sims.push_back(cosine(cand_vec, tfidf(count_ngrams(r, n))));
      per_n.push_back(stable_mean(std::move(sims)));
    }
    double s = 0;
    for (double v : per_n) s += v;
    per_pair.push_back(10.0 * s / static_cast<double>(kMaxN));
  }
  return stable_mean(std::move(per_pair));
}

MetricReport evaluate_corpus(std::span<const EvalPair> pairs) {
  require_pairs(pairs);
  MetricReport r;
  r.bleu1 = bleu(pairs, 1);
  r.bleu2 = bleu(pairs, 2);
  r.bleu3 = bleu(pairs, 3);
  r.bleu4 = bleu(pairs, 4);
  r.rouge_l = rouge_l(pairs);
  r.cider = cider(pairs);
  r.num_pairs = pairs.size();
  std::set<std::string> images;
  for (const auto& p : pairs) {
    images.insert(p.image_id);
    r.num_references += p.references.size();
  }
  r.num_images = images.size();
  return r;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu1"] = bleu1;
  j["bleu2"] = bleu2;
  j["bleu3"] = bleu3;
  j["bleu4"] = bleu4;
  j["rouge_l"] = rouge_l;
  j["cider"] = cider;
  j["meteor"] = nullptr;
  j["spice"] = nullptr;
  j["counts"] = {{"pairs", num_pairs}, {"images", num_images}, {"references", num_references}};
  return j.dump(2);
}

}  // namespace mergecap
