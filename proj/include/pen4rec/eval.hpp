#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pen4rec/data.hpp"
#include "pen4rec/errors.hpp"
#include "pen4rec/model.hpp"

namespace pen4rec {

// 1-based rank of the target under the total order (probability desc, item
// index asc).
inline std::size_t rank_of(const Tensor& probs, std::size_t target) {
  if (probs.rank() != 1 || target >= probs.numel())
    throw ContractError("rank_of: target out of range");
  double pt = probs[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < probs.numel(); ++j) {
    if (probs[j] > pt) ++rank;
    else if (probs[j] == pt && j < target) ++rank;
  }
  return rank;
}

struct RankedPrediction {
  Tensor probabilities;
  std::vector<std::size_t> top;  // best-first, ties by ascending index
};

inline RankedPrediction make_ranked(Tensor probs, std::size_t k) {
  if (probs.rank() != 1 || probs.numel() == 0)
    throw ContractError("make_ranked: probabilities must be a non-empty vector");
  if (k > probs.numel()) k = probs.numel();
  std::vector<std::size_t> idx(probs.numel());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return a < b;
                    });
  idx.resize(k);
  return RankedPrediction{std::move(probs), std::move(idx)};
}

inline double precision_at_k(std::span<const RankedPrediction> predictions,
                             std::span<const std::size_t> targets, std::size_t k = 20) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw ContractError("precision_at_k: need equally many predictions and targets");
  double hits = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (rank_of(predictions[i].probabilities, targets[i]) <= k) hits += 1.0;
  return hits / static_cast<double>(predictions.size());
}

inline double mrr_at_k(std::span<const RankedPrediction> predictions,
                       std::span<const std::size_t> targets, std::size_t k = 20) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw ContractError("mrr_at_k: need equally many predictions and targets");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::size_t rank = rank_of(predictions[i].probabilities, targets[i]);
    if (rank <= k) sum += 1.0 / static_cast<double>(rank);
  }
  return sum / static_cast<double>(predictions.size());
}

struct MetricReport {
  double p_at_k = 0.0;
  double mrr_at_k = 0.0;
  std::size_t k = 20;
  std::size_t n_examples = 0;
  std::string variant;
};

// Key names are fixed regardless of the cutoff; the "k" field carries it.
inline std::string metric_json(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"p_at_20\":%.17g,\"mrr_at_20\":%.17g,\"n_examples\":%zu,"
                "\"variant\":\"%s\",\"k\":%zu}",
                r.p_at_k, r.mrr_at_k, r.n_examples, r.variant.c_str(), r.k);
  return buf;
}

// Scores every example in eval mode (no dropout) and aggregates both metrics
// in example order. probe, when set, receives each example's index, the full
// probability vector and the target, letting callers re-derive the metrics
// independently or dump them.
using EvalProbe = std::function<void(std::size_t, const Tensor&, std::size_t)>;

inline MetricReport evaluate(ModelParams& params, const VariantConfig& cfg,
                             std::span<const TrainingExample> examples, std::size_t k = 20,
                             const EvalProbe& probe = nullptr) {
  if (examples.empty()) throw ContractError("evaluate: no examples");
  double hits = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Tape tape;
    ForwardOutput out = forward(tape, examples[i].input, params, cfg, false, nullptr);
    const Tensor& probs = out.trace.probs;
    std::size_t rank = rank_of(probs, examples[i].target);
    if (rank <= k) {
      hits += 1.0;
      rr += 1.0 / static_cast<double>(rank);
    }
    if (probe) probe(i, probs, examples[i].target);
  }
  MetricReport r;
  r.k = k;
  r.n_examples = examples.size();
  r.p_at_k = hits / static_cast<double>(examples.size());
  r.mrr_at_k = rr / static_cast<double>(examples.size());
  r.variant = variant_name(cfg.variant);
  return r;
}

// ---- non-neural baselines ----

enum class BaselineKind { pop, s_pop, item_knn };

inline const char* baseline_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::pop: return "pop";
    case BaselineKind::s_pop: return "s_pop";
    case BaselineKind::item_knn: return "item_knn";
  }
  throw ContractError("baseline_name: unknown kind");
}

inline BaselineKind parse_baseline(const std::string& name) {
  for (BaselineKind k : {BaselineKind::pop, BaselineKind::s_pop, BaselineKind::item_knn})
    if (name == baseline_name(k)) return k;
  throw ContractError("unknown baseline '" + name + "'");
}

// Train-split statistics: per-item occurrence counts and per-session-unique
// co-occurrence counts (each unordered item pair counted once per session
// containing both).
struct BaselineStats {
  std::size_t vocab = 0;
  std::vector<double> item_count;
  double total_count = 0.0;
  std::unordered_map<std::uint64_t, double> cooc;

  double cooc_of(std::size_t a, std::size_t b) const {
    if (a == b) return 0.0;
    std::uint64_t lo = a < b ? a : b;
    std::uint64_t hi = a < b ? b : a;
    auto it = cooc.find(lo * vocab + hi);
    return it == cooc.end() ? 0.0 : it->second;
  }
};

inline BaselineStats compute_baseline_stats(
    const std::vector<std::vector<std::size_t>>& sessions, std::size_t vocab) {
  if (vocab == 0) throw ContractError("compute_baseline_stats: empty vocabulary");
  BaselineStats st;
  st.vocab = vocab;
  st.item_count.assign(vocab, 0.0);
  for (const auto& s : sessions) {
    std::vector<std::size_t> distinct;
    std::unordered_set<std::size_t> seen;
    for (std::size_t item : s) {
      if (item >= vocab) throw ContractError("compute_baseline_stats: item out of vocab");
      st.item_count[item] += 1.0;
      st.total_count += 1.0;
      if (seen.insert(item).second) distinct.push_back(item);
    }
    std::sort(distinct.begin(), distinct.end());
    for (std::size_t a = 0; a < distinct.size(); ++a)
      for (std::size_t b = a + 1; b < distinct.size(); ++b)
        st.cooc[static_cast<std::uint64_t>(distinct[a]) * vocab + distinct[b]] += 1.0;
  }
  return st;
}

// pop ranks by global frequency; s_pop by within-prefix frequency with a
// global-frequency tie-break; item_knn scores candidate j by the summed
// cosine-normalized co-occurrence with the prefix's distinct items. Scores
// are normalized into a probability vector (uniform when all scores vanish).
inline RankedPrediction baseline_predict(BaselineKind kind, const BaselineStats& st,
                                         std::span<const std::size_t> prefix,
                                         std::size_t k = 20) {
  Tensor scores = Tensor::zeros({st.vocab});
  switch (kind) {
    case BaselineKind::pop:
      for (std::size_t j = 0; j < st.vocab; ++j) scores[j] = st.item_count[j];
      break;
    case BaselineKind::s_pop: {
      // The fractional term is < 1, so within-prefix count dominates.
      for (std::size_t j = 0; j < st.vocab; ++j)
        scores[j] = st.item_count[j] / (st.total_count + 1.0);
      for (std::size_t item : prefix) {
        if (item >= st.vocab) throw ContractError("baseline_predict: item out of vocab");
        scores[item] += 1.0;
      }
      break;
    }
    case BaselineKind::item_knn: {
      std::unordered_set<std::size_t> distinct(prefix.begin(), prefix.end());
      for (std::size_t i : distinct) {
        if (i >= st.vocab) throw ContractError("baseline_predict: item out of vocab");
        if (st.item_count[i] <= 0.0) continue;
        for (std::size_t j = 0; j < st.vocab; ++j) {
          if (j == i || st.item_count[j] <= 0.0) continue;
          double c = st.cooc_of(i, j);
          if (c > 0.0) scores[j] += c / std::sqrt(st.item_count[i] * st.item_count[j]);
        }
      }
      break;
    }
  }
  double sum = 0.0;
  for (double v : scores.values) sum += v;
  if (sum > 0.0) {
    for (double& v : scores.values) v /= sum;
  } else {
    scores.fill(1.0 / static_cast<double>(st.vocab));
  }
  return make_ranked(std::move(scores), k);
}

inline MetricReport evaluate_baseline(BaselineKind kind, const BaselineStats& st,
                                      std::span<const TrainingExample> examples,
                                      std::size_t k = 20) {
  if (examples.empty()) throw ContractError("evaluate_baseline: no examples");
  double hits = 0.0, rr = 0.0;
  for (const TrainingExample& ex : examples) {
    RankedPrediction pred = baseline_predict(kind, st, ex.input, k);
    std::size_t rank = rank_of(pred.probabilities, ex.target);
    if (rank <= k) {
      hits += 1.0;
      rr += 1.0 / static_cast<double>(rank);
    }
  }
  MetricReport r;
  r.k = k;
  r.n_examples = examples.size();
  r.p_at_k = hits / static_cast<double>(examples.size());
  r.mrr_at_k = rr / static_cast<double>(examples.size());
  r.variant = baseline_name(kind);
  return r;
}

}  // namespace pen4rec
