#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pen4rec/data.hpp"
#include "pen4rec/errors.hpp"
#include "pen4rec/rng.hpp"

namespace pen4rec {

// Recipe for a corpus with engineered preference drift. Items are split into
// n_clusters contiguous blocks of items_per_cluster; a session samples items
// from a latent cluster pointer that jumps with drift_probability per step.
// Jumps alternate excursion and return: from a home cluster h the pointer
// escapes to a random cluster outside {h, h+1}, and the following jump lands
// on (h+1) mod n_clusters, which then becomes the new home. The post-drift
// destination is thus a fixed function of the pre-drift home, so early
// history predicts what follows an excursion while the excursion itself does
// not. With two clusters every jump toggles to the other cluster.
struct SyntheticSpec {
  std::size_t n_items = 40;
  std::size_t n_sessions = 1000;
  std::size_t n_clusters = 5;
  std::size_t items_per_cluster = 8;
  double drift_probability = 0.3;
  std::size_t len_min = 5;
  std::size_t len_max = 9;
  std::uint64_t seed = 42;

  void validate() const {
    if (n_clusters < 2) throw ContractError("SyntheticSpec: need at least 2 clusters");
    if (items_per_cluster < 1) throw ContractError("SyntheticSpec: items_per_cluster must be >= 1");
    if (n_items != n_clusters * items_per_cluster)
      throw ContractError("SyntheticSpec: n_items must equal n_clusters * items_per_cluster");
    if (drift_probability < 0.0 || drift_probability > 1.0)
      throw ContractError("SyntheticSpec: drift_probability must be in [0, 1]");
    if (len_min < 2) throw ContractError("SyntheticSpec: len_min must be >= 2");
    if (len_max < len_min) throw ContractError("SyntheticSpec: len_max must be >= len_min");
    if (len_max > 999) throw ContractError("SyntheticSpec: len_max must be <= 999");
    if (n_sessions < 1) throw ContractError("SyntheticSpec: n_sessions must be >= 1");
  }
};

inline std::size_t item_cluster(const SyntheticSpec& spec, std::size_t item_index) {
  return item_index / spec.items_per_cluster;
}

// Deterministic for a given spec. Vocabulary index j maps to id "item<j>" for
// every item, so the index space matches the cluster layout directly.
// Session i's events get timestamps i*1000 + position, making a time-based
// holdout select the last sessions generated.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::size_t k = spec.n_clusters;

  Dataset ds;
  ds.items.reserve(spec.n_items);
  for (std::size_t j = 0; j < spec.n_items; ++j) {
    ds.items.push_back("item" + std::to_string(j));
    ds.vocab.emplace(ds.items.back(), j);
  }

  for (std::size_t i = 0; i < spec.n_sessions; ++i) {
    std::size_t len = spec.len_min + rng.next_below(spec.len_max - spec.len_min + 1);
    std::size_t home = rng.next_below(k);
    std::size_t cur = home;
    bool excursion = false;

    std::vector<std::size_t> session;
    session.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      session.push_back(cur * spec.items_per_cluster + rng.next_below(spec.items_per_cluster));
      if (rng.uniform() >= spec.drift_probability) continue;
      if (k == 2) {
        cur = 1 - cur;
        home = cur;
      } else if (!excursion) {
        // k-2 candidates remain once home and its successor are excluded.
        std::size_t pick = rng.next_below(k - 2);
        std::size_t e = 0, skipped = 0;
        for (std::size_t c = 0; c < k; ++c) {
          if (c == home || c == (home + 1) % k) continue;
          if (skipped == pick) {
            e = c;
            break;
          }
          ++skipped;
        }
        cur = e;
        excursion = true;
      } else {
        home = (home + 1) % k;
        cur = home;
        excursion = false;
      }
    }
    ds.sessions.push_back(std::move(session));
    ds.end_ts.push_back(static_cast<std::int64_t>(i) * 1000 +
                        static_cast<std::int64_t>(len) - 1);
  }
  return ds;
}

// Writes a dataset back out in the ingestion format. Session ids are s<row>;
// timestamps are row*1000 + position, matching gen_synthetic's convention.
inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "session_id,item_id,timestamp\n";
  for (std::size_t i = 0; i < ds.sessions.size(); ++i)
    for (std::size_t t = 0; t < ds.sessions[i].size(); ++t)
      out << "s" << i << "," << ds.items.at(ds.sessions[i][t]) << ","
          << (static_cast<std::int64_t>(i) * 1000 + static_cast<std::int64_t>(t)) << "\n";
  if (!out) throw FormatError("write failed for " + path);
}

// key=value sidecar recording the generation recipe and the item->cluster map.
inline void write_synthetic_sidecar(const SyntheticSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", spec.drift_probability);
  out << "n_items=" << spec.n_items << "\n"
      << "n_sessions=" << spec.n_sessions << "\n"
      << "n_preference_clusters=" << spec.n_clusters << "\n"
      << "items_per_cluster=" << spec.items_per_cluster << "\n"
      << "drift_probability=" << buf << "\n"
      << "len_min=" << spec.len_min << "\n"
      << "len_max=" << spec.len_max << "\n"
      << "seed=" << spec.seed << "\n";
  for (std::size_t j = 0; j < spec.n_items; ++j)
    out << "cluster.item" << j << "=" << item_cluster(spec, j) << "\n";
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace pen4rec
