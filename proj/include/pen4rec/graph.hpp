#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/tensor.hpp"

namespace pen4rec {

// Directed click graph of one session.
//
// nodes[i] is the item index behind graph node i, in first-appearance order.
// seq[t] is the graph node clicked at position t, so nodes[seq[t]] replays
// the session. a_out[i][j] is the occurrence count of edge i->j divided by
// node i's total outgoing occurrences; rows with no outgoing edges stay zero.
// a_in mirrors that for incoming edges, so every row of either matrix sums
// to exactly 1 or 0. hop_powers_out[c-1] holds a_out to the c-th matrix
// power (likewise for in); powers of a row-(sub)stochastic matrix stay
// sub-stochastic, no re-normalization is applied.
struct SessionGraph {
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> seq;
  Tensor a_out;
  Tensor a_in;
  std::vector<Tensor> hop_powers_out;
  std::vector<Tensor> hop_powers_in;

  std::size_t node_count() const { return nodes.size(); }
};

namespace detail {

inline Tensor square_matmul(const Tensor& a, const Tensor& b) {
  std::size_t n = a.rows();
  Tensor out = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double av = a.at(i, k);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(k, j);
    }
  return out;
}

}  // namespace detail

// base raised to the c-th matrix power.
inline Tensor hop_adjacency(const Tensor& base, std::size_t c) {
  if (base.rank() != 2 || base.rows() != base.cols())
    throw ContractError("hop_adjacency: matrix must be square");
  if (c < 1) throw ContractError("hop_adjacency: power must be >= 1");
  Tensor acc = base;
  for (std::size_t i = 1; i < c; ++i) acc = detail::square_matmul(acc, base);
  return acc;
}

inline SessionGraph build_graph(std::span<const std::size_t> session, std::size_t max_hop = 1) {
  if (session.empty()) throw ContractError("build_graph: empty session");
  if (max_hop < 1) throw ContractError("build_graph: max_hop must be >= 1");

  SessionGraph g;
  std::unordered_map<std::size_t, std::size_t> node_of;
  node_of.reserve(session.size());
  g.seq.reserve(session.size());
  for (std::size_t item : session) {
    auto [it, inserted] = node_of.try_emplace(item, g.nodes.size());
    if (inserted) g.nodes.push_back(item);
    g.seq.push_back(it->second);
  }

  std::size_t n = g.nodes.size();
  Tensor out_cnt = Tensor::zeros({n, n});
  for (std::size_t t = 0; t + 1 < g.seq.size(); ++t)
    out_cnt.at(g.seq[t], g.seq[t + 1]) += 1.0;

  g.a_out = Tensor::zeros({n, n});
  g.a_in = Tensor::zeros({n, n});
  // Row sums of the count matrix are out-degrees; column sums are in-degrees.
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += out_cnt.at(i, j);
    if (deg > 0.0)
      for (std::size_t j = 0; j < n; ++j) g.a_out.at(i, j) = out_cnt.at(i, j) / deg;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += out_cnt.at(j, i);
    if (deg > 0.0)
      for (std::size_t j = 0; j < n; ++j) g.a_in.at(i, j) = out_cnt.at(j, i) / deg;
  }

  g.hop_powers_out.reserve(max_hop);
  g.hop_powers_in.reserve(max_hop);
  g.hop_powers_out.push_back(g.a_out);
  g.hop_powers_in.push_back(g.a_in);
  for (std::size_t c = 2; c <= max_hop; ++c) {
    g.hop_powers_out.push_back(detail::square_matmul(g.hop_powers_out.back(), g.a_out));
    g.hop_powers_in.push_back(detail::square_matmul(g.hop_powers_in.back(), g.a_in));
  }
  return g;
}

}  // namespace pen4rec
