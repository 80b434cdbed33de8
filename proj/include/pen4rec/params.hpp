#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/rng.hpp"
#include "pen4rec/tensor.hpp"

namespace pen4rec {

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }
};

// One GRU cell's weights: candidate/reset/update each get an input matrix,
// a recurrent matrix and a bias. h' = (1 - z) .* h + z .* htilde.
struct GruParams {
  Parameter w_z, u_z, b_z;
  Parameter w_r, u_r, b_r;
  Parameter w_h, u_h, b_h;

  GruParams() = default;

  GruParams(const std::string& prefix, std::size_t in_dim, std::size_t hidden) {
    w_z = Parameter(prefix + ".w_z", Tensor::zeros({in_dim, hidden}));
    u_z = Parameter(prefix + ".u_z", Tensor::zeros({hidden, hidden}));
    b_z = Parameter(prefix + ".b_z", Tensor::zeros({hidden}));
    w_r = Parameter(prefix + ".w_r", Tensor::zeros({in_dim, hidden}));
    u_r = Parameter(prefix + ".u_r", Tensor::zeros({hidden, hidden}));
    b_r = Parameter(prefix + ".b_r", Tensor::zeros({hidden}));
    w_h = Parameter(prefix + ".w_h", Tensor::zeros({in_dim, hidden}));
    u_h = Parameter(prefix + ".u_h", Tensor::zeros({hidden, hidden}));
    b_h = Parameter(prefix + ".b_h", Tensor::zeros({hidden}));
  }

  void collect(std::vector<Parameter*>& out) {
    for (Parameter* p : {&w_z, &u_z, &b_z, &w_r, &u_r, &b_r, &w_h, &u_h, &b_h})
      out.push_back(p);
  }
};

// Every trainable tensor in the model. The registry order returned by all()
// is fixed; checkpoints and the optimizer state rely on it.
struct ModelParams {
  std::size_t vocab = 0;   // item count; embedding row 0 is item index 0
  std::size_t dim = 0;     // embedding width d
  std::size_t window = 0;  // recent-history length k used by the query builder

  Parameter embed;  // vocab x d

  // Graph aggregation plus the gated state update over item nodes.
  Parameter agg_w_out, agg_b_out;  // d x d, d
  Parameter agg_w_in, agg_b_in;    // d x d, d
  Parameter hop_att_w;             // d x d, scores multi-hop neighborhoods
  Parameter gate_wz, gate_uz;      // 2d x d, d x d
  Parameter gate_wr, gate_ur;      // 2d x d, d x d
  Parameter gate_wo, gate_uo;      // 2d x d, d x d

  // First-stage query over the k most recent item embeddings.
  Parameter fs_w1;  // (k*d) x d
  Parameter fs_w2;  // d x d
  Parameter fs_b;   // d
  Parameter fs_wq;  // ((k+1)*d) x d
  Parameter fs_bq;  // d

  // Bidirectional session reader.
  GruParams reader_fwd, reader_bwd;  // d -> d each direction
  Parameter reader_wm;               // 2d x d
  Parameter reader_bm;               // d

  // Attention-gated evolution over reader outputs.
  GruParams fusion;  // d -> d

  // Final query refinement.
  Parameter refine_ws;  // 2d x d
  Parameter refine_bs;  // d

  ModelParams() = default;

  ModelParams(std::size_t vocab_size, std::size_t d, std::size_t k)
      : vocab(vocab_size), dim(d), window(k) {
    if (vocab_size == 0 || d == 0 || k == 0)
      throw ContractError("ModelParams: vocab, dim and window must be positive");
    embed = Parameter("embed", Tensor::zeros({vocab_size, d}));
    agg_w_out = Parameter("ggnn.w_out", Tensor::zeros({d, d}));
    agg_b_out = Parameter("ggnn.b_out", Tensor::zeros({d}));
    agg_w_in = Parameter("ggnn.w_in", Tensor::zeros({d, d}));
    agg_b_in = Parameter("ggnn.b_in", Tensor::zeros({d}));
    hop_att_w = Parameter("ggnn.hop_att_w", Tensor::zeros({d, d}));
    gate_wz = Parameter("ggnn.gate_wz", Tensor::zeros({2 * d, d}));
    gate_uz = Parameter("ggnn.gate_uz", Tensor::zeros({d, d}));
    gate_wr = Parameter("ggnn.gate_wr", Tensor::zeros({2 * d, d}));
    gate_ur = Parameter("ggnn.gate_ur", Tensor::zeros({d, d}));
    gate_wo = Parameter("ggnn.gate_wo", Tensor::zeros({2 * d, d}));
    gate_uo = Parameter("ggnn.gate_uo", Tensor::zeros({d, d}));
    fs_w1 = Parameter("stage1.w1", Tensor::zeros({k * d, d}));
    fs_w2 = Parameter("stage1.w2", Tensor::zeros({d, d}));
    fs_b = Parameter("stage1.b", Tensor::zeros({d}));
    fs_wq = Parameter("stage1.w_q", Tensor::zeros({(k + 1) * d, d}));
    fs_bq = Parameter("stage1.b_q", Tensor::zeros({d}));
    reader_fwd = GruParams("reader.fwd", d, d);
    reader_bwd = GruParams("reader.bwd", d, d);
    reader_wm = Parameter("reader.w_m", Tensor::zeros({2 * d, d}));
    reader_bm = Parameter("reader.b_m", Tensor::zeros({d}));
    fusion = GruParams("fusion", d, d);
    refine_ws = Parameter("refine.w_s", Tensor::zeros({2 * d, d}));
    refine_bs = Parameter("refine.b_s", Tensor::zeros({d}));
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.push_back(&embed);
    for (Parameter* p : {&agg_w_out, &agg_b_out, &agg_w_in, &agg_b_in, &hop_att_w,
                         &gate_wz, &gate_uz, &gate_wr, &gate_ur, &gate_wo, &gate_uo,
                         &fs_w1, &fs_w2, &fs_b, &fs_wq, &fs_bq})
      out.push_back(p);
    reader_fwd.collect(out);
    reader_bwd.collect(out);
    out.push_back(&reader_wm);
    out.push_back(&reader_bm);
    fusion.collect(out);
    out.push_back(&refine_ws);
    out.push_back(&refine_bs);
    return out;
  }

  std::size_t total_scalars() {
    std::size_t n = 0;
    for (Parameter* p : all()) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (Parameter* p : all()) p->zero_grad();
  }

  // Draws every entry from N(0, 0.1^2) in registry order off one stream, so a
  // seed pins the whole initial state.
  void init_normal(std::uint64_t seed, double stddev = 0.1) {
    Rng rng(seed);
    for (Parameter* p : all())
      for (double& v : p->value.values) v = rng.normal(0.0, stddev);
  }
};

}  // namespace pen4rec
