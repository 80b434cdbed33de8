#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pen4rec/errors.hpp"
#include "pen4rec/graph.hpp"
#include "pen4rec/params.hpp"
#include "pen4rec/rng.hpp"
#include "pen4rec/tape.hpp"

namespace pen4rec {

// Architecture reductions used for component analysis. full is the complete
// two-stage pipeline; the others disable or replace pieces of it:
//   gnn_last   score the last item's plain graph embedding (no hop attention)
//   agnn_last  same but with hop attention in the embedding layer
//   non        stop after the first-stage query
//   att        second stage is plain soft attention over sequence vectors
//   gru        second stage is a plain GRU over sequence vectors
//   att_gru    plain GRU over attention-scaled sequence vectors
enum class Variant { full, gnn_last, agnn_last, non, att, gru, att_gru };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::gnn_last: return "gnn_last";
    case Variant::agnn_last: return "agnn_last";
    case Variant::non: return "non";
    case Variant::att: return "att";
    case Variant::gru: return "gru";
    case Variant::att_gru: return "att_gru";
  }
  throw ContractError("variant_name: unknown variant");
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::full, Variant::gnn_last, Variant::agnn_last, Variant::non,
                    Variant::att, Variant::gru, Variant::att_gru})
    if (name == variant_name(v)) return v;
  throw ContractError("unknown variant '" + name + "'");
}

// Whether the first-stage attention covers only the last k positions or the
// whole session.
enum class FirstStageRange { last_k, full_session };

struct VariantConfig {
  Variant variant = Variant::full;
  std::size_t k = 3;  // recent-history window feeding the query
  std::size_t d = 100;
  std::size_t ggnn_layers = 1;
  double dropout = 0.5;
  FirstStageRange first_stage_range = FirstStageRange::last_k;

  std::size_t hop_count() const { return k > 1 ? k - 1 : 1; }

  void validate() const {
    if (k < 1) throw ContractError("VariantConfig: k must be >= 1");
    if (d < 1) throw ContractError("VariantConfig: d must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ContractError("VariantConfig: dropout must be in [0, 1)");
  }
};

// Intermediate activations of one forward pass, for white-box assertions and
// diagnostics. Fields stay empty when the executed variant skips them.
struct ForwardTrace {
  std::vector<Tensor> node_layers;  // per embedding layer, input included
  std::vector<Tensor> hop_alpha;    // per layer: node x hop attention rows
  Tensor seq;
  Tensor beta;
  Tensor q0, p0, q1;
  Tensor m;
  Tensor gamma;
  Tensor h;  // recurrent states, one row per position
  Tensor p1, s;
  Tensor logits, probs;
};

struct GruVars {
  Var w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
};

inline GruVars bind_gru(Tape& t, GruParams& g) {
  return GruVars{t.parameter(g.w_z), t.parameter(g.u_z), t.parameter(g.b_z),
                 t.parameter(g.w_r), t.parameter(g.u_r), t.parameter(g.b_r),
                 t.parameter(g.w_h), t.parameter(g.u_h), t.parameter(g.b_h)};
}

// One standard GRU step: update gate z blends the previous state with a
// reset-gated candidate; returns the new state.
inline Var gru_step(Tape& t, const GruVars& g, Var x, Var h) {
  Var z = t.sigmoid(t.add(t.add(t.vecmat(x, g.w_z), t.vecmat(h, g.u_z)), g.b_z));
  Var r = t.sigmoid(t.add(t.add(t.vecmat(x, g.w_r), t.vecmat(h, g.u_r)), g.b_r));
  Var cand =
      t.tanh_(t.add(t.add(t.vecmat(x, g.w_h), t.vecmat(t.mul(r, h), g.u_h)), g.b_h));
  return t.add(t.mul(t.axpb(z, -1.0, 1.0), h), t.mul(z, cand));
}

// Inverted-scaling dropout: each entry is zeroed with probability rate,
// survivors are scaled by 1/(1-rate) so eval needs no rescaling.
inline Var apply_dropout(Tape& t, Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  Tensor mask = Tensor::zeros_like(t.val(x));
  double scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values) v = rng.uniform() < rate ? 0.0 : scale;
  return t.mul(x, t.constant(std::move(mask)));
}

// One graph propagation layer. Per hop c and direction, neighborhoods are
// aggregated as hop_power_c * nodes * W + b; the two directions concatenate
// to a 2d message. With hop attention on, a per-node softmax over hops blends
// the messages (scored against the node's previous vector); otherwise only
// the 1-hop message is used. The message then drives a gated state update.
// alpha_out, when non-null and attention is on, receives the hop weights.
inline Var embed_layer(Tape& t, std::span<const Var> pow_out, std::span<const Var> pow_in,
                       Var nodes_prev, ModelParams& p, bool hop_attention,
                       Tensor* alpha_out = nullptr) {
  std::size_t hops = pow_out.size();
  if (hops == 0 || pow_in.size() != hops)
    throw ContractError("embed_layer: hop power lists empty or mismatched");

  Var w_out = t.parameter(p.agg_w_out);
  Var b_out = t.parameter(p.agg_b_out);
  Var w_in = t.parameter(p.agg_w_in);
  Var b_in = t.parameter(p.agg_b_in);

  std::vector<Var> out_agg, in_agg, messages;
  out_agg.reserve(hops);
  in_agg.reserve(hops);
  messages.reserve(hops);
  for (std::size_t c = 0; c < hops; ++c) {
    out_agg.push_back(t.add_rowvec(t.matmul(t.matmul(pow_out[c], nodes_prev), w_out), b_out));
    in_agg.push_back(t.add_rowvec(t.matmul(t.matmul(pow_in[c], nodes_prev), w_in), b_in));
    messages.push_back(t.concat_cols(out_agg[c], in_agg[c]));
  }

  Var msg = messages[0];
  if (hop_attention) {
    Var w_alpha = t.parameter(p.hop_att_w);
    std::vector<Var> scores;
    scores.reserve(hops);
    for (std::size_t c = 0; c < hops; ++c)
      scores.push_back(
          t.rowwise_dot(t.matmul(t.add(out_agg[c], in_agg[c]), w_alpha), nodes_prev));
    Var alpha = t.softmax_rows(t.stack_cols(scores));
    msg = t.scale_rows(messages[0], t.col(alpha, 0));
    for (std::size_t c = 1; c < hops; ++c)
      msg = t.add(msg, t.scale_rows(messages[c], t.col(alpha, c)));
    if (alpha_out) *alpha_out = t.val(alpha);
  }

  Var wz = t.parameter(p.gate_wz);
  Var uz = t.parameter(p.gate_uz);
  Var wr = t.parameter(p.gate_wr);
  Var ur = t.parameter(p.gate_ur);
  Var wo = t.parameter(p.gate_wo);
  Var uo = t.parameter(p.gate_uo);
  Var z = t.sigmoid(t.add(t.matmul(msg, wz), t.matmul(nodes_prev, uz)));
  Var r = t.sigmoid(t.add(t.matmul(msg, wr), t.matmul(nodes_prev, ur)));
  Var cand = t.tanh_(t.add(t.matmul(msg, wo), t.matmul(t.mul(r, nodes_prev), uo)));
  return t.add(t.mul(t.axpb(z, -1.0, 1.0), nodes_prev), t.mul(z, cand));
}

struct FirstStageOut {
  Var q0, beta, p0, q1;
  std::vector<std::size_t> range;  // sequence positions the attention covered
};

// Builds the recent-history query q0 from the last k sequence vectors
// (sessions shorter than k repeat the first vector on the left), gates each
// in-range position by a sigmoid score reduced to a scalar by averaging its
// d entries, and refines the pooled summary into q1.
inline FirstStageOut first_stage(Tape& t, Var seq, ModelParams& p, const VariantConfig& cfg) {
  std::size_t n = t.val(seq).rows();
  std::size_t k = cfg.k;
  if (p.window != k) throw ContractError("first_stage: params built for a different k");

  std::vector<Var> window;
  window.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t pos = n >= k ? n - k + j : (j < k - n ? 0 : j - (k - n));
    window.push_back(t.row(seq, pos));
  }
  Var q0 = t.concat(window);

  FirstStageOut out;
  out.q0 = q0;
  std::size_t first = cfg.first_stage_range == FirstStageRange::full_session
                          ? 0
                          : (n > k ? n - k : 0);
  for (std::size_t i = first; i < n; ++i) out.range.push_back(i);

  Var base = t.add(t.vecmat(q0, t.parameter(p.fs_w1)), t.parameter(p.fs_b));
  Var w2 = t.parameter(p.fs_w2);
  std::vector<Var> betas;
  betas.reserve(out.range.size());
  for (std::size_t i : out.range)
    betas.push_back(t.mean(t.sigmoid(t.add(base, t.vecmat(t.row(seq, i), w2)))));
  out.beta = t.stack_scalars(betas);

  Var ranged = t.gather_rows(seq, out.range);
  out.p0 = t.vecmat(out.beta, ranged);
  out.q1 = t.add(t.vecmat(t.concat2(out.p0, q0), t.parameter(p.fs_wq)), t.parameter(p.fs_bq));
  return out;
}

// Bidirectional recurrent read of the sequence with a residual connection:
// m_i = tanh(W_m [fwd_i; bwd_i] + b_m) + v_i. Zeroed reader parameters make
// this the identity on the sequence vectors.
inline Var session_reader(Tape& t, Var seq, ModelParams& p) {
  std::size_t n = t.val(seq).rows();
  std::size_t d = t.val(seq).cols();

  GruVars fwd = bind_gru(t, p.reader_fwd);
  GruVars bwd = bind_gru(t, p.reader_bwd);
  std::vector<Var> fstates(n), bstates(n);
  Var h = t.constant(Tensor::zeros({d}));
  for (std::size_t i = 0; i < n; ++i) {
    h = gru_step(t, fwd, t.row(seq, i), h);
    fstates[i] = h;
  }
  h = t.constant(Tensor::zeros({d}));
  for (std::size_t i = n; i-- > 0;) {
    h = gru_step(t, bwd, t.row(seq, i), h);
    bstates[i] = h;
  }

  Var wm = t.parameter(p.reader_wm);
  Var bm = t.parameter(p.reader_bm);
  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var mix = t.tanh_(t.add(t.vecmat(t.concat2(fstates[i], bstates[i]), wm), bm));
    rows.push_back(t.add(mix, t.row(seq, i)));
  }
  return t.stack_rows(rows);
}

struct FusionOut {
  Var p1, gamma;
  std::vector<Var> states;
};

// Attention-gated recurrence: gamma_i = softmax_i(<q1, m_i>) replaces the
// role of an update gate at the sequence level. Each step computes a full
// GRU candidate state from (m_i, h_{i-1}) and blends
// h_i = gamma_i * cand + (1 - gamma_i) * h_{i-1}, so gamma_i = 0 freezes the
// state exactly and gamma_i = 1 reduces to the plain GRU step.
// gamma_override substitutes fixed attention weights (white-box testing).
inline FusionOut preference_fusion(Tape& t, Var m, Var q1, ModelParams& p,
                                   const std::vector<double>* gamma_override = nullptr) {
  std::size_t n = t.val(m).rows();
  std::size_t d = t.val(m).cols();

  FusionOut out;
  if (gamma_override) {
    if (gamma_override->size() != n)
      throw ContractError("preference_fusion: override length mismatch");
    Tensor g = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) g[i] = (*gamma_override)[i];
    out.gamma = t.constant(std::move(g));
  } else {
    out.gamma = t.softmax(t.matvec(m, q1));
  }

  GruVars fus = bind_gru(t, p.fusion);
  Var h = t.constant(Tensor::zeros({d}));
  out.states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var cand = gru_step(t, fus, t.row(m, i), h);
    Var gi = t.element(out.gamma, i);
    h = t.add(t.scale_by(cand, gi), t.scale_by(h, t.axpb(gi, -1.0, 1.0)));
    out.states.push_back(h);
  }
  out.p1 = h;
  return out;
}

inline Var refine_query(Tape& t, Var p1, Var q1, ModelParams& p) {
  return t.add(t.vecmat(t.concat2(p1, q1), t.parameter(p.refine_ws)),
               t.parameter(p.refine_bs));
}

struct Scores {
  Var logits, probs;
};

// Candidates are scored against the raw embedding table (most candidates are
// not in the session graph, so table rows are the only global representation).
inline Scores score_items(Tape& t, Var s, Var embed) {
  Var logits = t.matvec(embed, s);
  return Scores{logits, t.softmax(logits)};
}

// Full-vocabulary hybrid cross-entropy: the target's log-probability plus
// every non-target's log-(1 - probability), negated. Probabilities are
// clamped to [1e-12, 1 - 1e-12] before the logs.
inline Var hybrid_loss(Tape& t, Var probs, std::size_t target) {
  const Tensor& pv = t.val(probs);
  if (pv.rank() != 1 || target >= pv.numel())
    throw ContractError("hybrid_loss: target out of range");
  Var pc = t.clamp(probs, 1e-12, 1.0 - 1e-12);
  Var lp = t.log_(pc);
  Var lom = t.log_(t.axpb(pc, -1.0, 1.0));
  Var pos = t.element(lp, target);
  Var neg = t.sub(t.sum(lom), t.element(lom, target));
  return t.axpb(t.add(pos, neg), -1.0, 0.0);
}

struct ForwardOutput {
  Var probs;
  Var s;
  ForwardTrace trace;
};

// Runs the configured variant end to end on one input sequence and returns
// the item probability node plus the recorded trace. training enables
// dropout, which then requires a dropout_rng; eval mode never perturbs.
inline ForwardOutput forward(Tape& t, std::span<const std::size_t> input, ModelParams& p,
                             const VariantConfig& cfg, bool training = false,
                             Rng* dropout_rng = nullptr) {
  cfg.validate();
  if (input.empty()) throw ContractError("forward: empty input sequence");
  if (cfg.d != p.dim || cfg.k != p.window)
    throw ContractError("forward: config dimensions do not match parameters");
  for (std::size_t item : input)
    if (item >= p.vocab) throw ContractError("forward: item index out of vocabulary");
  bool use_dropout = training && cfg.dropout > 0.0;
  if (use_dropout && !dropout_rng)
    throw ContractError("forward: training with dropout needs a dropout rng");

  SessionGraph graph = build_graph(input, cfg.hop_count());
  ForwardOutput out;

  Var embed = t.parameter(p.embed);
  Var nodes = t.gather_rows(embed, graph.nodes);
  out.trace.node_layers.push_back(t.val(nodes));

  bool hop_attention = cfg.variant != Variant::gnn_last;
  std::vector<Var> pow_out, pow_in;
  for (const Tensor& m : graph.hop_powers_out) pow_out.push_back(t.constant(m));
  for (const Tensor& m : graph.hop_powers_in) pow_in.push_back(t.constant(m));
  for (std::size_t layer = 0; layer < cfg.ggnn_layers; ++layer) {
    Tensor alpha;
    nodes = embed_layer(t, pow_out, pow_in, nodes, p, hop_attention,
                        hop_attention ? &alpha : nullptr);
    out.trace.node_layers.push_back(t.val(nodes));
    if (hop_attention) out.trace.hop_alpha.push_back(std::move(alpha));
  }

  Var seq = t.gather_rows(nodes, graph.seq);
  if (use_dropout) seq = apply_dropout(t, seq, cfg.dropout, *dropout_rng);
  out.trace.seq = t.val(seq);
  std::size_t n = input.size();

  Var sv;
  if (cfg.variant == Variant::gnn_last || cfg.variant == Variant::agnn_last) {
    sv = t.row(seq, n - 1);
  } else {
    FirstStageOut fs = first_stage(t, seq, p, cfg);
    out.trace.q0 = t.val(fs.q0);
    out.trace.beta = t.val(fs.beta);
    out.trace.p0 = t.val(fs.p0);
    out.trace.q1 = t.val(fs.q1);

    switch (cfg.variant) {
      case Variant::non:
        sv = fs.q1;
        break;
      case Variant::full: {
        Var m = session_reader(t, seq, p);
        out.trace.m = t.val(m);
        FusionOut fu = preference_fusion(t, m, fs.q1, p);
        out.trace.gamma = t.val(fu.gamma);
        out.trace.h = Tensor::zeros({n, cfg.d});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < cfg.d; ++j)
            out.trace.h.at(i, j) = t.val(fu.states[i])[j];
        out.trace.p1 = t.val(fu.p1);
        sv = refine_query(t, fu.p1, fs.q1, p);
        break;
      }
      case Variant::att: {
        Var gamma = t.softmax(t.matvec(seq, fs.q1));
        out.trace.gamma = t.val(gamma);
        Var p1 = t.vecmat(gamma, seq);
        out.trace.p1 = t.val(p1);
        sv = refine_query(t, p1, fs.q1, p);
        break;
      }
      case Variant::gru: {
        GruVars fus = bind_gru(t, p.fusion);
        Var h = t.constant(Tensor::zeros({cfg.d}));
        out.trace.h = Tensor::zeros({n, cfg.d});
        for (std::size_t i = 0; i < n; ++i) {
          h = gru_step(t, fus, t.row(seq, i), h);
          for (std::size_t j = 0; j < cfg.d; ++j) out.trace.h.at(i, j) = t.val(h)[j];
        }
        sv = refine_query(t, h, fs.q1, p);
        break;
      }
      case Variant::att_gru: {
        Var gamma = t.softmax(t.matvec(seq, fs.q1));
        out.trace.gamma = t.val(gamma);
        GruVars fus = bind_gru(t, p.fusion);
        Var h = t.constant(Tensor::zeros({cfg.d}));
        out.trace.h = Tensor::zeros({n, cfg.d});
        for (std::size_t i = 0; i < n; ++i) {
          Var x = t.scale_by(t.row(seq, i), t.element(gamma, i));
          h = gru_step(t, fus, x, h);
          for (std::size_t j = 0; j < cfg.d; ++j) out.trace.h.at(i, j) = t.val(h)[j];
        }
        sv = refine_query(t, h, fs.q1, p);
        break;
      }
      default:
        throw ContractError("forward: unhandled variant");
    }
  }

  if (use_dropout) sv = apply_dropout(t, sv, cfg.dropout, *dropout_rng);
  out.trace.s = t.val(sv);
  Scores sc = score_items(t, sv, embed);
  out.trace.logits = t.val(sc.logits);
  out.trace.probs = t.val(sc.probs);
  out.probs = sc.probs;
  out.s = sv;
  return out;
}

}  // namespace pen4rec
