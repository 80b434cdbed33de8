#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pen4rec/params.hpp"
#include "pen4rec/tensor.hpp"

namespace pen4rec {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  std::uint32_t id = 0;
};

// Reverse-mode differentiation tape over Tensor-valued primitives.
//
// Each operation appends one node holding the forward value and a pull
// function that routes the node's cotangent into its parents. backward()
// runs one reverse sweep in creation order (which is a topological order by
// construction) and finally accumulates leaf cotangents into the bound
// Parameter::grad buffers.
//
// Values are immutable once produced; a tape is single-threaded. Distinct
// tapes over the same read-only parameters may run concurrently.
class Tape {
 public:
  Var constant(Tensor value) { return push(std::move(value), nullptr); }

  // Leaf bound to a parameter; backward() adds its cotangent into p.grad.
  Var parameter(Parameter& p) {
    Var v = push(p.value, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      Tensor neg = g;
      for (double& x : neg.values) x = -x;
      t.accumulate(b, neg);
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      Tensor ga = g, gb = g;
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] *= vb[i];
        gb[i] *= va[i];
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // alpha * a + beta, elementwise with scalar coefficients.
  Var axpb(Var a, double alpha, double beta) {
    Tensor out = val(a);
    for (double& x : out.values) x = alpha * x + beta;
    return push(std::move(out), [a, alpha](Tape& t, const Tensor& g) {
      Tensor ga = g;
      for (double& x : ga.values) x *= alpha;
      t.accumulate(a, ga);
    });
  }

  // s is a 1-element tensor: out = s[0] * a.
  Var scale_by(Var a, Var s) {
    require(val(s).numel() == 1, "scale_by: scale must be scalar");
    double c = val(s)[0];
    Tensor out = val(a);
    for (double& x : out.values) x *= c;
    return push(std::move(out), [a, s](Tape& t, const Tensor& g) {
      double c = t.val(s)[0];
      Tensor ga = g;
      for (double& x : ga.values) x *= c;
      t.accumulate(a, ga);
      const Tensor& va = t.val(a);
      double ds = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) ds += va[i] * g[i];
      t.accumulate_scalar(s, ds);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = val(a);
    for (double& x : out.values) x = stable_sigmoid(x);
    Var r = push(std::move(out), nullptr);
    nodes_[r.id].pull = [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] *= y[i] * (1.0 - y[i]);
      t.accumulate(a, ga);
    };
    return r;
  }

  Var tanh_(Var a) {
    Tensor out = val(a);
    for (double& x : out.values) x = std::tanh(x);
    Var r = push(std::move(out), nullptr);
    nodes_[r.id].pull = [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] *= 1.0 - y[i] * y[i];
      t.accumulate(a, ga);
    };
    return r;
  }

  // Natural log with the argument clamped to >= 1e-12; the clamp region has
  // zero slope.
  Var log_(Var a) {
    constexpr double kFloor = 1e-12;
    Tensor out = val(a);
    for (double& x : out.values) x = std::log(x < kFloor ? kFloor : x);
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& va = t.val(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga[i] = va[i] < kFloor ? 0.0 : ga[i] / va[i];
      t.accumulate(a, ga);
    });
  }

  // Clamp to [lo, hi]; subgradient zero outside the window.
  Var clamp(Var a, double lo, double hi) {
    Tensor out = val(a);
    for (double& x : out.values) x = x < lo ? lo : (x > hi ? hi : x);
    return push(std::move(out), [a, lo, hi](Tape& t, const Tensor& g) {
      const Tensor& va = t.val(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (va[i] < lo || va[i] > hi) ga[i] = 0.0;
      t.accumulate(a, ga);
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
            "matmul: incompatible shapes");
    std::size_t r = ta.rows(), k = ta.cols(), c = tb.cols();
    Tensor out = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        double av = ta.at(i, m);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += av * tb.at(m, j);
      }
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      std::size_t r = va.rows(), k = va.cols(), c = vb.cols();
      Tensor ga = Tensor::zeros({r, k});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double gv = g.at(i, j);
          if (gv == 0.0) continue;
          for (std::size_t m = 0; m < k; ++m) ga.at(i, m) += gv * vb.at(m, j);
        }
      Tensor gb = Tensor::zeros({k, c});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t m = 0; m < k; ++m) {
          double av = va.at(i, m);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) gb.at(m, j) += av * g.at(i, j);
        }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // m (r x c) times column vector x (c) -> r.
  Var matvec(Var m, Var x) {
    const Tensor& tm = val(m);
    const Tensor& tx = val(x);
    require(tm.rank() == 2 && tx.rank() == 1 && tm.cols() == tx.numel(),
            "matvec: incompatible shapes");
    std::size_t r = tm.rows(), c = tm.cols();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += tm.at(i, j) * tx[j];
      out[i] = acc;
    }
    return push(std::move(out), [m, x](Tape& t, const Tensor& g) {
      const Tensor& vm = t.val(m);
      const Tensor& vx = t.val(x);
      std::size_t r = vm.rows(), c = vm.cols();
      Tensor gm = Tensor::zeros({r, c});
      Tensor gx = Tensor::zeros({c});
      for (std::size_t i = 0; i < r; ++i) {
        double gv = g[i];
        if (gv == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) {
          gm.at(i, j) += gv * vx[j];
          gx[j] += gv * vm.at(i, j);
        }
      }
      t.accumulate(m, gm);
      t.accumulate(x, gx);
    });
  }

  // Row vector x (r) times m (r x c) -> c.
  Var vecmat(Var x, Var m) {
    const Tensor& tx = val(x);
    const Tensor& tm = val(m);
    require(tm.rank() == 2 && tx.rank() == 1 && tm.rows() == tx.numel(),
            "vecmat: incompatible shapes");
    std::size_t r = tm.rows(), c = tm.cols();
    Tensor out = Tensor::zeros({c});
    for (std::size_t i = 0; i < r; ++i) {
      double xv = tx[i];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out[j] += xv * tm.at(i, j);
    }
    return push(std::move(out), [x, m](Tape& t, const Tensor& g) {
      const Tensor& vx = t.val(x);
      const Tensor& vm = t.val(m);
      std::size_t r = vm.rows(), c = vm.cols();
      Tensor gx = Tensor::zeros({r});
      Tensor gm = Tensor::zeros({r, c});
      for (std::size_t i = 0; i < r; ++i) {
        double xv = vx[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          acc += vm.at(i, j) * g[j];
          gm.at(i, j) += xv * g[j];
        }
        gx[i] = acc;
      }
      t.accumulate(x, gx);
      t.accumulate(m, gm);
    });
  }

  Var dot(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.rank() == 1 && ta.same_shape(tb), "dot: incompatible shapes");
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.numel(); ++i) acc += ta[i] * tb[i];
    return push(Tensor::scalar(acc), [a, b](Tape& t, const Tensor& g) {
      double gv = g[0];
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      Tensor ga = vb, gb = va;
      for (double& x : ga.values) x *= gv;
      for (double& x : gb.values) x *= gv;
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // Per-row inner products of two equal-shape matrices -> vector of row count.
  Var rowwise_dot(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.rank() == 2 && ta.same_shape(tb), "rowwise_dot: incompatible shapes");
    std::size_t r = ta.rows(), c = ta.cols();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += ta.at(i, j) * tb.at(i, j);
      out[i] = acc;
    }
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      std::size_t r = va.rows(), c = va.cols();
      Tensor ga = Tensor::zeros({r, c});
      Tensor gb = Tensor::zeros({r, c});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          ga.at(i, j) = g[i] * vb.at(i, j);
          gb.at(i, j) = g[i] * va.at(i, j);
        }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // Broadcast-add a length-c vector to every row of an r x c matrix.
  Var add_rowvec(Var m, Var b) {
    const Tensor& tm = val(m);
    const Tensor& tb = val(b);
    require(tm.rank() == 2 && tb.rank() == 1 && tm.cols() == tb.numel(),
            "add_rowvec: incompatible shapes");
    Tensor out = tm;
    for (std::size_t i = 0; i < tm.rows(); ++i)
      for (std::size_t j = 0; j < tm.cols(); ++j) out.at(i, j) += tb[j];
    return push(std::move(out), [m, b](Tape& t, const Tensor& g) {
      t.accumulate(m, g);
      Tensor gb = Tensor::zeros({g.cols()});
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
      t.accumulate(b, gb);
    });
  }

  // Scale row i of m by w[i].
  Var scale_rows(Var m, Var w) {
    const Tensor& tm = val(m);
    const Tensor& tw = val(w);
    require(tm.rank() == 2 && tw.rank() == 1 && tm.rows() == tw.numel(),
            "scale_rows: incompatible shapes");
    Tensor out = tm;
    for (std::size_t i = 0; i < tm.rows(); ++i)
      for (std::size_t j = 0; j < tm.cols(); ++j) out.at(i, j) *= tw[i];
    return push(std::move(out), [m, w](Tape& t, const Tensor& g) {
      const Tensor& vm = t.val(m);
      const Tensor& vw = t.val(w);
      Tensor gm = g;
      Tensor gw = Tensor::zeros({vm.rows()});
      for (std::size_t i = 0; i < vm.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < vm.cols(); ++j) {
          acc += g.at(i, j) * vm.at(i, j);
          gm.at(i, j) *= vw[i];
        }
        gw[i] = acc;
      }
      t.accumulate(m, gm);
      t.accumulate(w, gw);
    });
  }

  // ---- softmax ----

  // Max-subtracted softmax of a non-empty vector.
  Var softmax(Var a) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && ta.numel() > 0, "softmax: input must be a non-empty vector");
    Tensor out = ta;
    softmax_inplace(out.values.data(), out.numel());
    Var r = push(std::move(out), nullptr);
    nodes_[r.id].pull = [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      softmax_pull(y.values.data(), g.values.data(), ga.values.data(), g.numel());
      t.accumulate(a, ga);
    };
    return r;
  }

  // Independent softmax over each row of a matrix.
  Var softmax_rows(Var a) {
    const Tensor& ta = val(a);
    require(ta.rank() == 2 && ta.cols() > 0, "softmax_rows: input must have columns");
    Tensor out = ta;
    for (std::size_t i = 0; i < ta.rows(); ++i)
      softmax_inplace(out.values.data() + i * ta.cols(), ta.cols());
    Var r = push(std::move(out), nullptr);
    nodes_[r.id].pull = [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      std::size_t c = y.cols();
      for (std::size_t i = 0; i < y.rows(); ++i)
        softmax_pull(y.values.data() + i * c, g.values.data() + i * c,
                     ga.values.data() + i * c, c);
      t.accumulate(a, ga);
    };
    return r;
  }

  // ---- shape ops ----

  Var concat(std::span<const Var> parts) {
    require(!parts.empty(), "concat: no inputs");
    std::size_t total = 0;
    for (Var p : parts) {
      require(val(p).rank() == 1, "concat: inputs must be vectors");
      total += val(p).numel();
    }
    Tensor out = Tensor::zeros({total});
    std::size_t pos = 0;
    for (Var p : parts)
      for (double v : val(p).values) out[pos++] = v;
    std::vector<Var> owned(parts.begin(), parts.end());
    return push(std::move(out), [owned](Tape& t, const Tensor& g) {
      std::size_t pos = 0;
      for (Var p : owned) {
        std::size_t n = t.val(p).numel();
        Tensor gp = Tensor::zeros({n});
        for (std::size_t i = 0; i < n; ++i) gp[i] = g[pos + i];
        t.accumulate(p, gp);
        pos += n;
      }
    });
  }

  Var concat2(Var a, Var b) {
    Var parts[2] = {a, b};
    return concat(parts);
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(),
            "concat_cols: row mismatch");
    std::size_t r = ta.rows(), p = ta.cols(), q = tb.cols();
    Tensor out = Tensor::zeros({r, p + q});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < p; ++j) out.at(i, j) = ta.at(i, j);
      for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = tb.at(i, j);
    }
    return push(std::move(out), [a, b, p, q](Tape& t, const Tensor& g) {
      std::size_t r = g.rows();
      Tensor ga = Tensor::zeros({r, p});
      Tensor gb = Tensor::zeros({r, q});
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < p; ++j) ga.at(i, j) = g.at(i, j);
        for (std::size_t j = 0; j < q; ++j) gb.at(i, j) = g.at(i, p + j);
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  Var slice(Var a, std::size_t begin, std::size_t len) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && begin + len <= ta.numel(), "slice: out of range");
    Tensor out = Tensor::zeros({len});
    for (std::size_t i = 0; i < len; ++i) out[i] = ta[begin + i];
    return push(std::move(out), [a, begin, len](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros_like(t.val(a));
      for (std::size_t i = 0; i < len; ++i) ga[begin + i] = g[i];
      t.accumulate(a, ga);
    });
  }

  // Single entry of a vector as a scalar node.
  Var element(Var a, std::size_t i) {
    const Tensor& ta = val(a);
    require(ta.rank() == 1 && i < ta.numel(), "element: out of range");
    return push(Tensor::scalar(ta[i]), [a, i](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros_like(t.val(a));
      ga[i] = g[0];
      t.accumulate(a, ga);
    });
  }

  Var row(Var m, std::size_t i) {
    const Tensor& tm = val(m);
    require(tm.rank() == 2 && i < tm.rows(), "row: out of range");
    std::size_t c = tm.cols();
    Tensor out = Tensor::zeros({c});
    for (std::size_t j = 0; j < c; ++j) out[j] = tm.at(i, j);
    return push(std::move(out), [m, i](Tape& t, const Tensor& g) {
      Tensor gm = Tensor::zeros_like(t.val(m));
      for (std::size_t j = 0; j < g.numel(); ++j) gm.at(i, j) = g[j];
      t.accumulate(m, gm);
    });
  }

  Var col(Var m, std::size_t j) {
    const Tensor& tm = val(m);
    require(tm.rank() == 2 && j < tm.cols(), "col: out of range");
    std::size_t r = tm.rows();
    Tensor out = Tensor::zeros({r});
    for (std::size_t i = 0; i < r; ++i) out[i] = tm.at(i, j);
    return push(std::move(out), [m, j](Tape& t, const Tensor& g) {
      Tensor gm = Tensor::zeros_like(t.val(m));
      for (std::size_t i = 0; i < g.numel(); ++i) gm.at(i, j) = g[i];
      t.accumulate(m, gm);
    });
  }

  // Gather rows of m by index; repeated indices accumulate on backward.
  Var gather_rows(Var m, std::vector<std::size_t> idx) {
    const Tensor& tm = val(m);
    require(tm.rank() == 2, "gather_rows: input must be a matrix");
    std::size_t c = tm.cols();
    Tensor out = Tensor::zeros({idx.size(), c});
    for (std::size_t t = 0; t < idx.size(); ++t) {
      require(idx[t] < tm.rows(), "gather_rows: index out of range");
      for (std::size_t j = 0; j < c; ++j) out.at(t, j) = tm.at(idx[t], j);
    }
    return push(std::move(out), [m, idx](Tape& t, const Tensor& g) {
      Tensor gm = Tensor::zeros_like(t.val(m));
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j) gm.at(idx[r], j) += g.at(r, j);
      t.accumulate(m, gm);
    });
  }

  // Stack equal-length vectors as matrix rows.
  Var stack_rows(std::span<const Var> rows_in) {
    require(!rows_in.empty(), "stack_rows: no inputs");
    std::size_t c = val(rows_in[0]).numel();
    Tensor out = Tensor::zeros({rows_in.size(), c});
    for (std::size_t i = 0; i < rows_in.size(); ++i) {
      const Tensor& ti = val(rows_in[i]);
      require(ti.rank() == 1 && ti.numel() == c, "stack_rows: length mismatch");
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) = ti[j];
    }
    std::vector<Var> owned(rows_in.begin(), rows_in.end());
    return push(std::move(out), [owned](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < owned.size(); ++i) {
        Tensor gr = Tensor::zeros({g.cols()});
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] = g.at(i, j);
        t.accumulate(owned[i], gr);
      }
    });
  }

  // Stack equal-length vectors as matrix columns.
  Var stack_cols(std::span<const Var> cols_in) {
    require(!cols_in.empty(), "stack_cols: no inputs");
    std::size_t r = val(cols_in[0]).numel();
    Tensor out = Tensor::zeros({r, cols_in.size()});
    for (std::size_t j = 0; j < cols_in.size(); ++j) {
      const Tensor& tj = val(cols_in[j]);
      require(tj.rank() == 1 && tj.numel() == r, "stack_cols: length mismatch");
      for (std::size_t i = 0; i < r; ++i) out.at(i, j) = tj[i];
    }
    std::vector<Var> owned(cols_in.begin(), cols_in.end());
    return push(std::move(out), [owned](Tape& t, const Tensor& g) {
      for (std::size_t j = 0; j < owned.size(); ++j) {
        Tensor gc = Tensor::zeros({g.rows()});
        for (std::size_t i = 0; i < g.rows(); ++i) gc[i] = g.at(i, j);
        t.accumulate(owned[j], gc);
      }
    });
  }

  // Collect 1-element nodes into a vector node.
  Var stack_scalars(std::span<const Var> ss) {
    require(!ss.empty(), "stack_scalars: no inputs");
    Tensor out = Tensor::zeros({ss.size()});
    for (std::size_t i = 0; i < ss.size(); ++i) {
      require(val(ss[i]).numel() == 1, "stack_scalars: inputs must be scalars");
      out[i] = val(ss[i])[0];
    }
    std::vector<Var> owned(ss.begin(), ss.end());
    return push(std::move(out), [owned](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < owned.size(); ++i) t.accumulate_scalar(owned[i], g[i]);
    });
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (double v : val(a).values) acc += v;
    return push(Tensor::scalar(acc), [a](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros_like(t.val(a));
      ga.fill(g[0]);
      t.accumulate(a, ga);
    });
  }

  Var mean(Var a) {
    std::size_t n = val(a).numel();
    require(n > 0, "mean: empty input");
    double acc = 0.0;
    for (double v : val(a).values) acc += v;
    return push(Tensor::scalar(acc / static_cast<double>(n)),
                [a, n](Tape& t, const Tensor& g) {
                  Tensor ga = Tensor::zeros_like(t.val(a));
                  ga.fill(g[0] / static_cast<double>(n));
                  t.accumulate(a, ga);
                });
  }

  // ---- reverse sweep ----

  // Seeds the (scalar) root with `seed`, sweeps the tape in reverse creation
  // order, then adds every parameter leaf's cotangent into Parameter::grad.
  void backward(Var root, double seed = 1.0) {
    sweep(root, seed);
    for (Node& n : nodes_) {
      if (!n.param) continue;
      Tensor& pg = n.param->grad;
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
  }

  // Same sweep, but parameter cotangents land in caller-owned buffers keyed
  // by registry slot. Lets several tapes over shared read-only parameters run
  // on different threads without touching Parameter::grad.
  void backward_into(Var root, double seed,
                     const std::unordered_map<const Parameter*, std::size_t>& slot_of,
                     std::vector<Tensor>& sink) {
    sweep(root, seed);
    for (Node& n : nodes_) {
      if (!n.param) continue;
      Tensor& pg = sink.at(slot_of.at(n.param));
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, const Tensor&)> pull;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;

  void sweep(Var root, double seed) {
    require(val(root).numel() == 1, "backward: root must be scalar");
    for (Node& n : nodes_)
      if (n.grad.numel() != n.value.numel()) n.grad = Tensor::zeros_like(n.value);
    nodes_[root.id].grad[0] = seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.pull) n.pull(*this, n.grad);
    }
  }

  Var push(Tensor value, std::function<void(Tape&, const Tensor&)> pull) {
    Node n;
    n.value = std::move(value);
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void accumulate(Var v, const Tensor& g) {
    Tensor& target = nodes_[v.id].grad;
    if (target.numel() != g.numel()) target = Tensor::zeros_like(nodes_[v.id].value);
    for (std::size_t i = 0; i < g.numel(); ++i) target[i] += g[i];
  }

  void accumulate_scalar(Var v, double g) {
    Tensor& target = nodes_[v.id].grad;
    if (target.numel() != 1) target = Tensor::zeros_like(nodes_[v.id].value);
    target[0] += g;
  }

  static void require(bool ok, const char* msg) {
    if (!ok) throw ContractError(msg);
  }

  static void softmax_inplace(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::exp(x[i] - mx);
      z += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= z;
  }

  // ga = y .* (g - <g, y>)
  static void softmax_pull(const double* y, const double* g, double* ga, std::size_t n) {
    double inner = 0.0;
    for (std::size_t i = 0; i < n; ++i) inner += g[i] * y[i];
    for (std::size_t i = 0; i < n; ++i) ga[i] = y[i] * (g[i] - inner);
  }
};

}  // namespace pen4rec
