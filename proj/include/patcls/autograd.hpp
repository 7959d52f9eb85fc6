#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "patcls/errors.hpp"
#include "patcls/tensor.hpp"

namespace patcls {

/// A named trainable tensor. Models own their parameters; the tape and the
/// optimizer refer to them by address, checkpoints refer to them by name.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value) : name_(std::move(name)), value_(std::move(value)) {}

  const std::string& name() const { return name_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }

 private:
  std::string name_;
  Tensor value_;
};

class Gradients {
 public:
  const Tensor* find(const Parameter& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  // Parameters unreachable from the loss get an explicit zero gradient.
  Tensor get(const Parameter& p) const {
    if (const Tensor* g = find(p)) return *g;
    return Tensor(p.value().shape());
  }

  void put(const Parameter* p, Tensor g) { grads_[p] = std::move(g); }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

struct Var {
  uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Reverse-mode tape. Records one node per primitive op; replaying the
/// records backwards accumulates exact gradients for every parameter leaf.
/// Build a fresh tape per training step; a tape is single-threaded.
class Tape {
 public:
  Var constant(Tensor v) { return emit(std::move(v), {}, nullptr, false); }

  /// Leaf bound to a parameter. Leasing the same parameter twice returns the
  /// same node, so gradients from repeated use accumulate naturally.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = emit(p.value(), {}, nullptr, true);
    nodes_[v.id].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  size_t size() const { return nodes_.size(); }

  // ----- elementwise -----

  Var add(Var a, Var b) {
    const Tensor &x = node(a).value, &y = node(b).value;
    require_same_shape(x, y, "add");
    Tensor out = x;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) += y.at(i);
    return emit(std::move(out), {a, b}, [](Tape& t, const Tensor& g, const Node& n) {
      t.accum(n.parents[0], g);
      t.accum(n.parents[1], g);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &x = node(a).value, &y = node(b).value;
    require_same_shape(x, y, "sub");
    Tensor out = x;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) -= y.at(i);
    return emit(std::move(out), {a, b}, [](Tape& t, const Tensor& g, const Node& n) {
      t.accum(n.parents[0], g);
      Tensor neg = g;
      for (size_t i = 0; i < neg.numel(); ++i) neg.at(i) = -neg.at(i);
      t.accum(n.parents[1], neg);
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &x = node(a).value, &y = node(b).value;
    require_same_shape(x, y, "mul");
    Tensor out = x;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) *= y.at(i);
    return emit(std::move(out), {a, b}, [](Tape& t, const Tensor& g, const Node& n) {
      const Tensor &x = t.node_at(n.parents[0]).value, &y = t.node_at(n.parents[1]).value;
      Tensor ga = g, gb = g;
      for (size_t i = 0; i < g.numel(); ++i) {
        ga.at(i) *= y.at(i);
        gb.at(i) *= x.at(i);
      }
      t.accum(n.parents[0], ga);
      t.accum(n.parents[1], gb);
    });
  }

  Var scale(Var a, double s) {
    Tensor out = node(a).value;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) *= s;
    return emit(std::move(out), {a}, [s](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga = g;
      for (size_t i = 0; i < ga.numel(); ++i) ga.at(i) *= s;
      t.accum(n.parents[0], ga);
    });
  }

  // mat (m,n) + row (n), broadcast over rows. The usual bias add.
  Var add_rowvec(Var mat, Var row) {
    const Tensor &x = node(mat).value, &r = node(row).value;
    if (x.rank() != 2 || r.numel() != x.dim(1))
      throw ShapeMismatch("add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(r.shape()));
    Tensor out = x;
    for (size_t i = 0; i < x.dim(0); ++i)
      for (size_t j = 0; j < x.dim(1); ++j) out(i, j) += r.at(j);
    return emit(std::move(out), {mat, row}, [](Tape& t, const Tensor& g, const Node& n) {
      t.accum(n.parents[0], g);
      Tensor gr(t.node_at(n.parents[1]).value.shape());
      for (size_t i = 0; i < g.dim(0); ++i)
        for (size_t j = 0; j < g.dim(1); ++j) gr.at(j) += g(i, j);
      t.accum(n.parents[1], gr);
    });
  }

  // ----- linear algebra -----

  Var matmul(Var a, Var b) {
    const Tensor &x = node(a).value, &y = node(b).value;
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0))
      throw ShapeMismatch("matmul: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    Tensor out(Shape{x.dim(0), y.dim(1)});
    matmul_into(out, x, y, false, false);
    return emit(std::move(out), {a, b}, [](Tape& t, const Tensor& g, const Node& n_) {
      const Tensor &x = t.node_at(n_.parents[0]).value, &y = t.node_at(n_.parents[1]).value;
      Tensor ga(x.shape()), gb(y.shape());
      matmul_into(ga, g, y, false, true);   // g . y^T
      matmul_into(gb, x, g, true, false);   // x^T . g
      t.accum(n_.parents[0], ga);
      t.accum(n_.parents[1], gb);
    });
  }

  Var transpose(Var a) {
    const Tensor& x = node(a).value;
    if (x.rank() != 2) throw ShapeMismatch("transpose: rank-2 expected, got " + shape_str(x.shape()));
    Tensor out(Shape{x.dim(1), x.dim(0)});
    for (size_t i = 0; i < x.dim(0); ++i)
      for (size_t j = 0; j < x.dim(1); ++j) out(j, i) = x(i, j);
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga(t.node_at(n.parents[0]).value.shape());
      for (size_t i = 0; i < g.dim(0); ++i)
        for (size_t j = 0; j < g.dim(1); ++j) ga(j, i) = g(i, j);
      t.accum(n.parents[0], ga);
    });
  }

  // ----- nonlinearities -----

  Var relu(Var a) {
    Tensor out = node(a).value;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) = out.at(i) > 0.0 ? out.at(i) : 0.0;
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      const Tensor& x = t.node_at(n.parents[0]).value;
      Tensor ga = g;
      for (size_t i = 0; i < ga.numel(); ++i)
        if (x.at(i) <= 0.0) ga.at(i) = 0.0;
      t.accum(n.parents[0], ga);
    });
  }

  Var gelu(Var a) {
    const Tensor& x = node(a).value;
    Tensor out = x;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) = 0.5 * x.at(i) * (1.0 + std::erf(x.at(i) * kInvSqrt2));
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      const Tensor& x = t.node_at(n.parents[0]).value;
      Tensor ga = g;
      for (size_t i = 0; i < ga.numel(); ++i) {
        const double v = x.at(i);
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
        ga.at(i) *= cdf + v * pdf;
      }
      t.accum(n.parents[0], ga);
    });
  }

  Var tanh(Var a) {
    Tensor out = node(a).value;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) = std::tanh(out.at(i));
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      const Tensor& y = n.value;
      Tensor ga = g;
      for (size_t i = 0; i < ga.numel(); ++i) ga.at(i) *= 1.0 - y.at(i) * y.at(i);
      t.accum(n.parents[0], ga);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = node(a).value;
    for (size_t i = 0; i < out.numel(); ++i) out.at(i) = 1.0 / (1.0 + std::exp(-out.at(i)));
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      const Tensor& y = n.value;
      Tensor ga = g;
      for (size_t i = 0; i < ga.numel(); ++i) ga.at(i) *= y.at(i) * (1.0 - y.at(i));
      t.accum(n.parents[0], ga);
    });
  }

  // Row-wise softmax; a 1-D tensor is one row. Max-shifted for stability, so
  // adding a constant to the logits leaves the output unchanged.
  Var softmax(Var a) {
    const Tensor& x = node(a).value;
    Tensor out = x;
    const size_t rows = x.rank() == 2 ? x.dim(0) : 1, cols = x.rank() == 2 ? x.dim(1) : x.numel();
    for (size_t i = 0; i < rows; ++i) softmax_row(&out.at(i * cols), cols);
    return emit(std::move(out), {a}, [rows, cols](Tape& t, const Tensor& g, const Node& n) {
      const Tensor& y = n.value;
      Tensor ga = g;
      for (size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (size_t j = 0; j < cols; ++j) dot += g.at(i * cols + j) * y.at(i * cols + j);
        for (size_t j = 0; j < cols; ++j)
          ga.at(i * cols + j) = y.at(i * cols + j) * (g.at(i * cols + j) - dot);
      }
      t.accum(n.parents[0], ga);
    });
  }

  // Row-wise layer norm with learned gain and bias (both shape (n)).
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-12) {
    const Tensor &x = node(a).value, &w = node(gain).value, &b = node(bias).value;
    if (x.rank() != 2 || w.numel() != x.dim(1) || b.numel() != x.dim(1))
      throw ShapeMismatch("layer_norm: " + shape_str(x.shape()) + " gain " + shape_str(w.shape()));
    const size_t m = x.dim(0), n = x.dim(1);
    Tensor out(x.shape()), xhat(x.shape()), inv_std(Shape{m});
    for (size_t i = 0; i < m; ++i) {
      double mean = 0.0;
      for (size_t j = 0; j < n; ++j) mean += x(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std.at(i) = is;
      for (size_t j = 0; j < n; ++j) {
        xhat(i, j) = (x(i, j) - mean) * is;
        out(i, j) = xhat(i, j) * w.at(j) + b.at(j);
      }
    }
    return emit(std::move(out), {a, gain, bias},
                [xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](Tape& t, const Tensor& g, const Node& nd) {
                  const Tensor& w = t.node_at(nd.parents[1]).value;
                  Tensor ga(t.node_at(nd.parents[0]).value.shape());
                  Tensor gw(w.shape()), gb(w.shape());
                  for (size_t i = 0; i < m; ++i) {
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (size_t j = 0; j < n; ++j) {
                      const double gh = g(i, j) * w.at(j);
                      mean_gh += gh;
                      mean_ghx += gh * xhat(i, j);
                      gw.at(j) += g(i, j) * xhat(i, j);
                      gb.at(j) += g(i, j);
                    }
                    mean_gh /= static_cast<double>(n);
                    mean_ghx /= static_cast<double>(n);
                    for (size_t j = 0; j < n; ++j) {
                      const double gh = g(i, j) * w.at(j);
                      ga(i, j) = (gh - mean_gh - xhat(i, j) * mean_ghx) * inv_std.at(i);
                    }
                  }
                  t.accum(nd.parents[0], ga);
                  t.accum(nd.parents[1], gw);
                  t.accum(nd.parents[2], gb);
                });
  }

  // ----- convolution and pooling -----

  // Valid 2-D convolution, stride 1: input (H,W), filters (K,fh,fw), bias (K)
  // -> (K, H-fh+1, W-fw+1).
  Var conv2d_valid(Var input, Var filters, Var bias) {
    const Tensor &x = node(input).value, &f = node(filters).value, &b = node(bias).value;
    if (x.rank() != 2 || f.rank() != 3 || b.numel() != f.dim(0) || f.dim(1) > x.dim(0) ||
        f.dim(2) > x.dim(1))
      throw ShapeMismatch("conv2d_valid: input " + shape_str(x.shape()) + " filters " +
                          shape_str(f.shape()));
    const size_t K = f.dim(0), fh = f.dim(1), fw = f.dim(2);
    const size_t oh = x.dim(0) - fh + 1, ow = x.dim(1) - fw + 1;
    Tensor out(Shape{K, oh, ow});
    for (size_t k = 0; k < K; ++k)
      for (size_t i = 0; i < oh; ++i)
        for (size_t j = 0; j < ow; ++j) {
          double s = b.at(k);
          for (size_t u = 0; u < fh; ++u)
            for (size_t v = 0; v < fw; ++v) s += x(i + u, j + v) * f(k, u, v);
          out(k, i, j) = s;
        }
    return emit(std::move(out), {input, filters, bias},
                [K, fh, fw, oh, ow](Tape& t, const Tensor& g, const Node& n) {
                  const Tensor &x = t.node_at(n.parents[0]).value, &f = t.node_at(n.parents[1]).value;
                  Tensor gx(x.shape()), gf(f.shape()), gb(Shape{K});
                  for (size_t k = 0; k < K; ++k)
                    for (size_t i = 0; i < oh; ++i)
                      for (size_t j = 0; j < ow; ++j) {
                        const double gv = g(k, i, j);
                        gb.at(k) += gv;
                        for (size_t u = 0; u < fh; ++u)
                          for (size_t v = 0; v < fw; ++v) {
                            gx(i + u, j + v) += gv * f(k, u, v);
                            gf(k, u, v) += gv * x(i + u, j + v);
                          }
                      }
                  t.accum(n.parents[0], gx);
                  t.accum(n.parents[1], gf);
                  t.accum(n.parents[2], gb);
                });
  }

  // Max over the whole tensor -> scalar. Gradient routes to the first
  // occurrence of the max.
  Var maxpool_full(Var a) {
    const Tensor& x = node(a).value;
    if (x.numel() == 0) throw ShapeMismatch("maxpool_full: empty tensor");
    size_t arg = 0;
    for (size_t i = 1; i < x.numel(); ++i)
      if (x.at(i) > x.at(arg)) arg = i;
    return emit(Tensor::scalar(x.at(arg)), {a}, [arg](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga(t.node_at(n.parents[0]).value.shape());
      ga.at(arg) = g.item();
      t.accum(n.parents[0], ga);
    });
  }

  // (K, h, w) -> (K): full max pool per leading map.
  Var maxpool_per_map(Var a) {
    const Tensor& x = node(a).value;
    if (x.rank() != 3) throw ShapeMismatch("maxpool_per_map: rank-3 expected, got " + shape_str(x.shape()));
    const size_t K = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor out(Shape{K});
    std::vector<size_t> args(K);
    for (size_t k = 0; k < K; ++k) {
      size_t arg = k * hw;
      for (size_t i = 1; i < hw; ++i)
        if (x.at(k * hw + i) > x.at(arg)) arg = k * hw + i;
      args[k] = arg;
      out.at(k) = x.at(arg);
    }
    return emit(std::move(out), {a}, [args = std::move(args), K](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga(t.node_at(n.parents[0]).value.shape());
      for (size_t k = 0; k < K; ++k) ga.at(args[k]) = g.at(k);
      t.accum(n.parents[0], ga);
    });
  }

  // ----- gathers and losses -----

  // Row gather: table (V,H), ids -> (ids.size(), H). Also serves as the
  // embedding lookup; duplicate ids accumulate gradient on the same row.
  Var embedding_lookup(Var table, std::vector<int> ids) {
    const Tensor& tb = node(table).value;
    if (tb.rank() != 2) throw ShapeMismatch("embedding_lookup: table " + shape_str(tb.shape()));
    const size_t H = tb.dim(1);
    for (int id : ids)
      if (id < 0 || static_cast<size_t>(id) >= tb.dim(0))
        throw TokenOutOfRange("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                              std::to_string(tb.dim(0)) + ")");
    Tensor out(Shape{ids.size(), H});
    for (size_t i = 0; i < ids.size(); ++i)
      for (size_t j = 0; j < H; ++j) out(i, j) = tb(static_cast<size_t>(ids[i]), j);
    return emit(std::move(out), {table}, [ids = std::move(ids), H](Tape& t, const Tensor& g, const Node& n) {
      Tensor gt(t.node_at(n.parents[0]).value.shape());
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < H; ++j) gt(static_cast<size_t>(ids[i]), j) += g(i, j);
      t.accum(n.parents[0], gt);
    });
  }

  // Mean cross-entropy of softmax(logits) against integer targets.
  // logits (n,C); loss = mean_i (logsumexp(row_i) - row_i[target_i]).
  Var cross_entropy(Var logits, std::vector<int> targets) {
    const Tensor& x = node(logits).value;
    if (x.rank() != 2 || targets.size() != x.dim(0))
      throw ShapeMismatch("cross_entropy: logits " + shape_str(x.shape()) + " targets " +
                          std::to_string(targets.size()));
    const size_t n = x.dim(0), C = x.dim(1);
    for (int tgt : targets)
      if (tgt < 0 || static_cast<size_t>(tgt) >= C)
        throw LabelOutOfRange("cross_entropy: target " + std::to_string(tgt) + " not in [0," +
                              std::to_string(C) + ")");
    double loss = 0.0;
    Tensor probs(x.shape());
    for (size_t i = 0; i < n; ++i) {
      double mx = x(i, 0);
      for (size_t j = 1; j < C; ++j) mx = std::max(mx, x(i, j));
      double z = 0.0;
      for (size_t j = 0; j < C; ++j) z += std::exp(x(i, j) - mx);
      const double lse = std::log(z) + mx;
      loss += lse - x(i, static_cast<size_t>(targets[i]));
      for (size_t j = 0; j < C; ++j) probs(i, j) = std::exp(x(i, j) - lse);
    }
    loss /= static_cast<double>(n);
    return emit(Tensor::scalar(loss), {logits},
                [probs = std::move(probs), targets = std::move(targets), n, C](Tape& t, const Tensor& g, const Node& nd) {
                  Tensor ga(probs.shape());
                  const double gs = g.item() / static_cast<double>(n);
                  for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < C; ++j)
                      ga(i, j) = gs * (probs(i, j) - (static_cast<size_t>(targets[i]) == j ? 1.0 : 0.0));
                  t.accum(nd.parents[0], ga);
                });
  }

  // ----- slicing, concatenation, reductions -----

  Var slice_rows(Var a, size_t from, size_t to) {
    const Tensor& x = node(a).value;
    if (x.rank() != 2 || from >= to || to > x.dim(0))
      throw ShapeMismatch("slice_rows [" + std::to_string(from) + "," + std::to_string(to) + ") of " +
                          shape_str(x.shape()));
    const size_t n = x.dim(1);
    Tensor out(Shape{to - from, n});
    for (size_t i = from; i < to; ++i)
      for (size_t j = 0; j < n; ++j) out(i - from, j) = x(i, j);
    return emit(std::move(out), {a}, [from, to, n](Tape& t, const Tensor& g, const Node& nd) {
      Tensor ga(t.node_at(nd.parents[0]).value.shape());
      for (size_t i = from; i < to; ++i)
        for (size_t j = 0; j < n; ++j) ga(i, j) = g(i - from, j);
      t.accum(nd.parents[0], ga);
    });
  }

  Var slice_cols(Var a, size_t from, size_t to) {
    const Tensor& x = node(a).value;
    if (x.rank() != 2 || from >= to || to > x.dim(1))
      throw ShapeMismatch("slice_cols [" + std::to_string(from) + "," + std::to_string(to) + ") of " +
                          shape_str(x.shape()));
    const size_t m = x.dim(0);
    Tensor out(Shape{m, to - from});
    for (size_t i = 0; i < m; ++i)
      for (size_t j = from; j < to; ++j) out(i, j - from) = x(i, j);
    return emit(std::move(out), {a}, [from, to, m](Tape& t, const Tensor& g, const Node& nd) {
      Tensor ga(t.node_at(nd.parents[0]).value.shape());
      for (size_t i = 0; i < m; ++i)
        for (size_t j = from; j < to; ++j) ga(i, j) = g(i, j - from);
      t.accum(nd.parents[0], ga);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
    const size_t m = node(parts[0]).value.dim(0);
    size_t total = 0;
    for (Var p : parts) {
      const Tensor& x = node(p).value;
      if (x.rank() != 2 || x.dim(0) != m) throw ShapeMismatch("concat_cols: ragged part " + shape_str(x.shape()));
      total += x.dim(1);
    }
    Tensor out(Shape{m, total});
    size_t off = 0;
    std::vector<size_t> offs;
    for (Var p : parts) {
      const Tensor& x = node(p).value;
      offs.push_back(off);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < x.dim(1); ++j) out(i, off + j) = x(i, j);
      off += x.dim(1);
    }
    return emit(std::move(out), parts, [offs = std::move(offs), m](Tape& t, const Tensor& g, const Node& nd) {
      for (size_t k = 0; k < nd.parents.size(); ++k) {
        const Tensor& x = t.node_at(nd.parents[k]).value;
        Tensor ga(x.shape());
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < x.dim(1); ++j) ga(i, j) = g(i, offs[k] + j);
        t.accum(nd.parents[k], ga);
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
    const size_t n = node(parts[0]).value.dim(1);
    size_t total = 0;
    for (Var p : parts) {
      const Tensor& x = node(p).value;
      if (x.rank() != 2 || x.dim(1) != n) throw ShapeMismatch("concat_rows: ragged part " + shape_str(x.shape()));
      total += x.dim(0);
    }
    Tensor out(Shape{total, n});
    size_t off = 0;
    std::vector<size_t> offs;
    for (Var p : parts) {
      const Tensor& x = node(p).value;
      offs.push_back(off);
      for (size_t i = 0; i < x.dim(0); ++i)
        for (size_t j = 0; j < n; ++j) out(off + i, j) = x(i, j);
      off += x.dim(0);
    }
    return emit(std::move(out), parts, [offs = std::move(offs), n](Tape& t, const Tensor& g, const Node& nd) {
      for (size_t k = 0; k < nd.parents.size(); ++k) {
        const Tensor& x = t.node_at(nd.parents[k]).value;
        Tensor ga(x.shape());
        for (size_t i = 0; i < x.dim(0); ++i)
          for (size_t j = 0; j < n; ++j) ga(i, j) = g(offs[k] + i, j);
        t.accum(nd.parents[k], ga);
      }
    });
  }

  // Same data, new shape (row-major order preserved).
  Var reshape(Var a, Shape shape) {
    const Tensor& x = node(a).value;
    if (Tensor::numel_of(shape) != x.numel())
      throw ShapeMismatch("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor out(shape);
    for (size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i);
    return emit(std::move(out), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga(t.node_at(n.parents[0]).value.shape());
      for (size_t i = 0; i < ga.numel(); ++i) ga.at(i) = g.at(i);
      t.accum(n.parents[0], ga);
    });
  }

  Var sum_all(Var a) {
    const Tensor& x = node(a).value;
    double s = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) s += x.at(i);
    return emit(Tensor::scalar(s), {a}, [](Tape& t, const Tensor& g, const Node& n) {
      Tensor ga(t.node_at(n.parents[0]).value.shape(), g.item());
      t.accum(n.parents[0], ga);
    });
  }

  // (m,n) -> (1,n), mean over rows.
  Var mean_rows(Var a) {
    const Tensor& x = node(a).value;
    if (x.rank() != 2) throw ShapeMismatch("mean_rows: rank-2 expected, got " + shape_str(x.shape()));
    const size_t m = x.dim(0), n = x.dim(1);
    Tensor out(Shape{1, n});
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) out(0, j) += x(i, j) / static_cast<double>(m);
    return emit(std::move(out), {a}, [m, n](Tape& t, const Tensor& g, const Node& nd) {
      Tensor ga(t.node_at(nd.parents[0]).value.shape());
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) ga(i, j) = g(0, j) / static_cast<double>(m);
      t.accum(nd.parents[0], ga);
    });
  }

  Var mean_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeMismatch("mean_scalars: no inputs");
    double s = 0.0;
    for (Var v : xs) s += node(v).value.item();
    const size_t k = xs.size();
    return emit(Tensor::scalar(s / static_cast<double>(k)), xs, [k](Tape& t, const Tensor& g, const Node& n) {
      const double gv = g.item() / static_cast<double>(k);
      for (uint32_t pid : n.parents) t.accum(pid, Tensor::scalar(gv));
    });
  }

  // ----- reverse pass -----

  /// Gradients of a scalar loss with respect to every parameter leased onto
  /// this tape. Nodes created after the loss are ignored.
  Gradients backward(Var loss) {
    if (!loss.valid() || loss.id >= nodes_.size()) throw NotOnTape("backward: loss is not on this tape");
    if (nodes_[loss.id].value.numel() != 1)
      throw ShapeMismatch("backward: loss must be scalar, got " +
                          shape_str(nodes_[loss.id].value.shape()));
    grads_.assign(nodes_.size(), Tensor{});
    grads_[loss.id] = Tensor(nodes_[loss.id].value.shape(), 1.0);
    for (size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !grads_[i].defined() || !n.back) continue;
      n.back(*this, grads_[i], n);
    }
    Gradients out;
    for (auto& [p, id] : param_nodes_)
      if (grads_[id].defined()) out.put(p, std::move(grads_[id]));
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<uint32_t> parents;
    std::function<void(Tape&, const Tensor&, const Node&)> back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  static constexpr double kInvSqrt2 = 0.7071067811865476;
  static constexpr double kInvSqrt2Pi = 0.3989422804014327;

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw NotOnTape("var is not on this tape");
    return nodes_[v.id];
  }
  const Node& node_at(uint32_t id) const { return nodes_[id]; }

  template <class F>
  Var emit(Tensor value, const std::vector<Var>& parents, F&& back, bool param_leaf = false) {
    Node n;
#ifndef NDEBUG
    // Forward ops on finite inputs must stay finite; cheap to verify in
    // debug builds only.
    assert(value.all_finite());
#endif
    n.value = std::move(value);
    n.parents.reserve(parents.size());
    bool needs = param_leaf;
    for (Var p : parents) {
      if (!p.valid() || p.id >= nodes_.size()) throw NotOnTape("op input is not on this tape");
      n.parents.push_back(p.id);
      needs = needs || nodes_[p.id].needs_grad;
    }
    n.needs_grad = needs;
    if constexpr (!std::is_same_v<std::decay_t<F>, std::nullptr_t>) n.back = std::forward<F>(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<uint32_t>(nodes_.size() - 1)};
  }

  void accum(uint32_t id, const Tensor& g) {
    if (!nodes_[id].needs_grad) return;
    if (!grads_[id].defined()) {
      grads_[id] = g;
      return;
    }
    Tensor& acc = grads_[id];
    for (size_t i = 0; i < acc.numel(); ++i) acc.at(i) += g.at(i);
  }

  static void softmax_row(double* row, size_t n) {
    double mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (size_t j = 0; j < n; ++j) row[j] /= z;
  }

  // C (+)= A.B with optional transposes, ikj loop order.
  static void matmul_into(Tensor& c, const Tensor& a, const Tensor& b, bool ta, bool tb) {
    const size_t m = ta ? a.dim(1) : a.dim(0);
    const size_t k = ta ? a.dim(0) : a.dim(1);
    const size_t n = tb ? b.dim(0) : b.dim(1);
    if (!ta && !tb) {
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          const double av = a(i, p);
          if (av == 0.0) continue;
          for (size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
        }
    } else if (!ta && tb) {
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
          c(i, j) += s;
        }
    } else if (ta && !tb) {
      for (size_t p = 0; p < k; ++p)
        for (size_t i = 0; i < m; ++i) {
          const double av = a(p, i);
          if (av == 0.0) continue;
          for (size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
        }
    } else {
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (size_t p = 0; p < k; ++p) s += a(p, i) * b(j, p);
          c(i, j) += s;
        }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<Parameter*, uint32_t> param_nodes_;
};

}  // namespace patcls
