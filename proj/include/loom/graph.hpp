// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "loom/common.hpp"
#include "loom/mask.hpp"
#include "loom/param_store.hpp"
#include "loom/tensor.hpp"

namespace loom {

// ===========================================================================
// Static computation graph with reverse-mode differentiation.
//
// A Graph is an ordered list of primitive nodes; node order is topological
// by construction (a node may only reference earlier nodes). Leaves are
// inputs (fed per call), parameters (bound by name to a ParamStore entry)
// and constants (baked into the graph). Graphs are immutable once built and
// reusable across parameter values, so callers cache them per shape.
// ===========================================================================

enum class OpKind : uint8_t {
  input,
  param,
  constant,
  matmul,            // optional operand transposes
  add,               // broadcast: equal shapes, trailing row vector, or scalar
  mul,               // same broadcast rules as add
  relu,
  softmax,           // row-wise over the last dimension
  layer_norm,        // row-wise, pre gain/bias
  embedding_lookup,  // (table [V,d], ids [n]) -> [n,d]
  reshape,
  slice_cols,        // contiguous column range of a 2-D tensor
  concat_cols,       // column-wise concatenation of 2-D tensors
  reduce_sum,        // -> [1]
  reduce_mean,       // -> [1]
  cross_entropy,     // (logits [t,V], target ids [t]) -> [1], mean NLL
  kl_divergence,     // (logits [t,V], probs [t,V]) -> [1], mean KL(p || softmax)
};

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::param: return "param";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::reshape: return "reshape";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::kl_divergence: return "kl_divergence";
  }
  return "?";
}

struct Node {
  Node(OpKind k, std::string n, std::vector<int> in, Shape s)
      : kind(k), name(std::move(n)), inputs(std::move(in)), shape(std::move(s)) {}

  OpKind kind;
  std::string name;
  std::vector<int> inputs;
  Shape shape;  // output shape, fixed at build time

  // op attributes
  bool trans_a = false, trans_b = false;  // matmul
  double eps = 0.0;                       // layer_norm
  double label_smoothing = 0.0;           // cross_entropy
  int64_t col_begin = 0, col_end = 0;     // slice_cols
  std::string param_name;                 // param binding
  Tensor value;                           // constant payload
};

class Graph {
public:
  int add_input(const std::string& name, Shape shape) {
    Node n{OpKind::input, name, {}, std::move(shape)};
    return push(std::move(n));
  }

  int add_param(const std::string& name, const std::string& param_name, Shape shape) {
    Node n{OpKind::param, name, {}, std::move(shape)};
    n.param_name = param_name;
    return push(std::move(n));
  }

  int add_constant(const std::string& name, Tensor value) {
    Node n{OpKind::constant, name, {}, value.shape};
    n.value = std::move(value);
    return push(std::move(n));
  }

  int add_matmul(const std::string& name, int a, int b, bool trans_a = false,
                 bool trans_b = false) {
    const Shape& sa = at(a).shape;
    const Shape& sb = at(b).shape;
    require(name, sa.size() == 2 && sb.size() == 2, "matmul operands must be 2-D");
    int64_t m = trans_a ? sa[1] : sa[0];
    int64_t ka = trans_a ? sa[0] : sa[1];
    int64_t kb = trans_b ? sb[1] : sb[0];
    int64_t nn = trans_b ? sb[0] : sb[1];
    require(name, ka == kb, "matmul inner dimensions disagree: " + shape_str(sa) +
                                (trans_a ? "^T" : "") + " x " + shape_str(sb) +
                                (trans_b ? "^T" : ""));
    Node n{OpKind::matmul, name, {a, b}, {m, nn}};
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    return push(std::move(n));
  }

  int add_add(const std::string& name, int a, int b) { return binary(OpKind::add, name, a, b); }
  int add_mul(const std::string& name, int a, int b) { return binary(OpKind::mul, name, a, b); }

  int add_relu(const std::string& name, int a) {
    return push(Node{OpKind::relu, name, {a}, at(a).shape});
  }

  int add_softmax(const std::string& name, int a) {
    return push(Node{OpKind::softmax, name, {a}, at(a).shape});
  }

  int add_layer_norm(const std::string& name, int a, double eps) {
    Node n{OpKind::layer_norm, name, {a}, at(a).shape};
    n.eps = eps;
    return push(std::move(n));
  }

  int add_embedding_lookup(const std::string& name, int table, int ids) {
    const Shape& st = at(table).shape;
    const Shape& si = at(ids).shape;
    require(name, st.size() == 2, "embedding table must be 2-D");
    require(name, si.size() == 1, "embedding ids must be 1-D");
    return push(Node{OpKind::embedding_lookup, name, {table, ids}, {si[0], st[1]}});
  }

  int add_reshape(const std::string& name, int a, Shape shape) {
    require(name, numel(shape) == numel(at(a).shape), "reshape changes element count");
    return push(Node{OpKind::reshape, name, {a}, std::move(shape)});
  }

  int add_slice_cols(const std::string& name, int a, int64_t col_begin, int64_t col_end) {
    const Shape& s = at(a).shape;
    require(name, s.size() == 2, "slice_cols operand must be 2-D");
    require(name, 0 <= col_begin && col_begin < col_end && col_end <= s[1],
            "column range out of bounds");
    Node n{OpKind::slice_cols, name, {a}, {s[0], col_end - col_begin}};
    n.col_begin = col_begin;
    n.col_end = col_end;
    return push(std::move(n));
  }

  int add_concat_cols(const std::string& name, std::vector<int> parts) {
    require(name, !parts.empty(), "concat of zero tensors");
    int64_t rows = at(parts[0]).shape.size() == 2 ? at(parts[0]).shape[0] : -1;
    require(name, rows > 0, "concat_cols operands must be 2-D");
    int64_t cols = 0;
    for (int p : parts) {
      const Shape& s = at(p).shape;
      require(name, s.size() == 2 && s[0] == rows, "concat_cols row counts disagree");
      cols += s[1];
    }
    return push(Node{OpKind::concat_cols, name, std::move(parts), {rows, cols}});
  }

  int add_reduce_sum(const std::string& name, int a) {
    return push(Node{OpKind::reduce_sum, name, {a}, {1}});
  }

  int add_reduce_mean(const std::string& name, int a) {
    return push(Node{OpKind::reduce_mean, name, {a}, {1}});
  }

  int add_cross_entropy(const std::string& name, int logits, int targets,
                        double label_smoothing = 0.0) {
    const Shape& sl = at(logits).shape;
    const Shape& st = at(targets).shape;
    require(name, sl.size() == 2, "cross_entropy logits must be 2-D");
    require(name, st.size() == 1 && st[0] == sl[0],
            "cross_entropy needs one target id per logits row");
    Node n{OpKind::cross_entropy, name, {logits, targets}, {1}};
    n.label_smoothing = label_smoothing;
    return push(std::move(n));
  }

  int add_kl_divergence(const std::string& name, int logits, int probs) {
    require(name, at(logits).shape.size() == 2 && at(probs).shape == at(logits).shape,
            "kl_divergence operands must be 2-D with equal shapes");
    return push(Node{OpKind::kl_divergence, name, {logits, probs}, {1}});
  }

  const Node& at(int i) const { return nodes_[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Index of the named node, -1 if absent.
  int find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
  }

  const std::vector<Node>& nodes() const { return nodes_; }

private:
  int binary(OpKind kind, const std::string& name, int a, int b) {
    const Shape& sa = at(a).shape;
    const Shape& sb = at(b).shape;
    bool ok = sa == sb || broadcast_row(sa, sb) || numel(sb) == 1;
    require(name, ok, std::string(op_kind_name(kind)) + " shapes incompatible: " +
                          shape_str(sa) + " vs " + shape_str(sb));
    return push(Node{kind, name, {a, b}, sa});
  }

  static bool broadcast_row(const Shape& a, const Shape& b) {
    return b.size() == 1 && a.size() == 2 && b[0] == a[1];
  }

  void require(const std::string& name, bool cond, const std::string& msg) const {
    if (!cond) throw ShapeError("node '" + name + "': " + msg);
  }

  int push(Node n) {
    for (int i : n.inputs)
      if (i < 0 || i >= size())
        throw ContractError("node '" + n.name + "' references out-of-range input");
    if (n.name.empty())
      n.name = std::string(op_kind_name(n.kind)) + "#" + std::to_string(size());
    if (by_name_.count(n.name))
      throw ContractError("duplicate node name '" + n.name + "'");
    by_name_[n.name] = size();
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> by_name_;
};

using NamedTensors = std::unordered_map<std::string, Tensor>;

struct ForwardOptions {
  // When set, every parameter reads as param ⊙ mask: pruned weights are 0.
  const BinaryMask* param_mask = nullptr;
};

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------
namespace detail {

inline void matmul_kernel(const double* a, int64_t ra, int64_t ca, bool ta, const double* b,
                          int64_t rb, int64_t cb, bool tb, double* c) {
  const int64_t m = ta ? ca : ra;
  const int64_t k = ta ? ra : ca;
  const int64_t n = tb ? rb : cb;
  std::fill(c, c + m * n, 0.0);
  if (!ta && !tb) {
    for (int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + p * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (int64_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] = s;
      }
    }
  } else if (ta && !tb) {
    for (int64_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (int64_t i = 0; i < m; ++i) {
        const double av = ap[i];
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int64_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      for (int64_t j = 0; j < n; ++j) {
        const double bv = b[j * k + p];
        for (int64_t i = 0; i < m; ++i) c[i * n + j] += ap[i] * bv;
      }
    }
  }
}

inline void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = xr[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      denom += yr[j];
    }
    const double inv = 1.0 / denom;
    for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

// Row-wise log-sum-exp, shared by the NLL-style losses.
inline double logsumexp_row(const double* x, int64_t cols) {
  double mx = x[0];
  for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (int64_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
  return mx + std::log(s);
}

inline int64_t id_at(const Tensor& t, int64_t i, int64_t limit, const std::string& node) {
  const double v = t.at(i);
  const double r = std::floor(v);
  if (r != v || r < 0 || r >= static_cast<double>(limit))
    throw ContractError("node '" + node + "': id " + std::to_string(v) +
                        " out of range [0," + std::to_string(limit) + ")");
  return static_cast<int64_t>(r);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

// Per-node results of one forward pass. Leaf nodes alias caller storage;
// computed nodes own theirs.
class GraphValues {
public:
  explicit GraphValues(int n) : owned_(n), ref_(n, nullptr) {}
  const Tensor& at(int i) const { return *ref_[static_cast<size_t>(i)]; }
  void set_ref(int i, const Tensor* t) { ref_[static_cast<size_t>(i)] = t; }
  Tensor& own(int i) {
    ref_[static_cast<size_t>(i)] = &owned_[static_cast<size_t>(i)];
    return owned_[static_cast<size_t>(i)];
  }

private:
  std::vector<Tensor> owned_;
  std::vector<const Tensor*> ref_;
};

inline GraphValues forward_all(const Graph& g, const ParamStore& params,
                               const NamedTensors& inputs, const ForwardOptions& opts = {}) {
  GraphValues vals(g.size());
  for (int i = 0; i < g.size(); ++i) {
    const Node& n = g.at(i);
    switch (n.kind) {
      case OpKind::input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end())
          throw ContractError("missing input tensor '" + n.name + "'");
        if (it->second.shape != n.shape)
          throw ShapeError("node '" + n.name + "': input shape " + shape_str(it->second.shape) +
                           " does not match declared " + shape_str(n.shape));
        vals.set_ref(i, &it->second);
        break;
      }
      case OpKind::param: {
        const Tensor& p = params.at(n.param_name);
        if (p.shape != n.shape)
          throw ShapeError("node '" + n.name + "': parameter '" + n.param_name + "' has shape " +
                           shape_str(p.shape) + ", graph declares " + shape_str(n.shape));
        if (opts.param_mask != nullptr) {
          const Tensor& m = opts.param_mask->at(n.param_name);
          Tensor& out = vals.own(i);
          out.shape = p.shape;
          out.values.resize(p.values.size());
          for (size_t k = 0; k < p.values.size(); ++k) out.values[k] = p.values[k] * m.values[k];
        } else {
          vals.set_ref(i, &p);
        }
        break;
      }
      case OpKind::constant:
        vals.set_ref(i, &n.value);
        break;
      case OpKind::matmul: {
        const Tensor& a = vals.at(n.inputs[0]);
        const Tensor& b = vals.at(n.inputs[1]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(static_cast<size_t>(numel(n.shape)));
        detail::matmul_kernel(a.values.data(), a.shape[0], a.shape[1], n.trans_a,
                              b.values.data(), b.shape[0], b.shape[1], n.trans_b,
                              out.values.data());
        break;
      }
      case OpKind::add:
      case OpKind::mul: {
        const Tensor& a = vals.at(n.inputs[0]);
        const Tensor& b = vals.at(n.inputs[1]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(a.values.size());
        const bool is_add = n.kind == OpKind::add;
        if (b.size() == 1) {
          const double bv = b.at(0);
          for (size_t k = 0; k < a.values.size(); ++k)
            out.values[k] = is_add ? a.values[k] + bv : a.values[k] * bv;
        } else if (b.shape == a.shape) {
          for (size_t k = 0; k < a.values.size(); ++k)
            out.values[k] = is_add ? a.values[k] + b.values[k] : a.values[k] * b.values[k];
        } else {  // row-vector broadcast over a 2-D tensor
          const int64_t cols = a.shape[1];
          for (int64_t r = 0; r < a.shape[0]; ++r)
            for (int64_t cidx = 0; cidx < cols; ++cidx) {
              const size_t k = static_cast<size_t>(r * cols + cidx);
              out.values[k] = is_add ? a.values[k] + b.values[static_cast<size_t>(cidx)]
                                     : a.values[k] * b.values[static_cast<size_t>(cidx)];
            }
        }
        break;
      }
      case OpKind::relu: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(a.values.size());
        for (size_t k = 0; k < a.values.size(); ++k)
          out.values[k] = a.values[k] > 0.0 ? a.values[k] : 0.0;
        break;
      }
      case OpKind::softmax: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(a.values.size());
        detail::softmax_rows(a.values.data(), out.values.data(), a.rows(), a.cols());
        break;
      }
      case OpKind::layer_norm: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(a.values.size());
        const int64_t rows = a.rows(), cols = a.cols();
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = a.values.data() + r * cols;
          double* yr = out.values.data() + r * cols;
          double mean = 0.0;
          for (int64_t j = 0; j < cols; ++j) mean += xr[j];
          mean /= static_cast<double>(cols);
          double var = 0.0;
          for (int64_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
          var /= static_cast<double>(cols);
          const double inv = 1.0 / std::sqrt(var + n.eps);
          for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * inv;
        }
        break;
      }
      case OpKind::embedding_lookup: {
        const Tensor& table = vals.at(n.inputs[0]);
        const Tensor& ids = vals.at(n.inputs[1]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        const int64_t dim = table.shape[1];
        out.values.resize(static_cast<size_t>(ids.size() * dim));
        for (int64_t r = 0; r < ids.size(); ++r) {
          const int64_t id = detail::id_at(ids, r, table.shape[0], n.name);
          std::copy_n(table.values.data() + id * dim, dim, out.values.data() + r * dim);
        }
        break;
      }
      case OpKind::reshape: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values = a.values;
        break;
      }
      case OpKind::slice_cols: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        const int64_t w = n.col_end - n.col_begin;
        out.values.resize(static_cast<size_t>(a.shape[0] * w));
        for (int64_t r = 0; r < a.shape[0]; ++r)
          std::copy_n(a.values.data() + r * a.shape[1] + n.col_begin, w,
                      out.values.data() + r * w);
        break;
      }
      case OpKind::concat_cols: {
        Tensor& out = vals.own(i);
        out.shape = n.shape;
        out.values.resize(static_cast<size_t>(numel(n.shape)));
        const int64_t rows = n.shape[0], cols = n.shape[1];
        int64_t off = 0;
        for (int p : n.inputs) {
          const Tensor& a = vals.at(p);
          for (int64_t r = 0; r < rows; ++r)
            std::copy_n(a.values.data() + r * a.shape[1], a.shape[1],
                        out.values.data() + r * cols + off);
          off += a.shape[1];
        }
        break;
      }
      case OpKind::reduce_sum:
      case OpKind::reduce_mean: {
        const Tensor& a = vals.at(n.inputs[0]);
        double s = 0.0;
        for (double v : a.values) s += v;
        if (n.kind == OpKind::reduce_mean) s /= static_cast<double>(a.size());
        Tensor& out = vals.own(i);
        out.shape = {1};
        out.values.assign(1, s);
        break;
      }
      case OpKind::cross_entropy: {
        const Tensor& logits = vals.at(n.inputs[0]);
        const Tensor& targets = vals.at(n.inputs[1]);
        const int64_t rows = logits.shape[0], cols = logits.shape[1];
        const double eps = n.label_smoothing;
        double total = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = logits.values.data() + r * cols;
          const int64_t y = detail::id_at(targets, r, cols, n.name);
          const double lse = detail::logsumexp_row(xr, cols);
          if (eps == 0.0) {
            total += lse - xr[y];
          } else {
            double mean_logit = 0.0;
            for (int64_t j = 0; j < cols; ++j) mean_logit += xr[j];
            mean_logit /= static_cast<double>(cols);
            total += lse - (1.0 - eps) * xr[y] - eps * mean_logit;
          }
        }
        Tensor& out = vals.own(i);
        out.shape = {1};
        out.values.assign(1, total / static_cast<double>(rows));
        break;
      }
      case OpKind::kl_divergence: {
        const Tensor& logits = vals.at(n.inputs[0]);
        const Tensor& probs = vals.at(n.inputs[1]);
        const int64_t rows = logits.shape[0], cols = logits.shape[1];
        double total = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = logits.values.data() + r * cols;
          const double* pr = probs.values.data() + r * cols;
          const double lse = detail::logsumexp_row(xr, cols);
          double row = 0.0, mass = 0.0;
          for (int64_t j = 0; j < cols; ++j) {
            if (pr[j] < 0.0)
              throw ContractError("node '" + n.name + "': negative reference probability");
            mass += pr[j];
            if (pr[j] > 0.0) row += pr[j] * (std::log(pr[j]) - (xr[j] - lse));
          }
          if (std::abs(mass - 1.0) > 1e-6)
            throw ContractError("node '" + n.name + "': reference row does not sum to 1");
          total += row;
        }
        Tensor& out = vals.own(i);
        out.shape = {1};
        out.values.assign(1, total / static_cast<double>(rows));
        break;
      }
    }
    // Fail fast on the first non-finite value, naming the node.
    for (double v : vals.at(i).values)
      if (!std::isfinite(v))
        throw NumericError("non-finite value in node '" + n.name + "' (" +
                           op_kind_name(n.kind) + ")");
  }
  return vals;
}

// Outputs for the requested node names.
inline NamedTensors forward(const Graph& g, const ParamStore& params, const NamedTensors& inputs,
                            const std::vector<std::string>& requested,
                            const ForwardOptions& opts = {}) {
  GraphValues vals = forward_all(g, params, inputs, opts);
  NamedTensors out;
  for (const auto& name : requested) {
    int idx = g.find(name);
    if (idx < 0) throw ContractError("no node named '" + name + "'");
    out.emplace(name, vals.at(idx));
  }
  return out;
}

inline Tensor forward_one(const Graph& g, const ParamStore& params, const NamedTensors& inputs,
                          int node, const ForwardOptions& opts = {}) {
  GraphValues vals = forward_all(g, params, inputs, opts);
  return vals.at(node);
}

// ---------------------------------------------------------------------------
// Reverse-mode differentiation
// ---------------------------------------------------------------------------

struct GradResult {
  double loss = 0.0;
  ParamStore grads;  // congruent with params; zero for parameters the graph does not use
};

// Gradients of the scalar loss node w.r.t. every parameter in `params`.
// `seed` scales the loss (callers accumulating weighted batch members pass
// their weight); the default differentiates the loss itself.
inline GradResult backward(const Graph& g, const ParamStore& params, const NamedTensors& inputs,
                           int loss_node, const ForwardOptions& opts = {}, double seed = 1.0) {
  if (loss_node < 0 || loss_node >= g.size())
    throw ContractError("loss node index out of range");
  if (numel(g.at(loss_node).shape) != 1)
    throw ContractError("loss node '" + g.at(loss_node).name + "' is not scalar");

  GraphValues vals = forward_all(g, params, inputs, opts);

  GradResult result;
  result.loss = vals.at(loss_node).at(0);
  result.grads = params.zeros_like();

  std::vector<Tensor> adj(static_cast<size_t>(g.size()));
  auto adj_of = [&](int i) -> Tensor& {
    Tensor& t = adj[static_cast<size_t>(i)];
    if (t.values.empty()) {
      t.shape = g.at(i).shape;
      t.values.assign(static_cast<size_t>(numel(t.shape)), 0.0);
    }
    return t;
  };
  adj_of(loss_node).at(0) = seed;

  for (int i = loss_node; i >= 0; --i) {
    const Node& n = g.at(i);
    Tensor& dy = adj[static_cast<size_t>(i)];
    if (dy.values.empty()) continue;  // node does not influence the loss

    switch (n.kind) {
      case OpKind::input:
      case OpKind::constant:
        break;
      case OpKind::param: {
        Tensor& gacc = result.grads.at(n.param_name);
        if (opts.param_mask != nullptr) {
          const Tensor& m = opts.param_mask->at(n.param_name);
          for (size_t k = 0; k < dy.values.size(); ++k)
            gacc.values[k] += dy.values[k] * m.values[k];
        } else {
          for (size_t k = 0; k < dy.values.size(); ++k) gacc.values[k] += dy.values[k];
        }
        break;
      }
      case OpKind::matmul: {
        const Tensor& a = vals.at(n.inputs[0]);
        const Tensor& b = vals.at(n.inputs[1]);
        Tensor& da = adj_of(n.inputs[0]);
        Tensor& db = adj_of(n.inputs[1]);
        Tensor tmp;
        auto accumulate = [&](Tensor& dst, const Tensor& x, int64_t rx, int64_t cx, bool tx,
                              const Tensor& y, int64_t ry, int64_t cy, bool ty) {
          tmp.values.assign(dst.values.size(), 0.0);
          detail::matmul_kernel(x.values.data(), rx, cx, tx, y.values.data(), ry, cy, ty,
                                tmp.values.data());
          for (size_t k = 0; k < dst.values.size(); ++k) dst.values[k] += tmp.values[k];
        };
        const int64_t dr = n.shape[0], dc = n.shape[1];
        if (!n.trans_a && !n.trans_b) {
          accumulate(da, dy, dr, dc, false, b, b.shape[0], b.shape[1], true);
          accumulate(db, a, a.shape[0], a.shape[1], true, dy, dr, dc, false);
        } else if (!n.trans_a && n.trans_b) {
          accumulate(da, dy, dr, dc, false, b, b.shape[0], b.shape[1], false);
          accumulate(db, dy, dr, dc, true, a, a.shape[0], a.shape[1], false);
        } else if (n.trans_a && !n.trans_b) {
          accumulate(da, b, b.shape[0], b.shape[1], false, dy, dr, dc, true);
          accumulate(db, a, a.shape[0], a.shape[1], false, dy, dr, dc, false);
        } else {
          accumulate(da, b, b.shape[0], b.shape[1], true, dy, dr, dc, true);
          accumulate(db, dy, dr, dc, true, a, a.shape[0], a.shape[1], true);
        }
        break;
      }
      case OpKind::add:
      case OpKind::mul: {
        const Tensor& a = vals.at(n.inputs[0]);
        const Tensor& b = vals.at(n.inputs[1]);
        Tensor& da = adj_of(n.inputs[0]);
        Tensor& db = adj_of(n.inputs[1]);
        const bool is_add = n.kind == OpKind::add;
        if (b.size() == 1) {
          double acc = 0.0;
          for (size_t k = 0; k < dy.values.size(); ++k) {
            da.values[k] += is_add ? dy.values[k] : dy.values[k] * b.at(0);
            acc += is_add ? dy.values[k] : dy.values[k] * a.values[k];
          }
          db.at(0) += acc;
        } else if (b.shape == a.shape) {
          for (size_t k = 0; k < dy.values.size(); ++k) {
            da.values[k] += is_add ? dy.values[k] : dy.values[k] * b.values[k];
            db.values[k] += is_add ? dy.values[k] : dy.values[k] * a.values[k];
          }
        } else {
          const int64_t cols = a.shape[1];
          for (int64_t r = 0; r < a.shape[0]; ++r)
            for (int64_t cidx = 0; cidx < cols; ++cidx) {
              const size_t k = static_cast<size_t>(r * cols + cidx);
              da.values[k] += is_add ? dy.values[k] : dy.values[k] * b.values[static_cast<size_t>(cidx)];
              db.values[static_cast<size_t>(cidx)] +=
                  is_add ? dy.values[k] : dy.values[k] * a.values[k];
            }
        }
        break;
      }
      case OpKind::relu: {
        const Tensor& a = vals.at(n.inputs[0]);
        Tensor& da = adj_of(n.inputs[0]);
        for (size_t k = 0; k < dy.values.size(); ++k)
          if (a.values[k] > 0.0) da.values[k] += dy.values[k];
        break;
      }
      case OpKind::softmax: {
        const Tensor& y = vals.at(i);
        Tensor& da = adj_of(n.inputs[0]);
        const int64_t rows = y.rows(), cols = y.cols();
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = y.values.data() + r * cols;
          const double* gr = dy.values.data() + r * cols;
          double dot = 0.0;
          for (int64_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
          double* dr = da.values.data() + r * cols;
          for (int64_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
        break;
      }
      case OpKind::layer_norm: {
        const Tensor& a = vals.at(n.inputs[0]);
        const Tensor& y = vals.at(i);
        Tensor& da = adj_of(n.inputs[0]);
        const int64_t rows = a.rows(), cols = a.cols();
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = a.values.data() + r * cols;
          const double* yr = y.values.data() + r * cols;
          const double* gr = dy.values.data() + r * cols;
          double mean = 0.0;
          for (int64_t j = 0; j < cols; ++j) mean += xr[j];
          mean /= static_cast<double>(cols);
          double var = 0.0;
          for (int64_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
          var /= static_cast<double>(cols);
          const double inv = 1.0 / std::sqrt(var + n.eps);
          double gmean = 0.0, gydot = 0.0;
          for (int64_t j = 0; j < cols; ++j) {
            gmean += gr[j];
            gydot += gr[j] * yr[j];
          }
          gmean /= static_cast<double>(cols);
          gydot /= static_cast<double>(cols);
          double* dr = da.values.data() + r * cols;
          for (int64_t j = 0; j < cols; ++j)
            dr[j] += (gr[j] - gmean - yr[j] * gydot) * inv;
        }
        break;
      }
      case OpKind::embedding_lookup: {
        const Tensor& ids = vals.at(n.inputs[1]);
        Tensor& dtable = adj_of(n.inputs[0]);
        const int64_t dim = g.at(n.inputs[0]).shape[1];
        for (int64_t r = 0; r < ids.size(); ++r) {
          const int64_t id = detail::id_at(ids, r, g.at(n.inputs[0]).shape[0], n.name);
          for (int64_t j = 0; j < dim; ++j)
            dtable.values[static_cast<size_t>(id * dim + j)] +=
                dy.values[static_cast<size_t>(r * dim + j)];
        }
        break;
      }
      case OpKind::reshape: {
        Tensor& da = adj_of(n.inputs[0]);
        for (size_t k = 0; k < dy.values.size(); ++k) da.values[k] += dy.values[k];
        break;
      }
      case OpKind::slice_cols: {
        Tensor& da = adj_of(n.inputs[0]);
        const int64_t in_cols = g.at(n.inputs[0]).shape[1];
        const int64_t w = n.col_end - n.col_begin;
        for (int64_t r = 0; r < n.shape[0]; ++r)
          for (int64_t j = 0; j < w; ++j)
            da.values[static_cast<size_t>(r * in_cols + n.col_begin + j)] +=
                dy.values[static_cast<size_t>(r * w + j)];
        break;
      }
      case OpKind::concat_cols: {
        const int64_t rows = n.shape[0], cols = n.shape[1];
        int64_t off = 0;
        for (int p : n.inputs) {
          Tensor& dp = adj_of(p);
          const int64_t w = g.at(p).shape[1];
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < w; ++j)
              dp.values[static_cast<size_t>(r * w + j)] +=
                  dy.values[static_cast<size_t>(r * cols + off + j)];
          off += w;
        }
        break;
      }
      case OpKind::reduce_sum: {
        Tensor& da = adj_of(n.inputs[0]);
        for (auto& v : da.values) v += dy.at(0);
        break;
      }
      case OpKind::reduce_mean: {
        Tensor& da = adj_of(n.inputs[0]);
        const double s = dy.at(0) / static_cast<double>(da.size());
        for (auto& v : da.values) v += s;
        break;
      }
      case OpKind::cross_entropy: {
        const Tensor& logits = vals.at(n.inputs[0]);
        const Tensor& targets = vals.at(n.inputs[1]);
        Tensor& dl = adj_of(n.inputs[0]);
        const int64_t rows = logits.shape[0], cols = logits.shape[1];
        const double scale = dy.at(0) / static_cast<double>(rows);
        const double eps = n.label_smoothing;
        std::vector<double> probs(static_cast<size_t>(cols));
        for (int64_t r = 0; r < rows; ++r) {
          const double* xr = logits.values.data() + r * cols;
          detail::softmax_rows(xr, probs.data(), 1, cols);
          const int64_t y = detail::id_at(targets, r, cols, n.name);
          double* dr = dl.values.data() + r * cols;
          for (int64_t j = 0; j < cols; ++j) {
            const double q = (j == y ? 1.0 - eps : 0.0) + eps / static_cast<double>(cols);
            dr[j] += scale * (probs[static_cast<size_t>(j)] - q);
          }
        }
        break;
      }
      case OpKind::kl_divergence: {
        const Tensor& logits = vals.at(n.inputs[0]);
        const Tensor& probs = vals.at(n.inputs[1]);
        Tensor& dl = adj_of(n.inputs[0]);
        const int64_t rows = logits.shape[0], cols = logits.shape[1];
        const double scale = dy.at(0) / static_cast<double>(rows);
        std::vector<double> q(static_cast<size_t>(cols));
        for (int64_t r = 0; r < rows; ++r) {
          detail::softmax_rows(logits.values.data() + r * cols, q.data(), 1, cols);
          double* dr = dl.values.data() + r * cols;
          const double* pr = probs.values.data() + r * cols;
          for (int64_t j = 0; j < cols; ++j)
            dr[j] += scale * (q[static_cast<size_t>(j)] - pr[j]);
        }
        break;
      }
    }
  }
  return result;
}

}  // namespace loom
