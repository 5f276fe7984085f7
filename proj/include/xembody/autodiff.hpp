#pragma once

// Dense reverse-mode differentiation over row-major Eigen matrices.
//
// Every value is a 2-D matrix. Images travel as [channels, height*width]
// with the spatial extents carried separately in ImageDims. A Tape records
// ops in append order, which is also a valid topological order, so the
// reverse pass is a single backwards sweep.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xembody/errors.hpp"

namespace xembody {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Mat<float>;
using MatD = Mat<double>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ImageDims {
  int channels = 0;
  int height = 0;
  int width = 0;
  int pixels() const { return height * width; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

template <class S>
class Tape;

/// Handle to a node on a Tape.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// The computation record. Single writer: one tape per forward/backward pass.
template <class S>
class Tape {
 public:
  using Matrix = Mat<S>;
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<S> constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Trainable leaf that reads `storage` in place; `key` identifies it in
  /// the gradient map returned by backward(). The storage must outlive the tape.
  Var<S> parameter(const Matrix& storage, int key) {
    Node n;
    n.external = &storage;
    n.param_key = key;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Appends an op result. `backward` receives the gradient of this node and
  /// must accumulate into its inputs; it is dropped when no input needs a
  /// gradient.
  Var<S> record(Matrix value, std::initializer_list<int> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    if (record_) {
      for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
      if (n.needs_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<S> record(Matrix value, const std::vector<int>& inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    if (record_) {
      for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
      if (n.needs_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  template <class Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Gradient buffer for in-place scatter updates; zero-initialized on first use.
  Matrix& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Matrix& v = value(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  /// Reverse pass from a scalar node. Returns one gradient per parameter key
  /// seen on this tape; keys off every path to `loss` map to zeros.
  std::map<int, Matrix> backward(Var<S> loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_str(lv.rows(), lv.cols()));
    }
    if (!record_) throw ContractError("backward: tape was created without gradient recording");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (nodes_[loss.id].needs_grad) nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    std::map<int, Matrix> out;
    for (auto& n : nodes_) {
      if (n.param_key < 0) continue;
      const Matrix& v = *n.external;
      auto it = out.find(n.param_key);
      if (it == out.end()) it = out.emplace(n.param_key, Matrix::Zero(v.rows(), v.cols())).first;
      if (n.grad.size() != 0) it->second += n.grad;
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Backward backward;
    int param_key = -1;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

namespace detail {

template <class S>
void require_same_tape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands live on different tapes");
}

template <class S>
S gelu_value(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <class S>
S gelu_slope(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
  return cdf + x * pdf;
}

}  // namespace detail

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.rows(), av.cols()) + " x " +
                         shape_str(bv.rows(), bv.cols()));
  }
  Mat<S> out = av * bv;
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("add: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("sub: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Elementwise product.
template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_tape(a, b, "mul");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("mul: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  }
  const int ia = a.id, ib = b.id;
  Mat<S> out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <class S>
Var<S> scale(const Var<S>& a, S factor) {
  const int ia = a.id;
  return a.tape->record(a.value() * factor, {ia},
                        [ia, factor](Tape<S>& t, const Mat<S>& g) { t.accumulate(ia, g * factor); });
}

/// a + bias, with bias [1, cols] broadcast over rows.
template <class S>
Var<S> add_row_bias(const Var<S>& a, const Var<S>& bias) {
  detail::require_same_tape(a, bias, "add_row_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("add_row_bias: " + shape_str(a.rows(), a.cols()) + " with bias " +
                         shape_str(bias.rows(), bias.cols()));
  }
  const int ia = a.id, ib = bias.id;
  Mat<S> out = a.value().rowwise() + bias.value().row(0);
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

/// a + bias, with bias [rows, 1] broadcast over columns (per-channel conv bias).
template <class S>
Var<S> add_col_bias(const Var<S>& a, const Var<S>& bias) {
  detail::require_same_tape(a, bias, "add_col_bias");
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw DimensionError("add_col_bias: " + shape_str(a.rows(), a.cols()) + " with bias " +
                         shape_str(bias.rows(), bias.cols()));
  }
  const int ia = a.id, ib = bias.id;
  Mat<S> out = a.value().colwise() + bias.value().col(0);
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

template <class S>
Var<S> gelu(const Var<S>& a) {
  const int ia = a.id;
  Mat<S> out = a.value().unaryExpr([](S x) { return detail::gelu_value(x); });
  return a.tape->record(std::move(out), {ia}, [ia](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr([](S x) { return detail::gelu_slope(x); })));
  });
}

template <class S>
Var<S> transpose(const Var<S>& a) {
  const int ia = a.id;
  Mat<S> out = a.value().transpose();
  return a.tape->record(std::move(out), {ia},
                        [ia](Tape<S>& t, const Mat<S>& g) { t.accumulate(ia, g.transpose()); });
}

template <class S>
Var<S> sum(const Var<S>& a) {
  const int ia = a.id;
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {ia}, [ia](Tape<S>& t, const Mat<S>& g) {
    const auto& v = t.value(ia);
    t.accumulate(ia, Mat<S>::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

/// Rows `indices` of `table`; repeated indices accumulate in backward.
template <class S>
Var<S> gather_rows(const Var<S>& table, std::vector<int> indices) {
  const auto& tv = table.value();
  Mat<S> out(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= tv.rows()) {
      throw RangeError("gather_rows: index " + std::to_string(indices[r]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(r)) = tv.row(indices[r]);
  }
  const int it = table.id;
  return table.tape->record(std::move(out), {it},
                            [it, indices = std::move(indices)](Tape<S>& t, const Mat<S>& g) {
                              Mat<S>& buf = t.grad_buffer(it);
                              for (std::size_t r = 0; r < indices.size(); ++r) {
                                buf.row(indices[r]) += g.row(static_cast<Eigen::Index>(r));
                              }
                            });
}

template <class S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index begin, Eigen::Index count) {
  const auto& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside " + shape_str(av.rows(), av.cols()));
  }
  const int ia = a.id;
  Mat<S> out = av.middleRows(begin, count);
  return a.tape->record(std::move(out), {ia}, [ia, begin, count](Tape<S>& t, const Mat<S>& g) {
    t.grad_buffer(ia).middleRows(begin, count) += g;
  });
}

/// Stacks parts vertically; all parts need equal column counts.
template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  Tape<S>* tape = parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    if (p.tape != tape) throw ContractError("concat_rows: parts live on different tapes");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + std::to_string(p.cols()) + " vs " +
                           std::to_string(cols));
    }
    offsets.push_back(rows);
    ids.push_back(p.id);
    rows += p.rows();
  }
  Mat<S> out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  return tape->record(std::move(out), ids, [ids, offsets](Tape<S>& t, const Mat<S>& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      t.accumulate(ids[i], g.middleRows(offsets[i], t.value(ids[i]).rows()));
    }
  });
}

/// Row-wise normalization over the last axis followed by a per-column affine
/// map. gain and bias are [1, d].
template <class S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps = S(1e-5)) {
  if (!(eps > S(0))) throw ContractError("layer_norm: eps must be positive");
  const auto& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: input " + shape_str(xv.rows(), d) + " with gain " +
                         shape_str(gain.rows(), gain.cols()) + " and bias " + shape_str(bias.rows(), bias.cols()));
  }
  Mat<S> normed(xv.rows(), d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const S mean = xv.row(r).mean();
    const S var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    normed.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Mat<S> out = (normed.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, normed = std::move(normed), inv_std = std::move(inv_std)](Tape<S>& t, const Mat<S>& g) {
        if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(normed).colwise().sum());
        if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (!t.needs_grad(ix)) return;
        const auto gain_row = t.value(ig).row(0).array();
        Mat<S> dx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const auto dn = (g.row(r).array() * gain_row).eval();
          const S mean_dn = dn.mean();
          const S mean_dn_n = (dn * normed.row(r).array()).mean();
          dx.row(r) = (dn - mean_dn - normed.row(r).array() * mean_dn_n) * inv_std(r);
        }
        t.accumulate(ix, dx);
      });
}

/// Scaled dot-product attention split across `heads` column blocks. Keys with
/// mask(i, j) == false receive exactly zero weight for query i.
template <class S>
Var<S> multi_head_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const BoolMat& mask, int heads) {
  detail::require_same_tape(q, k, "attention");
  detail::require_same_tape(q, v, "attention");
  const Eigen::Index n = q.rows();
  const Eigen::Index d = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d) {
    throw DimensionError("attention: q " + shape_str(n, d) + ", k " + shape_str(k.rows(), k.cols()) + ", v " +
                         shape_str(v.rows(), v.cols()));
  }
  if (mask.rows() != n || mask.cols() != n) {
    throw DimensionError("attention: mask " + shape_str(mask.rows(), mask.cols()) + " for " + std::to_string(n) +
                         " tokens");
  }
  if (heads <= 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " + std::to_string(heads) +
                         " heads");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask.row(i).any()) throw ContractError("attention: degenerate query " + std::to_string(i) + " has no permitted key");
  }
  const Eigen::Index dh = d / heads;
  const S scale_factor = S(1) / std::sqrt(static_cast<S>(dh));
  const S sentinel = std::numeric_limits<S>::lowest() / S(4);

  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  Mat<S> out(n, d);
  std::vector<Mat<S>> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat<S> scores = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * scale_factor;
    for (Eigen::Index i = 0; i < n; ++i) {
      S row_max = sentinel;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!mask(i, j)) {
          scores(i, j) = sentinel;
        } else {
          row_max = std::max(row_max, scores(i, j));
        }
      }
      S total = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask(i, j)) {
          scores(i, j) = std::exp(scores(i, j) - row_max);
          total += scores(i, j);
        } else {
          scores(i, j) = S(0);
        }
      }
      scores.row(i) /= total;
    }
    out.middleCols(h * dh, dh).noalias() = scores * vv.middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  if (!q.tape->recording()) probs.clear();
  return q.tape->record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, heads, dh, scale_factor, probs = std::move(probs)](Tape<S>& t, const Mat<S>& g) {
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const auto& vv = t.value(iv);
        const Eigen::Index n = qv.rows();
        Mat<S> dq = Mat<S>::Zero(n, qv.cols());
        Mat<S> dk = Mat<S>::Zero(n, qv.cols());
        Mat<S> dv = Mat<S>::Zero(n, qv.cols());
        for (int h = 0; h < heads; ++h) {
          const Mat<S>& p = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh).noalias() = p.transpose() * gh;
          Mat<S> dp = gh * vv.middleCols(h * dh, dh).transpose();
          const Eigen::Matrix<S, Eigen::Dynamic, 1> inner = dp.cwiseProduct(p).rowwise().sum();
          Mat<S> ds = (p.array() * (dp.colwise() - inner).array()).matrix() * scale_factor;
          dq.middleCols(h * dh, dh).noalias() = ds * kv.middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qv.middleCols(h * dh, dh);
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

/// Single-head masked attention.
template <class S>
Var<S> masked_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, const BoolMat& mask) {
  return multi_head_attention(q, k, v, mask, 1);
}

/// Output extent of a same-padded strided convolution along one axis.
inline int conv_out_extent(int extent, int stride) { return (extent + stride - 1) / stride; }

/// Cross-correlation with same padding, then striding.
/// x: [C, H*W]; kernels: [C', C*kh*kw] laid out as (c, dy, dx) row-major.
/// Output: [C', H'*W'] with H' = ceil(H / stride).
template <class S>
Var<S> conv2d(const Var<S>& x, ImageDims in, const Var<S>& kernels, int kh, int kw, int stride) {
  detail::require_same_tape(x, kernels, "conv2d");
  if (kh <= 0 || kw <= 0) throw DimensionError("conv2d: zero-sized kernel");
  if (stride <= 0) throw ContractError("conv2d: stride must be positive");
  const auto& xv = x.value();
  if (xv.rows() != in.channels || xv.cols() != in.pixels()) {
    throw DimensionError("conv2d: input " + shape_str(xv.rows(), xv.cols()) + " does not hold " +
                         std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" + std::to_string(in.width));
  }
  const auto& kv = kernels.value();
  if (kv.cols() != static_cast<Eigen::Index>(in.channels) * kh * kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kv.rows(), kv.cols()) + " does not match " +
                         std::to_string(in.channels) + " channels of " + std::to_string(kh) + "x" + std::to_string(kw));
  }
  const int oh = conv_out_extent(in.height, stride);
  const int ow = conv_out_extent(in.width, stride);
  const int pad_h = std::max((oh - 1) * stride + kh - in.height, 0);
  const int pad_w = std::max((ow - 1) * stride + kw - in.width, 0);
  if (kh > in.height + pad_h || kw > in.width + pad_w) throw DimensionError("conv2d: kernel larger than padded input");
  const int top = pad_h / 2;
  const int left = pad_w / 2;

  Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(in.channels) * kh * kw, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < in.channels; ++c) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + dy) * kw + dx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + dy - top;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + dx - left;
            if (ix < 0 || ix >= in.width) continue;
            cols(row, static_cast<Eigen::Index>(oy) * ow + ox) = xv(c, static_cast<Eigen::Index>(iy) * in.width + ix);
          }
        }
      }
    }
  }
  Mat<S> out = kv * cols;
  const int ix_id = x.id, ik_id = kernels.id;
  if (!x.tape->recording()) cols.resize(0, 0);
  return x.tape->record(std::move(out), {ix_id, ik_id},
                        [=, cols = std::move(cols)](Tape<S>& t, const Mat<S>& g) {
                          if (t.needs_grad(ik_id)) t.accumulate(ik_id, g * cols.transpose());
                          if (!t.needs_grad(ix_id)) return;
                          const Mat<S> dcols = t.value(ik_id).transpose() * g;
                          Mat<S>& dx_buf = t.grad_buffer(ix_id);
                          for (int c = 0; c < in.channels; ++c) {
                            for (int dy = 0; dy < kh; ++dy) {
                              for (int dx = 0; dx < kw; ++dx) {
                                const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + dy) * kw + dx;
                                for (int oy = 0; oy < oh; ++oy) {
                                  const int iy = oy * stride + dy - top;
                                  if (iy < 0 || iy >= in.height) continue;
                                  for (int ox = 0; ox < ow; ++ox) {
                                    const int ixx = ox * stride + dx - left;
                                    if (ixx < 0 || ixx >= in.width) continue;
                                    dx_buf(c, static_cast<Eigen::Index>(iy) * in.width + ixx) +=
                                        dcols(row, static_cast<Eigen::Index>(oy) * ow + ox);
                                  }
                                }
                              }
                            }
                          }
                        });
}

/// Feature-wise modulation: out[c, :] = (1 + gamma[c]) * x[c, :] + beta[c].
/// gamma and beta are [1, C].
template <class S>
Var<S> film(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta) {
  detail::require_same_tape(x, gamma, "film");
  detail::require_same_tape(x, beta, "film");
  const Eigen::Index c = x.rows();
  if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != c || beta.cols() != c) {
    throw DimensionError("film: features with " + std::to_string(c) + " channels, gamma " +
                         shape_str(gamma.rows(), gamma.cols()) + ", beta " + shape_str(beta.rows(), beta.cols()));
  }
  const Eigen::Matrix<S, Eigen::Dynamic, 1> factor = gamma.value().row(0).transpose().array() + S(1);
  Mat<S> out = (x.value().array().colwise() * factor.array()).colwise() + beta.value().row(0).transpose().array();
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(std::move(out), {ix, ig, ib}, [ix, ig, ib](Tape<S>& t, const Mat<S>& g) {
    const Eigen::Matrix<S, Eigen::Dynamic, 1> factor = t.value(ig).row(0).transpose().array() + S(1);
    if (t.needs_grad(ix)) t.accumulate(ix, (g.array().colwise() * factor.array()).matrix());
    if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(t.value(ix)).rowwise().sum().transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum().transpose());
  });
}

/// sum(weight * |pred - target|). The subgradient at pred == target is 0.
template <class S>
Var<S> weighted_abs_error(const Var<S>& pred, const Mat<S>& target, const Mat<S>& weight) {
  const auto& pv = pred.value();
  if (target.rows() != pv.rows() || target.cols() != pv.cols() || weight.rows() != pv.rows() ||
      weight.cols() != pv.cols()) {
    throw DimensionError("abs_error: prediction " + shape_str(pv.rows(), pv.cols()) + ", target " +
                         shape_str(target.rows(), target.cols()));
  }
  const Mat<S> diff = pv - target;
  Mat<S> out(1, 1);
  out(0, 0) = (diff.cwiseAbs().cwiseProduct(weight)).sum();
  Mat<S> slope = diff.unaryExpr([](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); }).cwiseProduct(weight);
  const int ip = pred.id;
  return pred.tape->record(std::move(out), {ip},
                           [ip, slope = std::move(slope)](Tape<S>& t, const Mat<S>& g) { t.accumulate(ip, slope * g(0, 0)); });
}

/// sum(weight * (pred - target)^2).
template <class S>
Var<S> weighted_squared_error(const Var<S>& pred, const Mat<S>& target, const Mat<S>& weight) {
  const auto& pv = pred.value();
  if (target.rows() != pv.rows() || target.cols() != pv.cols() || weight.rows() != pv.rows() ||
      weight.cols() != pv.cols()) {
    throw DimensionError("squared_error: prediction " + shape_str(pv.rows(), pv.cols()) + ", target " +
                         shape_str(target.rows(), target.cols()));
  }
  Mat<S> diff = (pv - target).cwiseProduct(weight);
  Mat<S> out(1, 1);
  out(0, 0) = (pv - target).cwiseAbs2().cwiseProduct(weight).sum();
  const int ip = pred.id;
  return pred.tape->record(std::move(out), {ip}, [ip, diff = std::move(diff)](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ip, diff * (S(2) * g(0, 0)));
  });
}

}  // namespace xembody
