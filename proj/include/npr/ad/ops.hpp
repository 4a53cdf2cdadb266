#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "npr/ad/tensor.hpp"
#include "npr/core/common.hpp"

namespace npr::ad {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&)> bwd) {
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(value));
  auto n = out.node();
  n->is_leaf = false;
  bool rg = false;
  for (auto& p : parents) {
    n->parents.push_back(p.node());
    rg = rg || p.node()->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) n->backward_fn = std::move(bwd);
  return out;
}

template <typename T>
inline void add_grad(const std::shared_ptr<Node<T>>& p, size_t i, T g) {
  if (p->requires_grad) p->grad[i] += g;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  std::vector<T> v(a.values());
  for (size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    auto pa = n.parents[0], pb = n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      detail::add_grad(pa, i, n.grad[i]);
      detail::add_grad(pb, i, n.grad[i]);
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
  std::vector<T> v(a.values());
  for (size_t i = 0; i < v.size(); ++i) v[i] -= b.values()[i];
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    auto pa = n.parents[0], pb = n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      detail::add_grad(pa, i, n.grad[i]);
      detail::add_grad(pb, i, -n.grad[i]);
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  std::vector<T> v(a.values());
  for (size_t i = 0; i < v.size(); ++i) v[i] *= b.values()[i];
  return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    auto pa = n.parents[0], pb = n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      detail::add_grad(pa, i, n.grad[i] * pb->value[i]);
      detail::add_grad(pb, i, n.grad[i] * pa->value[i]);
    }
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> v(a.values());
  for (auto& x : v) x *= s;
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [s](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) detail::add_grad(pa, i, n.grad[i] * s);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> v(a.values());
  for (auto& x : v) x += s;
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) detail::add_grad(pa, i, n.grad[i]);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = x > T(0) ? x : T(0);
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      detail::add_grad(pa, i, pa->value[i] > T(0) ? n.grad[i] : T(0));
  });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = std::tanh(x);
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      detail::add_grad(pa, i, n.grad[i] * (T(1) - n.value[i] * n.value[i]));
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = T(1) / (T(1) + std::exp(-x));
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      detail::add_grad(pa, i, n.grad[i] * n.value[i] * (T(1) - n.value[i]));
  });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = std::abs(x);
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T s = pa->value[i] > T(0) ? T(1) : (pa->value[i] < T(0) ? T(-1) : T(0));
      detail::add_grad(pa, i, n.grad[i] * s);
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x *= x;
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      detail::add_grad(pa, i, n.grad[i] * T(2) * pa->value[i]);
  });
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.values()) acc += x;
  return detail::make_op<T>({1}, {acc}, {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    T g = n.grad[0];
    for (size_t i = 0; i < pa->value.size(); ++i) detail::add_grad(pa, i, g);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  T acc = 0;
  for (T x : a.values()) acc += x;
  T inv = T(1) / T(a.size());
  return detail::make_op<T>({1}, {acc * inv}, {a}, [inv](Node<T>& n) {
    auto pa = n.parents[0];
    T g = n.grad[0] * inv;
    for (size_t i = 0; i < pa->value.size(); ++i) detail::add_grad(pa, i, g);
  });
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.values()) acc += x * x;
  return detail::make_op<T>({1}, {acc}, {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    T g = n.grad[0];
    for (size_t i = 0; i < pa->value.size(); ++i)
      detail::add_grad(pa, i, g * T(2) * pa->value[i]);
  });
}

// ---- matrix ops -------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  long n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<T> v(size_t(n * m));
  CMapM<T> A(a.values().data(), n, k), B(b.values().data(), k, m);
  MapM<T> Y(v.data(), n, m);
  Y.noalias() = A * B;
  return detail::make_op<T>({n, m}, std::move(v), {a, b}, [n, k, m](Node<T>& n_) {
    auto pa = n_.parents[0], pb = n_.parents[1];
    CMapM<T> G(n_.grad.data(), n, m);
    CMapM<T> A(pa->value.data(), n, k), B(pb->value.data(), k, m);
    if (pa->requires_grad) {
      MapM<T> GA(pa->grad.data(), n, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      MapM<T> GB(pb->grad.data(), k, m);
      GB.noalias() += A.transpose() * G;
    }
  });
}

// y = x * W^T + b, with x:(N,in), W:(out,in), b:(out)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                " incompatible with weight " + shape_str(w.shape()));
  long n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (b.size() != out) throw std::invalid_argument("linear: bad bias length");
  std::vector<T> v(size_t(n * out));
  CMapM<T> X(x.values().data(), n, in), W(w.values().data(), out, in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(b.values().data(), out);
  MapM<T> Y(v.data(), n, out);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += B.transpose();
  return detail::make_op<T>({n, out}, std::move(v), {x, w, b}, [n, in, out](Node<T>& nd) {
    auto px = nd.parents[0], pw = nd.parents[1], pb = nd.parents[2];
    CMapM<T> G(nd.grad.data(), n, out);
    CMapM<T> X(px->value.data(), n, in), W(pw->value.data(), out, in);
    if (px->requires_grad) {
      MapM<T> GX(px->grad.data(), n, in);
      GX.noalias() += G * W;
    }
    if (pw->requires_grad) {
      MapM<T> GW(pw->grad.data(), out, in);
      GW.noalias() += G.transpose() * X;
    }
    if (pb->requires_grad) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> GB(pb->grad.data(), out);
      GB.noalias() += G.colwise().sum().transpose();
    }
  });
}

// ---- structural ops ----------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  if (numel(s) != a.size())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(s));
  std::vector<T> v(a.values());
  return detail::make_op<T>(std::move(s), std::move(v), {a}, [](Node<T>& n) {
    auto pa = n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) detail::add_grad(pa, i, n.grad[i]);
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat: no inputs");
  long n = ts[0].rows(), ctot = 0;
  for (auto& t : ts) {
    if (t.shape().size() != 2 || t.rows() != n)
      throw std::invalid_argument("concat: row mismatch");
    ctot += t.cols();
  }
  std::vector<T> v(size_t(n * ctot));
  long off = 0;
  for (auto& t : ts) {
    long c = t.cols();
    for (long r = 0; r < n; ++r)
      std::copy_n(t.values().data() + r * c, c, v.data() + r * ctot + off);
    off += c;
  }
  std::vector<long> colw;
  for (auto& t : ts) colw.push_back(t.cols());
  return detail::make_op<T>({n, ctot}, std::move(v), ts, [n, ctot, colw](Node<T>& nd) {
    long off = 0;
    for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
      auto p = nd.parents[pi];
      long c = colw[pi];
      if (p->requires_grad)
        for (long r = 0; r < n; ++r)
          for (long j = 0; j < c; ++j) p->grad[r * c + j] += nd.grad[r * ctot + off + j];
      off += c;
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat: no inputs");
  long c = ts[0].cols(), ntot = 0;
  for (auto& t : ts) {
    if (t.shape().size() != 2 || t.cols() != c)
      throw std::invalid_argument("concat: column mismatch");
    ntot += t.rows();
  }
  std::vector<T> v;
  v.reserve(size_t(ntot * c));
  for (auto& t : ts) v.insert(v.end(), t.values().begin(), t.values().end());
  std::vector<long> rows;
  for (auto& t : ts) rows.push_back(t.rows());
  return detail::make_op<T>({ntot, c}, std::move(v), ts, [c, rows](Node<T>& nd) {
    long off = 0;
    for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
      auto p = nd.parents[pi];
      long nr = rows[pi];
      if (p->requires_grad)
        for (long i = 0; i < nr * c; ++i) p->grad[i] += nd.grad[off * c + i];
      off += nr;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, long r0, long r1) {
  if (a.shape().size() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range");
  long c = a.cols(), n = r1 - r0;
  std::vector<T> v(a.values().begin() + r0 * c, a.values().begin() + r1 * c);
  return detail::make_op<T>({n, c}, std::move(v), {a}, [r0, c](Node<T>& nd) {
    auto pa = nd.parents[0];
    for (size_t i = 0; i < nd.grad.size(); ++i) detail::add_grad(pa, size_t(r0 * c) + i, nd.grad[i]);
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<long> idx) {
  if (a.shape().size() != 2) throw std::invalid_argument("gather_rows: need 2-D input");
  long c = a.cols();
  std::vector<T> v(idx.size() * size_t(c));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    std::copy_n(a.values().data() + idx[i] * c, c, v.data() + long(i) * c);
  }
  long n = long(idx.size());
  return detail::make_op<T>({n, c}, std::move(v), {a},
                            [c, idx = std::move(idx)](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (size_t i = 0; i < idx.size(); ++i)
      for (long j = 0; j < c; ++j) pa->grad[idx[i] * c + j] += nd.grad[long(i) * c + j];
  });
}

// Broadcasts a (1,C) row to (n,C); the Repeat layer.
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& a, long n) {
  if (a.shape().size() != 2 || a.rows() != 1)
    throw std::invalid_argument("repeat_rows: input must be (1,C)");
  long c = a.cols();
  std::vector<T> v(size_t(n * c));
  for (long r = 0; r < n; ++r) std::copy_n(a.values().data(), c, v.data() + r * c);
  return detail::make_op<T>({n, c}, std::move(v), {a}, [n, c](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (long r = 0; r < n; ++r)
      for (long j = 0; j < c; ++j) pa->grad[j] += nd.grad[r * c + j];
  });
}

// Global max over the point axis: (N,C) -> (1,C); MaxPool1D of the tables.
template <typename T>
Tensor<T> max_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2 || a.rows() < 1)
    throw std::invalid_argument("max_rows: need a nonempty 2-D input");
  long n = a.rows(), c = a.cols();
  std::vector<T> v(size_t(c));
  std::vector<long> arg(size_t(c), 0);
  for (long j = 0; j < c; ++j) {
    T best = a.values()[j];
    long bi = 0;
    for (long r = 1; r < n; ++r) {
      T x = a.values()[r * c + j];
      if (x > best) { best = x; bi = r; }
    }
    v[j] = best;
    arg[j] = bi;
  }
  return detail::make_op<T>({1, c}, std::move(v), {a}, [c, arg = std::move(arg)](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (long j = 0; j < c; ++j) pa->grad[arg[j] * c + j] += nd.grad[j];
  });
}

// ---- losses -------------------------------------------------------------------

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("log_softmax: need 2-D input");
  long n = a.rows(), c = a.cols();
  std::vector<T> v(a.values());
  for (long r = 0; r < n; ++r) {
    T* row = v.data() + r * c;
    T mx = row[0];
    for (long j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T lse = 0;
    for (long j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    for (long j = 0; j < c; ++j) row[j] -= lse;
  }
  return detail::make_op<T>(a.shape(), std::move(v), {a}, [n, c](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (long r = 0; r < n; ++r) {
      T gs = 0;
      for (long j = 0; j < c; ++j) gs += nd.grad[r * c + j];
      for (long j = 0; j < c; ++j)
        pa->grad[r * c + j] += nd.grad[r * c + j] - std::exp(nd.value[r * c + j]) * gs;
    }
  });
}

// Mean cross entropy from logits over rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<long>& labels) {
  if (long(labels.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy: label count mismatch");
  auto lp = log_softmax_rows(logits);
  long n = lp.rows(), c = lp.cols();
  T acc = 0;
  for (long r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= c) throw std::invalid_argument("cross_entropy: bad label");
    acc -= lp.values()[r * c + labels[r]];
  }
  T inv = T(1) / T(std::max<long>(n, 1));
  return detail::make_op<T>({1}, {acc * inv}, {lp}, [labels, c, inv](Node<T>& nd) {
    auto p = nd.parents[0];
    if (!p->requires_grad) return;
    T g = nd.grad[0] * inv;
    for (size_t r = 0; r < labels.size(); ++r) p->grad[long(r) * c + labels[r]] -= g;
  });
}

// Mean binary cross entropy from logits against constant targets in [0,1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& x, const std::vector<T>& targets) {
  if (targets.size() != x.values().size())
    throw std::invalid_argument("bce_with_logits: target size mismatch");
  T acc = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    T xi = x.values()[i], t = targets[i];
    acc += std::max(xi, T(0)) - xi * t + std::log1p(std::exp(-std::abs(xi)));
  }
  T inv = T(1) / T(std::max<size_t>(targets.size(), 1));
  return detail::make_op<T>({1}, {acc * inv}, {x}, [targets, inv](Node<T>& nd) {
    auto p = nd.parents[0];
    if (!p->requires_grad) return;
    T g = nd.grad[0] * inv;
    for (size_t i = 0; i < targets.size(); ++i) {
      T s = T(1) / (T(1) + std::exp(-p->value[i]));
      p->grad[i] += g * (s - targets[i]);
    }
  });
}

// sum_i w_i |pred_i - target_i| with constant targets/weights.
template <typename T>
Tensor<T> weighted_l1_sum(const Tensor<T>& pred, const std::vector<T>& target,
                          const std::vector<T>& weight) {
  if (target.size() != pred.values().size() || weight.size() != pred.values().size())
    throw std::invalid_argument("weighted_l1_sum: size mismatch");
  T acc = 0;
  for (size_t i = 0; i < target.size(); ++i)
    acc += weight[i] * std::abs(pred.values()[i] - target[i]);
  return detail::make_op<T>({1}, {acc}, {pred}, [target, weight](Node<T>& nd) {
    auto p = nd.parents[0];
    if (!p->requires_grad) return;
    T g = nd.grad[0];
    for (size_t i = 0; i < target.size(); ++i) {
      T d = p->value[i] - target[i];
      T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      p->grad[i] += g * weight[i] * s;
    }
  });
}

// mean_i (pred_i - target_i)^2 with constant targets.
template <typename T>
Tensor<T> mse_against(const Tensor<T>& pred, const std::vector<T>& target) {
  if (target.size() != pred.values().size())
    throw std::invalid_argument("mse_against: size mismatch");
  T acc = 0;
  for (size_t i = 0; i < target.size(); ++i) {
    T d = pred.values()[i] - target[i];
    acc += d * d;
  }
  T inv = T(1) / T(std::max<size_t>(target.size(), 1));
  return detail::make_op<T>({1}, {acc * inv}, {pred}, [target, inv](Node<T>& nd) {
    auto p = nd.parents[0];
    if (!p->requires_grad) return;
    T g = nd.grad[0] * inv;
    for (size_t i = 0; i < target.size(); ++i)
      p->grad[i] += g * T(2) * (p->value[i] - target[i]);
  });
}

}  // namespace npr::ad
