#pragma once

#include "npr/ad/ops.hpp"

namespace npr::ad {

// BatchNorm over the row (point-batch) axis of a (N,C) tensor.
// running_* are plain leaf tensors mutated in training mode when
// update_stats is set; eval mode normalizes with them.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                    bool update_stats = true, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.shape().size() != 2) throw std::invalid_argument("batchnorm: need (N,C) input");
  long n = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw std::invalid_argument("batchnorm: parameter width mismatch");
  std::vector<T> mu(c), var(c);
  if (training && n > 0) {
    for (long j = 0; j < c; ++j) {
      T m = 0;
      for (long r = 0; r < n; ++r) m += x.values()[r * c + j];
      m /= T(n);
      T v = 0;
      for (long r = 0; r < n; ++r) {
        T d = x.values()[r * c + j] - m;
        v += d * d;
      }
      v /= T(n);
      mu[j] = m;
      var[j] = v;
    }
    if (update_stats) {
      T unb = n > 1 ? T(n) / T(n - 1) : T(1);
      for (long j = 0; j < c; ++j) {
        running_mean.values()[j] = (T(1) - momentum) * running_mean.values()[j] + momentum * mu[j];
        running_var.values()[j] = (T(1) - momentum) * running_var.values()[j] + momentum * var[j] * unb;
      }
    }
  } else {
    mu = running_mean.values();
    var = running_var.values();
  }
  std::vector<T> invstd(c);
  for (long j = 0; j < c; ++j) invstd[j] = T(1) / std::sqrt(var[j] + eps);
  std::vector<T> xhat(size_t(n * c)), y(size_t(n * c));
  for (long r = 0; r < n; ++r)
    for (long j = 0; j < c; ++j) {
      T xh = (x.values()[r * c + j] - mu[j]) * invstd[j];
      xhat[r * c + j] = xh;
      y[r * c + j] = gamma.values()[j] * xh + beta.values()[j];
    }
  bool use_batch_stats = training && n > 0;
  return detail::make_op<T>(
      x.shape(), std::move(y), {x, gamma, beta},
      [n, c, invstd = std::move(invstd), xhat = std::move(xhat), use_batch_stats](Node<T>& nd) {
        auto px = nd.parents[0], pg = nd.parents[1], pb = nd.parents[2];
        for (long j = 0; j < c; ++j) {
          T sg = 0, sgx = 0;
          for (long r = 0; r < n; ++r) {
            sg += nd.grad[r * c + j];
            sgx += nd.grad[r * c + j] * xhat[r * c + j];
          }
          if (pg->requires_grad) pg->grad[j] += sgx;
          if (pb->requires_grad) pb->grad[j] += sg;
          if (px->requires_grad) {
            T gamma_j = pg->value[j];
            if (use_batch_stats) {
              T invn = T(1) / T(n);
              for (long r = 0; r < n; ++r)
                px->grad[r * c + j] += gamma_j * invstd[j] *
                    (nd.grad[r * c + j] - sg * invn - xhat[r * c + j] * sgx * invn);
            } else {
              for (long r = 0; r < n; ++r)
                px->grad[r * c + j] += gamma_j * invstd[j] * nd.grad[r * c + j];
            }
          }
        }
      });
}

// GroupNorm on a single (C,D,H,W) instance.
template <typename T>
Tensor<T> groupnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    long groups, T eps = T(1e-5)) {
  if (x.shape().size() != 4) throw std::invalid_argument("groupnorm: need (C,D,H,W) input");
  long c = x.shape()[0];
  long spatial = x.shape()[1] * x.shape()[2] * x.shape()[3];
  if (c % groups != 0) throw std::invalid_argument("groupnorm: channels not divisible by groups");
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("groupnorm: parameter width mismatch");
  long cg = c / groups, m = cg * spatial;
  std::vector<T> invstd(groups);
  std::vector<T> xhat(x.values().size()), y(x.values().size());
  for (long g = 0; g < groups; ++g) {
    const T* base = x.values().data() + g * cg * spatial;
    T mu = 0;
    for (long i = 0; i < m; ++i) mu += base[i];
    mu /= T(m);
    T var = 0;
    for (long i = 0; i < m; ++i) {
      T d = base[i] - mu;
      var += d * d;
    }
    var /= T(m);
    T inv = T(1) / std::sqrt(var + eps);
    invstd[g] = inv;
    for (long i = 0; i < m; ++i) xhat[g * m + i] = (base[i] - mu) * inv;
  }
  for (long ch = 0; ch < c; ++ch)
    for (long i = 0; i < spatial; ++i)
      y[ch * spatial + i] = gamma.values()[ch] * xhat[ch * spatial + i] + beta.values()[ch];
  return detail::make_op<T>(
      x.shape(), std::move(y), {x, gamma, beta},
      [c, spatial, groups, cg, m, invstd = std::move(invstd), xhat = std::move(xhat)](Node<T>& nd) {
        auto px = nd.parents[0], pg = nd.parents[1], pb = nd.parents[2];
        if (pg->requires_grad || pb->requires_grad) {
          for (long ch = 0; ch < c; ++ch) {
            T sg = 0, sgx = 0;
            for (long i = 0; i < spatial; ++i) {
              sg += nd.grad[ch * spatial + i];
              sgx += nd.grad[ch * spatial + i] * xhat[ch * spatial + i];
            }
            if (pg->requires_grad) pg->grad[ch] += sgx;
            if (pb->requires_grad) pb->grad[ch] += sg;
          }
        }
        if (!px->requires_grad) return;
        for (long g = 0; g < groups; ++g) {
          T sh = 0, shx = 0;
          for (long ch = g * cg; ch < (g + 1) * cg; ++ch) {
            T gamma_c = pg->value[ch];
            for (long i = 0; i < spatial; ++i) {
              T h = nd.grad[ch * spatial + i] * gamma_c;
              sh += h;
              shx += h * xhat[ch * spatial + i];
            }
          }
          T invm = T(1) / T(m);
          for (long ch = g * cg; ch < (g + 1) * cg; ++ch) {
            T gamma_c = pg->value[ch];
            for (long i = 0; i < spatial; ++i) {
              T h = nd.grad[ch * spatial + i] * gamma_c;
              px->grad[ch * spatial + i] +=
                  invstd[g] * (h - sh * invm - xhat[ch * spatial + i] * shx * invm);
            }
          }
        }
      });
}

// Inverted dropout; identity in eval mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng* rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
  T scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.values().size());
  for (auto& mk : mask) mk = rng->uniform() < p ? T(0) : scale;
  std::vector<T> v(x.values());
  for (size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  return detail::make_op<T>(x.shape(), std::move(v), {x}, [mask = std::move(mask)](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (size_t i = 0; i < nd.grad.size(); ++i) pa->grad[i] += nd.grad[i] * mask[i];
  });
}

namespace detail {
inline long conv_out(long in, long k, long s, long p) { return (in + 2 * p - k) / s + 1; }
}

// 3-D convolution on a single (Cin,D,H,W) instance via im2col + GEMM.
// weight: (Cout,Cin,kd,kh,kw), bias: (Cout).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::array<long, 3> stride, std::array<long, 3> pad) {
  if (x.shape().size() != 4 || w.shape().size() != 5)
    throw std::invalid_argument("conv3d: need (C,D,H,W) input and 5-D weight");
  long cin = x.shape()[0], d = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  long cout = w.shape()[0];
  if (w.shape()[1] != cin) throw std::invalid_argument("conv3d: channel mismatch");
  long kd = w.shape()[2], kh = w.shape()[3], kw = w.shape()[4];
  long od = detail::conv_out(d, kd, stride[0], pad[0]);
  long oh = detail::conv_out(h, kh, stride[1], pad[1]);
  long ow = detail::conv_out(wd, kw, stride[2], pad[2]);
  if (od <= 0 || oh <= 0 || ow <= 0) throw std::invalid_argument("conv3d: empty output");
  long K = cin * kd * kh * kw, P = od * oh * ow;

  // col(K,P): column p holds the receptive field of output voxel p.
  auto cols = std::make_shared<std::vector<T>>(size_t(K * P), T(0));
  long p = 0;
  for (long zo = 0; zo < od; ++zo)
    for (long yo = 0; yo < oh; ++yo)
      for (long xo = 0; xo < ow; ++xo, ++p) {
        long k = 0;
        for (long ci = 0; ci < cin; ++ci)
          for (long dz = 0; dz < kd; ++dz)
            for (long dy = 0; dy < kh; ++dy)
              for (long dx = 0; dx < kw; ++dx, ++k) {
                long zi = zo * stride[0] - pad[0] + dz;
                long yi = yo * stride[1] - pad[1] + dy;
                long xi = xo * stride[2] - pad[2] + dx;
                if (zi >= 0 && zi < d && yi >= 0 && yi < h && xi >= 0 && xi < wd)
                  (*cols)[k * P + p] = x.values()[((ci * d + zi) * h + yi) * wd + xi];
              }
      }

  std::vector<T> y(size_t(cout * P));
  CMapM<T> W(w.values().data(), cout, K), C(cols->data(), K, P);
  MapM<T> Y(y.data(), cout, P);
  Y.noalias() = W * C;
  for (long co = 0; co < cout; ++co)
    for (long i = 0; i < P; ++i) y[co * P + i] += b.values()[co];

  auto geom = std::array<long, 12>{cin, d, h, wd, kd, kh, kw, od, oh, ow, 0, 0};
  return detail::make_op<T>(
      {cout, od, oh, ow}, std::move(y), {x, w, b},
      [cols, cout, K, P, stride, pad, geom](Node<T>& nd) {
        auto px = nd.parents[0], pw = nd.parents[1], pb = nd.parents[2];
        CMapM<T> G(nd.grad.data(), cout, P);
        if (pw->requires_grad) {
          MapM<T> GW(pw->grad.data(), cout, K);
          CMapM<T> C(cols->data(), K, P);
          GW.noalias() += G * C.transpose();
        }
        if (pb->requires_grad)
          for (long co = 0; co < cout; ++co) {
            T s = 0;
            for (long i = 0; i < P; ++i) s += nd.grad[co * P + i];
            pb->grad[co] += s;
          }
        if (px->requires_grad) {
          std::vector<T> dcol(size_t(K * P));
          MapM<T> DC(dcol.data(), K, P);
          CMapM<T> W(pw->value.data(), cout, K);
          DC.noalias() = W.transpose() * G;
          auto [cin, d, h, wd, kd, kh, kw, od, oh, ow, u0, u1] = geom;
          (void)u0; (void)u1;
          long p = 0;
          for (long zo = 0; zo < od; ++zo)
            for (long yo = 0; yo < oh; ++yo)
              for (long xo = 0; xo < ow; ++xo, ++p) {
                long k = 0;
                for (long ci = 0; ci < cin; ++ci)
                  for (long dz = 0; dz < kd; ++dz)
                    for (long dy = 0; dy < kh; ++dy)
                      for (long dx = 0; dx < kw; ++dx, ++k) {
                        long zi = zo * stride[0] - pad[0] + dz;
                        long yi = yo * stride[1] - pad[1] + dy;
                        long xi = xo * stride[2] - pad[2] + dx;
                        if (zi >= 0 && zi < d && yi >= 0 && yi < h && xi >= 0 && xi < wd)
                          px->grad[((ci * d + zi) * h + yi) * wd + xi] += dcol[k * P + p];
                      }
              }
        }
      });
}

// Max pooling on a single (C,D,H,W) instance.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, std::array<long, 3> kernel,
                    std::array<long, 3> stride, std::array<long, 3> pad) {
  if (x.shape().size() != 4) throw std::invalid_argument("maxpool3d: need (C,D,H,W) input");
  long c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  long od = detail::conv_out(d, kernel[0], stride[0], pad[0]);
  long oh = detail::conv_out(h, kernel[1], stride[1], pad[1]);
  long ow = detail::conv_out(wd, kernel[2], stride[2], pad[2]);
  if (od <= 0 || oh <= 0 || ow <= 0) throw std::invalid_argument("maxpool3d: empty output");
  std::vector<T> y(size_t(c * od * oh * ow), std::numeric_limits<T>::lowest());
  std::vector<long> arg(y.size(), -1);
  long o = 0;
  for (long ci = 0; ci < c; ++ci)
    for (long zo = 0; zo < od; ++zo)
      for (long yo = 0; yo < oh; ++yo)
        for (long xo = 0; xo < ow; ++xo, ++o) {
          for (long dz = 0; dz < kernel[0]; ++dz)
            for (long dy = 0; dy < kernel[1]; ++dy)
              for (long dx = 0; dx < kernel[2]; ++dx) {
                long zi = zo * stride[0] - pad[0] + dz;
                long yi = yo * stride[1] - pad[1] + dy;
                long xi = xo * stride[2] - pad[2] + dx;
                if (zi < 0 || zi >= d || yi < 0 || yi >= h || xi < 0 || xi >= wd) continue;
                long ii = ((ci * d + zi) * h + yi) * wd + xi;
                if (x.values()[ii] > y[o]) {
                  y[o] = x.values()[ii];
                  arg[o] = ii;
                }
              }
        }
  return detail::make_op<T>({c, od, oh, ow}, std::move(y), {x},
                            [arg = std::move(arg)](Node<T>& nd) {
    auto pa = nd.parents[0];
    if (!pa->requires_grad) return;
    for (size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0) pa->grad[arg[i]] += nd.grad[i];
  });
}

}  // namespace npr::ad
