#pragma once

// Structured ops on NCHW tensors: batched matmul, conv2d (im2col + gemm),
// softmax, layer norm over channels, pixel shuffle/unshuffle, pooling,
// bilinear upsampling and bilinear grid sampling.

#include <Eigen/Dense>

#include "tensor.hpp"

namespace htd {

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a [...,M,K] x b [...,K,P]. Leading dims must match, or either
// operand may be a plain 2-D matrix shared across the batch.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false, bool trans_b = false) {
    if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul needs rank >= 2");
    auto mat_dims = [](const Tensor<S>& t, bool trans) {
        int r = t.rank();
        int rows = t.dim(r - 2), cols = t.dim(r - 1);
        return trans ? std::pair<int, int>{cols, rows} : std::pair<int, int>{rows, cols};
    };
    auto [M, Ka] = mat_dims(a, trans_a);
    auto [Kb, P] = mat_dims(b, trans_b);
    if (Ka != Kb)
        throw DimensionError("matmul inner dims " + std::to_string(Ka) + " vs " + std::to_string(Kb));
    int K = Ka;

    Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b)
        throw DimensionError("matmul batch dims mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Shape batch = batch_a.empty() ? batch_b : batch_a;
    int64_t B = shape_numel(batch);
    int64_t a_step = batch_a.empty() ? 0 : int64_t(a.dim(a.rank() - 2)) * a.dim(a.rank() - 1);
    int64_t b_step = batch_b.empty() ? 0 : int64_t(b.dim(b.rank() - 2)) * b.dim(b.rank() - 1);

    Shape os = batch;
    os.push_back(M);
    os.push_back(P);
    std::vector<S> out(static_cast<size_t>(shape_numel(os)));

    auto gemm = [&](const S* ap, const S* bp, S* op) {
        int ar = trans_a ? K : M, ac = trans_a ? M : K;
        int br = trans_b ? P : K, bc = trans_b ? K : P;
        detail::ECMap<S> A(ap, ar, ac);
        detail::ECMap<S> Bm(bp, br, bc);
        detail::EMap<S> O(op, M, P);
        if (!trans_a && !trans_b) O.noalias() = A * Bm;
        else if (trans_a && !trans_b) O.noalias() = A.transpose() * Bm;
        else if (!trans_a && trans_b) O.noalias() = A * Bm.transpose();
        else O.noalias() = A.transpose() * Bm.transpose();
    };
    for (int64_t i = 0; i < B; ++i)
        gemm(a.data().data() + i * a_step, b.data().data() + i * b_step,
             out.data() + i * int64_t(M) * P);

    auto ai = a.impl();
    auto bi = b.impl();
    return make_op<S>(os, std::move(out), {a, b},
                      [ai, bi, B, a_step, b_step, M, K, P, trans_a, trans_b](TensorImpl<S>& self) {
                          int ar = trans_a ? K : M, ac = trans_a ? M : K;
                          int br = trans_b ? P : K, bc = trans_b ? K : P;
                          if (ai->requires_grad) ai->ensure_grad();
                          if (bi->requires_grad) bi->ensure_grad();
                          for (int64_t i = 0; i < B; ++i) {
                              detail::ECMap<S> G(self.grad.data() + i * int64_t(M) * P, M, P);
                              detail::ECMap<S> A(ai->data.data() + i * a_step, ar, ac);
                              detail::ECMap<S> Bm(bi->data.data() + i * b_step, br, bc);
                              if (ai->requires_grad) {
                                  detail::EMap<S> GA(ai->grad.data() + i * a_step, ar, ac);
                                  // dL/dA from O = op(A)*op(B)
                                  if (!trans_a) {
                                      if (!trans_b) GA.noalias() += G * Bm.transpose();
                                      else GA.noalias() += G * Bm;
                                  } else {
                                      if (!trans_b) GA.noalias() += Bm * G.transpose();
                                      else GA.noalias() += Bm.transpose() * G.transpose();
                                  }
                              }
                              if (bi->requires_grad) {
                                  detail::EMap<S> GB(bi->grad.data() + i * b_step, br, bc);
                                  if (!trans_b) {
                                      if (!trans_a) GB.noalias() += A.transpose() * G;
                                      else GB.noalias() += A * G;
                                  } else {
                                      if (!trans_a) GB.noalias() += G.transpose() * A;
                                      else GB.noalias() += G.transpose() * A.transpose();
                                  }
                              }
                          }
                      });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const S* img, int C, int H, int W, int k, int stride, int pad, int dil,
            int Ho, int Wo, S* col) {
    // col is [C*k*k, Ho*Wo]
    for (int c = 0; c < C; ++c) {
        const S* plane = img + int64_t(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                S* row = col + (int64_t(c) * k * k + ki * k + kj) * Ho * Wo;
                for (int y = 0; y < Ho; ++y) {
                    int iy = y * stride + ki * dil - pad;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + int64_t(y) * Wo, row + int64_t(y + 1) * Wo, S(0));
                        continue;
                    }
                    for (int x = 0; x < Wo; ++x) {
                        int ix = x * stride + kj * dil - pad;
                        row[int64_t(y) * Wo + x] = (ix >= 0 && ix < W) ? plane[int64_t(iy) * W + ix] : S(0);
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_accum(const S* col, int C, int H, int W, int k, int stride, int pad, int dil,
                  int Ho, int Wo, S* img) {
    for (int c = 0; c < C; ++c) {
        S* plane = img + int64_t(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const S* row = col + (int64_t(c) * k * k + ki * k + kj) * Ho * Wo;
                for (int y = 0; y < Ho; ++y) {
                    int iy = y * stride + ki * dil - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int x = 0; x < Wo; ++x) {
                        int ix = x * stride + kj * dil - pad;
                        if (ix >= 0 && ix < W) plane[int64_t(iy) * W + ix] += row[int64_t(y) * Wo + x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int padding = 0, int dilation = 1) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw DimensionError("conv2d expects NCHW input and OIkk weight");
    int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    int Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Cin)
        throw DimensionError("conv2d channel mismatch: input Cin=" + std::to_string(Cin) +
                             ", weight Cin=" + std::to_string(weight.dim(1)));
    if (weight.dim(3) != k) throw DimensionError("conv2d expects square kernels");
    int eff = dilation * (k - 1) + 1;
    if (H + 2 * padding < eff || W + 2 * padding < eff)
        throw DimensionError("conv2d: kernel does not fit padded input");
    bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv2d bias must be [Cout]");

    int Ho = (H + 2 * padding - eff) / stride + 1;
    int Wo = (W + 2 * padding - eff) / stride + 1;
    int64_t ckk = int64_t(Cin) * k * k;
    int64_t hw_o = int64_t(Ho) * Wo;

    std::vector<S> out(static_cast<size_t>(N) * Cout * hw_o);
    bool is_1x1_plain = (k == 1 && stride == 1 && padding == 0 && dilation == 1);
    std::vector<S> col;
    if (!is_1x1_plain) col.resize(static_cast<size_t>(ckk * hw_o));

    detail::ECMap<S> Wm(weight.data().data(), Cout, ckk);
    for (int n = 0; n < N; ++n) {
        const S* img = input.data().data() + int64_t(n) * Cin * H * W;
        const S* colp;
        if (is_1x1_plain) {
            colp = img;  // im2col is the identity for plain 1x1
        } else {
            detail::im2col(img, Cin, H, W, k, stride, padding, dilation, Ho, Wo, col.data());
            colp = col.data();
        }
        detail::ECMap<S> Cm(colp, ckk, hw_o);
        detail::EMap<S> Om(out.data() + int64_t(n) * Cout * hw_o, Cout, hw_o);
        Om.noalias() = Wm * Cm;
    }
    if (has_bias) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < Cout; ++c) {
                S b = bias.data()[static_cast<size_t>(c)];
                S* p = out.data() + (int64_t(n) * Cout + c) * hw_o;
                for (int64_t i = 0; i < hw_o; ++i) p[i] += b;
            }
    }

    auto xi = input.impl();
    auto wi = weight.impl();
    std::vector<Tensor<S>> parents = {input, weight};
    std::shared_ptr<TensorImpl<S>> bimpl;
    if (has_bias) {
        parents.push_back(bias);
        bimpl = bias.impl();
    }
    Shape os = {N, Cout, Ho, Wo};
    return make_op<S>(os, std::move(out), parents,
                      [xi, wi, bimpl, N, Cin, H, W, Cout, k, stride, padding, dilation, Ho, Wo,
                       ckk, hw_o, is_1x1_plain](TensorImpl<S>& self) {
                          if (xi->requires_grad) xi->ensure_grad();
                          if (wi->requires_grad) wi->ensure_grad();
                          if (bimpl && bimpl->requires_grad) bimpl->ensure_grad();
                          detail::ECMap<S> Wm(wi->data.data(), Cout, ckk);
                          std::vector<S> col;
                          std::vector<S> gcol;
                          if (!is_1x1_plain) col.resize(static_cast<size_t>(ckk * hw_o));
                          for (int n = 0; n < N; ++n) {
                              detail::ECMap<S> G(self.grad.data() + int64_t(n) * Cout * hw_o, Cout, hw_o);
                              const S* img = xi->data.data() + int64_t(n) * Cin * H * W;
                              const S* colp;
                              if (is_1x1_plain) {
                                  colp = img;
                              } else {
                                  detail::im2col(img, Cin, H, W, k, stride, padding, dilation, Ho, Wo, col.data());
                                  colp = col.data();
                              }
                              if (wi->requires_grad) {
                                  detail::ECMap<S> Cm(colp, ckk, hw_o);
                                  detail::EMap<S> GW(wi->grad.data(), Cout, ckk);
                                  GW.noalias() += G * Cm.transpose();
                              }
                              if (xi->requires_grad) {
                                  if (is_1x1_plain) {
                                      detail::EMap<S> GX(xi->grad.data() + int64_t(n) * Cin * H * W, ckk, hw_o);
                                      GX.noalias() += Wm.transpose() * G;
                                  } else {
                                      gcol.assign(static_cast<size_t>(ckk * hw_o), S(0));
                                      detail::EMap<S> GC(gcol.data(), ckk, hw_o);
                                      GC.noalias() = Wm.transpose() * G;
                                      detail::col2im_accum(gcol.data(), Cin, H, W, k, stride, padding,
                                                           dilation, Ho, Wo,
                                                           xi->grad.data() + int64_t(n) * Cin * H * W);
                                  }
                              }
                              if (bimpl && bimpl->requires_grad) {
                                  for (int c = 0; c < Cout; ++c) {
                                      S acc = 0;
                                      const S* p = self.grad.data() + (int64_t(n) * Cout + c) * hw_o;
                                      for (int64_t i = 0; i < hw_o; ++i) acc += p[i];
                                      bimpl->grad[static_cast<size_t>(c)] += acc;
                                  }
                              }
                          }
                      });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight,
                 int stride = 1, int padding = 0, int dilation = 1) {
    return conv2d(input, weight, Tensor<S>(), stride, padding, dilation);
}

// ---------------------------------------------------------------------------
// softmax along one axis, max-subtracted.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw DimensionError("softmax axis out of range");
    int64_t outer = 1, inner = 1;
    int ax = a.dim(axis);
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);

    std::vector<S> out(a.data().size());
    const auto& av = a.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            int64_t base = o * ax * inner + i;
            S mx = av[static_cast<size_t>(base)];
            for (int j = 1; j < ax; ++j) mx = std::max(mx, av[static_cast<size_t>(base + j * inner)]);
            S sum = 0;
            for (int j = 0; j < ax; ++j) {
                S e = std::exp(av[static_cast<size_t>(base + j * inner)] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                sum += e;
            }
            S inv = S(1) / sum;
            for (int j = 0; j < ax; ++j) out[static_cast<size_t>(base + j * inner)] *= inv;
        }
    }
    auto ai = a.impl();
    return make_op<S>(a.shape(), std::move(out), {a}, [ai, outer, inner, ax](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t i = 0; i < inner; ++i) {
                int64_t base = o * ax * inner + i;
                S dot = 0;
                for (int j = 0; j < ax; ++j) {
                    size_t idx = static_cast<size_t>(base + j * inner);
                    dot += self.data[idx] * self.grad[idx];
                }
                for (int j = 0; j < ax; ++j) {
                    size_t idx = static_cast<size_t>(base + j * inner);
                    ai->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// layer norm over the channel axis of NCHW, per spatial position.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps = 1e-6) {
    if (x.rank() != 4) throw DimensionError("layer_norm expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw DimensionError("layer_norm gamma/beta must have C entries");
    int64_t hw = int64_t(H) * W;
    std::vector<S> out(x.data().size());
    std::vector<S> inv_std(static_cast<size_t>(N) * hw);
    std::vector<S> xhat(x.data().size());
    const auto& xv = x.data();
    for (int n = 0; n < N; ++n) {
        for (int64_t i = 0; i < hw; ++i) {
            S mean = 0;
            for (int c = 0; c < C; ++c) mean += xv[(int64_t(n) * C + c) * hw + i];
            mean /= S(C);
            S var = 0;
            for (int c = 0; c < C; ++c) {
                S d = xv[(int64_t(n) * C + c) * hw + i] - mean;
                var += d * d;
            }
            var /= S(C);
            S istd = S(1) / std::sqrt(var + S(eps));
            inv_std[static_cast<size_t>(n * hw + i)] = istd;
            for (int c = 0; c < C; ++c) {
                size_t idx = static_cast<size_t>((int64_t(n) * C + c) * hw + i);
                S h = (xv[idx] - mean) * istd;
                xhat[idx] = h;
                out[idx] = h * gamma.data()[static_cast<size_t>(c)] + beta.data()[static_cast<size_t>(c)];
            }
        }
    }
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto istd_p = std::make_shared<std::vector<S>>(std::move(inv_std));
    auto xhat_p = std::make_shared<std::vector<S>>(std::move(xhat));
    return make_op<S>(x.shape(), std::move(out), {x, gamma, beta},
                      [xi, gi, bi, istd_p, xhat_p, N, C, hw](TensorImpl<S>& self) {
                          if (xi->requires_grad) xi->ensure_grad();
                          if (gi->requires_grad) gi->ensure_grad();
                          if (bi->requires_grad) bi->ensure_grad();
                          const auto& istd = *istd_p;
                          const auto& xh = *xhat_p;
                          for (int n = 0; n < N; ++n) {
                              for (int64_t i = 0; i < hw; ++i) {
                                  S sum_g = 0, sum_gh = 0;
                                  for (int c = 0; c < C; ++c) {
                                      size_t idx = static_cast<size_t>((int64_t(n) * C + c) * hw + i);
                                      S gy = self.grad[idx] * gi->data[static_cast<size_t>(c)];
                                      sum_g += gy;
                                      sum_gh += gy * xh[idx];
                                  }
                                  for (int c = 0; c < C; ++c) {
                                      size_t idx = static_cast<size_t>((int64_t(n) * C + c) * hw + i);
                                      if (gi->requires_grad)
                                          gi->grad[static_cast<size_t>(c)] += self.grad[idx] * xh[idx];
                                      if (bi->requires_grad)
                                          bi->grad[static_cast<size_t>(c)] += self.grad[idx];
                                      if (xi->requires_grad) {
                                          S gy = self.grad[idx] * gi->data[static_cast<size_t>(c)];
                                          xi->grad[idx] += istd[static_cast<size_t>(n * hw + i)] *
                                                           (gy - (sum_g + xh[idx] * sum_gh) / S(C));
                                      }
                                  }
                              }
                          }
                      });
}

// ---------------------------------------------------------------------------
// pixel unshuffle / shuffle
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> pixel_unshuffle(const Tensor<S>& x, int factor) {
    if (x.rank() != 4) throw DimensionError("pixel_unshuffle expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % factor != 0 || W % factor != 0)
        throw DimensionError("pixel_unshuffle: spatial dims not divisible by factor");
    int Ho = H / factor, Wo = W / factor, f2 = factor * factor;
    std::vector<S> out(x.data().size());
    const auto& xv = x.data();
    // out[n, c*f2 + fy*factor + fx, y, x] = in[n, c, y*factor+fy, x*factor+fx]
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int fy = 0; fy < factor; ++fy)
                for (int fx = 0; fx < factor; ++fx) {
                    int oc = c * f2 + fy * factor + fx;
                    for (int y = 0; y < Ho; ++y)
                        for (int xq = 0; xq < Wo; ++xq)
                            out[((int64_t(n) * C * f2 + oc) * Ho + y) * Wo + xq] =
                                xv[((int64_t(n) * C + c) * H + y * factor + fy) * W + xq * factor + fx];
                }
    auto xi = x.impl();
    return make_op<S>({N, C * f2, Ho, Wo}, std::move(out), {x},
                      [xi, N, C, H, W, Ho, Wo, factor, f2](TensorImpl<S>& self) {
                          if (!xi->requires_grad) return;
                          xi->ensure_grad();
                          for (int n = 0; n < N; ++n)
                              for (int c = 0; c < C; ++c)
                                  for (int fy = 0; fy < factor; ++fy)
                                      for (int fx = 0; fx < factor; ++fx) {
                                          int oc = c * f2 + fy * factor + fx;
                                          for (int y = 0; y < Ho; ++y)
                                              for (int xq = 0; xq < Wo; ++xq)
                                                  xi->grad[((int64_t(n) * C + c) * H + y * factor + fy) * W +
                                                           xq * factor + fx] +=
                                                      self.grad[((int64_t(n) * C * f2 + oc) * Ho + y) * Wo + xq];
                                      }
                      });
}

template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, int factor) {
    if (x.rank() != 4) throw DimensionError("pixel_shuffle expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int f2 = factor * factor;
    if (C % f2 != 0) throw DimensionError("pixel_shuffle: channels not divisible by factor^2");
    int Co = C / f2, Ho = H * factor, Wo = W * factor;
    std::vector<S> out(x.data().size());
    const auto& xv = x.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c)
            for (int fy = 0; fy < factor; ++fy)
                for (int fx = 0; fx < factor; ++fx) {
                    int ic = c * f2 + fy * factor + fx;
                    for (int y = 0; y < H; ++y)
                        for (int xq = 0; xq < W; ++xq)
                            out[((int64_t(n) * Co + c) * Ho + y * factor + fy) * Wo + xq * factor + fx] =
                                xv[((int64_t(n) * C + ic) * H + y) * W + xq];
                }
    auto xi = x.impl();
    return make_op<S>({N, Co, Ho, Wo}, std::move(out), {x},
                      [xi, N, C, H, W, Co, Ho, Wo, factor, f2](TensorImpl<S>& self) {
                          if (!xi->requires_grad) return;
                          xi->ensure_grad();
                          for (int n = 0; n < N; ++n)
                              for (int c = 0; c < Co; ++c)
                                  for (int fy = 0; fy < factor; ++fy)
                                      for (int fx = 0; fx < factor; ++fx) {
                                          int ic = c * f2 + fy * factor + fx;
                                          for (int y = 0; y < H; ++y)
                                              for (int xq = 0; xq < W; ++xq)
                                                  xi->grad[((int64_t(n) * C + ic) * H + y) * W + xq] +=
                                                      self.grad[((int64_t(n) * Co + c) * Ho + y * factor + fy) * Wo +
                                                                xq * factor + fx];
                                      }
                      });
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> max_pool2x2(const Tensor<S>& x) {
    if (x.rank() != 4) throw DimensionError("max_pool2x2 expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("max_pool2x2: odd spatial dims");
    int Ho = H / 2, Wo = W / 2;
    std::vector<S> out(static_cast<size_t>(N) * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
    const auto& xv = x.data();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
        for (int y = 0; y < Ho; ++y)
            for (int xq = 0; xq < Wo; ++xq) {
                int64_t base = (nc * H + y * 2) * W + xq * 2;
                int64_t best = base;
                S bv = xv[static_cast<size_t>(base)];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int64_t idx = (nc * H + y * 2 + dy) * W + xq * 2 + dx;
                        if (xv[static_cast<size_t>(idx)] > bv) {
                            bv = xv[static_cast<size_t>(idx)];
                            best = idx;
                        }
                    }
                size_t o = static_cast<size_t>((nc * Ho + y) * Wo + xq);
                out[o] = bv;
                (*argmax)[o] = best;
            }
    auto xi = x.impl();
    return make_op<S>({N, C, Ho, Wo}, std::move(out), {x}, [xi, argmax](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            xi->grad[static_cast<size_t>((*argmax)[i])] += self.grad[i];
    });
}

template <typename S>
Tensor<S> avg_pool2x2(const Tensor<S>& x) {
    if (x.rank() != 4) throw DimensionError("avg_pool2x2 expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avg_pool2x2: odd spatial dims");
    int Ho = H / 2, Wo = W / 2;
    std::vector<S> out(static_cast<size_t>(N) * C * Ho * Wo);
    const auto& xv = x.data();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
        for (int y = 0; y < Ho; ++y)
            for (int xq = 0; xq < Wo; ++xq) {
                S acc = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += xv[static_cast<size_t>((nc * H + y * 2 + dy) * W + xq * 2 + dx)];
                out[static_cast<size_t>((nc * Ho + y) * Wo + xq)] = acc * S(0.25);
            }
    auto xi = x.impl();
    return make_op<S>({N, C, Ho, Wo}, std::move(out), {x}, [xi, N, C, H, W, Ho, Wo](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
            for (int y = 0; y < Ho; ++y)
                for (int xq = 0; xq < Wo; ++xq) {
                    S g = self.grad[static_cast<size_t>((nc * Ho + y) * Wo + xq)] * S(0.25);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            xi->grad[static_cast<size_t>((nc * H + y * 2 + dy) * W + xq * 2 + dx)] += g;
                }
    });
}

// 3x3 mean pooling at stride 1, same size; the divisor counts only in-bounds
// taps so borders stay unbiased.
template <typename S>
Tensor<S> avg_pool3x3_same(const Tensor<S>& x) {
    if (x.rank() != 4) throw DimensionError("avg_pool3x3_same expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<S> out(x.data().size());
    const auto& xv = x.data();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
        for (int y = 0; y < H; ++y)
            for (int xq = 0; xq < W; ++xq) {
                S acc = 0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int iy = y + dy, ix = xq + dx;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                            acc += xv[static_cast<size_t>((nc * H + iy) * W + ix)];
                            ++cnt;
                        }
                    }
                out[static_cast<size_t>((nc * H + y) * W + xq)] = acc / S(cnt);
            }
    auto xi = x.impl();
    return make_op<S>(x.shape(), std::move(out), {x}, [xi, N, C, H, W](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
            for (int y = 0; y < H; ++y)
                for (int xq = 0; xq < W; ++xq) {
                    int cnt = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int iy = y + dy, ix = xq + dx;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W) ++cnt;
                        }
                    S g = self.grad[static_cast<size_t>((nc * H + y) * W + xq)] / S(cnt);
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int iy = y + dy, ix = xq + dx;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                xi->grad[static_cast<size_t>((nc * H + iy) * W + ix)] += g;
                        }
                }
    });
}

// ---------------------------------------------------------------------------
// bilinear x2 upsample (half-pixel centers, borders clamped)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> upsample_bilinear_x2(const Tensor<S>& x) {
    if (x.rank() != 4) throw DimensionError("upsample_bilinear_x2 expects NCHW");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Ho = H * 2, Wo = W * 2;
    std::vector<S> out(static_cast<size_t>(N) * C * Ho * Wo);
    const auto& xv = x.data();
    auto src_coord = [](int o) { return (o + 0.5) * 0.5 - 0.5; };
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
        for (int y = 0; y < Ho; ++y) {
            double sy = src_coord(y);
            int y0 = static_cast<int>(std::floor(sy));
            double wy = sy - y0;
            int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
            for (int xq = 0; xq < Wo; ++xq) {
                double sx = src_coord(xq);
                int x0 = static_cast<int>(std::floor(sx));
                double wx = sx - x0;
                int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
                S v00 = xv[static_cast<size_t>((nc * H + y0c) * W + x0c)];
                S v01 = xv[static_cast<size_t>((nc * H + y0c) * W + x1c)];
                S v10 = xv[static_cast<size_t>((nc * H + y1c) * W + x0c)];
                S v11 = xv[static_cast<size_t>((nc * H + y1c) * W + x1c)];
                out[static_cast<size_t>((nc * Ho + y) * Wo + xq)] =
                    static_cast<S>((1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
            }
        }
    auto xi = x.impl();
    return make_op<S>({N, C, Ho, Wo}, std::move(out), {x}, [xi, N, C, H, W, Ho, Wo](TensorImpl<S>& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        auto src_coord = [](int o) { return (o + 0.5) * 0.5 - 0.5; };
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
            for (int y = 0; y < Ho; ++y) {
                double sy = src_coord(y);
                int y0 = static_cast<int>(std::floor(sy));
                double wy = sy - y0;
                int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
                for (int xq = 0; xq < Wo; ++xq) {
                    double sx = src_coord(xq);
                    int x0 = static_cast<int>(std::floor(sx));
                    double wx = sx - x0;
                    int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
                    S g = self.grad[static_cast<size_t>((nc * Ho + y) * Wo + xq)];
                    xi->grad[static_cast<size_t>((nc * H + y0c) * W + x0c)] += static_cast<S>(g * (1 - wy) * (1 - wx));
                    xi->grad[static_cast<size_t>((nc * H + y0c) * W + x1c)] += static_cast<S>(g * (1 - wy) * wx);
                    xi->grad[static_cast<size_t>((nc * H + y1c) * W + x0c)] += static_cast<S>(g * wy * (1 - wx));
                    xi->grad[static_cast<size_t>((nc * H + y1c) * W + x1c)] += static_cast<S>(g * wy * wx);
                }
            }
    });
}

// Repeated x2 upsampling until the target size is reached (powers of two).
template <typename S>
Tensor<S> upsample_to(const Tensor<S>& x, int H, int W) {
    Tensor<S> cur = x;
    while (cur.dim(2) < H || cur.dim(3) < W) cur = upsample_bilinear_x2(cur);
    if (cur.dim(2) != H || cur.dim(3) != W)
        throw DimensionError("upsample_to: target not a power-of-two multiple");
    return cur;
}

// ---------------------------------------------------------------------------
// bilinear grid sampling; grid holds normalized coords in [-1,1] with
// (-1,-1) at the top-left pixel center. Out-of-range samples clamp to the
// border. Differentiable in both the source and the grid.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& src, const Tensor<S>& grid) {
    if (src.rank() != 4 || grid.rank() != 4 || grid.dim(1) != 2)
        throw DimensionError("bilinear_sample expects NCHW source and N2HW grid");
    if (src.dim(0) != grid.dim(0)) throw DimensionError("bilinear_sample batch mismatch");
    int N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
    int Hg = grid.dim(2), Wg = grid.dim(3);
    int64_t hw_g = int64_t(Hg) * Wg;
    int64_t hw_s = int64_t(H) * W;

    std::vector<S> out(static_cast<size_t>(N) * C * hw_g);
    const auto& sv = src.data();
    const auto& gv = grid.data();
    auto to_px = [](S norm, int size) { return (norm + S(1)) * S(0.5) * S(size - 1); };
    for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < hw_g; ++i) {
            S px = to_px(gv[static_cast<size_t>((int64_t(n) * 2 + 0) * hw_g + i)], W);
            S py = to_px(gv[static_cast<size_t>((int64_t(n) * 2 + 1) * hw_g + i)], H);
            int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
            S wx = px - S(x0), wy = py - S(y0);
            int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
            int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
            for (int c = 0; c < C; ++c) {
                const S* plane = sv.data() + (int64_t(n) * C + c) * hw_s;
                S v00 = plane[int64_t(y0c) * W + x0c];
                S v01 = plane[int64_t(y0c) * W + x1c];
                S v10 = plane[int64_t(y1c) * W + x0c];
                S v11 = plane[int64_t(y1c) * W + x1c];
                out[static_cast<size_t>((int64_t(n) * C + c) * hw_g + i)] =
                    (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
            }
        }
    auto si = src.impl();
    auto gi = grid.impl();
    return make_op<S>({N, C, Hg, Wg}, std::move(out), {src, grid},
                      [si, gi, N, C, H, W, hw_g, hw_s](TensorImpl<S>& self) {
                          if (si->requires_grad) si->ensure_grad();
                          if (gi->requires_grad) gi->ensure_grad();
                          auto to_px = [](S norm, int size) { return (norm + S(1)) * S(0.5) * S(size - 1); };
                          for (int n = 0; n < N; ++n)
                              for (int64_t i = 0; i < hw_g; ++i) {
                                  S px = to_px(gi->data[static_cast<size_t>((int64_t(n) * 2 + 0) * hw_g + i)], W);
                                  S py = to_px(gi->data[static_cast<size_t>((int64_t(n) * 2 + 1) * hw_g + i)], H);
                                  int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
                                  S wx = px - S(x0), wy = py - S(y0);
                                  int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
                                  int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
                                  // d(px)/d(norm) vanishes where the sample is fully clamped
                                  S dpx = S(0.5) * S(W - 1);
                                  S dpy = S(0.5) * S(H - 1);
                                  S gx_acc = 0, gy_acc = 0;
                                  for (int c = 0; c < C; ++c) {
                                      const S* plane = si->data.data() + (int64_t(n) * C + c) * hw_s;
                                      S v00 = plane[int64_t(y0c) * W + x0c];
                                      S v01 = plane[int64_t(y0c) * W + x1c];
                                      S v10 = plane[int64_t(y1c) * W + x0c];
                                      S v11 = plane[int64_t(y1c) * W + x1c];
                                      S g = self.grad[static_cast<size_t>((int64_t(n) * C + c) * hw_g + i)];
                                      if (si->requires_grad) {
                                          S* gplane = si->grad.data() + (int64_t(n) * C + c) * hw_s;
                                          gplane[int64_t(y0c) * W + x0c] += g * (S(1) - wy) * (S(1) - wx);
                                          gplane[int64_t(y0c) * W + x1c] += g * (S(1) - wy) * wx;
                                          gplane[int64_t(y1c) * W + x0c] += g * wy * (S(1) - wx);
                                          gplane[int64_t(y1c) * W + x1c] += g * wy * wx;
                                      }
                                      gx_acc += g * ((S(1) - wy) * (v01 - v00) + wy * (v11 - v10));
                                      gy_acc += g * ((S(1) - wx) * (v10 - v00) + wx * (v11 - v01));
                                  }
                                  if (gi->requires_grad) {
                                      gi->grad[static_cast<size_t>((int64_t(n) * 2 + 0) * hw_g + i)] += gx_acc * dpx;
                                      gi->grad[static_cast<size_t>((int64_t(n) * 2 + 1) * hw_g + i)] += gy_acc * dpy;
                                  }
                              }
                      });
}

}  // namespace htd
