#include "fg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace fg {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RMat>;
using CMapRM = Eigen::Map<const RMat>;

// col is row-major [C*kh*kw, oh*ow]; out-of-image taps are zero.
void im2col(const double* img, int C, int H, int W, int kh, int kw, int sh,
            int sw, int ph, int pw, int oh, int ow, double* col) {
  const int64_t P = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * sh - ph + ky;
          double* dst = row + static_cast<int64_t>(oy) * ow;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = img + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * sw - pw + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int sh,
                int sw, int ph, int pw, int oh, int ow, double* img) {
  const int64_t P = static_cast<int64_t>(oh) * ow;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * P;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * sh - ph + ky;
          if (iy < 0 || iy >= H) continue;
          const double* src = row + static_cast<int64_t>(oy) * ow;
          double* dst = img + (static_cast<int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * sw - pw + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv_args(const char* op, const Tensor& x, const Tensor& w,
                     const Tensor& b, Pair stride, Pair pad) {
  if (x.ndim() != 4)
    throw ShapeError(str(op, ": input must be [N,C,H,W], got ", shape_str(x.shape())));
  if (w.ndim() != 4)
    throw ShapeError(str(op, ": weight must be 4-D, got ", shape_str(w.shape())));
  if (b.ndim() != 1)
    throw ShapeError(str(op, ": bias must be 1-D, got ", shape_str(b.shape())));
  if (stride[0] < 1 || stride[1] < 1)
    throw ShapeError(str(op, ": stride must be >= 1, got {", stride[0], ",", stride[1], "}"));
  if (pad[0] < 0 || pad[1] < 0)
    throw ShapeError(str(op, ": padding must be >= 0, got {", pad[0], ",", pad[1], "}"));
  if (w.dim(2) < 1 || w.dim(3) < 1)
    throw ShapeError(str(op, ": kernel dims must be >= 1, got ", shape_str(w.shape())));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Pair stride,
              Pair pad) {
  check_conv_args("conv2d", x, w, b, stride, pad);
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError(str("conv2d: weight channel axis ", w.dim(1),
                         " does not match input channel axis ", C));
  if (b.dim(0) != F)
    throw ShapeError(str("conv2d: bias axis ", b.dim(0),
                         " does not match filter axis ", F));
  const int sh = stride[0], sw = stride[1], ph = pad[0], pw = pad[1];
  if (H + 2 * ph < kh)
    throw ShapeError(str("conv2d: kernel height ", kh,
                         " exceeds padded input height ", H + 2 * ph));
  if (W + 2 * pw < kw)
    throw ShapeError(str("conv2d: kernel width ", kw,
                         " exceeds padded input width ", W + 2 * pw));
  const int oh = (H + 2 * ph - kh) / sh + 1;
  const int ow = (W + 2 * pw - kw) / sw + 1;
  const int64_t P = static_cast<int64_t>(oh) * ow;
  const int CKK = C * kh * kw;

  std::vector<double> out(static_cast<size_t>(N) * F * P);
  std::vector<double> col(static_cast<size_t>(CKK) * P);
  CMapRM wm(w.values().data(), F, CKK);
  for (int n = 0; n < N; ++n) {
    im2col(x.values().data() + static_cast<int64_t>(n) * C * H * W, C, H, W,
           kh, kw, sh, sw, ph, pw, oh, ow, col.data());
    CMapRM cm(col.data(), CKK, P);
    MapRM om(out.data() + static_cast<int64_t>(n) * F * P, F, P);
    om.noalias() = wm * cm;
    for (int f = 0; f < F; ++f) om.row(f).array() += b.values()[f];
  }

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op(
      {N, F, oh, ow}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, N, C, H, W, F, kh, kw, sh, sw, ph, pw, oh, ow](Node& o) {
        const int64_t P = static_cast<int64_t>(oh) * ow;
        const int CKK = C * kh * kw;
        CMapRM wm(wn->value.data(), F, CKK);
        std::vector<double> col;
        std::vector<double> colgrad;
        if (wn->requires_grad) {
          wn->ensure_grad();
          col.resize(static_cast<size_t>(CKK) * P);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          colgrad.resize(static_cast<size_t>(CKK) * P);
        }
        for (int n = 0; n < N; ++n) {
          CMapRM gm(o.grad.data() + static_cast<int64_t>(n) * F * P, F, P);
          if (wn->requires_grad) {
            im2col(xn->value.data() + static_cast<int64_t>(n) * C * H * W, C,
                   H, W, kh, kw, sh, sw, ph, pw, oh, ow, col.data());
            CMapRM cm(col.data(), CKK, P);
            MapRM dwm(wn->grad.data(), F, CKK);
            dwm.noalias() += gm * cm.transpose();
          }
          if (xn->requires_grad) {
            MapRM cgm(colgrad.data(), CKK, P);
            cgm.noalias() = wm.transpose() * gm;
            col2im_add(colgrad.data(), C, H, W, kh, kw, sh, sw, ph, pw, oh,
                       ow, xn->grad.data() + static_cast<int64_t>(n) * C * H * W);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int f = 0; f < F; ++f) bn->grad[f] += gm.row(f).sum();
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        Pair stride, Pair pad) {
  check_conv_args("conv_transpose2d", x, w, b, stride, pad);
  const int N = x.dim(0), F = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != F)
    throw ShapeError(str("conv_transpose2d: weight input axis ", w.dim(0),
                         " does not match input channel axis ", F));
  if (b.dim(0) != C)
    throw ShapeError(str("conv_transpose2d: bias axis ", b.dim(0),
                         " does not match output channel axis ", C));
  const int sh = stride[0], sw = stride[1], ph = pad[0], pw = pad[1];
  const int OH = (H - 1) * sh - 2 * ph + kh;
  const int OW = (W - 1) * sw - 2 * pw + kw;
  if (OH < 1 || OW < 1)
    throw ShapeError(str("conv_transpose2d: output spatial extent ", OH, "x",
                         OW, " is empty for input ", shape_str(x.shape())));
  const int64_t P = static_cast<int64_t>(H) * W;  // source positions
  const int CKK = C * kh * kw;

  std::vector<double> out(static_cast<size_t>(N) * C * OH * OW, 0.0);
  std::vector<double> colbuf(static_cast<size_t>(CKK) * P);
  CMapRM wm(w.values().data(), F, CKK);
  for (int n = 0; n < N; ++n) {
    CMapRM xm(x.values().data() + static_cast<int64_t>(n) * F * P, F, P);
    MapRM cm(colbuf.data(), CKK, P);
    cm.noalias() = wm.transpose() * xm;
    col2im_add(colbuf.data(), C, OH, OW, kh, kw, sh, sw, ph, pw, H, W,
               out.data() + static_cast<int64_t>(n) * C * OH * OW);
    double* on = out.data() + static_cast<int64_t>(n) * C * OH * OW;
    for (int c = 0; c < C; ++c) {
      const double bias = b.values()[c];
      double* dst = on + static_cast<int64_t>(c) * OH * OW;
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) dst[i] += bias;
    }
  }

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op(
      {N, C, OH, OW}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, N, C, F, H, W, OH, OW, kh, kw, sh, sw, ph, pw](Node& o) {
        const int64_t P = static_cast<int64_t>(H) * W;
        const int CKK = C * kh * kw;
        CMapRM wm(wn->value.data(), F, CKK);
        std::vector<double> col(static_cast<size_t>(CKK) * P);
        for (int n = 0; n < N; ++n) {
          // Columns of the upstream gradient, laid out over source positions.
          im2col(o.grad.data() + static_cast<int64_t>(n) * C * OH * OW, C, OH,
                 OW, kh, kw, sh, sw, ph, pw, H, W, col.data());
          CMapRM cm(col.data(), CKK, P);
          if (xn->requires_grad) {
            xn->ensure_grad();
            MapRM dxm(xn->grad.data() + static_cast<int64_t>(n) * F * P, F, P);
            dxm.noalias() += wm * cm;
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            CMapRM xm(xn->value.data() + static_cast<int64_t>(n) * F * P, F, P);
            MapRM dwm(wn->grad.data(), F, CKK);
            dwm.noalias() += xm * cm.transpose();
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            const double* g = o.grad.data() + static_cast<int64_t>(n) * C * OH * OW;
            for (int c = 0; c < C; ++c) {
              double s = 0.0;
              const double* gc = g + static_cast<int64_t>(c) * OH * OW;
              for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) s += gc[i];
              bn->grad[c] += s;
            }
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode) {
  if (x.ndim() != 4)
    throw ShapeError(str("batchnorm2d: input must be [N,C,H,W], got ",
                         shape_str(x.shape())));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw ShapeError(str("batchnorm2d: gamma/beta must be [", C, "]"));
  if (state.running_mean.empty()) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  if (static_cast<int>(state.running_mean.size()) != C)
    throw ShapeError(str("batchnorm2d: state tracks ", state.running_mean.size(),
                         " channels, input has ", C));
  const int64_t m = static_cast<int64_t>(N) * H * W;
  const int64_t HW = static_cast<int64_t>(H) * W;

  std::vector<double> mean(C), inv_std(C);
  if (mode == Mode::kTrain) {
    if (m < 2)
      throw EngineError(str("batchnorm2d: train mode needs N*H*W >= 2, got ", m));
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.values().data() + (static_cast<int64_t>(n) * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      const double mu = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;  // guard rounding
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  std::vector<double> out(x.size());
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* p = x.values().data() + (static_cast<int64_t>(n) * C + c) * HW;
      double* q = out.data() + (static_cast<int64_t>(n) * C + c) * HW;
      const double g = gamma.values()[c], bta = beta.values()[c];
      const double mu = mean[c], is = inv_std[c];
      for (int64_t i = 0; i < HW; ++i) q[i] = g * (p[i] - mu) * is + bta;
    }
  }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  const bool train = mode == Mode::kTrain;
  return make_op(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, N, C, HW, m, mean, inv_std, train](Node& o) {
        for (int c = 0; c < C; ++c) {
          const double mu = mean[c], is = inv_std[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < N; ++n) {
            const int64_t off = (static_cast<int64_t>(n) * C + c) * HW;
            const double* dy = o.grad.data() + off;
            const double* xv = xn->value.data() + off;
            for (int64_t i = 0; i < HW; ++i) {
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * (xv[i] - mu) * is;
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[c] += sum_dy_xhat;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[c] += sum_dy;
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const double g = gn->value[c];
            for (int n = 0; n < N; ++n) {
              const int64_t off = (static_cast<int64_t>(n) * C + c) * HW;
              const double* dy = o.grad.data() + off;
              const double* xv = xn->value.data() + off;
              double* dx = xn->grad.data() + off;
              if (train) {
                const double k1 = sum_dy / static_cast<double>(m);
                const double k2 = sum_dy_xhat / static_cast<double>(m);
                for (int64_t i = 0; i < HW; ++i) {
                  const double xhat = (xv[i] - mu) * is;
                  dx[i] += g * is * (dy[i] - k1 - xhat * k2);
                }
              } else {
                for (int64_t i = 0; i < HW; ++i) dx[i] += g * is * dy[i];
              }
            }
          }
        }
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (slope < 0.0 || slope >= 1.0)
    throw ConfigError(str("leaky_relu: slope must be in [0,1), got ", slope));
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (int64_t i = 0; i < x.size(); ++i)
    out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn, slope](Node& o) {
    xn->ensure_grad();
    for (int64_t i = 0; i < o.size(); ++i)
      xn->grad[i] += o.grad[i] * (xn->value[i] >= 0.0 ? 1.0 : slope);
  });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor mfm(const Tensor& x) {
  if (x.ndim() != 2 && x.ndim() != 4)
    throw ShapeError(str("mfm: expected [N,C] or [N,C,H,W], got ", shape_str(x.shape())));
  const int N = x.dim(0), C = x.dim(1);
  if (C % 2 != 0)
    throw ShapeError(str("mfm: channel axis must be even, got ", C));
  const int K = C / 2;
  const int64_t S = x.ndim() == 4 ? static_cast<int64_t>(x.dim(2)) * x.dim(3) : 1;
  std::vector<double> out(static_cast<size_t>(N) * K * S);
  auto xv = x.values();
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      const double* a = xv.data() + (static_cast<int64_t>(n) * C + k) * S;
      const double* b = xv.data() + (static_cast<int64_t>(n) * C + k + K) * S;
      double* q = out.data() + (static_cast<int64_t>(n) * K + k) * S;
      for (int64_t i = 0; i < S; ++i) q[i] = a[i] >= b[i] ? a[i] : b[i];
    }
  }
  Shape oshape = x.shape();
  oshape[1] = K;
  auto xn = x.node();
  return make_op(std::move(oshape), std::move(out), {xn},
                 [xn, N, C, K, S](Node& o) {
                   xn->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int k = 0; k < K; ++k) {
                       const int64_t ia = (static_cast<int64_t>(n) * C + k) * S;
                       const int64_t ib = (static_cast<int64_t>(n) * C + k + K) * S;
                       const double* g = o.grad.data() + (static_cast<int64_t>(n) * K + k) * S;
                       for (int64_t i = 0; i < S; ++i) {
                         if (xn->value[ia + i] >= xn->value[ib + i])
                           xn->grad[ia + i] += g[i];
                         else
                           xn->grad[ib + i] += g[i];
                       }
                     }
                   }
                 });
}

Tensor maxpool2d(const Tensor& x, Pair kernel, Pair stride) {
  if (x.ndim() != 4)
    throw ShapeError(str("maxpool2d: input must be [N,C,H,W], got ", shape_str(x.shape())));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int kh = kernel[0], kw = kernel[1], sh = stride[0], sw = stride[1];
  if (kh < 1 || kw < 1 || sh < 1 || sw < 1)
    throw ShapeError("maxpool2d: kernel and stride must be >= 1");
  if (kh > H || kw > W)
    throw ShapeError(str("maxpool2d: kernel ", kh, "x", kw,
                         " larger than input ", H, "x", W));
  const int oh = (H - kh) / sh + 1;
  const int ow = (W - kw) / sw + 1;
  std::vector<double> out(static_cast<size_t>(N) * C * oh * ow);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  auto xv = x.values();
  int64_t oidx = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* img = xv.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      const int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oidx) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t besti = -1;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * sh + ky;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * sw + kx;
              const double v = img[static_cast<int64_t>(iy) * W + ix];
              if (v > best) {
                best = v;
                besti = base + static_cast<int64_t>(iy) * W + ix;
              }
            }
          }
          out[oidx] = best;
          (*argmax)[oidx] = besti;
        }
      }
    }
  }
  auto xn = x.node();
  return make_op({N, C, oh, ow}, std::move(out), {xn}, [xn, argmax](Node& o) {
    xn->ensure_grad();
    for (int64_t i = 0; i < o.size(); ++i) xn->grad[(*argmax)[i]] += o.grad[i];
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2)
    throw ShapeError(str("affine: input must be [N,D], got ", shape_str(x.shape())));
  if (w.ndim() != 2)
    throw ShapeError(str("affine: weight must be [D,M], got ", shape_str(w.shape())));
  const int N = x.dim(0), D = x.dim(1), M = w.dim(1);
  if (w.dim(0) != D)
    throw ShapeError(str("affine: weight rows ", w.dim(0),
                         " do not match input dim ", D));
  if (b.ndim() != 1 || b.dim(0) != M)
    throw ShapeError(str("affine: bias must be [", M, "], got ", shape_str(b.shape())));

  std::vector<double> out(static_cast<size_t>(N) * M);
  {
    CMapRM xm(x.values().data(), N, D);
    CMapRM wm(w.values().data(), D, M);
    MapRM om(out.data(), N, M);
    om.noalias() = xm * wm;
    Eigen::Map<const Eigen::RowVectorXd> bv(b.values().data(), M);
    om.rowwise() += bv;
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op({N, M}, std::move(out), {xn, wn, bn}, [xn, wn, bn, N, D, M](Node& o) {
    CMapRM gm(o.grad.data(), N, M);
    if (xn->requires_grad) {
      xn->ensure_grad();
      CMapRM wm(wn->value.data(), D, M);
      MapRM dxm(xn->grad.data(), N, D);
      dxm.noalias() += gm * wm.transpose();
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      CMapRM xm(xn->value.data(), N, D);
      MapRM dwm(wn->grad.data(), D, M);
      dwm.noalias() += xm.transpose() * gm;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int j = 0; j < M; ++j) bn->grad[j] += gm.col(j).sum();
    }
  });
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng* rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError(str("dropout: probability must be in [0,1), got ", p));
  if (mode == Mode::kEval || p == 0.0) return x;
  if (rng == nullptr)
    throw ContractError("dropout: train mode requires a seeded generator");
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double mi = rng->uniform() >= p ? keep_scale : 0.0;
    (*mask)[i] = mi;
    out[i] = xv[i] * mi;
  }
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn, mask](Node& o) {
    xn->ensure_grad();
    for (int64_t i = 0; i < o.size(); ++i) xn->grad[i] += o.grad[i] * (*mask)[i];
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError(str("mse_loss: shape mismatch ", shape_str(pred.shape()),
                         " vs ", shape_str(target.shape())));
  const int64_t n = pred.size();
  double acc = 0.0;
  auto pv = pred.values(), tv = target.values();
  for (int64_t i = 0; i < n; ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  const double loss = acc / static_cast<double>(n);
  if (!std::isfinite(loss)) throw EngineError("mse_loss: non-finite loss");
  auto pn = pred.node(), tn = target.node();
  return make_op({1}, {loss}, {pn, tn}, [pn, tn, n](Node& o) {
    const double g = o.grad[0] * 2.0 / static_cast<double>(n);
    if (pn->requires_grad) {
      pn->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        pn->grad[i] += g * (pn->value[i] - tn->value[i]);
    }
    if (tn->requires_grad) {
      tn->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        tn->grad[i] -= g * (pn->value[i] - tn->value[i]);
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError(str("softmax_cross_entropy: logits must be [N,K], got ",
                         shape_str(logits.shape())));
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError(str("softmax_cross_entropy: ", labels.size(),
                         " labels for batch of ", N));
  for (int i = 0; i < N; ++i) {
    if (labels[i] < 0 || labels[i] >= K)
      throw ContractError(str("softmax_cross_entropy: label ", labels[i],
                              " outside [0,", K, ") at row ", i));
  }
  auto lv = logits.values();
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* row = lv.data() + static_cast<int64_t>(i) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
    acc += m + std::log(z) - row[labels[i]];
  }
  const double loss = acc / static_cast<double>(N);
  if (!std::isfinite(loss))
    throw EngineError("softmax_cross_entropy: non-finite loss");
  auto ln = logits.node();
  auto labs = std::make_shared<std::vector<int>>(labels);
  return make_op({1}, {loss}, {ln}, [ln, labs, N, K](Node& o) {
    ln->ensure_grad();
    const double g = o.grad[0] / static_cast<double>(N);
    for (int i = 0; i < N; ++i) {
      const double* row = ln->value.data() + static_cast<int64_t>(i) * K;
      double m = row[0];
      for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
      double z = 0.0;
      for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
      double* dst = ln->grad.data() + static_cast<int64_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const double p = std::exp(row[k] - m) / z;
        dst[k] += g * (p - (k == (*labs)[i] ? 1.0 : 0.0));
      }
    }
  });
}

// --- layer descriptors ------------------------------------------------------

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kConvTranspose2d: return "conv_transpose2d";
    case LayerKind::kBatchNorm2d: return "batchnorm2d";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMfm: return "mfm";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kAffine: return "affine";
    case LayerKind::kDropout: return "dropout";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(LayerKind::kDropout); ++k) {
    if (name == layer_kind_name(static_cast<LayerKind>(k)))
      return static_cast<LayerKind>(k);
  }
  throw FormatError(str("unknown layer kind '", name, "'"));
}

LayerSpec LayerSpec::conv2d(int in, int out, int k, int s, int p) {
  return {LayerKind::kConv2d, in, out, k, k, s, s, p, p, 0.0, 0.0};
}
LayerSpec LayerSpec::conv_transpose2d(int in, int out, int k, int s, int p) {
  return {LayerKind::kConvTranspose2d, in, out, k, k, s, s, p, p, 0.0, 0.0};
}
LayerSpec LayerSpec::batchnorm2d() { return {LayerKind::kBatchNorm2d}; }
LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s{LayerKind::kLeakyRelu};
  s.slope = slope;
  return s;
}
LayerSpec LayerSpec::relu() { return {LayerKind::kRelu}; }
LayerSpec LayerSpec::mfm() { return {LayerKind::kMfm}; }
LayerSpec LayerSpec::maxpool2d(int k, int s) {
  LayerSpec r{LayerKind::kMaxPool2d};
  r.kh = r.kw = k;
  r.sh = r.sw = s;
  return r;
}
LayerSpec LayerSpec::affine(int in, int out) {
  LayerSpec r{LayerKind::kAffine};
  r.in_ch = in;
  r.out_ch = out;
  return r;
}
LayerSpec LayerSpec::dropout(double p) {
  LayerSpec r{LayerKind::kDropout};
  r.drop_p = p;
  return r;
}

void validate_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kConvTranspose2d:
      if (spec.in_ch < 1 || spec.out_ch < 1)
        throw ConfigError(str(layer_kind_name(spec.kind), ": channels must be >= 1"));
      [[fallthrough]];
    case LayerKind::kMaxPool2d:
      if (spec.kh < 1 || spec.kw < 1)
        throw ConfigError(str(layer_kind_name(spec.kind), ": kernel dims must be >= 1"));
      if (spec.sh < 1 || spec.sw < 1)
        throw ConfigError(str(layer_kind_name(spec.kind), ": stride must be >= 1"));
      if (spec.ph < 0 || spec.pw < 0)
        throw ConfigError(str(layer_kind_name(spec.kind), ": padding must be >= 0"));
      break;
    case LayerKind::kLeakyRelu:
      if (spec.slope < 0.0 || spec.slope >= 1.0)
        throw ConfigError(str("leaky_relu: slope must be in [0,1), got ", spec.slope));
      break;
    case LayerKind::kDropout:
      if (spec.drop_p < 0.0 || spec.drop_p >= 1.0)
        throw ConfigError(str("dropout: probability must be in [0,1), got ", spec.drop_p));
      break;
    case LayerKind::kAffine:
      if (spec.in_ch < 1 || spec.out_ch < 1)
        throw ConfigError("affine: dims must be >= 1");
      break;
    default:
      break;
  }
}

std::vector<Shape> infer_stack_shapes(const std::vector<LayerSpec>& specs,
                                      const Shape& input) {
  std::vector<Shape> out;
  Shape cur = input;
  auto fail = [&](size_t i, const std::string& why) {
    std::string trace = shape_str(input);
    for (const auto& s : out) trace += " -> " + shape_str(s);
    throw ShapeError(str("layer ", i, " (", layer_kind_name(specs[i].kind),
                         "): ", why, "; shape trace ", trace));
  };
  for (size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    validate_layer(s);
    switch (s.kind) {
      case LayerKind::kConv2d: {
        if (cur.size() != 4) fail(i, "needs a 4-D input, have " + shape_str(cur));
        if (cur[1] != s.in_ch)
          fail(i, str("expects ", s.in_ch, " input channels, have ", cur[1]));
        if (cur[2] + 2 * s.ph < s.kh || cur[3] + 2 * s.pw < s.kw)
          fail(i, str("kernel ", s.kh, "x", s.kw, " exceeds padded input"));
        cur = {cur[0], s.out_ch, (cur[2] + 2 * s.ph - s.kh) / s.sh + 1,
               (cur[3] + 2 * s.pw - s.kw) / s.sw + 1};
        break;
      }
      case LayerKind::kConvTranspose2d: {
        if (cur.size() != 4) fail(i, "needs a 4-D input");
        if (cur[1] != s.in_ch)
          fail(i, str("expects ", s.in_ch, " input channels, have ", cur[1]));
        const int oh = (cur[2] - 1) * s.sh - 2 * s.ph + s.kh;
        const int ow = (cur[3] - 1) * s.sw - 2 * s.pw + s.kw;
        if (oh < 1 || ow < 1) fail(i, "empty output extent");
        cur = {cur[0], s.out_ch, oh, ow};
        break;
      }
      case LayerKind::kBatchNorm2d:
        if (cur.size() != 4) fail(i, "needs a 4-D input");
        break;
      case LayerKind::kLeakyRelu:
      case LayerKind::kRelu:
      case LayerKind::kDropout:
        break;
      case LayerKind::kMfm:
        if (cur.size() != 2 && cur.size() != 4) fail(i, "needs a 2-D or 4-D input");
        if (cur[1] % 2 != 0)
          fail(i, str("channel axis must be even, have ", cur[1]));
        cur[1] /= 2;
        break;
      case LayerKind::kMaxPool2d:
        if (cur.size() != 4) fail(i, "needs a 4-D input");
        if (s.kh > cur[2] || s.kw > cur[3])
          fail(i, str("kernel ", s.kh, "x", s.kw, " larger than input ", cur[2], "x", cur[3]));
        cur = {cur[0], cur[1], (cur[2] - s.kh) / s.sh + 1, (cur[3] - s.kw) / s.sw + 1};
        break;
      case LayerKind::kAffine: {
        if (cur.size() == 4) cur = {cur[0], cur[1] * cur[2] * cur[3]};
        if (cur.size() != 2) fail(i, "needs a 2-D (or flattenable 4-D) input");
        if (cur[1] != s.in_ch)
          fail(i, str("expects input dim ", s.in_ch, ", have ", cur[1]));
        cur = {cur[0], s.out_ch};
        break;
      }
    }
    out.push_back(cur);
  }
  return out;
}

Tensor& StackParams::at(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw ContractError(str("no parameter named '", name, "'"));
}

const Tensor& StackParams::at(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ContractError(str("no parameter named '", name, "'"));
}

std::vector<Tensor> StackParams::trainable() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [n, t] : params) out.push_back(t);
  return out;
}

namespace {
Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::param(std::move(shape), std::move(v));
}
}  // namespace

StackParams init_stack(const std::vector<LayerSpec>& specs, const Shape& input,
                       Rng& rng) {
  const auto shapes = infer_stack_shapes(specs, input);
  StackParams sp;
  Shape cur = input;
  for (size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const std::string prefix = "l" + std::to_string(i);
    switch (s.kind) {
      case LayerKind::kConv2d:
        sp.params.emplace_back(prefix + ".weight",
                               he_uniform({s.out_ch, s.in_ch, s.kh, s.kw},
                                          s.in_ch * s.kh * s.kw, rng));
        sp.params.emplace_back(prefix + ".bias",
                               Tensor::param({s.out_ch}, std::vector<double>(s.out_ch, 0.0)));
        break;
      case LayerKind::kConvTranspose2d:
        sp.params.emplace_back(prefix + ".weight",
                               he_uniform({s.in_ch, s.out_ch, s.kh, s.kw},
                                          s.in_ch * s.kh * s.kw, rng));
        sp.params.emplace_back(prefix + ".bias",
                               Tensor::param({s.out_ch}, std::vector<double>(s.out_ch, 0.0)));
        break;
      case LayerKind::kBatchNorm2d: {
        const int c = cur[1];
        sp.params.emplace_back(prefix + ".gamma",
                               Tensor::param({c}, std::vector<double>(c, 1.0)));
        sp.params.emplace_back(prefix + ".beta",
                               Tensor::param({c}, std::vector<double>(c, 0.0)));
        sp.bn_states.emplace_back(c);
        break;
      }
      case LayerKind::kAffine:
        sp.params.emplace_back(prefix + ".weight",
                               he_uniform({s.in_ch, s.out_ch}, s.in_ch, rng));
        sp.params.emplace_back(prefix + ".bias",
                               Tensor::param({s.out_ch}, std::vector<double>(s.out_ch, 0.0)));
        break;
      default:
        break;
    }
    cur = shapes[i];
  }
  return sp;
}

Tensor run_stack(const std::vector<LayerSpec>& specs, StackParams& state,
                 const Tensor& x, Mode mode, Rng* dropout_rng) {
  Tensor cur = x;
  size_t bn_index = 0;
  for (size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const std::string prefix = "l" + std::to_string(i);
    switch (s.kind) {
      case LayerKind::kConv2d:
        cur = conv2d(cur, state.at(prefix + ".weight"), state.at(prefix + ".bias"),
                     {s.sh, s.sw}, {s.ph, s.pw});
        break;
      case LayerKind::kConvTranspose2d:
        cur = conv_transpose2d(cur, state.at(prefix + ".weight"),
                               state.at(prefix + ".bias"), {s.sh, s.sw}, {s.ph, s.pw});
        break;
      case LayerKind::kBatchNorm2d:
        cur = batchnorm2d(cur, state.at(prefix + ".gamma"), state.at(prefix + ".beta"),
                          state.bn_states.at(bn_index++), mode);
        break;
      case LayerKind::kLeakyRelu:
        cur = leaky_relu(cur, s.slope);
        break;
      case LayerKind::kRelu:
        cur = relu(cur);
        break;
      case LayerKind::kMfm:
        cur = mfm(cur);
        break;
      case LayerKind::kMaxPool2d:
        cur = maxpool2d(cur, {s.kh, s.kw}, {s.sh, s.sw});
        break;
      case LayerKind::kAffine:
        if (cur.ndim() == 4)
          cur = reshape(cur, {cur.dim(0), cur.dim(1) * cur.dim(2) * cur.dim(3)});
        cur = affine(cur, state.at(prefix + ".weight"), state.at(prefix + ".bias"));
        break;
      case LayerKind::kDropout:
        cur = dropout(cur, s.drop_p, mode, dropout_rng);
        break;
    }
  }
  return cur;
}

}  // namespace fg
