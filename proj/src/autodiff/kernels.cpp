// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace volpose::autodiff::kernels {
namespace {

using i64 = std::int64_t;

struct Dims {
  i64 c, d, h, w;
  i64 hw() const { return h * w; }
  i64 dhw() const { return d * h * w; }
};

template <typename T>
Dims dims_of(const BasicTensor<T>& t) {
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

template <typename T>
T sum_row(const T* row, i64 n) {
  T s = 0;
  for (i64 i = 0; i < n; ++i) s += row[i];
  return s;
}

}  // namespace

template <typename T>
void conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                    BasicTensor<T>& y) {
  const Dims in = dims_of(x);
  const i64 co_n = w.dim(0);
  const i64 k = w.dim(2);
  const i64 pad = k / 2;
  const T* __restrict xp = x.raw();
  const T* __restrict wp = w.raw();
  T* __restrict yp = y.raw();

  for (i64 co = 0; co < co_n; ++co) {
    for (i64 z = 0; z < in.d; ++z) {
      for (i64 yy = 0; yy < in.h; ++yy) {
        T* __restrict orow = yp + co * in.dhw() + z * in.hw() + yy * in.w;
        std::fill(orow, orow + in.w, b[co]);
        for (i64 ci = 0; ci < in.c; ++ci) {
          for (i64 kz = 0; kz < k; ++kz) {
            const i64 zi = z + kz - pad;
            if (zi < 0 || zi >= in.d) continue;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 yi = yy + ky - pad;
              if (yi < 0 || yi >= in.h) continue;
              const T* __restrict irow = xp + ci * in.dhw() + zi * in.hw() + yi * in.w;
              const T* wk = wp + (((co * in.c + ci) * k + kz) * k + ky) * k;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 dx = kx - pad;
                const i64 x0 = std::max<i64>(0, -dx);
                const i64 x1 = std::min<i64>(in.w, in.w - dx);
                const T wv = wk[kx];
                for (i64 xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx + dx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                     BasicTensor<T>& gx, BasicTensor<T>& gw, BasicTensor<T>& gb) {
  const Dims in = dims_of(x);
  const i64 co_n = w.dim(0);
  const i64 k = w.dim(2);
  const i64 k3 = k * k * k;
  const i64 pad = k / 2;
  const T* __restrict xp = x.raw();
  const T* __restrict wp = w.raw();
  const T* __restrict gyp = gy.raw();
  T* __restrict gxp = gx.raw();

  // Input gradient: transposed correlation, accumulated per input row.
  for (i64 ci = 0; ci < in.c; ++ci) {
    for (i64 zi = 0; zi < in.d; ++zi) {
      for (i64 yi = 0; yi < in.h; ++yi) {
        T* __restrict grow = gxp + ci * in.dhw() + zi * in.hw() + yi * in.w;
        std::fill(grow, grow + in.w, T{0});
        for (i64 co = 0; co < co_n; ++co) {
          for (i64 kz = 0; kz < k; ++kz) {
            const i64 z = zi - (kz - pad);
            if (z < 0 || z >= in.d) continue;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 yo = yi - (ky - pad);
              if (yo < 0 || yo >= in.h) continue;
              const T* __restrict gorow = gyp + co * in.dhw() + z * in.hw() + yo * in.w;
              const T* wk = wp + (((co * in.c + ci) * k + kz) * k + ky) * k;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 dx = kx - pad;
                const i64 x0 = std::max<i64>(0, dx);
                const i64 x1 = std::min<i64>(in.w, in.w + dx);
                const T wv = wk[kx];
                for (i64 xi = x0; xi < x1; ++xi) grow[xi] += wv * gorow[xi - dx];
              }
            }
          }
        }
      }
    }
  }

  // Weight gradient: per-x partial sums, reduced in a fixed order at the end.
  std::vector<T> acc(static_cast<std::size_t>(k3 * in.w));
  for (i64 co = 0; co < co_n; ++co) {
    for (i64 ci = 0; ci < in.c; ++ci) {
      std::fill(acc.begin(), acc.end(), T{0});
      for (i64 z = 0; z < in.d; ++z) {
        for (i64 yy = 0; yy < in.h; ++yy) {
          const T* __restrict gorow = gyp + co * in.dhw() + z * in.hw() + yy * in.w;
          for (i64 kz = 0; kz < k; ++kz) {
            const i64 zi = z + kz - pad;
            if (zi < 0 || zi >= in.d) continue;
            for (i64 ky = 0; ky < k; ++ky) {
              const i64 yi = yy + ky - pad;
              if (yi < 0 || yi >= in.h) continue;
              const T* __restrict irow = xp + ci * in.dhw() + zi * in.hw() + yi * in.w;
              for (i64 kx = 0; kx < k; ++kx) {
                const i64 dx = kx - pad;
                const i64 x0 = std::max<i64>(0, -dx);
                const i64 x1 = std::min<i64>(in.w, in.w - dx);
                T* __restrict a = acc.data() + ((kz * k + ky) * k + kx) * in.w;
                for (i64 xx = x0; xx < x1; ++xx) a[xx] += gorow[xx] * irow[xx + dx];
              }
            }
          }
        }
      }
      T* gwk = gw.raw() + (co * in.c + ci) * k3;
      for (i64 kk = 0; kk < k3; ++kk) gwk[kk] = sum_row(acc.data() + kk * in.w, in.w);
    }
  }

  std::vector<T> bacc(static_cast<std::size_t>(in.w));
  for (i64 co = 0; co < co_n; ++co) {
    std::fill(bacc.begin(), bacc.end(), T{0});
    for (i64 r = 0; r < in.d * in.h; ++r) {
      const T* __restrict gorow = gyp + co * in.dhw() + r * in.w;
      for (i64 xx = 0; xx < in.w; ++xx) bacc[xx] += gorow[xx];
    }
    gb[co] = sum_row(bacc.data(), in.w);
  }
}

template <typename T>
void deconv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      BasicTensor<T>& y) {
  const Dims in = dims_of(x);
  const Dims out = dims_of(y);
  const T* __restrict xp = x.raw();
  const T* __restrict wp = w.raw();
  T* __restrict yp = y.raw();
  for (i64 co = 0; co < out.c; ++co) {
    for (i64 zo = 0; zo < out.d; ++zo) {
      for (i64 yo = 0; yo < out.h; ++yo) {
        T* __restrict orow = yp + co * out.dhw() + zo * out.hw() + yo * out.w;
        std::fill(orow, orow + out.w, b[co]);
        const i64 z = zo / 2, az = zo % 2, yi = yo / 2, ay = yo % 2;
        for (i64 ci = 0; ci < in.c; ++ci) {
          const T* __restrict irow = xp + ci * in.dhw() + z * in.hw() + yi * in.w;
          const T* wk = wp + (((ci * out.c + co) * 2 + az) * 2 + ay) * 2;
          const T w0 = wk[0], w1 = wk[1];
          for (i64 xx = 0; xx < in.w; ++xx) {
            orow[2 * xx] += w0 * irow[xx];
            orow[2 * xx + 1] += w1 * irow[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void deconv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                       BasicTensor<T>& gx, BasicTensor<T>& gw, BasicTensor<T>& gb) {
  const Dims in = dims_of(x);
  const Dims out = dims_of(gy);
  const T* __restrict xp = x.raw();
  const T* __restrict wp = w.raw();
  const T* __restrict gyp = gy.raw();
  T* __restrict gxp = gx.raw();

  for (i64 ci = 0; ci < in.c; ++ci) {
    for (i64 z = 0; z < in.d; ++z) {
      for (i64 yi = 0; yi < in.h; ++yi) {
        T* __restrict grow = gxp + ci * in.dhw() + z * in.hw() + yi * in.w;
        std::fill(grow, grow + in.w, T{0});
        for (i64 co = 0; co < out.c; ++co) {
          for (i64 az = 0; az < 2; ++az) {
            for (i64 ay = 0; ay < 2; ++ay) {
              const T* __restrict gorow =
                  gyp + co * out.dhw() + (2 * z + az) * out.hw() + (2 * yi + ay) * out.w;
              const T* wk = wp + (((ci * out.c + co) * 2 + az) * 2 + ay) * 2;
              const T w0 = wk[0], w1 = wk[1];
              for (i64 xx = 0; xx < in.w; ++xx) {
                grow[xx] += w0 * gorow[2 * xx];
                grow[xx] += w1 * gorow[2 * xx + 1];
              }
            }
          }
        }
      }
    }
  }

  std::vector<T> acc(static_cast<std::size_t>(8 * in.w));
  for (i64 ci = 0; ci < in.c; ++ci) {
    for (i64 co = 0; co < out.c; ++co) {
      std::fill(acc.begin(), acc.end(), T{0});
      for (i64 z = 0; z < in.d; ++z) {
        for (i64 yi = 0; yi < in.h; ++yi) {
          const T* __restrict irow = xp + ci * in.dhw() + z * in.hw() + yi * in.w;
          for (i64 az = 0; az < 2; ++az) {
            for (i64 ay = 0; ay < 2; ++ay) {
              const T* __restrict gorow =
                  gyp + co * out.dhw() + (2 * z + az) * out.hw() + (2 * yi + ay) * out.w;
              T* __restrict a0 = acc.data() + ((az * 2 + ay) * 2) * in.w;
              T* __restrict a1 = a0 + in.w;
              for (i64 xx = 0; xx < in.w; ++xx) {
                a0[xx] += irow[xx] * gorow[2 * xx];
                a1[xx] += irow[xx] * gorow[2 * xx + 1];
              }
            }
          }
        }
      }
      T* gwk = gw.raw() + (ci * out.c + co) * 8;
      for (i64 kk = 0; kk < 8; ++kk) gwk[kk] = sum_row(acc.data() + kk * in.w, in.w);
    }
  }

  std::vector<T> bacc(static_cast<std::size_t>(out.w));
  for (i64 co = 0; co < out.c; ++co) {
    std::fill(bacc.begin(), bacc.end(), T{0});
    for (i64 r = 0; r < out.d * out.h; ++r) {
      const T* __restrict gorow = gyp + co * out.dhw() + r * out.w;
      for (i64 xx = 0; xx < out.w; ++xx) bacc[xx] += gorow[xx];
    }
    gb[co] = sum_row(bacc.data(), out.w);
  }
}

template <typename T>
void max_pool3d_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
  const Dims in = dims_of(x);
  const Dims out = dims_of(y);
  const T* xp = x.raw();
  T* yp = y.raw();
  for (i64 c = 0; c < out.c; ++c) {
    for (i64 z = 0; z < out.d; ++z) {
      for (i64 yy = 0; yy < out.h; ++yy) {
        for (i64 xx = 0; xx < out.w; ++xx) {
          const T* base = xp + c * in.dhw() + 2 * z * in.hw() + 2 * yy * in.w + 2 * xx;
          T best = base[0];
          for (i64 dz = 0; dz < 2; ++dz)
            for (i64 dy = 0; dy < 2; ++dy)
              for (i64 dx = 0; dx < 2; ++dx) {
                const T v = base[dz * in.hw() + dy * in.w + dx];
                if (v > best) best = v;
              }
          yp[c * out.dhw() + z * out.hw() + yy * out.w + xx] = best;
        }
      }
    }
  }
}

template <typename T>
void max_pool3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& gy, BasicTensor<T>& gx) {
  const Dims in = dims_of(x);
  const Dims out = dims_of(gy);
  const T* xp = x.raw();
  const T* gyp = gy.raw();
  T* gxp = gx.raw();
  gx.fill(T{0});
  for (i64 c = 0; c < out.c; ++c) {
    for (i64 z = 0; z < out.d; ++z) {
      for (i64 yy = 0; yy < out.h; ++yy) {
        for (i64 xx = 0; xx < out.w; ++xx) {
          const i64 base = c * in.dhw() + 2 * z * in.hw() + 2 * yy * in.w + 2 * xx;
          i64 arg = base;
          T best = xp[base];
          for (i64 dz = 0; dz < 2; ++dz)
            for (i64 dy = 0; dy < 2; ++dy)
              for (i64 dx = 0; dx < 2; ++dx) {
                const i64 idx = base + dz * in.hw() + dy * in.w + dx;
                if (xp[idx] > best) {
                  best = xp[idx];
                  arg = idx;
                }
              }
          gxp[arg] += gyp[c * out.dhw() + z * out.hw() + yy * out.w + xx];
        }
      }
    }
  }
}

namespace {

struct ChannelStats {
  double mean;
  double inv_std;
};

template <typename T>
ChannelStats channel_stats(const T* xc, i64 n) {
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += static_cast<double>(xc[i]);
  const double mean = s / static_cast<double>(n);
  double ss = 0.0;
  for (i64 i = 0; i < n; ++i) {
    const double d = static_cast<double>(xc[i]) - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n);
  return {mean, 1.0 / std::sqrt(var + kBatchNormEps)};
}

}  // namespace

template <typename T>
void batch_norm_forward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                        const BasicTensor<T>& beta, BasicTensor<T>& y) {
  const Dims in = dims_of(x);
  const i64 n = in.dhw();
  for (i64 c = 0; c < in.c; ++c) {
    const T* xc = x.raw() + c * n;
    T* yc = y.raw() + c * n;
    const ChannelStats st = channel_stats(xc, n);
    const double g = static_cast<double>(gamma[c]) * st.inv_std;
    const double b = static_cast<double>(beta[c]);
    for (i64 i = 0; i < n; ++i) {
      yc[i] = static_cast<T>(g * (static_cast<double>(xc[i]) - st.mean) + b);
    }
  }
}

template <typename T>
void batch_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& gy, BasicTensor<T>& gx, BasicTensor<T>& ggamma,
                         BasicTensor<T>& gbeta) {
  const Dims in = dims_of(x);
  const i64 n = in.dhw();
  const double nd = static_cast<double>(n);
  for (i64 c = 0; c < in.c; ++c) {
    const T* xc = x.raw() + c * n;
    const T* gc = gy.raw() + c * n;
    T* gxc = gx.raw() + c * n;
    const ChannelStats st = channel_stats(xc, n);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (i64 i = 0; i < n; ++i) {
      const double g = static_cast<double>(gc[i]);
      sum_g += g;
      sum_gx += g * (static_cast<double>(xc[i]) - st.mean) * st.inv_std;
    }
    ggamma[c] = static_cast<T>(sum_gx);
    gbeta[c] = static_cast<T>(sum_g);
    const double scale = static_cast<double>(gamma[c]) * st.inv_std / nd;
    for (i64 i = 0; i < n; ++i) {
      const double xhat = (static_cast<double>(xc[i]) - st.mean) * st.inv_std;
      gxc[i] = static_cast<T>(scale * (nd * static_cast<double>(gc[i]) - sum_g - xhat * sum_gx));
    }
  }
}

template <typename T>
void relu_forward(const BasicTensor<T>& x, BasicTensor<T>& y) {
  const i64 n = x.numel();
  const T* xp = x.raw();
  T* yp = y.raw();
  for (i64 i = 0; i < n; ++i) yp[i] = xp[i] > T{0} ? xp[i] : T{0};
}

template <typename T>
void relu_backward(const BasicTensor<T>& y, const BasicTensor<T>& gy, BasicTensor<T>& gx) {
  const i64 n = y.numel();
  const T* yp = y.raw();
  const T* gp = gy.raw();
  T* gxp = gx.raw();
  for (i64 i = 0; i < n; ++i) gxp[i] = yp[i] > T{0} ? gp[i] : T{0};
}

template <typename T>
void concat_forward(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& y) {
  std::copy(a.raw(), a.raw() + a.numel(), y.raw());
  std::copy(b.raw(), b.raw() + b.numel(), y.raw() + a.numel());
}

template <typename T>
void concat_backward(const BasicTensor<T>& gy, BasicTensor<T>& ga, BasicTensor<T>& gb) {
  std::copy(gy.raw(), gy.raw() + ga.numel(), ga.raw());
  std::copy(gy.raw() + ga.numel(), gy.raw() + gy.numel(), gb.raw());
}

template <typename T>
void add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& y) {
  const i64 n = a.numel();
  for (i64 i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
T l2_loss_forward(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  const i64 n = pred.numel();
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return static_cast<T>(s / static_cast<double>(n));
}

template <typename T>
void l2_loss_backward(const BasicTensor<T>& pred, const BasicTensor<T>& target, T gy,
                      BasicTensor<T>& gpred, BasicTensor<T>& gtarget) {
  const i64 n = pred.numel();
  const double scale = 2.0 * static_cast<double>(gy) / static_cast<double>(n);
  for (i64 i = 0; i < n; ++i) {
    const double g = scale * (static_cast<double>(pred[i]) - static_cast<double>(target[i]));
    gpred[i] = static_cast<T>(g);
    gtarget[i] = static_cast<T>(-g);
  }
}

template <typename T>
T sum_forward(const BasicTensor<T>& x) {
  double s = 0.0;
  for (i64 i = 0; i < x.numel(); ++i) s += static_cast<double>(x[i]);
  return static_cast<T>(s);
}

#define VOLPOSE_INSTANTIATE_KERNELS(T)                                                          \
  template void conv3d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                  const BasicTensor<T>&, BasicTensor<T>&);                      \
  template void conv3d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                   const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&,     \
                                   BasicTensor<T>&);                                            \
  template void deconv3d_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const BasicTensor<T>&, BasicTensor<T>&);                    \
  template void deconv3d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&,   \
                                     BasicTensor<T>&);                                          \
  template void max_pool3d_forward<T>(const BasicTensor<T>&, BasicTensor<T>&);                  \
  template void max_pool3d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                       BasicTensor<T>&);                                        \
  template void batch_norm_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                      const BasicTensor<T>&, BasicTensor<T>&);                  \
  template void batch_norm_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                       const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&, \
                                       BasicTensor<T>&);                                        \
  template void relu_forward<T>(const BasicTensor<T>&, BasicTensor<T>&);                        \
  template void relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>&); \
  template void concat_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>&); \
  template void concat_backward<T>(const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&);    \
  template void add_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>&);  \
  template T l2_loss_forward<T>(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template void l2_loss_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, T,            \
                                    BasicTensor<T>&, BasicTensor<T>&);                          \
  template T sum_forward<T>(const BasicTensor<T>&);

VOLPOSE_INSTANTIATE_KERNELS(float)
VOLPOSE_INSTANTIATE_KERNELS(double)

#undef VOLPOSE_INSTANTIATE_KERNELS

}  // namespace volpose::autodiff::kernels
