#include "hrhf/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hrhf::kernels {

namespace {

std::atomic<int> g_threads{0};  // 0 = uninitialized

int env_threads() {
  const char* v = std::getenv("HRHF_THREADS");
  if (!v) return 1;
  const long n = std::strtol(v, nullptr, 10);
  return n > 0 ? static_cast<int>(n) : 1;
}

}  // namespace

int thread_count() {
  int t = g_threads.load(std::memory_order_relaxed);
  if (t == 0) {
    t = env_threads();
    g_threads.store(t, std::memory_order_relaxed);
  }
  return t;
}

void set_threads(int n) { g_threads.store(n > 0 ? n : 1, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// conv2d, stride 1. Output element (n,oy,ox,oc) accumulates over (ky,kx,ic)
// ascending in both the serial reference and the parallel version.
// ---------------------------------------------------------------------------

void conv2d_forward(const double* x, std::int64_t N, std::int64_t H,
                    std::int64_t W, std::int64_t Ci, const double* w,
                    std::int64_t KH, std::int64_t KW, std::int64_t Co,
                    const double* b, std::int64_t pad, double* y) {
  const int T = thread_count();
  const std::int64_t NR = N * H;  // parallel over (n, oy) rows
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1)
#endif
  for (std::int64_t row = 0; row < NR; ++row) {
    const std::int64_t n = row / H;
    const std::int64_t oy = row % H;
    std::vector<double> acc(static_cast<size_t>(Co));
    for (std::int64_t ox = 0; ox < W; ++ox) {
      for (std::int64_t oc = 0; oc < Co; ++oc) acc[oc] = b ? b[oc] : 0.0;
      for (std::int64_t ky = 0; ky < KH; ++ky) {
        const std::int64_t iy = oy + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (std::int64_t kx = 0; kx < KW; ++kx) {
          const std::int64_t ix = ox + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const double* xp = x + ((n * H + iy) * W + ix) * Ci;
          const double* wp = w + (ky * KW + kx) * Ci * Co;
          for (std::int64_t ic = 0; ic < Ci; ++ic) {
            const double xv = xp[ic];
            const double* wrow = wp + ic * Co;
            for (std::int64_t oc = 0; oc < Co; ++oc) acc[oc] += xv * wrow[oc];
          }
        }
      }
      double* yp = y + ((n * H + oy) * W + ox) * Co;
      for (std::int64_t oc = 0; oc < Co; ++oc) yp[oc] = acc[oc];
    }
  }
}

void conv2d_backward_input(const double* gy, const double* w, std::int64_t N,
                           std::int64_t H, std::int64_t W, std::int64_t Ci,
                           std::int64_t KH, std::int64_t KW, std::int64_t Co,
                           std::int64_t pad, double* gx) {
  // transposed weights [KH][KW][Co][Ci] so the inner axpy runs over ic
  std::vector<double> wt(static_cast<size_t>(KH * KW * Ci * Co));
  for (std::int64_t ky = 0; ky < KH; ++ky)
    for (std::int64_t kx = 0; kx < KW; ++kx)
      for (std::int64_t ic = 0; ic < Ci; ++ic)
        for (std::int64_t oc = 0; oc < Co; ++oc)
          wt[((ky * KW + kx) * Co + oc) * Ci + ic] =
              w[((ky * KW + kx) * Ci + ic) * Co + oc];

  const int T = thread_count();
  const std::int64_t NR = N * H;
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1)
#endif
  for (std::int64_t row = 0; row < NR; ++row) {
    const std::int64_t n = row / H;
    const std::int64_t iy = row % H;
    std::vector<double> acc(static_cast<size_t>(Ci));
    for (std::int64_t ix = 0; ix < W; ++ix) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t ky = 0; ky < KH; ++ky) {
        const std::int64_t oy = iy - ky + pad;
        if (oy < 0 || oy >= H) continue;
        for (std::int64_t kx = 0; kx < KW; ++kx) {
          const std::int64_t ox = ix - kx + pad;
          if (ox < 0 || ox >= W) continue;
          const double* gp = gy + ((n * H + oy) * W + ox) * Co;
          const double* wp = wt.data() + (ky * KW + kx) * Co * Ci;
          for (std::int64_t oc = 0; oc < Co; ++oc) {
            const double g = gp[oc];
            const double* wrow = wp + oc * Ci;
            for (std::int64_t ic = 0; ic < Ci; ++ic) acc[ic] += g * wrow[ic];
          }
        }
      }
      double* gxp = gx + ((n * H + iy) * W + ix) * Ci;
      for (std::int64_t ic = 0; ic < Ci; ++ic) gxp[ic] += acc[ic];
    }
  }
}

void conv2d_backward_weights(const double* x, const double* gy, std::int64_t N,
                             std::int64_t H, std::int64_t W, std::int64_t Ci,
                             std::int64_t KH, std::int64_t KW, std::int64_t Co,
                             std::int64_t pad, double* gw) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1)
#endif
  for (std::int64_t oc = 0; oc < Co; ++oc) {
    std::vector<double> acc(static_cast<size_t>(KH * KW * Ci), 0.0);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t oy = 0; oy < H; ++oy) {
        for (std::int64_t ox = 0; ox < W; ++ox) {
          const double g = gy[((n * H + oy) * W + ox) * Co + oc];
          if (g == 0.0) continue;
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t ix = ox + kx - pad;
              if (ix < 0 || ix >= W) continue;
              const double* xp = x + ((n * H + iy) * W + ix) * Ci;
              double* ap = acc.data() + (ky * KW + kx) * Ci;
              for (std::int64_t ic = 0; ic < Ci; ++ic) ap[ic] += xp[ic] * g;
            }
          }
        }
      }
    }
    for (std::int64_t k = 0; k < KH * KW * Ci; ++k) gw[k * Co + oc] = acc[k];
  }
}

void conv2d_backward_bias(const double* gy, std::int64_t rows, std::int64_t Co,
                          double* gb) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1)
#endif
  for (std::int64_t oc = 0; oc < Co; ++oc) {
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) s += gy[r * Co + oc];
    gb[oc] = s;
  }
}

// ---------------------------------------------------------------------------
// elementwise / row-wise
// ---------------------------------------------------------------------------

void relu_forward(const double* x, std::int64_t n, double* y) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && n > 65536)
#endif
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gy, std::int64_t n,
                   double* gx) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && n > 65536)
#endif
  for (std::int64_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
}

namespace {

inline void softmax_row(const double* xr, std::int64_t C, double* yr) {
  double m = xr[0];
  for (std::int64_t c = 1; c < C; ++c) m = std::max(m, xr[c]);
  double s = 0.0;
  for (std::int64_t c = 0; c < C; ++c) {
    yr[c] = std::exp(xr[c] - m);
    s += yr[c];
  }
  const double inv = 1.0 / s;
  for (std::int64_t c = 0; c < C; ++c) yr[c] *= inv;
}

inline void lse_col(const double* x, std::int64_t rows, std::int64_t C,
                    std::int64_t c, double r, double* out) {
  double m = x[c];
  for (std::int64_t i = 1; i < rows; ++i) m = std::max(m, x[i * C + c]);
  double s = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) s += std::exp(r * (x[i * C + c] - m));
  *out = m + std::log(s / static_cast<double>(rows)) / r;
}

}  // namespace

void softmax_lastdim_forward(const double* x, std::int64_t rows,
                             std::int64_t C, double* y) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && rows > 64)
#endif
  for (std::int64_t r = 0; r < rows; ++r) softmax_row(x + r * C, C, y + r * C);
}

void softmax_lastdim_backward(const double* y, const double* gy,
                              std::int64_t rows, std::int64_t C, double* gx) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && rows > 64)
#endif
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* yr = y + r * C;
    const double* gr = gy + r * C;
    double dot = 0.0;
    for (std::int64_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
    double* gxr = gx + r * C;
    for (std::int64_t c = 0; c < C; ++c) gxr[c] += yr[c] * (gr[c] - dot);
  }
}

double sum_all(const double* x, std::int64_t n) {
  // single accumulator, ascending order; stays serial for bit determinism
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

void channel_mean(const double* x, std::int64_t rows, std::int64_t C,
                  double* mu) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && C > 3)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) s += x[r * C + c];
    mu[c] = s / static_cast<double>(rows);
  }
}

void channel_var(const double* x, const double* mu, std::int64_t rows,
                 std::int64_t C, double* var) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && C > 3)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    const double m = mu[c];
    for (std::int64_t r = 0; r < rows; ++r) {
      const double d = x[r * C + c] - m;
      s += d * d;
    }
    var[c] = s / static_cast<double>(rows);
  }
}

void lse_pool(const double* x, std::int64_t rows, std::int64_t C,
              const double* r, double* y) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && C > 3)
#endif
  for (std::int64_t c = 0; c < C; ++c) lse_col(x, rows, C, c, r[c], &y[c]);
}

void lse_pool_backward(const double* x, std::int64_t rows, std::int64_t C,
                       const double* r, const double* gy, double* gx) {
  const int T = thread_count();
#ifdef _OPENMP
#pragma omp parallel for num_threads(T) schedule(static) if (T > 1 && C > 3)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double m = x[c];
    for (std::int64_t i = 1; i < rows; ++i) m = std::max(m, x[i * C + c]);
    double s = 0.0;
    for (std::int64_t i = 0; i < rows; ++i)
      s += std::exp(r[c] * (x[i * C + c] - m));
    const double scale = gy[c] / s;
    for (std::int64_t i = 0; i < rows; ++i)
      gx[i * C + c] += scale * std::exp(r[c] * (x[i * C + c] - m));
  }
}

void max_pool(const double* x, std::int64_t rows, std::int64_t C, double* y,
              std::int64_t* argmax) {
  for (std::int64_t c = 0; c < C; ++c) {
    double m = x[c];
    std::int64_t a = 0;
    for (std::int64_t i = 1; i < rows; ++i) {
      if (x[i * C + c] > m) {
        m = x[i * C + c];
        a = i;
      }
    }
    y[c] = m;
    if (argmax) argmax[c] = a;
  }
}

double tv_loss(const double* x, std::int64_t N, std::int64_t H, std::int64_t W,
               std::int64_t C) {
  double s = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const double* xn = x + n * H * W * C;
    for (std::int64_t i = 0; i < H; ++i) {
      for (std::int64_t j = 0; j < W; ++j) {
        for (std::int64_t c = 0; c < C; ++c) {
          const double v = xn[(i * W + j) * C + c];
          if (j + 1 < W) {
            const double d = xn[(i * W + j + 1) * C + c] - v;
            s += d * d;
          }
          if (i + 1 < H) {
            const double d = xn[((i + 1) * W + j) * C + c] - v;
            s += d * d;
          }
        }
      }
    }
  }
  return s / static_cast<double>(N * H * W);
}

void tv_backward(const double* x, std::int64_t N, std::int64_t H,
                 std::int64_t W, std::int64_t C, double g, double* gx) {
  const double scale = 2.0 * g / static_cast<double>(N * H * W);
  for (std::int64_t n = 0; n < N; ++n) {
    const double* xn = x + n * H * W * C;
    double* gn = gx + n * H * W * C;
    for (std::int64_t i = 0; i < H; ++i) {
      for (std::int64_t j = 0; j < W; ++j) {
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t a = (i * W + j) * C + c;
          if (j + 1 < W) {
            const std::int64_t b = (i * W + j + 1) * C + c;
            const double d = scale * (xn[b] - xn[a]);
            gn[b] += d;
            gn[a] -= d;
          }
          if (i + 1 < H) {
            const std::int64_t b = ((i + 1) * W + j) * C + c;
            const double d = scale * (xn[b] - xn[a]);
            gn[b] += d;
            gn[a] -= d;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// serial reference implementations (naive loops, kept for parity tests and
// the kernel benchmark)
// ---------------------------------------------------------------------------

namespace serial {

void conv2d_forward(const double* x, std::int64_t N, std::int64_t H,
                    std::int64_t W, std::int64_t Ci, const double* w,
                    std::int64_t KH, std::int64_t KW, std::int64_t Co,
                    const double* b, std::int64_t pad, double* y) {
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oy = 0; oy < H; ++oy)
      for (std::int64_t ox = 0; ox < W; ++ox)
        for (std::int64_t oc = 0; oc < Co; ++oc) {
          double s = b ? b[oc] : 0.0;
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t ix = ox + kx - pad;
              if (ix < 0 || ix >= W) continue;
              for (std::int64_t ic = 0; ic < Ci; ++ic)
                s += x[((n * H + iy) * W + ix) * Ci + ic] *
                     w[((ky * KW + kx) * Ci + ic) * Co + oc];
            }
          }
          y[((n * H + oy) * W + ox) * Co + oc] = s;
        }
}

void conv2d_backward_input(const double* gy, const double* w, std::int64_t N,
                           std::int64_t H, std::int64_t W, std::int64_t Ci,
                           std::int64_t KH, std::int64_t KW, std::int64_t Co,
                           std::int64_t pad, double* gx) {
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t iy = 0; iy < H; ++iy)
      for (std::int64_t ix = 0; ix < W; ++ix)
        for (std::int64_t ic = 0; ic < Ci; ++ic) {
          double s = 0.0;
          for (std::int64_t ky = 0; ky < KH; ++ky) {
            const std::int64_t oy = iy - ky + pad;
            if (oy < 0 || oy >= H) continue;
            for (std::int64_t kx = 0; kx < KW; ++kx) {
              const std::int64_t ox = ix - kx + pad;
              if (ox < 0 || ox >= W) continue;
              for (std::int64_t oc = 0; oc < Co; ++oc)
                s += gy[((n * H + oy) * W + ox) * Co + oc] *
                     w[((ky * KW + kx) * Ci + ic) * Co + oc];
            }
          }
          gx[((n * H + iy) * W + ix) * Ci + ic] += s;
        }
}

void conv2d_backward_weights(const double* x, const double* gy, std::int64_t N,
                             std::int64_t H, std::int64_t W, std::int64_t Ci,
                             std::int64_t KH, std::int64_t KW, std::int64_t Co,
                             std::int64_t pad, double* gw) {
  for (std::int64_t ky = 0; ky < KH; ++ky)
    for (std::int64_t kx = 0; kx < KW; ++kx)
      for (std::int64_t ic = 0; ic < Ci; ++ic)
        for (std::int64_t oc = 0; oc < Co; ++oc) {
          double s = 0.0;
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t oy = 0; oy < H; ++oy) {
              const std::int64_t iy = oy + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t ox = 0; ox < W; ++ox) {
                const std::int64_t ix = ox + kx - pad;
                if (ix < 0 || ix >= W) continue;
                const double g = gy[((n * H + oy) * W + ox) * Co + oc];
                if (g == 0.0) continue;
                s += x[((n * H + iy) * W + ix) * Ci + ic] * g;
              }
            }
          gw[((ky * KW + kx) * Ci + ic) * Co + oc] = s;
        }
}

void conv2d_backward_bias(const double* gy, std::int64_t rows, std::int64_t Co,
                          double* gb) {
  for (std::int64_t oc = 0; oc < Co; ++oc) {
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) s += gy[r * Co + oc];
    gb[oc] = s;
  }
}

void softmax_lastdim_forward(const double* x, std::int64_t rows,
                             std::int64_t C, double* y) {
  for (std::int64_t r = 0; r < rows; ++r) softmax_row(x + r * C, C, y + r * C);
}

void channel_mean(const double* x, std::int64_t rows, std::int64_t C,
                  double* mu) {
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) s += x[r * C + c];
    mu[c] = s / static_cast<double>(rows);
  }
}

void channel_var(const double* x, const double* mu, std::int64_t rows,
                 std::int64_t C, double* var) {
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double d = x[r * C + c] - mu[c];
      s += d * d;
    }
    var[c] = s / static_cast<double>(rows);
  }
}

void lse_pool(const double* x, std::int64_t rows, std::int64_t C,
              const double* r, double* y) {
  for (std::int64_t c = 0; c < C; ++c) lse_col(x, rows, C, c, r[c], &y[c]);
}

}  // namespace serial

}  // namespace hrhf::kernels
