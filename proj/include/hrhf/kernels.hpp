#pragma once

#include <cstdint>

// Low-level numeric kernels. The front-door functions in hrhf::kernels
// parallelize with OpenMP over independent output elements; per-element
// summation order is fixed (row-major ascending), so results are
// bit-identical for any thread count and bit-identical to the naive
// reference implementations in hrhf::kernels::serial, which are kept for
// testing and benchmarking.
//
// Scalar reductions (sum_all, per-channel statistics along the row axis)
// never split a single accumulator across threads: parallelism is only over
// independent accumulators (channels, output pixels, weights).
//
// Layouts: activations [N,H,W,C] row-major (C contiguous); conv weights
// [KH,KW,Ci,Co] (Co contiguous); "rows" flattens all leading dims of a
// [..., C] tensor.

namespace hrhf::kernels {

int thread_count();
void set_threads(int n);

void conv2d_forward(const double* x, std::int64_t N, std::int64_t H,
                    std::int64_t W, std::int64_t Ci, const double* w,
                    std::int64_t KH, std::int64_t KW, std::int64_t Co,
                    const double* b, std::int64_t pad, double* y);

void conv2d_backward_input(const double* gy, const double* w, std::int64_t N,
                           std::int64_t H, std::int64_t W, std::int64_t Ci,
                           std::int64_t KH, std::int64_t KW, std::int64_t Co,
                           std::int64_t pad, double* gx);

void conv2d_backward_weights(const double* x, const double* gy, std::int64_t N,
                             std::int64_t H, std::int64_t W, std::int64_t Ci,
                             std::int64_t KH, std::int64_t KW, std::int64_t Co,
                             std::int64_t pad, double* gw);

void conv2d_backward_bias(const double* gy, std::int64_t rows, std::int64_t Co,
                          double* gb);

void relu_forward(const double* x, std::int64_t n, double* y);
// gx += gy * (x > 0)
void relu_backward(const double* x, const double* gy, std::int64_t n,
                   double* gx);

void softmax_lastdim_forward(const double* x, std::int64_t rows,
                             std::int64_t C, double* y);
// gx += y * (gy - <gy, y>) per row
void softmax_lastdim_backward(const double* y, const double* gy,
                              std::int64_t rows, std::int64_t C, double* gx);

double sum_all(const double* x, std::int64_t n);

void channel_mean(const double* x, std::int64_t rows, std::int64_t C,
                  double* mu);
// biased variance against a supplied center
void channel_var(const double* x, const double* mu, std::int64_t rows,
                 std::int64_t C, double* var);

// y[c] = (1/r_c) * log( (1/rows) * sum_rows exp(r_c * x[row,c]) ), stabilized
void lse_pool(const double* x, std::int64_t rows, std::int64_t C,
              const double* r, double* y);
// gx[row,c] += gy[c] * softmax_rows(r_c * x[:,c])[row]
void lse_pool_backward(const double* x, std::int64_t rows, std::int64_t C,
                       const double* r, const double* gy, double* gx);

void max_pool(const double* x, std::int64_t rows, std::int64_t C, double* y,
              std::int64_t* argmax);

// anisotropic squared-difference total variation over H/W neighbors, summed
// over channels and batch, divided by the total pixel count N*H*W
double tv_loss(const double* x, std::int64_t N, std::int64_t H, std::int64_t W,
               std::int64_t C);
void tv_backward(const double* x, std::int64_t N, std::int64_t H,
                 std::int64_t W, std::int64_t C, double g, double* gx);

namespace serial {

void conv2d_forward(const double* x, std::int64_t N, std::int64_t H,
                    std::int64_t W, std::int64_t Ci, const double* w,
                    std::int64_t KH, std::int64_t KW, std::int64_t Co,
                    const double* b, std::int64_t pad, double* y);

void conv2d_backward_input(const double* gy, const double* w, std::int64_t N,
                           std::int64_t H, std::int64_t W, std::int64_t Ci,
                           std::int64_t KH, std::int64_t KW, std::int64_t Co,
                           std::int64_t pad, double* gx);

void conv2d_backward_weights(const double* x, const double* gy, std::int64_t N,
                             std::int64_t H, std::int64_t W, std::int64_t Ci,
                             std::int64_t KH, std::int64_t KW, std::int64_t Co,
                             std::int64_t pad, double* gw);

void conv2d_backward_bias(const double* gy, std::int64_t rows, std::int64_t Co,
                          double* gb);

void softmax_lastdim_forward(const double* x, std::int64_t rows,
                             std::int64_t C, double* y);

void channel_mean(const double* x, std::int64_t rows, std::int64_t C,
                  double* mu);
void channel_var(const double* x, const double* mu, std::int64_t rows,
                 std::int64_t C, double* var);

void lse_pool(const double* x, std::int64_t rows, std::int64_t C,
              const double* r, double* y);

}  // namespace serial

}  // namespace hrhf::kernels
