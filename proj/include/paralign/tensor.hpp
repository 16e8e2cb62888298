#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "paralign/error.hpp"
#include "paralign/rng.hpp"

namespace paralign {

// Dense row-major matrix of doubles. Vectors are stored as rows x 1.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::string n, std::size_t r, std::size_t c) : name(std::move(n)), rows(r), cols(c), data(r * c, 0.0) {}

  std::size_t size() const { return data.size(); }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void fill_normal(Rng& rng, double stddev) {
    for (auto& x : data) x = rng.normal(0.0, stddev);
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace kernel {

// Eight interleaved partial sums combined in a fixed order: deterministic, and
// lets the compiler vectorize without reassociating.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y = W x (W is rows x cols)
inline void matvec(const Tensor& w, const double* x, double* y) {
  for (std::size_t r = 0; r < w.rows; ++r) y[r] = dot(w.row(r), x, w.cols);
}

// dx += W^T dy
inline void matvec_t_acc(const Tensor& w, const double* dy, double* dx) {
  for (std::size_t r = 0; r < w.rows; ++r)
    if (dy[r] != 0.0) axpy(dy[r], w.row(r), dx, w.cols);
}

// dW += dy x^T
inline void outer_acc(Tensor& dw, const double* dy, const double* x) {
  for (std::size_t r = 0; r < dw.rows; ++r)
    if (dy[r] != 0.0) axpy(dy[r], x, dw.row(r), dw.cols);
}

// In-place log-softmax normalizer: returns log-sum-exp of v.
inline double log_sum_exp(const double* v, std::size_t n) {
  double m = v[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); }

inline double gelu_grad(double z) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

}  // namespace kernel

// Helpers over parameter structs exposing `tensors()` in a fixed order.
template <class Params>
Params zeros_like(const Params& p) {
  return Params(p.arch);
}

template <class Params>
void check_same_shape(const Params& a, const Params& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  require(ta.size() == tb.size(), ErrorKind::ShapeMismatch, "parameter sets have different tensor counts");
  for (std::size_t i = 0; i < ta.size(); ++i)
    require(ta[i]->rows == tb[i]->rows && ta[i]->cols == tb[i]->cols, ErrorKind::ShapeMismatch,
            "shape mismatch in tensor " + ta[i]->name);
}

template <class Params>
void add_into(Params& acc, const Params& g) {
  auto ta = acc.tensors();
  auto tb = g.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) kernel::axpy(1.0, tb[i]->data.data(), ta[i]->data.data(), ta[i]->size());
}

template <class Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  for (const Tensor* t : p.tensors()) n += t->size();
  return n;
}

template <class Params>
bool all_finite(const Params& p) {
  for (const Tensor* t : p.tensors())
    for (double x : t->data)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace paralign
