#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fedasmu/errors.hpp"

namespace fedasmu {

/// Flat dense vector of model parameters.
///
/// Every model, snapshot and upload in the protocol is one of these; layer
/// structure lives only in the task code that interprets the layout.
class ParamVector {
public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  ParamVector(std::initializer_list<double> values) : data_(values) {}
  explicit ParamVector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double &operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double> &raw() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v))
        return false;
    return true;
  }

  friend bool operator==(const ParamVector &, const ParamVector &) = default;

private:
  std::vector<double> data_;
};

namespace detail {

inline void require_same_dim(const ParamVector &x, const ParamVector &y,
                             const char *op) {
  if (x.dim() != y.dim())
    throw UsageError(std::string(op) + ": dimension mismatch (" +
                     std::to_string(x.dim()) + " vs " +
                     std::to_string(y.dim()) + ")");
}

} // namespace detail

inline double dot(const ParamVector &x, const ParamVector &y) {
  detail::require_same_dim(x, y, "dot");
  double acc = 0.0;
  for (std::size_t k = 0; k < x.dim(); ++k)
    acc += x[k] * y[k];
  return acc;
}

inline double l2_norm(const ParamVector &x) {
  double acc = 0.0;
  for (double v : x)
    acc += v * v;
  return std::sqrt(acc);
}

/// (1 - a) * keep + a * incoming. Shared kernel of server and device merges.
inline ParamVector mix(double a, const ParamVector &keep,
                       const ParamVector &incoming) {
  if (!(a >= 0.0 && a <= 1.0))
    throw UsageError("mix: weight must lie in [0, 1], got " + std::to_string(a));
  detail::require_same_dim(keep, incoming, "mix");
  ParamVector out(keep.dim());
  for (std::size_t k = 0; k < keep.dim(); ++k)
    out[k] = (1.0 - a) * keep[k] + a * incoming[k];
  return out;
}

inline ParamVector operator-(const ParamVector &x, const ParamVector &y) {
  detail::require_same_dim(x, y, "subtract");
  ParamVector out(x.dim());
  for (std::size_t k = 0; k < x.dim(); ++k)
    out[k] = x[k] - y[k];
  return out;
}

inline ParamVector operator+(const ParamVector &x, const ParamVector &y) {
  detail::require_same_dim(x, y, "add");
  ParamVector out(x.dim());
  for (std::size_t k = 0; k < x.dim(); ++k)
    out[k] = x[k] + y[k];
  return out;
}

inline ParamVector operator*(double c, const ParamVector &x) {
  ParamVector out(x.dim());
  for (std::size_t k = 0; k < x.dim(); ++k)
    out[k] = c * x[k];
  return out;
}

/// y += c * x
inline void axpy(double c, const ParamVector &x, ParamVector &y) {
  detail::require_same_dim(x, y, "axpy");
  for (std::size_t k = 0; k < x.dim(); ++k)
    y[k] += c * x[k];
}

} // namespace fedasmu
