#pragma once

// Dense float64 arrays and a tape for reverse-mode differentiation.
//
// A Tape owns every value produced during one forward pass. Nodes are
// appended in evaluation order, so the tape is topologically sorted by
// construction and backward() walks it once in reverse. Parameters enter
// as leaves (copies); after backward() their gradients are read back with
// Var::grad(). Broadcasting is limited to scalars and the explicit row
// broadcasts add_row / mul_row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "evsee/error.hpp"

namespace evsee::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

struct NdArray {
  Shape shape;
  std::vector<double> data;

  NdArray() = default;
  explicit NdArray(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
  NdArray(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw DomainError("NdArray: data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

  static NdArray uniform(Shape s, double lo, double hi, std::mt19937_64& rng) {
    NdArray out(std::move(s));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : out.data) v = dist(rng);
    return out;
  }

  friend bool operator==(const NdArray&, const NdArray&) = default;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Shape& shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  double item() const;
  std::size_t size() const { return value().size(); }
  std::size_t last_dim() const { return shape().empty() ? 1 : shape().back(); }
  std::size_t rows() const { return size() / last_dim(); }
  NdArray array() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Backward callback for node `self`: read grad(self), accumulate into inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(NdArray value, bool requires_grad = true) {
    Node n;
    n.shape = std::move(value.shape);
    n.value = std::move(value.data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }
  Var constant(NdArray value) { return leaf(std::move(value), false); }
  Var scalar(double v, bool requires_grad = false) { return leaf(NdArray({1}, {v}), requires_grad); }

  // Appends a primitive application. The node requires a gradient iff any
  // input does; the callback is dropped otherwise.
  Var record(Shape shape, std::vector<double> value, std::vector<Var> inputs, BackwardFn backward) {
    if (value.size() != numel(shape)) throw DomainError("Tape::record: value/shape mismatch");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    for (const Var& in : inputs) {
      check_owner(in);
      n.inputs.push_back(in.id());
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void backward(const Var& output) {
    check_owner(output);
    if (nodes_[output.id()].value.size() != 1)
      throw DomainError("backward: output must be a scalar, got " +
                        shape_str(nodes_[output.id()].shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(output.id())[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  const std::vector<double>& value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient storage for `id`, allocated on first use. Returns an empty
  // span for nodes that do not require gradients so callers can skip work.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  std::span<double> input_grad(std::size_t self, std::size_t k) {
    return grad_buffer(nodes_[self].inputs[k]);
  }
  const std::vector<double>& input_value(std::size_t self, std::size_t k) const {
    return nodes_[nodes_[self].inputs[k]].value;
  }

 private:
  void check_owner(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
      throw DomainError("Var does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

inline const Shape& Var::shape() const { return tape_->node(id_).shape; }
inline std::span<const double> Var::value() const { return tape_->value(id_); }
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }
inline double Var::item() const {
  if (size() != 1) throw DomainError("item() on non-scalar " + shape_str(shape()));
  return value()[0];
}
inline NdArray Var::array() const {
  return NdArray(shape(), std::vector<double>(value().begin(), value().end()));
}

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DomainError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

inline void require_2d(const Var& a, const char* op) {
  if (a.shape().size() != 2)
    throw DomainError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(a.shape()));
}

inline Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw DomainError("operation on an unbound Var");
  return *a.tape();
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  std::vector<double> out(a.size());
  const auto x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return t.record(a.shape(), std::move(out), {a}, [deriv](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.input_value(self, 0);
    const auto& y = tp.value(self);
    auto gx = tp.input_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

// ---- element-wise -------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::tape_of(a).record(a.shape(), std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      auto gi = t.input_grad(self, k);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::tape_of(a).record(a.shape(), std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto ga = t.input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = t.input_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::tape_of(a).record(a.shape(), std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.input_value(self, 0);
    const auto& bv = t.input_value(self, 1);
    auto ga = t.input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = t.input_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  for (double x : a.value())
    if (x < 0.0) throw NumericError("sqrt of a negative value");
  return detail::unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) {
        if (y == 0.0) throw NumericError("sqrt backward: division by zero at 0");
        return 0.5 / y;
      });
}

// ---- reductions ---------------------------------------------------------

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return detail::tape_of(a).record({1}, {s}, {a}, [](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& gi : t.input_grad(self, 0)) gi += g;
  });
}

inline Var mean(const Var& a) {
  if (a.size() == 0) throw DomainError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---- shape --------------------------------------------------------------

inline Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DomainError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.value().begin(), a.value().end());
  return detail::tape_of(a).record(std::move(shape), std::move(out), {a}, [](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto ga = t.input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

inline Var transpose(const Var& a) {
  detail::require_2d(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  const auto x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return detail::tape_of(a).record({n, m}, std::move(out), {a}, [m, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto ga = t.input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// Concatenates along the last axis; all leading dimensions must agree.
inline Var concat_lastdim(std::span<const Var> parts) {
  if (parts.empty()) throw DomainError("concat_lastdim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.shape().empty() || Shape(p.shape().begin(), p.shape().end() - 1) != lead)
      throw DomainError("concat_lastdim: leading dimensions differ");
    widths.push_back(p.last_dim());
    total += p.last_dim();
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return detail::tape_of(parts[0]).record(
      std::move(shape), std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [widths, rows, total](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          auto gk = t.input_grad(self, k);
          if (!gk.empty())
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + off + c];
          off += widths[k];
        }
      });
}

inline Var concat_lastdim(std::initializer_list<Var> parts) {
  return concat_lastdim(std::span<const Var>(parts.begin(), parts.size()));
}

// Columns [begin, end) of the last axis.
inline Var slice_lastdim(const Var& a, std::size_t begin, std::size_t end) {
  const std::size_t width = a.last_dim();
  if (begin >= end || end > width)
    throw DomainError("slice_lastdim: invalid range [" + std::to_string(begin) + ", " +
                      std::to_string(end) + ") of " + std::to_string(width));
  const std::size_t rows = a.rows(), w = end - begin;
  std::vector<double> out(rows * w);
  const auto x = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * width + begin + c];
  Shape shape = a.shape();
  shape.back() = w;
  return detail::tape_of(a).record(std::move(shape), std::move(out), {a},
                                   [rows, w, width, begin](Tape& t, std::size_t self) {
                                     const auto& g = t.grad(self);
                                     auto ga = t.input_grad(self, 0);
                                     for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < w; ++c)
                                         ga[r * width + begin + c] += g[r * w + c];
                                   });
}

// ---- linear algebra -----------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DomainError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto x = a.value();
  const auto y = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yr = &y[p * n];
      double* o = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += xv * yr[j];
    }
  return detail::tape_of(a).record({m, n}, std::move(out), {a, b}, [m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.input_value(self, 0);
    const auto& y = t.input_value(self, 1);
    auto ga = t.input_grad(self, 0);
    if (!ga.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
          ga[i * k + p] += s;
        }
    auto gb = t.input_grad(self, 1);
    if (!gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          if (xv == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
        }
  });
}

namespace detail {

template <bool Multiply>
Var row_broadcast(const Var& a, const Var& row, const char* op) {
  const std::size_t width = a.last_dim();
  if (row.size() != width)
    throw DomainError(std::string(op) + ": row of size " + std::to_string(row.size()) +
                      " against last dim " + std::to_string(width));
  const std::size_t rows = a.rows();
  std::vector<double> out(a.size());
  const auto x = a.value();
  const auto r = row.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < width; ++c)
      out[i * width + c] = Multiply ? x[i * width + c] * r[c] : x[i * width + c] + r[c];
  return tape_of(a).record(a.shape(), std::move(out), {a, row}, [rows, width](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.input_value(self, 0);
    const auto& r = t.input_value(self, 1);
    auto ga = t.input_grad(self, 0);
    if (!ga.empty())
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < width; ++c)
          ga[i * width + c] += Multiply ? g[i * width + c] * r[c] : g[i * width + c];
    auto gr = t.input_grad(self, 1);
    if (!gr.empty())
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < width; ++c)
          gr[c] += Multiply ? g[i * width + c] * x[i * width + c] : g[i * width + c];
  });
}

}  // namespace detail

// a + row broadcast over every leading index; row has last_dim elements.
inline Var add_row(const Var& a, const Var& row) { return detail::row_broadcast<false>(a, row, "add_row"); }
inline Var mul_row(const Var& a, const Var& row) { return detail::row_broadcast<true>(a, row, "mul_row"); }

inline Var softmax_lastdim(const Var& a) {
  const std::size_t width = a.last_dim(), rows = a.rows();
  std::vector<double> out(a.size());
  const auto x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * width];
    double* yr = &out[r * width];
    const double mx = *std::max_element(xr, xr + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < width; ++c) yr[c] /= z;
  }
  return detail::tape_of(a).record(a.shape(), std::move(out), {a}, [rows, width](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto ga = t.input_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < width; ++c) dot += g[r * width + c] * y[r * width + c];
      for (std::size_t c = 0; c < width; ++c)
        ga[r * width + c] += y[r * width + c] * (g[r * width + c] - dot);
    }
  });
}

// Normalises each row to zero mean and unit variance (no affine part).
inline Var layer_norm_lastdim(const Var& a, double eps = 1e-5) {
  const std::size_t width = a.last_dim(), rows = a.rows();
  std::vector<double> out(a.size());
  std::vector<double> inv_std(rows);
  const auto x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += x[r * width + c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (x[r * width + c] - mu) * (x[r * width + c] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = (x[r * width + c] - mu) * inv_std[r];
  }
  return detail::tape_of(a).record(
      a.shape(), std::move(out), {a}, [rows, width, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto ga = t.input_grad(self, 0);
        const double n = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          double gm = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < width; ++c) {
            gm += g[r * width + c];
            gy += g[r * width + c] * y[r * width + c];
          }
          gm /= n;
          gy /= n;
          for (std::size_t c = 0; c < width; ++c)
            ga[r * width + c] += inv_std[r] * (g[r * width + c] - gm - y[r * width + c] * gy);
        }
      });
}

namespace detail {

template <bool AlongX>
Var forward_diff(const Var& a, std::size_t height, std::size_t width) {
  const std::size_t ch = a.last_dim();
  if (a.size() != height * width * ch)
    throw DomainError("forward_diff: tensor " + shape_str(a.shape()) + " is not " +
                      std::to_string(height) + "x" + std::to_string(width) + "xC");
  std::vector<double> out(a.size(), 0.0);
  const auto x = a.value();
  const std::size_t step = AlongX ? ch : width * ch;
  auto interior = [=](std::size_t y, std::size_t xx) { return AlongX ? xx + 1 < width : y + 1 < height; };
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx)
      if (interior(y, xx))
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = (y * width + xx) * ch + c;
          out[i] = x[i + step] - x[i];
        }
  return tape_of(a).record(a.shape(), std::move(out), {a}, [=](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto ga = t.input_grad(self, 0);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx)
        if (interior(y, xx))
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t i = (y * width + xx) * ch + c;
            ga[i + step] += g[i];
            ga[i] -= g[i];
          }
  });
}

}  // namespace detail

// Forward differences of an (H*W) x C pixel tensor; zero on the far border.
inline Var diff_x(const Var& a, std::size_t height, std::size_t width) {
  return detail::forward_diff<true>(a, height, width);
}
inline Var diff_y(const Var& a, std::size_t height, std::size_t width) {
  return detail::forward_diff<false>(a, height, width);
}

// ---- finite-difference gradient check -----------------------------------

struct GradCheckResult {
  bool passed = false;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  explicit operator bool() const { return passed; }
};

// Relative error with an absolute fallback when both magnitudes are tiny.
inline double grad_error(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return denom < 1e-8 ? diff : diff / denom;
}

using MultiFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares tape gradients of a scalar function against central differences
// (f(x+h e) - f(x-h e)) / 2h for every coordinate of every input.
// `stride` > 1 checks every stride-th coordinate only.
inline GradCheckResult grad_check(const MultiFn& f, const std::vector<NdArray>& inputs, double h,
                                  double tol, std::size_t stride = 1) {
  if (h <= 0.0) throw DomainError("grad_check: step must be positive");
  auto evaluate = [&](const std::vector<NdArray>& xs, bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, with_grad));
    Var out = f(tape, vars);
    if (out.size() != 1) throw DomainError("grad_check: function must be scalar-valued");
    const double v = out.item();
    if (grads) {
      tape.backward(out);
      for (const Var& in : vars) {
        auto g = in.grad();
        grads->emplace_back(g.empty() ? std::vector<double>(in.size(), 0.0)
                                      : std::vector<double>(g.begin(), g.end()));
      }
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  evaluate(inputs, true, &analytic);

  GradCheckResult res;
  std::vector<NdArray> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); i += std::max<std::size_t>(1, stride)) {
      const double x0 = inputs[k].data[i];
      probe[k].data[i] = x0 + h;
      const double fp = evaluate(probe, false, nullptr);
      probe[k].data[i] = x0 - h;
      const double fm = evaluate(probe, false, nullptr);
      probe[k].data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_err = std::max(res.max_rel_err, grad_error(analytic[k][i], numeric));
      ++res.checked;
    }
  }
  res.passed = res.max_rel_err < tol;
  return res;
}

inline GradCheckResult grad_check(const std::function<Var(Tape&, const Var&)>& f, const NdArray& x,
                                  double h, double tol) {
  return grad_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); },
                    std::vector<NdArray>{x}, h, tol);
}

}  // namespace evsee::nn
