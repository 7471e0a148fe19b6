#include "cal/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cal/rng.hpp"

namespace cal {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapF = Eigen::Map<const MatF>;
using MapF = Eigen::Map<MatF>;

MatD as_double(std::span<const float> values, std::size_t rows, std::size_t cols) {
  return CMapF(values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
      .cast<double>();
}

void accumulate(std::span<float> dst, const MatD& m) {
  MapF(dst.data(), m.rows(), m.cols()) += m.cast<float>();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView rows_of(const Tensor& x) {
  std::size_t cols = x.shape().back();
  return {x.numel() / cols, cols};
}

Tensor new_like(const Shape& shape, std::vector<float> data) {
  return make_tensor(shape, std::move(data), false);
}

template <typename Fn>
void record(const char* op, std::vector<Tensor> inputs, const Tensor& out, Fn&& backward) {
  active_tape()->record(op, std::move(inputs), out, std::forward<Fn>(backward));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<float> y(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(fwd(static_cast<double>(xd[i])));
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x})) {
    record(name, {x}, out, [x, out, deriv]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto yv = out.data();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        dx[i] += static_cast<float>(g[i] * deriv(static_cast<double>(xv[i]), static_cast<double>(yv[i])));
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  Tensor out = new_like(a.shape(), std::move(y));
  if (should_record({&a, &b})) {
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record("add", {a, b}, out, [a, b, out, ga, gb]() mutable {
      auto g = out.grad();
      if (ga) {
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (gb) {
        auto d = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor out = new_like(a.shape(), std::move(y));
  if (should_record({&a, &b})) {
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record("sub", {a, b}, out, [a, b, out, ga, gb]() mutable {
      auto g = out.grad();
      if (ga) {
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (gb) {
        auto d = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor out = new_like(a.shape(), std::move(y));
  if (should_record({&a, &b})) {
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record("mul", {a, b}, out, [a, b, out, ga, gb]() mutable {
      auto g = out.grad();
      if (ga) {
        auto d = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b.data()[i];
      }
      if (gb) {
        auto d = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * factor;
  Tensor out = new_like(a.shape(), std::move(y));
  if (should_record({&a})) {
    record("scale", {a}, out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto d = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  MatD c = as_double(a.data(), m, k) * as_double(b.data(), k, n);
  std::vector<float> y(m * n);
  MapF(y.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) = c.cast<float>();
  Tensor out = new_like({m, n}, std::move(y));
  if (should_record({&a, &b})) {
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record("matmul", {a, b}, out, [a, b, out, ga, gb, m, k, n]() mutable {
      MatD g = as_double(out.grad(), m, n);
      if (ga) accumulate(a.mutable_grad(), g * as_double(b.data(), k, n).transpose());
      if (gb) accumulate(b.mutable_grad(), as_double(a.data(), m, k).transpose() * g);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> y(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = a.data()[i * c + j];
  Tensor out = new_like({c, r}, std::move(y));
  if (should_record({&a})) {
    record("transpose", {a}, out, [a, out, r, c]() mutable {
      auto g = out.grad();
      auto d = a.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  auto [rows, cols] = rows_of(x);
  if (bias.rank() != 1 || bias.numel() != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  std::vector<float> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x.data()[r * cols + c] + bias.data()[c];
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x, &bias})) {
    bool gx = x.requires_grad(), gb = bias.requires_grad();
    record("add_bias", {x, bias}, out, [x, bias, out, gx, gb, rows, cols]() mutable {
      auto g = out.grad();
      if (gx) {
        auto d = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (gb) {
        std::vector<double> acc(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) acc[c] += g[r * cols + c];
        auto d = bias.mutable_grad();
        for (std::size_t c = 0; c < cols; ++c) d[c] += static_cast<float>(acc[c]);
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<float> y;
  y.reserve(rows * cols);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  Tensor out = new_like({rows, cols}, std::move(y));
  bool any = false;
  for (const auto& p : parts) any = any || should_record({&p});
  if (any) {
    std::vector<bool> flags;
    for (const auto& p : parts) flags.push_back(p.requires_grad());
    record("concat_rows", parts, out, [parts, out, flags]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::size_t n = parts[i].numel();
        if (flags[i]) {
          auto d = parts[i].mutable_grad();
          for (std::size_t j = 0; j < n; ++j) d[j] += g[offset + j];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t cols = x.dim(1);
  for (auto r : rows) {
    if (r >= x.dim(0)) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside " +
                              shape_str(x.shape()));
    }
  }
  std::vector<float> y(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * cols), cols,
                y.begin() + static_cast<std::ptrdiff_t>(i * cols));
  Tensor out = new_like({rows.size(), cols}, std::move(y));
  if (should_record({&x})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    record("gather_rows", {x}, out, [x, out, idx, cols]() mutable {
      auto g = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) d[idx[i] * cols + c] += g[i * cols + c];
    });
  }
  return out;
}

Tensor select_row(const Tensor& x, std::size_t row) {
  const std::size_t rows[] = {row};
  return gather_rows(x, rows);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out = make_tensor(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()), false);
  if (should_record({&x})) {
    record("reshape", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = new_like({1}, {static_cast<float>(acc)});
  if (should_record({&x})) {
    record("sum", {x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (auto& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = new_like({1}, {static_cast<float>(acc / n)});
  if (should_record({&x})) {
    record("mean", {x}, out, [x, out, n]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      for (auto& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  auto [rows, cols] = rows_of(x);
  std::vector<float> y(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * cols;
    double m = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = static_cast<float>(std::exp(row[c] - m) / s);
  }
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x})) {
    record("softmax_rows", {x}, out, [x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto yv = out.data();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * yv[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          d[r * cols + c] += static_cast<float>(yv[r * cols + c] * (g[r * cols + c] - dot));
      }
    });
  }
  return out;
}

namespace {

std::vector<double> row_logsumexp(std::span<const float> xd, std::size_t rows, std::size_t cols) {
  std::vector<double> lse(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * cols;
    double m = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
    lse[r] = m + std::log(s);
  }
  return lse;
}

}  // namespace

Tensor log_softmax_rows(const Tensor& x) {
  auto [rows, cols] = rows_of(x);
  auto lse = row_logsumexp(x.data(), rows, cols);
  std::vector<float> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = static_cast<float>(x.data()[r * cols + c] - lse[r]);
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x})) {
    record("log_softmax_rows", {x}, out, [x, out, rows, cols, lse]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const double p = std::exp(xv[r * cols + c] - lse[r]);
          d[r * cols + c] += static_cast<float>(g[r * cols + c] - p * gs);
        }
      }
    });
  }
  return out;
}

Tensor logsumexp_rows(const Tensor& x) {
  auto [rows, cols] = rows_of(x);
  auto lse = row_logsumexp(x.data(), rows, cols);
  std::vector<float> y(rows);
  for (std::size_t r = 0; r < rows; ++r) y[r] = static_cast<float>(lse[r]);
  Tensor out = new_like({rows}, std::move(y));
  if (should_record({&x})) {
    record("logsumexp_rows", {x}, out, [x, out, rows, cols, lse]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          d[r * cols + c] += static_cast<float>(g[r] * std::exp(xv[r * cols + c] - lse[r]));
    });
  }
  return out;
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  auto [rows, cols] = rows_of(x);
  if (index.size() != rows) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  }
  std::vector<float> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) {
      throw std::out_of_range("pick: index " + std::to_string(index[r]) + " outside " +
                              std::to_string(cols) + " columns");
    }
    y[r] = x.data()[r * cols + index[r]];
  }
  Tensor out = new_like({rows}, std::move(y));
  if (should_record({&x})) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    record("pick", {x}, out, [x, out, idx, cols]() mutable {
      auto g = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) d[r * cols + idx[r]] += g[r];
    });
  }
  return out;
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "rowwise_dot");
  auto [rows, cols] = rows_of(a);
  std::vector<float> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      acc += static_cast<double>(a.data()[r * cols + c]) * b.data()[r * cols + c];
    y[r] = static_cast<float>(acc);
  }
  Tensor out = new_like({rows}, std::move(y));
  if (should_record({&a, &b})) {
    bool ga = a.requires_grad(), gb = b.requires_grad();
    record("rowwise_dot", {a, b}, out, [a, b, out, ga, gb, rows, cols]() mutable {
      auto g = out.grad();
      if (ga) {
        auto d = a.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r] * b.data()[r * cols + c];
      }
      if (gb) {
        auto d = b.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r] * a.data()[r * cols + c];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  auto [rows, cols] = rows_of(x);
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  std::vector<float> y(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xd[r * cols + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dv = xd[r * cols + c] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(cols);
    const double denom = var + static_cast<double>(eps);
    // Zero variance with eps = 0 collapses the row to beta instead of 0/0.
    rstd[r] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xd[r * cols + c] - mu) * rstd[r];
      xhat[r * cols + c] = h;
      y[r * cols + c] = static_cast<float>(h * gamma.data()[c] + beta.data()[c]);
    }
  }
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x, &gamma, &beta})) {
    bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
    record("layer_norm", {x, gamma, beta}, out,
           [x, gamma, beta, out, gx, gg, gb, rows, cols, xhat, rstd]() mutable {
             auto g = out.grad();
             std::vector<double> dgamma(cols, 0.0), dbeta(cols, 0.0);
             std::span<float> dx;
             if (gx) dx = x.mutable_grad();
             for (std::size_t r = 0; r < rows; ++r) {
               double mean_dh = 0.0, mean_dh_h = 0.0;
               for (std::size_t c = 0; c < cols; ++c) {
                 const double gy = g[r * cols + c];
                 const double dh = gy * gamma.data()[c];
                 mean_dh += dh;
                 mean_dh_h += dh * xhat[r * cols + c];
                 dgamma[c] += gy * xhat[r * cols + c];
                 dbeta[c] += gy;
               }
               if (!gx) continue;
               mean_dh /= static_cast<double>(cols);
               mean_dh_h /= static_cast<double>(cols);
               for (std::size_t c = 0; c < cols; ++c) {
                 const double dh = g[r * cols + c] * static_cast<double>(gamma.data()[c]);
                 dx[r * cols + c] +=
                     static_cast<float>(rstd[r] * (dh - mean_dh - xhat[r * cols + c] * mean_dh_h));
               }
             }
             if (gg) {
               auto d = gamma.mutable_grad();
               for (std::size_t c = 0; c < cols; ++c) d[c] += static_cast<float>(dgamma[c]);
             }
             if (gb) {
               auto d = beta.mutable_grad();
               for (std::size_t c = 0; c < cols; ++c) d[c] += static_cast<float>(dbeta[c]);
             }
           });
  }
  return out;
}

Tensor dropout(const Tensor& x, float rate, std::uint64_t seed, std::uint64_t site, bool train_mode) {
  if (!(rate >= 0.0f && rate < 1.0f)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!train_mode || rate == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(x.numel());
  std::vector<float> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = counter_uniform(seed, site, i) < rate ? 0.0f : keep_scale;
    y[i] = x.data()[i] * mask[i];
  }
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x})) {
    record("dropout", {x}, out, [x, out, mask = std::move(mask)]() mutable {
      auto g = out.grad();
      auto d = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(k * (v + c * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      });
}

Tensor l2_normalize_rows(const Tensor& x, float guard) {
  auto [rows, cols] = rows_of(x);
  std::vector<float> y(x.numel());
  std::vector<double> norms(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<double>(xd[r * cols + c]) * xd[r * cols + c];
    norms[r] = std::sqrt(s);
    const bool normalize = norms[r] > guard;
    for (std::size_t c = 0; c < cols; ++c)
      y[r * cols + c] = normalize ? static_cast<float>(xd[r * cols + c] / norms[r]) : xd[r * cols + c];
  }
  Tensor out = new_like(x.shape(), std::move(y));
  if (should_record({&x})) {
    record("l2_normalize_rows", {x}, out, [x, out, rows, cols, norms, guard]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto d = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!(norms[r] > guard)) {
          for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r * cols + c];
          continue;
        }
        const double n = norms[r];
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * (xv[r * cols + c] / n);
        for (std::size_t c = 0; c < cols; ++c)
          d[r * cols + c] += static_cast<float>((g[r * cols + c] - (xv[r * cols + c] / n) * dot) / n);
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  std::vector<float> y(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * h), h,
                y.begin() + static_cast<std::ptrdiff_t>(i * h));
  Tensor out = new_like({ids.size(), h}, std::move(y));
  if (should_record({&table})) {
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    record("embedding", {table}, out, [table, out, idx, h]() mutable {
      auto g = out.grad();
      auto d = table.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < h; ++c) d[static_cast<std::size_t>(idx[i]) * h + c] += g[i * h + c];
    });
  }
  return out;
}

Tensor masked_self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             std::span<const std::uint8_t> key_mask, std::size_t batch,
                             std::size_t seq_len, std::size_t heads) {
  require_rank(q, 2, "masked_self_attention");
  require_same_shape(q, k, "masked_self_attention");
  require_same_shape(q, v, "masked_self_attention");
  const std::size_t hidden = q.dim(1);
  if (q.dim(0) != batch * seq_len || key_mask.size() != batch * seq_len) {
    throw ShapeError("masked_self_attention: " + shape_str(q.shape()) + " does not pack " +
                     std::to_string(batch) + " sequences of length " + std::to_string(seq_len));
  }
  if (heads == 0 || hidden % heads != 0) {
    throw ShapeError("masked_self_attention: hidden " + std::to_string(hidden) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t d = hidden / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t L = seq_len;

  // probs[((b * heads + h) * L + i) * L + j]
  std::vector<double> probs(batch * heads * L * L);
  std::vector<float> y(q.numel(), 0.0f);
  auto qd = q.data(), kd = k.data(), vd = v.data();
  std::vector<double> row(L);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        const float* qi = qd.data() + (b * L + i) * hidden + h * d;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          const float* kj = kd.data() + (b * L + j) * hidden + h * d;
          double s = 0.0;
          for (std::size_t t = 0; t < d; ++t) s += static_cast<double>(qi[t]) * kj[t];
          s *= inv_sqrt_d;
          if (!key_mask[b * L + j]) s += kMaskedLogit;
          row[j] = s;
          m = std::max(m, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          row[j] = std::exp(row[j] - m);
          z += row[j];
        }
        double* p = probs.data() + ((b * heads + h) * L + i) * L;
        for (std::size_t j = 0; j < L; ++j) p[j] = row[j] / z;
        float* yi = y.data() + (b * L + i) * hidden + h * d;
        for (std::size_t t = 0; t < d; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < L; ++j) acc += p[j] * vd[(b * L + j) * hidden + h * d + t];
          yi[t] = static_cast<float>(acc);
        }
      }
    }
  }
  Tensor out = new_like(q.shape(), std::move(y));
  if (should_record({&q, &k, &v})) {
    bool gq = q.requires_grad(), gk = k.requires_grad(), gv = v.requires_grad();
    record("masked_self_attention", {q, k, v}, out,
           [q, k, v, out, gq, gk, gv, probs = std::move(probs), batch, heads, L, d, hidden,
            inv_sqrt_d]() mutable {
             auto g = out.grad();
             auto qv = q.data(), kv = k.data(), vv = v.data();
             std::vector<double> dq(q.numel(), 0.0), dk(k.numel(), 0.0), dv(v.numel(), 0.0);
             std::vector<double> dp(L), ds(L);
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t h = 0; h < heads; ++h) {
                 for (std::size_t i = 0; i < L; ++i) {
                   const double* p = probs.data() + ((b * heads + h) * L + i) * L;
                   const float* gi = g.data() + (b * L + i) * hidden + h * d;
                   double dot = 0.0;
                   for (std::size_t j = 0; j < L; ++j) {
                     const float* vj = vv.data() + (b * L + j) * hidden + h * d;
                     double acc = 0.0;
                     for (std::size_t t = 0; t < d; ++t) {
                       acc += static_cast<double>(gi[t]) * vj[t];
                       dv[(b * L + j) * hidden + h * d + t] += p[j] * gi[t];
                     }
                     dp[j] = acc;
                     dot += acc * p[j];
                   }
                   for (std::size_t j = 0; j < L; ++j) ds[j] = p[j] * (dp[j] - dot) * inv_sqrt_d;
                   const float* qi = qv.data() + (b * L + i) * hidden + h * d;
                   for (std::size_t j = 0; j < L; ++j) {
                     if (ds[j] == 0.0) continue;
                     const float* kj = kv.data() + (b * L + j) * hidden + h * d;
                     for (std::size_t t = 0; t < d; ++t) {
                       dq[(b * L + i) * hidden + h * d + t] += ds[j] * kj[t];
                       dk[(b * L + j) * hidden + h * d + t] += ds[j] * qi[t];
                     }
                   }
                 }
               }
             }
             auto flush = [](std::span<float> dst, const std::vector<double>& src) {
               for (std::size_t i = 0; i < src.size(); ++i) dst[i] += static_cast<float>(src[i]);
             };
             if (gq) flush(q.mutable_grad(), dq);
             if (gk) flush(k.mutable_grad(), dk);
             if (gv) flush(v.mutable_grad(), dv);
           });
  }
  return out;
}

}  // namespace cal
