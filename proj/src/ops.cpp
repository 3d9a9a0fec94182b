#include "vpa/ops.hpp"

#include <algorithm>
#include <cmath>

#include "vpa/kernels.hpp"

namespace vpa {

namespace {

constexpr double kMaskLogit = -1e9;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int n = a.rows(), m = a.cols(), m2 = b.rows(), p = b.cols();
  if (m != m2)
    throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * p);
  kernels::matmul(a.values().data(), b.values().data(), out.data(), n, m, p);
  Shape os = a.rank() == 1 ? Shape{p} : Shape{n, p};
  return make_node(
      std::move(os), std::move(out), {a, b},
      [a, b, n, m, p](detail::TensorImpl& o) {
        if (a.requires_grad()) {
          std::vector<double> da(static_cast<std::size_t>(n) * m);
          kernels::matmul_bt(o.grad.data(), b.values().data(), da.data(), n,
                             p, m);
          auto& g = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += da[i];
        }
        if (b.requires_grad()) {
          auto& g = b.grad();
          kernels::matmul_at_acc(a.values().data(), o.grad.data(), g.data(),
                                 n, m, p);
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor* b) {
  const int n = x.rows(), m = x.cols(), p = W.cols();
  if (m != W.rows())
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(W.shape()));
  if (b && static_cast<int>(b->numel()) != p)
    throw ShapeError("linear: bias " + shape_str(b->shape()) +
                     " does not match output width " + std::to_string(p));
  std::vector<double> out(static_cast<std::size_t>(n) * p);
  kernels::matmul(x.values().data(), W.values().data(), out.data(), n, m, p);
  if (b) {
    const auto& bv = b->values();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) out[static_cast<std::size_t>(i) * p + j] += bv[j];
  }
  std::vector<Tensor> parents{x, W};
  if (b) parents.push_back(*b);
  const bool has_b = b != nullptr;
  Tensor bias = b ? *b : Tensor();
  Shape os = x.rank() == 1 ? Shape{p} : Shape{n, p};
  return make_node(
      std::move(os), std::move(out), std::move(parents),
      [x, W, bias, has_b, n, m, p](detail::TensorImpl& o) {
        if (x.requires_grad()) {
          std::vector<double> dx(static_cast<std::size_t>(n) * m);
          kernels::matmul_bt(o.grad.data(), W.values().data(), dx.data(), n,
                             p, m);
          auto& g = x.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dx[i];
        }
        if (W.requires_grad()) {
          auto& g = W.grad();
          kernels::matmul_at_acc(x.values().data(), o.grad.data(), g.data(),
                                 n, m, p);
        }
        if (has_b && bias.requires_grad()) {
          auto& g = bias.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j)
              g[j] += o.grad[static_cast<std::size_t>(i) * p + j];
        }
      });
}

Tensor transpose(const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(j) * n + i] = a.at(i, j);
  return make_node({m, n}, std::move(out), {a},
                   [a, n, m](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < m; ++j)
                         g[static_cast<std::size_t>(i) * m + j] +=
                             o.grad[static_cast<std::size_t>(j) * n + i];
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] + b.values()[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [a, b](detail::TensorImpl& o) {
                     if (a.requires_grad()) {
                       auto& g = a.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i];
                     }
                     if (b.requires_grad()) {
                       auto& g = b.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] - b.values()[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [a, b](detail::TensorImpl& o) {
                     if (a.requires_grad()) {
                       auto& g = a.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i];
                     }
                     if (b.requires_grad()) {
                       auto& g = b.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] -= o.grad[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [a, b](detail::TensorImpl& o) {
                     if (a.requires_grad()) {
                       auto& g = a.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i] * b.values()[i];
                     }
                     if (b.requires_grad()) {
                       auto& g = b.grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i] * a.values()[i];
                     }
                   });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return make_node(a.shape(), std::move(out), {a},
                   [a, c](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] * c;
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  return make_node(a.shape(), std::move(out), {a},
                   [a](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i];
                   });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * a.values()[i];
  return make_node(a.shape(), std::move(out), {a},
                   [a](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += 2.0 * a.values()[i] * o.grad[i];
                   });
}

Tensor sqrt_clamped(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(std::max(a.values()[i], 0.0));
  return make_node(a.shape(), out, {a},
                   [a, y = out](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] / (2.0 * std::max(y[i], 1e-12));
                   });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  return make_node(a.shape(), std::move(out), {a},
                   [a](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double x = a.values()[i];
                       const double cdf =
                           0.5 * (1.0 + std::erf(x * inv_sqrt2));
                       const double pdf =
                           inv_sqrt2pi * std::exp(-0.5 * x * x);
                       g[i] += o.grad[i] * (cdf + x * pdf);
                     }
                   });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  return make_node(a.shape(), out, {a},
                   [a, y = out](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] * y[i] * (1.0 - y[i]);
                   });
}

Tensor tanh_act(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::tanh(a.values()[i]);
  return make_node(a.shape(), out, {a},
                   [a, y = out](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] * (1.0 - y[i] * y[i]);
                   });
}

Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(a.shape()) +
                     " -> " + shape_str(s));
  return make_node(std::move(s), a.values(), {a},
                   [a](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i];
                   });
}

Tensor softmax(const Tensor& a, int axis) {
  if (a.rank() > 2) throw ShapeError("softmax: rank > 2 unsupported");
  if (axis != 0 && axis != 1) throw ShapeError("softmax: bad axis");
  const int n = a.rows(), m = a.cols();
  const bool over_rows = (axis == 1) || a.rank() == 1;
  std::vector<double> out(a.numel());
  auto run = [&](int groups, int len, auto idx) {
    for (int gi = 0; gi < groups; ++gi) {
      double mx = -1e300;
      for (int j = 0; j < len; ++j) mx = std::max(mx, a.values()[idx(gi, j)]);
      double sum = 0.0;
      for (int j = 0; j < len; ++j) {
        const double e = std::exp(a.values()[idx(gi, j)] - mx);
        out[idx(gi, j)] = e;
        sum += e;
      }
      for (int j = 0; j < len; ++j) out[idx(gi, j)] /= sum;
    }
  };
  auto row_idx = [m](int g, int j) {
    return static_cast<std::size_t>(g) * m + j;
  };
  auto col_idx = [m](int g, int j) {
    return static_cast<std::size_t>(j) * m + g;
  };
  if (over_rows)
    run(n, m, row_idx);
  else
    run(m, n, col_idx);
  return make_node(
      a.shape(), out, {a},
      [a, y = out, n, m, over_rows, row_idx, col_idx](detail::TensorImpl& o) {
        if (!a.requires_grad()) return;
        auto& g = a.grad();
        auto back = [&](int groups, int len, auto idx) {
          for (int gi = 0; gi < groups; ++gi) {
            double dot = 0.0;
            for (int j = 0; j < len; ++j)
              dot += o.grad[idx(gi, j)] * y[idx(gi, j)];
            for (int j = 0; j < len; ++j)
              g[idx(gi, j)] += y[idx(gi, j)] * (o.grad[idx(gi, j)] - dot);
          }
        };
        if (over_rows)
          back(n, m, row_idx);
        else
          back(m, n, col_idx);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(gain.numel()) != d ||
      static_cast<int>(bias.numel()) != d)
    throw ShapeError("layer_norm: gain/bias width mismatch");
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be > 0");
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(n);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.values().data() + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < d; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * d + j;
      xhat[k] = (xi[j] - mu) * is;
      out[k] = gain.values()[j] * xhat[k] + bias.values()[j];
    }
  }
  return make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, xh = std::move(xhat), is = std::move(inv_std), n,
       d](detail::TensorImpl& o) {
        for (int i = 0; i < n; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * d;
          if (x.requires_grad()) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d; ++j) {
              const double gd = gain.values()[j] * o.grad[base + j];
              m1 += gd;
              m2 += gd * xh[base + j];
            }
            m1 /= d;
            m2 /= d;
            auto& g = x.grad();
            for (int j = 0; j < d; ++j) {
              const double gd = gain.values()[j] * o.grad[base + j];
              g[base + j] += is[i] * (gd - m1 - xh[base + j] * m2);
            }
          }
          if (gain.requires_grad()) {
            auto& g = gain.grad();
            for (int j = 0; j < d; ++j) g[j] += o.grad[base + j] * xh[base + j];
          }
          if (bias.requires_grad()) {
            auto& g = bias.grad();
            for (int j = 0; j < d; ++j) g[j] += o.grad[base + j];
          }
        }
      });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const int n = x.rows(), d = x.cols();
  std::vector<double> out(x.numel());
  std::vector<double> rnorm(n);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.values().data() + static_cast<std::size_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += xi[j] * xi[j];
    const double r = std::sqrt(s + eps);
    rnorm[i] = r;
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] = xi[j] / r;
  }
  return make_node(
      x.shape(), std::move(out), {x},
      [x, r = std::move(rnorm), n, d](detail::TensorImpl& o) {
        if (!x.requires_grad()) return;
        auto& g = x.grad();
        for (int i = 0; i < n; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j)
            dot += x.values()[base + j] * o.grad[base + j];
          const double r3 = r[i] * r[i] * r[i];
          for (int j = 0; j < d; ++j)
            g[base + j] +=
                o.grad[base + j] / r[i] - x.values()[base + j] * dot / r3;
        }
      });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int d = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw ShapeError("concat_rows: column mismatch");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total) * d);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_node({total, d}, std::move(out), parents,
                   [ps = std::move(std::vector<Tensor>(parts.begin(),
                                                       parts.end())),
                    d](detail::TensorImpl& o) {
                     std::size_t off = 0;
                     for (const auto& p : ps) {
                       if (p.requires_grad()) {
                         auto& g = p.grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[off + i];
                       }
                       off += p.numel();
                     }
                   });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  const int n = a.rows(), d = a.cols();
  if (r0 < 0 || r1 > n || r0 > r1) throw ShapeError("slice_rows: bad range");
  std::vector<double> out(a.values().begin() + static_cast<std::size_t>(r0) * d,
                          a.values().begin() + static_cast<std::size_t>(r1) * d);
  return make_node({r1 - r0, d}, std::move(out), {a},
                   [a, r0, d](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     const std::size_t base = static_cast<std::size_t>(r0) * d;
                     for (std::size_t i = 0; i < o.grad.size(); ++i)
                       g[base + i] += o.grad[i];
                   });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  const int n = a.rows(), d = a.cols();
  if (c0 < 0 || c1 > d || c0 > c1) throw ShapeError("slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(n) * w);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = a.at(i, c0 + j);
  return make_node({n, w}, std::move(out), {a},
                   [a, c0, w, d, n](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < w; ++j)
                         g[static_cast<std::size_t>(i) * d + c0 + j] +=
                             o.grad[static_cast<std::size_t>(i) * w + j];
                   });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int n = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(n) * total);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i) * total + off + j] = p.at(i, j);
    off += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_node(
      {n, total}, std::move(out), parents,
      [ps = std::vector<Tensor>(parts.begin(), parts.end()), n,
       total](detail::TensorImpl& o) {
        int off = 0;
        for (const auto& p : ps) {
          const int w = p.cols();
          if (p.requires_grad()) {
            auto& g = p.grad();
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < w; ++j)
                g[static_cast<std::size_t>(i) * w + j] +=
                    o.grad[static_cast<std::size_t>(i) * total + off + j];
          }
          off += w;
        }
      });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  const int n = static_cast<int>(ids.size()), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= table.rows())
      throw DataError("gather_rows: id " + std::to_string(id) +
                      " out of range [0," + std::to_string(table.rows()) +
                      ")");
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] = table.at(ids[i], j);
  return make_node({n, d}, std::move(out), {table},
                   [table, ids, n, d](detail::TensorImpl& o) {
                     if (!table.requires_grad()) return;
                     auto& g = table.grad();
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < d; ++j)
                         g[static_cast<std::size_t>(ids[i]) * d + j] +=
                             o.grad[static_cast<std::size_t>(i) * d + j];
                   });
}

Tensor mean_rows(const Tensor& a) {
  const int n = a.rows(), d = a.cols();
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += a.at(i, j);
  for (int j = 0; j < d; ++j) out[j] /= n;
  return make_node({1, d}, std::move(out), {a},
                   [a, n, d](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < d; ++j)
                         g[static_cast<std::size_t>(i) * d + j] +=
                             o.grad[j] / n;
                   });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_node({1}, {s}, {a}, [a](detail::TensorImpl& o) {
    if (!a.requires_grad()) return;
    auto& g = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0];
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < m; ++j) mx = std::max(mx, a.at(i, j));
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += std::exp(a.at(i, j) - mx);
    out[i] = mx + std::log(s);
  }
  return make_node({n}, out, {a},
                   [a, lse = out, n, m](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (int i = 0; i < n; ++i)
                       for (int j = 0; j < m; ++j)
                         g[static_cast<std::size_t>(i) * m + j] +=
                             o.grad[i] * std::exp(a.at(i, j) - lse[i]);
                   });
}

Tensor diagonal(const Tensor& a) {
  const int n = a.rows();
  if (a.cols() != n) throw ShapeError("diagonal: matrix not square");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = a.at(i, i);
  return make_node({n}, std::move(out), {a},
                   [a, n](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     for (int i = 0; i < n; ++i)
                       g[static_cast<std::size_t>(i) * n + i] += o.grad[i];
                   });
}

Tensor row(const Tensor& a, int r) {
  const int d = a.cols();
  if (r < 0 || r >= a.rows()) throw ShapeError("row: index out of range");
  std::vector<double> out(a.values().begin() + static_cast<std::size_t>(r) * d,
                          a.values().begin() +
                              static_cast<std::size_t>(r + 1) * d);
  return make_node({d}, std::move(out), {a},
                   [a, r, d](detail::TensorImpl& o) {
                     if (!a.requires_grad()) return;
                     auto& g = a.grad();
                     const std::size_t base = static_cast<std::size_t>(r) * d;
                     for (int j = 0; j < d; ++j) g[base + j] += o.grad[j];
                   });
}

Tensor masked_attention(const Tensor& q, const Tensor& kv, const Mask& mask,
                        int heads, const AttentionParams& p) {
  const int nq = q.rows(), nk = kv.rows(), d = q.cols();
  if (kv.cols() != d)
    throw ShapeError("masked_attention: q/kv width mismatch " +
                     shape_str(q.shape()) + " vs " + shape_str(kv.shape()));
  if (d % heads != 0)
    throw ConfigError("masked_attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) +
                      " heads");
  if (mask.nq != nq || mask.nk != nk)
    throw ShapeError("masked_attention: mask dims mismatch");
  for (int i = 0; i < nq; ++i) {
    bool any = false;
    for (int j = 0; j < nk; ++j)
      if (mask.at(i, j)) {
        any = true;
        break;
      }
    if (!any)
      throw ConfigError("masked_attention: query row " + std::to_string(i) +
                        " is fully masked");
  }
  const int dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor Q = linear(q, p.wq, &p.bq);
  Tensor K = linear(kv, p.wk, &p.bk);
  Tensor V = linear(kv, p.wv, &p.bv);

  std::vector<double> bias_v(static_cast<std::size_t>(nq) * nk, 0.0);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nk; ++j)
      if (!mask.at(i, j)) bias_v[static_cast<std::size_t>(i) * nk + j] = kMaskLogit;
  Tensor mask_bias = Tensor::from({nq, nk}, std::move(bias_v));

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor Qh = slice_cols(Q, h * dh, (h + 1) * dh);
    Tensor Kh = slice_cols(K, h * dh, (h + 1) * dh);
    Tensor Vh = slice_cols(V, h * dh, (h + 1) * dh);
    Tensor logits = add(scale(matmul(Qh, transpose(Kh)), sc), mask_bias);
    Tensor attn = softmax(logits, 1);
    head_out.push_back(matmul(attn, Vh));
  }
  Tensor O = concat_cols(head_out);
  return linear(O, p.wo, &p.bo);
}

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves, double step) {
  if (step <= 0.0) throw ConfigError("finite_diff_check: step must be > 0");
  for (auto& l : leaves) const_cast<Tensor&>(l).zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = const_cast<Tensor&>(leaves[li]).values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + step;
      const double f1 = f().item();
      vals[i] = orig - step;
      const double f2 = f().item();
      vals[i] = orig;
      const double numeric = (f1 - f2) / (2.0 * step);
      const double a = analytic[li][i];
      // the floor keeps cancellation noise in the central difference (about
      // eps * |f| / step in absolute terms) from dominating components whose
      // true gradient is negligibly small
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace vpa
