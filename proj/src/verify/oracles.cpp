#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "vpa/errors.hpp"
#include "vpa/verify.hpp"

namespace vpa::oracle {

std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, int n, int k, int m) {
  std::vector<double> c(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t)
        s += a[static_cast<std::size_t>(i) * k + t] *
             b[static_cast<std::size_t>(t) * m + j];
      c[static_cast<std::size_t>(i) * m + j] = s;
    }
  return c;
}

namespace {

std::vector<double> affine(const std::vector<double>& x, int n, int d,
                           const std::vector<double>& w,
                           const std::vector<double>& b) {
  auto y = matmul(x, w, n, d, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(i) * d + j] += b[j];
  return y;
}

}  // namespace

std::vector<double> attention(const std::vector<double>& q,
                              const std::vector<double>& kv, int nq, int nk,
                              int d, int heads,
                              const std::vector<double>& wq,
                              const std::vector<double>& bq,
                              const std::vector<double>& wk,
                              const std::vector<double>& bk,
                              const std::vector<double>& wv,
                              const std::vector<double>& bv,
                              const std::vector<double>& wo,
                              const std::vector<double>& bo,
                              const std::vector<std::uint8_t>& allow) {
  const int dh = d / heads;
  const auto Q = affine(q, nq, d, wq, bq);
  const auto K = affine(kv, nk, d, wk, bk);
  const auto V = affine(kv, nk, d, wv, bv);
  std::vector<double> concat(static_cast<std::size_t>(nq) * d, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < nq; ++i) {
      std::vector<double> logits(nk);
      for (int j = 0; j < nk; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c)
          s += Q[static_cast<std::size_t>(i) * d + h * dh + c] *
               K[static_cast<std::size_t>(j) * d + h * dh + c];
        s /= std::sqrt(static_cast<double>(dh));
        if (!allow[static_cast<std::size_t>(i) * nk + j]) s += -1e9;
        logits[j] = s;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (auto& l : logits) l /= z;
      for (int c = 0; c < dh; ++c) {
        double s = 0.0;
        for (int j = 0; j < nk; ++j)
          s += logits[j] * V[static_cast<std::size_t>(j) * d + h * dh + c];
        concat[static_cast<std::size_t>(i) * d + h * dh + c] = s;
      }
    }
  }
  return affine(concat, nq, d, wo, bo);
}

double subset_residual(const std::vector<double>& hz,
                       const std::vector<double>& F, int d,
                       const std::vector<int>& subset) {
  const int k = static_cast<int>(subset.size());
  if (k == 0) {
    double s = 0.0;
    for (double v : hz) s += v * v;
    return std::sqrt(s);
  }
  // normal equations G a = r with G the subset Gram matrix
  std::vector<double> G(static_cast<std::size_t>(k) * k, 0.0);
  std::vector<double> r(k, 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < d; ++c)
        G[static_cast<std::size_t>(i) * k + j] +=
            F[static_cast<std::size_t>(subset[i]) * d + c] *
            F[static_cast<std::size_t>(subset[j]) * d + c];
    for (int c = 0; c < d; ++c)
      r[i] += F[static_cast<std::size_t>(subset[i]) * d + c] * hz[c];
  }
  // Gaussian elimination with partial pivoting
  std::vector<double> a = r;
  for (int col = 0; col < k; ++col) {
    int piv = col;
    for (int row = col + 1; row < k; ++row)
      if (std::fabs(G[static_cast<std::size_t>(row) * k + col]) >
          std::fabs(G[static_cast<std::size_t>(piv) * k + col]))
        piv = row;
    if (piv != col) {
      for (int c = 0; c < k; ++c)
        std::swap(G[static_cast<std::size_t>(col) * k + c],
                  G[static_cast<std::size_t>(piv) * k + c]);
      std::swap(a[col], a[piv]);
    }
    const double p = G[static_cast<std::size_t>(col) * k + col];
    if (std::fabs(p) < 1e-12) throw NumericError("singular subset Gram matrix");
    for (int row = col + 1; row < k; ++row) {
      const double f = G[static_cast<std::size_t>(row) * k + col] / p;
      for (int c = col; c < k; ++c)
        G[static_cast<std::size_t>(row) * k + c] -=
            f * G[static_cast<std::size_t>(col) * k + c];
      a[row] -= f * a[col];
    }
  }
  for (int col = k - 1; col >= 0; --col) {
    for (int c = col + 1; c < k; ++c)
      a[col] -= G[static_cast<std::size_t>(col) * k + c] * a[c];
    a[col] /= G[static_cast<std::size_t>(col) * k + col];
  }
  double resid = 0.0;
  for (int c = 0; c < d; ++c) {
    double rec = 0.0;
    for (int i = 0; i < k; ++i)
      rec += a[i] * F[static_cast<std::size_t>(subset[i]) * d + c];
    const double e = rec - hz[c];
    resid += e * e;
  }
  return std::sqrt(std::max(0.0, resid));
}

namespace {

void enumerate(int B, int k, int start, std::vector<int>& cur,
               const std::function<void(const std::vector<int>&)>& fn) {
  if (static_cast<int>(cur.size()) == k) {
    fn(cur);
    return;
  }
  for (int i = start; i <= B - (k - static_cast<int>(cur.size())); ++i) {
    cur.push_back(i);
    enumerate(B, k, i + 1, cur, fn);
    cur.pop_back();
  }
}

}  // namespace

std::vector<int> best_subset(const std::vector<double>& hz,
                             const std::vector<double>& F, int B, int d, int k,
                             double* best_residual) {
  std::vector<int> best;
  double best_r = 0.0;
  std::vector<int> cur;
  enumerate(B, k, 0, cur, [&](const std::vector<int>& s) {
    const double r = subset_residual(hz, F, d, s);
    if (best.empty() || r < best_r) {
      best = s;
      best_r = r;
    }
  });
  if (best_residual) *best_residual = best_r;
  return best;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& positive) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  int total = 0;
  for (int p : positive) total += p;
  if (total == 0) return -1.0;
  double ap = 0.0;
  int hits = 0;
  for (int r = 0; r < n; ++r)
    if (positive[order[r]]) {
      ++hits;
      ap += static_cast<double>(hits) / (r + 1);
    }
  return ap / total;
}

double multilabel_map(const std::vector<double>& scores,
                      const std::vector<int>& relevance, int n, int c) {
  double sum = 0.0;
  int used = 0;
  for (int j = 0; j < c; ++j) {
    std::vector<double> col(n);
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) {
      col[i] = scores[static_cast<std::size_t>(i) * c + j];
      pos[i] = relevance[static_cast<std::size_t>(i) * c + j];
    }
    const double ap = average_precision(col, pos);
    if (ap >= 0.0) {
      sum += ap;
      ++used;
    }
  }
  return used == 0 ? 0.0 : sum / used;
}

double top1_accuracy(const std::vector<double>& scores,
                     const std::vector<int>& labels, int n, int c) {
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    for (int j = 1; j < c; ++j)
      if (scores[static_cast<std::size_t>(i) * c + j] >
          scores[static_cast<std::size_t>(i) * c + arg])
        arg = j;
    hits += arg == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / n;
}

double mean_class_accuracy(const std::vector<double>& scores,
                           const std::vector<int>& labels, int n, int c) {
  double sum = 0.0;
  int used = 0;
  for (int j = 0; j < c; ++j) {
    int cnt = 0, hit = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[i] != j) continue;
      ++cnt;
      int arg = 0;
      for (int q = 1; q < c; ++q)
        if (scores[static_cast<std::size_t>(i) * c + q] >
            scores[static_cast<std::size_t>(i) * c + arg])
          arg = q;
      hit += arg == j ? 1 : 0;
    }
    if (cnt > 0) {
      sum += static_cast<double>(hit) / cnt;
      ++used;
    }
  }
  return used == 0 ? 0.0 : sum / used;
}

double ndcg(const std::vector<double>& scores,
            const std::vector<double>& rels) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  double dcg = 0.0;
  for (int r = 0; r < n; ++r)
    dcg += rels[order[r]] / std::log2(static_cast<double>(r) + 2.0);
  std::vector<double> ideal = rels;
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  double idcg = 0.0;
  for (int r = 0; r < n; ++r)
    idcg += ideal[r] / std::log2(static_cast<double>(r) + 2.0);
  return idcg == 0.0 ? 0.0 : dcg / idcg;
}

void retrieval(const std::vector<double>& sim, const std::vector<double>& rel,
               int n, int g, double* map_out, double* ndcg_out) {
  double map_sum = 0.0, ndcg_sum = 0.0;
  int used = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(g), r(g);
    std::vector<int> pos(g);
    for (int j = 0; j < g; ++j) {
      s[j] = sim[static_cast<std::size_t>(i) * g + j];
      r[j] = rel[static_cast<std::size_t>(i) * g + j];
      pos[j] = r[j] > 0.0 ? 1 : 0;
    }
    const double ap = average_precision(s, pos);
    if (ap < 0.0) continue;
    map_sum += ap;
    ndcg_sum += ndcg(s, r);
    ++used;
  }
  *map_out = used == 0 ? 0.0 : map_sum / used;
  *ndcg_out = used == 0 ? 0.0 : ndcg_sum / used;
}

}  // namespace vpa::oracle
