#include "vpa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vpa {

namespace {

void check_finite(const ScoreMatrix& m, const char* what) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw DataError(std::string(what) + ": non-finite value");
}

std::vector<int> ranking(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& positive) {
  const auto order = ranking(scores);
  int hits = 0, total = 0;
  for (bool p : positive) total += p ? 1 : 0;
  if (total == 0) return -1.0;
  double ap = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[order[r]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return ap / total;
}

}  // namespace

double multilabel_map(const ScoreMatrix& scores, const ScoreMatrix& relevance,
                      int* skipped_classes) {
  if (scores.rows != relevance.rows || scores.cols != relevance.cols)
    throw ShapeError("multilabel_map: score/relevance dims disagree");
  check_finite(scores, "multilabel_map scores");
  const int n = scores.rows, c = scores.cols;
  double sum = 0.0;
  int used = 0, skipped = 0;
  std::vector<double> col(n);
  std::vector<bool> pos(n);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < n; ++i) {
      col[i] = scores.at(i, j);
      pos[i] = relevance.at(i, j) > 0.0;
    }
    const double ap = average_precision(col, pos);
    if (ap < 0.0) {
      ++skipped;
      continue;
    }
    sum += ap;
    ++used;
  }
  if (skipped_classes) *skipped_classes = skipped;
  if (used == 0) throw DataError("multilabel_map: no class has a positive");
  return sum / used;
}

AccuracyResult accuracy(const ScoreMatrix& scores,
                        const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != scores.rows)
    throw ShapeError("accuracy: one label per item required");
  check_finite(scores, "accuracy scores");
  const int n = scores.rows, c = scores.cols;
  std::vector<int> correct(c, 0), count(c, 0);
  int top1_hits = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c)
      throw DataError("accuracy: label out of range");
    int arg = 0;
    for (int j = 1; j < c; ++j)
      if (scores.at(i, j) > scores.at(i, arg)) arg = j;
    ++count[labels[i]];
    if (arg == labels[i]) {
      ++top1_hits;
      ++correct[labels[i]];
    }
  }
  AccuracyResult out;
  out.top1 = static_cast<double>(top1_hits) / n;
  double sum = 0.0;
  int used = 0;
  for (int j = 0; j < c; ++j) {
    if (count[j] == 0) {
      ++out.skipped_classes;
      continue;
    }
    sum += static_cast<double>(correct[j]) / count[j];
    ++used;
  }
  out.mean_class = used == 0 ? 0.0 : sum / used;
  return out;
}

RetrievalResult retrieval_metrics_oneway(const ScoreMatrix& similarity,
                                         const ScoreMatrix& relevance) {
  if (similarity.rows != relevance.rows || similarity.cols != relevance.cols)
    throw ShapeError("retrieval_metrics: dims disagree");
  check_finite(similarity, "retrieval similarity");
  for (double v : relevance.data)
    if (v < 0.0) throw DataError("retrieval_metrics: negative relevance");
  const int q = similarity.rows, g = similarity.cols;
  RetrievalResult out;
  double map_sum = 0.0, ndcg_sum = 0.0;
  int used = 0;
  std::vector<double> sims(g), rels(g);
  std::vector<bool> pos(g);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < g; ++j) {
      sims[j] = similarity.at(i, j);
      rels[j] = relevance.at(i, j);
      pos[j] = rels[j] > 0.0;
    }
    const double ap = average_precision(sims, pos);
    if (ap < 0.0) {
      ++out.skipped_queries;
      continue;
    }
    const auto order = ranking(sims);
    double dcg = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
      dcg += rels[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    std::vector<double> ideal = rels;
    std::sort(ideal.begin(), ideal.end(), std::greater<double>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < ideal.size(); ++r)
      idcg += ideal[r] / std::log2(static_cast<double>(r) + 2.0);
    map_sum += ap;
    ndcg_sum += dcg / idcg;
    ++used;
  }
  if (used == 0) throw DataError("retrieval_metrics: no query has a relevant item");
  out.map = map_sum / used;
  out.ndcg = ndcg_sum / used;
  return out;
}

BiRetrievalResult retrieval_metrics(const ScoreMatrix& similarity,
                                    const ScoreMatrix& relevance) {
  BiRetrievalResult out;
  out.v2t = retrieval_metrics_oneway(similarity, relevance);
  ScoreMatrix sim_t = ScoreMatrix::zeros(similarity.cols, similarity.rows);
  ScoreMatrix rel_t = ScoreMatrix::zeros(relevance.cols, relevance.rows);
  for (int i = 0; i < similarity.rows; ++i)
    for (int j = 0; j < similarity.cols; ++j) {
      sim_t.set(j, i, similarity.at(i, j));
      rel_t.set(j, i, relevance.at(i, j));
    }
  out.t2v = retrieval_metrics_oneway(sim_t, rel_t);
  return out;
}

}  // namespace vpa
