#pragma once

#include <vector>

#include "vpa/errors.hpp"

namespace vpa {

// row-major score/relevance matrices
struct ScoreMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * cols + j];
  }
  void set(int i, int j, double v) {
    data[static_cast<std::size_t>(i) * cols + j] = v;
  }
  static ScoreMatrix zeros(int r, int c) {
    return ScoreMatrix{r, c,
                       std::vector<double>(static_cast<std::size_t>(r) * c, 0.0)};
  }
};

// ranking convention everywhere: stable sort by descending score, ties
// broken by ascending index

// class-wise average precision over the item ranking, averaged over classes;
// classes with zero positives are excluded and counted in skipped
double multilabel_map(const ScoreMatrix& scores, const ScoreMatrix& relevance,
                      int* skipped_classes = nullptr);

struct AccuracyResult {
  double top1 = 0.0;
  double mean_class = 0.0;
  int skipped_classes = 0;
};
AccuracyResult accuracy(const ScoreMatrix& scores,
                        const std::vector<int>& labels);

struct RetrievalResult {
  double map = 0.0;
  double ndcg = 0.0;
  int skipped_queries = 0;
};
// one direction: rows are queries, cols the gallery; relevance graded in
// [0,1]; AP uses relevance > 0, nDCG uses gain = relevance with
// 1/log2(rank+1) discount
RetrievalResult retrieval_metrics_oneway(const ScoreMatrix& similarity,
                                         const ScoreMatrix& relevance);
// both directions (T->V runs on the transpose)
struct BiRetrievalResult {
  RetrievalResult v2t;
  RetrievalResult t2v;
};
BiRetrievalResult retrieval_metrics(const ScoreMatrix& similarity,
                                    const ScoreMatrix& relevance);

}  // namespace vpa
