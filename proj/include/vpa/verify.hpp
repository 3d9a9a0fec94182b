#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "vpa/rng.hpp"

namespace vpa {

// independently coded reference implementations the suites and tests compare
// against; everything here is deliberately naive
namespace oracle {

// c[n x m] = a[n x k] b[k x m], triple loop
std::vector<double> matmul(const std::vector<double>& a,
                           const std::vector<double>& b, int n, int k, int m);

// unprojected multi-head attention on explicit matrices (softmax per row with
// masked logits at -1e9), used against masked_attention
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
                              const std::vector<std::uint8_t>& allow);

// least-squares residual of hz against the given rows of F (general Gram
// solve, no orthonormality assumption)
double subset_residual(const std::vector<double>& hz,
                       const std::vector<double>& F, int d,
                       const std::vector<int>& subset);

// exhaustive minimizer of the residual over all C(B,k) subsets
std::vector<int> best_subset(const std::vector<double>& hz,
                             const std::vector<double>& F, int B, int d, int k,
                             double* best_residual = nullptr);

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& positive);
double multilabel_map(const std::vector<double>& scores,
                      const std::vector<int>& relevance, int n, int c);
double top1_accuracy(const std::vector<double>& scores,
                     const std::vector<int>& labels, int n, int c);
double mean_class_accuracy(const std::vector<double>& scores,
                           const std::vector<int>& labels, int n, int c);
double ndcg(const std::vector<double>& scores, const std::vector<double>& rels);
// averaged over rows of an n x g similarity/relevance pair
void retrieval(const std::vector<double>& sim, const std::vector<double>& rel,
               int n, int g, double* map_out, double* ndcg_out);

}  // namespace oracle

// pass/fail suites shared by the CLI verify command and the tests; each
// prints one line per check
struct SuiteResult {
  int checks = 0;
  int failures = 0;
  void note(std::ostream& out, const std::string& name, bool ok,
            const std::string& detail = "");
};

// finite-difference gradient checks for every op plus the full training loss
// at tiny dimensions; inject_fault adds an op with a deliberately wrong
// backward that must be caught
SuiteResult grad_suite(std::ostream& out, bool inject_fault = false);
SuiteResult oracle_suite(std::ostream& out);
SuiteResult stats_suite(std::ostream& out);

}  // namespace vpa
