#include "vpa/kernels.hpp"

#include <cstring>

namespace vpa::kernels {

namespace serial {

void matmul(const double* a, const double* b, double* c, int n, int m, int p) {
  for (int i = 0; i < n; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * p;
    std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(p));
    const double* ai = a + static_cast<std::size_t>(i) * m;
    for (int k = 0; k < m; ++k) {
      const double aik = ai[k];
      const double* bk = b + static_cast<std::size_t>(k) * p;
      for (int j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul_bt(const double* a, const double* b, double* c, int n, int m,
               int p) {
  for (int i = 0; i < n; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * m;
    double* ci = c + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * m;
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
}

void matmul_at_acc(const double* a, const double* b, double* c, int n, int m,
                   int p) {
  for (int k = 0; k < m; ++k) {
    double* ck = c + static_cast<std::size_t>(k) * p;
    for (int i = 0; i < n; ++i) {
      const double aik = a[static_cast<std::size_t>(i) * m + k];
      const double* bi = b + static_cast<std::size_t>(i) * p;
      for (int j = 0; j < p; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace serial

void matmul(const double* a, const double* b, double* c, int n, int m, int p) {
#pragma omp parallel for schedule(static) if (n > 1 && static_cast<long>(n) * m * p > 16384)
  for (int i = 0; i < n; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * p;
    std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(p));
    const double* ai = a + static_cast<std::size_t>(i) * m;
    for (int k = 0; k < m; ++k) {
      const double aik = ai[k];
      const double* bk = b + static_cast<std::size_t>(k) * p;
      for (int j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul_bt(const double* a, const double* b, double* c, int n, int m,
               int p) {
#pragma omp parallel for schedule(static) if (n > 1 && static_cast<long>(n) * m * p > 16384)
  for (int i = 0; i < n; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * m;
    double* ci = c + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * m;
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
}

void matmul_at_acc(const double* a, const double* b, double* c, int n, int m,
                   int p) {
  // rows of c are indexed by k; parallel over k keeps writes disjoint
#pragma omp parallel for schedule(static) if (m > 1 && static_cast<long>(n) * m * p > 16384)
  for (int k = 0; k < m; ++k) {
    double* ck = c + static_cast<std::size_t>(k) * p;
    for (int i = 0; i < n; ++i) {
      const double aik = a[static_cast<std::size_t>(i) * m + k];
      const double* bi = b + static_cast<std::size_t>(i) * p;
      for (int j = 0; j < p; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace vpa::kernels
