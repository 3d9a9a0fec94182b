#pragma once

#include <span>
#include <vector>

#include "vpa/tensor.hpp"

namespace vpa {

// boolean attention mask, true = may attend
struct Mask {
  int nq = 0;
  int nk = 0;
  std::vector<std::uint8_t> allow;  // nq*nk, row-major

  bool at(int q, int k) const {
    return allow[static_cast<std::size_t>(q) * nk + k] != 0;
  }
  void set(int q, int k, bool v) {
    allow[static_cast<std::size_t>(q) * nk + k] = v ? 1 : 0;
  }
  static Mask all_true(int nq, int nk) {
    return Mask{nq, nk, std::vector<std::uint8_t>(
                            static_cast<std::size_t>(nq) * nk, 1)};
  }
};

// y = x W (+ b broadcast over rows)
Tensor linear(const Tensor& x, const Tensor& W, const Tensor* b = nullptr);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor square(const Tensor& a);
// elementwise sqrt; backward clamps the denominator away from zero
Tensor sqrt_clamped(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_act(const Tensor& a);
// same data, new shape (numel must match)
Tensor reshape(const Tensor& a, Shape s);

// softmax over axis of a rank-1/2 tensor (axis 1 = within each row)
Tensor softmax(const Tensor& a, int axis = 1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor mean_rows(const Tensor& a);     // [1 x d]
Tensor sum_all(const Tensor& a);       // scalar
Tensor logsumexp_rows(const Tensor& a);  // [n]
Tensor diagonal(const Tensor& a);        // [n], square input
Tensor row(const Tensor& a, int r);      // [d]

// scaled dot-product attention with per-head split and output projection;
// masked logits receive -1e9 before softmax
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};
Tensor masked_attention(const Tensor& q, const Tensor& kv, const Mask& mask,
                        int heads, const AttentionParams& p);

// max over leaf components of the relative gap between analytic gradients
// and central finite differences of f
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves,
                         double step = 1e-5);

}  // namespace vpa
