#pragma once

#include <vector>

#include "mcie/num/tensor.hpp"

namespace mcie::num {

// Elementwise; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// matmul:    A[m,k] * B[k,n] -> [m,n]
// matmul_nt: A[m,k] * B[n,k]^T -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor softmax_rows(const Tensor& a);

// Divides each row by its sum; row sums must stay away from zero.
Tensor normalize_rows(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int begin, int count);
Tensor reshape(const Tensor& a, std::vector<int> shape);

// Adds b[c] to every row of a[m,c].
Tensor add_rowvec(const Tensor& a, const Tensor& b);
// Scales row r of a by v[r]; v is 1-d of length rows(a).
Tensor scale_rows(const Tensor& a, const std::vector<double>& v);
// Writes literal 0.0 over rows where keep[r] == 0; keep entries are 0 or 1.
Tensor zero_rows_where(const Tensor& a, const std::vector<double>& keep);
// out[r] = mean over {i : masks[i][r] == 1} of parts[i][r]; exact 0.0 where
// no mask covers r. All parts share a shape; masks entries are 0 or 1.
Tensor masked_average_rows(const std::vector<Tensor>& parts,
                           const std::vector<std::vector<double>>& masks);

// Selects rows of table by index; backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

// Per-row normalization of a[m,c] with learned gain/shift of length c.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// x[m,k] * w[n,k]^T + b[n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

namespace detail {
// Raw accumulate-into-out kernels shared by forward and backward paths.
// out += op(a, b); caller supplies zeroed or accumulating buffers.
void mm_nn_acc(const double* a, const double* b, double* out, int m, int k, int n);
void mm_nt_acc(const double* a, const double* b, double* out, int m, int k, int n);
void mm_tn_acc(const double* a, const double* b, double* out, int m, int k, int n);
}  // namespace detail

}  // namespace mcie::num
