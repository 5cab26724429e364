#pragma once

#include <cstdint>
#include <vector>

#include "flens/tensor.hpp"

namespace flens::nn {

// Row-major matmul helpers. C may not alias A or B.
// C[M,N] = A[M,K] * B[K,N]; the _acc variant adds into C.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// C[M,N] += A^T[M,K] * B[K,N] where A is stored [K,M].
void matmul_at_b_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
// C[M,N] += A[M,K] * B^T[K,N] where B is stored [N,K].
void matmul_a_bt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

/// Cross-correlation convolution (no kernel flip), the deep-learning
/// convention. input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
/// Output H' = (H+2*pad-kh)/stride + 1 (floor), analogous W'.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      int stride, int pad);

struct Conv2dGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

/// Gradients of sum(grad_out * conv2d_forward(input, weight, bias)).
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight,
                            int stride, int pad);

Tensor relu_forward(const Tensor& x);
// Subgradient convention: gradient is 0 where x == 0.
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);

struct MaxPool2dResult {
    Tensor output;
    // Flat index into the input tensor of the max element, one per
    // output element (row-major over the output). Ties break toward the
    // first element in row-major window scan order.
    std::vector<int64_t> argmax;
};

MaxPool2dResult maxpool2d_forward(const Tensor& x, int k, int stride);
Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<int64_t>& argmax,
                          const std::vector<int64_t>& input_shape);

/// y[B,O] = x[B,F] * w[F,O] + b[O]
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
    Tensor grad_input;
    Tensor grad_weight;
    Tensor grad_bias;
};

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w);

struct SoftmaxXentResult {
    double loss = 0.0;          // mean over the batch of -log softmax(logits)[label]
    Tensor grad_logits;         // (softmax - onehot) / B
    Tensor probs;               // softmax rows, for accuracy/prediction reporting
};

/// Numerically stable (max-subtraction) softmax cross-entropy.
SoftmaxXentResult softmax_crossentropy(const Tensor& logits, const std::vector<int64_t>& labels);

}  // namespace flens::nn
