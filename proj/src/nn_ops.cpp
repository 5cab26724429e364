#include "flens/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace flens::nn {

namespace {

// Layer activations are tens of MB and turn over every batch; keeping
// them on the heap instead of per-call mmap/munmap avoids repeated
// page-zeroing (roughly 1.5x on the full training step).
[[maybe_unused]] const bool malloc_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
    return true;
}();

// im2col: patches laid out as rows [Cin*kh*kw, Hout*Wout] for one image.
// Out-of-bounds taps (padding) contribute zeros.
void im2col(const double* img, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t hout, int64_t wout, double* col) {
    const int64_t cols = hout * wout;
    for (int64_t c = 0; c < cin; ++c) {
        const double* plane = img + c * h * w;
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                double* row = col + ((c * kh + ki) * kw + kj) * cols;
                for (int64_t oh = 0; oh < hout; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) {
                        std::fill(row + oh * wout, row + (oh + 1) * wout, 0.0);
                        continue;
                    }
                    const double* src = plane + ih * w;
                    for (int64_t ow = 0; ow < wout; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        row[oh * wout + ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Transposed patch layout [Hout*Wout, Cin*kh*kw], so the dW matmul runs
// in the vectorizable accumulate form instead of a latency-bound dot.
void im2row(const double* img, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t hout, int64_t wout, double* rows) {
    const int64_t patch = cin * kh * kw;
    for (int64_t oh = 0; oh < hout; ++oh) {
        for (int64_t ow = 0; ow < wout; ++ow) {
            double* row = rows + (oh * wout + ow) * patch;
            for (int64_t c = 0; c < cin; ++c) {
                const double* plane = img + c * h * w;
                for (int64_t ki = 0; ki < kh; ++ki) {
                    const int64_t ih = oh * stride - pad + ki;
                    double* dst = row + (c * kh + ki) * kw;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + kw, 0.0);
                        continue;
                    }
                    const double* src = plane + ih * w;
                    for (int64_t kj = 0; kj < kw; ++kj) {
                        const int64_t iw = ow * stride - pad + kj;
                        dst[kj] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back onto an image gradient.
void col2im_acc(const double* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t hout, int64_t wout, double* img) {
    const int64_t cols = hout * wout;
    for (int64_t c = 0; c < cin; ++c) {
        double* plane = img + c * h * w;
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const double* row = col + ((c * kh + ki) * kw + kj) * cols;
                for (int64_t oh = 0; oh < hout; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    double* dst = plane + ih * w;
                    for (int64_t ow = 0; ow < wout; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) dst[iw] += row[oh * wout + ow];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    int64_t b, cin, h, w, cout, kh, kw, hout, wout;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride, int pad) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw InputError("conv2d: stride must be >= 1");
    if (pad < 0) throw InputError("conv2d: pad must be >= 0");
    ConvDims d{};
    d.b = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    if (weight.dim(1) != d.cin) {
        throw InputError("conv2d: weight Cin " + std::to_string(weight.dim(1)) +
                         " does not match input Cin " + std::to_string(d.cin));
    }
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
        throw InputError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " larger than padded input " + std::to_string(d.h + 2 * pad) + "x" +
                         std::to_string(d.w + 2 * pad));
    }
    d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    std::fill(c, c + m * n, 0.0);
    matmul_acc(a, b, c, m, k, n);
}

void matmul_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    // ikj order: the inner loop streams rows of B and C, which the
    // compiler vectorizes well.
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_at_b_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_a_bt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      int stride, int pad) {
    ConvDims d = conv_dims(input, weight, stride, pad);
    require_shape(bias, {d.cout}, "conv2d bias");

    Tensor out({d.b, d.cout, d.hout, d.wout});
    const int64_t patch = d.cin * d.kh * d.kw;
    const int64_t cols = d.hout * d.wout;

#pragma omp parallel
    {
        std::vector<double> col(static_cast<size_t>(patch * cols));
#pragma omp for schedule(static)
        for (int64_t b = 0; b < d.b; ++b) {
            im2col(input.data() + b * d.cin * d.h * d.w, d.cin, d.h, d.w, d.kh, d.kw, stride, pad,
                   d.hout, d.wout, col.data());
            double* ob = out.data() + b * d.cout * cols;
            matmul(weight.data(), col.data(), ob, d.cout, patch, cols);
            for (int64_t co = 0; co < d.cout; ++co) {
                const double bv = bias[co];
                double* oc = ob + co * cols;
                for (int64_t i = 0; i < cols; ++i) oc[i] += bv;
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight,
                            int stride, int pad) {
    ConvDims d = conv_dims(input, weight, stride, pad);
    require_shape(grad_out, {d.b, d.cout, d.hout, d.wout}, "conv2d grad_out");

    Conv2dGrads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({d.cout})};
    const int64_t patch = d.cin * d.kh * d.kw;
    const int64_t cols = d.hout * d.wout;

    for (int64_t co = 0; co < d.cout; ++co) {
        double s = 0.0;
        for (int64_t b = 0; b < d.b; ++b) {
            const double* go = grad_out.data() + (b * d.cout + co) * cols;
            for (int64_t i = 0; i < cols; ++i) s += go[i];
        }
        g.grad_bias[co] = s;
    }

    // One parallel pass over the batch: grad_input rows are disjoint,
    // and per-item dW contributions land in separate buffers that a
    // serial batch-order reduction combines, so results are bitwise
    // identical for any thread count.
    const int64_t dw_numel = g.grad_weight.numel();
    std::vector<double> dw_items(static_cast<size_t>(d.b * dw_numel), 0.0);
#pragma omp parallel
    {
        std::vector<double> rows(static_cast<size_t>(patch * cols));
        std::vector<double> dcol(static_cast<size_t>(patch * cols));
#pragma omp for schedule(static)
        for (int64_t b = 0; b < d.b; ++b) {
            im2row(input.data() + b * d.cin * d.h * d.w, d.cin, d.h, d.w, d.kh, d.kw, stride, pad,
                   d.hout, d.wout, rows.data());
            // dW_b = dY_b [Cout,cols] * rows [cols,patch]
            matmul_acc(grad_out.data() + b * d.cout * cols, rows.data(),
                       dw_items.data() + b * dw_numel, d.cout, cols, patch);
            // dcol = W^T [patch,Cout] * dY_b [Cout,cols]
            std::fill(dcol.begin(), dcol.end(), 0.0);
            matmul_at_b_acc(weight.data(), grad_out.data() + b * d.cout * cols, dcol.data(), patch,
                            d.cout, cols);
            col2im_acc(dcol.data(), d.cin, d.h, d.w, d.kh, d.kw, stride, pad, d.hout, d.wout,
                       g.grad_input.data() + b * d.cin * d.h * d.w);
        }
    }
    for (int64_t b = 0; b < d.b; ++b) {
        const double* src = dw_items.data() + b * dw_numel;
        double* dst = g.grad_weight.data();
        for (int64_t i = 0; i < dw_numel; ++i) dst[i] += src[i];
    }
    return g;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape());
    const double* in = x.data();
    double* out = y.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
    if (!grad_out.same_shape(x)) {
        throw InputError("relu_backward: grad_out shape " + grad_out.shape_str() +
                         " does not match input shape " + x.shape_str());
    }
    Tensor g(x.shape());
    const double* go = grad_out.data();
    const double* in = x.data();
    double* out = g.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? go[i] : 0.0;
    return g;
}

MaxPool2dResult maxpool2d_forward(const Tensor& x, int k, int stride) {
    require_rank(x, 4, "maxpool2d input");
    if (k < 1 || stride < 1) throw InputError("maxpool2d: k and stride must be >= 1");
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k > h || k > w) {
        throw InputError("maxpool2d: window " + std::to_string(k) + " larger than input " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    const int64_t hout = (h - k) / stride + 1;
    const int64_t wout = (w - k) / stride + 1;

    MaxPool2dResult r{Tensor({b, c, hout, wout}),
                      std::vector<int64_t>(static_cast<size_t>(b * c * hout * wout))};
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* plane = x.data() + (bi * c + ci) * h * w;
            const int64_t plane_off = (bi * c + ci) * h * w;
            for (int64_t oh = 0; oh < hout; ++oh) {
                for (int64_t ow = 0; ow < wout; ++ow) {
                    int64_t best_idx = -1;
                    double best = 0.0;
                    for (int64_t ki = 0; ki < k; ++ki) {
                        for (int64_t kj = 0; kj < k; ++kj) {
                            int64_t idx = (oh * stride + ki) * w + (ow * stride + kj);
                            // strict > keeps the first max in scan order
                            if (best_idx < 0 || plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    int64_t o = ((bi * c + ci) * hout + oh) * wout + ow;
                    r.output[o] = best;
                    r.argmax[static_cast<size_t>(o)] = plane_off + best_idx;
                }
            }
        }
    }
    return r;
}

Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<int64_t>& argmax,
                          const std::vector<int64_t>& input_shape) {
    if (static_cast<size_t>(grad_out.numel()) != argmax.size()) {
        throw InputError("maxpool2d_backward: grad_out numel does not match argmax size");
    }
    Tensor g(input_shape);
    const int64_t n = grad_out.numel();
    for (int64_t i = 0; i < n; ++i) {
        int64_t src = argmax[static_cast<size_t>(i)];
        if (src < 0 || src >= g.numel()) {
            throw InputError("maxpool2d_backward: argmax index out of range");
        }
        g[src] += grad_out[i];
    }
    return g;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    if (x.dim(1) != w.dim(0)) {
        throw InputError("linear: input features " + std::to_string(x.dim(1)) +
                         " do not match weight rows " + std::to_string(w.dim(0)));
    }
    require_shape(b, {w.dim(1)}, "linear bias");
    const int64_t bs = x.dim(0), f = x.dim(1), o = w.dim(1);
    Tensor y({bs, o});
    matmul(x.data(), w.data(), y.data(), bs, f, o);
    for (int64_t i = 0; i < bs; ++i) {
        double* row = y.data() + i * o;
        for (int64_t j = 0; j < o; ++j) row[j] += b[j];
    }
    return y;
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w) {
    const int64_t bs = x.dim(0), f = x.dim(1), o = w.dim(1);
    require_shape(grad_out, {bs, o}, "linear grad_out");

    LinearGrads g{Tensor({bs, f}), Tensor({f, o}), Tensor({o})};
    // dX = dY * W^T
    matmul_a_bt_acc(grad_out.data(), w.data(), g.grad_input.data(), bs, o, f);
    // dW = X^T * dY
    matmul_at_b_acc(x.data(), grad_out.data(), g.grad_weight.data(), f, bs, o);
    for (int64_t i = 0; i < bs; ++i) {
        const double* row = grad_out.data() + i * o;
        for (int64_t j = 0; j < o; ++j) g.grad_bias[j] += row[j];
    }
    return g;
}

SoftmaxXentResult softmax_crossentropy(const Tensor& logits, const std::vector<int64_t>& labels) {
    require_rank(logits, 2, "softmax_crossentropy logits");
    const int64_t b = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) {
        throw InputError("softmax_crossentropy: label count " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(b));
    }
    SoftmaxXentResult r;
    r.grad_logits = Tensor({b, c});
    r.probs = Tensor({b, c});
    double loss_sum = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        const int64_t label = labels[static_cast<size_t>(i)];
        if (label < 0 || label >= c) {
            throw InputError("softmax_crossentropy: label " + std::to_string(label) +
                             " out of range [0," + std::to_string(c) + ")");
        }
        const double* row = logits.data() + i * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        loss_sum += -(row[label] - mx - log_denom);
        for (int64_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - mx - log_denom);
            r.probs.at2(i, j) = p;
            r.grad_logits.at2(i, j) = (p - (j == label ? 1.0 : 0.0)) / static_cast<double>(b);
        }
    }
    r.loss = loss_sum / static_cast<double>(b);
    return r;
}

}  // namespace flens::nn
