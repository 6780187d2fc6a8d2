#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "paretoq/matrix.hpp"
#include "paretoq/quant.hpp"

namespace paretoq {

enum class OpKind : std::uint8_t {
    Input,
    Parameter,
    MatMul,
    Add,
    BiasAdd,
    Relu,
    LayerNormLite,
    SoftmaxCrossEntropy,
    FakeQuantLinear,
};

/// Reverse-mode tape over dense 32-bit matrices. Nodes are appended in
/// topological order by construction; forward caches every value, backward
/// accumulates gradients for all parameters (weights, gains, biases and
/// quantizer scales alike).
///
/// A graph instance is single-threaded; distinct instances share nothing.
class Graph {
  public:
    struct Node {
        OpKind kind;
        int a = -1, b = -1, c = -1, d = -1; // operand node ids
        Matrix value;
        Matrix grad;
        bool has_value = false;
        // FakeQuantLinear only:
        QuantSpec qspec;
        std::optional<float> alpha_grad_scale;
        Matrix cached_wq;
    };

    int input(std::size_t rows, std::size_t cols) {
        Node n;
        n.kind = OpKind::Input;
        n.value = Matrix(rows, cols);
        return push(std::move(n));
    }

    int parameter(Matrix init) {
        check_finite(init, "parameter");
        Node n;
        n.kind = OpKind::Parameter;
        n.value = std::move(init);
        n.has_value = true;
        params_.push_back(static_cast<int>(nodes_.size()));
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        require_shape(shape(a).second == shape(b).first, "matmul: inner dimensions differ");
        return push_op(OpKind::MatMul, a, b, shape(a).first, shape(b).second);
    }

    int add(int a, int b) {
        require_shape(shape(a) == shape(b), "add: shapes differ");
        return push_op(OpKind::Add, a, b, shape(a).first, shape(a).second);
    }

    /// a is batch x n, bias is 1 x n, broadcast over rows.
    int bias_add(int a, int bias) {
        require_shape(shape(bias).first == 1 && shape(bias).second == shape(a).second,
                      "bias_add: bias must be 1 x cols");
        return push_op(OpKind::BiasAdd, a, bias, shape(a).first, shape(a).second);
    }

    int relu(int a) { return push_op(OpKind::Relu, a, -1, shape(a).first, shape(a).second); }

    /// Per-row normalization to zero mean and unit variance, scaled by a
    /// learned 1 x cols gain. No learned shift.
    int layer_norm_lite(int a, int gain) {
        require_shape(shape(gain).first == 1 && shape(gain).second == shape(a).second,
                      "layer_norm_lite: gain must be 1 x cols");
        return push_op(OpKind::LayerNormLite, a, gain, shape(a).first, shape(a).second);
    }

    /// Mean cross-entropy between softmax(logits) and integer targets
    /// (batch x 1, class index per row). Produces the 1x1 loss.
    int softmax_cross_entropy(int logits, int targets) {
        require_shape(shape(targets).first == shape(logits).first && shape(targets).second == 1,
                      "softmax_cross_entropy: targets must be batch x 1");
        return push_op(OpKind::SoftmaxCrossEntropy, logits, targets, 1, 1);
    }

    /// y = x * fake_quant(w, alpha, spec)^T (+ bias). w is out x in with one
    /// scale per output row; alpha is a parameter node of shape out x 1 (or
    /// 1 x 1 for a per-tensor scale).
    int fake_quant_linear(int x, int w, int alpha, const QuantSpec& spec, int bias = -1,
                          std::optional<float> alpha_grad_scale = std::nullopt) {
        spec.validate();
        require_shape(shape(x).second == shape(w).second, "fake_quant_linear: x cols must match w cols");
        require_shape(shape(alpha).second == 1 &&
                          (shape(alpha).first == shape(w).first || shape(alpha).first == 1),
                      "fake_quant_linear: alpha must be out x 1 or 1 x 1");
        if (bias >= 0)
            require_shape(shape(bias).first == 1 && shape(bias).second == shape(w).first,
                          "fake_quant_linear: bias must be 1 x out");
        Node n;
        n.kind = OpKind::FakeQuantLinear;
        n.a = x;
        n.b = w;
        n.c = alpha;
        n.d = bias;
        n.qspec = spec;
        n.alpha_grad_scale = alpha_grad_scale;
        n.value = Matrix(shape(x).first, shape(w).first);
        return push(std::move(n));
    }

    void set_value(int node, Matrix v) {
        Node& n = at(node);
        if (n.kind != OpKind::Input) throw Error("set_value: node is not an input");
        if (!n.value.same_shape(v)) throw ShapeMismatch("set_value: shape differs from declaration");
        check_finite(v, "set_value");
        n.value = std::move(v);
        n.has_value = true;
        forward_done_ = false;
    }

    /// Evaluate every node in order. The last node must be the 1x1 loss.
    float forward() {
        evaluate();
        const Matrix& out = nodes_.back().value;
        if (out.rows != 1 || out.cols != 1) throw InvalidSpec("forward: last node is not a 1x1 loss");
        return out.data[0];
    }

    /// Evaluate without requiring a scalar tail (for probing single ops).
    void evaluate() {
        if (nodes_.empty()) throw Error("evaluate: empty graph");
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            switch (n.kind) {
                case OpKind::Input:
                    if (!n.has_value) throw Error("evaluate: input node " + std::to_string(i) + " not set");
                    break;
                case OpKind::Parameter:
                    break;
                default:
                    compute(n);
                    if (!n.value.all_finite())
                        throw NumericalDivergence("evaluate: non-finite value at node " + std::to_string(i));
            }
        }
        forward_done_ = true;
    }

    /// Reverse pass from the loss node. Gradients accumulate over all paths;
    /// parameters() lists the nodes whose grad matters to an optimizer.
    void backward() {
        if (!forward_done_) throw Error("backward: forward has not run");
        const Matrix& out = nodes_.back().value;
        if (out.rows != 1 || out.cols != 1) throw InvalidSpec("backward: last node is not a 1x1 loss");
        for (Node& n : nodes_) n.grad = Matrix(n.value.rows, n.value.cols);
        nodes_.back().grad.data[0] = 1.0f;
        for (std::size_t i = nodes_.size(); i-- > 0;) propagate(nodes_[i]);
    }

    const Matrix& value(int node) const { return at(node).value; }
    const Matrix& grad(int node) const { return at(node).grad; }
    Matrix& mutable_value(int node) { return at(node).value; }
    const std::vector<int>& parameters() const { return params_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    std::vector<Node> nodes_;
    std::vector<int> params_;
    bool forward_done_ = false;

    Node& at(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& at(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    std::pair<std::size_t, std::size_t> shape(int id) const {
        return {at(id).value.rows, at(id).value.cols};
    }

    static void require_shape(bool ok, const char* msg) {
        if (!ok) throw ShapeMismatch(msg);
    }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        forward_done_ = false;
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push_op(OpKind k, int a, int b, std::size_t rows, std::size_t cols) {
        Node n;
        n.kind = k;
        n.a = a;
        n.b = b;
        n.value = Matrix(rows, cols);
        return push(std::move(n));
    }

    static ChannelScales scales_from(const Matrix& column) {
        ChannelScales s;
        s.alpha.assign(column.data.begin(), column.data.end());
        return s;
    }

    void compute(Node& n) {
        switch (n.kind) {
            case OpKind::MatMul: {
                // Accumulate k-outer so the inner loop runs over independent
                // output columns; the per-element addition order is the same
                // as a plain dot product, so results stay bit-stable while
                // the compiler can vectorize without reassociating.
                const Matrix& A = at(n.a).value;
                const Matrix& B = at(n.b).value;
                n.value = Matrix(A.rows, B.cols);
                for (std::size_t i = 0; i < A.rows; ++i) {
                    float* out = n.value.data.data() + i * B.cols;
                    for (std::size_t k = 0; k < A.cols; ++k) {
                        const float aik = A.at(i, k);
                        const float* brow = B.data.data() + k * B.cols;
                        for (std::size_t j = 0; j < B.cols; ++j) out[j] += aik * brow[j];
                    }
                }
                break;
            }
            case OpKind::Add: {
                const Matrix& A = at(n.a).value;
                const Matrix& B = at(n.b).value;
                n.value = Matrix(A.rows, A.cols);
                for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] + B.data[i];
                break;
            }
            case OpKind::BiasAdd: {
                const Matrix& A = at(n.a).value;
                const Matrix& b = at(n.b).value;
                n.value = Matrix(A.rows, A.cols);
                for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t j = 0; j < A.cols; ++j) n.value.at(i, j) = A.at(i, j) + b.at(0, j);
                break;
            }
            case OpKind::Relu: {
                const Matrix& A = at(n.a).value;
                n.value = Matrix(A.rows, A.cols);
                for (std::size_t i = 0; i < A.size(); ++i)
                    n.value.data[i] = A.data[i] > 0.0f ? A.data[i] : 0.0f;
                break;
            }
            case OpKind::LayerNormLite: {
                const Matrix& A = at(n.a).value;
                const Matrix& gain = at(n.b).value;
                n.value = Matrix(A.rows, A.cols);
                const float nc = static_cast<float>(A.cols);
                for (std::size_t r = 0; r < A.rows; ++r) {
                    float mean = 0.0f;
                    for (std::size_t c = 0; c < A.cols; ++c) mean += A.at(r, c);
                    mean /= nc;
                    float var = 0.0f;
                    for (std::size_t c = 0; c < A.cols; ++c) {
                        const float d = A.at(r, c) - mean;
                        var += d * d;
                    }
                    var /= nc;
                    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
                    for (std::size_t c = 0; c < A.cols; ++c)
                        n.value.at(r, c) = gain.at(0, c) * ((A.at(r, c) - mean) * inv);
                }
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Matrix& L = at(n.a).value;
                const Matrix& T = at(n.b).value;
                n.value = Matrix(1, 1);
                float total = 0.0f;
                for (std::size_t r = 0; r < L.rows; ++r) {
                    const int t = target_class(T, r, L.cols);
                    float mx = L.at(r, 0);
                    for (std::size_t c = 1; c < L.cols; ++c) mx = std::max(mx, L.at(r, c));
                    float sum = 0.0f;
                    for (std::size_t c = 0; c < L.cols; ++c) sum += std::exp(L.at(r, c) - mx);
                    total += (mx + std::log(sum)) - L.at(r, t);
                }
                n.value.data[0] = total / static_cast<float>(L.rows);
                break;
            }
            case OpKind::FakeQuantLinear: {
                const Matrix& X = at(n.a).value;
                const Matrix& W = at(n.b).value;
                const ChannelScales cs = scales_from(at(n.c).value);
                n.cached_wq = fake_quant(W, cs, n.qspec);
                // y = x * Wq^T, accumulated k-outer over a transposed copy so
                // the inner loop streams both operands.
                Matrix wqt(W.cols, W.rows);
                for (std::size_t o = 0; o < W.rows; ++o)
                    for (std::size_t k = 0; k < W.cols; ++k) wqt.at(k, o) = n.cached_wq.at(o, k);
                n.value = Matrix(X.rows, W.rows);
                for (std::size_t i = 0; i < X.rows; ++i) {
                    float* out = n.value.data.data() + i * W.rows;
                    for (std::size_t k = 0; k < X.cols; ++k) {
                        const float xik = X.at(i, k);
                        const float* wrow = wqt.data.data() + k * W.rows;
                        for (std::size_t o = 0; o < W.rows; ++o) out[o] += xik * wrow[o];
                    }
                }
                if (n.d >= 0) {
                    const Matrix& b = at(n.d).value;
                    for (std::size_t i = 0; i < X.rows; ++i)
                        for (std::size_t o = 0; o < W.rows; ++o) n.value.at(i, o) += b.at(0, o);
                }
                break;
            }
            default: break;
        }
    }

    void propagate(Node& n) {
        const Matrix& dy = n.grad;
        switch (n.kind) {
            case OpKind::MatMul: {
                // dA = dy * B^T via an explicit transpose of B so both loads
                // stream contiguously; dB = A^T * dy with i outermost. Both
                // keep the original per-element summation order.
                const Matrix& A = at(n.a).value;
                const Matrix& B = at(n.b).value;
                Matrix& dA = at(n.a).grad;
                Matrix& dB = at(n.b).grad;
                Matrix bt(B.cols, B.rows);
                for (std::size_t k = 0; k < B.rows; ++k)
                    for (std::size_t j = 0; j < B.cols; ++j) bt.at(j, k) = B.at(k, j);
                for (std::size_t i = 0; i < A.rows; ++i) {
                    float* da = dA.data.data() + i * A.cols;
                    for (std::size_t j = 0; j < B.cols; ++j) {
                        const float dyij = dy.at(i, j);
                        const float* btrow = bt.data.data() + j * B.rows;
                        for (std::size_t k = 0; k < A.cols; ++k) da[k] += dyij * btrow[k];
                    }
                }
                for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t k = 0; k < B.rows; ++k) {
                        const float aik = A.at(i, k);
                        float* db = dB.data.data() + k * B.cols;
                        const float* dyrow = dy.data.data() + i * B.cols;
                        for (std::size_t j = 0; j < B.cols; ++j) db[j] += aik * dyrow[j];
                    }
                break;
            }
            case OpKind::Add: {
                Matrix& dA = at(n.a).grad;
                Matrix& dB = at(n.b).grad;
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    dA.data[i] += dy.data[i];
                    dB.data[i] += dy.data[i];
                }
                break;
            }
            case OpKind::BiasAdd: {
                Matrix& dA = at(n.a).grad;
                Matrix& db = at(n.b).grad;
                for (std::size_t i = 0; i < dy.rows; ++i)
                    for (std::size_t j = 0; j < dy.cols; ++j) {
                        dA.at(i, j) += dy.at(i, j);
                        db.at(0, j) += dy.at(i, j);
                    }
                break;
            }
            case OpKind::Relu: {
                const Matrix& A = at(n.a).value;
                Matrix& dA = at(n.a).grad;
                for (std::size_t i = 0; i < dy.size(); ++i)
                    if (A.data[i] > 0.0f) dA.data[i] += dy.data[i];
                break;
            }
            case OpKind::LayerNormLite: {
                const Matrix& A = at(n.a).value;
                const Matrix& gain = at(n.b).value;
                Matrix& dA = at(n.a).grad;
                Matrix& dg = at(n.b).grad;
                const float nc = static_cast<float>(A.cols);
                for (std::size_t r = 0; r < A.rows; ++r) {
                    float mean = 0.0f;
                    for (std::size_t c = 0; c < A.cols; ++c) mean += A.at(r, c);
                    mean /= nc;
                    float var = 0.0f;
                    for (std::size_t c = 0; c < A.cols; ++c) {
                        const float d = A.at(r, c) - mean;
                        var += d * d;
                    }
                    var /= nc;
                    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);

                    float sum_delta = 0.0f, sum_delta_xhat = 0.0f;
                    for (std::size_t c = 0; c < A.cols; ++c) {
                        const float xhat = (A.at(r, c) - mean) * inv;
                        const float delta = dy.at(r, c) * gain.at(0, c);
                        dg.at(0, c) += dy.at(r, c) * xhat;
                        sum_delta += delta;
                        sum_delta_xhat += delta * xhat;
                    }
                    for (std::size_t c = 0; c < A.cols; ++c) {
                        const float xhat = (A.at(r, c) - mean) * inv;
                        const float delta = dy.at(r, c) * gain.at(0, c);
                        dA.at(r, c) += inv * (delta - sum_delta / nc - xhat * sum_delta_xhat / nc);
                    }
                }
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Matrix& L = at(n.a).value;
                const Matrix& T = at(n.b).value;
                Matrix& dL = at(n.a).grad;
                const float scale = dy.data[0] / static_cast<float>(L.rows);
                for (std::size_t r = 0; r < L.rows; ++r) {
                    const int t = target_class(T, r, L.cols);
                    float mx = L.at(r, 0);
                    for (std::size_t c = 1; c < L.cols; ++c) mx = std::max(mx, L.at(r, c));
                    float sum = 0.0f;
                    for (std::size_t c = 0; c < L.cols; ++c) sum += std::exp(L.at(r, c) - mx);
                    for (std::size_t c = 0; c < L.cols; ++c) {
                        const float p = std::exp(L.at(r, c) - mx) / sum;
                        dL.at(r, c) += scale * (p - (static_cast<int>(c) == t ? 1.0f : 0.0f));
                    }
                }
                break;
            }
            case OpKind::FakeQuantLinear: {
                const Matrix& X = at(n.a).value;
                const Matrix& W = at(n.b).value;
                Matrix& dX = at(n.a).grad;
                for (std::size_t i = 0; i < X.rows; ++i) {
                    float* dxrow = dX.data.data() + i * X.cols;
                    for (std::size_t o = 0; o < W.rows; ++o) {
                        const float dyio = dy.at(i, o);
                        const float* wrow = n.cached_wq.data.data() + o * W.cols;
                        for (std::size_t k = 0; k < X.cols; ++k) dxrow[k] += dyio * wrow[k];
                    }
                }
                Matrix d_wq(W.rows, W.cols);
                for (std::size_t i = 0; i < X.rows; ++i) {
                    const float* xrow = X.data.data() + i * X.cols;
                    for (std::size_t o = 0; o < W.rows; ++o) {
                        const float dyio = dy.at(i, o);
                        float* drow = d_wq.data.data() + o * W.cols;
                        for (std::size_t k = 0; k < W.cols; ++k) drow[k] += dyio * xrow[k];
                    }
                }
                const ChannelScales cs = scales_from(at(n.c).value);
                const GradPair gp = paretoq_backward(W, cs, n.qspec, d_wq, n.alpha_grad_scale);
                Matrix& dW = at(n.b).grad;
                for (std::size_t i = 0; i < dW.size(); ++i) dW.data[i] += gp.d_w.data[i];
                Matrix& da = at(n.c).grad;
                for (std::size_t ch = 0; ch < gp.d_alpha.size(); ++ch) da.at(ch, 0) += gp.d_alpha[ch];
                if (n.d >= 0) {
                    Matrix& db = at(n.d).grad;
                    for (std::size_t i = 0; i < dy.rows; ++i)
                        for (std::size_t o = 0; o < dy.cols; ++o) db.at(0, o) += dy.at(i, o);
                }
                break;
            }
            default: break;
        }
    }

    static int target_class(const Matrix& T, std::size_t r, std::size_t n_classes) {
        const float raw = T.at(r, 0);
        const int t = static_cast<int>(raw);
        if (static_cast<float>(t) != raw || t < 0 || t >= static_cast<int>(n_classes))
            throw InvalidSpec("softmax_cross_entropy: target " + std::to_string(raw) +
                              " is not a class index");
        return t;
    }

    static constexpr float kLayerNormEps = 1e-5f;
};

} // namespace paretoq
