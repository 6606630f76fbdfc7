#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pigan {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised by any op whose operands do not conform. The message names the op
/// and the offending shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
class BasicTape;

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    const BasicTape<T>* tape = nullptr;
    std::size_t record = 0;
};

/// Dense row-major tensor handle.
///
/// Copies share storage; use `clone()` for a deep copy. Leaf tensors that
/// require grad act as trainable parameters, everything produced by an op
/// while a tape is active is a recorded intermediate.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct write access; reserved for optimizers, initializers and loaders.
    std::span<T> mutable_data() { return impl_->data; }
    T item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad();  // allocates zeros on first use
    void zero_grad() { impl_->grad.clear(); }

    BasicTensor detach() const;
    BasicTensor clone() const;
    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

    // tape bookkeeping
    TensorStorage<T>& storage() const { return *impl_; }

private:
    std::shared_ptr<TensorStorage<T>> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops append to the thread's active tape (see `TapeScope`) whenever one of
/// their inputs requires grad. Records are appended after their inputs were
/// produced, so reverse iteration is a valid topological order.
template <typename T>
class BasicTape {
public:
    using BackwardFn = std::function<void(std::span<const T> out_grad)>;

    struct Record {
        const char* op;
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        BackwardFn backward;
    };

    BasicTape() = default;
    BasicTape(const BasicTape&) = delete;
    BasicTape& operator=(const BasicTape&) = delete;
    ~BasicTape();

    void record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T>& output, BackwardFn fn);
    std::size_t size() const { return records_.size(); }
    const Record& at(std::size_t i) const { return records_.at(i); }
    void clear();

    static BasicTape* active();

private:
    template <typename U>
    friend void backward(const BasicTensor<U>& loss, BasicTape<U>& tape);
    template <typename U>
    friend class TapeScope;

    std::vector<Record> records_;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(BasicTape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    BasicTape<T>* previous_;
};

/// Populates `grad` of every grad-requiring leaf reachable from `loss`.
/// Gradients accumulate; intermediate gradient buffers are released on the way.
template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape);

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

// ---------------------------------------------------------------------------
// Forward ops. Outputs are recorded on the active tape when any input
// requires grad.

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

/// [M, K] x [K, N] -> [M, N]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x [N, in] * weight [in, out] + bias [out]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t output_padding = 0;  // transpose only
};

/// x [N, C, H, W], weight [O, C, kh, kw], optional bias [O].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions opts = {});
/// x [N, Cin, H, W], weight [Cin, Cout, kh, kw], optional bias [Cout].
/// Output side = (H - 1) * stride - 2 * padding + kh + output_padding.
template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                Conv2dOptions opts = {});

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);

template <typename T>
struct BatchNormRunning {
    BasicTensor<T> mean;
    BasicTensor<T> var;
    T momentum = T(0.9);  // running = momentum * running + (1 - momentum) * batch
};

/// Normalizes per feature ([N, F]) or per channel ([N, C, H, W]).
/// In training mode batch statistics are used (biased variance) and, when
/// `running` is non-null, folded into the running estimates. Eval mode reads
/// `running`, which must then be provided.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormRunning<T>* running, bool training, T eps = T(1e-5));

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
/// Softmax over the last axis.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& a);

// ---------------------------------------------------------------------------
// Losses, all reduced by mean to a scalar.

template <typename T> BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);
template <typename T> BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target);
/// logits [N, K]; targets holds one class index per row.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> targets);

}  // namespace pigan
