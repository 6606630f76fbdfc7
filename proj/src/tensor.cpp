#include "pigan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pigan {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b)
{
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what)
{
    throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
bool wants_grad(std::initializer_list<const BasicTensor<T>*> inputs)
{
    if (BasicTape<T>::active() == nullptr) return false;
    for (const auto* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

/// Gradient buffer of `t` if it takes part in differentiation, else null.
template <typename T>
T* grad_of(const BasicTensor<T>& t)
{
    if (!t.defined() || !t.requires_grad()) return nullptr;
    auto& st = t.storage();
    if (st.grad.empty()) st.grad.assign(st.data.size(), T(0));
    return st.grad.data();
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A^T * B with A stored [K,M], B [K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        const T* arow = a + p * m;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A * B^T with A [M,K], B stored [N,K]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
};

// col[(c*kh + i)*kw + j][oy*out_w + ox] = img[c][oy*s - p + i][ox*s - p + j]
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col)
{
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* dst = col + ((c * g.kh + i) * g.kw + j) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long x = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                        const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                                            x < static_cast<long>(g.width);
                        dst[oy * g.out_w + ox] =
                            inside ? img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)]
                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img)
{
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* src = col + ((c * g.kh + i) * g.kw + j) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    if (y < 0 || y >= static_cast<long>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long x = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                        if (x < 0 || x >= static_cast<long>(g.width)) continue;
                        img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
}

template <typename T>
BasicTensor<T> unary_map(const char* op, const BasicTensor<T>& a, T (*fwd)(T), T (*dfdx)(T x, T y))
{
    std::vector<T> out(a.numel());
    auto src = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(src[i]);
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a})) {
        std::vector<T> values(result.data().begin(), result.data().end());
        BasicTape<T>::active()->record(op, {a}, result, [a, values = std::move(values), dfdx](std::span<const T> g) mutable {
            T* ga = grad_of(a);
            if (!ga) return;
            auto x = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], values[i]);
        });
    }
    return result;
}

template <typename T>
std::size_t channel_axis_inner(const Shape& s)
{
    return s.size() == 4 ? s[2] * s[3] : 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorStorage<T>>())
{
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor: shape " + shape_to_string(shape) + " does not hold " + std::to_string(data.size()) +
                         " values");
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad)
{
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const
{
    if (axis >= rank())
        throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape()));
    return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const
{
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_to_string(shape()) + " is not a scalar");
    return impl_->data[0];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad()
{
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const
{
    return BasicTensor(impl_->shape, impl_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const
{
    BasicTensor copy(impl_->shape, impl_->data, impl_->requires_grad);
    copy.impl_->grad = impl_->grad;
    return copy;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
BasicTape<T>*& active_tape_slot()
{
    thread_local BasicTape<T>* slot = nullptr;
    return slot;
}

template <typename T>
BasicTape<T>::~BasicTape()
{
    clear();
}

template <typename T>
BasicTape<T>* BasicTape<T>::active()
{
    return active_tape_slot<T>();
}

template <typename T>
void BasicTape<T>::record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T>& output, BackwardFn fn)
{
    auto& st = output.storage();
    st.requires_grad = true;
    st.tape = this;
    st.record = records_.size();
    records_.push_back(Record{op, std::move(inputs), output, std::move(fn)});
}

template <typename T>
void BasicTape<T>::clear()
{
    for (auto& r : records_) {
        auto& st = r.output.storage();
        if (st.tape == this) st.tape = nullptr;
    }
    records_.clear();
}

template <typename T>
TapeScope<T>::TapeScope(BasicTape<T>& tape) : previous_(active_tape_slot<T>())
{
    active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope()
{
    active_tape_slot<T>() = previous_;
}

template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape)
{
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_to_string(loss.shape()));
    const auto& st = loss.storage();
    if (st.tape != &tape || st.record >= tape.records_.size() ||
        !tape.records_[st.record].output.same_storage(loss))
        throw std::invalid_argument("backward: loss is not recorded on this tape (detached?)");

    BasicTensor<T> seed = loss;
    seed.mutable_grad()[0] += T(1);
    for (std::size_t r = st.record + 1; r-- > 0;) {
        auto& rec = tape.records_[r];
        auto& out = rec.output.storage();
        if (out.grad.empty()) continue;
        std::vector<T> g = std::move(out.grad);
        out.grad.clear();
        rec.backward(g);
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a, &b}))
        BasicTape<T>::active()->record("add", {a, b}, result, [a, b](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (T* gb = grad_of(b))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        });
    return result;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a, &b}))
        BasicTape<T>::active()->record("sub", {a, b}, result, [a, b](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (T* gb = grad_of(b))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
    return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a, &b}))
        BasicTape<T>::active()->record("mul", {a, b}, result, [a, b](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
            if (T* gb = grad_of(b))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
        });
    return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor)
{
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("scale", {a}, result, [a, factor](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    return result;
}

// ---------------------------------------------------------------------------
// Dense products

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    BasicTensor<T> result(Shape{m, n}, std::move(out));
    if (wants_grad<T>({&a, &b}))
        BasicTape<T>::active()->record("matmul", {a, b}, result, [a, b, m, n, k](std::span<const T> g) mutable {
            if (T* ga = grad_of(a)) gemm_nt(m, k, n, g.data(), b.data().data(), ga);
            if (T* gb = grad_of(b)) gemm_tn(k, n, m, a.data().data(), g.data(), gb);
        });
    return result;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias)
{
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) shape_fail("linear", x.shape(), weight.shape());
    const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
    if (bias.defined() && bias.shape() != Shape{n}) shape_fail("linear(bias)", bias.shape(), Shape{n});
    std::vector<T> out(m * n, T(0));
    if (bias.defined())
        for (std::size_t i = 0; i < m; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
    gemm_nn(m, n, k, x.data().data(), weight.data().data(), out.data());
    BasicTensor<T> result(Shape{m, n}, std::move(out));
    if (wants_grad<T>({&x, &weight, &bias}))
        BasicTape<T>::active()->record(
            "linear", {x, weight, bias}, result, [x, weight, bias, m, n, k](std::span<const T> g) mutable {
                if (T* gx = grad_of(x)) gemm_nt(m, k, n, g.data(), weight.data().data(), gx);
                if (T* gw = grad_of(weight)) gemm_tn(k, n, m, x.data().data(), g.data(), gw);
                if (T* gb = grad_of(bias))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            });
    return result;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions opts)
{
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) shape_fail("conv2d", x.shape(), weight.shape());
    if (opts.stride == 0) shape_fail("conv2d", "stride must be positive");
    const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t out_c = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (h + 2 * opts.padding < kh || w + 2 * opts.padding < kw)
        shape_fail("conv2d", "kernel " + shape_to_string(weight.shape()) + " larger than padded input " +
                                 shape_to_string(x.shape()));
    if (bias.defined() && bias.shape() != Shape{out_c}) shape_fail("conv2d(bias)", bias.shape(), Shape{out_c});
    const ConvGeometry geo{channels, h, w, kh, kw, opts.stride, opts.padding,
                           (h + 2 * opts.padding - kh) / opts.stride + 1, (w + 2 * opts.padding - kw) / opts.stride + 1};
    const std::size_t ckk = channels * kh * kw, hw_out = geo.out_h * geo.out_w, hw_in = h * w;

    std::vector<T> out(batch * out_c * hw_out, T(0));
    std::vector<T> col(ckk * hw_out);
    for (std::size_t nidx = 0; nidx < batch; ++nidx) {
        T* dst = out.data() + nidx * out_c * hw_out;
        if (bias.defined())
            for (std::size_t o = 0; o < out_c; ++o) std::fill_n(dst + o * hw_out, hw_out, bias.data()[o]);
        im2col(x.data().data() + nidx * channels * hw_in, geo, col.data());
        gemm_nn(out_c, hw_out, ckk, weight.data().data(), col.data(), dst);
    }
    BasicTensor<T> result(Shape{batch, out_c, geo.out_h, geo.out_w}, std::move(out));
    if (wants_grad<T>({&x, &weight, &bias}))
        BasicTape<T>::active()->record(
            "conv2d", {x, weight, bias}, result,
            [x, weight, bias, geo, batch, out_c, ckk, hw_out, hw_in](std::span<const T> g) mutable {
                T* gx = grad_of(x);
                T* gw = grad_of(weight);
                T* gb = grad_of(bias);
                std::vector<T> col(ckk * hw_out);
                for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                    const T* gout = g.data() + nidx * out_c * hw_out;
                    if (gb)
                        for (std::size_t o = 0; o < out_c; ++o)
                            for (std::size_t p = 0; p < hw_out; ++p) gb[o] += gout[o * hw_out + p];
                    if (gw) {
                        im2col(x.data().data() + nidx * geo.channels * hw_in, geo, col.data());
                        gemm_nt(out_c, ckk, hw_out, gout, col.data(), gw);
                    }
                    if (gx) {
                        std::fill(col.begin(), col.end(), T(0));
                        gemm_tn(ckk, hw_out, out_c, weight.data().data(), gout, col.data());
                        col2im(col.data(), geo, gx + nidx * geo.channels * hw_in);
                    }
                }
            });
    return result;
}

template <typename T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                Conv2dOptions opts)
{
    if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(0))
        shape_fail("conv2d_transpose", x.shape(), weight.shape());
    if (opts.stride == 0) shape_fail("conv2d_transpose", "stride must be positive");
    if (opts.output_padding >= opts.stride)
        shape_fail("conv2d_transpose", "output_padding must be smaller than stride");
    const std::size_t batch = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t out_c = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const long oh = static_cast<long>((h - 1) * opts.stride + kh + opts.output_padding) - 2 * static_cast<long>(opts.padding);
    const long ow = static_cast<long>((w - 1) * opts.stride + kw + opts.output_padding) - 2 * static_cast<long>(opts.padding);
    if (oh <= 0 || ow <= 0) shape_fail("conv2d_transpose", "empty output for input " + shape_to_string(x.shape()));
    if (bias.defined() && bias.shape() != Shape{out_c}) shape_fail("conv2d_transpose(bias)", bias.shape(), Shape{out_c});
    // Geometry of the forward convolution that maps the output back onto x.
    const ConvGeometry geo{out_c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), kh, kw,
                           opts.stride, opts.padding, h, w};
    const std::size_t ckk = out_c * kh * kw, hw_in = h * w, hw_out = geo.height * geo.width;

    std::vector<T> out(batch * out_c * hw_out, T(0));
    std::vector<T> col(ckk * hw_in);
    for (std::size_t nidx = 0; nidx < batch; ++nidx) {
        std::fill(col.begin(), col.end(), T(0));
        gemm_tn(ckk, hw_in, in_c, weight.data().data(), x.data().data() + nidx * in_c * hw_in, col.data());
        T* dst = out.data() + nidx * out_c * hw_out;
        col2im(col.data(), geo, dst);
        if (bias.defined())
            for (std::size_t o = 0; o < out_c; ++o)
                for (std::size_t p = 0; p < hw_out; ++p) dst[o * hw_out + p] += bias.data()[o];
    }
    BasicTensor<T> result(Shape{batch, out_c, geo.height, geo.width}, std::move(out));
    if (wants_grad<T>({&x, &weight, &bias}))
        BasicTape<T>::active()->record(
            "conv2d_transpose", {x, weight, bias}, result,
            [x, weight, bias, geo, batch, in_c, out_c, ckk, hw_in, hw_out](std::span<const T> g) mutable {
                T* gx = grad_of(x);
                T* gw = grad_of(weight);
                T* gb = grad_of(bias);
                std::vector<T> col(ckk * hw_in);
                for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                    const T* gout = g.data() + nidx * out_c * hw_out;
                    if (gb)
                        for (std::size_t o = 0; o < out_c; ++o)
                            for (std::size_t p = 0; p < hw_out; ++p) gb[o] += gout[o * hw_out + p];
                    if (!gx && !gw) continue;
                    im2col(gout, geo, col.data());
                    if (gx) gemm_nn(in_c, hw_in, ckk, weight.data().data(), col.data(), gx + nidx * in_c * hw_in);
                    if (gw) gemm_nt(in_c, ckk, hw_in, x.data().data() + nidx * in_c * hw_in, col.data(), gw);
                }
            });
    return result;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a)
{
    return unary_map<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope)
{
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : slope * a.data()[i];
    BasicTensor<T> result(a.shape(), std::move(out));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("leaky_relu", {a}, result, [a, slope](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a.data()[i] > T(0) ? g[i] : slope * g[i];
        });
    return result;
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a)
{
    return unary_map<T>(
        "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a)
{
    return unary_map<T>(
        "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormRunning<T>* running, bool training, T eps)
{
    if (x.rank() != 2 && x.rank() != 4) shape_fail("batch_norm", "expects [N, F] or [N, C, H, W], got " + shape_to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1), inner = channel_axis_inner<T>(x.shape());
    if (gamma.shape() != Shape{channels}) shape_fail("batch_norm(gamma)", gamma.shape(), Shape{channels});
    if (beta.shape() != Shape{channels}) shape_fail("batch_norm(beta)", beta.shape(), Shape{channels});
    if (training && batch < 2)
        shape_fail("batch_norm", "training mode requires batch >= 2, got " + shape_to_string(x.shape()));
    if (!training && (running == nullptr || !running->mean.defined()))
        shape_fail("batch_norm", "eval mode requires running statistics");
    if (running && running->mean.defined() &&
        (running->mean.shape() != Shape{channels} || running->var.shape() != Shape{channels}))
        shape_fail("batch_norm(running)", running->mean.shape(), Shape{channels});

    const std::size_t count = batch * inner;
    auto at = [&](std::size_t n, std::size_t c, std::size_t p) { return (n * channels + c) * inner + p; };
    std::vector<T> mu(channels), inv_std(channels);
    auto xd = x.data();
    if (training) {
        for (std::size_t c = 0; c < channels; ++c) {
            double s = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t p = 0; p < inner; ++p) s += xd[at(n, c, p)];
            const double m = s / static_cast<double>(count);
            double v = 0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t p = 0; p < inner; ++p) {
                    const double d = xd[at(n, c, p)] - m;
                    v += d * d;
                }
            v /= static_cast<double>(count);
            mu[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
            if (running && running->mean.defined()) {
                auto rm = running->mean.mutable_data();
                auto rv = running->var.mutable_data();
                rm[c] = running->momentum * rm[c] + (T(1) - running->momentum) * static_cast<T>(m);
                rv[c] = running->momentum * rv[c] + (T(1) - running->momentum) * static_cast<T>(v);
            }
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mu[c] = running->mean.data()[c];
            inv_std[c] = T(1) / std::sqrt(running->var.data()[c] + eps);
        }
    }

    std::vector<T> xhat(x.numel()), out(x.numel());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < inner; ++p) {
                const auto i = at(n, c, p);
                xhat[i] = (xd[i] - mu[c]) * inv_std[c];
                out[i] = gamma.data()[c] * xhat[i] + beta.data()[c];
            }
    BasicTensor<T> result(x.shape(), std::move(out));
    if (wants_grad<T>({&x, &gamma, &beta}))
        BasicTape<T>::active()->record(
            "batch_norm", {x, gamma, beta}, result,
            [x, gamma, beta, xhat = std::move(xhat), inv_std, training, batch, channels, inner,
             count](std::span<const T> g) mutable {
                T* gx = grad_of(x);
                T* gg = grad_of(gamma);
                T* gbeta = grad_of(beta);
                auto at = [&](std::size_t n, std::size_t c, std::size_t p) { return (n * channels + c) * inner + p; };
                for (std::size_t c = 0; c < channels; ++c) {
                    double sum_g = 0, sum_gx = 0;
                    for (std::size_t n = 0; n < batch; ++n)
                        for (std::size_t p = 0; p < inner; ++p) {
                            const auto i = at(n, c, p);
                            sum_g += g[i];
                            sum_gx += static_cast<double>(g[i]) * xhat[i];
                        }
                    if (gg) gg[c] += static_cast<T>(sum_gx);
                    if (gbeta) gbeta[c] += static_cast<T>(sum_g);
                    if (!gx) continue;
                    const T k = gamma.data()[c] * inv_std[c];
                    if (training) {
                        const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
                        const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(count));
                        for (std::size_t n = 0; n < batch; ++n)
                            for (std::size_t p = 0; p < inner; ++p) {
                                const auto i = at(n, c, p);
                                gx[i] += k * (g[i] - mean_g - xhat[i] * mean_gx);
                            }
                    } else {
                        for (std::size_t n = 0; n < batch; ++n)
                            for (std::size_t p = 0; p < inner; ++p) gx[at(n, c, p)] += k * g[at(n, c, p)];
                    }
                }
            });
    return result;
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape)
{
    if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
    BasicTensor<T> result(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("reshape", {a}, result, [a](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    return result;
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis)
{
    if (parts.empty()) shape_fail("concat", "no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.size()) shape_fail("concat", first, p.shape());
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis && p.dim(d) != first[d]) shape_fail("concat", first, p.shape());
        out_shape[axis] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    const std::size_t out_row = out_shape[axis] * inner;

    std::vector<T> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t row = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * row, row, out.begin() + o * out_row + offset);
        offset += row;
    }
    BasicTensor<T> result(out_shape, std::move(out));

    bool any = false;
    if (BasicTape<T>::active())
        for (const auto& p : parts) any = any || p.requires_grad();
    if (any)
        BasicTape<T>::active()->record("concat", parts, result, [parts, outer, inner, out_row, axis](std::span<const T> g) mutable {
            std::size_t offset = 0;
            for (auto& p : parts) {
                const std::size_t row = p.dim(axis) * inner;
                if (T* gp = grad_of(p))
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < row; ++i) gp[o * row + i] += g[o * out_row + offset + i];
                offset += row;
            }
        });
    return result;
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t start, std::size_t length)
{
    if (axis >= a.rank() || length == 0 || start + length > a.dim(axis))
        shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") on axis " +
                                std::to_string(axis) + " of " + shape_to_string(a.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    const std::size_t in_row = a.dim(axis) * inner, out_row = length * inner;
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    std::vector<T> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + o * in_row + start * inner, out_row, out.begin() + o * out_row);
    BasicTensor<T> result(std::move(out_shape), std::move(out));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("slice", {a}, result, [a, outer, in_row, out_row, start, inner](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < out_row; ++i) ga[o * in_row + start * inner + i] += g[o * out_row + i];
        });
    return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a)
{
    double s = 0;
    for (T v : a.data()) s += v;
    BasicTensor<T> result = BasicTensor<T>::scalar(static_cast<T>(s));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("sum", {a}, result, [a](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
        });
    return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a)
{
    double s = 0;
    for (T v : a.data()) s += v;
    const T n = static_cast<T>(a.numel());
    BasicTensor<T> result = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(a.numel())));
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("mean", {a}, result, [a, n](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0] / n;
        });
    return result;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a)
{
    if (a.rank() == 0) shape_fail("softmax", "needs at least one axis");
    const std::size_t k = a.shape().back(), rows = a.numel() / k;
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = a.data().data() + r * k;
        T* dst = out.data() + r * k;
        const T mx = *std::max_element(src, src + k);
        double z = 0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(src[j] - mx));
        for (std::size_t j = 0; j < k; ++j) dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j] - mx)) / z);
    }
    BasicTensor<T> result(a.shape(), out);
    if (wants_grad<T>({&a}))
        BasicTape<T>::active()->record("softmax", {a}, result, [a, y = std::move(out), rows, k](std::span<const T> g) mutable {
            if (T* ga = grad_of(a))
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0;
                    for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(g[r * k + j]) * y[r * k + j];
                    for (std::size_t j = 0; j < k; ++j)
                        ga[r * k + j] += y[r * k + j] * (g[r * k + j] - static_cast<T>(dot));
                }
        });
    return result;
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target)
{
    if (pred.shape() != target.shape()) shape_fail("mse_loss", pred.shape(), target.shape());
    const std::size_t n = pred.numel();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
        s += d * d;
    }
    BasicTensor<T> result = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
    if (wants_grad<T>({&pred, &target}))
        BasicTape<T>::active()->record("mse_loss", {pred, target}, result, [pred, target, n](std::span<const T> g) mutable {
            const T k = T(2) * g[0] / static_cast<T>(n);
            T* gp = grad_of(pred);
            T* gt = grad_of(target);
            for (std::size_t i = 0; i < n; ++i) {
                const T d = pred.data()[i] - target.data()[i];
                if (gp) gp[i] += k * d;
                if (gt) gt[i] -= k * d;
            }
        });
    return result;
}

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target)
{
    if (logits.shape() != target.shape()) shape_fail("bce_with_logits", logits.shape(), target.shape());
    const std::size_t n = logits.numel();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits.data()[i], t = target.data()[i];
        s += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    BasicTensor<T> result = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
    if (wants_grad<T>({&logits, &target}))
        BasicTape<T>::active()->record("bce_with_logits", {logits, target}, result,
                                       [logits, target, n](std::span<const T> g) mutable {
                                           const T k = g[0] / static_cast<T>(n);
                                           T* gl = grad_of(logits);
                                           T* gt = grad_of(target);
                                           for (std::size_t i = 0; i < n; ++i) {
                                               const T x = logits.data()[i];
                                               const T p = T(1) / (T(1) + std::exp(-x));
                                               if (gl) gl[i] += k * (p - target.data()[i]);
                                               if (gt) gt[i] -= k * x;
                                           }
                                       });
    return result;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> targets)
{
    if (logits.rank() != 2 || logits.dim(0) != targets.size())
        shape_fail("softmax_cross_entropy", logits.shape(), Shape{targets.size()});
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    std::vector<T> prob(logits.numel());
    double s = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] >= k)
            shape_fail("softmax_cross_entropy", "class " + std::to_string(targets[r]) + " out of range for " +
                                                    std::to_string(k) + " classes");
        const T* src = logits.data().data() + r * k;
        const double mx = *std::max_element(src, src + k);
        double z = 0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(src[j] - mx);
        for (std::size_t j = 0; j < k; ++j) prob[r * k + j] = static_cast<T>(std::exp(src[j] - mx) / z);
        s += mx + std::log(z) - src[targets[r]];
    }
    BasicTensor<T> result = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(rows)));
    if (wants_grad<T>({&logits}))
        BasicTape<T>::active()->record(
            "softmax_cross_entropy", {logits}, result,
            [logits, prob = std::move(prob), tgt = std::vector<std::size_t>(targets.begin(), targets.end()), rows,
             k](std::span<const T> g) mutable {
                if (T* gl = grad_of(logits)) {
                    const T scale_by = g[0] / static_cast<T>(rows);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < k; ++j)
                            gl[r * k + j] += scale_by * (prob[r * k + j] - (j == tgt[r] ? T(1) : T(0)));
                }
            });
    return result;
}

// ---------------------------------------------------------------------------

#define PIGAN_INSTANTIATE(T)                                                                                          \
    template class BasicTensor<T>;                                                                                    \
    template class BasicTape<T>;                                                                                      \
    template class TapeScope<T>;                                                                                      \
    template void backward<T>(const BasicTensor<T>&, BasicTape<T>&);                                                  \
    template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                                       \
    template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,            \
                                      Conv2dOptions);                                                                 \
    template BasicTensor<T> conv2d_transpose<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                                Conv2dOptions);                                                       \
    template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> leaky_relu<T>(const BasicTensor<T>&, T);                                                  \
    template BasicTensor<T> tanh<T>(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> batch_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                          BatchNormRunning<T>*, bool, T);                                             \
    template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                                                 \
    template BasicTensor<T> concat<T>(const std::vector<BasicTensor<T>>&, std::size_t);                               \
    template BasicTensor<T> slice<T>(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t);                   \
    template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> softmax<T>(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> mse_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                \
    template BasicTensor<T> bce_with_logits<T>(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> softmax_cross_entropy<T>(const BasicTensor<T>&, std::span<const std::size_t>);

PIGAN_INSTANTIATE(float)
PIGAN_INSTANTIATE(double)

#undef PIGAN_INSTANTIATE

}  // namespace pigan
