#pragma once

// Minimal deterministic tensor engine with reverse-mode automatic
// differentiation. Row-major N,C,H,W layout throughout. Templated on the
// scalar type: float in production, double in numerical test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace htd {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Tape toggle. With recording off, ops still compute forward values but do
// not retain parents or backward closures.
inline bool& grad_recording_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_recording_flag()) { grad_recording_flag() = false; }
    ~NoGradGuard() { grad_recording_flag() = prev; }
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
    void zero_grad() { grad.assign(data.size(), S(0)); }
    void release_tape() {
        parents.clear();
        backward_fn = nullptr;
    }
};

template <typename S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return filled(shape, S(0), requires_grad);
    }
    static Tensor filled(const Shape& shape, S value, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->shape = shape;
        impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
        impl->requires_grad = requires_grad;
        return Tensor(impl);
    }
    static Tensor from_data(const Shape& shape, std::vector<S> values,
                            bool requires_grad = false) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape))
            throw DimensionError("from_data: " + std::to_string(values.size()) +
                                 " values for shape " + shape_str(shape));
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->shape = shape;
        impl->data = std::move(values);
        impl->requires_grad = requires_grad;
        return Tensor(impl);
    }
    static Tensor scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return impl_->numel(); }

    std::vector<S>& data() { return impl_->data; }
    const std::vector<S>& data() const { return impl_->data; }
    S item() const {
        if (numel() != 1) throw ContractError("item() on tensor with numel " + std::to_string(numel()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    std::vector<S> grad() const {
        if (impl_->grad.size() == impl_->data.size()) return impl_->grad;
        return std::vector<S>(impl_->data.size(), S(0));
    }
    void zero_grad() { impl_->zero_grad(); }

    std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }

    // Runs reverse-mode accumulation from this scalar tensor.
    void backward() const;

private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

// Builds an op node. `parents` are recorded only while the tape is on and at
// least one parent requires grad.
template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> data,
                  std::vector<Tensor<S>> parents,
                  std::function<void(TensorImpl<S>&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool track = false;
    if (grad_recording_flag()) {
        for (const auto& p : parents)
            if (p.requires_grad()) track = true;
    }
    if (track) {
        impl->requires_grad = true;
        impl->is_leaf = false;
        for (const auto& p : parents) impl->parents.push_back(p.impl());
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor<S>(impl);
}

template <typename S>
void Tensor<S>::backward() const {
    if (numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    // Topological order by iterative DFS over recorded parents.
    std::vector<TensorImpl<S>*> order;
    std::unordered_set<TensorImpl<S>*> seen;
    std::vector<std::pair<TensorImpl<S>*, size_t>> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl<S>* p = node->parents[idx].get();
            ++idx;
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    impl_->ensure_grad();
    impl_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<S>* node = *it;
        if (node->backward_fn && node->grad.size() == node->data.size())
            node->backward_fn(*node);
    }
}

template <typename S>
void assert_finite(const Tensor<S>& t, const std::string& what) {
    for (S v : t.data())
        if (!std::isfinite(v))
            throw ContractError("non-finite value in " + what);
}

// ---------------------------------------------------------------------------
// Broadcasting helpers. Shapes broadcast numpy-style after right-alignment;
// a dim of 1 stretches.
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides (in elements) of `shape` right-aligned into a frame of rank
// `rank`, with zero stride on broadcast dims.
inline std::vector<int64_t> broadcast_strides(const Shape& shape, size_t rank) {
    std::vector<int64_t> strides(rank, 0);
    int64_t s = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        size_t src = shape.size() - 1 - i;
        size_t dst = rank - 1 - i;
        strides[dst] = shape[src] == 1 ? 0 : s;
        s *= shape[src];
    }
    return strides;
}

// Reduces `full` (of shape `full_shape`) by summation down to `target_shape`
// and accumulates into `acc`.
template <typename S>
void reduce_into(const std::vector<S>& full, const Shape& full_shape,
                 std::vector<S>& acc, const Shape& target_shape) {
    if (full_shape == target_shape) {
        for (size_t i = 0; i < full.size(); ++i) acc[i] += full[i];
        return;
    }
    size_t rank = full_shape.size();
    auto tstrides = broadcast_strides(target_shape, rank);
    std::vector<int> idx(rank, 0);
    for (size_t lin = 0; lin < full.size(); ++lin) {
        int64_t tlin = 0;
        for (size_t d = 0; d < rank; ++d) tlin += idx[d] * tstrides[d];
        acc[static_cast<size_t>(tlin)] += full[lin];
        for (size_t d = rank; d-- > 0;) {
            if (++idx[d] < full_shape[d]) break;
            idx[d] = 0;
        }
    }
}

namespace detail {

template <typename S, typename FwdFn>
void broadcast_loop(const std::vector<S>& a, const Shape& as,
                    const std::vector<S>& b, const Shape& bs,
                    const Shape& os, std::vector<S>& out, FwdFn fn) {
    size_t rank = os.size();
    auto sa = broadcast_strides(as, rank);
    auto sb = broadcast_strides(bs, rank);
    std::vector<int> idx(rank, 0);
    for (size_t lin = 0; lin < out.size(); ++lin) {
        int64_t ia = 0, ib = 0;
        for (size_t d = 0; d < rank; ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        out[lin] = fn(a[static_cast<size_t>(ia)], b[static_cast<size_t>(ib)]);
        for (size_t d = rank; d-- > 0;) {
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace detail

// Generic broadcasting binary op. dfa/dfb give the partials w.r.t. each input.
template <typename S, typename FwdFn, typename DaFn, typename DbFn>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, FwdFn fn, DaFn dfa, DbFn dfb) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    std::vector<S> out(static_cast<size_t>(shape_numel(os)));
    const auto& av = a.data();
    const auto& bv = b.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = fn(av[i], bv[i]);
    } else {
        detail::broadcast_loop(av, a.shape(), bv, b.shape(), os, out, fn);
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op<S>(os, std::move(out), {a, b}, [ai, bi, os, dfa, dfb](TensorImpl<S>& self) {
        size_t rank = os.size();
        auto sa = broadcast_strides(ai->shape, rank);
        auto sb = broadcast_strides(bi->shape, rank);
        if (ai->requires_grad) ai->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        std::vector<int> idx(rank, 0);
        bool same = ai->shape == bi->shape && ai->shape == os;
        for (size_t lin = 0; lin < self.data.size(); ++lin) {
            size_t ia, ib;
            if (same) {
                ia = ib = lin;
            } else {
                int64_t ja = 0, jb = 0;
                for (size_t d = 0; d < rank; ++d) {
                    ja += idx[d] * sa[d];
                    jb += idx[d] * sb[d];
                }
                ia = static_cast<size_t>(ja);
                ib = static_cast<size_t>(jb);
                for (size_t d = rank; d-- > 0;) {
                    if (++idx[d] < os[d]) break;
                    idx[d] = 0;
                }
            }
            S g = self.grad[lin];
            if (ai->requires_grad) ai->grad[ia] += g * dfa(ai->data[ia], bi->data[ib]);
            if (bi->requires_grad) bi->grad[ib] += g * dfb(ai->data[ia], bi->data[ib]);
        }
    });
}

template <typename S, typename FwdFn, typename DFn>
Tensor<S> unary_op(const Tensor<S>& a, FwdFn fn, DFn dfn) {
    std::vector<S> out(a.data().size());
    const auto& av = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fn(av[i]);
    auto ai = a.impl();
    return make_op<S>(a.shape(), std::move(out), {a}, [ai, dfn](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.data.size(); ++i)
            ai->grad[i] += self.grad[i] * dfn(ai->data[i], self.data[i]);
    });
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, [](S x, S y) { return x + y; },
                     [](S, S) { return S(1); }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, [](S x, S y) { return x - y; },
                     [](S, S) { return S(1); }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, [](S x, S y) { return x * y; },
                     [](S, S y) { return y; }, [](S x, S) { return x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(a, b, [](S x, S y) { return x / y; },
                     [](S, S y) { return S(1) / y; },
                     [](S x, S y) { return -x / (y * y); });
}

template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
    // Ties route the gradient to the first argument.
    return binary_op(a, b, [](S x, S y) { return x <= y ? x : y; },
                     [](S x, S y) { return x <= y ? S(1) : S(0); },
                     [](S x, S y) { return x <= y ? S(0) : S(1); });
}

// Elementwise min over a non-empty list (left fold).
template <typename S>
Tensor<S> minimum(const std::vector<Tensor<S>>& ts) {
    if (ts.empty()) throw ContractError("minimum over empty tensor list");
    Tensor<S> acc = ts[0];
    for (size_t i = 1; i < ts.size(); ++i) acc = minimum(acc, ts[i]);
    return acc;
}

// Constant 0/1 indicator of a < b; never tracks gradients.
template <typename S>
Tensor<S> less_than(const Tensor<S>& a, const Tensor<S>& b) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    std::vector<S> out(static_cast<size_t>(shape_numel(os)));
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] < b.data()[i] ? S(1) : S(0);
    } else {
        detail::broadcast_loop(a.data(), a.shape(), b.data(), b.shape(), os, out,
                               [](S x, S y) { return x < y ? S(1) : S(0); });
    }
    return Tensor<S>::from_data(os, std::move(out));
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, double c) {
    S cc = static_cast<S>(c);
    return unary_op(a, [cc](S x) { return x + cc; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, double c) {
    S cc = static_cast<S>(c);
    return unary_op(a, [cc](S x) { return x * cc; }, [cc](S, S) { return cc; });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) { return mul_scalar(a, -1.0); }

template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return x < S(0) ? -x : x; },
                    [](S x, S) { return x < S(0) ? S(-1) : S(1); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return std::sqrt(x); },
                    [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> sin(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return std::sin(x); }, [](S x, S) { return std::cos(x); });
}

template <typename S>
Tensor<S> cos(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return std::cos(x); }, [](S x, S) { return -std::sin(x); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return unary_op(a,
                    [](S x) {
                        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
                        S e = std::exp(x);
                        return e / (S(1) + e);
                    },
                    [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return unary_op(a, [](S x) { return x > S(0) ? x : S(0); },
                    [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
    // Exact erf form.
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(a,
                    [](S x) {
                        return static_cast<S>(0.5 * double(x) * (1.0 + std::erf(double(x) * inv_sqrt2)));
                    },
                    [](S x, S) {
                        double cdf = 0.5 * (1.0 + std::erf(double(x) * inv_sqrt2));
                        double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
                        return static_cast<S>(cdf + double(x) * pdf);
                    });
}

template <typename S>
Tensor<S> clamp_min(const Tensor<S>& a, double lo) {
    S c = static_cast<S>(lo);
    return unary_op(a, [c](S x) { return x < c ? c : x; },
                    [c](S x, S) { return x < c ? S(0) : S(1); });
}

template <typename S>
Tensor<S> clamp_max(const Tensor<S>& a, double hi) {
    S c = static_cast<S>(hi);
    return unary_op(a, [c](S x) { return x > c ? c : x; },
                    [c](S x, S) { return x > c ? S(0) : S(1); });
}

// Forward copy that blocks gradient flow.
template <typename S>
Tensor<S> detach(const Tensor<S>& a) {
    return Tensor<S>::from_data(a.shape(), a.data());
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto ai = a.impl();
    return make_op<S>(shape, a.data(), {a}, [ai](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& ts, int axis) {
    if (ts.empty()) throw ContractError("concat of empty list");
    int rank = ts[0].rank();
    if (axis < 0) axis += rank;
    Shape os = ts[0].shape();
    int64_t total_axis = 0;
    for (const auto& t : ts) {
        if (t.rank() != rank) throw DimensionError("concat rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && t.dim(d) != os[static_cast<size_t>(d)])
                throw DimensionError("concat shape mismatch at axis " + std::to_string(d));
        total_axis += t.dim(axis);
    }
    os[static_cast<size_t>(axis)] = static_cast<int>(total_axis);

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= os[static_cast<size_t>(d)];

    std::vector<S> out(static_cast<size_t>(shape_numel(os)));
    int64_t offset = 0;
    for (const auto& t : ts) {
        int64_t ax = t.dim(axis);
        const auto& tv = t.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(tv.begin() + o * ax * inner, tv.begin() + (o + 1) * ax * inner,
                      out.begin() + (o * total_axis + offset) * inner);
        offset += ax;
    }
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    for (const auto& t : ts) impls.push_back(t.impl());
    return make_op<S>(os, std::move(out), ts,
                      [impls, outer, inner, total_axis, axis](TensorImpl<S>& self) {
                          int64_t offset = 0;
                          for (auto& pi : impls) {
                              int64_t ax = pi->shape[static_cast<size_t>(axis)];
                              if (pi->requires_grad) {
                                  pi->ensure_grad();
                                  for (int64_t o = 0; o < outer; ++o) {
                                      const S* src = self.grad.data() + (o * total_axis + offset) * inner;
                                      S* dst = pi->grad.data() + o * ax * inner;
                                      for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                                  }
                              }
                              offset += ax;
                          }
                      });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank || start < 0 || start + len > a.dim(axis))
        throw DimensionError("slice out of range on " + shape_str(a.shape()));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
    int64_t ax = a.dim(axis);

    std::vector<S> out(static_cast<size_t>(shape_numel(os)));
    const auto& av = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(av.begin() + (o * ax + start) * inner, av.begin() + (o * ax + start + len) * inner,
                  out.begin() + o * len * inner);
    auto ai = a.impl();
    return make_op<S>(os, std::move(out), {a},
                      [ai, outer, inner, ax, start, len](TensorImpl<S>& self) {
                          if (!ai->requires_grad) return;
                          ai->ensure_grad();
                          for (int64_t o = 0; o < outer; ++o) {
                              const S* src = self.grad.data() + o * len * inner;
                              S* dst = ai->grad.data() + (o * ax + start) * inner;
                              for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                          }
                      });
}

// Picks one element by flat index; returns a [1] tensor.
template <typename S>
Tensor<S> select(const Tensor<S>& a, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= a.numel())
        throw DimensionError("select index out of range");
    auto ai = a.impl();
    return make_op<S>({1}, {a.data()[static_cast<size_t>(flat_index)]}, {a},
                      [ai, flat_index](TensorImpl<S>& self) {
                          if (!ai->requires_grad) return;
                          ai->ensure_grad();
                          ai->grad[static_cast<size_t>(flat_index)] += self.grad[0];
                      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S acc = 0;
    for (S v : a.data()) acc += v;
    auto ai = a.impl();
    return make_op<S>({1}, {acc}, {a}, [ai](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (auto& g : ai->grad) g += self.grad[0];
    });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// N,C,H,W -> N,1,H,W channel mean.
template <typename S>
Tensor<S> mean_channels(const Tensor<S>& a) {
    if (a.rank() != 4) throw DimensionError("mean_channels expects NCHW");
    int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    int64_t hw = int64_t(H) * W;
    std::vector<S> out(static_cast<size_t>(N) * hw, S(0));
    const auto& av = a.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i)
                out[n * hw + i] += av[(n * C + c) * hw + i];
    S inv = S(1) / S(C);
    for (auto& v : out) v *= inv;
    auto ai = a.impl();
    return make_op<S>({N, 1, H, W}, std::move(out), {a}, [ai, N, C, hw, inv](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int64_t i = 0; i < hw; ++i)
                    ai->grad[(n * C + c) * hw + i] += self.grad[n * hw + i] * inv;
    });
}

// N,C,H,W -> N,C global spatial mean.
template <typename S>
Tensor<S> spatial_mean(const Tensor<S>& a) {
    if (a.rank() != 4) throw DimensionError("spatial_mean expects NCHW");
    int N = a.dim(0), C = a.dim(1);
    int64_t hw = int64_t(a.dim(2)) * a.dim(3);
    std::vector<S> out(static_cast<size_t>(N) * C, S(0));
    const auto& av = a.data();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        S acc = 0;
        for (int64_t i = 0; i < hw; ++i) acc += av[nc * hw + i];
        out[static_cast<size_t>(nc)] = acc / S(hw);
    }
    auto ai = a.impl();
    return make_op<S>({N, C}, std::move(out), {a}, [ai, N, C, hw](TensorImpl<S>& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        S inv = S(1) / S(hw);
        for (int64_t nc = 0; nc < int64_t(N) * C; ++nc)
            for (int64_t i = 0; i < hw; ++i)
                ai->grad[nc * hw + i] += self.grad[static_cast<size_t>(nc)] * inv;
    });
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937 output is mapped to floats directly so the
// stream does not depend on library distribution internals.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed)) {}

    double uniform() { return (gen_() >> 8) * (1.0 / 16777216.0); }  // [0,1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    uint32_t next_u32() { return gen_(); }

    template <typename S>
    Tensor<S> uniform_tensor(const Shape& shape, double lo, double hi, bool requires_grad = false) {
        std::vector<S> v(static_cast<size_t>(shape_numel(shape)));
        for (auto& x : v) x = static_cast<S>(uniform(lo, hi));
        return Tensor<S>::from_data(shape, std::move(v), requires_grad);
    }

private:
    std::mt19937 gen_;
};

}  // namespace htd
