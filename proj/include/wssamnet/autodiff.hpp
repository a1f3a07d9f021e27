#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>
#include <utility>
#include <vector>

#include "wssamnet/types.hpp"

namespace wssam::ad {

/// Channel-major 4D shape; spatial storage is x-fastest to match Volume.
struct TensorShape {
    int c = 1, x = 1, y = 1, z = 1;

    std::int64_t spatial() const { return std::int64_t(x) * y * z; }
    std::int64_t numel() const { return spatial() * c; }
    bool operator==(const TensorShape& o) const {
        return c == o.c && x == o.x && y == o.y && z == o.z;
    }
    bool same_spatial(const TensorShape& o) const { return x == o.x && y == o.y && z == o.z; }
};

template <typename T>
struct Tensor {
    static_assert(std::is_floating_point_v<T>);

    TensorShape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(TensorShape s, T fill = T(0)) : shape(s), data(std::size_t(s.numel()), fill) {}

    static Tensor scalar(T v) {
        Tensor t(TensorShape{1, 1, 1, 1});
        t.data[0] = v;
        return t;
    }

    std::size_t index(int c, int x, int y, int z) const {
        return std::size_t(x) +
               std::size_t(shape.x) *
                   (std::size_t(y) + std::size_t(shape.y) * (std::size_t(z) + std::size_t(shape.z) * c));
    }

    T& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }
    const T& at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }

    T* channel(int c) { return data.data() + std::size_t(c) * shape.spatial(); }
    const T* channel(int c) const { return data.data() + std::size_t(c) * shape.spatial(); }

    T scalar_value() const { return data.at(0); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

template <typename T>
class Tape;

/// Lightweight handle to a tape node.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& value() const { return tape->val(id); }
    const TensorShape& shape() const { return tape->val(id).shape; }
};

/// Reverse-mode tape. Ops append nodes in topological order; backward() walks
/// the tape in reverse. All accumulation is serial and order-fixed, so results
/// are bit-reproducible for identical inputs.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, int(nodes_.size()) - 1};
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    int emit(Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        for (int p : n.parents)
            if (nodes_[std::size_t(p)].needs_grad) n.needs_grad = true;
        if (n.needs_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    Var<T> emit_var(Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
        return Var<T>{this, emit(std::move(value), std::move(parents), std::move(backward))};
    }

    const Tensor<T>& val(int id) const { return nodes_[std::size_t(id)].value; }

    bool needs(int id) const { return nodes_[std::size_t(id)].needs_grad; }

    /// Gradient buffer for accumulation; allocated zero on first touch.
    Tensor<T>& gbuf(int id) {
        Node& n = nodes_[std::size_t(id)];
        if (!n.has_grad) {
            n.grad = Tensor<T>(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    /// Gradient read-out (zeros if the node was never reached).
    const Tensor<T>& grad(int id) {
        return gbuf(id);
    }
    const Tensor<T>& grad(const Var<T>& v) { return grad(v.id); }

    /// Backpropagate from a scalar root (seeds d(root)/d(root) = 1).
    void backward(const Var<T>& root) {
        if (!root.valid() || root.tape != this)
            throw invalid_input_error("backward: var does not belong to this tape");
        if (nodes_[std::size_t(root.id)].value.shape.numel() != 1)
            throw invalid_input_error("backward: root must be a scalar");
        gbuf(root.id).data[0] = T(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (n.needs_grad && n.has_grad && n.backward) n.backward(*this, i);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool has_grad = false;
        bool needs_grad = false;
        std::vector<int> parents;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

// ---- elementwise and reduction ops ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.val(a.id), &vb = t.val(b.id);
    if (!(va.shape == vb.shape)) throw invalid_input_error("add: shape mismatch");
    Tensor<T> out(va.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
    int ia = a.id, ib = b.id;
    return t.emit_var(std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp.needs(ib)) {
            Tensor<T>& gb = tp.gbuf(ib);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.val(a.id), &vb = t.val(b.id);
    if (!(va.shape == vb.shape)) throw invalid_input_error("mul: shape mismatch");
    Tensor<T> out(va.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
    int ia = a.id, ib = b.id;
    return t.emit_var(std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        const Tensor<T>&va = tp.val(ia), &vb = tp.val(ib);
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        }
        if (tp.needs(ib)) {
            Tensor<T>& gb = tp.gbuf(ib);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, double k) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& va = t.val(a.id);
    Tensor<T> out(va.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = T(k) * va.data[i];
    int ia = a.id;
    return t.emit_var(std::move(out), {ia}, [ia, k](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += T(k) * g.data[i];
        }
    });
}

template <typename T>
Var<T> reduce_sum(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& va = t.val(a.id);
    double acc = 0;
    for (T v : va.data) acc += double(v);
    int ia = a.id;
    return t.emit_var(Tensor<T>::scalar(T(acc)), {ia}, [ia](Tape<T>& tp, int self) {
        const T g = tp.gbuf(self).data[0];
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g;
        }
    });
}

template <typename T>
Var<T> reduce_mean(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& va = t.val(a.id);
    const double n = double(va.shape.numel());
    double acc = 0;
    for (T v : va.data) acc += double(v);
    int ia = a.id;
    return t.emit_var(Tensor<T>::scalar(T(acc / n)), {ia}, [ia, n](Tape<T>& tp, int self) {
        const T g = T(double(tp.gbuf(self).data[0]) / n);
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g;
        }
    });
}

/// Scalar combination sum_i coeff_i * var_i; every var must be scalar.
template <typename T>
Var<T> linear_combine(const std::vector<std::pair<Var<T>, double>>& terms) {
    if (terms.empty()) throw invalid_input_error("linear_combine: no terms");
    Tape<T>& t = *terms.front().first.tape;
    double acc = 0;
    std::vector<int> parents;
    std::vector<double> coeffs;
    for (const auto& [v, c] : terms) {
        if (t.val(v.id).shape.numel() != 1)
            throw invalid_input_error("linear_combine: non-scalar term");
        acc += c * double(t.val(v.id).data[0]);
        parents.push_back(v.id);
        coeffs.push_back(c);
    }
    std::vector<int> parents_copy = parents;
    return t.emit_var(Tensor<T>::scalar(T(acc)), std::move(parents_copy),
                      [parents, coeffs](Tape<T>& tp, int self) {
                          const T g = tp.gbuf(self).data[0];
                          for (std::size_t i = 0; i < parents.size(); ++i)
                              if (tp.needs(parents[i]))
                                  tp.gbuf(parents[i]).data[0] += T(coeffs[i]) * g;
                      });
}

}  // namespace wssam::ad
