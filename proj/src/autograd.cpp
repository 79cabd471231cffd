#include "qcount/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace qcount::ag {

namespace {

template <typename T, typename E>
void accumulate(Node<T>& n, const E& g) {
    if (!n.requires_grad) return;
    n.grad_buffer() += g;
}

void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace

// ---- Graph ----------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::constant(Matrix<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->graph = this;
    return Var<T>(std::move(node));
}

template <typename T>
Var<T> Graph<T>::variable(Matrix<T> value) {
    auto v = constant(std::move(value));
    v.node()->requires_grad = record_;
    return v;
}

template <typename T>
Var<T> Graph<T>::param(const Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var<T>(it->second);
    auto node = std::make_shared<Node<T>>();
    node->value = p.value;
    node->graph = this;
    node->requires_grad = record_ && p.trainable;
    bound_.emplace(&p, node);
    return Var<T>(std::move(node));
}

template <typename T>
const Matrix<T>* Graph<T>::param_grad(const Parameter<T>& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end() || it->second->grad.size() == 0) return nullptr;
    return &it->second->grad;
}

template <typename T>
Var<T> Graph<T>::make(Matrix<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->graph = this;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (record_ && needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

template <typename T>
void Graph<T>::backward(const Var<T>& root) {
    require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node<T>* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

template <typename T>
void Graph<T>::record_pattern(const std::vector<bool>& active) {
    // FNV-1a over the activation bits, separated per call.
    std::uint64_t h = pattern_hash_;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    mix(active.size());
    for (bool b : active) mix(b ? 0x9e37u : 0x51u);
    pattern_hash_ = h;
}

// ---- elementwise and linear algebra ---------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    Matrix<T> out = a.value() * b.value();
    return a.graph().make(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        if (na.requires_grad) na.grad_buffer().noalias() += self.grad * nb.value.transpose();
        if (nb.requires_grad) nb.grad_buffer().noalias() += na.value.transpose() * self.grad;
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
    require(x.cols() == weight.rows(), "linear: input width mismatch");
    Matrix<T> out(x.rows(), weight.cols());
    out.noalias() = x.value() * weight.value();
    std::vector<Var<T>> inputs{x, weight};
    if (bias) {
        require(bias->rows() == 1 && bias->cols() == weight.cols(), "linear: bias shape mismatch");
        out.rowwise() += bias->value().row(0);
        inputs.push_back(*bias);
    }
    return x.graph().make(std::move(out), std::move(inputs), [](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nw = *self.inputs[1];
        if (nx.requires_grad) nx.grad_buffer().noalias() += self.grad * nw.value.transpose();
        if (nw.requires_grad) nw.grad_buffer().noalias() += nx.value.transpose() * self.grad;
        if (self.inputs.size() > 2) accumulate(*self.inputs[2], self.grad.colwise().sum());
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    return linear(x, weight, &bias);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Matrix<T> out = a.value() + b.value();
    return a.graph().make(std::move(out), {a, b}, [](Node<T>& self) {
        accumulate(*self.inputs[0], self.grad);
        accumulate(*self.inputs[1], self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Matrix<T> out = a.value() - b.value();
    return a.graph().make(std::move(out), {a, b}, [](Node<T>& self) {
        accumulate(*self.inputs[0], self.grad);
        accumulate(*self.inputs[1], -self.grad);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    Matrix<T> out = a.value().cwiseProduct(b.value());
    return a.graph().make(std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        accumulate(na, self.grad.cwiseProduct(nb.value));
        accumulate(nb, self.grad.cwiseProduct(na.value));
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Matrix<T> out = a.value() * s;
    return a.graph().make(std::move(out), {a}, [s](Node<T>& self) { accumulate(*self.inputs[0], self.grad * s); });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
    Matrix<T> out = a.value();
    out.rowwise() += row.value().row(0);
    return a.graph().make(std::move(out), {a, row}, [](Node<T>& self) {
        accumulate(*self.inputs[0], self.grad);
        accumulate(*self.inputs[1], self.grad.colwise().sum());
    });
}

template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
    require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
    Matrix<T> out = a.value().array().colwise() * col.value().col(0).array();
    return a.graph().make(std::move(out), {a, col}, [](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nc = *self.inputs[1];
        if (na.requires_grad) na.grad_buffer().array() += self.grad.array().colwise() * nc.value.col(0).array();
        if (nc.requires_grad) nc.grad_buffer() += self.grad.cwiseProduct(na.value).rowwise().sum();
    });
}

// ---- structural -----------------------------------------------------------

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    Index rows = 0;
    const Index cols = parts.front().cols();
    for (const auto& p : parts) {
        require(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix<T> out(rows, cols);
    Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return parts.front().graph().make(std::move(out), parts, [](Node<T>& self) {
        Index r0 = 0;
        for (auto& in : self.inputs) {
            const Index n = in->value.rows();
            accumulate(*in, self.grad.middleRows(r0, n));
            r0 += n;
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    Index cols = 0;
    const Index rows = parts.front().rows();
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix<T> out(rows, cols);
    Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return parts.front().graph().make(std::move(out), parts, [](Node<T>& self) {
        Index c0 = 0;
        for (auto& in : self.inputs) {
            const Index n = in->value.cols();
            accumulate(*in, self.grad.middleCols(c0, n));
            c0 += n;
        }
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index start, Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
    Matrix<T> out = a.value().middleRows(start, count);
    return a.graph().make(std::move(out), {a}, [start, count](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        if (na.requires_grad) na.grad_buffer().middleRows(start, count) += self.grad;
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
    Matrix<T> out = a.value().middleCols(start, count);
    return a.graph().make(std::move(out), {a}, [start, count](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        if (na.requires_grad) na.grad_buffer().middleCols(start, count) += self.grad;
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, const std::vector<Index>& ids) {
    Matrix<T> out(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
        out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
    }
    return table.graph().make(std::move(out), {table}, [ids](Node<T>& self) {
        Node<T>& nt = *self.inputs[0];
        if (!nt.requires_grad) return;
        auto& g = nt.grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += self.grad.row(static_cast<Index>(i));
    });
}

template <typename T>
Var<T> remap_rows(const Var<T>& a, const RowMap& map) {
    require(map.in_rows == a.rows(), "remap_rows: input rows do not match map");
    const Index out_rows = static_cast<Index>(map.taps.size());
    Matrix<T> out = Matrix<T>::Zero(out_rows, a.cols());
    for (Index r = 0; r < out_rows; ++r)
        for (const auto& tap : map.taps[static_cast<std::size_t>(r)])
            out.row(r) += static_cast<T>(tap.weight) * a.value().row(tap.src);
    return a.graph().make(std::move(out), {a}, [map](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        if (!na.requires_grad) return;
        auto& g = na.grad_buffer();
        for (std::size_t r = 0; r < map.taps.size(); ++r)
            for (const auto& tap : map.taps[r])
                g.row(tap.src) += static_cast<T>(tap.weight) * self.grad.row(static_cast<Index>(r));
    });
}

// ---- normalisation and activations ----------------------------------------

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Index n = x.rows();
    const Index c = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c,
            "layer_norm: affine shape mismatch");
    Matrix<T> xhat(n, c);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
    for (Index i = 0; i < n; ++i) {
        const auto row = x.value().row(i);
        const T mean = row.mean();
        const T var = (row.array() - mean).square().mean();
        rstd(i) = T(1) / std::sqrt(var + eps);
        xhat.row(i) = (row.array() - mean) * rstd(i);
    }
    Matrix<T> out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    return x.graph().make(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        accumulate(ng, self.grad.cwiseProduct(xhat).colwise().sum());
        accumulate(nb, self.grad.colwise().sum());
        if (!nx.requires_grad) return;
        const Matrix<T> dxhat = self.grad.array().rowwise() * ng.value.row(0).array();
        auto& gx = nx.grad_buffer();
        const T inv_c = T(1) / static_cast<T>(xhat.cols());
        for (Index i = 0; i < xhat.rows(); ++i) {
            const T m1 = dxhat.row(i).sum() * inv_c;
            const T m2 = dxhat.row(i).dot(xhat.row(i)) * inv_c;
            gx.row(i).array() += rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
    });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T k = static_cast<T>(0.044715);
    Matrix<T> t = (c * (x.value().array() + k * x.value().array().cube())).tanh().matrix();
    Matrix<T> out = (T(0.5) * x.value().array() * (T(1) + t.array())).matrix();
    return x.graph().make(std::move(out), {x}, [t = std::move(t), c, k](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        const auto xa = nx.value.array();
        const auto ta = t.array();
        nx.grad_buffer().array() +=
            self.grad.array() *
            (T(0.5) * (T(1) + ta) + T(0.5) * xa * (T(1) - ta.square()) * c * (T(1) + T(3) * k * xa.square()));
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    std::vector<bool> active(static_cast<std::size_t>(x.value().size()));
    const T* px = x.value().data();
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = px[i] > T(0);
    x.graph().record_pattern(active);
    Matrix<T> out = x.value().cwiseMax(T(0));
    return x.graph().make(std::move(out), {x}, [](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        nx.grad_buffer().array() += (nx.value.array() > T(0)).select(self.grad.array(), T(0));
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Matrix<T> out = (T(1) / (T(1) + (-x.value().array()).exp())).matrix();
    return x.graph().make(std::move(out), {x}, [](Node<T>& self) {
        const auto s = self.value.array();
        accumulate(*self.inputs[0], (self.grad.array() * s * (T(1) - s)).matrix());
    });
}

// ---- attention ------------------------------------------------------------

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const AttentionMask& mask) {
    require(heads > 0 && q.cols() % heads == 0 && v.cols() % heads == 0, "attention: width not divisible by heads");
    require(q.cols() == k.cols() && k.rows() == v.rows(), "attention: q/k/v shape mismatch");
    const Index n = q.rows();
    const Index nk = k.rows();
    const Index dh = q.cols() / heads;
    const Index dv = v.cols() / heads;
    const T scl = T(1) / std::sqrt(static_cast<T>(dh));
    if (mask.kind == AttentionMask::Kind::groups)
        require(static_cast<Index>(mask.group.size()) == n && n == nk, "attention: group mask size mismatch");

    Matrix<T> allowed = Matrix<T>::Ones(n, nk);
    if (mask.kind != AttentionMask::Kind::none)
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < nk; ++j)
                if (!mask.allowed(i, j)) allowed(i, j) = T(0);

    std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
    Matrix<T> out(n, v.cols());
    for (int h = 0; h < heads; ++h) {
        Matrix<T> s(n, nk);
        s.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
        s *= scl;
        for (Index i = 0; i < n; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (Index j = 0; j < nk; ++j)
                if (allowed(i, j) != T(0)) mx = std::max(mx, s(i, j));
            T total = 0;
            for (Index j = 0; j < nk; ++j) {
                const T e = allowed(i, j) != T(0) ? std::exp(s(i, j) - mx) : T(0);
                s(i, j) = e;
                total += e;
            }
            s.row(i) /= total;
        }
        out.middleCols(h * dv, dv).noalias() = s * v.value().middleCols(h * dv, dv);
        probs[static_cast<std::size_t>(h)] = std::move(s);
    }

    return q.graph().make(std::move(out), {q, k, v}, [probs = std::move(probs), heads, dh, dv, scl](Node<T>& self) {
        Node<T>& nq = *self.inputs[0];
        Node<T>& nk_ = *self.inputs[1];
        Node<T>& nv = *self.inputs[2];
        for (int h = 0; h < heads; ++h) {
            const Matrix<T>& p = probs[static_cast<std::size_t>(h)];
            const auto go = self.grad.middleCols(h * dv, dv);
            if (nv.requires_grad) nv.grad_buffer().middleCols(h * dv, dv).noalias() += p.transpose() * go;
            if (!nq.requires_grad && !nk_.requires_grad) continue;
            Matrix<T> dp = go * nv.value.middleCols(h * dv, dv).transpose();
            const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
            Matrix<T> ds = (p.array() * (dp.colwise() - rs).array()).matrix() * scl;
            if (nq.requires_grad)
                nq.grad_buffer().middleCols(h * dh, dh).noalias() += ds * nk_.value.middleCols(h * dh, dh);
            if (nk_.requires_grad)
                nk_.grad_buffer().middleCols(h * dh, dh).noalias() += ds.transpose() * nq.value.middleCols(h * dh, dh);
        }
    });
}

// ---- convolution support --------------------------------------------------

template <typename T>
Var<T> im2col3x3(const Var<T>& x, Index h, Index w) {
    require(x.rows() == h * w, "im2col3x3: row count does not match grid");
    const Index c = x.cols();
    Matrix<T> out = Matrix<T>::Zero(h * w, 9 * c);
    for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx)
            for (Index t = 0; t < 9; ++t) {
                const Index sy = y + t / 3 - 1;
                const Index sx = xx + t % 3 - 1;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                out.block(y * w + xx, t * c, 1, c) = x.value().row(sy * w + sx);
            }
    return x.graph().make(std::move(out), {x}, [h, w, c](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        if (!nx.requires_grad) return;
        auto& g = nx.grad_buffer();
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx)
                for (Index t = 0; t < 9; ++t) {
                    const Index sy = y + t / 3 - 1;
                    const Index sx = xx + t % 3 - 1;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                    g.row(sy * w + sx) += self.grad.block(y * w + xx, t * c, 1, c);
                }
    });
}

// ---- similarity and reductions --------------------------------------------

template <typename T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b, T eps) {
    require(b.rows() == 1 && b.cols() == a.cols(), "cosine_rows: shape mismatch");
    const Index n = a.rows();
    const T nb = b.value().norm();
    Eigen::Matrix<T, Eigen::Dynamic, 1> na(n), dots(n), den(n);
    Matrix<T> out(n, 1);
    std::vector<bool> clamped(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        na(i) = a.value().row(i).norm();
        dots(i) = a.value().row(i).dot(b.value().row(0));
        den(i) = std::max(na(i) * nb, eps);
        const T s = dots(i) / den(i);
        clamped[static_cast<std::size_t>(i)] = s > T(1) || s < T(-1);
        out(i, 0) = std::clamp(s, T(-1), T(1));
    }
    a.graph().record_pattern(clamped);
    return a.graph().make(std::move(out), {a, b}, [na = std::move(na), nb, dots = std::move(dots), den = std::move(den)](Node<T>& self) {
        Node<T>& nA = *self.inputs[0];
        Node<T>& nB = *self.inputs[1];
        const auto& av = nA.value;
        const auto bv = nB.value.row(0);
        const T tiny = std::numeric_limits<T>::min();
        Eigen::Matrix<T, 1, Eigen::Dynamic> db = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(bv.cols());
        for (Index i = 0; i < av.rows(); ++i) {
            const T g = self.grad(i, 0);
            if (g == T(0)) continue;
            const T inv = T(1) / den(i);
            // Below the guard the denominator is constant.
            const T r = na(i) * nb >= den(i) ? dots(i) * inv * inv : T(0);
            if (nA.requires_grad)
                nA.grad_buffer().row(i) += g * (bv * inv - r * nb * av.row(i) / std::max(na(i), tiny));
            if (nB.requires_grad) db += g * (av.row(i) * inv - r * na(i) * bv / std::max(nb, tiny));
        }
        if (nB.requires_grad) nB.grad_buffer().row(0) += db;
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    Matrix<T> out(1, 1);
    out(0, 0) = a.value().sum();
    return a.graph().make(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        if (na.requires_grad) na.grad_buffer().array() += self.grad(0, 0);
    });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
    Matrix<T> out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return a.graph().make(std::move(out), {a}, [](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        if (na.requires_grad) na.grad_buffer() += (T(2) * self.grad(0, 0)) * na.value;
    });
}

RowMap bilinear_map(Index in_h, Index in_w, Index out_h, Index out_w) {
    require(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "bilinear_map: empty grid");
    auto axis = [](Index in, Index out, Index dst, Index& i0, Index& i1, double& frac) {
        double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        src = std::max(src, 0.0);
        i0 = std::min(static_cast<Index>(std::floor(src)), in - 1);
        i1 = std::min(i0 + 1, in - 1);
        frac = src - static_cast<double>(i0);
    };
    RowMap map;
    map.in_rows = in_h * in_w;
    map.taps.resize(static_cast<std::size_t>(out_h * out_w));
    for (Index y = 0; y < out_h; ++y) {
        Index y0, y1;
        double fy;
        axis(in_h, out_h, y, y0, y1, fy);
        for (Index x = 0; x < out_w; ++x) {
            Index x0, x1;
            double fx;
            axis(in_w, out_w, x, x0, x1, fx);
            auto& taps = map.taps[static_cast<std::size_t>(y * out_w + x)];
            const std::pair<Index, double> corners[4] = {{y0 * in_w + x0, (1 - fy) * (1 - fx)},
                                                          {y0 * in_w + x1, (1 - fy) * fx},
                                                          {y1 * in_w + x0, fy * (1 - fx)},
                                                          {y1 * in_w + x1, fy * fx}};
            for (const auto& [src, wgt] : corners) {
                if (wgt == 0.0) continue;
                auto it = std::find_if(taps.begin(), taps.end(), [src = src](const RowMap::Tap& t) { return t.src == src; });
                if (it != taps.end())
                    it->weight += wgt;
                else
                    taps.push_back({src, wgt});
            }
        }
    }
    return map;
}

#define QCOUNT_INSTANTIATE_OPS(T)                                                                 \
    template class Graph<T>;                                                                      \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                         \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>*);                          \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
    template Var<T> add(const Var<T>&, const Var<T>&);                                            \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                            \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
    template Var<T> scale(const Var<T>&, T);                                                      \
    template Var<T> add_row(const Var<T>&, const Var<T>&);                                        \
    template Var<T> mul_col(const Var<T>&, const Var<T>&);                                        \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                      \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                                      \
    template Var<T> slice_rows(const Var<T>&, Index, Index);                                      \
    template Var<T> slice_cols(const Var<T>&, Index, Index);                                      \
    template Var<T> gather_rows(const Var<T>&, const std::vector<Index>&);                        \
    template Var<T> remap_rows(const Var<T>&, const RowMap&);                                     \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                   \
    template Var<T> gelu(const Var<T>&);                                                          \
    template Var<T> relu(const Var<T>&);                                                          \
    template Var<T> sigmoid(const Var<T>&);                                                       \
    template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, int, const AttentionMask&); \
    template Var<T> im2col3x3(const Var<T>&, Index, Index);                                       \
    template Var<T> cosine_rows(const Var<T>&, const Var<T>&, T);                                 \
    template Var<T> sum_all(const Var<T>&);                                                       \
    template Var<T> sum_squares(const Var<T>&);

QCOUNT_INSTANTIATE_OPS(float)
QCOUNT_INSTANTIATE_OPS(double)

}  // namespace qcount::ag
