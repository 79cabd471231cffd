#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; spatial maps are stored as
// (rows = h*w, cols = channels) with row index y*w + x.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace qcount::ag {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Graph;

template <typename T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    Graph<T>* graph = nullptr;
    bool requires_grad = false;

    Matrix<T>& grad_buffer() {
        if (grad.size() == 0) grad = Matrix<T>::Zero(value.rows(), value.cols());
        return grad;
    }
};

/// Handle to a node in a computation graph.
template <typename T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Matrix<T>& value() const { return node_->value; }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    T item() const { return node_->value(0, 0); }
    bool requires_grad() const { return node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }
    Graph<T>& graph() const { return *node_->graph; }

    /// Gradient accumulated by the last backward pass (empty if none reached).
    const Matrix<T>& grad() const { return node_->grad; }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

/// A trainable tensor owned by a ParameterStore. Modules keep raw pointers
/// into the store, so addresses must stay stable.
template <typename T>
struct Parameter {
    std::string name;
    std::string group;
    Matrix<T> value;
    bool trainable = true;
};

/// Per-forward computation context. Binds parameters as leaves, records
/// the tape, and collects ReLU/clamp activation patterns so gradient checks
/// can detect perturbations that straddle a kink.
template <typename T>
class Graph {
  public:
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return record_; }

    Var<T> constant(Matrix<T> value);
    Var<T> variable(Matrix<T> value);

    /// Leaf for a parameter; one leaf per parameter per graph so gradients
    /// from repeated uses accumulate.
    Var<T> param(const Parameter<T>& p);

    /// Gradient of a bound parameter, or nullptr if it was never bound or
    /// received no gradient.
    const Matrix<T>* param_grad(const Parameter<T>& p) const;
    bool was_bound(const Parameter<T>& p) const { return bound_.count(&p) != 0; }

    Var<T> make(Matrix<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
    void backward(const Var<T>& root);

    void record_pattern(const std::vector<bool>& active);
    std::uint64_t pattern_signature() const { return pattern_hash_; }

  private:
    bool record_;
    std::unordered_map<const Parameter<T>*, std::shared_ptr<Node<T>>> bound_;
    std::uint64_t pattern_hash_ = 1469598103934665603ull;
};

// ---- operations -----------------------------------------------------------

/// Row membership for masked attention.
struct AttentionMask {
    enum class Kind { none, causal, groups };
    Kind kind = Kind::none;
    std::vector<int> group;  // per token, used when kind == groups

    static AttentionMask causal_mask() { return {Kind::causal, {}}; }
    static AttentionMask from_groups(std::vector<int> g) { return {Kind::groups, std::move(g)}; }
    bool allowed(Index i, Index j) const {
        switch (kind) {
            case Kind::causal: return j <= i;
            case Kind::groups: return group[static_cast<std::size_t>(i)] == group[static_cast<std::size_t>(j)];
            default: return true;
        }
    }
};

/// Sparse linear map between row sets: out[r] = sum_k weight * in[src].
struct RowMap {
    struct Tap {
        Index src;
        double weight;
    };
    Index in_rows = 0;
    std::vector<std::vector<Tap>> taps;  // one entry per output row
};

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias);
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
/// a[n,c] + row[1,c] broadcast over rows.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
/// a[n,c] * col[n,1] broadcast over columns.
template <typename T> Var<T> mul_col(const Var<T>& a, const Var<T>& col);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(const Var<T>& a, Index start, Index count);
template <typename T> Var<T> slice_cols(const Var<T>& a, Index start, Index count);
template <typename T> Var<T> gather_rows(const Var<T>& table, const std::vector<Index>& ids);
template <typename T> Var<T> remap_rows(const Var<T>& a, const RowMap& map);
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
/// Multi-head scaled dot-product attention with heads split along columns.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const AttentionMask& mask);
/// 3x3 neighbourhood unfolding with zero padding: [h*w, c] -> [h*w, 9c].
template <typename T> Var<T> im2col3x3(const Var<T>& x, Index h, Index w);
/// Cosine between every row of a[n,d] and b[1,d], norm product floored at
/// eps, result clamped to [-1, 1]. Returns [n,1].
template <typename T> Var<T> cosine_rows(const Var<T>& a, const Var<T>& b, T eps = T(1e-8));
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);

// Operator sugar.
template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }

/// Bilinear resampling map with half-pixel centres (no corner alignment).
RowMap bilinear_map(Index in_h, Index in_w, Index out_h, Index out_w);

}  // namespace qcount::ag
