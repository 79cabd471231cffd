#pragma once

#include "qcount/autograd.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace qcount {

using ag::Index;
using ag::Matrix;
using ag::Parameter;
using ag::Var;

/// Owns every trainable tensor of a model, in registration order.
template <typename T>
class ParameterStore {
  public:
    Parameter<T>& add(std::string name, std::string group, Matrix<T> value);

    Parameter<T>* find(const std::string& name);
    const Parameter<T>* find(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

    std::vector<std::string> groups() const;
    std::size_t scalar_count() const;
    void set_group_trainable(const std::string& group, bool trainable);

    /// FNV-1a over names and raw parameter bytes.
    std::uint64_t hash() const;

  private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

/// Initialisers drawing from a caller-owned engine so that model
/// construction is a pure function of the seed.
namespace init {

template <typename T>
Matrix<T> normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix<T> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
    return m;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a [fan_in, fan_out] weight.
template <typename T>
Matrix<T> fan_in_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<T> m(fan_in, fan_out);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
    return m;
}

template <typename T>
Matrix<T> zeros(Index rows, Index cols) {
    return Matrix<T>::Zero(rows, cols);
}

template <typename T>
Matrix<T> ones(Index rows, Index cols) {
    return Matrix<T>::Ones(rows, cols);
}

/// Truncated/padded identity for a [rows, cols] map.
template <typename T>
Matrix<T> eye(Index rows, Index cols) {
    return Matrix<T>::Identity(rows, cols);
}

}  // namespace init

/// Linear layer stored as weight [in, out] and bias [1, out].
template <typename T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    static Linear create(ParameterStore<T>& store, const std::string& name, const std::string& group, Index in,
                         Index out, std::mt19937_64& rng, bool with_bias = true);

    Var<T> operator()(ag::Graph<T>& g, const Var<T>& x) const {
        if (bias) return ag::linear(x, g.param(*weight), g.param(*bias));
        return ag::linear<T>(x, g.param(*weight), static_cast<const Var<T>*>(nullptr));
    }
};

template <typename T>
struct LayerNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;

    static LayerNorm create(ParameterStore<T>& store, const std::string& name, const std::string& group, Index width);

    Var<T> operator()(ag::Graph<T>& g, const Var<T>& x) const {
        return ag::layer_norm(x, g.param(*gamma), g.param(*beta));
    }
};

}  // namespace qcount
