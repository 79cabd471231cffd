#include "qcount/params.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace qcount {

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, std::string group, Matrix<T> value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->group = std::move(group);
    p->value = std::move(value);
    params_.push_back(std::move(p));
    return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::groups() const {
    std::vector<std::string> out;
    for (const auto& p : params_)
        if (std::find(out.begin(), out.end(), p->group) == out.end()) out.push_back(p->group);
    return out;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

template <typename T>
void ParameterStore<T>::set_group_trainable(const std::string& group, bool trainable) {
    for (auto& p : params_)
        if (p->group == group) p->trainable = trainable;
}

template <typename T>
std::uint64_t ParameterStore<T>::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&h](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : params_) {
        mix_bytes(p->name.data(), p->name.size());
        mix_bytes(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(T));
    }
    return h;
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, const std::string& group, Index in,
                            Index out, std::mt19937_64& rng, bool with_bias) {
    Linear l;
    l.weight = &store.add(name + ".weight", group, init::fan_in_uniform<T>(in, out, rng));
    if (with_bias) l.bias = &store.add(name + ".bias", group, init::zeros<T>(1, out));
    return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& name, const std::string& group,
                                  Index width) {
    LayerNorm ln;
    ln.gamma = &store.add(name + ".gamma", group, init::ones<T>(1, width));
    ln.beta = &store.add(name + ".beta", group, init::zeros<T>(1, width));
    return ln;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;

}  // namespace qcount
