#include "qcount/prompting.hpp"

#include <stdexcept>
#include <string>

namespace qcount {

template <typename T>
PromptBank<T> PromptBank<T>::create(ParameterStore<T>& store, int depth, int length, int width, std::mt19937_64& rng) {
    PromptBank bank;
    for (int j = 0; j < depth; ++j)
        bank.layers.push_back(
            &store.add("prompts.layer" + std::to_string(j), "prompts", init::normal<T>(length, width, 0.02, rng)));
    return bank;
}

template <typename T>
std::vector<Var<T>> PromptBank<T>::bind(ag::Graph<T>& g) const {
    std::vector<Var<T>> out;
    out.reserve(layers.size());
    for (const auto* p : layers) out.push_back(g.param(*p));
    return out;
}

template <typename T>
CouplingStack<T> CouplingStack<T>::create(ParameterStore<T>& store, int depth, int text_width, int vision_width,
                                          std::mt19937_64& rng) {
    CouplingStack stack;
    for (int j = 0; j < depth; ++j) {
        const std::string name = "coupling.layer" + std::to_string(j);
        Linear<T> map;
        map.weight = &store.add(name + ".weight", "coupling", init::normal<T>(text_width, vision_width, 0.02, rng));
        map.bias = &store.add(name + ".bias", "coupling", init::zeros<T>(1, vision_width));
        stack.maps.push_back(map);
    }
    return stack;
}

template <typename T>
CategoryProjector<T> CategoryProjector<T>::create(ParameterStore<T>& store, int width) {
    CategoryProjector proj;
    proj.map.weight = &store.add("category_projection.weight", "category_projection", init::eye<T>(width, width));
    proj.map.bias = &store.add("category_projection.bias", "category_projection", init::zeros<T>(1, width));
    return proj;
}

template <typename T>
std::vector<Var<T>> condition_prompts(const std::vector<Var<T>>& prompts, const Var<T>& epsilon) {
    std::vector<Var<T>> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) {
        if (epsilon.rows() != 1 || epsilon.cols() != p.cols())
            throw std::invalid_argument("condition_prompts: quantity embedding width mismatch");
        out.push_back(ag::add_row(p, epsilon));
    }
    return out;
}

template <typename T>
std::vector<Var<T>> couple_prompts(ag::Graph<T>& g, const std::vector<Var<T>>& conditioned,
                                   const CouplingStack<T>& stack) {
    if (conditioned.size() != stack.maps.size())
        throw std::invalid_argument("couple_prompts: expected " + std::to_string(stack.maps.size()) +
                                    " prompt grids, got " + std::to_string(conditioned.size()));
    std::vector<Var<T>> out;
    out.reserve(conditioned.size());
    for (std::size_t j = 0; j < conditioned.size(); ++j) out.push_back(stack.maps[j](g, conditioned[j]));
    return out;
}

template <typename T>
Var<T> category_project(ag::Graph<T>& g, const Var<T>& text_full, const CategoryProjector<T>& proj) {
    return proj.map(g, text_full);
}

#define QCOUNT_INSTANTIATE_PROMPTING(T)                                                                      \
    template struct PromptBank<T>;                                                                          \
    template struct CouplingStack<T>;                                                                       \
    template struct CategoryProjector<T>;                                                                   \
    template std::vector<Var<T>> condition_prompts(const std::vector<Var<T>>&, const Var<T>&);              \
    template std::vector<Var<T>> couple_prompts(ag::Graph<T>&, const std::vector<Var<T>>&, const CouplingStack<T>&); \
    template Var<T> category_project(ag::Graph<T>&, const Var<T>&, const CategoryProjector<T>&);

QCOUNT_INSTANTIATE_PROMPTING(float)
QCOUNT_INSTANTIATE_PROMPTING(double)

}  // namespace qcount
