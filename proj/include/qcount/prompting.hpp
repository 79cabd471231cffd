#pragma once

#include "qcount/backbone.hpp"
#include "qcount/params.hpp"

#include <optional>
#include <vector>

namespace qcount {

/// Learnable text prompts, one m x d_t grid per prompted layer.
template <typename T>
struct PromptBank {
    std::vector<Parameter<T>*> layers;

    static PromptBank create(ParameterStore<T>& store, int depth, int length, int width, std::mt19937_64& rng);
    std::vector<Var<T>> bind(ag::Graph<T>& g) const;
};

/// Per-layer linear maps d_t -> d_v turning text prompts into vision prompts.
template <typename T>
struct CouplingStack {
    std::vector<Linear<T>> maps;

    static CouplingStack create(ParameterStore<T>& store, int depth, int text_width, int vision_width,
                                std::mt19937_64& rng);
};

/// Square affine map in text width, initialised to the identity.
template <typename T>
struct CategoryProjector {
    Linear<T> map;

    static CategoryProjector create(ParameterStore<T>& store, int width);
};

template <typename T>
struct EncodedPair {
    std::optional<Var<T>> text_full;  // absent on the inference path
    Var<T> text_cat;
    DenseVisual<T> dense;
    int hypothesis_index = 0;
};

/// Adds epsilon_q to every row of every prompt grid.
template <typename T>
std::vector<Var<T>> condition_prompts(const std::vector<Var<T>>& prompts, const Var<T>& epsilon);

/// Row-wise application of the per-layer coupling maps.
template <typename T>
std::vector<Var<T>> couple_prompts(ag::Graph<T>& g, const std::vector<Var<T>>& conditioned,
                                   const CouplingStack<T>& stack);

template <typename T>
Var<T> category_project(ag::Graph<T>& g, const Var<T>& text_full, const CategoryProjector<T>& proj);

}  // namespace qcount
