#pragma once

#include "qcount/backbone.hpp"
#include "qcount/config.hpp"
#include "qcount/image.hpp"
#include "qcount/params.hpp"

#include <vector>

namespace qcount {

/// Window ids for (shifted) window attention on an h x w grid. Windows at
/// the border are truncated instead of padded.
std::vector<int> window_groups(int h, int w, int window, int shift);

/// Windowed attention block whose queries and keys may be guided by
/// projected visual features; values come from the cost features only.
template <typename T>
struct SwinBlock {
    LayerNorm<T> ln1, ln2;
    Linear<T> guide, query, key, value, proj, fc1, fc2;
    int heads = 1;
    int window = 1;
    int shift = 0;
    bool guided = true;

    static SwinBlock create(ParameterStore<T>& store, const std::string& name, const DecoderConfig& cfg,
                            int vision_width, int shift, std::mt19937_64& rng);
    Var<T> operator()(ag::Graph<T>& g, const Var<T>& x, const Var<T>& visual, int h, int w) const;
};

template <typename T>
struct DecoderOutput {
    Var<T> similarity;  // [h*w, 1]
    Var<T> density;     // [4h*4w, 1]
    Var<T> count;       // [1, 1]
};

/// Similarity-map decoder: cosine cost map, conv embedding, windowed
/// aggregation, two similarity-gated 2x upsampling stages, density head.
template <typename T>
class CostAggregationDecoder {
  public:
    CostAggregationDecoder(const DecoderConfig& cfg, int text_width, int vision_width, int grid,
                           ParameterStore<T>& store, std::mt19937_64& rng, double head_bias,
                           double head_weight_scale = 1.0);

    /// Maps a text embedding into the visual width (identity-like init).
    Var<T> project_text(ag::Graph<T>& g, const Var<T>& text) const;
    /// Cosine between each visual row and the projected text row.
    Var<T> similarity_map(ag::Graph<T>& g, const Var<T>& visual, const Var<T>& text_joint) const;
    Var<T> embed_cost(ag::Graph<T>& g, const Var<T>& similarity) const;
    Var<T> aggregate(ag::Graph<T>& g, const Var<T>& cost, const Var<T>& visual) const;
    /// One 2x stage; `cost` is at grid * 2^stage resolution.
    Var<T> upsample_stage(ag::Graph<T>& g, int stage, const Var<T>& cost, const Var<T>& skip,
                          const Var<T>& similarity) const;
    /// The convolution applied at the end of an upsampling stage.
    Var<T> refine(ag::Graph<T>& g, int stage, const Var<T>& x) const;
    Var<T> predict_density(ag::Graph<T>& g, const Var<T>& features) const;

    DecoderOutput<T> forward(ag::Graph<T>& g, const DenseVisual<T>& dense, const Var<T>& text_cat) const;

    int grid() const { return grid_; }
    int output_size() const { return 4 * grid_; }
    const DecoderConfig& config() const { return cfg_; }

  private:
    DecoderConfig cfg_;
    int grid_;
    Linear<T> text_bridge_;
    Linear<T> cost_embed_;
    std::vector<SwinBlock<T>> blocks_;
    std::vector<Linear<T>> skip_proj_;
    std::vector<Linear<T>> stage_conv_;
    Linear<T> head_;
};

/// Conv 3x3 with zero padding: x [h*w, c_in], weight [9*c_in, c_out].
template <typename T>
Var<T> conv3x3(ag::Graph<T>& g, const Var<T>& x, const Linear<T>& conv, int h, int w);

/// Predicted count: exact sum of all density cells, as a [1,1] value.
template <typename T>
Var<T> count(const Var<T>& density) {
    return ag::sum_all(density);
}

template <typename T>
DensityMap to_density_map(const Var<T>& density, int size);

}  // namespace qcount
