#include "qcount/decoder.hpp"

#include <stdexcept>
#include <string>

namespace qcount {

std::vector<int> window_groups(int h, int w, int window, int shift) {
    const int cols = (w + shift + window - 1) / window + 1;
    std::vector<int> groups(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            groups[static_cast<std::size_t>(y * w + x)] = ((y + shift) / window) * cols + (x + shift) / window;
    return groups;
}

template <typename T>
Var<T> conv3x3(ag::Graph<T>& g, const Var<T>& x, const Linear<T>& conv, int h, int w) {
    return conv(g, ag::im2col3x3(x, h, w));
}

template <typename T>
SwinBlock<T> SwinBlock<T>::create(ParameterStore<T>& store, const std::string& name, const DecoderConfig& cfg,
                                  int vision_width, int shift, std::mt19937_64& rng) {
    const std::string group = "decoder";
    const int d = cfg.width;
    SwinBlock b;
    b.heads = cfg.num_heads;
    b.window = cfg.window;
    b.shift = shift;
    b.guided = cfg.guidance;
    b.ln1 = LayerNorm<T>::create(store, name + ".ln1", group, d);
    const int qk_in = cfg.guidance ? 2 * d : d;
    if (cfg.guidance) b.guide = Linear<T>::create(store, name + ".guide", group, vision_width, d, rng);
    b.query = Linear<T>::create(store, name + ".query", group, qk_in, d, rng);
    b.key = Linear<T>::create(store, name + ".key", group, qk_in, d, rng);
    b.value = Linear<T>::create(store, name + ".value", group, d, d, rng);
    b.proj = Linear<T>::create(store, name + ".proj", group, d, d, rng);
    b.ln2 = LayerNorm<T>::create(store, name + ".ln2", group, d);
    b.fc1 = Linear<T>::create(store, name + ".fc1", group, d, cfg.mlp_ratio * d, rng);
    b.fc2 = Linear<T>::create(store, name + ".fc2", group, cfg.mlp_ratio * d, d, rng);
    return b;
}

template <typename T>
Var<T> SwinBlock<T>::operator()(ag::Graph<T>& g, const Var<T>& x, const Var<T>& visual, int h, int w) const {
    const Var<T> normed = ln1(g, x);
    const Var<T> qk_in = guided ? ag::concat_cols<T>({normed, guide(g, visual)}) : normed;
    const auto mask = ag::AttentionMask::from_groups(window_groups(h, w, window, shift));
    const Var<T> attn = ag::attention(query(g, qk_in), key(g, qk_in), value(g, normed), heads, mask);
    const Var<T> x1 = x + proj(g, attn);
    return x1 + fc2(g, ag::gelu(fc1(g, ln2(g, x1))));
}

template <typename T>
CostAggregationDecoder<T>::CostAggregationDecoder(const DecoderConfig& cfg, int text_width, int vision_width, int grid,
                                                  ParameterStore<T>& store, std::mt19937_64& rng, double head_bias,
                                                  double head_weight_scale)
    : cfg_(cfg), grid_(grid) {
    const std::string group = "decoder";
    text_bridge_.weight = &store.add("decoder.text_bridge.weight", group, init::eye<T>(text_width, vision_width));
    text_bridge_.bias = &store.add("decoder.text_bridge.bias", group, init::zeros<T>(1, vision_width));
    cost_embed_ = Linear<T>::create(store, "decoder.cost_embed", group, 9, cfg.width, rng);
    const int shift = grid > cfg.window ? cfg.window / 2 : 0;
    blocks_.push_back(SwinBlock<T>::create(store, "decoder.swin0", cfg, vision_width, 0, rng));
    blocks_.push_back(SwinBlock<T>::create(store, "decoder.swin1", cfg, vision_width, shift, rng));
    for (int r = 0; r < 2; ++r) {
        const int c_in = cfg.stage_width(r);
        const int c_out = cfg.stage_width(r + 1);
        skip_proj_.push_back(
            Linear<T>::create(store, "decoder.skip_proj" + std::to_string(r), group, vision_width, c_in, rng));
        stage_conv_.push_back(
            Linear<T>::create(store, "decoder.stage_conv" + std::to_string(r), group, 9 * c_in, c_out, rng));
    }
    head_ = Linear<T>::create(store, "head", "head", cfg.stage_width(2), 1, rng);
    head_.weight->value *= static_cast<T>(head_weight_scale);
    head_.bias->value.setConstant(static_cast<T>(head_bias));
}

template <typename T>
Var<T> CostAggregationDecoder<T>::project_text(ag::Graph<T>& g, const Var<T>& text) const {
    return text_bridge_(g, text);
}

template <typename T>
Var<T> CostAggregationDecoder<T>::similarity_map(ag::Graph<T>& g, const Var<T>& visual, const Var<T>& text_joint) const {
    (void)g;
    return ag::cosine_rows(visual, text_joint);
}

template <typename T>
Var<T> CostAggregationDecoder<T>::embed_cost(ag::Graph<T>& g, const Var<T>& similarity) const {
    return conv3x3(g, similarity, cost_embed_, grid_, grid_);
}

template <typename T>
Var<T> CostAggregationDecoder<T>::aggregate(ag::Graph<T>& g, const Var<T>& cost, const Var<T>& visual) const {
    if (cost.rows() != visual.rows()) throw std::invalid_argument("aggregate: cost and visual grids differ");
    Var<T> x = cost;
    for (const auto& block : blocks_) x = block(g, x, visual, grid_, grid_);
    return x;
}

template <typename T>
Var<T> CostAggregationDecoder<T>::refine(ag::Graph<T>& g, int stage, const Var<T>& x) const {
    const int size = grid_ << (stage + 1);
    return ag::gelu(conv3x3(g, x, stage_conv_[static_cast<std::size_t>(stage)], size, size));
}

template <typename T>
Var<T> CostAggregationDecoder<T>::upsample_stage(ag::Graph<T>& g, int stage, const Var<T>& cost, const Var<T>& skip,
                                                 const Var<T>& similarity) const {
    if (stage < 0 || stage > 1) throw std::invalid_argument("upsample_stage: stage must be 0 or 1");
    const int in_size = grid_ << stage;
    const int out_size = in_size * 2;
    if (cost.rows() != static_cast<Index>(in_size) * in_size)
        throw std::invalid_argument("upsample_stage: cost features are not at stage resolution");
    const Var<T> up = ag::remap_rows(cost, ag::bilinear_map(in_size, in_size, out_size, out_size));

    // Projection commutes with bilinear resampling, so project at the
    // encoder resolution first.
    const auto to_out = ag::bilinear_map(grid_, grid_, out_size, out_size);
    const Var<T> skip_up = ag::remap_rows(skip_proj_[static_cast<std::size_t>(stage)](g, skip), to_out);
    const Var<T> gate = ag::sigmoid(ag::remap_rows(similarity, to_out));
    if (skip_up.rows() != up.rows() || gate.rows() != up.rows())
        throw std::logic_error("upsample_stage: resolution mismatch after resize");
    return refine(g, stage, up + ag::mul_col(skip_up, gate));
}

template <typename T>
Var<T> CostAggregationDecoder<T>::predict_density(ag::Graph<T>& g, const Var<T>& features) const {
    return ag::relu(head_(g, features));
}

template <typename T>
DecoderOutput<T> CostAggregationDecoder<T>::forward(ag::Graph<T>& g, const DenseVisual<T>& dense,
                                                    const Var<T>& text_cat) const {
    if (dense.stages.size() != 2) throw std::invalid_argument("decoder: expected two skip-stage feature grids");
    DecoderOutput<T> out;
    out.similarity = similarity_map(g, dense.patches, project_text(g, text_cat));
    Var<T> x = aggregate(g, embed_cost(g, out.similarity), dense.patches);
    for (int r = 0; r < 2; ++r) x = upsample_stage(g, r, x, dense.stages[static_cast<std::size_t>(r)], out.similarity);
    out.density = predict_density(g, x);
    out.count = count(out.density);
    return out;
}

template <typename T>
DensityMap to_density_map(const Var<T>& density, int size) {
    if (density.rows() != static_cast<Index>(size) * size || density.cols() != 1)
        throw std::invalid_argument("to_density_map: shape mismatch");
    DensityMap d(size, size);
    for (Index i = 0; i < density.rows(); ++i) d.values[static_cast<std::size_t>(i)] = static_cast<float>(density.value()(i, 0));
    return d;
}

#define QCOUNT_INSTANTIATE_DECODER(T)                                                        \
    template struct SwinBlock<T>;                                                            \
    template class CostAggregationDecoder<T>;                                                \
    template Var<T> conv3x3(ag::Graph<T>&, const Var<T>&, const Linear<T>&, int, int);       \
    template DensityMap to_density_map(const Var<T>&, int);

QCOUNT_INSTANTIATE_DECODER(float)
QCOUNT_INSTANTIATE_DECODER(double)

}  // namespace qcount
