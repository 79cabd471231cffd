#include "qcount/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace qcount {

namespace {

template <typename T>
void check_prompts(const std::vector<Var<T>>& prompts, int max_layers, Index width, const char* who) {
    if (static_cast<int>(prompts.size()) > max_layers)
        throw std::invalid_argument(std::string(who) + ": more prompt grids than layers");
    if (prompts.empty()) return;
    const Index m = prompts.front().rows();
    for (const auto& p : prompts)
        if (p.rows() != m || p.cols() != width || m < 1)
            throw std::invalid_argument(std::string(who) + ": prompt grid shape mismatch");
}

}  // namespace

template <typename T>
TransformerBlock<T> TransformerBlock<T>::create(ParameterStore<T>& store, const std::string& name,
                                                const std::string& group, int width, int heads, int mlp_ratio,
                                                std::mt19937_64& rng) {
    TransformerBlock b;
    b.ln1 = LayerNorm<T>::create(store, name + ".ln1", group, width);
    b.qkv = Linear<T>::create(store, name + ".qkv", group, width, 3 * width, rng);
    b.proj = Linear<T>::create(store, name + ".proj", group, width, width, rng);
    b.ln2 = LayerNorm<T>::create(store, name + ".ln2", group, width);
    b.fc1 = Linear<T>::create(store, name + ".fc1", group, width, mlp_ratio * width, rng);
    b.fc2 = Linear<T>::create(store, name + ".fc2", group, mlp_ratio * width, width, rng);
    b.heads = heads;
    return b;
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(ag::Graph<T>& g, const Var<T>& x, const ag::AttentionMask& mask) const {
    const Index d = x.cols();
    const Var<T> packed = qkv(g, ln1(g, x));
    const Var<T> attn = ag::attention(ag::slice_cols(packed, 0, d), ag::slice_cols(packed, d, d),
                                      ag::slice_cols(packed, 2 * d, d), heads, mask);
    const Var<T> x1 = x + proj(g, attn);
    return x1 + fc2(g, ag::gelu(fc1(g, ln2(g, x1))));
}

// ---- text -----------------------------------------------------------------

template <typename T>
TextEncoder<T>::TextEncoder(const TextEncoderConfig& cfg, int vocab_size, ParameterStore<T>& store,
                            std::mt19937_64& rng)
    : cfg_(cfg) {
    const std::string group = "backbone_text";
    token_embedding_ = &store.add("text.token_embedding", group, init::normal<T>(vocab_size, cfg.width, 0.02, rng));
    position_embedding_ =
        &store.add("text.position_embedding", group, init::normal<T>(cfg.max_seq_len, cfg.width, 0.01, rng));
    for (int i = 0; i < cfg.num_layers; ++i)
        blocks_.push_back(TransformerBlock<T>::create(store, "text.block" + std::to_string(i), group, cfg.width,
                                                      cfg.num_heads, cfg.mlp_ratio, rng));
    final_norm_ = LayerNorm<T>::create(store, "text.final_norm", group, cfg.width);
}

template <typename T>
Var<T> TextEncoder<T>::encode(ag::Graph<T>& g, const TokenSequence& tokens, const std::vector<Var<T>>& prompts) const {
    check_prompts(prompts, cfg_.num_layers, cfg_.width, "encode_text");
    const Index seq = static_cast<Index>(tokens.ids.size());
    if (seq != cfg_.max_seq_len || tokens.eot_index < 0 || tokens.eot_index >= seq)
        throw std::invalid_argument("encode_text: token sequence does not match max_seq_len");

    std::vector<Index> ids(tokens.ids.begin(), tokens.ids.end());
    Var<T> words = ag::gather_rows(g.param(*token_embedding_), ids);
    words = words + ag::slice_rows(g.param(*position_embedding_), 0, seq);

    const Index m = prompts.empty() ? 0 : prompts.front().rows();
    Var<T> x = prompts.empty() ? words : ag::concat_rows<T>({prompts.front(), words});
    const auto mask = ag::AttentionMask::causal_mask();
    for (int i = 0; i < cfg_.num_layers; ++i) {
        if (i > 0 && i < static_cast<int>(prompts.size()))
            x = ag::concat_rows<T>({prompts[static_cast<std::size_t>(i)], ag::slice_rows(x, m, seq)});
        x = blocks_[static_cast<std::size_t>(i)](g, x, mask);
    }
    return final_norm_(g, ag::slice_rows(x, m + tokens.eot_index, 1));
}

// ---- vision ---------------------------------------------------------------

template <typename T>
VisionEncoder<T>::VisionEncoder(const VisionEncoderConfig& cfg, ParameterStore<T>& store, std::mt19937_64& rng)
    : cfg_(cfg) {
    const std::string group = "backbone_vision";
    const int patch_dim = cfg.patch_size * cfg.patch_size * 3;
    const int tokens = cfg.grid() * cfg.grid() + 1;
    patch_embed_ = Linear<T>::create(store, "vision.patch_embed", group, patch_dim, cfg.width, rng, false);
    class_token_ = &store.add("vision.class_token", group, init::normal<T>(1, cfg.width, 0.02, rng));
    position_embedding_ =
        &store.add("vision.position_embedding", group, init::normal<T>(tokens, cfg.width, 0.02, rng));
    pre_norm_ = LayerNorm<T>::create(store, "vision.pre_norm", group, cfg.width);
    for (int i = 0; i < cfg.num_layers; ++i)
        blocks_.push_back(TransformerBlock<T>::create(store, "vision.block" + std::to_string(i), group, cfg.width,
                                                      cfg.num_heads, cfg.mlp_ratio, rng));
    post_norm_ = LayerNorm<T>::create(store, "vision.post_norm", group, cfg.width);
}

template <typename T>
Matrix<T> VisionEncoder<T>::patchify(const Image& image) const {
    const int p = cfg_.patch_size;
    const int gh = image.height / p;
    const int gw = image.width / p;
    Matrix<T> out(gh * gw, p * p * 3);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            Index col = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int c = 0; c < 3; ++c) out(gy * gw + gx, col++) = static_cast<T>(image.at(gy * p + py, gx * p + px, c));
        }
    return out;
}

template <typename T>
DenseVisual<T> VisionEncoder<T>::encode(ag::Graph<T>& g, const Image& image, const std::vector<Var<T>>& prompts) const {
    check_prompts(prompts, cfg_.num_layers, cfg_.width, "encode_vision");
    if (image.height != cfg_.image_size || image.width != cfg_.image_size)
        throw std::invalid_argument("encode_vision: image is " + std::to_string(image.height) + "x" +
                                    std::to_string(image.width) + ", model expects " +
                                    std::to_string(cfg_.image_size));
    for (float v : image.data)
        if (!std::isfinite(v)) throw std::invalid_argument("encode_vision: non-finite pixel value");

    const Index hw = static_cast<Index>(cfg_.grid()) * cfg_.grid();
    const Var<T> embedded = patch_embed_(g, g.constant(patchify(image)));
    Var<T> x = ag::concat_rows<T>({g.param(*class_token_), embedded}) + g.param(*position_embedding_);
    x = pre_norm_(g, x);
    if (!prompts.empty()) x = ag::concat_rows<T>({x, prompts.front()});

    DenseVisual<T> out;
    out.grid_h = out.grid_w = cfg_.grid();
    const ag::AttentionMask mask;
    for (int i = 0; i < cfg_.num_layers; ++i) {
        if (i > 0 && i < static_cast<int>(prompts.size()))
            x = ag::concat_rows<T>({ag::slice_rows(x, 0, hw + 1), prompts[static_cast<std::size_t>(i)]});
        x = blocks_[static_cast<std::size_t>(i)](g, x, mask);
        for (int s : cfg_.skip_stage_indices)
            if (s == i) out.stages.push_back(ag::slice_rows(x, 1, hw));
    }
    const Var<T> normed = post_norm_(g, ag::slice_rows(x, 0, hw + 1));
    out.global = ag::slice_rows(normed, 0, 1);
    out.patches = ag::slice_rows(normed, 1, hw);
    return out;
}

template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;
template class VisionEncoder<float>;
template class VisionEncoder<double>;

}  // namespace qcount
