#pragma once

#include "qcount/config.hpp"
#include "qcount/image.hpp"
#include "qcount/params.hpp"
#include "qcount/tokenizer.hpp"

#include <vector>

namespace qcount {

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    Linear<T> qkv, proj, fc1, fc2;
    int heads = 1;

    static TransformerBlock create(ParameterStore<T>& store, const std::string& name, const std::string& group,
                                   int width, int heads, int mlp_ratio, std::mt19937_64& rng);
    Var<T> operator()(ag::Graph<T>& g, const Var<T>& x, const ag::AttentionMask& mask) const;
};

/// Dense encoder output. Prompt tokens are never part of `patches` or
/// `stages`.
template <typename T>
struct DenseVisual {
    Var<T> patches;              // V: [h*w, d_v]
    Var<T> global;               // v_g: [1, d_v]
    std::vector<Var<T>> stages;  // [h*w, d_v] at each skip stage
    int grid_h = 0;
    int grid_w = 0;
};

/// Causal text transformer with per-layer prompt slots in front of the
/// word tokens. The output is the final-normalised state at the
/// end-of-text position.
template <typename T>
class TextEncoder {
  public:
    TextEncoder(const TextEncoderConfig& cfg, int vocab_size, ParameterStore<T>& store, std::mt19937_64& rng);

    /// `prompts` holds one m x d_t grid per prompted layer, starting at
    /// layer 1; an empty list disables prompting.
    Var<T> encode(ag::Graph<T>& g, const TokenSequence& tokens, const std::vector<Var<T>>& prompts) const;

    const TextEncoderConfig& config() const { return cfg_; }

  private:
    TextEncoderConfig cfg_;
    Parameter<T>* token_embedding_;
    Parameter<T>* position_embedding_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> final_norm_;
};

/// ViT with a class token, learned positions, and per-layer prompt slots
/// appended after the patch tokens.
template <typename T>
class VisionEncoder {
  public:
    VisionEncoder(const VisionEncoderConfig& cfg, ParameterStore<T>& store, std::mt19937_64& rng);

    DenseVisual<T> encode(ag::Graph<T>& g, const Image& image, const std::vector<Var<T>>& prompts) const;

    const VisionEncoderConfig& config() const { return cfg_; }

  private:
    Matrix<T> patchify(const Image& image) const;

    VisionEncoderConfig cfg_;
    Linear<T> patch_embed_;
    Parameter<T>* class_token_;
    Parameter<T>* position_embedding_;
    LayerNorm<T> pre_norm_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> post_norm_;
};

}  // namespace qcount
