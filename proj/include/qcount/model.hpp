#pragma once

#include "qcount/backbone.hpp"
#include "qcount/config.hpp"
#include "qcount/decoder.hpp"
#include "qcount/loss.hpp"
#include "qcount/prompting.hpp"
#include "qcount/quantity.hpp"
#include "qcount/tokenizer.hpp"

#include <atomic>
#include <optional>
#include <string>
#include <vector>

namespace qcount {

class ValidationError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Invocation counters used to verify which paths a forward touched.
struct CallCounters {
    std::atomic<std::size_t> embed_quantity{0};
    std::atomic<std::size_t> category_project{0};
    std::atomic<std::size_t> forward_hypothesis{0};
    std::atomic<std::size_t> forward_inference{0};

    void reset() {
        embed_quantity = 0;
        category_project = 0;
        forward_hypothesis = 0;
        forward_inference = 0;
    }
};

struct ObjectiveOptions {
    int K = 5;
    LossWeights weights;
    bool quantity_path = true;
    bool shared_vg = false;

    static ObjectiveOptions from(const TrainConfig& c) {
        return {c.K, {c.lambda_1, c.lambda_2, c.beta}, c.uses_quantity_path(), c.shared_vg};
    }
};

template <typename T>
struct ImageObjective {
    TotalLoss<T> loss;
    QuantityHypothesisSet hypotheses;
    std::vector<double> counts;  // n_hat_k
    std::vector<double> alpha;   // empty without the quantity path
};

/// The complete counting model: prompted dual encoder, quantity
/// conditioning, coupling, category projection and cost-aggregation decoder.
template <typename T>
class CountingModel {
  public:
    CountingModel(const ModelConfig& cfg, unsigned long long seed);
    CountingModel(const CountingModel&) = delete;
    CountingModel& operator=(const CountingModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const VocabTokenizer& tokenizer() const { return tokenizer_; }
    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }

    const TextEncoder<T>& text_encoder() const { return text_; }
    const VisionEncoder<T>& vision_encoder() const { return vision_; }
    const QuantityEmbedder<T>& quantity_embedder() const { return quantity_; }
    const PromptBank<T>& prompt_bank() const { return prompts_; }
    const CouplingStack<T>& coupling() const { return coupling_; }
    const CategoryProjector<T>& category_projector() const { return category_; }
    const CostAggregationDecoder<T>& decoder() const { return decoder_; }

    Var<T> embed_quantity(ag::Graph<T>& g, int q) const;
    Var<T> project_category(ag::Graph<T>& g, const Var<T>& text_full) const;

    /// Training path for one quantity hypothesis.
    EncodedPair<T> forward_hypothesis(ag::Graph<T>& g, const Image& image, const std::string& category, int quantity,
                                      int index) const;
    /// Category-only path: raw prompts, no quantity embedding, no W_cat.
    EncodedPair<T> forward_inference(ag::Graph<T>& g, const Image& image, const std::string& text) const;

    DecoderOutput<T> decode(ag::Graph<T>& g, const EncodedPair<T>& pair) const;

    /// Full training objective for one image.
    ImageObjective<T> objective(ag::Graph<T>& g, const Image& image, const DensityMap& target,
                                const std::string& category, int n_gt, const ObjectiveOptions& opt) const;

    /// Inference-path prediction without gradient recording.
    DensityMap predict(const Image& image, const std::string& text) const;

    mutable CallCounters counters;

  private:
    TokenSequence inference_tokens(const std::string& text) const;

    ModelConfig cfg_;
    VocabTokenizer tokenizer_;
    ParameterStore<T> store_;
    std::mt19937_64 init_rng_;
    TextEncoder<T> text_;
    VisionEncoder<T> vision_;
    QuantityEmbedder<T> quantity_;
    PromptBank<T> prompts_;
    CouplingStack<T> coupling_;
    CategoryProjector<T> category_;
    CostAggregationDecoder<T> decoder_;
};

}  // namespace qcount
