#include "qcount/model.hpp"

namespace qcount {

namespace {

ModelConfig validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

template <typename T>
CountingModel<T>::CountingModel(const ModelConfig& cfg, unsigned long long seed)
    : cfg_(validated(cfg)),
      tokenizer_(cfg.categories, cfg.max_count, cfg.text.max_seq_len),
      init_rng_(seed),
      text_(cfg.text, tokenizer_.vocab_size(), store_, init_rng_),
      vision_(cfg.vision, store_, init_rng_),
      quantity_(cfg.max_count, cfg.text.width, store_, init_rng_),
      prompts_(PromptBank<T>::create(store_, cfg.text.prompt_depth, cfg.text.prompt_length, cfg.text.width, init_rng_)),
      coupling_(CouplingStack<T>::create(store_, cfg.text.prompt_depth, cfg.text.width, cfg.vision.width, init_rng_)),
      category_(CategoryProjector<T>::create(store_, cfg.text.width)),
      decoder_(cfg.decoder, cfg.text.width, cfg.vision.width, cfg.vision.grid(), store_, init_rng_,
               cfg.head_bias_init, cfg.head_weight_scale) {
    if (cfg.freeze_backbone) {
        store_.set_group_trainable("backbone_text", false);
        store_.set_group_trainable("backbone_vision", false);
    }
}

template <typename T>
Var<T> CountingModel<T>::embed_quantity(ag::Graph<T>& g, int q) const {
    ++counters.embed_quantity;
    return quantity_.embed(g, q);
}

template <typename T>
Var<T> CountingModel<T>::project_category(ag::Graph<T>& g, const Var<T>& text_full) const {
    ++counters.category_project;
    return category_project(g, text_full, category_);
}

template <typename T>
EncodedPair<T> CountingModel<T>::forward_hypothesis(ag::Graph<T>& g, const Image& image, const std::string& category,
                                                    int quantity, int index) const {
    ++counters.forward_hypothesis;
    const TokenSequence tokens = tokenizer_.tokenize(training_text(category, quantity));
    const auto conditioned = condition_prompts(prompts_.bind(g), embed_quantity(g, quantity));

    EncodedPair<T> pair;
    pair.hypothesis_index = index;
    pair.text_full = text_.encode(g, tokens, conditioned);
    pair.text_cat = project_category(g, *pair.text_full);
    pair.dense = vision_.encode(g, image, couple_prompts(g, conditioned, coupling_));
    return pair;
}

template <typename T>
TokenSequence CountingModel<T>::inference_tokens(const std::string& text) const {
    TokenSequence tokens = tokenizer_.tokenize(text);
    if (tokenizer_.contains_number(tokens))
        throw ValidationError("inference text must not contain a number token: '" + text + "'");
    return tokens;
}

template <typename T>
EncodedPair<T> CountingModel<T>::forward_inference(ag::Graph<T>& g, const Image& image, const std::string& text) const {
    ++counters.forward_inference;
    const TokenSequence tokens = inference_tokens(text);
    const auto raw = prompts_.bind(g);

    EncodedPair<T> pair;
    pair.text_cat = text_.encode(g, tokens, raw);
    pair.dense = vision_.encode(g, image, couple_prompts(g, raw, coupling_));
    return pair;
}

template <typename T>
DecoderOutput<T> CountingModel<T>::decode(ag::Graph<T>& g, const EncodedPair<T>& pair) const {
    return decoder_.forward(g, pair.dense, pair.text_cat);
}

template <typename T>
ImageObjective<T> CountingModel<T>::objective(ag::Graph<T>& g, const Image& image, const DensityMap& target,
                                              const std::string& category, int n_gt,
                                              const ObjectiveOptions& opt) const {
    ImageObjective<T> out;
    Matrix<T> zero = Matrix<T>::Zero(1, 1);

    if (!opt.quantity_path) {
        out.hypotheses = make_hypotheses(n_gt, 1);
        const auto pair = forward_inference(g, image, inference_text(category));
        const auto dec = decode(g, pair);
        out.counts.push_back(static_cast<double>(dec.count.item()));
        out.loss = total_loss(density_loss(g, dec.density, target), g.constant(zero), g.constant(zero), opt.weights);
        return out;
    }

    out.hypotheses = make_hypotheses(n_gt, opt.K);
    const auto& hyp = out.hypotheses;
    std::vector<Var<T>> counts, globals, texts;
    Var<T> factual_density;
    std::optional<Var<T>> shared_global;
    if (opt.shared_vg) shared_global = vision_.encode(g, image, couple_prompts(g, prompts_.bind(g), coupling_)).global;

    for (int k = 0; k < hyp.K; ++k) {
        const auto pair = forward_hypothesis(g, image, category, hyp.quantities[static_cast<std::size_t>(k)], k);
        const auto dec = decode(g, pair);
        if (k == 0) factual_density = dec.density;
        counts.push_back(dec.count);
        globals.push_back(shared_global ? *shared_global : pair.dense.global);
        texts.push_back(decoder_.project_text(g, *pair.text_full));
        out.counts.push_back(static_cast<double>(dec.count.item()));
    }
    const auto alpha = alignment_scores(globals, texts);
    for (const auto& a : alpha) out.alpha.push_back(static_cast<double>(a.item()));

    out.loss = total_loss(density_loss(g, factual_density, target), enc_quantity_loss(g, alpha, hyp),
                          dec_quantity_loss(g, counts, hyp, opt.weights.beta), opt.weights);
    return out;
}

template <typename T>
DensityMap CountingModel<T>::predict(const Image& image, const std::string& text) const {
    ag::Graph<T> g(false);
    const auto dec = decode(g, forward_inference(g, image, text));
    return to_density_map(dec.density, decoder_.output_size());
}

template class CountingModel<float>;
template class CountingModel<double>;

}  // namespace qcount
