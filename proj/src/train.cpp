#include "qcount/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace qcount {

using nlohmann::json;

Metrics count_metrics(const std::vector<double>& predicted, const std::vector<double>& truth) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("count_metrics: size mismatch");
    if (predicted.empty()) throw std::invalid_argument("count_metrics: no samples");
    double abs_sum = 0, sq_sum = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(predicted.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

template <typename T>
AdamW<T>::AdamW(ParameterStore<T>& store, double lr, double weight_decay, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        m_.push_back(Matrix<T>::Zero(store[i].value.rows(), store[i].value.cols()));
        v_.push_back(Matrix<T>::Zero(store[i].value.rows(), store[i].value.cols()));
    }
}

template <typename T>
void AdamW<T>::step(const std::vector<Matrix<T>>& grads) {
    if (grads.size() != store_.size()) throw std::invalid_argument("AdamW::step: one gradient per parameter");
    ++t_;
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T c1 = static_cast<T>(1.0 - std::pow(b1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(b2_, static_cast<double>(t_)));
    const T lr = static_cast<T>(lr_), decay = static_cast<T>(1.0 - lr_ * wd_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < store_.size(); ++i) {
        auto& p = store_[i];
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        p.value *= decay;
        if (grads[i].size() == 0) {
            m *= b1;
            v *= b2;
        } else {
            if (grads[i].rows() != p.value.rows() || grads[i].cols() != p.value.cols())
                throw std::invalid_argument("AdamW::step: gradient shape mismatch for " + p.name);
            m = b1 * m + (1 - b1) * grads[i];
            v = b2 * v + (1 - b2) * grads[i].cwiseProduct(grads[i]);
        }
        p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
}

template <typename T>
std::vector<double> predict_counts(const CountingModel<T>& model, const std::vector<Sample>& samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(count(model.predict(s.image, inference_text(s.category))));
    return out;
}

template <typename T>
Metrics evaluate(const CountingModel<T>& model, const std::vector<Sample>& samples) {
    const int size = model.config().density_size();
    std::vector<double> truth;
    for (const auto& s : samples) {
        if (s.density.height != size || s.density.width != size)
            throw std::invalid_argument("evaluate: sample '" + s.id + "' has density resolution " +
                                        std::to_string(s.density.height) + "x" + std::to_string(s.density.width) +
                                        ", model predicts " + std::to_string(size) + "x" + std::to_string(size));
        truth.push_back(static_cast<double>(s.count));
    }
    return count_metrics(predict_counts(model, samples), truth);
}

template <typename T>
BatchGradient<T> batch_gradient(const CountingModel<T>& model, const std::vector<const Sample*>& batch,
                                const ObjectiveOptions& opt) {
    if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    const auto& store = model.params();
    BatchGradient<T> out;
    out.grads.resize(store.size());
    const double inv = 1.0 / static_cast<double>(batch.size());
    json diag = json::array();
    bool finite = true;

    for (const Sample* s : batch) {
        ag::Graph<T> g;
        const auto obj = model.objective(g, s->image, s->density, s->category, s->count, opt);
        const auto& b = obj.loss.breakdown;
        diag.push_back({{"id", s->id},
                        {"category", s->category},
                        {"count", s->count},
                        {"hypotheses", obj.hypotheses.quantities},
                        {"predicted_counts", obj.counts},
                        {"alpha", obj.alpha},
                        {"loss_density", b.density},
                        {"loss_enc", b.enc_qty},
                        {"loss_dec", b.dec_qty},
                        {"loss_total", b.total}});
        if (!std::isfinite(b.total) || !std::isfinite(static_cast<double>(obj.loss.value.item()))) {
            finite = false;
            continue;
        }
        out.mean.density += b.density * inv;
        out.mean.enc_qty += b.enc_qty * inv;
        out.mean.dec_qty += b.dec_qty * inv;
        out.mean.total += b.total * inv;
        out.mean.weights = b.weights;

        g.backward(obj.loss.value);
        for (std::size_t i = 0; i < store.size(); ++i) {
            const Matrix<T>* grad = g.param_grad(store[i]);
            if (!grad) continue;
            if (out.grads[i].size() == 0) out.grads[i] = Matrix<T>::Zero(grad->rows(), grad->cols());
            out.grads[i] += *grad * static_cast<T>(inv);
        }
    }
    if (!finite) throw NonFiniteLossError("non-finite loss in batch", diag);
    return out;
}

namespace {

template <typename T>
std::vector<Matrix<T>> snapshot(const ParameterStore<T>& store) {
    std::vector<Matrix<T>> out;
    for (std::size_t i = 0; i < store.size(); ++i) out.push_back(store[i].value);
    return out;
}

template <typename T>
void restore(ParameterStore<T>& store, const std::vector<Matrix<T>>& values) {
    for (std::size_t i = 0; i < store.size(); ++i) store[i].value = values[i];
}

}  // namespace

template <typename T>
TrainResult train(CountingModel<T>& model, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainOptions& opts) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    namespace fs = std::filesystem;

    const ObjectiveOptions objective = ObjectiveOptions::from(cfg);
    const std::vector<Sample>& scored = val_set.empty() ? train_set : val_set;
    AdamW<T> optimizer(model.params(), cfg.learning_rate, cfg.weight_decay);
    std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dull);

    std::ofstream log;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        log.open(fs::path(opts.out_dir) / "metrics.jsonl");
        if (!log) throw IoError("cannot write metric log in '" + opts.out_dir + "'");
    }

    TrainResult result;
    result.best_val_mae = std::numeric_limits<double>::infinity();
    std::vector<Matrix<T>> best = snapshot(model.params());
    Metrics val{};
    bool have_val = false;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown sum;
        std::size_t seen = 0;
        bool budget_done = false;

        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<Sample> augmented;
            std::vector<const Sample*> batch;
            const std::size_t end = std::min(order.size(), start + batch_size);
            augmented.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const Sample& s = train_set[order[k]];
                if (cfg.augment) {
                    augmented.push_back(augment(s, rng, cfg.density_sigma));
                    batch.push_back(&augmented.back());
                } else {
                    batch.push_back(&s);
                }
            }

            BatchGradient<T> bg;
            try {
                bg = batch_gradient(model, batch, objective);
            } catch (const NonFiniteLossError& e) {
                json dump{{"epoch", epoch}, {"step", result.steps + 1}, {"batch", e.diagnostics}};
                if (!opts.out_dir.empty()) {
                    std::ofstream f(fs::path(opts.out_dir) / "nonfinite_batch.json");
                    f << dump.dump(1) << "\n";
                }
                throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(result.steps + 1) + ": " + dump.dump(),
                                         dump);
            }
            optimizer.step(bg.grads);
            ++result.steps;

            const double n = static_cast<double>(batch.size());
            sum.density += bg.mean.density * n;
            sum.enc_qty += bg.mean.enc_qty * n;
            sum.dec_qty += bg.mean.dec_qty * n;
            sum.total += bg.mean.total * n;
            seen += batch.size();
            if (opts.on_step) opts.on_step(result.steps, bg.mean);
            if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
                budget_done = true;
                break;
            }
        }

        const bool last = epoch == cfg.epochs || budget_done;
        if (epoch % cfg.eval_every == 0 || last || !have_val) {
            val = evaluate(static_cast<const CountingModel<T>&>(model), scored);
            have_val = true;
            if (val.mae < result.best_val_mae) {
                result.best_val_mae = val.mae;
                result.best_epoch = epoch;
                best = snapshot(model.params());
                if (!opts.out_dir.empty())
                    save_checkpoint((fs::path(opts.out_dir) / "best.ckpt").string(), model.params(),
                                    {cfg, epoch, result.history});
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        const double inv = 1.0 / static_cast<double>(seen);
        rec.loss_density = sum.density * inv;
        rec.loss_enc = sum.enc_qty * inv;
        rec.loss_dec = sum.dec_qty * inv;
        rec.loss_total = sum.total * inv;
        rec.val_mae = val.mae;
        rec.val_rmse = val.rmse;
        result.history.push_back(rec);
        if (log) log << json(rec).dump() << "\n" << std::flush;
        if (opts.on_epoch) opts.on_epoch(rec);
        if (budget_done) break;
    }

    if (!opts.out_dir.empty())
        save_checkpoint((fs::path(opts.out_dir) / "last.ckpt").string(), model.params(),
                        {cfg, static_cast<int>(result.history.size()), result.history});
    if (opts.restore_best) restore(model.params(), best);
    return result;
}

#define QCOUNT_INSTANTIATE_TRAIN(T)                                                                            \
    template class AdamW<T>;                                                                                   \
    template std::vector<double> predict_counts(const CountingModel<T>&, const std::vector<Sample>&);         \
    template Metrics evaluate(const CountingModel<T>&, const std::vector<Sample>&);                           \
    template BatchGradient<T> batch_gradient(const CountingModel<T>&, const std::vector<const Sample*>&,      \
                                             const ObjectiveOptions&);                                         \
    template TrainResult train(CountingModel<T>&, const TrainConfig&, const std::vector<Sample>&,             \
                               const std::vector<Sample>&, const TrainOptions&);

QCOUNT_INSTANTIATE_TRAIN(float)
QCOUNT_INSTANTIATE_TRAIN(double)

}  // namespace qcount
