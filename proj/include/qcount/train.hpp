#pragma once

#include "qcount/config.hpp"
#include "qcount/data.hpp"
#include "qcount/io.hpp"
#include "qcount/model.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcount {

class NonFiniteLossError : public std::runtime_error {
  public:
    NonFiniteLossError(const std::string& what, nlohmann::json diagnostics)
        : std::runtime_error(what), diagnostics(std::move(diagnostics)) {}

    nlohmann::json diagnostics;  // the offending batch
};

struct Metrics {
    double mae = 0;
    double rmse = 0;
};

/// MAE and RMSE of predicted against ground-truth counts.
Metrics count_metrics(const std::vector<double>& predicted, const std::vector<double>& truth);

/// Decoupled weight decay Adam over the trainable parameters of a store.
template <typename T>
class AdamW {
  public:
    AdamW(ParameterStore<T>& store, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    /// `grads[i]` belongs to store[i]; empty matrices are treated as zero.
    void step(const std::vector<Matrix<T>>& grads);
    long steps() const { return t_; }

  private:
    ParameterStore<T>& store_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Matrix<T>> m_, v_;
};

/// Inference-path counts for every sample; parameters are not touched.
template <typename T>
std::vector<double> predict_counts(const CountingModel<T>& model, const std::vector<Sample>& samples);

template <typename T>
Metrics evaluate(const CountingModel<T>& model, const std::vector<Sample>& samples);

struct TrainOptions {
    std::string out_dir;  // empty: no files written
    bool restore_best = true;
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(long step, const LossBreakdown& mean)> on_step;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    long steps = 0;
    int best_epoch = 0;
    double best_val_mae = 0;
};

/// Mini-batch training: per-image objectives averaged over the batch, one
/// optimizer step per batch. Validation MAE drives model selection; with
/// no validation samples the training set is scored instead.
template <typename T>
TrainResult train(CountingModel<T>& model, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainOptions& opts = {});

/// Loss and gradients of one batch, as used by a single optimizer step.
template <typename T>
struct BatchGradient {
    LossBreakdown mean;
    std::vector<Matrix<T>> grads;  // aligned with the store
};

template <typename T>
BatchGradient<T> batch_gradient(const CountingModel<T>& model, const std::vector<const Sample*>& batch,
                                const ObjectiveOptions& opt);

}  // namespace qcount
