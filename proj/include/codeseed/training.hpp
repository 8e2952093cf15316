#pragma once

// The training loop: seeded shuffled mini-batches, Adam on trainable
// parameters only, early stopping on validation loss with best-epoch weight
// restoration.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/neural.hpp"

namespace codeseed {

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 64;
    int max_epochs = 50;
    int patience = 3;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;     // 1-based
    int stopped_epoch = 0;  // 1-based, last epoch that ran
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool stopped_by_patience = false;
    double frozen_grad_norm_max = 0.0;

    std::string serialize() const {
        std::string out = "epoch train_loss val_loss seconds\n";
        char buf[128];
        for (std::size_t i = 0; i < epochs.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu %.6f %.6f %.3f\n", i + 1, epochs[i].train_loss,
                          epochs[i].val_loss, epochs[i].seconds);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "best_epoch=%d\nstopped_epoch=%d\nbest_val_loss=%.6f\n",
                      best_epoch, stopped_epoch, best_val_loss);
        out += buf;
        std::snprintf(buf, sizeof(buf), "frozen_grad_norm_max=%.6f\n", frozen_grad_norm_max);
        out += buf;
        return out;
    }
};

// Strict-improvement early stopping: stop after `patience` consecutive
// epochs whose validation loss fails to beat the best seen so far.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {
        if (patience < 1) throw Error(msg("patience must be >= 1, got ", patience));
    }

    // Feed one epoch's validation loss; returns true when training should stop.
    bool update(double val_loss) {
        ++epoch_;
        if (val_loss < best_loss_) {
            best_loss_ = val_loss;
            best_epoch_ = epoch_;
            bad_streak_ = 0;
            improved_ = true;
        } else {
            ++bad_streak_;
            improved_ = false;
        }
        return bad_streak_ >= patience_;
    }

    bool improved_last() const { return improved_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int bad_streak_ = 0;
    bool improved_ = false;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

namespace traindetail {

inline double global_grad_norm(const std::vector<Parameter*>& params) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.data) sq += g * g;
    return std::sqrt(sq);
}

inline void scale_grads(const std::vector<Parameter*>& params, double s) {
    for (Parameter* p : params)
        for (double& g : p->grad.data) g *= s;
}

}  // namespace traindetail

// Model must expose: Window, parameters(), accumulate_gradients(w, rng),
// loss(w), grad_clip_norm().
template <class Model>
TrainHistory fit(Model& model, const std::vector<typename Model::Window>& train,
                 const std::vector<typename Model::Window>& valid, const TrainConfig& cfg) {
    if (train.empty()) throw Error("fit: empty training set");
    if (valid.empty()) throw Error("fit: empty validation set");
    if (cfg.batch_size < 1) throw Error("fit: batch_size must be >= 1");
    if (cfg.max_epochs < 1) throw Error("fit: max_epochs must be >= 1");

    Rng rng(cfg.seed);
    std::vector<Parameter*> params = model.parameters();
    std::vector<Parameter*> trainable, frozen;
    for (Parameter* p : params) (p->trainable ? trainable : frozen).push_back(p);

    std::vector<AdamState> opt;
    opt.reserve(trainable.size());
    for (Parameter* p : trainable) opt.emplace_back(*p, cfg.lr);

    std::vector<Matrix> best_weights;
    auto snapshot = [&] {
        best_weights.clear();
        for (Parameter* p : trainable) best_weights.push_back(p->value);
    };
    snapshot();

    TrainHistory history;
    EarlyStopping stopper(cfg.patience);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    using clock = std::chrono::steady_clock;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto started = clock::now();
        shuffle(order, rng);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            for (Parameter* p : trainable) p->zero_grad();

            double batch_loss = 0.0;
            for (std::size_t i = begin; i < end; ++i)
                batch_loss += model.accumulate_gradients(train[order[i]], rng);
            if (!std::isfinite(batch_loss))
                throw Error(msg("fit: non-finite training loss at epoch ", epoch, ", batch ",
                                batch_index));
            loss_sum += batch_loss;

            traindetail::scale_grads(trainable, 1.0 / static_cast<double>(end - begin));
            if (!frozen.empty()) {
                history.frozen_grad_norm_max = std::max(history.frozen_grad_norm_max,
                                                        traindetail::global_grad_norm(frozen));
            }
            const double clip = model.grad_clip_norm();
            if (clip > 0.0) {
                const double norm = traindetail::global_grad_norm(trainable);
                if (norm > clip) traindetail::scale_grads(trainable, clip / norm);
            }
            for (std::size_t i = 0; i < trainable.size(); ++i) adam_step(*trainable[i], opt[i]);
        }

        double val_sum = 0.0;
        for (const auto& w : valid) val_sum += model.loss(w);
        const double val_loss = val_sum / static_cast<double>(valid.size());
        if (!std::isfinite(val_loss))
            throw Error(msg("fit: non-finite validation loss at epoch ", epoch));

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        stats.val_loss = val_loss;
        stats.seconds = std::chrono::duration<double>(clock::now() - started).count();
        history.epochs.push_back(stats);
        history.stopped_epoch = epoch;

        const bool stop = stopper.update(val_loss);
        if (stopper.improved_last()) snapshot();
        if (stop) {
            history.stopped_by_patience = true;
            break;
        }
    }

    for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = best_weights[i];
    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best_loss();
    return history;
}

}  // namespace codeseed
