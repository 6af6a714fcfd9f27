#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "savad/checkpoint.hpp"
#include "savad/data.hpp"
#include "savad/losses.hpp"

namespace savad {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    int batch_size = 32;
    long iterations = 4000;
    std::uint64_t seed = 0;
    LossConfig loss;
    int segments = 320;
    double beta = 0.0;
    int checkpoint_every = 100;
    int workers = 1;
    ModelConfig model;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and >= 2");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (segments < 1) throw ConfigError("segments T must be >= 1");
        if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        loss.validate();
        model.validate();
    }
};

/// Adam moments with L2 weight decay folded into the gradient.
template <typename Scalar>
struct AdamState {
    std::vector<Matrix<Scalar>> first;
    std::vector<Matrix<Scalar>> second;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(const ParameterSet<Scalar>& params) {
        for (const auto& p : params) {
            first.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
            second.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
        }
    }
};

/// One bias-corrected Adam update.
///   g' = g + wd * p;  m = b1 m + (1-b1) g';  v = b2 v + (1-b2) g'^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const std::vector<Matrix<Scalar>>& grads, AdamState<Scalar>& state,
               double lr, double weight_decay) {
    if (grads.size() != params.size() || state.first.size() != params.size()) {
        throw UsageError("adam_step: gradient/state count does not match parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i].value.rows() || grads[i].cols() != params[i].value.cols()) {
            throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
        }
        if (!grads[i].allFinite()) throw NumericError("adam_step: non-finite gradient for parameter " + params[i].name);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const Scalar b1 = Scalar(state.beta1);
    const Scalar b2 = Scalar(state.beta2);
    const Scalar correction1 = Scalar(1.0 - std::pow(state.beta1, t));
    const Scalar correction2 = Scalar(1.0 - std::pow(state.beta2, t));
    const Scalar eps = Scalar(state.epsilon);
    const Scalar step = Scalar(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix<Scalar>& p = params[i].value;
        const Matrix<Scalar> g = grads[i] + Scalar(weight_decay) * p;
        state.first[i] = b1 * state.first[i] + (Scalar(1) - b1) * g;
        state.second[i] = b2 * state.second[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
        const auto m_hat = (state.first[i] / correction1).array();
        const auto v_hat = (state.second[i] / correction2).array();
        p.array() -= step * m_hat / (v_hat.sqrt() + eps);
        if (!p.allFinite()) throw NumericError("adam_step: parameter " + params[i].name + " became non-finite");
    }
}

/// Video indices of one training batch: normals first, then abnormals.
struct Batch {
    std::vector<std::size_t> items;
    std::vector<int> labels;
};

/// batch_size/2 draws from each pool, without replacement when the pool is
/// large enough and with replacement otherwise.
template <typename Rng>
Batch make_batch(std::span<const std::size_t> normal_pool, std::span<const std::size_t> abnormal_pool, int batch_size,
                 Rng& rng) {
    if (normal_pool.empty() || abnormal_pool.empty()) throw ConfigError("make_batch: both label pools must be non-empty");
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("make_batch: batch_size must be even and >= 2");
    const auto half = static_cast<std::size_t>(batch_size / 2);
    Batch batch;
    auto draw = [&](std::span<const std::size_t> pool, int label) {
        if (pool.size() < half) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            for (std::size_t i = 0; i < half; ++i) batch.items.push_back(pool[pick(rng)]);
        } else {
            std::vector<std::size_t> order(pool.begin(), pool.end());
            for (std::size_t i = 0; i < half; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
                std::swap(order[i], order[pick(rng)]);
                batch.items.push_back(order[i]);
            }
        }
        batch.labels.insert(batch.labels.end(), half, label);
    };
    draw(normal_pool, 0);
    draw(abnormal_pool, 1);
    return batch;
}

/// Per-(seed, iteration, slot) generator for dropout masks.
inline std::mt19937_64 dropout_stream(std::uint64_t seed, long iteration, std::size_t slot) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(slot), 0xD209u};
    return std::mt19937_64(seq);
}

/// One training example: resampled features and the video-level label.
template <typename Scalar>
struct Example {
    Matrix<Scalar> features;
    int label = 0;
};

template <typename Scalar>
struct StepResult {
    LossBreakdown breakdown;
    std::vector<Matrix<Scalar>> grads;
};

/// Forward/backward over a batch, one tape per video, gradients summed in slot order.
template <typename Scalar>
StepResult<Scalar> batch_gradients(const Model<Scalar>& model, std::span<const Example<Scalar>> batch, long step,
                                   const TrainConfig& cfg, int workers = 1) {
    std::vector<int> labels;
    for (const auto& e : batch) labels.push_back(e.label);
    const BatchCounts counts = BatchCounts::of(labels);

    std::vector<LossBreakdown> parts(batch.size());
    std::vector<std::vector<Matrix<Scalar>>> grads(batch.size());
    auto run = [&](std::size_t slot) {
        Tape<Scalar> tape;
        const Bound<Scalar> bound = model.bind(tape);
        const Var<Scalar> x = tape.constant(batch[slot].features);
        std::mt19937_64 rng = dropout_stream(cfg.seed, step, slot);
        const ModelOutput<Scalar> out = model.forward(bound, x, cfg.loss.eps, cfg.beta, true, rng);
        const LossTerms<Scalar> terms = video_loss_terms(out, batch[slot].label, step, cfg.loss, counts);
        const CombinedLoss<Scalar> c = combine_terms(terms, step, cfg.loss);
        tape.backward(c.total);
        parts[slot] = c.breakdown;
        for (const auto& leaf : bound) grads[slot].push_back(leaf.grad());
    };
    if (workers <= 1 || batch.size() < 2) {
        for (std::size_t s = 0; s < batch.size(); ++s) run(s);
    } else {
        std::vector<std::thread> pool;
        const auto n = static_cast<std::size_t>(workers);
        for (std::size_t w = 0; w < n; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t s = w; s < batch.size(); s += n) run(s);
            });
        }
        for (auto& t : pool) t.join();
    }

    StepResult<Scalar> result;
    result.grads = std::move(grads[0]);
    result.breakdown = parts[0];
    for (std::size_t s = 1; s < batch.size(); ++s) {
        for (std::size_t i = 0; i < result.grads.size(); ++i) result.grads[i] += grads[s][i];
        result.breakdown += parts[s];
    }
    result.breakdown.guide_hard = step >= cfg.loss.switch_iter;
    return result;
}

/// One JSON object (single line, no trailing newline) for the training log.
std::string log_line(long iteration, const LossBreakdown& b);

struct TrainHooks {
    std::function<void(long iteration, const LossBreakdown&)> on_step;
    // called every checkpoint_every iterations (1-based count) and after the last one
    std::function<void(long completed, bool final)> on_checkpoint;
};

/// Runs cfg.iterations Adam steps on balanced batches drawn from `videos`.
template <typename Scalar>
void train(Model<Scalar>& model, const std::vector<Video>& videos, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    std::vector<Example<Scalar>> examples;
    std::vector<std::size_t> normal_pool;
    std::vector<std::size_t> abnormal_pool;
    for (const auto& v : videos) {
        if (v.features.cols() != model.config().feature_dim) {
            throw DataError(v.path + ": feature dimension " + std::to_string(v.features.cols()) + " != model's " +
                            std::to_string(model.config().feature_dim));
        }
        (v.label == 1 ? abnormal_pool : normal_pool).push_back(examples.size());
        examples.push_back({resample_segments(v.features, cfg.segments).template cast<Scalar>(), v.label});
    }
    if (normal_pool.empty() || abnormal_pool.empty()) throw ConfigError("training set must contain both labels");

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0xBA7Cu};
    std::mt19937_64 batch_rng(seq);
    AdamState<Scalar> adam(model.params());
    std::vector<Example<Scalar>> batch;
    for (long it = 0; it < cfg.iterations; ++it) {
        const Batch b = make_batch<std::mt19937_64>(normal_pool, abnormal_pool, cfg.batch_size, batch_rng);
        batch.clear();
        for (std::size_t i : b.items) batch.push_back(examples[i]);
        StepResult<Scalar> r = batch_gradients<Scalar>(model, batch, it, cfg, cfg.workers);
        adam_step(model.params(), r.grads, adam, cfg.lr, cfg.weight_decay);
        if (hooks.on_step) hooks.on_step(it, r.breakdown);
        const long done = it + 1;
        const bool last = done == cfg.iterations;
        if (hooks.on_checkpoint && (last || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0))) {
            hooks.on_checkpoint(done, last);
        }
    }
}

/// Training with on-disk outputs: out_dir/train_log.jsonl, out_dir/checkpoints/
/// iter_NNNNNN.savd and out_dir/model.savd. Returns the trained model.
Model<float> train_to_dir(const Manifest& manifest, const TrainConfig& cfg, const std::filesystem::path& out_dir);

template <typename Scalar>
struct InferResult {
    Matrix<Scalar> original;  // S_o per snippet
    Matrix<Scalar> attended;  // S_a per snippet (test score)
    Matrix<Scalar> attention;
};

/// Deterministic forward pass over a full, unresampled snippet sequence.
template <typename Scalar>
InferResult<Scalar> infer_snippets(const Model<Scalar>& model, const Matrix<Scalar>& features, double eps = 0.2,
                                   double beta = 0.0) {
    Tape<Scalar> tape;
    const Bound<Scalar> bound = model.bind(tape, false);
    std::mt19937_64 unused(0);
    const ModelOutput<Scalar> out = model.forward(bound, tape.constant(features), eps, beta, false, unused);
    return {out.original.value(), out.attended.value(), out.attention.value()};
}

/// Repeats each snippet score kFramesPerSnippet times.
template <typename Scalar>
std::vector<double> expand_to_frames(const Matrix<Scalar>& snippet_scores, int frames_per_snippet = kFramesPerSnippet) {
    std::vector<double> frames;
    frames.reserve(static_cast<std::size_t>(snippet_scores.size() * frames_per_snippet));
    for (Eigen::Index j = 0; j < snippet_scores.size(); ++j) {
        frames.insert(frames.end(), static_cast<std::size_t>(frames_per_snippet), static_cast<double>(snippet_scores.data()[j]));
    }
    return frames;
}

/// Frame-level anomaly scores (S_a expanded to frames).
template <typename Scalar>
std::vector<double> infer(const Model<Scalar>& model, const FeatureSequence& features) {
    return expand_to_frames(infer_snippets(model, Matrix<Scalar>(features.template cast<Scalar>())).attended);
}

}  // namespace savad
