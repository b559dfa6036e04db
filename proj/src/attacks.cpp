#include "flats/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flats/errors.hpp"

namespace flats {

namespace {

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

int argmax_lowest(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

void check_attack_inputs(const Tensor& x, const std::vector<int>& labels) {
    if (x.rank() != 4) throw InputError("attack input must be a (N,C,H,W) batch, got rank " + std::to_string(x.rank()));
    if (static_cast<int>(labels.size()) != x.shape[0])
        throw InputError("attack batch has " + std::to_string(x.shape[0]) + " samples but " +
                         std::to_string(labels.size()) + " labels");
}

}  // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0f) || epsilon > 1.0f)
        throw ConfigError("attack epsilon must lie in [0,1], got " + std::to_string(epsilon));
    switch (kind) {
        case Kind::Fgsm:
            break;
        case Kind::Ffgsm:
            if (!(step_size >= 0.0f)) throw ConfigError("ffgsm step size must be >= 0, got " + std::to_string(step_size));
            break;
        case Kind::Square:
            if (n_queries < 1) throw ConfigError("square attack needs n_queries >= 1, got " + std::to_string(n_queries));
            if (n_restarts < 1) throw ConfigError("square attack needs n_restarts >= 1, got " + std::to_string(n_restarts));
            break;
        default:
            throw ConfigError("unknown attack kind");
    }
}

AttackConfig AttackConfig::fgsm(float epsilon) {
    AttackConfig c;
    c.kind = Kind::Fgsm;
    c.epsilon = epsilon;
    return c;
}

AttackConfig AttackConfig::ffgsm(float epsilon, float step_size) {
    AttackConfig c;
    c.kind = Kind::Ffgsm;
    c.epsilon = epsilon;
    c.step_size = step_size;
    return c;
}

AttackConfig AttackConfig::square(float epsilon, int n_queries, int n_restarts, SquareLoss loss) {
    AttackConfig c;
    c.kind = Kind::Square;
    c.epsilon = epsilon;
    c.n_queries = n_queries;
    c.n_restarts = n_restarts;
    c.loss_kind = loss;
    return c;
}

Tensor GradientOracle::input_grad(const Tensor& batch, const std::vector<int>& labels) const {
    return input_gradient(*model_, batch, labels);
}

Tensor PredictionOracle::logits(const Tensor& batch) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return forward(*model_, batch);
}

Tensor fgsm(const GradientOracle& oracle, const Tensor& x, const std::vector<int>& labels, float epsilon) {
    check_attack_inputs(x, labels);
    if (epsilon == 0.0f) return x;
    Tensor grad = oracle.input_grad(x, labels);
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(x.data[i] + epsilon * sign_of(grad.data[i]), 0.0f, 1.0f);
    return out;
}

Tensor ffgsm(const GradientOracle& oracle, const Tensor& x, const std::vector<int>& labels,
             float epsilon, float step_size, Rng& rng) {
    check_attack_inputs(x, labels);
    Tensor start = x;
    for (float& v : start.data) v += static_cast<float>(rng.uniform(-epsilon, epsilon));
    clamp_(start, 0.0f, 1.0f);
    Tensor grad = oracle.input_grad(start, labels);
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        float v = start.data[i] + step_size * sign_of(grad.data[i]);
        v = std::clamp(v, x.data[i] - epsilon, x.data[i] + epsilon);  // project to the ball
        out.data[i] = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

namespace {

// objective the search maximises: high value = closer to misclassification
double square_objective(const Tensor& logits, int label, AttackConfig::SquareLoss loss) {
    int k = logits.shape[1];
    const float* row = logits.ptr();
    if (loss == AttackConfig::SquareLoss::CrossEntropy) {
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double lse = 0.0;
        for (int j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
        return mx + std::log(lse) - row[label];  // cross-entropy of the true class
    }
    double other = -1e30;
    for (int j = 0; j < k; ++j)
        if (j != label) other = std::max(other, static_cast<double>(row[j]));
    return other - row[label];  // margin: positive once misclassified
}

// side length of the proposal square, shrinking as the budget is spent
int square_side(double used_fraction, int min_dim) {
    double p = 0.3;
    if (used_fraction > 0.75)
        p = 0.3 / 16.0;
    else if (used_fraction > 0.5)
        p = 0.3 / 8.0;
    else if (used_fraction > 0.25)
        p = 0.3 / 4.0;
    else if (used_fraction > 0.1)
        p = 0.3 / 2.0;
    int side = std::max(1, static_cast<int>(std::lround(p * min_dim)));
    return std::min(side, min_dim);
}

}  // namespace

SquareResult square_attack(const PredictionOracle& oracle, const Tensor& x, int label,
                           const AttackConfig& config, Rng& rng) {
    if (config.kind != AttackConfig::Kind::Square) throw ConfigError("square_attack called with a non-square config");
    config.validate();
    if (x.rank() != 3) throw InputError("square_attack expects one (C,H,W) sample, got rank " + std::to_string(x.rank()));

    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const float eps = config.epsilon;
    const int budget = config.n_queries * config.n_restarts;
    const int plane = h * w;

    Tensor batch{{1, c, h, w}, x.data};
    auto classify = [&](const Tensor& sample, double& obj_out) {
        batch.data = sample.data;
        Tensor logits = oracle.logits(batch);
        obj_out = square_objective(logits, label, config.loss_kind);
        return argmax_lowest(logits.ptr(), logits.shape[1]);
    };

    int queries = 0;
    double obj0 = 0.0;
    int pred = classify(x, obj0);
    ++queries;
    if (pred != label) return {x, true, queries};

    Tensor best = x;
    double best_obj = obj0;

    // delta is maintained explicitly so patch proposals overwrite it cleanly;
    // the candidate image is always clip01(x + delta)
    Tensor delta{{c, h, w}, std::vector<float>(x.data.size(), 0.0f)};
    Tensor cand = x;
    auto rebuild = [&]() {
        for (size_t i = 0; i < cand.data.size(); ++i)
            cand.data[i] = std::clamp(x.data[i] + delta.data[i], 0.0f, 1.0f);
    };

    for (int restart = 0; restart < config.n_restarts && queries < budget; ++restart) {
        // vertical stripe init: one +-eps sign per channel and column
        for (int ci = 0; ci < c; ++ci)
            for (int j = 0; j < w; ++j) {
                float s = rng.coin() ? eps : -eps;
                for (int i = 0; i < h; ++i) delta.data[static_cast<size_t>(ci) * plane + i * w + j] = s;
            }
        rebuild();
        double cur_obj = 0.0;
        pred = classify(cand, cur_obj);
        ++queries;
        if (pred != label) return {cand, true, queries};
        if (cur_obj > best_obj) {
            best = cand;
            best_obj = cur_obj;
        }

        std::vector<float> saved;
        for (int it = 1; queries < budget && it < config.n_queries; ++it) {
            int side = square_side(static_cast<double>(it) / config.n_queries, std::min(h, w));
            int i0 = rng.randint(h - side + 1);
            int j0 = rng.randint(w - side + 1);

            // propose a fresh +-eps fill of the patch, one sign per channel
            saved.clear();
            for (int ci = 0; ci < c; ++ci) {
                float s = rng.coin() ? eps : -eps;
                for (int i = i0; i < i0 + side; ++i)
                    for (int j = j0; j < j0 + side; ++j) {
                        float& d = delta.data[static_cast<size_t>(ci) * plane + i * w + j];
                        saved.push_back(d);
                        d = s;
                    }
            }
            rebuild();
            double obj = 0.0;
            pred = classify(cand, obj);
            ++queries;
            if (pred != label) return {cand, true, queries};
            if (obj > best_obj) {
                best = cand;
                best_obj = obj;
            }
            if (obj > cur_obj) {
                cur_obj = obj;  // keep the patch
            } else {
                size_t s_idx = 0;  // revert the patch
                for (int ci = 0; ci < c; ++ci)
                    for (int i = i0; i < i0 + side; ++i)
                        for (int j = j0; j < j0 + side; ++j)
                            delta.data[static_cast<size_t>(ci) * plane + i * w + j] = saved[s_idx++];
            }
        }
    }
    return {best, false, queries};
}

Tensor perturb_batch(const AttackConfig& attack, const Model& model_or_surrogate, const Tensor& batch,
                     const std::vector<int>& labels, Rng& rng) {
    attack.validate();
    check_attack_inputs(batch, labels);
    switch (attack.kind) {
        case AttackConfig::Kind::Fgsm: {
            GradientOracle oracle(model_or_surrogate);
            return fgsm(oracle, batch, labels, attack.epsilon);
        }
        case AttackConfig::Kind::Ffgsm: {
            GradientOracle oracle(model_or_surrogate);
            return ffgsm(oracle, batch, labels, attack.epsilon, attack.step_size, rng);
        }
        case AttackConfig::Kind::Square: {
            PredictionOracle oracle(model_or_surrogate);
            const int n = batch.shape[0];
            const int c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
            const size_t stride = static_cast<size_t>(c) * h * w;
            Tensor out = batch;
            // per-sample sub-generators keep the search order-independent
            for (int s = 0; s < n; ++s) {
                Rng sub(rng.next_u64());
                Tensor sample{{c, h, w},
                              std::vector<float>(batch.data.begin() + s * stride, batch.data.begin() + (s + 1) * stride)};
                SquareResult res = square_attack(oracle, sample, labels[s], attack, sub);
                std::copy(res.x_adv.data.begin(), res.x_adv.data.end(), out.data.begin() + s * stride);
            }
            return out;
        }
    }
    throw ConfigError("unknown attack kind");
}

}  // namespace flats
