#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "flats/nn.hpp"
#include "flats/rng.hpp"
#include "flats/tensor.hpp"

namespace flats {

struct AttackConfig {
    enum class Kind { Fgsm, Ffgsm, Square };
    enum class SquareLoss { CrossEntropy, Margin };

    Kind kind = Kind::Fgsm;
    float epsilon = 8.0f / 255.0f;
    float step_size = 10.0f / 255.0f;  // FFGSM only
    int n_queries = 2000;              // Square only
    int n_restarts = 1;                // Square only
    SquareLoss loss_kind = SquareLoss::CrossEntropy;  // Square only

    // epsilon = 0 is tolerated as the degenerate identity attack so that
    // robust evaluation can be compared against clean accuracy directly;
    // experiment configs require epsilon > 0
    void validate() const;

    static AttackConfig fgsm(float epsilon = 8.0f / 255.0f);
    static AttackConfig ffgsm(float epsilon = 8.0f / 255.0f, float step_size = 10.0f / 255.0f);
    static AttackConfig square(float epsilon = 8.0f / 255.0f, int n_queries = 2000, int n_restarts = 1,
                               SquareLoss loss = SquareLoss::CrossEntropy);
};

// white-box handle: input-gradient evaluation for a bound model
class GradientOracle {
public:
    explicit GradientOracle(const Model& model) : model_(&model) {}
    Tensor input_grad(const Tensor& batch, const std::vector<int>& labels) const;
    const Model& model() const { return *model_; }

private:
    const Model* model_;
};

// score-only handle: logits plus a query counter, no gradients
class PredictionOracle {
public:
    explicit PredictionOracle(const Model& model) : model_(&model) {}
    // one call on a batch counts as one query
    Tensor logits(const Tensor& batch) const;
    uint64_t queries() const { return queries_.load(); }
    const Model& model() const { return *model_; }

private:
    const Model* model_;
    mutable std::atomic<uint64_t> queries_{0};
};

// single gradient-sign step, clipped to [0,1]
Tensor fgsm(const GradientOracle& oracle, const Tensor& x, const std::vector<int>& labels, float epsilon);

// random start inside the epsilon ball, one sign step, projected back to the
// ball around the original x and to [0,1]
Tensor ffgsm(const GradientOracle& oracle, const Tensor& x, const std::vector<int>& labels,
             float epsilon, float step_size, Rng& rng);

struct SquareResult {
    Tensor x_adv;
    bool success = false;
    int queries_used = 0;
};

// gradient-free random search over +-epsilon square patches on one sample
// (C,H,W); stops at the first misclassification
SquareResult square_attack(const PredictionOracle& oracle, const Tensor& x, int label,
                           const AttackConfig& config, Rng& rng);

// applies the configured attack to a whole batch, batch-wise for the gradient
// attacks and sample-wise for Square; gradients/queries come from the model
// handed in (the defended model for white-box, a surrogate for transfer)
Tensor perturb_batch(const AttackConfig& attack, const Model& model_or_surrogate, const Tensor& batch,
                     const std::vector<int>& labels, Rng& rng);

}  // namespace flats
