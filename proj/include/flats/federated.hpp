#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "flats/attacks.hpp"
#include "flats/data.hpp"
#include "flats/nn.hpp"
#include "flats/records.hpp"
#include "flats/rng.hpp"

namespace flats {

// adversary placement policy: MethodI re-draws the compromised clients from
// each round's selection, MethodII fixes one compromised set over all clients
// before round 1 (so a given round may contain none of them)
enum class Schedule { MethodI, MethodII };

struct FedConfig {
    int rounds = 10;
    int clients = 5;        // J
    int select_count = 4;   // n, clients trained per round
    int adv_count = 0;      // n_a
    Schedule schedule = Schedule::MethodI;
    double abr = 0.5;       // fraction of each adversary's batches attacked
    int local_epochs = 5;
    int train_batch = 64;
    float lr = 0.05f;
    float loss_mix = 0.5f;  // weight of the clean term in the mixed loss
    AttackConfig attack = AttackConfig::ffgsm();
    uint64_t seed = 1;
    int threads = 1;

    void validate() const;
};

// uniform draw of `count` distinct clients out of 0..total-1, sorted
std::vector<int> select_round_clients(Rng& rng, int total, int count);

// MethodI: adv_count distinct adversaries out of this round's selection
std::vector<int> plan_adversaries_method1(Rng& rng, const std::vector<int>& round_clients, int adv_count);

// MethodII: adv_count distinct adversaries out of all clients, drawn once
std::vector<int> plan_adversaries_method2(Rng& rng, int total_clients, int adv_count);

struct ClientData {
    int id = 0;
    LabeledDataset data;  // local share, manipulations already applied
};

struct LocalUpdate {
    ParameterSet params;
    int sample_count = 0;
    float final_loss = 0.0f;  // mean loss over the last epoch, 0 if no steps ran
};

// plain local SGD from the global weights: `epochs` passes over reshuffled
// minibatches (last batch may be short)
LocalUpdate local_update(const Model& global, const ClientData& client, int epochs, float lr,
                         int batch, Rng& rng);

// how many of `total` batches an adversary attacks: ceil(abr * total), with
// a guard so an exact product like 0.1 * 10 does not round up to an extra one
int adversarial_batches(double abr, int total);

// adversarial variant: the first adversarial_batches(abr, B) of the B
// shuffled batches each epoch are attacked against the current local weights
// and trained on the mixed clean/adversarial objective; abr = 0 reproduces
// local_update exactly
LocalUpdate adv_local_update(const Model& global, const ClientData& client, int epochs, float lr,
                             int batch, const AttackConfig& attack, double abr, float loss_mix, Rng& rng);

// size-weighted parameter average (the aggregation step)
ParameterSet fedavg(const std::vector<LocalUpdate>& updates);

// per-round evaluation request; test sets are prebuilt by the caller
struct EvalJob {
    std::vector<std::pair<TestDataType, LabeledDataset>> test_sets;
    std::vector<EvalMode> modes = {EvalMode::WhiteBox};
    std::vector<std::pair<std::string, AttackConfig>> attacks;  // name -> config
    const Model* surrogate = nullptr;  // required when modes include Surrogate
    int square_sample_cap = 256;       // 0 = attack every sample
    int eval_batch = 32;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    ParameterSet final_params;
};

// full training loop: per-round client selection, adversary planning, local
// updates (optionally threaded), FedAvg aggregation and evaluation. Results
// are bit-identical for a given config regardless of the thread count.
ExperimentResult run_experiment(const FedConfig& config, const Model& init_model,
                                const std::vector<ClientData>& clients_data, const EvalJob& eval_job,
                                const std::function<void(int, const ParameterSet&)>& round_hook = {});

// convenience: materialise per-client shares from a dataset and a partition
std::vector<ClientData> materialize_clients(const LabeledDataset& train, const PartitionPlan& plan);

}  // namespace flats
