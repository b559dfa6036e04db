#include "flats/federated.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "flats/errors.hpp"
#include "flats/eval.hpp"

namespace flats {

namespace {

// salts for deriving independent sub-streams from the experiment seed
constexpr uint64_t kSaltMethod2 = 0xAD2;
constexpr uint64_t kSaltRound = 0x0A1;
constexpr uint64_t kSaltClient = 0xC11;
constexpr uint64_t kSaltEval = 0xE7A;

std::vector<int> draw_subset(Rng& rng, std::vector<int> pool, int count) {
    for (int i = 0; i < count; ++i) {
        int j = i + rng.randint(static_cast<int>(pool.size()) - i);
        std::swap(pool[i], pool[static_cast<size_t>(j)]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace

int adversarial_batches(double abr, int total) {
    int n = static_cast<int>(std::ceil(abr * total - 1e-9));
    return std::clamp(n, 0, total);
}

void FedConfig::validate() const {
    if (rounds < 0) throw ConfigError("rounds must be >= 0, got " + std::to_string(rounds));
    if (clients < 1) throw ConfigError("clients must be >= 1, got " + std::to_string(clients));
    if (select_count < 1 || select_count > clients)
        throw ConfigError("select count must lie in [1, clients], got " + std::to_string(select_count));
    if (adv_count < 0) throw ConfigError("adversary count must be >= 0, got " + std::to_string(adv_count));
    if (schedule == Schedule::MethodI && adv_count > select_count)
        throw ConfigError("method 1 cannot place " + std::to_string(adv_count) + " adversaries in a selection of " +
                          std::to_string(select_count));
    if (schedule == Schedule::MethodII && adv_count > clients)
        throw ConfigError("method 2 cannot compromise " + std::to_string(adv_count) + " of " +
                          std::to_string(clients) + " clients");
    if (!(abr >= 0.0 && abr <= 1.0)) throw ConfigError("abr must lie in [0,1], got " + std::to_string(abr));
    if (local_epochs < 0) throw ConfigError("local epochs must be >= 0, got " + std::to_string(local_epochs));
    if (train_batch < 1) throw ConfigError("train batch size must be >= 1, got " + std::to_string(train_batch));
    if (!(lr > 0.0f)) throw ConfigError("learning rate must be > 0, got " + std::to_string(lr));
    if (!(loss_mix >= 0.0f && loss_mix <= 1.0f))
        throw ConfigError("loss mix must lie in [0,1], got " + std::to_string(loss_mix));
    if (threads < 1) throw ConfigError("threads must be >= 1, got " + std::to_string(threads));
    attack.validate();
}

std::vector<int> select_round_clients(Rng& rng, int total, int count) {
    if (total < 1) throw ConfigError("cannot select from " + std::to_string(total) + " clients");
    if (count < 1 || count > total)
        throw ConfigError("cannot select " + std::to_string(count) + " of " + std::to_string(total) + " clients");
    std::vector<int> pool(total);
    std::iota(pool.begin(), pool.end(), 0);
    return draw_subset(rng, std::move(pool), count);
}

std::vector<int> plan_adversaries_method1(Rng& rng, const std::vector<int>& round_clients, int adv_count) {
    if (adv_count < 0 || adv_count > static_cast<int>(round_clients.size()))
        throw ConfigError("cannot mark " + std::to_string(adv_count) + " adversaries in a round of " +
                          std::to_string(round_clients.size()) + " clients");
    if (adv_count == 0) return {};
    return draw_subset(rng, round_clients, adv_count);
}

std::vector<int> plan_adversaries_method2(Rng& rng, int total_clients, int adv_count) {
    if (total_clients < 1) throw ConfigError("cannot plan adversaries for " + std::to_string(total_clients) + " clients");
    if (adv_count < 0 || adv_count > total_clients)
        throw ConfigError("cannot compromise " + std::to_string(adv_count) + " of " + std::to_string(total_clients) +
                          " clients");
    if (adv_count == 0) return {};
    std::vector<int> pool(total_clients);
    std::iota(pool.begin(), pool.end(), 0);
    return draw_subset(rng, std::move(pool), adv_count);
}

namespace {

// shared body of the two local update flavours: attack == nullptr (or an
// adversarial batch count of zero) runs plain SGD and consumes the identical
// random stream, so abr = 0 matches local_update bit for bit
LocalUpdate run_local(const Model& global, const ClientData& client, int epochs, float lr, int batch,
                      const AttackConfig* attack, double abr, float loss_mix, Rng& rng) {
    validate_dataset(client.data);
    const int n = client.data.size();
    if (n == 0) throw InputError("client " + std::to_string(client.id) + " has no local samples");
    if (epochs < 0) throw ConfigError("local epochs must be >= 0");
    if (batch < 1) throw ConfigError("train batch size must be >= 1");

    Model local = global;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const int total_batches = (n + batch - 1) / batch;
    const int adv_batches = attack ? adversarial_batches(abr, total_batches) : 0;

    float last_epoch_loss = 0.0f;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int b = 0; b < total_batches; ++b) {
            const int first = b * batch;
            const int count = std::min(batch, n - first);
            LabeledDataset mb = client.data.subset(
                std::vector<int>(order.begin() + first, order.begin() + first + count));
            float batch_loss;
            if (b < adv_batches) {
                Tensor adv = perturb_batch(*attack, local, mb.images, mb.labels, rng);
                float clean_loss = 0.0f, adv_loss = 0.0f;
                GradientBundle gc = backward(local, mb.images, mb.labels, &clean_loss);
                GradientBundle ga = backward(local, adv, mb.labels, &adv_loss);
                // blend the two gradients with the same weights as the loss
                for (size_t t = 0; t < gc.param_grads.entries.size(); ++t) {
                    auto& dst = gc.param_grads.entries[t].second.data;
                    const auto& src = ga.param_grads.entries[t].second.data;
                    for (size_t i = 0; i < dst.size(); ++i)
                        dst[i] = loss_mix * dst[i] + (1.0f - loss_mix) * src[i];
                }
                local.params = sgd_step(local.params, gc.param_grads, lr);
                batch_loss = mixed_adversarial_loss(clean_loss, adv_loss, loss_mix);
            } else {
                GradientBundle g = backward(local, mb.images, mb.labels, &batch_loss);
                local.params = sgd_step(local.params, g.param_grads, lr);
            }
            epoch_loss += static_cast<double>(batch_loss) * count;
        }
        last_epoch_loss = static_cast<float>(epoch_loss / n);
    }
    return {std::move(local.params), n, last_epoch_loss};
}

}  // namespace

LocalUpdate local_update(const Model& global, const ClientData& client, int epochs, float lr,
                         int batch, Rng& rng) {
    return run_local(global, client, epochs, lr, batch, nullptr, 0.0, 1.0f, rng);
}

LocalUpdate adv_local_update(const Model& global, const ClientData& client, int epochs, float lr,
                             int batch, const AttackConfig& attack, double abr, float loss_mix, Rng& rng) {
    attack.validate();
    if (!(abr >= 0.0 && abr <= 1.0)) throw ConfigError("abr must lie in [0,1], got " + std::to_string(abr));
    if (!(loss_mix >= 0.0f && loss_mix <= 1.0f)) throw ConfigError("loss mix must lie in [0,1]");
    return run_local(global, client, epochs, lr, batch, &attack, abr, loss_mix, rng);
}

ParameterSet fedavg(const std::vector<LocalUpdate>& updates) {
    if (updates.empty()) throw InputError("fedavg needs at least one client update");
    long long total = 0;
    for (const auto& u : updates) {
        if (u.sample_count < 1) throw InputError("fedavg received a client update with no samples");
        if (!u.params.compatible_with(updates.front().params))
            throw InputError("fedavg received parameter sets with mismatching shapes");
        total += u.sample_count;
    }
    ParameterSet out = updates.front().params;
    for (auto& [name, tensor] : out.entries) std::fill(tensor.data.begin(), tensor.data.end(), 0.0f);
    // accumulate in double so the weighted mean is faithful to the scalar
    // definition and independent of the client count
    std::vector<double> acc;
    for (size_t t = 0; t < out.entries.size(); ++t) {
        auto& dst = out.entries[t].second.data;
        acc.assign(dst.size(), 0.0);
        for (const auto& u : updates) {
            const double coef = static_cast<double>(u.sample_count) / static_cast<double>(total);
            const auto& src = u.params.entries[t].second.data;
            for (size_t i = 0; i < src.size(); ++i) acc[i] += coef * src[i];
        }
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(acc[i]);
    }
    return out;
}

std::vector<ClientData> materialize_clients(const LabeledDataset& train, const PartitionPlan& plan) {
    validate_dataset(train);
    std::vector<ClientData> out;
    out.reserve(plan.assignments.size());
    for (int j = 0; j < plan.clients(); ++j) {
        ClientData cd;
        cd.id = j;
        cd.data = train.subset(plan.assignments[j]);
        if (cd.data.size() == 0) throw InputError("client " + std::to_string(j) + " received no samples");
        if (j < static_cast<int>(plan.manipulations.size()) && plan.manipulations[j])
            cd.data.images = apply_manipulation(cd.data.images, *plan.manipulations[j]);
        out.push_back(std::move(cd));
    }
    return out;
}

namespace {

std::vector<EvalReport> evaluate_round(const Model& model, const EvalJob& job, uint64_t seed, int round) {
    std::vector<EvalReport> reports;
    uint64_t stream = 0;
    for (EvalMode mode : job.modes) {
        const Model* surrogate = mode == EvalMode::Surrogate ? job.surrogate : nullptr;
        for (const auto& [tdt, ts] : job.test_sets) {
            EvalReport rep;
            rep.test_set = tdt;
            rep.mode = mode;
            rep.clean_accuracy = accuracy(model, ts, job.eval_batch);
            for (const auto& [name, cfg] : job.attacks) {
                int cap = cfg.kind == AttackConfig::Kind::Square ? job.square_sample_cap : 0;
                uint64_t eval_seed = mix_seed(seed, kSaltEval, static_cast<uint64_t>(round), stream++);
                rep.robust.emplace_back(name, robust_accuracy(model, ts, cfg, surrogate, eval_seed, cap, job.eval_batch));
            }
            reports.push_back(std::move(rep));
        }
    }
    return reports;
}

}  // namespace

ExperimentResult run_experiment(const FedConfig& config, const Model& init_model,
                                const std::vector<ClientData>& clients_data, const EvalJob& eval_job,
                                const std::function<void(int, const ParameterSet&)>& round_hook) {
    config.validate();
    if (static_cast<int>(clients_data.size()) != config.clients)
        throw InputError("experiment configured for " + std::to_string(config.clients) + " clients but got " +
                         std::to_string(clients_data.size()) + " datasets");
    for (const auto& cd : clients_data) validate_dataset(cd.data);
    bool wants_surrogate =
        std::find(eval_job.modes.begin(), eval_job.modes.end(), EvalMode::Surrogate) != eval_job.modes.end();
    if (wants_surrogate && !eval_job.surrogate) throw ConfigError("surrogate evaluation mode needs a surrogate model");

    Model model = init_model;

    std::vector<int> fixed_adversaries;
    if (config.schedule == Schedule::MethodII && config.adv_count > 0) {
        Rng rng(mix_seed(config.seed, kSaltMethod2));
        fixed_adversaries = plan_adversaries_method2(rng, config.clients, config.adv_count);
    }

    ExperimentResult result;
    for (int round = 0; round < config.rounds; ++round) {
        Rng round_rng(mix_seed(config.seed, kSaltRound, static_cast<uint64_t>(round)));
        std::vector<int> selected = select_round_clients(round_rng, config.clients, config.select_count);
        std::vector<int> adversaries;
        if (config.schedule == Schedule::MethodI) {
            adversaries = plan_adversaries_method1(round_rng, selected, config.adv_count);
        } else {
            std::set_intersection(fixed_adversaries.begin(), fixed_adversaries.end(), selected.begin(),
                                  selected.end(), std::back_inserter(adversaries));
        }

        std::vector<LocalUpdate> updates(selected.size());
        auto train_client = [&](size_t idx) {
            int cid = selected[idx];
            Rng crng(mix_seed(config.seed, kSaltClient, static_cast<uint64_t>(round), static_cast<uint64_t>(cid)));
            bool is_adv = std::binary_search(adversaries.begin(), adversaries.end(), cid);
            const ClientData& cd = clients_data[cid];
            updates[idx] = is_adv ? adv_local_update(model, cd, config.local_epochs, config.lr, config.train_batch,
                                                     config.attack, config.abr, config.loss_mix, crng)
                                  : local_update(model, cd, config.local_epochs, config.lr, config.train_batch, crng);
        };
        int workers = std::min<int>(config.threads, static_cast<int>(selected.size()));
        if (workers <= 1) {
            for (size_t idx = 0; idx < selected.size(); ++idx) train_client(idx);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(workers);
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    try {
                        for (size_t idx = w; idx < selected.size(); idx += workers) train_client(idx);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            for (auto& t : pool) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        model.params = fedavg(updates);

        RoundRecord rec;
        rec.round = round + 1;
        rec.selected = selected;
        rec.adversarial = adversaries;
        for (const auto& u : updates) rec.client_losses.push_back(u.final_loss);
        rec.evals = evaluate_round(model, eval_job, config.seed, round);
        result.records.push_back(std::move(rec));
        if (round_hook) round_hook(round + 1, model.params);
    }
    result.final_params = std::move(model.params);
    return result;
}

}  // namespace flats
