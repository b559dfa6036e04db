#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "flats/errors.hpp"
#include "flats/federated.hpp"
#include "flats/rng.hpp"

using namespace flats;

namespace {

// small federation fixture: 5 clients over a 3-class synthetic set
struct Fixture {
    LabeledDataset train = synth_dataset(31, 10, 3, 1, 8, 8);  // 30 samples
    Model model = make_model(small_cnn(2, 4, 8, 3), 1, 8, 8, 3, 17);
    std::vector<ClientData> clients;

    Fixture() {
        PartitionPlan plan = partition_iid(train, 5, 3);
        clients = materialize_clients(train, plan);
    }
};

FedConfig tiny_config() {
    FedConfig c;
    c.rounds = 3;
    c.clients = 5;
    c.select_count = 3;
    c.adv_count = 0;
    c.local_epochs = 2;
    c.train_batch = 4;
    c.lr = 0.05f;
    c.seed = 11;
    c.attack = AttackConfig::fgsm(0.1f);
    return c;
}

EvalJob tiny_eval(const LabeledDataset& test) {
    EvalJob job;
    job.test_sets.emplace_back(TestDataType::Clean, test);
    job.attacks.emplace_back("fgsm", AttackConfig::fgsm(0.1f));
    job.eval_batch = 8;
    return job;
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
    if (!a.compatible_with(b)) return false;
    for (size_t t = 0; t < a.entries.size(); ++t) {
        if (a.entries[t].second.data != b.entries[t].second.data) return false;
    }
    return true;
}

bool same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].round != b[i].round || a[i].selected != b[i].selected ||
            a[i].adversarial != b[i].adversarial || a[i].client_losses != b[i].client_losses)
            return false;
        if (a[i].evals.size() != b[i].evals.size()) return false;
        for (size_t e = 0; e < a[i].evals.size(); ++e) {
            if (a[i].evals[e].clean_accuracy != b[i].evals[e].clean_accuracy) return false;
            if (a[i].evals[e].robust != b[i].evals[e].robust) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("adversarial batch count is a guarded ceiling") {
    CHECK(adversarial_batches(0.0, 10) == 0);
    CHECK(adversarial_batches(1.0, 10) == 10);
    CHECK(adversarial_batches(0.5, 10) == 5);
    CHECK(adversarial_batches(0.55, 10) == 6);
    CHECK(adversarial_batches(0.1, 10) == 1);  // exact product must not round up to 2
    CHECK(adversarial_batches(0.7, 10) == 7);
    CHECK(adversarial_batches(2.0 / 3.0, 3) == 2);
    CHECK(adversarial_batches(0.2, 3) == 1);
    CHECK(adversarial_batches(0.3, 1) == 1);
    CHECK(adversarial_batches(1e-6, 5) == 1);  // any positive rate attacks at least one
}

TEST_CASE("round selection draws sorted distinct clients") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> sel = select_round_clients(rng, 7, 3);
        REQUIRE(sel.size() == 3);
        CHECK(std::is_sorted(sel.begin(), sel.end()));
        CHECK(std::adjacent_find(sel.begin(), sel.end()) == sel.end());
        for (int c : sel) {
            CHECK(c >= 0);
            CHECK(c < 7);
        }
    }
    std::vector<int> all = select_round_clients(rng, 4, 4);
    CHECK(all == std::vector<int>{0, 1, 2, 3});

    // every client appears at roughly the expected rate
    std::vector<int> hits(5, 0);
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        for (int c : select_round_clients(rng, 5, 2)) hits[static_cast<size_t>(c)]++;
    }
    for (int h : hits) {
        CHECK(h > trials * 0.32);
        CHECK(h < trials * 0.48);
    }

    CHECK_THROWS_AS(select_round_clients(rng, 0, 1), ConfigError);
    CHECK_THROWS_AS(select_round_clients(rng, 4, 5), ConfigError);
    CHECK_THROWS_AS(select_round_clients(rng, 4, 0), ConfigError);
}

TEST_CASE("method one picks adversaries inside the round selection") {
    Rng rng(2);
    const std::vector<int> sel = {1, 4, 6, 9};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> adv = plan_adversaries_method1(rng, sel, 2);
        REQUIRE(adv.size() == 2);
        CHECK(std::is_sorted(adv.begin(), adv.end()));
        for (int a : adv) CHECK(std::find(sel.begin(), sel.end(), a) != sel.end());
    }
    CHECK(plan_adversaries_method1(rng, sel, 0).empty());
    CHECK(plan_adversaries_method1(rng, sel, 4) == sel);
    CHECK_THROWS_AS(plan_adversaries_method1(rng, sel, 5), ConfigError);
}

TEST_CASE("method two fixes adversaries over the whole client set") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> adv = plan_adversaries_method2(rng, 6, 2);
        REQUIRE(adv.size() == 2);
        CHECK(std::is_sorted(adv.begin(), adv.end()));
        for (int a : adv) {
            CHECK(a >= 0);
            CHECK(a < 6);
        }
    }
    CHECK(plan_adversaries_method2(rng, 6, 0).empty());
    CHECK_THROWS_AS(plan_adversaries_method2(rng, 6, 7), ConfigError);
    CHECK_THROWS_AS(plan_adversaries_method2(rng, 0, 0), ConfigError);
}

TEST_CASE("federated config validation names the offending field") {
    FedConfig good = tiny_config();
    good.validate();

    auto expect_bad = [&](auto&& mutate) {
        FedConfig c = tiny_config();
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    expect_bad([](FedConfig& c) { c.rounds = -1; });
    expect_bad([](FedConfig& c) { c.clients = 0; });
    expect_bad([](FedConfig& c) { c.select_count = 0; });
    expect_bad([](FedConfig& c) { c.select_count = 6; });
    expect_bad([](FedConfig& c) { c.adv_count = -1; });
    expect_bad([](FedConfig& c) { c.adv_count = 4; });  // method 1: above select_count
    expect_bad([](FedConfig& c) {
        c.schedule = Schedule::MethodII;
        c.adv_count = 6;  // method 2: above client count
    });
    expect_bad([](FedConfig& c) { c.abr = -0.1; });
    expect_bad([](FedConfig& c) { c.abr = 1.1; });
    expect_bad([](FedConfig& c) { c.local_epochs = -1; });
    expect_bad([](FedConfig& c) { c.train_batch = 0; });
    expect_bad([](FedConfig& c) { c.lr = 0.0f; });
    expect_bad([](FedConfig& c) { c.loss_mix = 1.5f; });
    expect_bad([](FedConfig& c) { c.threads = 0; });
    expect_bad([](FedConfig& c) { c.attack.epsilon = 2.0f; });

    // method 2 tolerates more adversaries than the per-round selection
    FedConfig m2 = tiny_config();
    m2.schedule = Schedule::MethodII;
    m2.adv_count = 5;
    m2.validate();
}

TEST_CASE("zero local epochs keep the global weights") {
    Fixture f;
    Rng rng(4);
    LocalUpdate u = local_update(f.model, f.clients[0], 0, 0.05f, 4, rng);
    CHECK(same_params(u.params, f.model.params));
    CHECK(u.sample_count == f.clients[0].data.size());
    CHECK(u.final_loss == 0.0f);
}

TEST_CASE("local update is deterministic and moves the weights") {
    Fixture f;
    Rng r1(5), r2(5), r3(6);
    LocalUpdate a = local_update(f.model, f.clients[1], 2, 0.05f, 4, r1);
    LocalUpdate b = local_update(f.model, f.clients[1], 2, 0.05f, 4, r2);
    LocalUpdate c = local_update(f.model, f.clients[1], 2, 0.05f, 4, r3);
    CHECK(same_params(a.params, b.params));
    CHECK(!same_params(a.params, f.model.params));
    CHECK(!same_params(a.params, c.params));  // different shuffle order
    CHECK(a.final_loss == b.final_loss);
    CHECK(a.final_loss > 0.0f);
}

TEST_CASE("zero attack ratio reproduces the plain update bit for bit") {
    Fixture f;
    Rng r1(7), r2(7);
    LocalUpdate plain = local_update(f.model, f.clients[2], 2, 0.05f, 4, r1);
    LocalUpdate adv = adv_local_update(f.model, f.clients[2], 2, 0.05f, 4,
                                       AttackConfig::ffgsm(0.1f, 0.12f), 0.0, 0.5f, r2);
    CHECK(same_params(plain.params, adv.params));
    CHECK(plain.final_loss == adv.final_loss);

    // a full attack ratio must actually change the trajectory
    Rng r3(7);
    LocalUpdate hot = adv_local_update(f.model, f.clients[2], 2, 0.05f, 4,
                                       AttackConfig::ffgsm(0.1f, 0.12f), 1.0, 0.5f, r3);
    CHECK(!same_params(plain.params, hot.params));

    CHECK_THROWS_AS(adv_local_update(f.model, f.clients[2], 2, 0.05f, 4, AttackConfig::ffgsm(0.1f, 0.12f),
                                     1.5, 0.5f, r3),
                    ConfigError);
}

TEST_CASE("fedavg hand cases") {
    auto one = [](float v, int count) {
        LocalUpdate u;
        u.params.add("w", Tensor({1}, std::vector<float>{v}));
        u.sample_count = count;
        return u;
    };

    // single client: identity
    ParameterSet alone = fedavg({one(0.625f, 7)});
    CHECK(alone.entries[0].second.data[0] == 0.625f);

    // equal sizes: plain mean
    ParameterSet mean = fedavg({one(2.0f, 3), one(4.0f, 3)});
    CHECK(mean.entries[0].second.data[0] == 3.0f);

    // sizes 1 and 3: weighted mean 0.25 * 0 + 0.75 * 4
    ParameterSet weighted = fedavg({one(0.0f, 1), one(4.0f, 3)});
    CHECK(weighted.entries[0].second.data[0] == 3.0f);

    // permutation invariance on exact inputs
    ParameterSet flipped = fedavg({one(4.0f, 3), one(0.0f, 1)});
    CHECK(flipped.entries[0].second.data[0] == weighted.entries[0].second.data[0]);

    CHECK_THROWS_AS(fedavg({}), InputError);
    CHECK_THROWS_AS(fedavg({one(1.0f, 0)}), InputError);
    LocalUpdate other;
    other.params.add("v", Tensor({1}, std::vector<float>{1.0f}));
    other.sample_count = 1;
    CHECK_THROWS_AS(fedavg({one(1.0f, 1), other}), InputError);
}

TEST_CASE("fedavg matches a per-scalar oracle on random updates") {
    Rng rng(8);
    const std::vector<int> sizes = {1, 2, 3, 10};
    std::vector<LocalUpdate> updates;
    for (int s : sizes) {
        LocalUpdate u;
        Tensor a({3}), b({2, 2});
        for (auto& v : a.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        for (auto& v : b.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        u.params.add("a", a);
        u.params.add("b", b);
        u.sample_count = s;
        updates.push_back(std::move(u));
    }
    ParameterSet avg = fedavg(updates);

    // scalar oracle: double arithmetic, rounded to the storage precision last
    const double total = 16.0;
    for (size_t t = 0; t < avg.entries.size(); ++t) {
        for (size_t i = 0; i < avg.entries[t].second.data.size(); ++i) {
            double want = 0.0;
            for (size_t u = 0; u < updates.size(); ++u) {
                want += (sizes[u] / total) *
                        static_cast<double>(updates[u].params.entries[t].second.data[i]);
            }
            CHECK(std::abs(avg.entries[t].second.data[i] - static_cast<float>(want)) <= 1e-9);
        }
    }

    // shuffling the client order must not move the aggregate
    std::vector<LocalUpdate> shuffled = {updates[3], updates[0], updates[2], updates[1]};
    CHECK(same_params(fedavg(shuffled), avg));
}

TEST_CASE("materialize clients applies the partition and its manipulations") {
    LabeledDataset train = synth_dataset(32, 6, 2, 1, 4, 4);
    PartitionPlan plan = partition_iid(train, 3, 9);
    plan.manipulations[1] = ManipulationSpec{ManipulationSpec::Kind::Brightness, 2.0f, 2, 0.5f};

    std::vector<ClientData> clients = materialize_clients(train, plan);
    REQUIRE(clients.size() == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(clients[static_cast<size_t>(j)].id == j);
        CHECK(clients[static_cast<size_t>(j)].data.size() ==
              static_cast<int>(plan.assignments[static_cast<size_t>(j)].size()));
    }
    // client 1 sees brightened pixels, client 0 the originals
    LabeledDataset raw0 = train.subset(plan.assignments[0]);
    CHECK(clients[0].data.images.data == raw0.images.data);
    LabeledDataset raw1 = train.subset(plan.assignments[1]);
    CHECK(clients[1].data.images.data == apply_brightness(raw1.images, 2.0f).data);
}

TEST_CASE("zero rounds return the initial weights untouched") {
    Fixture f;
    FedConfig cfg = tiny_config();
    cfg.rounds = 0;
    ExperimentResult res = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train));
    CHECK(res.records.empty());
    CHECK(same_params(res.final_params, f.model.params));
}

TEST_CASE("experiment records are well-formed") {
    Fixture f;
    FedConfig cfg = tiny_config();
    cfg.adv_count = 2;
    ExperimentResult res = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train));
    REQUIRE(res.records.size() == 3);
    for (size_t i = 0; i < res.records.size(); ++i) {
        const RoundRecord& rec = res.records[i];
        CHECK(rec.round == static_cast<int>(i) + 1);
        CHECK(rec.selected.size() == 3);
        CHECK(std::is_sorted(rec.selected.begin(), rec.selected.end()));
        CHECK(rec.adversarial.size() == 2);
        for (int a : rec.adversarial) {
            CHECK(std::binary_search(rec.selected.begin(), rec.selected.end(), a));
        }
        CHECK(rec.client_losses.size() == 3);
        REQUIRE(rec.evals.size() == 1);
        const EvalReport& rep = rec.evals[0];
        CHECK(rep.test_set == TestDataType::Clean);
        CHECK(rep.mode == EvalMode::WhiteBox);
        CHECK(rep.clean_accuracy >= 0.0);
        CHECK(rep.clean_accuracy <= 1.0);
        CHECK(rep.robust_for("fgsm") >= 0.0);
        CHECK(rep.robust_for("square") == -1.0);
    }
}

TEST_CASE("experiments are reproducible and thread-invariant") {
    Fixture f;
    FedConfig cfg = tiny_config();
    cfg.adv_count = 1;
    ExperimentResult a = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train));
    ExperimentResult b = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train));
    CHECK(same_params(a.final_params, b.final_params));
    CHECK(same_records(a.records, b.records));

    FedConfig threaded = cfg;
    threaded.threads = 3;
    ExperimentResult c = run_experiment(threaded, f.model, f.clients, tiny_eval(f.train));
    CHECK(same_params(a.final_params, c.final_params));
    CHECK(same_records(a.records, c.records));
}

TEST_CASE("method two adversaries come from one fixed set") {
    Fixture f;
    FedConfig cfg = tiny_config();
    cfg.schedule = Schedule::MethodII;
    cfg.adv_count = 1;
    cfg.rounds = 12;
    ExperimentResult res = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train));

    std::set<int> seen;
    int with_adv = 0, without_adv = 0;
    for (const RoundRecord& rec : res.records) {
        CHECK(rec.adversarial.size() <= 1);
        if (rec.adversarial.empty()) {
            ++without_adv;
        } else {
            ++with_adv;
            seen.insert(rec.adversarial[0]);
            CHECK(std::binary_search(rec.selected.begin(), rec.selected.end(), rec.adversarial[0]));
        }
    }
    CHECK(seen.size() <= 1);  // the compromised set never changes
    CHECK(with_adv > 0);      // selecting 3 of 5 hits it most rounds

    // compromising everyone makes every selection fully adversarial
    FedConfig all = cfg;
    all.adv_count = 5;
    ExperimentResult full = run_experiment(all, f.model, f.clients, tiny_eval(f.train));
    for (const RoundRecord& rec : full.records) CHECK(rec.adversarial == rec.selected);
}

TEST_CASE("round hook sees every aggregated model") {
    Fixture f;
    FedConfig cfg = tiny_config();
    std::vector<int> rounds_seen;
    ParameterSet last;
    ExperimentResult res = run_experiment(cfg, f.model, f.clients, tiny_eval(f.train),
                                          [&](int round, const ParameterSet& params) {
                                              rounds_seen.push_back(round);
                                              last = params;
                                          });
    CHECK(rounds_seen == std::vector<int>{1, 2, 3});
    CHECK(same_params(last, res.final_params));
}

TEST_CASE("experiment input validation") {
    Fixture f;
    FedConfig cfg = tiny_config();
    std::vector<ClientData> four(f.clients.begin(), f.clients.end() - 1);
    CHECK_THROWS_AS(run_experiment(cfg, f.model, four, tiny_eval(f.train)), InputError);

    EvalJob surro = tiny_eval(f.train);
    surro.modes = {EvalMode::Surrogate};
    CHECK_THROWS_AS(run_experiment(cfg, f.model, f.clients, surro), ConfigError);
}
