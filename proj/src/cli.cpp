#include "flats/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "flats/errors.hpp"
#include "flats/eval.hpp"

namespace fs = std::filesystem;

namespace flats {

namespace {

// dataset / model / surrogate seeds all derive from the experiment seed
constexpr uint64_t kSaltTrainData = 0xDA7A;
constexpr uint64_t kSaltPartition = 0x9A87;
constexpr uint64_t kSaltManip = 0x3A01;
constexpr uint64_t kSaltModel = 0x10DE1;
constexpr uint64_t kSaltSurrogate = 0x5A90;

ManipulationSpec manip_from_config(const ExperimentConfig& cfg) {
    ManipulationSpec spec;
    if (cfg.manip_kind == "brightness") {
        spec.kind = ManipulationSpec::Kind::Brightness;
        spec.brightness_ratio = static_cast<float>(cfg.manip_br);
    } else if (cfg.manip_kind == "pixel") {
        spec.kind = ManipulationSpec::Kind::PixelDegrade;
        spec.degrade_factor = cfg.manip_factor;
    } else {
        spec.kind = ManipulationSpec::Kind::EyeOcclusion;
        spec.occlusion_fraction = static_cast<float>(cfg.manip_fraction);
    }
    return spec;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

void write_text(const std::string& path, const std::string& payload) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << payload;
    if (!out.good()) throw IoError("failed while writing '" + path + "'");
}

}  // namespace

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
    validate_config(cfg);
    ExperimentSetup s;

    if (cfg.dataset == "idx") {
        s.train = load_idx(cfg.idx_train_images, cfg.idx_train_labels);
        s.test = load_idx(cfg.idx_test_images, cfg.idx_test_labels);
        if (s.train.classes != s.test.classes)
            s.train.classes = s.test.classes = std::max(s.train.classes, s.test.classes);
    } else {
        // one pool per class, held-out tail becomes the test split so both
        // sides share the class patterns and differ only in sample noise
        const int chunk = cfg.synth_per_class + cfg.synth_test_per_class;
        LabeledDataset full = synth_dataset(mix_seed(cfg.seed, kSaltTrainData), chunk, cfg.synth_classes,
                                            cfg.channels, cfg.height, cfg.width);
        std::vector<int> train_idx, test_idx;
        for (int k = 0; k < cfg.synth_classes; ++k) {
            for (int i = 0; i < cfg.synth_per_class; ++i) train_idx.push_back(k * chunk + i);
            for (int i = cfg.synth_per_class; i < chunk; ++i) test_idx.push_back(k * chunk + i);
        }
        s.train = full.subset(train_idx);
        s.test = full.subset(test_idx);
    }

    if (cfg.partition == "noniid") {
        s.plan = partition_noniid(s.train, cfg.clients, mix_seed(cfg.seed, kSaltPartition),
                                  cfg.noniid_concentration, cfg.noniid_size_spread);
    } else {
        s.plan = partition_iid(s.train, cfg.clients, mix_seed(cfg.seed, kSaltPartition));
    }
    if (cfg.manip_clients > 0) {
        Rng rng(mix_seed(cfg.seed, kSaltManip));
        ManipulationSpec spec = manip_from_config(cfg);
        for (int id : select_round_clients(rng, cfg.clients, cfg.manip_clients)) s.plan.manipulations[id] = spec;
    }
    s.clients = materialize_clients(s.train, s.plan);

    const int c = s.train.images.dim(1), h = s.train.images.dim(2), w = s.train.images.dim(3);
    s.model = make_model(small_cnn(cfg.conv1_filters, cfg.conv2_filters, cfg.hidden, s.train.classes), c, h, w,
                         s.train.classes, mix_seed(cfg.seed, kSaltModel));

    s.use_surrogate = cfg.eval_mode != "white-box";
    if (s.use_surrogate) {
        s.surrogate = make_model(small_mlp(cfg.surrogate_hidden, s.train.classes), c, h, w, s.train.classes,
                                 mix_seed(cfg.seed, kSaltSurrogate, 1));
        Rng rng(mix_seed(cfg.seed, kSaltSurrogate, 2));
        ClientData all{-1, s.train};
        s.surrogate.params = local_update(s.surrogate, all, cfg.surrogate_epochs,
                                          static_cast<float>(cfg.surrogate_lr), cfg.train_batch, rng)
                                 .params;
    }

    for (const auto& name : split_csv(cfg.test_sets))
        s.eval_job.test_sets.emplace_back(tdt_from_name(name),
                                          build_test_set(s.test, tdt_from_name(name),
                                                         static_cast<float>(cfg.br_dark),
                                                         static_cast<float>(cfg.br_bright)));
    s.eval_job.modes.clear();
    if (cfg.eval_mode == "white-box" || cfg.eval_mode == "both") s.eval_job.modes.push_back(EvalMode::WhiteBox);
    if (cfg.eval_mode == "surrogate" || cfg.eval_mode == "both") s.eval_job.modes.push_back(EvalMode::Surrogate);
    for (const auto& name : split_csv(cfg.eval_attacks)) s.eval_job.attacks.emplace_back(name, make_attack(cfg, name));
    s.eval_job.surrogate = s.use_surrogate ? &s.surrogate : nullptr;
    s.eval_job.square_sample_cap = cfg.square_eval_samples;
    s.eval_job.eval_batch = cfg.eval_batch;
    return s;
}

namespace {

std::string summary_line(const std::vector<EvalReport>& evals) {
    std::string line = "global=";
    if (evals.empty()) return line + "n/a robust_fgsm=n/a robust_ffgsm=n/a robust_square=n/a";
    const EvalReport& head = evals.front();
    line += fmt4(head.clean_accuracy);
    for (const char* name : {"fgsm", "ffgsm", "square"}) {
        double v = head.robust_for(name);
        line += std::string(" robust_") + name + "=" + (v >= 0.0 ? fmt4(v) : "n/a");
    }
    return line;
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg) {
    ExperimentSetup s = build_setup(cfg);
    fs::create_directories(cfg.out);
    write_text((fs::path(cfg.out) / "config.resolved").string(), render_config(cfg));

    for (int i = 0; i < std::min(cfg.dump_samples, s.test.size()); ++i)
        dump_ppm(s.test.images, i, (fs::path(cfg.out) / ("sample_" + std::to_string(i) + ".ppm")).string());

    std::function<void(int, const ParameterSet&)> hook;
    if (cfg.checkpoint_every > 0)
        hook = [&](int round, const ParameterSet& params) {
            if (round % cfg.checkpoint_every == 0 || round == cfg.rounds)
                save_params(params,
                            (fs::path(cfg.out) / ("checkpoint_round_" + std::to_string(round) + ".bin")).string());
        };

    ExperimentResult result = run_experiment(to_fed_config(cfg), s.model, s.clients, s.eval_job, hook);
    write_round_csv(result.records, (fs::path(cfg.out) / "rounds.csv").string());
    if (cfg.plot_files) write_plot_files(result.records, (fs::path(cfg.out) / "plots").string());
    save_params(result.final_params, (fs::path(cfg.out) / "checkpoint_final.bin").string());

    std::vector<EvalReport> final_evals;
    if (!result.records.empty()) {
        final_evals = result.records.back().evals;
    } else {
        // nothing trained: summarise the freshly initialised model
        Model m = s.model;
        m.params = result.final_params;
        final_evals.push_back({s.eval_job.test_sets.empty() ? TestDataType::Clean : s.eval_job.test_sets[0].first,
                               EvalMode::WhiteBox,
                               s.eval_job.test_sets.empty() ? 0.0 : accuracy(m, s.eval_job.test_sets[0].second),
                               {}});
    }
    std::cout << summary_line(final_evals) << "\n";
    return 0;
}

int cmd_attack_demo(const ExperimentConfig& cfg, const std::string& checkpoint_path, int sample_index) {
    ExperimentSetup s = build_setup(cfg);
    if (sample_index < 0 || sample_index >= s.test.size())
        throw InputError("sample index " + std::to_string(sample_index) + " out of range [0, " +
                         std::to_string(s.test.size()) + ")");
    Model model = s.model;
    ParameterSet loaded = load_params(checkpoint_path);
    if (!loaded.compatible_with(model.params))
        throw ConfigError("checkpoint '" + checkpoint_path + "' does not match the configured architecture");
    model.params = loaded;

    LabeledDataset sample = s.test.slice(sample_index, 1);
    const int label = sample.labels[0];
    GradientOracle grad_oracle(model);
    PredictionOracle pred_oracle(model);

    auto predict = [&](const Tensor& batch) {
        Tensor logits = forward(model, batch);
        int best = 0;
        for (int j = 1; j < logits.shape[1]; ++j)
            if (logits.ptr()[j] > logits.ptr()[best]) best = j;
        return best;
    };
    const int pred_before = predict(sample.images);

    fs::create_directories(cfg.out);
    dump_ppm(sample.images, 0, (fs::path(cfg.out) / "demo_original.ppm").string());

    std::string report = "sample " + std::to_string(sample_index) + ": label " + std::to_string(label) +
                         ", predicted " + std::to_string(pred_before) + "\n";
    for (const char* name : {"fgsm", "ffgsm", "square"}) {
        AttackConfig attack = make_attack(cfg, name);
        Rng rng(mix_seed(cfg.seed, 0xDE30, static_cast<uint64_t>(sample_index)));
        Tensor adv;
        std::string extra;
        if (attack.kind == AttackConfig::Kind::Square) {
            Tensor x{{sample.images.dim(1), sample.images.dim(2), sample.images.dim(3)}, sample.images.data};
            SquareResult res = square_attack(pred_oracle, x, label, attack, rng);
            adv = Tensor{sample.images.shape, res.x_adv.data};
            extra = " queries=" + std::to_string(res.queries_used);
        } else {
            adv = perturb_batch(attack, model, sample.images, sample.labels, rng);
        }
        const int pred_after = predict(adv);
        dump_ppm(adv, 0, (fs::path(cfg.out) / (std::string("demo_") + name + ".ppm")).string());
        report += std::string(name) + ": pred " + std::to_string(pred_before) + " -> " + std::to_string(pred_after) +
                  " linf=" + fmt4(linf_distance(sample.images, adv)) +
                  " flipped=" + (pred_after != label ? "yes" : "no") + extra + "\n";
    }
    write_text((fs::path(cfg.out) / "demo_report.txt").string(), report);
    std::cout << report;
    return 0;
}

int cmd_partition_inspect(const ExperimentConfig& cfg) {
    ExperimentSetup s = build_setup(cfg);
    std::cout << "partition=" << cfg.partition << " clients=" << cfg.clients << " samples=" << s.train.size()
              << " classes=" << s.train.classes << "\n";
    for (const auto& cd : s.clients) {
        std::vector<int> hist(s.train.classes, 0);
        for (int y : cd.data.labels) ++hist[y];
        std::cout << "client " << cd.id << ": " << cd.data.size() << " samples, labels [";
        for (int k = 0; k < s.train.classes; ++k) std::cout << (k ? " " : "") << hist[k];
        std::cout << "], manipulation "
                  << (s.plan.manipulations[cd.id] ? s.plan.manipulations[cd.id]->describe() : std::string("none"))
                  << "\n";
    }
    return 0;
}

namespace {

void print_usage(std::ostream& os) {
    os << "usage: flats <run|attack-demo|partition-inspect> [options]\n"
          "\n"
          "options:\n"
          "  --config FILE        read key=value lines (# comments) before applying flags\n"
          "  --KEY VALUE          override any config key, e.g. --rounds 10 --abr 0.5\n"
          "  --checkpoint FILE    weights to attack (attack-demo only)\n"
          "  --sample N           test sample index for attack-demo (default 0)\n"
          "  --help               this text\n"
          "\n"
          "config keys:\n";
    int col = 0;
    for (const auto& k : config_keys()) {
        os << (col == 0 ? "  " : " ") << k;
        if (++col == 5) {
            os << "\n";
            col = 0;
        }
    }
    if (col) os << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    const char* stage = "config";
    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        if (args.empty() || args[0] == "--help" || args[0] == "-h") {
            print_usage(args.empty() ? std::cerr : std::cout);
            return args.empty() ? 2 : 0;
        }
        const std::string sub = args[0];
        if (sub != "run" && sub != "attack-demo" && sub != "partition-inspect")
            throw ConfigError("unknown subcommand '" + sub + "' (expected run, attack-demo or partition-inspect)");

        std::optional<std::string> config_file;
        std::vector<std::pair<std::string, std::string>> overrides;
        std::string checkpoint;
        int sample = 0;
        for (size_t i = 1; i < args.size(); ++i) {
            std::string arg = args[i];
            if (arg == "--help" || arg == "-h") {
                print_usage(std::cout);
                return 0;
            }
            if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
            arg = arg.substr(2);
            std::string value;
            if (size_t eq = arg.find('='); eq != std::string::npos) {
                value = arg.substr(eq + 1);
                arg = arg.substr(0, eq);
            } else {
                if (i + 1 >= args.size()) throw ConfigError("flag '--" + arg + "' needs a value");
                value = args[++i];
            }
            if (arg == "config")
                config_file = value;
            else if (arg == "checkpoint")
                checkpoint = value;
            else if (arg == "sample") {
                char* end = nullptr;
                sample = static_cast<int>(std::strtol(value.c_str(), &end, 10));
                if (end == value.c_str() || *end != '\0')
                    throw ConfigError("flag '--sample': cannot parse '" + value + "' as an integer");
            }
            else
                overrides.emplace_back(arg, value);
        }

        ExperimentConfig cfg = parse_config(config_file, overrides);
        validate_config(cfg);
        stage = "run";
        if (sub == "run") return cmd_run(cfg);
        if (sub == "partition-inspect") return cmd_partition_inspect(cfg);
        if (checkpoint.empty()) throw ConfigError("attack-demo needs --checkpoint FILE");
        return cmd_attack_demo(cfg, checkpoint, sample);
    } catch (const ConfigError& e) {
        std::cerr << "flats: " << stage << " error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "flats: " << stage << " error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace flats
