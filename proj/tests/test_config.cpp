#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "flats/cli.hpp"
#include "flats/config.hpp"
#include "flats/errors.hpp"

using namespace flats;
namespace fs = std::filesystem;

namespace {

std::string write_temp_config(const std::string& name, const std::string& body) {
    const fs::path path = fs::temp_directory_path() / name;
    std::ofstream os(path);
    os << body;
    return path.string();
}

// the ConfigError text for a call, empty if it unexpectedly succeeds
template <class F>
std::string config_error_text(F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("defaults survive a render-parse round trip") {
    ExperimentConfig defaults;
    const std::string rendered = render_config(defaults);
    const std::string file = write_temp_config("flats_cfg_roundtrip.cfg", rendered);
    ExperimentConfig reparsed = parse_config(file, {});
    CHECK(render_config(reparsed) == rendered);
    fs::remove(file);

    // every advertised key appears exactly once in the rendering
    for (const std::string& key : config_keys()) {
        const std::string needle = key + "=";
        size_t first = rendered.find("\n" + needle);
        bool at_start = rendered.rfind(needle, 0) == 0;
        CHECK((at_start || first != std::string::npos));
    }
    CHECK(config_keys().size() > 40);
    validate_config(defaults);
}

TEST_CASE("config files allow comments and whitespace, overrides win") {
    const std::string file = write_temp_config("flats_cfg_basic.cfg",
                                               "# experiment shape\n"
                                               "rounds = 7   # trailing comment\n"
                                               "\n"
                                               "  lr=0.25\n"
                                               "attack=fgsm\n");
    ExperimentConfig cfg = parse_config(file, {{"lr", "0.125"}, {"clients", "9"}});
    CHECK(cfg.rounds == 7);
    CHECK(cfg.lr == 0.125);  // the command line override beats the file
    CHECK(cfg.clients == 9);
    CHECK(cfg.attack == "fgsm");
    CHECK(cfg.select == 4);  // untouched keys keep their defaults
    fs::remove(file);
}

TEST_CASE("config errors name the offending key") {
    ExperimentConfig cfg;
    CHECK_THROWS_AS(set_config_key(cfg, "no_such_knob", "1"), ConfigError);
    CHECK(config_error_text([&] { set_config_key(cfg, "no_such_knob", "1"); }).find("no_such_knob") !=
          std::string::npos);
    CHECK(config_error_text([&] { set_config_key(cfg, "rounds", "many"); }).find("rounds") !=
          std::string::npos);
    CHECK_THROWS_AS(set_config_key(cfg, "lr", "fast"), ConfigError);
    CHECK_THROWS_AS(set_config_key(cfg, "plot_files", "maybe"), ConfigError);
    CHECK_THROWS_AS(set_config_key(cfg, "rounds", "99999999999999999999"), ConfigError);

    set_config_key(cfg, "plot_files", "yes");
    CHECK(cfg.plot_files);
    set_config_key(cfg, "plot_files", "off");
    CHECK(!cfg.plot_files);
    set_config_key(cfg, "seed", "18446744073709551615");
    CHECK(cfg.seed == UINT64_MAX);

    CHECK_THROWS_AS(parse_config(std::string("/definitely/not/here.cfg"), {}), IoError);
    const std::string file = write_temp_config("flats_cfg_broken.cfg", "rounds 7\n");
    CHECK_THROWS_AS(parse_config(file, {}), ConfigError);
    fs::remove(file);
}

TEST_CASE("a full-scale experiment shape validates") {
    ExperimentConfig cfg;
    cfg.rounds = 30;
    cfg.clients = 5;
    cfg.select = 4;
    cfg.adv_clients = 3;
    cfg.method = 2;
    cfg.abr = 1.0;
    cfg.local_epochs = 5;
    cfg.train_batch = 64;
    cfg.lr = 0.5;
    cfg.attack = "ffgsm";
    cfg.epsilon = 8.0 / 255.0;
    cfg.step_size = 10.0 / 255.0;
    cfg.square_queries = 2000;
    cfg.square_restarts = 1;
    cfg.square_loss = "ce";
    cfg.partition = "noniid";
    cfg.manip_clients = 2;
    cfg.manip_kind = "occlusion";
    cfg.manip_fraction = 120.0 / 224.0;
    cfg.test_sets = "clean,bright_clean,dark_clean,bright_dark_clean";
    cfg.eval_attacks = "fgsm,ffgsm,square";
    cfg.eval_mode = "both";
    validate_config(cfg);
}

TEST_CASE("cross-field validation rejects out-of-range combinations") {
    auto bad = [](auto&& mutate) {
        ExperimentConfig cfg;
        mutate(cfg);
        return config_error_text([&] { validate_config(cfg); });
    };
    CHECK(bad([](ExperimentConfig& c) { c.method = 3; }).find("method") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.epsilon = 0.0; }).find("epsilon") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.abr = 1.5; }).find("abr") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.select = 9; }) != "");
    CHECK(bad([](ExperimentConfig& c) { c.dataset = "imagenet"; }).find("dataset") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.partition = "striped"; }).find("partition") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) {
              c.manip_clients = 1;
              c.manip_kind = "blur";
          }).find("manip_kind") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.test_sets = "clean,shiny"; }) != "");
    CHECK(bad([](ExperimentConfig& c) { c.test_sets = ""; }).find("test_sets") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.eval_mode = "sideways"; }).find("eval_mode") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.square_eval_samples = -1; }).find("square_eval_samples") !=
          std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.dataset = "idx"; }).find("idx") != std::string::npos);
    CHECK(bad([](ExperimentConfig& c) { c.eval_attacks = "fgsm,psgd"; }) != "");
}

TEST_CASE("attack construction maps the config fields") {
    ExperimentConfig cfg;
    cfg.epsilon = 0.3;
    cfg.step_size = 0.35;
    cfg.square_queries = 77;
    cfg.square_restarts = 2;
    cfg.square_loss = "margin";

    AttackConfig f = make_attack(cfg, "fgsm");
    CHECK(f.kind == AttackConfig::Kind::Fgsm);
    CHECK(f.epsilon == 0.3f);

    AttackConfig ff = make_attack(cfg, "ffgsm");
    CHECK(ff.kind == AttackConfig::Kind::Ffgsm);
    CHECK(ff.step_size == 0.35f);

    AttackConfig sq = make_attack(cfg, "square");
    CHECK(sq.kind == AttackConfig::Kind::Square);
    CHECK(sq.n_queries == 77);
    CHECK(sq.n_restarts == 2);
    CHECK(sq.loss_kind == AttackConfig::SquareLoss::Margin);

    CHECK_THROWS_AS(make_attack(cfg, "pgd"), ConfigError);
    cfg.square_loss = "hinge";
    CHECK_THROWS_AS(make_attack(cfg, "square"), ConfigError);
}

TEST_CASE("federated config conversion carries every field") {
    ExperimentConfig cfg;
    cfg.rounds = 12;
    cfg.clients = 8;
    cfg.select = 6;
    cfg.adv_clients = 2;
    cfg.method = 2;
    cfg.abr = 0.75;
    cfg.local_epochs = 3;
    cfg.train_batch = 16;
    cfg.lr = 0.2;
    cfg.loss_mix = 0.25;
    cfg.seed = 99;
    cfg.threads = 4;
    FedConfig f = to_fed_config(cfg);
    CHECK(f.rounds == 12);
    CHECK(f.clients == 8);
    CHECK(f.select_count == 6);
    CHECK(f.adv_count == 2);
    CHECK(f.schedule == Schedule::MethodII);
    CHECK(f.abr == 0.75);
    CHECK(f.local_epochs == 3);
    CHECK(f.train_batch == 16);
    CHECK(f.lr == 0.2f);
    CHECK(f.loss_mix == 0.25f);
    CHECK(f.attack.kind == AttackConfig::Kind::Ffgsm);
    CHECK(f.seed == 99);
    CHECK(f.threads == 4);
}

TEST_CASE("csv splitting trims and drops empties") {
    CHECK(split_csv("a, b ,,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(split_csv("") == std::vector<std::string>{});
    CHECK(split_csv("  ") == std::vector<std::string>{});
    CHECK(split_csv("one") == std::vector<std::string>{"one"});
}

TEST_CASE("cli entry point maps errors to exit codes") {
    auto run = [](std::vector<const char*> argv) {
        argv.insert(argv.begin(), "flats");
        return run_cli(static_cast<int>(argv.size()), argv.data());
    };
    CHECK(run({}) == 2);          // no arguments: usage + error exit
    CHECK(run({"--help"}) == 0);  // explicit help is not an error
    CHECK(run({"meditate"}) == 2);
    CHECK(run({"run", "--no_such_knob", "1"}) == 2);
    CHECK(run({"run", "--rounds"}) == 2);        // flag without a value
    CHECK(run({"run", "--abr", "1.5"}) == 2);    // parses but fails validation
    CHECK(run({"run", "--config", "/definitely/not/here.cfg"}) == 1);  // io failure
    CHECK(run({"attack-demo", "--sample", "0"}) == 2);  // needs a checkpoint
}

TEST_CASE("a minimal run completes through the cli") {
    const fs::path out = fs::temp_directory_path() / "flats_cli_minirun";
    fs::remove_all(out);
    const std::string out_s = out.string();
    std::vector<const char*> argv = {"flats",       "run",
                                     "--rounds",    "0",
                                     "--synth_classes", "2",
                                     "--synth_per_class", "4",
                                     "--synth_test_per_class", "2",
                                     "--height",    "8",
                                     "--width",     "8",
                                     "--conv1_filters", "2",
                                     "--conv2_filters", "4",
                                     "--hidden",    "8",
                                     "--eval_attacks", "",
                                     "--out",       out_s.c_str()};
    CHECK(run_cli(static_cast<int>(argv.size()), argv.data()) == 0);
    CHECK(fs::exists(out / "rounds.csv"));
    CHECK(fs::exists(out / "config.resolved"));
    CHECK(fs::exists(out / "checkpoint_final.bin"));
    std::ifstream csv(out / "rounds.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "round,selected,adv_clients,global_acc,robust_fgsm,robust_ffgsm,robust_square,test_set,mode");
    fs::remove_all(out);
}
