#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flats/attacks.hpp"
#include "flats/federated.hpp"

namespace flats {

// every experiment knob, file format `key=value` with `#` comments; command
// line `--key value` overrides win over the file
struct ExperimentConfig {
    // federated loop
    uint64_t seed = 1;
    int rounds = 10;
    int clients = 5;
    int select = 4;
    int adv_clients = 0;
    int method = 1;  // adversary schedule, 1 or 2
    double abr = 0.5;
    int local_epochs = 5;
    int train_batch = 64;
    int eval_batch = 32;
    double lr = 0.05;
    double loss_mix = 0.5;
    int threads = 1;
    // model
    int conv1_filters = 8;
    int conv2_filters = 16;
    int hidden = 64;
    // attack (training-time and evaluation share these parameters)
    std::string attack = "ffgsm";  // fgsm | ffgsm | square
    double epsilon = 8.0 / 255.0;
    double step_size = 10.0 / 255.0;
    int square_queries = 2000;
    int square_restarts = 1;
    std::string square_loss = "ce";  // ce | margin
    // data
    std::string dataset = "synthetic";  // synthetic | idx
    int synth_classes = 10;
    int synth_per_class = 200;
    int synth_test_per_class = 40;
    int channels = 1;
    int height = 32;
    int width = 32;
    std::string idx_train_images;
    std::string idx_train_labels;
    std::string idx_test_images;
    std::string idx_test_labels;
    // partition
    std::string partition = "iid";  // iid | noniid
    double noniid_concentration = 0.5;
    double noniid_size_spread = 0.5;
    // client-side data manipulation
    int manip_clients = 0;
    std::string manip_kind = "brightness";  // brightness | pixel | occlusion
    double manip_br = 0.15;
    int manip_factor = 2;
    double manip_fraction = 120.0 / 224.0;
    // evaluation
    std::string test_sets = "clean";  // csv of clean|bright_clean|dark_clean|bright_dark_clean
    std::string eval_attacks = "fgsm,ffgsm,square";
    std::string eval_mode = "white-box";  // white-box | surrogate | both
    int square_eval_samples = 256;
    double br_dark = 0.15;
    double br_bright = 2.30;
    int surrogate_hidden = 128;
    int surrogate_epochs = 3;
    double surrogate_lr = 0.05;
    // output
    std::string out = "out";
    int checkpoint_every = 0;  // 0 = no per-round checkpoints
    bool plot_files = false;
    int dump_samples = 0;
};

// defaults -> file (if any) -> overrides, later sources win; unknown keys and
// malformed values raise ConfigError naming the key
ExperimentConfig parse_config(const std::optional<std::string>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// full key=value listing; floats use %.17g so a rerun from the echoed file
// reproduces the run byte for byte
std::string render_config(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

// cross-field checks beyond per-key parsing
void validate_config(const ExperimentConfig& cfg);

// conversions into the runtime structs
FedConfig to_fed_config(const ExperimentConfig& cfg);
AttackConfig make_attack(const ExperimentConfig& cfg, const std::string& name);
std::vector<std::string> split_csv(const std::string& s);

}  // namespace flats
