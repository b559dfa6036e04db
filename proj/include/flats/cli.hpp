#pragma once

#include <string>
#include <vector>

#include "flats/config.hpp"

namespace flats {

// assembled experiment inputs, shared by the subcommands and the bindings
struct ExperimentSetup {
    LabeledDataset train;
    LabeledDataset test;
    PartitionPlan plan;
    Model model;
    std::vector<ClientData> clients;
    EvalJob eval_job;
    Model surrogate;        // valid when use_surrogate
    bool use_surrogate = false;
};

// builds datasets, partition, manipulation assignment, model init, surrogate
// and evaluation job from a validated config
ExperimentSetup build_setup(const ExperimentConfig& cfg);

// `flats run`: trains, writes rounds.csv / config.resolved / checkpoints /
// plots under cfg.out and prints the final summary line
int cmd_run(const ExperimentConfig& cfg);

// `flats attack-demo`: attacks one test sample with all three attacks, dumps
// PPM images and prints per-attack prediction flips and distances
int cmd_attack_demo(const ExperimentConfig& cfg, const std::string& checkpoint_path, int sample_index);

// `flats partition-inspect`: prints per-client share sizes, label histograms
// and manipulations
int cmd_partition_inspect(const ExperimentConfig& cfg);

// argument parsing + dispatch; returns the process exit code
int run_cli(int argc, const char* const* argv);

}  // namespace flats
