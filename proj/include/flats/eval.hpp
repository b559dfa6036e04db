#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flats/attacks.hpp"
#include "flats/data.hpp"
#include "flats/nn.hpp"
#include "flats/records.hpp"

namespace flats {

// fraction of correctly classified samples; argmax ties resolve to the lowest
// class index, and the result does not depend on the batch size
double accuracy(const Model& model, const LabeledDataset& dataset, int batch = 32);

// accuracy on attacked inputs. Attacks run against `surrogate` when given
// (transfer setting) and against `model` itself otherwise; predictions are
// always taken from `model`. sample_cap > 0 restricts the attack to the first
// cap samples (the rest are counted as clean predictions), which keeps the
// query-hungry Square evaluation affordable.
double robust_accuracy(const Model& model, const LabeledDataset& dataset, const AttackConfig& attack,
                       const Model* surrogate, uint64_t seed, int sample_cap = 0, int batch = 32);

// rounds.csv: one row per (round, test_set, mode); unevaluated attack columns
// stay empty
void write_round_csv(const std::vector<RoundRecord>& records, const std::string& path);

// two-column "round value" files, one per (test_set, mode, metric), ready for
// gnuplot's `plot "file" with lines`
void write_plot_files(const std::vector<RoundRecord>& records, const std::string& dir);

}  // namespace flats
