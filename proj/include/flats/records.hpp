#pragma once

#include <string>
#include <vector>

#include "flats/data.hpp"

namespace flats {

enum class EvalMode { WhiteBox, Surrogate };

std::string eval_mode_name(EvalMode mode);

// one evaluation pass of the global model over one test set in one mode
struct EvalReport {
    TestDataType test_set = TestDataType::Clean;
    EvalMode mode = EvalMode::WhiteBox;
    double clean_accuracy = 0.0;
    // attack name ("fgsm", "ffgsm", "square") -> robust accuracy
    std::vector<std::pair<std::string, double>> robust;

    // -1 when the attack was not evaluated
    double robust_for(const std::string& attack) const;
};

// everything recorded about one federated round
struct RoundRecord {
    int round = 0;                      // 1-based in reports
    std::vector<int> selected;          // sorted client ids
    std::vector<int> adversarial;       // sorted, subset of selected
    std::vector<double> client_losses;  // final local loss per selected client
    std::vector<EvalReport> evals;
};

}  // namespace flats
