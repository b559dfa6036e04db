#include "flats/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flats/errors.hpp"
#include "flats/rng.hpp"

namespace flats {

std::string eval_mode_name(EvalMode mode) {
    return mode == EvalMode::WhiteBox ? "white-box" : "surrogate";
}

double EvalReport::robust_for(const std::string& attack) const {
    for (const auto& [name, value] : robust)
        if (name == attack) return value;
    return -1.0;
}

namespace {

int argmax_lowest(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

// number of rows of `dataset` starting at `offset` classified correctly
int count_correct(const Model& model, const Tensor& images, const std::vector<int>& labels) {
    Tensor logits = forward(model, images);
    int k = logits.shape[1];
    int correct = 0;
    for (int i = 0; i < logits.shape[0]; ++i)
        if (argmax_lowest(logits.ptr() + static_cast<size_t>(i) * k, k) == labels[i]) ++correct;
    return correct;
}

std::string join_ids(const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

double accuracy(const Model& model, const LabeledDataset& dataset, int batch) {
    validate_dataset(dataset);
    if (batch < 1) throw ConfigError("eval batch size must be >= 1");
    const int n = dataset.size();
    if (n == 0) throw InputError("cannot evaluate accuracy on an empty dataset");
    int correct = 0;
    for (int start = 0; start < n; start += batch) {
        LabeledDataset chunk = dataset.slice(start, std::min(batch, n - start));
        correct += count_correct(model, chunk.images, chunk.labels);
    }
    return static_cast<double>(correct) / n;
}

double robust_accuracy(const Model& model, const LabeledDataset& dataset, const AttackConfig& attack,
                       const Model* surrogate, uint64_t seed, int sample_cap, int batch) {
    validate_dataset(dataset);
    attack.validate();
    if (batch < 1) throw ConfigError("eval batch size must be >= 1");
    const int n = dataset.size();
    if (n == 0) throw InputError("cannot evaluate accuracy on an empty dataset");
    const Model& target = surrogate ? *surrogate : model;
    const int attacked = (sample_cap > 0 && sample_cap < n) ? sample_cap : n;

    int correct = 0;
    for (int start = 0; start < attacked; start += batch) {
        LabeledDataset chunk = dataset.slice(start, std::min(batch, attacked - start));
        Rng rng(mix_seed(seed, 0xEAC, static_cast<uint64_t>(start)));
        Tensor adv = perturb_batch(attack, target, chunk.images, chunk.labels, rng);
        correct += count_correct(model, adv, chunk.labels);
    }
    // samples beyond the cap are scored without perturbation
    for (int start = attacked; start < n; start += batch) {
        LabeledDataset chunk = dataset.slice(start, std::min(batch, n - start));
        correct += count_correct(model, chunk.images, chunk.labels);
    }
    return static_cast<double>(correct) / n;
}

void write_round_csv(const std::vector<RoundRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "round,selected,adv_clients,global_acc,robust_fgsm,robust_ffgsm,robust_square,test_set,mode\n";
    for (const auto& rec : records) {
        for (const auto& ev : rec.evals) {
            out << rec.round << ',' << join_ids(rec.selected) << ',' << join_ids(rec.adversarial) << ','
                << fmt4(ev.clean_accuracy);
            for (const char* name : {"fgsm", "ffgsm", "square"}) {
                double v = ev.robust_for(name);
                out << ',';
                if (v >= 0.0) out << fmt4(v);
            }
            out << ',' << tdt_name(ev.test_set) << ',' << eval_mode_name(ev.mode) << '\n';
        }
    }
    if (!out.good()) throw IoError("failed while writing '" + path + "'");
}

void write_plot_files(const std::vector<RoundRecord>& records, const std::string& dir) {
    if (records.empty()) return;
    std::filesystem::create_directories(dir);
    // collect the metric columns present in the records
    struct Series {
        std::string file;
        std::vector<std::pair<int, double>> points;
    };
    std::vector<Series> series;
    auto find = [&](const std::string& file) -> Series& {
        for (auto& s : series)
            if (s.file == file) return s;
        series.push_back({file, {}});
        return series.back();
    };
    for (const auto& rec : records) {
        for (const auto& ev : rec.evals) {
            std::string stem = std::string(tdt_name(ev.test_set)) + "_" + eval_mode_name(ev.mode) + "_";
            find(stem + "global_acc.dat").points.emplace_back(rec.round, ev.clean_accuracy);
            for (const auto& [name, value] : ev.robust)
                find(stem + "robust_" + name + ".dat").points.emplace_back(rec.round, value);
        }
    }
    for (const auto& s : series) {
        std::string path = (std::filesystem::path(dir) / s.file).string();
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        for (const auto& [round, value] : s.points) out << round << ' ' << fmt4(value) << '\n';
        if (!out.good()) throw IoError("failed while writing '" + path + "'");
    }
}

}  // namespace flats
