#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flats/tensor.hpp"

namespace flats {

struct LabeledDataset {
    Tensor images;            // (N, C, H, W), values in [0,1]
    std::vector<int> labels;  // length N, values in [0, classes)
    int classes = 0;

    int size() const { return images.rank() == 4 ? images.dim(0) : 0; }

    // copy of sample range [first, first+count)
    LabeledDataset slice(int first, int count) const;
    // copy of the listed samples
    LabeledDataset subset(const std::vector<int>& indices) const;
};

void validate_dataset(const LabeledDataset& ds);

// per-client data corruption, fixed at partition time and applied to the
// whole local share
struct ManipulationSpec {
    enum class Kind { Brightness, PixelDegrade, EyeOcclusion };
    Kind kind = Kind::Brightness;
    float brightness_ratio = 1.0f;   // Brightness
    int degrade_factor = 2;          // PixelDegrade
    float occlusion_fraction = 0.5f; // EyeOcclusion

    std::string describe() const;
};

struct PartitionPlan {
    // client id -> sorted sample indices, pairwise disjoint
    std::vector<std::vector<int>> assignments;
    // client id -> optional manipulation
    std::vector<std::optional<ManipulationSpec>> manipulations;

    int clients() const { return static_cast<int>(assignments.size()); }
};

// composition of the evaluation set from clean / brightened / darkened copies
enum class TestDataType { Clean, BrightPlusClean, DarkPlusClean, BrightDarkClean };

std::string tdt_name(TestDataType t);
TestDataType tdt_from_name(const std::string& name);

// ---- loading / synthesis ----

// IDX binary pair (big-endian headers, magic 0x803 images / 0x801 labels)
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// deterministic class-conditional patterns: per-class smooth template plus
// per-sample noise, separable enough for the desk model to learn quickly
LabeledDataset synth_dataset(uint64_t seed, int n_per_class, int classes, int channels,
                             int height, int width);

// ---- partitioning ----

PartitionPlan partition_iid(const LabeledDataset& ds, int clients, uint64_t seed);

// label proportions per client from a symmetric Dirichlet, client sizes from
// a log-normal; every client gets at least one sample
PartitionPlan partition_noniid(const LabeledDataset& ds, int clients, uint64_t seed,
                               double label_concentration, double size_spread);

// ---- manipulations ----

Tensor apply_brightness(const Tensor& images, float ratio);
Tensor degrade_pixels(const Tensor& images, int factor);
Tensor occlude_eyes(const Tensor& images, float fraction);
Tensor apply_manipulation(const Tensor& images, const ManipulationSpec& spec);

// ---- augmented test sets ----

LabeledDataset build_test_set(const LabeledDataset& base, TestDataType tdt,
                              float br_dark, float br_bright);

// ---- image dump ----

// single sample as binary PPM (P6, maxval 255); single-channel input is
// replicated to gray
void dump_ppm(const Tensor& images, int index, const std::string& path);

}  // namespace flats
