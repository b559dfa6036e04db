#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace flats {

// Dense n-dimensional float32 array, flat row-major storage.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_, float fill = 0.0f);
    Tensor(std::vector<int> shape_, std::vector<float> data_);

    size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // throws InputError if any element is NaN/Inf
    void check_finite(const std::string& what) const;
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// L-inf distance between equal-shaped tensors
float linf_distance(const Tensor& a, const Tensor& b);

// element-wise clamp into [lo, hi]
void clamp_(Tensor& t, float lo, float hi);

// Ordered named weight collection; the unit exchanged in aggregation.
// Order is fixed by the architecture, so element-wise arithmetic between
// two sets from the same architecture is well defined.
struct ParameterSet {
    std::vector<std::pair<std::string, Tensor>> entries;

    size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    Tensor& tensor(size_t i) { return entries[i].second; }
    const Tensor& tensor(size_t i) const { return entries[i].second; }
    const std::string& name(size_t i) const { return entries[i].first; }

    void add(std::string name, Tensor t);

    // total scalar count across all entries
    size_t scalar_count() const;

    // identical names, order and shapes
    bool compatible_with(const ParameterSet& other) const;
};

// out-of-place p + scale * g; shapes must match
ParameterSet axpy_params(const ParameterSet& p, const ParameterSet& g, float scale);

// gradients of the mean batch loss
struct GradientBundle {
    ParameterSet param_grads;  // mirrors the model's ParameterSet
    Tensor input_grad;         // mirrors the input batch
};

}  // namespace flats
