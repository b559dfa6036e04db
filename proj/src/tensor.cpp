#include "flats/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flats/errors.hpp"

namespace flats {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw InputError("tensor dimension must be positive, got " + std::to_string(d));
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_, float fill)
    : shape(std::move(shape_)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != data.size()) {
        throw InputError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

void Tensor::check_finite(const std::string& what) const {
    for (float v : data) {
        if (!std::isfinite(v)) throw InputError("non-finite value in " + what);
    }
}

float linf_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw InputError("linf_distance shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    float d = 0.0f;
    for (size_t i = 0; i < a.data.size(); ++i) {
        d = std::max(d, std::fabs(a.data[i] - b.data[i]));
    }
    return d;
}

void clamp_(Tensor& t, float lo, float hi) {
    for (auto& v : t.data) v = std::min(hi, std::max(lo, v));
}

void ParameterSet::add(std::string name, Tensor t) {
    for (const auto& [n, _] : entries) {
        if (n == name) throw ConfigError("duplicate parameter name: " + name);
    }
    entries.emplace_back(std::move(name), std::move(t));
}

size_t ParameterSet::scalar_count() const {
    size_t n = 0;
    for (const auto& [_, t] : entries) n += t.numel();
    return n;
}

bool ParameterSet::compatible_with(const ParameterSet& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != other.entries[i].first) return false;
        if (entries[i].second.shape != other.entries[i].second.shape) return false;
    }
    return true;
}

ParameterSet axpy_params(const ParameterSet& p, const ParameterSet& g, float scale) {
    if (!p.compatible_with(g)) throw InputError("parameter sets are not shape-compatible");
    ParameterSet out = p;
    for (size_t i = 0; i < out.entries.size(); ++i) {
        float* o = out.tensor(i).ptr();
        const float* gv = g.tensor(i).ptr();
        size_t n = out.tensor(i).numel();
        for (size_t j = 0; j < n; ++j) o[j] += scale * gv[j];
    }
    return out;
}

}  // namespace flats
