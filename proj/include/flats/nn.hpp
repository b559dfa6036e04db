#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flats/tensor.hpp"

namespace flats {

// Layer descriptors compose the fixed classifier architectures used here:
// a small conv net for the defended model and a plain MLP for surrogates.
struct LayerSpec {
    enum class Kind { Conv, Pool, Dense, Relu };
    Kind kind = Kind::Relu;

    // Conv: out_channels, kernel (square, stride 1, zero pad kernel/2)
    int out_channels = 0;
    int kernel = 3;
    // Pool: 2x2 stride 2 max pool, no fields
    // Dense: out_features (input is flattened automatically)
    int out_features = 0;

    static LayerSpec conv(int out_channels, int kernel = 3);
    static LayerSpec pool();
    static LayerSpec dense(int out_features);
    static LayerSpec relu();
};

using Architecture = std::vector<LayerSpec>;

// two conv+pool blocks, one hidden dense layer, softmax head
Architecture small_cnn(int conv1_filters, int conv2_filters, int hidden, int classes);
// dense-relu-dense; used as the independently trained surrogate
Architecture small_mlp(int hidden, int classes);

struct Model {
    Architecture arch;
    ParameterSet params;
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    int classes = 0;
};

// validates that the layer shapes compose and reports the per-layer output
// shapes (excluding the batch dimension); throws ConfigError otherwise
std::vector<std::vector<int>> infer_layer_shapes(const Architecture& arch,
                                                 int in_channels, int in_height, int in_width);

// fan-in scaled uniform weights, zero biases; deterministic per seed
ParameterSet init_params(const Architecture& arch, int in_channels, int in_height, int in_width,
                         uint64_t seed);

Model make_model(const Architecture& arch, int in_channels, int in_height, int in_width,
                 int classes, uint64_t seed);

// batch (N,C,H,W) -> logits (N,K)
Tensor forward(const Model& model, const Tensor& batch);

// mean over the batch of -log softmax probability of the true class
float cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// gradients of the mean cross-entropy loss w.r.t. every parameter and the
// input batch; optionally reports the loss of the same forward pass
GradientBundle backward(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                        float* loss_out = nullptr);

// gradient w.r.t. the input only (skips the parameter-gradient work);
// this is the attack-side evaluation path
Tensor input_gradient(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                      float* loss_out = nullptr);

// out-of-place params - lr * grads
ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, float lr);

// mix * clean + (1 - mix) * adv; mix outside [0,1] is a ConfigError
float mixed_adversarial_loss(float clean_loss, float adv_loss, float mix);

// ---- checkpoint file ----
// magic "FLATSW1\n", then per entry: name length (u32 LE), name bytes,
// rank (u32 LE), dims (u32 LE each), raw float32 LE payload
void save_params(const ParameterSet& params, const std::string& path);
ParameterSet load_params(const std::string& path);

}  // namespace flats
