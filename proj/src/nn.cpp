#include "flats/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flats/errors.hpp"
#include "flats/rng.hpp"

namespace flats {

namespace {

// row-major GEMM kernels; the inner loops run over contiguous memory so the
// compiler can vectorize them

// C[MxN] (+)= A[MxK] * B[KxN]
void gemm(float* c, const float* a, const float* b, int m_dim, int k_dim, int n_dim, bool accumulate) {
    for (int m = 0; m < m_dim; ++m) {
        float* crow = c + static_cast<size_t>(m) * n_dim;
        if (!accumulate) std::memset(crow, 0, sizeof(float) * static_cast<size_t>(n_dim));
        for (int k = 0; k < k_dim; ++k) {
            const float av = a[static_cast<size_t>(m) * k_dim + k];
            const float* brow = b + static_cast<size_t>(k) * n_dim;
            for (int n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
        }
    }
}

// C[MxN] (+)= A[MxK] * B[NxK]^T
void gemm_bt(float* c, const float* a, const float* b, int m_dim, int k_dim, int n_dim, bool accumulate) {
    for (int m = 0; m < m_dim; ++m) {
        const float* arow = a + static_cast<size_t>(m) * k_dim;
        float* crow = c + static_cast<size_t>(m) * n_dim;
        for (int n = 0; n < n_dim; ++n) {
            const float* brow = b + static_cast<size_t>(n) * k_dim;
            float s = 0.0f;
#pragma omp simd reduction(+ : s)
            for (int k = 0; k < k_dim; ++k) s += arow[k] * brow[k];
            if (accumulate) crow[n] += s; else crow[n] = s;
        }
    }
}

// C[MxN] (+)= A[KxM]^T * B[KxN]
void gemm_at(float* c, const float* a, const float* b, int m_dim, int k_dim, int n_dim, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m_dim) * n_dim);
    for (int k = 0; k < k_dim; ++k) {
        const float* arow = a + static_cast<size_t>(k) * m_dim;
        const float* brow = b + static_cast<size_t>(k) * n_dim;
        for (int m = 0; m < m_dim; ++m) {
            const float av = arow[m];
            float* crow = c + static_cast<size_t>(m) * n_dim;
            for (int n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
        }
    }
}

// one sample (C,H,W) -> columns (C*k*k, H*W), stride 1, zero pad k/2
void im2col(const float* x, int c_dim, int h, int w, int k, float* col) {
    const int pad = k / 2;
    for (int c = 0; c < c_dim; ++c) {
        const float* xc = x + static_cast<size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* crow = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * h * w;
                for (int oh = 0; oh < h; ++oh) {
                    const int ih = oh + ki - pad;
                    float* cpos = crow + static_cast<size_t>(oh) * w;
                    if (ih < 0 || ih >= h) {
                        std::memset(cpos, 0, sizeof(float) * static_cast<size_t>(w));
                        continue;
                    }
                    const float* xrow = xc + static_cast<size_t>(ih) * w;
                    const int shift = kj - pad;
                    for (int ow = 0; ow < w; ++ow) {
                        const int iw = ow + shift;
                        cpos[ow] = (iw < 0 || iw >= w) ? 0.0f : xrow[iw];
                    }
                }
            }
        }
    }
}

// scatter-add of column gradients back into the input image
void col2im_add(const float* col, int c_dim, int h, int w, int k, float* dx) {
    const int pad = k / 2;
    for (int c = 0; c < c_dim; ++c) {
        float* dxc = dx + static_cast<size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* crow = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * h * w;
                for (int oh = 0; oh < h; ++oh) {
                    const int ih = oh + ki - pad;
                    if (ih < 0 || ih >= h) continue;
                    float* dxrow = dxc + static_cast<size_t>(ih) * w;
                    const float* cpos = crow + static_cast<size_t>(oh) * w;
                    const int shift = kj - pad;
                    for (int ow = 0; ow < w; ++ow) {
                        const int iw = ow + shift;
                        if (iw >= 0 && iw < w) dxrow[iw] += cpos[ow];
                    }
                }
            }
        }
    }
}

struct ParamRef {
    int weight_idx = -1;  // index into ParameterSet entries, -1 if layer has none
    int bias_idx = -1;
};

// per-layer parameter bookkeeping shared by init, forward and backward
struct Plan {
    std::vector<std::vector<int>> shapes;  // output shape per layer, no batch dim
    std::vector<ParamRef> refs;
    std::vector<int> flat_in;  // dense layers: flattened input features
};

Plan build_plan(const Architecture& arch, int c, int h, int w) {
    Plan plan;
    plan.shapes = infer_layer_shapes(arch, c, h, w);
    plan.refs.resize(arch.size());
    plan.flat_in.assign(arch.size(), 0);
    int param_idx = 0;
    std::vector<int> cur = {c, h, w};
    for (size_t i = 0; i < arch.size(); ++i) {
        const auto& layer = arch[i];
        if (layer.kind == LayerSpec::Kind::Conv || layer.kind == LayerSpec::Kind::Dense) {
            plan.refs[i].weight_idx = param_idx++;
            plan.refs[i].bias_idx = param_idx++;
        }
        if (layer.kind == LayerSpec::Kind::Dense) {
            plan.flat_in[i] = static_cast<int>(shape_numel(cur));
        }
        cur = plan.shapes[i];
    }
    return plan;
}

std::vector<int> with_batch(int n, const std::vector<int>& per_sample) {
    std::vector<int> s;
    s.push_back(n);
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

struct Trace {
    std::vector<Tensor> outputs;             // per layer, batched
    std::vector<std::vector<float>> cols;    // conv layers: im2col buffers, batch-concatenated
    std::vector<std::vector<int>> pool_arg;  // pool layers: argmax flat index per output element
};

Tensor run_forward(const Model& model, const Tensor& batch, Trace* trace) {
    if (batch.rank() != 4 || batch.dim(1) != model.in_channels || batch.dim(2) != model.in_height ||
        batch.dim(3) != model.in_width) {
        throw InputError("forward: batch shape " + shape_str(batch.shape) + " does not match model input (N," +
                         std::to_string(model.in_channels) + "," + std::to_string(model.in_height) + "," +
                         std::to_string(model.in_width) + ")");
    }
    const int n = batch.dim(0);
    Plan plan = build_plan(model.arch, model.in_channels, model.in_height, model.in_width);

    if (trace) {
        trace->outputs.resize(model.arch.size());
        trace->cols.resize(model.arch.size());
        trace->pool_arg.resize(model.arch.size());
    }

    Tensor cur = batch;
    std::vector<int> cur_shape = {model.in_channels, model.in_height, model.in_width};
    for (size_t li = 0; li < model.arch.size(); ++li) {
        const auto& layer = model.arch[li];
        Tensor out(with_batch(n, plan.shapes[li]));
        switch (layer.kind) {
            case LayerSpec::Kind::Conv: {
                const int c = cur_shape[0], h = cur_shape[1], w = cur_shape[2];
                const int f = layer.out_channels, k = layer.kernel;
                const int kd = c * k * k, hw = h * w;
                const Tensor& wt = model.params.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                const Tensor& bt = model.params.tensor(static_cast<size_t>(plan.refs[li].bias_idx));
                std::vector<float> local_col;
                std::vector<float>* colbuf = trace ? &trace->cols[li] : &local_col;
                colbuf->resize(static_cast<size_t>(n) * kd * hw);
                for (int s = 0; s < n; ++s) {
                    float* col = colbuf->data() + static_cast<size_t>(s) * kd * hw;
                    im2col(cur.ptr() + static_cast<size_t>(s) * c * hw, c, h, w, k, col);
                    float* o = out.ptr() + static_cast<size_t>(s) * f * hw;
                    gemm(o, wt.ptr(), col, f, kd, hw, false);
                    for (int fo = 0; fo < f; ++fo) {
                        const float b = bt.data[static_cast<size_t>(fo)];
                        float* orow = o + static_cast<size_t>(fo) * hw;
                        for (int p = 0; p < hw; ++p) orow[p] += b;
                    }
                }
                break;
            }
            case LayerSpec::Kind::Pool: {
                const int c = cur_shape[0], h = cur_shape[1], w = cur_shape[2];
                const int oh = h / 2, ow = w / 2;
                std::vector<int>* arg = trace ? &trace->pool_arg[li] : nullptr;
                if (arg) arg->resize(static_cast<size_t>(n) * c * oh * ow);
                for (int s = 0; s < n; ++s) {
                    const float* x = cur.ptr() + static_cast<size_t>(s) * c * h * w;
                    float* o = out.ptr() + static_cast<size_t>(s) * c * oh * ow;
                    for (int ci = 0; ci < c; ++ci) {
                        for (int i = 0; i < oh; ++i) {
                            for (int j = 0; j < ow; ++j) {
                                int base = ci * h * w + 2 * i * w + 2 * j;
                                int best = base;
                                float bv = x[base];
                                const int cand[3] = {base + 1, base + w, base + w + 1};
                                for (int t = 0; t < 3; ++t) {
                                    if (x[cand[t]] > bv) { bv = x[cand[t]]; best = cand[t]; }
                                }
                                size_t oi = static_cast<size_t>(ci) * oh * ow + static_cast<size_t>(i) * ow + j;
                                o[oi] = bv;
                                if (arg) (*arg)[static_cast<size_t>(s) * c * oh * ow + oi] = best;
                            }
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::Dense: {
                const int in_f = plan.flat_in[li], out_f = layer.out_features;
                const Tensor& wt = model.params.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                const Tensor& bt = model.params.tensor(static_cast<size_t>(plan.refs[li].bias_idx));
                gemm_bt(out.ptr(), cur.ptr(), wt.ptr(), n, in_f, out_f, false);
                for (int s = 0; s < n; ++s) {
                    float* orow = out.ptr() + static_cast<size_t>(s) * out_f;
                    for (int j = 0; j < out_f; ++j) orow[j] += bt.data[static_cast<size_t>(j)];
                }
                break;
            }
            case LayerSpec::Kind::Relu: {
                const float* x = cur.ptr();
                float* o = out.ptr();
                const size_t total = cur.numel();
                for (size_t p = 0; p < total; ++p) o[p] = x[p] > 0.0f ? x[p] : 0.0f;
                break;
            }
        }
        if (trace) trace->outputs[li] = out;
        cur = std::move(out);
        cur_shape = plan.shapes[li];
    }
    cur.check_finite("logits");
    return cur;
}

// mean CE loss and its gradient w.r.t. logits
float softmax_ce_grad(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits) {
    const int n = logits.dim(0), k = logits.dim(1);
    dlogits = Tensor(logits.shape);
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        const float* row = logits.ptr() + static_cast<size_t>(s) * k;
        float* drow = dlogits.ptr() + static_cast<size_t>(s) * k;
        float mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        const int y = labels[static_cast<size_t>(s)];
        total += lse - row[y];
        // the true-class entry is softmax-1; computing it as the negated sum
        // of the other probabilities avoids cancellation when the model is
        // confident, keeping the (tiny) gradient signed instead of zero
        double others = 0.0;
        for (int j = 0; j < k; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - lse);
            if (j != y) others += p;
            drow[j] = static_cast<float>(p / n);
        }
        drow[y] = static_cast<float>(-others / n);
    }
    return static_cast<float>(total / n);
}

void check_labels(const std::vector<int>& labels, int n, int k) {
    if (static_cast<int>(labels.size()) != n) {
        throw InputError("label count " + std::to_string(labels.size()) + " does not match batch size " +
                         std::to_string(n));
    }
    for (int y : labels) {
        if (y < 0 || y >= k) throw InputError("label " + std::to_string(y) + " out of range [0," + std::to_string(k) + ")");
    }
}

GradientBundle run_backward(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                            bool want_param_grads, float* loss_out) {
    Trace trace;
    Tensor logits = run_forward(model, batch, &trace);
    const int n = batch.dim(0);
    check_labels(labels, n, model.classes);

    Plan plan = build_plan(model.arch, model.in_channels, model.in_height, model.in_width);

    GradientBundle out;
    if (want_param_grads) {
        out.param_grads = model.params;  // copy for the name/shape skeleton
        for (auto& [_, t] : out.param_grads.entries) std::fill(t.data.begin(), t.data.end(), 0.0f);
    }

    Tensor grad;  // gradient w.r.t. current layer output
    float loss = softmax_ce_grad(logits, labels, grad);
    if (loss_out) *loss_out = loss;

    for (int li = static_cast<int>(model.arch.size()) - 1; li >= 0; --li) {
        const auto& layer = model.arch[li];
        const Tensor& input = (li == 0) ? batch : trace.outputs[static_cast<size_t>(li - 1)];
        const std::vector<int> in_shape = (li == 0)
            ? std::vector<int>{model.in_channels, model.in_height, model.in_width}
            : plan.shapes[static_cast<size_t>(li - 1)];
        Tensor dinput(input.shape);
        switch (layer.kind) {
            case LayerSpec::Kind::Conv: {
                const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
                const int f = layer.out_channels, k = layer.kernel;
                const int kd = c * k * k, hw = h * w;
                const Tensor& wt = model.params.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                std::vector<float> dcol(static_cast<size_t>(kd) * hw);
                std::fill(dinput.data.begin(), dinput.data.end(), 0.0f);
                for (int s = 0; s < n; ++s) {
                    const float* go = grad.ptr() + static_cast<size_t>(s) * f * hw;
                    const float* col = trace.cols[static_cast<size_t>(li)].data() + static_cast<size_t>(s) * kd * hw;
                    if (want_param_grads) {
                        Tensor& dw = out.param_grads.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                        Tensor& db = out.param_grads.tensor(static_cast<size_t>(plan.refs[li].bias_idx));
                        gemm_bt(dw.ptr(), go, col, f, hw, kd, true);
                        for (int fo = 0; fo < f; ++fo) {
                            const float* grow = go + static_cast<size_t>(fo) * hw;
                            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                            for (int p = 0; p < hw; ++p) acc += grow[p];
                            db.data[static_cast<size_t>(fo)] += acc;
                        }
                    }
                    gemm_at(dcol.data(), wt.ptr(), go, kd, f, hw, false);
                    col2im_add(dcol.data(), c, h, w, k, dinput.ptr() + static_cast<size_t>(s) * c * hw);
                }
                break;
            }
            case LayerSpec::Kind::Pool: {
                const auto& arg = trace.pool_arg[static_cast<size_t>(li)];
                const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
                const size_t out_per = arg.size() / static_cast<size_t>(n);
                std::fill(dinput.data.begin(), dinput.data.end(), 0.0f);
                for (int s = 0; s < n; ++s) {
                    const float* go = grad.ptr() + static_cast<size_t>(s) * out_per;
                    float* di = dinput.ptr() + static_cast<size_t>(s) * c * h * w;
                    const int* as = arg.data() + static_cast<size_t>(s) * out_per;
                    for (size_t p = 0; p < out_per; ++p) di[as[p]] += go[p];
                }
                break;
            }
            case LayerSpec::Kind::Dense: {
                const int in_f = plan.flat_in[static_cast<size_t>(li)], out_f = layer.out_features;
                const Tensor& wt = model.params.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                if (want_param_grads) {
                    Tensor& dw = out.param_grads.tensor(static_cast<size_t>(plan.refs[li].weight_idx));
                    Tensor& db = out.param_grads.tensor(static_cast<size_t>(plan.refs[li].bias_idx));
                    gemm_at(dw.ptr(), grad.ptr(), input.ptr(), out_f, n, in_f, true);
                    for (int s = 0; s < n; ++s) {
                        const float* grow = grad.ptr() + static_cast<size_t>(s) * out_f;
                        for (int j = 0; j < out_f; ++j) db.data[static_cast<size_t>(j)] += grow[j];
                    }
                }
                gemm(dinput.ptr(), grad.ptr(), wt.ptr(), n, out_f, in_f, false);
                break;
            }
            case LayerSpec::Kind::Relu: {
                const Tensor& y = trace.outputs[static_cast<size_t>(li)];
                const float* go = grad.ptr();
                const float* yo = y.ptr();
                float* di = dinput.ptr();
                const size_t total = dinput.numel();
                for (size_t p = 0; p < total; ++p) di[p] = yo[p] > 0.0f ? go[p] : 0.0f;
                break;
            }
        }
        grad = std::move(dinput);
    }
    out.input_grad = std::move(grad);
    return out;
}

}  // namespace

LayerSpec LayerSpec::conv(int out_channels, int kernel) {
    LayerSpec l;
    l.kind = Kind::Conv;
    l.out_channels = out_channels;
    l.kernel = kernel;
    return l;
}

LayerSpec LayerSpec::pool() {
    LayerSpec l;
    l.kind = Kind::Pool;
    return l;
}

LayerSpec LayerSpec::dense(int out_features) {
    LayerSpec l;
    l.kind = Kind::Dense;
    l.out_features = out_features;
    return l;
}

LayerSpec LayerSpec::relu() {
    LayerSpec l;
    l.kind = Kind::Relu;
    return l;
}

Architecture small_cnn(int conv1_filters, int conv2_filters, int hidden, int classes) {
    return {LayerSpec::conv(conv1_filters), LayerSpec::relu(), LayerSpec::pool(),
            LayerSpec::conv(conv2_filters), LayerSpec::relu(), LayerSpec::pool(),
            LayerSpec::dense(hidden),       LayerSpec::relu(), LayerSpec::dense(classes)};
}

Architecture small_mlp(int hidden, int classes) {
    return {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(classes)};
}

std::vector<std::vector<int>> infer_layer_shapes(const Architecture& arch, int in_channels,
                                                 int in_height, int in_width) {
    if (arch.empty()) throw ConfigError("architecture has no layers");
    if (in_channels <= 0 || in_height <= 0 || in_width <= 0) {
        throw ConfigError("model input dimensions must be positive");
    }
    std::vector<std::vector<int>> shapes;
    std::vector<int> cur = {in_channels, in_height, in_width};
    for (size_t i = 0; i < arch.size(); ++i) {
        const auto& layer = arch[i];
        switch (layer.kind) {
            case LayerSpec::Kind::Conv:
                if (cur.size() != 3) throw ConfigError("conv layer " + std::to_string(i) + " needs a (C,H,W) input");
                if (layer.out_channels <= 0) throw ConfigError("conv layer " + std::to_string(i) + " needs out_channels >= 1");
                if (layer.kernel <= 0 || layer.kernel % 2 == 0) {
                    throw ConfigError("conv layer " + std::to_string(i) + " kernel must be odd and positive");
                }
                cur = {layer.out_channels, cur[1], cur[2]};
                break;
            case LayerSpec::Kind::Pool:
                if (cur.size() != 3) throw ConfigError("pool layer " + std::to_string(i) + " needs a (C,H,W) input");
                if (cur[1] % 2 != 0 || cur[2] % 2 != 0) {
                    throw ConfigError("pool layer " + std::to_string(i) + " needs even spatial dims, got " + shape_str(cur));
                }
                cur = {cur[0], cur[1] / 2, cur[2] / 2};
                break;
            case LayerSpec::Kind::Dense:
                if (layer.out_features <= 0) throw ConfigError("dense layer " + std::to_string(i) + " needs out_features >= 1");
                cur = {layer.out_features};
                break;
            case LayerSpec::Kind::Relu:
                break;
        }
        shapes.push_back(cur);
    }
    return shapes;
}

ParameterSet init_params(const Architecture& arch, int in_channels, int in_height, int in_width,
                         uint64_t seed) {
    auto shapes = infer_layer_shapes(arch, in_channels, in_height, in_width);
    Rng rng(seed);
    ParameterSet params;
    int conv_no = 0, dense_no = 0;
    std::vector<int> cur = {in_channels, in_height, in_width};
    for (size_t i = 0; i < arch.size(); ++i) {
        const auto& layer = arch[i];
        if (layer.kind == LayerSpec::Kind::Conv) {
            ++conv_no;
            const int fan_in = cur[0] * layer.kernel * layer.kernel;
            const float lim = 1.0f / std::sqrt(static_cast<float>(fan_in));
            Tensor w({layer.out_channels, cur[0], layer.kernel, layer.kernel});
            for (auto& v : w.data) v = static_cast<float>(rng.uniform(-lim, lim));
            params.add("conv" + std::to_string(conv_no) + ".weight", std::move(w));
            params.add("conv" + std::to_string(conv_no) + ".bias", Tensor({layer.out_channels}));
        } else if (layer.kind == LayerSpec::Kind::Dense) {
            ++dense_no;
            const int fan_in = static_cast<int>(shape_numel(cur));
            const float lim = 1.0f / std::sqrt(static_cast<float>(fan_in));
            Tensor w({layer.out_features, fan_in});
            for (auto& v : w.data) v = static_cast<float>(rng.uniform(-lim, lim));
            params.add("dense" + std::to_string(dense_no) + ".weight", std::move(w));
            params.add("dense" + std::to_string(dense_no) + ".bias", Tensor({layer.out_features}));
        }
        cur = shapes[i];
    }
    return params;
}

Model make_model(const Architecture& arch, int in_channels, int in_height, int in_width,
                 int classes, uint64_t seed) {
    auto shapes = infer_layer_shapes(arch, in_channels, in_height, in_width);
    if (shapes.back() != std::vector<int>{classes}) {
        throw ConfigError("architecture output shape " + shape_str(shapes.back()) +
                          " does not produce " + std::to_string(classes) + " class logits");
    }
    Model m;
    m.arch = arch;
    m.in_channels = in_channels;
    m.in_height = in_height;
    m.in_width = in_width;
    m.classes = classes;
    m.params = init_params(arch, in_channels, in_height, in_width, seed);
    return m;
}

Tensor forward(const Model& model, const Tensor& batch) { return run_forward(model, batch, nullptr); }

float cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw InputError("cross_entropy expects (N,K) logits, got " + shape_str(logits.shape));
    check_labels(labels, logits.dim(0), logits.dim(1));
    Tensor scratch;
    return softmax_ce_grad(logits, labels, scratch);
}

GradientBundle backward(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                        float* loss_out) {
    return run_backward(model, batch, labels, true, loss_out);
}

Tensor input_gradient(const Model& model, const Tensor& batch, const std::vector<int>& labels,
                      float* loss_out) {
    return run_backward(model, batch, labels, false, loss_out).input_grad;
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, float lr) {
    return axpy_params(params, grads, -lr);
}

float mixed_adversarial_loss(float clean_loss, float adv_loss, float mix) {
    if (!(mix >= 0.0f && mix <= 1.0f)) {
        throw ConfigError("loss mix ratio must lie in [0,1], got " + std::to_string(mix));
    }
    if (!std::isfinite(clean_loss) || !std::isfinite(adv_loss)) {
        throw InputError("mixed_adversarial_loss requires finite losses");
    }
    return mix * clean_loss + (1.0f - mix) * adv_loss;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'F', 'L', 'A', 'T', 'S', 'W', '1', '\n'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, size_t& offset, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw FormatError("truncated checkpoint reading " + what + " at offset " + std::to_string(offset));
    offset += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_params(const ParameterSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    for (const auto& [name, t] : params.entries) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(os, bits);
        }
    }
    if (!os) throw IoError("write failed for checkpoint: " + path);
}

ParameterSet load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("bad checkpoint magic at offset 0 in " + path);
    }
    size_t offset = 8;
    ParameterSet params;
    while (true) {
        is.peek();
        if (is.eof()) break;
        uint32_t name_len = get_u32(is, offset, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != static_cast<std::streamsize>(name_len)) {
            throw FormatError("truncated checkpoint reading name at offset " + std::to_string(offset));
        }
        offset += name_len;
        uint32_t rank = get_u32(is, offset, "rank");
        std::vector<int> shape;
        size_t count = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = get_u32(is, offset, "dim");
            if (d == 0) throw FormatError("zero dimension in checkpoint at offset " + std::to_string(offset));
            shape.push_back(static_cast<int>(d));
            count *= d;
        }
        Tensor t(shape);
        for (size_t i = 0; i < count; ++i) {
            uint32_t bits = get_u32(is, offset, "payload");
            std::memcpy(&t.data[i], &bits, 4);
        }
        params.add(std::move(name), std::move(t));
    }
    return params;
}

}  // namespace flats
