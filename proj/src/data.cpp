#include "flats/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "flats/errors.hpp"
#include "flats/rng.hpp"

namespace flats {

LabeledDataset LabeledDataset::slice(int first, int count) const {
    std::vector<int> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), first);
    return subset(idx);
}

LabeledDataset LabeledDataset::subset(const std::vector<int>& indices) const {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const size_t per = static_cast<size_t>(c) * h * w;
    LabeledDataset out;
    out.classes = classes;
    out.images = Tensor({static_cast<int>(indices.size()), c, h, w});
    out.labels.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int s = indices[i];
        if (s < 0 || s >= size()) throw InputError("dataset index " + std::to_string(s) + " out of range");
        std::memcpy(out.images.ptr() + i * per, images.ptr() + static_cast<size_t>(s) * per, per * sizeof(float));
        out.labels.push_back(labels[static_cast<size_t>(s)]);
    }
    return out;
}

void validate_dataset(const LabeledDataset& ds) {
    if (ds.images.rank() != 4) throw InputError("dataset images must be (N,C,H,W)");
    if (ds.size() < 1) throw InputError("dataset must hold at least one sample");
    if (static_cast<int>(ds.labels.size()) != ds.size()) {
        throw InputError("dataset label count does not match image count");
    }
    if (ds.classes < 1) throw InputError("dataset class count must be positive");
    for (int y : ds.labels) {
        if (y < 0 || y >= ds.classes) throw InputError("dataset label " + std::to_string(y) + " out of range");
    }
    for (float v : ds.images.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw InputError("dataset pixel outside [0,1]");
    }
}

std::string ManipulationSpec::describe() const {
    switch (kind) {
        case Kind::Brightness: return "brightness(" + std::to_string(brightness_ratio) + ")";
        case Kind::PixelDegrade: return "pixel_degrade(" + std::to_string(degrade_factor) + ")";
        case Kind::EyeOcclusion: return "eye_occlusion(" + std::to_string(occlusion_fraction) + ")";
    }
    return "?";
}

std::string tdt_name(TestDataType t) {
    switch (t) {
        case TestDataType::Clean: return "clean";
        case TestDataType::BrightPlusClean: return "bright_clean";
        case TestDataType::DarkPlusClean: return "dark_clean";
        case TestDataType::BrightDarkClean: return "bright_dark_clean";
    }
    return "?";
}

TestDataType tdt_from_name(const std::string& name) {
    if (name == "clean") return TestDataType::Clean;
    if (name == "bright_clean") return TestDataType::BrightPlusClean;
    if (name == "dark_clean") return TestDataType::DarkPlusClean;
    if (name == "bright_dark_clean") return TestDataType::BrightDarkClean;
    throw ConfigError("unknown test set type: " + name);
}

// ---- idx loading ----

namespace {

uint32_t read_be_u32(std::istream& is, size_t& offset, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) {
        throw FormatError(path + ": truncated header at offset " + std::to_string(offset));
    }
    offset += 4;
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("cannot open " + images_path);
    size_t off = 0;
    uint32_t magic = read_be_u32(imgs, off, images_path);
    if (magic != 0x00000803u) {
        throw FormatError(images_path + ": bad magic 0x" + std::to_string(magic) + " at offset 0 (want 0x803)");
    }
    const uint32_t n = read_be_u32(imgs, off, images_path);
    const uint32_t h = read_be_u32(imgs, off, images_path);
    const uint32_t w = read_be_u32(imgs, off, images_path);
    if (n == 0 || h == 0 || w == 0) throw FormatError(images_path + ": zero dimension in header");

    const size_t count = static_cast<size_t>(n) * h * w;
    std::vector<unsigned char> raw(count);
    imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    if (imgs.gcount() != static_cast<std::streamsize>(count)) {
        throw FormatError(images_path + ": truncated payload at offset " +
                          std::to_string(off + static_cast<size_t>(imgs.gcount())));
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError("cannot open " + labels_path);
    size_t loff = 0;
    uint32_t lmagic = read_be_u32(labs, loff, labels_path);
    if (lmagic != 0x00000801u) {
        throw FormatError(labels_path + ": bad magic 0x" + std::to_string(lmagic) + " at offset 0 (want 0x801)");
    }
    const uint32_t ln = read_be_u32(labs, loff, labels_path);
    if (ln != n) {
        throw FormatError(labels_path + ": label count " + std::to_string(ln) + " does not match image count " +
                          std::to_string(n));
    }
    std::vector<unsigned char> lraw(ln);
    labs.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(ln));
    if (labs.gcount() != static_cast<std::streamsize>(ln)) {
        throw FormatError(labels_path + ": truncated payload at offset " +
                          std::to_string(loff + static_cast<size_t>(labs.gcount())));
    }

    LabeledDataset ds;
    ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    for (size_t i = 0; i < count; ++i) ds.images.data[i] = static_cast<float>(raw[i]) / 255.0f;
    ds.labels.reserve(ln);
    int max_label = 0;
    for (unsigned char y : lraw) {
        ds.labels.push_back(static_cast<int>(y));
        max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.classes = max_label + 1;
    return ds;
}

// ---- synthesis ----

namespace {

void box_blur(std::vector<float>& img, int h, int w) {
    std::vector<float> tmp(img.size());
    // horizontal then vertical, radius 1, clamped edges
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            float s = 0.0f;
            for (int d = -1; d <= 1; ++d) {
                int jj = std::clamp(j + d, 0, w - 1);
                s += img[static_cast<size_t>(i) * w + jj];
            }
            tmp[static_cast<size_t>(i) * w + j] = s / 3.0f;
        }
    }
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            float s = 0.0f;
            for (int d = -1; d <= 1; ++d) {
                int ii = std::clamp(i + d, 0, h - 1);
                s += tmp[static_cast<size_t>(ii) * w + j];
            }
            img[static_cast<size_t>(i) * w + j] = s / 3.0f;
        }
    }
}

}  // namespace

LabeledDataset synth_dataset(uint64_t seed, int n_per_class, int classes, int channels,
                             int height, int width) {
    if (n_per_class < 1 || classes < 1 || channels < 1 || height < 1 || width < 1) {
        throw ConfigError("synth_dataset dimensions must be positive");
    }
    const size_t per = static_cast<size_t>(channels) * height * width;

    // per-class templates: a smooth random field thresholded at a high
    // quantile into sparse bright blobs on a dark background, stroke-like in
    // spirit. The two levels are separated widely enough that the class
    // identity survives large perturbations (a robust classifier exists),
    // while the signal lives in few pixels, so naturally trained models hang
    // their margins on a thin slice of the input
    std::vector<std::vector<float>> templates(static_cast<size_t>(classes));
    for (int k = 0; k < classes; ++k) {
        Rng trng(mix_seed(seed, 7001, static_cast<uint64_t>(k)));
        std::vector<float> t(per);
        for (auto& v : t) v = static_cast<float>(trng.uniform());
        for (int c = 0; c < channels; ++c) {
            float* plane = t.data() + static_cast<size_t>(c) * height * width;
            std::vector<float> buf(plane, plane + static_cast<size_t>(height) * width);
            box_blur(buf, height, width);
            box_blur(buf, height, width);
            std::copy(buf.begin(), buf.end(), plane);
        }
        std::vector<float> sorted(t);
        const size_t q = sorted.size() * 9 / 10;  // brightest tenth becomes the pattern
        std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
        const float cut = sorted[q];
        for (auto& v : t) v = v >= cut ? 0.9f : 0.1f;
        templates[static_cast<size_t>(k)] = std::move(t);
    }

    // a few percent of labels are resampled uniformly: the loss floor this
    // creates keeps softmax outputs off the saturated plateau, so loss
    // gradients at the clean inputs remain informative for attack evaluation
    // no matter how long a model trains on the data
    constexpr double kLabelNoise = 0.08;

    LabeledDataset ds;
    ds.classes = classes;
    ds.images = Tensor({classes * n_per_class, channels, height, width});
    ds.labels.resize(static_cast<size_t>(classes) * n_per_class);
    Rng srng(mix_seed(seed, 7002));
    size_t pos = 0;
    for (int k = 0; k < classes; ++k) {
        for (int s = 0; s < n_per_class; ++s) {
            float* img = ds.images.ptr() + pos * per;
            const float* t = templates[static_cast<size_t>(k)].data();
            for (size_t p = 0; p < per; ++p) {
                float v = t[p] + 0.08f * static_cast<float>(srng.normal());
                img[p] = std::min(1.0f, std::max(0.0f, v));
            }
            ds.labels[pos] = srng.uniform() < kLabelNoise ? srng.randint(classes) : k;
            ++pos;
        }
    }
    return ds;
}

// ---- partitioning ----

PartitionPlan partition_iid(const LabeledDataset& ds, int clients, uint64_t seed) {
    const int n = ds.size();
    if (clients < 1) throw ConfigError("client count must be >= 1");
    if (clients > n) throw ConfigError("cannot split " + std::to_string(n) + " samples across " +
                                       std::to_string(clients) + " clients");
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    PartitionPlan plan;
    plan.assignments.resize(static_cast<size_t>(clients));
    plan.manipulations.resize(static_cast<size_t>(clients));
    const int base = n / clients, extra = n % clients;
    size_t pos = 0;
    for (int j = 0; j < clients; ++j) {
        const int take = base + (j < extra ? 1 : 0);
        auto& a = plan.assignments[static_cast<size_t>(j)];
        a.assign(idx.begin() + static_cast<long>(pos), idx.begin() + static_cast<long>(pos) + take);
        std::sort(a.begin(), a.end());
        pos += static_cast<size_t>(take);
    }
    return plan;
}

PartitionPlan partition_noniid(const LabeledDataset& ds, int clients, uint64_t seed,
                               double label_concentration, double size_spread) {
    const int n = ds.size();
    if (clients < 1) throw ConfigError("client count must be >= 1");
    if (clients > n) throw ConfigError("cannot split " + std::to_string(n) + " samples across " +
                                       std::to_string(clients) + " clients");
    if (label_concentration <= 0.0 || size_spread <= 0.0) {
        throw ConfigError("label_concentration and size_spread must be positive");
    }
    Rng rng(seed);

    // client sizes: log-normal weights, largest-remainder rounding to sum n
    std::vector<double> weight(static_cast<size_t>(clients));
    double wsum = 0.0;
    for (auto& v : weight) { v = std::exp(size_spread * rng.normal()); wsum += v; }
    std::vector<int> sizes(static_cast<size_t>(clients));
    std::vector<std::pair<double, int>> frac;
    int assigned = 0;
    for (int j = 0; j < clients; ++j) {
        double exact = n * weight[static_cast<size_t>(j)] / wsum;
        sizes[static_cast<size_t>(j)] = static_cast<int>(std::floor(exact));
        frac.push_back({exact - std::floor(exact), j});
        assigned += sizes[static_cast<size_t>(j)];
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int r = 0; r < n - assigned; ++r) sizes[static_cast<size_t>(frac[static_cast<size_t>(r)].second)]++;
    // every client needs at least one sample
    for (int j = 0; j < clients; ++j) {
        while (sizes[static_cast<size_t>(j)] < 1) {
            int big = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
            sizes[static_cast<size_t>(big)]--;
            sizes[static_cast<size_t>(j)]++;
        }
    }

    // per-class index pools, shuffled once
    std::vector<std::vector<int>> pools(static_cast<size_t>(ds.classes));
    for (int i = 0; i < n; ++i) pools[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
    for (auto& p : pools) rng.shuffle(p);

    PartitionPlan plan;
    plan.assignments.resize(static_cast<size_t>(clients));
    plan.manipulations.resize(static_cast<size_t>(clients));
    for (int j = 0; j < clients; ++j) {
        std::vector<double> p = rng.dirichlet(label_concentration, ds.classes);
        auto& mine = plan.assignments[static_cast<size_t>(j)];
        for (int s = 0; s < sizes[static_cast<size_t>(j)]; ++s) {
            // categorical draw over classes with non-empty pools
            double avail = 0.0;
            for (int c = 0; c < ds.classes; ++c) {
                if (!pools[static_cast<size_t>(c)].empty()) avail += p[static_cast<size_t>(c)];
            }
            int chosen = -1;
            if (avail <= 0.0) {
                for (int c = 0; c < ds.classes; ++c) {
                    if (!pools[static_cast<size_t>(c)].empty()) { chosen = c; break; }
                }
            } else {
                double u = rng.uniform() * avail;
                double acc = 0.0;
                for (int c = 0; c < ds.classes; ++c) {
                    if (pools[static_cast<size_t>(c)].empty()) continue;
                    acc += p[static_cast<size_t>(c)];
                    if (u < acc || c == ds.classes - 1) { chosen = c; break; }
                }
                if (chosen == -1 || pools[static_cast<size_t>(chosen)].empty()) {
                    for (int c = ds.classes - 1; c >= 0; --c) {
                        if (!pools[static_cast<size_t>(c)].empty()) { chosen = c; break; }
                    }
                }
            }
            mine.push_back(pools[static_cast<size_t>(chosen)].back());
            pools[static_cast<size_t>(chosen)].pop_back();
        }
        std::sort(mine.begin(), mine.end());
    }
    return plan;
}

// ---- manipulations ----

Tensor apply_brightness(const Tensor& images, float ratio) {
    if (!(ratio > 0.0f)) throw ConfigError("brightness ratio must be positive, got " + std::to_string(ratio));
    Tensor out = images;
    for (auto& v : out.data) v = std::min(1.0f, ratio * v);
    return out;
}

Tensor degrade_pixels(const Tensor& images, int factor) {
    if (factor < 1) throw ConfigError("degrade factor must be >= 1, got " + std::to_string(factor));
    if (images.rank() != 4) throw InputError("degrade_pixels expects (N,C,H,W) images");
    const int h = images.dim(2), w = images.dim(3);
    if (h % factor != 0 || w % factor != 0) {
        throw ConfigError("image dims " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by degrade factor " + std::to_string(factor));
    }
    Tensor out(images.shape);
    const int n = images.dim(0), c = images.dim(1);
    for (int s = 0; s < n; ++s) {
        for (int ci = 0; ci < c; ++ci) {
            const float* src = images.ptr() + (static_cast<size_t>(s) * c + ci) * h * w;
            float* dst = out.ptr() + (static_cast<size_t>(s) * c + ci) * h * w;
            for (int i = 0; i < h; ++i) {
                const float* srow = src + static_cast<size_t>(i / factor * factor) * w;
                float* drow = dst + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) drow[j] = srow[j / factor * factor];
            }
        }
    }
    return out;
}

Tensor occlude_eyes(const Tensor& images, float fraction) {
    if (!(fraction > 0.0f && fraction < 1.0f)) {
        throw ConfigError("occlusion fraction must lie in (0,1), got " + std::to_string(fraction));
    }
    if (images.rank() != 4) throw InputError("occlude_eyes expects (N,C,H,W) images");
    const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const int rows = static_cast<int>(std::floor(static_cast<double>(fraction) * h));
    Tensor out = images;
    for (int s = 0; s < n; ++s) {
        for (int ci = 0; ci < c; ++ci) {
            float* plane = out.ptr() + (static_cast<size_t>(s) * c + ci) * h * w;
            std::memset(plane, 0, sizeof(float) * static_cast<size_t>(rows) * w);
        }
    }
    return out;
}

Tensor apply_manipulation(const Tensor& images, const ManipulationSpec& spec) {
    switch (spec.kind) {
        case ManipulationSpec::Kind::Brightness: return apply_brightness(images, spec.brightness_ratio);
        case ManipulationSpec::Kind::PixelDegrade: return degrade_pixels(images, spec.degrade_factor);
        case ManipulationSpec::Kind::EyeOcclusion: return occlude_eyes(images, spec.occlusion_fraction);
    }
    throw ConfigError("unknown manipulation kind");
}

// ---- augmented test sets ----

namespace {

LabeledDataset concat(const std::vector<const LabeledDataset*>& parts) {
    int total = 0;
    for (const auto* p : parts) total += p->size();
    const auto& first = *parts.front();
    LabeledDataset out;
    out.classes = first.classes;
    out.images = Tensor({total, first.images.dim(1), first.images.dim(2), first.images.dim(3)});
    out.labels.reserve(static_cast<size_t>(total));
    size_t pos = 0;
    for (const auto* p : parts) {
        std::memcpy(out.images.ptr() + pos, p->images.ptr(), p->images.numel() * sizeof(float));
        pos += p->images.numel();
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    }
    return out;
}

}  // namespace

LabeledDataset build_test_set(const LabeledDataset& base, TestDataType tdt,
                              float br_dark, float br_bright) {
    switch (tdt) {
        case TestDataType::Clean:
            return base;
        case TestDataType::BrightPlusClean: {
            LabeledDataset bright{apply_brightness(base.images, br_bright), base.labels, base.classes};
            return concat({&bright, &base});
        }
        case TestDataType::DarkPlusClean: {
            LabeledDataset dark{apply_brightness(base.images, br_dark), base.labels, base.classes};
            return concat({&dark, &base});
        }
        case TestDataType::BrightDarkClean: {
            LabeledDataset bright{apply_brightness(base.images, br_bright), base.labels, base.classes};
            LabeledDataset dark{apply_brightness(base.images, br_dark), base.labels, base.classes};
            return concat({&bright, &dark, &base});
        }
    }
    throw ConfigError("unknown test set type");
}

// ---- image dump ----

void dump_ppm(const Tensor& images, int index, const std::string& path) {
    if (images.rank() != 4) throw InputError("dump_ppm expects (N,C,H,W) images");
    const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (index < 0 || index >= n) throw InputError("sample index " + std::to_string(index) + " out of range");
    if (c != 1 && c != 3) throw InputError("dump_ppm supports 1- or 3-channel images, got " + std::to_string(c));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    const float* img = images.ptr() + static_cast<size_t>(index) * c * h * w;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int ch = 0; ch < 3; ++ch) {
                const int src = (c == 3) ? ch : 0;
                float v = img[(static_cast<size_t>(src) * h + i) * w + j];
                int byte = static_cast<int>(std::lround(v * 255.0f));
                byte = std::clamp(byte, 0, 255);
                os.put(static_cast<char>(byte));
            }
        }
    }
    if (!os) throw IoError("write failed for " + path);
}

}  // namespace flats
