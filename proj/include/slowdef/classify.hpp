#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "slowdef/errors.hpp"
#include "slowdef/nn.hpp"
#include "slowdef/random.hpp"
#include "slowdef/raster.hpp"
#include "slowdef/rewrap.hpp"
#include "slowdef/synthgen.hpp"
#include "slowdef/version.hpp"

namespace slowdef {

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// Fixed 224x224 grayscale patch, intensities normalized to [0, 1].
struct Patch {
    static constexpr int kSize = 224;
    std::vector<float> v;  // row-major, kSize*kSize

    void check() const {
        if (v.size() != static_cast<size_t>(kSize) * kSize)
            throw DimensionError("Patch: expected " + std::to_string(kSize * kSize) +
                                 " values, got " + std::to_string(v.size()));
    }
    float at(int r, int c) const { return v[static_cast<size_t>(r) * kSize + c]; }
};

/// Cuts a patch with its top-left corner at (r0, c0); the window must lie
/// inside the image.
inline Patch extract_patch(const GrayImage& img, int r0, int c0) {
    if (r0 < 0 || c0 < 0 || r0 + Patch::kSize > img.rows || c0 + Patch::kSize > img.cols)
        throw DimensionError("extract_patch: window (" + std::to_string(r0) + "," +
                             std::to_string(c0) + ") outside image " + std::to_string(img.rows) +
                             "x" + std::to_string(img.cols));
    Patch p;
    p.v.resize(static_cast<size_t>(Patch::kSize) * Patch::kSize);
    for (int r = 0; r < Patch::kSize; ++r)
        for (int c = 0; c < Patch::kSize; ++c)
            p.v[static_cast<size_t>(r) * Patch::kSize + c] =
                static_cast<float>(img.at(r0 + r, c0 + c)) / 255.0f;
    return p;
}

// ---------------------------------------------------------------------------
// Reference network
// ---------------------------------------------------------------------------

/// Desk-scale reference architecture trainable in minutes on one CPU core.
inline const char* reference_descriptor() {
    return "input 1 224 224;"
           "conv 1 8 3 1;relu;maxpool 4;"
           "conv 8 16 3 1;relu;maxpool 4;"
           "conv 16 32 3 1;relu;maxpool 2;"
           "flatten;fc 1568 64;relu;fc 64 2;softmax";
}

constexpr int kLabelBackground = 0;
constexpr int kLabelDeformation = 1;

struct LabeledPatch {
    Patch patch;
    int label = kLabelBackground;
    int item_id = -1;  // provenance, used for scene-disjoint holdout splits
};

struct Hyperparams {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 30;
    std::string descriptor = reference_descriptor();
};

/// Trained classifier: architecture, float32 parameters, training metadata.
struct ClassifierModel {
    nn::Network<float> net{reference_descriptor()};
    uint64_t seed = 0;
    int epochs = 0;
    std::vector<double> loss_curve;  // mean cross-entropy per epoch
};

namespace detail {

template <typename T>
nn::Vector<T> patch_input(const Patch& p) {
    p.check();
    nn::Vector<T> x(p.v.size());
    for (size_t i = 0; i < p.v.size(); ++i) x(static_cast<Eigen::Index>(i)) = static_cast<T>(p.v[i]);
    return x;
}

}  // namespace detail

/// Probability that the patch contains deformation. Deterministic for a fixed
/// model and patch; always in [0, 1].
inline double predict(const ClassifierModel& model, const Patch& patch) {
    const nn::Vector<float> logits = model.net.forward(detail::patch_input<float>(patch), nullptr);
    if (logits.size() != 2) throw DimensionError("predict: classifier head must have 2 outputs");
    const nn::Vector<float> p = nn::Network<float>::softmax(logits);
    return static_cast<double>(p(kLabelDeformation));
}

/// Mini-batch SGD with momentum on softmax cross-entropy. Single-threaded and
/// bit-reproducible for a fixed (seed, data, hyperparams).
inline ClassifierModel train(const std::vector<LabeledPatch>& data, const Hyperparams& hp,
                             uint64_t seed) {
    if (data.empty()) throw TrainingError("train: empty dataset");
    bool has_pos = false, has_neg = false;
    for (const auto& s : data) {
        if (s.label == kLabelDeformation) has_pos = true;
        else if (s.label == kLabelBackground) has_neg = true;
        else throw TrainingError("train: label must be 0 (background) or 1 (deformation)");
    }
    if (!has_pos || !has_neg)
        throw TrainingError("train: dataset must contain both classes");
    if (hp.batch_size < 1 || hp.epochs < 1)
        throw TrainingError("train: batch_size and epochs must be positive");

    ClassifierModel model;
    model.net = nn::Network<float>(hp.descriptor);
    model.net.he_init(seed);
    model.seed = seed;
    model.epochs = hp.epochs;

    auto grads = model.net.make_grads();
    auto velocity = model.net.make_grads();
    nn::Network<float>::Cache cache;
    Rng rng(seed ^ 0x5eedf00dull);
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
            grads.set_zero();
            for (size_t i = start; i < end; ++i) {
                const LabeledPatch& s = data[order[i]];
                const nn::Vector<float> logits =
                    model.net.forward(detail::patch_input<float>(s.patch), &cache);
                nn::Vector<float> dlogits;
                epoch_loss += static_cast<double>(
                    nn::Network<float>::softmax_cross_entropy(logits, s.label, &dlogits));
                model.net.backward(cache, dlogits, grads);
            }
            grads.scale(1.0f / static_cast<float>(end - start));
            model.net.sgd_update(grads, velocity, static_cast<float>(hp.learning_rate),
                                 static_cast<float>(hp.momentum));
        }
        model.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return model;
}

/// Compares analytic gradients against double-precision central finite
/// differences (step 1e-5) on a random subset of at least sample_count
/// parameters. Returns the max relative error.
inline double gradient_check(const ClassifierModel& model, const Patch& patch, int label,
                             int sample_count = 120, uint64_t seed = 20240229) {
    nn::Network<double> net(model.net.descriptor());
    net.copy_params_from(model.net);

    const nn::Vector<double> x = detail::patch_input<double>(patch);
    nn::Network<double>::Cache cache;
    const nn::Vector<double> logits = net.forward(x, &cache);
    nn::Vector<double> dlogits;
    nn::Network<double>::softmax_cross_entropy(logits, label, &dlogits);
    auto grads = net.make_grads();
    net.backward(cache, dlogits, grads);

    // Flatten analytic gradients in parameter order.
    std::vector<double> flat;
    flat.reserve(net.param_count());
    for (size_t p = 0; p < grads.w.size(); ++p) {
        for (Eigen::Index r = 0; r < grads.w[p].rows(); ++r)
            for (Eigen::Index c = 0; c < grads.w[p].cols(); ++c) flat.push_back(grads.w[p](r, c));
        for (Eigen::Index i = 0; i < grads.b[p].size(); ++i) flat.push_back(grads.b[p](i));
    }
    for (double g : flat)
        if (!std::isfinite(g)) throw NumericalError("gradient_check: non-finite analytic gradient");

    const size_t total = net.param_count();
    const size_t want = std::min<size_t>(total, static_cast<size_t>(std::max(1, sample_count)));
    Rng rng(seed);
    std::set<size_t> chosen;
    while (chosen.size() < want) chosen.insert(static_cast<size_t>(rng.integer(total)));

    const double h = 1e-5;
    double max_rel = 0.0;
    for (size_t idx : chosen) {
        const double orig = net.get_param(idx);
        net.set_param(idx, orig + h);
        const double lp = nn::Network<double>::softmax_cross_entropy(net.forward(x, nullptr),
                                                                     label, nullptr);
        net.set_param(idx, orig - h);
        const double lm = nn::Network<double>::softmax_cross_entropy(net.forward(x, nullptr),
                                                                     label, nullptr);
        net.set_param(idx, orig);
        const double numeric = (lp - lm) / (2.0 * h);
        if (!std::isfinite(numeric))
            throw NumericalError("gradient_check: non-finite numeric gradient");
        const double analytic = flat[idx];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Deterministic baseline classifier
// ---------------------------------------------------------------------------

// The baseline scores fringe activity: wrapped phase gradients are averaged
// over a small window (coherent fringes survive, rough noise cancels), the
// fraction f of pixels whose smoothed gradient magnitude exceeds
// kBaselineGradientFloor is computed, and f maps through a fixed logistic.
// A constant patch gives f = 0 and P = 1/(1+exp(k*f0)) ~= 0.038.
inline constexpr int kBaselineSmoothHalf = 2;           // 5x5 averaging window
inline constexpr double kBaselineGradientFloor = 0.22;  // rad/pixel
inline constexpr double kBaselineLogisticGain = 18.0;   // k
inline constexpr double kBaselineFractionMid = 0.18;    // f0

/// Fraction of pixels whose smoothed wrapped-gradient magnitude exceeds the
/// spatial-frequency floor.
inline double baseline_fringe_fraction(const Patch& patch) {
    patch.check();
    constexpr int n = Patch::kSize;
    constexpr int m = n - 1;  // forward differences live on an (n-1)^2 grid
    std::vector<double> dx(static_cast<size_t>(m) * m), dy(static_cast<size_t>(m) * m);
    auto phase = [&](int r, int c) {
        return static_cast<double>(patch.at(r, c)) * 2.0 * M_PI - M_PI;
    };
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) {
            dx[static_cast<size_t>(r) * m + c] = wrap_to_pi(phase(r, c + 1) - phase(r, c));
            dy[static_cast<size_t>(r) * m + c] = wrap_to_pi(phase(r + 1, c) - phase(r, c));
        }
    // Separable box smoothing with replicated edges.
    auto smooth = [&](std::vector<double>& a) {
        constexpr int half = kBaselineSmoothHalf;
        std::vector<double> tmp(a.size());
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) {
                double s = 0.0;
                for (int k = -half; k <= half; ++k)
                    s += a[static_cast<size_t>(r) * m + std::clamp(c + k, 0, m - 1)];
                tmp[static_cast<size_t>(r) * m + c] = s / (2 * half + 1);
            }
        for (int c = 0; c < m; ++c)
            for (int r = 0; r < m; ++r) {
                double s = 0.0;
                for (int k = -half; k <= half; ++k)
                    s += tmp[static_cast<size_t>(std::clamp(r + k, 0, m - 1)) * m + c];
                a[static_cast<size_t>(r) * m + c] = s / (2 * half + 1);
            }
    };
    smooth(dx);
    smooth(dy);
    size_t active = 0;
    for (size_t i = 0; i < dx.size(); ++i)
        if (std::hypot(dx[i], dy[i]) > kBaselineGradientFloor) ++active;
    return static_cast<double>(active) / static_cast<double>(dx.size());
}

/// Deterministic fringe-density classifier; see the constants above.
inline double baseline_predict(const Patch& patch) {
    const double f = baseline_fringe_fraction(patch);
    return 1.0 / (1.0 + std::exp(-kBaselineLogisticGain * (f - kBaselineFractionMid)));
}

// ---------------------------------------------------------------------------
// Model serialization (CLF1)
//
//   magic "CLF1" | uint32 LE descriptor length | descriptor ASCII |
//   parameter tensors as little-endian float32 in declaration order
//   (per layer: W row-major [out][in][kh][kw] or [out][in], then bias).
// ---------------------------------------------------------------------------

inline void save_model(const ClassifierModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_model: cannot open '" + path + "' for writing");
    out.write(kClfMagic, 4);
    const std::string& desc = model.net.descriptor();
    const uint32_t len = static_cast<uint32_t>(desc.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                             static_cast<unsigned char>((len >> 8) & 0xff),
                             static_cast<unsigned char>((len >> 16) & 0xff),
                             static_cast<unsigned char>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    const size_t n = model.net.param_count();
    std::vector<unsigned char> raw(n * 4);
    for (size_t i = 0; i < n; ++i)
        detail::float_to_le_bytes(model.net.get_param(i), &raw[i * 4]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("save_model: write failed for '" + path + "'");
}

inline ClassifierModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_model: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != kClfMagic)
        throw FormatError("load_model: bad magic in '" + path + "' (expected CLF1)");
    unsigned char lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    if (in.gcount() != 4) throw FormatError("load_model: truncated descriptor length");
    const uint32_t len = static_cast<uint32_t>(lenb[0]) | (static_cast<uint32_t>(lenb[1]) << 8) |
                         (static_cast<uint32_t>(lenb[2]) << 16) |
                         (static_cast<uint32_t>(lenb[3]) << 24);
    if (len == 0 || len > (1u << 20)) throw FormatError("load_model: implausible descriptor length");
    std::string desc(len, '\0');
    in.read(desc.data(), len);
    if (static_cast<uint32_t>(in.gcount()) != len)
        throw FormatError("load_model: truncated descriptor");

    ClassifierModel model;
    model.net = nn::Network<float>(desc);
    const size_t n = model.net.param_count();
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size())
        throw FormatError("load_model: truncated parameter payload in '" + path + "'");
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
        throw FormatError("load_model: trailing bytes after parameters in '" + path + "'");
    for (size_t i = 0; i < n; ++i)
        model.net.set_param(i, detail::le_bytes_to_float(&raw[i * 4]));
    return model;
}

// ---------------------------------------------------------------------------
// Training corpus construction
// ---------------------------------------------------------------------------

/// Cuts labeled patches from one synthetic scene: the displacement grid is
/// wrapped at each gain in `gains`, converted to grayscale, and one patch per
/// gain is cut at a seeded offset. For deformation scenes the offset is
/// constrained so the source epicenter (scene centre) falls in the central
/// half of the patch.
inline std::vector<LabeledPatch> cut_training_patches(const DatasetItem& item,
                                                      double wavelength_m,
                                                      const std::vector<int>& gains = {1, 2}) {
    const PhaseGrid& x = item.x;
    if (x.rows < Patch::kSize || x.cols < Patch::kSize)
        throw DimensionError("cut_training_patches: scene smaller than a patch");
    Rng rng(detail::derive_stream(item.meta.seed, 0xc0ffeeull));
    const bool positive = item.meta.has_deformation();
    const int er = static_cast<int>(std::lround(item.meta.source.source_row));
    const int ec = static_cast<int>(std::lround(item.meta.source.source_col));

    auto offset_range = [&](int centre, int limit) {
        int lo = 0, hi = limit;  // inclusive range of valid offsets
        if (positive) {
            lo = std::max(lo, centre - (3 * Patch::kSize / 4 - 1));
            hi = std::min(hi, centre - Patch::kSize / 4);
            if (lo > hi) throw DomainError("cut_training_patches: epicenter too close to the edge");
        }
        return std::pair<int, int>(lo, hi);
    };
    const auto [rlo, rhi] = offset_range(er, x.rows - Patch::kSize);
    const auto [clo, chi] = offset_range(ec, x.cols - Patch::kSize);

    std::vector<LabeledPatch> out;
    for (int mu : gains) {
        WrapParams wp;
        wp.mu = mu;
        wp.wavelength_m = wavelength_m;
        const GrayImage img = to_gray(displacement_to_wrapped(x, wp));
        const int r0 = rlo + static_cast<int>(rng.integer(static_cast<uint64_t>(rhi - rlo + 1)));
        const int c0 = clo + static_cast<int>(rng.integer(static_cast<uint64_t>(chi - clo + 1)));
        LabeledPatch lp;
        lp.patch = extract_patch(img, r0, c0);
        lp.label = positive ? kLabelDeformation : kLabelBackground;
        lp.item_id = item.meta.item_id;
        out.push_back(std::move(lp));
    }
    return out;
}

}  // namespace slowdef
