#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slowdef/classify.hpp"
#include "slowdef/dates.hpp"
#include "slowdef/errors.hpp"
#include "slowdef/parallel.hpp"
#include "slowdef/raster.hpp"
#include "slowdef/rewrap.hpp"

namespace slowdef {

/// Per-pixel deformation probability for one epoch and one wrap gain.
struct ProbabilityMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> p;       // row-major, values in [0, 1]
    std::string epoch_date;      // optional metadata
    int gain = 1;

    size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
    double at(int r, int c) const { return p[idx(r, c)]; }
};

/// Pixel-wise mean across wrap gains plus the retained per-gain maps.
struct EnsembleResult {
    ProbabilityMap mean;
    std::vector<int> gains;
    std::vector<ProbabilityMap> per_gain;
};

using Classifier = std::function<double(const Patch&)>;

inline constexpr int kPatchStride = 28;
inline constexpr int kMergeKernelSize = 20;
inline constexpr double kMergeKernelSigma = 5.0;

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

/// Patch top-left offsets along one axis: every multiple of the 28-pixel
/// stride that fits, plus a final offset clamped so the last patch ends
/// exactly at the edge. dim must be >= the patch size.
inline std::vector<int> tile_offsets(int dim) {
    if (dim < Patch::kSize)
        throw DimensionError("tile_offsets: dimension " + std::to_string(dim) +
                             " smaller than patch size");
    std::vector<int> offsets;
    for (int off = 0; off + Patch::kSize <= dim; off += kPatchStride) offsets.push_back(off);
    if (offsets.back() + Patch::kSize < dim) offsets.push_back(dim - Patch::kSize);
    return offsets;
}

/// Replicate-pads an image on the bottom/right up to at least
/// Patch::kSize in each dimension.
inline GrayImage pad_to_patch(const GrayImage& img) {
    if (img.rows >= Patch::kSize && img.cols >= Patch::kSize) return img;
    GrayImage out(std::max(img.rows, Patch::kSize), std::max(img.cols, Patch::kSize));
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c)
            out.at(r, c) = img.at(std::min(r, img.rows - 1), std::min(c, img.cols - 1));
    return out;
}

struct TilePlacement {
    Patch patch;
    int row_offset = 0;
    int col_offset = 0;
};

/// Materializes all patches. Images smaller than a patch are replicate-padded
/// first; offsets then refer to the padded image.
inline std::vector<TilePlacement> tile(const GrayImage& image) {
    const GrayImage padded = pad_to_patch(image);
    std::vector<TilePlacement> out;
    for (int r0 : tile_offsets(padded.rows))
        for (int c0 : tile_offsets(padded.cols))
            out.push_back({extract_patch(padded, r0, c0), r0, c0});
    return out;
}

// ---------------------------------------------------------------------------
// Probability map
// ---------------------------------------------------------------------------

namespace detail {

/// Paints each patch score uniformly over its footprint and averages by
/// coverage count. Exposed for tests.
inline std::vector<double> paint_average(int rows, int cols,
                                         const std::vector<std::pair<std::pair<int, int>, double>>& scores) {
    std::vector<double> acc(static_cast<size_t>(rows) * cols, 0.0);
    std::vector<int> count(acc.size(), 0);
    for (const auto& [offset, p] : scores) {
        for (int r = offset.first; r < offset.first + Patch::kSize; ++r)
            for (int c = offset.second; c < offset.second + Patch::kSize; ++c) {
                acc[static_cast<size_t>(r) * cols + c] += p;
                ++count[static_cast<size_t>(r) * cols + c];
            }
    }
    for (size_t i = 0; i < acc.size(); ++i) {
        if (count[i] == 0)
            throw NumericalError("paint_average: uncovered pixel (tile coverage violated)");
        acc[i] /= static_cast<double>(count[i]);
    }
    return acc;
}

inline std::vector<double> merge_kernel_1d() {
    std::vector<double> k(kMergeKernelSize);
    double sum = 0.0;
    for (int i = 0; i < kMergeKernelSize; ++i) {
        const double x = i - (kMergeKernelSize - 1) / 2.0;  // even kernel, half-pixel centre
        k[i] = std::exp(-x * x / (2.0 * kMergeKernelSigma * kMergeKernelSigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable correlation with the unit-sum merge kernel, replicate padding.
inline void merge_smooth(std::vector<double>& map, int rows, int cols) {
    const std::vector<double> k = merge_kernel_1d();
    const int anchor = kMergeKernelSize / 2;  // sample window [i-10, i+9]
    std::vector<double> tmp(map.size());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double s = 0.0;
            for (int i = 0; i < kMergeKernelSize; ++i)
                s += k[i] * map[static_cast<size_t>(r) * cols +
                                std::clamp(c + i - anchor, 0, cols - 1)];
            tmp[static_cast<size_t>(r) * cols + c] = s;
        }
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int i = 0; i < kMergeKernelSize; ++i)
                s += k[i] * tmp[static_cast<size_t>(std::clamp(r + i - anchor, 0, rows - 1)) * cols + c];
            map[static_cast<size_t>(r) * cols + c] = s;
        }
}

}  // namespace detail

/// Classifies every patch, paints the scalar probabilities over their
/// footprints, averages by coverage, and smooths with the 20x20 sigma-5
/// Gaussian merge kernel. Patch classification may run in parallel; the merge
/// order is fixed, so the output is bit-identical for any thread count.
inline ProbabilityMap probability_map(const GrayImage& image, const Classifier& classifier,
                                      int threads = 1) {
    const GrayImage padded = pad_to_patch(image);
    const std::vector<int> row_offsets = tile_offsets(padded.rows);
    const std::vector<int> col_offsets = tile_offsets(padded.cols);
    std::vector<std::pair<std::pair<int, int>, double>> scores(row_offsets.size() *
                                                               col_offsets.size());
    parallel_for(scores.size(), threads, [&](size_t i) {
        const int r0 = row_offsets[i / col_offsets.size()];
        const int c0 = col_offsets[i % col_offsets.size()];
        double p = 0.0;
        try {
            p = classifier(extract_patch(padded, r0, c0));
        } catch (const std::exception& e) {
            throw NumericalError("probability_map: classifier failed at patch offset (" +
                                 std::to_string(r0) + "," + std::to_string(c0) + "): " + e.what());
        }
        if (!(p >= 0.0 && p <= 1.0))
            throw NumericalError("probability_map: classifier returned " + std::to_string(p) +
                                 " at patch offset (" + std::to_string(r0) + "," +
                                 std::to_string(c0) + "), expected [0,1]");
        scores[i] = {{r0, c0}, p};
    });

    std::vector<double> map = detail::paint_average(padded.rows, padded.cols, scores);
    detail::merge_smooth(map, padded.rows, padded.cols);

    ProbabilityMap out;
    out.rows = image.rows;
    out.cols = image.cols;
    out.p.resize(static_cast<size_t>(image.rows) * image.cols);
    for (int r = 0; r < image.rows; ++r)
        for (int c = 0; c < image.cols; ++c)
            out.p[out.idx(r, c)] = map[static_cast<size_t>(r) * padded.cols + c];
    return out;
}

// ---------------------------------------------------------------------------
// Ensemble across wrap gains
// ---------------------------------------------------------------------------

/// Pixel-wise arithmetic mean over maps whose gains are exactly
/// {2^0 .. 2^(N-1)}. Maps are summed in ascending gain order, so the result
/// does not depend on the order they are passed in.
inline EnsembleResult ensemble(std::vector<ProbabilityMap> maps) {
    if (maps.empty()) throw ConfigError("ensemble: no probability maps");
    std::sort(maps.begin(), maps.end(),
              [](const ProbabilityMap& a, const ProbabilityMap& b) { return a.gain < b.gain; });
    for (size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].gain != (1 << i)) {
            std::string got;
            for (const auto& m : maps) got += (got.empty() ? "" : ",") + std::to_string(m.gain);
            throw ConfigError("ensemble: gains {" + got + "} are not {2^0..2^" +
                              std::to_string(maps.size() - 1) + "}");
        }
        if (maps[i].rows != maps[0].rows || maps[i].cols != maps[0].cols)
            throw DimensionError("ensemble: probability maps must share dimensions");
    }
    EnsembleResult res;
    res.mean.rows = maps[0].rows;
    res.mean.cols = maps[0].cols;
    res.mean.gain = 0;
    res.mean.epoch_date = maps[0].epoch_date;
    res.mean.p.assign(maps[0].p.size(), 0.0);
    for (const auto& m : maps)
        for (size_t i = 0; i < m.p.size(); ++i) res.mean.p[i] += m.p[i];
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (auto& v : res.mean.p) v *= inv;
    for (const auto& m : maps) res.gains.push_back(m.gain);
    res.per_gain = std::move(maps);
    return res;
}

// ---------------------------------------------------------------------------
// Flagging
// ---------------------------------------------------------------------------

struct FlagResult {
    bool flagged = false;
    int peak_row = 0;
    int peak_col = 0;
    double peak_value = 0.0;
};

/// True iff the maximum probability over the region (whole map when absent)
/// strictly exceeds the threshold. Ties resolve to the smallest (row, col).
inline FlagResult flag(const ProbabilityMap& map, double threshold = 0.5,
                       const std::optional<std::vector<std::pair<int, int>>>& region = std::nullopt) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw DomainError("flag: threshold must lie in (0, 1)");
    FlagResult res;
    bool first = true;
    auto consider = [&](int r, int c) {
        if (r < 0 || r >= map.rows || c < 0 || c >= map.cols)
            throw DomainError("flag: region pixel (" + std::to_string(r) + "," +
                              std::to_string(c) + ") outside map");
        const double v = map.at(r, c);
        if (first || v > res.peak_value) {
            res.peak_value = v;
            res.peak_row = r;
            res.peak_col = c;
            first = false;
        }
    };
    if (region) {
        if (region->empty()) throw DomainError("flag: empty region");
        std::vector<std::pair<int, int>> sorted = *region;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [r, c] : sorted) consider(r, c);
    } else {
        for (int r = 0; r < map.rows; ++r)
            for (int c = 0; c < map.cols; ++c) consider(r, c);
    }
    res.flagged = res.peak_value > threshold;
    return res;
}

inline FlagResult flag(const EnsembleResult& ens, double threshold = 0.5,
                       const std::optional<std::vector<std::pair<int, int>>>& region = std::nullopt) {
    return flag(ens.mean, threshold, region);
}

// ---------------------------------------------------------------------------
// Time series
// ---------------------------------------------------------------------------

struct StackEpoch {
    std::string date;  // ISO 8601
    PhaseGrid displacement;  // cumulative, meters
};

struct NamedPoint {
    std::string name;
    int row = 0;
    int col = 0;
};

struct TimeSeriesOptions {
    std::vector<int> gains{1, 2, 4, 8};
    double wavelength_m = 0.0554658;
    double threshold = 0.5;
    int threads = 1;
    /// Called with every per-gain probability map as it is produced.
    std::function<void(const ProbabilityMap&)> map_sink;
};

struct TimeSeriesResult {
    std::vector<std::string> dates;
    std::vector<int> gains;
    std::vector<NamedPoint> points;
    /// per_gain[g][d][p]: probability at point p, date d, gain gains[g]
    std::vector<std::vector<std::vector<double>>> per_gain;
    /// ensemble[d][p]: mean over gains (Eq. of the per-gain values)
    std::vector<std::vector<double>> ensemble;
    /// first date with ensemble > threshold, per point; empty string if none
    std::vector<std::string> first_crossing;
};

/// Rewraps each cumulative-displacement epoch at every gain, classifies it,
/// records the probability at each named point, and averages across gains.
inline TimeSeriesResult run_timeseries(const std::vector<StackEpoch>& stack,
                                       const std::vector<NamedPoint>& points,
                                       const Classifier& classifier,
                                       const TimeSeriesOptions& opt = {}) {
    if (stack.empty()) throw DomainError("run_timeseries: empty stack");
    if (points.empty()) throw DomainError("run_timeseries: no monitoring points");
    std::vector<int> gains = opt.gains;
    std::sort(gains.begin(), gains.end());
    for (size_t i = 0; i < gains.size(); ++i)
        if (gains[i] != (1 << i))
            throw ConfigError("run_timeseries: gains must be {2^0..2^(N-1)}");
    for (size_t d = 0; d < stack.size(); ++d) {
        validate_date(stack[d].date);
        if (d > 0 && !(stack[d - 1].date < stack[d].date))
            throw DomainError("run_timeseries: dates must be strictly increasing ('" +
                              stack[d - 1].date + "' then '" + stack[d].date + "')");
        if (!stack[d].displacement.same_shape(stack[0].displacement))
            throw DimensionError("run_timeseries: epoch grids must share dimensions");
    }
    for (const auto& pt : points)
        if (pt.row < 0 || pt.row >= stack[0].displacement.rows || pt.col < 0 ||
            pt.col >= stack[0].displacement.cols)
            throw DomainError("run_timeseries: point '" + pt.name + "' outside grid");

    TimeSeriesResult res;
    res.gains = gains;
    res.points = points;
    for (const auto& e : stack) res.dates.push_back(e.date);
    res.per_gain.assign(gains.size(),
                        std::vector<std::vector<double>>(stack.size(),
                                                         std::vector<double>(points.size(), 0.0)));
    res.ensemble.assign(stack.size(), std::vector<double>(points.size(), 0.0));

    for (size_t d = 0; d < stack.size(); ++d) {
        for (size_t g = 0; g < gains.size(); ++g) {
            WrapParams wp;
            wp.mu = gains[g];
            wp.wavelength_m = opt.wavelength_m;
            const GrayImage gray = to_gray(displacement_to_wrapped(stack[d].displacement, wp));
            ProbabilityMap pm = probability_map(gray, classifier, opt.threads);
            pm.epoch_date = stack[d].date;
            pm.gain = gains[g];
            for (size_t p = 0; p < points.size(); ++p)
                res.per_gain[g][d][p] = pm.at(points[p].row, points[p].col);
            if (opt.map_sink) opt.map_sink(pm);
        }
        for (size_t p = 0; p < points.size(); ++p) {
            double sum = 0.0;
            for (size_t g = 0; g < gains.size(); ++g) sum += res.per_gain[g][d][p];
            res.ensemble[d][p] = sum / static_cast<double>(gains.size());
        }
    }
    res.first_crossing.assign(points.size(), "");
    for (size_t p = 0; p < points.size(); ++p)
        for (size_t d = 0; d < stack.size(); ++d)
            if (res.ensemble[d][p] > opt.threshold) {
                res.first_crossing[p] = res.dates[d];
                break;
            }
    return res;
}

}  // namespace slowdef
