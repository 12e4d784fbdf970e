#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slowdef/csv.hpp"
#include "slowdef/errors.hpp"
#include "slowdef/parallel.hpp"
#include "slowdef/random.hpp"
#include "slowdef/raster.hpp"

namespace slowdef {

// ---------------------------------------------------------------------------
// Parameter types
// ---------------------------------------------------------------------------

/// Mogi point-pressure source plus the radar viewing geometry.
/// Grid convention: +col is east, -row is north; source_row/source_col may be
/// sub-pixel. look_azimuth_deg is measured clockwise from north (90 = east).
struct SourceParams {
    double depth_m = 3000.0;
    double volume_change_m3 = 1e6;
    double incidence_deg = 23.0;
    double source_row = 0.0;
    double source_col = 0.0;
    double look_azimuth_deg = 90.0;

    void check() const {
        if (!(depth_m > 0.0)) throw DomainError("SourceParams: depth_m must be positive");
        if (!(incidence_deg >= 0.0 && incidence_deg < 90.0))
            throw DomainError("SourceParams: incidence_deg must be in [0, 90)");
    }
};

/// Atmospheric model parameters. sigma2_max_mm2/efold_km describe the
/// turbulent covariance c(d) = sigma2_max * exp(-d / efold_km) [mm^2, d in km];
/// strat_coeff_m_per_km scales the elevation-correlated stratified delay.
struct AtmosphereParams {
    double sigma2_max_mm2 = 7.5;
    double efold_km = 8.0;
    double strat_coeff_m_per_km = 0.025;
    PhaseGrid dem;  // elevation in meters

    void check() const {
        if (!(sigma2_max_mm2 > 0.0)) throw DomainError("AtmosphereParams: sigma2_max_mm2 must be positive");
        if (!(efold_km > 0.0)) throw DomainError("AtmosphereParams: efold_km must be positive");
    }
};

/// Relative weights of the stratified and turbulent components in
/// X = D + alpha*S + beta*T.
struct CompositionWeights {
    double alpha = 0.0;
    double beta = 0.0;

    void check() const {
        if (!(alpha >= 0.0) || !(beta >= 0.0))
            throw DomainError("CompositionWeights: alpha and beta must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// Deformation: Mogi point source
// ---------------------------------------------------------------------------

/// Line-of-sight surface displacement of a Mogi source in an elastic
/// half-space with Poisson ratio 0.25:
///   u_z = C*d / (r^2+d^2)^(3/2),  u_r = C*r / (r^2+d^2)^(3/2),  C = 3*dV/(4*pi)
///   u_los = u_z*cos(theta) + u_h*sin(theta)
/// where u_h is the horizontal component resolved along the look azimuth.
inline PhaseGrid mogi_los(const SourceParams& p, int rows, int cols, double pixel_spacing_m) {
    p.check();
    PhaseGrid out(rows, cols, pixel_spacing_m);
    const double c_mogi = 3.0 * p.volume_change_m3 / (4.0 * M_PI);
    const double d = p.depth_m;
    const double theta = p.incidence_deg * M_PI / 180.0;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double az = p.look_azimuth_deg * M_PI / 180.0;
    const double look_e = std::sin(az);
    const double look_n = std::cos(az);
    for (int r = 0; r < rows; ++r) {
        const double x_n = (p.source_row - r) * pixel_spacing_m;
        for (int c = 0; c < cols; ++c) {
            const double x_e = (c - p.source_col) * pixel_spacing_m;
            const double rad2 = x_e * x_e + x_n * x_n;
            const double denom = std::pow(rad2 + d * d, 1.5);
            const double u_z = c_mogi * d / denom;
            double u_h = 0.0;
            if (rad2 > 0.0) {
                const double rad = std::sqrt(rad2);
                const double u_r = c_mogi * rad / denom;
                u_h = u_r * (x_e * look_e + x_n * look_n) / rad;
            }
            out.at(r, c) = u_z * cos_t + u_h * sin_t;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic DEM and stratified delay
// ---------------------------------------------------------------------------

/// Gaussian-hill elevation model: a central peak h*exp(-r^2/(2*radius^2))
/// plus seeded, spatially smoothed roughness. Elevations are clamped to >= 0
/// and the result is deterministic for a given seed. roughness_m = 0 gives an
/// exactly radially symmetric surface.
inline PhaseGrid synthetic_dem(int rows, int cols, double pixel_spacing_m, double peak_height_m,
                               double peak_radius_m, uint64_t seed, double roughness_m = 30.0) {
    if (!(peak_height_m > 0.0) || !(peak_radius_m > 0.0))
        throw DomainError("synthetic_dem: peak height and radius must be positive");
    if (roughness_m < 0.0) throw DomainError("synthetic_dem: roughness_m must be >= 0");
    PhaseGrid dem(rows, cols, pixel_spacing_m);
    const double cr = (rows - 1) / 2.0;
    const double cc = (cols - 1) / 2.0;
    const double two_r2 = 2.0 * peak_radius_m * peak_radius_m;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double dy = (r - cr) * pixel_spacing_m;
            const double dx = (c - cc) * pixel_spacing_m;
            dem.at(r, c) = peak_height_m * std::exp(-(dx * dx + dy * dy) / two_r2);
        }
    if (roughness_m > 0.0) {
        Rng rng(seed);
        std::vector<double> noise(dem.size());
        for (auto& v : noise) v = rng.normal();
        // Three box passes per axis approximate a Gaussian blur.
        const int half = 2;
        std::vector<double> tmp(noise.size());
        for (int pass = 0; pass < 3; ++pass) {
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) {
                    double s = 0.0;
                    for (int k = -half; k <= half; ++k) {
                        int cc2 = std::clamp(c + k, 0, cols - 1);
                        s += noise[dem.idx(r, cc2)];
                    }
                    tmp[dem.idx(r, c)] = s / (2 * half + 1);
                }
            for (int c = 0; c < cols; ++c)
                for (int r = 0; r < rows; ++r) {
                    double s = 0.0;
                    for (int k = -half; k <= half; ++k) {
                        int rr2 = std::clamp(r + k, 0, rows - 1);
                        s += tmp[dem.idx(rr2, c)];
                    }
                    noise[dem.idx(r, c)] = s;
                }
        }
        double var = 0.0;
        for (double v : noise) var += v * v;
        const double sd = std::sqrt(var / static_cast<double>(noise.size()));
        const double scale = sd > 0.0 ? roughness_m / sd : 0.0;
        for (size_t i = 0; i < dem.size(); ++i) dem.values[i] += scale * noise[i];
    }
    for (auto& v : dem.values) v = std::max(0.0, v);
    return dem;
}

/// Stratified tropospheric delay, linear in elevation and zero at the lowest
/// valid DEM point: S = strat_coeff_m_per_km * (elev_km - min elev_km).
inline PhaseGrid stratified(const AtmosphereParams& atm, int rows, int cols,
                            double pixel_spacing_m) {
    atm.check();
    if (atm.dem.rows != rows || atm.dem.cols != cols)
        throw DimensionError("stratified: DEM is " + std::to_string(atm.dem.rows) + "x" +
                             std::to_string(atm.dem.cols) + ", expected " + std::to_string(rows) +
                             "x" + std::to_string(cols));
    PhaseGrid out(rows, cols, pixel_spacing_m);
    double min_elev = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < atm.dem.size(); ++i)
        if (atm.dem.mask[i]) min_elev = std::min(min_elev, atm.dem.values[i]);
    if (!std::isfinite(min_elev)) min_elev = 0.0;
    for (size_t i = 0; i < out.size(); ++i) {
        if (!atm.dem.mask[i]) {
            out.mask[i] = 0;
            out.values[i] = 0.0;
            continue;
        }
        out.values[i] = atm.strat_coeff_m_per_km * (atm.dem.values[i] - min_elev) * 1e-3;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Turbulent delay: exact Cholesky sampler and fast spectral sampler
// ---------------------------------------------------------------------------

/// Dense-covariance Gaussian field sampler, exact up to factorization
/// round-off. Intended for small grids: the dense factorization is limited to
/// kMaxCells pixels (64x64); use SpectralTurbulenceSampler beyond that.
class CholeskyTurbulenceSampler {
public:
    static constexpr int kMaxCells = 64 * 64;

    CholeskyTurbulenceSampler(const AtmosphereParams& atm, int rows, int cols,
                              double pixel_spacing_m)
        : rows_(rows), cols_(cols), spacing_(pixel_spacing_m) {
        atm.check();
        if (rows <= 0 || cols <= 0) throw DomainError("turbulent_cholesky: grid must be non-empty");
        const long n = static_cast<long>(rows) * cols;
        if (n > kMaxCells)
            throw DomainError("turbulent_cholesky: grid of " + std::to_string(n) +
                              " pixels exceeds the dense factorization limit of " +
                              std::to_string(kMaxCells));
        Eigen::MatrixXd cov(n, n);
        const double km_per_px = pixel_spacing_m * 1e-3;
        for (long i = 0; i < n; ++i) {
            const double ri = static_cast<double>(i / cols);
            const double ci = static_cast<double>(i % cols);
            for (long j = 0; j <= i; ++j) {
                const double rj = static_cast<double>(j / cols);
                const double cj = static_cast<double>(j % cols);
                const double d_km = std::hypot(ri - rj, ci - cj) * km_per_px;
                const double c = atm.sigma2_max_mm2 * std::exp(-d_km / atm.efold_km);
                cov(i, j) = c;
                cov(j, i) = c;
            }
        }
        // Escalating diagonal jitter until the factorization succeeds.
        double jitter = 0.0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::LLT<Eigen::MatrixXd> llt(cov + jitter * Eigen::MatrixXd::Identity(n, n));
            if (llt.info() == Eigen::Success) {
                chol_ = llt.matrixL();
                jitter_applied_ = jitter;
                return;
            }
            jitter = jitter == 0.0 ? 1e-12 * atm.sigma2_max_mm2 : jitter * 10.0;
        }
        throw NumericalError(
            "turbulent_cholesky: covariance not positive definite even with jitter " +
            std::to_string(jitter));
    }

    /// Draws one field (meters of delay); deterministic for a given seed.
    PhaseGrid sample(uint64_t seed) const {
        Rng rng(seed);
        const long n = static_cast<long>(rows_) * cols_;
        Eigen::VectorXd z(n);
        for (long i = 0; i < n; ++i) z(i) = rng.normal();
        Eigen::VectorXd v = chol_ * z;  // mm
        PhaseGrid out(rows_, cols_, spacing_);
        for (long i = 0; i < n; ++i) out.values[static_cast<size_t>(i)] = v(i) * 1e-3;
        return out;
    }

    double jitter_applied() const { return jitter_applied_; }

private:
    int rows_, cols_;
    double spacing_;
    Eigen::MatrixXd chol_;
    double jitter_applied_ = 0.0;
};

/// One-shot convenience wrapper around CholeskyTurbulenceSampler.
inline PhaseGrid turbulent_cholesky(const AtmosphereParams& atm, int rows, int cols,
                                    double pixel_spacing_m, uint64_t seed) {
    return CholeskyTurbulenceSampler(atm, rows, cols, pixel_spacing_m).sample(seed);
}

namespace detail {

/// Smallest 5-smooth integer >= n (FFT-friendly sizes).
inline int next_smooth(int n) {
    for (int m = n;; ++m) {
        int k = m;
        for (int p : {2, 3, 5})
            while (k % p == 0) k /= p;
        if (k == 1) return m;
    }
}

}  // namespace detail

/// Fast approximate turbulence sampler for large grids.
///
/// Seeded white noise is filtered in the frequency domain on an enlarged
/// periodic grid (circulant embedding of the exponential covariance); the
/// transfer function is the square root of the kernel spectrum with negative
/// eigenvalues clamped to zero, and a deterministic rescale pins the pixel
/// variance to sigma2_max. The padding keeps wrap-around correlation below
/// exp(-6).
class SpectralTurbulenceSampler {
public:
    SpectralTurbulenceSampler(const AtmosphereParams& atm, int rows, int cols,
                              double pixel_spacing_m)
        : rows_(rows), cols_(cols), spacing_(pixel_spacing_m) {
        atm.check();
        if (rows <= 0 || cols <= 0) throw DomainError("turbulent_spectral: grid must be non-empty");
        const double l_px = atm.efold_km * 1000.0 / pixel_spacing_m;
        const int pad = static_cast<int>(std::ceil(6.0 * l_px));
        m_ = detail::next_smooth(std::max(rows, cols) + pad);

        // Covariance kernel on the torus, then its spectrum.
        const double km_per_px = pixel_spacing_m * 1e-3;
        std::vector<std::complex<double>> kernel(static_cast<size_t>(m_) * m_);
        for (int r = 0; r < m_; ++r) {
            const double dr = static_cast<double>(std::min(r, m_ - r));
            for (int c = 0; c < m_; ++c) {
                const double dc = static_cast<double>(std::min(c, m_ - c));
                const double d_km = std::hypot(dr, dc) * km_per_px;
                kernel[static_cast<size_t>(r) * m_ + c] =
                    atm.sigma2_max_mm2 * std::exp(-d_km / atm.efold_km);
            }
        }
        fft2(kernel, false);
        transfer_.resize(kernel.size());
        double lambda_sum = 0.0;
        for (size_t i = 0; i < kernel.size(); ++i) {
            const double lambda = std::max(0.0, kernel[i].real());
            lambda_sum += lambda;
            transfer_[i] = std::sqrt(lambda);
        }
        const double var_mm2 = lambda_sum / (static_cast<double>(m_) * m_);
        scale_ = var_mm2 > 0.0 ? std::sqrt(atm.sigma2_max_mm2 / var_mm2) : 1.0;
    }

    /// Draws one field (meters of delay); deterministic for a given seed.
    PhaseGrid sample(uint64_t seed) const {
        Rng rng(seed);
        std::vector<std::complex<double>> f(static_cast<size_t>(m_) * m_);
        for (auto& v : f) v = rng.normal();
        fft2(f, false);
        for (size_t i = 0; i < f.size(); ++i) f[i] *= transfer_[i];
        fft2(f, true);
        PhaseGrid out(rows_, cols_, spacing_);
        for (int r = 0; r < rows_; ++r)
            for (int c = 0; c < cols_; ++c)
                out.at(r, c) = scale_ * f[static_cast<size_t>(r) * m_ + c].real() * 1e-3;
        return out;
    }

    int embedding_size() const { return m_; }

private:
    void fft2(std::vector<std::complex<double>>& a, bool inverse) const {
        Eigen::FFT<double> fft;
        std::vector<std::complex<double>> line(static_cast<size_t>(m_)), spec(static_cast<size_t>(m_));
        for (int r = 0; r < m_; ++r) {
            auto* row = &a[static_cast<size_t>(r) * m_];
            std::copy(row, row + m_, line.begin());
            if (inverse)
                fft.inv(spec, line);
            else
                fft.fwd(spec, line);
            std::copy(spec.begin(), spec.end(), row);
        }
        for (int c = 0; c < m_; ++c) {
            for (int r = 0; r < m_; ++r) line[static_cast<size_t>(r)] = a[static_cast<size_t>(r) * m_ + c];
            if (inverse)
                fft.inv(spec, line);
            else
                fft.fwd(spec, line);
            for (int r = 0; r < m_; ++r) a[static_cast<size_t>(r) * m_ + c] = spec[static_cast<size_t>(r)];
        }
    }

    int rows_, cols_, m_;
    double spacing_;
    std::vector<double> transfer_;
    double scale_ = 1.0;
};

/// One-shot convenience wrapper around SpectralTurbulenceSampler.
inline PhaseGrid turbulent_spectral(const AtmosphereParams& atm, int rows, int cols,
                                    double pixel_spacing_m, uint64_t seed) {
    return SpectralTurbulenceSampler(atm, rows, cols, pixel_spacing_m).sample(seed);
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// X = D + alpha*S + beta*T, pixel-wise; output mask is the conjunction of the
/// input masks.
inline PhaseGrid compose(const PhaseGrid& d, const PhaseGrid& s, const PhaseGrid& t,
                         const CompositionWeights& w) {
    w.check();
    if (!d.same_shape(s) || !d.same_shape(t))
        throw DimensionError("compose: component grids must share dimensions");
    PhaseGrid out(d.rows, d.cols, d.pixel_spacing_m);
    for (size_t i = 0; i < out.size(); ++i) {
        const bool ok = d.mask[i] && s.mask[i] && t.mask[i];
        out.mask[i] = ok ? 1 : 0;
        out.values[i] = ok ? d.values[i] + w.alpha * s.values[i] + w.beta * t.values[i] : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset builder
// ---------------------------------------------------------------------------

struct SceneConfig {
    int rows = 280;
    int cols = 280;
    double pixel_spacing_m = 100.0;  // 28 km scene at the defaults
};

struct DatasetItemMeta {
    int item_id = 0;
    SourceParams source;
    CompositionWeights weights;
    uint64_t seed = 0;
    double max_displacement_m = 0.0;
    std::string path;  // grid file, relative to the manifest

    bool has_deformation() const { return max_displacement_m > 0.0; }
};

struct DatasetItem {
    DatasetItemMeta meta;
    PhaseGrid x;  // composed displacement, meters
};

/// Evaluation-dataset configuration. The defaults enumerate the full
/// 3 x 3 x 5 x 9 = 405-item grid.
struct DatasetConfig {
    SceneConfig scene;
    std::vector<double> depths_m{3000.0, 4000.0, 5000.0};
    std::vector<double> incidences_deg{1.0, 23.0, 44.0};
    std::vector<double> log10_volumes{5.0, 5.5, 6.0, 6.5, 7.0};
    std::vector<double> alphas{0.0, 0.5, 1.0};
    std::vector<double> betas{0.0, 0.5, 1.0};
    double sigma2_max_mm2 = 7.5;
    double efold_km = 8.0;
    double strat_coeff_m_per_km = 0.025;
    double dem_peak_m = 1500.0;
    double dem_radius_m = 5000.0;
    double dem_roughness_m = 30.0;
    double look_azimuth_deg = 90.0;
    uint64_t base_seed = 1;

    size_t item_count() const {
        return depths_m.size() * incidences_deg.size() * log10_volumes.size() * alphas.size() *
               betas.size();
    }
};

namespace detail {

inline uint64_t derive_stream(uint64_t base, uint64_t tag) {
    // splitmix64 on (base ^ tag); keeps auxiliary streams apart from the
    // spec-pinned per-item seeds base+i.
    uint64_t z = (base ^ tag) + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline AtmosphereParams dataset_atmosphere(const DatasetConfig& cfg) {
    AtmosphereParams atm;
    atm.sigma2_max_mm2 = cfg.sigma2_max_mm2;
    atm.efold_km = cfg.efold_km;
    atm.strat_coeff_m_per_km = cfg.strat_coeff_m_per_km;
    atm.dem = synthetic_dem(cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m,
                            cfg.dem_peak_m, cfg.dem_radius_m,
                            derive_stream(cfg.base_seed, 0xde0de0deull), cfg.dem_roughness_m);
    return atm;
}

}  // namespace detail

/// Generates the evaluation dataset: one composed displacement grid per
/// (depth, incidence, volume, alpha, beta) tuple, enumerated in that nesting
/// order. Item i uses seed base_seed + i for its turbulence draw. The sink may
/// be called from worker threads and out of order; item content is
/// deterministic regardless of scheduling.
inline void build_dataset(const DatasetConfig& cfg,
                          const std::function<void(DatasetItem&&)>& sink, int threads = 1) {
    const AtmosphereParams atm = detail::dataset_atmosphere(cfg);
    const PhaseGrid s = stratified(atm, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
    SpectralTurbulenceSampler turb(atm, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);

    struct Cell {
        double depth, incidence, log10_vol;
        int first_item;
    };
    std::vector<Cell> cells;
    const int per_cell = static_cast<int>(cfg.alphas.size() * cfg.betas.size());
    int item = 0;
    for (double depth : cfg.depths_m)
        for (double inc : cfg.incidences_deg)
            for (double lv : cfg.log10_volumes) {
                cells.push_back({depth, inc, lv, item});
                item += per_cell;
            }

    parallel_for(cells.size(), threads, [&](size_t ci) {
        const Cell& cell = cells[ci];
        SourceParams src;
        src.depth_m = cell.depth;
        src.incidence_deg = cell.incidence;
        src.volume_change_m3 = std::pow(10.0, cell.log10_vol);
        // Source on an exact pixel so the epicenter value is sampled directly.
        src.source_row = static_cast<double>(cfg.scene.rows / 2);
        src.source_col = static_cast<double>(cfg.scene.cols / 2);
        src.look_azimuth_deg = cfg.look_azimuth_deg;
        const PhaseGrid d =
            mogi_los(src, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
        double max_disp = 0.0;
        for (size_t i = 0; i < d.size(); ++i)
            if (d.mask[i]) max_disp = std::max(max_disp, std::abs(d.values[i]));

        int id = cell.first_item;
        for (double alpha : cfg.alphas)
            for (double beta : cfg.betas) {
                DatasetItem it;
                it.meta.item_id = id;
                it.meta.source = src;
                it.meta.weights = {alpha, beta};
                it.meta.seed = cfg.base_seed + static_cast<uint64_t>(id);
                it.meta.max_displacement_m = max_disp;
                if (beta > 0.0) {
                    const PhaseGrid t = turb.sample(it.meta.seed);
                    it.x = compose(d, s, t, it.meta.weights);
                } else {
                    PhaseGrid zero(cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
                    it.x = compose(d, s, zero, it.meta.weights);
                }
                sink(std::move(it));
                ++id;
            }
    });
}

/// Training-corpus configuration: randomized deformation scenes plus
/// atmosphere-only negatives, all seeded.
struct TrainingSetConfig {
    SceneConfig scene;
    int n_positives = 600;
    int n_negatives = 600;
    double min_max_disp_m = 0.025;
    double max_max_disp_m = 0.30;
    double sigma2_max_mm2 = 7.5;
    double efold_km = 8.0;
    double strat_coeff_m_per_km = 0.025;
    double dem_peak_m = 1500.0;
    double dem_radius_m = 5000.0;
    double dem_roughness_m = 30.0;
    double look_azimuth_deg = 90.0;
    uint64_t base_seed = 7;
};

/// Generates a labeled training corpus: items [0, n_positives) hold a Mogi
/// source with randomized depth/incidence/volume at the scene centre, items
/// [n_positives, n_positives+n_negatives) are atmosphere-only
/// (max_displacement_m = 0). Item i uses seed base_seed + i.
inline void build_training_set(const TrainingSetConfig& cfg,
                               const std::function<void(DatasetItem&&)>& sink, int threads = 1) {
    DatasetConfig dc;
    dc.scene = cfg.scene;
    dc.sigma2_max_mm2 = cfg.sigma2_max_mm2;
    dc.efold_km = cfg.efold_km;
    dc.strat_coeff_m_per_km = cfg.strat_coeff_m_per_km;
    dc.dem_peak_m = cfg.dem_peak_m;
    dc.dem_radius_m = cfg.dem_radius_m;
    dc.dem_roughness_m = cfg.dem_roughness_m;
    dc.base_seed = cfg.base_seed;
    const AtmosphereParams atm = detail::dataset_atmosphere(dc);
    const PhaseGrid s = stratified(atm, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
    SpectralTurbulenceSampler turb(atm, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);

    const int total = cfg.n_positives + cfg.n_negatives;
    parallel_for(static_cast<size_t>(total), threads, [&](size_t i) {
        const uint64_t seed = cfg.base_seed + static_cast<uint64_t>(i);
        Rng rng(detail::derive_stream(seed, 0x7ea1'0001ull));
        DatasetItem it;
        it.meta.item_id = static_cast<int>(i);
        it.meta.seed = seed;

        SourceParams src;
        src.source_row = static_cast<double>(cfg.scene.rows / 2);
        src.source_col = static_cast<double>(cfg.scene.cols / 2);
        src.look_azimuth_deg = cfg.look_azimuth_deg;
        PhaseGrid d(cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
        double max_disp = 0.0;
        const bool positive = static_cast<int>(i) < cfg.n_positives;
        if (positive) {
            src.depth_m = rng.uniform(3000.0, 5000.0);
            src.incidence_deg = rng.uniform(1.0, 44.0);
            const double target = std::exp(
                rng.uniform(std::log(cfg.min_max_disp_m), std::log(cfg.max_max_disp_m)));
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            src.volume_change_m3 = sign * target * 4.0 * M_PI * src.depth_m * src.depth_m /
                                   (3.0 * std::cos(src.incidence_deg * M_PI / 180.0));
            d = mogi_los(src, cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
            for (size_t k = 0; k < d.size(); ++k)
                max_disp = std::max(max_disp, std::abs(d.values[k]));
        } else {
            src.volume_change_m3 = 0.0;
            src.depth_m = 4000.0;
            src.incidence_deg = 23.0;
        }
        it.meta.source = src;
        it.meta.max_displacement_m = max_disp;

        CompositionWeights w;
        if (positive) {
            w.alpha = rng.uniform(0.0, 1.0);
            w.beta = rng.uniform(0.0, 1.0);
        } else if (rng.uniform() < 0.1) {
            w = {0.0, 0.0};  // a few exactly-flat negatives
        } else {
            w.alpha = rng.uniform(0.0, 1.0);
            w.beta = rng.uniform(0.0, 1.0);
        }
        it.meta.weights = w;
        if (w.beta > 0.0) {
            const PhaseGrid t = turb.sample(seed);
            it.x = compose(d, s, t, w);
        } else {
            PhaseGrid zero(cfg.scene.rows, cfg.scene.cols, cfg.scene.pixel_spacing_m);
            it.x = compose(d, s, zero, w);
        }
        sink(std::move(it));
    });
}

// ---------------------------------------------------------------------------
// Dataset manifest IO
// ---------------------------------------------------------------------------

inline void write_manifest(std::vector<DatasetItemMeta> metas, const std::string& path) {
    std::sort(metas.begin(), metas.end(),
              [](const DatasetItemMeta& a, const DatasetItemMeta& b) { return a.item_id < b.item_id; });
    csv::Writer out(path);
    out.row({"item_id", "depth_m", "incidence_deg", "log10_volume", "alpha", "beta", "seed",
             "max_displacement_m", "path"});
    for (const auto& m : metas) {
        const double lv = std::log10(std::abs(m.source.volume_change_m3));
        out.row({std::to_string(m.item_id), csv::num(m.source.depth_m),
                 csv::num(m.source.incidence_deg), csv::num(lv), csv::num(m.weights.alpha),
                 csv::num(m.weights.beta), std::to_string(m.seed),
                 csv::num(m.max_displacement_m), m.path});
    }
}

/// Loads a dataset manifest; grid paths are resolved relative to the manifest
/// file's directory.
inline std::vector<DatasetItemMeta> load_manifest(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    const int c_id = t.column("item_id");
    const int c_depth = t.column("depth_m");
    const int c_inc = t.column("incidence_deg");
    const int c_lv = t.column("log10_volume");
    const int c_alpha = t.column("alpha");
    const int c_beta = t.column("beta");
    const int c_seed = t.column("seed");
    const int c_max = t.column("max_displacement_m");
    const int c_path = t.column("path");
    const auto dir = std::filesystem::path(path).parent_path();
    std::vector<DatasetItemMeta> metas;
    metas.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        DatasetItemMeta m;
        m.item_id = static_cast<int>(csv::to_long(row[c_id], "item_id"));
        m.source.depth_m = csv::to_double(row[c_depth], "depth_m");
        m.source.incidence_deg = csv::to_double(row[c_inc], "incidence_deg");
        const double lv = csv::to_double(row[c_lv], "log10_volume");
        m.source.volume_change_m3 = std::isfinite(lv) ? std::pow(10.0, lv) : 0.0;
        m.weights.alpha = csv::to_double(row[c_alpha], "alpha");
        m.weights.beta = csv::to_double(row[c_beta], "beta");
        m.seed = static_cast<uint64_t>(csv::to_long(row[c_seed], "seed"));
        m.max_displacement_m = csv::to_double(row[c_max], "max_displacement_m");
        m.path = (dir / row[c_path]).string();
        metas.push_back(std::move(m));
    }
    return metas;
}

}  // namespace slowdef
