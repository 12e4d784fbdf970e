#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "slowdef/errors.hpp"
#include "slowdef/random.hpp"

namespace slowdef::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Architecture descriptor
//
// Semicolon-separated layer list, e.g.
//   input 1 224 224;conv 1 8 3 1;relu;maxpool 4;flatten;fc 1568 64;softmax
// conv args: in_ch out_ch kernel pad (stride 1); maxpool arg: window (= stride).
// ---------------------------------------------------------------------------

struct Layer {
    enum class Kind { Input, Conv, Relu, MaxPool, Flatten, Fc, Softmax };
    Kind kind = Kind::Input;
    int a = 0, b = 0, k = 0, pad = 0;  // conv: in,out,k,pad; pool: a=window; fc: a=in,b=out
    int param = -1;                    // index into the parameter lists for Conv/Fc

    // shape of this layer's output
    int ch = 0, h = 0, w = 0;  // spatial layers
    int len = 0;               // flat layers (after flatten)
};

inline std::vector<Layer> parse_descriptor(const std::string& descriptor) {
    std::vector<Layer> layers;
    std::stringstream ss(descriptor);
    std::string tok;
    auto fail = [&](const std::string& msg) { throw FormatError("descriptor: " + msg); };
    int param_index = 0;
    while (std::getline(ss, tok, ';')) {
        if (tok.empty()) continue;
        std::istringstream ls(tok);
        std::string name;
        ls >> name;
        Layer cur;
        if (name == "input") {
            if (!layers.empty()) fail("'input' must be the first layer");
            if (!(ls >> cur.ch >> cur.h >> cur.w) || cur.ch <= 0 || cur.h <= 0 || cur.w <= 0)
                fail("bad input shape in '" + tok + "'");
            cur.kind = Layer::Kind::Input;
            layers.push_back(cur);
            continue;
        }
        if (layers.empty()) fail("first layer must be 'input'");
        const Layer& prev = layers.back();
        if (name == "conv") {
            if (!(ls >> cur.a >> cur.b >> cur.k >> cur.pad) || cur.a <= 0 || cur.b <= 0 ||
                cur.k <= 0 || cur.pad < 0)
                fail("bad conv spec in '" + tok + "'");
            if (prev.len > 0) fail("conv after flatten");
            if (prev.ch != cur.a)
                fail("conv expects " + std::to_string(cur.a) + " input channels, got " +
                     std::to_string(prev.ch));
            cur.kind = Layer::Kind::Conv;
            cur.ch = cur.b;
            cur.h = prev.h + 2 * cur.pad - cur.k + 1;
            cur.w = prev.w + 2 * cur.pad - cur.k + 1;
            if (cur.h <= 0 || cur.w <= 0) fail("conv kernel larger than its input");
            cur.param = param_index++;
        } else if (name == "relu") {
            cur = prev;
            cur.kind = Layer::Kind::Relu;
            cur.param = -1;
        } else if (name == "maxpool") {
            if (!(ls >> cur.a) || cur.a <= 0) fail("bad maxpool spec in '" + tok + "'");
            if (prev.len > 0) fail("maxpool after flatten");
            if (prev.h % cur.a != 0 || prev.w % cur.a != 0)
                fail("maxpool window " + std::to_string(cur.a) + " does not divide " +
                     std::to_string(prev.h) + "x" + std::to_string(prev.w));
            cur.kind = Layer::Kind::MaxPool;
            cur.ch = prev.ch;
            cur.h = prev.h / cur.a;
            cur.w = prev.w / cur.a;
        } else if (name == "flatten") {
            if (prev.len > 0) fail("flatten after flatten");
            cur.kind = Layer::Kind::Flatten;
            cur.len = prev.ch * prev.h * prev.w;
        } else if (name == "fc") {
            if (!(ls >> cur.a >> cur.b) || cur.a <= 0 || cur.b <= 0)
                fail("bad fc spec in '" + tok + "'");
            const int prev_len = prev.len > 0 ? prev.len : prev.ch * prev.h * prev.w;
            if (prev.len == 0) fail("fc requires 'flatten' first");
            if (prev_len != cur.a)
                fail("fc expects " + std::to_string(cur.a) + " inputs, got " +
                     std::to_string(prev_len));
            cur.kind = Layer::Kind::Fc;
            cur.len = cur.b;
            cur.param = param_index++;
        } else if (name == "softmax") {
            if (prev.len == 0) fail("softmax requires a flat input");
            cur = prev;
            cur.kind = Layer::Kind::Softmax;
            cur.param = -1;
        } else {
            fail("unknown layer '" + name + "'");
        }
        std::string extra;
        if (ls >> extra) fail("trailing token '" + extra + "' in '" + tok + "'");
        layers.push_back(cur);
    }
    if (layers.size() < 2) fail("descriptor needs an input and at least one layer");
    if (layers.back().kind != Layer::Kind::Softmax) fail("last layer must be 'softmax'");
    return layers;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Feed-forward network over the descriptor grammar above. Spatial
/// activations are (H*W) x channels matrices; forward returns logits (the
/// trailing softmax layer is applied by the caller via softmax()).
template <typename T>
class Network {
public:
    explicit Network(const std::string& descriptor)
        : descriptor_(descriptor), layers_(parse_descriptor(descriptor)) {
        for (const Layer& l : layers_) {
            if (l.kind == Layer::Kind::Conv) {
                weights_.emplace_back(Matrix<T>::Zero(l.b, l.a * l.k * l.k));
                biases_.emplace_back(Vector<T>::Zero(l.b));
            } else if (l.kind == Layer::Kind::Fc) {
                weights_.emplace_back(Matrix<T>::Zero(l.b, l.a));
                biases_.emplace_back(Vector<T>::Zero(l.b));
            }
        }
    }

    const std::string& descriptor() const { return descriptor_; }
    const std::vector<Layer>& layers() const { return layers_; }
    int input_size() const { return layers_.front().ch * layers_.front().h * layers_.front().w; }
    int output_size() const { return layers_.back().len; }

    std::vector<Matrix<T>>& weights() { return weights_; }
    std::vector<Vector<T>>& biases() { return biases_; }
    const std::vector<Matrix<T>>& weights() const { return weights_; }
    const std::vector<Vector<T>>& biases() const { return biases_; }

    /// Seeded He-scaled normal initialization; biases start at zero.
    void he_init(uint64_t seed) {
        Rng rng(seed);
        for (size_t p = 0; p < weights_.size(); ++p) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(weights_[p].cols()));
            for (Eigen::Index r = 0; r < weights_[p].rows(); ++r)
                for (Eigen::Index c = 0; c < weights_[p].cols(); ++c)
                    weights_[p](r, c) = static_cast<T>(stddev * rng.normal());
            biases_[p].setZero();
        }
    }

    size_t param_count() const {
        size_t n = 0;
        for (size_t p = 0; p < weights_.size(); ++p)
            n += static_cast<size_t>(weights_[p].size()) + static_cast<size_t>(biases_[p].size());
        return n;
    }

    /// Flat parameter order: per parametric layer, W row-major then b.
    /// This is also the CLF serialization order.
    T get_param(size_t i) const {
        const auto loc = locate(i);
        return loc.is_bias ? biases_[loc.tensor](loc.offset)
                           : weights_[loc.tensor](loc.offset / weights_[loc.tensor].cols(),
                                                  loc.offset % weights_[loc.tensor].cols());
    }
    void set_param(size_t i, T v) {
        const auto loc = locate(i);
        if (loc.is_bias)
            biases_[loc.tensor](loc.offset) = v;
        else
            weights_[loc.tensor](loc.offset / weights_[loc.tensor].cols(),
                                 loc.offset % weights_[loc.tensor].cols()) = v;
    }

    template <typename U>
    void copy_params_from(const Network<U>& other) {
        if (other.descriptor() != descriptor_)
            throw DimensionError("copy_params_from: architecture mismatch");
        for (size_t p = 0; p < weights_.size(); ++p) {
            weights_[p] = other.weights()[p].template cast<T>();
            biases_[p] = other.biases()[p].template cast<T>();
        }
    }

    struct Cache {
        std::vector<Matrix<T>> act;           // output of each layer
        std::vector<Matrix<T>> col;           // im2col matrix per conv layer
        std::vector<Eigen::MatrixXi> argmax;  // input spatial index per pool output
    };

    /// Runs the network on a flat input (channel-major: index = ch*H*W + r*W + c).
    /// Returns logits. cache may be null for inference.
    Vector<T> forward(const Vector<T>& input, Cache* cache) const {
        if (input.size() != input_size())
            throw DimensionError("network forward: input size " + std::to_string(input.size()) +
                                 ", expected " + std::to_string(input_size()));
        const Layer& in = layers_.front();
        Matrix<T> act = Eigen::Map<const Matrix<T>>(input.data(), in.h * in.w, in.ch);
        Vector<T> flat;
        bool is_flat = false;
        if (cache) {
            cache->act.assign(layers_.size(), Matrix<T>());
            cache->col.assign(weights_.size(), Matrix<T>());
            cache->argmax.clear();
            cache->act[0] = act;
        }
        for (size_t li = 1; li < layers_.size(); ++li) {
            const Layer& l = layers_[li];
            const Layer& prev = layers_[li - 1];
            switch (l.kind) {
                case Layer::Kind::Conv: {
                    Matrix<T> col;
                    im2col(act, prev.ch, prev.h, prev.w, l.k, l.pad, col);
                    Matrix<T> out(l.h * l.w, l.ch);
                    out.noalias() = col * weights_[l.param].transpose();
                    out.rowwise() += biases_[l.param].transpose();
                    if (cache) cache->col[l.param] = std::move(col);
                    act = std::move(out);
                    break;
                }
                case Layer::Kind::Relu: {
                    if (is_flat)
                        flat = flat.cwiseMax(T(0));
                    else
                        act = act.cwiseMax(T(0));
                    break;
                }
                case Layer::Kind::MaxPool: {
                    Eigen::MatrixXi arg;
                    Matrix<T> out;
                    maxpool(act, prev.h, prev.w, l.a, out, arg);
                    if (cache) cache->argmax.push_back(std::move(arg));
                    act = std::move(out);
                    break;
                }
                case Layer::Kind::Flatten: {
                    flat = Eigen::Map<const Vector<T>>(act.data(), act.size());
                    is_flat = true;
                    break;
                }
                case Layer::Kind::Fc: {
                    Vector<T> out = weights_[l.param] * flat + biases_[l.param];
                    flat = std::move(out);
                    break;
                }
                case Layer::Kind::Softmax:
                    break;  // applied by the caller
                case Layer::Kind::Input:
                    throw FormatError("descriptor: duplicate input layer");
            }
            if (cache) {
                if (is_flat)
                    cache->act[li] = flat;
                else
                    cache->act[li] = act;
            }
        }
        return flat;
    }

    static Vector<T> softmax(const Vector<T>& logits) {
        const T m = logits.maxCoeff();
        Vector<T> e = (logits.array() - m).exp();
        return e / e.sum();
    }

    /// Cross-entropy of softmax(logits) against label; optionally returns
    /// d(loss)/d(logits) = softmax - onehot.
    static T softmax_cross_entropy(const Vector<T>& logits, int label, Vector<T>* dlogits) {
        if (label < 0 || label >= logits.size())
            throw DomainError("softmax_cross_entropy: label out of range");
        const T m = logits.maxCoeff();
        const T lse = m + std::log((logits.array() - m).exp().sum());
        if (dlogits) {
            *dlogits = ((logits.array() - lse).exp()).matrix();
            (*dlogits)(label) -= T(1);
        }
        return lse - logits(label);
    }

    struct Grads {
        std::vector<Matrix<T>> w;
        std::vector<Vector<T>> b;
        void set_zero() {
            for (auto& m : w) m.setZero();
            for (auto& v : b) v.setZero();
        }
        void scale(T s) {
            for (auto& m : w) m *= s;
            for (auto& v : b) v *= s;
        }
    };

    Grads make_grads() const {
        Grads g;
        for (size_t p = 0; p < weights_.size(); ++p) {
            g.w.emplace_back(Matrix<T>::Zero(weights_[p].rows(), weights_[p].cols()));
            g.b.emplace_back(Vector<T>::Zero(biases_[p].size()));
        }
        return g;
    }

    /// Accumulates parameter gradients for one sample into g.
    /// dlogits is d(loss)/d(logits) from softmax_cross_entropy.
    void backward(const Cache& cache, const Vector<T>& dlogits, Grads& g) const {
        Vector<T> dflat = dlogits;
        Matrix<T> dact;
        bool is_flat = true;
        size_t pool_i = cache.argmax.size();
        for (size_t li = layers_.size(); li-- > 1;) {
            const Layer& l = layers_[li];
            const Layer& prev = layers_[li - 1];
            switch (l.kind) {
                case Layer::Kind::Softmax:
                    break;
                case Layer::Kind::Fc: {
                    Eigen::Map<const Vector<T>> x(cache.act[li - 1].data(),
                                                  cache.act[li - 1].size());
                    g.w[l.param].noalias() += dflat * x.transpose();
                    g.b[l.param] += dflat;
                    Vector<T> dx = weights_[l.param].transpose() * dflat;
                    dflat = std::move(dx);
                    break;
                }
                case Layer::Kind::Relu: {
                    const auto& x = cache.act[li - 1];
                    if (is_flat) {
                        for (Eigen::Index i = 0; i < dflat.size(); ++i)
                            if (x(i, 0) <= T(0)) dflat(i) = T(0);
                    } else {
                        dact = ((x.array() > T(0)).template cast<T>() * dact.array()).matrix();
                    }
                    break;
                }
                case Layer::Kind::Flatten: {
                    dact = Eigen::Map<const Matrix<T>>(dflat.data(), prev.h * prev.w, prev.ch);
                    is_flat = false;
                    break;
                }
                case Layer::Kind::MaxPool: {
                    --pool_i;
                    const Eigen::MatrixXi& arg = cache.argmax[pool_i];
                    Matrix<T> din = Matrix<T>::Zero(prev.h * prev.w, prev.ch);
                    for (Eigen::Index ch = 0; ch < dact.cols(); ++ch)
                        for (Eigen::Index s = 0; s < dact.rows(); ++s)
                            din(arg(s, ch), ch) += dact(s, ch);
                    dact = std::move(din);
                    break;
                }
                case Layer::Kind::Conv: {
                    g.w[l.param].noalias() += dact.transpose() * cache.col[l.param];
                    g.b[l.param] += dact.colwise().sum().transpose();
                    Matrix<T> dcol(dact.rows(), weights_[l.param].cols());
                    dcol.noalias() = dact * weights_[l.param];
                    Matrix<T> din = Matrix<T>::Zero(prev.h * prev.w, prev.ch);
                    col2im(dcol, prev.ch, prev.h, prev.w, l.k, l.pad, l.h, l.w, din);
                    dact = std::move(din);
                    break;
                }
                case Layer::Kind::Input:
                    break;
            }
        }
    }

    /// Classic SGD with momentum: v = momentum*v - lr*g; param += v.
    void sgd_update(const Grads& g, Grads& velocity, T lr, T momentum) {
        for (size_t p = 0; p < weights_.size(); ++p) {
            velocity.w[p] = momentum * velocity.w[p] - lr * g.w[p];
            velocity.b[p] = momentum * velocity.b[p] - lr * g.b[p];
            weights_[p] += velocity.w[p];
            biases_[p] += velocity.b[p];
        }
    }

private:
    struct ParamLoc {
        size_t tensor;
        bool is_bias;
        Eigen::Index offset;
    };

    ParamLoc locate(size_t i) const {
        for (size_t p = 0; p < weights_.size(); ++p) {
            const size_t wn = static_cast<size_t>(weights_[p].size());
            if (i < wn) return {p, false, static_cast<Eigen::Index>(i)};
            i -= wn;
            const size_t bn = static_cast<size_t>(biases_[p].size());
            if (i < bn) return {p, true, static_cast<Eigen::Index>(i)};
            i -= bn;
        }
        throw DomainError("network: parameter index out of range");
    }

    static void im2col(const Matrix<T>& act, int ch, int h, int w, int k, int pad, Matrix<T>& col) {
        const int oh = h + 2 * pad - k + 1;
        const int ow = w + 2 * pad - k + 1;
        col.resize(oh * ow, ch * k * k);
        for (int ic = 0; ic < ch; ++ic) {
            for (int kr = 0; kr < k; ++kr) {
                for (int kc = 0; kc < k; ++kc) {
                    const int cc = ic * k * k + kr * k + kc;
                    for (int r = 0; r < oh; ++r) {
                        const int ir = r + kr - pad;
                        T* dst = col.data() + static_cast<size_t>(cc) * (oh * ow) +
                                 static_cast<size_t>(r) * ow;
                        if (ir < 0 || ir >= h) {
                            std::fill(dst, dst + ow, T(0));
                            continue;
                        }
                        const T* src = act.data() + static_cast<size_t>(ic) * (h * w) +
                                       static_cast<size_t>(ir) * w;
                        for (int c = 0; c < ow; ++c) {
                            const int icol = c + kc - pad;
                            dst[c] = (icol < 0 || icol >= w) ? T(0) : src[icol];
                        }
                    }
                }
            }
        }
    }

    static void col2im(const Matrix<T>& dcol, int ch, int h, int w, int k, int pad, int oh, int ow,
                       Matrix<T>& din) {
        for (int ic = 0; ic < ch; ++ic) {
            for (int kr = 0; kr < k; ++kr) {
                for (int kc = 0; kc < k; ++kc) {
                    const int cc = ic * k * k + kr * k + kc;
                    for (int r = 0; r < oh; ++r) {
                        const int ir = r + kr - pad;
                        if (ir < 0 || ir >= h) continue;
                        const T* src = dcol.data() + static_cast<size_t>(cc) * (oh * ow) +
                                       static_cast<size_t>(r) * ow;
                        T* dst = din.data() + static_cast<size_t>(ic) * (h * w) +
                                 static_cast<size_t>(ir) * w;
                        for (int c = 0; c < ow; ++c) {
                            const int icol = c + kc - pad;
                            if (icol >= 0 && icol < w) dst[icol] += src[c];
                        }
                    }
                }
            }
        }
    }

    static void maxpool(const Matrix<T>& act, int h, int w, int p, Matrix<T>& out,
                        Eigen::MatrixXi& arg) {
        const int oh = h / p;
        const int ow = w / p;
        const int ch = static_cast<int>(act.cols());
        out.resize(oh * ow, ch);
        arg.resize(oh * ow, ch);
        for (int ic = 0; ic < ch; ++ic) {
            const T* a = act.data() + static_cast<size_t>(ic) * (h * w);
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    T best = a[static_cast<size_t>(r * p) * w + c * p];
                    int best_s = r * p * w + c * p;
                    for (int dr = 0; dr < p; ++dr)
                        for (int dc = 0; dc < p; ++dc) {
                            const int s = (r * p + dr) * w + (c * p + dc);
                            if (a[s] > best) {
                                best = a[s];
                                best_s = s;
                            }
                        }
                    out(r * ow + c, ic) = best;
                    arg(r * ow + c, ic) = best_s;
                }
            }
        }
    }

    std::string descriptor_;
    std::vector<Layer> layers_;
    std::vector<Matrix<T>> weights_;
    std::vector<Vector<T>> biases_;
};

}  // namespace slowdef::nn
