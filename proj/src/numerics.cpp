#include "unimd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace unimd {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() < 2) {
        throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                             shape_string(t.shape()));
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 0;
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.size() != size()) {
        throw DimensionError("add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    if (other.size() != size()) {
        throw DimensionError("sub: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    Tensor out({m, n});
    const double* __restrict pa = a.data();
    const double* __restrict pb = b.data();
    double* __restrict po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k || out.rows() != m || out.cols() != n) {
        throw DimensionError("matmul_tn: " + shape_string(a.shape()) + "ᵀ x " +
                             shape_string(b.shape()) + " -> " + shape_string(out.shape()));
    }
    const double* __restrict pa = a.data();
    const double* __restrict pb = b.data();
    double* __restrict po = out.data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = pa + p * m;
        const double* brow = pb + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    Tensor out({a.cols(), b.cols()});
    matmul_tn_acc(a, b, out);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()) + "ᵀ");
    }
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            po[i * n + j] = s;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("hadamard: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.rows()) throw DimensionError("slice_rows out of range");
    std::vector<std::size_t> shape = a.shape();
    shape[0] = count;
    const std::size_t c = a.cols();
    std::vector<double> data(a.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                             a.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
    return Tensor(std::move(shape), std::move(data));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) throw DimensionError("slice_cols out of range");
    Tensor out({a.rows(), count});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
    return out;
}

void set_rows(Tensor& dst, std::size_t begin, const Tensor& src) {
    if (src.cols() != dst.cols() || begin + src.rows() > dst.rows()) {
        throw DimensionError("set_rows: " + shape_string(src.shape()) + " into " +
                             shape_string(dst.shape()));
    }
    std::copy(src.values().begin(), src.values().end(),
              dst.values().begin() + static_cast<std::ptrdiff_t>(begin * dst.cols()));
}

void add_rows(Tensor& dst, std::size_t begin, const Tensor& src) {
    if (src.cols() != dst.cols() || begin + src.rows() > dst.rows()) {
        throw DimensionError("add_rows: " + shape_string(src.shape()) + " into " +
                             shape_string(dst.shape()));
    }
    double* p = dst.data() + begin * dst.cols();
    for (std::size_t i = 0; i < src.size(); ++i) p[i] += src[i];
}

Tensor concat_rows(const std::vector<const Tensor*>& parts) {
    std::size_t rows = 0, cols = 0;
    for (const Tensor* t : parts) {
        if (t->empty()) continue;
        if (cols == 0) cols = t->cols();
        if (t->cols() != cols) throw DimensionError("concat_rows: column mismatch");
        rows += t->rows();
    }
    Tensor out({rows, cols});
    std::size_t at = 0;
    for (const Tensor* t : parts) {
        if (t->empty()) continue;
        set_rows(out, at, *t);
        at += t->rows();
    }
    return out;
}

Tensor column_sums(const Tensor& a) {
    Tensor out({a.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
    return out;
}

Tensor row_mean(const Tensor& a) {
    Tensor out({1, a.cols()});
    if (a.rows() == 0) return out;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
    out *= 1.0 / static_cast<double>(a.rows());
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double frobenius(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    require_finite(x, "softmax_rows input");
    Tensor out = x;
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = out.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < n; ++j) r[j] *= inv;
    }
    return out;
}

Tensor softmax_rows_backward(const Tensor& p, const Tensor& dp) {
    Tensor out({p.rows(), p.cols()});
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto pr = p.row(i);
        const auto gr = dp.row(i);
        const double s = dot(pr, gr);
        auto o = out.row(i);
        for (std::size_t j = 0; j < pr.size(); ++j) o[j] = pr[j] * (gr[j] - s);
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps, RmsNormCache* cache) {
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("rms_norm: empty feature axis");
    if (gain.size() != d) throw DimensionError("rms_norm: gain size mismatch");
    Tensor out({n, d});
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        double ms = 0.0;
        for (double v : r) ms += v * v;
        ms /= static_cast<double>(d);
        const double denom = std::sqrt(ms + eps);
        inv[i] = denom > 0.0 ? 1.0 / denom : 0.0;
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = r[j] * inv[i] * gain[j];
    }
    if (cache) {
        cache->x = x;
        cache->inv_rms = std::move(inv);
    }
    return out;
}

Tensor rms_norm_backward(const Tensor& dy, const Tensor& gain, const RmsNormCache& cache,
                         Tensor* dgain) {
    const Tensor& x = cache.x;
    const std::size_t n = x.rows(), d = x.cols();
    Tensor dx({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const auto xr = x.row(i);
        const auto gr = dy.row(i);
        const double r = cache.inv_rms[i];
        double s = 0.0;  // Σ_j dy_j g_j x_j
        for (std::size_t j = 0; j < d; ++j) s += gr[j] * gain[j] * xr[j];
        const double coef = r * r * r * s / static_cast<double>(d);
        auto o = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = gr[j] * gain[j] * r - xr[j] * coef;
        if (dgain) {
            for (std::size_t j = 0; j < d; ++j) (*dgain)[j] += gr[j] * xr[j] * r;
        }
    }
    return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  LayerNormCache* cache) {
    const std::size_t n = x.rows(), d = x.cols();
    if (gain.size() != d || bias.size() != d) throw DimensionError("layer_norm: affine mismatch");
    Tensor out({n, d});
    Tensor xhat({n, d});
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        inv[i] = 1.0 / std::sqrt(var + eps);
        auto h = xhat.row(i);
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            h[j] = (r[j] - mean) * inv[i];
            o[j] = h[j] * gain[j] + bias[j];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv);
    }
    return out;
}

Tensor layer_norm_backward(const Tensor& dy, const Tensor& gain, const LayerNormCache& cache,
                           Tensor* dgain, Tensor* dbias) {
    const Tensor& xhat = cache.xhat;
    const std::size_t n = xhat.rows(), d = xhat.cols();
    const double invd = 1.0 / static_cast<double>(d);
    Tensor dx({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const auto h = xhat.row(i);
        const auto g = dy.row(i);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * gain[j];
            s1 += dh;
            s2 += dh * h[j];
        }
        auto o = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * gain[j];
            o[j] = cache.inv_std[i] * (dh - invd * s1 - h[j] * invd * s2);
        }
        if (dgain) {
            for (std::size_t j = 0; j < d; ++j) (*dgain)[j] += g[j] * h[j];
        }
        if (dbias) {
            for (std::size_t j = 0; j < d; ++j) (*dbias)[j] += g[j];
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

namespace {
template <typename F>
Tensor map(const Tensor& x, F f) {
    Tensor out = x;
    for (double& v : out.values()) v = f(v);
    return out;
}
}  // namespace

Tensor sigmoid(const Tensor& x) { return map(x, [](double v) { return sigmoid(v); }); }
Tensor softplus(const Tensor& x) { return map(x, [](double v) { return softplus(v); }); }
Tensor silu(const Tensor& x) { return map(x, [](double v) { return silu(v); }); }
Tensor gelu(const Tensor& x) { return map(x, [](double v) { return gelu(v); }); }

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
    const std::size_t n = x.rows(), d = x.cols(), w = kernel.rows();
    if (kernel.cols() != d) throw DimensionError("depthwise_conv1d: kernel channel mismatch");
    Tensor out({n, d});
    for (std::size_t t = 0; t < n; ++t) {
        auto o = out.row(t);
        for (std::size_t tap = 0; tap < w; ++tap) {
            // tap w-1 reads token t, tap 0 reads token t-(w-1)
            const std::size_t back = w - 1 - tap;
            if (back > t) continue;
            const auto xr = x.row(t - back);
            const auto kr = kernel.row(tap);
            for (std::size_t c = 0; c < d; ++c) o[c] += kr[c] * xr[c];
        }
    }
    return out;
}

Tensor depthwise_conv1d_backward(const Tensor& dy, const Tensor& x, const Tensor& kernel,
                                 Tensor* dkernel) {
    const std::size_t n = x.rows(), d = x.cols(), w = kernel.rows();
    Tensor dx({n, d});
    for (std::size_t t = 0; t < n; ++t) {
        const auto g = dy.row(t);
        for (std::size_t tap = 0; tap < w; ++tap) {
            const std::size_t back = w - 1 - tap;
            if (back > t) continue;
            const auto xr = x.row(t - back);
            const auto kr = kernel.row(tap);
            auto dxr = dx.row(t - back);
            for (std::size_t c = 0; c < d; ++c) dxr[c] += kr[c] * g[c];
            if (dkernel) {
                auto dk = dkernel->row(tap);
                for (std::size_t c = 0; c < d; ++c) dk[c] += xr[c] * g[c];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------

ParamId ParamStore::add(std::string name, Tensor value, bool trainable) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    const ParamId id = params_.size();
    index_.emplace(name, id);
    params_.push_back(ParamTensor{std::move(name), std::move(value), trainable, std::nullopt});
    return id;
}

Tensor* ParamStore::grad_slot(ParamId id) {
    ParamTensor& p = params_.at(id);
    if (!p.trainable) return nullptr;
    if (!p.grad) p.grad = Tensor(p.value.shape());
    return &*p.grad;
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

ParamId ParamStore::id(const std::string& name) const {
    const auto found = find(name);
    if (!found) throw ConfigError("unknown parameter: " + name);
    return *found;
}

void ParamStore::zero_grad() {
    for (ParamTensor& p : params_) {
        if (p.grad) std::fill(p.grad->values().begin(), p.grad->values().end(), 0.0);
    }
}

std::size_t ParamStore::count_values(bool trainable_only) const {
    std::size_t n = 0;
    for (const ParamTensor& p : params_) {
        if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
}

std::vector<Tensor> finite_diff_grad(const std::function<double()>& objective, ParamStore& params,
                                     const std::vector<ParamId>& ids, double h) {
    std::vector<Tensor> grads;
    grads.reserve(ids.size());
    for (ParamId id : ids) {
        grads.push_back(finite_diff_grad(objective, params[id].value, h));
    }
    return grads;
}

Tensor finite_diff_grad(const std::function<double()>& objective, Tensor& x, double h) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = objective();
        x[i] = saved - h;
        const double fm = objective();
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: objective is not finite");
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
    if (a.size() != b.size()) throw DimensionError("relative_error: size mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double scale = std::max({frobenius(a), frobenius(b), floor});
    return std::sqrt(diff) / scale;
}

// ---------------------------------------------------------------------------

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    if (spare_normal_) {
        const double z = *spare_normal_;
        spare_normal_.reset();
        return mean + stddev * z;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_normal_ = r * std::sin(theta);
    return mean + stddev * r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ValidationError("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Tensor Rng::normal_tensor(std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = normal(0.0, stddev);
    return t;
}

Tensor Rng::uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(lo, hi);
    return t;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t label) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (label + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace unimd
