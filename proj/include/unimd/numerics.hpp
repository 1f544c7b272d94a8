#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace unimd {

// Error surfaces shared by every module.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles. Most code treats it as a matrix whose
/// rows are shape[0] and whose columns are the product of the remaining extents.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const;
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    Tensor reshaped(std::vector<std::size_t> shape) const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

std::string shape_string(const std::vector<std::size_t>& shape);
void require_finite(const Tensor& t, const char* where);

// ---- matrix kernels (fixed loop nesting, so accumulation order is stable) ----

Tensor matmul(const Tensor& a, const Tensor& b);       // a[m×k] · b[k×n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);    // aᵀ[k×m]ᵀ · b[k×n] -> [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);    // a[m×k] · bᵀ where b is [n×k]
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);  // out += aᵀ b
Tensor transpose(const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
void set_rows(Tensor& dst, std::size_t begin, const Tensor& src);
void add_rows(Tensor& dst, std::size_t begin, const Tensor& src);
Tensor concat_rows(const std::vector<const Tensor*>& parts);
Tensor column_sums(const Tensor& a);
Tensor row_mean(const Tensor& a);  // [1×cols]
double dot(std::span<const double> a, std::span<const double> b);
double frobenius(const Tensor& a);
double max_abs(const Tensor& a);

// ---- row-wise ops ----

Tensor softmax_rows(const Tensor& x);
/// Backward of softmax_rows given its output p and upstream gradient.
Tensor softmax_rows_backward(const Tensor& p, const Tensor& dp);

struct RmsNormCache {
    Tensor x;
    std::vector<double> inv_rms;
};
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps, RmsNormCache* cache = nullptr);
/// Returns dx and accumulates into dgain when it is non-null.
Tensor rms_norm_backward(const Tensor& dy, const Tensor& gain, const RmsNormCache& cache,
                         Tensor* dgain);

struct LayerNormCache {
    Tensor xhat;
    std::vector<double> inv_std;
};
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  LayerNormCache* cache = nullptr);
Tensor layer_norm_backward(const Tensor& dy, const Tensor& gain, const LayerNormCache& cache,
                           Tensor* dgain, Tensor* dbias);

// ---- elementwise ----

double sigmoid(double x);
double softplus(double x);
double silu(double x);
double gelu(double x);
double silu_grad(double x);
double gelu_grad(double x);

Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);

/// Depthwise causal convolution along the token (row) axis. kernel[w×d]; the
/// last kernel row taps the current token, earlier rows tap preceding tokens.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);
/// Gradient w.r.t. x; accumulates dkernel when non-null.
Tensor depthwise_conv1d_backward(const Tensor& dy, const Tensor& x, const Tensor& kernel,
                                 Tensor* dkernel);

// ---- parameters ----

struct ParamTensor {
    std::string name;
    Tensor value;
    bool trainable = false;
    std::optional<Tensor> grad;
};

using ParamId = std::size_t;

/// Ordered, name-indexed parameter set. Insertion order is the checkpoint order.
class ParamStore {
public:
    ParamId add(std::string name, Tensor value, bool trainable);

    ParamTensor& operator[](ParamId id) { return params_.at(id); }
    const ParamTensor& operator[](ParamId id) const { return params_.at(id); }
    const Tensor& value(ParamId id) const { return params_.at(id).value; }
    bool trainable(ParamId id) const { return params_.at(id).trainable; }

    /// Lazily allocated gradient slot for a trainable parameter, nullptr when frozen.
    Tensor* grad_slot(ParamId id);

    std::optional<ParamId> find(const std::string& name) const;
    ParamId id(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    std::vector<ParamTensor>& all() { return params_; }
    const std::vector<ParamTensor>& all() const { return params_; }

    void zero_grad();
    std::size_t count_values(bool trainable_only) const;

private:
    std::vector<ParamTensor> params_;
    std::unordered_map<std::string, ParamId> index_;
};

/// Central finite differences of a scalar objective w.r.t. the selected
/// parameters. Values are perturbed in place and restored afterwards.
std::vector<Tensor> finite_diff_grad(const std::function<double()>& objective, ParamStore& params,
                                     const std::vector<ParamId>& ids, double h = 1e-5);

/// Same, for an arbitrary tensor the objective reads by reference.
Tensor finite_diff_grad(const std::function<double()>& objective, Tensor& x, double h = 1e-5);

/// ‖a−b‖ / max(‖a‖, ‖b‖), with an absolute floor for near-zero gradients.
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-10);

// ---- random numbers ----

/// Seeded generator for all initialization and synthetic data. The engine is
/// std::mt19937_64 (fully specified by the standard); uniform doubles take the
/// top 53 bits and normals use Box-Muller, so draws are identical across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t index(std::size_t n);       // [0, n)

    Tensor normal_tensor(std::vector<std::size_t> shape, double stddev);
    Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi);

    /// Child stream derived from this seed and a label, for independent substreams.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t label);

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_normal_;
};

}  // namespace unimd
