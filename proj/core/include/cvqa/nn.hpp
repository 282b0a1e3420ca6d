#pragma once

// From-scratch MLP classifier: ReLU hidden tiers with inverted dropout, a
// linear output layer, softmax cross-entropy, backprop and Adam.
//
// Everything is templated on the scalar so the same code path serves float
// training and double-precision gradient checking.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <new>
#include <span>
#include <vector>

#include "cvqa/rng.hpp"

namespace cvqa::nn {

/// Fixed 64-byte alignment. Eigen chooses its kernel path from the buffer
/// address, so unaligned heap blocks would make results vary between runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Row-major dense matrix.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  AlignedVector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

template <class T>
struct LayerParams {
  Matrix<T> weights;  // out x in
  AlignedVector<T> biases;

  [[nodiscard]] std::size_t out_dim() const { return weights.rows; }
  [[nodiscard]] std::size_t in_dim() const { return weights.cols; }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <class T>
struct BasicMlp {
  std::vector<LayerParams<T>> layers;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_hidden_layers = 0;
  std::size_t output_dim = 0;
  /// Bumped by every optimizer step; lets backward() reject stale caches.
  std::uint64_t revision = 0;

  [[nodiscard]] std::size_t parameter_count() const;

  template <class U>
  [[nodiscard]] BasicMlp<U> cast() const;

  /// Shape chain and finiteness; throws on violation.
  void validate() const;

  friend bool operator==(const BasicMlp& a, const BasicMlp& b) {
    return a.layers == b.layers && a.input_dim == b.input_dim && a.hidden_dim == b.hidden_dim &&
           a.num_hidden_layers == b.num_hidden_layers && a.output_dim == b.output_dim;
  }
};

using MlpModel = BasicMlp<float>;
using MlpModel64 = BasicMlp<double>;

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double dropout_rate = 0.2;
  std::size_t batch_size = 256;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;
  bool decoupled_weight_decay = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <class T>
struct ForwardCache {
  std::uint64_t model_revision = 0;
  bool training = false;
  /// inputs[l] is what layer l consumed (post-dropout for hidden tiers).
  std::vector<Matrix<T>> inputs;
  /// Post-ReLU, pre-dropout activations of each hidden tier.
  std::vector<Matrix<T>> hidden;
  /// Per-unit dropout multipliers (0 or 1/(1-p)); empty in eval mode.
  std::vector<Matrix<T>> masks;
};

template <class T>
struct ForwardResult {
  Matrix<T> logits;
  ForwardCache<T> cache;
};

template <class T>
struct Gradients {
  std::vector<LayerParams<T>> layers;
};

template <class T>
struct AdamState {
  std::vector<LayerParams<T>> first_moment;
  std::vector<LayerParams<T>> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_model(const BasicMlp<T>& model);
};

template <class T>
struct LossResult {
  double loss = 0.0;
  Matrix<T> dlogits;
};

/// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
template <class T>
BasicMlp<T> init_model(std::size_t input_dim, std::size_t hidden_dim,
                       std::size_t num_hidden_layers, std::size_t output_dim, std::uint64_t seed);

template <class T>
ForwardResult<T> forward(const BasicMlp<T>& model, const Matrix<T>& batch, double dropout_rate,
                         bool training, Rng& rng);

/// Forward with caller-supplied dropout masks (one per hidden tier).
template <class T>
ForwardResult<T> forward_with_masks(const BasicMlp<T>& model, const Matrix<T>& batch,
                                    std::vector<Matrix<T>> masks);

/// Mean softmax cross-entropy with log-sum-exp; dlogits = (softmax - onehot) / batch.
template <class T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels);

template <class T>
Gradients<T> backward(const BasicMlp<T>& model, const ForwardCache<T>& cache,
                      const Matrix<T>& dlogits);

/// Bias-corrected Adam. With decoupled decay the parameter is first shrunk by
/// lr*wd*param; otherwise wd*param is added to the gradient.
template <class T>
void adam_step(BasicMlp<T>& model, AdamState<T>& state, const Gradients<T>& grads,
               double learning_rate, double weight_decay, bool decoupled_weight_decay = true);

/// Row-wise argmax; ties resolve to the lowest index.
template <class T>
std::vector<int> argmax_rows(const Matrix<T>& logits);

template <class T>
std::vector<int> predict(const BasicMlp<T>& model, const Matrix<T>& batch);

// MLP1 checkpoint: "MLP1", u32 version, u32 layer count, then per layer
// u32 out, u32 in, out*in f32 row-major weights, out f32 biases. Little-endian.
inline constexpr std::uint32_t kMlp1Version = 1;

void write_mlp1(const MlpModel& model, std::ostream& out);
MlpModel read_mlp1(std::istream& in);
void save_mlp1(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_mlp1(const std::filesystem::path& path);

}  // namespace cvqa::nn
