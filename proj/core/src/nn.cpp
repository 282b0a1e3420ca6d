#include "cvqa/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "cvqa/error.hpp"

namespace cvqa::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
Eigen::Map<RowMat<T>> view(Matrix<T>& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

template <class T>
Eigen::Map<const RowMat<T>> view(const Matrix<T>& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

template <class T>
Eigen::Map<const RowVec<T>> view(const AlignedVector<T>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

template <class T>
Eigen::Map<RowVec<T>> view(AlignedVector<T>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

template <class T>
LayerParams<T> zeros_like(const LayerParams<T>& layer) {
  return {Matrix<T>(layer.weights.rows, layer.weights.cols), AlignedVector<T>(layer.biases.size())};
}

template <class T>
Matrix<T> affine(const LayerParams<T>& layer, const Matrix<T>& x) {
  Matrix<T> z(x.rows, layer.out_dim());
  auto zv = view(z);
  zv.noalias() = view(x) * view(layer.weights).transpose();
  zv.rowwise() += view(layer.biases);
  return z;
}

template <class T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 double lr, double wd, bool decoupled, double beta1, double beta2, double eps,
                 double bias1, double bias2) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    double p = static_cast<double>(params[i]);
    double g = static_cast<double>(grads[i]);
    if (!decoupled) g += wd * p;
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    if (decoupled) p -= lr * wd * p;
    p -= lr * (mi / bias1) / (std::sqrt(vi / bias2) + eps);
    params[i] = static_cast<T>(p);
  }
}

}  // namespace

template <class T>
std::size_t BasicMlp<T>::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers) count += layer.weights.data.size() + layer.biases.size();
  return count;
}

template <class T>
template <class U>
BasicMlp<U> BasicMlp<T>::cast() const {
  BasicMlp<U> out;
  out.input_dim = input_dim;
  out.hidden_dim = hidden_dim;
  out.num_hidden_layers = num_hidden_layers;
  out.output_dim = output_dim;
  out.revision = revision;
  for (const auto& layer : layers) {
    LayerParams<U> converted{Matrix<U>(layer.weights.rows, layer.weights.cols),
                             AlignedVector<U>(layer.biases.size())};
    for (std::size_t i = 0; i < layer.weights.data.size(); ++i) {
      converted.weights.data[i] = static_cast<U>(layer.weights.data[i]);
    }
    for (std::size_t i = 0; i < layer.biases.size(); ++i) {
      converted.biases[i] = static_cast<U>(layer.biases[i]);
    }
    out.layers.push_back(std::move(converted));
  }
  return out;
}

template <class T>
void BasicMlp<T>::validate() const {
  if (layers.size() != num_hidden_layers + 1) {
    throw Error(Errc::corrupt, "layer count does not match num_hidden_layers + 1");
  }
  std::size_t expected_in = input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::size_t expected_out = l + 1 == layers.size() ? output_dim : hidden_dim;
    if (layer.in_dim() != expected_in || layer.out_dim() != expected_out ||
        layer.biases.size() != expected_out ||
        layer.weights.data.size() != layer.weights.rows * layer.weights.cols) {
      throw Error(Errc::dimension_mismatch, "layer " + std::to_string(l) + " breaks the shape chain");
    }
    for (T w : layer.weights.data) {
      if (!std::isfinite(static_cast<double>(w))) throw Error(Errc::non_finite, "weight");
    }
    for (T b : layer.biases) {
      if (!std::isfinite(static_cast<double>(b))) throw Error(Errc::non_finite, "bias");
    }
    expected_in = expected_out;
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(Errc::invalid_argument, "weight_decay must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(Errc::invalid_argument, "dropout_rate must be in [0, 1)");
  }
  if (batch_size == 0) throw Error(Errc::invalid_argument, "batch_size must be >= 1");
  if (epochs == 0) throw Error(Errc::invalid_argument, "epochs must be >= 1");
}

template <class T>
AdamState<T> AdamState<T>::for_model(const BasicMlp<T>& model) {
  AdamState state;
  for (const auto& layer : model.layers) {
    state.first_moment.push_back(zeros_like(layer));
    state.second_moment.push_back(zeros_like(layer));
  }
  return state;
}

template <class T>
BasicMlp<T> init_model(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_hidden_layers,
                       std::size_t output_dim, std::uint64_t seed) {
  if (input_dim == 0 || output_dim == 0 || (num_hidden_layers > 0 && hidden_dim == 0)) {
    throw Error(Errc::invalid_argument, "model dimensions must be >= 1");
  }
  BasicMlp<T> model;
  model.input_dim = input_dim;
  model.hidden_dim = num_hidden_layers > 0 ? hidden_dim : 0;
  model.num_hidden_layers = num_hidden_layers;
  model.output_dim = output_dim;

  Rng rng(seed);
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l <= num_hidden_layers; ++l) {
    const std::size_t fan_out = l == num_hidden_layers ? output_dim : hidden_dim;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    LayerParams<T> layer{Matrix<T>(fan_out, fan_in), AlignedVector<T>(fan_out, T{0})};
    for (T& w : layer.weights.data) w = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
    model.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return model;
}

template <class T>
ForwardResult<T> forward_with_masks(const BasicMlp<T>& model, const Matrix<T>& batch,
                                    std::vector<Matrix<T>> masks) {
  if (batch.cols != model.input_dim) {
    throw Error(Errc::dimension_mismatch, "batch has " + std::to_string(batch.cols) +
                                              " columns, model expects " +
                                              std::to_string(model.input_dim));
  }
  const bool training = !masks.empty();
  if (training && masks.size() != model.num_hidden_layers) {
    throw Error(Errc::invalid_argument, "need one dropout mask per hidden layer");
  }

  ForwardResult<T> result;
  auto& cache = result.cache;
  cache.model_revision = model.revision;
  cache.training = training;
  cache.inputs.reserve(model.layers.size());
  cache.inputs.push_back(batch);

  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    Matrix<T> h = affine(model.layers[l], cache.inputs.back());
    auto hv = view(h);
    hv = hv.cwiseMax(T{0});
    Matrix<T> a = h;
    if (training) {
      const auto& mask = masks[l];
      if (mask.rows != h.rows || mask.cols != h.cols) {
        throw Error(Errc::dimension_mismatch, "dropout mask shape");
      }
      view(a) = view(h).cwiseProduct(view(mask));
    }
    cache.hidden.push_back(std::move(h));
    cache.inputs.push_back(std::move(a));
  }
  result.logits = affine(model.layers.back(), cache.inputs.back());
  cache.masks = std::move(masks);
  return result;
}

template <class T>
ForwardResult<T> forward(const BasicMlp<T>& model, const Matrix<T>& batch, double dropout_rate,
                         bool training, Rng& rng) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(Errc::invalid_argument, "dropout_rate must be in [0, 1)");
  }
  std::vector<Matrix<T>> masks;
  if (training) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate));
    masks.reserve(model.num_hidden_layers);
    for (std::size_t l = 0; l < model.num_hidden_layers; ++l) {
      Matrix<T> mask(batch.rows, model.layers[l].out_dim());
      for (T& m : mask.data) m = rng.uniform() < dropout_rate ? T{0} : keep_scale;
      masks.push_back(std::move(mask));
    }
  }
  return forward_with_masks(model, batch, std::move(masks));
}

template <class T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) {
  if (logits.rows == 0) throw Error(Errc::empty_input, "empty batch");
  if (labels.size() != logits.rows) {
    throw Error(Errc::dimension_mismatch, "label count does not match batch rows");
  }
  LossResult<T> result;
  result.dlogits = Matrix<T>(logits.rows, logits.cols);
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);
  double total = 0.0;
  std::vector<double> probs(logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols) {
      throw Error(Errc::label_out_of_range, "label " + std::to_string(label) + " outside [0, " +
                                                std::to_string(logits.cols) + ")");
    }
    const auto row = logits.row(r);
    double peak = static_cast<double>(row[0]);
    for (T z : row) peak = std::max(peak, static_cast<double>(z));
    double sum = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      probs[c] = std::exp(static_cast<double>(row[c]) - peak);
      sum += probs[c];
    }
    const double log_sum = peak + std::log(sum);
    total += log_sum - static_cast<double>(row[static_cast<std::size_t>(label)]);
    auto drow = result.dlogits.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double target = static_cast<int>(c) == label ? 1.0 : 0.0;
      drow[c] = static_cast<T>((probs[c] / sum - target) * inv_batch);
    }
  }
  result.loss = total * inv_batch;
  return result;
}

template <class T>
Gradients<T> backward(const BasicMlp<T>& model, const ForwardCache<T>& cache,
                      const Matrix<T>& dlogits) {
  if (cache.model_revision != model.revision) {
    throw Error(Errc::stale_cache, "model was updated after the forward pass");
  }
  if (cache.inputs.size() != model.layers.size() ||
      cache.hidden.size() != model.num_hidden_layers ||
      (cache.training && cache.masks.size() != model.num_hidden_layers)) {
    throw Error(Errc::stale_cache, "cache does not match model depth");
  }
  const std::size_t batch = cache.inputs.front().rows;
  if (dlogits.rows != batch || dlogits.cols != model.output_dim) {
    throw Error(Errc::dimension_mismatch, "dlogits shape");
  }

  Gradients<T> grads;
  grads.layers.resize(model.layers.size());
  Matrix<T> upstream = dlogits;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& input = cache.inputs[l];
    if (input.cols != layer.in_dim() || input.rows != batch) {
      throw Error(Errc::stale_cache, "cached activation shape for layer " + std::to_string(l));
    }
    auto& g = grads.layers[l];
    g.weights = Matrix<T>(layer.out_dim(), layer.in_dim());
    g.biases.assign(layer.out_dim(), T{0});
    view(g.weights).noalias() = view(upstream).transpose() * view(input);
    view(g.biases) = view(upstream).colwise().sum();
    if (l == 0) break;

    Matrix<T> d_input(batch, layer.in_dim());
    view(d_input).noalias() = view(upstream) * view(layer.weights);
    if (cache.training) view(d_input) = view(d_input).cwiseProduct(view(cache.masks[l - 1]));
    const auto& h = cache.hidden[l - 1];
    for (std::size_t i = 0; i < d_input.data.size(); ++i) {
      if (!(h.data[i] > T{0})) d_input.data[i] = T{0};
    }
    upstream = std::move(d_input);
  }
  return grads;
}

template <class T>
void adam_step(BasicMlp<T>& model, AdamState<T>& state, const Gradients<T>& grads,
               double learning_rate, double weight_decay, bool decoupled_weight_decay) {
  if (state.first_moment.empty()) state = AdamState<T>::for_model(model);
  if (grads.layers.size() != model.layers.size() ||
      state.first_moment.size() != model.layers.size()) {
    throw Error(Errc::dimension_mismatch, "gradient/optimizer layer count");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    const auto& g = grads.layers[l];
    if (g.weights.data.size() != layer.weights.data.size() ||
        g.biases.size() != layer.biases.size()) {
      throw Error(Errc::dimension_mismatch, "gradient shape for layer " + std::to_string(l));
    }
    adam_update<T>(layer.weights.data, g.weights.data, state.first_moment[l].weights.data,
                   state.second_moment[l].weights.data, learning_rate, weight_decay,
                   decoupled_weight_decay, state.beta1, state.beta2, state.epsilon, bias1, bias2);
    adam_update<T>(layer.biases, g.biases, state.first_moment[l].biases,
                   state.second_moment[l].biases, learning_rate, weight_decay,
                   decoupled_weight_decay, state.beta1, state.beta2, state.epsilon, bias1, bias2);
  }
  ++model.revision;
}

template <class T>
std::vector<int> argmax_rows(const Matrix<T>& logits) {
  std::vector<int> out(logits.rows, 0);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

template <class T>
std::vector<int> predict(const BasicMlp<T>& model, const Matrix<T>& batch) {
  return argmax_rows(forward_with_masks(model, batch, {}).logits);
}

#define CVQA_INSTANTIATE_NN(T)                                                                  \
  template struct BasicMlp<T>;                                                                  \
  template struct AdamState<T>;                                                                 \
  template BasicMlp<T> init_model<T>(std::size_t, std::size_t, std::size_t, std::size_t,        \
                                     std::uint64_t);                                            \
  template ForwardResult<T> forward<T>(const BasicMlp<T>&, const Matrix<T>&, double, bool,      \
                                       Rng&);                                                   \
  template ForwardResult<T> forward_with_masks<T>(const BasicMlp<T>&, const Matrix<T>&,         \
                                                  std::vector<Matrix<T>>);                      \
  template LossResult<T> softmax_cross_entropy<T>(const Matrix<T>&, std::span<const int>);      \
  template Gradients<T> backward<T>(const BasicMlp<T>&, const ForwardCache<T>&,                 \
                                    const Matrix<T>&);                                          \
  template void adam_step<T>(BasicMlp<T>&, AdamState<T>&, const Gradients<T>&, double, double,  \
                             bool);                                                             \
  template std::vector<int> argmax_rows<T>(const Matrix<T>&);                                   \
  template std::vector<int> predict<T>(const BasicMlp<T>&, const Matrix<T>&);

CVQA_INSTANTIATE_NN(float)
CVQA_INSTANTIATE_NN(double)

template BasicMlp<double> BasicMlp<float>::cast<double>() const;
template BasicMlp<float> BasicMlp<double>::cast<float>() const;
template BasicMlp<float> BasicMlp<float>::cast<float>() const;
template BasicMlp<double> BasicMlp<double>::cast<double>() const;

#undef CVQA_INSTANTIATE_NN

}  // namespace cvqa::nn
