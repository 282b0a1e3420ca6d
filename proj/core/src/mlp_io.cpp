#include <fstream>
#include <string>

#include "cvqa/detail/binary_io.hpp"
#include "cvqa/error.hpp"
#include "cvqa/nn.hpp"

namespace cvqa::nn {

namespace {
constexpr std::string_view kMagic = "MLP1";
constexpr std::uint32_t kMaxDim = 1u << 24;
}  // namespace

void write_mlp1(const MlpModel& model, std::ostream& out) {
  detail::LeWriter w(out);
  w.put_bytes(kMagic);
  w.put(kMlp1Version);
  w.put(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.put(static_cast<std::uint32_t>(layer.out_dim()));
    w.put(static_cast<std::uint32_t>(layer.in_dim()));
    w.put_f32s(layer.weights.data);
    w.put_f32s(layer.biases);
  }
}

MlpModel read_mlp1(std::istream& in) {
  detail::LeReader r(in, "MLP1");
  if (r.get_bytes(kMagic.size()) != kMagic) throw Error(Errc::bad_magic, "not an MLP1 checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kMlp1Version) {
    throw Error(Errc::bad_version, "MLP1 version " + std::to_string(version));
  }
  const auto layer_count = r.get<std::uint32_t>();
  if (layer_count == 0 || layer_count > 4096) throw Error(Errc::corrupt, "MLP1 layer count");

  MlpModel model;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const auto out_dim = r.get<std::uint32_t>();
    const auto in_dim = r.get<std::uint32_t>();
    if (out_dim == 0 || in_dim == 0 || out_dim > kMaxDim || in_dim > kMaxDim) {
      throw Error(Errc::corrupt, "MLP1 layer dims");
    }
    LayerParams<float> layer{Matrix<float>(out_dim, in_dim), AlignedVector<float>(out_dim)};
    r.get_f32s(layer.weights.data);
    r.get_f32s(layer.biases);
    model.layers.push_back(std::move(layer));
  }
  model.input_dim = model.layers.front().in_dim();
  model.output_dim = model.layers.back().out_dim();
  model.num_hidden_layers = model.layers.size() - 1;
  model.hidden_dim = model.num_hidden_layers > 0 ? model.layers.front().out_dim() : 0;
  model.validate();
  return model;
}

void save_mlp1(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  write_mlp1(model, out);
}

MlpModel load_mlp1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  return read_mlp1(in);
}

}  // namespace cvqa::nn
