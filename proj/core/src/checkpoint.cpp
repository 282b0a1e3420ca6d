#include "cvqa/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "cvqa/detail/binary_io.hpp"
#include "cvqa/error.hpp"

namespace cvqa::train {

namespace {

constexpr std::string_view kMagic = "RUN1";

template <class Fn>
std::string to_blob(Fn&& write) {
  std::ostringstream buffer(std::ios::binary);
  write(buffer);
  return std::move(buffer).str();
}

}  // namespace

void write_run1(const RunCheckpoint& checkpoint, std::ostream& out) {
  const auto& state = checkpoint.state;
  if (state.next_position != state.matrix.rows_completed()) {
    throw Error(Errc::invalid_argument, "stream state is not at a task boundary");
  }
  detail::LeWriter w(out);
  w.put_bytes(kMagic);
  w.put(kRun1Version);
  w.put_blob(run_config_to_json(checkpoint.config));
  w.put_blob(to_blob([&](std::ostream& s) { nn::write_mlp1(state.model, s); }));
  w.put_blob(to_blob([&](std::ostream& s) { state.memory.write(s); }));
  w.put(static_cast<std::uint64_t>(state.next_position));
  w.put(static_cast<std::uint64_t>(state.matrix.tasks()));
  w.put(static_cast<std::uint64_t>(state.matrix.rows_completed()));
  for (const auto& row : state.matrix.rows()) {
    for (double v : row) w.put_f64(v);
  }
  w.put(static_cast<std::uint64_t>(state.hyper_trace.size()));
  for (const auto& h : state.hyper_trace) {
    w.put(static_cast<std::uint32_t>(h.task_id));
    w.put_f64(h.learning_rate);
    w.put_f64(h.weight_decay);
    w.put(static_cast<std::uint64_t>(h.epochs));
    w.put(static_cast<std::uint64_t>(h.steps));
  }
}

RunCheckpoint read_run1(std::istream& in) {
  detail::LeReader r(in, "RUN1");
  if (r.get_bytes(4) != kMagic) throw Error(Errc::bad_magic, "not a RUN1 checkpoint");
  if (const auto version = r.get<std::uint32_t>(); version != kRun1Version) {
    throw Error(Errc::bad_version, "unsupported RUN1 version " + std::to_string(version));
  }
  RunCheckpoint cp;
  cp.config = run_config_from_json(r.get_blob());
  {
    std::istringstream model(r.get_blob(), std::ios::binary);
    cp.state.model = nn::read_mlp1(model);
  }
  {
    std::istringstream memory(r.get_blob(), std::ios::binary);
    cp.state.memory = replay::EpisodicMemory::read(memory);
  }
  cp.state.next_position = static_cast<std::size_t>(r.get<std::uint64_t>());
  const auto tasks = r.get<std::uint64_t>();
  const auto rows = r.get<std::uint64_t>();
  if (tasks != cp.config.curriculum.tasks.size() || rows > tasks || rows != cp.state.next_position) {
    throw Error(Errc::corrupt, "RUN1: accuracy matrix shape disagrees with the curriculum");
  }
  cp.state.matrix = eval::AccuracyMatrix(static_cast<std::size_t>(tasks));
  for (std::uint64_t i = 0; i < rows; ++i) {
    std::vector<double> row(static_cast<std::size_t>(tasks));
    for (double& v : row) v = r.get_f64();
    try {
      cp.state.matrix.append_row(std::move(row));
    } catch (const Error& e) {
      throw Error(Errc::corrupt, std::string("RUN1: ") + e.what());
    }
  }
  const auto trace = r.get<std::uint64_t>();
  if (trace > tasks) throw Error(Errc::corrupt, "RUN1: hyperparameter trace longer than the curriculum");
  for (std::uint64_t i = 0; i < trace; ++i) {
    eval::HyperparameterRecord h;
    h.task_id = static_cast<int>(r.get<std::uint32_t>());
    h.learning_rate = r.get_f64();
    h.weight_decay = r.get_f64();
    h.epochs = static_cast<std::size_t>(r.get<std::uint64_t>());
    h.steps = static_cast<std::size_t>(r.get<std::uint64_t>());
    cp.state.hyper_trace.push_back(h);
  }
  cp.config.validate();
  return cp;
}

void save_run1(const RunCheckpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  write_run1(checkpoint, out);
}

RunCheckpoint load_run1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  return read_run1(in);
}

}  // namespace cvqa::train
