#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cvqa/error.hpp"
#include "cvqa/metrics.hpp"

namespace cvqa::eval {

namespace {

using Json = nlohmann::ordered_json;

std::string format(const char* fmt, double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, fmt, value);
  return buffer;
}

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Fixed palette; tasks beyond it reuse colors.
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string render_json(const RunReport& r) {
  Json j;
  j["schema"] = r.schema_version;
  j["engine"] = r.engine_version;
  j["label"] = r.label;
  j["seed"] = r.seed;
  j["config"] = Json::object();
  for (const auto& [key, value] : r.config) j["config"][key] = value;
  j["tasks"] = Json::array();
  for (std::size_t t = 0; t < r.task_ids.size(); ++t) {
    j["tasks"].push_back({{"id", r.task_ids[t]},
                          {"name", t < r.task_names.size() ? r.task_names[t] : ""},
                          {"test_count", t < r.test_counts.size() ? r.test_counts[t] : 0}});
  }
  j["accuracy_matrix"] = {{"tasks", r.matrix.tasks()}, {"rows", r.matrix.rows()}};
  j["final_accuracy"] = r.final_accuracy;
  j["overall"] = r.overall;
  j["average"] = r.average;
  if (r.forgetting) {
    j["forgetting"] = {{"per_task", r.forgetting->per_task}, {"mean", r.forgetting->mean}};
  } else {
    j["forgetting"] = nullptr;
  }
  j["hyperparameters"] = Json::array();
  for (const auto& h : r.hyper_trace) {
    j["hyperparameters"].push_back({{"task_id", h.task_id},
                                    {"learning_rate", h.learning_rate},
                                    {"weight_decay", h.weight_decay},
                                    {"epochs", h.epochs},
                                    {"steps", h.steps}});
  }
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j.dump(2) + "\n";
}

RunReport parse_json(std::string_view text) {
  RunReport r;
  try {
    const Json j = Json::parse(text);
    r.schema_version = j.at("schema").get<std::string>();
    if (r.schema_version != kReportSchema) throw Error(Errc::bad_version, "report schema " + r.schema_version);
    r.engine_version = j.at("engine").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [key, value] : j.at("config").items()) r.config[key] = value.get<std::string>();
    for (const auto& task : j.at("tasks")) {
      r.task_ids.push_back(task.at("id").get<int>());
      r.task_names.push_back(task.at("name").get<std::string>());
      r.test_counts.push_back(task.at("test_count").get<std::size_t>());
    }
    r.matrix = AccuracyMatrix(j.at("accuracy_matrix").at("tasks").get<std::size_t>());
    for (const auto& row : j.at("accuracy_matrix").at("rows")) {
      r.matrix.append_row(row.get<std::vector<double>>());
    }
    r.final_accuracy = j.at("final_accuracy").get<std::vector<double>>();
    r.overall = j.at("overall").get<double>();
    r.average = j.at("average").get<double>();
    if (!j.at("forgetting").is_null()) {
      ForgettingScores f;
      f.per_task = j["forgetting"].at("per_task").get<std::vector<double>>();
      f.mean = j["forgetting"].at("mean").get<double>();
      r.forgetting = std::move(f);
    }
    for (const auto& h : j.at("hyperparameters")) {
      r.hyper_trace.push_back({h.at("task_id").get<int>(), h.at("learning_rate").get<double>(),
                               h.at("weight_decay").get<double>(), h.at("epochs").get<std::size_t>(),
                               h.at("steps").get<std::size_t>()});
    }
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt, std::string("report JSON: ") + e.what());
  }
  return r;
}

std::string render_csv(const AccuracyMatrix& matrix, std::span<const int> task_ids) {
  std::ostringstream out;
  out << "after_task";
  for (std::size_t j = 0; j < matrix.tasks(); ++j) {
    out << ",task_" << (j < task_ids.size() ? task_ids[j] : static_cast<int>(j));
  }
  out << "\n";
  for (std::size_t i = 0; i < matrix.rows_completed(); ++i) {
    out << (i < task_ids.size() ? task_ids[i] : static_cast<int>(i));
    for (double a : matrix.rows()[i]) out << ',' << format("%.17g", a);
    out << "\n";
  }
  return out.str();
}

AccuracyMatrix parse_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::corrupt, "empty CSV");
  const auto tasks = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  AccuracyMatrix matrix(tasks);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');  // row label
    std::vector<double> row;
    while (std::getline(fields, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(Errc::corrupt, "CSV cell '" + cell + "' is not a number");
      }
    }
    matrix.append_row(std::move(row));
  }
  return matrix;
}

std::string render_svg(const RunReport& r) {
  constexpr double kWidth = 480.0;
  constexpr double kHeight = 320.0;
  constexpr double kLeft = 50.0;
  constexpr double kRight = 150.0;
  constexpr double kTop = 30.0;
  constexpr double kBottom = 40.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const std::size_t positions = r.matrix.tasks();
  auto x_of = [&](std::size_t i) {
    return positions <= 1 ? kLeft + plot_w / 2.0
                          : kLeft + plot_w * static_cast<double>(i) / static_cast<double>(positions - 1);
  };
  auto y_of = [&](double accuracy) { return kTop + plot_h * (1.0 - accuracy / 100.0); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  out << "<title>" << xml_escape(r.label) << "</title>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<g stroke=\"black\" stroke-width=\"1\">\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h << "\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
      << kTop + plot_h << "\"/>\n";
  out << "</g>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << format("%.2f", y_of(tick) + 3)
        << "\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  for (std::size_t i = 0; i < positions; ++i) {
    const std::string name = i < r.task_names.size() ? r.task_names[i] : std::to_string(i);
    out << "<text x=\"" << format("%.2f", x_of(i)) << "\" y=\"" << kTop + plot_h + 14
        << "\" text-anchor=\"middle\">" << xml_escape(name) << "</text>\n";
  }
  out << "</g>\n";

  for (std::size_t j = 0; j < positions; ++j) {
    const char* color = kColors[j % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (std::size_t i = j; i < r.matrix.rows_completed(); ++i) {
      if (!first) out << ' ';
      out << format("%.2f", x_of(i)) << ',' << format("%.2f", y_of(r.matrix.at(i, j)));
      first = false;
    }
    out << "\"/>\n";
    const std::string name = j < r.task_names.size() ? r.task_names[j] : std::to_string(j);
    out << "<text x=\"" << kLeft + plot_w + 10 << "\" y=\"" << kTop + 14.0 * static_cast<double>(j + 1)
        << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"" << color << "\">" << xml_escape(name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string render_table(std::span<const RunReport> reports) {
  std::ostringstream out;
  if (reports.empty()) return {};
  std::vector<std::string> header{"Method", "Overall"};
  for (const auto& name : reports.front().task_names) header.push_back(name);
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports) {
    std::vector<std::string> row{r.label, format("%.2f", r.overall)};
    for (double a : r.final_accuracy) row.push_back(format("%.2f", a));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < widths.size(); ++c) {
      out << (c == 0 ? "" : " | ");
      out << row[c] << std::string(widths[c] - row[c].size(), ' ');
    }
    out << "\n";
  }
  return out.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path) {
  switch (format) {
    case ReportFormat::json: write_text_file(path, render_json(report)); break;
    case ReportFormat::csv: write_text_file(path, render_csv(report.matrix, report.task_ids)); break;
    case ReportFormat::svg: write_text_file(path, render_svg(report)); break;
    case ReportFormat::table: write_text_file(path, render_table(std::span(&report, 1))); break;
  }
}

}  // namespace cvqa::eval
