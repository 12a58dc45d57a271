#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "distilforge/errors.hpp"
#include "distilforge/eval.hpp"
#include "distilforge/fsio.hpp"

namespace distilforge::cli {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

// markdown table: one row per model, one column per (task, metric) pair
std::string eval_markdown(const std::string& title, const EvalReport& report) {
  std::vector<std::pair<std::string, std::string>> columns;
  std::vector<std::string> model_order;
  std::map<std::string, int64_t> n_params;
  std::map<std::string, std::map<std::string, std::string>> cells;
  for (const auto& row : report.rows) {
    const auto col = std::make_pair(row.task, row.metric);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    if (std::find(model_order.begin(), model_order.end(), row.model) == model_order.end()) {
      model_order.push_back(row.model);
    }
    n_params[row.model] = row.n_params;
    cells[row.model][row.task + " " + row.metric] = row.error.empty() ? format_value(row.value) : "error";
  }

  std::string md = "## " + title + "\n\n| model | n_params |";
  for (const auto& [task, metric] : columns) md += " " + task + " (" + metric + ") |";
  md += "\n|---|---|";
  for (size_t i = 0; i < columns.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& model : model_order) {
    md += "| " + model + " | " + std::to_string(n_params[model]) + " |";
    for (const auto& [task, metric] : columns) {
      const auto& row_cells = cells[model];
      const auto it = row_cells.find(task + " " + metric);
      md += " " + (it == row_cells.end() ? std::string("-") : it->second) + " |";
    }
    md += "\n";
  }
  return md + "\n";
}

}  // namespace

int run_report_command(const std::vector<std::string>& eval_files, const std::vector<std::string>& sweep_files,
                       const fs::path& out_dir) {
  if (eval_files.empty() && sweep_files.empty()) {
    throw ConfigError("report needs at least one --eval or --sweep input");
  }

  // refuse mixed schema versions, naming every version seen
  std::set<int> versions;
  std::vector<std::pair<std::string, nlohmann::json>> loaded;
  for (const auto& f : eval_files) {
    if (!fs::exists(f)) throw ConfigError("--eval: report does not exist: " + f);
    nlohmann::json j = nlohmann::json::parse(read_file_bytes(f));
    versions.insert(j.value("schema_version", 0));
    loaded.emplace_back(f, std::move(j));
  }
  if (versions.size() > 1) {
    std::string list;
    for (int v : versions) list += (list.empty() ? "" : ", ") + std::to_string(v);
    throw FormatError("mixed eval report schema versions: " + list);
  }

  std::string md = "# evaluation report\n\n";
  for (const auto& [file, j] : loaded) {
    md += eval_markdown(fs::path(file).stem().string(), EvalReport::from_json(j));
  }

  // sweep aggregates: one tsv series per metric with temperature as the x-axis
  int series_written = 0;
  for (const auto& f : sweep_files) {
    if (!fs::exists(f)) throw ConfigError("--sweep: aggregate does not exist: " + f);
    std::stringstream ss(read_file_bytes(f));
    std::string line;
    if (!std::getline(ss, line)) throw FormatError("empty sweep aggregate: " + f);
    if (line != "grid_index,temperature,alpha,student,n_params,seed,task,metric,value") {
      throw FormatError("unexpected sweep aggregate header in " + f);
    }
    // (task, metric) -> temperature -> values over seeds
    std::map<std::pair<std::string, std::string>, std::map<double, std::vector<double>>> series;
    while (std::getline(ss, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != 9) throw FormatError("malformed sweep aggregate row in " + f + ": " + line);
      const double t = std::strtod(fields[1].c_str(), nullptr);
      const double value = std::strtod(fields[8].c_str(), nullptr);
      series[{fields[6], fields[7]}][t].push_back(value);
    }
    const std::string stem = fs::path(f).stem().string();
    md += "## sweep " + stem + "\n\n| task | metric | temperature | mean |\n|---|---|---|---|\n";
    for (const auto& [key, by_t] : series) {
      std::string body = "temperature\t" + key.second + "\n";
      for (const auto& [t, values] : by_t) {
        double sum = 0.0;
        for (double v : values) sum += v;
        const double mean = sum / static_cast<double>(values.size());
        body += format_value(t) + "\t" + format_value(mean) + "\n";
        md += "| " + key.first + " | " + key.second + " | " + format_value(t) + " | " + format_value(mean) + " |\n";
      }
      atomic_write_file(out_dir / "series" / (stem + "_" + key.first + "_" + key.second + ".tsv"), body);
      ++series_written;
    }
    md += "\n";
  }

  atomic_write_file(out_dir / "report.md", md);
  std::cout << "report " << (out_dir / "report.md").string() << " (" << series_written << " series)\n";
  return kExitOk;
}

}  // namespace distilforge::cli
