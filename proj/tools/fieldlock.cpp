// fieldlock: inspect ADT files and run workloads under the field-level
// scheduler.
//
//   fieldlock analyze <file.adt>
//   fieldlock run [--mode M] [--seed N] [--workers N] [--iterations N]
//                 [--interleave random|round-robin] [--trace PATH] [--log PATH]
//                 [--json] <file.wl>
//
// Exit status: 0 pass, 1 verification failure, 2 usage or parse error.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "fieldlock/fieldlock.hpp"

namespace {

using namespace fieldlock;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

void print_analysis(std::ostream& out, const AdtSchema& schema) {
  out << "adt " << schema.name << "(";
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    out << (i ? ", " : "") << schema.fields[i].name << ": " << type_name(schema.fields[i].type);
  }
  out << ")\n";
  std::size_t width = 4;
  for (const auto& op : schema.operations) width = std::max(width, op.name.size());
  for (const auto& op : schema.operations) {
    out << "  " << std::left << std::setw(static_cast<int>(width)) << op.name << "  " << op.static_dav.to_string()
        << '\n';
  }
  if (schema.operations.empty()) return;
  auto matrix = commutativity_matrix(schema);
  out << "commutes:\n  " << std::setw(static_cast<int>(width)) << "" << ' ';
  for (const auto& op : schema.operations) out << ' ' << op.name;
  out << '\n';
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << "  " << std::setw(static_cast<int>(width)) << schema.operations[i].name << ' ';
    for (std::size_t j = 0; j < matrix.size(); ++j) {
      const auto& col = schema.operations[j].name;
      out << ' ' << std::setw(static_cast<int>(col.size())) << (matrix[i][j] ? "yes" : "no");
    }
    out << '\n';
  }
}

nlohmann::ordered_json report_json(const RunReport& r) {
  const MetricsReport& m = r.metrics;
  nlohmann::ordered_json j;
  j["mode"] = std::string(mode_name(m.mode));
  j["transactions"] = m.transactions;
  j["committed"] = m.committed;
  j["rejected"] = m.rejected;
  j["deadlock_victims"] = m.deadlock_victims;
  j["faults"] = m.faults;
  j["block_events"] = m.block_events;
  j["early_releases"] = m.early_releases;
  j["mean_queue_wait"] = m.mean_queue_wait;
  j["max_queue_wait"] = m.max_queue_wait;
  j["conflict_edges"] = m.conflict_edges;
  j["entry_calls"] = m.entry_calls;
  j["field_visits"] = m.field_visits;
  j["invariant_checks"] = m.invariant_checks;
  j["invariant_violations"] = m.invariant_violations;
  j["verdict"] = std::string(verdict_name(r.verdict));
  j["problems"] = r.problems;
  return j;
}

void print_report_text(std::ostream& out, const RunReport& r) {
  const auto fields = report_json(r);
  for (const auto& [key, value] : fields.items()) {
    if (key == "problems") continue;
    out << key << '=';
    if (value.is_string()) out << value.get<std::string>();
    else out << value.dump();
    out << '\n';
  }
  for (const auto& p : r.problems) {
    std::istringstream lines(p);
    for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
  }
}

int analyze(const std::string& path) {
  for (const auto& schema : load_adt_file(path)) print_analysis(std::cout, schema);
  return kExitPass;
}

struct RunOptions {
  std::string mode = "dynamic-av";
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::size_t iterations = 1;
  std::string interleave = "random";
  std::string trace_path;
  std::string log_path;
  bool json = false;
  std::string workload;
};

int run(const RunOptions& opts) {
  std::vector<SchedulerMode> modes;
  if (opts.mode == "all") {
    modes = {SchedulerMode::Compat, SchedulerMode::StaticAv, SchedulerMode::DynamicAv};
  } else {
    modes.push_back(*parse_mode(opts.mode));
  }
  const Workload workload = load_workload(opts.workload);

  std::ofstream trace_out;
  std::ofstream log_out;
  if (!opts.trace_path.empty()) {
    trace_out.open(opts.trace_path);
    if (!trace_out) throw WorkloadError("cannot write '" + opts.trace_path + "'");
  }
  if (!opts.log_path.empty()) {
    log_out.open(opts.log_path);
    if (!log_out) throw WorkloadError("cannot write '" + opts.log_path + "'");
  }
  const bool headers = modes.size() > 1 || opts.iterations > 1;

  std::vector<RunReport> reports;
  for (SchedulerMode mode : modes) {
    RunConfig config;
    config.mode = mode;
    config.seed = opts.seed;
    config.workers = opts.workers;
    config.iterations = opts.iterations;
    config.interleave = opts.interleave == "round-robin" ? Interleave::RoundRobin : Interleave::Random;
    RunReport report = run_workload(workload, config);
    for (std::size_t k = 0; k < report.iterations.size(); ++k) {
      const auto& it = report.iterations[k];
      const std::string header =
          "# mode=" + std::string(mode_name(mode)) + " iteration=" + std::to_string(k) + "\n";
      if (trace_out.is_open()) {
        if (headers) trace_out << header;
        trace_out << format_trace(it.trace);
      }
      if (log_out.is_open()) {
        if (headers) log_out << header;
        for (const auto& line : it.log) log_out << line << '\n';
      }
    }
    reports.push_back(std::move(report));
  }

  if (opts.json) {
    nlohmann::ordered_json doc;
    if (reports.size() == 1) {
      doc = report_json(reports.front());
    } else {
      doc["runs"] = nlohmann::ordered_json::array();
      for (const auto& r : reports) doc["runs"].push_back(report_json(r));
    }
    std::cout << doc.dump(2) << '\n';
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (i) std::cout << '\n';
      print_report_text(std::cout, reports[i]);
    }
  }
  bool failed = std::any_of(reports.begin(), reports.end(), [](const RunReport& r) { return r.verdict == Verdict::Fail; });
  return failed ? kExitFail : kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Field-level concurrency control for tuple-based ADTs"};
  app.require_subcommand(1);

  std::string adt_path;
  auto* analyze_cmd = app.add_subcommand("analyze", "Print access vectors and the commutativity matrix");
  analyze_cmd->add_option("file", adt_path, "ADT source file")->required();

  RunOptions opts;
  auto* run_cmd = app.add_subcommand("run", "Run a workload and verify the outcome");
  run_cmd->add_option("--mode", opts.mode, "Scheduler mode")
      ->check(CLI::IsMember({"compat", "static-av", "dynamic-av", "all"}));
  run_cmd->add_option("--seed", opts.seed, "Interleaving seed");
  run_cmd->add_option("--workers", opts.workers, "Worker threads; 0 runs the seeded step scheduler");
  run_cmd->add_option("--iterations", opts.iterations, "Repetitions from the initial state")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--interleave", opts.interleave, "Step scheduler policy")
      ->check(CLI::IsMember({"random", "round-robin"}));
  run_cmd->add_option("--trace", opts.trace_path, "Write the event trace here");
  run_cmd->add_option("--log", opts.log_path, "Write before-image log records here");
  run_cmd->add_flag("--json", opts.json, "Print the report as JSON");
  run_cmd->add_option("workload", opts.workload, "Workload file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitUsage;
  }

  try {
    if (*analyze_cmd) return analyze(adt_path);
    return run(opts);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const WorkloadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
}
