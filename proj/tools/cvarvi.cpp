// Command-line front end: run experiments, summarize traces, emit plot data.
#include "cvarvi/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

template <typename T>
std::vector<T> split_list(const std::vector<std::string>& raw) {
  std::vector<T> out;
  for (const auto& chunk : raw) {
    std::stringstream ss(chunk);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(cvarvi::KeyValueConfig::to_number("list", item));
      } else {
        out.push_back(cvarvi::KeyValueConfig::to_count("list", item));
      }
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CVaR stochastic variational inequality experiments"};
  app.require_subcommand(1);

  std::string config_path;
  unsigned jobs = 1;
  auto* run = app.add_subcommand("run", "run an experiment described by a config file");
  run->add_option("config", config_path, "experiment config")->required();
  run->add_option("--jobs", jobs, "seeds run in parallel")->check(CLI::PositiveNumber);

  std::string trace_dir;
  std::vector<std::string> thresholds_raw{"0.6,0.3,0.15"};
  std::vector<std::string> sizes_raw{"25,50,100"};
  std::string csv_out;
  auto* table = app.add_subcommand("table", "post-threshold mean error table");
  table->add_option("trace_dir", trace_dir, "directory with summaries and traces")->required();
  table->add_option("--thresholds", thresholds_raw, "comma-separated thresholds");
  table->add_option("--sizes", sizes_raw, "comma-separated sample sizes (paired with thresholds)");
  table->add_option("--csv", csv_out, "also write the table as CSV to this file");

  std::string plot_dir;
  std::string plot_out;
  auto* plot = app.add_subcommand("plotdata", "long-format CSV of all traces");
  plot->add_option("trace_dir", plot_dir, "directory with summaries and traces")->required();
  plot->add_option("-o,--output", plot_out, "output file (stdout when omitted)");

  auto* presets = app.add_subcommand("presets", "bundled problems");
  auto* presets_list = presets->add_subcommand("list", "list bundled presets");
  presets->require_subcommand(1);

  CLI11_PARSE(app, argc, argv);

  if (*run) {
    cvarvi::ExperimentConfig cfg;
    try {
      cfg = cvarvi::load_experiment_config(config_path);
    } catch (const cvarvi::ConfigError& e) {
      std::cerr << "invalid config: " << e.what() << "\n";
      return 2;
    }
    try {
      const auto result = cvarvi::run_experiment(cfg, jobs);
      for (const auto& s : result.seeds) {
        std::cout << "seed " << s.seed << ": " << s.status << ", " << s.iterations << " iterations, terminal error "
                  << s.terminal_error << "\n";
      }
      std::cout << "summary: " << result.summary_file << "\n";
    } catch (const cvarvi::ConfigError& e) {
      std::cerr << "invalid config: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    return 0;
  }

  if (*table) {
    try {
      const auto tab = cvarvi::summarize_table(cvarvi::load_traces(trace_dir), split_list<double>(thresholds_raw),
                                               split_list<std::size_t>(sizes_raw));
      std::cout << tab.to_text();
      if (!csv_out.empty()) std::ofstream(csv_out) << tab.to_csv();
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    return 0;
  }

  if (*plot) {
    try {
      const auto csv = cvarvi::emit_plot_data(cvarvi::load_traces(plot_dir));
      if (plot_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream(plot_out) << csv;
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    return 0;
  }

  if (*presets_list) {
    for (const auto& p : cvarvi::list_presets()) std::cout << p.name << "\t" << p.description << "\n";
  }
  return 0;
}
