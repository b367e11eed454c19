// pagesim: run, compare and validate scenarios, and generate traces.
//
// Exit status: 0 on success, 2 for a bad config or command line, and 3 when
// a run fails at runtime, for example on a malformed trace.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pagesim/error.hpp"
#include "pagesim/scenario.hpp"

using namespace pagesim;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

ScenarioConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  const auto doc = load_config_document(path, overrides);
  return parse_config(doc, std::filesystem::path(path).parent_path().string());
}

void print_summary(const RunMetrics& m) {
  std::printf("%s (%s%s)\n", m.name.c_str(), std::string(to_string(m.policy)).c_str(),
              m.virtualized ? ", virtualized" : "");
  std::printf("  accesses            %llu\n", static_cast<unsigned long long>(m.access.accesses));
  std::printf("  walk fraction       %.6f\n", m.walk_fraction);
  for (PageSize s : kAllPageSizes) {
    std::printf("  mapped %-4s         %s\n", std::string(to_string(s)).c_str(),
                format_bytes(m.mapped_bytes[size_index(s)]).c_str());
  }
  std::printf("  1GB fault failures  %llu / %llu (%.2f%%)\n", static_cast<unsigned long long>(m.fault_failures_1g),
              static_cast<unsigned long long>(m.fault_attempts_1g), 100.0 * m.fault_failure_rate_1g());
  std::printf("  promotions          1GB %llu, 2MB %llu\n", static_cast<unsigned long long>(m.promotion.promotions_1g),
              static_cast<unsigned long long>(m.promotion.promotions_2m));
  std::printf("  bytes copied        %s\n", format_bytes(m.bytes_copied_total()).c_str());
  if (m.virtualized) std::printf("  hypercalls          %llu\n", static_cast<unsigned long long>(m.hypercalls));
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const SimError& e) {
    std::fprintf(stderr, "pagesim: %s\n", e.what());
    const bool config = e.code() == Errc::Config || e.code() == Errc::IncompatibleConfigs;
    return config ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pagesim: %s\n", e.what());
    return kRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-driven simulator of 4KB, 2MB and 1GB pages"};
  app.require_subcommand(1);

  std::vector<std::string> overrides;
  const char* set_help = "Override a config field, e.g. --set fragmentation.seed=7 (repeatable)";

  auto* run = app.add_subcommand("run", "Replay one scenario");
  std::string run_config;
  std::string run_out;
  bool run_json = false;
  run->add_option("config", run_config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--set", overrides, set_help);
  run->add_option("-o,--out", run_out, "Write metrics.json and CSV series to this directory");
  run->add_flag("--json", run_json, "Print the metrics document instead of a summary");

  auto* cmp = app.add_subcommand("compare", "Replay several scenarios over one trace and tabulate them");
  std::vector<std::string> cmp_configs;
  std::string cmp_csv;
  std::string cmp_out;
  cmp->add_option("configs", cmp_configs, "Scenario configs")->required()->expected(2, -1)->check(CLI::ExistingFile);
  cmp->add_option("--set", overrides, set_help + std::string(", applied to every config"));
  cmp->add_option("--csv", cmp_csv, "Also write the comparison as CSV");
  cmp->add_option("-o,--out", cmp_out, "Write each run's artifacts under DIR/<name>");

  auto* gen = app.add_subcommand("gen-trace", "Write a synthetic trace");
  std::string pattern_text;
  std::string start_text = "1GB";
  std::string footprint_text = "1GB";
  std::string gen_out;
  TraceSpec spec;
  gen->add_option("pattern", pattern_text, "sequential, uniform or zipf")->required();
  gen->add_option("--start", start_text, "First byte of the area")->capture_default_str();
  gen->add_option("--footprint", footprint_text, "Area size")->capture_default_str();
  gen->add_option("--accesses", spec.accesses, "Accesses after the touch pass")->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--zipf-s", spec.zipf_s, "Zipf exponent")->capture_default_str();
  gen->add_option("--pid", spec.pid)->capture_default_str();
  gen->add_flag("--touch-first", spec.touch_first, "Touch every page in address order first");
  gen->add_option("--tick-every", spec.tick_every, "Accesses between time ticks (0: none)")->capture_default_str();
  gen->add_option("--tick-ns", spec.tick_ns, "Nanoseconds per tick")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Output file (default: stdout)");

  auto* val = app.add_subcommand("validate", "Check a config without running it");
  std::string val_config;
  val->add_option("config", val_config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  val->add_option("--set", overrides, set_help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (*run) {
    return guarded([&] {
      const ScenarioConfig config = load(run_config, overrides);
      const RunArtifacts artifacts = run_scenario(config);
      if (!run_out.empty()) write_artifacts(artifacts, run_out);
      if (run_json) {
        std::cout << artifacts.metrics.to_json().dump(2) << "\n";
      } else {
        print_summary(artifacts.metrics);
      }
    });
  }
  if (*cmp) {
    return guarded([&] {
      std::vector<ScenarioConfig> configs;
      for (const std::string& path : cmp_configs) configs.push_back(load(path, overrides));
      Comparison report;
      if (cmp_out.empty()) {
        report = compare(configs);
      } else {
        check_compatible(configs);
        for (const ScenarioConfig& c : configs) {
          const RunArtifacts a = run_scenario(c);
          write_artifacts(a, (std::filesystem::path(cmp_out) / c.name).string());
          report.runs.push_back(a.metrics);
        }
      }
      std::cout << report.table();
      if (!cmp_csv.empty()) {
        std::ofstream out(cmp_csv);
        if (!out) fail(Errc::InvalidArgument, "cannot write " + cmp_csv);
        out << report.csv();
      }
    });
  }
  if (*gen) {
    return guarded([&] {
      auto pattern = parse_access_pattern(pattern_text);
      if (!pattern) fail(Errc::Config, "unknown pattern '" + pattern_text + "'");
      auto start = parse_bytes(start_text);
      auto footprint = parse_bytes(footprint_text);
      if (!start || !footprint) fail(Errc::Config, "--start and --footprint take sizes like 1GB or 0x40000000");
      spec.pattern = *pattern;
      spec.areas = {TraceArea{*start, *footprint, 1.0}};
      TraceGenerator generator(spec);
      if (gen_out.empty()) {
        write_trace(generator, std::cout);
      } else {
        std::ofstream out(gen_out);
        if (!out) fail(Errc::InvalidArgument, "cannot write " + gen_out);
        write_trace(generator, out);
      }
    });
  }
  return guarded([&] {
    const ScenarioConfig config = load(val_config, overrides);
    std::printf("%s: ok (%s, %s, %s)\n", val_config.c_str(), config.name.c_str(),
                std::string(to_string(config.policy)).c_str(), format_bytes(config.memory_bytes).c_str());
  });
}
