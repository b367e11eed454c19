#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pagesim/error.hpp"
#include "pagesim/scenario.hpp"

using namespace pagesim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// A fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pagesim_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json gups_doc(const std::string& policy, const std::string& footprint = "2GB") {
  json doc = json::parse(R"({
    "memory": "8GB",
    "trace": {"generate": {"pattern": "uniform", "start": "1GB", "accesses": 200000,
                           "tick_every": 10000, "tick_ns": 1000000}}
  })");
  doc["policy"] = policy;
  doc["name"] = policy;
  doc["trace"]["generate"]["footprint"] = footprint;
  return doc;
}

json fragmented_doc(const std::string& policy, std::uint64_t seed) {
  json doc = json::parse(R"({
    "memory": "8GB",
    "fragmentation": {"occupied_fraction": 0.5, "clustering": 8},
    "trace": {"generate": {"pattern": "zipf", "start": "1GB", "footprint": "2GB", "touch_first": true,
                           "accesses": 100000, "tick_every": 5000, "tick_ns": 10000000}}
  })");
  doc["policy"] = policy;
  doc["name"] = policy;
  doc["seed"] = seed;
  return doc;
}

RunMetrics run(const json& doc) { return run_scenario(parse_config(doc)).metrics; }

}  // namespace

TEST_CASE("policy names round trip and TridentPv needs virtualization") {
  for (Policy p : {Policy::Base4K, Policy::Thp2M, Policy::Trident1GOnly, Policy::Trident, Policy::TridentPv}) {
    CHECK(parse_policy(to_string(p)) == p);
  }
  CHECK_FALSE(parse_policy("HawkEye"));
  json doc = gups_doc("TridentPv");
  CHECK_THROWS_AS(parse_config(doc), SimError);
  doc["virtualization"] = {{"enabled", true}};
  CHECK_NOTHROW(parse_config(doc));
}

TEST_CASE("config errors name the offending field") {
  auto config_error = [](const json& doc) {
    try {
      parse_config(doc);
    } catch (const SimError& e) {
      CHECK(e.code() == Errc::Config);
      return std::string(e.what());
    }
    FAIL("expected a config error");
    return std::string();
  };
  json doc = gups_doc("Trident");
  doc["memroy"] = "8GB";
  CHECK(config_error(doc).find("memroy") != std::string::npos);

  doc = gups_doc("Trident");
  doc["policy"] = "Fast";
  CHECK(config_error(doc).find("Fast") != std::string::npos);

  doc = gups_doc("Trident");
  doc["trace"]["generate"]["acesses"] = 5;
  CHECK(config_error(doc).find("acesses") != std::string::npos);

  doc = gups_doc("Trident");
  doc["memory"] = "lots";
  CHECK(config_error(doc).find("memory") != std::string::npos);

  doc = gups_doc("Trident");
  doc["memory"] = "512MB";
  config_error(doc);

  doc = gups_doc("Trident");
  doc["cost"] = {{"memory_access_ns", -1}};
  config_error(doc);

  doc = gups_doc("Trident");
  doc["tlb"] = {{"l1_4k", {{"entries", 64}, {"ways", 5}}}};
  config_error(doc);

  doc = gups_doc("Trident");
  doc.erase("trace");
  config_error(doc);

  doc = gups_doc("Trident");
  doc["trace"] = {{"file", "/nonexistent/trace.txt"}};
  CHECK(config_error(doc).find("does not exist") != std::string::npos);

  doc = gups_doc("Trident");
  doc["fragmentation"] = {{"occupied_fraction", 1.5}};
  config_error(doc);
}

TEST_CASE("dotted overrides reach nested fields and keep JSON types") {
  json doc = gups_doc("Base4K");
  apply_override(doc, "policy=Trident");
  apply_override(doc, "trace.generate.accesses=777");
  apply_override(doc, "fragmentation.clustering=4.5");
  apply_override(doc, "virtualization.enabled=false");
  CHECK(doc["policy"] == "Trident");
  CHECK(doc["trace"]["generate"]["accesses"] == 777);
  CHECK(doc["fragmentation"]["clustering"] == 4.5);
  CHECK(doc["virtualization"]["enabled"] == false);
  const ScenarioConfig c = parse_config(doc);
  CHECK(c.policy == Policy::Trident);
  CHECK(c.trace.generate->accesses == 777);
  CHECK(c.fragmentation->clustering == 4.5);

  CHECK_THROWS_AS(apply_override(doc, "novalue"), SimError);
  CHECK_THROWS_AS(apply_override(doc, "=3"), SimError);
  CHECK_THROWS_AS(apply_override(doc, "policy.x=3"), SimError);
  CHECK_THROWS_AS(apply_override(doc, "a..b=3"), SimError);
}

TEST_CASE("config files load with overrides and relative trace paths") {
  TempDir dir("cfg");
  std::ofstream(dir.path / "t.trace") << "R 1 0x40000000 0x200000\nA 1 0x40000000 3\nT 100\n";
  json doc = gups_doc("Trident");
  doc["trace"] = {{"file", "t.trace"}};
  std::ofstream(dir.path / "c.json") << doc.dump(2);

  const json loaded = load_config_document((dir.path / "c.json").string(), {"seed=9"});
  const ScenarioConfig c = parse_config(loaded, dir.path.string());
  CHECK(c.seed == 9);
  CHECK(fs::equivalent(c.trace.file, dir.path / "t.trace"));
  const RunMetrics m = run_scenario(c).metrics;
  CHECK(m.trace_ops == 3);
  CHECK(m.access.accesses == 3);
  CHECK(m.end_time_ns == 100);

  std::ofstream(dir.path / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config_document((dir.path / "bad.json").string()), SimError);
  CHECK_THROWS_AS(load_config_document((dir.path / "missing.json").string()), SimError);
}

TEST_CASE("malformed traces fail with the line number") {
  TempDir dir("trace");
  json doc = gups_doc("Trident");
  doc["trace"] = {{"file", (dir.path / "t.trace").string()}};

  std::ofstream(dir.path / "t.trace") << "R 1 0x40000000 0x200000\nT 50\n# ok\nT 20\n";
  try {
    run(doc);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  std::ofstream(dir.path / "t.trace") << "R 1 0x40000000 0x200000\nA 1 0x40000000 one\n";
  try {
    run(doc);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  // Access outside any reserved area is a runtime error, not a config error.
  std::ofstream(dir.path / "t.trace") << "R 1 0x40000000 0x200000\nA 1 0x80000000 1\n";
  try {
    run(doc);
    FAIL("expected a runtime error");
  } catch (const SimError& e) {
    CHECK(e.code() != Errc::Config);
  }
}

TEST_CASE("same config twice gives byte-identical artifacts for every policy") {
  for (const char* policy : {"Base4K", "Thp2M", "Trident1GOnly", "Trident"}) {
    CAPTURE(policy);
    const ScenarioConfig c = parse_config(fragmented_doc(policy, 3));
    TempDir a(std::string("det_a_") + policy);
    TempDir b(std::string("det_b_") + policy);
    write_artifacts(run_scenario(c), a.path.string());
    write_artifacts(run_scenario(c), b.path.string());
    for (const char* f :
         {"metrics.json", "timeseries.csv", "promotions.csv", "compactions.csv", "regions.csv", "mappability.csv"}) {
      CAPTURE(f);
      const std::string x = slurp(a.path / f);
      CHECK(!x.empty());
      CHECK(x == slurp(b.path / f));
    }
  }
  // A different seed changes the run.
  CHECK(run(fragmented_doc("Trident", 3)).to_json() != run(fragmented_doc("Trident", 4)).to_json());
}

TEST_CASE("huge pages cut the walk fraction on an unfragmented uniform trace") {
  const RunMetrics base = run(gups_doc("Base4K"));
  const RunMetrics thp = run(gups_doc("Thp2M"));
  const RunMetrics trident = run(gups_doc("Trident"));
  CHECK(base.mapped_bytes[0] == base.footprint_bytes);
  CHECK(thp.mapped_bytes[1] == 2 * kGiB);
  CHECK(trident.mapped_bytes[2] == 2 * kGiB);
  CHECK(trident.walk_fraction < thp.walk_fraction);
  CHECK(thp.walk_fraction < base.walk_fraction);
  CHECK(base.access.accesses == trident.access.accesses);
}

TEST_CASE("Trident1GOnly loses to Trident on areas no 1GB page can cover") {
  // 768MB starting a quarter into a gigabyte: no aligned 1GB window fits.
  json trident = gups_doc("Trident");
  trident["trace"]["generate"]["start"] = "0x50000000";
  trident["trace"]["generate"]["footprint"] = "768MB";
  json only = trident;
  only["policy"] = "Trident1GOnly";
  only["name"] = "Trident1GOnly";
  const RunMetrics t = run(trident);
  const RunMetrics o = run(only);
  CHECK(t.mapped_bytes[2] == 0);
  CHECK(o.mapped_bytes[2] == 0);
  CHECK(t.mapped_bytes[1] == 768 * kMiB);
  CHECK(o.mapped_bytes[1] == 0);
  CHECK(o.mapped_bytes[0] > 0);
  CHECK(o.walk_fraction > t.walk_fraction);
}

TEST_CASE("policies only map the sizes they allow") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CAPTURE(seed);
    const RunMetrics base = run(fragmented_doc("Base4K", seed));
    const RunMetrics thp = run(fragmented_doc("Thp2M", seed));
    const RunMetrics only = run(fragmented_doc("Trident1GOnly", seed));
    const RunMetrics trident = run(fragmented_doc("Trident", seed));
    CHECK(base.mapped_bytes[1] + base.mapped_bytes[2] == 0);
    CHECK(base.promotion.promotions_1g + base.promotion.promotions_2m == 0);
    CHECK(thp.mapped_bytes[2] == 0);
    CHECK(thp.fault_attempts_1g == 0);
    CHECK(only.mapped_bytes[1] == 0);
    CHECK(only.promotion.promotions_2m == 0);
    // Trident only adds 2MB fallbacks to what Trident1GOnly does.
    CHECK(trident.mapped_bytes[2] >= only.mapped_bytes[2]);
    for (const RunMetrics* m : {&base, &thp, &only, &trident}) {
      CHECK(m->footprint_bytes == 2 * kGiB);
      CHECK(m->fault_failures_1g <= m->fault_attempts_1g);
    }
  }
}

TEST_CASE("comparison reports every engine and matches the per-run JSON") {
  std::vector<ScenarioConfig> configs;
  for (const char* p : {"Thp2M", "Trident"}) configs.push_back(parse_config(fragmented_doc(p, 5)));
  const Comparison cmp = compare(configs);
  REQUIRE(cmp.runs.size() == 2);

  const std::string csv = cmp.csv();
  const std::string header = csv.substr(0, csv.find('\n'));
  for (const char* column : {"walk_fraction", "mapped_4KB", "mapped_2MB", "mapped_1GB", "fault_1g_failure_pct",
                             "normal_compaction_bytes_copied", "smart_compaction_bytes_copied", "total_bytes_copied"}) {
    CHECK(header.find(column) != std::string::npos);
  }
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const std::string table = cmp.table();
  CHECK(table.find("Thp2M") != std::string::npos);
  CHECK(table.find("Trident") != std::string::npos);

  // The failure column is failures / attempts.
  const RunMetrics& t = cmp.runs[1];
  REQUIRE(t.fault_attempts_1g > 0);
  CHECK(t.fault_failure_rate_1g() ==
        doctest::Approx(static_cast<double>(t.fault_failures_1g) / static_cast<double>(t.fault_attempts_1g)));

  // Totals agree with metrics written to disk and read back.
  TempDir dir("cmp");
  std::vector<RunMetrics> reread;
  for (const ScenarioConfig& c : configs) {
    const fs::path out = dir.path / c.name;
    write_artifacts(run_scenario(c), out.string());
    std::ifstream in(out / "metrics.json");
    reread.push_back(RunMetrics::from_json(json::parse(in)));
  }
  const Comparison again = compare_metrics(reread);
  CHECK(again.csv() == csv);
  for (std::size_t i = 0; i < reread.size(); ++i) {
    CHECK(reread[i].to_json() == cmp.runs[i].to_json());
    CHECK(reread[i].bytes_copied_total() == cmp.runs[i].bytes_copied_total());
  }
}

TEST_CASE("comparing different traces is refused") {
  std::vector<ScenarioConfig> configs{parse_config(fragmented_doc("Thp2M", 1)), parse_config(fragmented_doc("Trident", 2))};
  try {
    compare(configs);
    FAIL("expected IncompatibleConfigs");
  } catch (const SimError& e) {
    CHECK(e.code() == Errc::IncompatibleConfigs);
  }
  CHECK_THROWS_AS(compare({configs[0]}), SimError);
  // Same trace, different fragmentation seed, is fine.
  json a = fragmented_doc("Thp2M", 1);
  json b = fragmented_doc("Trident", 1);
  b["fragmentation"]["seed"] = 99;
  CHECK_NOTHROW(check_compatible({parse_config(a), parse_config(b)}));
}

TEST_CASE("metrics document holds the summary fields") {
  const RunArtifacts a = run_scenario(parse_config(fragmented_doc("Trident", 2)));
  const auto j = a.metrics.to_json();
  for (const char* key : {"name", "policy", "walk_fraction", "tlb", "faults", "mapped_bytes", "promotion", "compaction",
                          "bytes_copied_total", "fragmentation"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["faults"]["failure_rate_1g"] == a.metrics.fault_failure_rate_1g());
  CHECK(a.metrics.fragmentation.occupied_frames > 0);
  // One sample per khugepaged interval plus the final one.
  REQUIRE(a.timeseries.size() >= 2);
  for (std::size_t i = 1; i < a.timeseries.size(); ++i) {
    CHECK(a.timeseries[i].time_ns > a.timeseries[i - 1].time_ns);
    CHECK(a.timeseries[i].accesses >= a.timeseries[i - 1].accesses);
    CHECK(a.timeseries[i].mappable_1g <= a.timeseries[i].mappable_2m);
  }
  CHECK_THROWS_AS(RunMetrics::from_json(json{{"name", "x"}}), SimError);
}

TEST_CASE("virtualized TridentPv promotes by exchange when a 1GB block frees up") {
  TempDir dir("pv");
  std::ofstream trace(dir.path / "pv.trace");
  // pid 2 takes the only clean gigabyte; pid 1 then gets 2MB pages; pid 2 exits.
  trace << "R 2 0x40000000 0x40000000\nA 2 0x40000000 1\nR 1 0x80000000 0x40000000\n";
  for (int i = 0; i < 512; ++i) trace << "A 1 0x" << std::hex << (0x80000000ull + i * 0x200000ull) << std::dec << " 1\n";
  trace << "F 2 0x40000000 0x40000000\nT 20000000\nA 1 0x80000000 10\n";
  trace.close();

  json doc = {{"memory", "4GB"},
              {"policy", "TridentPv"},
              {"fragmentation", {{"occupied_fraction", 0.4}, {"clustering", 2048}}},
              {"virtualization", {{"enabled", true}}},
              {"trace", {{"file", (dir.path / "pv.trace").string()}}}};
  const RunMetrics pv = run(doc);
  CHECK(pv.virtualized);
  CHECK(pv.mapped_bytes[2] == kGiB);
  CHECK(pv.promotion.copyless_1g == 1);
  CHECK(pv.hypercalls == 1);
  CHECK(pv.promotion.bytes_copied < kGiB);

  doc["policy"] = "Trident";
  const RunMetrics copy = run(doc);
  CHECK(copy.mapped_bytes[2] == kGiB);
  CHECK(copy.promotion.copyless_1g == 0);
  CHECK(copy.hypercalls == 0);
  CHECK(copy.promotion.bytes_copied == kGiB);
  CHECK(pv.promotion.latency_ns * 100 <= copy.promotion.latency_ns);
}

TEST_CASE("virtualized runs walk the nested tables") {
  json native = gups_doc("Thp2M");
  json virt = native;
  virt["virtualization"] = {{"enabled", true}, {"host_policy", "Base4K"}};
  const RunMetrics n = run(native);
  const RunMetrics v = run(virt);
  CHECK(v.mapped_bytes == n.mapped_bytes);
  CHECK(v.host_mapped_bytes[0] > 0);
  CHECK(v.host_mapped_bytes[1] + v.host_mapped_bytes[2] == 0);
  // 2MB guest over 4KB host: each miss costs the 2D walk.
  CHECK(v.access.walk_accesses > n.access.walk_accesses);
  CHECK(v.walk_fraction > n.walk_fraction);
}
