#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pagesim/compaction.hpp"
#include "pagesim/fault_handler.hpp"
#include "pagesim/nested.hpp"
#include "pagesim/promotion.hpp"
#include "pagesim/tlb.hpp"
#include "pagesim/workload.hpp"

namespace pagesim {

enum class Policy : std::uint8_t { Base4K, Thp2M, Trident1GOnly, Trident, TridentPv };

std::string_view to_string(Policy policy);
std::optional<Policy> parse_policy(std::string_view text);

// What a policy turns on: fault sizes, the zero pool, khugepaged and its
// compaction engines, and the copy-less path.
struct PolicySettings {
  FaultSizes faults;
  bool zero_pool = false;
  bool khugepaged = false;
  PromotionConfig promotion;
  bool copyless = false;
};

PolicySettings settings_for(Policy policy);

struct VirtConfig {
  bool enabled = false;
  std::uint64_t host_memory_bytes = 0;  // 0: guest memory plus 2GB
  Policy host_policy = Policy::Thp2M;
  PvLatency latency;
};

struct TraceSource {
  std::string file;                  // resolved path, or empty
  std::optional<TraceSpec> generate;  // used when no file is given
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t memory_bytes = 4 * kGiB;
  Policy policy = Policy::Trident;
  std::uint64_t seed = 1;
  std::optional<FragmentationSpec> fragmentation;
  TraceSource trace;
  TlbConfig tlb;
  CostModel cost;
  bool khugepaged_enabled = true;  // false leaves only fault-time sizing
  std::uint64_t khugepaged_interval_ns = 10'000'000;
  std::size_t khugepaged_budget = 8;
  ZeroPoolConfig zero_pool;  // `enabled` comes from the policy
  VirtConfig virt;
  Pid cache_pid = 0;  // the file-cache process created by fragmentation
  nlohmann::ordered_json trace_identity;  // what two configs must share to be compared

  // Throws Config.
  void validate() const;
};

// Applies "a.b.c=value" to a config document. The value is read as JSON when
// it parses, else as a string. Throws Config on a malformed assignment.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Reads a config file and applies overrides in order. Throws Config.
nlohmann::json load_config_document(const std::string& path, const std::vector<std::string>& overrides = {});

// Relative trace paths resolve against base_dir. Throws Config.
ScenarioConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");

struct CompactionTotals {
  std::uint64_t runs = 0;
  std::uint64_t successes = 0;
  std::uint64_t frames_copied = 0;
  std::uint64_t wasted_frames = 0;

  std::uint64_t bytes_copied() const { return frames_copied * kFrameBytes; }
};

using SizeCounters = std::array<std::uint64_t, 3>;  // indexed by size_index

struct RunMetrics {
  std::string name;
  Policy policy = Policy::Trident;
  bool virtualized = false;
  std::uint64_t seed = 0;
  std::uint64_t memory_bytes = 0;

  std::uint64_t trace_ops = 0;
  AccessStats access;
  double walk_fraction = 0;

  SizeCounters faults{};
  std::uint64_t fault_attempts_1g = 0;
  std::uint64_t fault_failures_1g = 0;
  double fault_latency_ns = 0;

  SizeCounters mapped_bytes{};  // application processes only
  std::uint64_t footprint_bytes = 0;

  PromotionStats promotion;
  CompactionTotals normal;
  CompactionTotals smart;

  FragmentationReport fragmentation;
  std::uint64_t free_frames = 0;
  double end_time_ns = 0;

  // Host side of a virtualized run.
  SizeCounters host_mapped_bytes{};
  PromotionStats host_promotion;
  std::uint64_t hypercalls = 0;

  // failures / attempts, or 0 with no attempts.
  double fault_failure_rate_1g() const;
  // Share of the footprint mapped by 1GB pages.
  double fraction_1g() const;
  std::uint64_t bytes_copied_total() const {
    return promotion.bytes_copied + normal.bytes_copied() + smart.bytes_copied();
  }

  nlohmann::ordered_json to_json() const;
  static RunMetrics from_json(const nlohmann::json& doc);
};

struct TimeSample {
  double time_ns = 0;
  std::uint64_t accesses = 0;
  double walk_fraction = 0;
  SizeCounters mapped_bytes{};
  std::uint64_t free_frames = 0;
  std::uint64_t promotions_1g = 0;
  std::uint64_t promotions_2m = 0;
  std::uint64_t bytes_copied = 0;
  std::uint64_t mappable_2m = 0;
  std::uint64_t mappable_1g = 0;
};

struct RunArtifacts {
  RunMetrics metrics;
  std::vector<TimeSample> timeseries;
  std::vector<PromotionEvent> promotions;
  std::vector<CompactionReport> compactions;
  std::string region_snapshot;
};

// Fragment, replay the trace with khugepaged and the zero pool running at
// every interval boundary, then collect metrics. Deterministic in the config.
RunArtifacts run_scenario(const ScenarioConfig& config);

// metrics.json, timeseries.csv, promotions.csv, compactions.csv, regions.csv
// and mappability.csv under dir, which is created if needed.
void write_artifacts(const RunArtifacts& artifacts, const std::string& dir);

struct Comparison {
  std::vector<RunMetrics> runs;

  std::string csv() const;
  std::string table() const;
};

// Throws IncompatibleConfigs unless there are at least two configs and all
// replay the same trace.
void check_compatible(const std::vector<ScenarioConfig>& configs);
// Runs every config after check_compatible.
Comparison compare(const std::vector<ScenarioConfig>& configs);
Comparison compare_metrics(std::vector<RunMetrics> runs);

}  // namespace pagesim
