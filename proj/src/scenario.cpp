#include "pagesim/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>

#include "pagesim/error.hpp"

namespace pagesim {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Policy policy) {
  switch (policy) {
    case Policy::Base4K: return "Base4K";
    case Policy::Thp2M: return "Thp2M";
    case Policy::Trident1GOnly: return "Trident1GOnly";
    case Policy::Trident: return "Trident";
    case Policy::TridentPv: return "TridentPv";
  }
  return "?";
}

std::optional<Policy> parse_policy(std::string_view text) {
  for (Policy p : {Policy::Base4K, Policy::Thp2M, Policy::Trident1GOnly, Policy::Trident, Policy::TridentPv}) {
    if (text == to_string(p)) return p;
  }
  return std::nullopt;
}

PolicySettings settings_for(Policy policy) {
  PolicySettings s;
  switch (policy) {
    case Policy::Base4K:
      s.faults = {false, false};
      break;
    case Policy::Thp2M:
      s.faults = {false, true};
      s.khugepaged = true;
      s.promotion.allow_1g = false;
      s.promotion.engine_2m = CompactionEngine::Normal;
      break;
    case Policy::Trident1GOnly:
      s.faults = {true, false};
      s.zero_pool = true;
      s.khugepaged = true;
      s.promotion.allow_2m = false;
      s.promotion.engine_1g = CompactionEngine::Smart;
      break;
    case Policy::Trident:
    case Policy::TridentPv:
      s.faults = {true, true};
      s.zero_pool = true;
      s.khugepaged = true;
      s.promotion.engine_1g = CompactionEngine::Smart;
      s.promotion.engine_2m = CompactionEngine::Normal;
      s.copyless = policy == Policy::TridentPv;
      break;
  }
  return s;
}

// ---- config ----

void ScenarioConfig::validate() const {
  if (memory_bytes < kRegionFrames * kFrameBytes || memory_bytes % kFrameBytes != 0) {
    fail(Errc::Config, "memory must be a multiple of 4KB and at least 1GB");
  }
  if (policy == Policy::TridentPv && !virt.enabled) fail(Errc::Config, "TridentPv requires virtualization");
  if (virt.enabled && virt.host_policy == Policy::TridentPv) fail(Errc::Config, "the host cannot run TridentPv");
  if (virt.enabled && virt.host_memory_bytes != 0 && virt.host_memory_bytes < memory_bytes) {
    fail(Errc::Config, "host memory is smaller than guest memory");
  }
  if (fragmentation) fragmentation->validate();
  if (trace.file.empty() && !trace.generate) fail(Errc::Config, "no trace source");
  if (!trace.file.empty() && !std::filesystem::exists(trace.file)) {
    fail(Errc::Config, "trace file " + trace.file + " does not exist");
  }
  if (trace.generate) trace.generate->validate();
  tlb.validate();
  cost.validate();
  virt.latency.validate();
  if (khugepaged_interval_ns == 0) fail(Errc::Config, "khugepaged interval must be positive");
  if (khugepaged_budget == 0) fail(Errc::Config, "khugepaged budget must be positive");
}

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
  fail(Errc::Config, where + ": " + what);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      config_error(where, "unknown key '" + key + "'");
    }
  }
}

std::uint64_t get_bytes(const json& v, const std::string& where) {
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) return v.get<std::uint64_t>();
  if (v.is_string()) {
    if (auto b = parse_bytes(v.get<std::string>())) return *b;
  }
  config_error(where, "expected a byte count like 4GB or 0x40000000");
}

std::uint64_t get_u64(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) config_error(where, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

double get_double(const json& v, const std::string& where) {
  if (!v.is_number()) config_error(where, "expected a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) config_error(where, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) config_error(where, "expected a string");
  return v.get<std::string>();
}

Policy get_policy(const json& v, const std::string& where) {
  auto p = parse_policy(get_string(v, where));
  if (!p) config_error(where, "unknown policy '" + v.get<std::string>() + "'");
  return *p;
}

// Calls fn(value, path) for each present key.
template <typename Fn>
void with(const json& obj, const char* key, const std::string& where, Fn fn) {
  if (auto it = obj.find(key); it != obj.end()) fn(*it, where + "." + key);
}

TlbGeometry parse_geometry(const json& v, const std::string& where, TlbGeometry g) {
  check_keys(v, {"entries", "ways"}, where);
  with(v, "entries", where, [&](const json& x, const std::string& w) { g.entries = get_u64(x, w); });
  with(v, "ways", where, [&](const json& x, const std::string& w) { g.ways = get_u64(x, w); });
  return g;
}

FragmentationSpec parse_fragmentation(const json& v, std::uint64_t seed) {
  const std::string where = "fragmentation";
  check_keys(v, {"occupied_fraction", "unmovable_fraction", "clustering", "seed", "pristine_regions",
                 "unmovable_region_fraction", "region_skew"},
             where);
  FragmentationSpec f;
  f.seed = seed;
  with(v, "occupied_fraction", where, [&](const json& x, const std::string& w) { f.occupied_fraction = get_double(x, w); });
  with(v, "unmovable_fraction", where, [&](const json& x, const std::string& w) { f.unmovable_fraction = get_double(x, w); });
  with(v, "clustering", where, [&](const json& x, const std::string& w) { f.clustering = get_double(x, w); });
  with(v, "seed", where, [&](const json& x, const std::string& w) { f.seed = get_u64(x, w); });
  with(v, "pristine_regions", where, [&](const json& x, const std::string& w) { f.pristine_regions = get_u64(x, w); });
  with(v, "unmovable_region_fraction", where,
       [&](const json& x, const std::string& w) { f.unmovable_region_fraction = get_double(x, w); });
  with(v, "region_skew", where, [&](const json& x, const std::string& w) { f.region_skew = get_double(x, w); });
  return f;
}

TraceSpec parse_generate(const json& v, std::uint64_t seed) {
  const std::string where = "trace.generate";
  check_keys(v, {"pattern", "zipf_s", "pid", "areas", "start", "footprint", "accesses", "seed", "touch_first",
                 "tick_every", "tick_ns"},
             where);
  TraceSpec t;
  t.seed = seed;
  with(v, "pattern", where, [&](const json& x, const std::string& w) {
    auto p = parse_access_pattern(get_string(x, w));
    if (!p) config_error(w, "expected sequential, uniform or zipf");
    t.pattern = *p;
  });
  with(v, "zipf_s", where, [&](const json& x, const std::string& w) { t.zipf_s = get_double(x, w); });
  with(v, "pid", where, [&](const json& x, const std::string& w) { t.pid = static_cast<Pid>(get_u64(x, w)); });
  if (v.contains("areas") && (v.contains("start") || v.contains("footprint"))) {
    config_error(where, "give either areas or start/footprint");
  }
  with(v, "start", where, [&](const json& x, const std::string& w) { t.areas[0].start = get_bytes(x, w); });
  with(v, "footprint", where, [&](const json& x, const std::string& w) { t.areas[0].bytes = get_bytes(x, w); });
  with(v, "areas", where, [&](const json& x, const std::string& w) {
    if (!x.is_array() || x.empty()) config_error(w, "expected a nonempty array");
    t.areas.clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::string wi = w + "[" + std::to_string(i) + "]";
      check_keys(x[i], {"start", "size", "weight"}, wi);
      TraceArea a;
      if (!x[i].contains("start") || !x[i].contains("size")) config_error(wi, "needs start and size");
      a.start = get_bytes(x[i]["start"], wi + ".start");
      a.bytes = get_bytes(x[i]["size"], wi + ".size");
      with(x[i], "weight", wi, [&](const json& y, const std::string& wy) { a.weight = get_double(y, wy); });
      t.areas.push_back(a);
    }
  });
  with(v, "accesses", where, [&](const json& x, const std::string& w) { t.accesses = get_u64(x, w); });
  with(v, "seed", where, [&](const json& x, const std::string& w) { t.seed = get_u64(x, w); });
  with(v, "touch_first", where, [&](const json& x, const std::string& w) { t.touch_first = get_bool(x, w); });
  with(v, "tick_every", where, [&](const json& x, const std::string& w) { t.tick_every = get_u64(x, w); });
  with(v, "tick_ns", where, [&](const json& x, const std::string& w) { t.tick_ns = get_u64(x, w); });
  return t;
}

ordered_json trace_spec_json(const TraceSpec& t) {
  ordered_json areas = ordered_json::array();
  for (const TraceArea& a : t.areas) areas.push_back({{"start", a.start}, {"size", a.bytes}, {"weight", a.weight}});
  return {{"pattern", to_string(t.pattern)}, {"zipf_s", t.zipf_s},       {"pid", t.pid},
          {"areas", areas},                  {"accesses", t.accesses},   {"seed", t.seed},
          {"touch_first", t.touch_first},    {"tick_every", t.tick_every}, {"tick_ns", t.tick_ns}};
}

}  // namespace

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    fail(Errc::Config, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) fail(Errc::Config, "override path '" + path + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) fail(Errc::Config, "override path '" + path + "' crosses a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json load_config_document(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) fail(Errc::Config, "cannot open config " + path);
  json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded() || !doc.is_object()) fail(Errc::Config, path + " is not a JSON object");
  for (const std::string& o : overrides) apply_override(doc, o);
  return doc;
}

ScenarioConfig parse_config(const json& doc, const std::string& base_dir) {
  const std::string where = "config";
  check_keys(doc, {"name", "memory", "policy", "seed", "fragmentation", "trace", "tlb", "cost", "khugepaged",
                   "zero_pool", "virtualization", "cache_pid"},
             where);
  ScenarioConfig c;
  with(doc, "name", where, [&](const json& x, const std::string& w) { c.name = get_string(x, w); });
  with(doc, "memory", where, [&](const json& x, const std::string& w) { c.memory_bytes = get_bytes(x, w); });
  with(doc, "policy", where, [&](const json& x, const std::string& w) { c.policy = get_policy(x, w); });
  with(doc, "seed", where, [&](const json& x, const std::string& w) { c.seed = get_u64(x, w); });
  with(doc, "cache_pid", where, [&](const json& x, const std::string& w) { c.cache_pid = static_cast<Pid>(get_u64(x, w)); });
  if (c.name.empty()) c.name = std::string(to_string(c.policy));

  with(doc, "fragmentation", where, [&](const json& x, const std::string&) {
    if (!x.is_null()) c.fragmentation = parse_fragmentation(x, c.seed);
  });

  if (!doc.contains("trace")) config_error(where, "missing trace");
  const json& trace = doc["trace"];
  check_keys(trace, {"file", "generate"}, "trace");
  if (trace.contains("file") == trace.contains("generate")) config_error("trace", "give exactly one of file or generate");
  if (trace.contains("file")) {
    std::filesystem::path p = get_string(trace["file"], "trace.file");
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    c.trace.file = p.lexically_normal().string();
    c.trace_identity = {{"file", c.trace.file}};
  } else {
    c.trace.generate = parse_generate(trace["generate"], c.seed);
    c.trace_identity = {{"generate", trace_spec_json(*c.trace.generate)}};
  }

  with(doc, "tlb", where, [&](const json& x, const std::string& w) {
    check_keys(x, {"l1_4k", "l1_2m", "l1_1g", "l2_small", "l2_1g"}, w);
    with(x, "l1_4k", w, [&](const json& y, const std::string& wy) { c.tlb.l1_4k = parse_geometry(y, wy, c.tlb.l1_4k); });
    with(x, "l1_2m", w, [&](const json& y, const std::string& wy) { c.tlb.l1_2m = parse_geometry(y, wy, c.tlb.l1_2m); });
    with(x, "l1_1g", w, [&](const json& y, const std::string& wy) { c.tlb.l1_1g = parse_geometry(y, wy, c.tlb.l1_1g); });
    with(x, "l2_small", w,
         [&](const json& y, const std::string& wy) { c.tlb.l2_small = parse_geometry(y, wy, c.tlb.l2_small); });
    with(x, "l2_1g", w, [&](const json& y, const std::string& wy) { c.tlb.l2_1g = parse_geometry(y, wy, c.tlb.l2_1g); });
  });
  with(doc, "cost", where, [&](const json& x, const std::string& w) {
    check_keys(x, {"memory_access_ns", "l2_hit_ns", "base_access_ns"}, w);
    with(x, "memory_access_ns", w, [&](const json& y, const std::string& wy) { c.cost.memory_access_ns = get_double(y, wy); });
    with(x, "l2_hit_ns", w, [&](const json& y, const std::string& wy) { c.cost.l2_hit_ns = get_double(y, wy); });
    with(x, "base_access_ns", w, [&](const json& y, const std::string& wy) { c.cost.base_access_ns = get_double(y, wy); });
  });
  with(doc, "khugepaged", where, [&](const json& x, const std::string& w) {
    check_keys(x, {"enabled", "interval_ns", "budget"}, w);
    with(x, "enabled", w, [&](const json& y, const std::string& wy) { c.khugepaged_enabled = get_bool(y, wy); });
    with(x, "interval_ns", w, [&](const json& y, const std::string& wy) { c.khugepaged_interval_ns = get_u64(y, wy); });
    with(x, "budget", w, [&](const json& y, const std::string& wy) { c.khugepaged_budget = get_u64(y, wy); });
  });
  with(doc, "zero_pool", where, [&](const json& x, const std::string& w) {
    check_keys(x, {"capacity", "fill_rate"}, w);
    with(x, "capacity", w, [&](const json& y, const std::string& wy) { c.zero_pool.capacity = get_u64(y, wy); });
    with(x, "fill_rate", w, [&](const json& y, const std::string& wy) { c.zero_pool.fill_rate = get_u64(y, wy); });
  });
  with(doc, "virtualization", where, [&](const json& x, const std::string& w) {
    check_keys(x, {"enabled", "host_memory", "host_policy", "pv"}, w);
    with(x, "enabled", w, [&](const json& y, const std::string& wy) { c.virt.enabled = get_bool(y, wy); });
    with(x, "host_memory", w, [&](const json& y, const std::string& wy) { c.virt.host_memory_bytes = get_bytes(y, wy); });
    with(x, "host_policy", w, [&](const json& y, const std::string& wy) { c.virt.host_policy = get_policy(y, wy); });
    with(x, "pv", w, [&](const json& y, const std::string& wy) {
      check_keys(y, {"hypercall_ns", "per_entry_ns", "copy_2m_ns"}, wy);
      PvLatency& l = c.virt.latency;
      with(y, "hypercall_ns", wy, [&](const json& z, const std::string& wz) { l.hypercall_ns = get_double(z, wz); });
      with(y, "per_entry_ns", wy, [&](const json& z, const std::string& wz) { l.per_entry_ns = get_double(z, wz); });
      with(y, "copy_2m_ns", wy, [&](const json& z, const std::string& wz) { l.copy_2m_ns = get_double(z, wz); });
    });
  });
  c.validate();
  return c;
}

// ---- metrics ----

double RunMetrics::fault_failure_rate_1g() const {
  return fault_attempts_1g == 0 ? 0.0 : static_cast<double>(fault_failures_1g) / static_cast<double>(fault_attempts_1g);
}

double RunMetrics::fraction_1g() const {
  return footprint_bytes == 0 ? 0.0 : static_cast<double>(mapped_bytes[2]) / static_cast<double>(footprint_bytes);
}

namespace {

ordered_json sizes_json(const SizeCounters& c) {
  ordered_json j;
  for (PageSize s : kAllPageSizes) j[std::string(to_string(s))] = c[size_index(s)];
  return j;
}

SizeCounters sizes_from(const json& j) {
  SizeCounters c{};
  for (PageSize s : kAllPageSizes) c[size_index(s)] = j.at(std::string(to_string(s))).get<std::uint64_t>();
  return c;
}

ordered_json promotion_json(const PromotionStats& p) {
  return {{"promotions_1g", p.promotions_1g},
          {"promotions_2m", p.promotions_2m},
          {"copyless_1g", p.copyless_1g},
          {"bytes_copied", p.bytes_copied},
          {"latency_ns", p.latency_ns},
          {"hypercalls", p.hypercalls},
          {"windows_examined", p.windows_examined},
          {"attempts_1g", p.attempts_1g},
          {"failures_1g", p.failures_1g}};
}

PromotionStats promotion_from(const json& j) {
  PromotionStats p;
  p.promotions_1g = j.at("promotions_1g").get<std::uint64_t>();
  p.promotions_2m = j.at("promotions_2m").get<std::uint64_t>();
  p.copyless_1g = j.at("copyless_1g").get<std::uint64_t>();
  p.bytes_copied = j.at("bytes_copied").get<std::uint64_t>();
  p.latency_ns = j.at("latency_ns").get<double>();
  p.hypercalls = j.at("hypercalls").get<std::uint64_t>();
  p.windows_examined = j.at("windows_examined").get<std::uint64_t>();
  p.attempts_1g = j.at("attempts_1g").get<std::uint64_t>();
  p.failures_1g = j.at("failures_1g").get<std::uint64_t>();
  return p;
}

ordered_json compaction_json(const CompactionTotals& c) {
  return {{"runs", c.runs},
          {"successes", c.successes},
          {"frames_copied", c.frames_copied},
          {"wasted_frames", c.wasted_frames},
          {"bytes_copied", c.bytes_copied()}};
}

CompactionTotals compaction_from(const json& j) {
  CompactionTotals c;
  c.runs = j.at("runs").get<std::uint64_t>();
  c.successes = j.at("successes").get<std::uint64_t>();
  c.frames_copied = j.at("frames_copied").get<std::uint64_t>();
  c.wasted_frames = j.at("wasted_frames").get<std::uint64_t>();
  return c;
}

}  // namespace

ordered_json RunMetrics::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["policy"] = to_string(policy);
  j["virtualized"] = virtualized;
  j["seed"] = seed;
  j["memory_bytes"] = memory_bytes;
  j["trace_ops"] = trace_ops;
  j["accesses"] = access.accesses;
  j["walk_fraction"] = walk_fraction;
  j["tlb"] = {{"l1_hits", sizes_json(access.l1_hits)},
              {"l2_hits", sizes_json(access.l2_hits)},
              {"misses", sizes_json(access.misses)},
              {"walk_accesses", access.walk_accesses},
              {"walk_time_ns", access.walk_time_ns},
              {"total_time_ns", access.total_time_ns}};
  j["faults"] = {{"count", sizes_json(faults)},
                 {"attempts_1g", fault_attempts_1g},
                 {"failures_1g", fault_failures_1g},
                 {"failure_rate_1g", fault_failure_rate_1g()},
                 {"latency_ns", fault_latency_ns}};
  j["mapped_bytes"] = sizes_json(mapped_bytes);
  j["footprint_bytes"] = footprint_bytes;
  j["fraction_1g"] = fraction_1g();
  j["promotion"] = promotion_json(promotion);
  j["compaction"] = {{"normal", compaction_json(normal)}, {"smart", compaction_json(smart)}};
  j["bytes_copied_total"] = bytes_copied_total();
  j["fragmentation"] = {{"occupied_frames", fragmentation.occupied_frames},
                        {"unmovable_frames", fragmentation.unmovable_frames},
                        {"runs", fragmentation.runs}};
  j["free_frames"] = free_frames;
  j["end_time_ns"] = end_time_ns;
  if (virtualized) {
    j["host"] = {{"mapped_bytes", sizes_json(host_mapped_bytes)},
                 {"promotion", promotion_json(host_promotion)},
                 {"hypercalls", hypercalls}};
  }
  return j;
}

RunMetrics RunMetrics::from_json(const json& j) {
  try {
    RunMetrics m;
    m.name = j.at("name").get<std::string>();
    auto p = parse_policy(j.at("policy").get<std::string>());
    if (!p) fail(Errc::Config, "unknown policy in metrics");
    m.policy = *p;
    m.virtualized = j.at("virtualized").get<bool>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.memory_bytes = j.at("memory_bytes").get<std::uint64_t>();
    m.trace_ops = j.at("trace_ops").get<std::uint64_t>();
    m.access.accesses = j.at("accesses").get<std::uint64_t>();
    m.walk_fraction = j.at("walk_fraction").get<double>();
    const json& t = j.at("tlb");
    m.access.l1_hits = sizes_from(t.at("l1_hits"));
    m.access.l2_hits = sizes_from(t.at("l2_hits"));
    m.access.misses = sizes_from(t.at("misses"));
    m.access.walk_accesses = t.at("walk_accesses").get<std::uint64_t>();
    m.access.walk_time_ns = t.at("walk_time_ns").get<double>();
    m.access.total_time_ns = t.at("total_time_ns").get<double>();
    const json& f = j.at("faults");
    m.faults = sizes_from(f.at("count"));
    m.fault_attempts_1g = f.at("attempts_1g").get<std::uint64_t>();
    m.fault_failures_1g = f.at("failures_1g").get<std::uint64_t>();
    m.fault_latency_ns = f.at("latency_ns").get<double>();
    m.mapped_bytes = sizes_from(j.at("mapped_bytes"));
    m.footprint_bytes = j.at("footprint_bytes").get<std::uint64_t>();
    m.promotion = promotion_from(j.at("promotion"));
    m.normal = compaction_from(j.at("compaction").at("normal"));
    m.smart = compaction_from(j.at("compaction").at("smart"));
    const json& fr = j.at("fragmentation");
    m.fragmentation.occupied_frames = fr.at("occupied_frames").get<std::uint64_t>();
    m.fragmentation.unmovable_frames = fr.at("unmovable_frames").get<std::uint64_t>();
    m.fragmentation.runs = fr.at("runs").get<std::uint64_t>();
    m.free_frames = j.at("free_frames").get<std::uint64_t>();
    m.end_time_ns = j.at("end_time_ns").get<double>();
    if (m.virtualized) {
      const json& h = j.at("host");
      m.host_mapped_bytes = sizes_from(h.at("mapped_bytes"));
      m.host_promotion = promotion_from(h.at("promotion"));
      m.hypercalls = h.at("hypercalls").get<std::uint64_t>();
    }
    return m;
  } catch (const json::exception& e) {
    fail(Errc::Config, std::string("malformed metrics document: ") + e.what());
  }
}

// ---- run ----

namespace {

// TLB entries carry the process id above the 36-bit virtual page number.
Vpn tagged(Pid pid, Vpn vpn) { return (static_cast<Vpn>(pid) << 36) | vpn; }

class Run {
 public:
  explicit Run(const ScenarioConfig& config) : cfg_(config), settings_(settings_for(config.policy)), tlb_(config.tlb) {
    settings_.khugepaged = settings_.khugepaged && cfg_.khugepaged_enabled;
    const std::uint64_t frames = cfg_.memory_bytes / kFrameBytes;
    ZeroPoolConfig pool = cfg_.zero_pool;
    pool.enabled = settings_.zero_pool;
    if (cfg_.virt.enabled) {
      const PolicySettings host = settings_for(cfg_.virt.host_policy);
      NestedConfig nc;
      nc.guest_frames = frames;
      nc.host_frames = cfg_.virt.host_memory_bytes ? cfg_.virt.host_memory_bytes / kFrameBytes : frames + 2 * kRegionFrames;
      nc.vm_pid = 1;
      nc.host_sizes = host.faults;
      nc.host_pool = cfg_.zero_pool;
      nc.host_pool.enabled = host.zero_pool;
      nc.latency = cfg_.virt.latency;
      nested_ = std::make_unique<NestedMap>(nc);
      machine_ = &nested_->guest();
      if (host.khugepaged) {
        host_compactor_.emplace(nested_->host());
        PromotionConfig hp = host.promotion;
        hp.budget = cfg_.khugepaged_budget;
        host_khugepaged_.emplace(nested_->host(), *host_compactor_, hp);
      }
      host_pool_ = host.zero_pool;
      // Any remap below a guest translation can change what a cached entry covers.
      nested_->host().set_listener([this](Pid, const Translation&) { tlb_.flush(); });
      machine_->set_listener([this](Pid, const Translation&) { tlb_.flush(); });
    } else {
      native_ = std::make_unique<Machine>(frames);
      machine_ = native_.get();
      machine_->set_listener(
          [this](Pid pid, const Translation& old) { tlb_.invalidate(tagged(pid, old.vpn), old.size); });
    }
    faults_.emplace(*machine_, settings_.faults, FaultLatency{}, pool);
    compactor_.emplace(*machine_);
    PromotionConfig pc = settings_.promotion;
    pc.budget = cfg_.khugepaged_budget;
    khugepaged_.emplace(*machine_, *compactor_, pc);
    if (settings_.copyless) {
      pv_.emplace(*nested_);
      khugepaged_->set_copyless(&*pv_);
    }
  }

  RunArtifacts execute() {
    if (cfg_.fragmentation) out_.metrics.fragmentation = fragment_memory(*machine_, *cfg_.fragmentation, cfg_.cache_pid);
    std::function<std::optional<TraceOp>()> next;
    std::unique_ptr<TraceReader> reader;
    std::unique_ptr<TraceGenerator> generator;
    if (!cfg_.trace.file.empty()) {
      reader = std::make_unique<TraceReader>(cfg_.trace.file);
      next = [&] { return reader->next(); };
    } else {
      generator = std::make_unique<TraceGenerator>(*cfg_.trace.generate);
      next = [&] { return generator->next(); };
    }
    next_period_ = static_cast<double>(cfg_.khugepaged_interval_ns);
    while (auto op = next()) {
      ++out_.metrics.trace_ops;
      apply(*op);
    }
    sample(now_);
    finish();
    return std::move(out_);
  }

 private:
  void apply(const TraceOp& op) {
    if (op.kind != TraceOpKind::Tick && op.pid == cfg_.cache_pid && cfg_.fragmentation) {
      throw ParseError(op.line, "trace uses the file-cache process id " + std::to_string(op.pid));
    }
    switch (op.kind) {
      case TraceOpKind::Reserve:
        if (!machine_->has_process(op.pid)) {
          machine_->create_process(op.pid, true);
          apps_.push_back(op.pid);
        }
        machine_->reserve_area(op.pid, op.address / kFrameBytes, op.length / kFrameBytes);
        break;
      case TraceOpKind::Release:
        machine_->release_area(op.pid, op.address / kFrameBytes, op.length / kFrameBytes);
        break;
      case TraceOpKind::Access:
        access(op.pid, op.address / kFrameBytes, op.length);
        break;
      case TraceOpKind::Tick:
        if (static_cast<double>(op.time_ns) < now_) throw ParseError(op.line, "time moves backwards");
        now_ = static_cast<double>(op.time_ns);
        while (next_period_ <= now_) {
          period(next_period_);
          next_period_ += static_cast<double>(cfg_.khugepaged_interval_ns);
        }
        break;
    }
  }

  void access(Pid pid, Vpn vpn, std::uint64_t count) {
    if (!machine_->has_process(pid)) fail(Errc::NotReserved, "access by unknown process " + std::to_string(pid));
    if (!machine_->lookup(pid, vpn)) faults_->handle_fault(pid, vpn);
    PageSize entry;
    int walk;
    if (nested_) {
      const NestedTranslation t = nested_->translate_nested(pid, vpn);
      entry = t.entry_size();
      walk = t.walk_accesses;
    } else {
      entry = machine_->lookup(pid, vpn)->size;
      walk = native_walk_accesses(entry);
    }
    const TlbOutcome outcome = tlb_.access(tagged(pid, vpn), entry);
    AccessStats& s = out_.metrics.access;
    s.record(outcome, entry, walk, cfg_.cost);
    // Repeats of the same page hit the entry just installed.
    if (count > 1) s.record(TlbOutcome::L1Hit, entry, walk, cfg_.cost, count - 1);
  }

  void period(double t) {
    if (settings_.khugepaged) {
      auto events = khugepaged_->step(t);
      out_.promotions.insert(out_.promotions.end(), events.begin(), events.end());
    }
    if (settings_.zero_pool) faults_->zero_pool_tick();
    if (host_khugepaged_) host_khugepaged_->step(t);
    if (nested_ && host_pool_) nested_->host_faults().zero_pool_tick();
    sample(t);
  }

  SizeCounters app_mapped() const {
    SizeCounters c{};
    for (Pid pid : apps_) {
      for (PageSize s : kAllPageSizes) c[size_index(s)] += machine_->mapped_bytes(pid, s);
    }
    return c;
  }

  void sample(double t) {
    TimeSample s;
    s.time_ns = t;
    s.accesses = out_.metrics.access.accesses;
    s.walk_fraction = walk_fraction(out_.metrics.access);
    s.mapped_bytes = app_mapped();
    s.free_frames = machine_->memory().free_frames();
    s.promotions_1g = khugepaged_->stats().promotions_1g;
    s.promotions_2m = khugepaged_->stats().promotions_2m;
    s.bytes_copied = khugepaged_->stats().bytes_copied;
    for (Pid pid : apps_) {
      s.mappable_2m += machine_->mappable_bytes(pid, PageSize::k2M);
      s.mappable_1g += machine_->mappable_bytes(pid, PageSize::k1G);
    }
    if (!out_.timeseries.empty() && out_.timeseries.back().time_ns == t) {
      out_.timeseries.back() = s;
    } else {
      out_.timeseries.push_back(s);
    }
  }

  void finish() {
    RunMetrics& m = out_.metrics;
    m.name = cfg_.name;
    m.policy = cfg_.policy;
    m.virtualized = cfg_.virt.enabled;
    m.seed = cfg_.seed;
    m.memory_bytes = cfg_.memory_bytes;
    m.walk_fraction = walk_fraction(m.access);
    const FaultStats& f = faults_->stats();
    m.faults = f.faults;
    m.fault_attempts_1g = f.attempts_1g;
    m.fault_failures_1g = f.failures_1g;
    m.fault_latency_ns = f.latency_ns;
    m.mapped_bytes = app_mapped();
    m.footprint_bytes = m.mapped_bytes[0] + m.mapped_bytes[1] + m.mapped_bytes[2];
    m.promotion = khugepaged_->stats();
    out_.compactions = khugepaged_->compactions();
    for (const CompactionReport& r : out_.compactions) {
      CompactionTotals& c = r.engine == CompactionEngine::Smart ? m.smart : m.normal;
      ++c.runs;
      c.successes += r.success;
      c.frames_copied += r.frames_copied;
      c.wasted_frames += r.wasted_frames;
    }
    m.free_frames = machine_->memory().free_frames();
    m.end_time_ns = now_;
    if (nested_) {
      for (PageSize s : kAllPageSizes) m.host_mapped_bytes[size_index(s)] = nested_->host().mapped_bytes(s);
      if (host_khugepaged_) m.host_promotion = host_khugepaged_->stats();
      m.hypercalls = nested_->hypercalls();
    }
    out_.region_snapshot = machine_->memory().snapshot_csv();
  }

  const ScenarioConfig& cfg_;
  PolicySettings settings_;
  Tlb tlb_;
  std::unique_ptr<Machine> native_;
  std::unique_ptr<NestedMap> nested_;
  Machine* machine_ = nullptr;
  std::optional<FaultHandler> faults_;
  std::optional<Compactor> compactor_;
  std::optional<Khugepaged> khugepaged_;
  std::optional<PvPromoter> pv_;
  std::optional<Compactor> host_compactor_;
  std::optional<Khugepaged> host_khugepaged_;
  bool host_pool_ = false;
  std::vector<Pid> apps_;
  double now_ = 0;
  double next_period_ = 0;
  RunArtifacts out_;
};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(Errc::InvalidArgument, "cannot write " + path.string());
  out << text;
}

}  // namespace

RunArtifacts run_scenario(const ScenarioConfig& config) {
  config.validate();
  Run run(config);
  return run.execute();
}

void write_artifacts(const RunArtifacts& a, const std::string& dir) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  write_file(root / "metrics.json", a.metrics.to_json().dump(2) + "\n");

  std::ostringstream ts;
  ts << "time_ns,accesses,walk_fraction,mapped_4KB,mapped_2MB,mapped_1GB,free_frames,promotions_1g,promotions_2m,"
        "bytes_copied\n";
  std::ostringstream mp;
  mp << "timestamp,bytes_2MB_mappable,bytes_1GB_mappable\n";
  for (const TimeSample& s : a.timeseries) {
    ts << fixed(s.time_ns, 0) << ',' << s.accesses << ',' << fixed(s.walk_fraction, 6) << ',' << s.mapped_bytes[0]
       << ',' << s.mapped_bytes[1] << ',' << s.mapped_bytes[2] << ',' << s.free_frames << ',' << s.promotions_1g << ','
       << s.promotions_2m << ',' << s.bytes_copied << '\n';
    mp << fixed(s.time_ns, 0) << ',' << s.mappable_2m << ',' << s.mappable_1g << '\n';
  }
  write_file(root / "timeseries.csv", ts.str());
  write_file(root / "mappability.csv", mp.str());

  std::string promotions = promotion_csv_header() + "\n";
  for (const PromotionEvent& e : a.promotions) promotions += promotion_csv_row(e) + "\n";
  write_file(root / "promotions.csv", promotions);

  std::string compactions = compaction_csv_header() + "\n";
  for (const CompactionReport& r : a.compactions) compactions += compaction_csv_row(r) + "\n";
  write_file(root / "compactions.csv", compactions);

  write_file(root / "regions.csv", a.region_snapshot);
}

// ---- comparison ----

namespace {

std::vector<std::string> comparison_header() {
  return {"name",
          "policy",
          "walk_fraction",
          "mapped_4KB",
          "mapped_2MB",
          "mapped_1GB",
          "fraction_1GB",
          "fault_1g_attempts",
          "fault_1g_failures",
          "fault_1g_failure_pct",
          "promotions_1g",
          "promotions_2m",
          "promotion_bytes_copied",
          "normal_compaction_bytes_copied",
          "smart_compaction_bytes_copied",
          "wasted_bytes",
          "total_bytes_copied"};
}

std::vector<std::string> comparison_row(const RunMetrics& m) {
  return {m.name,
          std::string(to_string(m.policy)),
          fixed(m.walk_fraction, 6),
          std::to_string(m.mapped_bytes[0]),
          std::to_string(m.mapped_bytes[1]),
          std::to_string(m.mapped_bytes[2]),
          fixed(m.fraction_1g(), 4),
          std::to_string(m.fault_attempts_1g),
          std::to_string(m.fault_failures_1g),
          fixed(100.0 * m.fault_failure_rate_1g(), 2),
          std::to_string(m.promotion.promotions_1g),
          std::to_string(m.promotion.promotions_2m),
          std::to_string(m.promotion.bytes_copied),
          std::to_string(m.normal.bytes_copied()),
          std::to_string(m.smart.bytes_copied()),
          std::to_string((m.normal.wasted_frames + m.smart.wasted_frames) * kFrameBytes),
          std::to_string(m.bytes_copied_total())};
}

}  // namespace

std::string Comparison::csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  };
  line(comparison_header());
  for (const RunMetrics& m : runs) line(comparison_row(m));
  return out;
}

std::string Comparison::table() const {
  std::vector<std::vector<std::string>> rows{comparison_header()};
  for (const RunMetrics& m : runs) rows.push_back(comparison_row(m));
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      const std::string& cell = rows[k][i];
      const std::string pad(width[i] - cell.size(), ' ');
      // Text columns left-aligned, numbers right-aligned.
      out += i < 2 ? cell + pad : pad + cell;
      if (i + 1 < rows[k].size()) out += "  ";
    }
    out += "\n";
  }
  return out;
}

Comparison compare_metrics(std::vector<RunMetrics> runs) {
  if (runs.size() < 2) fail(Errc::IncompatibleConfigs, "comparison needs at least two runs");
  return Comparison{std::move(runs)};
}

void check_compatible(const std::vector<ScenarioConfig>& configs) {
  if (configs.size() < 2) fail(Errc::IncompatibleConfigs, "comparison needs at least two configs");
  for (const ScenarioConfig& c : configs) {
    if (c.trace_identity != configs[0].trace_identity) {
      fail(Errc::IncompatibleConfigs, "'" + c.name + "' replays a different trace than '" + configs[0].name + "'");
    }
  }
}

Comparison compare(const std::vector<ScenarioConfig>& configs) {
  check_compatible(configs);
  std::vector<RunMetrics> runs;
  for (const ScenarioConfig& c : configs) runs.push_back(run_scenario(c).metrics);
  return compare_metrics(std::move(runs));
}

}  // namespace pagesim
