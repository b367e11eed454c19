#include "pagesim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>

#include "pagesim/error.hpp"

namespace pagesim {

// ---- fragmentation ----

void FragmentationSpec::validate() const {
  auto fraction = [](double v, const char* name) {
    if (!(v >= 0 && v <= 1)) fail(Errc::Config, std::string(name) + " must be within [0, 1]");
  };
  fraction(occupied_fraction, "occupied_fraction");
  fraction(unmovable_fraction, "unmovable_fraction");
  fraction(unmovable_region_fraction, "unmovable_region_fraction");
  fraction(region_skew, "region_skew");
  if (!(clustering >= 1)) fail(Errc::Config, "clustering must be at least 1");
}

namespace {

// Splits `total` frames over regions in proportion to weight × room, then
// moves any excess over a region's room onto the next regions with space.
std::vector<std::uint64_t> region_targets(std::uint64_t total, const std::vector<double>& weight,
                                          const std::vector<std::uint64_t>& room) {
  const std::size_t k = weight.size();
  std::vector<std::uint64_t> target(k, 0);
  double norm = 0;
  for (std::size_t i = 0; i < k; ++i) norm += weight[i] * static_cast<double>(room[i]);
  if (norm <= 0) return target;
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double share = static_cast<double>(total) * weight[i] * static_cast<double>(room[i]) / norm;
    target[i] = std::min<std::uint64_t>(room[i], static_cast<std::uint64_t>(std::floor(share)));
    assigned += target[i];
  }
  for (std::size_t i = 0; i < k && assigned < total; ++i) {
    const std::uint64_t add = std::min(room[i] - target[i], total - assigned);
    target[i] += add;
    assigned += add;
  }
  if (assigned < total) {
    fail(Errc::SpecInfeasible, "occupancy of " + std::to_string(total) + " frames does not fit in the touched regions");
  }
  return target;
}

}  // namespace

FragmentationReport fragment_memory(Machine& machine, const FragmentationSpec& spec, Pid cache_pid) {
  spec.validate();
  PhysicalMemory& mem = machine.memory();
  FragmentationReport report;
  const auto total = static_cast<std::uint64_t>(std::llround(spec.occupied_fraction * static_cast<double>(mem.frame_count())));
  if (total == 0) return report;
  if (spec.pristine_regions >= mem.region_count()) {
    fail(Errc::SpecInfeasible, "every region is pristine but occupancy is nonzero");
  }
  const std::size_t k = mem.region_count() - spec.pristine_regions;

  Rng rng(spec.seed);
  std::vector<double> weight(k, 1.0);
  std::vector<std::uint64_t> room(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (k > 1) weight[i] = 1.0 + spec.region_skew * (1.0 - 2.0 * static_cast<double>(i) / static_cast<double>(k - 1));
    room[i] = mem.region_stats(i).free_count;
  }
  const std::vector<std::uint64_t> target = region_targets(total, weight, room);

  // Unmovable runs are confined to a random subset of the touched regions.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = k; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::size_t eligible = static_cast<std::size_t>(std::llround(spec.unmovable_region_fraction * static_cast<double>(k)));
  if (spec.unmovable_fraction > 0) eligible = std::max<std::size_t>(eligible, 1);
  std::vector<bool> may_pin(k, false);
  std::uint64_t eligible_target = 0;
  for (std::size_t i = 0; i < eligible; ++i) {
    may_pin[order[i]] = true;
    eligible_target += target[order[i]];
  }
  const double pinned_goal = spec.unmovable_fraction * static_cast<double>(total);
  const double pin_probability =
      eligible_target == 0 ? 0.0 : std::min(1.0, pinned_goal / static_cast<double>(eligible_target));

  if (!machine.has_process(cache_pid)) {
    machine.create_process(cache_pid, false);
    machine.reserve_area(cache_pid, 0, mem.frame_count());
  }
  AddressSpace& cache = machine.process(cache_pid);
  // Cache pages are numbered densely from 0; continue after any earlier fill.
  Vpn next_vpn = cache.table.mapped_pages();
  while (cache.table.lookup(next_vpn) && next_vpn < mem.frame_count()) ++next_vpn;

  for (std::size_t r = 0; r < k; ++r) {
    const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
    const std::uint64_t cap = mem.region_capacity(r);
    std::uint64_t placed = 0;
    while (placed < target[r]) {
      const std::uint64_t len = std::min(rng.geometric(spec.clustering), target[r] - placed);
      const bool pinned = may_pin[r] && rng.bernoulli(pin_probability);
      // Land at a random offset, sliding forward to the first free frame.
      std::uint64_t off = rng.below(cap);
      while (mem.kind(base + off) != FrameKind::Free) off = off + 1 == cap ? 0 : off + 1;
      std::uint64_t got = 0;
      for (Pfn p = base + off; got < len && p < base + cap && mem.kind(p) == FrameKind::Free; ++p, ++got) {
        if (pinned) {
          mem.claim_block(p, 0, Movability::Unmovable);
          mem.set_content(p, ContentToken{(0xffffull << 48) | p});
        } else {
          if (next_vpn >= mem.frame_count()) fail(Errc::InvariantViolation, "file cache address space exhausted");
          mem.claim_block(p, 0, Movability::Movable);
          machine.map_range(cache_pid, next_vpn, PageSize::k4K, p);
          mem.set_content(p, make_content_token(cache_pid, next_vpn, 0));
          ++next_vpn;
        }
      }
      placed += got;
      if (pinned) report.unmovable_frames += got;
      ++report.runs;
    }
    report.occupied_frames += placed;
  }
  return report;
}

// ---- trace text ----

std::string format_trace_op(const TraceOp& op) {
  char buf[96];
  switch (op.kind) {
    case TraceOpKind::Reserve:
    case TraceOpKind::Release:
      std::snprintf(buf, sizeof buf, "%c %u 0x%llx 0x%llx", op.kind == TraceOpKind::Reserve ? 'R' : 'F', op.pid,
                    static_cast<unsigned long long>(op.address), static_cast<unsigned long long>(op.length));
      break;
    case TraceOpKind::Access:
      std::snprintf(buf, sizeof buf, "A %u 0x%llx %llu", op.pid, static_cast<unsigned long long>(op.address),
                    static_cast<unsigned long long>(op.length));
      break;
    case TraceOpKind::Tick:
      std::snprintf(buf, sizeof buf, "T %llu", static_cast<unsigned long long>(op.time_ns));
      break;
  }
  return buf;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\r') ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint64_t parse_number(std::string_view field, int base, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v, base);
  if (ec != std::errc{} || ptr != last || field.empty()) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  return v;
}

std::uint64_t parse_hex(std::string_view field, std::size_t line, const char* what) {
  if (field.size() < 3 || field[0] != '0' || (field[1] != 'x' && field[1] != 'X')) {
    throw ParseError(line, std::string(what) + " must be 0x-prefixed hexadecimal, got '" + std::string(field) + "'");
  }
  return parse_number(field.substr(2), 16, line, what);
}

Pid parse_pid(std::string_view field, std::size_t line) {
  const std::uint64_t v = parse_number(field, 10, line, "process id");
  if (v > 0xffffffffull) throw ParseError(line, "process id out of range");
  return static_cast<Pid>(v);
}

}  // namespace

std::optional<TraceOp> parse_trace_line(std::string_view text, std::size_t line) {
  if (auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
  const auto f = split_fields(text);
  if (f.empty()) return std::nullopt;
  auto arity = [&](std::size_t n) {
    if (f.size() != n) {
      throw ParseError(line, "'" + std::string(f[0]) + "' takes " + std::to_string(n - 1) + " fields, got " +
                                 std::to_string(f.size() - 1));
    }
  };
  TraceOp op;
  op.line = line;
  if (f[0] == "R" || f[0] == "F") {
    arity(4);
    op.kind = f[0] == "R" ? TraceOpKind::Reserve : TraceOpKind::Release;
    op.pid = parse_pid(f[1], line);
    op.address = parse_hex(f[2], line, "start");
    op.length = parse_hex(f[3], line, "length");
    if (!is_aligned(op.address, kFrameBytes)) throw ParseError(line, "start is not 4KB aligned");
    if (op.length == 0 || !is_aligned(op.length, kFrameBytes)) {
      throw ParseError(line, "length must be a nonzero multiple of 4KB");
    }
  } else if (f[0] == "A") {
    arity(4);
    op.kind = TraceOpKind::Access;
    op.pid = parse_pid(f[1], line);
    op.address = parse_hex(f[2], line, "address");
    op.length = parse_number(f[3], 10, line, "count");
    if (op.length == 0) throw ParseError(line, "access count must be at least 1");
  } else if (f[0] == "T") {
    arity(2);
    op.kind = TraceOpKind::Tick;
    op.time_ns = parse_number(f[1], 10, line, "time");
  } else {
    throw ParseError(line, "unknown op '" + std::string(f[0]) + "'");
  }
  return op;
}

TraceReader::TraceReader(const std::string& path) : file_(path), in_(&file_) {
  if (!file_) throw ParseError(0, "cannot open trace file " + path);
}

std::optional<TraceOp> TraceReader::next() {
  while (std::getline(*in_, buffer_)) {
    ++line_;
    if (auto op = parse_trace_line(buffer_, line_)) return op;
  }
  return std::nullopt;
}

// ---- generators ----

std::string_view to_string(AccessPattern pattern) {
  switch (pattern) {
    case AccessPattern::Sequential: return "sequential";
    case AccessPattern::UniformRandom: return "uniform";
    case AccessPattern::Zipf: return "zipf";
  }
  return "?";
}

std::optional<AccessPattern> parse_access_pattern(std::string_view text) {
  if (text == "sequential") return AccessPattern::Sequential;
  if (text == "uniform" || text == "random") return AccessPattern::UniformRandom;
  if (text == "zipf") return AccessPattern::Zipf;
  return std::nullopt;
}

namespace {

// log1p(x)/x and expm1(x)/x, with series near zero.
double helper1(double x) {
  return std::abs(x) > 1e-8 ? std::log1p(x) / x : 1 - x * (0.5 - x * (1.0 / 3 - 0.25 * x));
}
double helper2(double x) {
  return std::abs(x) > 1e-8 ? std::expm1(x) / x : 1 + x * 0.5 * (1 + x / 3 * (1 + 0.25 * x));
}

}  // namespace

ZipfSampler::ZipfSampler(std::uint64_t n, double s) : n_(n), s_(s) {
  if (n == 0) fail(Errc::Config, "zipf needs at least one element");
  if (!(s > 0)) fail(Errc::Config, "zipf exponent must be positive");
  h_integral_x1_ = h_integral(1.5) - 1;
  h_integral_n_ = h_integral(static_cast<double>(n) + 0.5);
  threshold_ = 2 - h_integral_inverse(h_integral(2.5) - h(2));
}

double ZipfSampler::h(double x) const { return std::exp(-s_ * std::log(x)); }

double ZipfSampler::h_integral(double x) const {
  const double log_x = std::log(x);
  return helper2((1 - s_) * log_x) * log_x;
}

double ZipfSampler::h_integral_inverse(double x) const {
  double t = x * (1 - s_);
  if (t < -1) t = -1;
  return std::exp(helper1(t) * x);
}

std::uint64_t ZipfSampler::sample(Rng& rng) const {
  while (true) {
    const double u = h_integral_n_ + rng.unit() * (h_integral_x1_ - h_integral_n_);
    const double x = h_integral_inverse(u);
    double kf = std::floor(x + 0.5);
    if (kf < 1) kf = 1;
    if (kf > static_cast<double>(n_)) kf = static_cast<double>(n_);
    const auto k = static_cast<std::uint64_t>(kf);
    if (kf - x <= threshold_ || u >= h_integral(kf + 0.5) - h(kf)) return k;
  }
}

void TraceSpec::validate() const {
  if (areas.empty()) fail(Errc::Config, "trace needs at least one area");
  double total = 0;
  for (const TraceArea& a : areas) {
    if (!is_aligned(a.start, kFrameBytes) || a.bytes == 0 || !is_aligned(a.bytes, kFrameBytes)) {
      fail(Errc::Config, "trace areas must be 4KB aligned and nonempty");
    }
    if (!(a.weight >= 0)) fail(Errc::Config, "trace area weights must be non-negative");
    total += a.weight;
  }
  if (!(total > 0) && accesses > 0) fail(Errc::Config, "trace area weights sum to zero");
  if (pattern == AccessPattern::Zipf && !(zipf_s > 0)) fail(Errc::Config, "zipf exponent must be positive");
}

TraceGenerator::TraceGenerator(TraceSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
  spec_.validate();
  double sum = 0;
  for (const TraceArea& a : spec_.areas) {
    sum += a.weight;
    cumulative_.push_back(sum);
    if (spec_.pattern == AccessPattern::Zipf) zipf_.emplace_back(a.bytes / kFrameBytes, spec_.zipf_s);
  }
  for (double& c : cumulative_) c /= sum > 0 ? sum : 1;
  seq_cursor_.assign(spec_.areas.size(), 0);
}

TraceOp TraceGenerator::draw() {
  std::size_t a = 0;
  if (spec_.areas.size() > 1) {
    const double u = rng_.unit();
    while (a + 1 < cumulative_.size() && u >= cumulative_[a]) ++a;
  }
  const TraceArea& area = spec_.areas[a];
  const std::uint64_t pages = area.bytes / kFrameBytes;
  std::uint64_t page = 0;
  switch (spec_.pattern) {
    case AccessPattern::Sequential:
      page = seq_cursor_[a];
      seq_cursor_[a] = page + 1 == pages ? 0 : page + 1;
      break;
    case AccessPattern::UniformRandom:
      page = rng_.below(pages);
      break;
    case AccessPattern::Zipf:
      page = zipf_[a].sample(rng_) - 1;
      break;
  }
  return TraceOp::access(spec_.pid, area.start + page * kFrameBytes);
}

std::optional<TraceOp> TraceGenerator::next() {
  if (reserve_index_ < spec_.areas.size()) {
    const TraceArea& a = spec_.areas[reserve_index_++];
    return TraceOp::reserve(spec_.pid, a.start, a.bytes);
  }
  if (spec_.touch_first && touch_area_ < spec_.areas.size()) {
    const TraceArea& a = spec_.areas[touch_area_];
    const TraceOp op = TraceOp::access(spec_.pid, a.start + touch_page_ * kFrameBytes);
    if (++touch_page_ == a.bytes / kFrameBytes) {
      touch_page_ = 0;
      ++touch_area_;
    }
    return op;
  }
  if (emitted_ == spec_.accesses) return std::nullopt;
  if (spec_.tick_every > 0 && since_tick_ == spec_.tick_every) {
    since_tick_ = 0;
    return TraceOp::tick(++ticks_ * spec_.tick_ns);
  }
  ++emitted_;
  ++since_tick_;
  return draw();
}

std::uint64_t write_trace(TraceGenerator& generator, std::ostream& out) {
  std::uint64_t n = 0;
  while (auto op = generator.next()) {
    out << format_trace_op(*op) << '\n';
    ++n;
  }
  return n;
}

}  // namespace pagesim
