#include "pagesim/types.hpp"

#include <cctype>
#include <charconv>

namespace pagesim {

std::string_view to_string(PageSize size) {
  switch (size) {
    case PageSize::k4K: return "4KB";
    case PageSize::k2M: return "2MB";
    case PageSize::k1G: return "1GB";
  }
  return "?";
}

namespace {

std::string upper(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::optional<PageSize> parse_page_size(std::string_view text) {
  const std::string t = upper(text);
  if (t == "4KB" || t == "4K" || t == "4096") return PageSize::k4K;
  if (t == "2MB" || t == "2M") return PageSize::k2M;
  if (t == "1GB" || t == "1G") return PageSize::k1G;
  return std::nullopt;
}

std::optional<std::uint64_t> parse_bytes(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (text.empty()) return std::nullopt;

  std::uint64_t value = 0;
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    auto [p, ec] = std::from_chars(text.data() + 2, text.data() + text.size(), value, 16);
    if (ec != std::errc{} || p != text.data() + text.size()) return std::nullopt;
    return value;
  }
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 10);
  if (ec != std::errc{} || p == text.data()) return std::nullopt;

  const std::string suffix = upper(std::string_view(p, static_cast<std::size_t>(text.data() + text.size() - p)));
  std::uint64_t scale = 0;
  if (suffix.empty() || suffix == "B") scale = 1;
  else if (suffix == "K" || suffix == "KB" || suffix == "KIB") scale = kKiB;
  else if (suffix == "M" || suffix == "MB" || suffix == "MIB") scale = kMiB;
  else if (suffix == "G" || suffix == "GB" || suffix == "GIB") scale = kGiB;
  else if (suffix == "T" || suffix == "TB" || suffix == "TIB") scale = 1024 * kGiB;
  else return std::nullopt;
  if (value != 0 && scale > UINT64_MAX / value) return std::nullopt;
  return value * scale;
}

std::string format_bytes(std::uint64_t bytes) {
  static constexpr struct { std::uint64_t unit; const char* name; } kUnits[] = {
      {1024 * kGiB, "TB"}, {kGiB, "GB"}, {kMiB, "MB"}, {kKiB, "KB"}};
  for (const auto& u : kUnits) {
    if (bytes >= u.unit && bytes % u.unit == 0) return std::to_string(bytes / u.unit) + u.name;
  }
  return std::to_string(bytes) + "B";
}

}  // namespace pagesim
