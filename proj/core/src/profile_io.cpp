#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "compactnet/errors.hpp"
#include "compactnet/latsim.hpp"

namespace compactnet {

namespace {

constexpr std::string_view kMagic = "# compactnet-profile v1";
constexpr std::string_view kHeader = "slot,in_channels,out_channels,latency_us";

std::string shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(sep, start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string format_profile(const PlatformProfile& profile) {
  if (profile.platform_name.find_first_of(",\n") != std::string::npos) {
    throw ConfigError("platform name may not contain ',' or newlines");
  }
  std::ostringstream out;
  out << kMagic << ", platform=" << profile.platform_name
      << ", unit=us, fixed_tail=" << shortest(profile.fixed_latency_us) << "\n";
  out << kHeader << "\n";
  for (const auto& [slot, table] : profile.tables) {
    for (size_t i = 0; i < table.in_grid.size(); ++i) {
      for (size_t j = 0; j < table.out_grid.size(); ++j) {
        out << slot << "," << table.in_grid[i] << "," << table.out_grid[j]
            << "," << shortest(table.at(i, j)) << "\n";
      }
    }
  }
  return out.str();
}

PlatformProfile parse_profile(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  if (!std::getline(in, line)) throw ParseError("empty profile", 1);
  ++line_no;
  auto fields = split(trim(line), ',');
  if (fields.empty() || trim(fields[0]) != kMagic) {
    throw ParseError("missing '# compactnet-profile v1' header", line_no);
  }
  PlatformProfile profile;
  bool have_tail = false;
  for (size_t i = 1; i < fields.size(); ++i) {
    auto kv = trim(fields[i]);
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("malformed header field '" + std::string(kv) + "'",
                       line_no);
    }
    auto key = kv.substr(0, eq);
    auto value = kv.substr(eq + 1);
    if (key == "platform") {
      profile.platform_name = std::string(value);
    } else if (key == "unit") {
      if (value != "us") {
        throw ParseError("unsupported unit '" + std::string(value) + "'",
                         line_no);
      }
    } else if (key == "fixed_tail") {
      if (!parse_number(value, profile.fixed_latency_us)) {
        throw ParseError("non-numeric fixed_tail", line_no);
      }
      have_tail = true;
    } else {
      throw ParseError("unknown header field '" + std::string(key) + "'",
                       line_no);
    }
  }
  if (!have_tail) throw ParseError("header lacks fixed_tail", line_no);

  if (!std::getline(in, line) || trim(line) != kHeader) {
    throw ParseError("expected column header '" + std::string(kHeader) + "'",
                     line_no + 1);
  }
  ++line_no;

  using Key = std::tuple<int, int, int>;
  std::map<Key, double> samples;
  while (std::getline(in, line)) {
    ++line_no;
    auto row = trim(line);
    if (row.empty()) continue;
    auto cols = split(row, ',');
    if (cols.size() != 4) {
      throw ParseError("expected 4 columns, found " +
                           std::to_string(cols.size()),
                       line_no);
    }
    int slot = 0, cin = 0, cout = 0;
    double latency = 0.0;
    if (!parse_number(cols[0], slot) || !parse_number(cols[1], cin) ||
        !parse_number(cols[2], cout)) {
      throw ParseError("non-integer slot or channel count", line_no);
    }
    if (!parse_number(cols[3], latency)) {
      throw ParseError("non-numeric latency '" + std::string(cols[3]) + "'",
                       line_no);
    }
    if (!std::isfinite(latency) || latency < 0.0) {
      throw ParseError("latency must be finite and non-negative", line_no);
    }
    if (cin < 1 || cout < 1) {
      throw ParseError("channel counts must be >= 1", line_no);
    }
    if (!samples.emplace(Key{slot, cin, cout}, latency).second) {
      throw ParseError("duplicate key (" + std::to_string(slot) + "," +
                           std::to_string(cin) + "," + std::to_string(cout) +
                           ")",
                       line_no);
    }
  }

  // Rebuild each slot's grid; every (in, out) cell must be present.
  std::map<int, std::pair<std::set<int>, std::set<int>>> axes;
  for (const auto& [key, _] : samples) {
    auto& [ins, outs] = axes[std::get<0>(key)];
    ins.insert(std::get<1>(key));
    outs.insert(std::get<2>(key));
  }
  for (const auto& [slot, axis] : axes) {
    LatencyTable table;
    table.slot_id = slot;
    table.in_grid.assign(axis.first.begin(), axis.first.end());
    table.out_grid.assign(axis.second.begin(), axis.second.end());
    for (int cin : table.in_grid) {
      for (int cout : table.out_grid) {
        auto it = samples.find(Key{slot, cin, cout});
        if (it == samples.end()) {
          throw ParseError("slot " + std::to_string(slot) +
                           " grid incomplete: missing (" + std::to_string(cin) +
                           "," + std::to_string(cout) + ")");
        }
        table.latencies.push_back(it->second);
      }
    }
    profile.tables.emplace(slot, std::move(table));
  }
  return profile;
}

void write_profile(const PlatformProfile& profile,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << format_profile(profile);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

PlatformProfile read_profile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open profile '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_profile(buffer.str());
}

}  // namespace compactnet
