#include "fedsim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fedsim::harness {

namespace {

std::optional<double> window_mean(std::span<const fed::RoundRecord> records, std::size_t from) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.round >= from) {
      s += r.backdoor_acc;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw CsvError(where + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw CsvError(where + ": expected an integer, got '" + s + "'");
  }
  return v;
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_fixed6(*v) : "NA"; }

std::optional<double> parse_optional(const std::string& s, const std::string& where) {
  if (s == "NA" || s.empty()) return std::nullopt;
  return parse_double(s, where);
}

}  // namespace

SeedMetrics compute_metrics(std::span<const fed::RoundRecord> records,
                            const std::set<std::size_t>& attack_rounds) {
  if (records.empty()) throw std::invalid_argument("compute_metrics: no records");
  SeedMetrics m;
  if (!attack_rounds.empty()) {
    m.a_first = window_mean(records, *attack_rounds.begin());
    m.a_last = window_mean(records, *attack_rounds.rbegin());
  }
  for (const auto& r : records) m.peak_backdoor = std::max(m.peak_backdoor, r.backdoor_acc);
  m.final_backdoor = records.back().backdoor_acc;
  m.final_main = records.back().main_acc;
  return m;
}

MetricsSummary summarize(std::vector<SeedMetrics> per_seed) {
  MetricsSummary s;
  s.per_seed = std::move(per_seed);
  if (s.per_seed.empty()) return s;
  s.mean.config_tag = s.per_seed.front().config_tag;
  s.mean.param_value = s.per_seed.front().param_value;
  const double n = static_cast<double>(s.per_seed.size());
  double first = 0.0, last = 0.0;
  std::size_t nf = 0, nl = 0;
  for (const auto& m : s.per_seed) {
    if (m.a_first) first += *m.a_first, ++nf;
    if (m.a_last) last += *m.a_last, ++nl;
    s.mean.peak_backdoor += m.peak_backdoor;
    s.mean.final_backdoor += m.final_backdoor;
    s.mean.final_main += m.final_main;
  }
  if (nf) s.mean.a_first = first / static_cast<double>(nf);
  if (nl) s.mean.a_last = last / static_cast<double>(nl);
  s.mean.peak_backdoor /= n;
  s.mean.final_backdoor /= n;
  s.mean.final_main /= n;
  return s;
}

std::set<std::size_t> attack_rounds_of(std::span<const fed::RoundRecord> records) {
  std::set<std::size_t> out;
  for (const auto& r : records) {
    if (r.attacker_present) out.insert(r.round);
  }
  return out;
}

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

double quantize6(double v) {
  const std::string s = format_fixed6(v);
  return parse_double(s, "quantize6");
}

void write_round_csv(const std::filesystem::path& path, std::span<const fed::RoundRecord> records,
                     std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  out << kRoundCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.round << ',' << format_fixed6(r.main_acc) << ',' << format_fixed6(r.backdoor_acc) << ','
        << (r.attacker_present ? 1 : 0) << ',' << format_fixed6(r.mean_update_norm()) << ',' << seed
        << '\n';
  }
}

RoundCsv read_round_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CsvError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRoundCsvHeader) throw CsvError(path.string() + ": unexpected header '" + line + "'");
  RoundCsv out;
  bool have_seed = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw CsvError(where + ": expected 6 columns");
    fed::RoundRecord r;
    r.round = parse_u64(cells[0], where);
    r.main_acc = parse_double(cells[1], where);
    r.backdoor_acc = parse_double(cells[2], where);
    if (cells[3] != "0" && cells[3] != "1") throw CsvError(where + ": attacker_present must be 0 or 1");
    r.attacker_present = cells[3] == "1";
    r.update_norms = {parse_double(cells[4], where)};
    const std::uint64_t seed = parse_u64(cells[5], where);
    if (have_seed && seed != out.seed) throw CsvError(where + ": mixed seeds in one file");
    out.seed = seed;
    have_seed = true;
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) throw CsvError(path.string() + ": no rounds");
  return out;
}

std::string summary_row(const SeedMetrics& m, const std::string& seed_label) {
  std::ostringstream os;
  os << m.config_tag << ',' << (m.param_value.empty() ? "NA" : m.param_value) << ',' << seed_label
     << ',' << optional_cell(m.a_first) << ',' << optional_cell(m.a_last) << ','
     << format_fixed6(m.peak_backdoor) << ',' << format_fixed6(m.final_backdoor) << ','
     << format_fixed6(m.final_main);
  return os.str();
}

void write_summary_csv(const std::filesystem::path& path, std::span<const MetricsSummary> groups) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  out << kSummaryCsvHeader << '\n';
  for (const auto& g : groups) {
    for (const auto& m : g.per_seed) out << summary_row(m, std::to_string(m.seed)) << '\n';
    out << summary_row(g.mean, kMeanSeedLabel) << '\n';
  }
}

std::vector<SeedMetrics> read_summary_csv(const std::filesystem::path& path, bool include_means) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CsvError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSummaryCsvHeader) throw CsvError(path.string() + ": unexpected header '" + line + "'");
  std::vector<SeedMetrics> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto cells = split_csv(line);
    if (cells.size() != 8) throw CsvError(where + ": expected 8 columns");
    if (cells[2] == kMeanSeedLabel && !include_means) continue;
    SeedMetrics m;
    m.config_tag = cells[0];
    m.param_value = cells[1] == "NA" ? "" : cells[1];
    m.seed = cells[2] == kMeanSeedLabel ? 0 : parse_u64(cells[2], where);
    m.a_first = parse_optional(cells[3], where);
    m.a_last = parse_optional(cells[4], where);
    m.peak_backdoor = parse_double(cells[5], where);
    m.final_backdoor = parse_double(cells[6], where);
    m.final_main = parse_double(cells[7], where);
    rows.push_back(std::move(m));
  }
  return rows;
}

}  // namespace fedsim::harness
