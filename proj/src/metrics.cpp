#include "asbd/metrics.hpp"

#include "asbd/data.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace asbd {

double mean_score(std::span<const double> scores) {
  if (scores.empty()) throw DataError("mean of an empty score list");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

BucketReport bucket_report(std::span<const BucketItem> items, const std::vector<std::string>& systems,
                           std::span<const std::size_t> boundaries) {
  if (items.empty()) throw DataError("bucket_report: no items");
  if (systems.empty()) throw ConfigError("bucket_report: no systems");
  validate_boundaries(boundaries);

  const std::size_t n_buckets = boundaries.size() + 1;
  std::vector<std::size_t> counts(n_buckets, 0);
  std::vector<std::vector<double>> sums(n_buckets, std::vector<double>(systems.size(), 0.0));
  for (const auto& item : items) {
    if (item.scores.size() != systems.size()) throw DimensionError("bucket item score count differs from system count");
    const std::size_t b = length_bucket(item.src_len, boundaries);
    ++counts[b];
    for (std::size_t s = 0; s < systems.size(); ++s) sums[b][s] += item.scores[s];
  }

  BucketReport report;
  report.boundaries.assign(boundaries.begin(), boundaries.end());
  report.systems = systems;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    BucketRow row;
    row.label = bucket_label(b, boundaries);
    row.count = counts[b];
    for (std::size_t s = 0; s < systems.size(); ++s) {
      if (counts[b] == 0) {
        row.means.emplace_back(std::nullopt);
      } else {
        row.means.emplace_back(sums[b][s] / static_cast<double>(counts[b]));
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

namespace {

void check_cell(const std::string& cell) {
  if (cell.find_first_of(",\n\r") != std::string::npos) throw ConfigError("CSV cell may not contain ',' or newlines: " + cell);
}

}  // namespace

void write_bucket_csv(std::ostream& out, const BucketReport& report) {
  out << "bucket,count";
  for (const auto& s : report.systems) {
    check_cell(s);
    out << ',' << s;
  }
  out << '\n';
  for (const auto& row : report.rows) {
    out << row.label << ',' << row.count;
    for (const auto& m : row.means) {
      out << ',';
      if (m) out << format_fixed(*m, 3);
    }
    out << '\n';
  }
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "system,mean_sentence_bleu\n";
  for (const auto& r : rows) {
    check_cell(r.system);
    out << r.system << ',' << format_fixed(r.mean_sentence_bleu, 3) << '\n';
  }
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    table.push_back(std::move(cells));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_csv(in);
}

namespace {

double parse_number(const std::string& cell) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw DataError("not a number: '" + cell + "'");
  }
  if (used != cell.size()) throw DataError("not a number: '" + cell + "'");
  return v;
}

}  // namespace

std::vector<SummaryRow> parse_summary_csv(const CsvTable& table) {
  if (table.empty() || table.front() != std::vector<std::string>{"system", "mean_sentence_bleu"}) {
    throw DataError("summary CSV must start with header system,mean_sentence_bleu");
  }
  std::vector<SummaryRow> rows;
  for (std::size_t r = 1; r < table.size(); ++r) {
    if (table[r].size() != 2) throw DataError("summary CSV row " + std::to_string(r) + " must have 2 cells");
    rows.push_back({table[r][0], parse_number(table[r][1])});
  }
  return rows;
}

BucketReport parse_bucket_csv(const CsvTable& table) {
  if (table.empty() || table.front().size() < 3 || table.front()[0] != "bucket" || table.front()[1] != "count") {
    throw DataError("bucket CSV must start with header bucket,count,<system>...");
  }
  BucketReport report;
  report.systems.assign(table.front().begin() + 2, table.front().end());
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& cells = table[r];
    if (cells.size() != table.front().size()) throw DataError("bucket CSV row " + std::to_string(r) + " has wrong width");
    BucketRow row;
    row.label = cells[0];
    row.count = static_cast<std::size_t>(parse_number(cells[1]));
    for (std::size_t c = 2; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        row.means.emplace_back(std::nullopt);
      } else {
        row.means.emplace_back(parse_number(cells[c]));
      }
    }
    const auto dash = row.label.find('-');
    if (dash != std::string::npos) report.boundaries.push_back(static_cast<std::size_t>(parse_number(row.label.substr(dash + 1))));
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace asbd
