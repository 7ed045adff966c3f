#include "nlpscm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nlpscm/error.hpp"

namespace nlpscm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

BatchDataset::BatchDataset(Eigen::MatrixXd data, std::vector<std::string> names, std::vector<VariableKind> kinds)
    : data_(std::move(data)), names_(std::move(names)), kinds_(std::move(kinds)) {
  if (static_cast<std::size_t>(data_.cols()) != names_.size()) {
    throw InvalidArgument("dataset column count does not match variable names");
  }
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) throw InvalidArgument("dataset variable names must be unique");
  if (kinds_.empty()) kinds_.assign(names_.size(), VariableKind::continuous());
  if (kinds_.size() != names_.size()) throw InvalidArgument("dataset kind count does not match variable names");
  if (!data_.allFinite()) throw InvalidArgument("dataset contains missing or non-finite values");
}

int BatchDataset::index_of(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw UnknownVariable(std::string(name));
  return static_cast<int>(it - names_.begin());
}

bool BatchDataset::all_categorical() const {
  return std::all_of(kinds_.begin(), kinds_.end(), [](const VariableKind& k) { return k.is_categorical(); });
}

bool BatchDataset::all_continuous() const {
  return std::none_of(kinds_.begin(), kinds_.end(), [](const VariableKind& k) { return k.is_categorical(); });
}

BatchDataset BatchDataset::select_rows(std::span<const Eigen::Index> rows) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), data_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = data_.row(rows[r]);
  return BatchDataset(std::move(out), names_, kinds_);
}

BatchDataset concatenate(std::span<const BatchDataset> batches) {
  if (batches.empty()) throw InvalidArgument("concatenate: no batches");
  Eigen::Index total = 0;
  for (const auto& b : batches) {
    if (b.names() != batches.front().names() || b.kinds() != batches.front().kinds()) {
      throw InvalidArgument("concatenate: batches disagree on variables");
    }
    total += b.rows();
  }
  Eigen::MatrixXd out(total, static_cast<Eigen::Index>(batches.front().cols()));
  Eigen::Index at = 0;
  for (const auto& b : batches) {
    out.middleRows(at, b.rows()) = b.data();
    at += b.rows();
  }
  return BatchDataset(std::move(out), batches.front().names(), batches.front().kinds());
}

void write_csv(std::ostream& out, const BatchDataset& data) {
  for (std::size_t c = 0; c < data.cols(); ++c) {
    if (c) out << ',';
    out << data.names()[c];
  }
  out << '\n';
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.data().cols(); ++c) {
      if (c) out << ',';
      out << format_double(data.data()(r, c));
    }
    out << '\n';
  }
}

BatchDataset read_csv(std::istream& in, const std::vector<VariableKind>& kinds) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: missing header row", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto names = split_csv_line(line);
  const std::size_t d = names.size();
  std::vector<double> cells;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto parts = split_csv_line(line);
    if (parts.size() != d) {
      throw ParseError("expected " + std::to_string(d) + " cells, found " + std::to_string(parts.size()), row_no);
    }
    for (std::size_t c = 0; c < d; ++c) {
      const auto& s = parts[c];
      double v = 0.0;
      const auto* first = s.data();
      const auto* last = s.data() + s.size();
      while (first < last && *first == ' ') ++first;
      const auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
        throw ParseError("not a number: '" + s + "'", row_no, c + 1);
      }
      cells.push_back(v);
    }
  }
  const auto n = static_cast<Eigen::Index>(cells.size() / std::max<std::size_t>(d, 1));
  Eigen::MatrixXd data(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) data(r, static_cast<Eigen::Index>(c)) = cells[static_cast<std::size_t>(r) * d + c];
  }
  std::vector<VariableKind> resolved = kinds;
  if (resolved.empty()) {
    for (std::size_t c = 0; c < d; ++c) {
      std::set<double> levels;
      bool integral = n > 0;
      for (Eigen::Index r = 0; r < n && integral; ++r) {
        const double v = data(r, static_cast<Eigen::Index>(c));
        integral = v >= 0.0 && v == std::floor(v);
        if (integral) levels.insert(v);
        if (levels.size() > 10) integral = false;
      }
      resolved.push_back(integral ? VariableKind::categorical(static_cast<int>(*levels.rbegin()) + 1)
                                  : VariableKind::continuous());
    }
  }
  return BatchDataset(std::move(data), std::move(names), std::move(resolved));
}

void write_csv_file(const std::string& path, const BatchDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_csv(out, data);
  if (!out) throw Error("write failed: " + path);
}

BatchDataset read_csv_file(const std::string& path, const std::vector<VariableKind>& kinds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  return read_csv(in, kinds);
}

}  // namespace nlpscm
