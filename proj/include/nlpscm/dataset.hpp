#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace nlpscm {

/// Continuous columns hold reals; categorical columns hold integer level codes.
struct VariableKind {
  enum class Type { Continuous, Categorical } type = Type::Continuous;
  int levels = 0;

  static VariableKind continuous() { return {}; }
  static VariableKind categorical(int levels) { return {Type::Categorical, levels}; }
  bool is_categorical() const { return type == Type::Categorical; }
  friend bool operator==(const VariableKind&, const VariableKind&) = default;
};

/// One batch of observations: an n x d matrix plus per-column metadata.
class BatchDataset {
 public:
  BatchDataset() = default;
  BatchDataset(Eigen::MatrixXd data, std::vector<std::string> names, std::vector<VariableKind> kinds = {});

  const Eigen::MatrixXd& data() const { return data_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<VariableKind>& kinds() const { return kinds_; }
  Eigen::Index rows() const { return data_.rows(); }
  std::size_t cols() const { return names_.size(); }
  bool empty() const { return data_.rows() == 0; }
  int index_of(std::string_view name) const;

  bool all_categorical() const;
  bool all_continuous() const;

  /// Rows selected by index, in the given order.
  BatchDataset select_rows(std::span<const Eigen::Index> rows) const;

  friend bool operator==(const BatchDataset& a, const BatchDataset& b) {
    return a.names_ == b.names_ && a.kinds_ == b.kinds_ && a.data_.rows() == b.data_.rows() &&
           a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
  }

 private:
  Eigen::MatrixXd data_;
  std::vector<std::string> names_;
  std::vector<VariableKind> kinds_;
};

/// Row-wise concatenation; every batch must share names and kinds.
BatchDataset concatenate(std::span<const BatchDataset> batches);

/// CSV with a header row. Values print with round-trip precision.
void write_csv(std::ostream& out, const BatchDataset& data);
/// Columns whose every cell is a non-negative integer with few distinct values
/// are read as categorical unless `kinds` is supplied.
BatchDataset read_csv(std::istream& in, const std::vector<VariableKind>& kinds = {});

void write_csv_file(const std::string& path, const BatchDataset& data);
BatchDataset read_csv_file(const std::string& path, const std::vector<VariableKind>& kinds = {});

}  // namespace nlpscm
