#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "grad/tensor.hpp"

namespace grad::data {

enum class ColKind { Continuous, Categorical, Binary };

struct ColumnSpec {
  std::string name;
  ColKind kind = ColKind::Continuous;
  std::string positive = "1";  // binary columns: value mapped to 1
};

// How a protected column maps to group 1: either string equality (categorical
// or binary columns) or a numeric threshold value <= group1_leq (continuous).
struct ProtectedSpec {
  std::string column;
  std::string group1_value;
  bool use_threshold = false;
  double group1_leq = 0.0;
};

struct DatasetSpec {
  std::string name;
  std::string source;  // resolved against the spec file's directory
  char delimiter = ',';
  bool has_header = true;
  std::vector<ColumnSpec> columns;
  std::string target_column;
  std::string target_positive;
  std::vector<ProtectedSpec> protected_attrs;
  std::vector<std::string> missing_tokens = {"?", ""};
};

DatasetSpec load_spec(const std::string& path);
void save_spec(const DatasetSpec& spec, const std::string& path);

// Typed columns. Continuous cells hold NaN where the value was missing;
// categorical/binary cells hold the sentinel "<missing>".
struct RawColumn {
  ColumnSpec spec;
  std::vector<double> num;
  std::vector<std::string> cat;
};

struct RawTable {
  std::vector<RawColumn> cols;
  size_t n_rows = 0;
  size_t dropped_rows = 0;  // missing target or protected value
};

RawTable load_table(const DatasetSpec& spec);

// Statistics learned on a training table and reapplied to validation/test
// tables: category vocabularies, imputation means, and per-feature z-score
// parameters.
struct EncodeStats {
  std::map<std::string, std::vector<std::string>> vocab;
  std::map<std::string, double> impute_mean;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
};

struct EncodedDataset {
  Tensor x_raw;  // one-hot/continuous features before standardization
  Tensor x;      // standardized features (continuous columns z-scored)
  std::vector<int> y;                // {0,1}
  std::vector<std::vector<int>> a;   // per protected attribute, {0,1}
  std::vector<std::string> feature_names;
  std::vector<uint8_t> feature_continuous;
  std::vector<std::string> attr_names;
  EncodeStats stats;

  size_t n() const { return x.rows(); }
  size_t dim() const { return x.cols(); }
};

// Categorical -> one-hot, continuous -> z-score, binary -> {0,1}; protected
// columns are routed to A and never appear among the features. With
// train_stats, vocabularies/means/stds are taken from it (unseen categories
// encode to all-zeros with a warning); otherwise they are learned from the
// table itself.
EncodedDataset encode(const RawTable& table, const DatasetSpec& spec,
                      const EncodeStats* train_stats = nullptr);

struct SplitSets {
  EncodedDataset train, val, test;
};

// Disjoint, exhaustive, deterministic per seed. Standardization statistics
// are recomputed on the train part and applied to all three.
SplitSets split(const EncodedDataset& ds, double f_train, double f_val, double f_test,
                uint64_t seed);

// Synthetic generator with a controllable protected-attribute signal:
//   a_j ~ Bernoulli(1/2)                      (one per bias entry)
//   s   ~ N(0,1)
//   y   = 1  iff  s + sum_j bias_j * (2 a_j - 1) > 0
//   f0          = s + 0.3 * noise             (task signal, independent of a)
//   f_{1..m}    = bias_j * (2 a_j - 1) + (1 - bias_j) * noise   (leakage)
//   f_{m+1..d-1} = noise                       (distractors)
// At bias_j = 1 the leakage channel determines a_j exactly; at bias_j = 0 the
// attribute is independent of everything. Requires n >= 100 and d >= m + 1.
// The result is unstandardized; split() standardizes.
EncodedDataset synth_biased(size_t n, size_t d, const std::vector<double>& bias, uint64_t seed);

// Writes <dir>/<stem>.csv plus <dir>/<stem>.spec.json so the generated data
// round-trips through load_spec/load_table/encode.
void write_synth(const EncodedDataset& ds, const std::string& dir, const std::string& stem);

// Exact-duplication audit: throws if any feature column is value-identical to
// a protected column. (Statistical correlation may remain; that is what the
// attribute branches are for.) Called by encode.
void audit_no_protected_leak(const EncodedDataset& ds);

}  // namespace grad::data
