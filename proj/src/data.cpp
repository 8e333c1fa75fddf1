#include "grad/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "grad/rng.hpp"

namespace grad::data {

namespace {

constexpr const char* kMissingSentinel = "<missing>";

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_cells(const std::string& line, char delim) {
  std::vector<std::string> out;
  if (delim == ' ') {
    // whitespace-delimited files: runs of blanks separate cells
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_number(const std::string& cell, size_t line_no, const std::string& col) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e)
    throw std::runtime_error("line " + std::to_string(line_no) + ", column '" + col +
                             "': cannot parse '" + cell + "' as a number");
  return v;
}

size_t column_index(const DatasetSpec& spec, const std::string& name) {
  for (size_t i = 0; i < spec.columns.size(); ++i)
    if (spec.columns[i].name == name) return i;
  throw std::runtime_error("dataset spec '" + spec.name + "': column '" + name +
                           "' not in schema");
}

ColKind kind_from_name(const std::string& s, const std::string& ctx) {
  if (s == "continuous") return ColKind::Continuous;
  if (s == "categorical") return ColKind::Categorical;
  if (s == "binary") return ColKind::Binary;
  throw std::runtime_error(ctx + ": unknown column kind '" + s + "'");
}

const char* kind_name(ColKind k) {
  switch (k) {
    case ColKind::Continuous: return "continuous";
    case ColKind::Categorical: return "categorical";
    case ColKind::Binary: return "binary";
  }
  return "?";
}

void validate_spec(const DatasetSpec& spec, const std::string& ctx) {
  if (spec.columns.empty()) throw std::runtime_error(ctx + ": no columns declared");
  std::set<std::string> seen;
  for (const auto& c : spec.columns) {
    if (c.name.empty()) throw std::runtime_error(ctx + ": empty column name");
    if (!seen.insert(c.name).second)
      throw std::runtime_error(ctx + ": duplicate column '" + c.name + "'");
  }
  size_t ti = column_index(spec, spec.target_column);
  if (spec.columns[ti].kind == ColKind::Continuous)
    throw std::runtime_error(ctx + ": target column '" + spec.target_column +
                             "' must be categorical or binary");
  std::set<std::string> pseen;
  for (const auto& p : spec.protected_attrs) {
    size_t pi = column_index(spec, p.column);
    if (!pseen.insert(p.column).second)
      throw std::runtime_error(ctx + ": duplicate protected column '" + p.column + "'");
    if (p.column == spec.target_column)
      throw std::runtime_error(ctx + ": target column cannot be protected");
    ColKind k = spec.columns[pi].kind;
    if (p.use_threshold && k != ColKind::Continuous)
      throw std::runtime_error(ctx + ": protected column '" + p.column +
                               "' uses a threshold but is " + kind_name(k));
    if (!p.use_threshold && k == ColKind::Continuous)
      throw std::runtime_error(ctx + ": protected column '" + p.column +
                               "' is continuous and needs a group1_leq threshold");
  }
}

bool is_missing(const DatasetSpec& spec, const std::string& cell) {
  return std::find(spec.missing_tokens.begin(), spec.missing_tokens.end(), cell) !=
         spec.missing_tokens.end();
}

}  // namespace

DatasetSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset spec '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("dataset spec '" + path + "': " + e.what());
  }
  const std::string ctx = "dataset spec '" + path + "'";
  DatasetSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    spec.source = j.at("source").get<std::string>();
    if (j.contains("delimiter")) {
      std::string d = j["delimiter"].get<std::string>();
      if (d == "\\t") d = "\t";
      if (d.size() != 1) throw std::runtime_error(ctx + ": delimiter must be one character");
      spec.delimiter = d[0];
    }
    if (j.contains("has_header")) spec.has_header = j["has_header"].get<bool>();
    if (j.contains("missing_tokens")) {
      spec.missing_tokens.clear();
      for (const auto& t : j["missing_tokens"]) spec.missing_tokens.push_back(t.get<std::string>());
    }
    for (const auto& c : j.at("columns")) {
      ColumnSpec cs;
      cs.name = c.at("name").get<std::string>();
      cs.kind = kind_from_name(c.at("kind").get<std::string>(), ctx);
      if (c.contains("positive")) cs.positive = c["positive"].get<std::string>();
      spec.columns.push_back(cs);
    }
    spec.target_column = j.at("target").at("column").get<std::string>();
    spec.target_positive = j.at("target").at("positive").get<std::string>();
    if (j.contains("protected")) {
      for (const auto& p : j["protected"]) {
        ProtectedSpec ps;
        ps.column = p.at("column").get<std::string>();
        if (p.contains("group1_leq")) {
          ps.use_threshold = true;
          ps.group1_leq = p["group1_leq"].get<double>();
        } else {
          ps.group1_value = p.at("group1").get<std::string>();
        }
        spec.protected_attrs.push_back(ps);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(ctx + ": " + e.what());
  }
  validate_spec(spec, ctx);
  // resolve the data file relative to the spec file
  std::filesystem::path src(spec.source);
  if (src.is_relative()) {
    spec.source = (std::filesystem::path(path).parent_path() / src).string();
  }
  return spec;
}

void save_spec(const DatasetSpec& spec, const std::string& path) {
  validate_spec(spec, "dataset spec '" + spec.name + "'");
  nlohmann::ordered_json j;
  j["name"] = spec.name;
  j["source"] = spec.source;
  j["delimiter"] = std::string(1, spec.delimiter);
  j["has_header"] = spec.has_header;
  j["missing_tokens"] = spec.missing_tokens;
  j["columns"] = nlohmann::ordered_json::array();
  for (const auto& c : spec.columns) {
    nlohmann::ordered_json jc;
    jc["name"] = c.name;
    jc["kind"] = kind_name(c.kind);
    if (c.kind == ColKind::Binary) jc["positive"] = c.positive;
    j["columns"].push_back(jc);
  }
  j["target"] = {{"column", spec.target_column}, {"positive", spec.target_positive}};
  j["protected"] = nlohmann::ordered_json::array();
  for (const auto& p : spec.protected_attrs) {
    nlohmann::ordered_json jp;
    jp["column"] = p.column;
    if (p.use_threshold)
      jp["group1_leq"] = p.group1_leq;
    else
      jp["group1"] = p.group1_value;
    j["protected"].push_back(jp);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset spec '" + path + "'");
  out << j.dump(2) << "\n";
}

RawTable load_table(const DatasetSpec& spec) {
  std::ifstream in(spec.source);
  if (!in) throw std::runtime_error("cannot open data file '" + spec.source + "'");

  RawTable table;
  table.cols.resize(spec.columns.size());
  for (size_t i = 0; i < spec.columns.size(); ++i) table.cols[i].spec = spec.columns[i];

  size_t target_idx = column_index(spec, spec.target_column);
  std::vector<size_t> protected_idx;
  for (const auto& p : spec.protected_attrs) protected_idx.push_back(column_index(spec, p.column));

  std::string line;
  size_t line_no = 0;
  bool header_done = !spec.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_cells(line, spec.delimiter);
    if (!header_done) {
      header_done = true;
      if (cells.size() != spec.columns.size())
        throw std::runtime_error("'" + spec.source + "' header has " +
                                 std::to_string(cells.size()) + " columns, schema declares " +
                                 std::to_string(spec.columns.size()));
      for (size_t i = 0; i < cells.size(); ++i)
        if (cells[i] != spec.columns[i].name)
          throw std::runtime_error("'" + spec.source + "' header column " + std::to_string(i) +
                                   " is '" + cells[i] + "', schema declares '" +
                                   spec.columns[i].name + "'");
      continue;
    }
    if (cells.size() != spec.columns.size())
      throw std::runtime_error("'" + spec.source + "' line " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(spec.columns.size()));

    // rows whose target or protected value is missing carry no usable label
    bool drop = is_missing(spec, cells[target_idx]);
    for (size_t pi : protected_idx) drop = drop || is_missing(spec, cells[pi]);
    if (drop) {
      ++table.dropped_rows;
      continue;
    }

    for (size_t i = 0; i < cells.size(); ++i) {
      RawColumn& col = table.cols[i];
      const std::string& cell = cells[i];
      if (col.spec.kind == ColKind::Continuous) {
        col.num.push_back(is_missing(spec, cell)
                              ? std::numeric_limits<double>::quiet_NaN()
                              : parse_number(cell, line_no, col.spec.name));
      } else {
        col.cat.push_back(is_missing(spec, cell) ? kMissingSentinel : cell);
      }
    }
    ++table.n_rows;
  }
  if (table.n_rows == 0)
    throw std::runtime_error("'" + spec.source + "' contains no usable rows");
  return table;
}

EncodedDataset encode(const RawTable& table, const DatasetSpec& spec,
                      const EncodeStats* train_stats) {
  const std::string ctx = "encode('" + spec.name + "')";
  size_t n = table.n_rows;
  size_t target_idx = column_index(spec, spec.target_column);
  std::set<size_t> protected_idx;
  for (const auto& p : spec.protected_attrs) protected_idx.insert(column_index(spec, p.column));

  EncodedDataset ds;

  // assemble feature columns in schema order
  struct FeatCol {
    std::string name;
    bool continuous;
    std::vector<double> values;
  };
  std::vector<FeatCol> feats;
  for (size_t ci = 0; ci < table.cols.size(); ++ci) {
    if (ci == target_idx || protected_idx.count(ci)) continue;
    const RawColumn& col = table.cols[ci];
    if (col.spec.kind == ColKind::Continuous) {
      double mean;
      if (train_stats) {
        auto it = train_stats->impute_mean.find(col.spec.name);
        if (it == train_stats->impute_mean.end())
          throw std::runtime_error(ctx + ": train stats lack column '" + col.spec.name + "'");
        mean = it->second;
      } else {
        double sum = 0.0;
        size_t cnt = 0;
        for (double v : col.num)
          if (!std::isnan(v)) sum += v, ++cnt;
        mean = cnt ? sum / double(cnt) : 0.0;
        if (cnt == 0)
          std::fprintf(stderr, "warning: column '%s' is entirely missing; imputing 0\n",
                       col.spec.name.c_str());
      }
      ds.stats.impute_mean[col.spec.name] = mean;
      FeatCol f{col.spec.name, true, col.num};
      for (double& v : f.values)
        if (std::isnan(v)) v = mean;
      feats.push_back(std::move(f));
    } else if (col.spec.kind == ColKind::Binary) {
      FeatCol f{col.spec.name, false, {}};
      f.values.reserve(n);
      for (const auto& v : col.cat) f.values.push_back(v == col.spec.positive ? 1.0 : 0.0);
      feats.push_back(std::move(f));
    } else {  // categorical -> one-hot
      std::vector<std::string> vocab;
      if (train_stats) {
        auto it = train_stats->vocab.find(col.spec.name);
        if (it == train_stats->vocab.end())
          throw std::runtime_error(ctx + ": train stats lack vocabulary for '" + col.spec.name +
                                   "'");
        vocab = it->second;
      } else {
        std::set<std::string> uniq(col.cat.begin(), col.cat.end());
        vocab.assign(uniq.begin(), uniq.end());  // sorted for determinism
      }
      ds.stats.vocab[col.spec.name] = vocab;
      std::map<std::string, size_t> pos;
      for (size_t k = 0; k < vocab.size(); ++k) pos[vocab[k]] = k;
      std::vector<FeatCol> hot(vocab.size());
      for (size_t k = 0; k < vocab.size(); ++k)
        hot[k] = {col.spec.name + "=" + vocab[k], false, std::vector<double>(n, 0.0)};
      std::set<std::string> warned;
      for (size_t i = 0; i < n; ++i) {
        auto it = pos.find(col.cat[i]);
        if (it == pos.end()) {
          // category never seen at train time: encode as all-zeros
          if (warned.insert(col.cat[i]).second)
            std::fprintf(stderr, "warning: column '%s': unseen category '%s', encoding as zeros\n",
                         col.spec.name.c_str(), col.cat[i].c_str());
          continue;
        }
        hot[it->second].values[i] = 1.0;
      }
      for (auto& h : hot) feats.push_back(std::move(h));
    }
  }

  size_t d = feats.size();
  ds.x_raw = Tensor(n, d);
  for (size_t j = 0; j < d; ++j) {
    ds.feature_names.push_back(feats[j].name);
    ds.feature_continuous.push_back(feats[j].continuous ? 1 : 0);
    for (size_t i = 0; i < n; ++i) ds.x_raw.at(i, j) = feats[j].values[i];
  }

  // z-score continuous features
  ds.stats.feature_mean.assign(d, 0.0);
  ds.stats.feature_std.assign(d, 1.0);
  if (train_stats) {
    if (train_stats->feature_mean.size() != d || train_stats->feature_std.size() != d)
      throw std::runtime_error(ctx + ": train stats cover " +
                               std::to_string(train_stats->feature_mean.size()) +
                               " features, encoding produced " + std::to_string(d));
    ds.stats.feature_mean = train_stats->feature_mean;
    ds.stats.feature_std = train_stats->feature_std;
  } else {
    for (size_t j = 0; j < d; ++j) {
      if (!ds.feature_continuous[j]) continue;
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) sum += ds.x_raw.at(i, j);
      double mean = sum / double(n);
      double ss = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double c = ds.x_raw.at(i, j) - mean;
        ss += c * c;
      }
      double sd = std::sqrt(ss / double(n));
      ds.stats.feature_mean[j] = mean;
      ds.stats.feature_std[j] = sd > 1e-12 ? sd : 1.0;
    }
  }
  ds.x = ds.x_raw;
  for (size_t j = 0; j < d; ++j) {
    if (!ds.feature_continuous[j]) continue;
    for (size_t i = 0; i < n; ++i)
      ds.x.at(i, j) = (ds.x_raw.at(i, j) - ds.stats.feature_mean[j]) / ds.stats.feature_std[j];
  }

  // labels
  const RawColumn& tcol = table.cols[target_idx];
  ds.y.reserve(n);
  for (const auto& v : tcol.cat) ds.y.push_back(v == spec.target_positive ? 1 : 0);

  // protected attributes
  for (const auto& p : spec.protected_attrs) {
    const RawColumn& col = table.cols[column_index(spec, p.column)];
    std::vector<int> a(n, 0);
    if (p.use_threshold) {
      for (size_t i = 0; i < n; ++i) a[i] = col.num[i] <= p.group1_leq ? 1 : 0;
    } else {
      for (size_t i = 0; i < n; ++i) a[i] = col.cat[i] == p.group1_value ? 1 : 0;
    }
    ds.a.push_back(std::move(a));
    ds.attr_names.push_back(p.column);
  }

  audit_no_protected_leak(ds);
  return ds;
}

namespace {

EncodedDataset take_rows(const EncodedDataset& ds, const std::vector<size_t>& idx) {
  EncodedDataset out;
  out.feature_names = ds.feature_names;
  out.feature_continuous = ds.feature_continuous;
  out.attr_names = ds.attr_names;
  out.stats = ds.stats;
  size_t d = ds.dim();
  out.x_raw = Tensor(idx.size(), d);
  for (size_t i = 0; i < idx.size(); ++i)
    for (size_t j = 0; j < d; ++j) out.x_raw.at(i, j) = ds.x_raw.at(idx[i], j);
  out.y.reserve(idx.size());
  for (size_t i : idx) out.y.push_back(ds.y[i]);
  out.a.resize(ds.a.size());
  for (size_t k = 0; k < ds.a.size(); ++k) {
    out.a[k].reserve(idx.size());
    for (size_t i : idx) out.a[k].push_back(ds.a[k][i]);
  }
  return out;
}

void standardize_with(EncodedDataset& part, const std::vector<double>& mean,
                      const std::vector<double>& sd) {
  part.stats.feature_mean = mean;
  part.stats.feature_std = sd;
  part.x = part.x_raw;
  for (size_t j = 0; j < part.dim(); ++j) {
    if (!part.feature_continuous[j]) continue;
    for (size_t i = 0; i < part.n(); ++i)
      part.x.at(i, j) = (part.x_raw.at(i, j) - mean[j]) / sd[j];
  }
}

}  // namespace

SplitSets split(const EncodedDataset& ds, double f_train, double f_val, double f_test,
                uint64_t seed) {
  if (f_train <= 0 || f_val <= 0 || f_test <= 0)
    throw std::invalid_argument("split: fractions must be positive");
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");
  size_t n = ds.n();
  auto n_train = size_t(std::llround(f_train * double(n)));
  auto n_val = size_t(std::llround(f_val * double(n)));
  if (n_train + n_val >= n || n_train == 0 || n_val == 0)
    throw std::invalid_argument("split: a part would be empty (n=" + std::to_string(n) + ")");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  SplitSets out;
  out.train = take_rows(ds, {order.begin(), order.begin() + long(n_train)});
  out.val = take_rows(ds, {order.begin() + long(n_train), order.begin() + long(n_train + n_val)});
  out.test = take_rows(ds, {order.begin() + long(n_train + n_val), order.end()});

  // standardization statistics come from the train part only
  size_t d = ds.dim();
  std::vector<double> mean(d, 0.0), sd(d, 1.0);
  for (size_t j = 0; j < d; ++j) {
    if (!ds.feature_continuous[j]) continue;
    double sum = 0.0;
    for (size_t i = 0; i < n_train; ++i) sum += out.train.x_raw.at(i, j);
    mean[j] = sum / double(n_train);
    double ss = 0.0;
    for (size_t i = 0; i < n_train; ++i) {
      double c = out.train.x_raw.at(i, j) - mean[j];
      ss += c * c;
    }
    double s = std::sqrt(ss / double(n_train));
    sd[j] = s > 1e-12 ? s : 1.0;
  }
  standardize_with(out.train, mean, sd);
  standardize_with(out.val, mean, sd);
  standardize_with(out.test, mean, sd);
  return out;
}

EncodedDataset synth_biased(size_t n, size_t d, const std::vector<double>& bias, uint64_t seed) {
  if (n < 100) throw std::invalid_argument("synth_biased: n must be at least 100");
  if (bias.empty()) throw std::invalid_argument("synth_biased: need at least one bias entry");
  for (double b : bias)
    if (b < 0.0 || b > 1.0)
      throw std::invalid_argument("synth_biased: bias entries must lie in [0, 1]");
  size_t m = bias.size();
  if (d < m + 1)
    throw std::invalid_argument("synth_biased: d must be at least " + std::to_string(m + 1) +
                                " (one signal channel plus one leakage channel per attribute)");

  EncodedDataset ds;
  ds.x_raw = Tensor(n, d);
  ds.a.assign(m, std::vector<int>(n, 0));
  ds.y.resize(n);

  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    double shift = 0.0;
    for (size_t j = 0; j < m; ++j) {
      ds.a[j][i] = rng.bernoulli(0.5) ? 1 : 0;
      shift += bias[j] * double(2 * ds.a[j][i] - 1);
    }
    double s = rng.normal();
    ds.y[i] = s + shift > 0.0 ? 1 : 0;
    ds.x_raw.at(i, 0) = s + 0.3 * rng.normal();
    for (size_t j = 0; j < m; ++j)
      ds.x_raw.at(i, 1 + j) =
          bias[j] * double(2 * ds.a[j][i] - 1) + (1.0 - bias[j]) * rng.normal();
    for (size_t c = m + 1; c < d; ++c) ds.x_raw.at(i, c) = rng.normal();
  }

  for (size_t j = 0; j < d; ++j) {
    ds.feature_names.push_back("f" + std::to_string(j));
    ds.feature_continuous.push_back(1);
  }
  for (size_t j = 0; j < m; ++j) ds.attr_names.push_back("a" + std::to_string(j));
  ds.x = ds.x_raw;
  ds.stats.feature_mean.assign(d, 0.0);
  ds.stats.feature_std.assign(d, 1.0);
  for (size_t j = 0; j < d; ++j) ds.stats.impute_mean[ds.feature_names[j]] = 0.0;
  return ds;
}

void write_synth(const EncodedDataset& ds, const std::string& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::filesystem::path csv = std::filesystem::path(dir) / (stem + ".csv");
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write '" + csv.string() + "'");
  for (const auto& f : ds.feature_names) out << f << ",";
  for (const auto& a : ds.attr_names) out << a << ",";
  out << "y\n";
  char buf[64];
  for (size_t i = 0; i < ds.n(); ++i) {
    for (size_t j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x_raw.at(i, j));
      out << buf << ",";
    }
    for (const auto& a : ds.a) out << a[i] << ",";
    out << ds.y[i] << "\n";
  }
  out.close();

  DatasetSpec spec;
  spec.name = stem;
  spec.source = stem + ".csv";
  spec.delimiter = ',';
  spec.has_header = true;
  for (size_t j = 0; j < ds.dim(); ++j)
    spec.columns.push_back({ds.feature_names[j],
                            ds.feature_continuous[j] ? ColKind::Continuous : ColKind::Binary,
                            "1"});
  for (const auto& a : ds.attr_names) {
    spec.columns.push_back({a, ColKind::Binary, "1"});
    spec.protected_attrs.push_back({a, "1", false, 0.0});
  }
  spec.columns.push_back({"y", ColKind::Binary, "1"});
  spec.target_column = "y";
  spec.target_positive = "1";
  save_spec(spec, (std::filesystem::path(dir) / (stem + ".spec.json")).string());
}

void audit_no_protected_leak(const EncodedDataset& ds) {
  for (const auto& f : ds.feature_names)
    for (const auto& a : ds.attr_names)
      if (f == a)
        throw std::runtime_error("schema audit: protected column '" + a +
                                 "' appears among the features");
  for (size_t j = 0; j < ds.dim(); ++j) {
    for (size_t k = 0; k < ds.a.size(); ++k) {
      bool same = ds.n() > 0;
      for (size_t i = 0; i < ds.n() && same; ++i)
        same = ds.x_raw.at(i, j) == double(ds.a[k][i]);
      if (same)
        throw std::runtime_error("schema audit: feature '" + ds.feature_names[j] +
                                 "' duplicates protected attribute '" + ds.attr_names[k] + "'");
    }
  }
}

}  // namespace grad::data
