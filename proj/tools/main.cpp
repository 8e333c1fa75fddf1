// grad: train fair networks by gradient reversal, sweep lambda, compare
// against the plain-NN baseline, and generate biased synthetic datasets.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grad/data.hpp"
#include "grad/harness.hpp"
#include "grad/model.hpp"

namespace fs = std::filesystem;
using grad::harness::ResultRow;
using grad::harness::TrainConfig;

namespace {

struct CommonArgs {
  std::string data_spec;
  std::string variant = "pred";
  std::string protected_csv;
  double lambda = 100.0;
  size_t epochs = 50;
  size_t batch_size = 64;
  uint64_t seed = 0;
  size_t knn_k = 5;
  std::string splits = "0.5,0.2,0.3";
  std::string out;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& tok : split_csv(s)) {
    try {
      size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error("cannot parse " + what + " value '" + tok + "'");
    }
  }
  return out;
}

// --lambdas accepts "1,10,100" or "log:<lo>:<hi>:<count>"
std::vector<double> parse_lambdas(const std::string& s) {
  if (s.rfind("log:", 0) == 0) {
    std::string spec = s.substr(4);
    std::vector<std::string> f;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) f.push_back(tok);
    if (f.size() != 3) throw std::runtime_error("log lambda range needs log:<lo>:<hi>:<count>");
    double lo = std::stod(f[0]), hi = std::stod(f[1]);
    size_t count = std::stoul(f[2]);
    if (lo <= 0 || hi <= lo || count < 2)
      throw std::runtime_error("log lambda range needs 0 < lo < hi and count >= 2");
    std::vector<double> out;
    for (size_t i = 0; i < count; ++i)
      out.push_back(lo * std::pow(hi / lo, double(i) / double(count - 1)));
    return out;
  }
  return parse_doubles(s, "lambda");
}

TrainConfig make_config(const CommonArgs& a) {
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.lambda = a.lambda;
  cfg.knn_k = a.knn_k;
  cfg.rng_seed = a.seed;
  cfg.variant = grad::variant_from_name(a.variant);
  cfg.protected_attrs = split_csv(a.protected_csv);
  return cfg;
}

// Output directory policy: --out wins, else $GRAD_OUT_ROOT/<stem>. A
// directory that already holds a manifest is a completed run; refuse it.
fs::path resolve_out(const std::string& out_flag, const std::string& stem) {
  fs::path dir;
  if (!out_flag.empty()) {
    dir = out_flag;
  } else {
    const char* root = std::getenv("GRAD_OUT_ROOT");
    if (!root || !*root)
      throw std::runtime_error("no --out given and GRAD_OUT_ROOT is not set");
    dir = fs::path(root) / stem;
  }
  if (fs::exists(dir / "manifest.json"))
    throw std::runtime_error("output directory '" + dir.string() +
                             "' already holds a manifest; refusing to overwrite");
  fs::create_directories(dir);
  return dir;
}

void write_text_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << body;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::string& dataset_spec, const nlohmann::ordered_json& config,
                    const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["dataset_spec"] = dataset_spec;
  j["config"] = config;
  j["out_dir"] = dir.string();
  j["files"] = files;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

nlohmann::ordered_json config_json(const TrainConfig& cfg, const std::string& splits) {
  nlohmann::ordered_json j;
  j["variant"] = grad::variant_name(cfg.variant);
  j["protected"] = cfg.protected_attrs;
  j["lambda"] = cfg.lambda;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["knn_k"] = cfg.knn_k;
  j["seed"] = cfg.rng_seed;
  j["splits"] = splits;
  return j;
}

struct LoadedData {
  grad::data::DatasetSpec spec;
  grad::data::SplitSets splits;
};

LoadedData load_and_split(const std::string& spec_path, const std::string& splits_csv,
                          uint64_t seed) {
  LoadedData ld;
  ld.spec = grad::data::load_spec(spec_path);
  auto fr = parse_doubles(splits_csv, "split fraction");
  if (fr.size() != 3) throw std::runtime_error("--splits needs three fractions, e.g. 0.5,0.2,0.3");
  auto table = grad::data::load_table(ld.spec);
  if (table.dropped_rows)
    std::fprintf(stderr, "note: dropped %zu rows with missing target or protected values\n",
                 table.dropped_rows);
  auto encoded = grad::data::encode(table, ld.spec);
  ld.splits = grad::data::split(encoded, fr[0], fr[1], fr[2], seed);
  return ld;
}

std::string algorithm_name(const TrainConfig& cfg) {
  std::string base = cfg.protected_attrs.empty() ? "NN" : "GRAD";
  return base + "-" + (cfg.variant == grad::Variant::Pred ? "Pred" : "Auto");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Aligned text table; cosmetic only, the CSV next to it is the contract.
std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> w(header.size());
  for (size_t j = 0; j < header.size(); ++j) w[j] = header[j].size();
  for (const auto& r : rows)
    for (size_t j = 0; j < r.size(); ++j) w[j] = std::max(w[j], r[j].size());
  std::string out;
  auto emit = [&](const std::vector<std::string>& r) {
    for (size_t j = 0; j < r.size(); ++j) {
      out += r[j];
      if (j + 1 < r.size()) out.append(w[j] - r[j].size() + 2, ' ');
    }
    out += "\n";
  };
  emit(header);
  std::vector<std::string> rule;
  for (size_t j = 0; j < header.size(); ++j) rule.push_back(std::string(w[j], '-'));
  emit(rule);
  for (const auto& r : rows) emit(r);
  return out;
}

void print_report(const grad::metrics::MetricsReport& rep) {
  std::cout << "acc   " << fmt(rep.accuracy) << "\n";
  std::cout << "delta " << fmt(rep.delta) << "\n";
  for (size_t i = 0; i < rep.discrimination.size(); ++i)
    std::cout << "discr " << rep.attr_names[i] << " " << fmt(rep.discrimination[i]) << "\n";
  std::cout << "cons  " << fmt(rep.consistency) << "\n";
}

int cmd_train(const CommonArgs& args) {
  TrainConfig cfg = make_config(args);
  fs::path out = resolve_out(args.out, "train-" + fs::path(args.data_spec).stem().string() +
                                           "-seed" + std::to_string(args.seed));
  LoadedData ld = load_and_split(args.data_spec, args.splits, cfg.rng_seed);

  grad::harness::ExperimentResult res = grad::harness::run_experiment(ld.splits, cfg);

  ResultRow row{algorithm_name(cfg), ld.spec.name, cfg.lambda, cfg.rng_seed,
                res.selected_epoch(), res.test_report};
  std::string results = grad::harness::results_header(res.test_report.attr_names) + "\n" +
                        grad::harness::results_line(row) + "\n";
  write_text_file(out / "results.csv", results);

  grad::harness::save_checkpoint(res.snapshot, (out / "checkpoint.bin").string());

  std::string hist = "epoch,val_acc";
  for (const auto& a : cfg.protected_attrs) hist += ",val_discr_" + a;
  hist += "\n";
  for (const auto& rec : res.history) {
    hist += std::to_string(rec.epoch) + "," + fmt(rec.val_accuracy);
    for (double d : rec.val_discrimination) hist += "," + fmt(d);
    hist += "\n";
  }
  write_text_file(out / "history.csv", hist);

  print_report(res.test_report);
  std::cout << "selected epoch " << res.selected_epoch() << " of " << cfg.epochs << " ("
            << fmt(res.wall_seconds) << "s)\n";

  write_manifest(out, "train", args.data_spec, config_json(cfg, args.splits),
                 {"results.csv", "checkpoint.bin", "history.csv"});
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& lambdas_arg) {
  TrainConfig cfg = make_config(args);
  std::vector<double> lambdas = parse_lambdas(lambdas_arg);
  if (lambdas.empty()) throw std::runtime_error("empty lambda list");
  fs::path out = resolve_out(args.out, "sweep-" + fs::path(args.data_spec).stem().string() +
                                           "-seed" + std::to_string(args.seed));
  LoadedData ld = load_and_split(args.data_spec, args.splits, cfg.rng_seed);

  auto rows = grad::harness::lambda_sweep(ld.splits, cfg, lambdas);

  std::string csv = "lambda,acc,discr,cons\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f,%.6f\n", r.lambda, r.accuracy, r.discrimination,
                  r.consistency);
    csv += buf;
  }
  write_text_file(out / "sweep.csv", csv);

  // the lambda used throughout the experiments gets a dashed reference mark
  std::vector<std::vector<std::string>> trows;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g", r.lambda);
    trows.push_back({buf, fmt(r.accuracy), fmt(r.discrimination), fmt(r.consistency),
                     r.lambda == 100.0 ? "---- default ----" : ""});
  }
  std::string table = render_table({"lambda", "acc", "discr", "cons", "ref"}, trows);
  write_text_file(out / "sweep.txt", table);
  std::cout << table;

  write_manifest(out, "sweep", args.data_spec, config_json(cfg, args.splits),
                 {"sweep.csv", "sweep.txt"});
  return 0;
}

int cmd_compare(const CommonArgs& args) {
  TrainConfig base = make_config(args);
  if (base.protected_attrs.empty())
    throw std::runtime_error("compare needs --protected (the baseline drops it internally)");
  fs::path out = resolve_out(args.out, "compare-" + fs::path(args.data_spec).stem().string() +
                                           "-seed" + std::to_string(args.seed));
  LoadedData ld = load_and_split(args.data_spec, args.splits, base.rng_seed);

  // the GRAD paper's Table 1 layout: baseline vs GRAD for both variants,
  // identical splits
  struct Run {
    const char* name;
    grad::Variant variant;
    bool protect;
  };
  const Run runs[] = {{"NN-Auto", grad::Variant::Auto, false},
                      {"GRAD-Auto", grad::Variant::Auto, true},
                      {"NN-Pred", grad::Variant::Pred, false},
                      {"GRAD-Pred", grad::Variant::Pred, true}};

  std::vector<ResultRow> rows;
  for (const Run& run : runs) {
    TrainConfig cfg = base;
    cfg.variant = run.variant;
    if (!run.protect) cfg.protected_attrs.clear();
    grad::harness::ExperimentResult res = grad::harness::run_experiment(ld.splits, cfg);
    rows.push_back({run.name, ld.spec.name, cfg.lambda, cfg.rng_seed, res.selected_epoch(),
                    res.test_report});
  }

  std::string csv = grad::harness::results_header(rows[0].report.attr_names) + "\n";
  for (const auto& r : rows) csv += grad::harness::results_line(r) + "\n";
  write_text_file(out / "compare.csv", csv);

  // aligned table with the best value per metric column marked
  size_t n_attr = rows[0].report.attr_names.size();
  std::vector<std::string> header = {"algorithm", "acc", "delta"};
  for (const auto& a : rows[0].report.attr_names) header.push_back("discr_" + a);
  header.push_back("cons");
  auto col_value = [&](const ResultRow& r, size_t c) {
    if (c == 0) return r.report.accuracy;
    if (c == 1) return r.report.delta;
    if (c < 2 + n_attr) return r.report.discrimination[c - 2];
    return r.report.consistency;
  };
  std::vector<std::vector<std::string>> trows;
  for (const auto& r : rows) trows.push_back({r.algorithm});
  for (size_t c = 0; c < 3 + n_attr; ++c) {
    bool lower_is_better = c >= 2 && c < 2 + n_attr;  // the discrimination columns
    size_t best = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
      double v = col_value(rows[i], c), b = col_value(rows[best], c);
      if (lower_is_better ? v < b : v > b) best = i;
    }
    for (size_t i = 0; i < rows.size(); ++i)
      trows[i].push_back(fmt(col_value(rows[i], c)) + (i == best ? " *" : ""));
  }
  std::string table = render_table(header, trows);
  write_text_file(out / "compare.txt", table);
  std::cout << table;

  write_manifest(out, "compare", args.data_spec, config_json(base, args.splits),
                 {"compare.csv", "compare.txt"});
  return 0;
}

int cmd_synth(size_t n, size_t d, const std::string& bias_csv, uint64_t seed,
              const std::string& out_flag, const std::string& name) {
  std::vector<double> bias = parse_doubles(bias_csv, "bias");
  fs::path out = resolve_out(out_flag, "synth-" + name + "-seed" + std::to_string(seed));
  auto ds = grad::data::synth_biased(n, d, bias, seed);
  grad::data::write_synth(ds, out.string(), name);
  std::cout << "wrote " << (out / (name + ".csv")).string() << " (" << n << " rows, " << d
            << " features, " << bias.size() << " protected)\n";

  nlohmann::ordered_json cfg;
  cfg["n"] = n;
  cfg["d"] = d;
  cfg["bias"] = bias;
  cfg["seed"] = seed;
  write_manifest(out, "synth", "", cfg, {name + ".csv", name + ".spec.json"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRAD: fair training by gradient reversal on protected-attribute branches"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string lambdas_arg = "1,10,100,1000";

  auto add_common = [&](CLI::App* cmd, bool with_lambda) {
    cmd->add_option("--data", args.data_spec, "dataset spec (JSON)")->required();
    cmd->add_option("--variant", args.variant, "pred|auto")
        ->check(CLI::IsMember({"pred", "auto"}));
    cmd->add_option("--protected", args.protected_csv,
                    "comma-separated protected attribute names (empty = NN baseline)");
    if (with_lambda) cmd->add_option("--lambda", args.lambda, "reversal strength");
    cmd->add_option("--epochs", args.epochs, "training epochs");
    cmd->add_option("--batch-size", args.batch_size, "minibatch size");
    cmd->add_option("--seed", args.seed, "RNG seed");
    cmd->add_option("--knn-k", args.knn_k, "neighbors for consistency");
    cmd->add_option("--splits", args.splits, "train,val,test fractions (default 0.5,0.2,0.3)");
    cmd->add_option("--out", args.out, "output directory (default $GRAD_OUT_ROOT/<run>)");
  };

  CLI::App* train = app.add_subcommand("train", "train one model and evaluate it");
  add_common(train, true);

  CLI::App* sweep = app.add_subcommand("sweep", "train across a list of lambda values");
  add_common(sweep, false);
  sweep->add_option("--lambdas", lambdas_arg, "comma list or log:<lo>:<hi>:<count>");

  CLI::App* compare = app.add_subcommand("compare", "NN vs GRAD for both variants");
  add_common(compare, true);

  CLI::App* synth = app.add_subcommand("synth", "generate a biased synthetic dataset");
  size_t synth_n = 5000, synth_d = 8;
  std::string synth_bias = "0.8";
  uint64_t synth_seed = 0;
  std::string synth_out, synth_name = "synth";
  synth->add_option("--n", synth_n, "rows (minimum 100)");
  synth->add_option("--d", synth_d, "feature count");
  synth->add_option("--bias", synth_bias, "comma list, one entry per protected attribute");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--name", synth_name, "dataset stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    std::cerr << app.help() << "\n";
    return code ? code : 1;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("sweep")) return cmd_sweep(args, lambdas_arg);
    if (app.got_subcommand("compare")) return cmd_compare(args);
    if (app.got_subcommand("synth"))
      return cmd_synth(synth_n, synth_d, synth_bias, synth_seed, synth_out, synth_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
