#include "grad/harness.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "grad/rng.hpp"

namespace grad::harness {

namespace {

void validate_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be at least 1");
  if (cfg.lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be non-negative");
  if (cfg.batch_size < 2)
    throw std::invalid_argument("TrainConfig: batch_size must be at least 2 (batch norm)");
}

// Attributes that drive model selection: exactly the protected ones. For the
// unprotected baseline the list is empty, every epoch ties at discrimination
// zero, and the accuracy tie-break picks the model — the usual validation
// protocol for a plain classifier.
std::vector<size_t> selection_attrs(const data::EncodedDataset& ds, const TrainConfig& cfg) {
  std::vector<size_t> idx;
  for (const auto& name : cfg.protected_attrs) {
    auto it = std::find(ds.attr_names.begin(), ds.attr_names.end(), name);
    if (it == ds.attr_names.end()) {
      std::string have;
      for (const auto& a : ds.attr_names) have += (have.empty() ? "" : ", ") + a;
      throw std::invalid_argument("protected attribute '" + name + "' not in dataset (have: " +
                                  have + ")");
    }
    idx.push_back(size_t(it - ds.attr_names.begin()));
  }
  return idx;
}

std::vector<int> predicted_labels(GradNetwork& net, const data::EncodedDataset& fit_on,
                                  const data::EncodedDataset& eval_on, const TrainConfig& cfg) {
  if (cfg.variant == Variant::Pred) return net.predict(eval_on.x).label;
  Tensor reps = net.encode(fit_on.x);
  LogisticHead head =
      fit_logistic_head(reps, fit_on.y, derive_seed(cfg.rng_seed, "head"), kHeadEpochs);
  return apply_logistic_head(head, net.encode(eval_on.x)).label;
}

bool config_equal(const NetworkConfig& a, const NetworkConfig& b) {
  return a.variant == b.variant && a.input_dim == b.input_dim &&
         a.hidden_width == b.hidden_width && a.layers_per_branch == b.layers_per_branch &&
         a.lambda == b.lambda && a.n_protected == b.n_protected;
}

std::string config_str(const NetworkConfig& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s input=%zu width=%zu layers=%zu lambda=%g protected=%zu",
                variant_name(c.variant), c.input_dim, c.hidden_width, c.layers_per_branch,
                c.lambda, c.n_protected);
  return buf;
}

}  // namespace

NetworkConfig network_config(const TrainConfig& cfg, size_t input_dim) {
  NetworkConfig net;
  net.variant = cfg.variant;
  net.input_dim = input_dim;
  net.hidden_width = cfg.hidden_width;
  net.layers_per_branch = cfg.layers_per_branch;
  net.lambda = cfg.lambda;
  net.n_protected = cfg.protected_attrs.size();
  return net;
}

uint64_t snapshot_hash(const std::vector<std::pair<std::string, Tensor>>& state) {
  // FNV-1a over names and little-endian double bits
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : state) {
    mix(name.data(), name.size());
    for (size_t i = 0; i < t.numel(); ++i) {
      uint64_t bits = std::bit_cast<uint64_t>(t[i]);
      unsigned char le[8];
      for (int k = 0; k < 8; ++k) le[k] = (unsigned char)(bits >> (8 * k));
      mix(le, 8);
    }
  }
  return h;
}

Snapshot make_snapshot(GradNetwork& net, size_t epoch) {
  Snapshot s;
  s.net_cfg = net.config();
  s.seed = net.seed();
  s.epoch = epoch;
  for (const nn::Param& p : net.state()) s.state.emplace_back(p.name, *p.tensor);
  s.hash = snapshot_hash(s.state);
  return s;
}

void restore_snapshot(const Snapshot& snap, GradNetwork& net) {
  if (!config_equal(snap.net_cfg, net.config()))
    throw std::runtime_error("snapshot configuration (" + config_str(snap.net_cfg) +
                             ") does not match network (" + config_str(net.config()) + ")");
  net.load_state(snap.state);
}

TrainLog train(GradNetwork& net, const data::EncodedDataset& train_ds,
               const data::EncodedDataset& val_ds, const TrainConfig& cfg) {
  validate_config(cfg);
  if (net.config().input_dim != train_ds.dim())
    throw std::invalid_argument("train: network expects " +
                                std::to_string(net.config().input_dim) + " features, data has " +
                                std::to_string(train_ds.dim()));
  if (net.config().n_protected != cfg.protected_attrs.size())
    throw std::invalid_argument("train: network has " +
                                std::to_string(net.config().n_protected) +
                                " attribute branches, config protects " +
                                std::to_string(cfg.protected_attrs.size()));
  std::vector<size_t> attr_idx = selection_attrs(train_ds, cfg);
  std::vector<size_t> protected_idx;  // columns fed to the attribute branches
  for (const auto& name : cfg.protected_attrs)
    protected_idx.push_back(
        size_t(std::find(train_ds.attr_names.begin(), train_ds.attr_names.end(), name) -
               train_ds.attr_names.begin()));

  const size_t n = train_ds.n();
  const size_t d = train_ds.dim();
  const size_t m = protected_idx.size();

  std::vector<nn::Param> params = net.parameters();
  nn::Adam adam;
  TrainLog log;

  std::vector<size_t> order(n);
  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(cfg.rng_seed + epoch);
    shuffle_rng.shuffle(order);

    size_t batch_no = 0;
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      size_t b = std::min(cfg.batch_size, n - start);
      if (b < 2) continue;  // batch norm cannot normalize a single row
      ++batch_no;

      Tensor xb(b, d), yb(b, 1), ab(b, m);
      for (size_t i = 0; i < b; ++i) {
        size_t r = order[start + i];
        for (size_t j = 0; j < d; ++j) xb.at(i, j) = train_ds.x.at(r, j);
        yb.at(i, 0) = double(2 * train_ds.y[r] - 1);
        for (size_t j = 0; j < m; ++j)
          ab.at(i, j) = double(2 * train_ds.a[protected_idx[j]][r] - 1);
      }

      try {
        LossGraph lg = net.forward_loss(xb, yb, m ? ab : Tensor(), /*reverse=*/true);
        double loss = lg.graph.value(lg.total)[0];
        if (!std::isfinite(loss))
          throw std::runtime_error("non-finite loss " + std::to_string(loss));
        adam.step(params, lg.graph.gradients(lg.total, lg.param_nodes));
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_no) + ": " + e.what());
      }
    }

    // eval-mode validation metrics on the selection attributes
    std::vector<int> yhat = predicted_labels(net, train_ds, val_ds, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.val_accuracy = metrics::accuracy(yhat, val_ds.y);
    for (size_t ai : attr_idx)
      rec.val_discrimination.push_back(metrics::discrimination(yhat, val_ds.a[ai]));
    rec.snapshot = log.snapshots.size();
    log.snapshots.push_back(make_snapshot(net, epoch));
    log.records.push_back(std::move(rec));
  }
  return log;
}

size_t select_model(const std::vector<EpochRecord>& records) {
  if (records.empty()) throw std::invalid_argument("select_model: no epochs recorded");
  auto mean_discr = [](const EpochRecord& r) {
    if (r.val_discrimination.empty()) return 0.0;
    double s = std::accumulate(r.val_discrimination.begin(), r.val_discrimination.end(), 0.0);
    return s / double(r.val_discrimination.size());
  };
  size_t best = 0;
  double best_d = mean_discr(records[0]);
  for (size_t i = 1; i < records.size(); ++i) {
    double d = mean_discr(records[i]);
    if (d < best_d - 1e-12) {
      best = i;
      best_d = d;
    } else if (std::abs(d - best_d) <= 1e-12 &&
               records[i].val_accuracy > records[best].val_accuracy) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

metrics::MetricsReport evaluate(GradNetwork& net, const data::EncodedDataset& train_ds,
                                const data::EncodedDataset& test_ds, const TrainConfig& cfg) {
  metrics::PredictionSet preds;
  preds.yhat = predicted_labels(net, train_ds, test_ds, cfg);
  preds.y = test_ds.y;
  preds.a = test_ds.a;
  preds.attr_names = test_ds.attr_names;
  preds.x = test_ds.x;
  return metrics::metrics_report(preds, cfg.knn_k);
}

ExperimentResult run_experiment(const data::SplitSets& splits, const TrainConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.cfg = cfg;
  res.net_cfg = network_config(cfg, splits.train.dim());

  GradNetwork net(res.net_cfg, cfg.rng_seed);
  TrainLog log = train(net, splits.train, splits.val, cfg);
  res.history = log.records;
  res.selected = select_model(log.records);
  res.snapshot = log.snapshots[log.records[res.selected].snapshot];

  restore_snapshot(res.snapshot, net);
  // the metrics below must come from exactly the selected snapshot
  if (snapshot_hash(make_snapshot(net, res.snapshot.epoch).state) != res.snapshot.hash)
    throw std::logic_error("restored network state does not hash to the selected snapshot");
  res.test_report = evaluate(net, splits.train, splits.test, cfg);

  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

double mean_discrimination(const metrics::MetricsReport& report,
                           const std::vector<std::string>& names) {
  if (report.discrimination.empty()) return 0.0;
  if (names.empty()) {
    double s = std::accumulate(report.discrimination.begin(), report.discrimination.end(), 0.0);
    return s / double(report.discrimination.size());
  }
  double s = 0.0;
  for (const auto& name : names) {
    auto it = std::find(report.attr_names.begin(), report.attr_names.end(), name);
    if (it == report.attr_names.end())
      throw std::invalid_argument("mean_discrimination: attribute '" + name + "' not in report");
    s += report.discrimination[size_t(it - report.attr_names.begin())];
  }
  return s / double(names.size());
}

std::vector<SweepRow> lambda_sweep(const data::SplitSets& splits, const TrainConfig& base,
                                   const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw std::invalid_argument("lambda_sweep: empty lambda list");
  std::vector<SweepRow> rows;
  for (double lam : lambdas) {
    TrainConfig cfg = base;
    cfg.lambda = lam;
    ExperimentResult res = run_experiment(splits, cfg);
    rows.push_back({lam, res.test_report.accuracy,
                    mean_discrimination(res.test_report, cfg.protected_attrs),
                    res.test_report.consistency});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoint file format, version 1:
//   bytes 0-7   magic "GRADCKPT"
//   u32         version
//   u64         payload length
//   payload     config echo, seed, epoch, hash, named tensors (doubles LE)
//   u32         CRC-32 of the payload
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(char(v >> (8 * k)));
}
void put_u64(std::string& out, uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(char(v >> (8 * k)));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }
void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint '" + path + "' is truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= uint32_t((unsigned char)buf[pos + k]) << (8 * k);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= uint64_t((unsigned char)buf[pos + k]) << (8 * k);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    uint64_t n = u64();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Snapshot& snap, const std::string& path) {
  std::string payload;
  payload.push_back(char(snap.net_cfg.variant == Variant::Pred ? 0 : 1));
  put_u64(payload, snap.net_cfg.input_dim);
  put_u64(payload, snap.net_cfg.hidden_width);
  put_u64(payload, snap.net_cfg.layers_per_branch);
  put_f64(payload, snap.net_cfg.lambda);
  put_u64(payload, snap.net_cfg.n_protected);
  put_u64(payload, snap.seed);
  put_u64(payload, snap.epoch);
  put_u64(payload, snap.hash);
  put_u64(payload, snap.state.size());
  for (const auto& [name, t] : snap.state) {
    put_str(payload, name);
    put_u64(payload, t.rows());
    put_u64(payload, t.cols());
    for (size_t i = 0; i < t.numel(); ++i) put_f64(payload, t[i]);
  }

  uint32_t crc = uint32_t(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(payload.data()),
            uInt(payload.size())));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 8);
  std::string head;
  put_u32(head, kVersion);
  put_u64(head, payload.size());
  out.write(head.data(), std::streamsize(head.size()));
  out.write(payload.data(), std::streamsize(payload.size()));
  std::string tail;
  put_u32(tail, crc);
  out.write(tail.data(), std::streamsize(tail.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint '" + path + "'");
}

Snapshot load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a GRAD checkpoint");
  Reader r{buf, 8, path};
  uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint '" + path + "' has version " +
                             std::to_string(version) + ", expected " + std::to_string(kVersion));
  uint64_t payload_len = r.u64();
  r.need(payload_len + 4);
  size_t payload_off = r.pos;
  uint32_t stored_crc = 0;
  {
    Reader tail{buf, payload_off + payload_len, path};
    stored_crc = tail.u32();
  }
  uint32_t crc = uint32_t(crc32(crc32(0L, Z_NULL, 0),
                                reinterpret_cast<const Bytef*>(buf.data() + payload_off),
                                uInt(payload_len)));
  if (crc != stored_crc)
    throw std::runtime_error("checkpoint '" + path + "' failed checksum validation");

  Snapshot snap;
  r.need(1);
  snap.net_cfg.variant = buf[r.pos++] == 0 ? Variant::Pred : Variant::Auto;
  snap.net_cfg.input_dim = r.u64();
  snap.net_cfg.hidden_width = r.u64();
  snap.net_cfg.layers_per_branch = r.u64();
  snap.net_cfg.lambda = r.f64();
  snap.net_cfg.n_protected = r.u64();
  snap.seed = r.u64();
  snap.epoch = r.u64();
  snap.hash = r.u64();
  uint64_t n_tensors = r.u64();
  for (uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    uint64_t rows = r.u64();
    uint64_t cols = r.u64();
    Tensor t(rows, cols);
    for (size_t k = 0; k < t.numel(); ++k) t[k] = r.f64();
    snap.state.emplace_back(std::move(name), std::move(t));
  }
  if (snapshot_hash(snap.state) != snap.hash)
    throw std::runtime_error("checkpoint '" + path + "' state does not match its stored hash");
  return snap;
}

std::string results_header(const std::vector<std::string>& attr_names) {
  std::string h = "algorithm,dataset,lambda,seed,epoch_selected,acc,delta";
  for (const auto& a : attr_names) h += ",discr_" + a;
  h += ",cons";
  return h;
}

std::string results_line(const ResultRow& row) {
  char buf[64];
  std::string line = row.algorithm + "," + row.dataset;
  std::snprintf(buf, sizeof buf, ",%g,%llu,%zu", row.lambda,
                (unsigned long long)row.seed, row.epoch_selected);
  line += buf;
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f", row.report.accuracy, row.report.delta);
  line += buf;
  for (double d : row.report.discrimination) {
    std::snprintf(buf, sizeof buf, ",%.6f", d);
    line += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.6f", row.report.consistency);
  line += buf;
  return line;
}

}  // namespace grad::harness
