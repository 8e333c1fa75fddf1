#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grad/data.hpp"
#include "grad/metrics.hpp"
#include "grad/model.hpp"

namespace grad::harness {

struct TrainConfig {
  size_t epochs = 50;
  size_t batch_size = 64;
  double lambda = 100.0;
  size_t knn_k = 5;
  uint64_t rng_seed = 0;
  Variant variant = Variant::Pred;
  std::vector<std::string> protected_attrs;  // dataset attribute names; empty = NN baseline

  // architecture knobs, echoed into NetworkConfig
  size_t hidden_width = 40;
  size_t layers_per_branch = 2;
};

NetworkConfig network_config(const TrainConfig& cfg, size_t input_dim);

// Epochs the Auto-variant logistic head is trained for wherever the harness
// needs probe accuracies (validation and final evaluation).
constexpr size_t kHeadEpochs = 200;

struct EpochRecord {
  size_t epoch = 0;  // 1-based
  double val_accuracy = 0.0;
  std::vector<double> val_discrimination;  // one per selection attribute
  size_t snapshot = 0;                     // index into TrainLog::snapshots
};

// Restorable copy of a trained network at one epoch. The hash covers the
// serialized state and ties reported metrics to the exact snapshot they came
// from.
struct Snapshot {
  NetworkConfig net_cfg;
  uint64_t seed = 0;
  size_t epoch = 0;
  std::vector<std::pair<std::string, Tensor>> state;
  uint64_t hash = 0;
};

Snapshot make_snapshot(GradNetwork& net, size_t epoch);
uint64_t snapshot_hash(const std::vector<std::pair<std::string, Tensor>>& state);
// Loads the snapshot into net; the network configuration must match the
// snapshot's echo exactly.
void restore_snapshot(const Snapshot& snap, GradNetwork& net);

struct TrainLog {
  std::vector<EpochRecord> records;
  std::vector<Snapshot> snapshots;
};

// Minibatch training for cfg.epochs epochs: seeded shuffle (rng_seed + epoch),
// forward_loss + backward + Adam per batch, then eval-mode validation metrics
// and a parameter snapshot. Batches of size 1 are dropped (batch norm needs
// two rows). Validation discrimination covers cfg.protected_attrs; for the
// unprotected baseline the list is empty and selection falls through to the
// accuracy tie-break.
TrainLog train(GradNetwork& net, const data::EncodedDataset& train_ds,
               const data::EncodedDataset& val_ds, const TrainConfig& cfg);

// Index into records of the selected epoch: lowest mean validation
// discrimination; ties within 1e-12 go to the highest validation accuracy,
// then to the earliest epoch.
size_t select_model(const std::vector<EpochRecord>& records);

// Test-set metrics in eval mode, reported over every dataset attribute.
// Pred: thresholded predictions. Auto: logistic head fitted on train-split
// representations, applied to test representations.
metrics::MetricsReport evaluate(GradNetwork& net, const data::EncodedDataset& train_ds,
                                const data::EncodedDataset& test_ds, const TrainConfig& cfg);

struct ExperimentResult {
  size_t selected = 0;  // index into history
  metrics::MetricsReport test_report;
  std::vector<EpochRecord> history;
  Snapshot snapshot;  // the selected epoch's snapshot, verified by hash
  TrainConfig cfg;
  NetworkConfig net_cfg;
  double wall_seconds = 0.0;

  size_t selected_epoch() const { return history[selected].epoch; }
};

// train + select_model + restore (hash-checked) + evaluate.
ExperimentResult run_experiment(const data::SplitSets& splits, const TrainConfig& cfg);

struct SweepRow {
  double lambda = 0.0;
  double accuracy = 0.0;
  double discrimination = 0.0;  // mean over the selection attributes
  double consistency = 0.0;
};

// One full experiment per lambda on the same seed and splits.
std::vector<SweepRow> lambda_sweep(const data::SplitSets& splits, const TrainConfig& base,
                                   const std::vector<double>& lambdas);

// Mean discrimination over the named attributes (all of them when names is
// empty), looked up in the report by name.
double mean_discrimination(const metrics::MetricsReport& report,
                           const std::vector<std::string>& names);

// Binary checkpoint: magic "GRADCKPT", format version, length-prefixed
// payload, CRC-32 trailer. Round-trips parameters and running statistics
// bit-exactly.
void save_checkpoint(const Snapshot& snap, const std::string& path);
Snapshot load_checkpoint(const std::string& path);

// Fixed results-row format shared by the CLI commands:
//   algorithm,dataset,lambda,seed,epoch_selected,acc,delta,discr_<attr>...,cons
std::string results_header(const std::vector<std::string>& attr_names);
struct ResultRow {
  std::string algorithm;
  std::string dataset;
  double lambda = 0.0;
  uint64_t seed = 0;
  size_t epoch_selected = 0;
  metrics::MetricsReport report;
};
std::string results_line(const ResultRow& row);

}  // namespace grad::harness
