#pragma once

// Experiment orchestration: the config file format, the retraining loop, and
// the three pipeline phases (search, retrain, evaluate) with their on-disk
// artifacts.
//
// Every phase is a pure function of (config, seed): metrics.csv,
// genotype.json, cell.dot and checkpoint.addc are byte-reproducible across
// runs. The ADD_SEED environment variable, when set, overrides the config
// seed at load time.

#include <cstdint>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "search/search.hpp"
#include "train/metrics.hpp"
#include "train/optim.hpp"

namespace add {

// Hyperparameters of the discrete-detector training phase. The schedule's
// base_lr and total_epochs mirror `opt.lr` and `epochs`; only its kind,
// milestones and factor are read from the config.
struct RetrainConfig {
  int epochs = 30;
  int batch_size = 16;
  OptimizerConfig opt{OptimizerKind::Adam, 0.01, 0.9, 0.999, 1e-8, 5e-4};
  ScheduleSpec schedule{ScheduleKind::Cosine, 0.01, 30, {}, 0.1};
};

// One experiment: where the data comes from, how it is split, the backbone
// dimensions, and the per-phase hyperparameters. `search.network` always
// mirrors `network`; a config file sets the backbone in one place.
struct ExperimentConfig {
  uint64_t seed = 0;
  DataSource data;
  double train_frac = 0.7;
  double val_frac = 0.15;
  double test_frac = 0.15;
  NetworkConfig network;
  SearchConfig search;
  RetrainConfig retrain;
};

// Parses the config JSON object. Every field is optional and defaults as
// above; sections: "seed", "data", "split" {"train","val","test"},
// "network", "search" (with "w_opt", "w_schedule", "alpha_opt"), "retrain"
// (with "opt", "schedule"). Unknown keys are ignored; wrongly typed known
// keys are Format errors.
ExperimentConfig experiment_config_from_json(const std::string& text);

// Reads a config file (Io error naming the path) and applies the ADD_SEED
// override when the variable is set (Config error when it is not a
// non-negative integer).
ExperimentConfig load_experiment_config(const std::string& path);

// One row of metrics.csv.
struct MetricRow {
  int epoch = 0;
  std::string split;
  double loss_ce = 0.0;
  double loss_mse = 0.0;
  double acc = 0.0;
  double auc = 0.0;
};

// Renders "epoch,split,loss_ce,loss_mse,acc,auc" rows. Floats use %.17g so
// the file is lossless and byte-stable.
std::string metrics_csv(const std::vector<MetricRow>& rows);

// Runs the architecture search on the config's train/val splits and writes
// metrics.csv (one train and one val row per epoch), genotype.json and
// cell.dot into out_dir (created if missing). Returns the genotype.
Genotype run_search_phase(const ExperimentConfig& config, const std::string& out_dir);

// Loads a genotype file, trains a discrete detector on the config's train
// split, and writes metrics.csv (train/val rows per epoch plus one final
// test row) and checkpoint.addc into out_dir. The checkpoint embeds the
// network config and the genotype, so evaluation needs no other inputs.
// Returns the final test-split report.
MetricsReport run_retrain_phase(const ExperimentConfig& config, const std::string& genotype_path,
                                const std::string& out_dir);

// Loads a checkpoint, rebuilds its detector, and evaluates every sample the
// data source yields. A synthetic source must match the checkpoint's input
// size (Config error); a directory source is resampled to it. Writes
// metrics.csv (a single "eval" row) into out_dir.
MetricsReport run_eval_phase(const std::string& checkpoint_path, const DataSource& source,
                             const std::string& out_dir);

}  // namespace add
