#ifndef CKCONV_CORE_TRAIN_HPP_
#define CKCONV_CORE_TRAIN_HPP_

#include <cstdint>
#include <string>

#include <json.hpp>

#include "core/model.hpp"
#include "core/tasks.hpp"

namespace ckconv {

// Reduce-on-plateau: after `patience` observations in a row without an
// improvement of more than min_delta over the best seen value, divide the
// learning rate by `decay` and start counting again. Lower is better; the
// first observation just sets the baseline.
struct PlateauScheduler {
  double lr = 1e-3;
  int64_t patience = 20;
  double decay = 5.0;
  double min_delta = 1e-5;

  double best = 0.0;
  bool has_best = false;
  int64_t bad = 0;

  double step(double value);  // returns the learning rate to use next
};

// Resolved training setup. Parsed from a sectioned JSON document
// {"task": {...}, "model": {...}, "train": {...}, "resample": {...}};
// model in/out geometry is derived from the task and echoed back.
struct TrainConfig {
  // task
  std::string task = "adding";  // adding | copy
  int64_t seq_len = 100;        // adding: length; copy: recall delay (sequences are seq_len + 20)
  bool one_hot = false;         // copy input encoding
  int64_t dataset_size = 2000;  // fresh training sequences per epoch
  double val_fraction = 0.1;
  bool regenerate_each_epoch = true;

  CkcnnConfig model;

  // optimization
  int64_t epochs = 30;
  int64_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int64_t patience = 20;
  double lr_decay = 5.0;
  double min_delta = 1e-5;
  uint64_t seed = 0;

  // observation protocol during training (dropping steps trains robustness;
  // rate changes are an evaluation-time concept and stay fixed at 1 here)
  double drop_prob = 0.0;
  bool keep_markers = true;  // adding: never drop the two marked steps

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// All verbs take one options document and report one result document; they
// throw Error for anything user-facing. File outputs land under "out_dir".
nlohmann::json train(const nlohmann::json& options);
nlohmann::json evaluate(const nlohmann::json& options);
nlohmann::json fit_kernel(const nlohmann::json& options);
nlohmann::json generate(const nlohmann::json& options);
nlohmann::json resample_report(const nlohmann::json& options);
nlohmann::json equivalence_report(const nlohmann::json& options);
nlohmann::json sweep(const nlohmann::json& options);

}  // namespace ckconv

#endif  // CKCONV_CORE_TRAIN_HPP_
