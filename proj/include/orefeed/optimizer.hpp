#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "orefeed/params.hpp"

namespace orefeed::optim {

struct TrainConfig {
  double lr_init = 1e-2;
  double momentum = 0.9;
  double lr_factor = 0.7;
  int plateau_patience = 5;
  double lr_min = 1e-4;
  int batch_size = 32;
  int max_epochs = 100;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;  // rate used during this epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_accuracy = -1.0;
  bool early_stopped = false;
};

nlohmann::json to_json(const EpochRecord& rec);
void write_history_jsonl(const TrainHistory& history, const std::filesystem::path& path);

// Classical momentum: v' = momentum * v + g; p' = p - lr * v'.
void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, double lr,
              double momentum);

// Learning rate for the epoch after the last one in `history`. The stagnation
// counter resets on a new best validation accuracy and after each reduction.
double plateau_schedule(const TrainHistory& history, const TrainConfig& cfg);

// A model bound to its dataset. Examples are addressed by index.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual ParamSet& params() = 0;
  // Loss for one example; adds its parameter gradient into grad. aug_seed, when
  // set, selects a deterministic augmentation of the input.
  virtual double loss_grad(std::size_t example, std::optional<std::uint64_t> aug_seed,
                           ParamSet& grad) const = 0;
  virtual int predict(std::size_t example) const = 0;
  virtual int label(std::size_t example) const = 0;
};

double accuracy(const Trainable& model, std::span<const std::size_t> ids);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch SGD with plateau schedule and early stopping. On return the model
// holds the parameters of the best validation epoch.
TrainHistory train(Trainable& model, std::span<const std::size_t> train_ids,
                   std::span<const std::size_t> val_ids, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
};

// Central differences on at most max_params parameters, spread over all tensors.
// Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(Trainable& model, std::size_t example, double eps = 1e-4,
                           std::size_t max_params = 200, std::uint64_t seed = 0);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string model;  // "patch_net" or "bag_net"
  nlohmann::json config;
  nlohmann::json class_vocab;
  std::uint64_t rng_seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const ParamSet& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
// Throws IntegrityError on truncation or checksum mismatch, VersionError on a
// different format version.
std::pair<ParamSet, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace orefeed::optim
