#pragma once

#include "persona/bfi2.hpp"
#include "persona/model.hpp"
#include "persona/types.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace persona::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;
  int sweep_trials = 10;
  std::uint64_t seed = 0;
  bfi2::Level level = bfi2::Level::Trait;
  Task task = Task::Talk;

  // Sweep search space (the tuning bounds; train_model itself accepts any
  // non-negative learning rate, which the stall tests rely on).
  double lr_min = 1e-5;
  double lr_max = 1e-2;
  std::vector<int> batch_choices = {16, 32};

  void validate() const;
};

// Mean of squared differences. Throws length_mismatch on unequal sizes.
double mse_loss(const Vector& pred, const Vector& target);

// First/second moment accumulators, zero-initialized to the parameter shapes.
struct AdamState {
  nn::ParameterSet m;
  nn::ParameterSet v;

  static AdamState zeros_like(const nn::ParameterSet& params);
};

// Standard Adam update with bias correction; t is the 1-based step count.
void adam_step(nn::ParameterSet& params, const nn::ParameterSet& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, int t = 1);

// One training example: dyad spectral maps plus the target participant's
// label vector at the configured level.
struct DyadSample {
  nn::DyadInput input;
  Vector label;
  std::string target_pid;
  std::string session_id;
};

struct EpochEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct SweepTrial {
  int trial = 0;
  double learning_rate = 0.0;
  int batch_size = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<SweepTrial> trials;
  int best_trial = -1;
  std::string notes;

  const SweepTrial& best() const;
};

struct TrainReport {
  std::vector<EpochEntry> epochs;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::string checkpoint_path;
  SweepResult sweep;  // empty unless a sweep drove this run
};

// Builds the batch loss (mean squared error over the batch's stacked
// predictions), backpropagates, and returns the loss with gradients summed
// into `grads`.
double batch_loss_and_gradients(const nn::Model& model, const std::vector<const DyadSample*>& batch,
                                nn::ParameterSet& grads, const nn::Dropout& drop);

// Evaluation-mode mean MSE over a sample set.
double dataset_mse(const nn::Model& model, const std::vector<DyadSample>& samples);

// MSE training with Adam, per-epoch seeded shuffling and early stopping on
// the validation loss; the model is left holding the best-epoch parameters.
TrainReport train_model(nn::Model& model, const std::vector<DyadSample>& train_set,
                        const std::vector<DyadSample>& val_set, const TrainConfig& config);

// Hyperparameter search over (learning rate, batch size): log-uniform
// sampling with a nearest-neighbor exploitation step on later trials. The
// objective receives a per-trial seed and returns the value to minimize.
SweepResult sweep(const TrainConfig& bounds, int trials, std::uint64_t seed,
                  const std::function<double(double lr, int batch, std::uint64_t trial_seed)>& objective);

}  // namespace persona::train
