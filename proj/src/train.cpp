#include "persona/train.hpp"

#include "persona/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace persona::train {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    raise(errc::invalid_bounds, "learning_rate must be finite and non-negative");
  if (batch_size < 1) raise(errc::invalid_bounds, "batch_size must be >= 1");
  if (max_epochs < 1) raise(errc::invalid_bounds, "max_epochs must be >= 1");
  if (patience < 1 || patience >= max_epochs)
    raise(errc::invalid_bounds, "patience must satisfy 1 <= patience < max_epochs");
}

double mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size())
    raise(errc::length_mismatch, "mse_loss: length " + std::to_string(pred.size()) + " vs " +
                                     std::to_string(target.size()));
  if (pred.size() == 0) raise(errc::length_mismatch, "mse_loss: empty vectors");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

AdamState AdamState::zeros_like(const nn::ParameterSet& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(nn::ParameterSet& params, const nn::ParameterSet& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps, int t) {
  if (t < 1) raise(errc::invalid_bounds, "adam_step: t must be >= 1");
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, p] : params.tensors) {
    const Matrix& g = grads.at(name);
    if (g.rows() != p.rows() || g.cols() != p.cols())
      raise(errc::shape_mismatch, "adam_step: gradient shape mismatch for " + name);
    Matrix& m = state.m.at(name);
    Matrix& v = state.v.at(name);
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m / bc1;
    const Matrix v_hat = v / bc2;
    p.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

double batch_loss_and_gradients(const nn::Model& model, const std::vector<const DyadSample*>& batch,
                                nn::ParameterSet& grads, const nn::Dropout& drop) {
  if (batch.empty()) raise(errc::empty_split, "batch_loss_and_gradients: empty batch");
  ad::Tape tape;
  nn::ParamBinder bind(tape, model.params());

  std::vector<ad::Var> preds;
  Matrix targets(static_cast<Eigen::Index>(batch.size()), model.config().output_dim);
  preds.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->label.size() != model.config().output_dim)
      raise(errc::length_mismatch, "sample label length does not match model output");
    preds.push_back(model.forward(bind, batch[i]->input, drop));
    targets.row(static_cast<Eigen::Index>(i)) = batch[i]->label.transpose();
  }
  ad::Var stacked = batch.size() == 1 ? preds[0] : ad::vcat(preds);
  ad::Var loss = ad::mse_against(stacked, targets);
  tape.backward(loss.idx);
  bind.accumulate_gradients(grads);
  return loss.value()(0, 0);
}

double dataset_mse(const nn::Model& model, const std::vector<DyadSample>& samples) {
  if (samples.empty()) raise(errc::empty_split, "dataset_mse: empty sample set");
  double total = 0.0;
  for (const auto& s : samples) total += mse_loss(model.predict(s.input), s.label);
  return total / static_cast<double>(samples.size());
}

TrainReport train_model(nn::Model& model, const std::vector<DyadSample>& train_set,
                        const std::vector<DyadSample>& val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) raise(errc::empty_split, "train_model: empty training set");
  if (val_set.empty()) raise(errc::empty_split, "train_model: empty validation set");

  TrainReport report;
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "epoch-shuffle"));
  AdamState adam = AdamState::zeros_like(model.params());
  nn::ParameterSet best_params = model.params();
  int step = 0;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    size_t n_seen = 0;
    size_t at = 0;
    int batch_index = 0;
    while (at < order.size()) {
      const size_t take = std::min(static_cast<size_t>(config.batch_size), order.size() - at);
      std::vector<const DyadSample*> batch;
      batch.reserve(take);
      for (size_t i = 0; i < take; ++i) batch.push_back(&train_set[order[at + i]]);
      at += take;

      std::mt19937_64 dropout_rng(
          derive_seed(config.seed, static_cast<std::uint64_t>(epoch) * 1000003ULL + static_cast<std::uint64_t>(batch_index)));
      const double dropout_rate = model.config().dropout;
      nn::Dropout drop{dropout_rate, dropout_rate > 0.0 ? &dropout_rng : nullptr};

      nn::ParameterSet grads = model.params().zeros_like();
      const double loss = batch_loss_and_gradients(model, batch, grads, drop);
      if (!std::isfinite(loss))
        raise(errc::non_finite_loss, "training loss diverged at epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(take);
      n_seen += take;
      ++step;
      adam_step(model.params(), grads, adam, config.learning_rate, 0.9, 0.999, 1e-8, step);
      ++batch_index;
    }

    const double train_loss = loss_sum / static_cast<double>(n_seen);
    const double val_loss = dataset_mse(model, val_set);
    if (!std::isfinite(val_loss))
      raise(errc::non_finite_loss, "validation loss diverged at epoch " + std::to_string(epoch));
    report.epochs.push_back({epoch, train_loss, val_loss});

    if (val_loss < report.best_val_loss) {
      report.best_val_loss = val_loss;
      report.best_epoch = epoch;
      best_params = model.params();
    } else if (epoch - report.best_epoch >= config.patience) {
      report.stopped_early = true;
      break;
    }
  }

  model.params() = best_params;
  return report;
}

const SweepTrial& SweepResult::best() const {
  if (best_trial < 0 || best_trial >= static_cast<int>(trials.size()))
    raise(errc::empty_list, "sweep produced no usable trial");
  return trials[static_cast<size_t>(best_trial)];
}

SweepResult sweep(const TrainConfig& bounds, int trials, std::uint64_t seed,
                  const std::function<double(double lr, int batch, std::uint64_t trial_seed)>& objective) {
  if (trials < 1) raise(errc::invalid_bounds, "sweep: trials must be >= 1");
  if (!(bounds.lr_min > 0.0) || !(bounds.lr_min < bounds.lr_max))
    raise(errc::invalid_bounds, "sweep: need 0 < lr_min < lr_max");
  if (bounds.batch_choices.empty()) raise(errc::invalid_bounds, "sweep: no batch size choices");

  SweepResult result;
  result.notes =
      "log-uniform random search over learning rate and batch size; later even trials exploit a "
      "distance-weighted average of observed losses (stand-in for full Bayesian tuning)";

  std::mt19937_64 rng(derive_seed(seed, "sweep"));
  const double log_lo = std::log(bounds.lr_min);
  const double log_hi = std::log(bounds.lr_max);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto random_point = [&]() -> std::pair<double, int> {
    const double lr = std::exp(log_lo + (log_hi - log_lo) * u01(rng));
    const size_t bi = std::min(bounds.batch_choices.size() - 1,
                               static_cast<size_t>(u01(rng) * static_cast<double>(bounds.batch_choices.size())));
    return {lr, bounds.batch_choices[bi]};
  };

  auto predicted = [&](double lr, int batch) {
    // Inverse-distance-weighted mean of observed objectives in
    // (log lr, batch) space.
    double wsum = 0.0, vsum = 0.0;
    for (const auto& t : result.trials) {
      if (!std::isfinite(t.objective)) continue;
      const double dl = (std::log(t.learning_rate) - std::log(lr)) / (log_hi - log_lo);
      const double db = t.batch_size == batch ? 0.0 : 1.0;
      const double w = 1.0 / (1e-3 + dl * dl + db);
      wsum += w;
      vsum += w * t.objective;
    }
    return wsum > 0.0 ? vsum / wsum : std::numeric_limits<double>::infinity();
  };

  for (int t = 0; t < trials; ++t) {
    double lr;
    int batch;
    const bool exploit = t >= 4 && t % 2 == 0;
    if (exploit) {
      double best_pred = std::numeric_limits<double>::infinity();
      std::pair<double, int> best_point = random_point();
      for (int c = 0; c < 16; ++c) {
        const auto cand = random_point();
        const double p = predicted(cand.first, cand.second);
        if (p < best_pred) {
          best_pred = p;
          best_point = cand;
        }
      }
      lr = best_point.first;
      batch = best_point.second;
    } else {
      const auto point = random_point();
      lr = point.first;
      batch = point.second;
    }

    SweepTrial trial;
    trial.trial = t;
    trial.learning_rate = lr;
    trial.batch_size = batch;
    trial.seed = derive_seed(seed, 1000ULL + static_cast<std::uint64_t>(t));
    trial.objective = objective(lr, batch, trial.seed);
    result.trials.push_back(trial);

    if (std::isfinite(trial.objective) &&
        (result.best_trial < 0 || trial.objective < result.trials[static_cast<size_t>(result.best_trial)].objective))
      result.best_trial = t;
  }
  return result;
}

}  // namespace persona::train
