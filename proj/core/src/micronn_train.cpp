#include <cmath>
#include <sstream>

#include "compactnet/errors.hpp"
#include "compactnet/micronn.hpp"
#include "compactnet/rng.hpp"

namespace compactnet {

void TrainConfig::check() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must be in (0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(rmsprop_rho >= 0.0 && rmsprop_rho < 1.0)) {
    throw ConfigError("rmsprop_rho must be in [0, 1)");
  }
  if (!(rmsprop_eps > 0.0)) throw ConfigError("rmsprop_eps must be > 0");
}

TrainConfig finetune_full_preset() {
  TrainConfig cfg;
  cfg.learning_rate = 0.001;
  cfg.decay = 0.9;
  cfg.epochs = 30;
  cfg.batch_size = 96;
  return cfg;
}

TrainConfig retrain_full_preset() {
  TrainConfig cfg;
  cfg.learning_rate = 0.0001;
  cfg.decay = 0.95;
  cfg.epochs = 500;
  cfg.batch_size = 96;
  return cfg;
}

TrainConfig finetune_desk_preset() {
  TrainConfig cfg = finetune_full_preset();
  cfg.epochs = 5;
  return cfg;
}

TrainConfig retrain_desk_preset() {
  TrainConfig cfg = retrain_full_preset();
  cfg.epochs = 40;
  return cfg;
}

TrainConfig pretrain_desk_preset() {
  TrainConfig cfg;
  cfg.learning_rate = 0.002;
  cfg.decay = 0.9;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  return cfg;
}

namespace {

bool all_finite(const Gradients& grads) {
  for (const LayerParams& layer : grads) {
    for (const Tensor& t : layer.tensors) {
      for (double v : t.values) {
        if (!std::isfinite(v)) return false;
      }
    }
  }
  return true;
}

}  // namespace

TrainResult train(Model model, const Dataset& train_set, const Dataset& val,
                  const TrainConfig& cfg) {
  cfg.check();
  check_model(model);
  if (train_set.size() == 0) throw ConfigError("training set is empty");

  // RMSProp mean-square accumulators, one per weight.
  Gradients mean_square(model.layers.size());
  for (size_t j = 0; j < model.layers.size(); ++j) {
    for (const Tensor& t : model.layers[j].tensors) {
      mean_square[j].tensors.emplace_back(t.shape);
    }
  }

  const size_t n = train_set.size();
  std::vector<size_t> order(n);
  std::vector<double> batch_images;
  std::vector<int> batch_labels;
  Gradients grads;

  TrainResult result;
  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffler(derive_seed({cfg.seed, static_cast<uint64_t>(epoch)}));
    for (size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[shuffler.below(i + 1)]);
    }

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(n, start + static_cast<size_t>(cfg.batch_size));
      batch_images.clear();
      batch_labels.clear();
      for (size_t i = start; i < end; ++i) {
        const auto image = train_set.image(order[i]);
        batch_images.insert(batch_images.end(), image.begin(), image.end());
        batch_labels.push_back(train_set.labels[order[i]]);
      }
      const double loss =
          loss_and_gradients(model, batch_images, batch_labels, grads);
      if (!std::isfinite(loss) || !all_finite(grads)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batches
            << " (loss " << loss << ", lr " << lr << ")";
        throw TrainingDiverged(msg.str(), epoch, batches);
      }
      const double rho = cfg.rmsprop_rho;
      for (size_t j = 0; j < model.layers.size(); ++j) {
        auto& weights = model.layers[j].tensors;
        for (size_t t = 0; t < weights.size(); ++t) {
          auto& w = weights[t].values;
          const auto& g = grads[j].tensors[t].values;
          auto& a = mean_square[j].tensors[t].values;
          for (size_t i = 0; i < w.size(); ++i) {
            a[i] = rho * a[i] + (1.0 - rho) * g[i] * g[i];
            w[i] -= lr * g[i] / std::sqrt(a[i] + cfg.rmsprop_eps);
          }
        }
      }
      loss_sum += loss;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = lr;
    stats.train_loss = loss_sum / batches;
    stats.val_accuracy = val.size() > 0 ? evaluate(model, val) : 0.0;
    result.history.push_back(stats);
    lr *= cfg.decay;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace compactnet
