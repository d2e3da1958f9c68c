#pragma once

#include <iosfwd>
#include <vector>

#include "whiten/data.hpp"
#include "whiten/nn.hpp"

namespace whiten {

/// SGD hyperparameters plus the published plateau rules. A plateau event
/// (no validation-loss improvement beyond min_improve for plateau_patience
/// epochs) fires one action:
///   mnist rules: below the 2^11 cap, double the batch and scale the rate
///                by 3/4; at the cap, halve the rate.
///   svhn rules:  below the 2^10 cap, double the batch; at the cap, halve
///                the rate and drop momentum to 0.5.
struct SgdSchedule {
  double lr = 0.125;
  double momentum = 0.9;
  Index batch = 256;
  double weight_decay = 0.0;
  int plateau_patience = 2;
  double min_improve = 1e-4;
  DbKind rules = DbKind::Mnist;

  Index batch_cap() const { return rules == DbKind::Mnist ? 2048 : 1024; }
};

/// Running-covariance factor ramped linearly from start (epoch 0) to
/// end (final epoch), lengthening the average's memory as learning settles.
struct AlphaSchedule {
  double start = 0.9;
  double end = 0.99;

  double at(Index epoch, Index total_epochs) const {
    if (total_epochs <= 1) return start;
    const double t = static_cast<double>(epoch) / (total_epochs - 1);
    return start + (end - start) * t;
  }
};

struct EpochMetrics {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_error = 0.0;  // fraction in [0,1]
  Index batch = 0;
  double lr = 0.0;
  double alpha = 0.0;
};

struct TrainConfig {
  Index epochs = 5;
  std::uint64_t seed = 1;
  SgdSchedule sgd;
  AlphaSchedule alpha;
  DbKind db = DbKind::Mnist;
  bool augment = true;
  Index eval_batch = 500;
  std::ostream* log = nullptr;  // per-epoch progress lines when set
};

std::string metrics_csv_header();
std::string to_csv_row(const EpochMetrics& m);

/// Full-batch evaluation (eval phase, running statistics only); returns
/// (mean loss, error fraction).
std::pair<double, double> evaluate(Net& net, const Dataset& ds,
                                   Index eval_batch);

/// SGD with momentum over seeded shuffled batches, per-epoch validation,
/// plateau-rule updates and the alpha schedule. Deterministic for a fixed
/// (config, dataset): reruns produce bit-identical metric histories.
std::vector<EpochMetrics> train(Net& net, const Dataset& train_ds,
                                const Dataset& val_ds,
                                const TrainConfig& config);

}  // namespace whiten
