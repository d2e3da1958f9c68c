#include "whiten/train.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

namespace whiten {

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Tensor4 assemble_batch(const Dataset& ds, const std::vector<Index>& idx,
                       DbKind db, bool do_augment, std::uint64_t seed) {
  Tensor4 out(static_cast<Index>(idx.size()), ds.channels, ds.height,
              ds.width);
  std::vector<double> img(ds.image_size());
  Rng rng(seed);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = ds.image(idx[i]);
    for (Index p = 0; p < ds.image_size(); ++p) img[p] = src[p];
    if (do_augment) augment(img, ds.height, ds.width, ds.channels, db, rng);
    // img layout is h*w*c; tensor wants c-major
    for (Index c = 0; c < ds.channels; ++c) {
      for (Index y = 0; y < ds.height; ++y) {
        for (Index x = 0; x < ds.width; ++x) {
          out.at(static_cast<Index>(i), c, y, x) =
              img[(y * ds.width + x) * ds.channels + c];
        }
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> gather_labels(const Dataset& ds,
                                        const std::vector<Index>& idx) {
  std::vector<std::uint8_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
  return out;
}

void apply_plateau_rule(SgdSchedule& sgd, Index train_count) {
  if (sgd.rules == DbKind::Mnist) {
    if (sgd.batch < sgd.batch_cap()) {
      sgd.batch = std::min({sgd.batch * 2, sgd.batch_cap(), train_count});
      sgd.lr *= 0.75;
    } else {
      sgd.lr *= 0.5;
    }
  } else {
    if (sgd.batch < sgd.batch_cap()) {
      sgd.batch = std::min({sgd.batch * 2, sgd.batch_cap(), train_count});
    } else {
      sgd.lr *= 0.5;
      sgd.momentum = 0.5;
    }
  }
}

}  // namespace

std::string metrics_csv_header() {
  return "epoch,phase,loss,error_rate,batch_size,lr,alpha";
}

std::string to_csv_row(const EpochMetrics& m) {
  std::ostringstream row;
  row << m.epoch << ",train," << fmt(m.train_loss) << ",,"
      << m.batch << ',' << fmt(m.lr) << ',' << fmt(m.alpha) << '\n';
  row << m.epoch << ",val," << fmt(m.val_loss) << ',' << fmt(m.val_error)
      << ',' << m.batch << ',' << fmt(m.lr) << ',' << fmt(m.alpha);
  return row.str();
}

std::pair<double, double> evaluate(Net& net, const Dataset& ds,
                                   Index eval_batch) {
  SoftmaxXent head;
  double loss_sum = 0.0;
  Index wrong = 0;
  Index done = 0;
  while (done < ds.count) {
    Index n = std::min(eval_batch, ds.count - done);
    // whitening layers center each eval batch, so avoid a trailing singleton
    if (ds.count - done - n == 0 && n == 1) n = 2;
    std::vector<Index> idx(n);
    std::iota(idx.begin(), idx.end(), done);
    Tensor4 images = assemble_batch(ds, idx, DbKind::Mnist, false, 0);
    std::vector<std::uint8_t> labels = gather_labels(ds, idx);
    Tensor4 logits = net.forward(images, Phase::Eval);
    loss_sum += head.forward(logits, labels) * n;
    const Matrix& probs = head.probs();
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      probs.col(i).maxCoeff(&best);
      if (best != labels[i]) ++wrong;
    }
    done += n;
  }
  return {loss_sum / ds.count, static_cast<double>(wrong) / ds.count};
}

std::vector<EpochMetrics> train(Net& net, const Dataset& train_ds,
                                const Dataset& val_ds,
                                const TrainConfig& config) {
  if (train_ds.count < 2) throw DataError("train: empty training set");
  SgdSchedule sgd = config.sgd;
  sgd.batch = std::min(sgd.batch, train_ds.count);

  auto params = net.params();
  std::vector<Vector> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = Vector::Zero(params[i].value->size());
  }

  std::vector<EpochMetrics> history;
  double best_val = std::numeric_limits<double>::infinity();
  int stall = 0;

  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const double alpha = config.alpha.at(epoch, config.epochs);
    for (auto* wb : net.whiten_blocks()) wb->set_alpha(alpha);

    SoftmaxXent head;
    double loss_sum = 0.0;
    Index seen = 0;
    auto batches =
        make_batches(train_ds.count, sgd.batch, config.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::uint64_t stream =
          0xa06'0000'0000ULL +
          (static_cast<std::uint64_t>(epoch) << 20) + bi;
      Tensor4 images = assemble_batch(train_ds, batches[bi], config.db,
                                      config.augment,
                                      derive_seed(config.seed, stream));
      std::vector<std::uint8_t> labels = gather_labels(train_ds, batches[bi]);
      Tensor4 logits = net.forward(images, Phase::Train);
      const double loss = head.forward(logits, labels);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(bi));
      }
      net.backward(head.backward());

      // momentum update: v <- mom v - lr g; p <- p + v
      params = net.params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        Vector& v = velocity[i];
        const Vector& g = *params[i].grad;
        Vector& p = *params[i].value;
        if (sgd.weight_decay != 0.0) {
          v = sgd.momentum * v - sgd.lr * (g + sgd.weight_decay * p);
        } else {
          v = sgd.momentum * v - sgd.lr * g;
        }
        p += v;
      }
      loss_sum += loss * static_cast<double>(batches[bi].size());
      seen += static_cast<Index>(batches[bi].size());
    }

    auto [val_loss, val_error] = evaluate(net, val_ds, config.eval_batch);

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = seen > 0 ? loss_sum / seen : 0.0;
    m.val_loss = val_loss;
    m.val_error = val_error;
    m.batch = sgd.batch;
    m.lr = sgd.lr;
    m.alpha = alpha;
    history.push_back(m);
    if (config.log) {
      (*config.log) << "epoch " << epoch << " train_loss " << m.train_loss
                    << " val_loss " << val_loss << " val_error " << val_error
                    << " batch " << sgd.batch << " lr " << sgd.lr << '\n';
    }

    if (val_loss < best_val - sgd.min_improve) {
      best_val = val_loss;
      stall = 0;
    } else {
      if (++stall >= sgd.plateau_patience) {
        apply_plateau_rule(sgd, train_ds.count);
        stall = 0;
      }
    }
  }
  return history;
}

}  // namespace whiten
