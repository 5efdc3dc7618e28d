#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "train/train.hpp"

namespace cxr {

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw UsageError("validation fraction must be in (0, 1)");
  }
  if (!(optimizer.lr > 0.0)) throw UsageError("learning rate must be positive");
  if (optimizer.kind == OptimizerKind::kAdam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw UsageError("adam betas must be in [0, 1)");
    }
    if (!(optimizer.epsilon > 0.0)) throw UsageError("adam epsilon must be positive");
  } else if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw UsageError("sgd momentum must be in [0, 1)");
  }
}

template <class T>
void Optimizer<T>::step(const std::vector<BasicParam<T>*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape(), T(0));
      if (cfg_.kind == OptimizerKind::kAdam) v_.emplace_back(p->value.shape(), T(0));
    }
  }
  if (m_.size() != params.size()) throw DimensionError("optimizer parameter list changed");
  ++t_;
  if (cfg_.kind == OptimizerKind::kSgd) {
    const T lr = static_cast<T>(cfg_.lr), mu = static_cast<T>(cfg_.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* w = params[i]->value.ptr();
      const T* g = params[i]->grad.ptr();
      T* v = m_[i].ptr();
      for (std::size_t k = 0, n = m_[i].size(); k < n; ++k) {
        v[k] = mu * v[k] + g[k];
        w[k] -= lr * v[k];
      }
    }
    return;
  }
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T eps = static_cast<T>(cfg_.epsilon);
  const double td = static_cast<double>(t_);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, td));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, td));
  const T lr = static_cast<T>(cfg_.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i]->value.ptr();
    const T* g = params[i]->grad.ptr();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    for (std::size_t k = 0, n = m_[i].size(); k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

std::vector<float> class_weights(const DatasetArchive& archive,
                                 std::span<const std::size_t> indices, ClassWeighting mode) {
  if (mode == ClassWeighting::kOff) return {};
  ClassCounts counts{};
  for (std::size_t i : indices) ++counts.at(archive.labels.at(i));
  std::vector<float> w(kNumClasses, 0.0f);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c]) {
      w[c] = static_cast<float>(static_cast<double>(indices.size()) /
                                (static_cast<double>(kNumClasses) * counts[c]));
    }
  }
  return w;
}

namespace {

int argmax_row(const Tensor& probs, std::size_t row) {
  const std::size_t k = probs.dim(1);
  const float* p = probs.ptr() + row * k;
  int best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (p[j] > p[best]) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace

Evaluation score_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("prediction and label counts differ");
  if (predicted.empty()) throw UsageError("cannot evaluate an empty index set");
  Evaluation e;
  e.count = predicted.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    ++e.confusion.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(predicted[i]));
    hits += predicted[i] == truth[i];
  }
  e.accuracy = static_cast<double>(hits) / static_cast<double>(e.count);
  return e;
}

Evaluation evaluate(const Network& net, const DatasetArchive& archive,
                    std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw UsageError("cannot evaluate an empty index set");
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  std::vector<int> predicted, truth;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor probs = net.predict(archive.batch(chunk));
    const std::vector<int> labels = archive.batch_labels(chunk);
    loss_sum += static_cast<double>(cross_entropy(probs, one_hot<float>(labels, kNumClasses))) *
                static_cast<double>(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) predicted.push_back(argmax_row(probs, i));
    truth.insert(truth.end(), labels.begin(), labels.end());
  }
  Evaluation e = score_predictions(predicted, truth);
  e.mean_loss = loss_sum / static_cast<double>(indices.size());
  return e;
}

History train(Network& net, const DatasetArchive& archive, const SplitPlan& plan,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (net.input_shape() != Shape{archive.channels, kImageSize, kImageSize}) {
    throw UsageError("archive has " + std::to_string(archive.channels) +
                     " channel(s) but the model expects input " + shape_str(net.input_shape()));
  }
  if (plan.train.empty()) throw UsageError("training split is empty");
  for (std::size_t i : plan.train) {
    if (i >= archive.size()) throw UsageError("split index out of range for archive");
  }
  for (std::size_t i : plan.val) {
    if (i >= archive.size()) throw UsageError("split index out of range for archive");
  }

  const std::vector<float> weights = class_weights(archive, plan.train, cfg.class_weighting);
  Optimizer<float> opt(cfg.optimizer);
  auto params = net.params();
  History history;
  std::vector<std::size_t> order = plan.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x5eed0000 + epoch));
    std::sort(order.begin(), order.end());
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> chunk(order.data() + start,
                                               std::min(cfg.batch_size, order.size() - start));
      const std::vector<int> labels = archive.batch_labels(chunk);
      const Tensor target = one_hot<float>(labels, kNumClasses);
      const Tensor probs = net.forward(archive.batch(chunk), Mode::kTrain);
      const float loss = cross_entropy(probs, target, weights);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kRuntime, "training diverged: non-finite loss at epoch " +
                                             std::to_string(epoch));
      }
      loss_sum += static_cast<double>(loss) * static_cast<double>(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i) hits += argmax_row(probs, i) == labels[i];
      net.zero_grads();
      net.backward_from_logits(cross_entropy_logit_grad(probs, target, weights));
      opt.step(params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(hits) / static_cast<double>(order.size());
    if (plan.val.empty()) {
      rec.val_loss = rec.val_acc = std::numeric_limits<double>::quiet_NaN();
    } else {
      const Evaluation ev = evaluate(net, archive, plan.val, cfg.batch_size);
      rec.val_loss = ev.mean_loss;
      rec.val_acc = ev.accuracy;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::string history_csv(const History& history) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out += line;
  }
  return out;
}

History parse_history_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,train_acc,val_loss,val_acc") {
    throw DataFormatError("history file has an unexpected header");
  }
  History h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf%c", &r.epoch, &r.train_loss, &r.train_acc,
                    &r.val_loss, &r.val_acc, &tail) != 5) {
      throw DataFormatError("malformed history row: " + line);
    }
    h.push_back(r);
  }
  return h;
}

void export_history(const History& history, const std::filesystem::path& path) {
  const std::string csv = history_csv(history);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

}  // namespace cxr
