#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "nn/network.hpp"

namespace cxr {

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;  // sgd only
};

enum class ClassWeighting { kOff, kInverseFrequency };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 120;
  double val_fraction = 0.2;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  ClassWeighting class_weighting = ClassWeighting::kOff;
  bool stratified = false;

  // Throws UsageError on out-of-range fields.
  void validate() const;
};

// Adam with bias-corrected moments, or SGD with heavy-ball momentum
// (v = mu*v + g; w -= lr*v). State is allocated lazily on the first step and
// tied to the order of the parameter list.
template <class T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  void step(const std::vector<BasicParam<T>*>& params);
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<BasicTensor<T>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
};

using History = std::vector<EpochRecord>;

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct Evaluation {
  std::size_t count = 0;
  double accuracy = 0;
  double mean_loss = 0;
  Confusion confusion{};  // rows: true class, columns: predicted
};

// Inverse-frequency weights N / (K * n_c) over the given indices; classes
// absent from the set get weight 0. kOff returns an empty vector.
std::vector<float> class_weights(const DatasetArchive& archive,
                                 std::span<const std::size_t> indices,
                                 ClassWeighting mode);

// Inference-mode pass over `indices` in chunks of `batch_size`.
Evaluation evaluate(const Network& net, const DatasetArchive& archive,
                    std::span<const std::size_t> indices, std::size_t batch_size = 120);

// Accuracy and confusion from already computed predictions.
Evaluation score_predictions(std::span<const int> predicted, std::span<const int> truth);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch training: each epoch reshuffles the train indices with a seed
// derived from (cfg.seed, epoch), trains on every batch including the final
// partial one, then validates in inference mode. Validation metrics are NaN
// when plan.val is empty.
History train(Network& net, const DatasetArchive& archive, const SplitPlan& plan,
              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// CSV with header epoch,train_loss,train_acc,val_loss,val_acc and LF endings.
std::string history_csv(const History& history);
History parse_history_csv(const std::string& text);
void export_history(const History& history, const std::filesystem::path& path);

}  // namespace cxr
