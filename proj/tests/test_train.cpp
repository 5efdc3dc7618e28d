#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "core/error.hpp"
#include "data/dataset.hpp"
#include "models/model.hpp"
#include "train/train.hpp"
#include "support.hpp"

using namespace cxr;

namespace {

OptimizerConfig adam(double lr) {
  OptimizerConfig c;
  c.lr = lr;
  return c;
}

OptimizerConfig sgd(double lr, double mu) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kSgd;
  c.lr = lr;
  c.momentum = mu;
  return c;
}

Model small_model(std::uint64_t seed, WidthMult wm = {1, 4}) {
  return make_model(build_custom_cnn(1, wm), seed);
}

std::vector<float> snapshot(Network& net) {
  std::vector<float> out;
  for (auto& [name, t] : net.tensors()) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_SUITE("train.optimizer") {
  TEST_CASE("zero gradient leaves parameters in place") {
    for (const auto& cfg : {adam(1e-3), sgd(0.01, 0.9)}) {
      BasicParam<double> p(cxr_test::random_tensor<double>({4, 3}, 1));
      const auto before = p.value;
      Optimizer<double> opt(cfg);
      for (int i = 0; i < 5; ++i) opt.step({&p});
      CHECK(cxr_test::max_abs_diff(p.value, before) <= 1e-12);
    }
  }

  TEST_CASE("first adam step moves each coordinate by about lr") {
    const double lr = 1e-3;
    BasicParam<double> p(BasicTensor<double>({5}, 0.5));
    const std::vector<double> g = {1e-3, 0.2, -3.0, 50.0, -1e-2};
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] = g[i];
    Optimizer<double> opt(adam(lr));
    opt.step({&p});
    CHECK(opt.steps() == 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double delta = p.value[i] - 0.5;
      CHECK(std::abs(std::abs(delta) - lr) <= 1e-6 * lr / std::abs(g[i]) + 1e-9);
      CHECK((delta < 0) == (g[i] > 0));
    }
  }

  TEST_CASE("adam solves a one-dimensional quadratic") {
    BasicParam<double> w(BasicTensor<double>({1}, 0.0));
    Optimizer<double> opt(adam(0.1));
    for (int i = 0; i < 200; ++i) {
      w.grad[0] = 2.0 * (w.value[0] - 3.0);
      opt.step({&w});
    }
    CHECK(std::abs(w.value[0] - 3.0) < 0.1);
  }

  TEST_CASE("adam matches the bias-corrected recurrence") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    BasicParam<double> p(BasicTensor<double>({1}, 1.0));
    Optimizer<double> opt(adam(lr));
    double w = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 20; ++t) {
      const double g = std::sin(t) * 2.0 + w;
      p.grad[0] = g;
      opt.step({&p});
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      w -= lr * mh / (std::sqrt(vh) + eps);
      CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-10));
    }
  }

  TEST_CASE("sgd heavy-ball recurrence") {
    const double lr = 0.1, mu = 0.5;
    BasicParam<double> p(BasicTensor<double>({1}, 2.0));
    Optimizer<double> opt(sgd(lr, mu));
    double w = 2.0, vel = 0;
    for (int t = 0; t < 10; ++t) {
      p.grad[0] = 2.0 * w;
      opt.step({&p});
      vel = mu * vel + 2.0 * w;
      w -= lr * vel;
      CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));
    }
  }

  TEST_CASE("parameter list must stay the same") {
    BasicParam<double> a(BasicTensor<double>({1}, 0.0)), b(BasicTensor<double>({1}, 0.0));
    Optimizer<double> opt(adam(1e-3));
    opt.step({&a});
    CHECK_THROWS_AS(opt.step({&a, &b}), DimensionError);
  }

  TEST_CASE("config validation") {
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
    auto bad = [](auto mutate) {
      TrainConfig c;
      mutate(c);
      CHECK_THROWS_AS(c.validate(), UsageError);
    };
    bad([](TrainConfig& c) { c.epochs = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.val_fraction = 1.0; });
    bad([](TrainConfig& c) { c.val_fraction = 0.0; });
    bad([](TrainConfig& c) { c.optimizer.lr = 0.0; });
    bad([](TrainConfig& c) { c.optimizer.beta1 = 1.0; });
    bad([](TrainConfig& c) { c.optimizer.epsilon = 0.0; });
    bad([](TrainConfig& c) {
      c.optimizer.kind = OptimizerKind::kSgd;
      c.optimizer.momentum = 1.0;
    });
  }

  TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.epochs == 10);
    CHECK(c.batch_size == 120);
    CHECK(c.val_fraction == 0.2);
    CHECK(c.optimizer.kind == OptimizerKind::kAdam);
    CHECK(c.optimizer.lr == 1e-3);
    CHECK(c.optimizer.beta1 == 0.9);
    CHECK(c.optimizer.beta2 == 0.999);
    CHECK(c.optimizer.epsilon == 1e-8);
  }
}

TEST_SUITE("train.evaluate") {
  TEST_CASE("perfect predictor") {
    const std::vector<int> truth = {0, 1, 2, 2, 1, 0, 1};
    const Evaluation e = score_predictions(truth, truth);
    CHECK(e.accuracy == 1.0);
    CHECK(e.count == truth.size());
    for (std::size_t i = 0; i < kNumClasses; ++i)
      for (std::size_t j = 0; j < kNumClasses; ++j)
        if (i != j) CHECK(e.confusion[i][j] == 0);
    CHECK(e.confusion[0][0] == 2);
    CHECK(e.confusion[1][1] == 3);
    CHECK(e.confusion[2][2] == 2);
  }

  TEST_CASE("accuracy is trace over total") {
    std::mt19937 gen(3);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int round = 0; round < 10; ++round) {
      std::vector<int> p(97), t(97);
      for (auto& v : p) v = cls(gen);
      for (auto& v : t) v = cls(gen);
      const Evaluation e = score_predictions(p, t);
      std::size_t trace = 0, total = 0, hits = 0;
      for (std::size_t i = 0; i < kNumClasses; ++i)
        for (std::size_t j = 0; j < kNumClasses; ++j) {
          total += e.confusion[i][j];
          if (i == j) trace += e.confusion[i][j];
        }
      for (std::size_t i = 0; i < p.size(); ++i) hits += p[i] == t[i];
      CHECK(total == p.size());
      CHECK(trace == hits);
      CHECK(e.accuracy == doctest::Approx(double(trace) / double(total)));
    }
  }

  TEST_CASE("majority answer on the reference distribution") {
    std::vector<int> truth;
    for (std::size_t c = 0; c < kNumClasses; ++c) truth.insert(truth.end(), kReferenceCorpusCounts[c], int(c));
    const std::vector<int> always_pneumonia(truth.size(), 1);
    const Evaluation e = score_predictions(always_pneumonia, truth);
    CHECK(e.accuracy == doctest::Approx(4273.0 / 6656.0));
    CHECK(e.accuracy == doctest::Approx(majority_baseline(kReferenceCorpusCounts)));
  }

  TEST_CASE("score errors") {
    const std::vector<int> a = {0, 1}, b = {0};
    CHECK_THROWS_AS(score_predictions(a, b), DimensionError);
    CHECK_THROWS_AS(score_predictions(std::vector<int>{}, std::vector<int>{}), UsageError);
  }

  TEST_CASE("evaluate matches manual argmax and leaves the network alone") {
    const DatasetArchive ds = synthesize_dataset(7, 5, 1);
    Model m = small_model(2);
    const auto before = snapshot(m.net);
    const auto idx = all_indices(ds.size());
    const Evaluation e = evaluate(m.net, ds, idx, 4);
    CHECK(snapshot(m.net) == before);

    const Tensor probs = m.net.predict(ds.batch(idx));
    const auto labels = ds.batch_labels(idx);
    std::size_t hits = 0;
    double loss = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < kNumClasses; ++j)
        if (probs.at({i, j}) > probs.at({i, best})) best = j;
      hits += int(best) == labels[i];
      loss -= std::log(std::max(double(probs.at({i, std::size_t(labels[i])})), 1e-12));
    }
    CHECK(e.count == idx.size());
    CHECK(e.accuracy == doctest::Approx(double(hits) / double(idx.size())));
    CHECK(e.mean_loss == doctest::Approx(loss / double(idx.size())).epsilon(1e-4));
    // chunking does not change the answer
    const Evaluation whole = evaluate(m.net, ds, idx, 1000);
    CHECK(whole.accuracy == e.accuracy);
    CHECK(whole.confusion == e.confusion);
    CHECK_THROWS_AS(evaluate(m.net, ds, std::vector<std::size_t>{}), UsageError);
    CHECK_THROWS_AS(evaluate(m.net, ds, idx, 0), UsageError);
  }
}

TEST_SUITE("train.weights") {
  TEST_CASE("balanced set gives unit weights") {
    const DatasetArchive ds = synthesize_dataset(4, 1, 1);
    const auto idx = all_indices(ds.size());
    const auto w = class_weights(ds, idx, ClassWeighting::kInverseFrequency);
    REQUIRE(w.size() == kNumClasses);
    for (float v : w) CHECK(v == doctest::Approx(1.0));
    CHECK(class_weights(ds, idx, ClassWeighting::kOff).empty());
  }

  TEST_CASE("inverse frequency on a skewed subset") {
    const DatasetArchive ds = synthesize_dataset(10, 1, 1);
    // labels are i % 3; take 6 Normal, 3 Pneumonia, no Tuberculosis
    std::vector<std::size_t> idx = {0, 3, 6, 9, 12, 15, 1, 4, 7};
    const auto w = class_weights(ds, idx, ClassWeighting::kInverseFrequency);
    CHECK(w[0] == doctest::Approx(9.0 / (3 * 6)));
    CHECK(w[1] == doctest::Approx(9.0 / (3 * 3)));
    CHECK(w[2] == 0.0f);
  }

  TEST_CASE("uniform weighting trains exactly like no weighting") {
    const DatasetArchive ds = synthesize_dataset(8, 2, 1);
    const SplitPlan plan = make_split(ds.labels, 0.25, 4, true);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 6;
    cfg.stratified = true;
    cfg.val_fraction = 0.25;
    REQUIRE(ds.class_counts() == ClassCounts{8, 8, 8});
    Model a = small_model(9), b = small_model(9);
    const History ha = train(a.net, ds, plan, cfg);
    cfg.class_weighting = ClassWeighting::kInverseFrequency;
    const History hb = train(b.net, ds, plan, cfg);
    // stratified split of a balanced set keeps the train set balanced
    for (float v : class_weights(ds, plan.train, ClassWeighting::kInverseFrequency))
      REQUIRE(v == doctest::Approx(1.0));
    REQUIRE(ha.size() == hb.size());
    for (std::size_t e = 0; e < ha.size(); ++e) {
      CHECK(ha[e].train_loss == doctest::Approx(hb[e].train_loss).epsilon(1e-5));
      CHECK(ha[e].val_acc == hb[e].val_acc);
    }
  }
}

TEST_SUITE("train.history") {
  TEST_CASE("csv shape and roundtrip") {
    History h;
    for (std::size_t e = 1; e <= 10; ++e) {
      h.push_back({e, 1.0 / double(e) + 1e-7, 0.5 + 0.01 * double(e), 0.123456789 * double(e), 0.3});
    }
    const std::string csv = history_csv(h);
    CHECK(csv.find('\r') == std::string::npos);
    std::istringstream in(csv);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    REQUIRE(lines.size() == 11);
    CHECK(lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc");
    for (std::size_t i = 1; i <= 10; ++i) CHECK(lines[i].substr(0, lines[i].find(',')) == std::to_string(i));

    const History back = parse_history_csv(csv);
    REQUIRE(back.size() == h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      CHECK(back[i].epoch == h[i].epoch);
      CHECK(std::abs(back[i].train_loss - h[i].train_loss) <= 1e-6);
      CHECK(std::abs(back[i].train_acc - h[i].train_acc) <= 1e-6);
      CHECK(std::abs(back[i].val_loss - h[i].val_loss) <= 1e-6);
      CHECK(std::abs(back[i].val_acc - h[i].val_acc) <= 1e-6);
    }

    cxr_test::TempDir dir("hist");
    export_history(h, dir / "h.csv");
    std::ifstream f(dir / "h.csv", std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(ss.str() == csv);
  }

  TEST_CASE("malformed csv") {
    CHECK_THROWS_AS(parse_history_csv("epoch,loss\n1,2\n"), DataFormatError);
    CHECK_THROWS_AS(parse_history_csv("epoch,train_loss,train_acc,val_loss,val_acc\n1,x,0,0,0\n"),
                    DataFormatError);
    CHECK_THROWS_AS(parse_history_csv("epoch,train_loss,train_acc,val_loss,val_acc\n1,0.5\n"),
                    DataFormatError);
  }
}

TEST_SUITE("train.loop") {
  TEST_CASE("one record per epoch, callback in order, metrics in range") {
    const DatasetArchive ds = synthesize_dataset(10, 3, 1);
    const SplitPlan plan = make_split(ds.labels, 0.2, 1);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 7;  // leaves a partial final batch
    Model m = small_model(1);
    std::vector<std::size_t> seen;
    const History h = train(m.net, ds, plan, cfg, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
    REQUIRE(h.size() == 4);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
    for (const auto& r : h) {
      CHECK(std::isfinite(r.train_loss));
      CHECK(r.train_loss >= 0);
      CHECK(r.train_acc >= 0);
      CHECK(r.train_acc <= 1);
      CHECK(r.val_acc >= 0);
      CHECK(r.val_acc <= 1);
    }
  }

  TEST_CASE("validation metrics agree with a separate evaluation") {
    const DatasetArchive ds = synthesize_dataset(10, 3, 1);
    const SplitPlan plan = make_split(ds.labels, 0.2, 1);
    TrainConfig cfg;
    cfg.epochs = 2;
    Model m = small_model(1);
    const History h = train(m.net, ds, plan, cfg);
    const auto before = snapshot(m.net);
    const Evaluation e = evaluate(m.net, ds, plan.val);
    CHECK(snapshot(m.net) == before);
    CHECK(h.back().val_acc == doctest::Approx(e.accuracy));
    CHECK(h.back().val_loss == doctest::Approx(e.mean_loss).epsilon(1e-5));
  }

  TEST_CASE("empty validation split gives NaN validation metrics") {
    const DatasetArchive ds = synthesize_dataset(3, 3, 1);
    SplitPlan plan;
    plan.train = all_indices(ds.size());
    TrainConfig cfg;
    cfg.epochs = 1;
    Model m = small_model(1);
    const History h = train(m.net, ds, plan, cfg);
    CHECK(std::isnan(h[0].val_loss));
    CHECK(std::isnan(h[0].val_acc));
  }

  TEST_CASE("training is bit-reproducible") {
    const DatasetArchive ds = synthesize_dataset(8, 6, 1);
    const SplitPlan plan = make_split(ds.labels, 0.2, 6);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 10;
    cfg.seed = 6;
    Model a = small_model(6), b = small_model(6);
    const History ha = train(a.net, ds, plan, cfg), hb = train(b.net, ds, plan, cfg);
    CHECK(history_csv(ha) == history_csv(hb));
    CHECK(serialize_model(a) == serialize_model(b));
  }

  TEST_CASE("errors") {
    const DatasetArchive ds = synthesize_dataset(3, 3, 1);
    const DatasetArchive rgb = synthesize_dataset(3, 3, 3);
    const SplitPlan plan = make_split(ds.labels, 0.2, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    Model m = small_model(1);
    CHECK_THROWS_AS(train(m.net, rgb, plan, cfg), UsageError);
    SplitPlan empty;
    empty.val = all_indices(ds.size());
    CHECK_THROWS_AS(train(m.net, ds, empty, cfg), UsageError);
    SplitPlan out_of_range;
    out_of_range.train = {ds.size()};
    CHECK_THROWS_AS(train(m.net, ds, out_of_range, cfg), UsageError);
  }

  TEST_CASE("shuffled labels stay at chance after one epoch") {
    DatasetArchive ds = synthesize_dataset(300, 11, 1);
    std::mt19937 gen(11);
    std::shuffle(ds.labels.begin(), ds.labels.end(), gen);
    const SplitPlan plan = make_split(ds.labels, 0.2, 11);
    TrainConfig cfg;
    cfg.epochs = 1;
    Model m = small_model(11);
    const History h = train(m.net, ds, plan, cfg);
    CHECK(std::abs(h[0].train_acc - 1.0 / 3.0) <= 0.06);
  }

  TEST_CASE("full-batch loss is non-increasing after epoch 3 on a tiny set") {
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const DatasetArchive ds = synthesize_dataset(20, seed, 1);
      const SplitPlan plan = make_split(ds.labels, 0.2, seed);
      TrainConfig cfg;
      cfg.epochs = 12;
      cfg.seed = seed;
      Model m = small_model(seed);
      const History h = train(m.net, ds, plan, cfg);
      bool ok = true;
      for (std::size_t e = 3; e < h.size(); ++e) ok = ok && h[e].train_loss <= h[e - 1].train_loss;
      monotone += ok;
    }
    CHECK(monotone >= 9);
  }
}
