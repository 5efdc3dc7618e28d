// Acceptance gate: one PASS/FAIL line per primary criterion, exit status 1
// when any of them fails.
#include <httplib.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "core/error.hpp"
#include "data/dataset.hpp"
#include "models/model.hpp"
#include "nn/network.hpp"
#include "nn/ops.hpp"
#include "serve/predictor.hpp"
#include "serve/server.hpp"
#include "train/train.hpp"
#include "verify/verify.hpp"

using namespace cxr;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void line(const std::string& verdict, const std::string& name, const std::string& detail) {
  std::cout << verdict << "  " << name << ": " << detail << std::endl;
}

void verdict(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  line(ok ? "PASS" : "FAIL", name, detail);
}

// Runs a criterion body; an escaping exception counts as a failure.
void criterion(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    verdict(false, name, std::string("exception: ") + e.what());
  }
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

struct Run {
  int code = -1;
  std::string out;
};

Run cxr(const std::string& args) {
  const std::string cmd = std::string(CXR_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("cannot run " + cmd);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

void must(const Run& r, const std::string& what) {
  if (r.code != 0) throw std::runtime_error(what + " exited with " + std::to_string(r.code));
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

// Direct cross-correlation in double precision.
std::vector<double> direct_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride,
                                std::size_t pad, std::size_t oh, std::size_t ow) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  std::vector<double> out(n * f * oh * ow);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long sy = long(y * stride + dy) - long(pad);
                const long sx = long(xx * stride + dx) - long(pad);
                if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(w)) continue;
                s += double(x.at({i, ch, std::size_t(sy), std::size_t(sx)})) *
                     double(k.at({o, ch, dy, dx}));
              }
          out[((i * f + o) * oh + y) * ow + xx] = s;
        }
  return out;
}

Tensor uniform(Shape s, std::mt19937& gen) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = d(gen);
  return t;
}

void gradients() {
  const auto start = Clock::now();
  double worst32 = 0, worst64 = 0;
  std::size_t n32 = 0, n64 = 0;
  bool ok = true;
  bool saw_net = false;
  for (const CheckResult& r : run_verification(VerifyLevel::kFast)) {
    if (r.name.rfind("grad/", 0) != 0) continue;
    const bool wide = r.name.ends_with("/f64");
    const double tol = wide ? 1e-4 : 1e-2;
    ok = ok && r.value <= tol;
    saw_net = saw_net || r.name.find("net_custom_cnn") != std::string::npos;
    if (wide) {
      worst64 = std::max(worst64, r.value);
      ++n64;
    } else {
      worst32 = std::max(worst32, r.value);
      ++n32;
    }
  }
  const double secs = seconds_since(start);
  verdict(ok && saw_net && secs < 120.0, "gradient correctness",
          "worst f32 " + fmt(worst32) + " <= 1e-2 over " + std::to_string(n32) + " checks, worst f64 " +
              fmt(worst64) + " <= 1e-4 over " + std::to_string(n64) + " checks, 5 seeds each, " +
              fmt(secs, 3) + " s < 120 s");
}

void conv_oracle() {
  std::mt19937 gen(424242);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
  };
  struct Case {
    std::size_t n, c, h, w, f, k, stride, pad;
  };
  std::vector<Case> cases = {
      {1, 1, 90, 90, 32, 3, 1, 0},   // first block of the custom network
      {2, 16, 10, 10, 8, 1, 1, 0},   // inception 1x1 branch
      {2, 16, 10, 10, 8, 3, 1, 1},   // inception 3x3 branch
      {2, 16, 10, 10, 4, 5, 1, 2},   // inception 5x5 branch
  };
  const std::size_t kernels[3] = {1, 3, 5};
  while (cases.size() < 50) {
    Case c{};
    c.k = kernels[cases.size() % 3];
    c.n = pick(1, 3);
    c.c = pick(1, 5);
    c.f = pick(1, 6);
    c.stride = pick(1, 3);
    c.pad = pick(0, 1) ? (c.k - 1) / 2 : 0;
    c.h = c.k + pick(0, 14);
    c.w = c.k + pick(0, 14);
    cases.push_back(c);
  }
  double worst = 0;
  for (const Case& c : cases) {
    const Tensor x = uniform({c.n, c.c, c.h, c.w}, gen);
    Param k(uniform({c.f, c.c, c.k, c.k}, gen));
    Param b(uniform({c.f}, gen));
    const Tensor got = conv2d_forward(x, k, b, {c.stride, c.pad});
    const std::size_t oh = (c.h + 2 * c.pad - c.k) / c.stride + 1;
    const std::size_t ow = (c.w + 2 * c.pad - c.k) / c.stride + 1;
    if (got.shape() != Shape{c.n, c.f, oh, ow}) throw std::runtime_error("conv output shape " + shape_str(got.shape()));
    const auto ref = direct_conv(x, k.value, b.value, c.stride, c.pad, oh, ow);
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      diff = std::max(diff, std::abs(double(got[i]) - ref[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-30));
  }
  verdict(worst <= 1e-4, "conv oracle equivalence",
          "max relative error " + fmt(worst) + " <= 1e-4 over " + std::to_string(cases.size()) +
              " cases with 1x1/3x3/5x5 kernels");
}

void shape_traces() {
  std::vector<std::string> problems;

  const ModelSpec custom = build_custom_cnn(1);
  Network cnet(custom.layers, custom.input_shape());
  std::size_t flat = 0;
  for (std::size_t i = 0; i < cnet.num_layers(); ++i)
    if (std::holds_alternative<FlattenSpec>(custom.layers[i])) flat = cnet.layer(i).output_shape()[0];
  if (flat != 10368) problems.push_back("custom flatten " + std::to_string(flat));
  cnet.initialize(1);
  if (cnet.predict(Tensor({1, 1, 90, 90})).shape() != Shape{1, 3}) problems.push_back("custom output");

  const ModelSpec vgg = build_vgg16_style(1);
  Network vnet(vgg.layers, vgg.input_shape());
  std::vector<std::size_t> trace = {90};
  for (std::size_t i = 0; i < vnet.num_layers(); ++i)
    if (std::holds_alternative<MaxPool2dSpec>(vgg.layers[i])) trace.push_back(vnet.layer(i).output_shape()[1]);
  if (trace != std::vector<std::size_t>{90, 45, 22, 11, 5, 2}) problems.push_back("vgg trace");
  std::string trace_text;
  for (std::size_t t : trace) trace_text += (trace_text.empty() ? "" : "->") + std::to_string(t);

  const ModelSpec inc = build_inception_small(1);
  Network inet(inc.layers, inc.input_shape());
  std::size_t blocks = 0;
  Shape in = inc.input_shape();
  for (std::size_t i = 0; i < inet.num_layers(); ++i) {
    const Shape out = inet.layer(i).output_shape();
    if (const auto* s = std::get_if<InceptionSpec>(&inc.layers[i])) {
      ++blocks;
      if (out[1] != in[1] || out[2] != in[2] || out[0] != s->b1 + s->b3 + s->b5 + s->bpool)
        problems.push_back("inception block " + std::to_string(blocks));
      // run the block alone on real data to confirm the declared shape
      BasicNetwork<float> block({*s}, in);
      block.initialize(3);
      std::mt19937 gen(3);
      Shape batch_shape = {2};
      batch_shape.insert(batch_shape.end(), in.begin(), in.end());
      const Tensor y = block.predict(uniform(batch_shape, gen));
      if (y.shape() != Shape{2, out[0], out[1], out[2]}) problems.push_back("inception forward");
    }
    in = out;
  }
  if (blocks == 0) problems.push_back("no inception blocks");

  std::string detail = "custom flatten " + std::to_string(flat) + ", vgg pools " + trace_text + ", " +
                       std::to_string(blocks) + " inception blocks keep H,W and sum branch channels";
  for (const auto& p : problems) detail += "; mismatch: " + p;
  verdict(problems.empty(), "architecture shape traces", detail);
}

struct Paths {
  fs::path root;
  fs::path operator/(const std::string& s) const { return root / s; }
};

History read_history(const fs::path& p) { return parse_history_csv(slurp(p)); }

void default_regime(const Paths& dir) {
  const auto start = Clock::now();
  must(cxr("--quiet synth --out " + (dir / "default.cxra").string() + " --per-class 400"), "synth");
  must(cxr("--quiet train --data " + (dir / "default.cxra").string() + " --out " + (dir / "default.cxrm").string() +
           " --history " + (dir / "default.csv").string()),
       "train");
  const double secs = seconds_since(start);
  const History h = read_history(dir / "default.csv");
  const EpochRecord& last = h.back();
  const bool ok = h.size() == 10 && last.val_acc >= 0.90 && last.train_acc >= 0.95 && secs < 600.0;
  verdict(ok, "default-configuration training",
          std::to_string(h.size()) + " epochs, batch 120, val 0.2: final val_acc " + fmt(last.val_acc) +
              " >= 0.90, train_acc " + fmt(last.train_acc) + " >= 0.95, " + fmt(secs, 3) + " s < 600 s");
}

void overfit(const Paths& dir) {
  must(cxr("--quiet synth --out " + (dir / "tiny.cxra").string() + " --per-class 20 --seed 5"), "synth");
  must(cxr("--quiet train --data " + (dir / "tiny.cxra").string() + " --out " + (dir / "tiny.cxrm").string() +
           " --epochs 30 --history " + (dir / "tiny.csv").string()),
       "train");
  const History h = read_history(dir / "tiny.csv");
  std::size_t reached = 0;
  double best = 0;
  for (const auto& r : h) {
    best = std::max(best, r.train_acc);
    if (!reached && r.train_acc >= 0.99) reached = r.epoch;
  }
  verdict(reached != 0 && reached <= 30, "overfit sanity",
          "60 samples: train_acc >= 0.99 first at epoch " + (reached ? std::to_string(reached) : "never") +
              " (best " + fmt(best) + ")");
}

void determinism(const Paths& dir) {
  must(cxr("--quiet synth --out " + (dir / "det.cxra").string() + " --per-class 50 --seed 3"), "synth");
  for (const char* tag : {"a", "b"}) {
    must(cxr("--quiet --seed 3 train --data " + (dir / "det.cxra").string() + " --epochs 3 --out " +
             (dir / (std::string("det_") + tag + ".cxrm")).string() + " --history " +
             (dir / (std::string("det_") + tag + ".csv")).string()),
         "train");
  }
  const bool model_same = slurp(dir / "det_a.cxrm") == slurp(dir / "det_b.cxrm");
  const bool csv_same = slurp(dir / "det_a.csv") == slurp(dir / "det_b.csv");
  verdict(model_same && csv_same, "determinism",
          std::string("model files ") + (model_same ? "identical" : "DIFFER") + ", history CSVs " +
              (csv_same ? "identical" : "DIFFER"));
}

void roundtrips(const Paths& dir) {
  // archive
  const DatasetArchive a = read_archive(dir / "default.cxra");
  write_archive(a, dir / "default_again.cxra");
  const bool archive_ok = slurp(dir / "default.cxra") == slurp(dir / "default_again.cxra");

  // model
  const Model m1 = load_model(dir / "default.cxrm");
  save_model(m1, dir / "default_again.cxrm");
  const Model m2 = load_model(dir / "default_again.cxrm");
  std::vector<std::size_t> idx(60);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * 20;
  const Tensor x = a.batch(idx);
  const bool model_ok = m1.net.predict(x) == m2.net.predict(x) &&
                        slurp(dir / "default.cxrm") == slurp(dir / "default_again.cxrm");

  // CLI vs HTTP on 10 files
  must(cxr("--quiet synth --out " + (dir / "probe.cxra").string() + " --per-class 4 --seed 99 --png-dir " +
           (dir / "probe").string()),
       "synth");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir / "probe"))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  files.resize(std::min<std::size_t>(files.size(), 10));

  auto predictor = std::make_shared<const Predictor>(Predictor::load(dir / "default.cxrm"));
  ServeConfig cfg;
  cfg.port = 0;
  InferenceServer server(predictor, cfg, nullptr);
  const int port = server.bind();
  std::thread th([&] { server.run(); });
  double worst = 0;
  std::size_t compared = 0;
  std::string problem;
  try {
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);
    for (const auto& f : files) {
      const Run cli = cxr("--log json predict --model " + (dir / "default.cxrm").string() + " --image " + f.string());
      const auto res = client.Post("/api/v1/predict", slurp(f), "image/png");
      if (cli.code != 0 || !res || res->status != 200) {
        problem = "request failed for " + f.filename().string();
        break;
      }
      const json a_json = json::parse(cli.out), b_json = json::parse(res->body);
      for (std::size_t c = 0; c < kNumClasses; ++c)
        worst = std::max(worst, std::abs(a_json["probabilities"][c].get<double>() -
                                         b_json["probabilities"][c].get<double>()));
      if (a_json["label"] != b_json["label"]) problem = "labels differ for " + f.filename().string();
      ++compared;
    }
  } catch (...) {
    server.stop();
    th.join();
    throw;
  }
  server.stop();
  th.join();
  const bool parity_ok = compared == 10 && worst <= 1e-6 && problem.empty();
  verdict(archive_ok && model_ok && parity_ok, "roundtrips",
          std::string("archive rewrite ") + (archive_ok ? "byte-identical" : "DIFFERS") + ", reloaded model " +
              (model_ok ? "bit-identical predictions" : "DIFFERS") + ", CLI vs HTTP max |dp| " + fmt(worst) +
              " <= 1e-6 on " + std::to_string(compared) + " files" + (problem.empty() ? "" : "; " + problem));
}

void label_law(const Paths& dir) {
  const std::vector<std::pair<std::string, int>> table = {
      {"Normal", 0}, {"Pneumonia", 1}, {"Tuberculosis", 2}, {"normal", 0}, {"PNEUMONIA", 1}, {"tuberculosis", 2}};
  bool labels_ok = true;
  for (const auto& [name, id] : table) labels_ok = labels_ok && assign_label(name).id == id;
  for (int id = 0; id < 3; ++id) labels_ok = labels_ok && assign_label(kClassNames[std::size_t(id)]).name() == kClassNames[std::size_t(id)];
  bool rejects = false;
  try {
    assign_label("Covid");
  } catch (const DataFormatError&) {
    rejects = true;
  }
  const double baseline = majority_baseline(kReferenceCorpusCounts);
  const bool baseline_ok = std::abs(baseline - 4273.0 / 6656.0) <= 1e-12 && std::abs(baseline - 0.642) < 5e-4;
  const Run eval = cxr("eval --data " + (dir / "default.cxra").string() + " --model " + (dir / "default.cxrm").string());
  const bool printed = eval.code == 0 && eval.out.find("4273/6656 = 0.642") != std::string::npos;
  verdict(labels_ok && rejects && baseline_ok && printed, "label law",
          std::string("Normal=0 Pneumonia=1 Tuberculosis=2 ") + (labels_ok && rejects ? "exact" : "WRONG") +
              ", majority baseline " + fmt(baseline, 6) + " = 4273/6656, eval reference line " +
              (printed ? "printed" : "MISSING"));
}

void corpus(const Paths& dir) {
  const char* root = std::getenv("CXR_CORPUS_ROOT");
  if (!root || !*root) {
    line("SKIP", "reference corpus (optional)", "set CXR_CORPUS_ROOT to a Normal/Pneumonia/Tuberculosis tree");
    return;
  }
  const auto start = Clock::now();
  must(cxr("--quiet ingest --root " + std::string(root) + " --out " + (dir / "corpus.cxra").string()), "ingest");
  const ClassCounts counts = read_archive(dir / "corpus.cxra").class_counts();
  must(cxr("--quiet train --data " + (dir / "corpus.cxra").string() + " --out " + (dir / "corpus.cxrm").string() +
           " --history " + (dir / "corpus.csv").string()),
       "train");
  const double val = read_history(dir / "corpus.csv").back().val_acc;
  const bool counts_ok = counts == kReferenceCorpusCounts;
  const bool acc_ok = std::abs(val - 0.9297) <= 0.05;
  verdict(counts_ok && acc_ok, "reference corpus (optional)",
          "counts " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" + std::to_string(counts[2]) +
              " vs 1989/4273/394, final val_acc " + fmt(val) + " within 0.05 of 0.9297, " +
              fmt(seconds_since(start), 4) + " s");
}

}  // namespace

int main() {
  std::random_device rd;
  const Paths dir{fs::temp_directory_path() / ("cxr_acceptance_" + std::to_string(rd()))};
  fs::create_directories(dir.root);

  criterion("gradient correctness", gradients);
  criterion("conv oracle equivalence", conv_oracle);
  criterion("architecture shape traces", shape_traces);
  criterion("default-configuration training", [&] { default_regime(dir); });
  criterion("overfit sanity", [&] { overfit(dir); });
  criterion("determinism", [&] { determinism(dir); });
  criterion("roundtrips", [&] { roundtrips(dir); });
  criterion("label law", [&] { label_law(dir); });
  criterion("reference corpus (optional)", [&] { corpus(dir); });

  std::error_code ec;
  fs::remove_all(dir.root, ec);
  std::cout << (failures == 0 ? "acceptance: all primary criteria pass"
                              : "acceptance: " + std::to_string(failures) + " criterion failure(s)")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
