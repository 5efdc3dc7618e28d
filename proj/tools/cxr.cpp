#include <CLI11.hpp>
#include <cxr/cxr.h>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int channels = 1;
  bool quiet = false;
  std::string log = "text";
  int threads = 0;

  bool json_mode() const { return log == "json"; }
};

struct Failure {
  cxr_status status;
  std::string message;
};

void check(cxr_status st) {
  if (st != CXR_OK) throw Failure{st, cxr_last_error()};
}

// Owns a malloc'd string handed out by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  cxr_string_free(s);
  return out;
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Archive = Handle<cxr_archive, cxr_archive_free>;
using Model = Handle<cxr_model, cxr_model_free>;
using Server = Handle<cxr_server, cxr_server_free>;

std::string file_hash(const std::string& path) {
  char* hex = nullptr;
  check(cxr_file_sha256(path.c_str(), &hex));
  return take(hex);
}

const char* status_name(cxr_status st) {
  switch (st) {
    case CXR_ERR_USAGE: return "usage";
    case CXR_ERR_DATA_FORMAT: return "data-format";
    case CXR_ERR_MODEL_FORMAT: return "model-format";
    default: return "runtime";
  }
}

// Resolved configuration and input hashes, printed to stderr before work
// starts so every run can be reproduced from its log.
void print_header(const Globals& g, const std::string& command, const json& config,
                  const json& inputs) {
  if (g.quiet) return;
  json globals = {{"seed", g.seed}, {"channels", g.channels}, {"threads", g.threads}, {"log", g.log}};
  if (g.json_mode()) {
    std::cerr << json{{"cxr", cxr_version()},
                      {"command", command},
                      {"globals", globals},
                      {"config", config},
                      {"inputs", inputs}}
                     .dump()
              << '\n';
    return;
  }
  std::cerr << "# cxr " << cxr_version() << " " << command << '\n';
  std::cerr << "# seed=" << g.seed << " channels=" << g.channels << " threads=" << g.threads << '\n';
  for (const auto& [k, v] : config.items()) std::cerr << "# " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  for (const auto& [k, v] : inputs.items()) std::cerr << "# input " << k << " sha256=" << v.get<std::string>() << '\n';
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- subcommands

struct IngestArgs {
  std::string root, out, report;
};

int run_ingest(const Globals& g, const IngestArgs& a) {
  print_header(g, "ingest", {{"root", a.root}, {"out", a.out}, {"report", a.report}}, json::object());
  Archive archive;
  char* report_raw = nullptr;
  check(cxr_archive_ingest(a.root.c_str(), g.channels, archive.out(), &report_raw));
  const std::string report = take(report_raw);
  check(cxr_archive_write(archive.get(), a.out.c_str()));
  if (!a.report.empty()) {
    std::FILE* f = std::fopen(a.report.c_str(), "wb");
    if (!f) throw Failure{CXR_ERR_RUNTIME, "cannot write " + a.report};
    std::fwrite(report.data(), 1, report.size(), f);
    std::fputc('\n', f);
    std::fclose(f);
  }
  const json r = json::parse(report);
  if (g.json_mode()) {
    std::cout << r.dump() << '\n';
    return 0;
  }
  std::cout << "ingested " << r["total"] << " images into " << a.out << '\n';
  for (const auto& [name, count] : r["class_counts"].items()) std::cout << "  " << name << ": " << count << '\n';
  std::cout << "content sha256 " << r["content_sha256"].get<std::string>() << '\n';
  for (const auto& f : r["failures"]) {
    std::cout << "  failed: " << f["source_id"].get<std::string>() << ": " << f["reason"].get<std::string>() << '\n';
  }
  for (const auto& w : r["warnings"]) std::cout << "  warning: " << w.get<std::string>() << '\n';
  return 0;
}

struct SynthArgs {
  std::string out, png_dir;
  std::size_t per_class = 0;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  print_header(g, "synth", {{"out", a.out}, {"per_class", a.per_class}, {"png_dir", a.png_dir}},
               json::object());
  Archive archive;
  check(cxr_archive_synthesize(a.per_class, g.seed, g.channels, archive.out()));
  check(cxr_archive_write(archive.get(), a.out.c_str()));
  if (!a.png_dir.empty()) check(cxr_archive_export_png(archive.get(), a.png_dir.c_str()));
  char* info_raw = nullptr;
  check(cxr_archive_info(archive.get(), &info_raw));
  json info = json::parse(take(info_raw));
  info["file_sha256"] = file_hash(a.out);
  if (g.json_mode()) {
    std::cout << info.dump() << '\n';
  } else {
    std::cout << "wrote " << a.out << ": " << info["count"] << " samples, file sha256 "
              << info["file_sha256"].get<std::string>() << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string data, arch = "custom_cnn", out, width_mult = "1", opt = "adam", history,
                    class_weighting = "off";
  std::size_t epochs = 10, batch = 120;
  double val = 0.2, momentum = 0.9;
  double lr = 0;  // 0 picks the optimizer default
  bool stratified = false;
};

void on_epoch(const char* epoch_json, void* user) {
  const auto* g = static_cast<const std::pair<const Globals*, std::size_t>*>(user);
  const json e = json::parse(epoch_json);
  if (g->first->json_mode()) {
    json out = {{"event", "epoch"}, {"epochs", g->second}};
    out.update(e);
    std::cout << out.dump() << std::endl;
    return;
  }
  auto val = [](const json& v) { return v.is_null() ? std::string("nan") : fmt(v.get<double>()); };
  std::cout << "epoch " << e["epoch"] << "/" << g->second << "  train_loss " << fmt(e["train_loss"])
            << "  train_acc " << fmt(e["train_acc"]) << "  val_loss " << val(e["val_loss"])
            << "  val_acc " << val(e["val_acc"]) << std::endl;
}

int run_train(const Globals& g, const TrainArgs& a) {
  cxr_train_config cfg;
  cxr_train_config_init(&cfg);
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.val_fraction = a.val;
  cfg.optimizer = a.opt == "sgd" ? CXR_OPT_SGD : CXR_OPT_ADAM;
  cfg.lr = a.lr > 0 ? a.lr : (a.opt == "sgd" ? 0.01 : 1e-3);
  cfg.momentum = a.momentum;
  cfg.seed = g.seed;
  cfg.class_weighting = a.class_weighting == "inverse-frequency" ? CXR_WEIGHT_INVERSE_FREQUENCY : CXR_WEIGHT_OFF;
  cfg.stratified = a.stratified ? 1 : 0;

  json config = {{"arch", a.arch},           {"width_mult", a.width_mult}, {"epochs", cfg.epochs},
                 {"batch", cfg.batch_size},  {"val", cfg.val_fraction},   {"opt", a.opt},
                 {"lr", cfg.lr},             {"class_weighting", a.class_weighting},
                 {"stratified", a.stratified}, {"out", a.out},            {"history", a.history}};
  if (a.opt == "sgd") config["momentum"] = cfg.momentum;
  print_header(g, "train", config, {{a.data, file_hash(a.data)}});

  Archive archive;
  check(cxr_archive_read(a.data.c_str(), archive.out()));
  Model model;
  check(cxr_model_create(a.arch.c_str(), g.channels, a.width_mult.c_str(), g.seed, model.out()));
  std::pair<const Globals*, std::size_t> ctx{&g, cfg.epochs};
  char* csv_raw = nullptr;
  check(cxr_train(model.get(), archive.get(), &cfg, on_epoch, &ctx, &csv_raw));
  const std::string csv = take(csv_raw);
  check(cxr_model_save(model.get(), a.out.c_str()));
  if (!a.history.empty()) {
    std::FILE* f = std::fopen(a.history.c_str(), "wb");
    if (!f) throw Failure{CXR_ERR_RUNTIME, "cannot write " + a.history};
    std::fwrite(csv.data(), 1, csv.size(), f);
    std::fclose(f);
  }
  const std::string hash = file_hash(a.out);
  if (g.json_mode()) {
    std::cout << json{{"event", "saved"}, {"model", a.out}, {"model_hash", hash}}.dump() << '\n';
  } else {
    std::cout << "saved " << a.out << " (sha256 " << hash << ")\n";
  }
  return 0;
}

struct EvalArgs {
  std::string data, model, split = "val";
};

int run_eval(const Globals& g, const EvalArgs& a) {
  print_header(g, "eval", {{"split", a.split}},
               {{a.data, file_hash(a.data)}, {a.model, file_hash(a.model)}});
  Archive archive;
  check(cxr_archive_read(a.data.c_str(), archive.out()));
  Model model;
  check(cxr_model_load(a.model.c_str(), g.channels, model.out()));
  char* raw = nullptr;
  check(cxr_evaluate(model.get(), archive.get(), a.split.c_str(), &raw));
  const json e = json::parse(take(raw));
  if (g.json_mode()) {
    std::cout << e.dump() << '\n';
    return 0;
  }
  std::cout << "split " << a.split << ": " << e["count"] << " samples\n";
  std::cout << "accuracy " << fmt(e["accuracy"]) << "  mean loss " << fmt(e["mean_loss"]) << '\n';
  std::cout << "confusion (rows true, columns predicted):\n";
  const auto& classes = e["classes"];
  std::printf("  %-13s", "");
  std::fflush(stdout);
  for (const auto& c : classes) std::cout << " " << std::string(13 - std::min<std::size_t>(13, c.get<std::string>().size()), ' ') << c.get<std::string>();
  std::cout << '\n';
  for (std::size_t i = 0; i < classes.size(); ++i) {
    std::string label = classes[i].get<std::string>();
    label.resize(13, ' ');
    std::cout << "  " << label;
    for (const auto& v : e["confusion"][i]) {
      const std::string s = v.dump();
      std::cout << " " << std::string(13 - std::min<std::size_t>(13, s.size()), ' ') << s;
    }
    std::cout << '\n';
  }
  const auto& mb = e["majority_baseline"];
  std::cout << "majority baseline on this split (" << mb["label"].get<std::string>()
            << "): " << fmt(mb["accuracy"]) << '\n';
  const auto& rb = e["reference_baseline"];
  const auto& rc = rb["class_counts"];
  const std::size_t total = rc[0].get<std::size_t>() + rc[1].get<std::size_t>() + rc[2].get<std::size_t>();
  std::cout << "reference: majority-class baseline on the " << rc[0] << "/" << rc[1] << "/" << rc[2]
            << " corpus = " << rc[1] << "/" << total << " = " << fmt(rb["accuracy"], 3) << '\n';
  return 0;
}

struct PredictArgs {
  std::string model, image;
};

int run_predict(const Globals& g, const PredictArgs& a) {
  print_header(g, "predict", json::object(),
               {{a.model, file_hash(a.model)}, {a.image, file_hash(a.image)}});
  Model model;
  check(cxr_model_load(a.model.c_str(), g.channels, model.out()));
  char* raw = nullptr;
  check(cxr_predict_file(model.get(), a.image.c_str(), &raw));
  std::cout << take(raw) << '\n';
  return 0;
}

struct ServeArgs {
  std::string model, bind = "127.0.0.1:8080", static_dir;
  std::size_t max_body = 10u << 20;
};

int run_serve(const Globals& g, const ServeArgs& a) {
  print_header(g, "serve",
               {{"bind", a.bind}, {"max_body", a.max_body}, {"static_dir", a.static_dir}},
               {{a.model, file_hash(a.model)}});
  cxr_serve_config cfg;
  cxr_serve_config_init(&cfg);
  cfg.bind = a.bind.c_str();
  cfg.max_body_bytes = a.max_body;
  cfg.log_json = g.json_mode() ? 1 : 0;
  cfg.quiet = g.quiet ? 1 : 0;
  cfg.static_dir = a.static_dir.empty() ? nullptr : a.static_dir.c_str();
  cfg.expected_channels = g.channels;
  Server server;
  int port = 0;
  check(cxr_server_create(a.model.c_str(), &cfg, server.out(), &port));
  const std::string host = a.bind.substr(0, a.bind.rfind(':'));
  if (g.json_mode()) {
    std::cout << json{{"event", "listening"}, {"host", host}, {"port", port}}.dump() << std::endl;
  } else {
    std::cout << "listening on http://" << host << ":" << port << std::endl;
  }
  check(cxr_server_run(server.get()));
  return 0;
}

struct VerifyArgs {
  std::string level = "fast";
};

void on_check(const char* check_json, void* user) {
  const auto* g = static_cast<const Globals*>(user);
  const json c = json::parse(check_json);
  if (g->json_mode()) {
    std::cout << c.dump() << std::endl;
    return;
  }
  char line[256];
  std::snprintf(line, sizeof line, "%s  %-36s %.3e (tolerance %.0e)", c["passed"].get<bool>() ? "PASS" : "FAIL",
                c["name"].get<std::string>().c_str(), c["value"].get<double>(), c["tolerance"].get<double>());
  std::cout << line << "  " << c["detail"].get<std::string>() << std::endl;
}

int run_verify(const Globals& g, const VerifyArgs& a) {
  print_header(g, "verify", {{"level", a.level}}, json::object());
  char* raw = nullptr;
  const cxr_status st = cxr_verify(a.level.c_str(), on_check, const_cast<Globals*>(&g), &raw);
  const std::string summary = take(raw);
  if (!summary.empty()) {
    const json s = json::parse(summary);
    if (g.json_mode()) {
      std::cout << s.dump() << '\n';
    } else {
      std::cout << s["checks"].get<std::size_t>() - s["failed"].get<std::size_t>() << "/" << s["checks"]
                << " checks passed\n";
    }
  }
  check(st);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray classification pipeline: ingest, train, evaluate, predict, serve."};
  app.name("cxr");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(cxr_version()));

  Globals g;
  app.add_option("--seed", g.seed, "Seed for initialization, splits, shuffles and synthesis")->capture_default_str();
  app.add_option("--channels", g.channels, "Image channels for the whole pipeline")
      ->check(CLI::IsMember({1, 3}))
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress the reproducibility header and access log");
  app.add_option("--log", g.log, "Output format for logs and results")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();
  app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default); results do not depend on it")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Decode and preprocess a class-directory tree into an archive");
  c_ingest->add_option("--root", ingest.root, "Directory with Normal/, Pneumonia/, Tuberculosis/")->required()->check(CLI::ExistingDirectory);
  c_ingest->add_option("--out", ingest.out, "Output archive (.cxra)")->required();
  c_ingest->add_option("--report", ingest.report, "Write the JSON ingestion report here");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model on an archive");
  c_train->add_option("--data", train.data, "Training archive (.cxra)")->required()->check(CLI::ExistingFile);
  c_train->add_option("--arch", train.arch, "Architecture")
      ->check(CLI::IsMember({"custom_cnn", "vgg16_style", "inception_small"}))
      ->capture_default_str();
  c_train->add_option("--out", train.out, "Output model (.cxrm)")->required();
  c_train->add_option("--epochs", train.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  c_train->add_option("--batch", train.batch, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  c_train->add_option("--val", train.val, "Validation fraction, in (0,1)")->capture_default_str();
  c_train->add_option("--width-mult", train.width_mult, "Channel width multiplier, e.g. 1, 0.25 or 1/4")->capture_default_str();
  c_train->add_option("--opt", train.opt, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  c_train->add_option("--lr", train.lr, "Learning rate (default 0.001 for adam, 0.01 for sgd)")->check(CLI::PositiveNumber);
  c_train->add_option("--momentum", train.momentum, "SGD momentum")->capture_default_str();
  c_train->add_option("--class-weighting", train.class_weighting, "Loss class weighting")
      ->check(CLI::IsMember({"off", "inverse-frequency"}))
      ->capture_default_str();
  c_train->add_flag("--stratified", train.stratified, "Per-class proportional validation split");
  c_train->add_option("--history", train.history, "Write per-epoch history CSV here");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model on an archive");
  c_eval->add_option("--data", eval.data, "Archive (.cxra)")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--model", eval.model, "Model (.cxrm)")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--split", eval.split, "val: the model's own validation split; all: every sample")
      ->check(CLI::IsMember({"val", "all"}))
      ->capture_default_str();

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "Classify one image and print the report as JSON");
  c_predict->add_option("--model", predict.model, "Model (.cxrm)")->required()->check(CLI::ExistingFile);
  c_predict->add_option("--image", predict.image, "PNG, JPEG or PGM image")->required()->check(CLI::ExistingFile);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Serve predictions over HTTP under /api/v1");
  c_serve->add_option("--model", serve.model, "Model (.cxrm)")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--bind", serve.bind, "HOST:PORT")->capture_default_str();
  c_serve->add_option("--max-body", serve.max_body, "Largest accepted request body in bytes")->check(CLI::PositiveNumber)->capture_default_str();
  c_serve->add_option("--static-dir", serve.static_dir, "Directory of static UI files mounted at /")->check(CLI::ExistingDirectory);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic lung-phantom archive");
  c_synth->add_option("--out", synth.out, "Output archive (.cxra)")->required();
  c_synth->add_option("--per-class", synth.per_class, "Samples per class")->required()->check(CLI::PositiveNumber);
  c_synth->add_option("--png-dir", synth.png_dir, "Also write every sample as <dir>/<Class>/<n>.png");

  VerifyArgs verify;
  auto* c_verify = app.add_subcommand("verify", "Run gradient, convolution and roundtrip checks");
  c_verify->add_option("--level", verify.level, "Check depth")->check(CLI::IsMember({"fast", "full"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return CXR_ERR_USAGE;
  }

  cxr_set_threads(g.threads);
  try {
    if (*c_ingest) return run_ingest(g, ingest);
    if (*c_train) return run_train(g, train);
    if (*c_eval) return run_eval(g, eval);
    if (*c_predict) return run_predict(g, predict);
    if (*c_serve) return run_serve(g, serve);
    if (*c_synth) return run_synth(g, synth);
    if (*c_verify) return run_verify(g, verify);
  } catch (const Failure& f) {
    if (g.json_mode()) {
      std::cerr << json{{"error", {{"kind", status_name(f.status)}, {"status", static_cast<int>(f.status)}, {"message", f.message}}}}.dump() << '\n';
    } else {
      std::cerr << "error (" << status_name(f.status) << "): " << f.message << '\n';
    }
    return static_cast<int>(f.status);
  }
  return CXR_ERR_USAGE;
}
