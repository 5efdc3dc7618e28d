#include <cxr/cxr.h>
#include <json.hpp>
#include <omp.h>

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <memory>
#include <new>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "data/dataset.hpp"
#include "models/model.hpp"
#include "serve/predictor.hpp"
#include "serve/server.hpp"
#include "train/train.hpp"
#include "verify/verify.hpp"

using nlohmann::json;

struct cxr_archive {
  cxr::DatasetArchive archive;
};

struct cxr_model {
  explicit cxr_model(cxr::Model m) : model(std::move(m)) {}
  cxr::Model model;
  mutable std::string hash;  // cached model_hash, cleared when weights change

  const std::string& model_hash() const {
    if (hash.empty()) hash = cxr::model_hash(model);
    return hash;
  }
  std::string name() const { return cxr::architecture_name(model.spec.arch); }
};

struct cxr_server {
  std::shared_ptr<const cxr::Predictor> predictor;
  std::unique_ptr<cxr::InferenceServer> server;
};

namespace {

thread_local std::string last_error;

cxr_status fail(cxr_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <class F>
cxr_status guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return CXR_OK;
  } catch (const cxr::Error& e) {
    return fail(static_cast<cxr_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(CXR_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(CXR_ERR_RUNTIME, e.what());
  }
}

void require(const void* p, const char* what) {
  if (!p) throw cxr::UsageError(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void set_string(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

std::size_t checked_channels(int channels) {
  if (channels != 1 && channels != 3) {
    throw cxr::UsageError("channels must be 1 or 3, got " + std::to_string(channels));
  }
  return static_cast<std::size_t>(channels);
}

cxr::TrainConfig to_config(const cxr_train_config& c) {
  cxr::TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.val_fraction = c.val_fraction;
  t.optimizer.kind = c.optimizer == CXR_OPT_SGD ? cxr::OptimizerKind::kSgd : cxr::OptimizerKind::kAdam;
  if (c.optimizer != CXR_OPT_SGD && c.optimizer != CXR_OPT_ADAM) {
    throw cxr::UsageError("unknown optimizer id " + std::to_string(static_cast<int>(c.optimizer)));
  }
  t.optimizer.lr = c.lr;
  t.optimizer.beta1 = c.beta1;
  t.optimizer.beta2 = c.beta2;
  t.optimizer.epsilon = c.epsilon;
  t.optimizer.momentum = c.momentum;
  t.seed = c.seed;
  t.class_weighting = c.class_weighting == CXR_WEIGHT_INVERSE_FREQUENCY
                          ? cxr::ClassWeighting::kInverseFrequency
                          : cxr::ClassWeighting::kOff;
  t.stratified = c.stratified != 0;
  return t;
}

json counts_json(const cxr::ClassCounts& c) { return json(std::vector<std::size_t>(c.begin(), c.end())); }

json epoch_json(const cxr::EpochRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"train_acc", r.train_acc},
          {"val_loss", num(r.val_loss)},
          {"val_acc", num(r.val_acc)}};
}

}  // namespace

extern "C" {

const char* cxr_version(void) { return "1.0.0"; }

const char* cxr_last_error(void) { return last_error.c_str(); }

void cxr_string_free(char* s) { std::free(s); }

void cxr_buffer_free(unsigned char* data) { std::free(data); }

void cxr_set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

cxr_status cxr_file_sha256(const char* path, char** hex) {
  return guarded([&] {
    require(path, "path");
    require(hex, "hex");
    *hex = dup_string(cxr::sha256_file(path));
  });
}

const char* cxr_class_name(int id) {
  if (id < 0 || id >= static_cast<int>(cxr::kNumClasses)) return nullptr;
  return cxr::kClassNames[static_cast<std::size_t>(id)];
}

cxr_status cxr_assign_label(const char* class_dir_name, int* out_id) {
  return guarded([&] {
    require(class_dir_name, "class_dir_name");
    require(out_id, "out_id");
    *out_id = cxr::assign_label(class_dir_name).id;
  });
}

double cxr_majority_baseline(const size_t* class_counts, size_t n_classes) {
  if (!class_counts || n_classes == 0) return 0.0;
  std::size_t total = 0, best = 0;
  for (std::size_t i = 0; i < n_classes; ++i) {
    total += class_counts[i];
    best = std::max(best, class_counts[i]);
  }
  return total ? static_cast<double>(best) / static_cast<double>(total) : 0.0;
}

cxr_status cxr_archive_ingest(const char* root, int channels, cxr_archive** out,
                              char** report_json) {
  return guarded([&] {
    require(root, "root");
    require(out, "out");
    cxr::IngestResult r = cxr::ingest(root, checked_channels(channels));
    set_string(report_json, r.report());
    *out = new cxr_archive{std::move(r.archive)};
  });
}

cxr_status cxr_archive_synthesize(size_t per_class, uint64_t seed, int channels,
                                  cxr_archive** out) {
  return guarded([&] {
    require(out, "out");
    *out = new cxr_archive{cxr::synthesize_dataset(per_class, seed, checked_channels(channels))};
  });
}

cxr_status cxr_archive_read(const char* path, cxr_archive** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new cxr_archive{cxr::read_archive(path)};
  });
}

cxr_status cxr_archive_write(const cxr_archive* archive, const char* path) {
  return guarded([&] {
    require(archive, "archive");
    require(path, "path");
    cxr::write_archive(archive->archive, path);
  });
}

cxr_status cxr_archive_info(const cxr_archive* archive, char** out) {
  return guarded([&] {
    require(archive, "archive");
    require(out, "json");
    const auto& a = archive->archive;
    json classes = json::array();
    for (const char* c : cxr::kClassNames) classes.push_back(c);
    *out = dup_string(json{{"count", a.size()},
                           {"channels", a.channels},
                           {"classes", classes},
                           {"class_counts", counts_json(a.class_counts())},
                           {"content_sha256", a.content_hash()}}
                          .dump());
  });
}

cxr_status cxr_archive_export_png(const cxr_archive* archive, const char* dir) {
  return guarded([&] {
    require(archive, "archive");
    require(dir, "dir");
    const auto& a = archive->archive;
    const std::filesystem::path root(dir);
    for (const char* c : cxr::kClassNames) std::filesystem::create_directories(root / c);
    const std::size_t plane = cxr::kImageSize * cxr::kImageSize;
    for (std::size_t i = 0; i < a.size(); ++i) {
      cxr::RawImage img{cxr::kImageSize, cxr::kImageSize, a.channels,
                        std::vector<std::uint8_t>(a.sample_bytes())};
      const std::uint8_t* src = a.pixels.data() + i * a.sample_bytes();
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t ch = 0; ch < a.channels; ++ch) img.pixels[p * a.channels + ch] = src[ch * plane + p];
      }
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", i);
      cxr::write_file(root / cxr::kClassNames[a.labels[i]] / name, cxr::encode_png(img));
    }
  });
}

void cxr_archive_free(cxr_archive* archive) { delete archive; }

cxr_status cxr_synth_image_png(int class_id, uint64_t seed, unsigned char** data, size_t* size) {
  return guarded([&] {
    require(data, "data");
    require(size, "size");
    const cxr::Bytes png = cxr::encode_png(cxr::synthesize_image(class_id, seed));
    auto* buf = static_cast<unsigned char*>(std::malloc(png.size()));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, png.data(), png.size());
    *data = buf;
    *size = png.size();
  });
}

cxr_status cxr_model_create(const char* arch, int channels, const char* width_mult,
                            uint64_t seed, cxr_model** out) {
  return guarded([&] {
    require(arch, "arch");
    require(out, "out");
    const cxr::WidthMult wm = cxr::WidthMult::parse(width_mult ? width_mult : "1");
    cxr::ModelSpec spec =
        cxr::build_model_spec(cxr::parse_architecture(arch), checked_channels(channels), wm);
    *out = new cxr_model(cxr::make_model(std::move(spec), seed));
  });
}

cxr_status cxr_model_load(const char* path, int expected_channels, cxr_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    std::optional<cxr::Preprocessing> expected;
    if (expected_channels != 0) expected = cxr::Preprocessing{checked_channels(expected_channels)};
    *out = new cxr_model(cxr::load_model(path, expected));
  });
}

cxr_status cxr_model_save(const cxr_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    cxr::save_model(model->model, path);
  });
}

cxr_status cxr_model_info(const cxr_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "json");
    json j = json::parse(cxr::describe_model(model->model));
    j["model_name"] = model->name();
    j["model_hash"] = model->model_hash();
    *out = dup_string(j.dump());
  });
}

void cxr_model_free(cxr_model* model) { delete model; }

void cxr_train_config_init(cxr_train_config* cfg) {
  if (!cfg) return;
  const cxr::TrainConfig d;
  cfg->epochs = d.epochs;
  cfg->batch_size = d.batch_size;
  cfg->val_fraction = d.val_fraction;
  cfg->optimizer = CXR_OPT_ADAM;
  cfg->lr = d.optimizer.lr;
  cfg->beta1 = d.optimizer.beta1;
  cfg->beta2 = d.optimizer.beta2;
  cfg->epsilon = d.optimizer.epsilon;
  cfg->momentum = d.optimizer.momentum;
  cfg->seed = d.seed;
  cfg->class_weighting = CXR_WEIGHT_OFF;
  cfg->stratified = 0;
}

cxr_status cxr_train(cxr_model* model, const cxr_archive* archive, const cxr_train_config* cfg,
                     cxr_epoch_fn on_epoch, void* user, char** history_csv) {
  return guarded([&] {
    require(model, "model");
    require(archive, "archive");
    require(cfg, "cfg");
    const cxr::TrainConfig tc = to_config(*cfg);
    tc.validate();
    const auto& a = archive->archive;
    if (a.size() == 0) throw cxr::UsageError("cannot train on an empty archive");
    if (a.channels != model->model.spec.channels) {
      throw cxr::UsageError("archive has " + std::to_string(a.channels) +
                            " channel(s) but the model expects " +
                            std::to_string(model->model.spec.channels));
    }
    const cxr::SplitPlan plan = cxr::make_split(a.labels, tc.val_fraction, tc.seed, tc.stratified);
    model->hash.clear();
    const cxr::History h = cxr::train(model->model.net, a, plan, tc, [&](const cxr::EpochRecord& r) {
      if (on_epoch) on_epoch(epoch_json(r).dump().c_str(), user);
    });
    const json record = {
        {"seed", tc.seed},
        {"val_fraction", tc.val_fraction},
        {"stratified", tc.stratified},
        {"epochs", tc.epochs},
        {"batch_size", tc.batch_size},
        {"optimizer",
         tc.optimizer.kind == cxr::OptimizerKind::kAdam
             ? json{{"name", "adam"}, {"lr", tc.optimizer.lr}, {"beta1", tc.optimizer.beta1},
                    {"beta2", tc.optimizer.beta2}, {"epsilon", tc.optimizer.epsilon}}
             : json{{"name", "sgd"}, {"lr", tc.optimizer.lr}, {"momentum", tc.optimizer.momentum}}},
        {"class_weighting", tc.class_weighting == cxr::ClassWeighting::kOff ? "off" : "inverse-frequency"},
        {"data_sha256", a.content_hash()},
        {"train_count", plan.train.size()},
        {"val_count", plan.val.size()},
        {"final", epoch_json(h.back())}};
    model->model.training = record.dump();
    set_string(history_csv, cxr::history_csv(h));
  });
}

cxr_status cxr_evaluate(const cxr_model* model, const cxr_archive* archive, const char* split,
                        char** out) {
  return guarded([&] {
    require(model, "model");
    require(archive, "archive");
    require(out, "json");
    const auto& a = archive->archive;
    if (a.channels != model->model.spec.channels) {
      throw cxr::UsageError("archive has " + std::to_string(a.channels) +
                            " channel(s) but the model expects " +
                            std::to_string(model->model.spec.channels));
    }
    const std::string which = split ? split : "val";
    std::vector<std::size_t> indices;
    if (which == "all") {
      for (std::size_t i = 0; i < a.size(); ++i) indices.push_back(i);
    } else if (which == "val") {
      if (model->model.training.empty()) {
        throw cxr::UsageError("model carries no training record; use split \"all\"");
      }
      const json rec = json::parse(model->model.training);
      if (rec.at("data_sha256").get<std::string>() != a.content_hash()) {
        throw cxr::UsageError("archive differs from the one the model was trained on; use split \"all\"");
      }
      indices = cxr::make_split(a.labels, rec.at("val_fraction").get<double>(),
                                rec.at("seed").get<std::uint64_t>(), rec.at("stratified").get<bool>())
                    .val;
    } else {
      throw cxr::UsageError("split must be val or all, got '" + which + "'");
    }
    if (indices.empty()) throw cxr::UsageError("cannot evaluate an empty index set");
    const cxr::Evaluation e = cxr::evaluate(model->model.net, a, indices);
    cxr::ClassCounts counts{};
    for (std::size_t i : indices) ++counts[a.labels[i]];
    std::size_t majority = 0;
    for (std::size_t c = 1; c < cxr::kNumClasses; ++c) {
      if (counts[c] > counts[majority]) majority = c;
    }
    json classes = json::array();
    for (const char* c : cxr::kClassNames) classes.push_back(c);
    json confusion = json::array();
    for (const auto& row : e.confusion) confusion.push_back(std::vector<std::size_t>(row.begin(), row.end()));
    *out = dup_string(
        json{{"split", which},
             {"count", e.count},
             {"accuracy", e.accuracy},
             {"mean_loss", e.mean_loss},
             {"classes", classes},
             {"confusion", confusion},
             {"class_counts", counts_json(counts)},
             {"majority_baseline",
              {{"label", cxr::kClassNames[majority]}, {"accuracy", cxr::majority_baseline(counts)}}},
             {"reference_baseline",
              {{"class_counts", counts_json(cxr::kReferenceCorpusCounts)},
               {"label", "Pneumonia"},
               {"accuracy", cxr::majority_baseline(cxr::kReferenceCorpusCounts)}}},
             {"model_hash", model->model_hash()}}
            .dump());
  });
}

cxr_status cxr_predict_bytes(const cxr_model* model, const unsigned char* data, size_t size,
                             char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "json");
    if (!data && size) throw cxr::UsageError("data must not be null");
    const cxr::PredictionReport r = cxr::predict_image(
        model->model, model->name(), model->model_hash(), std::span<const std::uint8_t>(data, size));
    *out = dup_string(r.to_json());
  });
}

cxr_status cxr_predict_file(const cxr_model* model, const char* image_path, char** out) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    require(out, "json");
    const cxr::Bytes bytes = cxr::read_file(image_path);
    const cxr::PredictionReport r =
        cxr::predict_image(model->model, model->name(), model->model_hash(), bytes);
    *out = dup_string(r.to_json());
  });
}

void cxr_serve_config_init(cxr_serve_config* cfg) {
  if (!cfg) return;
  const cxr::ServeConfig d;
  cfg->bind = "127.0.0.1:8080";
  cfg->max_body_bytes = d.max_body_bytes;
  cfg->log_json = 0;
  cfg->quiet = 0;
  cfg->static_dir = nullptr;
  cfg->expected_channels = 0;
}

cxr_status cxr_server_create(const char* model_path, const cxr_serve_config* cfg,
                             cxr_server** out, int* bound_port) {
  return guarded([&] {
    require(model_path, "model_path");
    require(cfg, "cfg");
    require(out, "out");
    cxr::ServeConfig sc;
    cxr::parse_bind(cfg->bind ? cfg->bind : "127.0.0.1:8080", sc);
    if (cfg->max_body_bytes == 0) throw cxr::UsageError("max body must be positive");
    sc.max_body_bytes = cfg->max_body_bytes;
    sc.log_format = cfg->log_json ? cxr::LogFormat::kJson : cxr::LogFormat::kText;
    if (cfg->static_dir) sc.static_dir = cfg->static_dir;
    std::optional<cxr::Preprocessing> expected;
    if (cfg->expected_channels != 0) {
      expected = cxr::Preprocessing{checked_channels(cfg->expected_channels)};
    }
    auto s = std::make_unique<cxr_server>();
    s->predictor = std::make_shared<const cxr::Predictor>(cxr::Predictor::load(model_path, expected));
    s->server = std::make_unique<cxr::InferenceServer>(s->predictor, sc,
                                                       cfg->quiet ? nullptr : &std::cerr);
    const int port = s->server->bind();
    if (bound_port) *bound_port = port;
    *out = s.release();
  });
}

cxr_status cxr_server_run(cxr_server* server) {
  return guarded([&] {
    require(server, "server");
    server->server->run();
  });
}

void cxr_server_stop(cxr_server* server) {
  if (server && server->server) server->server->stop();
}

void cxr_server_free(cxr_server* server) { delete server; }

cxr_status cxr_verify(const char* level, cxr_check_fn on_check, void* user, char** summary_json) {
  std::size_t failed = 0;
  const cxr_status st = guarded([&] {
    require(level, "level");
    const auto results = cxr::run_verification(cxr::parse_verify_level(level), [&](const cxr::CheckResult& r) {
      if (on_check) {
        on_check(json{{"name", r.name},
                      {"passed", r.passed},
                      {"value", r.value},
                      {"tolerance", r.tolerance},
                      {"detail", r.detail}}
                     .dump()
                     .c_str(),
                 user);
      }
    });
    json failures = json::array();
    for (const auto& r : results) {
      if (!r.passed) {
        ++failed;
        failures.push_back(r.name);
      }
    }
    set_string(summary_json, json{{"level", level},
                                  {"checks", results.size()},
                                  {"failed", failed},
                                  {"failures", failures}}
                                 .dump());
  });
  if (st != CXR_OK) return st;
  if (failed) return fail(CXR_ERR_RUNTIME, std::to_string(failed) + " verification check(s) failed");
  return CXR_OK;
}

}  // extern "C"
