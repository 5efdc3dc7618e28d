#include <doctest.h>
#include <httplib.h>

#include <fstream>
#include <json.hpp>
#include <memory>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>
#include <vector>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "data/dataset.hpp"
#include "serve/predictor.hpp"
#include "serve/server.hpp"
#include "train/train.hpp"
#include "support.hpp"

using namespace cxr;
using nlohmann::json;

namespace {

std::string as_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

// PNG of archive sample i, gray.
std::string sample_png(const DatasetArchive& ds, std::size_t i) {
  RawImage img;
  img.width = img.height = kImageSize;
  img.pixels.assign(ds.pixels.begin() + std::ptrdiff_t(i * ds.sample_bytes()),
                    ds.pixels.begin() + std::ptrdiff_t((i + 1) * ds.sample_bytes()));
  return as_string(encode_png(img));
}

const DatasetArchive& tiny_set() {
  static const DatasetArchive ds = synthesize_dataset(20, 77, 1);
  return ds;
}

// Small model driven to near-zero training loss on the tiny set.
const Model& overfit_model() {
  static const Model m = [] {
    Model model = make_model(build_custom_cnn(1, {1, 4}), 77);
    SplitPlan plan;
    plan.train.resize(tiny_set().size());
    std::iota(plan.train.begin(), plan.train.end(), 0);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.optimizer.lr = 3e-3;
    train(model.net, tiny_set(), plan, cfg);
    return model;
  }();
  return m;
}

std::shared_ptr<const Predictor> predictor_for(const Model& m) {
  const Bytes bytes = serialize_model(m);
  return std::make_shared<const Predictor>(parse_model(bytes), architecture_name(m.spec.arch));
}

class Running {
 public:
  Running(std::shared_ptr<const Predictor> p, ServeConfig cfg = {}, std::ostream* log = nullptr) {
    cfg.port = 0;
    cfg.threads = 4;
    server_ = std::make_unique<InferenceServer>(std::move(p), cfg, log);
    port_ = server_->bind();
    thread_ = std::thread([this] { server_->run(); });
  }
  ~Running() { stop(); }
  void stop() {
    if (!thread_.joinable()) return;
    server_->stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

 private:
  std::unique_ptr<InferenceServer> server_;
  std::thread thread_;
  int port_ = 0;
};

std::string error_code(const httplib::Result& r) {
  return json::parse(r->body).at("error").at("code").get<std::string>();
}

}  // namespace

TEST_SUITE("serve.predictor") {
  TEST_CASE("report fields and probability law") {
    const auto p = predictor_for(overfit_model());
    const std::string png = sample_png(tiny_set(), 3);
    const PredictionReport r =
        p->predict({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
    double sum = 0;
    int best = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      CHECK(r.probabilities[c] >= 0.0);
      sum += r.probabilities[c];
      if (r.probabilities[c] > r.probabilities[std::size_t(best)]) best = int(c);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    CHECK(r.label_id == best);
    CHECK(r.label == kClassNames[std::size_t(best)]);
    CHECK(r.model_name == "custom_cnn");
    CHECK(r.model_hash == model_hash(overfit_model()));

    const json j = json::parse(r.to_json());
    for (const char* key : {"probabilities", "label", "label_id", "model_name", "model_hash", "preprocessing"})
      CHECK(j.contains(key));
    CHECK(j["probabilities"].size() == kNumClasses);
  }

  TEST_CASE("bytes path equals the in-memory sample path") {
    const auto p = predictor_for(overfit_model());
    const DatasetArchive& ds = tiny_set();
    for (std::size_t i = 0; i < 6; ++i) {
      const std::string png = sample_png(ds, i);
      const PredictionReport a =
          p->predict({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
      const Tensor x = ds.batch(std::vector<std::size_t>{i});
      const Tensor probs = p->model().net.predict(x);
      for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(a.probabilities[c] == double(probs.at({0, c})));
    }
  }

  TEST_CASE("undecodable bytes and channel mismatch") {
    const auto p = predictor_for(overfit_model());
    const std::uint8_t junk[] = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(p->predict(junk), DataFormatError);
    CHECK_THROWS_AS(p->predict(std::span<const std::uint8_t>{}), DataFormatError);
    SampleImage rgb;
    rgb.channels = 3;
    rgb.pixels.assign(3 * kImageSize * kImageSize, 0);
    CHECK_THROWS_AS(p->predict_sample(rgb), DataFormatError);
  }

  TEST_CASE("overfit model names the tuberculosis exemplar") {
    const auto p = predictor_for(overfit_model());
    const DatasetArchive& ds = tiny_set();
    std::size_t right = 0, total = 0;
    for (std::size_t i = 2; i < ds.size(); i += 3) {
      REQUIRE(ds.labels[i] == 2);
      const std::string png = sample_png(ds, i);
      right += p->predict({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()}).label ==
               "Tuberculosis";
      ++total;
    }
    CHECK(right == total);
  }
}

TEST_SUITE("serve.http") {
  TEST_CASE("bind parsing") {
    ServeConfig cfg;
    parse_bind("0.0.0.0:9000", cfg);
    CHECK(cfg.host == "0.0.0.0");
    CHECK(cfg.port == 9000);
    for (const char* bad : {"9000", ":80", "host:", "host:abc", "host:70000", "host:123456"}) {
      CHECK_THROWS_AS(parse_bind(bad, cfg), UsageError);
    }
  }

  TEST_CASE("health and model") {
    const auto p = predictor_for(overfit_model());
    Running srv(p);
    auto cli = srv.client();
    auto h = cli.Get("/api/v1/health");
    REQUIRE(h);
    CHECK(h->status == 200);
    const json hj = json::parse(h->body);
    CHECK(hj["status"] == "ok");
    CHECK(hj["model_hash"] == p->hash());

    auto m = cli.Get("/api/v1/model");
    REQUIRE(m);
    CHECK(m->status == 200);
    const json mj = json::parse(m->body);
    CHECK(mj["classes"] == json::array({"Normal", "Pneumonia", "Tuberculosis"}));
    CHECK(mj["model_hash"] == p->hash());
    CHECK(mj["model_name"] == "custom_cnn");
    CHECK(mj["architecture"]["parameter_count"] == p->model().net.parameter_count());
    CHECK(mj.contains("preprocessing"));
  }

  TEST_CASE("predict raw and multipart agree with the in-process result") {
    const auto p = predictor_for(overfit_model());
    Running srv(p);
    auto cli = srv.client();
    const std::string png = sample_png(tiny_set(), 5);
    const std::string expected =
        p->predict({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()}).to_json();

    auto raw = cli.Post("/api/v1/predict", png, "image/png");
    REQUIRE(raw);
    CHECK(raw->status == 200);
    CHECK(raw->body == expected);

    httplib::MultipartFormDataItems items = {{"file", png, "x.png", "image/png"}};
    auto mp = cli.Post("/api/v1/predict", items);
    REQUIRE(mp);
    CHECK(mp->status == 200);
    CHECK(mp->body == expected);

    RawImage img = decode_image({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
    const std::string pgm = as_string(encode_pgm(img));
    auto pg = cli.Post("/api/v1/predict", pgm, "image/x-portable-graymap");
    REQUIRE(pg);
    CHECK(pg->status == 200);
    CHECK(pg->body == expected);
  }

  TEST_CASE("client errors carry an error code") {
    const auto p = predictor_for(overfit_model());
    ServeConfig cfg;
    cfg.max_body_bytes = 64 * 1024;
    Running srv(p, cfg);
    auto cli = srv.client();

    auto empty = cli.Post("/api/v1/predict", "", "image/png");
    REQUIRE(empty);
    CHECK(empty->status == 400);
    CHECK(error_code(empty) == "decode_failed");

    auto junk = cli.Post("/api/v1/predict", "not an image at all", "image/jpeg");
    REQUIRE(junk);
    CHECK(junk->status == 400);
    CHECK(error_code(junk) == "decode_failed");

    auto big = cli.Post("/api/v1/predict", std::string(200 * 1024, 'x'), "image/png");
    REQUIRE(big);
    CHECK(big->status == 413);
    CHECK(error_code(big) == "payload_too_large");

    auto text = cli.Post("/api/v1/predict", "hello", "text/plain");
    REQUIRE(text);
    CHECK(text->status == 415);
    CHECK(error_code(text) == "unsupported_media_type");

    httplib::MultipartFormDataItems items = {{"image", "abc", "x.png", "image/png"}};
    auto nofile = cli.Post("/api/v1/predict", items);
    REQUIRE(nofile);
    CHECK(nofile->status == 400);
    CHECK(error_code(nofile) == "missing_file");

    auto get = cli.Get("/api/v1/predict");
    REQUIRE(get);
    CHECK(get->status == 405);
    CHECK(error_code(get) == "method_not_allowed");
    CHECK(get->get_header_value("Allow") == "POST");

    auto del = cli.Delete("/api/v1/health");
    REQUIRE(del);
    CHECK(del->status == 405);
    CHECK(error_code(del) == "method_not_allowed");

    auto missing = cli.Get("/api/v1/nope");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(error_code(missing) == "not_found");

    for (const auto* r : {&empty, &junk, &big, &text, &nofile, &get, &del, &missing}) {
      CHECK((*r)->get_header_value("Content-Type") == "application/json");
      CHECK(!json::parse((*r)->body)["error"]["message"].get<std::string>().empty());
    }
  }

  TEST_CASE("parallel identical requests give identical answers") {
    const auto p = predictor_for(overfit_model());
    Running srv(p);
    const std::string png = sample_png(tiny_set(), 7);
    const std::size_t n = 8;
    std::vector<std::string> bodies(n);
    std::vector<int> statuses(n, 0);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back([&, i] {
        auto cli = srv.client();
        auto r = cli.Post("/api/v1/predict", png, "image/png");
        if (r) {
          statuses[i] = r->status;
          bodies[i] = r->body;
        }
      });
    }
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(statuses[i] == 200);
      CHECK(bodies[i] == bodies[0]);
    }
  }

  TEST_CASE("interleaved requests do not affect each other") {
    const auto p = predictor_for(overfit_model());
    Running srv(p);
    const std::size_t n = 6;
    std::vector<std::string> expected(n), got(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string png = sample_png(tiny_set(), i);
      expected[i] = p->predict({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()}).to_json();
    }
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back([&, i] {
        auto cli = srv.client();
        if (auto r = cli.Post("/api/v1/predict", sample_png(tiny_set(), n - 1 - i), "image/png"))
          got[n - 1 - i] = r->body;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(got == expected);
  }

  TEST_CASE("model hash tracks the model file") {
    cxr_test::TempDir dir("serve_hash");
    const Model a = make_model(build_custom_cnn(1, {1, 8}), 1);
    const Model b = make_model(build_custom_cnn(1, {1, 8}), 2);
    save_model(a, dir / "a.cxrm");
    save_model(b, dir / "b.cxrm");
    const Predictor pa = Predictor::load(dir / "a.cxrm");
    const Predictor pb = Predictor::load(dir / "b.cxrm");
    CHECK(pa.hash() != pb.hash());
    CHECK(pa.hash() == sha256_file(dir / "a.cxrm"));
    CHECK(json::parse(pa.health_json())["model_hash"] == pa.hash());
    CHECK_THROWS_AS(Predictor::load(dir / "a.cxrm", Preprocessing{3}), ModelFormatError);
  }

  TEST_CASE("access log lines") {
    const auto p = predictor_for(overfit_model());
    std::ostringstream text_log, json_log;
    {
      Running srv(p, {}, &text_log);
      auto cli = srv.client();
      cli.Get("/api/v1/health");
      cli.Post("/api/v1/predict", "x", "text/plain");
      srv.stop();
    }
    {
      ServeConfig cfg;
      cfg.log_format = LogFormat::kJson;
      Running srv(p, cfg, &json_log);
      auto cli = srv.client();
      cli.Get("/api/v1/model");
      srv.stop();
    }
    std::istringstream t(text_log.str());
    std::vector<std::string> lines;
    for (std::string l; std::getline(t, l);) lines.push_back(l);
    REQUIRE(lines.size() == 2);
    const std::regex pattern(R"(^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\dZ (GET|POST) /api/v1/\w+ \d{3} \d+\.\d{3}ms$)");
    CHECK(std::regex_match(lines[0], pattern));
    CHECK(lines[0].find("GET /api/v1/health 200") != std::string::npos);
    CHECK(lines[1].find("POST /api/v1/predict 415") != std::string::npos);

    const json j = json::parse(json_log.str());
    CHECK(j["method"] == "GET");
    CHECK(j["path"] == "/api/v1/model");
    CHECK(j["status"] == 200);
    CHECK(j["latency_ms"].is_number());
    CHECK(j["ts"].is_string());
  }

  TEST_CASE("static directory is mounted at the root") {
    cxr_test::TempDir dir("serve_static");
    std::ofstream(dir / "index.html") << "<html>ui</html>";
    ServeConfig cfg;
    cfg.static_dir = dir.path().string();
    Running srv(predictor_for(overfit_model()), cfg);
    auto cli = srv.client();
    auto r = cli.Get("/index.html");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->body == "<html>ui</html>");
    ServeConfig bad;
    bad.static_dir = (dir / "missing").string();
    CHECK_THROWS_AS(InferenceServer(predictor_for(overfit_model()), bad, nullptr), UsageError);
  }
}
