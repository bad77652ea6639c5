#include "essaylens/gateway.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "httplib.h"

#include "essaylens/embeddings.hpp"
#include "essaylens/insight.hpp"

namespace essaylens::gateway {

using nlohmann::json;
namespace fs = std::filesystem;

// -- config -----------------------------------------------------------------------------

void apply_config_json(Config& cfg, const json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "model_dir") cfg.model_dir = v.get<std::string>();
      else if (key == "provider") cfg.provider = v.get<std::string>();
      else if (key == "host") cfg.host = v.get<std::string>();
      else if (key == "port") cfg.port = v.get<int>();
      else if (key == "ui_dir") cfg.ui_dir = v.get<std::string>();
      else if (key == "sets_file") cfg.sets_file = v.get<std::string>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "threshold") cfg.threshold = v.get<double>();
      else fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    } catch (const json::exception&) {
      fail(ErrorCode::invalid_argument, "config key '" + key + "' has the wrong type");
    }
  }
}

void apply_environment(Config& cfg, const std::function<const char*(const char*)>& getenv_fn) {
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv_fn(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  auto number = [](const std::string& name, const std::string& text, auto parse) {
    try {
      return parse(text);
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_argument, name + "='" + text + "' is not a number");
    }
  };
  if (auto v = get("ESSAYLENS_MODEL_DIR")) cfg.model_dir = *v;
  if (auto v = get("ESSAYLENS_PROVIDER")) cfg.provider = *v;
  if (auto v = get("ESSAYLENS_HOST")) cfg.host = *v;
  if (auto v = get("ESSAYLENS_PORT"))
    cfg.port = number("ESSAYLENS_PORT", *v, [](const std::string& s) { return std::stoi(s); });
  if (auto v = get("ESSAYLENS_UI_DIR")) cfg.ui_dir = *v;
  if (auto v = get("ESSAYLENS_SETS_FILE")) cfg.sets_file = *v;
  if (auto v = get("ESSAYLENS_SEED"))
    cfg.seed = number("ESSAYLENS_SEED", *v, [](const std::string& s) { return std::stoull(s); });
  if (auto v = get("ESSAYLENS_THRESHOLD"))
    cfg.threshold = number("ESSAYLENS_THRESHOLD", *v, [](const std::string& s) { return std::stod(s); });
}

// -- registry -------------------------------------------------------------------------------

json to_json(const ModelManifest& m) {
  json qwk = json::object();
  for (const auto& [id, v] : m.qwk) qwk[std::to_string(id)] = v;
  return json{{"id", m.id},
              {"kind", scoring::to_string(m.kind)},
              {"set_id", m.set_id},
              {"score_min", m.score_min},
              {"score_max", m.score_max},
              {"input_dim", m.input_dim},
              {"provider", m.provider},
              {"provenance",
               {{"seed", m.provenance.seed},
                {"epochs_run", m.provenance.epochs_run},
                {"best_epoch", m.provenance.best_epoch},
                {"best_dev_qwk", m.provenance.best_dev_qwk},
                {"trained", m.provenance.trained}}},
              {"qwk", qwk}};
}

ModelRegistry ModelRegistry::load_directory(const std::string& dir) {
  ModelRegistry reg;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return reg;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".eslm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    auto model = scoring::load_model_file(path.string());
    std::map<int, double> qwk;
    fs::path sidecar = path;
    sidecar.replace_extension(".json");
    if (fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      const json j = json::parse(in, nullptr, false);
      if (j.is_object() && j.contains("qwk") && j["qwk"].is_object())
        for (const auto& [k, v] : j["qwk"].items())
          if (v.is_number()) qwk[std::stoi(k)] = v.get<double>();
    }
    reg.add(path.stem().string(), std::move(model), std::move(qwk));
  }
  return reg;
}

void ModelRegistry::add(const std::string& id, scoring::ScoreModel model, std::map<int, double> qwk) {
  if (entries_.count(id)) fail(ErrorCode::invalid_argument, "duplicate model id '" + id + "'");
  ModelManifest m;
  m.id = id;
  m.kind = model.spec.kind;
  m.set_id = model.spec.set_id;
  m.score_min = model.spec.score_min;
  m.score_max = model.spec.score_max;
  m.input_dim = model.spec.input_dim;
  m.provider = model.spec.provider;
  m.provenance = model.provenance;
  m.qwk = std::move(qwk);
  entries_.emplace(id, Entry{std::make_shared<const scoring::ScoreModel>(std::move(model)), std::move(m)});
}

const scoring::ScoreModel* ModelRegistry::find(const std::string& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : it->second.model.get();
}

std::vector<ModelManifest> ModelRegistry::manifests() const {
  std::vector<ModelManifest> out;
  for (const auto& [_, e] : entries_) out.push_back(e.manifest);
  return out;
}

// -- service ----------------------------------------------------------------------------------

Response error_response(int status, const std::string& code, const std::string& detail) {
  return {status, json{{"error", code}, {"detail", detail}}};
}

namespace {

struct RequestError {
  Response response;
};

[[noreturn]] void reject(int status, const std::string& code, const std::string& detail) {
  throw RequestError{error_response(status, code, detail)};
}

json parse_body(const std::string& body) {
  if (body.size() > kMaxBodyBytes)
    reject(413, "payload_too_large", "request body exceeds " + std::to_string(kMaxBodyBytes) + " bytes");
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) reject(400, "malformed_body", "request body must be a JSON object");
  return j;
}

std::string required_text(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) reject(400, "malformed_body", std::string("missing string field '") + key + "'");
  std::string text = j[key].get<std::string>();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    reject(400, "empty_text", std::string("field '") + key + "' is empty");
  return text;
}

std::optional<std::string> optional_text(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) reject(400, "malformed_body", std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

json split_json(const embed::SentenceSplit& s) {
  json offsets = json::array();
  for (const auto& [b, e] : s.offsets) offsets.push_back({b, e});
  return json{{"sentences", s.sentences}, {"offsets", offsets}};
}

embed::SentenceSplit segment_nonempty(const std::string& text, const char* what) {
  auto split = embed::segment_sentences(text);
  if (split.size() == 0) reject(400, "empty_text", std::string(what) + " has no sentences");
  return split;
}

const scoring::ScoreModel& resolve_model(const ModelRegistry& reg, const std::string& id) {
  const auto* m = reg.find(id);
  if (m == nullptr) reject(404, "model_not_found", "no model with id '" + id + "'");
  return *m;
}

/// Request provider, else the model's own provider when it can run
/// in-process, else the configured default.
std::unique_ptr<embed::SentenceEmbedder> choose_provider(const std::optional<std::string>& requested,
                                                         const scoring::ScoreModel* model, const Config& cfg) {
  std::string id = cfg.provider;
  if (requested) id = *requested;
  else if (model && embed::ProviderSpec::parse(model->spec.provider).kind == "hashed") id = model->spec.provider;
  return embed::make_provider(id);
}

json predict_json(const scoring::ScoreModel& model, const embed::SentenceEmbedder& provider,
                  const embed::SentenceSplit& essay) {
  if (provider.dim() != model.spec.input_dim)
    reject(422, "dimension_mismatch", "provider '" + provider.id() + "' produces " + std::to_string(provider.dim()) +
                                          "-dim vectors, model expects " + std::to_string(model.spec.input_dim));
  const auto input = scoring::make_input(essay.sentences, provider.embed(essay.sentences));
  return scoring::prediction_to_json(scoring::predict(model, input));
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const RequestError& e) {
    return e.response;
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::dimension_mismatch:
      case ErrorCode::provider_unavailable:
        return error_response(422, std::string(to_string(e.code())), e.what());
      case ErrorCode::invalid_argument:
        return error_response(400, std::string(to_string(e.code())), e.what());
      default:
        return error_response(500, std::string(to_string(e.code())), e.what());
    }
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

}  // namespace

Service::Service(ModelRegistry registry, corpus::EssaySetCollection sets, Config cfg)
    : registry_(std::move(registry)), sets_(std::move(sets)), cfg_(std::move(cfg)) {}

Response Service::analyze(const std::string& body) const {
  return guarded([&] {
    const json req = parse_body(body);
    const std::string passage_text = required_text(req, "passage");
    const std::string essay_text = required_text(req, "essay");
    const auto model_id = optional_text(req, "model_id");
    const auto provider_id = optional_text(req, "provider");
    double tau = cfg_.threshold;
    if (req.contains("threshold")) {
      if (!req["threshold"].is_number()) reject(400, "malformed_body", "threshold must be a number");
      tau = req["threshold"].get<double>();
      if (!(tau >= 0.0 && tau < 1.0)) reject(400, "malformed_body", "threshold must lie in [0, 1)");
    }
    const scoring::ScoreModel* model = model_id ? &resolve_model(registry_, *model_id) : nullptr;

    const auto essay = segment_nonempty(essay_text, "essay");
    const auto passage = segment_nonempty(passage_text, "passage");
    const auto provider = choose_provider(provider_id, model, cfg_);
    const MatrixXd sim = insight::similarity_matrix(provider->embed(essay.sentences), provider->embed(passage.sentences));

    json matrix = json::array();
    json highlights = json::array();
    for (Index r = 0; r < sim.rows(); ++r) {
      matrix.push_back(std::vector<double>(sim.row(r).begin(), sim.row(r).end()));
      json spans = json::array();
      for (const auto& s : insight::highlight_spans(sim, static_cast<std::size_t>(r), passage, tau))
        spans.push_back({{"passage_index", s.passage_index},
                         {"begin", s.begin},
                         {"end", s.end},
                         {"similarity", s.similarity},
                         {"saturation", s.saturation}});
      highlights.push_back(std::move(spans));
    }
    json out{{"essay", split_json(essay)},
             {"passage", split_json(passage)},
             {"similarity", matrix},
             {"highlights", highlights},
             {"threshold", tau},
             {"provider", provider->id()}};
    if (auto prompt = optional_text(req, "prompt")) out["prompt"] = *prompt;
    if (model) {
      out["model_id"] = *model_id;
      out["prediction"] = predict_json(*model, *provider, essay);
    }
    return Response{200, out};
  });
}

Response Service::score(const std::string& body) const {
  return guarded([&] {
    const json req = parse_body(body);
    const auto model_id = optional_text(req, "model_id");
    if (!model_id) reject(400, "malformed_body", "missing string field 'model_id'");
    const std::string essay_text = required_text(req, "essay");
    const auto& model = resolve_model(registry_, *model_id);
    const auto essay = segment_nonempty(essay_text, "essay");
    const auto provider = choose_provider(optional_text(req, "provider"), &model, cfg_);
    json out = predict_json(model, *provider, essay);
    out["model_id"] = *model_id;
    out["score_min"] = model.spec.score_min;
    out["score_max"] = model.spec.score_max;
    return Response{200, out};
  });
}

Response Service::models() const {
  json list = json::array();
  for (const auto& m : registry_.manifests()) list.push_back(to_json(m));
  return {200, json{{"models", list}}};
}

Response Service::essay_sets() const { return {200, json{{"essay_sets", sets_.to_json()}}}; }

Response Service::health() const {
  return {200, json{{"status", "ok"}, {"models", registry_.manifests().size()}}};
}

// -- HTTP server ---------------------------------------------------------------------------------

struct Server::Impl {
  const Service& service;
  httplib::Server svr;
  explicit Impl(const Service& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::string status_code_name(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 413: return "payload_too_large";
    default: return status >= 500 ? "internal" : "http_error";
  }
}

}  // namespace

Server::Server(const Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->svr;
  const Service& svc = service;
  svr.set_payload_max_length(kMaxBodyBytes);
  svr.Post("/v1/analyze", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.analyze(req.body)); });
  svr.Post("/v1/score", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.score(req.body)); });
  svr.Get("/v1/models", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.models()); });
  svr.Get("/v1/essay-sets", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.essay_sets()); });
  svr.Get("/healthz", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  const auto& ui = service.config().ui_dir;
  std::error_code ec;
  if (!ui.empty() && fs::is_directory(ui, ec)) svr.set_mount_point("/", ui);
  svr.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string detail = res.status == 413 ? "request body exceeds 1 MiB" : req.method + " " + req.path;
    send(res, error_response(res.status, status_code_name(res.status), detail));
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  auto& svr = impl_->svr;
  if (port == 0) {
    const int bound = svr.bind_to_any_port(host);
    if (bound < 0) fail(ErrorCode::io_error, "cannot bind " + host);
    return bound;
  }
  if (!svr.bind_to_port(host, port)) fail(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { impl_->svr.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->svr.stop();
}

}  // namespace essaylens::gateway
