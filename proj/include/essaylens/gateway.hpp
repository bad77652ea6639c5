#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "essaylens/corpus.hpp"
#include "essaylens/scorers.hpp"

namespace essaylens::gateway {

inline constexpr std::size_t kMaxBodyBytes = 1 << 20;

struct Config {
  std::string model_dir = "./models";
  std::string provider = "hashed:512:0";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir = "./ui/dist";
  std::string sets_file;  // optional essay-set table overriding the built-in one
  std::uint64_t seed = 0;
  double threshold = 0.3;
};

/// Applies a JSON config object onto `cfg` (unknown keys are rejected).
void apply_config_json(Config& cfg, const nlohmann::json& j);
/// Applies ESSAYLENS_* variables; `getenv` is injectable for tests.
void apply_environment(Config& cfg, const std::function<const char*(const char*)>& getenv_fn);

struct ModelManifest {
  std::string id;
  scoring::ModelKind kind = scoring::ModelKind::mha;
  int set_id = 0;
  int score_min = 0;
  int score_max = 0;
  Index input_dim = 0;
  std::string provider;
  scoring::Provenance provenance;
  std::map<int, double> qwk;  // from an optional <id>.json sidecar
};

nlohmann::json to_json(const ModelManifest& m);

/// Read-only after construction.  Models are the *.eslm files of a directory;
/// a model's id is its file stem.
class ModelRegistry {
 public:
  ModelRegistry() = default;
  static ModelRegistry load_directory(const std::string& dir);

  void add(const std::string& id, scoring::ScoreModel model, std::map<int, double> qwk = {});
  const scoring::ScoreModel* find(const std::string& id) const;
  std::vector<ModelManifest> manifests() const;

 private:
  struct Entry {
    std::shared_ptr<const scoring::ScoreModel> model;
    ModelManifest manifest;
  };
  std::map<std::string, Entry> entries_;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// HTTP-independent request handling; every method is safe to call
/// concurrently.
class Service {
 public:
  Service(ModelRegistry registry, corpus::EssaySetCollection sets, Config cfg);

  Response analyze(const std::string& body) const;
  Response score(const std::string& body) const;
  Response models() const;
  Response essay_sets() const;
  Response health() const;

  const Config& config() const { return cfg_; }

 private:
  ModelRegistry registry_;
  corpus::EssaySetCollection sets_;
  Config cfg_;
};

/// {"error": code, "detail": text}
Response error_response(int status, const std::string& code, const std::string& detail);

/// Blocks serving until stop is requested through the returned handle's
/// `stop()` (or the process exits).
class Server {
 public:
  explicit Server(const Service& service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds; port 0 picks a free port.  Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocking
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Entry point for the command-line tool.  Exit codes: 0 ok, 1 usage, 2 data error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace essaylens::gateway
