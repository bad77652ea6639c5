#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "essaylens/embeddings.hpp"
#include "essaylens/evaluation.hpp"
#include "essaylens/gateway.hpp"
#include "essaylens/hypergen.hpp"
#include "essaylens/synthetic.hpp"

namespace essaylens::gateway {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path);
  out << text;
}

json parse_json_arg(const std::string& arg) {
  const std::string text = !arg.empty() && arg.front() == '{' ? arg : read_file(arg);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::invalid_argument, "'" + arg + "' is not a JSON object");
  return j;
}

/// Options shared by the data-driven subcommands.
struct Common {
  std::string config_file;
  std::string model_dir, provider, host, ui_dir, sets_file;
  int port = 0;
  std::uint64_t seed = 0;
  CLI::Option* o_model_dir = nullptr;
  CLI::Option* o_provider = nullptr;
  CLI::Option* o_host = nullptr;
  CLI::Option* o_port = nullptr;
  CLI::Option* o_ui_dir = nullptr;
  CLI::Option* o_sets = nullptr;
  CLI::Option* o_seed = nullptr;

  /// defaults < config file < environment < flags
  Config resolve() const {
    Config cfg;
    std::string file = config_file;
    if (file.empty())
      if (const char* env = std::getenv("ESSAYLENS_CONFIG")) file = env;
    if (!file.empty()) apply_config_json(cfg, parse_json_arg(file));
    apply_environment(cfg, [](const char* n) { return std::getenv(n); });
    if (o_model_dir->count()) cfg.model_dir = model_dir;
    if (o_provider->count()) cfg.provider = provider;
    if (o_host->count()) cfg.host = host;
    if (o_port->count()) cfg.port = port;
    if (o_ui_dir->count()) cfg.ui_dir = ui_dir;
    if (o_sets->count()) cfg.sets_file = sets_file;
    if (o_seed->count()) cfg.seed = seed;
    return cfg;
  }

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON config file");
    o_model_dir = app.add_option("--model-dir", model_dir, "Model directory (default ./models)");
    o_provider = app.add_option("--provider", provider, "Embedding provider id, e.g. hashed:512:0");
    o_host = app.add_option("--host", host, "Bind address");
    o_port = app.add_option("--port", port, "Port");
    o_ui_dir = app.add_option("--ui-dir", ui_dir, "Static UI directory served at /");
    o_sets = app.add_option("--sets", sets_file, "Essay-set table (JSON) overriding the built-in one");
    o_seed = app.add_option("--seed", seed, "Random seed");
  }
};

corpus::EssaySetCollection load_sets(const Config& cfg) {
  auto sets = corpus::EssaySetCollection::builtin();
  if (!cfg.sets_file.empty()) sets.override_with(corpus::EssaySetCollection::load(cfg.sets_file));
  return sets;
}

struct DataArgs {
  std::string data, embeddings, hp, rules;
  std::string kind = "mha";
  int set = 0;
};

void attach_data(CLI::App& app, DataArgs& d, bool set_required) {
  app.add_option("--data", d.data, "ASAP-format TSV corpus")->required();
  app.add_option("--embeddings", d.embeddings, "Embedding JSONL file keyed by essay_id")->required();
  app.add_option("--model,--model-kind", d.kind, "Model kind: lstm, mha, mha2, mha_blstm, passage_conditioned");
  auto* s = app.add_option("--set", d.set, "Essay set id");
  if (set_required) s->required();
  app.add_option("--hp", d.hp, "Hyperparameter overrides (JSON object or file)");
  app.add_option("--rules", d.rules, "Hypergen coefficient overrides (JSON object or file)");
}

std::vector<corpus::EssayRecord> load_records(const DataArgs& d, const corpus::EssaySetCollection& sets,
                                              std::ostream& err) {
  std::vector<std::string> warnings;
  auto records = corpus::load_asap_tsv(d.data, sets, {&warnings});
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  std::map<std::string, embed::EmbeddingRecord> by_id;
  for (auto& r : embed::load_embedding_file(d.embeddings)) by_id.emplace(r.id, std::move(r));
  for (auto& r : records) {
    auto it = by_id.find(r.essay_id);
    if (it == by_id.end()) continue;
    r.sentences = it->second.sentences;
    r.embedding = it->second.vectors;
    r.embedded = true;
  }
  return records;
}

hyper::HyperParams hyperparams_for(const corpus::EssaySetMeta& meta, const corpus::EssaySetCollection& sets,
                                   const DataArgs& d, std::uint64_t seed) {
  hyper::HyperRules rules;
  if (!d.rules.empty()) {
    json r = rules;
    r.update(parse_json_arg(d.rules));
    rules = r.get<hyper::HyperRules>();
  }
  auto hp = hyper::generate_hyperparams(meta, sets.mean_class_count(), rules);
  hp.seed = seed;
  if (!d.hp.empty()) {
    json j = hp;
    j.update(parse_json_arg(d.hp));
    hp = j.get<hyper::HyperParams>();
  }
  hyper::validate(hp);
  return hp;
}

std::vector<corpus::EssayRecord> records_of_set(const std::vector<corpus::EssayRecord>& all, int set) {
  std::vector<corpus::EssayRecord> out;
  for (const auto& r : all)
    if (r.set_id == set) out.push_back(r);
  if (out.empty()) fail(ErrorCode::not_found, "no essays for set " + std::to_string(set));
  return out;
}

std::string provider_of(const std::vector<corpus::EssayRecord>& records, const std::string& embeddings_path) {
  (void)records;
  const auto recs = embed::load_embedding_file(embeddings_path);
  return recs.empty() ? std::string() : recs.front().provider;
}

std::string tsv_escape(const std::string& s) {
  std::string out;
  for (char c : s) out += (c == '\t' || c == '\n') ? ' ' : c;
  return out;
}

std::string resolve_model_path(const std::string& m, const Config& cfg) {
  if (fs::exists(m)) return m;
  const fs::path candidate = fs::path(cfg.model_dir) / (m + ".eslm");
  if (fs::exists(candidate)) return candidate.string();
  fail(ErrorCode::not_found, "model '" + m + "' not found (looked for " + m + " and " + candidate.string() + ")");
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"essaylens: automated essay scoring and passage analysis"};
  app.name("essaylens");
  app.fallthrough();  // global flags may follow the subcommand
  Common common;
  common.attach(app);

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Segment and embed a TSV corpus into an embedding JSONL file");
  std::string embed_data, embed_out;
  embed_cmd->add_option("--data", embed_data, "ASAP-format TSV corpus")->required();
  embed_cmd->add_option("--out", embed_out, "Output JSONL path")->required();

  // hypergen show
  auto* hyper_cmd = app.add_subcommand("hypergen", "Metadata-driven hyperparameters");
  auto* hyper_show = hyper_cmd->add_subcommand("show", "Print the generated hyperparameters as JSON");
  int hyper_set = 0;
  std::string hyper_rules;
  hyper_show->add_option("--set", hyper_set, "Essay set id")->required();
  hyper_show->add_option("--rules", hyper_rules, "Coefficient overrides (JSON object or file)");
  hyper_cmd->require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on fold 0 of a set and save it");
  DataArgs train_args;
  std::string train_out;
  attach_data(*train_cmd, train_args, true);
  train_cmd->add_option("--out", train_out, "Model path (default <model-dir>/<kind>-set<N>.eslm)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Five-fold cross-validation; emits a QWK table");
  DataArgs eval_args;
  std::string eval_out, eval_format = "json";
  attach_data(*eval_cmd, eval_args, false);
  eval_cmd->add_option("--out", eval_out, "Write the full report (JSON) here");
  eval_cmd->add_option("--format", eval_format, "json or text")->check(CLI::IsMember({"json", "text"}));

  // reduce-sweep
  auto* sweep_cmd = app.add_subcommand("reduce-sweep", "Cross-validation on reduced train/dev fractions");
  DataArgs sweep_args;
  std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::string sweep_out;
  attach_data(*sweep_cmd, sweep_args, true);
  sweep_cmd->add_option("--fraction", fractions, "Fractions in (0, 1]")->delimiter(',');
  sweep_cmd->add_option("--out", sweep_out, "Write the report (JSON) here");

  // score
  auto* score_cmd = app.add_subcommand("score", "Score one essay with a saved model");
  std::string score_model, score_file;
  score_cmd->add_option("--model", score_model, "Model id or path")->required();
  score_cmd->add_option("--essay-file", score_file, "Essay text file")->required();

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Link essay sentences to passage sentences");
  std::string an_passage, an_essay, an_model, an_prompt;
  double an_threshold = -1.0;
  analyze_cmd->add_option("--passage-file", an_passage, "Source passage text file")->required();
  analyze_cmd->add_option("--essay-file", an_essay, "Essay text file")->required();
  analyze_cmd->add_option("--model", an_model, "Model id or path (adds a score)");
  analyze_cmd->add_option("--prompt-file", an_prompt, "Prompt text file");
  analyze_cmd->add_option("--threshold", an_threshold, "Highlight threshold in [0, 1)");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic scored corpus and its embeddings");
  std::string synth_dir;
  synth::SyntheticOptions synth_opts;
  synth_cmd->add_option("--out", synth_dir, "Output directory (corpus.tsv, embeddings.jsonl)")->required();
  synth_cmd->add_option("--essays", synth_opts.essays, "Essay count");
  synth_cmd->add_option("--dim", synth_opts.dim, "Embedding width");

  app.require_subcommand(1);

  if (argc <= 1) {
    out << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const Config cfg = common.resolve();
    const auto sets = load_sets(cfg);

    if (*embed_cmd) {
      std::vector<std::string> warnings;
      const auto records = corpus::load_asap_tsv(embed_data, sets, {&warnings});
      for (const auto& w : warnings) err << "warning: " << w << '\n';
      const auto provider = embed::make_provider(cfg.provider);
      std::vector<embed::EmbeddingRecord> outrecs;
      for (const auto& r : records) {
        const auto split = embed::segment_sentences(r.text);
        outrecs.push_back({r.essay_id, split.sentences, provider->embed(split.sentences), provider->dim(), provider->id()});
      }
      embed::save_embedding_file(embed_out, outrecs);
      out << json{{"records", outrecs.size()}, {"provider", provider->id()}, {"out", embed_out}}.dump() << '\n';
      return 0;
    }

    if (*hyper_show) {
      DataArgs d;
      d.rules = hyper_rules;
      const auto hp = hyperparams_for(sets.at(hyper_set), sets, d, cfg.seed);
      json j = hp;
      j["set_id"] = hyper_set;
      out << j.dump(2) << '\n';
      return 0;
    }

    if (*train_cmd) {
      const auto& meta = sets.at(train_args.set);
      const auto records = records_of_set(load_records(train_args, sets, err), train_args.set);
      const auto data = scoring::make_dataset(records);
      const auto hp = hyperparams_for(meta, sets, train_args, cfg.seed);
      scoring::ModelSpec spec;
      spec.kind = scoring::parse_model_kind(train_args.kind);
      spec.hp = hp;
      spec.input_dim = data.at(0).input.embeddings.cols();
      spec.score_min = meta.score_min;
      spec.score_max = meta.score_max;
      spec.set_id = meta.set_id;
      spec.provider = provider_of(records, train_args.embeddings);
      MatrixXd passage;
      if (spec.kind == scoring::ModelKind::passage_conditioned && meta.passage) {
        const auto p = embed::ProviderSpec::parse(spec.provider);
        const auto provider = embed::make_provider(p);
        passage = provider->embed(embed::segment_sentences(*meta.passage).sentences);
      }
      const auto plan = corpus::make_folds(data.size(), cfg.seed);
      const auto& fold = plan.folds[0];
      auto result = scoring::train(scoring::build_model(spec, cfg.seed, passage), data, fold);
      std::vector<int> truth, pred;
      for (auto i : fold.test) {
        truth.push_back(data.at(i).score);
        pred.push_back(scoring::predict(result.model, data.at(i).input).score);
      }
      const double test_qwk = eval::quadratic_weighted_kappa(truth, pred, meta.score_min, meta.score_max);
      const std::string path = train_out.empty() ? (fs::path(cfg.model_dir) /
                                                    (train_args.kind + "-set" + std::to_string(meta.set_id) + ".eslm"))
                                                       .string()
                                                 : train_out;
      write_file(path, scoring::save_model(result.model));
      fs::path sidecar(path);
      sidecar.replace_extension(".json");
      write_file(sidecar.string(), json{{"qwk", {{std::to_string(meta.set_id), test_qwk}}}}.dump(2));
      json epochs = json::array();
      for (const auto& e : result.report.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss}, {"dev_qwk", e.dev_qwk}});
      out << json{{"model", path},
                  {"test_qwk", test_qwk},
                  {"best_epoch", result.report.best_epoch},
                  {"stop_reason", result.report.stop_reason},
                  {"epochs", epochs}}
                 .dump(2)
          << '\n';
      return 0;
    }

    if (*eval_cmd) {
      const auto records = load_records(eval_args, sets, err);
      std::vector<int> set_ids;
      if (eval_args.set != 0) set_ids.push_back(eval_args.set);
      else
        for (const auto& m : sets.sets())
          for (const auto& r : records)
            if (r.set_id == m.set_id) {
              set_ids.push_back(m.set_id);
              break;
            }
      const auto kind = scoring::parse_model_kind(eval_args.kind);
      eval::QwkTable table;
      table.model = scoring::to_string(kind);
      json detail = json::array();
      for (int id : set_ids) {
        const auto& meta = sets.at(id);
        const auto data = scoring::make_dataset(records_of_set(records, id));
        const auto hp = hyperparams_for(meta, sets, eval_args, cfg.seed);
        const auto cv = eval::cross_validate(kind, hp, data, meta, cfg.seed);
        table.per_set[id] = cv.mean_qwk;
        detail.push_back(eval::to_json(cv));
      }
      json report = eval::to_json(table);
      report["detail"] = detail;
      if (!eval_out.empty()) write_file(eval_out, report.dump(2));
      if (eval_format == "text") out << eval::format_table({table});
      else out << report.dump(2) << '\n';
      return 0;
    }

    if (*sweep_cmd) {
      const auto& meta = sets.at(sweep_args.set);
      const auto data = scoring::make_dataset(records_of_set(load_records(sweep_args, sets, err), sweep_args.set));
      const auto hp = hyperparams_for(meta, sets, sweep_args, cfg.seed);
      const auto kind = scoring::parse_model_kind(sweep_args.kind);
      const auto rows = eval::reduced_data_sweep(eval::model_runner(kind, hp, data.at(0).input.embeddings.cols()),
                                                 scoring::to_string(kind), data, meta, fractions, cfg.seed);
      const json report{{"model", scoring::to_string(kind)}, {"set_id", meta.set_id}, {"rows", eval::to_json(rows)}};
      if (!sweep_out.empty()) write_file(sweep_out, report.dump(2));
      out << report.dump(2) << '\n';
      return 0;
    }

    if (*score_cmd) {
      const std::string essay = read_file(score_file);
      const std::string path = resolve_model_path(score_model, cfg);
      const std::string id = fs::path(path).stem().string();
      ModelRegistry reg;
      reg.add(id, scoring::load_model_file(path));
      const Service svc(std::move(reg), sets, cfg);
      const auto r = svc.score(json{{"model_id", id}, {"essay", essay}}.dump());
      (r.status == 200 ? out : err) << r.body.dump(2) << '\n';
      return r.status == 200 ? 0 : 2;
    }

    if (*analyze_cmd) {
      json req{{"passage", read_file(an_passage)}, {"essay", read_file(an_essay)}};
      if (!an_prompt.empty()) req["prompt"] = read_file(an_prompt);
      if (an_threshold >= 0.0) req["threshold"] = an_threshold;
      ModelRegistry reg;
      if (!an_model.empty()) {
        const std::string path = resolve_model_path(an_model, cfg);
        const std::string id = fs::path(path).stem().string();
        reg.add(id, scoring::load_model_file(path));
        req["model_id"] = id;
      }
      const Service svc(std::move(reg), sets, cfg);
      const auto r = svc.analyze(req.dump());
      (r.status == 200 ? out : err) << r.body.dump(2) << '\n';
      return r.status == 200 ? 0 : 2;
    }

    if (*serve_cmd) {
      const Service svc(ModelRegistry::load_directory(cfg.model_dir), sets, cfg);
      Server server(svc);
      const int port = server.bind(cfg.host, cfg.port);
      err << "listening on http://" << cfg.host << ':' << port << " (" << svc.models().body["models"].size()
          << " models from " << cfg.model_dir << ")\n";
      server.listen();
      return 0;
    }

    if (*synth_cmd) {
      synth_opts.seed = cfg.seed != 0 ? cfg.seed : synth_opts.seed;
      const auto records = synth::make_corpus(synth_opts);
      std::ostringstream tsv;
      tsv << "essay_id\tessay_set\tessay\tdomain1_score\n";
      std::vector<embed::EmbeddingRecord> emb;
      const embed::HashedEmbedder provider(synth_opts.dim, synth_opts.seed);
      for (const auto& r : records) {
        tsv << r.essay_id << '\t' << r.set_id << '\t' << tsv_escape(r.text) << '\t' << r.score << '\n';
        emb.push_back({r.essay_id, r.sentences, r.embedding, r.embedding.cols(), provider.id()});
      }
      write_file((fs::path(synth_dir) / "corpus.tsv").string(), tsv.str());
      embed::save_embedding_file((fs::path(synth_dir) / "embeddings.jsonl").string(), emb);
      out << json{{"essays", records.size()}, {"set_id", synth_opts.set_id}, {"dim", synth_opts.dim}, {"out", synth_dir}}
                 .dump()
          << '\n';
      return 0;
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  out << app.help();
  return 1;
}

}  // namespace essaylens::gateway
