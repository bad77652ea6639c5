#include "essaylens/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <set>
#include <sstream>

namespace essaylens::eval {

using nlohmann::json;

namespace {

std::vector<int> labels_of(const scoring::Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.at(i).score);
  return out;
}

FoldResult score_fold(const FoldTask& task, const FoldOutcome& outcome) {
  const auto& meta = *task.meta;
  if (outcome.predictions.size() != task.fold.test.size())
    fail(ErrorCode::shape_mismatch, "fold runner returned " + std::to_string(outcome.predictions.size()) +
                                        " predictions for " + std::to_string(task.fold.test.size()) + " test essays");
  const auto detail = quadratic_weighted_kappa_detail(labels_of(*task.data, task.fold.test), outcome.predictions,
                                                      meta.score_min, meta.score_max);
  FoldResult r;
  r.fold_index = task.fold_index;
  r.test_qwk = detail.value;
  r.degenerate = detail.degenerate;
  r.n_train = task.fold.train.size();
  r.n_dev = task.fold.dev.size();
  r.n_test = task.fold.test.size();
  r.epochs_run = outcome.epochs_run;
  r.best_dev_qwk = outcome.best_dev_qwk;
  return r;
}

}  // namespace

CrossValidation cross_validate(const FoldRunner& runner, const std::string& model_name, const scoring::Dataset& data,
                               const corpus::EssaySetMeta& meta, std::uint64_t seed, CvOptions opts) {
  if (!(opts.fraction > 0.0 && opts.fraction <= 1.0))
    fail(ErrorCode::fraction_out_of_range, "fraction " + std::to_string(opts.fraction) + " outside (0, 1]");
  if (data.size() < corpus::kFoldCount)
    fail(ErrorCode::too_few_records, "cross-validation needs at least 5 essays, got " + std::to_string(data.size()));
  const auto plan = corpus::make_folds(data.size(), seed);

  std::vector<FoldTask> tasks;
  for (std::size_t f = 0; f < corpus::kFoldCount; ++f) {
    FoldTask t;
    t.fold_index = f;
    t.seed = seed + f;
    t.data = &data;
    t.meta = &meta;
    t.fold = plan.folds[f];
    if (opts.fraction < 1.0) {
      t.fold.train = corpus::reduce_training_set(t.fold.train, labels_of(data, t.fold.train), opts.fraction, t.seed);
      t.fold.dev = corpus::reduce_training_set(t.fold.dev, labels_of(data, t.fold.dev), opts.fraction, t.seed + 1000);
    }
    tasks.push_back(std::move(t));
  }

  CrossValidation cv;
  cv.model = model_name;
  cv.set_id = meta.set_id;
  if (opts.parallel) {
    std::vector<std::future<FoldOutcome>> futures;
    for (const auto& t : tasks) futures.push_back(std::async(std::launch::async, runner, std::cref(t)));
    for (std::size_t f = 0; f < tasks.size(); ++f) cv.folds.push_back(score_fold(tasks[f], futures[f].get()));
  } else {
    for (const auto& t : tasks) cv.folds.push_back(score_fold(t, runner(t)));
  }
  double total = 0.0;
  for (const auto& f : cv.folds) total += f.test_qwk;
  cv.mean_qwk = total / static_cast<double>(cv.folds.size());
  return cv;
}

FoldRunner model_runner(scoring::ModelKind kind, const hyper::HyperParams& hp, Index input_dim,
                        scoring::TrainOptions train_opts) {
  return [=](const FoldTask& task) {
    scoring::ModelSpec spec;
    spec.kind = kind;
    spec.hp = hp;
    spec.input_dim = input_dim;
    spec.score_min = task.meta->score_min;
    spec.score_max = task.meta->score_max;
    spec.set_id = task.meta->set_id;
    const auto model = scoring::build_model(spec, task.seed);
    const auto trained = scoring::train(model, *task.data, task.fold, train_opts);
    FoldOutcome out;
    for (auto i : task.fold.test) out.predictions.push_back(scoring::predict(trained.model, task.data->at(i).input).score);
    out.epochs_run = trained.model.provenance.epochs_run;
    out.best_dev_qwk = trained.model.provenance.best_dev_qwk;
    return out;
  };
}

CrossValidation cross_validate(scoring::ModelKind kind, const hyper::HyperParams& hp, const scoring::Dataset& data,
                               const corpus::EssaySetMeta& meta, std::uint64_t seed, CvOptions opts) {
  const Index dim = data.size() > 0 ? data.at(0).input.embeddings.cols() : 0;
  return cross_validate(model_runner(kind, hp, dim), scoring::to_string(kind), data, meta, seed, opts);
}

std::vector<SweepRow> reduced_data_sweep(const FoldRunner& runner, const std::string& model_name,
                                         const scoring::Dataset& data, const corpus::EssaySetMeta& meta,
                                         const std::vector<double>& fractions, std::uint64_t seed, bool parallel) {
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) fail(ErrorCode::fraction_out_of_range, "fraction " + std::to_string(f) + " outside (0, 1]");
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    SweepRow r;
    r.fraction = f;
    r.detail = cross_validate(runner, model_name, data, meta, seed, CvOptions{f, parallel});
    r.mean_qwk = r.detail.mean_qwk;
    rows.push_back(std::move(r));
  }
  return rows;
}

// -- reporting -----------------------------------------------------------------------

std::optional<double> QwkTable::average() const {
  if (per_set.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& [_, v] : per_set) total += v;
  return total / static_cast<double>(per_set.size());
}

json to_json(const QwkTable& t) {
  json sets = json::object();
  for (const auto& [id, v] : t.per_set) sets[std::to_string(id)] = v;
  json j{{"model", t.model}, {"per_set", sets}};
  const auto avg = t.average();
  j["average"] = avg ? json(*avg) : json(nullptr);
  return j;
}

QwkTable qwk_table_from_json(const json& j) {
  QwkTable t;
  try {
    t.model = j.at("model").get<std::string>();
    for (const auto& [key, v] : j.at("per_set").items()) t.per_set[std::stoi(key)] = v.get<double>();
  } catch (const std::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed QWK table: ") + e.what());
  }
  return t;
}

std::string format_table(const std::vector<QwkTable>& rows) {
  std::set<int> ids = {1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t name_width = 5;
  for (const auto& r : rows) {
    name_width = std::max(name_width, r.model.size());
    for (const auto& [id, _] : r.per_set) ids.insert(id);
  }
  std::ostringstream os;
  char cell[32];
  os << std::string("Model") << std::string(name_width - 5 + 2, ' ');
  for (int id : ids) {
    std::snprintf(cell, sizeof cell, "%7d", id);
    os << cell;
  }
  os << "    Avg\n";
  for (const auto& r : rows) {
    os << r.model << std::string(name_width - r.model.size() + 2, ' ');
    for (int id : ids) {
      auto it = r.per_set.find(id);
      if (it == r.per_set.end()) std::snprintf(cell, sizeof cell, "%7s", "-");
      else std::snprintf(cell, sizeof cell, "%7.3f", it->second);
      os << cell;
    }
    const auto avg = r.average();
    if (avg) std::snprintf(cell, sizeof cell, "%7.3f", *avg);
    else std::snprintf(cell, sizeof cell, "%7s", "-");
    os << cell << '\n';
  }
  return os.str();
}

json to_json(const CrossValidation& cv) {
  json folds = json::array();
  for (const auto& f : cv.folds)
    folds.push_back({{"fold", f.fold_index},
                     {"test_qwk", f.test_qwk},
                     {"degenerate", f.degenerate},
                     {"n_train", f.n_train},
                     {"n_dev", f.n_dev},
                     {"n_test", f.n_test},
                     {"epochs_run", f.epochs_run},
                     {"best_dev_qwk", f.best_dev_qwk}});
  return json{{"model", cv.model}, {"set_id", cv.set_id}, {"mean_qwk", cv.mean_qwk}, {"folds", folds}};
}

json to_json(const std::vector<SweepRow>& sweep) {
  json rows = json::array();
  for (const auto& r : sweep)
    rows.push_back({{"fraction", r.fraction}, {"mean_qwk", r.mean_qwk}, {"detail", to_json(r.detail)}});
  return rows;
}

}  // namespace essaylens::eval
