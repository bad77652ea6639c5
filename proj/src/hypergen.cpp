#include "essaylens/hypergen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "essaylens/error.hpp"
#include "essaylens/objectives.hpp"

namespace essaylens::hyper {

NLOHMANN_JSON_SERIALIZE_ENUM(ClassLoss, {{ClassLoss::ordinal_kappa, "ordinal_kappa"}, {ClassLoss::cce, "cce"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Readout, {{Readout::cls, "cls"}, {Readout::luong, "luong"}})

}  // namespace essaylens::hyper

namespace essaylens::optim {
NLOHMANN_JSON_SERIALIZE_ENUM(Method, {{Method::adam, "adam"}, {Method::adamax, "adamax"}})
}

namespace essaylens::hyper {

std::string to_string(ClassLoss k) { return nlohmann::json(k).get<std::string>(); }
std::string to_string(Readout r) { return nlohmann::json(r).get<std::string>(); }

void validate(const HyperParams& hp) {
  auto bad = [](const std::string& what) { fail(ErrorCode::invalid_spec, "hyperparameters: " + what); };
  if (!(hp.P > 0.0 && hp.P < 1.0)) bad("P must lie in (0, 1)");
  if (!(hp.dropout >= 0.0 && hp.dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (hp.n_heads <= 0 || hp.d_model <= 0 || hp.d_model % hp.n_heads != 0)
    bad("d_model " + std::to_string(hp.d_model) + " is not divisible by " + std::to_string(hp.n_heads) + " heads");
  if (hp.batch_size < 2) bad("batch size must be at least 2");
  if (hp.epochs < 1) bad("epochs must be positive");
  if (hp.patience < 1 || hp.patience > hp.epochs) bad("patience must lie in [1, epochs]");
  if (hp.d_ff < 1) bad("d_ff must be positive");
  if (hp.warmup_steps < 1) bad("warmup_steps must be positive");
  if (!(hp.label_smoothing >= 0.0 && hp.label_smoothing < 1.0)) bad("label smoothing must lie in [0, 1)");
  if (hp.learning_rate < 0.0) bad("learning rate must be nonnegative");
  if (hp.attention_layers < 1) bad("attention_layers must be positive");
}

void to_json(nlohmann::json& j, const HyperParams& hp) {
  j = nlohmann::json{{"P", hp.P},
                     {"dropout", hp.dropout},
                     {"d_ff", hp.d_ff},
                     {"n_heads", hp.n_heads},
                     {"batch_size", hp.batch_size},
                     {"epochs", hp.epochs},
                     {"patience", hp.patience},
                     {"d_model", hp.d_model},
                     {"use_schedule", hp.use_schedule},
                     {"warmup_steps", hp.warmup_steps},
                     {"class_loss_kind", hp.class_loss},
                     {"readout", hp.readout},
                     {"seed", hp.seed},
                     {"label_smoothing", hp.label_smoothing},
                     {"learning_rate", hp.learning_rate},
                     {"optimizer", hp.optimizer},
                     {"positional_encoding", hp.positional_encoding},
                     {"attention_layers", hp.attention_layers}};
}

void from_json(const nlohmann::json& j, HyperParams& hp) {
  HyperParams d;
  hp.P = j.value("P", d.P);
  hp.dropout = j.value("dropout", d.dropout);
  hp.d_ff = j.value("d_ff", d.d_ff);
  hp.n_heads = j.value("n_heads", d.n_heads);
  hp.batch_size = j.value("batch_size", d.batch_size);
  hp.epochs = j.value("epochs", d.epochs);
  hp.patience = j.value("patience", d.patience);
  hp.d_model = j.value("d_model", d.d_model);
  hp.use_schedule = j.value("use_schedule", d.use_schedule);
  hp.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  hp.class_loss = j.value("class_loss_kind", d.class_loss);
  hp.readout = j.value("readout", d.readout);
  hp.seed = j.value("seed", d.seed);
  hp.label_smoothing = j.value("label_smoothing", d.label_smoothing);
  hp.learning_rate = j.value("learning_rate", d.learning_rate);
  hp.optimizer = j.value("optimizer", d.optimizer);
  hp.positional_encoding = j.value("positional_encoding", d.positional_encoding);
  hp.attention_layers = j.value("attention_layers", d.attention_layers);
}

void to_json(nlohmann::json& j, const HyperRules& r) {
  j = nlohmann::json{{"dropout_base", r.dropout_base},
                     {"dropout_per_kilo_obs", r.dropout_per_kilo_obs},
                     {"dropout_per_class", r.dropout_per_class},
                     {"dropout_min", r.dropout_min},
                     {"dropout_max", r.dropout_max},
                     {"d_ff_min", r.d_ff_min},
                     {"d_ff_per_class", r.d_ff_per_class},
                     {"heads_source_dependent", r.heads_source_dependent},
                     {"heads_independent", r.heads_independent},
                     {"batch_obs_per_item", r.batch_obs_per_item},
                     {"batch_min", r.batch_min},
                     {"batch_max", r.batch_max},
                     {"epochs_base", r.epochs_base},
                     {"epochs_per_class", r.epochs_per_class},
                     {"epochs_obs_numerator", r.epochs_obs_numerator},
                     {"epochs_min", r.epochs_min},
                     {"epochs_max", r.epochs_max},
                     {"patience_min", r.patience_min},
                     {"patience_divisor", r.patience_divisor},
                     {"d_model", r.d_model},
                     {"warmup_steps", r.warmup_steps}};
}

void from_json(const nlohmann::json& j, HyperRules& r) {
  nlohmann::json merged;
  to_json(merged, r);
  merged.update(j);
#define ESSAYLENS_RULE(field) merged.at(#field).get_to(r.field)
  ESSAYLENS_RULE(dropout_base);
  ESSAYLENS_RULE(dropout_per_kilo_obs);
  ESSAYLENS_RULE(dropout_per_class);
  ESSAYLENS_RULE(dropout_min);
  ESSAYLENS_RULE(dropout_max);
  ESSAYLENS_RULE(d_ff_min);
  ESSAYLENS_RULE(d_ff_per_class);
  ESSAYLENS_RULE(heads_source_dependent);
  ESSAYLENS_RULE(heads_independent);
  ESSAYLENS_RULE(batch_obs_per_item);
  ESSAYLENS_RULE(batch_min);
  ESSAYLENS_RULE(batch_max);
  ESSAYLENS_RULE(epochs_base);
  ESSAYLENS_RULE(epochs_per_class);
  ESSAYLENS_RULE(epochs_obs_numerator);
  ESSAYLENS_RULE(epochs_min);
  ESSAYLENS_RULE(epochs_max);
  ESSAYLENS_RULE(patience_min);
  ESSAYLENS_RULE(patience_divisor);
  ESSAYLENS_RULE(d_model);
  ESSAYLENS_RULE(warmup_steps);
#undef ESSAYLENS_RULE
}

HyperParams generate_hyperparams(const corpus::EssaySetMeta& meta, double mean_classes, const HyperRules& rules) {
  corpus::validate(meta);
  if (meta.essay_count <= 0)
    fail(ErrorCode::invalid_argument, "essay set " + std::to_string(meta.set_id) + " has no essay count");
  const int n_c = meta.n_classes();
  const double n_obs = meta.essay_count;

  HyperParams hp;
  hp.P = objectives::classification_weight(n_c, mean_classes).P;
  hp.dropout = std::clamp(rules.dropout_base + rules.dropout_per_kilo_obs * (1000.0 / n_obs) +
                              rules.dropout_per_class * n_c,
                          rules.dropout_min, rules.dropout_max);
  hp.d_ff = static_cast<Index>(std::bit_ceil(static_cast<std::uint64_t>(std::max<Index>(rules.d_ff_min, rules.d_ff_per_class * n_c))));
  hp.n_heads = meta.source_dependent ? rules.heads_source_dependent : rules.heads_independent;
  const auto per_batch = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(n_obs / rules.batch_obs_per_item)));
  hp.batch_size = std::clamp(static_cast<Index>(std::bit_floor(per_batch)), rules.batch_min, rules.batch_max);
  hp.epochs = std::clamp(static_cast<int>(std::lround(rules.epochs_base + rules.epochs_per_class * n_c +
                                                      rules.epochs_obs_numerator / n_obs)),
                         rules.epochs_min, rules.epochs_max);
  hp.patience = std::max(rules.patience_min, hp.epochs / rules.patience_divisor);
  hp.d_model = rules.d_model;
  hp.use_schedule = true;
  hp.warmup_steps = rules.warmup_steps;
  hp.class_loss = ClassLoss::ordinal_kappa;
  hp.readout = Readout::cls;
  validate(hp);
  return hp;
}

}  // namespace essaylens::hyper
