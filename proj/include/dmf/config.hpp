#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "dmf/trainer.hpp"
#include "json.hpp"

namespace dmf {

using json = nlohmann::json;

/// Invalid configuration; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error("config field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace detail {

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("wrong type (") + e.what() + ")");
  }
}

inline void read_count(const json& j, const char* key, std::size_t& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(key, "expected a non-negative integer");
  out = v.get<std::size_t>();
}

}  // namespace detail

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "name",        "batch_size", "epochs",        "optimizer",    "lr",          "beta1",       "beta2",
      "adam_eps",    "weight_decay", "ema_rate",    "dropout",      "stages_K",    "decay_q",     "eps_t",
      "loss",        "norm_p",     "robust_c",      "p_mean",       "p_std",       "prob_t_eq_r", "schedule_kind",
      "dataset",     "seed",       "data_dim",      "dataset_size", "hidden_dims", "stable_bsub", "objective", "time_scale"};
  return keys;
}

/// Parses a config document; absent or null keys keep their defaults.
inline TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!config_keys().contains(key)) throw ConfigError(key, "unknown key");
  }
  TrainConfig c;
  detail::read_field(j, "name", c.name);
  detail::read_field(j, "dataset", c.dataset);
  detail::read_count(j, "data_dim", c.data_dim);
  detail::read_count(j, "dataset_size", c.dataset_size);
  detail::read_field(j, "hidden_dims", c.hidden_dims);
  detail::read_count(j, "batch_size", c.batch_size);
  detail::read_count(j, "epochs", c.epochs);
  detail::read_field(j, "optimizer", c.optimizer);
  detail::read_field(j, "lr", c.lr);
  detail::read_field(j, "beta1", c.beta1);
  detail::read_field(j, "beta2", c.beta2);
  detail::read_field(j, "adam_eps", c.adam_eps);
  detail::read_field(j, "weight_decay", c.weight_decay);
  detail::read_field(j, "ema_rate", c.ema_rate);
  detail::read_field(j, "dropout", c.dropout);
  detail::read_count(j, "stages_K", c.stages_K);
  detail::read_field(j, "decay_q", c.decay_q);
  detail::read_field(j, "eps_t", c.eps_t);
  detail::read_field(j, "norm_p", c.norm_p);
  detail::read_field(j, "robust_c", c.robust_c);
  detail::read_field(j, "p_mean", c.p_mean);
  detail::read_field(j, "p_std", c.p_std);
  detail::read_field(j, "prob_t_eq_r", c.prob_t_eq_r);
  detail::read_count(j, "stable_bsub", c.stable_bsub);
  detail::read_field(j, "objective", c.objective);
  detail::read_field(j, "time_scale", c.time_scale);
  if (j.contains("seed") && !j.at("seed").is_null()) {
    if (!j.at("seed").is_number_integer()) throw ConfigError("seed", "expected an integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  std::string loss, kind;
  detail::read_field(j, "loss", loss);
  detail::read_field(j, "schedule_kind", kind);
  if (!loss.empty()) {
    if (loss == "mse") {
      c.loss = LossKind::MSE;
    } else if (loss == "adaptive") {
      c.loss = LossKind::Adaptive;
    } else if (loss == "cauchy") {
      c.loss = LossKind::Cauchy;
    } else {
      throw ConfigError("loss", "expected one of mse, adaptive, cauchy");
    }
  }
  if (!kind.empty()) {
    if (kind == "plain") {
      c.schedule_kind = ScheduleKind::Plain;
    } else if (kind == "ve") {
      c.schedule_kind = ScheduleKind::VE;
    } else {
      throw ConfigError("schedule_kind", "expected plain or ve");
    }
  }
  return c;
}

/// Validates with field-level messages.
inline void validate_config(const TrainConfig& c) {
  if (c.dataset.empty()) throw ConfigError("dataset", "missing dataset name");
  if (!is_dataset(c.dataset)) throw ConfigError("dataset", "unknown dataset '" + c.dataset + "'");
  if (c.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (c.epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (c.dataset_size < c.batch_size) throw ConfigError("dataset_size", "must be >= batch_size");
  if (c.data_dim < 1) throw ConfigError("data_dim", "must be >= 1");
  if (c.hidden_dims.empty()) throw ConfigError("hidden_dims", "must not be empty");
  if (c.optimizer != "adam" && c.optimizer != "adamw") throw ConfigError("optimizer", "expected adam or adamw");
  if (!(c.lr >= 0.0)) throw ConfigError("lr", "must be >= 0");
  if (!(c.ema_rate >= 0.0 && c.ema_rate < 1.0)) throw ConfigError("ema_rate", "must lie in [0, 1)");
  if (c.stages_K < 1) throw ConfigError("stages_K", "must be >= 1");
  if (c.epochs < c.stages_K) throw ConfigError("epochs", "must be at least stages_K");
  if (!(c.decay_q > 1.0)) throw ConfigError("decay_q", "must be > 1");
  if (!(c.eps_t > 0.0)) throw ConfigError("eps_t", "must be > 0");
  if (!(c.norm_p > 0.0 && c.norm_p <= 1.5)) throw ConfigError("norm_p", "must lie in (0, 1.5]");
  if (!(c.robust_c > 0.0)) throw ConfigError("robust_c", "must be > 0");
  if (!(c.p_std > 0.0)) throw ConfigError("p_std", "must be > 0");
  if (!(c.prob_t_eq_r >= 0.0 && c.prob_t_eq_r <= 1.0)) throw ConfigError("prob_t_eq_r", "must lie in [0, 1]");
  if (!(c.time_scale > 0.0)) throw ConfigError("time_scale", "must be > 0");
  if (c.objective != "curriculum" && c.objective != "mf") throw ConfigError("objective", "expected curriculum or mf");
  if (c.objective == "mf" && c.stages_K < 2) throw ConfigError("objective", "mf needs stages_K >= 2");
  c.validate();
}

inline json config_to_json(const TrainConfig& c) {
  return json{{"name", c.name},
              {"dataset", c.dataset},
              {"data_dim", c.data_dim},
              {"dataset_size", c.dataset_size},
              {"hidden_dims", c.hidden_dims},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"optimizer", c.optimizer},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"ema_rate", c.ema_rate},
              {"dropout", c.dropout},
              {"stages_K", c.stages_K},
              {"decay_q", c.decay_q},
              {"eps_t", c.eps_t},
              {"schedule_kind", to_string(c.schedule_kind)},
              {"loss", to_string(c.loss)},
              {"norm_p", c.norm_p},
              {"robust_c", c.robust_c},
              {"p_mean", c.p_mean},
              {"p_std", c.p_std},
              {"prob_t_eq_r", c.prob_t_eq_r},
              {"stable_bsub", c.stable_bsub},
              {"objective", c.objective},
              {"time_scale", c.time_scale},
              {"seed", c.seed}};
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace dmf
