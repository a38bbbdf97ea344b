#include "flowmix/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "flowmix/errors.hpp"

namespace flowmix {

using json = nlohmann::json;

SynthSection::SynthSection() {
  train.seed = 101;

  validation.seed = 202;
  validation.max_translation = 8.0;
  validation.effects = {0.4, 0.7, 0.02};

  unlabeled = validation;
  unlabeled.seed = 303;
}

ExperimentConfig::ExperimentConfig() {
  train.mode = TrainMode::kSupervisedDistract;
  // The toy model trains best about 10x above the large-model rate.
  train.lr.max_lr = 4e-3;
}

double correlation_range(const ToyModelConfig& model) {
  return 4.0 * model.corr_radius * std::pow(2.0, model.corr_levels - 1);
}

namespace {

const json& empty_object() {
  static const json j = json::object();
  return j;
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

template <typename T>
constexpr const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else return "a list of numbers";
}

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(std::string_view key, T& out) {
    seen_.insert(std::string(key));
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const auto& v = *it;
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned());
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else {
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    }
    if (!ok) throw ConfigError(join(path_, key) + ": expected " + type_name<T>());
    out = v.get<T>();
  }

  template <typename T>
  void get_optional(std::string_view key, std::optional<T>& out) {
    seen_.insert(std::string(key));
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T value{};
    seen_.erase(std::string(key));
    get(key, value);
    out = value;
  }

  /// Enum-like string field mapped through `parse`.
  template <typename E, typename Parse>
  void get_enum(std::string_view key, E& out, Parse parse) {
    std::optional<std::string> name;
    get_optional(key, name);
    if (!name) return;
    try {
      out = parse(*name);
    } catch (const ContractViolation&) {
      throw ConfigError(join(path_, key) + ": unknown value '" + *name + "'");
    }
  }

  /// Marks a key handled elsewhere so finish() does not report it.
  void claim(std::string_view key) { seen_.insert(std::string(key)); }

  Section sub(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty_object() : *it, join(path_, key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + join(path_, it.key()) + "'");
    }
  }

  std::string where() const { return path_.empty() ? std::string("<root>") : path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void check(const std::string& path, F&& validate) {
  try {
    validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void read_synth(Section s, SynthConfig& c) {
  s.get("height", c.height);
  s.get("width", c.width);
  s.get("sprite_count_min", c.sprite_count_min);
  s.get("sprite_count_max", c.sprite_count_max);
  s.get("max_translation", c.max_translation);
  s.get("max_rotation_deg", c.max_rotation_deg);
  s.get("noise_octaves", c.noise_octaves);
  s.get("noise_base_period", c.noise_base_period);
  s.get("seed", c.seed);
  {
    auto e = s.sub("effects");
    e.get("overlay_max_alpha", c.effects.overlay_max_alpha);
    e.get("blur_sigma", c.effects.blur_sigma);
    e.get("noise_sigma", c.effects.noise_sigma);
    e.finish();
  }
  s.finish();
  check(s.where(), [&] { c.validate(); });
}

json synth_json(const SynthConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"sprite_count_min", c.sprite_count_min},
          {"sprite_count_max", c.sprite_count_max},
          {"max_translation", c.max_translation},
          {"max_rotation_deg", c.max_rotation_deg},
          {"noise_octaves", c.noise_octaves},
          {"noise_base_period", c.noise_base_period},
          {"seed", c.seed},
          {"effects",
           {{"overlay_max_alpha", c.effects.overlay_max_alpha},
            {"blur_sigma", c.effects.blur_sigma},
            {"noise_sigma", c.effects.noise_sigma}}}};
}

ExperimentConfig from_json(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  root.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion) {
    throw ConfigError("schema_version: " + std::to_string(cfg.schema_version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }

  {
    auto s = root.sub("synth");
    read_synth(s.sub("train"), cfg.synth.train);
    read_synth(s.sub("validation"), cfg.synth.validation);
    read_synth(s.sub("unlabeled"), cfg.synth.unlabeled);
    auto c = s.sub("counts");
    c.get("train", cfg.synth.counts.train);
    c.get("validation", cfg.synth.counts.validation);
    c.get("unlabeled", cfg.synth.counts.unlabeled);
    c.finish();
    if (cfg.synth.counts.train < 1 || cfg.synth.counts.validation < 1 || cfg.synth.counts.unlabeled < 0) {
      throw ConfigError("synth.counts: train and validation must be positive, unlabeled non-negative");
    }
    s.finish();
  }

  auto& a = cfg.train.augment;
  {
    auto s = root.sub("augment");
    s.get_enum("variant", a.variant, parse_augment_variant);
    s.get("alpha1", a.alpha1);
    s.get("alpha2", a.alpha2);
    s.get("noise_sigma", a.noise_sigma);
    {
      auto sc = s.sub("shape_count");
      sc.get("min", a.shape_count.min);
      sc.get("max", a.shape_count.max);
      sc.finish();
    }
    s.get_optional("forced_lambda", a.forced_lambda);
    s.finish();
    check("augment", [&] { a.validate(); });
  }

  auto& l = cfg.train.loss;
  {
    auto s = root.sub("loss");
    s.get_enum("w_dist_mode", l.w_dist_mode, parse_weight_mode);
    s.get("w_dist_constant", l.w_dist_constant);
    s.get("w_self", l.w_self);
    s.get("tau", l.tau);
    s.get("gamma1", l.gamma1);
    s.get("gamma2", l.gamma2);
    s.get("seq_decay", l.seq_decay);
    s.finish();
    check("loss", [&] { l.validate(); });
  }

  auto& t = cfg.train;
  {
    auto s = root.sub("train");
    s.get_enum("mode", t.mode, parse_train_mode);
    s.get("steps", t.steps);
    s.get("batch_size", t.batch_size);
    s.get("iterations", t.iterations);
    s.get("seed", t.seed);
    s.get("eval_every", t.eval_every);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("coverage_probe_taus", t.coverage_probe_taus);
    {
      auto r = s.sub("lr");
      r.get("max_lr", t.lr.max_lr);
      r.get("warmup_fraction", t.lr.warmup_fraction);
      r.get("weight_decay", t.lr.weight_decay);
      r.get("epsilon", t.lr.epsilon);
      r.get("clip_norm", t.lr.clip_norm);
      r.finish();
    }
    {
      auto d = s.sub("divergence");
      d.get("factor", t.divergence.factor);
      d.get("window", t.divergence.window);
      d.get("min_history", t.divergence.min_history);
      d.finish();
    }
    s.finish();
    check("train", [&] { t.validate(); });
  }

  {
    auto s = root.sub("model");
    s.get("feature_dim", cfg.model.feature_dim);
    s.get("hidden_dim", cfg.model.hidden_dim);
    s.get("context_dim", cfg.model.context_dim);
    s.get("corr_levels", cfg.model.corr_levels);
    s.get("corr_radius", cfg.model.corr_radius);
    s.finish();
    check("model", [&] { cfg.model.validate(); });
  }

  root.get_optional("init_checkpoint", cfg.init_checkpoint);
  root.finish();

  const double range = correlation_range(cfg.model);
  for (auto [name, sc] : {std::pair<const char*, const SynthConfig*>{"train", &cfg.synth.train},
                          {"validation", &cfg.synth.validation},
                          {"unlabeled", &cfg.synth.unlabeled}}) {
    if (sc->max_translation > range) {
      throw ConfigError(std::string("synth.") + name + ".max_translation: exceeds the model correlation range of " +
                        std::to_string(range) + " px");
    }
  }
  return cfg;
}

json parse_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view text) { return from_json(parse_document(text)); }

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path));
}

std::string to_json(const ExperimentConfig& c) {
  const auto& a = c.train.augment;
  const auto& l = c.train.loss;
  const auto& t = c.train;
  json doc{
      {"schema_version", c.schema_version},
      {"synth",
       {{"train", synth_json(c.synth.train)},
        {"validation", synth_json(c.synth.validation)},
        {"unlabeled", synth_json(c.synth.unlabeled)},
        {"counts",
         {{"train", c.synth.counts.train},
          {"validation", c.synth.counts.validation},
          {"unlabeled", c.synth.counts.unlabeled}}}}},
      {"augment",
       {{"variant", std::string(to_string(a.variant))},
        {"alpha1", a.alpha1},
        {"alpha2", a.alpha2},
        {"noise_sigma", a.noise_sigma},
        {"shape_count", {{"min", a.shape_count.min}, {"max", a.shape_count.max}}},
        {"forced_lambda", a.forced_lambda ? json(*a.forced_lambda) : json(nullptr)}}},
      {"loss",
       {{"w_dist_mode", std::string(to_string(l.w_dist_mode))},
        {"w_dist_constant", l.w_dist_constant},
        {"w_self", l.w_self},
        {"tau", l.tau},
        {"gamma1", l.gamma1},
        {"gamma2", l.gamma2},
        {"seq_decay", l.seq_decay}}},
      {"train",
       {{"mode", std::string(to_string(t.mode))},
        {"steps", t.steps},
        {"batch_size", t.batch_size},
        {"iterations", t.iterations},
        {"seed", t.seed},
        {"eval_every", t.eval_every},
        {"checkpoint_every", t.checkpoint_every},
        {"coverage_probe_taus", t.coverage_probe_taus},
        {"lr",
         {{"max_lr", t.lr.max_lr},
          {"warmup_fraction", t.lr.warmup_fraction},
          {"weight_decay", t.lr.weight_decay},
          {"epsilon", t.lr.epsilon},
          {"clip_norm", t.lr.clip_norm}}},
        {"divergence",
         {{"factor", t.divergence.factor},
          {"window", t.divergence.window},
          {"min_history", t.divergence.min_history}}}}},
      {"model",
       {{"feature_dim", c.model.feature_dim},
        {"hidden_dim", c.model.hidden_dim},
        {"context_dim", c.model.context_dim},
        {"corr_levels", c.model.corr_levels},
        {"corr_radius", c.model.corr_radius}}},
      {"init_checkpoint", c.init_checkpoint ? json(*c.init_checkpoint) : json(nullptr)}};
  return doc.dump(2) + "\n";
}

AblationGrid parse_ablation_grid(std::string_view text) {
  const auto doc = parse_document(text);
  Section root(doc, "");
  int version = kSchemaVersion;
  root.get("schema_version", version);
  if (version != kSchemaVersion) throw ConfigError("schema_version: unsupported value " + std::to_string(version));

  AblationGrid grid;
  root.sub("base");  // marks the key; the raw document is merged below
  const json base_doc = doc.contains("base") ? doc.at("base") : json::object();
  grid.base = from_json(base_doc);
  root.get("seeds", grid.seeds);
  if (grid.seeds.empty()) throw ConfigError("seeds: at least one seed is required");

  root.claim("cells");
  const auto it = doc.find("cells");
  if (it == doc.end() || !it->is_array() || it->empty()) throw ConfigError("cells: expected a non-empty list");
  std::set<std::string> names;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const std::string path = "cells[" + std::to_string(i) + "]";
    Section cell((*it)[i], path);
    AblationGrid::Cell c;
    cell.get("name", c.name);
    if (c.name.empty()) throw ConfigError(path + ".name: required");
    if (!names.insert(c.name).second) throw ConfigError(path + ".name: duplicate cell '" + c.name + "'");
    cell.sub("overrides");
    cell.finish();
    json merged = base_doc;
    if ((*it)[i].contains("overrides")) merged.merge_patch((*it)[i].at("overrides"));
    try {
      c.config = from_json(merged);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ".overrides: " + e.what());
    }
    grid.cells.push_back(std::move(c));
  }
  root.finish();
  return grid;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) { return parse_ablation_grid(read_file(path)); }

}  // namespace flowmix
