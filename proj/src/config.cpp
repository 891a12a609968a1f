#include "gseg/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace gseg {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos)
    s += ".0";
  return s;
}

YAML::Node num(double v) { return YAML::Node(format_double(v)); }

void reject_unknown(const YAML::Node &node, const std::string &section,
                    std::initializer_list<const char *> keys) {
  if (!node)
    return;
  if (!node.IsMap())
    throw ConfigError("config section '" + section + "' must be a mapping");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto &kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!known.count(key))
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) +
                        "'");
  }
}

template <typename T>
void read(const YAML::Node &node, const char *key, T &out, const std::string &section) {
  if (!node || !node[key])
    return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception &) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

Method read_method(const YAML::Node &n, const std::string &where) {
  const auto text = n.as<std::string>();
  const auto m = parse_method(text);
  if (!m)
    throw ConfigError("unknown method '" + text + "' in " + where);
  return *m;
}

bool is_known_budget(double b, const synth::SplitProtocol &p) {
  if (std::abs(b - kFullBudget) < 1e-12)
    return true;
  return std::any_of(p.labeled_fractions.begin(), p.labeled_fractions.end(),
                     [&](double f) { return std::abs(f - b) < 1e-12; });
}

} // namespace

void ExperimentConfig::validate() const {
  try {
    corpus.validate();
    splits.validate();
    train.validate();
  } catch (const ConfigError &) {
    throw;
  } catch (const std::invalid_argument &e) {
    throw ConfigError(e.what());
  }
  if (n_tiles < 20)
    throw ConfigError("n_tiles must be >= 20");
  if (!is_known_budget(budget, splits))
    throw ConfigError("budget " + format_double(budget) +
                      " is neither a protocol fraction nor 1.0");
  if (ablation.methods.empty() || ablation.budgets.empty() || ablation.seeds.empty())
    throw ConfigError("ablation methods, budgets and seeds must be non-empty");
  for (double b : ablation.budgets)
    if (!is_known_budget(b, splits))
      throw ConfigError("ablation budget " + format_double(b) +
                        " is neither a protocol fraction nor 1.0");
  if (output_dir.empty())
    throw ConfigError("output_dir must not be empty");
}

TrainConfig ExperimentConfig::train_config(Method method, std::uint64_t train_seed) const {
  TrainConfig t = train;
  t.method = method;
  t.seed = train_seed;
  return t;
}

ExperimentConfig parse_config(const std::string &yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception &e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) {
    c.validate();
    return c;
  }
  reject_unknown(root, "",
                 {"seed", "n_tiles", "budget", "method", "output_dir", "corpus", "splits",
                  "model", "optimizer", "thresholds", "bank", "augment", "loss", "training",
                  "ablation"});
  read(root, "seed", c.seed, "");
  read(root, "n_tiles", c.n_tiles, "");
  read(root, "budget", c.budget, "");
  read(root, "output_dir", c.output_dir, "");
  if (root["method"])
    c.train.method = read_method(root["method"], "method");

  const auto corpus = root["corpus"];
  reject_unknown(corpus, "corpus",
                 {"preset", "tile_size", "slum_pixel_fraction", "object_frequency",
                  "background_frequency", "texture_amplitude", "contrast_gap",
                  "brightness_spread", "noise_sigma", "roughness", "label_jitter_px"});
  if (corpus && corpus["preset"]) {
    const auto preset = corpus["preset"].as<std::string>();
    if (preset == "medium_contrast")
      c.corpus = synth::medium_contrast_spec();
    else if (preset == "low_contrast")
      c.corpus = synth::low_contrast_spec();
    else
      throw ConfigError("unknown corpus preset '" + preset + "'");
  }
  read(corpus, "tile_size", c.corpus.tile_size, "corpus");
  read(corpus, "slum_pixel_fraction", c.corpus.slum_pixel_fraction, "corpus");
  read(corpus, "object_frequency", c.corpus.object_frequency, "corpus");
  read(corpus, "background_frequency", c.corpus.background_frequency, "corpus");
  read(corpus, "texture_amplitude", c.corpus.texture_amplitude, "corpus");
  read(corpus, "contrast_gap", c.corpus.contrast_gap, "corpus");
  read(corpus, "brightness_spread", c.corpus.brightness_spread, "corpus");
  read(corpus, "noise_sigma", c.corpus.noise_sigma, "corpus");
  read(corpus, "roughness", c.corpus.roughness, "corpus");
  read(corpus, "label_jitter_px", c.corpus.label_jitter_px, "corpus");

  const auto sp = root["splits"];
  reject_unknown(sp, "splits",
                 {"labeled_fractions", "train_fraction", "val_fraction", "test_fraction",
                  "nested", "min_stratum"});
  read(sp, "labeled_fractions", c.splits.labeled_fractions, "splits");
  read(sp, "train_fraction", c.splits.train_fraction, "splits");
  read(sp, "val_fraction", c.splits.val_fraction, "splits");
  read(sp, "test_fraction", c.splits.test_fraction, "splits");
  read(sp, "nested", c.splits.nested, "splits");
  read(sp, "min_stratum", c.splits.min_stratum, "splits");

  const auto model = root["model"];
  reject_unknown(model, "model", {"in_channels", "hidden", "feature_dim", "num_classes"});
  read(model, "in_channels", c.train.model.in_channels, "model");
  read(model, "hidden", c.train.model.hidden, "model");
  read(model, "feature_dim", c.train.model.feature_dim, "model");
  read(model, "num_classes", c.train.model.num_classes, "model");
  c.train.bank.feature_dim = c.train.model.feature_dim;
  c.train.bank.num_classes = c.train.model.num_classes;

  const auto opt = root["optimizer"];
  reject_unknown(opt, "optimizer", {"learning_rate", "momentum", "weight_decay", "poly_power"});
  read(opt, "learning_rate", c.train.optimizer.learning_rate, "optimizer");
  read(opt, "momentum", c.train.optimizer.momentum, "optimizer");
  read(opt, "weight_decay", c.train.optimizer.weight_decay, "optimizer");
  read(opt, "poly_power", c.train.optimizer.poly_power, "optimizer");

  const auto th = root["thresholds"];
  reject_unknown(th, "thresholds", {"momentum", "tau_min", "tau_max", "static_tau"});
  read(th, "momentum", c.train.thresholds.momentum, "thresholds");
  read(th, "tau_min", c.train.thresholds.tau_min, "thresholds");
  read(th, "tau_max", c.train.thresholds.tau_max, "thresholds");
  read(th, "static_tau", c.train.thresholds.static_tau, "thresholds");

  const auto bank = root["bank"];
  reject_unknown(bank, "bank", {"capacity", "gamma", "per_batch_cap"});
  read(bank, "capacity", c.train.bank.capacity, "bank");
  read(bank, "gamma", c.train.bank.gamma, "bank");
  read(bank, "per_batch_cap", c.train.bank.per_batch_cap, "bank");

  const auto aug = root["augment"];
  reject_unknown(aug, "augment",
                 {"flip_prob", "scale_lo", "scale_hi", "cutmix_area_lo", "cutmix_area_hi",
                  "jitter_strength", "jitter_enabled", "fp_dropout_rate"});
  read(aug, "flip_prob", c.train.augment.flip_prob, "augment");
  read(aug, "scale_lo", c.train.augment.scale_lo, "augment");
  read(aug, "scale_hi", c.train.augment.scale_hi, "augment");
  read(aug, "cutmix_area_lo", c.train.augment.cutmix_area_lo, "augment");
  read(aug, "cutmix_area_hi", c.train.augment.cutmix_area_hi, "augment");
  read(aug, "jitter_strength", c.train.augment.jitter_strength, "augment");
  read(aug, "jitter_enabled", c.train.augment.jitter_enabled, "augment");
  read(aug, "fp_dropout_rate", c.train.augment.fp_dropout_rate, "augment");

  const auto loss = root["loss"];
  reject_unknown(loss, "loss", {"unlabeled_weight"});
  read(loss, "unlabeled_weight", c.train.unlabeled_weight, "loss");

  const auto tr = root["training"];
  reject_unknown(tr, "training",
                 {"steps", "labeled_batch", "unlabeled_batch", "warmup_steps",
                  "minority_oversample", "checkpoint_every", "bank_export_every_epochs"});
  read(tr, "steps", c.train.total_steps, "training");
  read(tr, "labeled_batch", c.train.labeled_batch, "training");
  read(tr, "unlabeled_batch", c.train.unlabeled_batch, "training");
  read(tr, "warmup_steps", c.train.warmup_steps, "training");
  read(tr, "minority_oversample", c.train.minority_oversample, "training");
  read(tr, "checkpoint_every", c.checkpoint_every, "training");
  read(tr, "bank_export_every_epochs", c.bank_export_every_epochs, "training");

  const auto ab = root["ablation"];
  reject_unknown(ab, "ablation", {"methods", "budgets", "seeds"});
  if (ab && ab["methods"]) {
    c.ablation.methods.clear();
    for (const auto &m : ab["methods"])
      c.ablation.methods.push_back(read_method(m, "ablation.methods"));
  }
  read(ab, "budgets", c.ablation.budgets, "ablation");
  read(ab, "seeds", c.ablation.seeds, "ablation");

  c.train.seed = c.seed;
  c.corpus.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig &c) {
  YAML::Node root;
  root["seed"] = c.seed;
  root["n_tiles"] = c.n_tiles;
  root["budget"] = num(c.budget);
  root["method"] = to_string(c.train.method);
  root["output_dir"] = c.output_dir;

  YAML::Node corpus;
  corpus["tile_size"] = c.corpus.tile_size;
  corpus["slum_pixel_fraction"] = num(c.corpus.slum_pixel_fraction);
  corpus["object_frequency"] = num(c.corpus.object_frequency);
  corpus["background_frequency"] = num(c.corpus.background_frequency);
  corpus["texture_amplitude"] = num(c.corpus.texture_amplitude);
  corpus["contrast_gap"] = num(c.corpus.contrast_gap);
  corpus["brightness_spread"] = num(c.corpus.brightness_spread);
  corpus["noise_sigma"] = num(c.corpus.noise_sigma);
  corpus["roughness"] = num(c.corpus.roughness);
  corpus["label_jitter_px"] = num(c.corpus.label_jitter_px);
  root["corpus"] = corpus;

  YAML::Node sp;
  for (double f : c.splits.labeled_fractions)
    sp["labeled_fractions"].push_back(num(f));
  sp["train_fraction"] = num(c.splits.train_fraction);
  sp["val_fraction"] = num(c.splits.val_fraction);
  sp["test_fraction"] = num(c.splits.test_fraction);
  sp["nested"] = c.splits.nested;
  sp["min_stratum"] = c.splits.min_stratum;
  root["splits"] = sp;

  YAML::Node model;
  model["in_channels"] = c.train.model.in_channels;
  model["hidden"] = c.train.model.hidden;
  model["feature_dim"] = c.train.model.feature_dim;
  model["num_classes"] = c.train.model.num_classes;
  root["model"] = model;

  YAML::Node opt;
  opt["learning_rate"] = num(c.train.optimizer.learning_rate);
  opt["momentum"] = num(c.train.optimizer.momentum);
  opt["weight_decay"] = num(c.train.optimizer.weight_decay);
  opt["poly_power"] = num(c.train.optimizer.poly_power);
  root["optimizer"] = opt;

  YAML::Node th;
  th["momentum"] = num(c.train.thresholds.momentum);
  th["tau_min"] = num(c.train.thresholds.tau_min);
  th["tau_max"] = num(c.train.thresholds.tau_max);
  th["static_tau"] = num(c.train.thresholds.static_tau);
  root["thresholds"] = th;

  YAML::Node bank;
  bank["capacity"] = c.train.bank.capacity;
  bank["gamma"] = num(c.train.bank.gamma);
  bank["per_batch_cap"] = c.train.bank.per_batch_cap;
  root["bank"] = bank;

  YAML::Node aug;
  aug["flip_prob"] = num(c.train.augment.flip_prob);
  aug["scale_lo"] = num(c.train.augment.scale_lo);
  aug["scale_hi"] = num(c.train.augment.scale_hi);
  aug["cutmix_area_lo"] = num(c.train.augment.cutmix_area_lo);
  aug["cutmix_area_hi"] = num(c.train.augment.cutmix_area_hi);
  aug["jitter_strength"] = num(c.train.augment.jitter_strength);
  aug["jitter_enabled"] = c.train.augment.jitter_enabled;
  aug["fp_dropout_rate"] = num(c.train.augment.fp_dropout_rate);
  root["augment"] = aug;

  YAML::Node loss;
  loss["unlabeled_weight"] = num(c.train.unlabeled_weight);
  root["loss"] = loss;

  YAML::Node tr;
  tr["steps"] = c.train.total_steps;
  tr["labeled_batch"] = c.train.labeled_batch;
  tr["unlabeled_batch"] = c.train.unlabeled_batch;
  tr["warmup_steps"] = c.train.warmup_steps;
  tr["minority_oversample"] = num(c.train.minority_oversample);
  tr["checkpoint_every"] = c.checkpoint_every;
  tr["bank_export_every_epochs"] = c.bank_export_every_epochs;
  root["training"] = tr;

  YAML::Node ab;
  for (Method m : c.ablation.methods)
    ab["methods"].push_back(to_string(m));
  for (double b : c.ablation.budgets)
    ab["budgets"].push_back(num(b));
  for (auto s : c.ablation.seeds)
    ab["seeds"].push_back(s);
  root["ablation"] = ab;

  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

void save_config(const ExperimentConfig &config, const std::filesystem::path &path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << dump_config(config);
}

} // namespace gseg
