// gseg: corpus generation, data-quality reports, training, evaluation,
// ablation sweeps and prototype-bank export.

#include "gseg/config.hpp"
#include "gseg/dataq.hpp"
#include "gseg/experiment.hpp"
#include "gseg/io.hpp"
#include "gseg/synth.hpp"
#include "gseg/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Missing inputs named on the command line are usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> budget;
  std::string method;
};

ExperimentConfig resolve_config(const CommonOptions &o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path))
      throw ConfigError("config file not found: " + o.config_path);
    c = load_config(o.config_path);
  }
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
    c.corpus.seed = *o.seed;
  }
  if (o.budget)
    c.budget = *o.budget;
  if (!o.method.empty()) {
    const auto m = parse_method(o.method);
    if (!m)
      throw ConfigError("unknown method '" + o.method + "'");
    c.train.method = *m;
  }
  if (!o.out.empty())
    c.output_dir = o.out;
  c.validate();
  return c;
}

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Timestamps live only here so every other output is reproducible.
void write_metadata(const fs::path &dir, const std::string &command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json j{{"command", command}, {"created_utc", stamp}};
  write_text(dir / "metadata.json", j.dump(2) + "\n");
}

void prepare_run_dir(const ExperimentConfig &c, const std::string &command) {
  fs::create_directories(c.output_dir);
  save_config(c, fs::path(c.output_dir) / "config.yaml");
  write_metadata(c.output_dir, command);
}

json score_json(const SegmentationScore &s) {
  json per_class = json::array();
  for (const auto &iou : s.per_class_iou)
    per_class.push_back(iou ? json(*iou) : json(nullptr));
  return {{"miou", s.miou}, {"per_class_iou", per_class}, {"confusion", s.confusion}};
}

json histogram_json(const dataq::Histogram &h) {
  return {{"lo", h.lo}, {"hi", h.hi}, {"mass", h.mass}};
}

json quality_json(const dataq::QualityReport &q) {
  json j;
  j["tile_count"] = q.tile_count;
  if (q.fractal_defined)
    j["fractal"] = {{"dimension", q.fractal.dimension},
                    {"r_squared", q.fractal.r_squared},
                    {"poor_fit", q.fractal.poor_fit},
                    {"scales", q.fractal.scales},
                    {"box_counts", q.fractal.box_counts}};
  else
    j["fractal"] = nullptr;
  j["snr"] = q.snr_defined ? json(q.snr) : json(nullptr);
  j["displacement"] = {{"histogram", q.displacement_histogram},
                       {"median_px", q.displacement_median},
                       {"fraction_within_5px", q.displacement_within_tolerance},
                       {"gradient_empty", q.displacement_gradient_empty}};
  j["edge_density_histogram"] = histogram_json(q.edge_histogram);
  j["entropy_histogram"] = histogram_json(q.entropy_histogram);
  j["warnings"] = q.warnings;
  return j;
}

void write_histogram_csv(const fs::path &path, const dataq::Histogram &full,
                         const dataq::Histogram &subset) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write " + path.string());
  os << "bin,lo,hi,full,subset\n";
  const std::size_t bins = full.mass.size();
  const double width = bins ? (full.hi - full.lo) / static_cast<double>(bins) : 0.0;
  char buf[160];
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", b,
                  full.lo + width * static_cast<double>(b),
                  full.lo + width * static_cast<double>(b + 1), full.mass[b], subset.mass[b]);
    os << buf;
  }
}

Dataset load_dataset(const ExperimentConfig &c, const std::string &corpus_dir) {
  if (corpus_dir.empty())
    return build_dataset(c);
  if (!fs::exists(fs::path(corpus_dir) / "manifest.csv"))
    throw UsageError("no manifest.csv under corpus path " + corpus_dir);
  return dataset_from_manifest(io::load_corpus(corpus_dir));
}

std::size_t steps_per_epoch(std::size_t pool, std::size_t batch) {
  return pool == 0 ? 0 : (pool + batch - 1) / batch;
}

int cmd_synth(const CommonOptions &o) {
  const ExperimentConfig c = resolve_config(o);
  const Dataset d = build_dataset(c);
  io::write_corpus(c.output_dir, d.tiles, d.splits);
  prepare_run_dir(c, "synth");
  for (const auto &w : d.splits.warnings)
    std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << d.tiles.size() << " tiles to " << c.output_dir << '\n';
  return kExitOk;
}

int cmd_dataq(const std::string &corpus_dir, const std::string &subset_file,
              std::size_t subset_size, const CommonOptions &o) {
  if (corpus_dir.empty() || !fs::exists(fs::path(corpus_dir) / "manifest.csv"))
    throw UsageError("corpus path missing or has no manifest.csv: " + corpus_dir);
  ExperimentConfig c = resolve_config(o);
  const io::LoadedCorpus corpus = io::load_corpus(corpus_dir);

  std::vector<std::uint64_t> subset;
  if (!subset_file.empty()) {
    std::ifstream in(subset_file);
    if (!in)
      throw UsageError("cannot read subset file " + subset_file);
    for (std::uint64_t id; in >> id;)
      subset.push_back(id);
  } else if (subset_size > 0 && subset_size < corpus.tiles.size()) {
    subset = synth::stratified_subset(corpus.tiles, subset_size, c.seed);
  } else {
    for (const auto &t : corpus.tiles)
      subset.push_back(t.id);
  }

  const auto rep = dataq::representativeness_report(corpus.tiles, subset);
  std::vector<TileRecord> subset_tiles;
  {
    Dataset d;
    d.tiles = corpus.tiles;
    subset_tiles = d.select(subset);
  }
  const auto &eh = rep.edge_full, &nh = rep.entropy_full;
  const auto q_full =
      dataq::quality_report(corpus.tiles, eh.lo, eh.hi, nh.lo, nh.hi, eh.mass.size());
  const auto q_sub =
      dataq::quality_report(subset_tiles, eh.lo, eh.hi, nh.lo, nh.hi, eh.mass.size());

  json report;
  report["schema_version"] = 1;
  report["corpus"] = quality_json(q_full);
  report["subset"] = quality_json(q_sub);
  report["subset_ids"] = subset;
  report["jsd_edge"] = rep.jsd_edge;
  report["jsd_entropy"] = rep.jsd_entropy;

  const fs::path out = c.output_dir;
  fs::create_directories(out);
  write_text(out / "report.json", report.dump(2) + "\n");
  {
    std::ofstream os(out / "features.csv");
    os << "tile_id,entropy,edge_density\n";
    char buf[96];
    for (const auto &f : rep.features) {
      std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g\n",
                    static_cast<unsigned long long>(f.id), f.entropy, f.edge_density);
      os << buf;
    }
  }
  write_histogram_csv(out / "edge_density_histogram.csv", rep.edge_full, rep.edge_subset);
  write_histogram_csv(out / "entropy_histogram.csv", rep.entropy_full, rep.entropy_subset);
  {
    std::ofstream os(out / "displacement_histogram.csv");
    os << "bin_px,corpus,subset\n";
    for (std::size_t b = 0; b < q_full.displacement_histogram.size(); ++b)
      os << b << ',' << q_full.displacement_histogram[b] << ','
         << q_sub.displacement_histogram[b] << '\n';
  }
  prepare_run_dir(c, "dataq");
  std::cout << "jsd_edge " << rep.jsd_edge << " jsd_entropy " << rep.jsd_entropy << '\n';
  return kExitOk;
}

int cmd_train(const std::string &corpus_dir, const std::string &resume,
              const CommonOptions &o) {
  const ExperimentConfig c = resolve_config(o);
  if (!resume.empty() && !fs::exists(resume))
    throw UsageError("checkpoint not found: " + resume);
  const Dataset d = load_dataset(c, corpus_dir);
  const TrainConfig train = c.train_config(c.train.method, c.seed);
  const auto split = d.budget(c.budget);
  const auto labeled = d.select(split.labeled);
  const bool use_unlabeled = switches_for(train.method).use_unlabeled;
  const auto unlabeled =
      use_unlabeled ? d.select(split.unlabeled) : std::vector<TileRecord>{};

  const fs::path out = c.output_dir;
  prepare_run_dir(c, "train");
  TrainingState state;
  if (resume.empty()) {
    state = initial_state(train);
    fs::remove(out / "runlog.jsonl");
  } else {
    state = load_checkpoint(resume);
  }
  RunOptions opts;
  opts.runlog = out / "runlog.jsonl";
  opts.checkpoint_dir = out / "checkpoints";
  opts.checkpoint_every = c.checkpoint_every;
  if (c.bank_export_every_epochs && switches_for(train.method).use_bank) {
    opts.bank_export_dir = out / "bank";
    opts.steps_per_epoch = steps_per_epoch(unlabeled.size(), train.unlabeled_batch);
    opts.bank_export_every_epochs = c.bank_export_every_epochs;
  }
  BatchSampler sampler(labeled, unlabeled, train);
  objective::LossBreakdown last;
  opts.on_step = [&](const StepRecord &r) { last = r.losses; };
  run_training(state, train, sampler, opts);

  json metrics;
  metrics["method"] = to_string(train.method);
  metrics["budget"] = c.budget;
  metrics["seed"] = c.seed;
  metrics["steps"] = state.optimizer.step;
  metrics["labeled_tiles"] = labeled.size();
  metrics["unlabeled_tiles"] = unlabeled.size();
  metrics["test"] = score_json(evaluate(state.model, d.select(d.splits.test)));
  if (!d.splits.val.empty())
    metrics["val"] = score_json(evaluate(state.model, d.select(d.splits.val)));
  metrics["final_losses"] = json::parse(to_jsonl({state.optimizer.step, last, {}}));
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::cout << "test mIoU " << metrics["test"]["miou"].get<double>() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string &checkpoint, const std::string &split_name,
             const std::string &corpus_dir, const CommonOptions &o) {
  if (checkpoint.empty() || !fs::exists(checkpoint))
    throw UsageError("checkpoint not found: " + checkpoint);
  const ExperimentConfig c = resolve_config(o);
  const TrainingState state = load_checkpoint(checkpoint);
  const Dataset d = load_dataset(c, corpus_dir);
  std::vector<std::uint64_t> ids;
  if (split_name == "test")
    ids = d.splits.test;
  else if (split_name == "val")
    ids = d.splits.val;
  else if (split_name == "train")
    ids = d.splits.train;
  else if (split_name == "labeled")
    ids = d.budget(c.budget).labeled;
  else
    throw ConfigError("unknown split '" + split_name + "'");
  if (ids.empty())
    throw ConfigError("split '" + split_name + "' is empty");
  json j = score_json(evaluate(state.model, d.select(ids)));
  j["split"] = split_name;
  j["tiles"] = ids.size();
  if (!o.out.empty())
    write_text(fs::path(o.out) / "metrics.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_ablate(const std::string &corpus_dir, const CommonOptions &o) {
  const ExperimentConfig c = resolve_config(o);
  const Dataset d = load_dataset(c, corpus_dir);
  prepare_run_dir(c, "ablate");
  const fs::path csv = fs::path(c.output_dir) / "ablation.csv";
  std::ofstream os(csv);
  if (!os)
    throw std::runtime_error("cannot write " + csv.string());
  os << "method,budget,seed,test_miou,val_miou,test_iou_background,test_iou_settlement\n";
  os.flush();
  int failures = 0;
  for (Method m : c.ablation.methods)
    for (double b : c.ablation.budgets)
      for (auto s : c.ablation.seeds) {
        try {
          const CellResult r = run_cell(d, c, m, b, s);
          char buf[256];
          auto iou = [&](std::size_t k) {
            return k < r.test.per_class_iou.size() && r.test.per_class_iou[k]
                       ? *r.test.per_class_iou[k]
                       : -1.0;
          };
          std::snprintf(buf, sizeof(buf), "%s,%g,%llu,%.6f,%.6f,%.6f,%.6f\n", to_string(m), b,
                        static_cast<unsigned long long>(s), r.test.miou, r.val.miou, iou(0),
                        iou(1));
          os << buf;
          os.flush();
          std::cerr << buf;
        } catch (const std::exception &e) {
          ++failures;
          std::cerr << "cell " << to_string(m) << " budget " << b << " seed " << s
                    << " failed: " << e.what() << '\n';
        }
      }
  return failures ? kExitRuntime : kExitOk;
}

int cmd_export_bank(const std::string &checkpoint, std::size_t epoch,
                    const CommonOptions &o) {
  if (checkpoint.empty() || !fs::exists(checkpoint))
    throw UsageError("checkpoint not found: " + checkpoint);
  const TrainingState state = load_checkpoint(checkpoint);
  const fs::path out = o.out.empty() ? fs::path(".") : fs::path(o.out);
  for (const auto &p : export_bank(state.bank, out, epoch))
    std::cout << p.string() << '\n';
  return kExitOk;
}

void add_common(CLI::App *cmd, CommonOptions &o, bool training_flags) {
  cmd->add_option("--config", o.config_path, "experiment YAML file");
  cmd->add_option("--seed", o.seed, "overrides the config seed");
  cmd->add_option("--out", o.out, "output directory");
  if (training_flags) {
    cmd->add_option("--budget", o.budget, "labeled fraction (protocol fraction or 1.0)");
    cmd->add_option("--method", o.method,
                    "supervised | static_threshold | caat_only | bank_only | full");
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"semi-supervised settlement segmentation toolkit"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string corpus_dir, subset_file, resume, checkpoint, split_name = "test";
  std::size_t subset_size = 0, epoch = 0;

  auto *synth = app.add_subcommand("synth", "generate a synthetic corpus and manifest");
  add_common(synth, o, false);

  auto *dq = app.add_subcommand("dataq", "data-quality report for a corpus on disk");
  add_common(dq, o, false);
  dq->add_option("--corpus", corpus_dir, "corpus directory with manifest.csv")->required();
  dq->add_option("--subset", subset_file, "file of tile ids forming the subset");
  dq->add_option("--subset-size", subset_size, "stratified subset size");

  auto *train = app.add_subcommand("train", "train one configuration");
  add_common(train, o, true);
  train->add_option("--corpus", corpus_dir, "use a corpus on disk instead of generating");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto *ev = app.add_subcommand("eval", "score a checkpoint on a split");
  add_common(ev, o, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--split", split_name, "test | val | train | labeled");
  ev->add_option("--corpus", corpus_dir, "use a corpus on disk instead of generating");

  auto *ab = app.add_subcommand("ablate", "method x budget x seed sweep");
  add_common(ab, o, false);
  ab->add_option("--corpus", corpus_dir, "use a corpus on disk instead of generating");

  auto *eb = app.add_subcommand("export-bank", "write prototype-bank CSVs from a checkpoint");
  add_common(eb, o, false);
  eb->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eb->add_option("--epoch", epoch, "epoch label used in file names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth)
      return cmd_synth(o);
    if (*dq)
      return cmd_dataq(corpus_dir, subset_file, subset_size, o);
    if (*train)
      return cmd_train(corpus_dir, resume, o);
    if (*ev)
      return cmd_eval(checkpoint, split_name, corpus_dir, o);
    if (*ab)
      return cmd_ablate(corpus_dir, o);
    if (*eb)
      return cmd_export_bank(checkpoint, epoch, o);
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
