#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "brainseg/checkpoint.hpp"
#include "brainseg/config.hpp"
#include "brainseg/volume_io.hpp"
#include "report.hpp"

namespace brainseg::cli {

namespace fs = std::filesystem;

std::string file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read '" + path + "'");
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), uInt(in.gcount()));
  }
  char hex[16];
  std::snprintf(hex, sizeof hex, "%08lx", static_cast<unsigned long>(crc));
  return hex;
}

namespace {

// Relative paths resolve against $BRAINSEG_RUN_ROOT when it is set.
fs::path resolve(const std::string& p) {
  fs::path path(p);
  if (path.is_relative())
    if (const char* root = std::getenv("BRAINSEG_RUN_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

// Exclusive ownership of an output directory for the lifetime of the command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw DataError("run directory '" + dir.string() + "' is locked by another process (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write '" + p.string() + "'");
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

Json read_json(const fs::path& p) {
  const Json j = Json::parse(read_text(p), nullptr, false);
  if (j.is_discarded()) throw IngestionError("'" + p.string() + "' is not valid JSON");
  return j;
}

struct Common {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key = value config file");
  sub->add_option("--set", c.sets, "override one key, e.g. --set optimizer.epochs=5 (repeatable)");
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
  sub->add_flag("--print-config", c.print_config, "print the resolved configuration and exit");
}

// Defaults <- base file (inherited run config) <- --config <- --set <- --seed.
RunConfig resolve_config(const Common& c, const std::optional<fs::path>& base = std::nullopt) {
  RunConfig cfg;
  if (base) apply_config_file(cfg, *base);
  if (c.config_file) apply_config_file(cfg, resolve(*c.config_file));
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, detail::trim(s.substr(0, eq)), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
  return resolve(value);
}

void append_command_log(const fs::path& dir, const std::string& command, const std::vector<std::string>& args) {
  std::ofstream out(dir / "commands.jsonl", std::ios::app);
  out << Json{{"command", command}, {"args", args}}.dump() << '\n';
}

bool is_volume_file(const fs::path& p) { return p.extension() == ".bsr" || is_nifti_path(p); }

std::vector<Volume> load_volume_dir(const fs::path& dir, bool required) {
  if (!fs::is_directory(dir)) {
    if (required) throw MissingArtifactError("missing directory '" + dir.string() + "'");
    return {};
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_volume_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Volume> out;
  for (const auto& f : files) out.push_back(load_any_volume(f));
  if (required && out.empty()) throw DataError("no volumes in '" + dir.string() + "'");
  return out;
}

std::vector<std::string> sorted_ids(const std::set<std::string>& s) { return {s.begin(), s.end()}; }

std::set<std::string> id_set(const Json& j) {
  std::set<std::string> s;
  for (const auto& v : j) s.insert(v.get<std::string>());
  return s;
}

Json report_json(const LesionReport& r) {
  Json j = {{"region", r.region},        {"dice", r.dice},
            {"lw_dice", r.lw_dice},      {"hd95", r.hd95},
            {"lw_hd95", r.lw_hd95},      {"haus", r.haus},
            {"truth_lesions", r.truth_lesions}, {"pred_lesions", r.pred_lesions},
            {"lesion_fp", r.unmatched_pred.size()}, {"lesion_fn", r.unmatched_truth.size()}};
  j["lw_sens"] = r.lw_sens ? Json(*r.lw_sens) : Json(nullptr);
  j["spec"] = r.spec ? Json(*r.spec) : Json(nullptr);
  Json pairs = Json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"truth", p.truth}, {"pred", p.pred}, {"dice", p.dice}, {"sens", p.sens}, {"hd95", p.hd95}});
  j["pairs"] = pairs;
  return j;
}

// Shared by `eval --run` and `eval --pred/--truth`.
void write_eval(const fs::path& out, const std::string& method, const std::vector<Json>& cases,
                const std::vector<std::vector<LesionReport>>& reports, const Json& extra) {
  fs::create_directories(out);
  Json all = Json::array();
  for (const auto& c : cases) all.push_back(c);
  write_json(out / "cases.json", all);
  const auto row = report::aggregate_metrics(method, reports);
  write_text(out / "metrics.csv", report::metrics_csv({row}));
  Json summary = extra;
  summary["method"] = method;
  summary["cases"] = reports.size();
  static const std::array<const char*, 3> names = {"WT", "ET", "TC"};
  for (std::size_t k = 0; k < 3; ++k)
    summary["regions"][names[k]] = {{"dice", row.dice[k]}, {"hd95", row.hd95[k]}, {"lw_dice", row.lw_dice[k]}};
  write_json(out / "summary.json", summary);
}

Array<std::uint8_t> load_labels(const fs::path& p, Spacing* spacing) {
  if (!fs::is_regular_file(p)) throw MissingArtifactError("missing label file '" + p.string() + "'");
  if (is_nifti_path(p)) {
    const auto img = nifti::read(p);
    if (spacing) *spacing = detail::nifti_spacing(img);
    return load_nifti_labels(p);
  }
  const Volume v = load_volume(p);
  if (spacing) *spacing = v.spacing;
  return v.labels;
}

struct Heartbeat {
  std::ostream& err;
  void operator()(const std::string& msg) const { err << "[brainseg] " << msg << std::endl; }
};

int cmd_synth(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out, Heartbeat hb) {
  RunLock lock(out_dir);
  Json files = Json::array();
  auto emit = [&](bool tumor, std::size_t n) {
    if (n == 0) return;
    PhantomSpec spec = cfg.phantom;
    spec.seed = cfg.seed;
    spec.n_subjects = n;
    spec.t1_only = !tumor && cfg.normals_t1_only;
    const std::string sub = tumor ? "tumor" : "normal";
    fs::create_directories(out_dir / sub);
    for (std::size_t i = 0; i < n; ++i) {
      const Volume v = synth_subject(spec, tumor, i);
      char name[32];
      std::snprintf(name, sizeof name, "%s_%04zu.bsr", sub.c_str(), i);
      const fs::path p = out_dir / sub / name;
      save_volume(v, p);
      files.push_back({{"path", sub + "/" + name},
                       {"subject_id", v.subject_id},
                       {"bytes", fs::file_size(p)},
                       {"crc32", file_crc32(p.string())}});
    }
    hb("synth: wrote " + std::to_string(n) + " " + sub + " phantoms");
  };
  emit(true, cfg.tumor_subjects);
  emit(false, cfg.normal_subjects);
  write_json(out_dir / "manifest.json", {{"format", "brainseg-raw volumes"},
                                         {"seed", cfg.seed},
                                         {"tumor_subjects", cfg.tumor_subjects},
                                         {"normal_subjects", cfg.normal_subjects},
                                         {"files", files}});
  write_text(out_dir / "config.txt", config_text(cfg));
  out << "synth: " << files.size() << " volumes -> " << out_dir.string() << "\n";
  return 0;
}

int cmd_enhance(const RunConfig& cfg, const fs::path& data, const fs::path& out_dir, std::ostream& out, Heartbeat hb) {
  const auto tumor = load_volume_dir(data / "tumor", false), normal = load_volume_dir(data / "normal", false);
  if (tumor.empty() && normal.empty()) throw DataError("no volumes under '" + data.string() + "'");
  RunLock lock(out_dir);
  Json files = Json::array();
  for (const auto& [sub, vols] : {std::pair{std::string("tumor"), &tumor}, std::pair{std::string("normal"), &normal}}) {
    if (vols->empty()) continue;
    fs::create_directories(out_dir / sub);
    for (const auto& v : *vols) {
      const fs::path p = out_dir / sub / (v.subject_id + ".bsr");
      save_volume(enhance_volume(v, cfg.enhance), p);
      files.push_back({{"path", sub + "/" + p.filename().string()}, {"crc32", file_crc32(p.string())}});
    }
    hb("enhance: " + std::to_string(vols->size()) + " " + sub + " volumes");
  }
  const auto g = report::enhancement_grid(tumor.empty() ? normal : tumor, cfg.enhance);
  report::write_png_gray(out_dir / "enhancement_grid.png", g.width, g.height, g.pixels);
  write_json(out_dir / "manifest.json", {{"source", data.string()}, {"files", files}});
  write_text(out_dir / "config.txt", config_text(cfg));
  out << "enhance: " << files.size() << " volumes -> " << out_dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const fs::path& data, const fs::path& out_dir, std::ostream& out, Heartbeat hb) {
  const auto normals = load_volume_dir(data / "normal", true);
  const auto samples = prepare_samples(normals, cfg.data, cfg.enhance, false);
  if (samples.empty()) throw DataError("pretrain-gan: normal volumes contain no brain slices");
  const auto split = split_subjects(subject_ids(samples), cfg.data.val_fraction, 0.0, cfg.seed);
  const auto train = select(samples, split.train), val = select(samples, split.val);
  hb("pretrain-gan: " + std::to_string(train.size()) + " train / " + std::to_string(val.size()) + " val slices");

  RunLock lock(out_dir);
  write_text(out_dir / "config.txt", config_text(cfg));
  std::ofstream log(out_dir / "train_log.jsonl");
  TrainHooks hooks;
  hooks.log = &log;
  hooks.heartbeat = hb;
  auto res = pretrain_gan<float>(train, val, cfg.generator, cfg.discriminator, cfg.pretrain, cfg.optimizer, cfg.seed, hooks);
  log.close();

  const Json state = {{"epochs_run", res.epochs_run},
                      {"best_epoch", res.best_epoch},
                      {"stopped_early", res.stopped_early},
                      {"generator_updates", res.generator_updates},
                      {"discriminator_updates", res.discriminator_updates}};
  save_checkpoint(out_dir / "generator.ckpt", res.generator, "generator", Json(cfg.generator), state);
  save_checkpoint(out_dir / "discriminator.ckpt", res.discriminator, "discriminator", Json(cfg.discriminator), state);
  Json sum = state;
  sum["data"] = fs::absolute(data).lexically_normal().string();
  sum["val_l1"] = res.val_l1;
  sum["split"] = {{"train", sorted_ids(split.train)}, {"val", sorted_ids(split.val)}};
  sum["checksums"] = {{"generator", file_crc32((out_dir / "generator.ckpt").string())},
                      {"discriminator", file_crc32((out_dir / "discriminator.ckpt").string())}};
  write_json(out_dir / "summary.json", sum);
  out << "pretrain-gan: " << res.epochs_run << " epochs, G updates " << res.generator_updates << ", D updates "
      << res.discriminator_updates << " -> " << out_dir.string() << "\n";
  return 0;
}

int cmd_train_seg(const RunConfig& cfg, const fs::path& data, const fs::path& gan, const fs::path& out_dir,
                  std::ostream& out, Heartbeat hb) {
  const auto tumor = load_volume_dir(data / "tumor", true);
  const auto samples = prepare_samples(tumor, cfg.data, cfg.enhance, true);
  if (samples.empty()) throw DataError("train-seg: tumor volumes contain no labeled slices");
  const auto split = split_subjects(subject_ids(samples), cfg.data.val_fraction, cfg.data.test_fraction, cfg.seed);
  const auto train = select(samples, split.train), val = select(samples, split.val);

  const fs::path g_path = gan / "generator.ckpt", d_path = gan / "discriminator.ckpt";
  const Container g_ckpt = read_checkpoint(g_path, "generator"), d_ckpt = read_checkpoint(d_path, "discriminator");
  Generator<float> G = load_generator<float>(g_path);
  Discriminator<float> D = load_discriminator<float>(d_path);
  const std::string g_before = file_crc32(g_path.string()), d_before = file_crc32(d_path.string());
  hb("train-seg: " + std::to_string(train.size()) + " train / " + std::to_string(val.size()) + " val slices");

  RunLock lock(out_dir);
  write_text(out_dir / "config.txt", config_text(cfg));
  std::ofstream log(out_dir / "train_log.jsonl");
  TrainHooks hooks;
  hooks.log = &log;
  hooks.heartbeat = hb;
  auto res = train_seg<float>(train, val, cfg.segmenter, G, D, cfg.optimizer, cfg.loss, cfg.seed, hooks);
  log.close();

  save_checkpoint(out_dir / "segmenter.ckpt", res.segmenter, "segmenter", Json(cfg.segmenter),
                  {{"epochs", cfg.optimizer.epochs}, {"steps", res.steps}});
  // The frozen pair is re-serialized after training with its original metadata, so a byte
  // comparison with the inputs shows whether training touched it.
  write_container(out_dir / "generator.ckpt",
                  checkpoint_container(G, "generator", g_ckpt.meta.at("config"), g_ckpt.meta.at("state")));
  write_container(out_dir / "discriminator.ckpt",
                  checkpoint_container(D, "discriminator", d_ckpt.meta.at("config"), d_ckpt.meta.at("state")));
  const std::string g_after = file_crc32((out_dir / "generator.ckpt").string());
  const std::string d_after = file_crc32((out_dir / "discriminator.ckpt").string());
  const bool frozen = read_text(g_path) == read_text(out_dir / "generator.ckpt") &&
                      read_text(d_path) == read_text(out_dir / "discriminator.ckpt");

  Json sum;
  sum["data"] = fs::absolute(data).lexically_normal().string();
  sum["gan"] = fs::absolute(gan).lexically_normal().string();
  sum["split"] = {{"train", sorted_ids(split.train)}, {"val", sorted_ids(split.val)}, {"test", sorted_ids(split.test)}};
  sum["val_dice"] = res.val_dice;
  sum["steps"] = res.steps;
  sum["frozen"] = {{"generator_before", g_before},
                   {"generator_after", g_after},
                   {"discriminator_before", d_before},
                   {"discriminator_after", d_after},
                   {"byte_identical", frozen}};
  write_json(out_dir / "summary.json", sum);
  out << "train-seg: " << res.steps << " steps, final val Dice "
      << (res.val_dice.empty() ? 0.0 : res.val_dice.back()) << ", frozen G/D "
      << (frozen ? "unchanged" : "CHANGED") << " -> " << out_dir.string() << "\n";
  if (!frozen) throw ConsistencyError("train-seg: frozen generator/discriminator checkpoints changed");
  return 0;
}

struct RunInputs {
  Json summary;
  fs::path data;
};

RunInputs read_run(const fs::path& run) {
  for (const char* f : {"summary.json", "config.txt", "segmenter.ckpt", "discriminator.ckpt"})
    if (!fs::is_regular_file(run / f)) throw MissingArtifactError("run '" + run.string() + "' lacks " + f);
  RunInputs in;
  in.summary = read_json(run / "summary.json");
  if (!in.summary.contains("data") || !in.summary.contains("split"))
    throw IngestionError("'" + (run / "summary.json").string() + "' is not a train-seg summary");
  in.data = in.summary.at("data").get<std::string>();
  return in;
}

std::vector<Sample> test_slices(const RunConfig& cfg, const RunInputs& in) {
  const auto tumor = load_volume_dir(in.data / "tumor", true);
  return select(prepare_samples(tumor, cfg.data, cfg.enhance, true), id_set(in.summary.at("split").at("test")));
}

int cmd_sweep(const RunConfig& cfg, const fs::path& run, std::ostream& out, Heartbeat hb) {
  const RunInputs in = read_run(run);
  std::vector<Sample> samples = test_slices(cfg, in);
  const auto normals = load_volume_dir(in.data / "normal", false);
  std::size_t n_normal = 0;
  if (!normals.empty()) {
    const auto ns = prepare_samples(normals, cfg.data, cfg.enhance, false);
    const auto split = split_subjects(subject_ids(ns), cfg.data.val_fraction, 0.0, cfg.seed);
    for (auto& s : select(ns, split.val)) {
      samples.push_back(std::move(s));
      ++n_normal;
    }
  }
  if (samples.empty()) throw DataError("sweep: no test slices");
  const auto D = load_discriminator<float>(run / "discriminator.ckpt");
  std::optional<Segmenter<float>> S;
  if (cfg.sweep.gated) S.emplace(load_segmenter<float>(run / "segmenter.ckpt"));
  hb("sweep: scoring " + std::to_string(samples.size()) + " slices");
  const auto scores = slice_scores(D, samples, cfg.optimizer.batch_size, S ? &*S : nullptr);
  std::vector<bool> tumor;
  for (const auto& s : samples) tumor.push_back(s.tumor);
  const auto rows = threshold_sweep(scores, tumor, cfg.sweep);

  RunLock lock(run);
  write_text(run / "sweep.csv", report::sweep_csv(rows));
  Json j = {{"orientation", cfg.sweep.orientation == SweepOrientation::normality ? "normality" : "abnormality"},
            {"gated", cfg.sweep.gated},
            {"tumor_slices", samples.size() - n_normal},
            {"normal_slices", n_normal}};
  Json sl = Json::array();
  for (std::size_t i = 0; i < samples.size(); ++i)
    sl.push_back({{"subject_id", samples[i].subject_id},
                  {"slice", samples[i].slice_index},
                  {"tumor", bool(tumor[i])},
                  {"score", scores[i]}});
  j["slices"] = sl;
  write_json(run / "sweep.json", j);
  append_command_log(run, "sweep", {});
  out << report::sweep_markdown(rows);
  return 0;
}

int cmd_eval_run(const RunConfig& cfg, const fs::path& run, std::ostream& out, Heartbeat hb) {
  const RunInputs in = read_run(run);
  const auto samples = test_slices(cfg, in);
  if (samples.empty()) throw DataError("eval: the run has no test slices");
  const auto S = load_segmenter<float>(run / "segmenter.ckpt");
  hb("eval: " + std::to_string(samples.size()) + " test slices");
  const auto ev = evaluate_segmenter(S, samples, cfg.optimizer.batch_size, cfg.eval);
  std::vector<Json> cases;
  std::vector<std::vector<LesionReport>> reports;
  double soft = 0.0;
  for (const auto& e : ev) {
    Json c = {{"subject_id", e.subject_id}, {"slice", e.slice_index}, {"soft_wt_dice", e.soft_wt_dice}};
    for (const auto& r : e.regions) c["regions"].push_back(report_json(r));
    cases.push_back(c);
    reports.push_back(e.regions);
    soft += e.soft_wt_dice;
  }
  soft /= double(ev.size());
  RunLock lock(run);
  write_eval(run / "eval", "segmenter", cases, reports, {{"soft_wt_dice", soft}});
  const auto row = report::aggregate_metrics("segmenter", reports);
  out << "eval: " << ev.size() << " slices, soft WT Dice " << soft << ", WT Dice " << row.dice[0] << ", WT LW Dice "
      << row.lw_dice[0] << "\n";
  return 0;
}

int cmd_eval_files(const RunConfig& cfg, const fs::path& pred, const fs::path& truth, const fs::path& out_dir,
                   std::ostream& out) {
  Spacing spacing{1.0, 1.0, 1.0};
  const auto t = load_labels(truth, &spacing);
  const auto p = load_labels(pred, nullptr);
  const auto regions = evaluate(p, t, spacing, cfg.eval);
  Json c = {{"pred", pred.string()}, {"truth", truth.string()}};
  for (const auto& r : regions) c["regions"].push_back(report_json(r));
  RunLock lock(out_dir);
  write_eval(out_dir, "prediction", {c}, {regions}, Json::object());
  write_text(out_dir / "config.txt", config_text(cfg));
  out << report::metrics_csv({report::aggregate_metrics("prediction", {regions})});
  return 0;
}

int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarially refined brain tumor segmentation on phantom and NIfTI data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;
  std::string out_s, data_s, gan_s, run_s, pred_s, truth_s;

  auto* synth = app.add_subcommand("synth", "write a seeded phantom dataset");
  synth->add_option("--out", out_s, "dataset directory");
  auto* enh = app.add_subcommand("enhance", "write enhanced copies of a dataset and a comparison grid");
  enh->add_option("--data", data_s, "dataset directory");
  enh->add_option("--out", out_s, "output directory");
  auto* pre = app.add_subcommand("pretrain-gan", "pretrain the inpainting generator and patch discriminator on normals");
  pre->add_option("--data", data_s, "dataset directory");
  pre->add_option("--out", out_s, "output directory");
  auto* seg = app.add_subcommand("train-seg", "train the segmenter against the frozen GAN");
  seg->add_option("--data", data_s, "dataset directory");
  seg->add_option("--gan", gan_s, "pretrain-gan output directory");
  seg->add_option("--out", out_s, "run directory");
  auto* sw = app.add_subcommand("sweep", "slice-level threshold sweep of the discriminator score");
  sw->add_option("--run", run_s, "train-seg run directory");
  auto* ev = app.add_subcommand("eval", "lesion-wise evaluation of a run or of a prediction file");
  ev->add_option("--run", run_s, "train-seg run directory");
  ev->add_option("--pred", pred_s, "predicted label volume");
  ev->add_option("--truth", truth_s, "ground-truth label volume");
  ev->add_option("--out", out_s, "output directory (with --pred/--truth)");
  auto* rep = app.add_subcommand("report", "figures and tables from a completed run");
  rep->add_option("--run", run_s, "train-seg run directory");
  for (auto* s : {synth, enh, pre, seg, sw, ev, rep}) add_common(s, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return int(ExitCode::config);
  }

  Heartbeat hb{err};
  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();

  // Commands working on a run inherit its resolved configuration.
  std::optional<fs::path> base;
  if (!run_s.empty() && (name == "sweep" || name == "eval" || name == "report")) {
    const fs::path r = resolve(run_s);
    if (fs::is_regular_file(r / "config.txt")) base = r / "config.txt";
  }
  const RunConfig cfg = resolve_config(common, base);
  if (common.print_config) {
    out << config_text(cfg);
    return 0;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  int rc = 0;
  if (name == "synth") {
    const fs::path o = require_path(out_s, "--out");
    rc = cmd_synth(cfg, o, out, hb);
    append_command_log(o, name, args);
  } else if (name == "enhance") {
    const fs::path o = require_path(out_s, "--out");
    rc = cmd_enhance(cfg, require_path(data_s, "--data"), o, out, hb);
    append_command_log(o, name, args);
  } else if (name == "pretrain-gan") {
    const fs::path o = require_path(out_s, "--out");
    rc = cmd_pretrain(cfg, require_path(data_s, "--data"), o, out, hb);
    append_command_log(o, name, args);
  } else if (name == "train-seg") {
    const fs::path o = require_path(out_s, "--out");
    rc = cmd_train_seg(cfg, require_path(data_s, "--data"), require_path(gan_s, "--gan"), o, out, hb);
    append_command_log(o, name, args);
  } else if (name == "sweep") {
    rc = cmd_sweep(cfg, require_path(run_s, "--run"), out, hb);
  } else if (name == "eval") {
    if (!run_s.empty()) {
      if (!pred_s.empty() || !truth_s.empty()) throw ConfigError("eval: use either --run or --pred/--truth");
      rc = cmd_eval_run(cfg, resolve(run_s), out, hb);
    } else {
      rc = cmd_eval_files(cfg, require_path(pred_s, "--pred"), require_path(truth_s, "--truth"),
                          require_path(out_s, "--out"), out);
    }
  } else if (name == "report") {
    const fs::path r = require_path(run_s, "--run");
    if (!fs::is_directory(r)) throw MissingArtifactError("run directory '" + r.string() + "' does not exist");
    const auto files = report::write_report(r);
    for (const auto& f : files) out << f.string() << "\n";
  }
  return rc;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return int(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return int(ExitCode::data);
  } catch (const Json::exception& e) {
    err << "error: malformed run metadata: " << e.what() << "\n";
    return int(ExitCode::data);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return int(ExitCode::usage);
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.push_back("brainseg");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run_cli(int(storage.size()), argv.data(), out, err);
}

}  // namespace brainseg::cli
