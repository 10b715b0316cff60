#include "calign/cli.hpp"

#include <chrono>
#include <ctime>
#include <functional>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "calign/anchor.hpp"
#include "calign/error.hpp"
#include "calign/io.hpp"
#include "calign/toy_train.hpp"

namespace calign::cli {
namespace fs = std::filesystem;
namespace {

constexpr std::string_view kWorldFormat = "world/v1";
constexpr std::string_view kManifestFormat = "manifest/v1";

struct Record {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  std::string config;
  std::string manifest;
};

struct Command {
  CLI::App* app = nullptr;
  std::function<Record(const Common&)> body;
};

[[noreturn]] void usage(const std::string& message) { throw Error(ErrorKind::Usage, message); }

void need(const std::string& value, const char* flag) {
  if (value.empty()) usage(std::string("missing required option --") + flag);
}

fs::path out_dir(const Common& c) {
  need(c.out, "out");
  fs::create_directories(c.out);
  return fs::path(c.out);
}

std::string emit(const fs::path& dir, const std::string& name, std::string_view text, Record& rec) {
  const fs::path p = dir / name;
  write_text(p, text);
  rec.outputs.push_back(p.string());
  return p.string();
}

std::string matrix_name(const std::string& kind, const std::string& id) { return kind + "_" + id + ".txt"; }

// Instances of the chosen split together with their masks. Each split draws
// its masks from its own named stream.
struct Selection {
  std::vector<int> indices;
  std::vector<ObservationMask> masks;
};

Selection select(const SynthWorld& world, const std::string& split, const MaskPattern& pattern, std::uint64_t seed) {
  Selection s;
  if (split == "train") s.indices = world.train_indices();
  else if (split == "heldout") s.indices = world.heldout_indices();
  else if (split == "all") {
    s.indices.resize(static_cast<std::size_t>(world.size()));
    for (int i = 0; i < world.size(); ++i) s.indices[static_cast<std::size_t>(i)] = i;
  } else {
    usage("--split must be train, heldout or all");
  }
  s.masks = make_masks(pattern, world.modality_count(), static_cast<int>(s.indices.size()), seed, split + "_masks");
  return s;
}

std::string join_mask(const ObservationMask& mask) {
  std::string out;
  for (int m : mask.observed()) out += (out.empty() ? "" : ";") + std::to_string(m);
  return out;
}

// --- option binding --------------------------------------------------------

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--seed", c.seed, "Run seed; every random stream derives from it");
  app->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  if (with_out) app->add_option("--out", c.out, "Output directory");
  app->add_option("--config", c.config, "Flat JSON file of option values; flags win");
  app->add_option("--manifest", c.manifest, "Re-run from a manifest written by an earlier run; flags win");
}

std::string json_scalar_text(const Json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return format_number(v.get<double>());
  usage("config value for '" + key + "' must be a string, number or boolean");
}

// Applies config values to options the command line left unset.
void merge_values(CLI::App* app, const Json& values, const std::string& source) {
  if (!values.is_object()) usage(source + " must hold a flat JSON object");
  for (const auto& [key, value] : values.items()) {
    if (key == "config" || key == "manifest") continue;
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (!opt) usage(source + ": unknown option '" + key + "'");
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& item : value) opt->add_result(json_scalar_text(item, key));
    } else {
      opt->add_result(json_scalar_text(value, key));
    }
    opt->run_callback();
  }
}

Json parse_json_file(const std::string& path, const std::string& what) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Parse, what + " '" + path + "' is not valid JSON: " + e.what());
  }
}

Json resolved_config(CLI::App* app) {
  Json config = Json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "manifest") continue;
    if (opt->get_items_expected_max() > 1) {
      config[name] = opt->count() > 0 ? Json(opt->results()) : Json::array();
    } else if (opt->count() > 0) {
      config[name] = opt->results().back();
    } else {
      config[name] = opt->get_default_str();
    }
  }
  return config;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --- world files -----------------------------------------------------------

Json world_header(const SynthWorld& world) {
  Json j;
  j["format"] = kWorldFormat;
  j["seed"] = world.seed;
  j["spec"] = to_json(world.spec);
  j["ids"] = world.truth.ids();
  return j;
}

// --- subcommands -----------------------------------------------------------

struct SynthOptions {
  SynthSpec spec;
};

Record run_synth(const Common& c, const SynthOptions& o) {
  const fs::path dir = out_dir(c);
  const SynthWorld world = make_world(o.spec, c.seed);
  Record rec;
  rec.outputs = write_world(dir, world);
  return rec;
}

struct FitOptions {
  std::string world;
  std::string pattern = "mix:0.5";
  std::string split = "train";
  int iters = 100;
  double tol = 1e-8;
  int latent_dim = 0;
};

Record run_fit(const Common& c, const FitOptions& o) {
  need(o.world, "world");
  Record rec{{o.world}, {}};
  const SynthWorld world = read_world(o.world);
  const fs::path dir = out_dir(c);
  const Selection sel = select(world, o.split, MaskPattern::parse(o.pattern), c.seed);
  const auto data = observed_data(world, sel.indices, sel.masks);
  const int r = o.latent_dim > 0 ? o.latent_dim : world.spec.latent_dim;
  EmOptions opts;
  opts.max_iters = o.iters;
  opts.tol = o.tol;
  opts.threads = c.threads;
  const EmResult fit = em_fit(data, initialize_params(data, r, world.truth.ids()), opts);

  emit(dir, "params.json", params_to_json(fit.params), rec);
  CsvWriter trace({"iteration", "loglik", "delta"});
  for (std::size_t i = 0; i < fit.trace.loglik.size(); ++i)
    trace.row({std::to_string(i), format_number(fit.trace.loglik[i]),
               i == 0 ? "" : format_number(fit.trace.loglik[i] - fit.trace.loglik[i - 1])});
  emit(dir, "trace.csv", trace.text(), rec);
  Json summary;
  summary["iterations"] = fit.trace.iterations;
  summary["converged"] = fit.trace.converged;
  summary["initial_loglik"] = fit.trace.loglik.front();
  summary["final_loglik"] = fit.trace.loglik.back();
  summary["instances"] = data.size();
  summary["degenerate_modalities"] = fit.trace.degenerate_modalities;
  emit(dir, "fit.json", dump_pretty(summary), rec);
  return rec;
}

struct EvalOptions {
  std::string world;
  std::string params;
  std::string pattern = "mix:0.5";
  std::string split = "heldout";
  int trials = 500;
};

Record run_impute(const Common& c, const EvalOptions& o) {
  need(o.world, "world");
  need(o.params, "params");
  Record rec{{o.world, o.params}, {}};
  const SynthWorld world = read_world(o.world);
  const GenerativeParams params = load_params(o.params);
  const fs::path dir = out_dir(c);
  const Selection sel = select(world, o.split, MaskPattern::parse(o.pattern), c.seed);
  const ImputationMse mse = imputation_mse(world, params, sel.indices, sel.masks, c.seed);

  emit(dir, "imputation_mse.json", dump_pretty(to_json(mse)), rec);
  CsvWriter table({"modality", "occurrences", "mse", "random_mse"});
  for (const auto& m : mse.per_modality)
    table.row({m.id, std::to_string(m.occurrences), m.mse ? format_number(*m.mse) : "",
               m.random_mse ? format_number(*m.random_mse) : ""});
  emit(dir, "imputation_mse.csv", table.text(), rec);

  std::vector<std::string> header{"instance", "modality"};
  for (Eigen::Index j = 0; j < params.embed_dim(); ++j) header.push_back("z" + std::to_string(j));
  CsvWriter imputed(header);
  const auto data = observed_data(world, sel.indices, sel.masks);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (sel.masks[i].is_full()) continue;
    const Posterior post = posterior_infer(params, data[i]);
    for (int m : sel.masks[i].missing()) {
      const Vector z = impute(params, post, m);
      std::vector<std::string> cells{std::to_string(sel.indices[i]), params.modality(m).id};
      for (Eigen::Index j = 0; j < z.size(); ++j) cells.push_back(format_number(z(j)));
      imputed.row(cells);
    }
  }
  emit(dir, "imputed.csv", imputed.text(), rec);
  return rec;
}

Record run_diagnose(const Common& c, const EvalOptions& o) {
  need(o.world, "world");
  need(o.params, "params");
  if (o.trials < 1) usage("--trials must be positive");
  Record rec{{o.world, o.params}, {}};
  const SynthWorld world = read_world(o.world);
  const GenerativeParams params = load_params(o.params);
  const fs::path dir = out_dir(c);
  const Selection sel = select(world, o.split, MaskPattern::parse(o.pattern), c.seed);
  const auto data = observed_data(world, sel.indices, sel.masks);

  std::string lines;
  int reported = 0, violations = 0, degenerate = 0;
  for (std::size_t i = 0; i < sel.indices.size() && reported < o.trials; ++i) {
    const EmbeddingStack stack(world.unit_stack(sel.indices[i]), world.truth.ids());
    AnchorReport report = shift_bounds(stack, sel.masks[i]);
    if (!sel.masks[i].is_full() && !report.near_degenerate) {
      const Posterior post = posterior_infer(params, data[i]);
      std::map<int, Vector> imputed;
      for (int m : sel.masks[i].missing()) imputed[m] = impute(params, post, m);
      report.delta_calibrated = calibrated_shift(stack, sel.masks[i], imputed).delta_calibrated;
    }
    Json line;
    line["instance"] = sel.indices[i];
    line["observed"] = sel.masks[i].observed();
    const Json fields = to_json(report);
    for (const auto& [key, value] : fields.items()) line[key] = value;
    lines += dump_line(line);
    ++reported;
    violations += report.bound_violated ? 1 : 0;
    degenerate += report.near_degenerate ? 1 : 0;
  }
  emit(dir, "anchor_reports.jsonl", lines, rec);

  const ShiftSummary shift = shift_experiment(world, params, sel.indices, sel.masks, o.trials, c.seed);
  Json summary = to_json(shift);
  summary["reports"] = reported;
  summary["bound_violations"] = violations;
  summary["near_degenerate"] = degenerate;
  emit(dir, "shift_summary.json", dump_pretty(summary), rec);
  CsvWriter table({"instance", "observed", "delta_missing", "delta_calibrated", "improved"});
  for (const auto& t : shift.trials)
    table.row({std::to_string(t.instance), join_mask(t.mask), format_number(t.shift.delta_missing),
               format_number(t.shift.delta_calibrated), t.shift.improved ? "1" : "0"});
  emit(dir, "shift.csv", table.text(), rec);
  return rec;
}

struct LossOptions {
  std::vector<std::string> stacks;
  std::string head;
  double tau = 0.05;
  double tau_prime = 0.1;
  double alpha = 0.1;
};

Record run_eval_loss(const Common& c, const LossOptions& o) {
  if (o.stacks.empty()) usage("missing required option --stack");
  Record rec{o.stacks, {}};
  std::vector<LossItem> batch;
  for (const auto& path : o.stacks) batch.push_back(LossItem::from(EmbeddingStack(read_matrix(path))));
  std::optional<MatchingHead> head;
  if (!o.head.empty()) {
    head = head_from_json(read_text(o.head));
    rec.inputs.push_back(o.head);
  }
  const fs::path dir = out_dir(c);
  const LossConfig config{o.tau, o.tau_prime, o.alpha, c.seed};
  const LossBreakdown loss = rep_loss(batch, config, head ? &*head : nullptr);
  emit(dir, "loss.json", dump_pretty(to_json(loss)), rec);
  return rec;
}

struct TrainOptions {
  std::string world;
  std::string pattern = "mix:0.5";
  TrainConfig config;
  double encoder_quality = 0.2;
};

Record run_train(const Common& c, const TrainOptions& o) {
  need(o.world, "world");
  Record rec{{o.world}, {}};
  const SynthWorld world = read_world(o.world);
  const fs::path dir = out_dir(c);
  TrainConfig config = o.config;
  config.seed = c.seed;
  if (config.latent_dim <= 0) config.latent_dim = world.spec.latent_dim;
  if (config.embed_dim <= 0) config.embed_dim = world.spec.embed_dim;
  const Selection train_sel = select(world, "train", MaskPattern::parse(o.pattern), c.seed);
  const auto heldout_idx = world.heldout_indices();
  const Dataset train_data = Dataset::from_world(world, train_sel.indices, train_sel.masks);
  const Dataset heldout = Dataset::from_world(
      world, heldout_idx, make_masks(MaskPattern{}, world.modality_count(), static_cast<int>(heldout_idx.size()), c.seed));
  const Dataset warm = train_data.completed();
  const LinearEncoder start = LinearEncoder::pretrained(world, config.embed_dim, o.encoder_quality, c.seed);
  const TrainReport report = train(train_data, heldout, config, &warm, &start);

  emit(dir, "report.json", dump_pretty(to_json(report)), rec);
  CsvWriter trace({"epoch", "loss", "loglik", "r1", "r5", "r10"});
  for (std::size_t e = 0; e < report.loss.size(); ++e)
    trace.row({std::to_string(e + 1), format_number(report.loss[e]), format_number(report.loglik[e]),
               format_number(report.recall1[e]), format_number(report.recall5[e]), format_number(report.recall10[e])});
  emit(dir, "trace.csv", trace.text(), rec);
  emit(dir, "params.json", params_to_json(report.params), rec);
  const auto ids = world.truth.ids();
  for (int m = 0; m < report.encoder.modality_count(); ++m)
    emit(dir, matrix_name("encoder", ids[static_cast<std::size_t>(m)]),
         format_matrix(report.encoder.projections[static_cast<std::size_t>(m)]), rec);
  return rec;
}

struct ReportOptions {
  std::vector<std::string> sources;
};

Record run_report(const Common& c, const ReportOptions& o) {
  if (o.sources.empty()) usage("missing required option --from");
  Record rec;
  CsvWriter imputation({"source", "modality", "occurrences", "mse", "random_mse"});
  CsvWriter shift({"source", "evaluated", "mean_delta_missing", "mean_delta_calibrated", "improved_fraction", "bound_violations"});
  CsvWriter training({"source", "epochs", "initial_loss", "final_loss", "final_r1", "final_r5", "final_r10"});
  Json summary = Json::object();
  auto num = [](const Json& v) { return v.is_null() ? std::string() : format_number(v.get<double>()); };
  for (const auto& source : o.sources) {
    const fs::path dir(source);
    bool found = false;
    Json entry = Json::object();
    if (fs::exists(dir / "imputation_mse.json")) {
      const Json j = parse_json_file((dir / "imputation_mse.json").string(), "imputation summary");
      for (const auto& row : j.at("per_modality"))
        imputation.row({source, row.at("id").get<std::string>(), std::to_string(row.at("occurrences").get<int>()),
                  num(row.at("mse")), num(row.at("random_mse"))});
      entry["imputation"] = j;
      rec.inputs.push_back((dir / "imputation_mse.json").string());
      found = true;
    }
    if (fs::exists(dir / "shift_summary.json")) {
      const Json j = parse_json_file((dir / "shift_summary.json").string(), "shift summary");
      shift.row({source, std::to_string(j.at("evaluated").get<int>()), num(j.at("mean_delta_missing")),
                num(j.at("mean_delta_calibrated")), num(j.at("improved_fraction")),
                std::to_string(j.value("bound_violations", 0))});
      entry["shift"] = j;
      rec.inputs.push_back((dir / "shift_summary.json").string());
      found = true;
    }
    if (fs::exists(dir / "report.json")) {
      const Json j = parse_json_file((dir / "report.json").string(), "training report");
      const auto& loss = j.at("loss");
      if (!loss.empty()) {
        training.row({source, std::to_string(loss.size()), num(loss.front()), num(loss.back()),
                      num(j.at("recall_at_1").back()), num(j.at("recall_at_5").back()),
                      num(j.at("recall_at_10").back())});
      }
      entry["training"] = {{"epochs", loss.size()},
                           {"final_loss", loss.empty() ? Json(nullptr) : loss.back()},
                           {"final_recall_at_1", loss.empty() ? Json(nullptr) : j.at("recall_at_1").back()}};
      rec.inputs.push_back((dir / "report.json").string());
      found = true;
    }
    if (!found) throw Error(ErrorKind::Io, "'" + source + "' holds no imputation, shift or training results");
    summary[source] = entry;
  }
  const fs::path dir = out_dir(c);
  emit(dir, "imputation.csv", imputation.text(), rec);
  emit(dir, "anchor_shift.csv", shift.text(), rec);
  emit(dir, "training.csv", training.text(), rec);
  emit(dir, "summary.json", dump_pretty(summary), rec);
  return rec;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Io:
    case ErrorKind::Parse:
      return kExitUsage;
    default:
      return kExitComputation;
  }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  err << j.dump() << '\n';
}

}  // namespace

std::vector<std::string> write_world(const fs::path& dir, const SynthWorld& world) {
  std::vector<std::string> outputs;
  auto put = [&](const std::string& name, std::string_view text) {
    write_text(dir / name, text);
    outputs.push_back((dir / name).string());
  };
  put("world.json", dump_pretty(world_header(world)));
  put("truth.json", params_to_json(world.truth));
  put("latents.txt", format_matrix(world.latents.transpose()));
  const auto ids = world.truth.ids();
  for (int m = 0; m < world.modality_count(); ++m) {
    const auto& id = ids[static_cast<std::size_t>(m)];
    put(matrix_name("embeddings", id), format_matrix(world.embeddings[static_cast<std::size_t>(m)].transpose()));
    put(matrix_name("features", id), format_matrix(world.features[static_cast<std::size_t>(m)].transpose()));
    put(matrix_name("bases", id), format_matrix(world.raw_bases[static_cast<std::size_t>(m)]));
  }
  return outputs;
}

SynthWorld read_world(const fs::path& dir) {
  const Json header = parse_json_file((dir / "world.json").string(), "world header");
  if (header.value("format", "") != kWorldFormat)
    throw Error(ErrorKind::Parse, "world header must declare format \"" + std::string(kWorldFormat) + "\"");
  SynthWorld world;
  world.spec = spec_from_json(header.at("spec"));
  try {
    world.seed = header.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("world header: ") + e.what());
  }
  world.truth = load_params(dir / "truth.json");
  const auto& s = world.spec;
  if (world.truth.modality_count() != s.modalities || world.truth.latent_dim() != s.latent_dim ||
      world.truth.embed_dim() != s.embed_dim)
    throw Error(ErrorKind::Parse, "truth.json does not match the world spec");
  auto load = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    Matrix m = read_matrix(dir / name);
    if (m.rows() != rows || m.cols() != cols)
      throw Error(ErrorKind::Parse, name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols));
    return m;
  };
  world.latents = load("latents.txt", s.instances, s.latent_dim).transpose();
  for (const auto& id : world.truth.ids()) {
    world.embeddings.push_back(load(matrix_name("embeddings", id), s.instances, s.embed_dim).transpose());
    world.features.push_back(load(matrix_name("features", id), s.instances, s.raw_dim).transpose());
    world.raw_bases.push_back(load(matrix_name("bases", id), s.raw_dim, s.latent_dim));
  }
  return world;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Calibrated multimodal alignment toolkit", "calign"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  Common common;
  std::vector<Command> commands;

  SynthOptions synth_o;
  {
    auto* sub = app.add_subcommand("synth", "Generate a synthetic multimodal world");
    add_common(sub, common);
    auto& s = synth_o.spec;
    sub->add_option("--latent-dim", s.latent_dim, "Shared latent dimension r");
    sub->add_option("--embed-dim", s.embed_dim, "Embedding dimension d");
    sub->add_option("--modalities", s.modalities, "Number of modalities k");
    sub->add_option("--instances", s.instances, "Number of instances N");
    sub->add_option("--raw-dim", s.raw_dim, "Raw feature dimension per modality");
    sub->add_option("--signal", s.signal, "Loading scale");
    sub->add_option("--spread", s.spread, "Per-modality departure from the shared loading");
    sub->add_option("--offset-scale", s.offset_scale, "Norm of each modality offset");
    sub->add_option("--noise", s.noise, "Embedding noise standard deviation");
    sub->add_option("--raw-noise", s.raw_noise, "Raw feature noise standard deviation");
    sub->add_option("--train-fraction", s.train_fraction, "Share of instances in the training split");
    commands.push_back({sub, [&](const Common& c) { return run_synth(c, synth_o); }});
  }

  FitOptions fit_o;
  {
    auto* sub = app.add_subcommand("fit", "Fit generative parameters by bi-step EM");
    add_common(sub, common);
    sub->add_option("--world", fit_o.world, "World directory written by synth");
    sub->add_option("--pattern", fit_o.pattern, "Mask pattern: full, vt, at, mix:P, random:Q:MIN_OBS");
    sub->add_option("--split", fit_o.split, "train, heldout or all");
    sub->add_option("--iters", fit_o.iters, "Maximum EM iterations");
    sub->add_option("--tol", fit_o.tol, "Stop when the log-likelihood gain drops below this");
    sub->add_option("--latent-dim", fit_o.latent_dim, "Model latent dimension (0 uses the world's)");
    commands.push_back({sub, [&](const Common& c) { return run_fit(c, fit_o); }});
  }

  EvalOptions impute_o;
  {
    auto* sub = app.add_subcommand("impute", "Impute masked modalities and score them against the truth");
    add_common(sub, common);
    sub->add_option("--world", impute_o.world, "World directory");
    sub->add_option("--params", impute_o.params, "Parameters JSON from fit");
    sub->add_option("--pattern", impute_o.pattern, "Mask pattern");
    sub->add_option("--split", impute_o.split, "train, heldout or all");
    commands.push_back({sub, [&](const Common& c) { return run_impute(c, impute_o); }});
  }

  EvalOptions diagnose_o;
  {
    auto* sub = app.add_subcommand("diagnose", "Anchor-shift reports and calibration comparison");
    add_common(sub, common);
    sub->add_option("--world", diagnose_o.world, "World directory");
    sub->add_option("--params", diagnose_o.params, "Parameters JSON from fit");
    sub->add_option("--pattern", diagnose_o.pattern, "Mask pattern");
    sub->add_option("--split", diagnose_o.split, "train, heldout or all");
    sub->add_option("--trials", diagnose_o.trials, "Instances to report");
    commands.push_back({sub, [&](const Common& c) { return run_diagnose(c, diagnose_o); }});
  }

  LossOptions loss_o;
  {
    auto* sub = app.add_subcommand("eval-loss", "Evaluate the alignment objective on stacks read from matrix files");
    add_common(sub, common);
    sub->add_option("--stack", loss_o.stacks, "Matrix file holding one d x k stack (repeatable)")->take_all();
    sub->add_option("--head", loss_o.head, "Matching head JSON {\"weight\": [...], \"bias\": b}");
    sub->add_option("--tau", loss_o.tau, "Singular-value temperature");
    sub->add_option("--tau-prime", loss_o.tau_prime, "Anchor temperature");
    sub->add_option("--alpha", loss_o.alpha, "Matching-term weight");
    commands.push_back({sub, [&](const Common& c) { return run_eval_loss(c, loss_o); }});
  }

  TrainOptions train_o;
  {
    auto* sub = app.add_subcommand("train", "Toy encoder training with calibrated completion");
    add_common(sub, common);
    auto& t = train_o.config;
    t.latent_dim = 0;
    t.embed_dim = 0;
    sub->add_option("--world", train_o.world, "World directory");
    sub->add_option("--pattern", train_o.pattern, "Mask pattern for the training split");
    sub->add_option("--epochs", t.epochs, "Training epochs");
    sub->add_option("--batch-size", t.batch_size, "Instances per batch");
    sub->add_option("--lr", t.learning_rate, "Base learning rate");
    sub->add_option("--lr-scale", t.lr_scale, "Multiplier on the base rate for linear encoders");
    sub->add_option("--tau", t.tau, "Singular-value temperature");
    sub->add_option("--tau-prime", t.tau_prime, "Anchor temperature");
    sub->add_option("--alpha", t.alpha, "Matching-term weight");
    sub->add_option("--warmup-epochs", t.warmup_epochs, "Generative warm-up passes on the complete split");
    sub->add_option("--impute", t.impute, "Complete stacks with imputations (true/false)");
    sub->add_option("--matching", t.matching_enabled, "Train the matching head (true/false)");
    sub->add_option("--ema-decay", t.ema_decay, "Decay of the running sufficient statistics");
    sub->add_option("--latent-dim", t.latent_dim, "Model latent dimension (0 uses the world's)");
    sub->add_option("--embed-dim", t.embed_dim, "Encoder output dimension (0 uses the world's)");
    sub->add_option("--encoder-quality", train_o.encoder_quality, "Initial encoder alignment in [0, 1]");
    commands.push_back({sub, [&](const Common& c) { return run_train(c, train_o); }});
  }

  ReportOptions report_o;
  {
    auto* sub = app.add_subcommand("report", "Aggregate imputation, shift and training results into tables");
    add_common(sub, common);
    sub->add_option("--from", report_o.sources, "Result directory (repeatable)")->take_all();
    commands.push_back({sub, [&](const Common& c) { return run_report(c, report_o); }});
  }

  std::vector<std::string> argv_store{"calign"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << kVersion << '\n';
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      report_error(err, "usage", e.what(), kExitUsage);
      return kExitUsage;
    }

    Command* chosen = nullptr;
    for (auto& cmd : commands)
      if (app.got_subcommand(cmd.app)) chosen = &cmd;
    if (!chosen) usage("no subcommand given");

    Json manifest_in;
    if (!common.manifest.empty()) {
      manifest_in = parse_json_file(common.manifest, "manifest");
      if (manifest_in.value("format", "") != kManifestFormat) throw Error(ErrorKind::Parse, "manifest has an unknown format");
      if (manifest_in.value("command", "") != chosen->app->get_name())
        usage("manifest was written by '" + manifest_in.value("command", "") + "', not '" + chosen->app->get_name() + "'");
      merge_values(chosen->app, manifest_in.at("config"), "manifest");
    }
    if (!common.config.empty()) merge_values(chosen->app, parse_json_file(common.config, "config"), "config");

    const Json config = resolved_config(chosen->app);
    const auto started = std::chrono::steady_clock::now();
    const std::string started_at = utc_now();
    Record rec = chosen->body(common);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    Json manifest;
    manifest["format"] = kManifestFormat;
    manifest["command"] = chosen->app->get_name();
    manifest["version"] = kVersion;
    manifest["seed"] = common.seed;
    manifest["config"] = config;
    manifest["inputs"] = rec.inputs;
    manifest["outputs"] = rec.outputs;
    manifest["started_at"] = started_at;
    manifest["duration_seconds"] = seconds;
    write_text(fs::path(common.out) / "manifest.json", dump_pretty(manifest));
    return kExitOk;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(err, std::string(to_string(e.kind())), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what(), kExitComputation);
    return kExitComputation;
  }
}

}  // namespace calign::cli
