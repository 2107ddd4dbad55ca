#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "repflow/activation_store.hpp"
#include "repflow/blocks.hpp"
#include "repflow/error.hpp"
#include "repflow/metrics.hpp"
#include "repflow/parallel.hpp"
#include "repflow/params_io.hpp"
#include "repflow/probing.hpp"
#include "repflow/random.hpp"
#include "repflow/report.hpp"
#include "repflow/tasks.hpp"
#include "repflow/theory.hpp"

namespace repflow::cli {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_run_json(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    ordered_json config) {
  ordered_json j;
  j["tool"] = "repflow";
  j["version"] = kVersion;
  j["command"] = command;
  j["argv"] = args;
  j["threads"] = thread_count();
  j["config"] = std::move(config);
  j["created"] = utc_now();
  write_text(dir / "run.json", j.dump(2) + "\n");
}

ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

ordered_json to_json(const StabilityEstimate& e) {
  ordered_json j;
  j["mean_sq"] = num(e.mean_sq);
  j["trace"] = num(e.trace);
  j["total"] = num(e.total);
  j["std_error"] = num(e.std_error);
  j["trials"] = e.trials;
  return j;
}

ordered_json to_json(const TheoryConstants& k) {
  ordered_json j;
  j["alpha_T"] = num(k.alpha_t);
  j["beta_T"] = num(k.beta_t);
  j["gamma_T"] = num(k.gamma_t);
  j["alpha_M"] = num(k.alpha_m);
  j["beta_M"] = num(k.beta_m);
  j["rho"] = num(k.rho);
  j["c"] = num(k.c);
  j["b"] = num(k.b);
  j["h"] = num(k.h);
  j["z"] = num(k.z);
  j["sigma_sq"] = num(k.sigma_sq);
  j["n"] = k.n;
  j["d"] = k.d;
  j["gamma_T_ge_d"] = k.gamma_t_ge_d;
  return j;
}

ordered_json to_json(const DepthReport& r) {
  ordered_json j;
  j["path_energy"] = num(r.path_energy);
  j["depth_stability"] = num(r.depth_stability);
  j["poincare_constant"] = num(r.poincare_constant);
  j["deviation_energy"] = num(r.deviation_energy);
  j["ratio"] = num(r.ratio);
  j["bound_holds"] = r.bound_holds;
  j["lipschitz_products"] = r.lipschitz_products;
  return j;
}

std::vector<std::size_t> parse_grid(const std::string& text) {
  std::vector<std::size_t> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw CLI::ValidationError("--n-grid", "expected positive integers, got '" + item + "'");
    grid.push_back(static_cast<std::size_t>(v));
  }
  if (grid.empty()) throw CLI::ValidationError("--n-grid", "empty grid");
  return grid;
}

// Options shared by the theory subcommands.
struct TheorySetup {
  Eigen::Index d = 8;
  Eigen::Index m = 4;
  double sigma = 0.1;
  double rho = 0.9;
  double bias_std = 0.1;
  std::uint64_t seed = 0;
  std::string trans_params, mamba_params;

  void add_to(CLI::App* app) {
    app->add_option("--d", d, "Model dimension")->check(CLI::PositiveNumber);
    app->add_option("--m", m, "Mamba state dimension")->check(CLI::PositiveNumber);
    app->add_option("--sigma", sigma, "Input standard deviation")->check(CLI::PositiveNumber);
    app->add_option("--rho", rho, "Spectral norm of every A_t for drawn Mamba parameters")->check(CLI::Range(1e-6, 0.999999));
    app->add_option("--bias-std", bias_std, "Std of drawn Transformer biases")->check(CLI::NonNegativeNumber);
    app->add_option("--seed", seed, "Seed for parameter draws and Monte Carlo");
    app->add_option("--trans-params", trans_params, "Load Transformer parameters from a params directory");
    app->add_option("--mamba-params", mamba_params, "Load Mamba parameters from a params directory");
  }

  ordered_json config() const {
    ordered_json j;
    j["d"] = d;
    j["m"] = m;
    j["sigma"] = sigma;
    j["rho"] = rho;
    j["bias_std"] = bias_std;
    j["seed"] = seed;
    j["trans_params"] = trans_params;
    j["mamba_params"] = mamba_params;
    return j;
  }

  TransformerParams transformer() const {
    if (!trans_params.empty()) return read_transformer_params(trans_params);
    InitScheme scheme{InitScheme::Kind::xavier, 0.02, seed};
    TransformerShape shape;
    shape.d = d;
    shape.attention = AttentionMode::mean_field;
    shape.nonlinearity = Nonlinearity::linear_gain;
    shape.bias_std = bias_std;
    return init_transformer(scheme, shape);
  }

  MambaParams mamba(std::size_t steps) const {
    if (!mamba_params.empty()) return read_mamba_params(mamba_params);
    InitScheme scheme{InitScheme::Kind::xavier, 0.02, seed};
    MambaShape shape;
    shape.n = steps;
    shape.d = d;
    shape.m = m;
    shape.nonlinearity = Nonlinearity::linear_gain;
    return init_mamba_contractive(scheme, shape, rho);
  }
};

struct Options {
  std::size_t threads = 0;

  struct {
    std::string stack;
    std::string out;
    bool svg = false;
  } metrics;

  struct {
    std::string dataset;
    std::string out;
    double lr = 0.05;
    std::size_t epochs = 150;
    std::size_t seeds = 5;
    std::uint64_t seed_base = 0;
    double train_fraction = 0.8;
  } probe;

  struct {
    std::string arch = "transformer";
    std::string init = "xavier";
    double sigma_w = 0.02;
    std::size_t depth = 8;
    std::size_t n = 128;
    Eigen::Index d = 64;
    Eigen::Index state_dim = 16;
    std::size_t vocab = 1000;
    std::uint64_t seed = 0;
    std::string out;
  } synth_stack;

  struct {
    SyntheticProbeSpec spec;
    std::string out;
  } synth_probe;

  struct {
    TheorySetup setup;
    std::string n_grid = "1,2,4,8,16";
    std::size_t trials = 200000;
    std::string out;
    bool svg = false;
  } compare;

  struct {
    TheorySetup setup;
    std::size_t n = 1;
    std::size_t q_max = 64;
    std::string out;
  } threshold;

  struct {
    std::string stack;
    std::string out;
  } poincare;

  struct {
    std::size_t pairs = 0;
    std::size_t gold = 1;
    std::uint64_t seed = 0;
    std::size_t target_tokens = 0;
    std::string out;
  } kvpr;

  struct {
    std::string corpus;
    std::size_t docs = 0;
    std::size_t gold = 1;
    std::uint64_t seed = 0;
    std::optional<std::size_t> record;
    std::size_t target_tokens = 0;
    std::string out;
  } mdqa;
};

// Writes `text` to out_dir/name, or to the stream when no directory is given.
void emit(const std::string& out_dir, const std::string& name, const std::string& text, std::ostream& out) {
  if (out_dir.empty()) {
    out << text;
  } else {
    write_text(fs::path(out_dir) / name, text);
  }
}

int cmd_metrics(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path in(o.metrics.stack);
  const fs::path dir(o.metrics.out);
  ordered_json config;
  config["stack"] = o.metrics.stack;
  config["out"] = o.metrics.out;
  config["svg"] = o.metrics.svg;

  auto write_svgs = [&](const MetricReport& r, const fs::path& d) {
    if (!o.metrics.svg) return;
    write_text(d / "cka.svg", svg_heatmap(r.cka, "CKA between layers", 0.0, 1.0));
    std::vector<double> inter(r.inter_token.data(), r.inter_token.data() + r.inter_token.size());
    write_text(d / "inter_token.svg", svg_line_chart({{"inter-token similarity", inter}}, "Inter-token similarity",
                                                     "layer", "similarity"));
  };

  if (fs::exists(in / kDatasetIndexFile)) {
    const DatasetIndex index = read_dataset_index(in);
    std::vector<MetricReport> reports;
    for (const DatasetEntry& e : index.entries) {
      reports.push_back(compute_metrics(read_stack(index.root / e.path)));
      write_metric_report(reports.back(), dir / "samples" / e.path);
      write_svgs(reports.back(), dir / "samples" / e.path);
    }
    if (reports.empty()) throw Error("dataset index lists no samples");
    const MetricReport mean = mean_metric_report(reports);
    write_metric_report(mean, dir / "mean");
    write_svgs(mean, dir / "mean");
    config["mode"] = "dataset";
    config["samples"] = reports.size();
    out << "wrote metrics for " << reports.size() << " samples to " << dir.string() << "\n";
  } else {
    const MetricReport r = compute_metrics(read_stack(in));
    write_metric_report(r, dir);
    write_svgs(r, dir);
    config["mode"] = "single";
    out << "wrote metrics to " << dir.string() << "\n";
  }
  write_run_json(dir, "metrics", args, config);
  return 0;
}

int cmd_probe(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  ProbeConfig config;
  config.learning_rate = o.probe.lr;
  config.epochs = o.probe.epochs;
  config.train_fraction = o.probe.train_fraction;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.probe.seeds; ++i) seeds.push_back(o.probe.seed_base + i);
  const auto dataset = load_dataset(read_dataset_index(o.probe.dataset));
  const LayerSweepReport report = layer_sweep(dataset, config, seeds);
  if (o.probe.out.empty()) {
    out << layer_sweep_json(report);
    return 0;
  }
  write_layer_sweep(report, o.probe.out);
  ordered_json c;
  c["dataset"] = o.probe.dataset;
  c["lr"] = config.learning_rate;
  c["epochs"] = config.epochs;
  c["seeds"] = seeds;
  c["train_fraction"] = config.train_fraction;
  c["optimizer"] = {{"name", "adam"}, {"beta1", config.beta1}, {"beta2", config.beta2}, {"epsilon", config.epsilon}};
  write_run_json(o.probe.out, "probe", args, c);
  out << "peak layer " << report.peak_layer << ", delta " << format_double(report.delta_peak_minus_last) << "\n";
  return 0;
}

int cmd_synth_stack(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& s = o.synth_stack;
  RandomStackSpec spec;
  spec.arch = parse_architecture(s.arch);
  spec.scheme = InitScheme{parse_init_kind(s.init), s.sigma_w, s.seed};
  spec.depth = s.depth;
  spec.n = s.n;
  spec.d = s.d;
  spec.state_dim = s.state_dim;
  spec.vocab = s.vocab;
  const ActivationStack stack = random_init_stack(spec);
  write_stack(stack, s.out);
  ordered_json c;
  c["arch"] = s.arch;
  c["init"] = s.init;
  c["sigma_w"] = s.sigma_w;
  c["depth"] = s.depth;
  c["n"] = s.n;
  c["d"] = s.d;
  c["state_dim"] = s.state_dim;
  c["vocab"] = s.vocab;
  c["seed"] = s.seed;
  write_run_json(s.out, "synth stack", args, c);
  const Vector inter = inter_token_profile(stack);
  out << "inter-token similarity: first " << format_double(inter(0)) << ", last "
      << format_double(inter(inter.size() - 1)) << "\n";
  return 0;
}

int cmd_synth_probe(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& s = o.synth_probe;
  const auto data = synthetic_probe_dataset(s.spec);
  std::vector<DatasetEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = "sample-" + std::to_string(i);
    write_stack(data[i].first, fs::path(s.out) / name);
    entries.push_back({name, data[i].second});
  }
  write_dataset_index(s.out, entries);
  ordered_json c;
  c["layers"] = s.spec.layers;
  c["informative_layer"] = s.spec.informative_layer;
  c["samples"] = s.spec.samples;
  c["classes"] = s.spec.classes;
  c["tokens"] = s.spec.tokens;
  c["dims"] = s.spec.dims;
  c["noise"] = s.spec.noise;
  c["seed"] = s.spec.seed;
  write_run_json(s.out, "synth probe-dataset", args, c);
  out << "wrote " << data.size() << " samples to " << s.out << "\n";
  return 0;
}

int cmd_theory_compare(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& c = o.compare;
  const std::vector<std::size_t> grid = parse_grid(c.n_grid);
  const std::size_t n_max = *std::max_element(grid.begin(), grid.end());
  const TransformerParams tp = c.setup.transformer();
  const MambaParams mp = c.setup.mamba(n_max);
  const OrderingReport report = ordering_check(tp, mp, c.setup.d, c.setup.sigma, grid, c.trials, c.setup.seed);

  ordered_json j;
  j["convention"] = "token_sum";
  j["regime"] = "mean_field attention, phi(x) = x/2";
  j["sigma"] = c.setup.sigma;
  j["d"] = c.setup.d;
  j["trials"] = c.trials;
  j["seed"] = c.setup.seed;
  j["points"] = ordered_json::array();
  std::vector<double> trans_totals, mamba_totals;
  for (const OrderingPoint& p : report.points) {
    const GaussianInputSpec spec{p.n, c.setup.d, c.setup.sigma};
    const TheoryConstants k = stability_gap_constants(tp, mp.prefix(p.n), spec);
    ordered_json pt;
    pt["n"] = p.n;
    pt["transformer"] = {{"mc", to_json(p.trans_mc)}, {"closed_form", to_json(p.trans_closed)}};
    pt["mamba"] = {{"mc", to_json(p.mamba_mc)},
                   {"closed_form", to_json(p.mamba_closed)},
                   {"trace_bound", num(mamba_trace_bound(k))}};
    pt["constants"] = to_json(k);
    pt["sigma_max_sq"] = num(sigma_max(k));
    pt["q"] = num(p.q);
    pt["mc_gap"] = num(p.mc_gap);
    pt["mc_gap_std_error"] = num(p.mc_gap_std_error);
    pt["ordering_holds"] = p.ordering_holds;
    pt["q_sign_agrees"] = p.q_sign_agrees;
    j["points"].push_back(pt);
    trans_totals.push_back(p.trans_mc.total);
    mamba_totals.push_back(p.mamba_mc.total);
  }
  j["ordering_holds"] = report.all_hold;
  j["sign_agreement"] = report.all_agree;

  const std::string text = j.dump(2) + "\n";
  emit(c.out, "theory.json", text, out);
  if (!c.out.empty()) {
    if (c.svg)
      write_text(fs::path(c.out) / "theory.svg",
                 svg_line_chart({{"transformer", trans_totals}, {"mamba", mamba_totals}},
                                "E[St^2] by Monte Carlo over the n grid", "grid index", "E[St^2]"));
    ordered_json cfg = c.setup.config();
    cfg["n_grid"] = grid;
    cfg["trials"] = c.trials;
    cfg["svg"] = c.svg;
    write_run_json(c.out, "theory compare", args, cfg);
    out << "ordering holds at every grid point: " << (report.all_hold ? "yes" : "no") << "\n";
  }
  return 0;
}

int cmd_theory_threshold(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& t = o.threshold;
  if (t.q_max < 1) throw CLI::ValidationError("--q-max", "must be >= 1");
  const TransformerParams tp = t.setup.transformer();
  const MambaParams mp = t.setup.mamba(t.n);
  const GaussianInputSpec spec{t.n, t.setup.d, t.setup.sigma};
  const TheoryConstants k = stability_gap_constants(tp, mp, spec);
  ordered_json j;
  j["constants"] = to_json(k);
  const double smax = sigma_max(k);
  j["sigma_max_sq"] = num(smax);
  j["sigma_sq"] = num(k.sigma_sq);
  j["below_threshold"] = k.sigma_sq < smax;
  ordered_json table = ordered_json::array();
  for (std::size_t n = 1; n <= t.q_max; ++n)
    table.push_back({{"n", n}, {"q", num(q_polynomial(k, static_cast<double>(n)))}});
  j["q_table"] = table;
  emit(t.out, "theory.json", j.dump(2) + "\n", out);
  if (!t.out.empty()) {
    ordered_json cfg = t.setup.config();
    cfg["n"] = t.n;
    cfg["q_max"] = t.q_max;
    write_run_json(t.out, "theory threshold", args, cfg);
    out << "sigma_max^2 = " << format_double(smax) << "\n";
  }
  return 0;
}

int cmd_poincare(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const DepthReport r = poincare_check(read_stack(o.poincare.stack));
  emit(o.poincare.out, "depth.json", to_json(r).dump(2) + "\n", out);
  if (!o.poincare.out.empty()) {
    write_run_json(o.poincare.out, "poincare", args, {{"stack", o.poincare.stack}});
    out << "poincare bound " << (r.bound_holds ? "holds" : "VIOLATED") << "\n";
  }
  return r.bound_holds ? 0 : 2;
}

int cmd_gen_kvpr(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& k = o.kvpr;
  std::size_t pairs = k.pairs;
  if (k.target_tokens > 0) {
    pairs = items_for_length(k.target_tokens, 100000, [&](std::size_t p) {
      return whitespace_tokens(gen_kvpr(p, std::min(k.gold, p), k.seed).text);
    });
    if (pairs == 0) throw Error("gen kvpr: target length too short for a single pair");
  }
  if (pairs == 0) throw CLI::ValidationError("--pairs", "give --pairs or --target-tokens");
  const PromptInstance p = gen_kvpr(pairs, k.gold, k.seed);
  emit(k.out, "prompt.json", prompt_json(p), out);
  if (!k.out.empty()) {
    ordered_json c;
    c["pairs"] = pairs;
    c["gold"] = k.gold;
    c["seed"] = k.seed;
    c["target_tokens"] = k.target_tokens;
    c["context_tokens"] = whitespace_tokens(p.text);
    write_run_json(k.out, "gen kvpr", args, c);
  }
  return 0;
}

int cmd_gen_mdqa(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto& m = o.mdqa;
  const std::vector<MdqaRecord> records = ingest_mdqa_corpus(m.corpus);
  if (records.empty()) throw Error("gen mdqa: corpus has no records");
  std::size_t index = 0;
  if (m.record) {
    index = *m.record;
    if (index >= records.size()) throw Error("gen mdqa: record index out of range");
  } else {
    CounterRng rng(m.seed, stream_id("mdqa.record"));
    index = static_cast<std::size_t>(rng.below(records.size()));
  }
  const MdqaRecord& record = records[index];
  std::size_t docs = m.docs;
  if (m.target_tokens > 0) {
    docs = items_for_length(m.target_tokens, record.distractors.size() + 1, [&](std::size_t n) {
      return whitespace_tokens(build_mdqa(record, n, std::min(m.gold, n), m.seed).text);
    });
    if (docs == 0) throw Error("gen mdqa: target length too short for a single document");
  }
  if (docs == 0) throw CLI::ValidationError("--docs", "give --docs or --target-tokens");
  const PromptInstance p = build_mdqa(record, docs, m.gold, m.seed);
  emit(m.out, "prompt.json", prompt_json(p), out);
  if (!m.out.empty()) {
    ordered_json c;
    c["corpus"] = m.corpus;
    c["record"] = index;
    c["docs"] = docs;
    c["gold"] = m.gold;
    c["seed"] = m.seed;
    c["target_tokens"] = m.target_tokens;
    c["context_tokens"] = whitespace_tokens(p.text);
    write_run_json(m.out, "gen mdqa", args, c);
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"repflow: layerwise representation metrics, probes and stability theory checks"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (default: REPFLOW_THREADS or hardware)")
      ->check(CLI::PositiveNumber);

  auto* metrics = app.add_subcommand("metrics", "Similarity, CKA, smoothness and stability of a stack or dataset");
  metrics->add_option("stack", o.metrics.stack, "Stack directory or dataset directory")->required()->check(CLI::ExistingDirectory);
  metrics->add_option("--out", o.metrics.out, "Output directory")->required();
  metrics->add_flag("--svg", o.metrics.svg, "Also write SVG charts");

  auto* probe = app.add_subcommand("probe", "Layer-sweep linear probes on final-token features");
  probe->add_option("dataset", o.probe.dataset, "Dataset directory or samples.json")->required()->check(CLI::ExistingPath);
  probe->add_option("--lr", o.probe.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  probe->add_option("--epochs", o.probe.epochs, "Full-batch epochs")->check(CLI::PositiveNumber);
  probe->add_option("--seeds", o.probe.seeds, "Number of split seeds")->check(CLI::PositiveNumber);
  probe->add_option("--seed-base", o.probe.seed_base, "First split seed");
  probe->add_option("--train-fraction", o.probe.train_fraction, "Training share of each split")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  probe->add_option("--out", o.probe.out, "Output directory (default: print probe.json)");

  auto* synth = app.add_subcommand("synth", "Synthetic inputs");
  synth->require_subcommand(1);
  auto* synth_stack = synth->add_subcommand("stack", "Activation stack of a randomly initialized model");
  {
    auto& s = o.synth_stack;
    synth_stack->add_option("--arch", s.arch, "transformer or mamba")->check(CLI::IsMember({"transformer", "mamba"}));
    synth_stack->add_option("--init", s.init, "gaussian, xavier or he")->check(CLI::IsMember({"gaussian", "xavier", "he"}));
    synth_stack->add_option("--sigma-w", s.sigma_w, "Std for gaussian init")->check(CLI::PositiveNumber);
    synth_stack->add_option("--depth", s.depth, "Number of blocks")->check(CLI::PositiveNumber);
    synth_stack->add_option("--n", s.n, "Tokens")->check(CLI::PositiveNumber);
    synth_stack->add_option("--d", s.d, "Model dimension")->check(CLI::PositiveNumber);
    synth_stack->add_option("--state-dim", s.state_dim, "Mamba state dimension")->check(CLI::PositiveNumber);
    synth_stack->add_option("--vocab", s.vocab, "Embedding table size")->check(CLI::PositiveNumber);
    synth_stack->add_option("--seed", s.seed, "Seed");
    synth_stack->add_option("--out", s.out, "Output stack directory")->required();
  }
  auto* synth_probe = synth->add_subcommand("probe-dataset", "Labelled dataset with one informative layer");
  {
    auto& s = o.synth_probe;
    synth_probe->add_option("--layers", s.spec.layers, "Snapshots per stack")->check(CLI::Range(2, 1 << 20));
    synth_probe->add_option("--informative-layer", s.spec.informative_layer, "Layer holding the label");
    synth_probe->add_option("--samples", s.spec.samples, "Samples")->check(CLI::PositiveNumber);
    synth_probe->add_option("--classes", s.spec.classes, "Classes")->check(CLI::Range(2, 1 << 20));
    synth_probe->add_option("--tokens", s.spec.tokens, "Tokens")->check(CLI::PositiveNumber);
    synth_probe->add_option("--dims", s.spec.dims, "Dims")->check(CLI::PositiveNumber);
    synth_probe->add_option("--noise", s.spec.noise, "Noise std")->check(CLI::NonNegativeNumber);
    synth_probe->add_option("--seed", s.spec.seed, "Seed");
    synth_probe->add_option("--out", s.out, "Output dataset directory")->required();
  }

  auto* theory = app.add_subcommand("theory", "Stability theory checks");
  theory->require_subcommand(1);
  auto* compare = theory->add_subcommand("compare", "Closed forms vs Monte Carlo, ordering over an n grid");
  o.compare.setup.add_to(compare);
  compare->add_option("--n-grid", o.compare.n_grid, "Comma-separated sequence lengths");
  compare->add_option("--trials", o.compare.trials, "Monte Carlo trials")->check(CLI::Range(1000ul, 1ul << 40));
  compare->add_option("--out", o.compare.out, "Output directory (default: print theory.json)");
  compare->add_flag("--svg", o.compare.svg, "Also write an SVG chart");
  auto* threshold = theory->add_subcommand("threshold", "Gap constants, sigma_max^2 and the Q(n) table");
  o.threshold.setup.add_to(threshold);
  threshold->add_option("--n", o.threshold.n, "Sequence length for the constants")->check(CLI::PositiveNumber);
  threshold->add_option("--q-max", o.threshold.q_max, "Largest n in the Q table")->check(CLI::PositiveNumber);
  threshold->add_option("--out", o.threshold.out, "Output directory (default: print theory.json)");

  auto* poincare = app.add_subcommand("poincare", "Path energy and the chain Poincare bound of a stack");
  poincare->add_option("stack", o.poincare.stack, "Stack directory")->required()->check(CLI::ExistingDirectory);
  poincare->add_option("--out", o.poincare.out, "Output directory (default: print depth.json)");

  auto* gen = app.add_subcommand("gen", "Prompt generators");
  gen->require_subcommand(1);
  auto* kvpr = gen->add_subcommand("kvpr", "Key-value retrieval prompt");
  kvpr->add_option("--pairs", o.kvpr.pairs, "Number of pairs")->check(CLI::PositiveNumber);
  kvpr->add_option("--gold", o.kvpr.gold, "1-based gold position")->check(CLI::PositiveNumber);
  kvpr->add_option("--seed", o.kvpr.seed, "Seed");
  kvpr->add_option("--target-tokens", o.kvpr.target_tokens, "Pick the most pairs fitting this many whitespace tokens");
  kvpr->add_option("--out", o.kvpr.out, "Output directory (default: print prompt.json)");
  auto* mdqa = gen->add_subcommand("mdqa", "Multi-document QA prompt");
  mdqa->add_option("--corpus", o.mdqa.corpus, "JSON-lines corpus")->required()->check(CLI::ExistingFile);
  mdqa->add_option("--docs", o.mdqa.docs, "Number of documents")->check(CLI::PositiveNumber);
  mdqa->add_option("--gold", o.mdqa.gold, "1-based gold position")->check(CLI::PositiveNumber);
  mdqa->add_option("--seed", o.mdqa.seed, "Seed");
  mdqa->add_option("--record", o.mdqa.record, "Record index (default: chosen by seed)");
  mdqa->add_option("--target-tokens", o.mdqa.target_tokens, "Pick the most documents fitting this many whitespace tokens");
  mdqa->add_option("--out", o.mdqa.out, "Output directory (default: print prompt.json)");

  try {
    std::vector<std::string> rest(args.rbegin(), args.rend());
    if (!rest.empty()) rest.pop_back();
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (o.threads > 0) set_thread_limit(o.threads);
    if (*metrics) return cmd_metrics(o, args, out);
    if (*probe) return cmd_probe(o, args, out);
    if (*synth_stack) return cmd_synth_stack(o, args, out);
    if (*synth_probe) return cmd_synth_probe(o, args, out);
    if (*compare) return cmd_theory_compare(o, args, out);
    if (*threshold) return cmd_theory_threshold(o, args, out);
    if (*poincare) return cmd_poincare(o, args, out);
    if (*kvpr) return cmd_gen_kvpr(o, args, out);
    if (*mdqa) return cmd_gen_mdqa(o, args, out);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace repflow::cli
