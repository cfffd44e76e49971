#include "upool/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "upool/report.hpp"

namespace upool {

namespace fs = std::filesystem;
using report::Json;

namespace {

struct DataOptions {
  std::string dataset;
  std::string input;
  std::string scale = "logit";
  std::string continuity = "reject";
};

struct CommonOptions {
  DataOptions data;
  std::uint64_t seed = 0;
  int threads = 0;
  double level = 0.95;
  std::string out_dir = ".";
  std::string formats = "json,csv,svg";
  std::string config_file;  // consumed before parsing
};

struct PosteriorOptions {
  std::string prior = "invbeta";
  double prior_alpha = 11.01;
  double prior_beta = 0.001;
  std::string partition_prior = "uniform";
  GridSpec grid;
};

struct PoolOptions {
  PosteriorOptions post;
  int draws = 10000;
  std::string overall = "mean";
  std::string covariates;
  std::size_t top = 10;
};

struct PpcOptions {
  PosteriorOptions post;
  std::uint64_t replicates = 20000;
  std::string delta2 = "pool-all";
};

struct DpmOptions {
  std::string m_values;
  int iterations = DpmConfig{}.iterations;
  int burn_in = DpmConfig{}.burn_in;
};

struct RjOptions {
  RjConfig config;
  bool chain = false;
  std::size_t top = 10;
};

// Files are staged in memory and written together at the end.
class Outputs {
 public:
  void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

  void commit(const fs::path &dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
      fail(ErrorKind::ResourceLimit, "cannot create output directory " + dir.string());
    std::vector<fs::path> staged;
    auto cleanup = [&] {
      for (const auto &p : staged) fs::remove(p, ec);
    };
    for (const auto &[name, content] : files_) {
      const fs::path tmp = dir / (name + ".partial");
      std::ofstream f(tmp, std::ios::binary);
      f << content;
      f.close();
      staged.push_back(tmp);
      if (!f) {
        cleanup();
        fail(ErrorKind::ResourceLimit, "cannot write " + tmp.string());
      }
    }
    for (std::size_t k = 0; k < files_.size(); ++k) {
      fs::rename(staged[k], dir / files_[k].first, ec);
      if (ec) {
        cleanup();
        fail(ErrorKind::ResourceLimit, "cannot write " + (dir / files_[k].first).string());
      }
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Formats {
  bool json = false, csv = false, svg = false;
};

Formats parse_formats(const std::string &text) {
  Formats f;
  for (const auto &item : split_list(text)) {
    if (item == "json") f.json = true;
    else if (item == "csv") f.csv = true;
    else if (item == "svg") f.svg = true;
    else fail(ErrorKind::Validation, "unknown format '" + item + "' (json|csv|svg)");
  }
  if (!f.json && !f.csv && !f.svg) fail(ErrorKind::Validation, "no output format selected");
  return f;
}

ContinuityPolicy parse_continuity(const std::string &text) {
  if (text == "reject") return ContinuityPolicy::Reject;
  if (text == "haldane") return ContinuityPolicy::Haldane;
  fail(ErrorKind::Validation, "unknown continuity policy '" + text + "' (reject|haldane)");
}

StudySet load_data(const DataOptions &o, ContinuityPolicy policy) {
  const EffectScale scale = parse_scale(o.scale);
  if (o.dataset.empty() == o.input.empty())
    fail(ErrorKind::Validation, "give exactly one of --dataset and --input");
  if (!o.dataset.empty()) return bundled_dataset(o.dataset, scale, policy);
  std::ifstream in(o.input);
  if (!in) fail(ErrorKind::Validation, "cannot open input file " + o.input);
  return load_studies(in, scale, policy);
}

VariancePrior make_prior(const PosteriorOptions &o) {
  if (o.prior == "invbeta") return VariancePrior::inv_beta();
  if (o.prior == "invgamma") return VariancePrior::inv_gamma(o.prior_alpha, o.prior_beta);
  fail(ErrorKind::Validation, "unknown prior '" + o.prior + "' (invbeta|invgamma)");
}

PartitionPrior make_partition_prior(const std::string &text) {
  if (text == "uniform") return PartitionPrior::Uniform;
  if (text == "size-biased") return PartitionPrior::SizeBiased;
  fail(ErrorKind::Validation, "unknown partition prior '" + text + "' (uniform|size-biased)");
}

int resolve_threads(int requested) {
  if (requested < 0) fail(ErrorKind::Validation, "--threads must be >= 0");
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Thread count is left out: results do not depend on it.
Json common_config(const CommonOptions &c) {
  Json j;
  j["dataset"] = c.data.dataset.empty() ? Json(nullptr) : Json(c.data.dataset);
  j["input"] = c.data.input.empty() ? Json(nullptr) : Json(c.data.input);
  j["scale"] = scale_name(parse_scale(c.data.scale));
  j["continuity"] = c.data.continuity;
  j["seed"] = c.seed;
  j["level"] = c.level;
  return j;
}

void posterior_config(Json &j, const PosteriorOptions &o) {
  j["prior"] = o.prior;
  if (o.prior == "invgamma") j["prior_params"] = {{"alpha", o.prior_alpha}, {"beta", o.prior_beta}};
  j["partition_prior"] = o.partition_prior;
  j["grid"] = {{"delta2_min", o.grid.delta2_min},
               {"delta2_max", o.grid.delta2_max},
               {"points", o.grid.points},
               {"keep_mass", o.grid.keep_mass},
               {"log_jacobian", o.grid.log_jacobian}};
}

void add_common(CLI::App *cmd, CommonOptions &c) {
  auto *ds = cmd->add_option("--dataset", c.data.dataset, "bundled dataset name (see `datasets`)");
  auto *in = cmd->add_option("--input", c.data.input, "CSV with header study_id,label,events,trials");
  ds->excludes(in);
  cmd->add_option("--scale", c.data.scale, "logit | proportion")->capture_default_str();
  cmd->add_option("--continuity", c.data.continuity, "reject | haldane (0 or n events)")
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "random seed")->required();
  cmd->add_option("--threads", c.threads, "worker threads (0: all cores)")->capture_default_str();
  cmd->add_option("--level", c.level, "credible level")->capture_default_str();
  cmd->add_option("--out", c.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--formats", c.formats, "subset of json,csv,svg")->capture_default_str();
  cmd->add_option("--config", c.config_file, "key=value file; command-line flags take precedence");
}

void add_posterior(CLI::App *cmd, PosteriorOptions &o) {
  cmd->add_option("--prior", o.prior, "delta^2 prior: invbeta | invgamma")->capture_default_str();
  cmd->add_option("--prior-alpha", o.prior_alpha, "InvGamma shape")->capture_default_str();
  cmd->add_option("--prior-beta", o.prior_beta, "InvGamma scale")->capture_default_str();
  cmd->add_option("--partition-prior", o.partition_prior, "uniform | size-biased")->capture_default_str();
  cmd->add_option("--grid-min", o.grid.delta2_min, "smallest delta^2")->capture_default_str();
  cmd->add_option("--grid-max", o.grid.delta2_max, "largest delta^2")->capture_default_str();
  cmd->add_option("--grid-points", o.grid.points, "log-spaced delta^2 points")->capture_default_str();
  cmd->add_option("--keep-mass", o.grid.keep_mass, "posterior mass retained for sampling")
      ->capture_default_str();
  cmd->add_flag("--log-jacobian", o.grid.log_jacobian, "weight grid points by delta^2");
}

JointPosterior fit_posterior(const StudySet &set, const PosteriorOptions &o, int threads) {
  o.grid.validate();
  return compute_joint_posterior(set, o.grid, make_prior(o), make_partition_prior(o.partition_prior),
                                 threads);
}

std::string dump(const Json &j) { return j.dump(2) + "\n"; }

std::string svg_of(const SimilarityMatrix &sm) {
  std::ostringstream s;
  render_similarity(s, sm, RenderFormat::Svg);
  return s.str();
}

void print_table(std::ostream &out, const StudySet &set, const std::vector<StudySummary> &rows,
                 double level) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%6s  %-24s %8s  %s\n", "id", "label", "mean",
                (std::to_string(static_cast<int>(level * 100 + 0.5)) + "% interval").c_str());
  out << buf;
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%6d  %-24.24s %8.3f  (%.3f, %.3f)\n", r.id,
                  set.studies[set.index_of(r.id)].label.c_str(), r.mean, r.lower, r.upper);
    out << buf;
  }
}

int cmd_pool(const CommonOptions &c, const PoolOptions &o, std::ostream &out) {
  const Formats formats = parse_formats(c.formats);
  const int threads = resolve_threads(c.threads);
  const auto set = load_data(c.data, parse_continuity(c.data.continuity));
  OverallEffectMode mode;
  if (o.overall == "mean") mode = OverallEffectMode::Mean;
  else if (o.overall == "new-study") mode = OverallEffectMode::NewStudy;
  else fail(ErrorKind::Validation, "unknown --overall '" + o.overall + "' (mean|new-study)");
  std::optional<CovariateDesign> design;
  if (!o.covariates.empty()) {
    std::ifstream in(o.covariates);
    if (!in) fail(ErrorKind::Validation, "cannot open covariate file " + o.covariates);
    design = load_covariates(in, set);
  }

  const auto jp = fit_posterior(set, o.post, threads);
  const auto draws = sample_mu(jp, o.draws, c.seed, threads);
  const auto rows = summarize(draws, jp.ids, c.level);
  const auto sim = similarity_from_grid(jp);
  const auto overall = overall_effect_interval(jp, c.level, 100000, c.seed, mode);

  Json config = common_config(c);
  posterior_config(config, o.post);
  config["draws"] = o.draws;
  config["overall"] = o.overall;
  config["covariates"] = o.covariates.empty() ? Json(nullptr) : Json(o.covariates);

  Json j = report::header("pool");
  j["config"] = std::move(config);
  j["studies"] = report::studies(set);
  j["posterior"] = report::joint_posterior(jp, o.top);
  j["summaries"] = report::summaries(rows);
  j["overall_effect"] = {{"mode", o.overall},
                         {"mean", overall.mean},
                         {"lower", overall.lower},
                         {"upper", overall.upper}};
  j["similarity"] = report::similarity(sim);
  if (design) {
    const auto cd = sample_mu_beta(jp, set, *design, o.draws, c.seed, threads);
    j["covariates"] = report::covariates(*design, cd, c.level);
  }

  Outputs files;
  if (formats.json) files.add("report.json", dump(j));
  if (formats.csv) files.add("summary.csv", report::summary_csv(set, rows));
  if (formats.svg) files.add("similarity.svg", svg_of(sim));
  files.commit(c.out_dir);

  print_table(out, set, rows, c.level);
  char buf[200];
  std::snprintf(buf, sizeof buf, "pool-all probability %.3g; overall effect %.3f (%.3f, %.3f)\n",
                jp.pool_all_probability(), overall.mean, overall.lower, overall.upper);
  out << buf;
  return 0;
}

int cmd_ppc(const CommonOptions &c, const PpcOptions &o, std::ostream &out) {
  const Formats formats = parse_formats(c.formats);
  const int threads = resolve_threads(c.threads);
  const auto set = load_data(c.data, parse_continuity(c.data.continuity));
  PpcDelta2 mode;
  if (o.delta2 == "pool-all") mode = PpcDelta2::PoolAll;
  else if (o.delta2 == "marginal") mode = PpcDelta2::Marginal;
  else fail(ErrorKind::Validation, "unknown --delta2 '" + o.delta2 + "' (pool-all|marginal)");

  const auto jp = fit_posterior(set, o.post, threads);
  const auto r = posterior_predictive_pvalue(jp, o.replicates, c.seed, threads, mode);

  Json config = common_config(c);
  posterior_config(config, o.post);
  config["replicates"] = o.replicates;
  config["delta2"] = o.delta2;
  Json j = report::header("ppc");
  j["config"] = std::move(config);
  j["studies"] = report::studies(set);
  j["ppc"] = report::ppc(r);

  Outputs files;
  if (formats.json) files.add("report.json", dump(j));
  if (formats.csv)
    files.add("summary.csv", "p_value,exceedances,replicates\n" + report::number(r.p_value) + "," +
                                 std::to_string(r.exceedances) + "," + std::to_string(r.replicates) + "\n");
  files.commit(c.out_dir);

  out << "posterior predictive p-value: " << r.display() << '\n';
  if (r.is_upper_bound())
    out << "no replicate reached the observed discrepancy; the p-value is below 1/" << r.replicates
        << '\n';
  return 0;
}

int cmd_dpm(const CommonOptions &c, const DpmOptions &o, std::ostream &out) {
  const Formats formats = parse_formats(c.formats);
  const int threads = resolve_threads(c.threads);
  const auto set = load_data(c.data, parse_continuity(c.data.continuity));
  DpmConfig config;
  config.iterations = o.iterations;
  config.burn_in = o.burn_in;
  config.seed = c.seed;
  for (const auto &item : split_list(o.m_values)) {
    std::size_t used = 0;
    double m = 0.0;
    try {
      m = std::stod(item, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    if (used != item.size()) fail(ErrorKind::Validation, "cannot parse M value '" + item + "'");
    config.m_values.push_back(m);
  }
  if (config.m_values.empty()) config.m_values = DpmConfig::default_m_values(static_cast<int>(set.size()));
  config.validate();

  const auto base = mle_base_measure(set);
  const auto fits = run_dpm(set, config, threads);

  Json cj = common_config(c);
  cj["m_values"] = config.m_values;
  cj["iterations"] = config.iterations;
  cj["burn_in"] = config.burn_in;
  Json j = report::header("dpm");
  j["config"] = std::move(cj);
  j["studies"] = report::studies(set);
  j["base_measure"] = {{"eta", base.eta}, {"tau2", base.tau2}};
  Json per_m = Json::array();
  for (const auto &f : fits) per_m.push_back(report::dpm(f));
  j["fits"] = std::move(per_m);

  Outputs files;
  if (formats.json) files.add("report.json", dump(j));
  if (formats.csv) files.add("summary.csv", report::dpm_summary_csv(set, fits));
  // the report carries every M; the heatmap shows the first
  if (formats.svg) files.add("similarity.svg", svg_of(fits.front().similarity));
  files.commit(c.out_dir);

  char buf[160];
  std::snprintf(buf, sizeof buf, "base measure eta %.4f, tau2 %.4g\n", base.eta, base.tau2);
  out << buf;
  for (const auto &f : fits) {
    std::snprintf(buf, sizeof buf, "M = %g (mean clusters %.2f)\n", f.M, f.mean_clusters);
    out << buf;
    print_table(out, set, f.studies, c.level);
  }
  return 0;
}

int cmd_rjmcmc(const CommonOptions &c, RjOptions o, std::ostream &out) {
  const Formats formats = parse_formats(c.formats);
  // the binomial model uses the counts directly, so boundary counts are fine
  const auto set = load_data(c.data, ContinuityPolicy::Haldane);
  o.config.seed = c.seed;
  o.config.keep_chain = o.chain;
  const auto fit = run_rj_chain(set, o.config, c.level);

  Json cj = common_config(c);
  cj["iterations"] = o.config.iterations;
  cj["burn_in"] = o.config.burn_in;
  cj["q_range"] = {o.config.q_min, o.config.q_max};
  cj["birth_prob"] = o.config.birth_prob;
  cj["alpha_step"] = o.config.alpha_step;
  cj["q_step"] = o.config.q_step;
  cj["adapt"] = o.config.adapt;
  cj["chain"] = o.chain;
  Json j = report::header("rjmcmc");
  j["config"] = std::move(cj);
  j["studies"] = report::studies(set);
  j["rjmcmc"] = report::rjmcmc(fit, o.top);

  Outputs files;
  if (formats.json) files.add("report.json", dump(j));
  if (formats.csv) files.add("summary.csv", report::summary_csv(set, fit.studies));
  if (formats.svg) files.add("similarity.svg", svg_of(fit.similarity));
  if (o.chain) files.add("chain.csv", report::rj_chain_csv(set, fit));
  files.commit(c.out_dir);

  print_table(out, set, fit.studies, c.level);
  char buf[200];
  std::snprintf(buf, sizeof buf, "acceptance: alpha %.2f, q %.2f, split %.3f, merge %.3f\n",
                fit.alpha_acceptance, fit.q_acceptance, fit.split_acceptance, fit.merge_acceptance);
  out << buf;
  return 0;
}

int cmd_datasets(const std::string &export_name, const std::string &output, std::ostream &out) {
  if (!export_name.empty()) {
    const auto set = bundled_dataset(export_name, EffectScale::Proportion, ContinuityPolicy::Haldane);
    if (output.empty()) {
      write_studies(out, set);
      return 0;
    }
    std::ostringstream s;
    write_studies(s, set);
    const fs::path p(output);
    Outputs files;
    files.add(p.filename().string(), s.str());
    files.commit(p.has_parent_path() ? p.parent_path() : fs::path("."));
    return 0;
  }
  for (const auto &info : bundled_datasets()) {
    const auto set = bundled_dataset(info.name, EffectScale::Proportion, ContinuityPolicy::Haldane);
    out << info.name << " (L = " << set.size() << "): " << info.description << '\n';
    out << "  counts:";
    for (const auto &s : set.studies) out << ' ' << s.id << ':' << s.events << '/' << s.trials;
    out << "\n  source: " << info.citation << '\n';
  }
  return 0;
}

// Expands `--config FILE` into ordinary flags placed right after the
// subcommand name, so anything given explicitly later overrides it.
std::vector<std::string> splice_config(std::vector<std::string> args) {
  auto sub = std::find_if(args.begin(), args.end(), [](const std::string &a) { return !a.starts_with("-"); });
  if (sub == args.end()) return args;
  std::string path;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
    else if (args[k].starts_with("--config=")) path = args[k].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Validation, "cannot open config file " + path);
  CLI::ConfigINI ini;
  std::vector<std::string> flags;
  for (const auto &item : ini.from_config(in)) {
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == *sub)) continue;
    if (item.name == "config" || item.name.empty() || item.name == "++" || item.name == "--") continue;
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    flags.push_back("--" + name + "=" + value);
  }
  args.insert(sub + 1, flags.begin(), flags.end());
  return args;
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ResourceLimit:
      return 3;
    case ErrorKind::Numeric:
      return 4;
    default:
      return 2;
  }
}

int run_cli(const std::vector<std::string> &raw_args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Bayesian uncertain pooling, Dirichlet process mixtures and reversible-jump MCMC "
               "for meta-analysis of proportions",
               "upool"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(report::tool_version()));
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CommonOptions common;
  PoolOptions pool_opts;
  PpcOptions ppc_opts;
  DpmOptions dpm_opts;
  RjOptions rj_opts;
  std::string export_name, export_output;

  auto *pool = app.add_subcommand("pool", "partition-averaged posterior of the study effects");
  add_common(pool, common);
  add_posterior(pool, pool_opts.post);
  pool->add_option("--draws", pool_opts.draws, "posterior draws B")->capture_default_str();
  pool->add_option("--overall", pool_opts.overall, "overall effect: mean | new-study")->capture_default_str();
  pool->add_option("--covariates", pool_opts.covariates, "CSV study_id,<name>,... for a regression offset");
  pool->add_option("--top", pool_opts.top, "partitions listed in the report")->capture_default_str();

  auto *ppc = app.add_subcommand("ppc", "posterior predictive check of the pool-all model");
  add_common(ppc, common);
  add_posterior(ppc, ppc_opts.post);
  ppc->add_option("--replicates", ppc_opts.replicates, "replicated data sets")->capture_default_str();
  ppc->add_option("--delta2", ppc_opts.delta2, "delta^2 source: pool-all | marginal")->capture_default_str();

  auto *dpm = app.add_subcommand("dpm", "Dirichlet process mixture, one chain per M");
  add_common(dpm, common);
  dpm->add_option("--m", dpm_opts.m_values, "comma-separated precision values (default: a ladder in L)");
  dpm->add_option("--iterations", dpm_opts.iterations, "sweeps per chain")->capture_default_str();
  dpm->add_option("--burn-in", dpm_opts.burn_in, "discarded sweeps")->capture_default_str();

  auto *rj = app.add_subcommand("rjmcmc", "binomial-beta partition model by reversible jump");
  add_common(rj, common);
  rj->add_option("--iterations", rj_opts.config.iterations, "sweeps")->capture_default_str();
  rj->add_option("--burn-in", rj_opts.config.burn_in, "discarded sweeps")->capture_default_str();
  rj->add_option("--q-min", rj_opts.config.q_min, "lower end of the log-uniform q prior")->capture_default_str();
  rj->add_option("--q-max", rj_opts.config.q_max, "upper end of the log-uniform q prior")->capture_default_str();
  rj->add_option("--birth-prob", rj_opts.config.birth_prob, "split probability")->capture_default_str();
  rj->add_option("--alpha-step", rj_opts.config.alpha_step, "initial logit(alpha) step")->capture_default_str();
  rj->add_option("--q-step", rj_opts.config.q_step, "initial log(q) step")->capture_default_str();
  rj->add_flag("!--no-adapt", rj_opts.config.adapt, "keep the initial steps");
  rj->add_flag("--chain", rj_opts.chain, "also write chain.csv");
  rj->add_option("--top", rj_opts.top, "partitions listed in the report")->capture_default_str();

  auto *datasets = app.add_subcommand("datasets", "list bundled datasets or export one as CSV");
  datasets->add_option("--export", export_name, "dataset to write as CSV");
  datasets->add_option("--output", export_output, "file for --export (default: standard output)");

  try {
    auto args = splice_config(raw_args);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(std::move(args));
    } catch (const CLI::ParseError &e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : 2;
    }
    if (pool->parsed()) return cmd_pool(common, pool_opts, out);
    if (ppc->parsed()) return cmd_ppc(common, ppc_opts, out);
    if (dpm->parsed()) return cmd_dpm(common, dpm_opts, out);
    if (rj->parsed()) return cmd_rjmcmc(common, rj_opts, out);
    return cmd_datasets(export_name, export_output, out);
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::bad_alloc &) {
    err << "error: out of memory\n";
    return 3;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace upool
