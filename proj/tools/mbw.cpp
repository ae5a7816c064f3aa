// Command-line front end: single-test fits, truncation studies, hierarchical
// prior extraction, method agreement and synthetic cohorts.
//
// Exit codes: 0 success, 1 hard error, 2 results written but some R-hat > 1.25.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mbw/agreement.hpp"
#include "mbw/hierarchy.hpp"
#include "mbw/inference.hpp"
#include "mbw/io.hpp"
#include "mbw/synthgen.hpp"
#include "mbw/truncation.hpp"

namespace {

using namespace mbw;

constexpr int kExitOk = 0, kExitError = 1, kExitNotConverged = 2;

/// Summary tables carry eight significant digits.
std::string num(double x) {
  if (std::isnan(x)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", x);
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::string str() const {
    std::string out(io::kSchemaLine);
    out += "\n";
    append(out, header_);
    for (const auto& r : rows_) append(out, r);
    return out;
  }

 private:
  static void append(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    io::detail::write_file(path, content);
  }
}

std::string in_dir(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

struct SamplerFlags {
  int chains = 4, warmup = 1000, samples = 1000;
  std::uint64_t seed = 1;

  void add_to(CLI::App* app) {
    app->add_option("--chains", chains, "Number of chains")->check(CLI::PositiveNumber);
    app->add_option("--warmup", warmup, "Warmup iterations per chain")->check(CLI::NonNegativeNumber);
    app->add_option("--samples", samples, "Post-warmup draws per chain")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Random seed");
  }
  SamplerConfig config(SamplerConfig cfg = {}) const {
    cfg.n_chains = chains;
    cfg.n_warmup = warmup;
    cfg.n_samples = samples;
    cfg.seed = seed;
    return cfg;
  }
};

/// "diffuse", "informative:PATH", or "record" (mu/Sigma stored with the test).
std::optional<PriorSpec> parse_prior_flag(const std::string& flag) {
  if (flag == "diffuse") return PriorSpec::diffuse();
  if (flag == "record") return std::nullopt;
  const std::string prefix = "informative:";
  if (flag.rfind(prefix, 0) == 0) return io::read_prior(flag.substr(prefix.size()));
  throw CLI::ValidationError("--prior", "expected diffuse, informative:PATH or record");
}

PriorSpec prior_for(const std::optional<PriorSpec>& flag, const io::TestRecord& r) {
  if (flag) return *flag;
  if (!r.mu || !r.sigma)
    throw DataError(DataErrorKind::MissingField, "--prior record needs mu and Sigma", r.test_id);
  return PriorSpec::informative(*r.mu, *r.sigma);
}

/// Parses "1/10" or "0.1".
double parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return std::stod(s);
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("threshold", "cannot parse '" + s + "'");
  }
}

std::vector<double> parse_fraction_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : io::detail::split(s)) out.push_back(parse_fraction(part));
  return out;
}

// fit ----------------------------------------------------------------------

struct FitArgs {
  std::string input, prior = "diffuse", out, ppc_out, test_id, variant = "derivative";
  std::string threshold = "1/40", truncate;
  std::size_t ppc = 0;
  SamplerFlags sampler;
};

int run_fit(const FitArgs& a) {
  const auto prior_flag = parse_prior_flag(a.prior);
  const double threshold = parse_fraction(a.threshold);
  io::Cohort cohort = io::read_tests(a.input);
  if (!a.test_id.empty()) {
    std::erase_if(cohort, [&](const auto& r) { return r.test_id != a.test_id; });
    if (cohort.empty()) throw Error("no test with id " + a.test_id);
  }
  const SamplerConfig cfg = a.sampler.config();
  InferenceOptions opt;
  opt.threshold = threshold;
  const PredictiveVariant variant =
      a.variant == "cumulative" ? PredictiveVariant::Cumulative : PredictiveVariant::Derivative;

  Table summary({"test_id", "breaths", "quantity", "mean", "sd", "q2.5", "median", "q97.5",
                 "rhat", "ess"});
  Table ppc({"test_id", "dataset", "chain", "iteration", "k", "gas", "cevgm", "cevtg",
             "violations"});
  bool converged = true;
  for (const auto& r : cohort) {
    BreathSeries series = r.series;
    if (!a.truncate.empty()) {
      auto t = truncate_at_threshold(series, parse_fraction(a.truncate));
      if (!t) throw DataError(DataErrorKind::TooShort, "fewer than 3 breaths after truncation",
                              r.test_id);
      series = *t;
    }
    const PosteriorSamples s = sample_posterior(series, prior_for(prior_flag, r), cfg, opt);
    for (const auto& w : s.warnings) std::cerr << "warning: test " << r.test_id << ": " << w << "\n";
    const SummaryTable t = summarize(s);
    converged = converged && t.converged();
    for (const auto& row : t.rows) {
      const auto& st = row.stats;
      summary.add({r.test_id, std::to_string(series.size()), row.name, num(st.mean), num(st.sd),
                   num(st.quantiles[0]), num(st.median), num(st.quantiles[2]),
                   st.rhat_defined ? num(st.rhat) : "NA", num(st.ess)});
    }
    if (a.ppc > 0) {
      const auto sets = posterior_predictive(s, a.ppc, variant, a.sampler.seed);
      for (std::size_t d = 0; d < sets.size(); ++d) {
        const auto& ds = sets[d];
        for (std::size_t k = 0; k < ds.series.gas.size(); ++k)
          ppc.add({r.test_id, std::to_string(d), std::to_string(ds.chain),
                   std::to_string(ds.iteration), std::to_string(k), num(ds.series.gas[k]),
                   num(ds.series.cevgm[k]), num(ds.series.cevtg[k]),
                   std::to_string(ds.violations)});
      }
    }
  }
  emit(a.out, summary.str());
  if (a.ppc > 0) emit(a.ppc_out, ppc.str());
  if (!converged) {
    std::cerr << "warning: R-hat above " << diag::kBatchRhatThreshold << "\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

// truncate-eval -------------------------------------------------------------

struct TruncArgs {
  std::string input, prior = "diffuse", out_dir = ".", thresholds = "1/3,1/4,1/5,1/10,1/20,1/30";
  SamplerFlags sampler;
};

int run_truncate(const TruncArgs& a) {
  const auto prior = parse_prior_flag(a.prior);
  if (!prior) throw CLI::ValidationError("--prior", "truncate-eval needs diffuse or informative");
  const io::Cohort cohort = io::read_tests(a.input);
  std::vector<LabelledSeries> tests;
  for (const auto& r : cohort) tests.push_back({r.test_id, r.series});
  const auto reports =
      run_truncation_study(tests, parse_fraction_list(a.thresholds), *prior, a.sampler.config());

  Table per_test({"threshold", "test_id", "complete_breaths", "retained", "status", "lci_median",
                  "lci_q2.5", "lci_q97.5", "frc_median", "frc_q2.5", "frc_q97.5", "lci_pe",
                  "frc_pe", "lci_ci_width", "frc_ci_width", "max_rhat", "converged"});
  Table agg({"threshold", "statistic", "lci_pe", "frc_pe", "lci_ci_width", "frc_ci_width"});
  Table conv({"threshold", "n_tests", "n_fitted", "n_unfittable", "n_failed",
              "proportion_converged", "breaths_saved"});
  bool converged = true;
  for (const auto& rep : reports) {
    const std::string label = rep.label();
    for (const auto& t : rep.tests) {
      const bool fitted = t.status == TestTruncationResult::Status::Fitted;
      const auto v = [&](double x) { return fitted ? num(x) : std::string("NA"); };
      if (fitted && !t.fit.converged) converged = false;
      per_test.add({label, t.test_id, std::to_string(t.complete_breaths),
                    std::to_string(t.retained), to_string(t.status), v(t.fit.lci_median),
                    v(t.fit.lci_lo), v(t.fit.lci_hi), v(t.fit.frc_median), v(t.fit.frc_lo),
                    v(t.fit.frc_hi), v(t.lci_pe), v(t.frc_pe), v(t.lci_ci_width),
                    v(t.frc_ci_width), v(t.fit.max_rhat),
                    fitted ? (t.fit.converged ? "1" : "0") : "NA"});
    }
    const std::pair<const char*, double PercentileSummary::*> stats[] = {
        {"median", &PercentileSummary::median},
        {"p2.5", &PercentileSummary::p025},
        {"p97.5", &PercentileSummary::p975}};
    for (const auto& [name, member] : stats)
      agg.add({label, name, num(rep.lci_pe.*member), num(rep.frc_pe.*member),
               num(rep.lci_ci_width.*member), num(rep.frc_ci_width.*member)});
    conv.add({label, std::to_string(rep.tests.size()), std::to_string(rep.n_fitted),
              std::to_string(rep.n_unfittable), std::to_string(rep.n_failed),
              num(rep.proportion_converged), num(rep.breaths_saved)});
  }
  std::filesystem::create_directories(a.out_dir);
  emit(in_dir(a.out_dir, "truncation_tests.csv"), per_test.str());
  emit(in_dir(a.out_dir, "truncation_summary.csv"), agg.str());
  emit(in_dir(a.out_dir, "convergence.csv"), conv.str());
  return converged ? kExitOk : kExitNotConverged;
}

// hier-fit -----------------------------------------------------------------

struct HierArgs {
  std::string input, out_dir = ".";
  double holdout_fraction = 1.0;
  SamplerFlags sampler;
};

int run_hier(const HierArgs& a) {
  const io::Cohort cohort = io::read_tests(a.input);
  const auto [train, validation] = holdout_split(cohort, a.holdout_fraction, a.sampler.seed);
  if (train.empty()) throw Error("no tests left for the hierarchical fit");
  std::vector<BreathSeries> series;
  for (const auto& r : train) series.push_back(r.series);
  const HierSamples s = fit_hierarchical(series, a.sampler.config(hier_sampler_config()));
  for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
  const ExtractedPrior prior = extract_informative_prior(s);

  const auto quantiles = [&](int col) {
    std::vector<double> all;
    for (const auto& c : s.column(col)) all.insert(all.end(), c.begin(), c.end());
    std::sort(all.begin(), all.end());
    return std::array<double, 3>{diag::quantile_sorted(all, 0.025),
                                 diag::quantile_sorted(all, 0.5),
                                 diag::quantile_sorted(all, 0.975)};
  };
  Table hyper({"parameter", "median", "q2.5", "q97.5", "rhat", "sd_median", "sd_q2.5",
               "sd_q97.5", "sd_rhat"});
  for (int j = 0; j < 6; ++j) {
    const auto b = quantiles(j);
    const auto sd = quantiles(HierSamples::kSdOffset + j);
    hyper.add({MbwParams::kNames[j], num(b[1]), num(b[0]), num(b[2]),
               num(diag::rhat(s.column(j))), num(sd[1]), num(sd[0]), num(sd[2]),
               num(diag::rhat(s.column(HierSamples::kSdOffset + j)))});
  }
  for (int j = 0; j < 3; ++j) {
    const int col = HierSamples::kSigmaOffset + j;
    const auto q = quantiles(col);
    hyper.add({HierSamples::column_names()[col], num(q[1]), num(q[0]), num(q[2]),
               num(diag::rhat(s.column(col))), "NA", "NA", "NA", "NA"});
  }
  std::vector<std::string> corr_header = {"parameter"};
  for (int j = 0; j < 6; ++j) corr_header.push_back(MbwParams::kNames[j]);
  Table corr(corr_header);
  for (int i = 0; i < 6; ++i) {
    std::vector<std::string> row = {MbwParams::kNames[i]};
    for (int j = 0; j < 6; ++j) row.push_back(num(std::round(prior.corr(i, j) * 100.0)));
    corr.add(row);
  }
  Table split({"test_id", "participant_id", "set"});
  for (const auto& r : train) split.add({r.test_id, r.participant_id, "training"});
  for (const auto& r : validation) split.add({r.test_id, r.participant_id, "validation"});

  std::filesystem::create_directories(a.out_dir);
  emit(in_dir(a.out_dir, "hyper_summary.csv"), hyper.str());
  emit(in_dir(a.out_dir, "correlation_x100.csv"), corr.str());
  emit(in_dir(a.out_dir, "split.csv"), split.str());
  io::write_prior(in_dir(a.out_dir, "prior.json"), prior.prior);
  if (prior.projected) std::cerr << "warning: median correlation matrix was projected\n";
  return s.max_hyper_rhat() > diag::kBatchRhatThreshold ? kExitNotConverged : kExitOk;
}

// agree --------------------------------------------------------------------

struct AgreeArgs {
  std::string input, variant = "exchangeable", out;
  SamplerFlags sampler;
};

int run_agree(const AgreeArgs& a) {
  AgreementVariant v = AgreementVariant::Exchangeable;
  if (a.variant == "linked") v = AgreementVariant::Linked;
  else if (a.variant == "full") v = AgreementVariant::Full;
  const AgreementData data(io::read_agreement(a.input));
  const VarCompFit fit = fit_agreement(data, v, a.sampler.config());
  Table t({"quantity", "median", "q2.5", "q97.5", "mean", "sd", "rhat", "ess"});
  for (const auto& r : fit.rows) {
    std::string name = r.name;
    if (name == "alpha_diff") name = "mean_difference";
    if (name == "sigma_ratio") name = "residual_ratio";
    const auto& st = r.stats;
    t.add({name, num(st.median), num(st.quantiles[0]), num(st.quantiles[2]), num(st.mean),
           num(st.sd), st.rhat_defined ? num(st.rhat) : "NA", num(st.ess)});
  }
  emit(a.out, t.str());
  return fit.max_rhat() > diag::kBatchRhatThreshold ? kExitNotConverged : kExitOk;
}

// simulate -----------------------------------------------------------------

struct SimArgs {
  std::string spec, out_dir = ".", format = "csv";
  std::optional<std::uint64_t> seed;
};

int run_simulate(const SimArgs& a) {
  CohortSpec spec = a.spec.empty() ? CohortSpec{} : io::read_cohort_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  const auto tests = generate_cohort(spec);
  std::filesystem::create_directories(a.out_dir);
  const bool json = a.format == "json";
  io::write_tests(in_dir(a.out_dir, json ? "cohort.json" : "cohort.csv"), io::to_cohort(tests));
  emit(in_dir(a.out_dir, "truth.csv"), io::truth_csv(tests));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian modelling of multiple-breath washout tests"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit each test in a file and summarise the posterior");
  fit_cmd->add_option("input", fit.input, "Test file (.csv or .json)")->required();
  fit_cmd->add_option("--prior", fit.prior, "diffuse | informative:PATH | record");
  fit_cmd->add_option("--threshold", fit.threshold, "End-test GAS threshold (e.g. 1/40)");
  fit_cmd->add_option("--truncate", fit.truncate, "Truncate each test at this GAS threshold first");
  fit_cmd->add_option("--test-id", fit.test_id, "Fit only this test");
  fit_cmd->add_option("--out", fit.out, "Summary CSV (default stdout)");
  fit_cmd->add_option("--ppc", fit.ppc, "Number of posterior-predictive datasets");
  fit_cmd->add_option("--ppc-out", fit.ppc_out, "Posterior-predictive CSV (default stdout)");
  fit_cmd->add_option("--ppc-variant", fit.variant, "derivative | cumulative")
      ->check(CLI::IsMember({"derivative", "cumulative"}));
  fit.sampler.add_to(fit_cmd);

  TruncArgs trunc;
  auto* trunc_cmd = app.add_subcommand("truncate-eval", "Refit tests truncated at earlier thresholds");
  trunc_cmd->add_option("input", trunc.input, "Cohort file")->required();
  trunc_cmd->add_option("--thresholds", trunc.thresholds, "Comma-separated thresholds");
  trunc_cmd->add_option("--prior", trunc.prior, "diffuse | informative:PATH");
  trunc_cmd->add_option("--out-dir", trunc.out_dir, "Output directory");
  trunc.sampler.add_to(trunc_cmd);

  HierArgs hier;
  auto* hier_cmd = app.add_subcommand("hier-fit", "Fit the hierarchical model and extract a prior");
  hier_cmd->add_option("input", hier.input, "Cohort file")->required();
  hier_cmd->add_option("--holdout-fraction", hier.holdout_fraction,
                       "Share of participants used for fitting")
      ->check(CLI::Range(0.0, 1.0));
  hier_cmd->add_option("--out-dir", hier.out_dir, "Output directory");
  hier.sampler.add_to(hier_cmd);

  AgreeArgs agree;
  auto* agree_cmd = app.add_subcommand("agree", "Variance-components agreement of two methods");
  agree_cmd->add_option("input", agree.input, "CSV with method,participant,replicate,value")
      ->required();
  agree_cmd->add_option("--variant", agree.variant, "exchangeable | linked | full")
      ->check(CLI::IsMember({"exchangeable", "linked", "full"}));
  agree_cmd->add_option("--out", agree.out, "Summary CSV (default stdout)");
  agree.sampler.add_to(agree_cmd);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic cohort");
  sim_cmd->add_option("spec", sim.spec, "Cohort spec JSON (defaults when omitted)");
  sim_cmd->add_option("--out-dir", sim.out_dir, "Output directory");
  sim_cmd->add_option("--format", sim.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  sim_cmd->add_option("--seed", sim.seed, "Override the spec seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*fit_cmd) return run_fit(fit);
    if (*trunc_cmd) return run_truncate(trunc);
    if (*hier_cmd) return run_hier(hier);
    if (*agree_cmd) return run_agree(agree);
    if (*sim_cmd) return run_simulate(sim);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
