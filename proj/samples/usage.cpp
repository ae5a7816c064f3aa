// Walk-through of the library: simulate a cohort, fit one test, truncate it,
// and compare the outcomes.

#include <cstdio>

#include "mbw/inference.hpp"
#include "mbw/synthgen.hpp"
#include "mbw/truncation.hpp"

int main() {
  using namespace mbw;

  CohortSpec spec;
  spec.n_tests = 3;
  spec.seed = 2024;
  const auto cohort = generate_cohort(spec);
  const SyntheticTest& test = cohort.front();
  std::printf("test %s: %zu breaths, true LCI %.3f\n", test.test_id.c_str(), test.series.size(),
              test.true_outcomes.asymptotic.lci);

  if (const auto standard = outcomes_standard(test.series))
    std::printf("standard method: LCI %.3f (end-test breath %.0f)\n", standard->lci,
                standard->theta);

  SamplerConfig cfg;
  cfg.seed = 7;
  const SummaryTable full = summarize(sample_posterior(test.series, PriorSpec::diffuse(), cfg));
  const auto& lci = full.at("lci_star").stats;
  std::printf("complete data:   LCI %.3f [%.3f, %.3f], max R-hat %.3f\n", lci.median,
              lci.quantiles[0], lci.quantiles[2], full.max_parameter_rhat());

  const PriorSpec informative = PriorSpec::informative(table1_mu(), table1_covariance());
  if (const auto short_test = truncate_at_threshold(test.series, 0.1)) {
    const SummaryTable t = summarize(sample_posterior(*short_test, informative, cfg));
    const auto& s = t.at("lci_star").stats;
    std::printf("truncated at 1/10 (%zu breaths): LCI %.3f [%.3f, %.3f], PE %.1f%%\n",
                short_test->size(), s.median, s.quantiles[0], s.quantiles[2],
                (s.median / lci.median - 1) * 100);
  }
  return 0;
}
