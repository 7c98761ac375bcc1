#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elsa/binarize.hpp"
#include "elsa/mem.hpp"
#include "elsa/types.hpp"

namespace elsa {

// Synthetic ground-truth generators: exact Boltzmann sampling, a Gibbs
// sampler for cross-validation, and a planted-effect cohort builder whose
// output files are drop-in pipeline inputs.

/// Cohort recipe. Group A subjects sample the base model; group B scales
/// every coupling by (1 + group_effect), which concentrates probability on
/// fewer states and plants the fewer-but-larger-transitions pattern.
struct SyntheticCohortSpec {
  int n_subjects_per_group = 10;
  int n_units = 6;
  int series_length = 200;
  double group_effect = 0.0;
  std::uint64_t seed = 0;

  // Continuous-signal reconstruction: each unit drives channels_per_unit
  // channels at active_level/-active_level plus independent Gaussian noise.
  int channels_per_unit = 3;
  double active_level = 1.0;
  double noise_sd = 0.5;

  // Base model parameter ranges (uniform, couplings symmetric).
  double bias_range = 0.6;
  double coupling_range = 0.4;

  void validate() const;
};

/// Uniform random model: h_i ~ U(-bias_range, bias_range),
/// w_ij ~ U(-coupling_range, coupling_range) symmetric, zero diagonal.
MemModel random_model(int n_units, double bias_range, double coupling_range,
                      std::uint64_t seed);

/// i.i.d. states by inverse-CDF over the enumerated Boltzmann distribution.
/// Throws CapacityError when N > 20.
BinaryStateSequence exact_sample(const MemModel& model, long n_samples,
                                 std::uint64_t seed);

/// Systematic-sweep single-site Gibbs sampler with conditional
/// p(x_i = 1 | rest) = logistic(h_i + sum_j w_ij x_j). One recorded sample
/// per `thin` sweeps after `burn_in` sweeps.
BinaryStateSequence gibbs_sample(const MemModel& model, long n_samples,
                                 long burn_in, long thin, std::uint64_t seed);

/// In-memory cohort: group A from the base model, group B with scaled
/// couplings, binary states re-expanded to noisy continuous channels so the
/// full pipeline (clustering onward) has structure to find. Group B gets the
/// low working-memory label.
std::vector<SubjectRecord> build_cohort(const SyntheticCohortSpec& spec);

/// Unit index -> canonical network used by the default synthetic atlas
/// (contiguous unit blocks).
Network synthetic_network_of_unit(int unit, int n_units);

/// Writes manifest + per-subject series + atlas in the ingest formats.
/// Returns the manifest path.
std::string write_cohort(const std::vector<SubjectRecord>& records,
                         const SyntheticCohortSpec& spec,
                         const std::string& out_dir);

}  // namespace elsa
