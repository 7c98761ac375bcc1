#pragma once

#include <optional>
#include <string>
#include <utility>

#include "elsa/binarize.hpp"
#include "elsa/types.hpp"

namespace elsa {

// Pairwise maximum-entropy model over N binary units, fitted by exact
// gradient ascent on the enumerated 2^N state space. The energy of a state x
// is  E(x) = -sum_{i<j} w_ij x_i x_j - sum_i h_i x_i,  and state
// probabilities follow the Boltzmann form p(x) = exp(-E(x)) / Z.

struct FitDiagnostics {
  Vector empirical_mean;    // <x_i> over the data
  Matrix empirical_corr;    // <x_i x_j> over the data (symmetric, zero diag)
  Vector model_mean;
  Matrix model_corr;
  double moment_correlation = 0.0;  // Pearson over all concatenated moments
  double max_moment_gap = 0.0;      // L-inf gap vs the fitting targets
  int iterations = 0;
  bool converged = false;
  bool accepted = false;            // moment_correlation > 0.8
};

struct MemModel {
  int n_units = 0;
  Vector h;               // intrinsic activation biases
  Matrix w;               // couplings, symmetric with zero diagonal
  double log_partition = 0.0;
  FitDiagnostics fit;
};

struct FitConfig {
  double tolerance = 1e-6;       // stop when max |gradient| drops below this
  int max_iterations = 50000;
  double learning_rate = 0.1;    // halved on likelihood decrease, never grown
  bool clamp_degenerate = true;  // clamp means in {0,1} to [1/2T, 1 - 1/2T]
  bool require_convergence = false;  // throw NonConvergenceError on cap
};

/// mean_i = (1/T) sum_t x_ti; corr_ij = (1/T) sum_t x_ti x_tj for i < j,
/// returned as a symmetric zero-diagonal matrix.
std::pair<Vector, Matrix> empirical_moments(const BinaryStateSequence& seq);

/// Energy of one coded state. Throws RangeError for codes >= 2^N.
double energy(const MemModel& model, StateCode code);

/// Energies of all 2^N states, indexed by code.
Vector state_energies(const MemModel& model);

/// log(sum_k exp(-E_k)) with max-subtraction.
double log_partition(const Vector& energies);

/// Boltzmann distribution over all 2^N states (sums to 1 within 1e-10).
/// Throws CapacityError when N > 20.
Vector state_distribution(const MemModel& model);

/// Exact first- and second-order expectations under state_distribution.
std::pair<Vector, Matrix> model_moments(const MemModel& model);

/// Mean per-sample log-likelihood of data with the given moments under
/// (h, w):  sum_i h_i m_i + sum_{i<j} w_ij c_ij - log Z.
double log_likelihood(const Vector& h, const Matrix& w, const Vector& mean,
                      const Matrix& corr);

/// Gradient ascent on the exact log-likelihood until max |gradient| <= tol.
/// Deterministic: h = 0, w = 0 initialization, fixed learning rate with
/// halving on likelihood decrease. n_samples drives degenerate-moment
/// clamping; pass nullopt when the moments are exact (clamping impossible,
/// degenerate moments throw DegenerateMomentError).
MemModel fit_to_moments(const Vector& mean, const Matrix& corr, int n_units,
                        const FitConfig& config,
                        std::optional<long> n_samples);

/// Fits to the empirical moments of a binary sequence.
MemModel fit(const BinaryStateSequence& seq, const FitConfig& config = {});

/// Stable structured-text (JSON) serialization: N, h, upper-triangle w,
/// diagnostics, in fixed field order.
std::string serialize_model(const MemModel& model);
MemModel deserialize_model(const std::string& text);

}  // namespace elsa
