#include "elsa/mem.hpp"

#include <bit>
#include <cassert>
#include <cmath>
#include <limits>

#include "elsa/error.hpp"
#include "elsa/warnings.hpp"

#include <nlohmann/json.hpp>

namespace elsa {

namespace {

void check_unit_count(int n_units) {
  if (n_units < 1) throw ValidationError("model needs at least 1 unit");
  if (n_units > kMaxUnits) {
    throw CapacityError("exact enumeration supports at most " +
                        std::to_string(kMaxUnits) + " units, got " +
                        std::to_string(n_units));
  }
}

int lowest_bit(StateCode code) { return std::countr_zero(code); }

// Energies of all 2^N states by the add-one-unit recurrence:
// E(c) = E(c without its lowest set bit i) - h_i - sum_{j in rest} w_ij.
Vector all_energies(const Vector& h, const Matrix& w) {
  const int n = static_cast<int>(h.size());
  const std::size_t n_states = std::size_t{1} << n;
  Vector energies(static_cast<Eigen::Index>(n_states));
  energies[0] = 0.0;
  for (std::size_t code = 1; code < n_states; ++code) {
    const int i = lowest_bit(static_cast<StateCode>(code));
    const StateCode rest = static_cast<StateCode>(code) &
                           (static_cast<StateCode>(code) - 1u);
    double e = energies[static_cast<Eigen::Index>(rest)] - h[i];
    for (StateCode r = rest; r != 0; r &= r - 1u) {
      e -= w(i, lowest_bit(r));
    }
    energies[static_cast<Eigen::Index>(code)] = e;
  }
  return energies;
}

double log_partition_of(const Vector& h, const Matrix& w) {
  return log_partition(all_energies(h, w));
}

// Exact moments under the Boltzmann distribution given by (h, w).
std::pair<Vector, Matrix> moments_of(const Vector& h, const Matrix& w) {
  const int n = static_cast<int>(h.size());
  const Vector energies = all_energies(h, w);
  const double log_z = log_partition(energies);

  Vector mean = Vector::Zero(n);
  Matrix corr = Matrix::Zero(n, n);
  const std::size_t n_states = std::size_t{1} << n;
  for (std::size_t code = 1; code < n_states; ++code) {
    const double p = std::exp(-energies[static_cast<Eigen::Index>(code)] - log_z);
    for (StateCode c1 = static_cast<StateCode>(code); c1 != 0; c1 &= c1 - 1u) {
      const int i = lowest_bit(c1);
      mean[i] += p;
      for (StateCode c2 = c1 & (c1 - 1u); c2 != 0; c2 &= c2 - 1u) {
        corr(i, lowest_bit(c2)) += p;
      }
    }
  }
  corr = Matrix(corr.selfadjointView<Eigen::Lower>());
  corr.diagonal().setZero();
  return {mean, corr};
}

// Concatenates means and strict-upper-triangle correlations (row-major).
Vector concat_moments(const Vector& mean, const Matrix& corr) {
  const int n = static_cast<int>(mean.size());
  Vector all(n + n * (n - 1) / 2);
  int at = 0;
  for (int i = 0; i < n; ++i) all[at++] = mean[i];
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) all[at++] = corr(i, j);
  }
  return all;
}

double max_gap(const Vector& a_mean, const Matrix& a_corr,
               const Vector& b_mean, const Matrix& b_corr) {
  double gap = (a_mean - b_mean).cwiseAbs().maxCoeff();
  const int n = static_cast<int>(a_mean.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      gap = std::max(gap, std::abs(a_corr(i, j) - b_corr(i, j)));
    }
  }
  return gap;
}

void validate_moments(const Vector& mean, const Matrix& corr, int n_units) {
  if (mean.size() != n_units || corr.rows() != n_units ||
      corr.cols() != n_units) {
    throw MismatchError("moment shapes do not match the unit count");
  }
  auto in_unit_interval = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (int i = 0; i < n_units; ++i) {
    if (!std::isfinite(mean[i]) || !in_unit_interval(mean[i])) {
      throw ValidationError("mean moment out of [0,1]");
    }
    for (int j = 0; j < n_units; ++j) {
      if (!std::isfinite(corr(i, j)) || !in_unit_interval(corr(i, j))) {
        throw ValidationError("pairwise moment out of [0,1]");
      }
    }
  }
}

nlohmann::ordered_json vector_to_json(const Vector& v) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

nlohmann::ordered_json upper_to_json(const Matrix& m) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) arr.push_back(m(i, j));
  }
  return arr;
}

Vector vector_from_json(const nlohmann::json& arr, int expect,
                        const char* what) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != expect) {
    throw ValidationError(std::string("bad length for ") + what);
  }
  Vector v(expect);
  for (int i = 0; i < expect; ++i) v[i] = arr[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Matrix upper_from_json(const nlohmann::json& arr, int n, const char* what) {
  const int expect = n * (n - 1) / 2;
  if (!arr.is_array() || static_cast<int>(arr.size()) != expect) {
    throw ValidationError(std::string("bad length for ") + what);
  }
  Matrix m = Matrix::Zero(n, n);
  std::size_t at = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      m(i, j) = arr[at++].get<double>();
      m(j, i) = m(i, j);
    }
  }
  return m;
}

}  // namespace

std::pair<Vector, Matrix> empirical_moments(const BinaryStateSequence& seq) {
  if (seq.timepoints() < 2) {
    throw ValidationError("need at least 2 timepoints for moments");
  }
  const Matrix x = seq.states.cast<double>();
  Vector mean = x.colwise().mean().transpose();
  Matrix corr = (x.transpose() * x) / static_cast<double>(x.rows());
  corr.diagonal().setZero();
  return {std::move(mean), std::move(corr)};
}

double energy(const MemModel& model, StateCode code) {
  check_unit_count(model.n_units);
  if (model.n_units < 32 && (code >> model.n_units) != 0) {
    throw RangeError("state code " + std::to_string(code) +
                     " out of range for " + std::to_string(model.n_units) +
                     " units");
  }
  double e = 0.0;
  for (StateCode c1 = code; c1 != 0; c1 &= c1 - 1u) {
    const int i = lowest_bit(c1);
    e -= model.h[i];
    for (StateCode c2 = c1 & (c1 - 1u); c2 != 0; c2 &= c2 - 1u) {
      e -= model.w(i, lowest_bit(c2));
    }
  }
  return e;
}

Vector state_energies(const MemModel& model) {
  check_unit_count(model.n_units);
  return all_energies(model.h, model.w);
}

double log_partition(const Vector& energies) {
  if (energies.size() == 0) throw ValidationError("empty energy vector");
  const double m = energies.minCoeff();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < energies.size(); ++k) {
    sum += std::exp(-(energies[k] - m));
  }
  return -m + std::log(sum);
}

Vector state_distribution(const MemModel& model) {
  const Vector energies = state_energies(model);
  const double log_z = log_partition(energies);
  Vector p(energies.size());
  for (Eigen::Index k = 0; k < energies.size(); ++k) {
    p[k] = std::exp(-energies[k] - log_z);
  }
  return p;
}

std::pair<Vector, Matrix> model_moments(const MemModel& model) {
  check_unit_count(model.n_units);
  return moments_of(model.h, model.w);
}

double log_likelihood(const Vector& h, const Matrix& w, const Vector& mean,
                      const Matrix& corr) {
  double ll = h.dot(mean);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < w.cols(); ++j) ll += w(i, j) * corr(i, j);
  }
  return ll - log_partition_of(h, w);
}

MemModel fit_to_moments(const Vector& mean, const Matrix& corr, int n_units,
                        const FitConfig& config,
                        std::optional<long> n_samples) {
  check_unit_count(n_units);
  validate_moments(mean, corr, n_units);
  if (config.tolerance <= 0.0 || config.learning_rate <= 0.0 ||
      config.max_iterations < 1) {
    throw ValidationError("bad fit configuration");
  }

  // Degenerate means pin a bias at infinity; with a sample count available
  // they are clamped one half-count into the open interval instead.
  Vector target_mean = mean;
  bool clamped = false;
  for (int i = 0; i < n_units; ++i) {
    if (target_mean[i] == 0.0 || target_mean[i] == 1.0) {
      if (!config.clamp_degenerate || !n_samples) {
        throw DegenerateMomentError(
            "unit " + std::to_string(i) + " is " +
            (target_mean[i] == 0.0 ? "never" : "always") +
            " active; its bias parameter diverges");
      }
      const double eps = 1.0 / (2.0 * static_cast<double>(*n_samples));
      target_mean[i] = target_mean[i] == 0.0 ? eps : 1.0 - eps;
      clamped = true;
    }
  }
  if (clamped) {
    emit_warning("degenerate unit means clamped away from {0,1} before fitting");
  }

  Vector h = Vector::Zero(n_units);
  Matrix w = Matrix::Zero(n_units, n_units);
  double lr = config.learning_rate;
  double ll = log_likelihood(h, w, target_mean, corr);

  Vector mm;
  Matrix mc;
  bool converged = false;
  int iterations = 0;
  while (iterations < config.max_iterations) {
    std::tie(mm, mc) = moments_of(h, w);
    const Vector grad_h = target_mean - mm;
    double max_grad = grad_h.cwiseAbs().maxCoeff();
    for (int i = 0; i < n_units; ++i) {
      for (int j = i + 1; j < n_units; ++j) {
        max_grad = std::max(max_grad, std::abs(corr(i, j) - mc(i, j)));
      }
    }
    if (max_grad <= config.tolerance) {
      converged = true;
      break;
    }

    // Backtracking: the likelihood is concave, so a small enough step always
    // improves it; halve until it does.
    bool stepped = false;
    while (lr >= 1e-15) {
      Vector h_next = h + lr * grad_h;
      Matrix w_next = w;
      for (int i = 0; i < n_units; ++i) {
        for (int j = i + 1; j < n_units; ++j) {
          w_next(i, j) += lr * (corr(i, j) - mc(i, j));
          w_next(j, i) = w_next(i, j);
        }
      }
      const double ll_next = log_likelihood(h_next, w_next, target_mean, corr);
      if (ll_next >= ll) {
        assert(ll_next >= ll);  // ascent property on accepted steps
        h = std::move(h_next);
        w = std::move(w_next);
        ll = ll_next;
        stepped = true;
        break;
      }
      lr *= 0.5;
    }
    ++iterations;
    if (!stepped) break;  // numerically stalled at the optimum
  }

  std::tie(mm, mc) = moments_of(h, w);  // diagnostics at the final point

  MemModel model;
  model.n_units = n_units;
  model.h = h;
  model.w = w;
  model.log_partition = log_partition_of(h, w);
  model.fit.empirical_mean = mean;  // unclamped data moments
  model.fit.empirical_corr = corr;
  model.fit.model_mean = mm;
  model.fit.model_corr = mc;
  model.fit.max_moment_gap = max_gap(mm, mc, target_mean, corr);
  model.fit.iterations = iterations;
  model.fit.converged = converged;

  const Vector emp = concat_moments(mean, corr);
  const Vector mod = concat_moments(mm, mc);
  const Vector demp = emp.array() - emp.mean();
  const Vector dmod = mod.array() - mod.mean();
  const double denom = std::sqrt(demp.squaredNorm() * dmod.squaredNorm());
  if (denom > 0.0) {
    model.fit.moment_correlation = demp.dot(dmod) / denom;
  } else {
    // All moments identical on one side; fall back to agreement-or-not.
    emit_warning("constant moment vector; fit acceptance decided by gap");
    model.fit.moment_correlation =
        (emp - mod).cwiseAbs().maxCoeff() <= 10.0 * config.tolerance ? 1.0 : 0.0;
  }
  model.fit.accepted = model.fit.moment_correlation > 0.8;

  if (!converged && config.require_convergence) {
    throw NonConvergenceError(
        "fit hit the iteration cap (" + std::to_string(iterations) +
        ") with moment gap " + std::to_string(model.fit.max_moment_gap),
        iterations, model.fit.max_moment_gap, model.fit.moment_correlation);
  }
  return model;
}

MemModel fit(const BinaryStateSequence& seq, const FitConfig& config) {
  auto [mean, corr] = empirical_moments(seq);
  return fit_to_moments(mean, corr, seq.n_units, config,
                        static_cast<long>(seq.timepoints()));
}

std::string serialize_model(const MemModel& model) {
  nlohmann::ordered_json j;
  j["n_units"] = model.n_units;
  j["h"] = vector_to_json(model.h);
  j["w_upper"] = upper_to_json(model.w);
  j["log_partition"] = model.log_partition;
  nlohmann::ordered_json fit;
  fit["empirical_mean"] = vector_to_json(model.fit.empirical_mean);
  fit["empirical_corr_upper"] = upper_to_json(model.fit.empirical_corr);
  fit["model_mean"] = vector_to_json(model.fit.model_mean);
  fit["model_corr_upper"] = upper_to_json(model.fit.model_corr);
  fit["moment_correlation"] = model.fit.moment_correlation;
  fit["max_moment_gap"] = model.fit.max_moment_gap;
  fit["iterations"] = model.fit.iterations;
  fit["converged"] = model.fit.converged;
  fit["accepted"] = model.fit.accepted;
  j["fit"] = std::move(fit);
  return j.dump(2) + "\n";
}

MemModel deserialize_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model text: ") + e.what());
  }
  try {
    MemModel model;
    model.n_units = j.at("n_units").get<int>();
    check_unit_count(model.n_units);
    const int n = model.n_units;
    model.h = vector_from_json(j.at("h"), n, "h");
    model.w = upper_from_json(j.at("w_upper"), n, "w_upper");
    model.log_partition = j.at("log_partition").get<double>();
    const auto& fit = j.at("fit");
    model.fit.empirical_mean =
        vector_from_json(fit.at("empirical_mean"), n, "empirical_mean");
    model.fit.empirical_corr =
        upper_from_json(fit.at("empirical_corr_upper"), n, "empirical_corr_upper");
    model.fit.model_mean =
        vector_from_json(fit.at("model_mean"), n, "model_mean");
    model.fit.model_corr =
        upper_from_json(fit.at("model_corr_upper"), n, "model_corr_upper");
    model.fit.moment_correlation = fit.at("moment_correlation").get<double>();
    model.fit.max_moment_gap = fit.at("max_moment_gap").get<double>();
    model.fit.iterations = fit.at("iterations").get<int>();
    model.fit.converged = fit.at("converged").get<bool>();
    model.fit.accepted = fit.at("accepted").get<bool>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad model fields: ") + e.what());
  }
}

}  // namespace elsa
