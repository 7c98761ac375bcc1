#include "elsa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "elsa/error.hpp"
#include "elsa/ingest.hpp"
#include "elsa/io.hpp"
#include "elsa/rng.hpp"
#include "elsa/warnings.hpp"

namespace elsa {

void SyntheticCohortSpec::validate() const {
  if (n_subjects_per_group < 1) {
    throw ValidationError("need at least 1 subject per group");
  }
  if (n_units < 1 || n_units > kMaxUnits) {
    throw ValidationError("unit count must lie in [1, " +
                          std::to_string(kMaxUnits) + "]");
  }
  if (series_length < 2) throw ValidationError("series length must be >= 2");
  if (channels_per_unit < 1) {
    throw ValidationError("need at least 1 channel per unit");
  }
  if (group_effect <= -1.0) {
    throw ValidationError("group effect must exceed -1 (couplings scale by "
                          "1 + effect)");
  }
  if (noise_sd < 0.0 || active_level <= 0.0 || bias_range < 0.0 ||
      coupling_range < 0.0) {
    throw ValidationError("signal and model ranges must be nonnegative "
                          "(active level positive)");
  }
}

MemModel random_model(int n_units, double bias_range, double coupling_range,
                      std::uint64_t seed) {
  if (n_units < 1 || n_units > kMaxUnits) {
    throw ValidationError("unit count must lie in [1, " +
                          std::to_string(kMaxUnits) + "]");
  }
  Rng rng(seed);
  MemModel model;
  model.n_units = n_units;
  model.h = Vector::Zero(n_units);
  model.w = Matrix::Zero(n_units, n_units);
  for (int i = 0; i < n_units; ++i) {
    model.h[i] = (2.0 * rng.uniform01() - 1.0) * bias_range;
  }
  for (int i = 0; i < n_units; ++i) {
    for (int j = i + 1; j < n_units; ++j) {
      model.w(i, j) = (2.0 * rng.uniform01() - 1.0) * coupling_range;
      model.w(j, i) = model.w(i, j);
    }
  }
  model.log_partition = log_partition(state_energies(model));
  return model;
}

BinaryStateSequence exact_sample(const MemModel& model, long n_samples,
                                 std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("need at least 1 sample");
  const Vector p = state_distribution(model);

  Vector cdf(p.size());
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p[k];
    cdf[k] = acc;
  }
  cdf[p.size() - 1] = 1.0;  // close the tail against rounding

  Rng rng(seed);
  std::vector<StateCode> codes(static_cast<std::size_t>(n_samples));
  for (long t = 0; t < n_samples; ++t) {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cdf.data(), cdf.data() + cdf.size(), u);
    codes[static_cast<std::size_t>(t)] =
        static_cast<StateCode>(std::min<Eigen::Index>(
            it - cdf.data(), cdf.size() - 1));
  }
  return sequence_from_codes(codes, model.n_units);
}

BinaryStateSequence gibbs_sample(const MemModel& model, long n_samples,
                                 long burn_in, long thin, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("need at least 1 sample");
  if (burn_in < 0 || thin < 1) {
    throw ValidationError("burn_in must be >= 0 and thin >= 1");
  }
  const int n = model.n_units;
  if (n < 1 || n > kMaxUnits) {
    throw ValidationError("unit count must lie in [1, " +
                          std::to_string(kMaxUnits) + "]");
  }

  Rng rng(seed);
  std::vector<int> x(static_cast<std::size_t>(n), 0);
  auto sweep = [&] {
    for (int i = 0; i < n; ++i) {
      double field = model.h[i];
      for (int j = 0; j < n; ++j) {
        if (j != i) field += model.w(i, j) * x[static_cast<std::size_t>(j)];
      }
      const double p1 = 1.0 / (1.0 + std::exp(-field));
      x[static_cast<std::size_t>(i)] = rng.uniform01() < p1 ? 1 : 0;
    }
  };

  for (long s = 0; s < burn_in; ++s) sweep();
  std::vector<StateCode> codes;
  codes.reserve(static_cast<std::size_t>(n_samples));
  while (static_cast<long>(codes.size()) < n_samples) {
    for (long s = 0; s < thin; ++s) sweep();
    StateCode code = 0;
    for (int i = 0; i < n; ++i) {
      code |= static_cast<StateCode>(x[static_cast<std::size_t>(i)]) << i;
    }
    codes.push_back(code);
  }
  return sequence_from_codes(codes, n);
}

namespace {

std::string subject_name(char group, int index) {
  std::ostringstream name;
  name << 's' << group;
  if (index + 1 < 100) name << (index + 1 < 10 ? "00" : "0");
  name << index + 1;
  return name.str();
}

TimeSeriesMatrix expand_to_channels(const BinaryStateSequence& seq,
                                    const SyntheticCohortSpec& spec,
                                    std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  TimeSeriesMatrix series;
  const Eigen::Index t_len = seq.timepoints();
  series.data.resize(t_len, spec.n_units * spec.channels_per_unit);
  for (int u = 0; u < spec.n_units; ++u) {
    for (int c = 0; c < spec.channels_per_unit; ++c) {
      const Eigen::Index col = u * spec.channels_per_unit + c;
      series.channel_names.push_back("u" + std::to_string(u + 1) + "_c" +
                                     std::to_string(c + 1));
      for (Eigen::Index t = 0; t < t_len; ++t) {
        const double level = seq.states(t, u) == 1 ? spec.active_level
                                                   : -spec.active_level;
        series.data(t, col) = level + spec.noise_sd * rng.normal();
      }
    }
  }
  return series;
}

}  // namespace

std::vector<SubjectRecord> build_cohort(const SyntheticCohortSpec& spec) {
  spec.validate();

  const MemModel base = random_model(spec.n_units, spec.bias_range,
                                     spec.coupling_range,
                                     derive_seed(spec.seed, "base_model"));
  MemModel shifted = base;
  shifted.w *= 1.0 + spec.group_effect;
  shifted.log_partition = log_partition(state_energies(shifted));

  std::vector<SubjectRecord> records;
  records.reserve(static_cast<std::size_t>(2 * spec.n_subjects_per_group));
  for (int group = 0; group < 2; ++group) {
    const char tag = group == 0 ? 'A' : 'B';
    const MemModel& model = group == 0 ? base : shifted;
    for (int s = 0; s < spec.n_subjects_per_group; ++s) {
      SubjectRecord rec;
      rec.subject_id = subject_name(tag, s);
      const BinaryStateSequence seq = exact_sample(
          model, spec.series_length, derive_seed(spec.seed, "states", tag, s));
      rec.series = expand_to_channels(seq, spec,
                                      derive_seed(spec.seed, "noise", tag, s));
      rec.ssp_pre = 6;
      rec.ssp_post = group == 0 ? 7 : 4;  // group B = low working memory
      rec.wm_label = wm_label_from_ssp(rec.ssp_post);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

Network synthetic_network_of_unit(int unit, int n_units) {
  if (unit < 0 || unit >= n_units) throw RangeError("unit index out of range");
  // Contiguous, nearly equal blocks over the four canonical networks.
  const auto& networks = canonical_networks();
  const int idx = static_cast<int>(
      (static_cast<long>(unit) * static_cast<long>(networks.size())) / n_units);
  return networks[static_cast<std::size_t>(idx)];
}

std::string write_cohort(const std::vector<SubjectRecord>& records,
                         const SyntheticCohortSpec& spec,
                         const std::string& out_dir) {
  if (records.empty()) throw ValidationError("empty cohort");
  namespace fs = std::filesystem;
  const fs::path base(out_dir);

  std::ostringstream manifest;
  manifest << "subject_id,series_path,ssp_pre,ssp_post\n";
  for (const auto& rec : records) {
    const std::string rel = "series/" + rec.subject_id + ".csv";
    write_matrix((base / rel).string(), rec.series, Layout::time_rows);
    manifest << rec.subject_id << ',' << rel << ',';
    if (rec.ssp_pre) manifest << *rec.ssp_pre;
    manifest << ',' << rec.ssp_post << '\n';
  }
  const std::string manifest_path = (base / "manifest.csv").string();
  io::write_text(manifest_path, manifest.str());

  if (spec.n_units >= static_cast<int>(canonical_networks().size())) {
    std::ostringstream atlas;
    atlas << "channel_name,network\n";
    for (int u = 0; u < spec.n_units; ++u) {
      const Network network = synthetic_network_of_unit(u, spec.n_units);
      for (int c = 0; c < spec.channels_per_unit; ++c) {
        atlas << "u" << u + 1 << "_c" << c + 1 << ',' << to_string(network)
              << '\n';
      }
    }
    io::write_text((base / "atlas.csv").string(), atlas.str());
  } else {
    emit_warning("cohort has fewer units than canonical networks; atlas not "
                 "written");
  }
  return manifest_path;
}

}  // namespace elsa
