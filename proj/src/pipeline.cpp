#include "elsa/pipeline.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "elsa/binarize.hpp"
#include "elsa/error.hpp"
#include "elsa/io.hpp"
#include "elsa/rng.hpp"
#include "elsa/warnings.hpp"

#include <nlohmann/json.hpp>

namespace elsa {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration (de)serialization
// ---------------------------------------------------------------------------

namespace {

void require_known_keys(const nlohmann::json& j,
                        std::initializer_list<const char*> known,
                        const std::string& scope) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      throw ValidationError("unknown configuration field '" + scope + key + "'");
    }
  }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
  PipelineConfig config;
  config.merge_json_file(path);
  return config;
}

void PipelineConfig::merge_json_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_lines(path).empty()
                                  ? std::string()
                                  : [&] {
                                      std::ostringstream all;
                                      for (const auto& line :
                                           io::read_lines(path)) {
                                        all << line << '\n';
                                      }
                                      return all.str();
                                    }());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    require_known_keys(j,
                       {"manifest", "atlas", "out", "seed", "k_lo", "k_hi",
                        "restarts", "fraction", "smooth_window", "fit",
                        "forest", "pool_extremes", "per_subject_summary_tests",
                        "jobs"},
                       "");
    read_field(j, "manifest", manifest_path);
    read_field(j, "atlas", atlas_path);
    read_field(j, "out", out_dir);
    read_field(j, "seed", seed);
    read_field(j, "k_lo", k_range.lo);
    read_field(j, "k_hi", k_range.hi);
    read_field(j, "restarts", restarts);
    read_field(j, "fraction", fraction);
    read_field(j, "smooth_window", smooth_window);
    read_field(j, "pool_extremes", pool_extremes);
    read_field(j, "per_subject_summary_tests", per_subject_summary_tests);
    read_field(j, "jobs", jobs);
    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      require_known_keys(f,
                         {"tolerance", "max_iterations", "learning_rate",
                          "clamp_degenerate", "require_convergence"},
                         "fit.");
      read_field(f, "tolerance", fit.tolerance);
      read_field(f, "max_iterations", fit.max_iterations);
      read_field(f, "learning_rate", fit.learning_rate);
      read_field(f, "clamp_degenerate", fit.clamp_degenerate);
      read_field(f, "require_convergence", fit.require_convergence);
    }
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      require_known_keys(f,
                         {"n_trees", "max_depth", "features_per_split",
                          "bootstrap", "n_repetitions", "grid_search"},
                         "forest.");
      read_field(f, "n_trees", forest.n_trees);
      read_field(f, "max_depth", forest.max_depth);
      read_field(f, "features_per_split", forest.features_per_split);
      read_field(f, "bootstrap", forest.bootstrap);
      read_field(f, "n_repetitions", forest.n_repetitions);
      read_field(f, "grid_search", forest.grid_search);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string PipelineConfig::to_json() const {
  ordered_json j;
  j["manifest"] = manifest_path;
  j["atlas"] = atlas_path;
  j["out"] = out_dir;
  j["seed"] = seed;
  j["k_lo"] = k_range.lo;
  j["k_hi"] = k_range.hi;
  j["restarts"] = restarts;
  j["fraction"] = fraction;
  j["smooth_window"] = smooth_window;
  j["fit"] = ordered_json{{"tolerance", fit.tolerance},
                          {"max_iterations", fit.max_iterations},
                          {"learning_rate", fit.learning_rate},
                          {"clamp_degenerate", fit.clamp_degenerate},
                          {"require_convergence", fit.require_convergence}};
  j["forest"] = ordered_json{{"n_trees", forest.n_trees},
                             {"max_depth", forest.max_depth},
                             {"features_per_split", forest.features_per_split},
                             {"bootstrap", forest.bootstrap},
                             {"n_repetitions", forest.n_repetitions},
                             {"grid_search", forest.grid_search}};
  j["pool_extremes"] = pool_extremes;
  j["per_subject_summary_tests"] = per_subject_summary_tests;
  j["jobs"] = jobs;
  return j.dump(2) + "\n";
}

Stage parse_stage(const std::string& name) {
  if (name == "cluster") return Stage::cluster;
  if (name == "binarize") return Stage::binarize;
  if (name == "fit") return Stage::fit;
  if (name == "landscape") return Stage::landscape;
  if (name == "stats") return Stage::stats;
  if (name == "classify") return Stage::classify;
  throw ValidationError("unknown stage: " + name);
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::cluster: return "cluster";
    case Stage::binarize: return "binarize";
    case Stage::fit: return "fit";
    case Stage::landscape: return "landscape";
    case Stage::stats: return "stats";
    case Stage::classify: return "classify";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

void validate_config(const PipelineConfig& config, bool need_manifest = true) {
  if (need_manifest && config.manifest_path.empty()) {
    throw ValidationError("manifest path is required");
  }
  if (config.out_dir.empty()) {
    throw ValidationError("output directory is required");
  }
  if (!(config.fraction > 0.0 && config.fraction <= 0.5)) {
    throw ValidationError("fraction must lie in (0, 0.5]");
  }
  if (config.smooth_window < 1 || config.smooth_window % 2 == 0) {
    throw ValidationError("smooth_window must be odd and positive");
  }
  if (config.restarts < 1) throw ValidationError("restarts must be >= 1");
  if (config.k_range.lo < 1) throw ValidationError("k_lo must be >= 1");
  if (config.jobs < 0) throw ValidationError("jobs must be >= 0");
}

int worker_count(const PipelineConfig& config) {
  if (config.jobs > 0) return config.jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Index-parallel loop with a bounded pool; results must be written to
// per-index slots so the outcome is schedule-independent.
void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
  if (n <= 0) return;
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

KRange resolve_k_range(const KRange& requested, Eigen::Index channels) {
  KRange range = requested;
  if (range.hi <= 0) {
    range.hi = static_cast<int>(std::min<Eigen::Index>(12, channels - 1));
  }
  if (range.hi < range.lo) range.hi = range.lo;
  return range;
}

/// Mean-threshold binarization that drops constant units (with a warning)
/// instead of aborting; returns nullopt when fewer than 2 units survive.
std::optional<BinaryStateSequence> binarize_with_drops(
    Matrix signals, std::vector<std::string> names,
    const std::string& context, std::vector<std::string>* kept_names) {
  while (true) {
    if (signals.cols() < 2) {
      emit_warning(context + ": fewer than 2 usable units; source skipped");
      return std::nullopt;
    }
    try {
      BinaryStateSequence seq = binarize_mean(signals);
      if (kept_names) *kept_names = names;
      return seq;
    } catch (const DegenerateColumnError& e) {
      const int col = e.column();
      emit_warning(context + ": dropping constant unit '" +
                   names[static_cast<std::size_t>(col)] + "'");
      const Eigen::Index cols = signals.cols();
      Matrix reduced(signals.rows(), cols - 1);
      if (col > 0) reduced.leftCols(col) = signals.leftCols(col);
      if (col + 1 < cols) {
        reduced.rightCols(cols - col - 1) = signals.rightCols(cols - col - 1);
      }
      signals = std::move(reduced);
      names.erase(names.begin() + col);
    }
  }
}

std::vector<std::string> source_list(bool with_networks) {
  std::vector<std::string> sources{kHighOrderSource};
  if (with_networks) {
    for (Network n : canonical_networks()) sources.emplace_back(to_string(n));
  }
  return sources;
}

void validate_atlas_networks(const AtlasMapping& atlas) {
  for (Network network : canonical_networks()) {
    if (atlas.members(network).size() < 2) {
      throw ValidationError(std::string("network ") + to_string(network) +
                            " has fewer than 2 member channels; low-order "
                            "analysis needs every canonical network populated");
    }
  }
}

std::vector<std::string> cluster_unit_names(int k) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) names.push_back("cluster" + std::to_string(c + 1));
  return names;
}

}  // namespace

// ---------------------------------------------------------------------------
// In-memory analysis
// ---------------------------------------------------------------------------

namespace {

SourceAnalysis analyze_source(const std::string& source,
                              BinaryStateSequence seq,
                              std::vector<std::string> unit_names,
                              const PipelineConfig& config) {
  SourceAnalysis analysis;
  analysis.source = source;
  analysis.unit_names = std::move(unit_names);
  analysis.sequence = std::move(seq);
  analysis.model = fit(analysis.sequence, config.fit);
  analysis.accepted = analysis.model.fit.accepted;
  analysis.series = energy_series(analysis.model, analysis.sequence, source);
  analysis.features = extract_features(analysis.series, config.fraction,
                                       config.smooth_window);
  return analysis;
}

}  // namespace

SubjectAnalysis analyze_subject(const SubjectRecord& record,
                                const AtlasMapping* atlas,
                                const PipelineConfig& config) {
  record.series.validate();

  SubjectAnalysis subject;
  subject.subject_id = record.subject_id;
  subject.label = record.wm_label;

  const KRange range = resolve_k_range(config.k_range, record.series.channels());
  const std::uint64_t cluster_seed =
      derive_seed(config.seed, "cluster", record.subject_id);
  const ElbowResult elbow =
      select_k_elbow(record.series, range, cluster_seed, config.restarts);
  subject.chosen_k = elbow.chosen_k;
  subject.wcss_curve = elbow.wcss_curve;

  const ClusterModel clusters = kmeans_best(record.series, elbow.chosen_k,
                                            cluster_seed, config.restarts);

  if (auto seq = binarize_with_drops(
          clusters.cluster_series, cluster_unit_names(clusters.n_clusters),
          record.subject_id + "/" + kHighOrderSource, nullptr)) {
    std::vector<std::string> kept = cluster_unit_names(seq->n_units);
    subject.sources.push_back(analyze_source(
        kHighOrderSource, std::move(*seq), std::move(kept), config));
  }

  if (atlas) {
    for (Network network : canonical_networks()) {
      std::vector<std::string> members;
      Matrix selection =
          select_network_units(record.series, *atlas, network, &members);
      std::vector<std::string> kept;
      if (auto seq = binarize_with_drops(
              std::move(selection), std::move(members),
              record.subject_id + "/" + to_string(network), &kept)) {
        subject.sources.push_back(analyze_source(
            to_string(network), std::move(*seq), std::move(kept), config));
      }
    }
  }
  return subject;
}

std::vector<SubjectAnalysis> analyze_cohort(
    const std::vector<SubjectRecord>& records, const AtlasMapping* atlas,
    const PipelineConfig& config) {
  if (records.empty()) throw ValidationError("cohort is empty");
  if (atlas) validate_atlas_networks(*atlas);

  std::vector<SubjectAnalysis> analyses(records.size());
  parallel_for(static_cast<int>(records.size()), worker_count(config),
               [&](int i) {
                 analyses[static_cast<std::size_t>(i)] = analyze_subject(
                     records[static_cast<std::size_t>(i)], atlas, config);
               });

  bool any_accepted = false;
  for (const auto& subject : analyses) {
    for (const auto& source : subject.sources) {
      any_accepted = any_accepted ||
                     (source.source == kHighOrderSource && source.accepted);
    }
  }
  if (!any_accepted) {
    throw AllFitsRejectedError("every subject's model fit was rejected");
  }
  return analyses;
}

std::vector<std::string> analysis_sources(
    const std::vector<SubjectAnalysis>& analyses) {
  std::vector<std::string> sources;
  auto add = [&](const std::string& s) {
    for (const auto& existing : sources) {
      if (existing == s) return;
    }
    sources.push_back(s);
  };
  for (const auto& subject : analyses) {
    for (const auto& source : subject.sources) {
      if (source.source == kHighOrderSource) add(source.source);
    }
  }
  for (Network network : canonical_networks()) {
    for (const auto& subject : analyses) {
      for (const auto& source : subject.sources) {
        if (source.source == to_string(network)) add(source.source);
      }
    }
  }
  return sources;
}

std::vector<GroupComparison> group_statistics(
    const std::vector<SubjectAnalysis>& analyses,
    const PipelineConfig& config) {
  std::vector<GroupComparison> comparisons;
  for (const auto& source_name : analysis_sources(analyses)) {
    std::vector<double> top_low, top_high, bottom_low, bottom_high;
    std::vector<double> trans_low, trans_high, mag_low, mag_high;
    std::vector<std::vector<double>> feat_low(kFeatureCount);
    std::vector<std::vector<double>> feat_high(kFeatureCount);
    int n_low = 0;
    int n_high = 0;

    for (const auto& subject : analyses) {
      for (const auto& source : subject.sources) {
        if (source.source != source_name || !source.accepted) continue;
        const bool low = subject.label == WmLabel::low;
        (low ? ++n_low : ++n_high);
        auto& top = low ? top_low : top_high;
        auto& bottom = low ? bottom_low : bottom_high;
        top.insert(top.end(), source.features.top.begin(),
                   source.features.top.end());
        bottom.insert(bottom.end(), source.features.bottom.begin(),
                      source.features.bottom.end());
        (low ? trans_low : trans_high)
            .push_back(static_cast<double>(source.features.n_transitions));
        (low ? mag_low : mag_high).push_back(source.features.feature_vector[9]);
        for (int f = 0; f < kFeatureCount; ++f) {
          (low ? feat_low : feat_high)[static_cast<std::size_t>(f)].push_back(
              source.features.feature_vector[f]);
        }
      }
    }

    if (n_low == 0 || n_high == 0) {
      emit_warning("source " + source_name +
                   " lacks accepted fits in one group; comparisons skipped");
      continue;
    }

    if (config.pool_extremes) {
      comparisons.push_back(compare_pooled(top_low, top_high, source_name,
                                           "top_values_pooled"));
      comparisons.push_back(compare_pooled(bottom_low, bottom_high, source_name,
                                           "bottom_values_pooled"));
    }
    comparisons.push_back(
        compare_pooled(trans_low, trans_high, source_name, "n_transitions"));
    comparisons.push_back(compare_pooled(mag_low, mag_high, source_name,
                                         "mean_transition_magnitude"));
    if (config.per_subject_summary_tests) {
      for (int f = 0; f < kFeatureCount; ++f) {
        comparisons.push_back(compare_pooled(
            feat_low[static_cast<std::size_t>(f)],
            feat_high[static_cast<std::size_t>(f)], source_name,
            feature_names()[static_cast<std::size_t>(f)]));
      }
    }
  }
  return comparisons;
}

FeatureTable feature_table(const std::vector<SubjectAnalysis>& analyses,
                           const std::vector<std::string>& sources) {
  if (sources.empty()) throw ValidationError("no sources requested");

  FeatureTable table;
  for (const auto& source : sources) {
    for (const auto& feature : feature_names()) {
      table.feature_names.push_back(source + "." + feature);
      table.feature_tags.push_back(source);
    }
  }

  std::vector<const SubjectAnalysis*> complete;
  for (const auto& subject : analyses) {
    bool all = true;
    for (const auto& source : sources) {
      bool found = false;
      for (const auto& s : subject.sources) {
        found = found || (s.source == source && s.accepted);
      }
      all = all && found;
    }
    if (all) complete.push_back(&subject);
  }

  table.x.resize(static_cast<Eigen::Index>(complete.size()),
                 static_cast<Eigen::Index>(table.feature_names.size()));
  for (std::size_t i = 0; i < complete.size(); ++i) {
    const auto& subject = *complete[i];
    table.subject_ids.push_back(subject.subject_id);
    table.labels.push_back(subject.label == WmLabel::low ? 1 : 0);
    Eigen::Index at = 0;
    for (const auto& source : sources) {
      for (const auto& s : subject.sources) {
        if (s.source != source) continue;
        table.x.block(static_cast<Eigen::Index>(i), at, 1, kFeatureCount) =
            s.features.feature_vector.transpose();
        break;
      }
      at += kFeatureCount;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Staged file runner
// ---------------------------------------------------------------------------

namespace {

struct StageIo {
  fs::path out_base;
  fs::path dir;            // out_base / stage name
  std::string key;         // content key for this (inputs, config) pair
  std::vector<std::string> files;  // stage outputs, relative to out_base

  std::string rel(const fs::path& p) const {
    return fs::relative(p, out_base).generic_string();
  }
  void wrote(const fs::path& p) { files.push_back(rel(p)); }
};

std::string hex_key(const std::string& material) {
  std::ostringstream hex;
  hex << std::hex << io::content_hash(material);
  return hex.str();
}

fs::path stage_path(const PipelineConfig& config, Stage stage) {
  return fs::path(config.out_dir) / to_string(stage);
}

fs::path cache_path(const PipelineConfig& config, Stage stage) {
  return stage_path(config, stage) / "cache.json";
}

/// The stored key of a completed stage; empty when the stage has not run.
std::string stage_key_on_disk(const PipelineConfig& config, Stage stage) {
  const fs::path path = cache_path(config, stage);
  if (!fs::exists(path)) return {};
  std::ostringstream all;
  for (const auto& line : io::read_lines(path.string())) all << line << '\n';
  try {
    return nlohmann::json::parse(all.str()).at("key").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    return {};
  }
}

std::vector<std::string> stage_files_on_disk(const PipelineConfig& config,
                                             Stage stage) {
  const fs::path path = cache_path(config, stage);
  std::ostringstream all;
  for (const auto& line : io::read_lines(path.string())) all << line << '\n';
  try {
    return nlohmann::json::parse(all.str())
        .at("files")
        .get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    return {};
  }
}

void write_stage_cache(const PipelineConfig& config, Stage stage,
                       StageIo& io_state) {
  ordered_json j;
  j["key"] = io_state.key;
  std::sort(io_state.files.begin(), io_state.files.end());
  j["files"] = io_state.files;
  io::write_text(cache_path(config, stage).string(), j.dump(2) + "\n");
}

std::string require_stage(const PipelineConfig& config, Stage stage) {
  const std::string key = stage_key_on_disk(config, stage);
  if (key.empty()) {
    throw MissingIntermediateError(
        std::string("stage '") + to_string(stage) +
        "' has not produced outputs in " + config.out_dir +
        "; run it first");
  }
  return key;
}

std::string manifest_material(const PipelineConfig& config,
                              const std::vector<SubjectRecord>& records) {
  std::ostringstream material;
  material << "manifest=" << io::file_hash(config.manifest_path) << '\n';
  for (const auto& rec : records) {
    material << rec.subject_id << '='
             << io::content_hash(matrix_csv(rec.series, Layout::time_rows))
             << '\n';
  }
  return material.str();
}

ordered_json json_doubles(const std::vector<double>& values) {
  ordered_json arr = ordered_json::array();
  for (double v : values) arr.push_back(v);
  return arr;
}

nlohmann::json parse_json_file(const fs::path& path) {
  std::ostringstream all;
  for (const auto& line : io::read_lines(path.string())) all << line << '\n';
  try {
    return nlohmann::json::parse(all.str());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// --------------------------- cluster stage --------------------------------

void run_cluster_stage(const PipelineConfig& config) {
  const auto records = load_manifest(config.manifest_path);

  StageIo io_state{fs::path(config.out_dir), stage_path(config, Stage::cluster),
                   {}, {}};
  std::ostringstream material;
  material << "cluster|v1|seed=" << config.seed << "|k=" << config.k_range.lo
           << ".." << config.k_range.hi << "|restarts=" << config.restarts
           << '\n'
           << manifest_material(config, records);
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::cluster) == io_state.key) return;

  struct Result {
    ElbowResult elbow;
    KRange range;
    Matrix series;
  };
  std::vector<Result> results(records.size());
  parallel_for(static_cast<int>(records.size()), worker_count(config),
               [&](int i) {
                 const auto& rec = records[static_cast<std::size_t>(i)];
                 rec.series.validate();
                 auto& slot = results[static_cast<std::size_t>(i)];
                 slot.range =
                     resolve_k_range(config.k_range, rec.series.channels());
                 const std::uint64_t seed =
                     derive_seed(config.seed, "cluster", rec.subject_id);
                 slot.elbow = select_k_elbow(rec.series, slot.range, seed,
                                             config.restarts);
                 slot.series = kmeans_best(rec.series, slot.elbow.chosen_k,
                                           seed, config.restarts)
                                   .cluster_series;
               });

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& result = results[i];

    TimeSeriesMatrix cluster_series;
    cluster_series.channel_names = cluster_unit_names(result.elbow.chosen_k);
    cluster_series.data = result.series;
    const fs::path series_path =
        io_state.dir / (rec.subject_id + ".series.csv");
    write_matrix(series_path.string(), cluster_series, Layout::time_rows);
    io_state.wrote(series_path);

    ordered_json meta;
    meta["subject_id"] = rec.subject_id;
    meta["chosen_k"] = result.elbow.chosen_k;
    meta["k_lo"] = result.range.lo;
    meta["wcss_curve"] = json_doubles(result.elbow.wcss_curve);
    const fs::path meta_path = io_state.dir / (rec.subject_id + ".meta.json");
    io::write_text(meta_path.string(), meta.dump(2) + "\n");
    io_state.wrote(meta_path);
  }
  write_stage_cache(config, Stage::cluster, io_state);
}

// --------------------------- binarize stage -------------------------------

void write_sequence_files(StageIo& io_state, const std::string& subject_id,
                          const std::string& source,
                          const BinaryStateSequence& seq,
                          const std::vector<std::string>& units) {
  std::ostringstream codes;
  codes << "code\n";
  for (StateCode code : seq.codes) codes << code << '\n';
  const fs::path codes_path =
      io_state.dir / (subject_id + "." + source + ".codes.csv");
  io::write_text(codes_path.string(), codes.str());
  io_state.wrote(codes_path);

  ordered_json j;
  j["source"] = source;
  j["units"] = units;
  j["n_units"] = seq.n_units;
  std::vector<double> ratios(seq.activation_ratio.data(),
                             seq.activation_ratio.data() + seq.n_units);
  j["activation_ratio"] = json_doubles(ratios);
  const fs::path units_path =
      io_state.dir / (subject_id + "." + source + ".units.json");
  io::write_text(units_path.string(), j.dump(2) + "\n");
  io_state.wrote(units_path);
}

void run_binarize_stage(const PipelineConfig& config) {
  const std::string upstream = require_stage(config, Stage::cluster);
  const auto records = load_manifest(config.manifest_path);

  std::optional<AtlasMapping> atlas;
  if (!config.atlas_path.empty()) {
    atlas = load_atlas(config.atlas_path, records.front().series);
    validate_atlas_networks(*atlas);
  }

  StageIo io_state{fs::path(config.out_dir),
                   stage_path(config, Stage::binarize), {}, {}};
  std::ostringstream material;
  material << "binarize|v1|upstream=" << upstream << "|atlas="
           << (config.atlas_path.empty()
                   ? std::string("none")
                   : std::to_string(io::file_hash(config.atlas_path)))
           << '\n';
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::binarize) == io_state.key) return;

  const fs::path cluster_dir = stage_path(config, Stage::cluster);
  for (const auto& rec : records) {
    const fs::path series_path = cluster_dir / (rec.subject_id + ".series.csv");
    if (!fs::exists(series_path)) {
      throw MissingIntermediateError("missing cluster output " +
                                     series_path.string());
    }
    const TimeSeriesMatrix clusters =
        load_matrix(series_path.string(), Layout::time_rows);
    if (auto seq = binarize_with_drops(
            clusters.data, clusters.channel_names,
            rec.subject_id + "/" + kHighOrderSource, nullptr)) {
      write_sequence_files(io_state, rec.subject_id, kHighOrderSource, *seq,
                           cluster_unit_names(seq->n_units));
    }

    if (atlas) {
      for (Network network : canonical_networks()) {
        std::vector<std::string> members;
        Matrix selection =
            select_network_units(rec.series, *atlas, network, &members);
        std::vector<std::string> kept;
        if (auto seq = binarize_with_drops(
                std::move(selection), std::move(members),
                rec.subject_id + "/" + to_string(network), &kept)) {
          write_sequence_files(io_state, rec.subject_id, to_string(network),
                               *seq, kept);
        }
      }
    }
  }
  write_stage_cache(config, Stage::binarize, io_state);
}

// ------------------------------ fit stage ---------------------------------

std::vector<StateCode> read_codes(const fs::path& path) {
  const auto lines = io::read_lines(path.string());
  if (lines.empty() || lines.front() != "code") {
    throw ParseError(path.string() + ": expected a 'code' column");
  }
  std::vector<StateCode> codes;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    codes.push_back(static_cast<StateCode>(
        io::parse_long(lines[i], path.string() + ":" + std::to_string(i + 1))));
  }
  return codes;
}

void run_fit_stage(const PipelineConfig& config) {
  const std::string upstream = require_stage(config, Stage::binarize);
  const auto records = load_manifest(config.manifest_path);
  const auto sources = source_list(!config.atlas_path.empty());

  StageIo io_state{fs::path(config.out_dir), stage_path(config, Stage::fit),
                   {}, {}};
  std::ostringstream material;
  material << "fit|v1|upstream=" << upstream
           << "|tol=" << io::format_double(config.fit.tolerance)
           << "|cap=" << config.fit.max_iterations
           << "|lr=" << io::format_double(config.fit.learning_rate)
           << "|clamp=" << config.fit.clamp_degenerate
           << "|require=" << config.fit.require_convergence << '\n';
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::fit) == io_state.key) return;

  const fs::path binarize_dir = stage_path(config, Stage::binarize);
  struct Task {
    std::string subject_id;
    std::string source;
    fs::path codes_path;
  };
  std::vector<Task> tasks;
  for (const auto& rec : records) {
    for (const auto& source : sources) {
      fs::path codes_path =
          binarize_dir / (rec.subject_id + "." + source + ".codes.csv");
      if (fs::exists(codes_path)) {
        tasks.push_back({rec.subject_id, source, std::move(codes_path)});
      }
    }
  }
  if (tasks.empty()) {
    throw MissingIntermediateError("no binarized sequences found under " +
                                   binarize_dir.string());
  }

  std::vector<std::string> serialized(tasks.size());
  std::vector<char> accepted(tasks.size(), 0);
  parallel_for(static_cast<int>(tasks.size()), worker_count(config),
               [&](int i) {
                 const auto& task = tasks[static_cast<std::size_t>(i)];
                 const auto units_json = parse_json_file(
                     binarize_dir /
                     (task.subject_id + "." + task.source + ".units.json"));
                 const int n_units = units_json.at("n_units").get<int>();
                 const BinaryStateSequence seq =
                     sequence_from_codes(read_codes(task.codes_path), n_units);
                 const MemModel model = fit(seq, config.fit);
                 serialized[static_cast<std::size_t>(i)] =
                     serialize_model(model);
                 accepted[static_cast<std::size_t>(i)] =
                     model.fit.accepted &&
                             task.source == kHighOrderSource
                         ? 1
                         : 0;
               });

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const fs::path model_path =
        io_state.dir / (tasks[i].subject_id + "." + tasks[i].source +
                        ".model.json");
    io::write_text(model_path.string(), serialized[i]);
    io_state.wrote(model_path);
  }
  write_stage_cache(config, Stage::fit, io_state);

  if (std::find(accepted.begin(), accepted.end(), 1) == accepted.end()) {
    throw AllFitsRejectedError(
        "every subject's model fit was rejected; see " +
        io_state.dir.string());
  }
}

// --------------------------- landscape stage ------------------------------

void run_landscape_stage(const PipelineConfig& config) {
  const std::string upstream = require_stage(config, Stage::fit);
  const auto records = load_manifest(config.manifest_path);
  const auto sources = source_list(!config.atlas_path.empty());

  StageIo io_state{fs::path(config.out_dir),
                   stage_path(config, Stage::landscape), {}, {}};
  std::ostringstream material;
  material << "landscape|v1|upstream=" << upstream
           << "|fraction=" << io::format_double(config.fraction)
           << "|window=" << config.smooth_window << '\n';
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::landscape) == io_state.key) return;

  const fs::path binarize_dir = stage_path(config, Stage::binarize);
  const fs::path fit_dir = stage_path(config, Stage::fit);

  std::ostringstream features_csv;
  features_csv << "subject_id,source,label";
  for (const auto& name : feature_names()) features_csv << ',' << name;
  features_csv << '\n';

  for (const auto& rec : records) {
    for (const auto& source : sources) {
      const fs::path model_path =
          fit_dir / (rec.subject_id + "." + source + ".model.json");
      if (!fs::exists(model_path)) continue;
      std::ostringstream model_text;
      for (const auto& line : io::read_lines(model_path.string())) {
        model_text << line << '\n';
      }
      const MemModel model = deserialize_model(model_text.str());
      if (!model.fit.accepted) continue;  // rejected fits stay out of features

      const fs::path codes_path =
          binarize_dir / (rec.subject_id + "." + source + ".codes.csv");
      if (!fs::exists(codes_path)) {
        throw MissingIntermediateError("missing " + codes_path.string());
      }
      const BinaryStateSequence seq =
          sequence_from_codes(read_codes(codes_path), model.n_units);
      const EnergySeries series = energy_series(model, seq, source);
      const LandscapeFeatures features =
          extract_features(series, config.fraction, config.smooth_window);

      std::ostringstream extremes;
      extremes << "kind,value\n";
      for (double v : features.top) {
        extremes << "top," << io::format_double(v) << '\n';
      }
      for (double v : features.bottom) {
        extremes << "bottom," << io::format_double(v) << '\n';
      }
      const fs::path extremes_path =
          io_state.dir / (rec.subject_id + "." + source + ".extremes.csv");
      io::write_text(extremes_path.string(), extremes.str());
      io_state.wrote(extremes_path);

      if (features.upper_envelope.size() > 0) {
        std::ostringstream envelope;
        envelope << "t,lower,upper,energy\n";
        for (Eigen::Index t = 0; t < series.values.size(); ++t) {
          envelope << t << ',' << io::format_double(features.lower_envelope[t])
                   << ',' << io::format_double(features.upper_envelope[t])
                   << ',' << io::format_double(series.values[t]) << '\n';
        }
        const fs::path env_path =
            io_state.dir / (rec.subject_id + "." + source + ".envelope.csv");
        io::write_text(env_path.string(), envelope.str());
        io_state.wrote(env_path);
      }

      features_csv << rec.subject_id << ',' << source << ','
                   << to_string(rec.wm_label);
      for (Eigen::Index f = 0; f < features.feature_vector.size(); ++f) {
        features_csv << ',' << io::format_double(features.feature_vector[f]);
      }
      features_csv << '\n';
    }
  }

  const fs::path features_path = io_state.dir / "features.csv";
  io::write_text(features_path.string(), features_csv.str());
  io_state.wrote(features_path);
  write_stage_cache(config, Stage::landscape, io_state);
}

// ----------------------------- stats stage --------------------------------

struct FeatureRow {
  std::string subject_id;
  std::string source;
  WmLabel label;
  Vector features;
};

std::vector<FeatureRow> read_feature_rows(const fs::path& features_path) {
  const auto lines = io::read_lines(features_path.string());
  if (lines.empty()) throw ParseError(features_path.string() + ": empty");
  const auto header = io::split(lines.front(), ',');
  if (header.size() != 3 + feature_names().size()) {
    throw ParseError(features_path.string() + ": unexpected column count");
  }
  std::vector<FeatureRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = io::split(lines[i], ',');
    if (cells.size() != header.size()) {
      throw ParseError(features_path.string() + ":" + std::to_string(i + 1) +
                       ": ragged row");
    }
    FeatureRow row;
    row.subject_id = cells[0];
    row.source = cells[1];
    if (cells[2] == "low") {
      row.label = WmLabel::low;
    } else if (cells[2] == "high") {
      row.label = WmLabel::high;
    } else {
      throw ParseError(features_path.string() + ": bad label " + cells[2]);
    }
    row.features.resize(kFeatureCount);
    for (int f = 0; f < kFeatureCount; ++f) {
      row.features[f] = io::parse_double(
          cells[static_cast<std::size_t>(f) + 3],
          features_path.string() + ":" + std::to_string(i + 1));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SubjectAnalysis> analyses_from_files(const PipelineConfig& config) {
  const fs::path landscape_dir = stage_path(config, Stage::landscape);
  const fs::path features_path = landscape_dir / "features.csv";
  if (!fs::exists(features_path)) {
    throw MissingIntermediateError("missing " + features_path.string());
  }
  const auto rows = read_feature_rows(features_path);

  std::vector<SubjectAnalysis> analyses;
  for (const auto& row : rows) {
    if (analyses.empty() || analyses.back().subject_id != row.subject_id) {
      SubjectAnalysis subject;
      subject.subject_id = row.subject_id;
      subject.label = row.label;
      analyses.push_back(std::move(subject));
    }
    SourceAnalysis source;
    source.source = row.source;
    source.accepted = true;  // only accepted fits reach features.csv
    source.features.feature_vector = row.features;
    source.features.n_transitions = static_cast<int>(row.features[8]);

    const fs::path extremes_path =
        landscape_dir / (row.subject_id + "." + row.source + ".extremes.csv");
    if (!fs::exists(extremes_path)) {
      throw MissingIntermediateError("missing " + extremes_path.string());
    }
    const auto lines = io::read_lines(extremes_path.string());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto cells = io::split(lines[i], ',');
      if (cells.size() != 2) {
        throw ParseError(extremes_path.string() + ": ragged row");
      }
      const double value =
          io::parse_double(cells[1], extremes_path.string());
      (cells[0] == "top" ? source.features.top : source.features.bottom)
          .push_back(value);
    }
    analyses.back().sources.push_back(std::move(source));
  }
  return analyses;
}

void run_stats_stage(const PipelineConfig& config) {
  const std::string upstream = require_stage(config, Stage::landscape);

  StageIo io_state{fs::path(config.out_dir), stage_path(config, Stage::stats),
                   {}, {}};
  std::ostringstream material;
  material << "stats|v1|upstream=" << upstream
           << "|pool=" << config.pool_extremes
           << "|per_subject=" << config.per_subject_summary_tests << '\n';
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::stats) == io_state.key) return;

  const auto analyses = analyses_from_files(config);
  const auto comparisons = group_statistics(analyses, config);

  std::ostringstream csv;
  csv << "source,metric,n_low,n_high,u_statistic,p_value,method,median_low,"
         "median_high\n";
  for (const auto& cmp : comparisons) {
    csv << cmp.source << ',' << cmp.metric << ',' << cmp.test.n1 << ','
        << cmp.test.n2 << ',' << io::format_double(cmp.test.u_statistic) << ','
        << io::format_double(cmp.test.p_value) << ','
        << (cmp.test.method == TestMethod::exact ? "exact" : "normal_approx")
        << ',' << io::format_double(cmp.median_low) << ','
        << io::format_double(cmp.median_high) << '\n';
  }
  const fs::path tests_path = io_state.dir / "group_tests.csv";
  io::write_text(tests_path.string(), csv.str());
  io_state.wrote(tests_path);
  write_stage_cache(config, Stage::stats, io_state);
}

// ---------------------------- classify stage ------------------------------

FeatureTable table_from_rows(const std::vector<FeatureRow>& rows,
                             const std::vector<std::string>& sources) {
  // Rebuild the minimal analyses and reuse the shared table builder.
  std::vector<SubjectAnalysis> analyses;
  for (const auto& row : rows) {
    if (analyses.empty() || analyses.back().subject_id != row.subject_id) {
      SubjectAnalysis subject;
      subject.subject_id = row.subject_id;
      subject.label = row.label;
      analyses.push_back(std::move(subject));
    }
    SourceAnalysis source;
    source.source = row.source;
    source.accepted = true;
    source.features.feature_vector = row.features;
    analyses.back().sources.push_back(std::move(source));
  }
  return feature_table(analyses, sources);
}

void run_classify_stage(const PipelineConfig& config) {
  const std::string upstream = require_stage(config, Stage::landscape);

  StageIo io_state{fs::path(config.out_dir),
                   stage_path(config, Stage::classify), {}, {}};
  std::ostringstream material;
  material << "classify|v1|upstream=" << upstream << "|seed=" << config.seed
           << "|trees=" << config.forest.n_trees
           << "|depth=" << config.forest.max_depth
           << "|mtry=" << config.forest.features_per_split
           << "|bootstrap=" << config.forest.bootstrap
           << "|reps=" << config.forest.n_repetitions
           << "|grid=" << config.forest.grid_search << '\n';
  io_state.key = hex_key(material.str());
  if (stage_key_on_disk(config, Stage::classify) == io_state.key) return;

  const fs::path features_path =
      stage_path(config, Stage::landscape) / "features.csv";
  if (!fs::exists(features_path)) {
    throw MissingIntermediateError("missing " + features_path.string());
  }
  const auto rows = read_feature_rows(features_path);

  std::vector<std::string> sources;
  for (const auto& row : rows) {
    bool seen = false;
    for (const auto& s : sources) seen = seen || s == row.source;
    if (!seen) sources.push_back(row.source);
  }

  struct FeatureSet {
    std::string name;
    std::vector<std::string> sources;
  };
  std::vector<FeatureSet> sets;
  for (const auto& source : sources) sets.push_back({source, {source}});
  if (sources.size() > 1) sets.push_back({"combined", sources});

  for (const auto& set : sets) {
    const FeatureTable table = table_from_rows(rows, set.sources);
    const int n_pos =
        std::accumulate(table.labels.begin(), table.labels.end(), 0);
    if (table.rows() < 3 || n_pos == 0 ||
        n_pos == static_cast<int>(table.rows())) {
      emit_warning("feature set '" + set.name +
                   "' lacks enough labeled rows; classifier skipped");
      continue;
    }

    ForestConfig forest_config = config.forest;
    forest_config.seed = derive_seed(config.seed, "classify", set.name);
    const ClassifierReport report = loocv(table, forest_config);

    std::ostringstream metrics;
    metrics << "repetition,accuracy,f1,auc\n";
    for (std::size_t r = 0; r < report.per_repetition.size(); ++r) {
      const auto& m = report.per_repetition[r];
      metrics << r << ',' << io::format_double(m.accuracy) << ','
              << io::format_double(m.f1) << ',' << io::format_double(m.auc)
              << '\n';
    }
    const fs::path metrics_path = io_state.dir / (set.name + ".metrics.csv");
    io::write_text(metrics_path.string(), metrics.str());
    io_state.wrote(metrics_path);

    ordered_json summary;
    summary["feature_set"] = set.name;
    summary["rows"] = static_cast<int>(table.rows());
    summary["features"] = static_cast<int>(table.features());
    summary["repetitions"] = static_cast<int>(report.per_repetition.size());
    summary["mean_accuracy"] = report.mean_accuracy;
    summary["mean_f1"] = report.mean_f1;
    summary["mean_auc"] = report.mean_auc;
    const fs::path summary_path = io_state.dir / (set.name + ".summary.json");
    io::write_text(summary_path.string(), summary.dump(2) + "\n");
    io_state.wrote(summary_path);

    if (set.name == "combined") {
      std::ostringstream importances;
      importances << "repetition,rank,feature,score\n";
      for (std::size_t r = 0; r < report.importances.size(); ++r) {
        const auto& ranking = report.importances[r];
        for (std::size_t rank = 0; rank < ranking.size(); ++rank) {
          importances << r << ',' << rank + 1 << ','
                      << table.feature_names[static_cast<std::size_t>(
                             ranking[rank].first)]
                      << ',' << io::format_double(ranking[rank].second) << '\n';
        }
      }
      const fs::path imp_path = io_state.dir / "combined.importances.csv";
      io::write_text(imp_path.string(), importances.str());
      io_state.wrote(imp_path);

      std::ostringstream top_s;
      top_s << "s,high_order_fraction,low_order_fraction,std_error,p_value\n";
      for (const auto& [s, prop] : report.top_s_proportions) {
        top_s << s << ',' << io::format_double(prop.high_fraction) << ','
              << io::format_double(prop.low_fraction) << ','
              << io::format_double(prop.std_error) << ','
              << io::format_double(prop.p_value) << '\n';
      }
      const fs::path top_s_path = io_state.dir / "combined.top_s.csv";
      io::write_text(top_s_path.string(), top_s.str());
      io_state.wrote(top_s_path);
    }
  }
  write_stage_cache(config, Stage::classify, io_state);
}

// ----------------------------- run assembly -------------------------------

void write_bundle_summary(const PipelineConfig& config) {
  const fs::path base(config.out_dir);
  const auto records = load_manifest(config.manifest_path);
  const auto sources = source_list(!config.atlas_path.empty());

  ordered_json status;
  status["subjects"] = ordered_json::array();
  for (const auto& rec : records) {
    ordered_json subject;
    subject["subject_id"] = rec.subject_id;
    subject["label"] = to_string(rec.wm_label);
    const fs::path meta_path =
        stage_path(config, Stage::cluster) / (rec.subject_id + ".meta.json");
    if (fs::exists(meta_path)) {
      subject["chosen_k"] = parse_json_file(meta_path).at("chosen_k");
    }
    subject["sources"] = ordered_json::array();
    for (const auto& source : sources) {
      ordered_json entry;
      entry["source"] = source;
      const fs::path model_path = stage_path(config, Stage::fit) /
                                  (rec.subject_id + "." + source +
                                   ".model.json");
      if (!fs::exists(model_path)) {
        entry["skipped"] = true;
      } else {
        const auto model = parse_json_file(model_path);
        entry["n_units"] = model.at("n_units");
        entry["accepted"] = model.at("fit").at("accepted");
        entry["converged"] = model.at("fit").at("converged");
        entry["iterations"] = model.at("fit").at("iterations");
        entry["moment_correlation"] = model.at("fit").at("moment_correlation");
      }
      subject["sources"].push_back(std::move(entry));
    }
    status["subjects"].push_back(std::move(subject));
  }
  io::write_text((base / "status.json").string(), status.dump(2) + "\n");

  std::vector<std::string> files;
  for (Stage stage : {Stage::cluster, Stage::binarize, Stage::fit,
                      Stage::landscape, Stage::stats, Stage::classify}) {
    const auto stage_files = stage_files_on_disk(config, stage);
    files.insert(files.end(), stage_files.begin(), stage_files.end());
    files.push_back(StageIo{base, {}, {}, {}}.rel(cache_path(config, stage)));
  }
  files.emplace_back("status.json");
  std::sort(files.begin(), files.end());
  ordered_json outputs;
  outputs["files"] = files;
  io::write_text((base / "outputs.json").string(), outputs.dump(2) + "\n");
}

}  // namespace

void run_stage(Stage stage, const PipelineConfig& config) {
  validate_config(config);
  switch (stage) {
    case Stage::cluster: run_cluster_stage(config); return;
    case Stage::binarize: run_binarize_stage(config); return;
    case Stage::fit: run_fit_stage(config); return;
    case Stage::landscape: run_landscape_stage(config); return;
    case Stage::stats: run_stats_stage(config); return;
    case Stage::classify: run_classify_stage(config); return;
  }
  throw ValidationError("unknown stage");
}

void run_pipeline(const PipelineConfig& config) {
  validate_config(config);
  for (Stage stage : {Stage::cluster, Stage::binarize, Stage::fit,
                      Stage::landscape, Stage::stats, Stage::classify}) {
    run_stage(stage, config);
  }
  write_bundle_summary(config);
}

namespace {

int run_cli(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const MissingIntermediateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const AllFitsRejectedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const NonConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int run_pipeline_cli(const PipelineConfig& config) {
  return run_cli([&] { run_pipeline(config); });
}

int run_stage_cli(Stage stage, const PipelineConfig& config) {
  return run_cli([&] { run_stage(stage, config); });
}

}  // namespace elsa
