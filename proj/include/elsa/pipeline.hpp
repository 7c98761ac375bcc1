#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elsa/cluster.hpp"
#include "elsa/dataset.hpp"
#include "elsa/forest.hpp"
#include "elsa/ingest.hpp"
#include "elsa/landscape.hpp"
#include "elsa/mem.hpp"
#include "elsa/stats.hpp"
#include "elsa/synth.hpp"

namespace elsa {

// End-to-end orchestration. Each stage is a pure files-in/files-out function
// over the output directory, cached by a content hash of its inputs, so
// downstream parameter sweeps never re-fit upstream models. Reruns with an
// identical config and seed produce byte-identical bundles.

struct PipelineConfig {
  std::string manifest_path;
  std::string atlas_path;  // empty = high-order analysis only
  std::string out_dir;
  std::uint64_t seed = 0;

  KRange k_range{2, 0};  // hi = 0 resolves to min(12, R - 1) per subject
  int restarts = 10;

  double fraction = kDefaultExtremeFraction;
  int smooth_window = kDefaultSmoothWindow;

  FitConfig fit;
  ForestConfig forest{.n_trees = 100, .max_depth = 0, .features_per_split = 0,
                      .bootstrap = true, .seed = 0, .n_repetitions = 30,
                      .grid_search = true};

  bool pool_extremes = true;  // Fig.3-style pooled extreme-value tests
  bool per_subject_summary_tests = false;  // add per-feature subject-level tests

  int jobs = 0;  // worker pool bound; 0 = hardware concurrency

  static PipelineConfig from_json_file(const std::string& path);
  void merge_json_file(const std::string& path);  // overlay file onto *this
  std::string to_json() const;
};

enum class Stage { cluster, binarize, fit, landscape, stats, classify };

Stage parse_stage(const std::string& name);
const char* to_string(Stage stage);

// ---------------------------------------------------------------------------
// In-memory analysis API (what the staged runner is built on)
// ---------------------------------------------------------------------------

struct SourceAnalysis {
  std::string source;                   // "high_order" or network name
  std::vector<std::string> unit_names;  // after degenerate-unit drops
  BinaryStateSequence sequence;
  MemModel model;
  EnergySeries series;
  LandscapeFeatures features;
  bool accepted = false;
};

struct SubjectAnalysis {
  std::string subject_id;
  WmLabel label = WmLabel::high;
  int chosen_k = 0;
  std::vector<double> wcss_curve;
  std::vector<SourceAnalysis> sources;
};

/// Cluster -> binarize -> fit -> landscape for one subject, high-order branch
/// plus one branch per canonical network when an atlas is given.
SubjectAnalysis analyze_subject(const SubjectRecord& record,
                                const AtlasMapping* atlas,
                                const PipelineConfig& config);

/// All subjects through analyze_subject on a bounded worker pool; results in
/// manifest order. Throws AllFitsRejectedError when no subject has an
/// accepted high-order fit.
std::vector<SubjectAnalysis> analyze_cohort(
    const std::vector<SubjectRecord>& records, const AtlasMapping* atlas,
    const PipelineConfig& config);

/// Group-difference tests per source: pooled top/bottom extreme values
/// (paper-style distribution-level comparisons) plus per-subject transition
/// count and mean magnitude; optionally per-feature subject-level tests.
std::vector<GroupComparison> group_statistics(
    const std::vector<SubjectAnalysis>& analyses, const PipelineConfig& config);

/// Feature table over the given sources (subjects with every requested
/// source accepted). Column names are "<source>.<feature>", tagged by source.
FeatureTable feature_table(const std::vector<SubjectAnalysis>& analyses,
                           const std::vector<std::string>& sources);

/// Source tags present across analyses, high_order first.
std::vector<std::string> analysis_sources(
    const std::vector<SubjectAnalysis>& analyses);

// ---------------------------------------------------------------------------
// Staged file runner
// ---------------------------------------------------------------------------

/// Runs one stage against cached intermediates in config.out_dir.
/// Throws MissingIntermediateError when a required upstream output is absent.
void run_stage(Stage stage, const PipelineConfig& config);

/// All stages in order; writes outputs.json and status.json at the end.
void run_pipeline(const PipelineConfig& config);

/// CLI wrappers: print errors and map them to exit codes
/// (0 ok, 2 validation/input, 3 all fits rejected, 4 missing intermediate,
/// 1 anything else).
int run_pipeline_cli(const PipelineConfig& config);
int run_stage_cli(Stage stage, const PipelineConfig& config);

}  // namespace elsa
