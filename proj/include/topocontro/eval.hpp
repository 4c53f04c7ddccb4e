#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "topocontro/features.hpp"
#include "topocontro/ingest.hpp"
#include "topocontro/learn.hpp"

namespace topocontro {

/// A: majority undersampled to the minority count. B: both classes resampled to
/// a common size M = factor x minority. C: natural distribution.
enum class TrainScenario { A, B, C };
/// a: test split undersampled to balance. c: natural test split.
enum class TestScenario { a, c };

std::string_view to_string(TrainScenario s);
std::string_view to_string(TestScenario s);
TrainScenario train_scenario_from_string(std::string_view s);

struct Split {
    std::vector<std::size_t> train;  // sorted row indices
    std::vector<std::size_t> test;
};

/// Stratified split; each class contributes round(frac * n_c) training rows,
/// clamped so both sides keep at least one row. Throws when a class has < 2 rows.
Split stratified_split(std::span<const int> labels, double train_frac, std::uint64_t seed);

/// Returns row indices (repeats possible for B) drawn from `rows`.
std::vector<std::size_t> resample_train(std::span<const std::size_t> rows, std::span<const int> labels,
                                        TrainScenario scenario, std::uint64_t seed, double oversample_factor = 2.0);
std::vector<std::size_t> resample_test(std::span<const std::size_t> rows, std::span<const int> labels,
                                       TestScenario scenario, std::uint64_t seed);

struct Metrics {
    double f1_controversial = 0.0;
    double f1_noncontroversial = 0.0;
    std::size_t support_controversial = 0;
    std::size_t support_noncontroversial = 0;
};

/// Per-class F1 with F1 = 0 when precision + recall = 0.
Metrics f1_per_class(std::span<const int> y_true, std::span<const int> y_pred);

struct ImbalanceImpactScore {
    double value = 0.0;
    double fa = 0.0;
    double fc = 0.0;
};

/// 100 * fa * fc * (1 - |fa - fc|); throws when an input is outside [0, 1].
ImbalanceImpactScore imbalance_impact(double fa, double fc);

// ---------------------------------------------------------------------------

struct EvalConfig {
    std::vector<TrainScenario> train_scenarios{TrainScenario::A, TrainScenario::B, TrainScenario::C};
    double train_frac = 0.8;
    double oversample_factor = 2.0;
    bool standardize = true;
    bool grid = false;  // pick hyperparameters per cell by k-fold search on the training split
    TrainingConfig training;
    unsigned jobs = 1;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    double fc_a = 0.0, fc_c = 0.0, impact = 0.0;
    std::size_t train_rows = 0, test_rows_a = 0, test_rows_c = 0;
};

struct ReportRow {
    TrainScenario scenario = TrainScenario::A;
    ModelKind model = ModelKind::AdaBoost;
    std::string features;
    double fc_a_mean = 0, fc_a_sd = 0;
    double fc_c_mean = 0, fc_c_sd = 0;
    double impact_mean = 0, impact_sd = 0;
    std::vector<SeedOutcome> seeds;
    std::optional<std::string> error;  // set when the cell failed
};

struct EvalReport {
    std::vector<ReportRow> rows;  // ordered by model, features, scenario

    const ReportRow* find(TrainScenario s, ModelKind m, std::string_view features) const;
};

/// For every (train scenario, model, feature set): one model per seed, trained on
/// the resampled training split and scored on the same test split under both
/// test scenarios. Cell failures are recorded in the row instead of aborting.
EvalReport run_matrix(const FeatureMatrix& features, const std::vector<FeatureSet>& sets,
                      const std::vector<ModelKind>& models, const std::vector<std::uint64_t>& seeds,
                      const EvalConfig& cfg);

/// Sample mean and standard deviation (sd = 0 for a single value).
std::pair<double, double> mean_sd(std::span<const double> v);

void write_report_csv(std::ostream& out, const EvalReport& r);
void write_report_csv(const std::filesystem::path& path, const EvalReport& r);
std::string render_report_markdown(const EvalReport& r);
nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Kernel density curves of upvote ratio per label as a standalone SVG.
std::string ur_density_svg(const LabeledStore& store);

}  // namespace topocontro
