#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "topocontro/matrix.hpp"

namespace topocontro {

enum class ModelKind { AdaBoost, RandomForest, Mlp };
enum class MaxFeatures { Sqrt, Log2, All };
enum class Activation { Relu, Tanh, Logistic, Identity };
enum class Optimizer { Adam, Sgd };

std::string_view to_string(ModelKind k);
std::string_view to_string(MaxFeatures m);
std::string_view to_string(Activation a);
std::string_view to_string(Optimizer o);
/// Accepts "adaboost", "random_forest"/"rf", "mlp".
ModelKind model_kind_from_string(std::string_view s);
MaxFeatures max_features_from_string(std::string_view s);
Activation activation_from_string(std::string_view s);
Optimizer optimizer_from_string(std::string_view s);

struct AdaBoostConfig {
    int n_estimators = 100;
    double learning_rate = 0.5;
    bool operator==(const AdaBoostConfig&) const = default;
};

struct ForestConfig {
    int n_estimators = 100;
    MaxFeatures max_features = MaxFeatures::Sqrt;
    std::optional<int> max_depth;  // empty: grow until pure
    bool bootstrap = true;
    bool operator==(const ForestConfig&) const = default;
};

struct MlpConfig {
    std::vector<int> hidden_sizes{64};  // empty: logistic regression
    Activation activation = Activation::Relu;
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    double l2_alpha = 1e-3;
    int epochs = 200;
    int batch_size = 32;
    bool operator==(const MlpConfig&) const = default;
};

struct TrainingConfig {
    AdaBoostConfig adaboost;
    ForestConfig random_forest;
    MlpConfig mlp;

    /// Throws Error when a count is < 1 or a rate is not positive.
    void validate() const;
    bool operator==(const TrainingConfig&) const = default;
};

nlohmann::json to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Parameters

/// h(x) = polarity if x[feature] > threshold, else -polarity.
struct Stump {
    std::size_t feature = 0;
    double threshold = 0.0;
    int polarity = 1;
    double alpha = 0.0;
    bool operator==(const Stump&) const = default;
};

struct AdaBoostParams {
    std::vector<Stump> stumps;
    std::vector<double> round_error;  // weighted error of each retained round
    std::vector<double> loss_bound;   // running product of normalizers Z_t
    bool operator==(const AdaBoostParams&) const = default;
};

struct TreeNode {
    // Internal node when left >= 0; leaf otherwise.
    std::int32_t left = -1, right = -1;
    std::size_t feature = 0;
    double threshold = 0.0;  // x[feature] <= threshold goes left
    double value = 0.0;      // leaf: fraction of class 1
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // root at 0
    double predict(std::span<const double> x) const;
    std::size_t depth() const;
    bool operator==(const Tree&) const = default;
};

struct ForestParams {
    std::vector<Tree> trees;
    bool operator==(const ForestParams&) const = default;
};

struct DenseLayer {
    Matrix weights;  // out x in
    std::vector<double> bias;
    bool operator==(const DenseLayer&) const = default;
};

struct MlpParams {
    std::vector<DenseLayer> layers;  // last layer has one output (logit)
    Activation activation = Activation::Relu;
    bool operator==(const MlpParams&) const = default;
};

struct TrainedModel {
    ModelKind kind = ModelKind::AdaBoost;
    std::size_t feature_dim = 0;
    std::uint64_t seed = 0;
    TrainingConfig config;
    std::variant<AdaBoostParams, ForestParams, MlpParams> params;
    bool operator==(const TrainedModel&) const = default;
};

struct Prediction {
    std::vector<int> labels;
    std::vector<double> scores;  // in [0, 1]; label = score > 0.5
};

// ---------------------------------------------------------------------------
// Training

TrainedModel train_adaboost(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                            std::uint64_t seed);
TrainedModel train_random_forest(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                                 std::uint64_t seed, unsigned jobs = 1);
TrainedModel train_mlp(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg, std::uint64_t seed);
TrainedModel train(ModelKind kind, const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                   std::uint64_t seed, unsigned jobs = 1);

Prediction predict(const TrainedModel& model, const Matrix& x);

// Building blocks exposed for verification.

/// Bootstrap sample of size n drawn with the tree's own seed.
std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t tree_seed);
/// Seed of tree t of a forest trained with `seed`.
std::uint64_t tree_seed(std::uint64_t seed, std::size_t t);
/// Candidate feature count per split: ceil(sqrt(d)), ceil(log2(d)) or d, at least 1.
std::size_t candidate_feature_count(MaxFeatures rule, std::size_t d);

MlpParams init_mlp(std::size_t input_dim, const MlpConfig& cfg, std::uint64_t seed);
double mlp_logit(const MlpParams& p, std::span<const double> x);
/// Mean binary cross-entropy plus (alpha / 2n) * sum of squared weights (biases excluded).
double mlp_loss(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha);
/// Analytic gradient of mlp_loss, flattened in parameter order (per layer: weights row-major, then bias).
std::vector<double> mlp_gradient(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha);
/// Smallest |pre-activation| over hidden units and rows; finite differences are unreliable near relu's kink.
double min_abs_preactivation(const MlpParams& p, const Matrix& x);
/// Max over parameters of |analytic - numeric| / max(|analytic| + |numeric|, 1e-7), central differences h = 1e-5.
double gradient_check(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha);

// ---------------------------------------------------------------------------
// Persistence and model selection

inline constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const TrainedModel& m);
TrainedModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const TrainedModel& m);
TrainedModel load_model(const std::filesystem::path& path);

/// Built-in grid of at most 12 configurations around `base` for one model kind.
std::vector<TrainingConfig> default_grid(ModelKind kind, const TrainingConfig& base = {});

struct GridResult {
    TrainingConfig best;
    std::vector<double> scores;  // mean macro F1 per grid point
    std::size_t best_index = 0;
};

/// Stratified k-fold search scored by macro F1; ties go to the earliest grid point.
GridResult grid_search(ModelKind kind, const Matrix& x, std::span<const int> y,
                       const std::vector<TrainingConfig>& grid, std::uint64_t seed, int folds = 3,
                       unsigned jobs = 1);

}  // namespace topocontro
