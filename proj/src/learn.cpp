#include "topocontro/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "topocontro/common.hpp"

namespace topocontro {

using nlohmann::json;

namespace {

void check_training_data(const Matrix& x, std::span<const int> y) {
    if (x.rows() != y.size())
        throw Error(fmt::format("{} feature rows but {} labels", x.rows(), y.size()));
    if (x.rows() < 2) throw Error("need at least 2 training rows");
    if (x.cols() == 0) throw Error("no feature columns");
    bool has0 = false, has1 = false;
    for (int v : y) {
        if (v != 0 && v != 1) throw Error(fmt::format("labels must be 0 or 1, found {}", v));
        (v ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw Error("degenerate labels: training data has a single class");
    for (double v : x.data())
        if (!std::isfinite(v)) throw Error("training features contain NaN or infinity");
}

double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

// ---------------------------------------------------------------------------
// Names and configuration

std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::AdaBoost: return "adaboost";
        case ModelKind::RandomForest: return "random_forest";
        case ModelKind::Mlp: return "mlp";
    }
    return "?";
}

std::string_view to_string(MaxFeatures m) {
    switch (m) {
        case MaxFeatures::Sqrt: return "sqrt";
        case MaxFeatures::Log2: return "log2";
        case MaxFeatures::All: return "all";
    }
    return "?";
}

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Logistic: return "logistic";
        case Activation::Identity: return "identity";
    }
    return "?";
}

std::string_view to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "adaboost") return ModelKind::AdaBoost;
    if (s == "random_forest" || s == "rf") return ModelKind::RandomForest;
    if (s == "mlp") return ModelKind::Mlp;
    throw Error(fmt::format("unknown model '{}' (expected adaboost, random_forest or mlp)", s));
}

MaxFeatures max_features_from_string(std::string_view s) {
    if (s == "sqrt") return MaxFeatures::Sqrt;
    if (s == "log2") return MaxFeatures::Log2;
    if (s == "all") return MaxFeatures::All;
    throw Error(fmt::format("unknown max_features rule '{}'", s));
}

Activation activation_from_string(std::string_view s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "logistic") return Activation::Logistic;
    if (s == "identity") return Activation::Identity;
    throw Error(fmt::format("unknown activation '{}'", s));
}

Optimizer optimizer_from_string(std::string_view s) {
    if (s == "adam") return Optimizer::Adam;
    if (s == "sgd") return Optimizer::Sgd;
    throw Error(fmt::format("unknown optimizer '{}'", s));
}

void TrainingConfig::validate() const {
    auto need = [](bool ok, std::string_view what) {
        if (!ok) throw Error(fmt::format("invalid training config: {}", what));
    };
    need(adaboost.n_estimators >= 1, "adaboost.n_estimators must be >= 1");
    need(adaboost.learning_rate > 0, "adaboost.learning_rate must be > 0");
    need(random_forest.n_estimators >= 1, "random_forest.n_estimators must be >= 1");
    need(!random_forest.max_depth || *random_forest.max_depth >= 1, "random_forest.max_depth must be >= 1");
    for (int h : mlp.hidden_sizes) need(h >= 1, "mlp.hidden_sizes entries must be >= 1");
    need(mlp.learning_rate > 0, "mlp.learning_rate must be > 0");
    need(mlp.l2_alpha >= 0, "mlp.l2_alpha must be >= 0");
    need(mlp.epochs >= 0, "mlp.epochs must be >= 0");
    need(mlp.batch_size >= 1, "mlp.batch_size must be >= 1");
}

json to_json(const TrainingConfig& c) {
    json rf = {{"n_estimators", c.random_forest.n_estimators},
               {"max_features", to_string(c.random_forest.max_features)},
               {"max_depth", nullptr},
               {"bootstrap", c.random_forest.bootstrap}};
    if (c.random_forest.max_depth) rf["max_depth"] = *c.random_forest.max_depth;
    return {{"adaboost", {{"n_estimators", c.adaboost.n_estimators}, {"learning_rate", c.adaboost.learning_rate}}},
            {"random_forest", rf},
            {"mlp",
             {{"hidden_sizes", c.mlp.hidden_sizes},
              {"activation", to_string(c.mlp.activation)},
              {"optimizer", to_string(c.mlp.optimizer)},
              {"learning_rate", c.mlp.learning_rate},
              {"l2_alpha", c.mlp.l2_alpha},
              {"epochs", c.mlp.epochs},
              {"batch_size", c.mlp.batch_size}}}};
}

TrainingConfig training_config_from_json(const json& j) {
    TrainingConfig c;
    const auto& a = j.at("adaboost");
    c.adaboost.n_estimators = a.at("n_estimators").get<int>();
    c.adaboost.learning_rate = a.at("learning_rate").get<double>();
    const auto& rf = j.at("random_forest");
    c.random_forest.n_estimators = rf.at("n_estimators").get<int>();
    c.random_forest.max_features = max_features_from_string(rf.at("max_features").get<std::string>());
    if (!rf.at("max_depth").is_null()) c.random_forest.max_depth = rf.at("max_depth").get<int>();
    c.random_forest.bootstrap = rf.value("bootstrap", true);
    const auto& m = j.at("mlp");
    c.mlp.hidden_sizes = m.at("hidden_sizes").get<std::vector<int>>();
    c.mlp.activation = activation_from_string(m.at("activation").get<std::string>());
    c.mlp.optimizer = optimizer_from_string(m.value("optimizer", std::string("adam")));
    c.mlp.learning_rate = m.at("learning_rate").get<double>();
    c.mlp.l2_alpha = m.at("l2_alpha").get<double>();
    c.mlp.epochs = m.at("epochs").get<int>();
    c.mlp.batch_size = m.at("batch_size").get<int>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// AdaBoost

namespace {

int stump_output(const Stump& s, std::span<const double> x) {
    return x[s.feature] > s.threshold ? s.polarity : -s.polarity;
}

}  // namespace

TrainedModel train_adaboost(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                            std::uint64_t seed) {
    cfg.validate();
    check_training_data(x, y);
    const std::size_t n = x.rows(), d = x.cols();
    const double lowest = std::numeric_limits<double>::lowest();

    std::vector<std::vector<std::size_t>> order(d, std::vector<std::size_t>(n));
    for (std::size_t f = 0; f < d; ++f) {
        std::iota(order[f].begin(), order[f].end(), std::size_t{0});
        std::stable_sort(order[f].begin(), order[f].end(),
                         [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
    }

    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[i] ? 1 : -1;
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    AdaBoostParams p;
    double bound = 1.0;

    for (int round = 0; round < cfg.adaboost.n_estimators; ++round) {
        double w_pos = 0, w_neg = 0;
        for (std::size_t i = 0; i < n; ++i) (ys[i] > 0 ? w_pos : w_neg) += w[i];

        Stump best;
        double best_err = kInf;
        auto consider = [&](std::size_t f, double thr, double err_plus) {
            const double err_minus = (w_pos + w_neg) - err_plus;
            if (err_plus < best_err) {
                best_err = err_plus;
                best = {f, thr, 1, 0.0};
            }
            if (err_minus < best_err) {
                best_err = err_minus;
                best = {f, thr, -1, 0.0};
            }
        };
        for (std::size_t f = 0; f < d; ++f) {
            const auto& ord = order[f];
            double err_plus = w_neg;  // everything predicted +1
            consider(f, lowest, err_plus);
            for (std::size_t k = 0; k < n;) {
                const double v = x(ord[k], f);
                std::size_t e = k;
                for (; e < n && x(ord[e], f) == v; ++e) err_plus += ys[ord[e]] > 0 ? w[ord[e]] : -w[ord[e]];
                if (e == n) break;
                consider(f, v + (x(ord[e], f) - v) / 2.0, err_plus);
                k = e;
            }
        }

        // Exact weighted error of the chosen stump; the sweep accumulates rounding.
        double eps = 0;
        std::vector<int> h(n);
        for (std::size_t i = 0; i < n; ++i) {
            h[i] = stump_output(best, x.row(i));
            if (h[i] != ys[i]) eps += w[i];
        }
        if (eps >= 0.5) break;
        const bool perfect = eps <= 0.0;
        const double eps_c = std::max(eps, 1e-10);
        best.alpha = cfg.adaboost.learning_rate * 0.5 * std::log((1.0 - eps_c) / eps_c);

        double z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] *= std::exp(-best.alpha * ys[i] * h[i]);
            z += w[i];
        }
        double sum = 0;
        for (auto& wi : w) sum += (wi /= z);
        if (std::abs(sum - 1.0) > 1e-12) throw Error(fmt::format("adaboost: weights sum to {} after round {}", sum, round));
        if (z > 1.0 + 1e-12) throw Error(fmt::format("adaboost: loss bound increased in round {}", round));
        bound *= z;

        p.stumps.push_back(best);
        p.round_error.push_back(eps);
        p.loss_bound.push_back(bound);
        if (perfect) break;
    }

    TrainedModel m;
    m.kind = ModelKind::AdaBoost;
    m.feature_dim = d;
    m.seed = seed;
    m.config = cfg;
    m.params = std::move(p);
    return m;
}

// ---------------------------------------------------------------------------
// Random forest

double Tree::predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].left >= 0)
        i = static_cast<std::size_t>(x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
    return nodes[i].value;
}

std::size_t Tree::depth() const {
    std::vector<std::size_t> dep(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, dep[i]);
        if (nodes[i].left >= 0) {
            dep[static_cast<std::size_t>(nodes[i].left)] = dep[i] + 1;
            dep[static_cast<std::size_t>(nodes[i].right)] = dep[i] + 1;
        }
    }
    return best;
}

std::uint64_t tree_seed(std::uint64_t seed, std::size_t t) { return derive_seed(seed, 0x7265650000ULL + t); }

std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    return idx;
}

std::size_t candidate_feature_count(MaxFeatures rule, std::size_t d) {
    const double dd = static_cast<double>(d);
    double k = dd;
    if (rule == MaxFeatures::Sqrt) k = std::ceil(std::sqrt(dd));
    if (rule == MaxFeatures::Log2) k = std::ceil(std::log2(dd));
    return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, std::max<std::size_t>(d, 1));
}

namespace {

struct SplitChoice {
    bool valid = false;
    double impurity = kInf;
    double threshold = 0;
};

// Weighted Gini of the best threshold on one feature; samples may repeat.
SplitChoice best_split(const Matrix& x, std::span<const int> y, std::span<const std::size_t> samples,
                       std::size_t f, std::vector<std::pair<double, int>>& buf) {
    buf.clear();
    for (auto s : samples) buf.emplace_back(x(s, f), y[s]);
    std::sort(buf.begin(), buf.end());
    const double n = static_cast<double>(buf.size());
    double total_pos = 0;
    for (const auto& [v, l] : buf) total_pos += l;
    SplitChoice best;
    double left_n = 0, left_pos = 0;
    for (std::size_t k = 0; k + 1 < buf.size(); ++k) {
        left_n += 1;
        left_pos += buf[k].second;
        if (buf[k].first == buf[k + 1].first) continue;
        const double right_n = n - left_n, right_pos = total_pos - left_pos;
        const double pl = left_pos / left_n, pr = right_pos / right_n;
        const double imp = (left_n * 2 * pl * (1 - pl) + right_n * 2 * pr * (1 - pr)) / n;
        if (imp < best.impurity) {
            best.valid = true;
            best.impurity = imp;
            best.threshold = buf[k].first + (buf[k + 1].first - buf[k].first) / 2.0;
        }
    }
    return best;
}

Tree grow_tree(const Matrix& x, std::span<const int> y, std::vector<std::size_t> samples, const ForestConfig& cfg,
               std::uint64_t seed) {
    Rng rng(derive_seed(seed, 1));
    const std::size_t d = x.cols();
    const std::size_t k = candidate_feature_count(cfg.max_features, d);
    Tree tree;
    struct Pending {
        std::size_t node;
        std::vector<std::size_t> samples;
        int depth;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, std::move(samples), 0});
    std::vector<std::pair<double, int>> buf;

    while (!stack.empty()) {
        Pending cur = std::move(stack.back());
        stack.pop_back();
        double pos = 0;
        for (auto s : cur.samples) pos += y[s];
        const double frac = pos / static_cast<double>(cur.samples.size());
        tree.nodes[cur.node].value = frac;
        const bool pure = pos == 0 || pos == static_cast<double>(cur.samples.size());
        if (pure || cur.samples.size() < 2 || (cfg.max_depth && cur.depth >= *cfg.max_depth)) continue;

        const auto perm = rng.sample_without_replacement(d, d);
        std::vector<std::size_t> cand(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(cand.begin(), cand.end());
        SplitChoice best;
        std::size_t best_f = 0;
        for (auto f : cand) {
            auto s = best_split(x, y, cur.samples, f, buf);
            if (s.valid && s.impurity < best.impurity) {
                best = s;
                best_f = f;
            }
        }
        // No candidate varies here: keep drawing features until one does.
        for (std::size_t i = k; !best.valid && i < d; ++i) {
            auto s = best_split(x, y, cur.samples, perm[i], buf);
            if (s.valid) {
                best = s;
                best_f = perm[i];
            }
        }
        if (!best.valid) continue;

        std::vector<std::size_t> left, right;
        for (auto s : cur.samples) (x(s, best_f) <= best.threshold ? left : right).push_back(s);
        const auto li = tree.nodes.size();
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[cur.node];
        node.feature = best_f;
        node.threshold = best.threshold;
        node.left = static_cast<std::int32_t>(li);
        node.right = static_cast<std::int32_t>(li + 1);
        stack.push_back({li + 1, std::move(right), cur.depth + 1});
        stack.push_back({li, std::move(left), cur.depth + 1});
    }
    return tree;
}

}  // namespace

TrainedModel train_random_forest(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                                 std::uint64_t seed, unsigned jobs) {
    cfg.validate();
    check_training_data(x, y);
    const auto& fc = cfg.random_forest;
    ForestParams p;
    p.trees.resize(static_cast<std::size_t>(fc.n_estimators));
    parallel_for(p.trees.size(), jobs, [&](std::size_t t) {
        const auto ts = tree_seed(seed, t);
        std::vector<std::size_t> samples;
        if (fc.bootstrap) {
            samples = bootstrap_indices(x.rows(), ts);
        } else {
            samples.resize(x.rows());
            std::iota(samples.begin(), samples.end(), std::size_t{0});
        }
        p.trees[t] = grow_tree(x, y, std::move(samples), fc, ts);
    });
    TrainedModel m;
    m.kind = ModelKind::RandomForest;
    m.feature_dim = x.cols();
    m.seed = seed;
    m.config = cfg;
    m.params = std::move(p);
    return m;
}

// ---------------------------------------------------------------------------
// MLP

namespace {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::Relu: return z > 0 ? z : 0.0;
        case Activation::Tanh: return std::tanh(z);
        case Activation::Logistic: return logistic(z);
        case Activation::Identity: return z;
    }
    return z;
}

// Derivative expressed through the pre-activation z and output a.
double activate_grad(Activation act, double z, double a) {
    switch (act) {
        case Activation::Relu: return z > 0 ? 1.0 : 0.0;
        case Activation::Tanh: return 1.0 - a * a;
        case Activation::Logistic: return a * (1.0 - a);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

std::vector<double*> parameter_slots(MlpParams& p) {
    std::vector<double*> out;
    for (auto& l : p.layers) {
        for (std::size_t r = 0; r < l.weights.rows(); ++r)
            for (std::size_t c = 0; c < l.weights.cols(); ++c) out.push_back(&l.weights(r, c));
        for (auto& b : l.bias) out.push_back(&b);
    }
    return out;
}

double weight_sq_sum(const MlpParams& p) {
    double s = 0;
    for (const auto& l : p.layers)
        for (double v : l.weights.data()) s += v * v;
    return s;
}

// Per-layer pre-activations and outputs for one input row.
struct Trace {
    std::vector<std::vector<double>> z, a;  // a[0] is the input
};

double forward(const MlpParams& p, std::span<const double> x, Trace* trace) {
    std::vector<double> in(x.begin(), x.end());
    if (trace) {
        trace->z.clear();
        trace->a.assign(1, in);
    }
    const std::size_t last = p.layers.size() - 1;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        std::vector<double> z(layer.weights.rows());
        for (std::size_t r = 0; r < z.size(); ++r) {
            double s = layer.bias[r];
            auto wr = layer.weights.row(r);
            for (std::size_t c = 0; c < wr.size(); ++c) s += wr[c] * in[c];
            z[r] = s;
        }
        if (l == last) {
            if (trace) trace->z.push_back(z);
            return z[0];
        }
        std::vector<double> a(z.size());
        for (std::size_t r = 0; r < z.size(); ++r) a[r] = activate(p.activation, z[r]);
        if (trace) {
            trace->z.push_back(z);
            trace->a.push_back(a);
        }
        in = std::move(a);
    }
    return 0.0;
}

// Loss and gradient (flattened like parameter_slots) over the listed rows.
double loss_and_grad(const MlpParams& p, const Matrix& x, std::span<const int> y, std::span<const std::size_t> rows,
                     double alpha, std::vector<double>* grad) {
    const double n = static_cast<double>(rows.size());
    std::vector<DenseLayer> g;
    if (grad) {
        for (const auto& l : p.layers)
            g.push_back({Matrix(l.weights.rows(), l.weights.cols(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
    }
    double loss = 0;
    Trace t;
    for (auto r : rows) {
        const double logit = forward(p, x.row(r), grad ? &t : nullptr);
        loss += softplus(logit) - y[r] * logit;
        if (!grad) continue;
        std::vector<double> delta{(logistic(logit) - y[r]) / n};
        for (std::size_t l = p.layers.size(); l-- > 0;) {
            const auto& in = t.a[l];
            auto& gl = g[l];
            for (std::size_t o = 0; o < delta.size(); ++o) {
                gl.bias[o] += delta[o];
                auto gw = gl.weights.row(o);
                for (std::size_t c = 0; c < in.size(); ++c) gw[c] += delta[o] * in[c];
            }
            if (l == 0) break;
            std::vector<double> prev(in.size(), 0.0);
            for (std::size_t o = 0; o < delta.size(); ++o) {
                auto wr = p.layers[l].weights.row(o);
                for (std::size_t c = 0; c < in.size(); ++c) prev[c] += wr[c] * delta[o];
            }
            for (std::size_t c = 0; c < prev.size(); ++c)
                prev[c] *= activate_grad(p.activation, t.z[l - 1][c], in[c]);
            delta = std::move(prev);
        }
    }
    loss = loss / n + alpha / (2.0 * n) * weight_sq_sum(p);
    if (grad) {
        grad->clear();
        for (std::size_t l = 0; l < g.size(); ++l) {
            const auto& w = p.layers[l].weights.data();
            const auto& gw = g[l].weights.data();
            for (std::size_t i = 0; i < gw.size(); ++i) grad->push_back(gw[i] + alpha / n * w[i]);
            grad->insert(grad->end(), g[l].bias.begin(), g[l].bias.end());
        }
    }
    return loss;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

}  // namespace

MlpParams init_mlp(std::size_t input_dim, const MlpConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    MlpParams p;
    p.activation = cfg.activation;
    std::size_t in = input_dim;
    std::vector<std::size_t> outs;
    for (int h : cfg.hidden_sizes) outs.push_back(static_cast<std::size_t>(h));
    outs.push_back(1);
    for (auto out : outs) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        DenseLayer l{Matrix(out, in), std::vector<double>(out)};
        for (std::size_t r = 0; r < out; ++r)
            for (std::size_t c = 0; c < in; ++c) l.weights(r, c) = rng.uniform(-limit, limit);
        for (auto& b : l.bias) b = rng.uniform(-limit, limit);
        p.layers.push_back(std::move(l));
        in = out;
    }
    return p;
}

double mlp_logit(const MlpParams& p, std::span<const double> x) { return forward(p, x, nullptr); }

double mlp_loss(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha) {
    const auto rows = all_rows(x.rows());
    return loss_and_grad(p, x, y, rows, alpha, nullptr);
}

std::vector<double> mlp_gradient(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha) {
    const auto rows = all_rows(x.rows());
    std::vector<double> g;
    loss_and_grad(p, x, y, rows, alpha, &g);
    return g;
}

double min_abs_preactivation(const MlpParams& p, const Matrix& x) {
    double best = kInf;
    Trace t;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        forward(p, x.row(r), &t);
        for (std::size_t l = 0; l + 1 < t.z.size(); ++l)
            for (double z : t.z[l]) best = std::min(best, std::abs(z));
    }
    return best;
}

double gradient_check(const MlpParams& p, const Matrix& x, std::span<const int> y, double alpha) {
    constexpr double h = 1e-5;
    const auto analytic = mlp_gradient(p, x, y, alpha);
    MlpParams q = p;
    auto slots = parameter_slots(q);
    double worst = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double saved = *slots[i];
        *slots[i] = saved + h;
        const double up = mlp_loss(q, x, y, alpha);
        *slots[i] = saved - h;
        const double down = mlp_loss(q, x, y, alpha);
        *slots[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double rel =
            std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-7);
        worst = std::max(worst, rel);
    }
    return worst;
}

TrainedModel train_mlp(const Matrix& x, std::span<const int> y, const TrainingConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    check_training_data(x, y);
    const auto& mc = cfg.mlp;
    MlpParams p = init_mlp(x.cols(), mc, derive_seed(seed, 1));
    Rng rng(derive_seed(seed, 2));
    auto slots = parameter_slots(p);
    std::vector<double> m(slots.size(), 0.0), v(slots.size(), 0.0), grad;
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t step = 0;
    auto order = all_rows(x.rows());
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(mc.batch_size), x.rows());

    for (int epoch = 0; epoch < mc.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
            const double loss = loss_and_grad(p, x, y, rows, mc.l2_alpha, &grad);
            if (!std::isfinite(loss))
                throw Error(fmt::format("MLP loss is not finite at epoch {} (learning rate {} may be too high)",
                                        epoch, mc.learning_rate));
            epoch_loss += loss * static_cast<double>(rows.size());
            ++step;
            if (mc.optimizer == Optimizer::Sgd) {
                for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] -= mc.learning_rate * grad[i];
                continue;
            }
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < slots.size(); ++i) {
                m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
                *slots[i] -= mc.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
            }
        }
        if (!std::isfinite(epoch_loss)) throw Error(fmt::format("MLP loss is not finite at epoch {}", epoch));
    }

    TrainedModel model;
    model.kind = ModelKind::Mlp;
    model.feature_dim = x.cols();
    model.seed = seed;
    model.config = cfg;
    model.params = std::move(p);
    return model;
}

// ---------------------------------------------------------------------------

TrainedModel train(ModelKind kind, const Matrix& x, std::span<const int> y, const TrainingConfig& cfg,
                   std::uint64_t seed, unsigned jobs) {
    switch (kind) {
        case ModelKind::AdaBoost: return train_adaboost(x, y, cfg, seed);
        case ModelKind::RandomForest: return train_random_forest(x, y, cfg, seed, jobs);
        case ModelKind::Mlp: return train_mlp(x, y, cfg, seed);
    }
    throw Error("unknown model kind");
}

Prediction predict(const TrainedModel& model, const Matrix& x) {
    Prediction out;
    if (x.rows() == 0) return out;
    if (x.cols() != model.feature_dim)
        throw Error(fmt::format("model expects {} features, input has {}", model.feature_dim, x.cols()));
    out.scores.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        double score = 0;
        if (const auto* ab = std::get_if<AdaBoostParams>(&model.params)) {
            double f = 0;
            for (const auto& s : ab->stumps) f += s.alpha * stump_output(s, row);
            score = logistic(2.0 * f);
        } else if (const auto* rf = std::get_if<ForestParams>(&model.params)) {
            double votes = 0;
            for (const auto& t : rf->trees) votes += t.predict(row) > 0.5 ? 1.0 : 0.0;
            score = votes / static_cast<double>(rf->trees.size());
        } else {
            score = logistic(mlp_logit(std::get<MlpParams>(model.params), row));
        }
        out.scores[r] = score;
    }
    out.labels.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out.labels[r] = out.scores[r] > 0.5 ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json matrix_json(const Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}}; }

Matrix matrix_from(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.rows() * m.cols()) throw Error("model file: matrix data has the wrong length");
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = data[r * m.cols() + c];
    return m;
}

}  // namespace

json to_json(const TrainedModel& m) {
    json params;
    if (const auto* ab = std::get_if<AdaBoostParams>(&m.params)) {
        json stumps = json::array();
        for (const auto& s : ab->stumps)
            stumps.push_back({{"feature", s.feature}, {"threshold", s.threshold}, {"polarity", s.polarity}, {"alpha", s.alpha}});
        params = {{"stumps", stumps}, {"round_error", ab->round_error}, {"loss_bound", ab->loss_bound}};
    } else if (const auto* rf = std::get_if<ForestParams>(&m.params)) {
        json trees = json::array();
        for (const auto& t : rf->trees) {
            json nodes = json::array();
            for (const auto& n : t.nodes)
                nodes.push_back({n.left, n.right, n.feature, n.threshold, n.value});
            trees.push_back(nodes);
        }
        params = {{"trees", trees}};
    } else {
        const auto& mp = std::get<MlpParams>(m.params);
        json layers = json::array();
        for (const auto& l : mp.layers) layers.push_back({{"weights", matrix_json(l.weights)}, {"bias", l.bias}});
        params = {{"activation", to_string(mp.activation)}, {"layers", layers}};
    }
    return {{"format_version", kModelFormatVersion},
            {"kind", to_string(m.kind)},
            {"feature_dim", m.feature_dim},
            {"seed", m.seed},
            {"config", to_json(m.config)},
            {"params", params}};
}

TrainedModel model_from_json(const json& j) {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
        throw Error(fmt::format("model format version {} is not supported (expected {})", version, kModelFormatVersion));
    TrainedModel m;
    m.kind = model_kind_from_string(j.at("kind").get<std::string>());
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = training_config_from_json(j.at("config"));
    const auto& p = j.at("params");
    switch (m.kind) {
        case ModelKind::AdaBoost: {
            AdaBoostParams ab;
            for (const auto& s : p.at("stumps"))
                ab.stumps.push_back({s.at("feature").get<std::size_t>(), s.at("threshold").get<double>(),
                                     s.at("polarity").get<int>(), s.at("alpha").get<double>()});
            ab.round_error = p.at("round_error").get<std::vector<double>>();
            ab.loss_bound = p.at("loss_bound").get<std::vector<double>>();
            m.params = std::move(ab);
            break;
        }
        case ModelKind::RandomForest: {
            ForestParams rf;
            for (const auto& t : p.at("trees")) {
                Tree tree;
                for (const auto& n : t)
                    tree.nodes.push_back({n.at(0).get<std::int32_t>(), n.at(1).get<std::int32_t>(),
                                          n.at(2).get<std::size_t>(), n.at(3).get<double>(), n.at(4).get<double>()});
                rf.trees.push_back(std::move(tree));
            }
            m.params = std::move(rf);
            break;
        }
        case ModelKind::Mlp: {
            MlpParams mp;
            mp.activation = activation_from_string(p.at("activation").get<std::string>());
            for (const auto& l : p.at("layers"))
                mp.layers.push_back({matrix_from(l.at("weights")), l.at("bias").get<std::vector<double>>()});
            m.params = std::move(mp);
            break;
        }
    }
    return m;
}

void save_model(const std::filesystem::path& path, const TrainedModel& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << to_json(m).dump() << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(fmt::format("model '{}' not found", path.string()), "train");
    return model_from_json(json::parse(in));
}

// ---------------------------------------------------------------------------
// Grid search

std::vector<TrainingConfig> default_grid(ModelKind kind, const TrainingConfig& base) {
    std::vector<TrainingConfig> grid;
    switch (kind) {
        case ModelKind::AdaBoost:
            for (int n : {50, 100})
                for (double lr : {0.1, 0.5, 1.0}) {
                    auto c = base;
                    c.adaboost = {n, lr};
                    grid.push_back(c);
                }
            break;
        case ModelKind::RandomForest:
            for (int n : {50, 100})
                for (auto mf : {MaxFeatures::Sqrt, MaxFeatures::Log2})
                    for (std::optional<int> depth : {std::optional<int>{}, std::optional<int>{8}, std::optional<int>{16}}) {
                        auto c = base;
                        c.random_forest.n_estimators = n;
                        c.random_forest.max_features = mf;
                        c.random_forest.max_depth = depth;
                        grid.push_back(c);
                    }
            break;
        case ModelKind::Mlp:
            for (int h : {32, 64, 128})
                for (double alpha : {1e-4, 1e-3})
                    for (double lr : {1e-3, 1e-2}) {
                        auto c = base;
                        c.mlp.hidden_sizes = {h};
                        c.mlp.l2_alpha = alpha;
                        c.mlp.learning_rate = lr;
                        grid.push_back(c);
                    }
            break;
    }
    return grid;
}

GridResult grid_search(ModelKind kind, const Matrix& x, std::span<const int> y,
                       const std::vector<TrainingConfig>& grid, std::uint64_t seed, int folds, unsigned jobs) {
    if (grid.empty()) throw Error("grid_search: empty grid");
    if (folds < 2) throw Error("grid_search: need at least 2 folds");
    check_training_data(x, y);

    std::vector<int> fold(y.size());
    Rng rng(derive_seed(seed, 0x67726964ULL));
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) idx.push_back(i);
        if (idx.size() < static_cast<std::size_t>(folds))
            throw Error(fmt::format("grid_search: class {} has {} rows, fewer than {} folds", cls, idx.size(), folds));
        rng.shuffle(idx);
        for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
    }

    GridResult res;
    res.scores.assign(grid.size(), 0.0);
    parallel_for(grid.size(), jobs, [&](std::size_t g) {
        double total = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<std::size_t> tr, te;
            for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
            std::vector<int> ytr, yte;
            for (auto i : tr) ytr.push_back(y[i]);
            for (auto i : te) yte.push_back(y[i]);
            auto model = train(kind, x.take_rows(tr), ytr, grid[g], derive_seed(seed, static_cast<std::uint64_t>(f)));
            auto pred = predict(model, x.take_rows(te));
            double macro = 0;
            for (int cls : {0, 1}) {
                double tp = 0, fp = 0, fn = 0;
                for (std::size_t i = 0; i < yte.size(); ++i) {
                    const bool p = pred.labels[i] == cls, t = yte[i] == cls;
                    tp += p && t;
                    fp += p && !t;
                    fn += !p && t;
                }
                macro += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
            }
            total += macro / 2;
        }
        res.scores[g] = total / folds;
    });
    for (std::size_t g = 1; g < grid.size(); ++g)
        if (res.scores[g] > res.scores[res.best_index]) res.best_index = g;
    res.best = grid[res.best_index];
    return res;
}

}  // namespace topocontro
