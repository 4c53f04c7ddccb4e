#include "topocontro/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "topocontro/common.hpp"

namespace topocontro {

std::string_view to_string(TrainScenario s) {
    switch (s) {
        case TrainScenario::A: return "A";
        case TrainScenario::B: return "B";
        case TrainScenario::C: return "C";
    }
    return "?";
}

std::string_view to_string(TestScenario s) { return s == TestScenario::a ? "a" : "c"; }

TrainScenario train_scenario_from_string(std::string_view s) {
    if (s == "A") return TrainScenario::A;
    if (s == "B") return TrainScenario::B;
    if (s == "C") return TrainScenario::C;
    throw Error(fmt::format("unknown training scenario '{}' (expected A, B or C)", s));
}

namespace {

std::array<std::vector<std::size_t>, 2> by_class(std::span<const std::size_t> rows, std::span<const int> labels) {
    std::array<std::vector<std::size_t>, 2> out;
    for (auto r : rows) out[labels[r] ? 1 : 0].push_back(r);
    return out;
}

// k distinct members of `pool`, returned sorted.
std::vector<std::size_t> undersample(const std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
    std::vector<std::size_t> out;
    for (auto i : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[i]);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

Split stratified_split(std::span<const int> labels, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw Error(fmt::format("train_frac {} is not in (0, 1)", train_frac));
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto cls = by_class(all, labels);
    Split s;
    Rng rng(seed);
    for (int c : {1, 0}) {
        auto& rows = cls[static_cast<std::size_t>(c)];
        if (rows.size() < 2)
            throw Error(fmt::format("cannot split: class {} has {} post(s), need at least 2",
                                    c ? "controversial" : "non-controversial", rows.size()));
        const double want = std::round(train_frac * static_cast<double>(rows.size()));
        const auto k = static_cast<std::size_t>(std::clamp(want, 1.0, static_cast<double>(rows.size() - 1)));
        rng.shuffle(rows);
        s.train.insert(s.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
        s.test.insert(s.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

std::vector<std::size_t> resample_train(std::span<const std::size_t> rows, std::span<const int> labels,
                                        TrainScenario scenario, std::uint64_t seed, double oversample_factor) {
    std::vector<std::size_t> out(rows.begin(), rows.end());
    if (scenario == TrainScenario::C) return out;
    auto cls = by_class(rows, labels);
    if (cls[0].empty() || cls[1].empty()) throw Error("training split lacks one of the classes");
    const std::size_t minority_cls = cls[1].size() <= cls[0].size() ? 1 : 0;
    auto& minority = cls[minority_cls];
    auto& majority = cls[1 - minority_cls];
    Rng rng(seed);
    out.clear();
    if (scenario == TrainScenario::A) {
        out = minority;
        auto picked = undersample(majority, minority.size(), rng);
        out.insert(out.end(), picked.begin(), picked.end());
    } else {
        if (oversample_factor < 1.0) throw Error("oversample factor must be >= 1");
        const auto m = static_cast<std::size_t>(std::llround(oversample_factor * static_cast<double>(minority.size())));
        // Minority keeps its originals plus draws with replacement up to M.
        out = minority;
        while (out.size() < m) out.push_back(minority[rng.below(minority.size())]);
        if (m <= majority.size()) {
            auto picked = undersample(majority, m, rng);
            out.insert(out.end(), picked.begin(), picked.end());
        } else {
            auto grown = majority;
            while (grown.size() < m) grown.push_back(majority[rng.below(majority.size())]);
            out.insert(out.end(), grown.begin(), grown.end());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> resample_test(std::span<const std::size_t> rows, std::span<const int> labels,
                                       TestScenario scenario, std::uint64_t seed) {
    auto cls = by_class(rows, labels);
    if (cls[0].empty() || cls[1].empty())
        throw Error(fmt::format("test split has {} controversial and {} non-controversial posts; both are required",
                                cls[1].size(), cls[0].size()));
    if (scenario == TestScenario::c) return {rows.begin(), rows.end()};
    Rng rng(seed);
    const std::size_t k = std::min(cls[0].size(), cls[1].size());
    auto a = cls[0].size() == k ? cls[0] : undersample(cls[0], k, rng);
    auto b = cls[1].size() == k ? cls[1] : undersample(cls[1], k, rng);
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    return a;
}

Metrics f1_per_class(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size())
        throw Error(fmt::format("f1_per_class: {} labels but {} predictions", y_true.size(), y_pred.size()));
    if (y_true.empty()) throw Error("f1_per_class: empty input");
    Metrics m;
    auto f1 = [&](int cls) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < y_true.size(); ++i) {
            const bool p = y_pred[i] == cls, t = y_true[i] == cls;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    };
    m.f1_controversial = f1(1);
    m.f1_noncontroversial = f1(0);
    for (int v : y_true) ++(v == 1 ? m.support_controversial : m.support_noncontroversial);
    return m;
}

ImbalanceImpactScore imbalance_impact(double fa, double fc) {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(fa) || !in_unit(fc))
        throw Error(fmt::format("imbalance_impact: F1 scores must lie in [0, 1], got ({}, {})", fa, fc));
    return {100.0 * (fa * fc) * (1.0 - std::abs(fa - fc)), fa, fc};
}

std::pair<double, double> mean_sd(std::span<const double> v) {
    if (v.empty()) return {0.0, 0.0};
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() == 1) return {mean, 0.0};
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1))};
}

// ---------------------------------------------------------------------------

const ReportRow* EvalReport::find(TrainScenario s, ModelKind m, std::string_view features) const {
    for (const auto& r : rows)
        if (r.scenario == s && r.model == m && r.features == features) return &r;
    return nullptr;
}

EvalReport run_matrix(const FeatureMatrix& features, const std::vector<FeatureSet>& sets,
                      const std::vector<ModelKind>& models, const std::vector<std::uint64_t>& seeds,
                      const EvalConfig& cfg) {
    if (seeds.empty()) throw Error("run_matrix: at least one seed is required");
    if (sets.empty() || models.empty() || cfg.train_scenarios.empty())
        throw Error("run_matrix: nothing to evaluate");
    cfg.training.validate();

    struct Task {
        std::size_t set, model, scenario, seed;
    };
    std::vector<Task> tasks;
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t f = 0; f < sets.size(); ++f)
            for (std::size_t s = 0; s < cfg.train_scenarios.size(); ++s)
                for (std::size_t k = 0; k < seeds.size(); ++k) tasks.push_back({f, m, s, k});

    struct Outcome {
        std::optional<SeedOutcome> ok;
        std::string error;
    };
    std::vector<Outcome> outcomes(tasks.size());
    parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
        const auto& t = tasks[i];
        const std::uint64_t seed = seeds[t.seed];
        try {
            const auto sub = features.select(sets[t.set]);
            if (sub.size() == 0) throw Error("no posts have every block of this feature set");
            const auto split = stratified_split(sub.labels, cfg.train_frac, derive_seed(seed, 1));
            Matrix x = sub.values;
            if (cfg.standardize) Standardizer::fit(x, split.train).apply(x);

            const auto scenario = cfg.train_scenarios[t.scenario];
            const auto train_rows = resample_train(split.train, sub.labels, scenario,
                                                   derive_seed(seed, 10 + static_cast<std::uint64_t>(scenario)),
                                                   cfg.oversample_factor);
            std::vector<int> ytr;
            for (auto r : train_rows) ytr.push_back(sub.labels[r]);
            const auto kind = models[t.model];
            const auto xtr = x.take_rows(train_rows);
            const auto model_seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(kind));
            auto training = cfg.training;
            if (cfg.grid) training = grid_search(kind, xtr, ytr, default_grid(kind, training), model_seed).best;
            const auto model = train(kind, xtr, ytr, training, model_seed);

            SeedOutcome o;
            o.seed = seed;
            o.train_rows = train_rows.size();
            for (auto ts : {TestScenario::a, TestScenario::c}) {
                const auto rows = resample_test(split.test, sub.labels, ts, derive_seed(seed, 2));
                std::vector<int> yte;
                for (auto r : rows) yte.push_back(sub.labels[r]);
                const auto pred = predict(model, x.take_rows(rows));
                const double fc = f1_per_class(yte, pred.labels).f1_controversial;
                (ts == TestScenario::a ? o.fc_a : o.fc_c) = fc;
                (ts == TestScenario::a ? o.test_rows_a : o.test_rows_c) = rows.size();
            }
            o.impact = imbalance_impact(o.fc_a, o.fc_c).value;
            outcomes[i].ok = o;
        } catch (const std::exception& e) {
            outcomes[i].error = e.what();
        }
    });

    EvalReport report;
    for (std::size_t i = 0; i < tasks.size(); i += seeds.size()) {
        const auto& t = tasks[i];
        ReportRow row;
        row.scenario = cfg.train_scenarios[t.scenario];
        row.model = models[t.model];
        row.features = sets[t.set].name();
        std::vector<double> fa, fc, im;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const auto& o = outcomes[i + k];
            if (!o.ok) {
                if (!row.error) row.error = fmt::format("seed {}: {}", seeds[k], o.error);
                continue;
            }
            row.seeds.push_back(*o.ok);
            fa.push_back(o.ok->fc_a);
            fc.push_back(o.ok->fc_c);
            im.push_back(o.ok->impact);
        }
        std::tie(row.fc_a_mean, row.fc_a_sd) = mean_sd(fa);
        std::tie(row.fc_c_mean, row.fc_c_sd) = mean_sd(fc);
        std::tie(row.impact_mean, row.impact_sd) = mean_sd(im);
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalReport& r) {
    out << "scenario,model,features,fc_a_mean,fc_a_sd,fc_c_mean,fc_c_sd,I_mean,I_sd,seeds,error\n";
    for (const auto& row : r.rows) {
        out << to_string(row.scenario) << ',' << to_string(row.model) << ',' << row.features;
        for (double v : {row.fc_a_mean, row.fc_a_sd, row.fc_c_mean, row.fc_c_sd})
            out << ',' << format_fixed(v, 4);
        out << ',' << format_fixed(row.impact_mean, 3) << ',' << format_fixed(row.impact_sd, 3);
        out << ',' << row.seeds.size() << ',' << csv_field(row.error.value_or("")) << '\n';
    }
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    write_report_csv(out, r);
}

std::string render_report_markdown(const EvalReport& r) {
    std::vector<TrainScenario> scenarios;
    std::vector<std::pair<ModelKind, std::string>> keys;
    for (const auto& row : r.rows) {
        if (std::find(scenarios.begin(), scenarios.end(), row.scenario) == scenarios.end())
            scenarios.push_back(row.scenario);
        std::pair<ModelKind, std::string> key{row.model, row.features};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    std::sort(scenarios.begin(), scenarios.end());

    std::string md = "| Model | Features |";
    std::string rule = "|---|---|";
    for (auto s : scenarios) {
        md += fmt::format(" {0} Fc(a) | {0} Fc(c) | {0} I |", to_string(s));
        rule += "---:|---:|---:|";
    }
    md += "\n" + rule + "\n";
    auto pm = [](double mean, double sd, int dec) {
        return fmt::format("{} ± {}", format_fixed(mean, dec), format_fixed(sd, dec));
    };
    for (const auto& [model, feats] : keys) {
        md += fmt::format("| {} | {} |", to_string(model), feats);
        for (auto s : scenarios) {
            const auto* row = r.find(s, model, feats);
            if (!row || row->seeds.empty()) {
                md += " error | error | error |";
                continue;
            }
            md += fmt::format(" {} | {} | {} |", pm(row->fc_a_mean, row->fc_a_sd, 4),
                              pm(row->fc_c_mean, row->fc_c_sd, 4), pm(row->impact_mean, row->impact_sd, 3));
        }
        md += "\n";
    }
    std::string errors;
    for (const auto& row : r.rows)
        if (row.error)
            errors += fmt::format("- {} / {} / {}: {}\n", to_string(row.scenario), to_string(row.model), row.features,
                                  *row.error);
    if (!errors.empty()) md += "\nFailed cells:\n\n" + errors;
    return md;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json seeds = nlohmann::json::array();
        for (const auto& s : row.seeds)
            seeds.push_back({{"seed", s.seed},
                             {"fc_a", s.fc_a},
                             {"fc_c", s.fc_c},
                             {"I", s.impact},
                             {"train_rows", s.train_rows},
                             {"test_rows_a", s.test_rows_a},
                             {"test_rows_c", s.test_rows_c}});
        rows.push_back({{"scenario", to_string(row.scenario)},
                        {"model", to_string(row.model)},
                        {"features", row.features},
                        {"fc_a_mean", row.fc_a_mean},
                        {"fc_a_sd", row.fc_a_sd},
                        {"fc_c_mean", row.fc_c_mean},
                        {"fc_c_sd", row.fc_c_sd},
                        {"I_mean", row.impact_mean},
                        {"I_sd", row.impact_sd},
                        {"seeds", seeds},
                        {"error", row.error ? nlohmann::json(*row.error) : nlohmann::json(nullptr)}});
    }
    return {{"rows", rows}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    for (const auto& row : j.at("rows")) {
        ReportRow out;
        out.scenario = train_scenario_from_string(row.at("scenario").get<std::string>());
        out.model = model_kind_from_string(row.at("model").get<std::string>());
        out.features = row.at("features").get<std::string>();
        out.fc_a_mean = row.at("fc_a_mean").get<double>();
        out.fc_a_sd = row.at("fc_a_sd").get<double>();
        out.fc_c_mean = row.at("fc_c_mean").get<double>();
        out.fc_c_sd = row.at("fc_c_sd").get<double>();
        out.impact_mean = row.at("I_mean").get<double>();
        out.impact_sd = row.at("I_sd").get<double>();
        for (const auto& s : row.at("seeds"))
            out.seeds.push_back({s.at("seed").get<std::uint64_t>(), s.at("fc_a").get<double>(), s.at("fc_c").get<double>(),
                                 s.at("I").get<double>(), s.at("train_rows").get<std::size_t>(),
                                 s.at("test_rows_a").get<std::size_t>(), s.at("test_rows_c").get<std::size_t>()});
        if (!row.at("error").is_null()) out.error = row.at("error").get<std::string>();
        r.rows.push_back(std::move(out));
    }
    return r;
}

std::string ur_density_svg(const LabeledStore& store) {
    constexpr double width = 640, height = 360, pad = 40;
    constexpr int steps = 200;
    struct Series {
        LabelValue label;
        const char* color;
        std::vector<double> values;
        std::vector<double> density;
    };
    std::vector<Series> series{{LabelValue::Controversial, "#d62728", {}, {}},
                               {LabelValue::NonControversial, "#1f77b4", {}, {}},
                               {LabelValue::Excluded, "#7f7f7f", {}, {}}};
    for (std::size_t i = 0; i < store.records.size(); ++i)
        for (auto& s : series)
            if (store.labels[i].value == s.label) s.values.push_back(store.records[i].upvote_ratio);

    double ymax = 1e-9;
    for (auto& s : series) {
        s.density.assign(steps + 1, 0.0);
        if (s.values.empty()) continue;
        const auto [mean, sd] = mean_sd(s.values);
        (void)mean;
        const double n = static_cast<double>(s.values.size());
        const double bw = std::max(1.06 * std::max(sd, 1e-3) * std::pow(n, -0.2), 0.01);  // Silverman
        for (int k = 0; k <= steps; ++k) {
            const double u = static_cast<double>(k) / steps;
            double d = 0;
            for (double v : s.values) d += std::exp(-0.5 * ((u - v) / bw) * ((u - v) / bw));
            s.density[static_cast<std::size_t>(k)] = d / (n * bw * std::sqrt(2 * M_PI));
            ymax = std::max(ymax, s.density[static_cast<std::size_t>(k)]);
        }
    }

    std::ostringstream svg;
    svg << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">)",
                       width, height, width, height)
        << "\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>)", pad, height - pad, width - pad)
        << "\n";
    for (int t = 0; t <= 10; t += 2) {
        const double x = pad + (width - 2 * pad) * t / 10.0;
        svg << fmt::format(R"(<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>)", x, height - pad + 15,
                           format_fixed(t / 10.0, 1))
            << "\n";
    }
    svg << fmt::format(R"(<text x="{}" y="{}" font-size="12" text-anchor="middle">upvote ratio</text>)", width / 2,
                       height - 8)
        << "\n";
    int legend = 0;
    for (const auto& s : series) {
        if (s.values.empty()) continue;
        std::string pts;
        for (int k = 0; k <= steps; ++k) {
            const double x = pad + (width - 2 * pad) * k / steps;
            const double y = height - pad - (height - 2 * pad) * s.density[static_cast<std::size_t>(k)] / ymax;
            pts += fmt::format("{:.2f},{:.2f} ", x, y);
        }
        svg << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>)", s.color, pts) << "\n";
        svg << fmt::format(R"(<text x="{}" y="{}" font-size="12" fill="{}">{} (n={})</text>)", pad + 10,
                           pad + 15 * legend++, s.color, to_string(s.label), s.values.size())
            << "\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace topocontro
