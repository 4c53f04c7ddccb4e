#include "topocontro/tda.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "topocontro/common.hpp"

namespace topocontro {

std::size_t Filtration::count(int dim) const {
    return static_cast<std::size_t>(std::count_if(simplices.begin(), simplices.end(),
                                                  [dim](const Simplex& s) { return s.dim == dim; }));
}

double Filtration::max_value() const {
    double m = 0.0;
    for (const auto& s : simplices) m = std::max(m, s.value);
    return m;
}

Filtration build_vr_filtration(const DistanceMatrix& dist, double eps_max, int max_dim) {
    const std::size_t n = dist.size();
    if (n == 0) throw Error("empty metric space");
    if (max_dim < 0 || max_dim > 2) throw Error("build_vr_filtration: max_dim must be in [0, 2]");
    if (!std::isfinite(eps_max)) throw Error("build_vr_filtration: eps_max must be finite");

    auto admitted = [&](std::size_t i, std::size_t j) {
        const double d = dist(i, j);
        return d != kInf && d <= eps_max;
    };

    Filtration f;
    f.vertex_count = n;
    for (std::size_t v = 0; v < n; ++v)
        f.simplices.push_back({{static_cast<NodeId>(v), 0, 0}, 0, 0.0});
    if (max_dim >= 1) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (admitted(i, j))
                    f.simplices.push_back(
                        {{static_cast<NodeId>(i), static_cast<NodeId>(j), 0}, 1, dist(i, j)});
    }
    if (max_dim >= 2) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!admitted(i, j)) continue;
                for (std::size_t k = j + 1; k < n; ++k) {
                    if (!admitted(i, k) || !admitted(j, k)) continue;
                    const double v = std::max({dist(i, j), dist(i, k), dist(j, k)});
                    f.simplices.push_back({{static_cast<NodeId>(i), static_cast<NodeId>(j),
                                            static_cast<NodeId>(k)},
                                           2,
                                           v});
                }
            }
    }
    std::sort(f.simplices.begin(), f.simplices.end(), [](const Simplex& a, const Simplex& b) {
        return std::tie(a.value, a.dim, a.vertices) < std::tie(b.value, b.dim, b.vertices);
    });
    return f;
}

// ---------------------------------------------------------------------------

std::size_t PersistenceDiagram::count(int dim) const {
    return static_cast<std::size_t>(
        std::count_if(bars.begin(), bars.end(), [dim](const auto& b) { return b.dim == dim; }));
}

std::size_t PersistenceDiagram::essential_count(int dim) const {
    return static_cast<std::size_t>(std::count_if(bars.begin(), bars.end(), [dim](const auto& b) {
        return b.dim == dim && b.essential();
    }));
}

std::vector<PersistenceBar> PersistenceDiagram::in_dim(int dim) const {
    std::vector<PersistenceBar> out;
    for (const auto& b : bars)
        if (b.dim == dim) out.push_back(b);
    return out;
}

namespace {

using Column = std::vector<std::uint32_t>;

// a := a + b over GF(2); both sorted ascending.
void add_column(Column& a, const Column& b, Column& scratch) {
    scratch.clear();
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                  std::back_inserter(scratch));
    a.swap(scratch);
}

}  // namespace

PersistenceDiagram compute_persistence(const Filtration& filt) {
    const auto& sx = filt.simplices;
    const std::size_t m = sx.size();
    const std::size_t n = filt.vertex_count;

    // Filtration position of each vertex and edge.
    std::vector<std::uint32_t> vertex_pos(n, 0);
    std::vector<std::uint32_t> edge_pos(n * n, UINT32_MAX);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& s = sx[i];
        if (s.dim == 0) vertex_pos[s.vertices[0]] = static_cast<std::uint32_t>(i);
        if (s.dim == 1) {
            edge_pos[s.vertices[0] * n + s.vertices[1]] = static_cast<std::uint32_t>(i);
        }
    }

    std::vector<Column> columns(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& s = sx[i];
        auto& col = columns[i];
        if (s.dim == 1) {
            col = {vertex_pos[s.vertices[0]], vertex_pos[s.vertices[1]]};
        } else if (s.dim == 2) {
            const auto [a, b, c] = s.vertices;
            col = {edge_pos[a * n + b], edge_pos[a * n + c], edge_pos[b * n + c]};
            if (std::find(col.begin(), col.end(), UINT32_MAX) != col.end())
                throw Error("compute_persistence: triangle without all of its edges");
        }
        std::sort(col.begin(), col.end());
    }

    // Reduce triangles first so that edges found as pivots can be cleared.
    std::vector<std::int64_t> column_with_low(m, -1);
    std::vector<bool> cleared(m, false);
    Column scratch;
    for (int dim : {2, 1}) {
        for (std::size_t j = 0; j < m; ++j) {
            if (sx[j].dim != dim) continue;
            if (cleared[j]) {
                columns[j].clear();
                continue;
            }
            auto& col = columns[j];
            while (!col.empty()) {
                const auto other = column_with_low[col.back()];
                if (other < 0) break;
                add_column(col, columns[static_cast<std::size_t>(other)], scratch);
            }
            if (!col.empty()) {
                column_with_low[col.back()] = static_cast<std::int64_t>(j);
                cleared[col.back()] = true;
            }
        }
    }

    PersistenceDiagram diag;
    diag.max_filtration_value = filt.max_value();
    for (std::size_t i = 0; i < m; ++i) {
        const int dim = sx[i].dim;
        if (dim > 1) continue;
        if (!columns[i].empty()) continue;  // negative simplex
        const auto killer = column_with_low[i];
        if (killer < 0) {
            diag.bars.push_back({dim, sx[i].value, kInf});
        } else {
            const double death = sx[static_cast<std::size_t>(killer)].value;
            if (death > sx[i].value) diag.bars.push_back({dim, sx[i].value, death});
        }
    }
    std::sort(diag.bars.begin(), diag.bars.end());
    return diag;
}

void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diag) {
    out << "dim,birth,death\n";
    for (const auto& b : diag.bars)
        out << b.dim << ',' << format_double(b.birth) << ','
            << (b.essential() ? std::string("inf") : format_double(b.death)) << '\n';
}

// ---------------------------------------------------------------------------

double ImageConfig::effective_sigma() const {
    const double s = sigma.value_or((death_max - death_min) / static_cast<double>(resolution));
    if (!(s > 0.0)) throw Error("persistence image sigma must be positive");
    return s;
}

ImageConfig ImageConfig::square(double cap, std::size_t resolution) {
    ImageConfig c;
    c.resolution = resolution;
    c.birth_max = cap;
    c.death_max = cap;
    return c;
}

PersistenceImage diagram_to_image(const PersistenceDiagram& diag, int dim, const ImageConfig& cfg) {
    if (cfg.resolution == 0) throw Error("persistence image resolution must be >= 1");
    const double sigma = cfg.effective_sigma();
    const std::size_t r = cfg.resolution;
    PersistenceImage img{r, std::vector<double>(r * r, 0.0)};

    const double bw = (cfg.birth_max - cfg.birth_min) / static_cast<double>(r);
    const double dw = (cfg.death_max - cfg.death_min) / static_cast<double>(r);
    const double denom = 2.0 * sigma * sigma;
    const double essential_death = cfg.essential_factor * diag.max_filtration_value;

    for (const auto& bar : diag.bars) {
        if (bar.dim != dim) continue;
        double death = bar.death;
        if (bar.essential()) {
            if (cfg.essential == EssentialBars::Drop) continue;
            death = essential_death;
        }
        const double weight = death - bar.birth;
        if (!(weight > 0.0)) continue;
        for (std::size_t row = 0; row < r; ++row) {
            const double y = cfg.death_min + (static_cast<double>(row) + 0.5) * dw;
            const double dy = y - death;
            for (std::size_t col = 0; col < r; ++col) {
                const double x = cfg.birth_min + (static_cast<double>(col) + 0.5) * bw;
                const double dx = x - bar.birth;
                img.pixels[row * r + col] += weight * std::exp(-(dx * dx + dy * dy) / denom);
            }
        }
    }
    return img;
}

void write_image_csv(std::ostream& out, const PersistenceImage& img) {
    for (std::size_t row = 0; row < img.resolution; ++row) {
        for (std::size_t col = 0; col < img.resolution; ++col)
            out << (col ? "," : "") << format_double(img.at(row, col));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------

std::string_view to_string(FiltrationSource s) {
    return s == FiltrationSource::VietorisRips ? "vr" : "temporal";
}

FiltrationSource filtration_source_from_string(std::string_view s) {
    if (s == "vr") return FiltrationSource::VietorisRips;
    if (s == "temporal") return FiltrationSource::Temporal;
    throw Error(fmt::format("unknown filtration source '{}' (expected vr|temporal)", s));
}

DistanceMatrix filtration_matrix(const InteractionGraph& g, const TdaConfig& cfg) {
    if (cfg.source == FiltrationSource::VietorisRips)
        return graph_distance_matrix(undirected_view(g), cfg.metric);

    const std::size_t n = g.node_count();
    DistanceMatrix m(n, kInf);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
    std::int64_t origin = INT64_MAX;
    for (const auto& [key, events] : g.edges) origin = std::min(origin, events.front());
    for (const auto& [key, events] : g.edges) {
        const auto [a, b] = key;
        const double hours = static_cast<double>(events.front() - origin) / 3600.0;
        m(a, b) = m(b, a) = std::min(m(a, b), hours);
    }
    return m;
}

PersistenceDiagram graph_persistence(const InteractionGraph& g, const TdaConfig& cfg) {
    if (g.node_count() == 0) return {};
    const auto dist = filtration_matrix(g, cfg);
    const double eps = cfg.eps_max.value_or(dist.max_finite());
    return compute_persistence(build_vr_filtration(dist, eps, 2));
}

std::vector<double> f4_from_diagram(const PersistenceDiagram& diag, const ImageConfig& cfg) {
    auto h0 = diagram_to_image(diag, 0, cfg);
    auto h1 = diagram_to_image(diag, 1, cfg);
    std::vector<double> out = std::move(h0.pixels);
    out.insert(out.end(), h1.pixels.begin(), h1.pixels.end());
    return out;
}

std::vector<double> f4_vector(const InteractionGraph& g, const TdaConfig& cfg) {
    return f4_from_diagram(graph_persistence(g, cfg), cfg.image);
}

}  // namespace topocontro
