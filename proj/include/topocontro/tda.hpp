#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "topocontro/common.hpp"
#include "topocontro/graph.hpp"

namespace topocontro {

struct Simplex {
    std::array<NodeId, 3> vertices{};  // first dim+1 entries used, ascending
    std::uint8_t dim = 0;
    double value = 0.0;

    bool operator==(const Simplex&) const = default;
};

/// Simplices sorted by (value, dim, vertex tuple). Faces always precede cofaces.
struct Filtration {
    std::size_t vertex_count = 0;
    std::vector<Simplex> simplices;

    std::size_t count(int dim) const;
    double max_value() const;
};

/// Vietoris-Rips (clique) filtration up to triangles. Entries of `dist` equal
/// to +inf or above `eps_max` never enter. Throws on an empty metric space.
Filtration build_vr_filtration(const DistanceMatrix& dist, double eps_max, int max_dim = 2);

struct PersistenceBar {
    int dim = 0;
    double birth = 0.0;
    double death = kInf;

    bool essential() const noexcept { return death == kInf; }
    double persistence() const noexcept { return death - birth; }
    auto operator<=>(const PersistenceBar&) const = default;
};

struct PersistenceDiagram {
    std::vector<PersistenceBar> bars;  // sorted; zero-persistence bars never stored
    double max_filtration_value = 0.0;

    std::size_t count(int dim) const;
    std::size_t essential_count(int dim) const;
    std::vector<PersistenceBar> in_dim(int dim) const;
};

/// Column reduction of the boundary matrix over GF(2), with clearing.
/// Emits H0 and H1 bars; unpaired vertices and edges become essential bars.
PersistenceDiagram compute_persistence(const Filtration& filt);

/// CSV with header "dim,birth,death"; infinite deaths written as "inf".
void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diag);

// ---------------------------------------------------------------------------

enum class EssentialBars { Extend, Drop };

struct ImageConfig {
    std::size_t resolution = 8;
    double birth_min = 0.0, birth_max = 1.0;
    double death_min = 0.0, death_max = 1.0;
    std::optional<double> sigma;  // empty: (death_max - death_min) / resolution
    EssentialBars essential = EssentialBars::Extend;
    double essential_factor = 1.05;  // death := factor * max finite filtration value

    double effective_sigma() const;
    /// Square domain [0, cap]^2.
    static ImageConfig square(double cap, std::size_t resolution = 8);
};

/// Row-major raster; row r spans death values, column c spans birth values.
struct PersistenceImage {
    std::size_t resolution = 0;
    std::vector<double> pixels;

    double at(std::size_t row, std::size_t col) const { return pixels[row * resolution + col]; }
};

/// Sum over bars of (death - birth) * exp(-((x-b)^2 + (y-d)^2) / (2 sigma^2)),
/// evaluated at pixel centres, for the bars of dimension `dim`.
PersistenceImage diagram_to_image(const PersistenceDiagram& diag, int dim, const ImageConfig& cfg);

void write_image_csv(std::ostream& out, const PersistenceImage& img);

// ---------------------------------------------------------------------------

enum class FiltrationSource {
    VietorisRips,  // VR over graph distances
    Temporal,      // edges enter at hours since the first reply in the thread
};

std::string_view to_string(FiltrationSource s);
FiltrationSource filtration_source_from_string(std::string_view s);

struct TdaConfig {
    DistanceMode metric = DistanceMode::Hop;
    FiltrationSource source = FiltrationSource::VietorisRips;
    std::optional<double> eps_max;  // empty: max finite entry of the post's matrix
    ImageConfig image;
};

/// Pairwise entry-value matrix the filtration is built over.
DistanceMatrix filtration_matrix(const InteractionGraph& g, const TdaConfig& cfg);

/// Diagram of one thread's graph. An empty graph yields an empty diagram.
PersistenceDiagram graph_persistence(const InteractionGraph& g, const TdaConfig& cfg);

/// Flattened H0 image followed by the H1 image; length 2 * resolution^2.
std::vector<double> f4_from_diagram(const PersistenceDiagram& diag, const ImageConfig& cfg);
std::vector<double> f4_vector(const InteractionGraph& g, const TdaConfig& cfg);

}  // namespace topocontro
