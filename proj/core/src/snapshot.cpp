#include <cstdio>
#include <fstream>
#include <ostream>

#include "coulpimc/driver.hpp"
#include "coulpimc/errors.hpp"

// Human-readable dump of a path configuration: per-particle ring centroids
// followed by every bead, in Bohr radii.

namespace coulpimc {

void write_snapshot(std::ostream& os, const PathConfiguration& path, const SystemSpec& spec) {
    if (path.n_particles() != spec.n_particles())
        throw ConfigError("snapshot: path and system disagree on the particle count");
    const int n = path.n_particles();
    const int slices = path.slice_count();
    char buf[256];
    std::snprintf(buf, sizeof buf, "# path snapshot: %d particles, %d slices, tau=%.17g\n", n,
                  slices, spec.discretization.tau);
    os << buf;
    std::snprintf(buf, sizeof buf, "# beta=%.17g  T=%.6f K  generation=%llu\n",
                  spec.discretization.beta(), spec.discretization.temperature(),
                  static_cast<unsigned long long>(path.generation()));
    os << buf;
    os << "# columns: particle slice x y z\n";
    for (int p = 0; p < n; ++p) {
        const auto& ps = spec.particles[static_cast<size_t>(p)];
        Vec3 c{0, 0, 0};
        for (int m = 0; m < slices; ++m) c += path.bead(p, m);
        c = c * (1.0 / slices);
        std::snprintf(buf, sizeof buf,
                      "# particle %d: %s  model=%s  charge=%+g  mass=%g  centroid=(%.6f %.6f "
                      "%.6f)\n",
                      p, ps.label.c_str(), to_string(ps.model), ps.charge, ps.mass, c.x, c.y,
                      c.z);
        os << buf;
    }
    for (int p = 0; p < n; ++p)
        for (int m = 0; m < slices; ++m) {
            const Vec3& x = path.bead(p, m);
            std::snprintf(buf, sizeof buf, "%d %d %.17g %.17g %.17g\n", p, m, x.x, x.y, x.z);
            os << buf;
        }
}

void write_snapshot_file(const std::string& file, const PathConfiguration& path,
                         const SystemSpec& spec) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write snapshot file: " + file);
    write_snapshot(out, path, spec);
    if (!out) throw IoError("short write on snapshot file: " + file);
}

} // namespace coulpimc
