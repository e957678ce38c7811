#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coulpimc/constants.hpp"
#include "coulpimc/vec3.hpp"

namespace coulpimc {

enum class ParticleModel { Quantum, Classical, Fixed };

const char* to_string(ParticleModel m);

struct ParticleSpec {
    std::string label;
    double mass = 1.0;   // m_e
    double charge = 0.0; // e
    ParticleModel model = ParticleModel::Quantum;
    double lambda = 0.5; // 1/(2 mass), derived
    std::optional<Vec3> initial; // required for Fixed, used by point init otherwise
};

struct BoxSpec {
    double edge = 0.0; // a0; ignored when not periodic
    bool periodic = false;
};

struct Discretization {
    double tau = 0.0; // E_H^-1
    int trotter_m = 0;

    double beta() const { return tau * trotter_m; }
    double temperature() const { return 1.0 / (constants::k_B * beta()); }
};

// Interaction channel classification used by histograms and observables:
// pp = both charges positive, ee = both negative, ep = opposite signs.
enum class PairKind { None, PP, EP, EE };

const char* to_string(PairKind k);

struct PairChannelSpec {
    int i = 0, j = 0;        // particle indices, i < j
    double q1q2 = 0.0;       // charge product, e^2
    double lambda_pair = 0.0; // sum of lambda over quantum members; 0 => classical pair
    PairKind kind = PairKind::None;

    // Reduced mass of the quantum relative coordinate; only meaningful when
    // lambda_pair > 0 (lambda_pair = 1/(2 mu)).
    double mu() const { return 1.0 / (2.0 * lambda_pair); }
};

struct SystemSpec {
    std::vector<ParticleSpec> particles;
    BoxSpec box;
    Discretization discretization;
    // Optional validation potential: one-body V(r) = 0.5 * harmonic_k * |r|^2
    // applied to every non-fixed particle (0 disables). Used by the harmonic
    // oscillator validation suite.
    double harmonic_k = 0.0;

    std::vector<PairChannelSpec> pairs; // all i<j with q1q2 != 0, derived

    int n_particles() const { return static_cast<int>(particles.size()); }
    int quantum_count() const;
    int classical_count() const;

    void derive_pairs();
    void validate() const; // throws ConfigError on violated invariants
};

// Temperature <-> Trotter-number bookkeeping at fixed tau.
struct TrotterResult {
    int trotter_m = 0;
    double achieved_temperature = 0.0; // Kelvin
};
TrotterResult trotter_from_temperature(double temperature_kelvin, double tau);
double temperature_from(int trotter_m, double tau);

// Mass density of the periodic cell in g/cm^3.
double mass_density(const SystemSpec& spec);

// Builds a validated SystemSpec from a JSON configuration text. Recognized
// keys are documented in the README (presets "H", "H2+", "H3+"; model
// "AQ"/"CN"/"BO"; tau; one of M/T; box_edge or "open"; optional explicit
// particle list and harmonic_k).
SystemSpec build_system_spec(const std::string& config_json_text);

} // namespace coulpimc
