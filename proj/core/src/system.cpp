#include "coulpimc/system.hpp"

#include <cmath>
#include <json.hpp>

#include "coulpimc/errors.hpp"

namespace coulpimc {

using nlohmann::json;

const char* to_string(ParticleModel m) {
    switch (m) {
        case ParticleModel::Quantum: return "quantum";
        case ParticleModel::Classical: return "classical";
        case ParticleModel::Fixed: return "fixed";
    }
    return "?";
}

const char* to_string(PairKind k) {
    switch (k) {
        case PairKind::None: return "none";
        case PairKind::PP: return "pp";
        case PairKind::EP: return "ep";
        case PairKind::EE: return "ee";
    }
    return "?";
}

int SystemSpec::quantum_count() const {
    int n = 0;
    for (const auto& p : particles)
        if (p.model == ParticleModel::Quantum) ++n;
    return n;
}

int SystemSpec::classical_count() const {
    int n = 0;
    for (const auto& p : particles)
        if (p.model == ParticleModel::Classical) ++n;
    return n;
}

void SystemSpec::derive_pairs() {
    pairs.clear();
    const int n = n_particles();
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const auto& a = particles[i];
            const auto& b = particles[j];
            const double q = a.charge * b.charge;
            if (q == 0.0) continue;
            PairChannelSpec ch;
            ch.i = i;
            ch.j = j;
            ch.q1q2 = q;
            ch.lambda_pair = 0.0;
            if (a.model == ParticleModel::Quantum) ch.lambda_pair += a.lambda;
            if (b.model == ParticleModel::Quantum) ch.lambda_pair += b.lambda;
            if (a.charge > 0 && b.charge > 0) ch.kind = PairKind::PP;
            else if (a.charge < 0 && b.charge < 0) ch.kind = PairKind::EE;
            else ch.kind = PairKind::EP;
            pairs.push_back(ch);
        }
    }
}

void SystemSpec::validate() const {
    if (particles.empty()) throw ConfigError("system: at least one particle required");
    for (const auto& p : particles) {
        if (!(p.mass > 0.0))
            throw ConfigError("particle '" + p.label + "': mass must be positive");
        const double expect = 1.0 / (2.0 * p.mass);
        if (std::abs(p.lambda - expect) > 1e-12 * expect)
            throw ConfigError("particle '" + p.label + "': lambda != 1/(2 mass)");
        if (p.model == ParticleModel::Fixed && !p.initial)
            throw ConfigError("particle '" + p.label + "': fixed model requires a position");
    }
    if (!(discretization.tau > 0.0)) throw ConfigError("discretization: tau must be positive");
    if (discretization.trotter_m < 2) throw ConfigError("discretization: trotter_m must be >= 2");
    if (box.periodic && !(box.edge > 0.0))
        throw ConfigError("box: edge must be positive when periodic");
    if (harmonic_k < 0.0) throw ConfigError("harmonic_k must be non-negative");
}

TrotterResult trotter_from_temperature(double temperature_kelvin, double tau) {
    if (!(temperature_kelvin > 0.0)) throw ConfigError("temperature must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    const double m_exact = 1.0 / (constants::k_B * temperature_kelvin * tau);
    const long m = std::llround(m_exact);
    if (m < 2) throw ConfigError("temperature too high for this tau");
    TrotterResult r;
    r.trotter_m = static_cast<int>(m);
    r.achieved_temperature = temperature_from(r.trotter_m, tau);
    return r;
}

double temperature_from(int trotter_m, double tau) {
    return 1.0 / (constants::k_B * trotter_m * tau);
}

double mass_density(const SystemSpec& spec) {
    if (!spec.box.periodic)
        throw ConfigError("mass_density: undefined for open boundaries");
    double mass_me = 0.0;
    for (const auto& p : spec.particles) mass_me += p.mass;
    const double grams = mass_me * constants::gram_per_me;
    const double edge_cm = spec.box.edge * constants::cm_per_bohr;
    return grams / (edge_cm * edge_cm * edge_cm);
}

namespace {

ParticleSpec make_particle(const std::string& label, double mass, double charge,
                           ParticleModel model, std::optional<Vec3> pos) {
    ParticleSpec p;
    p.label = label;
    p.mass = mass;
    p.charge = charge;
    p.model = model;
    p.lambda = 1.0 / (2.0 * mass);
    p.initial = pos;
    return p;
}

ParticleModel parse_model_word(const std::string& w) {
    if (w == "quantum") return ParticleModel::Quantum;
    if (w == "classical") return ParticleModel::Classical;
    if (w == "fixed") return ParticleModel::Fixed;
    throw ConfigError("unknown particle model '" + w + "'");
}

ParticleModel nucleus_model(const std::string& treatment) {
    if (treatment == "AQ") return ParticleModel::Quantum;
    if (treatment == "CN") return ParticleModel::Classical;
    if (treatment == "BO") return ParticleModel::Fixed;
    throw ConfigError("model must be one of AQ, CN, BO (got '" + treatment + "')");
}

// Equilateral triangle of side a in the xy plane, centroid at the origin.
std::vector<Vec3> triangle_vertices(double a) {
    const double circum = a / std::sqrt(3.0);
    std::vector<Vec3> v(3);
    v[0] = {0.0, circum, 0.0};
    v[1] = {-0.5 * a, -0.5 * circum, 0.0};
    v[2] = {0.5 * a, -0.5 * circum, 0.0};
    return v;
}

void expand_preset(const std::string& preset, const std::string& treatment,
                   const json& cfg, std::vector<ParticleSpec>& out) {
    const ParticleModel nuc = nucleus_model(treatment);
    const double mp = constants::proton_mass;
    // Electron initial offsets along z avoid the e-p coincidence singularity
    // in point initialization; the value is arbitrary (see README).
    const double eps = 0.1;
    if (preset == "H") {
        out.push_back(make_particle("p", mp, +1.0, nuc, Vec3{0, 0, 0}));
        out.push_back(make_particle("e", 1.0, -1.0, ParticleModel::Quantum, Vec3{0, 0, eps}));
    } else if (preset == "H2+") {
        const double bond = cfg.value("bond_length", 2.0);
        out.push_back(make_particle("p1", mp, +1.0, nuc, Vec3{-0.5 * bond, 0, 0}));
        out.push_back(make_particle("p2", mp, +1.0, nuc, Vec3{+0.5 * bond, 0, 0}));
        out.push_back(make_particle("e", 1.0, -1.0, ParticleModel::Quantum, Vec3{0, 0, eps}));
    } else if (preset == "H3+") {
        const double side = cfg.value("triangle_side", 1.65);
        const auto v = triangle_vertices(side);
        out.push_back(make_particle("p1", mp, +1.0, nuc, v[0]));
        out.push_back(make_particle("p2", mp, +1.0, nuc, v[1]));
        out.push_back(make_particle("p3", mp, +1.0, nuc, v[2]));
        out.push_back(make_particle("e1", 1.0, -1.0, ParticleModel::Quantum, Vec3{0, 0, +eps}));
        out.push_back(make_particle("e2", 1.0, -1.0, ParticleModel::Quantum, Vec3{0, 0, -eps}));
    } else {
        throw ConfigError("unknown preset '" + preset + "' (expected H, H2+, or H3+)");
    }
}

} // namespace

SystemSpec build_system_spec(const std::string& config_json_text) {
    json cfg;
    try {
        cfg = json::parse(config_json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }

    SystemSpec spec;

    if (cfg.contains("preset")) {
        const std::string preset = cfg.at("preset").get<std::string>();
        const std::string treatment = cfg.value("model", "AQ");
        expand_preset(preset, treatment, cfg, spec.particles);
    } else if (cfg.contains("particles")) {
        for (const auto& jp : cfg.at("particles")) {
            const std::string label = jp.value("label", "particle");
            const double mass = jp.value("mass", 0.0);
            if (!(mass > 0.0))
                throw ConfigError("particle '" + label + "': mass must be positive");
            const double charge = jp.value("charge", 0.0);
            const ParticleModel model = parse_model_word(jp.value("model", "quantum"));
            std::optional<Vec3> pos;
            if (jp.contains("position")) {
                const auto& a = jp.at("position");
                if (!a.is_array() || a.size() != 3)
                    throw ConfigError("particle '" + label + "': position must be [x,y,z]");
                pos = Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
            }
            spec.particles.push_back(make_particle(label, mass, charge, model, pos));
        }
    } else {
        throw ConfigError("config must provide either 'preset' or 'particles'");
    }

    // Box: a number is the cubic edge in a0; the string "open" disables PBC.
    if (cfg.contains("box_edge")) {
        const auto& b = cfg.at("box_edge");
        if (b.is_string()) {
            if (b.get<std::string>() != "open")
                throw ConfigError("box_edge must be a number or \"open\"");
            spec.box.periodic = false;
        } else {
            spec.box.edge = b.get<double>();
            spec.box.periodic = true;
            if (!(spec.box.edge > 0.0)) throw ConfigError("box_edge must be positive");
        }
    } else {
        spec.box.edge = 300.0;
        spec.box.periodic = true;
    }

    const double tau = cfg.value("tau", 0.03);
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    spec.discretization.tau = tau;

    const bool has_m = cfg.contains("M");
    const bool has_t = cfg.contains("T");
    if (!has_m && !has_t) throw ConfigError("config must provide exactly one of M or T");
    int m = 0;
    if (has_m) {
        m = cfg.at("M").get<int>();
        if (m < 2) throw ConfigError("M must be >= 2");
    }
    if (has_t) {
        const double t_req = cfg.at("T").get<double>();
        const auto tr = trotter_from_temperature(t_req, tau);
        if (has_m) {
            const double m_exact = 1.0 / (constants::k_B * t_req * tau);
            if (std::abs(m_exact - m) > 0.5)
                throw ConfigError("M and T are inconsistent at this tau (M=" +
                                  std::to_string(m) + ", T implies M=" +
                                  std::to_string(m_exact) + ")");
        } else {
            m = tr.trotter_m;
        }
    }
    spec.discretization.trotter_m = m;

    spec.harmonic_k = cfg.value("harmonic_k", 0.0);

    spec.derive_pairs();
    spec.validate();
    return spec;
}

} // namespace coulpimc
