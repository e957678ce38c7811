#pragma once

namespace coulpimc {

// All internal computation is in Hartree atomic units (lengths in a0,
// energies in E_H, masses in m_e, hbar = 1). The constants below are the
// only unit conversions; they appear at I/O boundaries only.
namespace constants {

// Boltzmann constant in E_H per Kelvin.
inline constexpr double k_B = 3.166811563e-6;

// Conversion factors for reporting.
inline constexpr double hartree_per_ev = 1.0 / 27.211386245988;
inline constexpr double gram_per_me = 9.1093837015e-28;
inline constexpr double cm_per_bohr = 5.29177210903e-9;

// Proton mass in electron masses.
inline constexpr double proton_mass = 1.83615267248e3;

} // namespace constants

} // namespace coulpimc
