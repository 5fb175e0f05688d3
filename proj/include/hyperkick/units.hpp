#pragma once

#include <cmath>

#include "hyperkick/errors.hpp"

// Hartree atomic units throughout (hbar = m_e = e = 4πε0 = 1).
// Lengths in bohr, energies in hartree, times in atomic time units.

namespace hyperkick::units {

inline constexpr double pi = 3.14159265358979323846;

// energy
inline constexpr double kelvin_per_hartree = 315775.02480407;  // E_h / k_B
inline constexpr double hartree_per_kelvin = 1.0 / kelvin_per_hartree;
inline constexpr double hartree_per_mk = 1.0e-3 / kelvin_per_hartree;

// time
inline constexpr double seconds_per_atu = 2.4188843265857e-17;
inline constexpr double atu_per_fs = 1.0e-15 / seconds_per_atu;
inline constexpr double atu_per_ps = 1.0e-12 / seconds_per_atu;

// field intensity: peak |eps|^2 in a.u. for intensity in W/cm^2
inline constexpr double wcm2_per_au_intensity = 3.50945e16;

// helium-4 atom mass in electron masses
inline constexpr double helium_mass_me = 7296.30;

inline double mk_to_hartree(double mk) { return mk * hartree_per_mk; }
inline double hartree_to_mk(double e) { return e / hartree_per_mk; }
inline double fs_to_atu(double fs) { return fs * atu_per_fs; }
inline double ps_to_atu(double ps) { return ps * atu_per_ps; }
inline double atu_to_ps(double t) { return t * seconds_per_atu * 1.0e12; }

// Characteristic time h/|E| of an energy splitting, in atomic time units.
inline double timescale_of_energy(double energy) {
  if (energy == 0.0 || !std::isfinite(energy))
    throw ZeroEnergy("timescale_of_energy: energy must be nonzero and finite");
  return 2.0 * pi / std::abs(energy);
}

// Mass entering the hyperradial kinetic operator for three identical atoms
// of mass `atom_mass`: M_hyper = atom_mass / sqrt(3).
inline double hyper_mass(double atom_mass) { return atom_mass / std::sqrt(3.0); }

}  // namespace hyperkick::units
