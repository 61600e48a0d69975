//! Unit system: nm, fs, eV.

/// Reduced Planck constant in eV fs.
pub const HBAR: f64 = 0.658_211_956_9;

/// `hbar^2 / (2 m_e)` in eV nm^2.
pub const HBAR2_OVER_2ME: f64 = 0.038_099_821_2;

/// `e^2 / (4 pi eps_0)` in eV nm.
pub const COULOMB_CONSTANT: f64 = 1.439_964_5;
