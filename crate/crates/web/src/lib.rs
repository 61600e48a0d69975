//! Browser bindings for the teleportation gate algebra and the SAW trap.
//! Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use saw_teleport::algebra::ideal_teleport;
use saw_teleport::device::{saw_potential, PhysicalParams};
use saw_teleport::grid::{ground_state_packet, Grid1D};

#[derive(Serialize)]
struct Outcome {
    q3: u8,
    q2: u8,
    probability: f64,
    fidelity: f64,
}

#[derive(Serialize)]
struct Teleport {
    input: [[f64; 2]; 2],
    outcomes: Vec<Outcome>,
    mean_fidelity: f64,
}

#[derive(Serialize)]
struct SweepPoint {
    phi1: f64,
    mean_fidelity: f64,
    min_fidelity: f64,
}

#[derive(Serialize)]
struct Trap {
    y: Vec<f64>,
    potential_mev: Vec<f64>,
    density: Vec<f64>,
    level_spacing_mev: f64,
    sigma_nm: f64,
    localization: f64,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// Runs the protocol on the exact algebra with coupler phases given as
/// multiples of pi.
#[wasm_bindgen]
pub fn teleport(phi1: f64, phi2: f64, gamma_prep_pi: f64, gamma_rot_pi: f64) -> String {
    let pi = std::f64::consts::PI;
    let r = ideal_teleport(phi1, phi2, gamma_prep_pi * pi, gamma_rot_pi * pi);
    let outcomes = r
        .branches
        .iter()
        .map(|b| Outcome { q3: b.q3, q2: b.q2, probability: b.probability, fidelity: b.fidelity })
        .collect();
    let input = r.input.as_array().map(|z| [z.re, z.im]);
    json(&Teleport { input, outcomes, mean_fidelity: r.mean_fidelity })
}

#[wasm_bindgen]
pub fn sweep_phi1(phi2: f64, gamma_pi: f64, points: usize) -> String {
    let pi = std::f64::consts::PI;
    let n = points.clamp(2, 2000);
    let rows: Vec<SweepPoint> = (0..n)
        .map(|k| {
            let phi1 = 2.0 * pi * k as f64 / (n - 1) as f64;
            let r = ideal_teleport(phi1, phi2, gamma_pi * pi, gamma_pi * pi);
            let min_fidelity = r.branches.iter().map(|b| b.fidelity).fold(f64::INFINITY, f64::min);
            SweepPoint { phi1, mean_fidelity: r.mean_fidelity, min_fidelity }
        })
        .collect();
    json(&rows)
}

/// Ground-state packet in one SAW minimum for amplitude `amplitude_mev` and
/// wavelength `wavelength_nm`. Returns an error string for invalid input.
#[wasm_bindgen]
pub fn trap(amplitude_mev: f64, wavelength_nm: f64) -> Result<String, JsValue> {
    let p = PhysicalParams { saw_amplitude: amplitude_mev * 1e-3, saw_wavelength: wavelength_nm, ..PhysicalParams::default() };
    p.validate().map_err(|e| JsValue::from_str(&e.to_string()))?;
    let minimum = p.saw_minimum_near(0.0, 0.0);
    let count = 401;
    let grid = Grid1D::centered(minimum, wavelength_nm / (count - 1) as f64, count).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let field = ground_state_packet(&grid, minimum, &p).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let y: Vec<f64> = grid.positions().collect();
    let density: Vec<f64> = field.iter().map(|z| z.norm_sqr()).collect();
    let localization = y.iter().zip(&density).filter(|(y, _)| (**y - minimum).abs() < 20.0).map(|(_, d)| d).sum::<f64>() * grid.spacing;
    Ok(json(&Trap {
        potential_mev: y.iter().map(|&y| saw_potential(y, 0.0, &p) * 1e3).collect(),
        y,
        density,
        level_spacing_mev: p.harmonic_energy() * 1e3,
        sigma_nm: p.packet_sigma(),
        localization,
    }))
}
