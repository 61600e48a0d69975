//! CSV and JSON emission. Every float is written with 17 significant digits
//! so that payloads are byte-stable for a fixed configuration.

use std::io::{self, Write};

use serde::Serialize;

use crate::protocol::{CouplerCalibration, ProfilePoint, ProtocolResult, SweepRow};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_outcomes_csv<W: Write>(mut w: W, result: &ProtocolResult) -> io::Result<()> {
    writeln!(w, "q3,q2,probability,fidelity,purity_before,purity_after")?;
    for o in &result.measurement.outcomes {
        let pb = o.bob_before.map_or(f64::NAN, |b| b.purity);
        let pa = o.bob_after.map_or(f64::NAN, |b| b.purity);
        writeln!(w, "{},{},{},{},{},{}", o.q3, o.q2, num(o.probability), num(o.fidelity), num(pb), num(pa))?;
    }
    Ok(())
}

pub fn write_profile_csv<W: Write>(mut w: W, profile: &[ProfilePoint]) -> io::Result<()> {
    writeln!(w, "ybar_minus_y0,F,density")?;
    for p in profile {
        writeln!(w, "{},{},{}", num(p.offset), num(p.fidelity), num(p.density))?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "phi1,si2,sf2,ti2,tf2,F,F_00,F_01,F_10,F_11")?;
    for r in rows {
        write!(w, "{},{},{},{},{},{}", num(r.phi1), num(r.si2), num(r.sf2), num(r.ti2), num(r.tf2), num(r.mean_fidelity))?;
        for f in r.fidelity {
            write!(w, ",{}", num(f))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_calibration_csv<W: Write>(mut w: W, rows: &[CouplerCalibration]) -> io::Result<()> {
    writeln!(w, "length,separation,gamma,gamma_wrapped,overlap_modulus")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            num(r.plateau_length),
            num(r.plateau_separation),
            num(r.gamma),
            num(r.gamma_wrapped),
            num(r.overlap_modulus)
        )?;
    }
    Ok(())
}

/// Pretty JSON terminated by a newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result types serialize");
    s.push('\n');
    s
}

#[cfg(feature = "cli")]
mod manifest {
    use serde::Serialize;
    use sha2::{Digest, Sha256};

    use crate::propagator::EvolutionReport;

    pub const MANIFEST_SCHEMA: &str = "saw-teleport/manifest/1";

    #[derive(Debug, Clone, Serialize)]
    pub struct ReportEntry {
        pub stage: String,
        pub steps: u64,
        pub norm_drift: f64,
        pub max_boundary_density: f64,
        pub window_shifts: u64,
        pub wall_time_s: f64,
    }

    impl ReportEntry {
        pub fn new(stage: &str, r: &EvolutionReport) -> Self {
            Self {
                stage: stage.into(),
                steps: r.steps,
                norm_drift: r.norm_drift,
                max_boundary_density: r.max_boundary_density,
                window_shifts: r.window_shifts,
                wall_time_s: r.wall_time,
            }
        }
    }

    /// Run metadata kept apart from the deterministic payloads.
    #[derive(Debug, Clone, Serialize)]
    pub struct RunManifest {
        pub schema: String,
        pub command: String,
        pub config_hash: String,
        pub code_version: String,
        pub seed: Option<u64>,
        pub started: String,
        pub finished: String,
        pub outputs: Vec<String>,
        pub reports: Vec<ReportEntry>,
        pub effective_config: String,
    }

    pub fn config_hash(canonical: &str) -> String {
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn timestamp() -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

#[cfg(feature = "cli")]
pub use manifest::*;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn profile_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        let pts = [ProfilePoint { offset: -1.0, fidelity: 0.5, density: 0.25 }];
        write_profile_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ybar_minus_y0,F,density");
        assert_eq!(lines.len(), 2);
    }
}
