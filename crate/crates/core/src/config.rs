//! Run configuration: TOML ingestion with provenance, validation and
//! canonical re-serialization.

use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::device::{GateMode, Layout, PhysicalParams};
use crate::propagator::NumericsParams;
use crate::protocol::{MeasurementKind, ProtocolConfig, ProtocolParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Syntax,
    UnknownKey,
    MissingSection,
    Range,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    File { line: usize, column: usize },
    Defaulted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub provenance: Provenance,
}

impl fmt::Display for ConfigEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.provenance {
            Provenance::Defaulted => write!(f, "defaulted {} = {}", self.key, self.value),
            Provenance::File { line, column } => write!(f, "set {} = {} (line {line}, column {column})", self.key, self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    pub directory: String,
    /// Times (fs) at which diagonal snapshots are written.
    pub snapshot_times: Vec<f64>,
    pub sweep_points: usize,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self { directory: "out".into(), snapshot_times: Vec::new(), sweep_points: 25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub numerics: NumericsParams,
    pub layout: Layout,
    pub coupler_mode: GateMode,
    /// Phase injected by matrix-mode couplers.
    pub coupler_gamma: f64,
    pub barrier_mode: GateMode,
    pub protocol: ProtocolParams,
    pub output: OutputParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            physical: PhysicalParams::default(),
            numerics: NumericsParams::default(),
            layout: Layout::default(),
            coupler_mode: GateMode::Dynamic,
            coupler_gamma: std::f64::consts::PI,
            barrier_mode: GateMode::Matrix,
            protocol: ProtocolParams::default(),
            output: OutputParams::default(),
        }
    }
}

impl RunConfig {
    pub fn protocol_config(&self) -> ProtocolConfig {
        let mut bp = self.layout.build();
        for c in &mut bp.couplers {
            c.mode = self.coupler_mode;
            c.gamma = self.coupler_gamma;
        }
        for b in &mut bp.barriers {
            b.mode = self.barrier_mode;
        }
        ProtocolConfig { blueprint: bp, physical: self.physical, numerics: self.numerics, protocol: self.protocol }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    physical: Option<Spanned<RawPhysical>>,
    numerics: Option<Spanned<RawNumerics>>,
    blueprint: Option<Spanned<RawBlueprint>>,
    protocol: Option<Spanned<RawProtocol>>,
    output: Option<Spanned<RawOutput>>,
}

type F = Option<Spanned<f64>>;

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPhysical {
    saw: Option<RawSaw>,
    coulomb: Option<RawCoulomb>,
    effective_mass_ratio: F,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSaw {
    #[serde(rename = "amplitude_eV")]
    amplitude: F,
    wavelength_nm: F,
    velocity_nm_per_fs: F,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawCoulomb {
    screening_length_nm: F,
    relative_permittivity: F,
    #[serde(rename = "constant_eV_nm")]
    constant: F,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    dy_nm: F,
    dt_fs: F,
    window_width_nm: F,
    window_margin_sigma: F,
    convergence_refinement: F,
    boundary_tolerance: F,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBlueprint {
    layout: Option<RawLayout>,
    coupler_mode: Option<Spanned<String>>,
    coupler_gamma_rad: F,
    barrier_mode: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    start_y_nm: F,
    gap_nm: F,
    barrier_length_nm: F,
    ramp_length_nm: F,
    plateau_length_nm: F,
    plateau_separation_nm: F,
    wire_pitch_far_nm: F,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    phi1_rad: F,
    phi2_rad: F,
    initial_center_nm: F,
    measurement: Option<Spanned<String>>,
    seed: Option<Spanned<i64>>,
    rank_tolerance: F,
    rank_limit: Option<Spanned<i64>>,
    profile_half_width_nm: F,
    calibrate_dynamic: Option<Spanned<bool>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<Spanned<String>>,
    snapshot_times_fs: Option<Spanned<Vec<f64>>>,
    sweep_points: Option<Spanned<i64>>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    (line, column)
}

struct Reader<'t> {
    text: &'t str,
    entries: Vec<ConfigEntry>,
}

impl Reader<'_> {
    fn err(&self, kind: ConfigErrorKind, span: Range<usize>, message: String) -> ConfigError {
        let (line, column) = line_col(self.text, span.start);
        ConfigError { kind, line, column, message }
    }

    fn record(&mut self, key: &str, value: String, span: Option<Range<usize>>) {
        let provenance = match span {
            Some(s) => {
                let (line, column) = line_col(self.text, s.start);
                Provenance::File { line, column }
            }
            None => Provenance::Defaulted,
        };
        self.entries.push(ConfigEntry { key: key.into(), value, provenance });
    }

    fn take<T: Clone + fmt::Debug>(
        &mut self,
        key: &str,
        field: Option<Spanned<T>>,
        default: T,
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<T, ConfigError> {
        match field {
            Some(v) => {
                let span = v.span();
                let value = v.into_inner();
                check(&value).map_err(|m| self.err(ConfigErrorKind::Range, span.clone(), format!("{key}: {m}")))?;
                self.record(key, format!("{value:?}"), Some(span));
                Ok(value)
            }
            None => {
                self.record(key, format!("{default:?}"), None);
                Ok(default)
            }
        }
    }
}

fn positive(v: &f64) -> Result<(), String> {
    if v.is_finite() && *v > 0.0 {
        Ok(())
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn non_negative(v: &f64) -> Result<(), String> {
    if v.is_finite() && *v >= 0.0 {
        Ok(())
    } else {
        Err(format!("must be non-negative, got {v}"))
    }
}

fn finite(v: &f64) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("must be finite, got {v}"))
    }
}

fn at_least_one(v: &f64) -> Result<(), String> {
    if v.is_finite() && *v >= 1.0 {
        Ok(())
    } else {
        Err(format!("must be at least 1, got {v}"))
    }
}

fn unit_interval(v: &f64) -> Result<(), String> {
    if *v > 0.0 && *v < 1.0 {
        Ok(())
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

fn mode(v: &String) -> Result<(), String> {
    match v.as_str() {
        "matrix" | "dynamic" => Ok(()),
        _ => Err(format!("expected \"matrix\" or \"dynamic\", got {v:?}")),
    }
}

fn parse_mode(v: &str) -> GateMode {
    if v == "dynamic" {
        GateMode::Dynamic
    } else {
        GateMode::Matrix
    }
}

fn mode_name(m: GateMode) -> String {
    match m {
        GateMode::Matrix => "matrix".into(),
        GateMode::Dynamic => "dynamic".into(),
    }
}

/// Parses a configuration file.
///
/// All five sections must be present; keys left out take their defaults and
/// are recorded as such in the returned entries.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<ConfigEntry>), ConfigError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| {
        let (line, column) = line_col(text, e.span().map_or(0, |s| s.start));
        let msg = e.message().to_string();
        let kind = if msg.contains("unknown field") { ConfigErrorKind::UnknownKey } else { ConfigErrorKind::Syntax };
        ConfigError { kind, line, column, message: msg }
    })?;
    let mut r = Reader { text, entries: Vec::new() };
    let end = text.len()..text.len();
    let section = |name: &str| ConfigError {
        kind: ConfigErrorKind::MissingSection,
        line: line_col(text, end.start).0,
        column: 1,
        message: format!("missing section [{name}]"),
    };
    let physical = raw.physical.ok_or_else(|| section("physical"))?.into_inner();
    let numerics = raw.numerics.ok_or_else(|| section("numerics"))?.into_inner();
    let blueprint = raw.blueprint.ok_or_else(|| section("blueprint"))?.into_inner();
    let protocol = raw.protocol.ok_or_else(|| section("protocol"))?.into_inner();
    let output = raw.output.ok_or_else(|| section("output"))?.into_inner();

    let d = RunConfig::default();
    let saw = physical.saw.unwrap_or_default();
    let coul = physical.coulomb.unwrap_or_default();
    let phys = PhysicalParams {
        saw_amplitude: r.take("physical.saw.amplitude_eV", saw.amplitude, d.physical.saw_amplitude, positive)?,
        saw_wavelength: r.take("physical.saw.wavelength_nm", saw.wavelength_nm, d.physical.saw_wavelength, positive)?,
        sound_speed: r.take("physical.saw.velocity_nm_per_fs", saw.velocity_nm_per_fs, d.physical.sound_speed, positive)?,
        screening_length: r.take("physical.coulomb.screening_length_nm", coul.screening_length_nm, d.physical.screening_length, positive)?,
        relative_permittivity: r.take(
            "physical.coulomb.relative_permittivity",
            coul.relative_permittivity,
            d.physical.relative_permittivity,
            positive,
        )?,
        coulomb_constant: r.take("physical.coulomb.constant_eV_nm", coul.constant, d.physical.coulomb_constant, non_negative)?,
        effective_mass_ratio: r.take("physical.effective_mass_ratio", physical.effective_mass_ratio, d.physical.effective_mass_ratio, positive)?,
    };
    let num = NumericsParams {
        dy: r.take("numerics.dy_nm", numerics.dy_nm, d.numerics.dy, positive)?,
        dt: r.take("numerics.dt_fs", numerics.dt_fs, d.numerics.dt, positive)?,
        window_width: r.take("numerics.window_width_nm", numerics.window_width_nm, d.numerics.window_width, positive)?,
        window_margin_sigma: r.take("numerics.window_margin_sigma", numerics.window_margin_sigma, d.numerics.window_margin_sigma, positive)?,
        convergence_refinement: r.take(
            "numerics.convergence_refinement",
            numerics.convergence_refinement,
            d.numerics.convergence_refinement,
            at_least_one,
        )?,
        boundary_tolerance: r.take("numerics.boundary_tolerance", numerics.boundary_tolerance, d.numerics.boundary_tolerance, unit_interval)?,
    };
    let lay = blueprint.layout.unwrap_or_default();
    let layout = Layout {
        start_y: r.take("blueprint.layout.start_y_nm", lay.start_y_nm, d.layout.start_y, finite)?,
        gap: r.take("blueprint.layout.gap_nm", lay.gap_nm, d.layout.gap, positive)?,
        barrier_length: r.take("blueprint.layout.barrier_length_nm", lay.barrier_length_nm, d.layout.barrier_length, positive)?,
        ramp_length: r.take("blueprint.layout.ramp_length_nm", lay.ramp_length_nm, d.layout.ramp_length, non_negative)?,
        plateau_length: r.take("blueprint.layout.plateau_length_nm", lay.plateau_length_nm, d.layout.plateau_length, positive)?,
        plateau_separation: r.take(
            "blueprint.layout.plateau_separation_nm",
            lay.plateau_separation_nm,
            d.layout.plateau_separation,
            positive,
        )?,
        wire_pitch_far: r.take("blueprint.layout.wire_pitch_far_nm", lay.wire_pitch_far_nm, d.layout.wire_pitch_far, positive)?,
    };
    let coupler_mode = parse_mode(&r.take("blueprint.coupler_mode", blueprint.coupler_mode, mode_name(d.coupler_mode), mode)?);
    let coupler_gamma = r.take("blueprint.coupler_gamma_rad", blueprint.coupler_gamma_rad, d.coupler_gamma, finite)?;
    let barrier_mode = parse_mode(&r.take("blueprint.barrier_mode", blueprint.barrier_mode, mode_name(d.barrier_mode), mode)?);

    let dp = d.protocol;
    let measurement = r.take("protocol.measurement", protocol.measurement, "enumerate".to_string(), |v: &String| match v.as_str() {
        "enumerate" | "sample" => Ok(()),
        _ => Err(format!("expected \"enumerate\" or \"sample\", got {v:?}")),
    })?;
    let seed = match protocol.seed {
        Some(s) => Some(r.take("protocol.seed", Some(s), 0, |v: &i64| if *v >= 0 { Ok(()) } else { Err(format!("must be non-negative, got {v}")) })? as u64),
        None => None,
    };
    let measurement = if measurement == "sample" { MeasurementKind::Sample } else { MeasurementKind::Enumerate };
    if measurement == MeasurementKind::Sample && seed.is_none() {
        return Err(ConfigError {
            kind: ConfigErrorKind::Range,
            line: 1,
            column: 1,
            message: "protocol.measurement = \"sample\" requires protocol.seed".into(),
        });
    }
    let proto = ProtocolParams {
        phi1: r.take("protocol.phi1_rad", protocol.phi1_rad, dp.phi1, finite)?,
        phi2: r.take("protocol.phi2_rad", protocol.phi2_rad, dp.phi2, finite)?,
        initial_center: r.take("protocol.initial_center_nm", protocol.initial_center_nm, dp.initial_center, finite)?,
        measurement,
        seed,
        rank_tolerance: r.take("protocol.rank_tolerance", protocol.rank_tolerance, dp.rank_tolerance, unit_interval)?,
        rank_limit: r.take("protocol.rank_limit", protocol.rank_limit, dp.rank_limit as i64, |v: &i64| {
            if *v >= 1 {
                Ok(())
            } else {
                Err(format!("must be at least 1, got {v}"))
            }
        })? as usize,
        profile_half_width: r.take("protocol.profile_half_width_nm", protocol.profile_half_width_nm, dp.profile_half_width, positive)?,
        calibrate_dynamic: r.take("protocol.calibrate_dynamic", protocol.calibrate_dynamic, dp.calibrate_dynamic, |_| Ok(()))?,
    };
    let d_out = OutputParams::default();
    let out = OutputParams {
        directory: r.take("output.directory", output.directory, d_out.directory, |v: &String| {
            if v.is_empty() {
                Err("must not be empty".into())
            } else {
                Ok(())
            }
        })?,
        snapshot_times: r.take("output.snapshot_times_fs", output.snapshot_times_fs, d_out.snapshot_times, |v: &Vec<f64>| {
            if v.iter().all(|t| t.is_finite() && *t >= 0.0) {
                Ok(())
            } else {
                Err("times must be finite and non-negative".into())
            }
        })?,
        sweep_points: r.take("output.sweep_points", output.sweep_points, d_out.sweep_points as i64, |v: &i64| {
            if *v >= 2 {
                Ok(())
            } else {
                Err(format!("must be at least 2, got {v}"))
            }
        })? as usize,
    };
    let cfg = RunConfig {
        physical: phys,
        numerics: num,
        layout,
        coupler_mode,
        coupler_gamma,
        barrier_mode,
        protocol: proto,
        output: out,
    };
    validate_cross(&cfg, text)?;
    Ok((cfg, r.entries))
}

/// Checks that combine several keys.
fn validate_cross(cfg: &RunConfig, text: &str) -> Result<(), ConfigError> {
    let whole = |message: String| ConfigError { kind: ConfigErrorKind::Range, line: line_col(text, text.len()).0, column: 1, message };
    cfg.numerics.validate(&cfg.physical).map_err(|e| whole(e.to_string()))?;
    cfg.protocol_config().validate().map_err(|e| whole(e.to_string()))?;
    Ok(())
}

/// Canonical TOML text for `cfg`; parsing it yields `cfg` again.
pub fn serialize_config(cfg: &RunConfig) -> String {
    use toml::{Table, Value};
    let f = |v: f64| Value::Float(v);
    let table = |pairs: Vec<(&str, Value)>| -> Value { Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()) };
    let p = &cfg.physical;
    let n = &cfg.numerics;
    let l = &cfg.layout;
    let q = &cfg.protocol;
    let o = &cfg.output;
    let mut root = Table::new();
    root.insert(
        "physical".into(),
        table(vec![
            (
                "saw",
                table(vec![("amplitude_eV", f(p.saw_amplitude)), ("wavelength_nm", f(p.saw_wavelength)), ("velocity_nm_per_fs", f(p.sound_speed))]),
            ),
            (
                "coulomb",
                table(vec![
                    ("screening_length_nm", f(p.screening_length)),
                    ("relative_permittivity", f(p.relative_permittivity)),
                    ("constant_eV_nm", f(p.coulomb_constant)),
                ]),
            ),
            ("effective_mass_ratio", f(p.effective_mass_ratio)),
        ]),
    );
    root.insert(
        "numerics".into(),
        table(vec![
            ("dy_nm", f(n.dy)),
            ("dt_fs", f(n.dt)),
            ("window_width_nm", f(n.window_width)),
            ("window_margin_sigma", f(n.window_margin_sigma)),
            ("convergence_refinement", f(n.convergence_refinement)),
            ("boundary_tolerance", f(n.boundary_tolerance)),
        ]),
    );
    root.insert(
        "blueprint".into(),
        table(vec![
            (
                "layout",
                table(vec![
                    ("start_y_nm", f(l.start_y)),
                    ("gap_nm", f(l.gap)),
                    ("barrier_length_nm", f(l.barrier_length)),
                    ("ramp_length_nm", f(l.ramp_length)),
                    ("plateau_length_nm", f(l.plateau_length)),
                    ("plateau_separation_nm", f(l.plateau_separation)),
                    ("wire_pitch_far_nm", f(l.wire_pitch_far)),
                ]),
            ),
            ("coupler_mode", Value::String(mode_name(cfg.coupler_mode))),
            ("coupler_gamma_rad", f(cfg.coupler_gamma)),
            ("barrier_mode", Value::String(mode_name(cfg.barrier_mode))),
        ]),
    );
    let mut proto = vec![
        ("phi1_rad", f(q.phi1)),
        ("phi2_rad", f(q.phi2)),
        ("initial_center_nm", f(q.initial_center)),
        (
            "measurement",
            Value::String(match q.measurement {
                MeasurementKind::Enumerate => "enumerate".into(),
                MeasurementKind::Sample => "sample".into(),
            }),
        ),
        ("rank_tolerance", f(q.rank_tolerance)),
        ("rank_limit", Value::Integer(q.rank_limit as i64)),
        ("profile_half_width_nm", f(q.profile_half_width)),
        ("calibrate_dynamic", Value::Boolean(q.calibrate_dynamic)),
    ];
    if let Some(seed) = q.seed {
        proto.push(("seed", Value::Integer(seed as i64)));
    }
    root.insert("protocol".into(), table(proto));
    root.insert(
        "output".into(),
        table(vec![
            ("directory", Value::String(o.directory.clone())),
            ("snapshot_times_fs", Value::Array(o.snapshot_times.iter().map(|&t| f(t)).collect())),
            ("sweep_points", Value::Integer(o.sweep_points as i64)),
        ]),
    );
    toml::to_string(&root).expect("config tables serialize")
}

/// Config text with every section present and every key defaulted.
pub const MINIMAL_CONFIG: &str = "[physical]\n[numerics]\n[blueprint]\n[protocol]\n[output]\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let (cfg, entries) = parse_config(MINIMAL_CONFIG).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.physical.saw_amplitude, 0.020);
        assert_eq!(cfg.physical.saw_wavelength, 200.0);
        assert_eq!(cfg.physical.sound_speed, 3.3e-3);
        assert!(entries.iter().all(|e| e.provenance == Provenance::Defaulted));
        assert!(entries.iter().any(|e| e.to_string().starts_with("defaulted physical.saw.amplitude_eV")));
    }

    #[test]
    fn negative_amplitude_is_range_error_with_position() {
        let text = "[physical]\nsaw.amplitude_eV = -1\n[numerics]\n[blueprint]\n[protocol]\n[output]\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::Range);
        assert_eq!((e.line, e.column), (2, 20));
        assert!(e.message.contains("amplitude_eV"));
    }

    #[test]
    fn unknown_key_rejected_with_position() {
        let text = "[physical]\n[numerics]\ndy_nm = 2\nbogus = 1\n[blueprint]\n[protocol]\n[output]\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::UnknownKey);
        assert_eq!(e.line, 4);
    }

    #[test]
    fn missing_section_rejected() {
        let e = parse_config("[physical]\n[numerics]\n[blueprint]\n[protocol]\n").unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::MissingSection);
        assert!(e.message.contains("output"));
    }

    #[test]
    fn non_positive_dt_rejected() {
        let text = "[physical]\n[numerics]\ndt_fs = 0\n[blueprint]\n[protocol]\n[output]\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::Range);
        assert_eq!(e.line, 3);
    }

    #[test]
    fn sample_without_seed_rejected() {
        let text = "[physical]\n[numerics]\n[blueprint]\n[protocol]\nmeasurement = \"sample\"\n[output]\n";
        assert_eq!(parse_config(text).unwrap_err().kind, ConfigErrorKind::Range);
    }

    #[test]
    fn file_values_carry_position() {
        let text = "[physical]\n[numerics]\n  dy_nm = 2\n[blueprint]\n[protocol]\n[output]\n";
        let (cfg, entries) = parse_config(text).unwrap();
        assert_eq!(cfg.numerics.dy, 2.0);
        let e = entries.iter().find(|e| e.key == "numerics.dy_nm").unwrap();
        assert_eq!(e.provenance, Provenance::File { line: 3, column: 11 });
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "[physical]\nsaw.amplitude_eV = 0.025\ncoulomb.relative_permittivity = 10\n[numerics]\ndy_nm = 2\ndt_fs = 5\nwindow_width_nm = 160\n\
                    [blueprint]\ncoupler_mode = \"matrix\"\ncoupler_gamma_rad = 2.7646015351590183\nlayout.plateau_length_nm = 120\n\
                    [protocol]\nphi1_rad = 0.3\nmeasurement = \"sample\"\nseed = 42\n[output]\nsnapshot_times_fs = [0.0, 1000.5]\n";
        let (a, _) = parse_config(text).unwrap();
        let ser = serialize_config(&a);
        let (b, entries) = parse_config(&ser).unwrap();
        assert_eq!(a, b);
        assert_eq!(ser, serialize_config(&b));
        assert!(entries.iter().all(|e| e.provenance != Provenance::Defaulted));
    }
}
