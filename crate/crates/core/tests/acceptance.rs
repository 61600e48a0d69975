//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- 3 4` runs a subset. The process
//! exits non-zero on a failed criterion only when `ACCEPTANCE_STRICT` is set.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saw_teleport::algebra::{
    bell_prepare, bell_rotation, feed_forward_net, ideal_teleport, measure, SingleQubitState, ThreeQubitState,
};
use saw_teleport::device::{DeviceBlueprint, Layout, PhysicalParams};
use saw_teleport::grid::{ground_state_packet, ComponentWavefunction, Grid1D};
use saw_teleport::propagator::{cn_kinetic_step, convergence_check, NumericsParams, Propagator};
use saw_teleport::protocol::{
    calibrate_coupler, conditioned_y1, factorized_vs_full, run_bell_preparation, run_bell_rotation_factorized,
    run_state_preparation, search_separation, sweep_phi1_detailed, CouplerTreatment, Measurement, ProtocolConfig, SweepRow,
};
use saw_teleport::units::HBAR;

use saw_teleport::algebra::QubitIndex::Q1;

type Check = Result<(bool, String), String>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn criterion_1() -> Check {
    let res = ideal_teleport(2.0 * PI / 3.0, FRAC_PI_2, PI, PI);
    let (s, t) = (c(0.5, 0.0), c(0.0, 3f64.sqrt() / 2.0));
    let (h, i) = (0.5, c(0.0, 1.0));
    let mut amp = [c(0.0, 0.0); 8];
    let mut set = |x3, x2, a0: C64, a1: C64| {
        amp[ThreeQubitState::index(x3, x2, 0)] = a0;
        amp[ThreeQubitState::index(x3, x2, 1)] = a1;
    };
    set(0, 0, -h * s, -h * t);
    set(0, 1, h * t, -h * s);
    set(1, 0, i * h * s, -i * h * t);
    set(1, 1, i * h * t, i * h * s);
    let dist = res.output.phase_distance(&ThreeQubitState { amp });
    let dp = res.branches.iter().map(|b| (b.probability - 0.25).abs()).fold(0.0, f64::max);
    let df = res.branches.iter().map(|b| (b.fidelity - 1.0).abs()).fold(0.0, f64::max);
    Ok((dist < 1e-12 && dp < 1e-12 && df < 1e-12, format!("amplitude error {dist:.2e}, probability error {dp:.2e}, fidelity error {df:.2e}")))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pair = bell_prepare(PI).pair_slice(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let input = SingleQubitState::new(c(v[0], v[1]), c(v[2], v[3])).normalized().ok_or("degenerate draw")?;
        let out = bell_rotation(&ThreeQubitState::product(&input, &pair), PI);
        for o in measure(&out) {
            let bob = o.conditional_bob.ok_or("empty branch")?;
            let fixed = feed_forward_net(o.q3, o.q2).apply(&bob);
            worst = worst.max(fixed.phase_distance(&input));
        }
    }
    Ok((worst < 1e-12, format!("worst restored-state distance {worst:.2e} over 100 inputs x 4 outcomes")))
}

fn criterion_3() -> Check {
    let p = PhysicalParams::default();
    let e = p.harmonic_energy() * 1e3;
    let g = Grid1D::centered(0.0, 0.25, 1201).map_err(|e| e.to_string())?;
    let f = ground_state_packet(&g, 0.0, &p).map_err(|e| e.to_string())?;
    let s = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0);
    let loc = s.localization_probability(0, (-20.0, 20.0)) / s.norm2();
    let ok = (e - 4.74).abs() <= 0.1 && (0.90..=0.94).contains(&loc);
    Ok((ok, format!("hbar*omega = {e:.4} meV, P(|y - y0| < 20 nm) = {loc:.4}")))
}

fn criterion_4() -> Check {
    let p = PhysicalParams::default();
    let bare = DeviceBlueprint { splitters: vec![], barriers: vec![], couplers: vec![], ..DeviceBlueprint::default() };

    // unitarity of the full split step, fixed window
    let n = NumericsParams { dy: 2.0, dt: 0.05, window_width: 300.0, ..NumericsParams::default() };
    let y0 = p.saw_minimum_near(0.0, 0.0);
    let g = n.window(y0).map_err(|e| e.to_string())?;
    let f = ground_state_packet(&g, y0, &p).map_err(|e| e.to_string())?;
    let mut s = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::new(c(0.6, 0.0), c(0.0, 0.8)), 0.0);
    let mut prop = Propagator::new(&bare, &p, &n);
    prop.track_window = false;
    prop.switches.linear_field = 1e-5;
    let r = prop.run_steps(&mut s, n.dt, 100_000).map_err(|e| e.to_string())?;
    let drift = r.norm_drift;

    // discrete plane waves (Dirichlet sine modes)
    let (modes, dt, dy, m) = (64usize, 2.0, 1.0, p.kinetic_prefactor());
    let mut phase_err: f64 = 0.0;
    for mode in 1..=modes {
        let k = mode as f64 * PI / ((modes + 1) as f64 * dy);
        let line: Vec<C64> = (0..modes).map(|j| c((k * (j + 1) as f64 * dy).sin(), 0.0)).collect();
        let out = cn_kinetic_step(&line, dt, dy, m);
        let e = m * (2.0 - 2.0 * (k * dy).cos()) / (dy * dy);
        let expect = C64::from_polar(1.0, -2.0 * (e * dt / (2.0 * HBAR)).atan());
        phase_err = phase_err.max(line.iter().zip(&out).map(|(a, b)| (a * expect - b).norm()).fold(0.0, f64::max));
    }

    // SAW tracking over one period at desk numerics
    let desk = NumericsParams::desk();
    let g = desk.window(y0).map_err(|e| e.to_string())?;
    let f = ground_state_packet(&g, y0, &p).map_err(|e| e.to_string())?;
    let start = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0);
    let mut s = start.clone();
    let prop = Propagator::new(&bare, &p, &desk);
    let period = p.saw_period();
    let mut track: f64 = 0.0;
    for k in 1..=40 {
        prop.run_until(&mut s, period * k as f64 / 40.0).map_err(|e| e.to_string())?;
        track = track.max((s.mean_position(0) - (y0 + p.sound_speed * s.time)).abs());
    }
    let conv = convergence_check(&prop, &start, period, desk.convergence_refinement).map_err(|e| e.to_string())?;
    let ok = drift < 1e-10 && phase_err < 1e-10 && track < 0.5 && conv.deviation < 1e-4;
    Ok((
        ok,
        format!(
            "norm drift {drift:.2e} over 1e5 steps, Cayley phase error {phase_err:.2e}, tracking error {track:.3} nm, convergence deviation {:.2e} (dt {} vs {})",
            conv.deviation, conv.dt, conv.dt_refined
        ),
    ))
}

fn criterion_5() -> Check {
    let cfg = ProtocolConfig::desk();
    let cal = calibrate_coupler(&cfg.blueprint, "t12", &cfg.physical, &cfg.numerics).map_err(|e| e.to_string())?;
    let in_band = (cal.gamma_wrapped / PI - 0.88).abs() <= 0.15;
    let found = search_separation(&cfg.blueprint, "t12", &cfg.physical, &cfg.numerics, PI, (10.0, 30.0), 0.01 * PI);
    let (hit, found_text) = match found {
        Ok(f) => ((f.gamma / PI - 1.0).abs() <= 0.02, format!("separation {:.3} nm gives gamma = {:.4} pi", f.plateau_separation, f.gamma / PI)),
        Err(e) => (false, format!("separation search failed: {e}")),
    };
    Ok((
        in_band && hit,
        format!(
            "150 nm plateau at 5 nm: accumulated gamma = {:.4} rad ({:.3} pi), reduced {:.4} pi, band [0.73, 1.03] pi {}; {found_text}",
            cal.gamma,
            cal.gamma / PI,
            cal.gamma_wrapped / PI,
            if in_band { "met" } else { "missed" }
        ),
    ))
}

fn sweep_summary(rows: &[SweepRow]) -> (f64, f64, f64) {
    let min = rows.iter().map(|r| r.mean_fidelity).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.mean_fidelity).fold(f64::NEG_INFINITY, f64::max);
    let at = rows.iter().find(|r| (r.phi1 - 0.75 * PI).abs() < 1e-9).map_or(f64::NAN, |r| r.mean_fidelity);
    (min, max, at)
}

fn dynamic_phis() -> Vec<f64> {
    let mut v: Vec<f64> = (0..8).map(|k| k as f64 * PI / 4.0).collect();
    v.extend([PI / 3.0, 2.0 * PI / 3.0]);
    v.sort_by(f64::total_cmp);
    v
}

fn criterion_6(dynamic: &mut Option<Vec<(SweepRow, Measurement)>>) -> Check {
    let hybrid = ProtocolConfig::desk().with_couplers(CouplerTreatment::Hybrid, 0.88 * PI);
    let phis: Vec<f64> = (0..24).map(|k| k as f64 * PI / 12.0).collect();
    let rows: Vec<SweepRow> = sweep_phi1_detailed(&hybrid, &phis).map_err(|e| e.to_string())?.into_iter().map(|(r, _)| r).collect();
    let (hmin, hmax, h34) = sweep_summary(&rows);
    let hok = hmin >= 0.89 && hmax <= 1.0 + 1e-9 && h34 >= 0.97;

    let dyn_rows = sweep_phi1_detailed(&ProtocolConfig::desk(), &dynamic_phis()).map_err(|e| e.to_string())?;
    let d: Vec<SweepRow> = dyn_rows.iter().map(|(r, _)| *r).collect();
    *dynamic = Some(dyn_rows);
    let (dmin, dmax, d34) = sweep_summary(&d);
    let dok = dmin >= 0.87 && dmax <= 1.02 + 1e-9 && d34 >= 0.95;
    Ok((
        hok && dok,
        format!(
            "hybrid: min F {hmin:.4}, max F {hmax:.6}, F(3pi/4) {h34:.4} {}; dynamic: min F {dmin:.4}, max F {dmax:.4}, F(3pi/4) {d34:.4} {}",
            if hok { "met" } else { "missed" },
            if dok { "met" } else { "missed" }
        ),
    ))
}

fn criterion_7(dynamic: &mut Option<Vec<(SweepRow, Measurement)>>) -> Check {
    if dynamic.is_none() {
        *dynamic = Some(sweep_phi1_detailed(&ProtocolConfig::desk(), &dynamic_phis()).map_err(|e| e.to_string())?);
    }
    let rows = dynamic.as_ref().expect("dynamic sweep");
    let targets = [0.0, PI / 3.0, FRAC_PI_2, 2.0 * PI / 3.0, PI];
    let mut parts = Vec::new();
    let mut ok = true;
    for t in targets {
        let (_, m) = rows.iter().find(|(r, _)| (r.phi1 - t).abs() < 1e-9).ok_or("missing sweep point")?;
        let spread = m.profile_spread();
        ok &= spread < 0.02;
        parts.push(format!("{:.3}pi: {spread:.2e}", t / PI));
    }
    Ok((ok, format!("max-min of F over +-20 nm: {}", parts.join(", "))))
}

fn coarse_config() -> ProtocolConfig {
    let layout = Layout { gap: 30.0, barrier_length: 20.0, ramp_length: 40.0, plateau_length: 60.0, ..Layout::default() };
    let numerics = NumericsParams { dy: 4.0, dt: 10.0, window_width: 160.0, ..NumericsParams::desk() };
    ProtocolConfig { blueprint: layout.build(), numerics, ..ProtocolConfig::default() }
}

fn criterion_8() -> Check {
    let cfg = coarse_config();
    let check = factorized_vs_full(&cfg).map_err(|e| e.to_string())?;
    let (pair, _) = run_bell_preparation(&cfg).map_err(|e| e.to_string())?;
    let (sp, _) = run_state_preparation(&cfg).map_err(|e| e.to_string())?;
    let (_, resp) = run_bell_rotation_factorized(&pair, &sp, &cfg).map_err(|e| e.to_string())?;
    let sigma = cfg.physical.packet_sigma();
    let cond = conditioned_y1(&resp, &[c(1.0, 0.0)], &cfg, &[-sigma, 0.0, sigma]);
    let ok = check.overlap >= 0.999 && cond.max_relative_change < 0.01;
    Ok((
        ok,
        format!(
            "{} points per axis, branch rank {}, overlap {:.9}, conditioned-y1 max relative change {:.2e}",
            cfg.numerics.window_points(),
            check.branch_rank,
            check.overlap,
            cond.max_relative_change
        ),
    ))
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = "[physical]\n[numerics]\ndy_nm = 2.0\ndt_fs = 5.0\nwindow_width_nm = 160.0\n[blueprint]\ncoupler_mode = \"matrix\"\n\
               coupler_gamma_rad = 2.7646015351590183\n[protocol]\nmeasurement = \"sample\"\nseed = 7\n[output]\nsnapshot_times_fs = [0.0, 150000.0, 300000.0]\n";
    let path = dir.path().join("run.toml");
    fs::write(&path, cfg).map_err(|e| e.to_string())?;
    let runs = [("a", None), ("b", None), ("w1", Some("1")), ("w2", Some("2"))];
    for (name, workers) in runs {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_teleport"));
        cmd.arg("run").arg(&path).arg("--out").arg(dir.path().join(name));
        match workers {
            Some(w) => cmd.env("TELEPORT_WORKERS", w),
            None => cmd.env_remove("TELEPORT_WORKERS"),
        };
        let out = cmd.output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("teleport run exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
        }
    }
    let files = ["result.json", "outcomes.csv", "profile.csv", "snapshots.csv"];
    let mut mismatched = Vec::new();
    for f in files {
        let reference = fs::read(dir.path().join("a").join(f)).map_err(|e| e.to_string())?;
        for (name, _) in &runs[1..] {
            if fs::read(dir.path().join(name).join(f)).map_err(|e| e.to_string())? != reference {
                mismatched.push(format!("{name}/{f}"));
            }
        }
    }
    Ok((
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} payload files identical across 4 runs (2 repeated, 1 and 2 workers)", files.len())
        } else {
            format!("mismatched: {}", mismatched.join(", "))
        },
    ))
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut dynamic = None;
    let mut failed = Vec::new();
    for n in 1..=9u32 {
        if !want(n) {
            continue;
        }
        let start = Instant::now();
        let res = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut dynamic),
            7 => criterion_7(&mut dynamic),
            8 => criterion_8(),
            _ => criterion_9(),
        };
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed.push(n);
        }
        println!("criterion {n}: {} ({secs:.1} s) {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} failed {:?}", failed.len(), failed);
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
