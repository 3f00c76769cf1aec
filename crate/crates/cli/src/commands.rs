//! Bodies of the subcommands.

use std::collections::BTreeMap;
use std::time::Instant;

use kpcm::bridge::{
    calibrate_elliptic, calibration, correspondence_report, kp_residual_of, pole_trajectories, tau_from_cm,
    u_from_tau, CMTimeFamily, Poly3, ReportOptions,
};
use kpcm::cm::{
    calibrate_time_bridge, calibrate_trig_kappa, hamiltonian_matrix, numeric_flow_coords, positions,
    rational_flow_exact, Flavor, FlowOptions, Integrator,
};
use kpcm::kp::{calibrate_field_map, dress, kp_equation_residual, kp_jet_extend, kp_vector_field, FieldJet, LaxOperator};
use kpcm::matrix::Pivoting;
use kpcm::sato::{calibrate_flow_sign, FockWindow, GrassmannPoint, FLOW_SIGN};
use kpcm::scalar::rat;
use kpcm::weierstrass::WeierstrassLattice;
use kpcm::{
    parse_operator, print_operator, Complex64, Error, GaussianRational, LoweringConfig, MicroDiffOp, Rational,
    Result, Scalar, TruncatedSeries,
};
use serde_json::{json, Value};

use crate::io::{
    complex_json, constants_json, parse_rational, rational_string, read_json, report_json, write_text, CoordsFile,
    PairFile, PointFile, ResultDocument,
};
use crate::{BridgeCommand, CmCommand, Command, KpCommand, MdoCommand, Outcome, SatoCommand, Truncation};

pub fn dispatch(cmd: Command) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = match cmd {
        Command::Mdo(MdoCommand::Eval { expr, trunc }) => mdo_eval(&expr, trunc),
        Command::Kp(KpCommand::Flow { lax, n, depth, trunc }) => kp_flow(&lax, n, depth, trunc),
        Command::Kp(KpCommand::Residual {
            tau_from,
            u,
            approx,
            eps,
            trunc,
        }) => match (tau_from, u) {
            (Some(path), None) => {
                let pair = read_json::<PairFile>(&path)?;
                kp_residual_tau(&pair, approx.then_some(eps))
            }
            (None, Some(text)) => kp_residual_u(&text, approx.then_some(eps), trunc),
            _ => Err(Error::Input("give exactly one of --tau-from and --u".into())),
        },
        Command::Sato(SatoCommand::Dress { lax, depth, trunc }) => sato_dress(&lax, depth, trunc),
        Command::Sato(SatoCommand::Wave { point, order }) => sato_wave(&read_json(&point)?, order),
        Command::Cm(CmCommand::Simulate {
            flavor,
            coords,
            dt,
            dt_im,
            steps,
            integrator,
            sample_every,
            out,
        }) => {
            let file: CoordsFile = read_json(&coords)?;
            let sim = Simulation {
                flavor: Flavor::parse(&flavor)?,
                dt: Complex64::new(dt, dt_im),
                steps,
                integrator: Integrator::parse(&integrator)?,
                sample_every,
            };
            cm_simulate(&file, sim, out.as_deref())
        }
        Command::Cm(CmCommand::Exact { pair, k, s }) => cm_exact(&read_json(&pair)?, k, &s),
        Command::Bridge(BridgeCommand::Verify {
            pair,
            x_range,
            samples,
            steps,
        }) => {
            let (x_min, x_max) = parse_range(&x_range)?;
            let opts = ReportOptions {
                x_min,
                x_max,
                samples,
                steps,
                ..ReportOptions::default()
            };
            bridge_verify(&read_json(&pair)?, opts)
        }
        Command::Bridge(BridgeCommand::Poles { pair, x_range, samples }) => {
            bridge_poles(&read_json(&pair)?, parse_range(&x_range)?, samples)
        }
        Command::Calibrate { out } => {
            let res = calibrate()?;
            if let Some(path) = out {
                write_text(&path, &res.stdout)?;
            }
            Ok(res)
        }
    }?;
    stamp_timing(&mut out, start);
    Ok(out)
}

/// Fills the timing block of a JSON document on stdout.
fn stamp_timing(out: &mut Outcome, start: Instant) {
    if let Ok(mut doc) = ResultDocument::from_json(&out.stdout) {
        doc.timing.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        out.stdout = doc.to_json();
    }
}

fn document(command: Value, inputs: Value, outputs: Value, provenance: Value, passed: bool) -> Outcome {
    let mut doc = ResultDocument::new(command);
    doc.inputs = inputs;
    doc.outputs = outputs;
    doc.provenance = provenance;
    Outcome {
        stdout: doc.to_json(),
        passed,
    }
}

fn lowering(t: Truncation) -> LoweringConfig {
    LoweringConfig {
        order: t.trunc,
        floor: t.floor,
    }
}

fn truncation_json(t: Truncation) -> Value {
    json!({ "series_order": t.trunc, "floor": t.floor })
}

/// Expressions mentioning `i` are lowered over the Gaussian rationals.
fn needs_complex(text: &str) -> bool {
    text.contains('i')
}

pub fn parse_range(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::Input(format!("range {text:?} must look like a:b"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(bad());
    }
    Ok((a, b))
}

fn mdo_eval(expr: &str, t: Truncation) -> Result<Outcome> {
    fn go<S: Scalar>(expr: &str, t: Truncation) -> Result<(String, i32, i32)> {
        let op: MicroDiffOp<S> = parse_operator(expr, lowering(t))?;
        Ok((print_operator(&op), op.floor(), op.top()))
    }
    let (nf, floor, top) = if needs_complex(expr) {
        go::<GaussianRational>(expr, t)?
    } else {
        go::<Rational>(expr, t)?
    };
    let mut out = document(
        json!({ "name": "mdo eval" }),
        json!({ "expr": expr }),
        json!({ "normal_form": nf, "floor": floor, "top": top }),
        json!({ "truncation": truncation_json(t), "mode": "exact" }),
        true,
    );
    out.stdout = format!("{nf}\n{}", out.stdout);
    Ok(out)
}

fn kp_flow(lax: &str, n: u32, depth: u32, t: Truncation) -> Result<Outcome> {
    fn go<S: Scalar>(lax: &str, n: u32, depth: u32, t: Truncation) -> Result<String> {
        let l = LaxOperator::new(parse_operator::<S>(lax, lowering(t))?)?;
        Ok(print_operator(&kp_vector_field(l.op(), n, depth)?))
    }
    if n == 0 {
        return Err(Error::Input("n must be positive".into()));
    }
    let field = if needs_complex(lax) {
        go::<GaussianRational>(lax, n, depth, t)?
    } else {
        go::<Rational>(lax, n, depth, t)?
    };
    Ok(document(
        json!({ "name": "kp flow" }),
        json!({ "lax": lax, "n": n }),
        json!({ "vector_field": field }),
        json!({ "truncation": truncation_json(t), "depth": depth, "bracket": "[L, (L^n)_+]" }),
        true,
    ))
}

fn kp_residual_u(text: &str, eps: Option<f64>, t: Truncation) -> Result<Outcome> {
    let op: MicroDiffOp<Rational> = parse_operator(text, lowering(t))?;
    if op.terms().any(|(d, s)| d != 0 && !s.is_zero()) {
        return Err(Error::Input("u must be a function of t, without D".into()));
    }
    let u = op.series(0).cloned().unwrap_or_else(|| TruncatedSeries::zero(t.trunc));
    let zero = TruncatedSeries::zero(u.order());
    let mut coeffs = BTreeMap::new();
    for a in 0..=2u32 {
        for b in 0..=2 - a {
            coeffs.insert((a, b), if (a, b) == (0, 0) { u.clone() } else { zero.clone() });
        }
    }
    let residual = kp_equation_residual(&FieldJet::new(2, coeffs))?;
    let r = residual
        .coeff(0, 0)
        .cloned()
        .ok_or_else(|| Error::TruncationExhausted("no residual terms left".into()))?;
    let zero_residual = residual.is_zero(eps);
    let shown = print_operator(&MicroDiffOp::from_series(r.clone()));
    Ok(document(
        json!({ "name": "kp residual" }),
        json!({ "u": text }),
        json!({ "residual": shown, "residual_known_order": r.order(), "zero": zero_residual }),
        json!({
            "truncation": truncation_json(t),
            "mode": if eps.is_some() { "approx" } else { "exact" },
            "eps": eps,
        }),
        zero_residual,
    ))
}

/// `Σ c tᵃxᵇyᶜ` in a readable form.
pub fn poly_string(p: &Poly3<Rational>) -> String {
    if p.is_zero() {
        return "0".into();
    }
    let mut out = String::new();
    for (m, c) in p.terms().collect::<Vec<_>>().into_iter().rev() {
        let neg = *c < Rational::from_integer(0.into());
        let mag = if neg { -c.clone() } else { c.clone() };
        let mut factors = Vec::new();
        for (name, e) in ["t", "x", "y"].iter().zip(m) {
            match e {
                0 => {}
                1 => factors.push(name.to_string()),
                e => factors.push(format!("{name}^{e}")),
            }
        }
        let one = Rational::from_integer(1.into());
        if mag != one || factors.is_empty() {
            factors.insert(0, rational_string(&mag));
        }
        let term = factors.join("*");
        if out.is_empty() {
            out = if neg { format!("-{term}") } else { term };
        } else {
            out.push_str(if neg { " - " } else { " + " });
            out.push_str(&term);
        }
    }
    out
}

fn kp_residual_tau(file: &PairFile, eps: Option<f64>) -> Result<Outcome> {
    let pair = file.to_pair()?;
    let fam = CMTimeFamily::calibrated(pair)?;
    let tau = tau_from_cm(&fam)?;
    let u = u_from_tau(&tau)?;
    let residual = kp_residual_of(&tau, &u);
    let constants = constants_json(&calibration()?.constants);
    let (zero, detail) = match eps {
        None => (residual.num.is_zero(), json!({ "numerator_terms": residual.num.len() })),
        Some(eps) => {
            let num = residual.num.map(|c| c.to_c64());
            let den = tau.poly().map(|c| c.to_c64());
            let mut worst: f64 = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    for k in 0..5 {
                        let t = Complex64::new(0.31 + 0.4 * i as f64, 0.27);
                        let x = Complex64::new(-0.4 + 0.2 * j as f64, 0.0);
                        let y = Complex64::new(-0.3 + 0.15 * k as f64, 0.0);
                        let v = num.eval(&t, &x, &y) / den.eval(&t, &x, &y).powu(residual.power);
                        worst = worst.max(v.norm());
                    }
                }
            }
            (worst <= eps, json!({ "max_abs_residual": worst, "sample_points": 125 }))
        }
    };
    Ok(document(
        json!({ "name": "kp residual" }),
        json!({ "pair": file }),
        json!({ "tau": poly_string(tau.poly()), "zero": zero, "detail": detail }),
        json!({ "constants": constants, "mode": if eps.is_some() { "approx" } else { "exact" }, "eps": eps }),
        zero,
    ))
}

fn sato_dress(lax: &str, depth: u32, t: Truncation) -> Result<Outcome> {
    let l = LaxOperator::new(parse_operator::<Rational>(lax, lowering(t))?)?;
    let w = dress(&l, depth)?;
    let back = w.conjugate_derivation(depth)?;
    let ok = back.agrees_with(&l.op().truncate_below(-(depth as i32)));
    Ok(document(
        json!({ "name": "sato dress" }),
        json!({ "lax": lax, "depth": depth }),
        json!({ "wave_operator": print_operator(&w), "roundtrip": ok }),
        json!({ "truncation": truncation_json(t), "gauge": "w_k(0) = 0" }),
        ok,
    ))
}

fn sato_wave(file: &PointFile, order: usize) -> Result<Outcome> {
    let piv = Pivoting::EXACT_ZERO;
    let p = file.to_point()?;
    if !p.big_cell_test(piv)? {
        return Err(Error::BigCellViolation);
    }
    let w = p.wave_operator(order, piv)?;
    Ok(document(
        json!({ "name": "sato wave" }),
        json!({ "point": file }),
        json!({ "wave_operator": print_operator(&w), "index": p.index(), "big_cell": true }),
        json!({ "window": { "n": file.n, "m": file.m }, "open_below": -(file.n as i64) }),
        true,
    ))
}

#[derive(Clone, Copy, Debug)]
struct Simulation {
    flavor: Flavor,
    dt: Complex64,
    steps: usize,
    integrator: Integrator,
    sample_every: usize,
}

fn cm_simulate(file: &CoordsFile, sim: Simulation, out: Option<&std::path::Path>) -> Result<Outcome> {
    let coords = file.to_coords()?;
    if coords.flavor() != sim.flavor {
        return Err(Error::Input(format!(
            "--flavor {} does not match the coordinate file ({})",
            sim.flavor.name(),
            coords.flavor().name()
        )));
    }
    let opts = FlowOptions {
        sample_every: sim.sample_every,
        ..FlowOptions::default()
    };
    let traj = numeric_flow_coords(&coords, sim.dt, sim.steps, sim.integrator, opts)?;
    let csv = traj.to_csv();
    let Some(path) = out else {
        return Ok(Outcome { stdout: csv, passed: true });
    };
    write_text(path, &csv)?;
    let collision = traj.collision.as_ref().map(|c| {
        json!({ "step": c.step, "time": complex_json(c.time), "i": c.i, "j": c.j, "separation": c.separation })
    });
    Ok(document(
        json!({ "name": "cm simulate" }),
        json!({ "coords": file, "dt": complex_json(sim.dt), "steps": sim.steps }),
        json!({
            "csv": path.display().to_string(),
            "samples": traj.samples.len(),
            "energy_drift": traj.energy_drift,
            "collision": collision,
        }),
        json!({
            "integrator": format!("{:?}", sim.integrator).to_lowercase(),
            "collision_threshold": opts.collision_threshold,
        }),
        true,
    ))
}

fn cm_exact(file: &PairFile, k: u32, s: &str) -> Result<Outcome> {
    let pair = file.to_pair()?;
    if k == 0 {
        return Err(Error::Input("k must be positive".into()));
    }
    let s_val = parse_rational(s)?;
    let flowed = rational_flow_exact(&pair, k, &s_val)?;
    let traces = |p: &kpcm::cm::CMPair<Rational>| {
        (1..=p.n() as u32)
            .map(|j| hamiltonian_matrix(p, j))
            .collect::<Result<Vec<_>>>()
    };
    let before = traces(&pair)?;
    let after = traces(&flowed)?;
    let conserved = before == after;
    let pos: Vec<Value> = positions(&flowed)?.into_iter().map(complex_json).collect();
    Ok(document(
        json!({ "name": "cm exact" }),
        json!({ "pair": file, "k": k, "s": rational_string(&s_val) }),
        json!({
            "pair": PairFile::from_pair(&flowed),
            "positions": pos,
            "hamiltonians": after.iter().map(rational_string).collect::<Vec<_>>(),
            "conserved": conserved,
        }),
        json!({ "mode": "exact" }),
        conserved,
    ))
}

fn bridge_verify(file: &PairFile, opts: ReportOptions) -> Result<Outcome> {
    let pair = file.to_pair_unchecked()?;
    let report = correspondence_report(&pair, opts)?;
    Ok(document(
        json!({ "name": "bridge verify" }),
        json!({ "pair": file }),
        report_json(&report),
        json!({
            "constants": constants_json(&report.constants),
            "x_range": [opts.x_min, opts.x_max],
            "samples": opts.samples,
            "steps": opts.steps,
            "tolerance": opts.tolerance,
            "mode": "exact",
        }),
        report.passed,
    ))
}

fn bridge_poles(file: &PairFile, range: (f64, f64), samples: usize) -> Result<Outcome> {
    let fam = CMTimeFamily::calibrated(file.to_pair()?)?;
    let samples = samples.max(2);
    let xs: Vec<f64> = (0..samples)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (samples - 1) as f64)
        .collect();
    let paths = pole_trajectories(&fam, &xs)?;
    for c in &paths.collisions {
        eprintln!("collision at x = {:.12} (s = {:.12})", c.x, c.s);
    }
    Ok(Outcome {
        stdout: paths.to_csv(),
        passed: true,
    })
}

/// Fixed, non-degenerate point for the flow-sign calibration.
fn calibration_point() -> Result<GrassmannPoint<Rational>> {
    let w = FockWindow::new(5, 7)?;
    let basis = (0..=w.height() as i32)
        .map(|k| {
            let mut v = vec![rat(0, 1); w.len()];
            v[w.row(k).expect("inside")] = rat(1, 1);
            for d in 1..=w.depth() as i32 {
                let x = (7 + 13 * k as i64 + 5 * d as i64 * d as i64) % 5 - 2;
                v[w.row(-d).expect("inside")] = rat(x, 1 + (k as i64 % 2));
            }
            v
        })
        .collect();
    GrassmannPoint::new(w, basis, 0, Pivoting::EXACT_ZERO)
}

fn calibrate() -> Result<Outcome> {
    let bridge = calibration()?;

    let u1 = TruncatedSeries::from_coeffs((0..=10i64).map(|k| rat(k + 1, k * k + 1)).collect());
    let u2 = TruncatedSeries::from_coeffs((0..=10i64).map(|k| rat(k - 2, 3)).collect());
    let l = LaxOperator::from_coefficients(vec![u1, u2]).padded(8);
    let (alpha, beta) = calibrate_field_map(&kp_jet_extend(&l, 3, 2, 4, None)?, None)?;

    let sigma = calibrate_flow_sign(&calibration_point()?, 3, None, Pivoting::EXACT_ZERO)?;
    let trig = calibrate_trig_kappa()?;
    let mu = calibrate_time_bridge()?;
    let lattice = WeierstrassLattice::rectangular(1.0, 1.3)?;
    let ell = calibrate_elliptic(&lattice)?;

    let consistent = sigma == FLOW_SIGN;
    let outputs = json!({
        "bridge": {
            "constants": constants_json(&bridge.constants),
            "solutions": bridge.solutions.iter().map(constants_json).collect::<Vec<_>>(),
            "log": bridge.log,
        },
        "kp_field_map": { "alpha": rational_string(&alpha), "y_sign": beta },
        "sato_flow_sign": sigma,
        "trig": { "kappa": complex_json(trig.kappa), "coupling": complex_json(trig.coupling) },
        "time_bridge_mu": complex_json(mu),
        "elliptic": {
            "status": if ell.conclusive { "conclusive" } else { "inconclusive" },
            "b": complex_json(ell.b),
            "residual_n1": ell.residual_n1,
            "residual_n2": ell.residual_n2,
            "tolerance": ell.tolerance,
        },
    });
    Ok(document(
        json!({ "name": "calibrate" }),
        json!({}),
        outputs,
        json!({ "elliptic_lattice": [1.0, 1.3], "mode": "exact where possible" }),
        consistent,
    ))
}
