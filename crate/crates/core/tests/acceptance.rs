//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The desk-scale criteria need 200 source and 50 evaluation trajectories.
//! They are generated through the harness on first use and cached under the
//! cargo target directory, keyed by the generation config hash. Extra solver
//! settings can be supplied as `RELAYLAB_ACCEPTANCE_SOLVER="key=value,..."`.
//!
//! Exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use relaylab_core::config::Settings;
use relaylab_core::diagnostics::{bootstrap_ci, enstrophy_spectrum, relative_l2};
use relaylab_core::experiment::{run_method, EvalSet, Method, MethodOutcome};
use relaylab_core::harness::{self, early_improvement_fraction, oracle_study};
use relaylab_core::io;
use relaylab_core::relay::{build_database, nearest, relay_rollout, RolloutConfig, UpdateRule};
use relaylab_core::repr::{EncoderSpec, PcaModel};
use relaylab_core::spectral::{
    gaussian_random_field, laplacian, poisson_solve, relative_divergence, velocity_from_stream, IcSpec, Solver,
};
use relaylab_core::{FrameKey, Grid, RelayDatabase, SolverConfig, Trajectory, VorticityField};

const N_SOURCE: usize = 200;
const N_EVAL: usize = 50;
const SOURCE_NU: f64 = 1e-3;
const EVAL_NU: f64 = 1e-4;
const EVAL_FIRST_ID: u32 = 100_000;
const DB_FRAMES: (usize, usize) = (10, 49);
const PCA_COMPONENTS: usize = 36;
const DB_SIZES: [usize; 4] = [25, 50, 100, 200];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        pass,
        detail: detail.into(),
    }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Check {
    check(name, false, format!("error: {e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Solver

fn solver_analytics() -> Check {
    let name = "solver analytics";
    match solver_analytics_inner() {
        Ok((pass, detail)) => check(name, pass, detail),
        Err(e) => failed(name, e),
    }
}

fn energy_enstrophy(omega: &VorticityField) -> relaylab_core::Result<(f64, f64)> {
    let psi = poisson_solve(omega)?;
    let (ux, uy) = velocity_from_stream(&psi)?;
    let n = omega.grid().len() as f64;
    let e = 0.5 * (ux.dot(&ux) + uy.dot(&uy)) / n;
    let z = 0.5 * omega.dot(omega) / n;
    Ok((e, z))
}

fn solver_analytics_inner() -> relaylab_core::Result<(bool, String)> {
    let grid = Grid::square(64)?;

    // Single mode cos(x): advection vanishes, only viscosity acts.
    let decay_cfg = SolverConfig {
        nu: 0.1,
        forcing_amplitude: 0.0,
        ..SolverConfig::default()
    };
    let w0 = VorticityField::from_fn(grid, |x, _| x.cos());
    let mut solver = Solver::new(decay_cfg.clone())?;
    let mut hat = solver.spectrum_of(&w0);
    let steps = (1.0 / decay_cfg.dt).round() as usize;
    for _ in 0..steps {
        solver.advance(&mut hat)?;
    }
    let expected = w0.scaled((-0.1f64).exp());
    let decay_err = solver.physical(&hat).sub(&expected)?.norm() / expected.norm();

    // Inviscid, unforced: energy and enstrophy are invariants.
    let inviscid = SolverConfig {
        nu: 0.0,
        forcing_amplitude: 0.0,
        ..SolverConfig::default()
    };
    let w0 = gaussian_random_field(grid, &IcSpec::default(), 11);
    let (e0, z0) = energy_enstrophy(&w0)?;
    let mut solver = Solver::new(inviscid)?;
    let mut hat = solver.spectrum_of(&w0);
    for _ in 0..100 {
        solver.advance(&mut hat)?;
    }
    let (e1, z1) = energy_enstrophy(&solver.physical(&hat))?;
    let drift = rel(e1, e0).max(rel(z1, z0));

    // Poisson inverse and incompressibility on random fields.
    let mut invariant = 0.0f64;
    for seed in 0..5 {
        let w = gaussian_random_field(grid, &IcSpec::default(), 100 + seed);
        let psi = poisson_solve(&w)?;
        let back = laplacian(&psi).scaled(-1.0);
        invariant = invariant.max(back.sub(&w)?.norm() / w.norm());
        let (ux, uy) = velocity_from_stream(&psi)?;
        invariant = invariant.max(relative_divergence(&ux, &uy));
    }

    let pass = decay_err < 1e-6 && drift < 1e-5 && invariant < 1e-10;
    Ok((
        pass,
        format!("decay rel err {decay_err:.2e} (< 1e-6), inviscid drift {drift:.2e} (< 1e-5), poisson/div {invariant:.2e} (< 1e-10)"),
    ))
}

// Retrieval

fn brute_force_nearest(keys: &[Vec<f64>], q: &[f64]) -> usize {
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = (f64::INFINITY, usize::MAX);
    for (j, k) in keys.iter().enumerate() {
        let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d = 1.0 - k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (kn * qn);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

fn tiny_database(keys: Vec<Vec<f64>>) -> relaylab_core::Result<RelayDatabase> {
    let grid = Grid::square(2)?;
    let n = keys.len();
    let zero = VorticityField::zeros(grid);
    RelayDatabase::from_parts(
        keys,
        vec![zero.clone(); n],
        vec![zero; n],
        (0..n as u32).map(|j| FrameKey::new(j / 40, j % 40)).collect(),
    )
}

fn retrieval_exactness() -> Check {
    let name = "retrieval exactness";
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dim = 36;
    let mut keys: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    // Exact duplicates and positive rescalings create ties.
    for j in (0..1000).step_by(50) {
        let src = rng.gen_range(0..1000);
        keys[j] = keys[src].clone();
    }
    let mut queries: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in (0..1000).step_by(50) {
        queries.push(keys[j].iter().map(|v| 2.0 * v).collect());
    }
    let db = match tiny_database(keys.clone()) {
        Ok(db) => db,
        Err(e) => return failed(name, e),
    };
    let mut agree = 0;
    let mut ties = 0;
    for q in &queries {
        let expected = brute_force_nearest(&keys, q);
        if keys.iter().filter(|k| **k == keys[expected]).count() > 1 {
            ties += 1;
        }
        if matches!(nearest(&db, q), Ok(j) if j == expected) {
            agree += 1;
        }
    }
    check(
        name,
        agree == queries.len(),
        format!("{agree}/{} queries agree with brute-force scan ({ties} tie cases)", queries.len()),
    )
}

fn protocol_structure() -> Check {
    let name = "protocol structure";
    let run = || -> relaylab_core::Result<BTreeSet<usize>> {
        let grid = Grid::square(8)?;
        // One long source trajectory, so no ride reaches its end.
        let frames: Vec<VorticityField> = (0..60)
            .map(|t| VorticityField::from_fn(grid, move |x, y| (x + 0.05 * t as f64).sin() + 0.3 * (2.0 * y).cos()))
            .collect();
        let traj = Trajectory {
            trajectory_id: 0,
            config: SolverConfig {
                grid,
                ..SolverConfig::default()
            },
            frames,
        };
        let db = build_database(std::slice::from_ref(&traj), &EncoderSpec::Raw, 0, 59, 1)?;
        let context: Vec<VorticityField> = traj.frames[..10].to_vec();
        let cfg = RolloutConfig {
            horizon: 10,
            ride_length: 3,
            ..RolloutConfig::default()
        };
        let r = relay_rollout(&context, &db, &EncoderSpec::Raw, &cfg, None, None)?;
        if !r.forced_rematches.is_empty() {
            return Err(relaylab_core::Error::InvalidArgument(format!(
                "unexpected forced rematches {:?}",
                r.forced_rematches
            )));
        }
        Ok(r.rematch_steps)
    };
    match run() {
        Ok(steps) => {
            let expected: BTreeSet<usize> = [1, 4, 7, 10].into();
            check(name, steps == expected, format!("rematch steps {steps:?} (expected {{1, 4, 7, 10}})"))
        }
        Err(e) => failed(name, e),
    }
}

// Metrics

fn metric_identities() -> Check {
    let name = "metric identities";
    let run = || -> relaylab_core::Result<(bool, String)> {
        let grid = Grid::square(16)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let random = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..grid.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            VorticityField::from_values(grid, v)
        };
        let truth: Vec<Vec<VorticityField>> = (0..3)
            .map(|_| (0..4).map(|_| random(&mut rng)).collect::<relaylab_core::Result<_>>())
            .collect::<relaylab_core::Result<_>>()?;
        let map = |f: &dyn Fn(&VorticityField) -> VorticityField| -> Vec<Vec<VorticityField>> {
            truth.iter().map(|t| t.iter().map(f).collect()).collect()
        };
        let same = relative_l2(&truth, &truth)?.mean;
        let zero = relative_l2(&map(&|w| VorticityField::zeros(*w.grid())), &truth)?.mean;
        let double = relative_l2(&map(&|w| w.scaled(2.0)), &truth)?.mean;
        let l2_ok = same.abs() < 1e-12 && (zero - 100.0).abs() < 1e-10 && (double - 100.0).abs() < 1e-10;

        let mut parseval = 0.0f64;
        for _ in 0..5 {
            let mut w = random(&mut rng)?;
            let m = w.mean();
            w.values_mut().iter_mut().for_each(|v| *v -= m);
            let direct = 0.5 * w.dot(&w) / grid.len() as f64;
            parseval = parseval.max(rel(enstrophy_spectrum(&w)?.total(), direct));
        }

        let (reps, n, true_mean) = (1000, 50, 1.5);
        let mut covered = 0;
        for r in 0..reps {
            let xs: Vec<f64> = (0..n).map(|_| true_mean + rng.sample::<f64, _>(StandardNormal)).collect();
            let (lo, hi) = bootstrap_ci(&xs, 1000, 0.95, r as u64)?;
            if lo <= true_mean && true_mean <= hi {
                covered += 1;
            }
        }
        let coverage = 100.0 * covered as f64 / reps as f64;
        let pass = l2_ok && parseval < 1e-10 && (92.0..=98.0).contains(&coverage);
        Ok((
            pass,
            format!(
                "relative_l2 {same:.1}/{zero:.1}/{double:.1}% (0/100/100), parseval {parseval:.2e} (< 1e-10), bootstrap coverage {coverage:.1}% (92-98)"
            ),
        ))
    };
    match run() {
        Ok((pass, detail)) => check(name, pass, detail),
        Err(e) => failed(name, e),
    }
}

// Desk-scale data

struct Desk {
    source: Vec<Trajectory>,
    eval: EvalSet,
    pca: PcaModel,
}

fn solver_overrides() -> Vec<(String, String)> {
    // Per-regime time step; everything else stays at the solver defaults.
    let mut v = vec![("dt".to_string(), "0.01".to_string())];
    if let Ok(extra) = std::env::var("RELAYLAB_ACCEPTANCE_SOLVER") {
        for kv in extra.split(',').filter(|s| !s.trim().is_empty()) {
            if let Some((k, val)) = kv.split_once('=') {
                v.push((k.trim().to_string(), val.trim().to_string()));
            }
        }
    }
    v
}

fn generate_settings(nu: f64, first_id: u32, count: usize, out_dir: &Path) -> relaylab_core::Result<Settings> {
    let mut s = Settings::empty("generate")?;
    for (k, v) in solver_overrides() {
        s.set(&k, v);
    }
    s.set("nu", nu);
    s.set("first_id", first_id);
    s.set("count", count);
    s.set("seed", 0);
    s.set("n_frames", 50);
    s.set("out_dir", out_dir.display());
    Ok(s)
}

fn cache_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Generates (or reuses) one dataset; returns its manifest path.
fn dataset(nu: f64, first_id: u32, count: usize) -> relaylab_core::Result<PathBuf> {
    let probe = generate_settings(nu, first_id, count, Path::new("."))?;
    harness::solver_template(&probe)?;
    let key = relaylab_core::config::config_hash(&probe.echo());
    let dir = cache_root().join(format!("nu{nu:e}_{first_id}_{count}_{key}"));
    let manifest = dir.join("manifest.tsv");
    if manifest.exists() && io::read_manifest(&manifest)?.len() == count {
        return Ok(manifest);
    }
    let t0 = Instant::now();
    let s = generate_settings(nu, first_id, count, &dir)?;
    harness::run("generate", &s)?;
    eprintln!("generated {count} trajectories at nu = {nu} in {:.0?}", t0.elapsed());
    Ok(manifest)
}

fn desk() -> relaylab_core::Result<Desk> {
    let source_manifest = dataset(SOURCE_NU, 0, N_SOURCE)?;
    let eval_manifest = dataset(EVAL_NU, EVAL_FIRST_ID, N_EVAL)?;
    let pca_path = source_manifest.with_file_name(format!("pca{PCA_COMPONENTS}.bin"));
    if !pca_path.exists() {
        let t0 = Instant::now();
        let mut s = Settings::empty("pca-fit")?;
        s.set("source_manifest", source_manifest.display());
        s.set("eval_nu", EVAL_NU);
        s.set("frame_lo", DB_FRAMES.0);
        s.set("frame_hi", DB_FRAMES.1 + 1);
        s.set("n_components", PCA_COMPONENTS);
        s.set("out", pca_path.display());
        harness::run("pca-fit", &s)?;
        eprintln!("fitted PCA in {:.0?}", t0.elapsed());
    }
    let source = io::read_dataset(&source_manifest)?;
    let eval = EvalSet::new(io::read_dataset(&eval_manifest)?, 0)?;
    let pca = io::read_pca(&pca_path)?;
    Ok(Desk { source, eval, pca })
}

struct DeskRuns {
    persistence: MethodOutcome,
    knn_copy: MethodOutcome,
    pca_relay: MethodOutcome,
    oracle: harness::OracleStudy,
    db_sizes: Vec<f64>,
    persistence_t20: MethodOutcome,
    relay_t20: MethodOutcome,
}

fn desk_runs(d: &Desk) -> relaylab_core::Result<DeskRuns> {
    let t0 = Instant::now();
    let pca = EncoderSpec::Pca(std::sync::Arc::new(d.pca.clone()));
    let raw_db = build_database(&d.source, &EncoderSpec::Raw, DB_FRAMES.0, DB_FRAMES.1, 1)?;
    let pca_db = raw_db.rekeyed(&d.source, &pca, 1)?;
    let base = RolloutConfig::default();
    let copy = RolloutConfig {
        update_rule: UpdateRule::Copy,
        ..base.clone()
    };
    let t = base.horizon;
    let persistence = run_method(&Method::Persistence, None, &d.eval, t)?;
    let knn_copy = run_method(&Method::relay("knn-copy", EncoderSpec::Raw, copy), Some(&raw_db), &d.eval, t)?;
    let relay = Method::relay("pca-relay", pca.clone(), base.clone());
    let pca_relay = run_method(&relay, Some(&pca_db), &d.eval, t)?;
    let oracle = oracle_study(&pca_db, &pca, &base, &d.eval, t)?;
    let db_sizes = DB_SIZES
        .iter()
        .map(|&n| Ok(run_method(&relay, Some(&pca_db.subset_trajectories(n)), &d.eval, t)?.report.mean))
        .collect::<relaylab_core::Result<Vec<_>>>()?;
    let persistence_t20 = run_method(&Method::Persistence, None, &d.eval, 20)?;
    let relay_t20 = run_method(&relay, Some(&pca_db), &d.eval, 20)?;
    eprintln!("desk-scale rollouts in {:.0?}", t0.elapsed());
    Ok(DeskRuns {
        persistence,
        knn_copy,
        pca_relay,
        oracle,
        db_sizes,
        persistence_t20,
        relay_t20,
    })
}

fn cos(o: &MethodOutcome, step: usize) -> f64 {
    o.cosine_at(step).0.unwrap_or(f64::NAN)
}

fn desk_checks(r: &DeskRuns) -> Vec<Check> {
    let p = r.persistence.report.mean;
    let k = r.knn_copy.report.mean;
    let c = r.pca_relay.report.mean;
    let baseline = check(
        "baseline ordering",
        p - k >= 5.0 && p - c >= 5.0,
        format!("persistence {p:.2}% vs knn-copy {k:.2}% and pca-relay {c:.2}% (each needs >= 5pp below persistence)"),
    );

    let s = r.oracle.standard.report.mean;
    let o = r.oracle.oracle.report.mean;
    let m = r.oracle.oracle_magnitude.report.mean;
    let (alpha, best) = r.oracle.best_alpha();
    let oracle = check(
        "oracle decomposition",
        s - o >= 5.0 && m <= o,
        format!(
            "standard {s:.2}%, oracle-match {o:.2}% (needs >= 5pp below standard), oracle-magnitude {m:.2}% (needs <= oracle-match); best alpha {alpha} gives {:.2}%",
            best.report.mean
        ),
    );

    let (s1, s10) = (cos(&r.oracle.standard, 1), cos(&r.oracle.standard, 10));
    let (o1, o10) = (cos(&r.oracle.oracle, 1), cos(&r.oracle.oracle, 10));
    let cosine = check(
        "dynamics-cosine collapse",
        s10 <= s1 - 0.3 && (o10 - o1).abs() <= 0.15,
        format!("standard c1 {s1:.3} c10 {s10:.3} (drop >= 0.3), oracle c1 {o1:.3} c10 {o10:.3} (|diff| <= 0.15)"),
    );

    let e = &r.db_sizes;
    let monotone = e.windows(2).all(|w| w[1] <= w[0]);
    let frac = early_improvement_fraction(&DB_SIZES, e);
    let dbsize = check(
        "database-size diminishing returns",
        monotone && frac.is_some_and(|f| f >= 0.6),
        format!(
            "errors {} for sizes {DB_SIZES:?}; nonincreasing {monotone}; early share {}",
            e.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/"),
            frac.map_or("undefined (no improvement)".to_string(), |f| format!("{:.1}% (>= 60%)", 100.0 * f))
        ),
    );

    let (p20, r20) = (r.persistence_t20.report.mean, r.relay_t20.report.mean);
    let horizon = check(
        "long-horizon degradation",
        (r20 - p20).abs() <= 5.0,
        format!("T=20 relay {r20:.2}% vs persistence {p20:.2}% (within 5pp)"),
    );
    vec![baseline, oracle, cosine, dbsize, horizon]
}

fn pca_variance(d: &Desk) -> Check {
    let ratio = d.pca.explained_variance_ratio();
    check(
        "PCA variance",
        ratio >= 0.99,
        format!("{} components retain {:.2}% of source-frame variance (>= 99%)", d.pca.n_components(), 100.0 * ratio),
    )
}

const DESK_NAMES: [&str; 6] = [
    "baseline ordering",
    "oracle decomposition",
    "dynamics-cosine collapse",
    "database-size diminishing returns",
    "long-horizon degradation",
    "PCA variance",
];

fn main() -> ExitCode {
    let mut checks = vec![solver_analytics(), retrieval_exactness(), protocol_structure()];
    match desk() {
        Ok(d) => {
            eprintln!(
                "desk data: {} source trajectories (nu = {SOURCE_NU}), {} evaluation trajectories (nu = {EVAL_NU}), solver overrides {:?}",
                d.source.len(),
                d.eval.trajectories.len(),
                solver_overrides()
            );
            match desk_runs(&d) {
                Ok(r) => checks.extend(desk_checks(&r)),
                Err(e) => checks.extend(DESK_NAMES[..5].iter().map(|n| failed(n, &e))),
            }
            checks.push(metric_identities());
            checks.push(pca_variance(&d));
        }
        Err(e) => {
            checks.extend(DESK_NAMES[..5].iter().map(|n| failed(n, &e)));
            checks.push(metric_identities());
            checks.push(failed(DESK_NAMES[5], &e));
        }
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("acceptance: {passed}/{} criteria pass", checks.len());
    if passed == checks.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
