use relaylab_core::diagnostics::enstrophy_spectrum;
use relaylab_core::experiment::generate_dataset;
use relaylab_core::io;
use relaylab_core::spectral::{gaussian_random_field, generate_trajectory, poisson_solve, velocity_from_stream, IcSpec, Solver};
use relaylab_core::{Grid, SolverConfig, VorticityField};

fn unforced(nu: f64) -> SolverConfig {
    SolverConfig {
        nu,
        forcing_amplitude: 0.0,
        ..SolverConfig::default()
    }
}

fn run(cfg: &SolverConfig, w0: &VorticityField, steps: usize) -> VorticityField {
    let mut solver = Solver::new(cfg.clone()).unwrap();
    let mut hat = solver.spectrum_of(w0);
    for _ in 0..steps {
        solver.advance(&mut hat).unwrap();
    }
    solver.physical(&hat)
}

fn invariants(w: &VorticityField) -> (f64, f64) {
    let (ux, uy) = velocity_from_stream(&poisson_solve(w).unwrap()).unwrap();
    let n = w.grid().len() as f64;
    (0.5 * (ux.dot(&ux) + uy.dot(&uy)) / n, 0.5 * w.dot(w) / n)
}

#[test]
fn single_modes_decay_exponentially() {
    let grid = Grid::square(64).unwrap();
    for (kx, ky, nu) in [(1.0, 0.0, 0.1), (0.0, 3.0, 0.01), (2.0, 2.0, 0.05)] {
        let cfg = unforced(nu);
        let w0 = VorticityField::from_fn(grid, |x, y| (kx * x + ky * y).cos());
        let w1 = run(&cfg, &w0, 1000);
        let expected = w0.scaled((-nu * (kx * kx + ky * ky)).exp());
        let err = w1.sub(&expected).unwrap().norm() / expected.norm();
        assert!(err < 1e-6, "mode ({kx}, {ky}) nu {nu}: {err:e}");
    }
}

#[test]
fn inviscid_flow_conserves_energy_and_enstrophy() {
    let grid = Grid::square(64).unwrap();
    let w0 = gaussian_random_field(grid, &IcSpec::default(), 3);
    let (e0, z0) = invariants(&w0);
    let cfg = unforced(0.0);
    for steps in [1, 100] {
        let (e, z) = invariants(&run(&cfg, &w0, steps));
        assert!(((e - e0) / e0).abs() < 1e-5, "{steps} steps: energy {e} vs {e0}");
        assert!(((z - z0) / z0).abs() < 1e-5, "{steps} steps: enstrophy {z} vs {z0}");
    }
}

#[test]
fn generation_is_deterministic_and_seeded() {
    let cfg = SolverConfig {
        grid: Grid::square(32).unwrap(),
        dt: 0.01,
        spinup_time: 1.0,
        record_interval: 0.5,
        seed: 9,
        ..SolverConfig::default()
    };
    let a = generate_trajectory(&cfg, 4, 0).unwrap();
    let b = generate_trajectory(&cfg, 4, 0).unwrap();
    assert_eq!(a.frames, b.frames);
    let c = generate_trajectory(&SolverConfig { seed: 10, ..cfg }, 4, 0).unwrap();
    assert_ne!(a.frames[3], c.frames[3]);
}

#[test]
fn parallel_generation_matches_sequential() {
    let template = SolverConfig {
        grid: Grid::square(16).unwrap(),
        dt: 0.02,
        spinup_time: 0.2,
        record_interval: 0.2,
        ..SolverConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&template, 3, 5, 4, 100, dir.path()).unwrap();
    let stored = io::read_dataset(&dir.path().join("manifest.tsv")).unwrap();
    for t in &stored {
        let cfg = SolverConfig {
            seed: 100 + t.trajectory_id as u64,
            ..template.clone()
        };
        let direct = generate_trajectory(&cfg, 3, t.trajectory_id).unwrap();
        assert_eq!(direct.frames, t.frames, "trajectory {}", t.trajectory_id);
    }
}

#[test]
fn forced_flow_reaches_statistical_stationarity() {
    let cfg = SolverConfig {
        nu: 1e-3,
        dt: 0.01,
        spinup_time: 100.0,
        seed: 1,
        ..SolverConfig::default()
    };
    let t = generate_trajectory(&cfg, 50, 0).unwrap();
    let z: Vec<f64> = t.frames.iter().map(|f| enstrophy_spectrum(f).unwrap().total()).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    for (i, v) in z.iter().enumerate() {
        assert!((v / mean - 1.0).abs() <= 0.5, "frame {i}: enstrophy {v} vs mean {mean}");
    }
}
