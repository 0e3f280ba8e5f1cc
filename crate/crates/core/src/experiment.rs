//! Evaluation of forecasting methods on held-out trajectories and the
//! records they produce.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::diagnostics::{
    bootstrap_ci, dynamics_cosine, enstrophy_spectrum, mean_defined, relative_l2, spectral_relative_error, ErrorReport,
};
use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::io::{self, ManifestEntry};
use crate::relay::{persistence_rollout, relay_rollout, RelayDatabase, RolloutConfig, CONTEXT_LEN};
use crate::repr::{EncoderSpec, FrameKey};
use crate::spectral::{generate_trajectory, SolverConfig, Trajectory};

/// Human-readable regime label derived from the viscosity, `Re=1/ν`.
pub fn regime_label(nu: f64) -> String {
    if nu > 0.0 {
        format!("Re={}", (1.0 / nu).round())
    } else {
        "Re=inf".into()
    }
}

/// Generates `count` trajectories with ids `first_id..`, seeding trajectory
/// `id` with `base_seed + id`, and writes them plus `manifest.tsv` to `out_dir`.
pub fn generate_dataset(
    template: &SolverConfig,
    n_frames: usize,
    first_id: u32,
    count: usize,
    base_seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    template.validate()?;
    if count == 0 || n_frames == 0 {
        return Err(Error::InvalidArgument("count and n_frames must be >= 1".into()));
    }
    let entries: Vec<ManifestEntry> = (0..count as u32)
        .into_par_iter()
        .map(|k| {
            let id = first_id + k;
            let seed = base_seed.wrapping_add(id as u64);
            let cfg = SolverConfig {
                seed,
                ..template.clone()
            };
            let traj = generate_trajectory(&cfg, n_frames, id)?;
            let name = format!("traj_{id:06}.vrt");
            io::write_trajectory(&out_dir.join(&name), &traj)?;
            Ok(ManifestEntry {
                trajectory_id: id,
                seed,
                path: name.into(),
            })
        })
        .collect::<Result<_>>()?;
    io::write_manifest(&out_dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

/// Held-out trajectories of one regime. Rollouts take frames
/// `context_start..context_start+10` as context and predict the frames after.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub regime: String,
    pub trajectories: Vec<Trajectory>,
    pub context_start: usize,
}

impl EvalSet {
    pub fn new(trajectories: Vec<Trajectory>, context_start: usize) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty evaluation set".into()))?;
        let nu = first.config.nu;
        if trajectories.iter().any(|t| t.config.nu != nu) {
            return Err(Error::Protocol("evaluation set mixes viscosities".into()));
        }
        Ok(Self {
            regime: regime_label(nu),
            trajectories,
            context_start,
        })
    }

    pub fn nu(&self) -> f64 {
        self.trajectories[0].config.nu
    }

    fn check_horizon(&self, horizon: usize) -> Result<()> {
        let need = self.context_start + CONTEXT_LEN + horizon;
        match self.trajectories.iter().find(|t| t.frames.len() < need) {
            Some(t) => Err(Error::InvalidArgument(format!(
                "trajectory {} has {} frames, horizon {horizon} needs {need}",
                t.trajectory_id,
                t.frames.len()
            ))),
            None => Ok(()),
        }
    }
}

/// A forecasting method under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    Persistence,
    Relay {
        label: String,
        encoder: EncoderSpec,
        rollout: RolloutConfig,
    },
}

impl Method {
    pub fn relay(label: impl Into<String>, encoder: EncoderSpec, rollout: RolloutConfig) -> Self {
        Method::Relay {
            label: label.into(),
            encoder,
            rollout,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Method::Persistence => "persistence",
            Method::Relay { label, .. } => label,
        }
    }
}

/// Retrieval statistics over all rollouts of one method.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchStats {
    pub rematches: usize,
    pub forced_rematches: usize,
    pub distinct_entries: usize,
    pub distinct_source_trajectories: usize,
}

/// Everything measured for one method on one evaluation set.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: String,
    pub regime: String,
    pub report: ErrorReport,
    /// Percent error per trajectory and step.
    pub errors: Vec<Vec<f64>>,
    /// Per trajectory and step; empty for methods that borrow nothing.
    pub cosines: Vec<Vec<Option<f64>>>,
    /// Per-shell relative error at the final step, per trajectory.
    pub spectral_error: Vec<Vec<Option<f64>>>,
    /// `Z_pred(k) / Z_true(k)` at the final step, per trajectory.
    pub enstrophy_ratio: Vec<Vec<Option<f64>>>,
    pub matches: MatchStats,
}

impl MethodOutcome {
    pub fn horizon(&self) -> usize {
        self.report.per_step.len()
    }

    /// Mean cosine over trajectories at 1-based `step`, with the number of
    /// undefined entries.
    pub fn cosine_at(&self, step: usize) -> (Option<f64>, usize) {
        let col: Vec<Option<f64>> = self.cosines.iter().map(|c| c[step - 1]).collect();
        mean_defined(&col)
    }

    fn shell_means(rows: &[Vec<Option<f64>>]) -> Vec<(Option<f64>, usize)> {
        let shells = rows.first().map_or(0, Vec::len);
        (0..shells)
            .map(|k| mean_defined(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect()
    }
}

struct TrajectoryOutcome {
    predictions: Vec<VorticityField>,
    truth: Vec<VorticityField>,
    cosines: Vec<Option<f64>>,
    matched: Vec<usize>,
    rematches: usize,
    forced: usize,
}

/// Rolls `method` out on every evaluation trajectory and scores it.
pub fn run_method(method: &Method, db: Option<&RelayDatabase>, eval: &EvalSet, horizon: usize) -> Result<MethodOutcome> {
    eval.check_horizon(horizon)?;
    let cs = eval.context_start;
    let per_traj: Vec<TrajectoryOutcome> = eval
        .trajectories
        .par_iter()
        .map(|t| {
            let context = &t.frames[cs..cs + CONTEXT_LEN];
            let truth = &t.frames[cs + CONTEXT_LEN..cs + CONTEXT_LEN + horizon];
            match method {
                Method::Persistence => Ok(TrajectoryOutcome {
                    predictions: persistence_rollout(context, horizon)?,
                    truth: truth.to_vec(),
                    cosines: Vec::new(),
                    matched: Vec::new(),
                    rematches: 0,
                    forced: 0,
                }),
                Method::Relay { encoder, rollout, .. } => {
                    let db = db.ok_or_else(|| Error::InvalidArgument("relay method needs a database".into()))?;
                    let cfg = RolloutConfig {
                        horizon,
                        ..rollout.clone()
                    };
                    let keys = FrameKey::new(t.trajectory_id, cs as u32);
                    let r = relay_rollout(context, db, encoder, &cfg, Some(truth), Some(keys))?;
                    let cosines = (0..horizon)
                        .map(|s| {
                            let actual = t.frames[cs + CONTEXT_LEN + s].sub(&t.frames[cs + CONTEXT_LEN + s - 1])?;
                            Ok(dynamics_cosine(&r.borrowed_deltas[s], &actual))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(TrajectoryOutcome {
                        predictions: r.predictions,
                        truth: truth.to_vec(),
                        cosines,
                        matched: r.matched_indices,
                        rematches: r.rematch_steps.len(),
                        forced: r.forced_rematches.len(),
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let preds: Vec<Vec<VorticityField>> = per_traj.iter().map(|o| o.predictions.clone()).collect();
    let truth: Vec<Vec<VorticityField>> = per_traj.iter().map(|o| o.truth.clone()).collect();
    let report = relative_l2(&preds, &truth)?;
    let errors = per_traj
        .iter()
        .map(|o| {
            o.predictions
                .iter()
                .zip(&o.truth)
                .map(|(p, t)| Ok(100.0 * p.sub(t)?.norm() / t.norm()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let spectral = per_traj
        .par_iter()
        .map(|o| {
            let (p, t) = (&o.predictions[horizon - 1], &o.truth[horizon - 1]);
            let err = spectral_relative_error(p, t)?;
            let ratio = enstrophy_spectrum(p)?.ratio(&enstrophy_spectrum(t)?);
            Ok((err, ratio))
        })
        .collect::<Result<Vec<_>>>()?;
    let (spectral_error, enstrophy_ratio) = spectral.into_iter().unzip();

    let mut matches = MatchStats::default();
    let mut entries = BTreeSet::new();
    let mut sources = BTreeSet::new();
    for o in &per_traj {
        matches.rematches += o.rematches;
        matches.forced_rematches += o.forced;
        for &j in &o.matched {
            entries.insert(j);
            if let Some(db) = db {
                sources.insert(db.provenance(j).trajectory_id);
            }
        }
    }
    matches.distinct_entries = entries.len();
    matches.distinct_source_trajectories = sources.len();

    let cosines = match method {
        Method::Persistence => Vec::new(),
        Method::Relay { .. } => per_traj.into_iter().map(|o| o.cosines).collect(),
    };
    Ok(MethodOutcome {
        method: method.label().to_string(),
        regime: eval.regime.clone(),
        report,
        errors,
        cosines,
        spectral_error,
        enstrophy_ratio,
        matches,
    })
}

/// Bootstrap settings shared by every record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Summary of one method on one regime, tagged with the producing config.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub method: String,
    pub regime: String,
    pub per_step: Vec<f64>,
    pub per_step_ci: Vec<(f64, f64)>,
    pub mean: f64,
    pub ci: (f64, f64),
    pub matches: MatchStats,
    pub config_hash: String,
}

impl EvaluationRecord {
    pub fn from_outcome(o: &MethodOutcome, boot: &BootstrapSettings, config_hash: &str) -> Result<Self> {
        let ci = bootstrap_ci(&o.report.per_trajectory_means, boot.n_boot, boot.level, boot.seed)?;
        let per_step_ci = (0..o.horizon())
            .map(|s| {
                let col: Vec<f64> = o.errors.iter().map(|e| e[s]).collect();
                bootstrap_ci(&col, boot.n_boot, boot.level, boot.seed)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            method: o.method.clone(),
            regime: o.regime.clone(),
            per_step: o.report.per_step.clone(),
            per_step_ci,
            mean: o.report.mean,
            ci,
            matches: o.matches.clone(),
            config_hash: config_hash.to_string(),
        })
    }
}

/// One long-format output row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub figure: String,
    pub method: String,
    pub regime: String,
    pub step_or_shell: String,
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub config_hash: String,
}

pub const CSV_HEADER: &str = "figure,method,regime,step_or_shell,value,lo,hi,config_hash";

/// Marker written for undefined values.
pub const UNDEFINED: &str = "NA";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x}"))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == UNDEFINED {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("bad numeric field `{s}`")))
}

impl CsvRow {
    pub fn new(
        figure: &str,
        method: &str,
        regime: &str,
        step_or_shell: impl ToString,
        value: Option<f64>,
        ci: Option<(f64, f64)>,
        config_hash: &str,
    ) -> Self {
        Self {
            figure: figure.into(),
            method: method.into(),
            regime: regime.into(),
            step_or_shell: step_or_shell.to_string(),
            value,
            lo: ci.map(|c| c.0),
            hi: ci.map(|c| c.1),
            config_hash: config_hash.into(),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.figure,
            self.method,
            self.regime,
            self.step_or_shell,
            fmt_opt(self.value),
            fmt_opt(self.lo),
            fmt_opt(self.hi),
            self.config_hash
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::InvalidArgument(format!("expected 8 fields, got {}: `{line}`", f.len())));
        }
        Ok(Self {
            figure: f[0].into(),
            method: f[1].into(),
            regime: f[2].into(),
            step_or_shell: f[3].into(),
            value: parse_opt(f[4])?,
            lo: parse_opt(f[5])?,
            hi: parse_opt(f[6])?,
            config_hash: f[7].into(),
        })
    }

    fn sort_key(&self) -> (String, String, String, (u8, i64, String), String) {
        // Numeric steps and shells sort numerically, anything else after them.
        let pos = match self.step_or_shell.parse::<i64>() {
            Ok(n) => (0, n, String::new()),
            Err(_) => (1, 0, self.step_or_shell.clone()),
        };
        (
            self.figure.clone(),
            self.method.clone(),
            self.regime.clone(),
            pos,
            self.config_hash.clone(),
        )
    }
}

/// Stable sort by figure, method, regime, step/shell, hash.
pub fn sort_rows(rows: &mut [CsvRow]) {
    rows.sort_by_cached_key(CsvRow::sort_key);
}

pub fn format_rows(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_rows(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!("unexpected header {other:?}")));
        }
    }
    lines.filter(|l| !l.trim().is_empty()).map(CsvRow::parse_line).collect()
}

/// Mean-error row plus per-step rows for a record.
pub fn error_rows(figure: &str, rec: &EvaluationRecord) -> Vec<CsvRow> {
    let mut rows = vec![CsvRow::new(
        figure,
        &rec.method,
        &rec.regime,
        "mean",
        Some(rec.mean),
        Some(rec.ci),
        &rec.config_hash,
    )];
    for (s, (v, ci)) in rec.per_step.iter().zip(&rec.per_step_ci).enumerate() {
        rows.push(CsvRow::new(
            figure,
            &rec.method,
            &rec.regime,
            s + 1,
            Some(*v),
            Some(*ci),
            &rec.config_hash,
        ));
    }
    rows
}

/// Per-step dynamics cosine with bootstrap intervals over the defined
/// trajectories, plus a companion row counting undefined entries per step.
pub fn cosine_rows(o: &MethodOutcome, boot: &BootstrapSettings, hash: &str) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    if o.cosines.is_empty() {
        return Ok(rows);
    }
    for s in 1..=o.horizon() {
        let defined: Vec<f64> = o.cosines.iter().filter_map(|c| c[s - 1]).collect();
        let undefined = o.cosines.len() - defined.len();
        let (value, ci) = if defined.is_empty() {
            (None, None)
        } else {
            let mean = defined.iter().sum::<f64>() / defined.len() as f64;
            (Some(mean), Some(bootstrap_ci(&defined, boot.n_boot, boot.level, boot.seed)?))
        };
        rows.push(CsvRow::new("fig2_cosine", &o.method, &o.regime, s, value, ci, hash));
        rows.push(CsvRow::new(
            "fig2_cosine_undefined",
            &o.method,
            &o.regime,
            s,
            Some(undefined as f64),
            None,
            hash,
        ));
    }
    Ok(rows)
}

/// Shell-resolved error and enstrophy ratio at the final step.
pub fn spectral_rows(o: &MethodOutcome, hash: &str) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for (fig, data) in [
        ("fig3_spectral_error", &o.spectral_error),
        ("figA3_enstrophy_ratio", &o.enstrophy_ratio),
    ] {
        for (k, (mean, undefined)) in MethodOutcome::shell_means(data).into_iter().enumerate() {
            rows.push(CsvRow::new(fig, &o.method, &o.regime, k, mean, None, hash));
            if undefined > 0 {
                rows.push(CsvRow::new(
                    &format!("{fig}_undefined"),
                    &o.method,
                    &o.regime,
                    k,
                    Some(undefined as f64),
                    None,
                    hash,
                ));
            }
        }
    }
    rows
}

/// Plain-text table: one row per method, one column per regime, cells
/// `mean [lo, hi]`.
pub fn format_table(title: &str, records: &[EvaluationRecord]) -> String {
    let mut regimes: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !regimes.contains(&r.regime.as_str()) {
            regimes.push(&r.regime);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = format!("# {title}: mean relative L2 error (%) [95% bootstrap CI]\n");
    let _ = write!(out, "{:width$}", "method");
    for g in &regimes {
        let _ = write!(out, "  {g:>26}");
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{m:width$}");
        for g in &regimes {
            match records.iter().find(|r| r.method == *m && r.regime == *g) {
                Some(r) => {
                    let cell = format!("{:.2} [{:.2}, {:.2}]", r.mean, r.ci.0, r.ci.1);
                    let _ = write!(out, "  {cell:>26}");
                }
                None => {
                    let _ = write!(out, "  {:>26}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
