//! Command drivers. Each command reads its settings, rejects unknown keys and
//! protocol violations before doing any work, then writes its artifacts and
//! a resolved-config echo (`resolved.cfg`) next to them.
//!
//! Commands that evaluate (`rollout`, `evaluate`, `ablate-*`) only read
//! source data and models; their outputs must live outside the directories
//! that hold those inputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{ConfigFile, Settings};
use crate::error::{Error, Result};
use crate::experiment::{
    cosine_rows, error_rows, format_rows, format_table, generate_dataset, parse_rows, run_method, sort_rows,
    spectral_rows, BootstrapSettings, CsvRow, EvalSet, EvaluationRecord, Method, MethodOutcome,
};
use crate::field::Grid;
use crate::io;
use crate::relay::{build_database, RelayDatabase, RolloutConfig, UpdateRule};
use crate::repr::{fit_pca_rows, EncoderSpec, LatentTable};
use crate::spectral::{IcSpec, SolverConfig, Trajectory};

/// α grid for the oracle ablation.
pub const ALPHA_GRID: &[f64] = &[1.0, 1.25, 1.5, 1.75, 2.0, 2.5];

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct CommandReport {
    pub summary: String,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
}

/// Runs `command` with settings read from `config` (if any), after applying
/// `overrides` as if they were set in the command's section.
pub fn run_with_config(command: &str, config: Option<&Path>, overrides: &[(&str, String)]) -> Result<CommandReport> {
    let file = match config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    let mut settings = file.settings(command)?;
    for (k, v) in overrides {
        settings.set(k, v);
    }
    run(command, &settings)
}

pub fn run(command: &str, s: &Settings) -> Result<CommandReport> {
    match command {
        "generate" => generate(s),
        "pca-fit" => pca_fit(s),
        "db-build" => db_build(s),
        "rollout" => rollout(s),
        "evaluate" => evaluate(s),
        "ablate-2x2" => ablate_2x2(s),
        "ablate-oracle" => ablate_oracle(s),
        "ablate-dbsize" => ablate_dbsize(s),
        "ablate-ride" => ablate_ride(s),
        "ablate-horizon" => ablate_horizon(s),
        "ablate-history" => ablate_history(s),
        "export-csv" => export_csv(s),
        other => Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
    }
}

fn common_flags(s: &Settings) -> Result<()> {
    // Recorded in the echo; every code path is already deterministic.
    s.flag("deterministic", false)?;
    s.get("workers", 0usize)?;
    Ok(())
}

fn write_echo(dir: &Path, s: &Settings) -> Result<PathBuf> {
    let path = dir.join("resolved.cfg");
    let text = format!("{}config_hash = {}\n", s.echo(), s.hash());
    io::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn require_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(p.to_path_buf()))
    }
}

/// Solver settings shared by `generate` and the acceptance suite.
pub fn solver_template(s: &Settings) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let n: usize = s.get("grid", d.grid.nx)?;
    let cfg = SolverConfig {
        grid: Grid::square(n)?,
        nu: s.get("nu", d.nu)?,
        k_f: s.get("k_f", d.k_f)?,
        forcing_amplitude: s.get("forcing_amplitude", d.forcing_amplitude)?,
        dt: s.get("dt", d.dt)?,
        record_interval: s.get("record_interval", d.record_interval)?,
        spinup_time: s.get("spinup_time", d.spinup_time)?,
        seed: 0,
        ic: IcSpec {
            peak_wavenumber: s.get("ic_peak", d.ic.peak_wavenumber)?,
            decay: s.get("ic_decay", d.ic.decay)?,
            rms: s.get("ic_rms", d.ic.rms)?,
        },
    };
    Ok(cfg)
}

fn generate(s: &Settings) -> Result<CommandReport> {
    common_flags(s)?;
    let template = solver_template(s)?;
    let n_frames: usize = s.get("n_frames", 50)?;
    let first_id: u32 = s.get("first_id", 0)?;
    let count: usize = s.get("count", 200)?;
    let seed: u64 = s.get("seed", 0)?;
    let out_dir = s.path("out_dir")?;
    s.finish()?;
    template.validate()?;

    let entries = generate_dataset(&template, n_frames, first_id, count, seed, &out_dir)?;
    let echo = write_echo(&out_dir, s)?;
    Ok(CommandReport {
        summary: format!(
            "generated {} trajectories ({} frames, nu = {}) into {}",
            entries.len(),
            n_frames,
            template.nu,
            out_dir.display()
        ),
        outputs: vec![out_dir.join("manifest.tsv"), echo],
        config_hash: s.hash(),
    })
}

/// Loads a source dataset and rejects it if any trajectory belongs to an
/// evaluation regime.
fn load_source(manifest: &Path, eval_nu: &[f64]) -> Result<Vec<Trajectory>> {
    require_exists(manifest)?;
    let trajs = io::read_dataset(manifest)?;
    check_source(&trajs, eval_nu, manifest)?;
    Ok(trajs)
}

fn check_source(trajs: &[Trajectory], eval_nu: &[f64], manifest: &Path) -> Result<()> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: empty manifest", manifest.display())))?;
    for t in trajs {
        if t.config.nu != first.config.nu {
            return Err(Error::Protocol(format!(
                "{}: source trajectories mix viscosities",
                manifest.display()
            )));
        }
        if eval_nu.contains(&t.config.nu) {
            return Err(Error::Protocol(format!(
                "{}: trajectory {} is in evaluation regime nu = {}",
                manifest.display(),
                t.trajectory_id,
                t.config.nu
            )));
        }
    }
    Ok(())
}

fn pca_fit(s: &Settings) -> Result<CommandReport> {
    common_flags(s)?;
    let manifest = s.path("source_manifest")?;
    let eval_nu: Vec<f64> = s.list("eval_nu", &[])?;
    let frame_lo: usize = s.get("frame_lo", 10)?;
    let frame_hi: usize = s.get("frame_hi", 50)?;
    let n_components: usize = s.get("n_components", 36)?;
    let out = s.path("out")?;
    s.finish()?;
    if frame_hi <= frame_lo {
        return Err(Error::InvalidArgument(format!("empty frame range [{frame_lo}, {frame_hi})")));
    }

    let trajs = load_source(&manifest, &eval_nu)?;
    let mut rows: Vec<&[f64]> = Vec::new();
    for t in &trajs {
        if t.frames.len() < frame_hi {
            return Err(Error::InvalidArgument(format!(
                "trajectory {} has {} frames, need {frame_hi}",
                t.trajectory_id,
                t.frames.len()
            )));
        }
        rows.extend(t.frames[frame_lo..frame_hi].iter().map(|f| f.values()));
    }
    let model = fit_pca_rows(&rows, n_components)?;
    io::write_pca(&out, &model)?;
    let echo_path = out.with_extension("cfg");
    let ratio = model.explained_variance_ratio();
    let text = format!(
        "{}config_hash = {}\nexplained_variance_ratio = {ratio}\nrank = {}\n",
        s.echo(),
        s.hash(),
        model.rank
    );
    io::write_atomic(&echo_path, text.as_bytes())?;
    Ok(CommandReport {
        summary: format!(
            "fitted {n_components} components on {} frames: explained variance ratio {ratio:.6}{}",
            rows.len(),
            if model.is_rank_deficient() { " (rank deficient)" } else { "" }
        ),
        outputs: vec![out, echo_path],
        config_hash: s.hash(),
    })
}

/// Merges LTN1 files into one table; a key present in two files is an error.
pub fn load_latent_files(paths: &[PathBuf]) -> Result<EncoderSpec> {
    let mut merged: Option<LatentTable> = None;
    for p in paths {
        let t = io::read_latents(p)?;
        let m = merged.get_or_insert_with(|| LatentTable::new(t.dim()));
        if m.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                actual: t.dim(),
            });
        }
        for (k, v) in t.sorted() {
            if !m.insert(k, v.to_vec())? {
                return Err(Error::DuplicateKey {
                    path: p.clone(),
                    trajectory_id: k.trajectory_id,
                    frame_id: k.frame_id,
                });
            }
        }
    }
    let table = merged.ok_or_else(|| Error::InvalidArgument("no latent files given".into()))?;
    Ok(EncoderSpec::External {
        source: paths[0].clone(),
        table: Arc::new(table),
    })
}

fn encoder_from(kind: &str, pca: Option<&Path>, latents: &[PathBuf], grid_len: usize) -> Result<EncoderSpec> {
    match kind {
        "raw" => Ok(EncoderSpec::Raw),
        "pca" => {
            let p = pca.ok_or_else(|| bad("encoder = pca needs pca_model"))?;
            let model = io::read_pca(p)?;
            if model.dim() != grid_len {
                return Err(Error::DimensionMismatch {
                    expected: grid_len,
                    actual: model.dim(),
                });
            }
            Ok(EncoderSpec::Pca(Arc::new(model)))
        }
        "external" => {
            if latents.is_empty() {
                return Err(bad("encoder = external needs latents"));
            }
            load_latent_files(latents)
        }
        other => Err(bad(format!("unknown encoder `{other}` (raw, pca, external)"))),
    }
}

fn check_inputs(pca: Option<&Path>, latents: &[PathBuf]) -> Result<()> {
    if let Some(p) = pca {
        require_exists(p)?;
    }
    latents.iter().try_for_each(|p| require_exists(p))
}

fn db_build(s: &Settings) -> Result<CommandReport> {
    common_flags(s)?;
    let manifest = s.path("source_manifest")?;
    let eval_nu: Vec<f64> = s.list("eval_nu", &[])?;
    let encoder: String = s.get("encoder", "pca".to_string())?;
    let pca = s.opt_path("pca_model")?;
    let latents = s.paths("latents")?;
    let frame_lo: usize = s.get("frame_lo", 10)?;
    let frame_hi: usize = s.get("frame_hi", 49)?;
    let history_length: usize = s.get("history_length", 1)?;
    let out = s.path("out")?;
    s.finish()?;
    require_exists(&manifest)?;
    check_inputs(pca.as_deref(), &latents)?;

    let trajs = load_source(&manifest, &eval_nu)?;
    let spec = encoder_from(&encoder, pca.as_deref(), &latents, trajs[0].config.grid.len())?;
    let db = build_database(&trajs, &spec, frame_lo, frame_hi, history_length)?;
    let text = format!(
        "{}config_hash = {}\nentries = {}\nkey_dim = {}\n",
        s.echo(),
        s.hash(),
        db.len(),
        db.dim()
    );
    io::write_atomic(&out, text.as_bytes())?;
    Ok(CommandReport {
        summary: format!(
            "database: {} entries from {} trajectories, {}-d {} keys",
            db.len(),
            trajs.len(),
            db.dim(),
            spec.name()
        ),
        outputs: vec![out],
        config_hash: s.hash(),
    })
}

/// A database descriptor written by `db-build`, rebuilt on load.
pub struct LoadedDatabase {
    pub db: RelayDatabase,
    pub spec: EncoderSpec,
    pub source: Vec<Trajectory>,
    pub source_manifest: PathBuf,
    pub config_hash: String,
}

pub fn load_database(descriptor: &Path) -> Result<LoadedDatabase> {
    let file = ConfigFile::read(descriptor)?;
    let s = file.settings("db-build")?;
    let manifest = s.path("source_manifest")?;
    let eval_nu: Vec<f64> = s.list("eval_nu", &[])?;
    let encoder: String = s.require("encoder")?;
    let pca = s.opt_path("pca_model")?;
    let latents = s.paths("latents")?;
    let frame_lo: usize = s.require("frame_lo")?;
    let frame_hi: usize = s.require("frame_hi")?;
    let history_length: usize = s.require("history_length")?;
    let entries: usize = s.require("entries")?;
    let config_hash: String = s.require("config_hash")?;
    let source = load_source(&manifest, &eval_nu)?;
    let spec = encoder_from(&encoder, pca.as_deref(), &latents, source[0].config.grid.len())?;
    let db = build_database(&source, &spec, frame_lo, frame_hi, history_length)?;
    if db.len() != entries {
        return Err(Error::InvalidHeader {
            path: descriptor.to_path_buf(),
            reason: format!("descriptor lists {entries} entries, rebuilt {}", db.len()),
        });
    }
    Ok(LoadedDatabase {
        db,
        spec,
        source,
        source_manifest: manifest,
        config_hash,
    })
}

fn rollout_config(s: &Settings) -> Result<RolloutConfig> {
    let d = RolloutConfig::default();
    let rule: String = s.get("update_rule", d.update_rule.name().to_string())?;
    let update_rule = match rule.as_str() {
        "delta" => UpdateRule::Delta,
        "copy" => UpdateRule::Copy,
        other => {
            return Err(bad(format!("update_rule `{other}` (delta, copy)")))
        }
    };
    let cfg = RolloutConfig {
        horizon: s.get("horizon", d.horizon)?,
        ride_length: s.get("ride_length", d.ride_length)?,
        update_rule,
        alpha: s.get("alpha", d.alpha)?,
        oracle_matching: s.flag("oracle_matching", d.oracle_matching)?,
        oracle_magnitude: s.flag("oracle_magnitude", d.oracle_magnitude)?,
        history_length: s.get("history_length", d.history_length)?,
        oracle_history: s.flag("oracle_history", d.oracle_history)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bootstrap_settings(s: &Settings) -> Result<BootstrapSettings> {
    let d = BootstrapSettings::default();
    let b = BootstrapSettings {
        n_boot: s.get("n_boot", d.n_boot)?,
        level: s.get("ci_level", d.level)?,
        seed: s.get("boot_seed", d.seed)?,
    };
    if b.n_boot == 0 || !(b.level > 0.0 && b.level < 1.0) {
        return Err(bad("n_boot must be >= 1 and ci_level in (0, 1)"));
    }
    Ok(b)
}

/// Rejects an output directory that coincides with, or lies inside, a
/// directory holding inputs.
fn check_output_separation(out_dir: &Path, inputs: &[&Path]) -> Result<()> {
    let norm = |p: &Path| -> PathBuf {
        let abs = if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().map(|c| c.join(p)).unwrap_or_else(|_| p.to_path_buf())
        };
        abs.canonicalize().unwrap_or(abs)
    };
    let out = norm(out_dir);
    for input in inputs {
        let Some(dir) = input.parent() else { continue };
        let dir = norm(dir);
        if out == dir || out.starts_with(&dir) {
            return Err(Error::Protocol(format!(
                "output directory {} would write into input directory {}",
                out.display(),
                dir.display()
            )));
        }
    }
    Ok(())
}

fn load_eval_sets(manifests: &[PathBuf], context_start: usize, source: &[Trajectory]) -> Result<Vec<EvalSet>> {
    let source_nu = source[0].config.nu;
    let source_ids: std::collections::BTreeSet<u32> = source.iter().map(|t| t.trajectory_id).collect();
    manifests
        .iter()
        .map(|m| {
            require_exists(m)?;
            let trajs = io::read_dataset(m)?;
            let set = EvalSet::new(trajs, context_start)?;
            if set.nu() == source_nu {
                return Err(Error::Protocol(format!(
                    "{}: evaluation regime equals the source regime (nu = {source_nu})",
                    m.display()
                )));
            }
            if let Some(t) = set.trajectories.iter().find(|t| source_ids.contains(&t.trajectory_id)) {
                return Err(Error::Protocol(format!(
                    "{}: trajectory id {} also appears in the source set",
                    m.display(),
                    t.trajectory_id
                )));
            }
            Ok(set)
        })
        .collect()
}

/// Inputs shared by the evaluation commands.
struct Study {
    source: Vec<Trajectory>,
    evals: Vec<EvalSet>,
    pca: Option<EncoderSpec>,
    latents: Option<EncoderSpec>,
    frame_lo: usize,
    frame_hi: usize,
    boot: BootstrapSettings,
    rollout: RolloutConfig,
    out_dir: PathBuf,
}

impl Study {
    /// Reads every study key and checks inputs, without loading anything.
    fn keys(s: &Settings) -> Result<StudyKeys> {
        common_flags(s)?;
        Ok(StudyKeys {
            source_manifest: s.path("source_manifest")?,
            eval_manifests: s.paths("eval_manifests")?,
            pca_model: s.opt_path("pca_model")?,
            latents: s.paths("latents")?,
            frame_lo: s.get("db_frame_lo", 10)?,
            frame_hi: s.get("db_frame_hi", 49)?,
            context_start: s.get("context_start", 0)?,
            boot: bootstrap_settings(s)?,
            rollout: rollout_config(s)?,
            out_dir: s.path("out_dir")?,
        })
    }
}

struct StudyKeys {
    source_manifest: PathBuf,
    eval_manifests: Vec<PathBuf>,
    pca_model: Option<PathBuf>,
    latents: Vec<PathBuf>,
    frame_lo: usize,
    frame_hi: usize,
    context_start: usize,
    boot: BootstrapSettings,
    rollout: RolloutConfig,
    out_dir: PathBuf,
}

impl StudyKeys {
    /// Validates paths and protocol, then loads data.
    fn load(self, s: &Settings, need_pca: bool) -> Result<Study> {
        s.finish()?;
        if self.eval_manifests.is_empty() {
            return Err(bad(format!("[{}] eval_manifests is empty", s.command())));
        }
        require_exists(&self.source_manifest)?;
        for m in &self.eval_manifests {
            require_exists(m)?;
        }
        if need_pca && self.pca_model.is_none() {
            return Err(bad(format!("[{}] needs pca_model", s.command())));
        }
        check_inputs(self.pca_model.as_deref(), &self.latents)?;
        let mut inputs: Vec<&Path> = vec![&self.source_manifest];
        inputs.extend(self.eval_manifests.iter().map(PathBuf::as_path));
        inputs.extend(self.pca_model.iter().map(PathBuf::as_path));
        inputs.extend(self.latents.iter().map(PathBuf::as_path));
        check_output_separation(&self.out_dir, &inputs)?;

        let source = load_source(&self.source_manifest, &[])?;
        let evals = load_eval_sets(&self.eval_manifests, self.context_start, &source)?;
        let grid_len = source[0].config.grid.len();
        let pca = match &self.pca_model {
            Some(p) => Some(encoder_from("pca", Some(p), &[], grid_len)?),
            None => None,
        };
        let latents = if self.latents.is_empty() {
            None
        } else {
            Some(load_latent_files(&self.latents)?)
        };
        Ok(Study {
            source,
            evals,
            pca,
            latents,
            frame_lo: self.frame_lo,
            frame_hi: self.frame_hi,
            boot: self.boot,
            rollout: self.rollout,
            out_dir: self.out_dir,
        })
    }
}

impl Study {
    fn database(&self, spec: &EncoderSpec, history_length: usize) -> Result<RelayDatabase> {
        build_database(&self.source, spec, self.frame_lo, self.frame_hi, history_length)
    }

    fn pca(&self) -> &EncoderSpec {
        self.pca.as_ref().expect("checked when loading")
    }
}

/// Collects records and rows for one command and writes them out.
struct Output {
    figure: &'static str,
    hash: String,
    records: Vec<EvaluationRecord>,
    rows: Vec<CsvRow>,
    notes: Vec<String>,
}

impl Output {
    fn new(figure: &'static str, s: &Settings) -> Self {
        Self {
            figure,
            hash: s.hash(),
            records: Vec::new(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn add(&mut self, o: &MethodOutcome, boot: &BootstrapSettings, with_diagnostics: bool) -> Result<EvaluationRecord> {
        let rec = EvaluationRecord::from_outcome(o, boot, &self.hash)?;
        self.rows.extend(error_rows(self.figure, &rec));
        if with_diagnostics {
            self.rows.extend(cosine_rows(o, boot, &self.hash)?);
            self.rows.extend(spectral_rows(o, &self.hash));
        }
        let m = &rec.matches;
        if m.rematches > 0 {
            self.notes.push(format!(
                "{} @ {}: {} rematches ({} forced), {} distinct entries from {} source trajectories",
                rec.method, rec.regime, m.rematches, m.forced_rematches, m.distinct_entries, m.distinct_source_trajectories
            ));
        }
        self.records.push(rec.clone());
        Ok(rec)
    }

    fn finish(mut self, title: &str, out_dir: &Path, s: &Settings) -> Result<CommandReport> {
        sort_rows(&mut self.rows);
        let records = out_dir.join("records.csv");
        io::write_atomic(&records, format_rows(&self.rows).as_bytes())?;
        let mut table = format_table(title, &self.records);
        for n in &self.notes {
            table.push_str(&format!("# {n}\n"));
        }
        let table_path = out_dir.join("table.txt");
        io::write_atomic(&table_path, table.as_bytes())?;
        let echo = write_echo(out_dir, s)?;
        Ok(CommandReport {
            summary: table,
            outputs: vec![records, table_path, echo],
            config_hash: self.hash,
        })
    }
}

fn rollout(s: &Settings) -> Result<CommandReport> {
    common_flags(s)?;
    let descriptor = s.path("database")?;
    let eval_manifest = s.path("eval_manifest")?;
    let eval_latents = s.paths("eval_latents")?;
    let method: String = s.get("method", "relay".to_string())?;
    let label: String = s.get("label", method.clone())?;
    let context_start: usize = s.get("context_start", 0)?;
    let rollout = rollout_config(s)?;
    let boot = bootstrap_settings(s)?;
    let out_dir = s.path("out_dir")?;
    s.finish()?;
    require_exists(&descriptor)?;
    require_exists(&eval_manifest)?;
    eval_latents.iter().try_for_each(|p| require_exists(p))?;
    if !matches!(method.as_str(), "relay" | "persistence") {
        return Err(bad(format!("method `{method}` (relay, persistence)")));
    }
    let mut inputs: Vec<&Path> = vec![&descriptor, &eval_manifest];
    inputs.extend(eval_latents.iter().map(PathBuf::as_path));
    check_output_separation(&out_dir, &inputs)?;

    let loaded = load_database(&descriptor)?;
    check_output_separation(&out_dir, &[&loaded.source_manifest])?;
    let eval = load_eval_sets(&[eval_manifest], context_start, &loaded.source)?.remove(0);
    let spec = match (&loaded.spec, eval_latents.is_empty()) {
        (EncoderSpec::External { .. }, false) => {
            let mut files = match &loaded.spec {
                EncoderSpec::External { source, .. } => vec![source.clone()],
                _ => unreachable!(),
            };
            files.extend(eval_latents.iter().cloned());
            load_latent_files(&files)?
        }
        (spec, _) => spec.clone(),
    };
    if rollout.history_length != loaded.db.history_length() {
        return Err(bad(format!(
                "history_length {} does not match the database ({})",
                rollout.history_length,
                loaded.db.history_length()
            )));
    }
    let m = match method.as_str() {
        "persistence" => Method::Persistence,
        _ => Method::relay(label, spec, rollout.clone()),
    };
    let o = run_method(&m, Some(&loaded.db), &eval, rollout.horizon)?;
    let mut out = Output::new("rollout", s);
    out.add(&o, &boot, true)?;
    out.notes.push(format!("database {} (config {})", descriptor.display(), loaded.config_hash));
    out.finish("rollout", &out_dir, s)
}

/// External latents cannot encode predicted states, so latent rows match
/// once from the context and ride for the whole horizon.
fn latent_rollout(base: &RolloutConfig, horizon: usize) -> RolloutConfig {
    RolloutConfig {
        ride_length: horizon.max(1),
        ..base.clone()
    }
}

fn evaluate(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let methods: Vec<String> = s.list(
        "methods",
        &["persistence".to_string(), "knn-copy".to_string(), "pca-relay".to_string()],
    )?;
    for m in &methods {
        if !matches!(m.as_str(), "persistence" | "knn-copy" | "raw-relay" | "pca-relay" | "latent-relay") {
            return Err(bad(format!("unknown method `{m}`")));
        }
    }
    let need_pca = methods.iter().any(|m| m == "pca-relay");
    let need_latents = methods.iter().any(|m| m == "latent-relay");
    if need_latents && keys.latents.is_empty() {
        return Err(bad("latent-relay needs latents"));
    }
    let study = keys.load(s, need_pca)?;
    let horizon = study.rollout.horizon;
    let raw_db = if methods.iter().any(|m| m == "knn-copy" || m == "raw-relay") {
        Some(study.database(&EncoderSpec::Raw, 1)?)
    } else {
        None
    };
    let pca_db = if need_pca {
        Some(match &raw_db {
            Some(db) => db.rekeyed(&study.source, study.pca(), 1)?,
            None => study.database(study.pca(), 1)?,
        })
    } else {
        None
    };
    let latent_db = match (&study.latents, need_latents) {
        (Some(spec), true) => Some(study.database(spec, 1)?),
        _ => None,
    };

    let mut out = Output::new("table2", s);
    for eval in &study.evals {
        for m in &methods {
            let copy = RolloutConfig {
                update_rule: UpdateRule::Copy,
                ..study.rollout.clone()
            };
            let (method, db) = match m.as_str() {
                "persistence" => (Method::Persistence, None),
                "knn-copy" => (Method::relay(m, EncoderSpec::Raw, copy), raw_db.as_ref()),
                "raw-relay" => (Method::relay(m, EncoderSpec::Raw, study.rollout.clone()), raw_db.as_ref()),
                "pca-relay" => (Method::relay(m, study.pca().clone(), study.rollout.clone()), pca_db.as_ref()),
                _ => (
                    Method::relay(
                        m,
                        study.latents.clone().expect("checked"),
                        latent_rollout(&study.rollout, horizon),
                    ),
                    latent_db.as_ref(),
                ),
            };
            let o = run_method(&method, db, eval, horizon)?;
            out.add(&o, &study.boot, true)?;
        }
    }
    out.finish("evaluate", &study.out_dir, s)
}

fn ablate_2x2(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let study = keys.load(s, true)?;
    let horizon = study.rollout.horizon;
    let raw_db = study.database(&EncoderSpec::Raw, 1)?;
    let pca_db = raw_db.rekeyed(&study.source, study.pca(), 1)?;
    let mut out = Output::new("table3", s);
    for eval in &study.evals {
        for (space, spec, db) in [("pca", study.pca(), &pca_db), ("raw", &EncoderSpec::Raw, &raw_db)] {
            for rule in [UpdateRule::Delta, UpdateRule::Copy] {
                let cfg = RolloutConfig {
                    update_rule: rule,
                    ..study.rollout.clone()
                };
                let label = format!("{space}/{}", rule.name());
                let o = run_method(&Method::relay(label, spec.clone(), cfg), Some(db), eval, horizon)?;
                out.add(&o, &study.boot, false)?;
            }
        }
        if let Some(lat) = &study.latents {
            let db = study.database(lat, 1)?;
            let cfg = latent_rollout(&study.rollout, horizon);
            let o = run_method(&Method::relay("latent/delta", lat.clone(), cfg), Some(&db), eval, horizon)?;
            out.add(&o, &study.boot, false)?;
        }
    }
    out.finish("matching space x update rule", &study.out_dir, s)
}

/// Reads the `encoder` key of an ablation (pca, raw, external).
fn encoder_kind(s: &Settings) -> Result<String> {
    let kind: String = s.get("encoder", "pca".to_string())?;
    match kind.as_str() {
        "pca" | "raw" | "external" => Ok(kind),
        other => Err(bad(format!("unknown encoder `{other}` (pca, raw, external)"))),
    }
}

impl Study {
    fn encoder(&self, kind: &str) -> Result<EncoderSpec> {
        match kind {
            "pca" => Ok(self.pca().clone()),
            "raw" => Ok(EncoderSpec::Raw),
            _ => self.latents.clone().ok_or_else(|| bad("encoder = external needs latents")),
        }
    }
}

/// Results of the oracle decomposition on one evaluation set.
pub struct OracleStudy {
    pub standard: MethodOutcome,
    pub oracle: MethodOutcome,
    /// One outcome per entry of [`ALPHA_GRID`].
    pub alpha_sweep: Vec<(f64, MethodOutcome)>,
    pub oracle_magnitude: MethodOutcome,
}

impl OracleStudy {
    /// Lowest-error α; ties go to the smaller α.
    pub fn best_alpha(&self) -> &(f64, MethodOutcome) {
        self.alpha_sweep
            .iter()
            .fold(None::<&(f64, MethodOutcome)>, |best, cur| match best {
                Some(b) if b.1.report.mean <= cur.1.report.mean => Some(b),
                _ => Some(cur),
            })
            .expect("non-empty grid")
    }
}

pub fn oracle_study(
    db: &RelayDatabase,
    spec: &EncoderSpec,
    base: &RolloutConfig,
    eval: &EvalSet,
    horizon: usize,
) -> Result<OracleStudy> {
    let with = |label: String, cfg: RolloutConfig| run_method(&Method::relay(label, spec.clone(), cfg), Some(db), eval, horizon);
    let standard_cfg = RolloutConfig {
        oracle_matching: false,
        oracle_magnitude: false,
        alpha: 1.0,
        ..base.clone()
    };
    let oracle_cfg = RolloutConfig {
        oracle_matching: true,
        ..standard_cfg.clone()
    };
    let standard = with("standard".into(), standard_cfg)?;
    let oracle = with("oracle-match".into(), oracle_cfg.clone())?;
    let alpha_sweep = ALPHA_GRID
        .iter()
        .map(|&a| {
            let cfg = RolloutConfig {
                alpha: a,
                ..oracle_cfg.clone()
            };
            Ok((a, with(format!("oracle-match+alpha={a}"), cfg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let oracle_magnitude = with(
        "oracle-magnitude".into(),
        RolloutConfig {
            oracle_magnitude: true,
            ..oracle_cfg
        },
    )?;
    Ok(OracleStudy {
        standard,
        oracle,
        alpha_sweep,
        oracle_magnitude,
    })
}

fn ablate_oracle(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let kind = encoder_kind(s)?;
    let study = keys.load(s, kind == "pca")?;
    let spec = study.encoder(&kind)?;
    let horizon = study.rollout.horizon;
    let db = study.database(&spec, 1)?;
    let mut out = Output::new("table4", s);
    for eval in &study.evals {
        let o = oracle_study(&db, &spec, &study.rollout, eval, horizon)?;
        out.add(&o.standard, &study.boot, true)?;
        out.add(&o.oracle, &study.boot, true)?;
        for (_, a) in &o.alpha_sweep {
            out.add(a, &study.boot, false)?;
        }
        let (best, best_o) = o.best_alpha();
        let mut best_row = best_o.clone();
        best_row.method = "oracle-match+best-alpha".into();
        out.add(&best_row, &study.boot, false)?;
        out.notes.push(format!("{}: best alpha = {best}", eval.regime));
        out.add(&o.oracle_magnitude, &study.boot, true)?;
    }
    out.finish("oracle decomposition", &study.out_dir, s)
}

fn ablate_dbsize(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let sizes: Vec<usize> = s.list("sizes", &[25, 50, 100, 200])?;
    let kind = encoder_kind(s)?;
    let study = keys.load(s, kind == "pca")?;
    let spec = study.encoder(&kind)?;
    if sizes.is_empty() || sizes.iter().any(|&n| n == 0 || n > study.source.len()) {
        return Err(bad(format!("sizes must be in 1..={}", study.source.len())));
    }
    let horizon = study.rollout.horizon;
    let full = study.database(&spec, 1)?;
    let mut out = Output::new("figA1a_dbsize", s);
    for eval in &study.evals {
        let mut means = Vec::new();
        for &n in &sizes {
            let db = full.subset_trajectories(n);
            let o = run_method(&Method::relay("relay", spec.clone(), study.rollout.clone()), Some(&db), eval, horizon)?;
            let rec = EvaluationRecord::from_outcome(&o, &study.boot, &out.hash)?;
            out.rows.push(CsvRow::new(
                "figA1a_dbsize",
                "relay",
                &eval.regime,
                n,
                Some(rec.mean),
                Some(rec.ci),
                &out.hash,
            ));
            let mut labelled = rec;
            labelled.method = format!("relay/db={n}");
            out.records.push(labelled);
            means.push(o.report.mean);
        }
        if let Some(frac) = early_improvement_fraction(&sizes, &means) {
            out.notes.push(format!(
                "{}: first half of the size range captures {:.1}% of the improvement",
                eval.regime,
                100.0 * frac
            ));
        }
    }
    out.finish("database size", &study.out_dir, s)
}

/// Share of the total error reduction (smallest to largest database) that
/// is achieved by the database whose size is half the largest.
/// `None` when there is no improvement or no half-size entry.
pub fn early_improvement_fraction(sizes: &[usize], means: &[f64]) -> Option<f64> {
    let (first, last) = (*means.first()?, *means.last()?);
    let half = sizes.last()? / 2;
    let at_half = sizes.iter().position(|&n| n == half)?;
    let total = first - last;
    (total > 0.0).then(|| (first - means[at_half]) / total)
}

fn ablate_ride(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let rides: Vec<usize> = s.list("ride_lengths", &[1, 2, 3, 5, 10])?;
    let kind = encoder_kind(s)?;
    let study = keys.load(s, kind == "pca")?;
    let spec = study.encoder(&kind)?;
    let horizon = study.rollout.horizon;
    let db = study.database(&spec, 1)?;
    let mut out = Output::new("ride", s);
    for eval in &study.evals {
        for &r in &rides {
            let cfg = RolloutConfig {
                ride_length: r,
                ..study.rollout.clone()
            };
            cfg.validate()?;
            let o = run_method(&Method::relay(format!("relay/ride={r}"), spec.clone(), cfg), Some(&db), eval, horizon)?;
            out.add(&o, &study.boot, false)?;
        }
    }
    out.finish("ride length", &study.out_dir, s)
}

fn ablate_horizon(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let horizons: Vec<usize> = s.list("horizons", &[10, 15, 20])?;
    let kind = encoder_kind(s)?;
    let study = keys.load(s, kind == "pca")?;
    let spec = study.encoder(&kind)?;
    let db = study.database(&spec, 1)?;
    let mut out = Output::new("figA1b_horizon", s);
    for eval in &study.evals {
        for &h in &horizons {
            for method in [
                Method::Persistence,
                Method::relay("relay", spec.clone(), study.rollout.clone()),
            ] {
                let o = run_method(&method, Some(&db), eval, h)?;
                let rec = EvaluationRecord::from_outcome(&o, &study.boot, &out.hash)?;
                out.rows.push(CsvRow::new(
                    "figA1b_horizon",
                    &rec.method,
                    &eval.regime,
                    h,
                    Some(rec.mean),
                    Some(rec.ci),
                    &out.hash,
                ));
                let mut labelled = rec;
                labelled.method = format!("{}/T={h}", labelled.method);
                out.records.push(labelled);
            }
        }
    }
    out.finish("horizon", &study.out_dir, s)
}

fn ablate_history(s: &Settings) -> Result<CommandReport> {
    let keys = Study::keys(s)?;
    let h: usize = s.get("long_history", 10)?;
    let kind = encoder_kind(s)?;
    let study = keys.load(s, kind == "pca")?;
    let spec = study.encoder(&kind)?;
    let horizon = study.rollout.horizon;
    let single = study.database(&spec, 1)?;
    let long = single.rekeyed(&study.source, &spec, h)?;
    let mut out = Output::new("history", s);
    for eval in &study.evals {
        let base = RolloutConfig {
            history_length: 1,
            oracle_history: false,
            ..study.rollout.clone()
        };
        let runs = [
            ("H=1".to_string(), &single, base.clone()),
            (
                format!("H={h}/predicted"),
                &long,
                RolloutConfig {
                    history_length: h,
                    ..base.clone()
                },
            ),
            (
                format!("H={h}/oracle"),
                &long,
                RolloutConfig {
                    history_length: h,
                    oracle_history: true,
                    ..base.clone()
                },
            ),
        ];
        for (label, db, cfg) in runs {
            let o = run_method(&Method::relay(label, spec.clone(), cfg), Some(db), eval, horizon)?;
            out.add(&o, &study.boot, false)?;
        }
    }
    out.finish("history matching", &study.out_dir, s)
}

fn export_csv(s: &Settings) -> Result<CommandReport> {
    common_flags(s)?;
    let inputs = s.paths("inputs")?;
    let out = s.path("out")?;
    s.finish()?;
    if inputs.is_empty() {
        return Err(bad("[export-csv] inputs is empty"));
    }
    let mut files = Vec::new();
    for p in &inputs {
        require_exists(p)?;
        collect_records(p, &mut files)?;
    }
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        rows.extend(parse_rows(&text).map_err(|e| Error::InvalidHeader {
            path: f.clone(),
            reason: e.to_string(),
        })?);
    }
    sort_rows(&mut rows);
    io::write_atomic(&out, format_rows(&rows).as_bytes())?;
    Ok(CommandReport {
        summary: format!("{} rows from {} record files", rows.len(), files.len()),
        outputs: vec![out],
        config_hash: s.hash(),
    })
}

fn collect_records(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_file() {
        out.push(p.to_path_buf());
        return Ok(());
    }
    let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
    for e in entries {
        let path = e.map_err(|e| Error::io(p, e))?.path();
        if path.is_dir() {
            collect_records(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "records.csv") {
            out.push(path);
        }
    }
    Ok(())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::InvalidArgument(reason.into())
}
