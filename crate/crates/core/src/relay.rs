//! Analogue relay: a database of source-regime transitions, exact cosine
//! nearest-neighbour retrieval, and the autoregressive rollout that rides
//! matched source trajectories and borrows their transitions.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{dot, norm, VorticityField};
use crate::repr::{encode, EncoderSpec, FrameKey, MIN_NORM};
use crate::spectral::Trajectory;

/// Number of context frames handed to a rollout.
pub const CONTEXT_LEN: usize = 10;

const SCAN_CHUNK: usize = 1024;

/// Raw-field transitions shared between databases that differ only in
/// their keys or in how many source trajectories they admit.
#[derive(Debug)]
struct Transitions {
    deltas: Vec<VorticityField>,
    next_frames: Vec<VorticityField>,
    provenance: Vec<FrameKey>,
    successor: Vec<Option<usize>>,
    /// Frame range the entries were harvested from, when built from trajectories.
    frames: Option<(usize, usize)>,
}

/// Encoded source states with their raw-field transitions.
///
/// Entries are ordered trajectory-major then frame-major; that order is what
/// breaks retrieval ties.
#[derive(Debug, Clone)]
pub struct RelayDatabase {
    dim: usize,
    history_length: usize,
    keys: Vec<f64>,
    key_norms: Vec<f64>,
    transitions: Arc<Transitions>,
    /// Entries `0..len` of `transitions` belong to this database.
    len: usize,
}

impl RelayDatabase {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Dimension of the (possibly history-augmented) keys.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn history_length(&self) -> usize {
        self.history_length
    }

    pub fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    pub fn delta(&self, j: usize) -> &VorticityField {
        &self.transitions.deltas[..self.len][j]
    }

    pub fn next_frame(&self, j: usize) -> &VorticityField {
        &self.transitions.next_frames[..self.len][j]
    }

    pub fn provenance(&self, j: usize) -> FrameKey {
        self.transitions.provenance[..self.len][j]
    }

    pub fn successor(&self, j: usize) -> Option<usize> {
        self.transitions.successor[..self.len][j].filter(|&s| s < self.len)
    }

    /// Number of distinct source trajectories.
    pub fn n_trajectories(&self) -> usize {
        let prov = &self.transitions.provenance[..self.len];
        prov.iter()
            .enumerate()
            .filter(|(j, p)| *j == 0 || prov[j - 1].trajectory_id != p.trajectory_id)
            .count()
    }

    /// Builds a database from already-encoded keys. Used by tests and by
    /// callers that manage their own encodings.
    pub fn from_parts(
        keys: Vec<Vec<f64>>,
        deltas: Vec<VorticityField>,
        next_frames: Vec<VorticityField>,
        provenance: Vec<FrameKey>,
    ) -> Result<Self> {
        let n = keys.len();
        if deltas.len() != n || next_frames.len() != n || provenance.len() != n {
            return Err(Error::InvalidArgument("database parts differ in length".into()));
        }
        let successor = successors(&provenance);
        let transitions = Arc::new(Transitions {
            deltas,
            next_frames,
            provenance,
            successor,
            frames: None,
        });
        Self::with_keys(transitions, keys, 1)
    }

    fn with_keys(transitions: Arc<Transitions>, keys: Vec<Vec<f64>>, history_length: usize) -> Result<Self> {
        let n = transitions.provenance.len();
        if keys.len() != n {
            return Err(Error::InvalidArgument(format!("{} keys for {n} entries", keys.len())));
        }
        let dim = keys.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * dim);
        for k in &keys {
            if k.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: k.len(),
                });
            }
            flat.extend_from_slice(k);
        }
        let key_norms = flat.chunks(dim.max(1)).map(norm).collect();
        Ok(Self {
            dim,
            history_length,
            keys: flat,
            key_norms,
            transitions,
            len: n,
        })
    }

    /// The first `n_trajectories` source trajectories, preserving order.
    /// Transitions are shared with `self`.
    pub fn subset_trajectories(&self, n_trajectories: usize) -> RelayDatabase {
        let mut seen = 0;
        let mut end = 0;
        let prov = &self.transitions.provenance[..self.len];
        for (j, p) in prov.iter().enumerate() {
            if j == 0 || prov[j - 1].trajectory_id != p.trajectory_id {
                if seen == n_trajectories {
                    break;
                }
                seen += 1;
            }
            end = j + 1;
        }
        RelayDatabase {
            dim: self.dim,
            history_length: self.history_length,
            keys: self.keys[..end * self.dim].to_vec(),
            key_norms: self.key_norms[..end].to_vec(),
            transitions: Arc::clone(&self.transitions),
            len: end,
        }
    }

    /// Same transitions, keyed by a different encoder or history length.
    /// `trajectories` must be the ones the database was built from.
    pub fn rekeyed(&self, trajectories: &[Trajectory], spec: &EncoderSpec, history_length: usize) -> Result<RelayDatabase> {
        let (lo, hi) = self
            .transitions
            .frames
            .ok_or_else(|| Error::InvalidArgument("database was not built from trajectories".into()))?;
        check_range(trajectories, lo, hi, history_length)?;
        let keys = encode_keys(trajectories, spec, lo, hi, history_length)?;
        if keys.len() != self.transitions.provenance.len() {
            return Err(Error::InvalidArgument("trajectories do not match the database".into()));
        }
        let mut db = Self::with_keys(Arc::clone(&self.transitions), keys, history_length)?;
        db.len = self.len.min(db.len);
        db.keys.truncate(db.len * db.dim);
        db.key_norms.truncate(db.len);
        Ok(db)
    }
}

fn successors(provenance: &[FrameKey]) -> Vec<Option<usize>> {
    (0..provenance.len())
        .map(|j| {
            let next = j + 1;
            (next < provenance.len()
                && provenance[next].trajectory_id == provenance[j].trajectory_id
                && provenance[next].frame_id == provenance[j].frame_id + 1)
                .then_some(next)
        })
        .collect()
}

fn check_range(trajectories: &[Trajectory], frame_lo: usize, frame_hi: usize, history_length: usize) -> Result<()> {
    if frame_hi <= frame_lo {
        return Err(Error::InvalidArgument(format!(
            "empty frame range [{frame_lo}, {frame_hi})"
        )));
    }
    if history_length == 0 || frame_lo + 1 < history_length {
        return Err(Error::InvalidArgument(format!(
            "history length {history_length} needs frame_lo >= {}",
            history_length.saturating_sub(1)
        )));
    }
    for t in trajectories {
        if frame_hi >= t.frames.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory {} has {} frames, range needs frame {frame_hi}",
                t.trajectory_id,
                t.frames.len()
            )));
        }
    }
    Ok(())
}

/// Keys for frames `frame_lo..frame_hi` of every trajectory, in entry order.
fn encode_keys(
    trajectories: &[Trajectory],
    spec: &EncoderSpec,
    frame_lo: usize,
    frame_hi: usize,
    history_length: usize,
) -> Result<Vec<Vec<f64>>> {
    let first = frame_lo + 1 - history_length;
    let per_traj: Vec<Vec<Vec<f64>>> = trajectories
        .par_iter()
        .map(|t| {
            let encoded: Vec<Vec<f64>> = (first..frame_hi)
                .map(|f| encode(spec, &t.frames[f], Some(FrameKey::new(t.trajectory_id, f as u32))).map(|z| z.0))
                .collect::<Result<_>>()?;
            Ok((frame_lo..frame_hi)
                .map(|f| encoded[f - frame_lo..f - frame_lo + history_length].concat())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

/// Builds the relay database from frames `frame_lo..frame_hi` of every
/// trajectory: entry `(n, f)` keys on frame `f` and stores the transition to
/// `f + 1`. With `history_length = H > 1`, keys concatenate the encodings of
/// frames `f-H+1 ..= f`, oldest first.
pub fn build_database(
    trajectories: &[Trajectory],
    spec: &EncoderSpec,
    frame_lo: usize,
    frame_hi: usize,
    history_length: usize,
) -> Result<RelayDatabase> {
    check_range(trajectories, frame_lo, frame_hi, history_length)?;
    let keys = encode_keys(trajectories, spec, frame_lo, frame_hi, history_length)?;
    let per_traj: Vec<Vec<(VorticityField, VorticityField, FrameKey)>> = trajectories
        .par_iter()
        .map(|t| {
            (frame_lo..frame_hi)
                .map(|f| {
                    let delta = t.frames[f + 1].sub(&t.frames[f])?;
                    Ok((delta, t.frames[f + 1].clone(), FrameKey::new(t.trajectory_id, f as u32)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = keys.len();
    let mut deltas = Vec::with_capacity(n);
    let mut next_frames = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for (d, nf, p) in per_traj.into_iter().flatten() {
        deltas.push(d);
        next_frames.push(nf);
        provenance.push(p);
    }
    let successor = successors(&provenance);
    let transitions = Arc::new(Transitions {
        deltas,
        next_frames,
        provenance,
        successor,
        frames: Some((frame_lo, frame_hi)),
    });
    RelayDatabase::with_keys(transitions, keys, history_length)
}

/// Exact cosine nearest neighbour; ties go to the lowest index.
pub fn nearest(db: &RelayDatabase, query: &[f64]) -> Result<usize> {
    nearest_with_distance(db, query).map(|(j, _)| j)
}

pub fn nearest_with_distance(db: &RelayDatabase, query: &[f64]) -> Result<(usize, f64)> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if query.len() != db.dim {
        return Err(Error::DimensionMismatch {
            expected: db.dim,
            actual: query.len(),
        });
    }
    let qn = norm(query);
    if !(qn > MIN_NORM) {
        return Err(Error::ZeroNorm { argument: "query" });
    }
    let dim = db.dim;
    // Fixed chunking and an in-order reduction keep the result independent
    // of the worker count.
    let best = db
        .keys
        .par_chunks(SCAN_CHUNK * dim)
        .enumerate()
        .map(|(c, chunk)| {
            let base = c * SCAN_CHUNK;
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, key) in chunk.chunks_exact(dim).enumerate() {
                let kn = db.key_norms[base + i];
                let d = if kn > MIN_NORM {
                    1.0 - dot(query, key) / (qn * kn)
                } else {
                    f64::INFINITY
                };
                if d < best.1 {
                    best = (base + i, d);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((usize::MAX, f64::INFINITY), |acc, b| if b.1 < acc.1 { b } else { acc });
    if best.0 == usize::MAX {
        return Err(Error::InvalidArgument("every database key has zero norm".into()));
    }
    Ok(best)
}

/// How the matched entry advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// `ω̂ = ω + α Δω^s`.
    Delta,
    /// `ω̂ = ω^s_{j+1}`.
    Copy,
}

impl UpdateRule {
    pub fn name(&self) -> &'static str {
        match self {
            UpdateRule::Delta => "delta",
            UpdateRule::Copy => "copy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub ride_length: usize,
    pub update_rule: UpdateRule,
    pub alpha: f64,
    /// Retrieve with the true state instead of the predicted one.
    pub oracle_matching: bool,
    /// Rescale each borrowed delta to the true delta's norm.
    pub oracle_magnitude: bool,
    pub history_length: usize,
    /// Build history queries from true frames instead of predictions.
    pub oracle_history: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            ride_length: 3,
            update_rule: UpdateRule::Delta,
            alpha: 1.0,
            oracle_matching: false,
            oracle_magnitude: false,
            history_length: 1,
            oracle_history: false,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.ride_length == 0 || self.history_length == 0 {
            return Err(Error::InvalidArgument(
                "horizon, ride_length and history_length must be >= 1".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.history_length > CONTEXT_LEN {
            return Err(Error::InvalidArgument(format!(
                "history_length {} exceeds the {CONTEXT_LEN}-frame context",
                self.history_length
            )));
        }
        Ok(())
    }

    pub fn needs_truth(&self) -> bool {
        self.oracle_matching || self.oracle_magnitude || self.oracle_history
    }
}

/// Output of one rollout. Steps are 1-based in `rematch_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub predictions: Vec<VorticityField>,
    pub matched_indices: Vec<usize>,
    /// The increment actually added at each step (`ω̂ - ω` up to rounding;
    /// exactly the stored delta for the delta rule with α = 1).
    pub borrowed_deltas: Vec<VorticityField>,
    pub rematch_steps: BTreeSet<usize>,
    /// Steps whose rematch was forced by reaching a source trajectory's end.
    pub forced_rematches: BTreeSet<usize>,
}

/// Frame `k` of the evaluation sequence: context for `k < 10`, truth after.
fn true_frame<'a>(context: &'a [VorticityField], truth: &'a [VorticityField], k: usize) -> &'a VorticityField {
    if k < context.len() {
        &context[k]
    } else {
        &truth[k - context.len()]
    }
}

/// Runs the relay from a 10-frame context.
///
/// `context_keys`, when given, names the evaluation frames that feed
/// retrieval so that lookup-only encoders can resolve them: the key of
/// sequence frame `k` is `FrameKey(context_keys.trajectory_id, context_keys.frame_id + k)`.
pub fn relay_rollout(
    context: &[VorticityField],
    db: &RelayDatabase,
    spec: &EncoderSpec,
    cfg: &RolloutConfig,
    truth: Option<&[VorticityField]>,
    context_keys: Option<FrameKey>,
) -> Result<RolloutResult> {
    cfg.validate()?;
    if context.len() != CONTEXT_LEN {
        return Err(Error::InvalidArgument(format!(
            "context must have {CONTEXT_LEN} frames, got {}",
            context.len()
        )));
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if db.history_length() != cfg.history_length {
        return Err(Error::InvalidArgument(format!(
            "database keys span {} frames, rollout asks for {}",
            db.history_length(),
            cfg.history_length
        )));
    }
    let truth = match (cfg.needs_truth(), truth) {
        (true, None) => {
            return Err(Error::InvalidArgument("oracle variants need ground-truth frames".into()));
        }
        (_, Some(t)) if t.len() < cfg.horizon => {
            return Err(Error::InvalidArgument(format!(
                "truth has {} frames, horizon is {}",
                t.len(),
                cfg.horizon
            )));
        }
        (_, t) => t,
    };
    for f in context.iter().chain(truth.into_iter().flatten()) {
        context[0].check_same_grid(f)?;
    }

    let key_of = |k: usize| context_keys.map(|c| FrameKey::new(c.trajectory_id, c.frame_id + k as u32));

    let mut sequence: Vec<VorticityField> = context.to_vec();
    let mut result = RolloutResult {
        predictions: Vec::with_capacity(cfg.horizon),
        matched_indices: Vec::with_capacity(cfg.horizon),
        borrowed_deltas: Vec::with_capacity(cfg.horizon),
        rematch_steps: BTreeSet::new(),
        forced_rematches: BTreeSet::new(),
    };
    let mut current: Option<usize> = None;

    for t in 1..=cfg.horizon {
        // Index of the current state in the evaluation sequence.
        let now = CONTEXT_LEN + t - 2;
        let scheduled = t % cfg.ride_length == 1 % cfg.ride_length;
        let ride = if scheduled { None } else { current.and_then(|j| db.successor(j)) };
        let j = match ride {
            Some(j) => j,
            None => {
                if !scheduled {
                    result.forced_rematches.insert(t);
                }
                result.rematch_steps.insert(t);
                let query = build_query(spec, cfg, &sequence, context, truth, now, &key_of)?;
                nearest(db, &query)?
            }
        };
        current = Some(j);

        let state = &sequence[now];
        let increment = match cfg.update_rule {
            UpdateRule::Delta => {
                let stored = db.delta(j);
                let mut scale = cfg.alpha;
                if cfg.oracle_magnitude {
                    let truth = truth.expect("validated above");
                    let actual = true_frame(context, truth, now + 1).sub(true_frame(context, truth, now))?;
                    let n = stored.norm();
                    if n > MIN_NORM {
                        scale = actual.norm() / n;
                    }
                }
                if scale == 1.0 {
                    stored.clone()
                } else {
                    stored.scaled(scale)
                }
            }
            UpdateRule::Copy => db.next_frame(j).sub(state)?,
        };
        let next = match cfg.update_rule {
            UpdateRule::Delta => state.add_scaled(&increment, 1.0)?,
            UpdateRule::Copy => db.next_frame(j).clone(),
        };
        next.check_finite("prediction")?;

        result.matched_indices.push(j);
        result.borrowed_deltas.push(increment);
        result.predictions.push(next.clone());
        sequence.push(next);
    }
    Ok(result)
}

fn build_query(
    spec: &EncoderSpec,
    cfg: &RolloutConfig,
    sequence: &[VorticityField],
    context: &[VorticityField],
    truth: Option<&[VorticityField]>,
    now: usize,
    key_of: &dyn Fn(usize) -> Option<FrameKey>,
) -> Result<Vec<f64>> {
    let h = cfg.history_length;
    let mut query = Vec::new();
    for k in now + 1 - h..=now {
        // The current frame follows the matching oracle; earlier history
        // frames follow the history oracle.
        let use_truth = if k == now {
            cfg.oracle_matching || (cfg.oracle_history && h > 1)
        } else {
            cfg.oracle_history
        };
        let is_real = k < CONTEXT_LEN || use_truth;
        let field = if k < CONTEXT_LEN {
            &context[k]
        } else if use_truth {
            true_frame(context, truth.expect("validated by caller"), k)
        } else {
            &sequence[k]
        };
        let key = if is_real { key_of(k) } else { None };
        query.extend(encode(spec, field, key)?.0);
    }
    Ok(query)
}

/// Repeats the last context frame.
pub fn persistence_rollout(context: &[VorticityField], horizon: usize) -> Result<Vec<VorticityField>> {
    let last = context
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty context".into()))?;
    Ok(vec![last.clone(); horizon])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    fn grid() -> Grid {
        Grid::square(4).unwrap()
    }

    fn field(seed: u64) -> VorticityField {
        let s = seed as f64;
        VorticityField::from_fn(grid(), |x, y| (x * (1.0 + s * 0.37)).sin() + (y * (0.5 + s * 0.11)).cos() * s.sin())
    }

    fn chain_trajectory(id: u32, n: usize, offset: u64) -> Trajectory {
        Trajectory {
            frames: (0..n).map(|f| field(offset + f as u64)).collect(),
            config: crate::spectral::SolverConfig {
                grid: grid(),
                ..Default::default()
            },
            trajectory_id: id,
        }
    }

    #[test]
    fn chain_structure_of_small_database() {
        let t = chain_trajectory(0, 3, 1);
        let db = build_database(std::slice::from_ref(&t), &EncoderSpec::Raw, 0, 2, 1).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.successor(0), Some(1));
        assert_eq!(db.successor(1), None);
        for j in 0..2 {
            let p = db.provenance(j);
            let d = db.next_frame(j).sub(&t.frames[p.frame_id as usize]).unwrap();
            assert_eq!(&d, db.delta(j));
        }
    }

    #[test]
    fn entries_are_trajectory_major() {
        let ts = vec![chain_trajectory(4, 5, 0), chain_trajectory(9, 5, 50)];
        let db = build_database(&ts, &EncoderSpec::Raw, 1, 4, 1).unwrap();
        assert_eq!(db.len(), 6);
        let prov: Vec<(u32, u32)> = (0..6).map(|j| (db.provenance(j).trajectory_id, db.provenance(j).frame_id)).collect();
        assert_eq!(prov, vec![(4, 1), (4, 2), (4, 3), (9, 1), (9, 2), (9, 3)]);
        assert_eq!(db.successor(2), None);
        assert_eq!(db.successor(3), Some(4));
    }

    #[test]
    fn history_keys_concatenate_oldest_first() {
        let t = chain_trajectory(0, 6, 1);
        let db = build_database(std::slice::from_ref(&t), &EncoderSpec::Raw, 2, 4, 3).unwrap();
        assert_eq!(db.dim(), 3 * 16);
        let expected: Vec<f64> = [1usize, 2, 3].iter().flat_map(|&f| t.frames[f].values().to_vec()).collect();
        assert_eq!(db.key(1), expected.as_slice());
        assert!(build_database(&[t], &EncoderSpec::Raw, 1, 4, 3).is_err());
    }

    #[test]
    fn subsets_and_rekeying_share_transitions() {
        let ts: Vec<Trajectory> = (0..3).map(|i| chain_trajectory(i, 6, 10 * i as u64)).collect();
        let db = build_database(&ts, &EncoderSpec::Raw, 1, 5, 1).unwrap();
        assert_eq!(db.n_trajectories(), 3);
        let sub = db.subset_trajectories(2);
        assert_eq!(sub.len(), 8);
        assert_eq!(sub.n_trajectories(), 2);
        assert_eq!(sub.successor(7), None);
        assert_eq!(sub.successor(6), Some(7));
        assert!(Arc::ptr_eq(&sub.transitions, &db.transitions));

        let hist = sub.rekeyed(&ts, &EncoderSpec::Raw, 2).unwrap();
        assert_eq!(hist.len(), 8);
        assert_eq!(hist.dim(), 32);
        assert_eq!(hist.history_length(), 2);
        let direct = build_database(&ts[..2], &EncoderSpec::Raw, 1, 5, 2).unwrap();
        for j in 0..8 {
            assert_eq!(hist.key(j), direct.key(j));
            assert_eq!(hist.delta(j), direct.delta(j));
        }
        assert!(db.rekeyed(&ts, &EncoderSpec::Raw, 3).is_err());
    }

    #[test]
    fn nearest_exact_and_scaled_queries() {
        let ts = vec![chain_trajectory(0, 8, 0)];
        let db = build_database(&ts, &EncoderSpec::Raw, 0, 7, 1).unwrap();
        for k in 0..db.len() {
            assert_eq!(nearest(&db, db.key(k)).unwrap(), k);
            let scaled: Vec<f64> = db.key(k).iter().map(|v| v * 3.5).collect();
            assert_eq!(nearest(&db, &scaled).unwrap(), k);
        }
    }

    #[test]
    fn nearest_ties_go_to_lowest_index() {
        let f = field(1);
        let keys = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.0]];
        let db = RelayDatabase::from_parts(
            keys,
            vec![f.clone(); 4],
            vec![f.clone(); 4],
            (0..4).map(|i| FrameKey::new(0, i)).collect(),
        )
        .unwrap();
        assert_eq!(nearest(&db, &[5.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn nearest_errors() {
        let f = field(1);
        let db = RelayDatabase::from_parts(vec![], vec![], vec![], vec![]).unwrap();
        assert!(matches!(nearest(&db, &[1.0]), Err(Error::EmptyDatabase)));
        let db = RelayDatabase::from_parts(vec![vec![1.0, 0.0]], vec![f.clone()], vec![f], vec![FrameKey::new(0, 0)]).unwrap();
        assert!(matches!(nearest(&db, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_step_exact_match_borrows_delta() {
        let context: Vec<VorticityField> = (0..10).map(field).collect();
        let d = field(77).scaled(0.1);
        let db = RelayDatabase::from_parts(
            vec![context[9].values().to_vec(), field(40).values().to_vec()],
            vec![d.clone(), field(41)],
            vec![context[9].add_scaled(&d, 1.0).unwrap(), field(42)],
            vec![FrameKey::new(0, 0), FrameKey::new(1, 0)],
        )
        .unwrap();
        let cfg = RolloutConfig {
            horizon: 1,
            ..RolloutConfig::default()
        };
        let r = relay_rollout(&context, &db, &EncoderSpec::Raw, &cfg, None, None).unwrap();
        assert_eq!(r.matched_indices, vec![0]);
        assert_eq!(r.predictions[0], context[9].add_scaled(&d, 1.0).unwrap());
        assert_eq!(&r.borrowed_deltas[0], db.delta(0));
    }

    #[test]
    fn ride_follows_successors_with_one_rematch() {
        let context: Vec<VorticityField> = (0..10).map(field).collect();
        let ts = vec![chain_trajectory(0, 12, 100), chain_trajectory(1, 12, 200)];
        let db = build_database(&ts, &EncoderSpec::Raw, 0, 11, 1).unwrap();
        let cfg = RolloutConfig {
            horizon: 3,
            ride_length: 3,
            ..RolloutConfig::default()
        };
        let r = relay_rollout(&context, &db, &EncoderSpec::Raw, &cfg, None, None).unwrap();
        let j = r.matched_indices[0];
        assert_eq!(r.matched_indices, vec![j, db.successor(j).unwrap(), db.successor(j + 1).unwrap()]);
        assert_eq!(r.rematch_steps.iter().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn ride_past_trajectory_end_forces_rematch() {
        let context: Vec<VorticityField> = (0..10).map(field).collect();
        // Single-entry chains: every ride step hits a trajectory end.
        let ts: Vec<Trajectory> = (0..3).map(|i| chain_trajectory(i, 2, 10 * i as u64 + 3)).collect();
        let db = build_database(&ts, &EncoderSpec::Raw, 0, 1, 1).unwrap();
        let cfg = RolloutConfig {
            horizon: 4,
            ride_length: 3,
            ..RolloutConfig::default()
        };
        let r = relay_rollout(&context, &db, &EncoderSpec::Raw, &cfg, None, None).unwrap();
        assert_eq!(r.rematch_steps.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(r.forced_rematches.iter().copied().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn oracle_variants_require_truth() {
        let context: Vec<VorticityField> = (0..10).map(field).collect();
        let db = build_database(&[chain_trajectory(0, 4, 3)], &EncoderSpec::Raw, 0, 3, 1).unwrap();
        let cfg = RolloutConfig {
            oracle_matching: true,
            ..RolloutConfig::default()
        };
        assert!(relay_rollout(&context, &db, &EncoderSpec::Raw, &cfg, None, None).is_err());
    }

    #[test]
    fn persistence_repeats_last_context_frame() {
        let context: Vec<VorticityField> = (0..10).map(field).collect();
        let p = persistence_rollout(&context, 10).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|f| f == &context[9]));
        assert!(persistence_rollout(&[], 3).is_err());
    }
}
