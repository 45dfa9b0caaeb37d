//! Just-in-time multi-objective beam search, plus the inference baselines.
//!
//! Track indices are 0-based throughout. Every ranking point breaks ties
//! towards the lower input index; for beams that means the lexicographically
//! smaller sequence wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{Objective, ObjectiveMatrix, ObjectiveSet, Track, User, NUM_OBJECTIVES};
use crate::error::{Error, Result};
use crate::featurizer::cosine;

pub const DEFAULT_BEAM_WIDTH: usize = 4;
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Below this best score every relative drop is taken to be zero.
pub const DEGENERATE_BEST: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub epsilon: f64,
    pub beam_width: usize,
    pub enabled: ObjectiveSet,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            epsilon: DEFAULT_EPSILON,
            beam_width: DEFAULT_BEAM_WIDTH,
            enabled: ObjectiveSet::all(),
        }
    }
}

impl DecodeConfig {
    pub fn new(epsilon: f64, beam_width: usize, enabled: ObjectiveSet) -> Result<Self> {
        let cfg = DecodeConfig {
            epsilon,
            beam_width,
            enabled,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keeps every beam; only practical for small sets.
    pub fn exhaustive(epsilon: f64, enabled: ObjectiveSet) -> Self {
        DecodeConfig {
            epsilon,
            beam_width: usize::MAX,
            enabled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.beam_width < 1 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(())
    }
}

/// `δ_t = (r̂ − r_t) / r̂` with `r̂ = max(r)`.
pub fn relative_drops(r: &[f64]) -> Vec<f64> {
    let best = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(best >= DEGENERATE_BEST) {
        return vec![0.0; r.len()];
    }
    r.iter().map(|&x| (best - x) / best).collect()
}

/// A track stays a candidate when its drop is below `epsilon` or it ties the best.
pub fn is_unmasked(delta: f64, epsilon: f64) -> bool {
    delta < epsilon || delta == 0.0
}

/// Masked scores: `r_t` for surviving tracks, `-inf` for the rest.
pub fn counterfactual_mask(r: &[f64], epsilon: f64) -> Vec<f64> {
    relative_drops(r)
        .into_iter()
        .zip(r)
        .map(|(d, &x)| if is_unmasked(d, epsilon) { x } else { f64::NEG_INFINITY })
        .collect()
}

/// `(1/n) · Σ_{j ∈ enabled} √counts[j]`, where `counts` already include the candidate.
///
/// # Panics
///
/// If `n` is zero.
pub fn submodular_bonus(counts: [u32; NUM_OBJECTIVES], n: usize, enabled: ObjectiveSet) -> f64 {
    assert!(n >= 1, "step index is 1-based");
    let inv = 1.0 / n as f64;
    let total: f64 = Objective::ALL
        .iter()
        .filter(|o| enabled.contains(**o))
        .map(|o| (counts[o.column()] as f64).sqrt())
        .sum();
    inv * total
}

/// What happened at one position of a ranked sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    /// 1-based position being filled.
    pub step: usize,
    pub track: usize,
    pub relevance: f64,
    /// Relative drop from the best track still available.
    pub delta: f64,
    pub masked: bool,
    /// Number of tracks that survived the mask at this step.
    pub candidates: usize,
    pub bonus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSequence {
    pub order: Vec<usize>,
    /// Cumulative beam score; absent for plain sorts.
    pub score: Option<f64>,
    pub steps: Vec<StepDiagnostic>,
}

impl RankedSequence {
    fn sorted(order: Vec<usize>, r: &[f64]) -> Self {
        let steps = replay(&order, r, None, None);
        RankedSequence {
            order,
            score: None,
            steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub track: usize,
    pub relevance: f64,
    pub delta: f64,
    pub masked: bool,
    /// Bonus and extended score; absent when masked.
    pub bonus: Option<f64>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamTrace {
    pub sequence: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTrace {
    pub prefix: Vec<usize>,
    pub candidates: Vec<CandidateTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub expansions: Vec<ExpansionTrace>,
    pub kept: Vec<BeamTrace>,
}

#[derive(Clone, Debug)]
struct Beam {
    seq: Vec<usize>,
    score: f64,
    counts: [u32; NUM_OBJECTIVES],
    available: Vec<usize>,
}

/// Descending order with NaN last; a total order.
fn desc(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (false, false) => b.partial_cmp(&a).expect("not NaN"),
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
    }
}

fn add_counts(c: [u32; NUM_OBJECTIVES], row: [u8; NUM_OBJECTIVES]) -> [u32; NUM_OBJECTIVES] {
    let mut out = c;
    for (o, v) in out.iter_mut().zip(row) {
        *o += v as u32;
    }
    out
}

fn check_inputs(r: &[f64], e: &ObjectiveMatrix) -> Result<()> {
    if r.is_empty() {
        return Err(Error::Contract("cannot decode an empty set".into()));
    }
    if r.len() != e.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} objective rows",
            r.len(),
            e.len()
        )));
    }
    if let Some(i) = r.iter().position(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("score {} is not finite", i)));
    }
    Ok(())
}

pub fn jmo_beam_search(r: &[f64], e: &ObjectiveMatrix, cfg: &DecodeConfig) -> Result<RankedSequence> {
    decode(r, e, cfg, None)
}

/// As [`jmo_beam_search`], also returning the per-step beam trace.
pub fn jmo_beam_search_traced(
    r: &[f64],
    e: &ObjectiveMatrix,
    cfg: &DecodeConfig,
) -> Result<(RankedSequence, Vec<StepTrace>)> {
    let mut trace = Vec::new();
    let out = decode(r, e, cfg, Some(&mut trace))?;
    Ok((out, trace))
}

fn decode(
    r: &[f64],
    e: &ObjectiveMatrix,
    cfg: &DecodeConfig,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<RankedSequence> {
    cfg.validate()?;
    check_inputs(r, e)?;
    let n_tracks = r.len();
    let mut beams = vec![Beam {
        seq: Vec::new(),
        score: 0.0,
        counts: [0; NUM_OBJECTIVES],
        available: (0..n_tracks).collect(),
    }];

    for step in 1..=n_tracks {
        struct Cand {
            parent: usize,
            track: usize,
            pos: usize,
            score: f64,
            counts: [u32; NUM_OBJECTIVES],
        }
        let mut cands = Vec::new();
        let mut expansions = Vec::new();
        for (b, beam) in beams.iter().enumerate() {
            let ra: Vec<f64> = beam.available.iter().map(|&i| r[i]).collect();
            let drops = relative_drops(&ra);
            let mut traced = Vec::new();
            for (pos, (&t, &d)) in beam.available.iter().zip(&drops).enumerate() {
                if !is_unmasked(d, cfg.epsilon) {
                    if trace.is_some() {
                        traced.push(CandidateTrace {
                            track: t,
                            relevance: r[t],
                            delta: d,
                            masked: true,
                            bonus: None,
                            score: None,
                        });
                    }
                    continue;
                }
                let counts = add_counts(beam.counts, e.row(t));
                let bonus = submodular_bonus(counts, step, cfg.enabled);
                let score = beam.score + (r[t] + bonus);
                if trace.is_some() {
                    traced.push(CandidateTrace {
                        track: t,
                        relevance: r[t],
                        delta: d,
                        masked: false,
                        bonus: Some(bonus),
                        score: Some(score),
                    });
                }
                cands.push(Cand {
                    parent: b,
                    track: t,
                    pos,
                    score,
                    counts,
                });
            }
            if trace.is_some() {
                expansions.push(ExpansionTrace {
                    prefix: beam.seq.clone(),
                    candidates: traced,
                });
            }
        }
        cands.sort_by(|a, b| {
            desc(a.score, b.score)
                .then_with(|| beams[a.parent].seq.cmp(&beams[b.parent].seq))
                .then_with(|| a.track.cmp(&b.track))
        });
        cands.truncate(cfg.beam_width);
        beams = cands
            .into_iter()
            .map(|c| {
                let parent = &beams[c.parent];
                let mut seq = Vec::with_capacity(step);
                seq.extend_from_slice(&parent.seq);
                seq.push(c.track);
                let mut available = parent.available.clone();
                available.remove(c.pos);
                Beam {
                    seq,
                    score: c.score,
                    counts: c.counts,
                    available,
                }
            })
            .collect();
        if let Some(t) = trace.as_deref_mut() {
            t.push(StepTrace {
                step,
                expansions,
                kept: beams
                    .iter()
                    .map(|b| BeamTrace {
                        sequence: b.seq.clone(),
                        score: b.score,
                    })
                    .collect(),
            });
        }
    }

    let best = beams.into_iter().next().expect("the best track is never masked");
    let steps = replay(&best.seq, r, Some(e), Some(cfg));
    Ok(RankedSequence {
        order: best.seq,
        score: Some(best.score),
        steps,
    })
}

/// Recomputes per-step diagnostics for a finished order.
fn replay(order: &[usize], r: &[f64], e: Option<&ObjectiveMatrix>, cfg: Option<&DecodeConfig>) -> Vec<StepDiagnostic> {
    let mut available: Vec<usize> = (0..r.len()).collect();
    let mut counts = [0u32; NUM_OBJECTIVES];
    let mut steps = Vec::with_capacity(order.len());
    for (i, &t) in order.iter().enumerate() {
        let ra: Vec<f64> = available.iter().map(|&j| r[j]).collect();
        let drops = relative_drops(&ra);
        let pos = available.iter().position(|&j| j == t).expect("order is a permutation");
        let (masked, candidates, bonus) = match (e, cfg) {
            (Some(e), Some(cfg)) => {
                counts = add_counts(counts, e.row(t));
                (
                    !is_unmasked(drops[pos], cfg.epsilon),
                    drops.iter().filter(|&&d| is_unmasked(d, cfg.epsilon)).count(),
                    submodular_bonus(counts, i + 1, cfg.enabled),
                )
            }
            _ => (false, available.len(), 0.0),
        };
        steps.push(StepDiagnostic {
            step: i + 1,
            track: t,
            relevance: r[t],
            delta: drops[pos],
            masked,
            candidates,
            bonus,
        });
        available.remove(pos);
    }
    steps
}

fn stable_desc_order(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| desc(keys[a], keys[b]));
    idx
}

/// Stable descending sort by relevance.
pub fn setrank_sort(r: &[f64]) -> RankedSequence {
    RankedSequence::sorted(stable_desc_order(r), r)
}

/// `s_i = r_i + 1{r_i > 0.5} · α · Σ_j E_ij`, sorted stably.
pub fn wtsum_rank(r: &[f64], e: &ObjectiveMatrix, alpha: f64) -> Result<RankedSequence> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be non-negative, got {}", alpha)));
    }
    if r.len() != e.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} objective rows",
            r.len(),
            e.len()
        )));
    }
    let s: Vec<f64> = r
        .iter()
        .zip(e.rows())
        .map(|(&ri, row)| {
            let gate = if ri > 0.5 { 1.0 } else { 0.0 };
            ri + gate * alpha * row.iter().map(|&v| v as f64).sum::<f64>()
        })
        .collect();
    Ok(RankedSequence::sorted(stable_desc_order(&s), r))
}

/// Orders tracks by cosine similarity to the user embedding.
pub fn relevance_rank(user: &User, tracks: &[Track]) -> RankedSequence {
    let sims: Vec<f64> = tracks.iter().map(|t| cosine(&user.embedding, &t.contextual)).collect();
    RankedSequence::sorted(stable_desc_order(&sims), &sims)
}
