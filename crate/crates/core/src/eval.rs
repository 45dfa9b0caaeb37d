//! Method comparison reports, competition grids, objective interplay and ε-sweeps.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::statistics::{Data, Max, Min, OrderStatistics, Statistics};

use crate::data::{Objective, ObjectiveSet, Session, NUM_OBJECTIVES};
use crate::decoder::{
    is_unmasked, jmo_beam_search, relative_drops, relevance_rank, setrank_sort, wtsum_rank, DecodeConfig,
    RankedSequence,
};
use crate::error::{Error, Result};
use crate::metrics::{good_all, map_at_k, ndcg_at_k, GoodAll};
use crate::model::Model;

/// Metric columns in report order: SAT, then the objectives in column order.
pub const TARGETS: [&str; 4] = ["sat", "boost", "exposure", "discovery"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerTarget {
    pub sat: f64,
    pub boost: f64,
    pub exposure: f64,
    pub discovery: f64,
}

impl PerTarget {
    pub fn from_array(v: [f64; 4]) -> Self {
        PerTarget {
            sat: v[0],
            boost: v[1],
            exposure: v[2],
            discovery: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.sat, self.boost, self.exposure, self.discovery]
    }

    pub fn objective(&self, o: Objective) -> f64 {
        self.to_array()[1 + o.column()]
    }
}

/// Binary relevance of each track: SAT for target 0, objective membership otherwise.
pub fn target_gains(session: &Session, target: usize) -> Vec<f64> {
    match target {
        0 => session.sat_gains(),
        t => session.objectives.column(Objective::ALL[t - 1]),
    }
}

/// Objective tracks that were also streamed.
pub fn streamed_gains(session: &Session, target: usize) -> Vec<f64> {
    let sat = session.sat_gains();
    match target {
        0 => sat,
        t => session
            .objectives
            .column(Objective::ALL[t - 1])
            .into_iter()
            .zip(sat)
            .map(|(e, s)| e * s)
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub order: Vec<usize>,
    pub ndcg5: PerTarget,
    pub ndcg10: PerTarget,
    /// Objective columns count only streamed tracks.
    pub map5: PerTarget,
    pub good_all: [GoodAll; NUM_OBJECTIVES],
}

pub fn session_record(session: &Session, order: &[usize]) -> SessionRecord {
    let per = |f: &dyn Fn(usize) -> f64| PerTarget::from_array([f(0), f(1), f(2), f(3)]);
    SessionRecord {
        session_id: session.session_id.clone(),
        order: order.to_vec(),
        ndcg5: per(&|t| ndcg_at_k(order, &target_gains(session, t), 5)),
        ndcg10: per(&|t| ndcg_at_k(order, &target_gains(session, t), 10)),
        map5: per(&|t| map_at_k(order, &streamed_gains(session, t), 5)),
        good_all: good_all(order, &session.objectives, &session.sat, 5),
    }
}

/// Mean top-5 counts per session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanGoodAll {
    pub all: f64,
    pub good: f64,
    /// `good / all`; absent when nothing was surfaced.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub sessions: usize,
    pub ndcg5: PerTarget,
    pub ndcg10: PerTarget,
    pub map5: PerTarget,
    pub good_all: [MeanGoodAll; NUM_OBJECTIVES],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<SessionRecord>,
}

impl MethodReport {
    /// Averages `records`; the result does not depend on their order.
    pub fn aggregate(method: impl Into<String>, mut records: Vec<SessionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Contract("cannot aggregate zero sessions".into()));
        }
        records.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&SessionRecord) -> [f64; 4]| {
            let mut acc = [0.0; 4];
            for r in &records {
                for (a, v) in acc.iter_mut().zip(f(r)) {
                    *a += v;
                }
            }
            PerTarget::from_array(acc.map(|a| a / n))
        };
        let mut ga = [MeanGoodAll::default(); NUM_OBJECTIVES];
        for (j, slot) in ga.iter_mut().enumerate() {
            let all: u64 = records.iter().map(|r| r.good_all[j].all as u64).sum();
            let good: u64 = records.iter().map(|r| r.good_all[j].good as u64).sum();
            *slot = MeanGoodAll {
                all: all as f64 / n,
                good: good as f64 / n,
                ratio: (all > 0).then(|| good as f64 / all as f64),
            };
        }
        Ok(MethodReport {
            method: method.into(),
            sessions: records.len(),
            ndcg5: mean(&|r| r.ndcg5.to_array()),
            ndcg10: mean(&|r| r.ndcg10.to_array()),
            map5: mean(&|r| r.map5.to_array()),
            good_all: ga,
            records,
        })
    }

    pub fn without_records(mut self) -> Self {
        self.records.clear();
        self
    }
}

/// How a method orders a session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ranker {
    /// Cosine similarity between user and track embeddings.
    Relevance,
    /// Descending model score.
    Sort,
    WtSum {
        alpha: f64,
    },
    Mostra(DecodeConfig),
}

impl Ranker {
    pub fn needs_scores(&self) -> bool {
        !matches!(self, Ranker::Relevance)
    }

    pub fn rank(&self, session: &Session, scores: Option<&[f64]>) -> Result<RankedSequence> {
        let need = || scores.ok_or_else(|| Error::Contract("ranker needs model scores".into()));
        match self {
            Ranker::Relevance => Ok(relevance_rank(&session.user, &session.tracks)),
            Ranker::Sort => Ok(setrank_sort(need()?)),
            Ranker::WtSum { alpha } => wtsum_rank(need()?, &session.objectives, *alpha),
            Ranker::Mostra(cfg) => jmo_beam_search(need()?, &session.objectives, cfg),
        }
    }
}

/// Relevance scores for every session, in dataset order.
pub fn score_sessions(model: &Model, sessions: &[Session]) -> Result<Vec<Vec<f64>>> {
    sessions.par_iter().map(|s| Ok(model.score_session(s)?.0)).collect()
}

/// Ranks and scores every session with one method.
pub fn evaluate(
    method: impl Into<String>,
    ranker: &Ranker,
    sessions: &[Session],
    scores: Option<&[Vec<f64>]>,
) -> Result<MethodReport> {
    if let Some(s) = scores {
        if s.len() != sessions.len() {
            return Err(Error::Dimension(format!(
                "{} score rows for {} sessions",
                s.len(),
                sessions.len()
            )));
        }
    }
    let records: Vec<SessionRecord> = sessions
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ranked = ranker.rank(s, scores.map(|v| v[i].as_slice()))?;
            Ok(session_record(s, &ranked.order))
        })
        .collect::<Result<_>>()?;
    MethodReport::aggregate(method, records)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

fn fmt6(v: f64) -> String {
    format!("{:.6}", v)
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,ndcg5_sat,ndcg5_boost,ndcg5_exposure,ndcg5_discovery,\
ndcg10_sat,ndcg10_boost,ndcg10_exposure,ndcg10_discovery,\
map5_sat,map5_boost,map5_exposure,map5_discovery,\
all5_boost,good5_boost,all5_exposure,good5_exposure,all5_discovery,good5_discovery";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for m in &self.methods {
            let mut cells = vec![m.method.clone()];
            for block in [m.ndcg5, m.ndcg10, m.map5] {
                cells.extend(block.to_array().map(fmt6));
            }
            for ga in &m.good_all {
                cells.push(fmt6(ga.all));
                cells.push(fmt6(ga.good));
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Two-sided sign test on paired differences; zero differences are dropped.
pub fn sign_test(deltas: &[f64]) -> Option<f64> {
    let pos = deltas.iter().filter(|&&d| d > 0.0).count() as u64;
    let neg = deltas.iter().filter(|&&d| d < 0.0).count() as u64;
    let n = pos + neg;
    if n == 0 {
        return None;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    Some((2.0 * b.cdf(pos.min(neg))).min(1.0))
}

/// Objective counts per session, ranked: most frequent first, ties by column order.
pub fn dominant_objectives(session: &Session) -> Vec<(Objective, usize)> {
    let mut present: Vec<(Objective, usize)> = Objective::ALL
        .iter()
        .map(|&o| (o, session.objectives.column_count(o)))
        .filter(|&(_, c)| c > 0)
        .collect();
    present.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.column().cmp(&b.0.column())));
    present
}

/// `None` when the session has no objective tracks; a diagonal cell when it has one kind.
pub fn competition_bucket(session: &Session) -> Option<(Objective, Objective)> {
    let d = dominant_objectives(session);
    match d.as_slice() {
        [] => None,
        [(a, _)] => Some((*a, *a)),
        [(a, _), (b, _), ..] => Some((*a, *b)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// Absent for sessions without objective tracks.
    pub dominant: Option<Objective>,
    pub secondary: Option<Objective>,
    pub sessions: usize,
    /// Mean NDCG@5 of the method minus the reference.
    pub mean_delta: PerTarget,
    /// Sign-test p-values per target; absent when every difference is zero.
    pub p_value: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitionGrid {
    pub method: String,
    pub reference: String,
    /// Nine cells, row-major by dominant then secondary objective.
    pub cells: Vec<GridCell>,
    pub no_objectives: GridCell,
}

fn grid_cell(dominant: Option<Objective>, secondary: Option<Objective>, deltas: &[[f64; 4]]) -> GridCell {
    let n = deltas.len();
    let mut mean = [0.0; 4];
    let mut p = [None; 4];
    for t in 0..4 {
        let col: Vec<f64> = deltas.iter().map(|d| d[t]).collect();
        if n > 0 {
            mean[t] = col.iter().sum::<f64>() / n as f64;
        }
        p[t] = sign_test(&col);
    }
    GridCell {
        dominant,
        secondary,
        sessions: n,
        mean_delta: PerTarget::from_array(mean),
        p_value: p,
    }
}

/// Buckets sessions by objective competition and compares NDCG@5 against `reference`.
pub fn competition_grid(
    method: &MethodReport,
    reference: &MethodReport,
    sessions: &[Session],
) -> Result<CompetitionGrid> {
    let by_id = |r: &MethodReport| -> HashMap<String, [f64; 4]> {
        r.records
            .iter()
            .map(|x| (x.session_id.clone(), x.ndcg5.to_array()))
            .collect()
    };
    let (m, r) = (by_id(method), by_id(reference));
    let mut ordered: Vec<&Session> = sessions.iter().collect();
    ordered.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mut buckets: HashMap<Option<(Objective, Objective)>, Vec<[f64; 4]>> = HashMap::new();
    for s in ordered {
        let (Some(a), Some(b)) = (m.get(&s.session_id), r.get(&s.session_id)) else {
            return Err(Error::Contract(format!(
                "session {} missing from a report",
                s.session_id
            )));
        };
        let delta = [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
        buckets.entry(competition_bucket(s)).or_default().push(delta);
    }
    let mut cells = Vec::with_capacity(9);
    for d in Objective::ALL {
        for s in Objective::ALL {
            let deltas = buckets.get(&Some((d, s))).map(Vec::as_slice).unwrap_or(&[]);
            cells.push(grid_cell(Some(d), Some(s), deltas));
        }
    }
    let none = buckets.get(&None).map(Vec::as_slice).unwrap_or(&[]);
    Ok(CompetitionGrid {
        method: method.method.clone(),
        reference: reference.method.clone(),
        cells,
        no_objectives: grid_cell(None, None, none),
    })
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if x.len() < 2 || x.len() != y.len() || constant(x) || constant(y) {
        return None;
    }
    let cov = x.iter().copied().covariance(y.iter().copied());
    let sx = x.iter().copied().std_dev();
    let sy = y.iter().copied().std_dev();
    Some((cov / (sx * sy)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut d = Data::new(values.to_vec());
    Some(Quartiles {
        min: d.min(),
        q1: d.lower_quartile(),
        median: d.median(),
        q3: d.upper_quartile(),
        max: d.max(),
        n: values.len(),
    })
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveInterplay {
    pub objective: Objective,
    /// Mean fraction of a session's tracks carrying the objective.
    pub prevalence: f64,
    /// Correlation of that fraction with the session's mean SAT.
    pub sat_correlation: Option<f64>,
    /// Sessions per tenth of the fraction range; the last bin includes 1.
    pub histogram: Vec<u32>,
    /// Mean SAT of the objective's tracks, over sessions that have any.
    pub sat_quartiles: Option<Quartiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    /// Objectives present, e.g. `boost+discovery`, or `none`.
    pub set_type: String,
    pub sessions: usize,
    /// Mean share of boost, exposure and discovery among the objective tracks.
    pub mean_share: [f64; NUM_OBJECTIVES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterplayReport {
    pub sessions: usize,
    pub objectives: Vec<ObjectiveInterplay>,
    pub composition: Vec<CompositionRow>,
    /// Mean SAT over all tracks of each session.
    pub session_sat_quartiles: Option<Quartiles>,
}

pub const MIN_INTERPLAY_SESSIONS: usize = 100;

pub fn interplay_analysis(sessions: &[Session]) -> Result<InterplayReport> {
    if sessions.len() < MIN_INTERPLAY_SESSIONS {
        return Err(Error::Contract(format!(
            "interplay analysis needs at least {} sessions, got {}",
            MIN_INTERPLAY_SESSIONS,
            sessions.len()
        )));
    }
    let mut ordered: Vec<&Session> = sessions.iter().collect();
    ordered.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mean_sat: Vec<f64> = ordered
        .iter()
        .map(|s| s.sat.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64)
        .collect();

    let mut objectives = Vec::new();
    for o in Objective::ALL {
        let frac: Vec<f64> = ordered
            .iter()
            .map(|s| s.objectives.column_count(o) as f64 / s.len() as f64)
            .collect();
        let mut histogram = vec![0u32; HISTOGRAM_BINS];
        for &f in &frac {
            histogram[((f * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
        }
        let sat_of_objective: Vec<f64> = ordered
            .iter()
            .filter_map(|s| {
                let hits: Vec<u8> = (0..s.len())
                    .filter(|&i| s.objectives.get(i, o))
                    .map(|i| s.sat[i])
                    .collect();
                (!hits.is_empty()).then(|| hits.iter().map(|&v| v as f64).sum::<f64>() / hits.len() as f64)
            })
            .collect();
        objectives.push(ObjectiveInterplay {
            objective: o,
            prevalence: frac.iter().sum::<f64>() / frac.len() as f64,
            sat_correlation: pearson(&frac, &mean_sat),
            histogram,
            sat_quartiles: quartiles(&sat_of_objective),
        });
    }

    let mut groups: Vec<(usize, [f64; NUM_OBJECTIVES])> = vec![(0, [0.0; NUM_OBJECTIVES]); 1 << NUM_OBJECTIVES];
    for s in &ordered {
        let counts = Objective::ALL.map(|o| s.objectives.column_count(o));
        let key = counts
            .iter()
            .enumerate()
            .fold(0, |k, (j, &c)| if c > 0 { k | (1 << j) } else { k });
        let total: usize = counts.iter().sum();
        let g = &mut groups[key];
        g.0 += 1;
        if total > 0 {
            for (acc, c) in g.1.iter_mut().zip(counts) {
                *acc += c as f64 / total as f64;
            }
        }
    }
    let composition = groups
        .into_iter()
        .enumerate()
        .map(|(key, (n, share))| {
            let names: Vec<&str> = Objective::ALL
                .iter()
                .filter(|o| key & (1 << o.column()) != 0)
                .map(|o| o.name())
                .collect();
            CompositionRow {
                set_type: if names.is_empty() {
                    "none".into()
                } else {
                    names.join("+")
                },
                sessions: n,
                mean_share: if n > 0 {
                    share.map(|v| v / n as f64)
                } else {
                    [0.0; NUM_OBJECTIVES]
                },
            }
        })
        .collect();

    Ok(InterplayReport {
        sessions: sessions.len(),
        objectives,
        composition,
        session_sat_quartiles: quartiles(&mean_sat),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub report: MethodReport,
    /// Mean surviving candidates per step, measured along the relevance-sorted
    /// prefix so that every ε sees the same beam states.
    pub mean_candidates: f64,
    /// The same, broken down by 1-based step.
    pub candidates_by_step: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub beam_width: usize,
    pub enabled: ObjectiveSet,
    pub points: Vec<SweepPoint>,
}

/// Candidate-set size at each step of the relevance-sorted order.
pub fn candidates_along_sort(scores: &[f64], epsilon: f64) -> Vec<usize> {
    let order = setrank_sort(scores).order;
    (0..order.len())
        .map(|step| {
            let ra: Vec<f64> = order[step..].iter().map(|&i| scores[i]).collect();
            relative_drops(&ra)
                .into_iter()
                .filter(|&d| is_unmasked(d, epsilon))
                .count()
        })
        .collect()
}

/// Runs the beam search at each ε in `epsilons` (ascending) and reports every metric.
pub fn epsilon_sweep(
    sessions: &[Session],
    scores: &[Vec<f64>],
    epsilons: &[f64],
    beam_width: usize,
    enabled: ObjectiveSet,
) -> Result<SweepReport> {
    if epsilons.is_empty() {
        return Err(Error::Contract("sweep needs at least one epsilon".into()));
    }
    if epsilons.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Contract("sweep epsilons must be sorted ascending".into()));
    }
    let mut idx: Vec<usize> = (0..sessions.len()).collect();
    idx.sort_by(|&a, &b| sessions[a].session_id.cmp(&sessions[b].session_id));
    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let cfg = DecodeConfig::new(eps, beam_width, enabled)?;
        let report = evaluate(format!("mostra@{}", eps), &Ranker::Mostra(cfg), sessions, Some(scores))?;
        let mut by_step: Vec<(usize, usize)> = Vec::new();
        let (mut total, mut steps) = (0usize, 0usize);
        for &i in &idx {
            for (n, c) in candidates_along_sort(&scores[i], eps).into_iter().enumerate() {
                if by_step.len() <= n {
                    by_step.push((0, 0));
                }
                by_step[n].0 += c;
                by_step[n].1 += 1;
                total += c;
                steps += 1;
            }
        }
        points.push(SweepPoint {
            epsilon: eps,
            report: report.without_records(),
            mean_candidates: if steps > 0 { total as f64 / steps as f64 } else { 0.0 },
            candidates_by_step: by_step.into_iter().map(|(c, n)| c as f64 / n as f64).collect(),
        });
    }
    Ok(SweepReport {
        beam_width,
        enabled,
        points,
    })
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "epsilon,ndcg5_sat,ndcg5_boost,ndcg5_exposure,ndcg5_discovery,\
ndcg10_sat,ndcg10_boost,ndcg10_exposure,ndcg10_discovery,\
map5_sat,map5_boost,map5_exposure,map5_discovery,mean_candidates";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let mut cells = vec![p.epsilon.to_string()];
            for block in [p.report.ndcg5, p.report.ndcg10, p.report.map5] {
                cells.extend(block.to_array().map(fmt6));
            }
            cells.push(fmt6(p.mean_candidates));
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// `{"epsilon": [...], "series": {"ndcg5_sat": [...], ...}}`.
    pub fn to_plot_json(&self) -> serde_json::Value {
        let mut series = serde_json::Map::new();
        for (name, get) in [
            ("ndcg5", (|r: &MethodReport| r.ndcg5) as fn(&MethodReport) -> PerTarget),
            ("ndcg10", |r: &MethodReport| r.ndcg10),
            ("map5", |r: &MethodReport| r.map5),
        ] {
            for (t, target) in TARGETS.iter().enumerate() {
                let values: Vec<f64> = self.points.iter().map(|p| get(&p.report).to_array()[t]).collect();
                series.insert(format!("{}_{}", name, target), values.into());
            }
        }
        series.insert(
            "mean_candidates".into(),
            self.points.iter().map(|p| p.mean_candidates).collect::<Vec<_>>().into(),
        );
        serde_json::json!({
            "epsilon": self.points.iter().map(|p| p.epsilon).collect::<Vec<_>>(),
            "beam_width": self.beam_width,
            "enabled_objectives": self.enabled,
            "series": series,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ObjectiveMatrix, Track, User};

    fn session(id: &str, sat: &[u8], e: &[[u8; 3]]) -> Session {
        let track = |i: usize| Track {
            id: format!("t{i}"),
            contextual: vec![1.0, i as f64],
            acoustic: vec![],
            length_s: 100.0,
            popularity: 0.5,
            genres: vec![],
        };
        Session {
            session_id: id.into(),
            user: User {
                id: "u".into(),
                embedding: vec![1.0, 0.0],
                country: String::new(),
                genre_affinity: Default::default(),
            },
            tracks: (0..sat.len()).map(track).collect(),
            objectives: ObjectiveMatrix::new(e.to_vec()).unwrap(),
            sat: sat.to_vec(),
        }
    }

    #[test]
    fn oracle_scores_give_perfect_sat_ndcg() {
        let s = session("a", &[0, 1, 0, 1], &[[0, 0, 0]; 4]);
        let scores = vec![s.sat_gains()];
        let r = evaluate("oracle", &Ranker::Sort, std::slice::from_ref(&s), Some(&scores)).unwrap();
        assert_eq!(r.ndcg5.sat, 1.0);
        assert_eq!(r.ndcg10.sat, 1.0);
    }

    #[test]
    fn aggregation_ignores_session_order() {
        let a = session("a", &[1, 0, 1], &[[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let b = session("b", &[0, 1, 1], &[[0, 0, 0], [1, 1, 0], [0, 0, 0]]);
        let c = session("c", &[1, 1, 0], &[[0, 0, 1], [0, 0, 0], [1, 0, 0]]);
        let recs = vec![
            session_record(&a, &[2, 0, 1]),
            session_record(&b, &[0, 1, 2]),
            session_record(&c, &[1, 2, 0]),
        ];
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(
            MethodReport::aggregate("m", recs).unwrap(),
            MethodReport::aggregate("m", rev).unwrap()
        );
    }

    #[test]
    fn csv_has_one_row_per_method() {
        let s = session("a", &[1, 0], &[[1, 0, 0], [0, 0, 0]]);
        let scores = vec![vec![0.2, 0.9]];
        let rep = EvalReport {
            methods: vec![
                evaluate("setrank", &Ranker::Sort, std::slice::from_ref(&s), Some(&scores)).unwrap(),
                evaluate("relevance", &Ranker::Relevance, std::slice::from_ref(&s), None).unwrap(),
            ],
        };
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("setrank,"));
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test(&[0.0, 0.0]), None);
        assert!((sign_test(&[1.0]).unwrap() - 1.0).abs() < 1e-12);
        let p = sign_test(&[1.0; 10]).unwrap();
        assert!((p - 2.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn buckets_follow_counts_then_column_order() {
        let s = session("a", &[0; 4], &[[1, 0, 1], [0, 0, 1], [1, 0, 0], [0, 0, 0]]);
        assert_eq!(competition_bucket(&s), Some((Objective::Boost, Objective::Discovery)));
        let d = session("b", &[0; 2], &[[0, 1, 0], [0, 1, 0]]);
        assert_eq!(competition_bucket(&d), Some((Objective::Exposure, Objective::Exposure)));
        assert_eq!(competition_bucket(&session("c", &[0], &[[0, 0, 0]])), None);
    }

    #[test]
    fn pearson_degenerate_is_undefined() {
        assert_eq!(pearson(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn interplay_needs_enough_sessions() {
        let s = vec![session("a", &[1], &[[0, 0, 0]]); 5];
        assert!(matches!(interplay_analysis(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn sweep_rejects_unsorted_epsilons() {
        let s = session("a", &[1, 0], &[[1, 0, 0], [0, 0, 0]]);
        let scores = vec![vec![0.2, 0.9]];
        assert!(epsilon_sweep(&[s], &scores, &[0.1, 0.05], 4, ObjectiveSet::all()).is_err());
    }

    #[test]
    fn sweep_at_zero_matches_sort() {
        let s = session("a", &[1, 0, 1], &[[1, 0, 0], [0, 1, 0], [0, 0, 0]]);
        let scores = vec![vec![0.3, 0.9, 0.5]];
        let sw = epsilon_sweep(std::slice::from_ref(&s), &scores, &[0.0], 4, ObjectiveSet::all()).unwrap();
        let base = evaluate("setrank", &Ranker::Sort, std::slice::from_ref(&s), Some(&scores)).unwrap();
        assert_eq!(sw.points[0].report.ndcg5, base.ndcg5);
        assert_eq!(sw.points[0].mean_candidates, 1.0);
    }
}
