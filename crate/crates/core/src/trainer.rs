//! Losses, labels and the training loop.
//!
//! Each session in a batch is recorded on its own tape; the per-session
//! gradients are summed in batch order, so results do not depend on thread
//! scheduling.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Session, NUM_OBJECTIVES};
use crate::decoder::setrank_sort;
use crate::error::{Error, Result};
use crate::featurizer::featurize_session;
use crate::metrics::ndcg_at_k;
use crate::model::Model;
use crate::numerics::{Tape, Tensor, Var};

/// Probabilities are clamped to `[EPS_P, 1 − EPS_P]` inside the BCE loss.
pub const EPS_P: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Rmse,
    Bce,
    AttRank,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(Loss::Rmse),
            "bce" => Ok(Loss::Bce),
            "attrank" => Ok(Loss::AttRank),
            _ => Err(Error::Config(format!("unknown loss {:?} (rmse, bce, attrank)", s))),
        }
    }
}

/// Which labels the model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Sat,
    /// `s_i = SAT_i · (1 + Σ_j E_ij)`.
    MoLtr,
}

/// Per-track training targets for `session`.
///
/// MO-LTR labels are divided by `1 + J` for the losses that compare against
/// sigmoid outputs, keeping them in `[0, 1]`.
pub fn labels(session: &Session, mode: LabelMode, loss: Loss) -> Vec<f64> {
    match mode {
        LabelMode::Sat => session.sat_gains(),
        LabelMode::MoLtr => {
            let scale = match loss {
                Loss::AttRank => 1.0,
                Loss::Rmse | Loss::Bce => 1.0 / (1 + NUM_OBJECTIVES) as f64,
            };
            moltr_labels(session).into_iter().map(|s| s * scale).collect()
        }
    }
}

pub fn moltr_labels(session: &Session) -> Vec<f64> {
    session
        .sat
        .iter()
        .zip(session.objectives.rows())
        .map(|(&s, row)| s as f64 * (1.0 + row.iter().map(|&v| v as f64).sum::<f64>()))
        .collect()
}

/// A loss value with its gradient with respect to the scored input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_loss_inputs(r: &[f64], y: &[f64], mask: Option<&[bool]>) -> Result<usize> {
    if r.len() != y.len() || mask.is_some_and(|m| m.len() != r.len()) {
        return Err(Error::Dimension(
            "scores, labels and mask must have equal length".into(),
        ));
    }
    let n = mask.map_or(r.len(), |m| m.iter().filter(|&&b| b).count());
    if n == 0 {
        return Err(Error::Contract("loss mask selects no entries".into()));
    }
    Ok(n)
}

fn on(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// `√(Σ mask·(r − y)² / Σ mask)`; the gradient at zero loss is taken as zero.
pub fn loss_rmse(r: &[f64], y: &[f64], mask: Option<&[bool]>) -> Result<LossEval> {
    let n = check_loss_inputs(r, y, mask)? as f64;
    let sq: f64 = (0..r.len())
        .filter(|&i| on(mask, i))
        .map(|i| (r[i] - y[i]).powi(2))
        .sum();
    let value = (sq / n).sqrt();
    let grad = (0..r.len())
        .map(|i| {
            if on(mask, i) && value > 0.0 {
                (r[i] - y[i]) / (n * value)
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossEval { value, grad })
}

/// Mean masked binary cross-entropy of probabilities `r`.
pub fn loss_bce(r: &[f64], y: &[f64], mask: Option<&[bool]>) -> Result<LossEval> {
    let n = check_loss_inputs(r, y, mask)? as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; r.len()];
    for i in (0..r.len()).filter(|&i| on(mask, i)) {
        let p = r[i].clamp(EPS_P, 1.0 - EPS_P);
        value -= y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln();
        if p == r[i] {
            grad[i] = (-y[i] / p + (1.0 - y[i]) / (1.0 - p)) / n;
        }
    }
    Ok(LossEval { value: value / n, grad })
}

/// Cross-entropy between `softmax(z)` and the allocation `a_i ∝ max(y_i, 0)·e^{y_i}`.
///
/// Returns `None` when no masked entry has a positive label.
pub fn loss_attrank(z: &[f64], y: &[f64], mask: Option<&[bool]>) -> Result<Option<LossEval>> {
    check_loss_inputs(z, y, mask)?;
    let idx: Vec<usize> = (0..z.len()).filter(|&i| on(mask, i)).collect();
    let weights: Vec<f64> = idx.iter().map(|&i| y[i].max(0.0) * y[i].exp()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok(None);
    }
    let zmax = idx.iter().map(|&i| z[i]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = idx.iter().map(|&i| (z[i] - zmax).exp()).collect();
    let log_norm = exps.iter().sum::<f64>().ln();
    let mut value = 0.0;
    let mut grad = vec![0.0; z.len()];
    let norm: f64 = exps.iter().sum();
    for (k, &i) in idx.iter().enumerate() {
        let a = weights[k] / total;
        if a > 0.0 {
            value -= a * (z[i] - zmax - log_norm);
        }
        grad[i] = exps[k] / norm - a;
    }
    Ok(Some(LossEval { value, grad }))
}

/// Records the loss for one session on `tape`. `None` when AttRank skips it.
pub fn record_loss(tape: &mut Tape, logits: Var, y: &[f64], loss: Loss) -> Result<Option<Var>> {
    match loss {
        Loss::AttRank => {
            let z = tape.value(logits).data().to_vec();
            match loss_attrank(&z, y, None)? {
                Some(l) => Ok(Some(tape.scalar_fn(logits, l.value, l.grad)?)),
                None => Ok(None),
            }
        }
        Loss::Rmse | Loss::Bce => {
            let r = tape.sigmoid(logits)?;
            let rv = tape.value(r).data().to_vec();
            let l = if loss == Loss::Rmse {
                loss_rmse(&rv, y, None)?
            } else {
                loss_bce(&rv, y, None)?
            };
            Ok(Some(tape.scalar_fn(r, l.value, l.grad)?))
        }
    }
}

pub type SessionGradients = (f64, Vec<Tensor>);

/// Loss and per-parameter gradients for one featurized session.
pub fn session_gradients(model: &Model, x: &Tensor, y: &[f64], loss: Loss) -> Result<Option<SessionGradients>> {
    let mut tape = Tape::new();
    let bound: Vec<Var> = model.params().iter().map(|p| tape.param(p.value.clone())).collect();
    let vx = tape.constant(x.clone());
    let logits = model.forward(&mut tape, &bound, vx)?;
    let Some(l) = record_loss(&mut tape, logits, y, loss)? else {
        return Ok(None);
    };
    let value = tape.value(l).data()[0];
    let mut g = tape.backward(l)?;
    let grads = model
        .params()
        .iter()
        .zip(&bound)
        .map(|(p, &v)| g.take(v, p.value.rows(), p.value.cols()))
        .collect();
    Ok(Some((value, grads)))
}

/// Loss for one featurized session without recording gradients.
pub fn session_loss(model: &Model, x: &Tensor, y: &[f64], loss: Loss) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let bound: Vec<Var> = model.params().iter().map(|p| tape.constant(p.value.clone())).collect();
    let vx = tape.constant(x.clone());
    let logits = model.forward(&mut tape, &bound, vx)?;
    Ok(record_loss(&mut tape, logits, y, loss)?.map(|l| tape.value(l).data()[0]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub steps: usize,
    pub batch_sessions: usize,
    pub max_len: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_at: Vec<usize>,
    pub seed: u64,
    /// Fraction of users held out for model selection.
    pub val_fraction: f64,
    /// Steps between validation passes; the final step is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Bce,
            steps: 12_500,
            batch_sessions: 128,
            max_len: 100,
            lr: 5e-4,
            lr_decay: 0.1,
            decay_at: vec![10_000],
            seed: 0,
            val_fraction: 0.1,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.batch_sessions < 1 || self.max_len < 1 || self.eval_every < 1 {
            return Err(Error::Config(
                "steps, batch_sessions, max_len and eval_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let decays = self.decay_at.iter().filter(|&&d| step >= d).count() as i32;
        self.lr * self.lr_decay.powi(decays)
    }
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(model: &Model) -> Self {
        let zeros = || model.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (k, p) in model.params_mut().iter_mut().enumerate() {
            let mut w = (*p.value).clone();
            for (i, wi) in w.data_mut().iter_mut().enumerate() {
                let g = grads[k][i];
                self.m[k][i] = Self::BETA1 * self.m[k][i] + (1.0 - Self::BETA1) * g;
                self.v[k][i] = Self::BETA2 * self.v[k][i] + (1.0 - Self::BETA2) * g * g;
                let mh = self.m[k][i] / c1;
                let vh = self.v[k][i] / c2;
                *wi -= lr * mh / (vh.sqrt() + Self::EPS);
            }
            p.value = Arc::new(w);
        }
    }
}

/// Whether `user_id` falls in the validation share.
pub fn is_validation_user(user_id: &str, fraction: f64) -> bool {
    let d = Sha256::digest(user_id.as_bytes());
    let h = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    ((h % 10_000) as f64) < fraction * 10_000.0
}

struct Example {
    id: String,
    x: Tensor,
    y: Vec<f64>,
    gains: Vec<f64>,
}

fn prepare(sessions: &[&Session], model: &Model, cfg: &TrainConfig, mode: LabelMode) -> Result<Vec<Example>> {
    sessions
        .par_iter()
        .map(|s| {
            let s = s.truncated(cfg.max_len);
            s.validate()?;
            Ok(Example {
                x: featurize_session(&s, model.layout())?,
                y: labels(&s, mode, cfg.loss),
                gains: match mode {
                    LabelMode::Sat => s.sat_gains(),
                    LabelMode::MoLtr => moltr_labels(&s),
                },
                id: s.session_id,
            })
        })
        .collect()
}

/// Mean NDCG@5 of relevance-sorted model scores against each example's gains.
fn validation_ndcg(model: &Model, val: &[Example]) -> Result<f64> {
    let scores: Vec<f64> = val
        .par_iter()
        .map(|e| Ok(ndcg_at_k(&setrank_sort(&model.logits(&e.x)?).order, &e.gains, 5)))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub val_ndcg5: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the step with the best validation NDCG@5.
    pub model: Model,
    pub log: Vec<LogRow>,
    pub best_step: usize,
    pub best_val_ndcg5: Option<f64>,
    pub train_sessions: usize,
    pub val_sessions: usize,
    /// AttRank sessions skipped for lack of a positive label.
    pub skipped: usize,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,loss,val_ndcg5_sat\n");
        for r in &self.log {
            let val = r.val_ndcg5.map(|v| format!("{:.6}", v)).unwrap_or_default();
            let _ = writeln!(out, "{},{:.8},{}", r.step, r.loss, val);
        }
        out
    }
}

/// Trains `model` in place of a copy and returns the best checkpoint.
///
/// Users are split into training and validation by a hash of their id. When
/// either side would be empty, every session trains and the last step wins.
pub fn train(sessions: &[Session], model: &Model, cfg: &TrainConfig, mode: LabelMode) -> Result<TrainOutcome> {
    cfg.validate()?;
    if sessions.is_empty() {
        return Err(Error::Contract("training needs at least one session".into()));
    }
    let (mut tr, mut va): (Vec<&Session>, Vec<&Session>) = sessions
        .iter()
        .partition(|s| !is_validation_user(&s.user.id, cfg.val_fraction));
    if tr.is_empty() || va.is_empty() {
        tr = sessions.iter().collect();
        va.clear();
    }
    let train_set = prepare(&tr, model, cfg, mode)?;
    let val_set = prepare(&va, model, cfg, mode)?;

    let mut model = model.clone();
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut log = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut skipped = 0;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_sessions);
        while batch.len() < cfg.batch_sessions.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let diverged = |ids: &[usize]| Error::Diverged {
            step,
            sessions: ids.iter().map(|&i| train_set[i].id.clone()).collect(),
        };
        let results: Vec<Result<Option<SessionGradients>>> = batch
            .par_iter()
            .map(|&i| session_gradients(&model, &train_set[i].x, &train_set[i].y, cfg.loss))
            .collect();

        let mut total = 0.0;
        let mut used = 0usize;
        let mut acc: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(Some((l, grads))) => {
                    if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                        return Err(diverged(&[batch[k]]));
                    }
                    total += l;
                    used += 1;
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (ai, gi) in a.iter_mut().zip(g.data()) {
                            *ai += gi;
                        }
                    }
                }
                Ok(None) => skipped += 1,
                Err(Error::NonFinite(_)) => return Err(diverged(&[batch[k]])),
                Err(e) => return Err(e),
            }
        }
        let loss = if used > 0 { total / used as f64 } else { 0.0 };
        if !loss.is_finite() {
            return Err(diverged(&batch));
        }
        if used > 0 {
            let scale = 1.0 / used as f64;
            acc.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.step(&mut model, &acc, cfg.lr_at(step));
            if model.params().iter().any(|p| !p.value.is_finite()) {
                return Err(diverged(&batch));
            }
        }

        let mut row = LogRow {
            step,
            loss,
            val_ndcg5: None,
        };
        if !val_set.is_empty() && (step % cfg.eval_every == 0 || step == cfg.steps) {
            let v = validation_ndcg(&model, &val_set)?;
            row.val_ndcg5 = Some(v);
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, step, model.clone()));
            }
        }
        log.push(row);
    }

    let (best_val, best_step, best_model) = match best {
        Some((v, s, m)) => (Some(v), s, m),
        None => (None, cfg.steps, model),
    };
    Ok(TrainOutcome {
        model: best_model,
        log,
        best_step,
        best_val_ndcg5: best_val,
        train_sessions: train_set.len(),
        val_sessions: val_set.len(),
        skipped,
    })
}
