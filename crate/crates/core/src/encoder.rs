//! Set-transformer encoder: input projection, a stack of induced
//! self-attention + feed-forward layers, and a row-wise scoring head.
//!
//! ```text
//! MAB(Y, Z)  = LN(Y + MHA(Y, Z, Z))
//! MHA        = [O_1 ‖ … ‖ O_H] W^O,   O_h = softmax(Y W^Q_h (Z W^K_h)ᵀ / √d) Z W^V_h
//! ISAB_M(X)  = MAB(X, MAB(I, X))
//! FFB(M)     = LN(M + ReLU(M W_1) W_2)
//! r          = sigmoid(rFF(SetTRM(X W_in + b_in)))
//! ```
//!
//! Every MAB owns its own projections and layer-norm parameters. Padding is
//! handled by masking padded keys in the only attention that reads `X` as
//! keys (the inducing-point MAB), so padded rows never reach real rows.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureLayout;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub inducing_points: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 6,
            heads: 8,
            inducing_points: 20,
            hidden: 256,
            ff_hidden: 1024,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ff_hidden == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.inducing_points == 0 {
            return Err(Error::Config("need at least one inducing point".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
}

/// Per-track relevance scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevanceScores(pub Vec<f64>);

impl RelevanceScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weights of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct MabWeights {
    pub query: Vec<Tensor>,
    pub key: Vec<Tensor>,
    pub value: Vec<Tensor>,
    pub output: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

/// [`MabWeights`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct MabVars {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub output: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

impl MabWeights {
    pub fn bind(&self, tape: &mut Tape) -> MabVars {
        MabVars {
            query: self.query.iter().map(|t| tape.param(t.clone())).collect(),
            key: self.key.iter().map(|t| tape.param(t.clone())).collect(),
            value: self.value.iter().map(|t| tape.param(t.clone())).collect(),
            output: tape.param(self.output.clone()),
            ln_gain: tape.param(self.ln_gain.clone()),
            ln_bias: tape.param(self.ln_bias.clone()),
        }
    }
}

/// `LN(Y + MHA(Y, Z, Z))`. `key_mask` marks which rows of `Z` are real.
pub fn mab(tape: &mut Tape, y: Var, z: Var, w: &MabVars, key_mask: Option<&[bool]>) -> Result<Var> {
    let d = tape.value(y).cols();
    if tape.value(z).cols() != d {
        return Err(Error::Dimension(format!(
            "MAB query width {} but key width {}",
            d,
            tape.value(z).cols()
        )));
    }
    let mut heads = Vec::with_capacity(w.query.len());
    for h in 0..w.query.len() {
        let q = tape.matmul(y, w.query[h])?;
        let k = tape.matmul(z, w.key[h])?;
        let v = tape.matmul(z, w.value[h])?;
        let logits = tape.matmul_nt(q, k)?;
        let att = tape.softmax_rows_scaled(logits, d, key_mask)?;
        heads.push(tape.matmul(att, v)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let mha = tape.matmul(cat, w.output)?;
    let res = tape.add(y, mha)?;
    tape.layer_norm(res, w.ln_gain, w.ln_bias)
}

/// Tape-free [`mab`] for inference and tests.
pub fn mab_forward(y: &Tensor, z: &Tensor, w: &MabWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape);
    let vy = tape.constant(y.clone());
    let vz = tape.constant(z.clone());
    let out = mab(&mut tape, vy, vz, &vars, None)?;
    Ok(tape.value(out).clone())
}

/// `MAB(X, MAB(I, X))` with the two blocks' parameters.
pub fn isab(
    tape: &mut Tape,
    x: Var,
    inducing: Var,
    inner: &MabVars,
    outer: &MabVars,
    valid: Option<&[bool]>,
) -> Result<Var> {
    let h = mab(tape, inducing, x, inner, valid)?;
    mab(tape, x, h, outer, None)
}

#[derive(Clone, Debug)]
struct MabSlots {
    query: Vec<usize>,
    key: Vec<usize>,
    value: Vec<usize>,
    output: usize,
    ln_gain: usize,
    ln_bias: usize,
}

#[derive(Clone, Debug)]
struct LayerSlots {
    inducing: usize,
    inner: MabSlots,
    outer: MabSlots,
    ff_in: usize,
    ff_out: usize,
    ff_ln_gain: usize,
    ff_ln_bias: usize,
}

#[derive(Clone, Debug)]
struct Slots {
    in_weight: usize,
    in_bias: usize,
    layers: Vec<LayerSlots>,
    out_weight: usize,
    out_bias: usize,
}

enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)` with fan-in = rows.
    FanIn,
    /// Standard normal × 0.02.
    SmallNormal,
    Const(f64),
}

struct Registry<'a> {
    params: Vec<Param>,
    rng: &'a mut ChaCha8Rng,
}

impl Registry<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let data: Vec<f64> = match init {
            Init::FanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::SmallNormal => (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(self.rng);
                    0.02 * z
                })
                .collect(),
            Init::Const(c) => vec![c; rows * cols],
        };
        self.params.push(Param {
            name,
            value: Arc::new(Tensor::matrix(rows, cols, data).expect("sized")),
        });
        self.params.len() - 1
    }

    fn mab(&mut self, prefix: &str, cfg: &EncoderConfig) -> MabSlots {
        let (d, dh) = (cfg.hidden, cfg.head_dim());
        let mut proj = |kind: &str| -> Vec<usize> {
            (0..cfg.heads)
                .map(|h| self.add(format!("{prefix}.w_{kind}.{h}"), d, dh, Init::FanIn))
                .collect()
        };
        let query = proj("q");
        let key = proj("k");
        let value = proj("v");
        MabSlots {
            query,
            key,
            value,
            output: self.add(format!("{prefix}.w_o"), d, d, Init::FanIn),
            ln_gain: self.add(format!("{prefix}.ln.gain"), 1, d, Init::Const(1.0)),
            ln_bias: self.add(format!("{prefix}.ln.bias"), 1, d, Init::Const(0.0)),
        }
    }
}

fn build_slots(cfg: &EncoderConfig, d_in: usize, seed: u64) -> (Slots, Vec<Param>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = Registry {
        params: Vec::new(),
        rng: &mut rng,
    };
    let d = cfg.hidden;
    let in_weight = reg.add("input.weight".into(), d_in, d, Init::FanIn);
    let in_bias = reg.add("input.bias".into(), 1, d, Init::Const(0.0));
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let inducing = reg.add(format!("layer{l}.inducing"), cfg.inducing_points, d, Init::SmallNormal);
        let inner = reg.mab(&format!("layer{l}.mab_inducing"), cfg);
        let outer = reg.mab(&format!("layer{l}.mab_set"), cfg);
        let ff_in = reg.add(format!("layer{l}.ffb.w1"), d, cfg.ff_hidden, Init::FanIn);
        let ff_out = reg.add(format!("layer{l}.ffb.w2"), cfg.ff_hidden, d, Init::FanIn);
        let ff_ln_gain = reg.add(format!("layer{l}.ffb.ln.gain"), 1, d, Init::Const(1.0));
        let ff_ln_bias = reg.add(format!("layer{l}.ffb.ln.bias"), 1, d, Init::Const(0.0));
        layers.push(LayerSlots {
            inducing,
            inner,
            outer,
            ff_in,
            ff_out,
            ff_ln_gain,
            ff_ln_bias,
        });
    }
    let out_weight = reg.add("head.weight".into(), d, 1, Init::FanIn);
    let out_bias = reg.add("head.bias".into(), 1, 1, Init::Const(0.0));
    let slots = Slots {
        in_weight,
        in_bias,
        layers,
        out_weight,
        out_bias,
    };
    (slots, reg.params)
}

/// Trainable set-transformer encoder with its scoring head.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    config: EncoderConfig,
    layout: FeatureLayout,
    d_in: usize,
    seed: u64,
    slots: Slots,
    params: Vec<Param>,
}

impl EncoderModel {
    /// Freshly initialised model for inputs of the given feature layout.
    pub fn new(config: EncoderConfig, layout: FeatureLayout, seed: u64) -> Result<Self> {
        Self::with_input_width(config, layout, layout.width(), seed)
    }

    /// Model with an explicit input width (for synthetic tests).
    pub fn with_input_width(config: EncoderConfig, layout: FeatureLayout, d_in: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_in == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        let (slots, params) = build_slots(&config, d_in, seed);
        Ok(EncoderModel {
            config,
            layout,
            d_in,
            seed,
            slots,
            params,
        })
    }

    /// Rebuilds a model around loaded parameters, checking every shape.
    pub(crate) fn from_params(
        config: EncoderConfig,
        layout: FeatureLayout,
        d_in: usize,
        seed: u64,
        params: Vec<Param>,
    ) -> Result<Self> {
        let mut model = Self::with_input_width(config, layout, d_in, seed)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (expected, got) in model.params.iter().zip(&params) {
            if expected.name != got.name || expected.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.value.shape(),
                    expected.name,
                    expected.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Looks up a parameter by name.
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    fn mab_vars(&self, s: &MabSlots, bound: &[Var]) -> MabVars {
        MabVars {
            query: s.query.iter().map(|&i| bound[i]).collect(),
            key: s.key.iter().map(|&i| bound[i]).collect(),
            value: s.value.iter().map(|&i| bound[i]).collect(),
            output: bound[s.output],
            ln_gain: bound[s.ln_gain],
            ln_bias: bound[s.ln_bias],
        }
    }

    /// Records the forward pass and returns the `N×1` pre-sigmoid logits.
    ///
    /// `bound` holds one tape variable per entry of [`params`](Self::params),
    /// in order. `valid` marks real (non-padding) rows of `x`.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var, valid: Option<&[bool]>) -> Result<Var> {
        if bound.len() != self.params.len() {
            return Err(Error::Contract("bound parameter list does not match model".into()));
        }
        let xv = tape.value(x);
        if xv.cols() != self.d_in {
            return Err(Error::Schema(format!(
                "input has {} features, model expects {}",
                xv.cols(),
                self.d_in
            )));
        }
        if xv.rows() == 0 {
            return Err(Error::Contract("encode needs at least one track".into()));
        }
        if let Some(v) = valid {
            if v.len() != xv.rows() {
                return Err(Error::Dimension("padding mask length differs from rows".into()));
            }
        }
        let s = &self.slots;
        let proj = tape.matmul(x, bound[s.in_weight])?;
        let mut h = tape.add_row(proj, bound[s.in_bias])?;
        for layer in &s.layers {
            let inner = self.mab_vars(&layer.inner, bound);
            let outer = self.mab_vars(&layer.outer, bound);
            let m = isab(tape, h, bound[layer.inducing], &inner, &outer, valid)?;
            let up = tape.matmul(m, bound[layer.ff_in])?;
            let act = tape.relu(up)?;
            let down = tape.matmul(act, bound[layer.ff_out])?;
            let res = tape.add(m, down)?;
            h = tape.layer_norm(res, bound[layer.ff_ln_gain], bound[layer.ff_ln_bias])?;
        }
        let logits = tape.matmul(h, bound[s.out_weight])?;
        tape.add_row(logits, bound[s.out_bias])
    }

    /// Records all parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Pre-sigmoid scores for every row of `x`.
    pub fn logits(&self, x: &Tensor, valid: Option<&[bool]>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let vx = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, vx, valid)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Relevance scores `r ∈ [0,1]^N`.
    pub fn encode(&self, x: &Tensor) -> Result<RelevanceScores> {
        Ok(RelevanceScores(
            self.logits(x, None)?
                .into_iter()
                .map(crate::numerics::sigmoid)
                .collect(),
        ))
    }

    /// Scores a padded batch; entries for padded rows are meaningless.
    pub fn encode_padded(&self, x: &Tensor, valid: &[bool]) -> Result<RelevanceScores> {
        Ok(RelevanceScores(
            self.logits(x, Some(valid))?
                .into_iter()
                .map(crate::numerics::sigmoid)
                .collect(),
        ))
    }

    /// Operation counters for one forward pass over `x`.
    pub fn forward_stats(&self, x: &Tensor) -> Result<crate::numerics::OpStats> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let vx = tape.constant(x.clone());
        self.forward(&mut tape, &bound, vx, None)?;
        Ok(tape.stats())
    }

    /// Zeros the scoring head weight and bias.
    pub fn zero_head(&mut self) {
        for idx in [self.slots.out_weight, self.slots.out_bias] {
            let p = &mut self.params[idx];
            let shape = p.value.shape().to_vec();
            p.value = Arc::new(Tensor::new(shape.clone(), vec![0.0; shape.iter().product()]).expect("sized"));
        }
    }
}
