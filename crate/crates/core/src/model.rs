//! Scoring models: the set encoder and the track-level feed-forward baseline.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Session;
use crate::encoder::{EncoderModel, Param, RelevanceScores};
use crate::error::{Error, Result};
use crate::featurizer::{featurize_session, FeatureLayout};
use crate::numerics::{sigmoid, Tape, Tensor, Var};

/// Hidden widths of the track-level baseline.
pub const DNN_DEFAULT_WIDTHS: [usize; 5] = [256, 1024, 2048, 1024, 256];

/// Track-level fully connected scorer: ReLU hidden layers, linear output.
///
/// Each track is scored independently of the rest of the set.
#[derive(Clone, Debug)]
pub struct DnnModel {
    widths: Vec<usize>,
    layout: FeatureLayout,
    d_in: usize,
    seed: u64,
    params: Vec<Param>,
}

impl DnnModel {
    pub fn new(widths: &[usize], layout: FeatureLayout, seed: u64) -> Result<Self> {
        Self::with_input_width(widths, layout, layout.width(), seed)
    }

    pub fn with_input_width(widths: &[usize], layout: FeatureLayout, d_in: usize, seed: u64) -> Result<Self> {
        if widths.contains(&0) || d_in == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut fan_in = d_in;
        let dims: Vec<usize> = widths.iter().copied().chain(std::iter::once(1)).collect();
        for (l, &out) in dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * out).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Param {
                name: format!("fc{l}.weight"),
                value: Arc::new(Tensor::matrix(fan_in, out, w)?),
            });
            params.push(Param {
                name: format!("fc{l}.bias"),
                value: Arc::new(Tensor::zeros(1, out)),
            });
            fan_in = out;
        }
        Ok(DnnModel {
            widths: widths.to_vec(),
            layout,
            d_in,
            seed,
            params,
        })
    }

    pub(crate) fn from_params(
        widths: &[usize],
        layout: FeatureLayout,
        d_in: usize,
        seed: u64,
        params: Vec<Param>,
    ) -> Result<Self> {
        let mut m = Self::with_input_width(widths, layout, d_in, seed)?;
        if params.len() != m.params.len()
            || m.params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::Checkpoint(
                "feed-forward parameter blocks do not match widths".into(),
            ));
        }
        m.params = params;
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.d_in {
            return Err(Error::Schema(format!(
                "input has {} features, model expects {}",
                tape.value(x).cols(),
                self.d_in
            )));
        }
        let mut h = x;
        let layers = bound.len() / 2;
        for l in 0..layers {
            let z = tape.matmul(h, bound[2 * l])?;
            let z = tape.add_row(z, bound[2 * l + 1])?;
            h = if l + 1 < layers { tape.relu(z)? } else { z };
        }
        Ok(h)
    }
}

/// Any model that maps a session's feature matrix to per-track scores.
#[derive(Clone, Debug)]
pub enum Model {
    SetEncoder(EncoderModel),
    Dnn(DnnModel),
}

impl From<EncoderModel> for Model {
    fn from(m: EncoderModel) -> Self {
        Model::SetEncoder(m)
    }
}

impl From<DnnModel> for Model {
    fn from(m: DnnModel) -> Self {
        Model::Dnn(m)
    }
}

impl Model {
    pub fn params(&self) -> &[Param] {
        match self {
            Model::SetEncoder(m) => m.params(),
            Model::Dnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        match self {
            Model::SetEncoder(m) => m.params_mut(),
            Model::Dnn(m) => &mut m.params,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        match self {
            Model::SetEncoder(m) => m.layout(),
            Model::Dnn(m) => m.layout,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Model::SetEncoder(m) => m.d_in(),
            Model::Dnn(m) => m.d_in,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::SetEncoder(m) => m.seed(),
            Model::Dnn(m) => m.seed,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::SetEncoder(_) => "set_encoder",
            Model::Dnn(_) => "dnn",
        }
    }

    /// Records the forward pass, returning `N×1` pre-sigmoid logits.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        match self {
            Model::SetEncoder(m) => m.forward(tape, bound, x, None),
            Model::Dnn(m) => m.forward(tape, bound, x),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params().iter().map(|p| tape.constant(p.value.clone())).collect();
        let vx = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, vx)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn score_features(&self, x: &Tensor) -> Result<RelevanceScores> {
        Ok(RelevanceScores(self.logits(x)?.into_iter().map(sigmoid).collect()))
    }

    /// Featurizes `session` with this model's layout and scores it.
    pub fn score_session(&self, session: &Session) -> Result<RelevanceScores> {
        self.score_features(&featurize_session(session, self.layout())?)
    }
}
