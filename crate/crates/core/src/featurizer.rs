//! Per-track input embeddings built from user and track features.
//!
//! Row layout (101 columns):
//!
//! | block | width |
//! |---|---|
//! | user embedding | 40 |
//! | track contextual vector | 40 |
//! | acoustic features | 16 |
//! | statistics: `min(length_s, 600) / 600`, popularity | 2 |
//! | user–track cosine similarity | 1 |
//! | user–track Euclidean distance | 1 |
//! | affinity of the best overlapping genre | 1 |
//!
//! [`FeatureLayout::WithObjectives`] appends the three objective columns
//! (Boost, Exposure, Discovery), for models that take the objectives as input.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Session, Track, User, ACOUSTIC_DIM, CONTEXTUAL_DIM, NUM_OBJECTIVES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Length (seconds) at which the length statistic saturates.
pub const LENGTH_CAP_S: f64 = 600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    Standard,
    WithObjectives,
}

impl FeatureLayout {
    pub fn width(self) -> usize {
        let base = 2 * CONTEXTUAL_DIM + ACOUSTIC_DIM + 2 + 3;
        match self {
            FeatureLayout::Standard => base,
            FeatureLayout::WithObjectives => base + NUM_OBJECTIVES,
        }
    }

    pub fn descriptor(self) -> String {
        let mut d = format!(
            "user_embedding:{c};contextual:{c};acoustic:{a};stats:length_cap{cap},popularity;cosine:1;euclidean:1;genre_affinity_max:1",
            c = CONTEXTUAL_DIM,
            a = ACOUSTIC_DIM,
            cap = LENGTH_CAP_S
        );
        if self == FeatureLayout::WithObjectives {
            d.push_str(";objectives:boost,exposure,discovery");
        }
        d
    }

    /// Stable hash of [`descriptor`](Self::descriptor), stored in checkpoints.
    pub fn hash(self) -> u64 {
        let digest = Sha256::digest(self.descriptor().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn from_hash(h: u64) -> Option<Self> {
        [FeatureLayout::Standard, FeatureLayout::WithObjectives]
            .into_iter()
            .find(|l| l.hash() == h)
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Highest user affinity among the track's genres, or 0 with no overlap.
pub fn genre_affinity(user: &User, track: &Track) -> f64 {
    track
        .genres
        .iter()
        .filter_map(|g| user.genre_affinity.get(g).copied())
        .fold(None, |best: Option<f64>, a| Some(best.map_or(a, |b| b.max(a))))
        .unwrap_or(0.0)
}

/// Length and popularity statistics.
pub fn statistics(track: &Track) -> [f64; 2] {
    [track.length_s.clamp(0.0, LENGTH_CAP_S) / LENGTH_CAP_S, track.popularity]
}

fn push_row(row: &mut Vec<f64>, user: &User, track: &Track) -> Result<()> {
    user.validate()?;
    track.validate()?;
    row.extend_from_slice(&user.embedding);
    row.extend_from_slice(&track.contextual);
    row.extend_from_slice(&track.acoustic);
    row.extend_from_slice(&statistics(track));
    row.push(cosine(&user.embedding, &track.contextual));
    row.push(euclidean(&user.embedding, &track.contextual));
    row.push(genre_affinity(user, track));
    Ok(())
}

/// Builds the `N×101` input matrix for `tracks` under the standard layout.
pub fn featurize(user: &User, tracks: &[Track]) -> Result<Tensor> {
    if tracks.is_empty() {
        return Err(Error::Contract("featurize needs at least one track".into()));
    }
    let width = FeatureLayout::Standard.width();
    let mut data = Vec::with_capacity(tracks.len() * width);
    for t in tracks {
        push_row(&mut data, user, t)?;
    }
    Tensor::matrix(tracks.len(), width, data)
}

/// Builds the input matrix for a whole session under `layout`.
pub fn featurize_session(session: &Session, layout: FeatureLayout) -> Result<Tensor> {
    match layout {
        FeatureLayout::Standard => featurize(&session.user, &session.tracks),
        FeatureLayout::WithObjectives => {
            if session.objectives.len() != session.len() {
                return Err(Error::Schema("objective rows do not match tracks".into()));
            }
            let width = layout.width();
            let mut data = Vec::with_capacity(session.len() * width);
            for (i, t) in session.tracks.iter().enumerate() {
                push_row(&mut data, &session.user, t)?;
                data.extend(session.objectives.row(i).iter().map(|&v| v as f64));
            }
            Tensor::matrix(session.len(), width, data)
        }
    }
}

/// Weighted average of the contextual vectors of previously played tracks.
pub fn user_from_history(played: &[Track], weights: &[f64]) -> Result<Vec<f64>> {
    if played.is_empty() || played.len() != weights.len() {
        return Err(Error::Contract(format!(
            "need one weight per played track (got {} tracks, {} weights)",
            played.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Contract("history weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::Contract("history weights are all zero".into()));
    }
    let dim = played[0].contextual.len();
    let mut acc = vec![0.0; dim];
    for (t, w) in played.iter().zip(weights) {
        if t.contextual.len() != dim {
            return Err(Error::Schema(format!("track {} contextual width differs", t.id)));
        }
        for (a, v) in acc.iter_mut().zip(&t.contextual) {
            *a += w * v;
        }
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}
