//! Synthetic listening sessions with objective decorations and SAT outcomes.
//!
//! Tracks belong to taste clusters; a user's embedding is the average of a
//! few tracks from their home cluster, and each session mixes home-cluster
//! tracks with tracks drawn from the whole catalogue. SAT is drawn from
//!
//! ```text
//! logit = intercept + β₁·cos(u, t) + leak·acoustic[0..2] − β₂·Discovery + σ·z
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_jsonl, ObjectiveMatrix, Session, Track, User, ACOUSTIC_DIM, CONTEXTUAL_DIM};
use crate::error::{Error, Result};
use crate::featurizer::{cosine, user_from_history};
use crate::numerics::sigmoid;

/// Upper bound on tracks per session.
pub const MAX_SESSION_TRACKS: usize = 100;

const COUNTRIES: [&str; 6] = ["SE", "US", "GB", "DE", "BR", "JP"];

/// Per-session Exposure rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureRate {
    /// Each session draws its own rate from U(0, 1).
    UniformPerSession,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_users: usize,
    pub sessions_per_user: usize,
    /// Inclusive range of tracks per session.
    pub tracks_per_session: [usize; 2],
    pub catalog_size: usize,
    pub taste_clusters: usize,
    /// Within-cluster spread of contextual vectors around the cluster centre.
    pub cluster_spread: f64,
    /// Home-cluster tracks averaged into each user embedding.
    pub history_tracks: usize,
    pub boost_rate: f64,
    pub exposure_rate: ExposureRate,
    pub discovery_rate: f64,
    pub sat_intercept: f64,
    /// Weight of user–track cosine similarity (β₁).
    pub beta_cosine: f64,
    /// Penalty on Discovery tracks (β₂).
    pub beta_discovery: f64,
    /// Weights of the first acoustic features in the SAT logit.
    pub acoustic_leak: [f64; 2],
    pub noise_sigma: f64,
    /// Decimal places kept for generated floats.
    pub precision: u32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 100,
            sessions_per_user: 10,
            tracks_per_session: [10, 30],
            catalog_size: 4000,
            taste_clusters: 20,
            cluster_spread: 1.0,
            history_tracks: 10,
            boost_rate: 0.05,
            exposure_rate: ExposureRate::UniformPerSession,
            discovery_rate: 0.15,
            sat_intercept: -1.0,
            beta_cosine: 3.0,
            beta_discovery: 2.0,
            acoustic_leak: [0.8, -0.6],
            noise_sigma: 0.5,
            precision: 6,
            seed: 20220701,
        }
    }
}

impl GenConfig {
    /// The frozen reference dataset: 1000 users × 10 sessions.
    pub fn reference() -> Self {
        GenConfig {
            n_users: 1000,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [lo, hi] = self.tracks_per_session;
        if lo < 1 || lo > hi || hi > MAX_SESSION_TRACKS {
            return bad(format!(
                "tracks_per_session must satisfy 1 <= min <= max <= {MAX_SESSION_TRACKS}"
            ));
        }
        if self.n_users == 0 || self.sessions_per_user == 0 {
            return bad("need at least one user and one session per user".into());
        }
        if self.taste_clusters == 0 || self.catalog_size / self.taste_clusters < hi.max(self.history_tracks) {
            return bad(format!(
                "each of the {} clusters needs at least {} tracks; catalog has {}",
                self.taste_clusters,
                hi.max(self.history_tracks),
                self.catalog_size
            ));
        }
        if self.history_tracks == 0 {
            return bad("history_tracks must be positive".into());
        }
        for (name, r) in [("boost_rate", self.boost_rate), ("discovery_rate", self.discovery_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if let ExposureRate::Fixed(r) = self.exposure_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("exposure_rate must lie in [0, 1]".into());
            }
        }
        if !(self.beta_cosine >= 0.0) || !(self.beta_discovery >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("beta_cosine, beta_discovery and noise_sigma must be non-negative".into());
        }
        if !(self.cluster_spread >= 0.0)
            || !self.sat_intercept.is_finite()
            || self.acoustic_leak.iter().any(|v| !v.is_finite())
        {
            return bad("generator coefficients must be finite".into());
        }
        if self.precision > 15 {
            return bad("precision must be at most 15 decimals".into());
        }
        Ok(())
    }
}

/// Echo of the generating parameters plus a checksum of the JSONL output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub users: usize,
    pub sessions: usize,
    pub tracks: usize,
    pub sat_rate: f64,
    pub objective_rates: [f64; 3],
    pub sha256: String,
}

pub struct Dataset {
    pub sessions: Vec<Session>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &self.sessions)?;
        Ok(buf)
    }
}

struct Rounder(f64);

impl Rounder {
    fn r(&self, v: f64) -> f64 {
        (v * self.0).round() / self.0
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn genre(c: usize) -> String {
    format!("g{:02}", c)
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let round = Rounder(10f64.powi(cfg.precision as i32));

    let centres: Vec<Vec<f64>> = (0..cfg.taste_clusters)
        .map(|_| unit_gaussian(&mut rng, CONTEXTUAL_DIM))
        .collect();
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); cfg.taste_clusters];
    let mut catalog = Vec::with_capacity(cfg.catalog_size);
    for i in 0..cfg.catalog_size {
        let c = i % cfg.taste_clusters;
        let noise = unit_gaussian(&mut rng, CONTEXTUAL_DIM);
        let raw: Vec<f64> = centres[c]
            .iter()
            .zip(&noise)
            .map(|(a, b)| a + cfg.cluster_spread * b)
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let mut genres = vec![genre(c)];
        if rng.random_bool(0.2) {
            let other = rng.random_range(0..cfg.taste_clusters);
            if other != c {
                genres.push(genre(other));
            }
        }
        catalog.push(Track {
            id: format!("t{:05}", i),
            contextual: raw.iter().map(|x| round.r(x / norm)).collect(),
            acoustic: (0..ACOUSTIC_DIM).map(|_| round.r(normal(&mut rng))).collect(),
            length_s: round.r(rng.random_range(90.0..420.0)),
            popularity: round.r(rng.random::<f64>()),
            genres,
        });
        by_cluster[c].push(i);
    }

    let [lo, hi] = cfg.tracks_per_session;
    let mut sessions = Vec::with_capacity(cfg.n_users * cfg.sessions_per_user);
    for u in 0..cfg.n_users {
        let home = rng.random_range(0..cfg.taste_clusters);
        let played: Vec<Track> = by_cluster[home]
            .choose_multiple(&mut rng, cfg.history_tracks)
            .map(|&i| catalog[i].clone())
            .collect();
        let weights: Vec<f64> = (0..played.len()).map(|_| rng.random_range(0.5..1.5)).collect();
        let embedding = user_from_history(&played, &weights)?;
        let mut genre_affinity = BTreeMap::new();
        genre_affinity.insert(genre(home), round.r(rng.random_range(0.7..1.0)));
        for _ in 0..2 {
            let g = rng.random_range(0..cfg.taste_clusters);
            genre_affinity
                .entry(genre(g))
                .or_insert_with(|| round.r(rng.random_range(0.0..0.6)));
        }
        let user = User {
            id: format!("u{:05}", u),
            embedding: embedding.into_iter().map(|x| round.r(x)).collect(),
            country: COUNTRIES[rng.random_range(0..COUNTRIES.len())].to_string(),
            genre_affinity,
        };

        for k in 0..cfg.sessions_per_user {
            let len = rng.random_range(lo..=hi);
            let n_home = len.div_ceil(2);
            let mut chosen: BTreeSet<usize> = by_cluster[home].choose_multiple(&mut rng, n_home).copied().collect();
            while chosen.len() < len {
                chosen.insert(rng.random_range(0..cfg.catalog_size));
            }
            let mut picks: Vec<usize> = chosen.into_iter().collect();
            picks.shuffle(&mut rng);

            let exposure_p = match cfg.exposure_rate {
                ExposureRate::UniformPerSession => rng.random::<f64>(),
                ExposureRate::Fixed(p) => p,
            };
            let mut rows = Vec::with_capacity(len);
            let mut sat = Vec::with_capacity(len);
            let tracks: Vec<Track> = picks.iter().map(|&i| catalog[i].clone()).collect();
            for t in &tracks {
                let row = [
                    rng.random_bool(cfg.boost_rate) as u8,
                    rng.random_bool(exposure_p) as u8,
                    rng.random_bool(cfg.discovery_rate) as u8,
                ];
                let logit = cfg.sat_intercept
                    + cfg.beta_cosine * cosine(&user.embedding, &t.contextual)
                    + cfg.acoustic_leak[0] * t.acoustic[0]
                    + cfg.acoustic_leak[1] * t.acoustic[1]
                    - cfg.beta_discovery * row[2] as f64
                    + cfg.noise_sigma * normal(&mut rng);
                sat.push(rng.random_bool(sigmoid(logit)) as u8);
                rows.push(row);
            }
            sessions.push(Session {
                session_id: format!("u{:05}-s{:03}", u, k),
                user: user.clone(),
                tracks,
                objectives: ObjectiveMatrix::new(rows)?,
                sat,
            });
        }
    }

    let total: usize = sessions.iter().map(Session::len).sum();
    let sat_rate = sessions.iter().flat_map(|s| &s.sat).map(|&v| v as f64).sum::<f64>() / total as f64;
    let mut objective_rates = [0.0; 3];
    for s in &sessions {
        for row in s.objectives.rows() {
            for (acc, &v) in objective_rates.iter_mut().zip(row) {
                *acc += v as f64;
            }
        }
    }
    let mut ds = Dataset {
        manifest: Manifest {
            config: cfg.clone(),
            users: cfg.n_users,
            sessions: sessions.len(),
            tracks: total,
            sat_rate,
            objective_rates: objective_rates.map(|v| v / total as f64),
            sha256: String::new(),
        },
        sessions,
    };
    ds.manifest.sha256 = hex_sha256(&ds.to_jsonl()?);
    Ok(ds)
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Splits sessions by user into `ratios.len()` parts.
///
/// Users are shuffled with `seed` and allocated by largest remainder, so
/// 10 users at `[0.8, 0.1, 0.1]` give 8, 1 and 1 users.
pub fn split(sessions: &[Session], ratios: &[f64], seed: u64) -> Result<Vec<Vec<Session>>> {
    if sessions.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    if ratios.is_empty() || ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
    }
    let mut users: Vec<&str> = sessions
        .iter()
        .map(|s| s.user.id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = users.len() as f64;
    let mut counts: Vec<usize> = ratios.iter().map(|r| (r * n).floor() as usize).collect();
    let mut rest: Vec<usize> = (0..ratios.len()).collect();
    rest.sort_by(|&a, &b| {
        let fa = ratios[a] * n - counts[a] as f64;
        let fb = ratios[b] * n - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = users.len() - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    let mut part_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut it = users.into_iter();
    for (p, &c) in counts.iter().enumerate() {
        for u in it.by_ref().take(c) {
            part_of.insert(u, p);
        }
    }
    let mut parts = vec![Vec::new(); ratios.len()];
    for s in sessions {
        parts[part_of[s.user.id.as_str()]].push(s.clone());
    }
    Ok(parts)
}
