//! Session data model and the JSONL dataset format.
//!
//! One session per line:
//!
//! ```text
//! {"session_id": "...",
//!  "user": {"id", "embedding", "country", "genre_affinity"},
//!  "tracks": [{"id", "contextual", "acoustic", "length_s", "popularity", "genres"}],
//!  "objectives": [[boost, exposure, discovery], ...],
//!  "sat": [0 | 1, ...]}
//! ```
//!
//! The objective column order (Boost, Exposure, Discovery) is fixed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTEXTUAL_DIM: usize = 40;
pub const ACOUSTIC_DIM: usize = 16;
/// Number of non-user objectives (columns of the objective matrix).
pub const NUM_OBJECTIVES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    pub contextual: Vec<f64>,
    pub acoustic: Vec<f64>,
    pub length_s: f64,
    pub popularity: f64,
    #[serde(default)]
    pub genres: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub genre_affinity: BTreeMap<String, f64>,
}

impl Track {
    pub fn validate(&self) -> Result<()> {
        if self.contextual.len() != CONTEXTUAL_DIM {
            return Err(Error::Schema(format!(
                "track {}: contextual has {} dims, expected {}",
                self.id,
                self.contextual.len(),
                CONTEXTUAL_DIM
            )));
        }
        if self.acoustic.len() != ACOUSTIC_DIM {
            return Err(Error::Schema(format!(
                "track {}: acoustic has {} dims, expected {}",
                self.id,
                self.acoustic.len(),
                ACOUSTIC_DIM
            )));
        }
        if !(0.0..=1.0).contains(&self.popularity) {
            return Err(Error::Schema(format!(
                "track {}: popularity {} outside [0,1]",
                self.id, self.popularity
            )));
        }
        if !(self.length_s >= 0.0) {
            return Err(Error::Schema(format!("track {}: negative length", self.id)));
        }
        Ok(())
    }
}

impl User {
    pub fn validate(&self) -> Result<()> {
        if self.embedding.len() != CONTEXTUAL_DIM {
            return Err(Error::Schema(format!(
                "user {}: embedding has {} dims, expected {}",
                self.id,
                self.embedding.len(),
                CONTEXTUAL_DIM
            )));
        }
        if let Some((g, a)) = self.genre_affinity.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Schema(format!(
                "user {}: affinity {} for {} outside [0,1]",
                self.id, a, g
            )));
        }
        Ok(())
    }
}

/// A non-user objective; the discriminant is its column in the objective matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Boost = 0,
    Exposure = 1,
    Discovery = 2,
}

impl Objective {
    pub const ALL: [Objective; NUM_OBJECTIVES] = [Objective::Boost, Objective::Exposure, Objective::Discovery];

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Boost => "boost",
            Objective::Exposure => "exposure",
            Objective::Discovery => "discovery",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "boost" => Ok(Objective::Boost),
            "exposure" => Ok(Objective::Exposure),
            "discovery" => Ok(Objective::Discovery),
            other => Err(Error::Config(format!("unknown objective '{}'", other))),
        }
    }
}

/// Subset of objectives that the decoder rewards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ObjectiveSet([bool; NUM_OBJECTIVES]);

impl ObjectiveSet {
    pub fn all() -> Self {
        ObjectiveSet([true; NUM_OBJECTIVES])
    }

    pub fn none() -> Self {
        ObjectiveSet([false; NUM_OBJECTIVES])
    }

    pub fn contains(&self, o: Objective) -> bool {
        self.0[o.column()]
    }

    pub fn insert(&mut self, o: Objective) {
        self.0[o.column()] = true;
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = Objective> + '_ {
        Objective::ALL.into_iter().filter(|o| self.contains(*o))
    }

    /// Parses a comma-separated list such as `boost,exposure`; `none` or an
    /// empty string gives the empty set and `all` every objective.
    pub fn parse_list(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Self::none());
        }
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        let mut set = Self::none();
        for part in s.split(',') {
            set.insert(part.parse()?);
        }
        Ok(set)
    }
}

impl FromIterator<Objective> for ObjectiveSet {
    fn from_iter<I: IntoIterator<Item = Objective>>(iter: I) -> Self {
        let mut set = ObjectiveSet::none();
        for o in iter {
            set.insert(o);
        }
        set
    }
}

impl Serialize for ObjectiveSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ObjectiveSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<Objective> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

/// `N×3` binary matrix of objective decorations.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveMatrix(Vec<[u8; NUM_OBJECTIVES]>);

impl ObjectiveMatrix {
    pub fn new(rows: Vec<[u8; NUM_OBJECTIVES]>) -> Result<Self> {
        if rows.iter().flatten().any(|&v| v > 1) {
            return Err(Error::Schema("objective matrix entries must be 0 or 1".into()));
        }
        Ok(ObjectiveMatrix(rows))
    }

    pub fn zeros(n: usize) -> Self {
        ObjectiveMatrix(vec![[0; NUM_OBJECTIVES]; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn row(&self, i: usize) -> [u8; NUM_OBJECTIVES] {
        self.0[i]
    }

    pub fn get(&self, i: usize, o: Objective) -> bool {
        self.0[i][o.column()] == 1
    }

    pub fn rows(&self) -> &[[u8; NUM_OBJECTIVES]] {
        &self.0
    }

    /// Binary gains for one objective column.
    pub fn column(&self, o: Objective) -> Vec<f64> {
        self.0.iter().map(|r| r[o.column()] as f64).collect()
    }

    pub fn column_count(&self, o: Objective) -> usize {
        self.0.iter().filter(|r| r[o.column()] == 1).count()
    }

    pub fn truncated(&self, n: usize) -> Self {
        ObjectiveMatrix(self.0[..n.min(self.0.len())].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user: User,
    pub tracks: Vec<Track>,
    pub objectives: ObjectiveMatrix,
    pub sat: Vec<u8>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn sat_gains(&self) -> Vec<f64> {
        self.sat.iter().map(|&s| s as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tracks.len();
        if n == 0 {
            return Err(Error::Schema(format!("session {} has no tracks", self.session_id)));
        }
        if self.objectives.len() != n || self.sat.len() != n {
            return Err(Error::Schema(format!(
                "session {}: {} tracks but {} objective rows and {} sat labels",
                self.session_id,
                n,
                self.objectives.len(),
                self.sat.len()
            )));
        }
        if self.sat.iter().any(|&s| s > 1) {
            return Err(Error::Schema(format!(
                "session {}: sat labels must be binary",
                self.session_id
            )));
        }
        if self.objectives.rows().iter().flatten().any(|&v| v > 1) {
            return Err(Error::Schema(format!(
                "session {}: objective entries must be binary",
                self.session_id
            )));
        }
        self.user.validate()?;
        self.tracks.iter().try_for_each(Track::validate)
    }

    /// Keeps the first `max_len` tracks.
    pub fn truncated(&self, max_len: usize) -> Session {
        if self.len() <= max_len {
            return self.clone();
        }
        Session {
            session_id: self.session_id.clone(),
            user: self.user.clone(),
            tracks: self.tracks[..max_len].to_vec(),
            objectives: self.objectives.truncated(max_len),
            sat: self.sat[..max_len].to_vec(),
        }
    }
}

/// Reads a JSONL dataset, validating every session.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Session =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("line {}: {}", lineno + 1, e)))?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_jsonl(path: &std::path::Path) -> Result<Vec<Session>> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}
