//! Synthetic cyclic and dominant+cycle preference data.
//!
//! Candidates carry four integer annotations in `[1, 10]`. A cyclic instance
//! has candidates `A, B, C` with `A > B` on dimension 0, `B > C` on dimension
//! 1 and `C > A` on dimension 2, giving the pairs `A > B`, `B > C`, `C > A`.
//! A dominant+cycle instance adds `D`, strictly above `A, B, C` on all three
//! deciding dimensions, and the pairs `D > A`, `D > B`, `D > C`. Dimension 3
//! is drawn but never decides a pair.
//!
//! Annotations are drawn uniformly and the whole instance is redrawn until
//! the required pattern holds.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PrefError, Result};
use crate::models::PairDataset;
use crate::rng::{substream, Rng};

pub const DIMENSIONS: usize = 4;
pub const SCORE_MIN: u8 = 1;
pub const SCORE_MAX: u8 = 10;
/// Redraws allowed per instance before giving up.
pub const MAX_REJECTIONS: usize = 1_000_000;

const CYCLE_IDS: [&str; 3] = ["A", "B", "C"];
const DOMINANT_ID: &str = "D";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Cyclic,
    DominantCycle,
}

impl std::str::FromStr for SynthMode {
    type Err = PrefError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Self::Cyclic),
            "dominant_cycle" | "dominant-cycle" => Ok(Self::DominantCycle),
            _ => Err(PrefError::domain(format!("unknown mode {s:?} (cyclic, dominant_cycle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CandidateJson")]
pub struct AnnotatedCandidate {
    pub id: String,
    scores: [u8; DIMENSIONS],
}

#[derive(Deserialize)]
struct CandidateJson {
    id: String,
    scores: Vec<u8>,
}

impl TryFrom<CandidateJson> for AnnotatedCandidate {
    type Error = PrefError;
    fn try_from(c: CandidateJson) -> Result<Self> {
        AnnotatedCandidate::new(c.id, &c.scores)
    }
}

impl AnnotatedCandidate {
    pub fn new(id: impl Into<String>, scores: &[u8]) -> Result<Self> {
        let scores: [u8; DIMENSIONS] = scores
            .try_into()
            .map_err(|_| PrefError::Shape { expected: DIMENSIONS, found: scores.len() })?;
        if scores.iter().any(|s| !(SCORE_MIN..=SCORE_MAX).contains(s)) {
            return Err(PrefError::domain(format!("annotations must lie in [{SCORE_MIN}, {SCORE_MAX}], got {scores:?}")));
        }
        Ok(Self { id: id.into(), scores })
    }

    pub fn scores(&self) -> &[u8; DIMENSIONS] {
        &self.scores
    }

    fn random(id: &str, rng: &mut Rng) -> Self {
        let mut scores = [0; DIMENSIONS];
        scores.iter_mut().for_each(|s| *s = rng.gen_range(SCORE_MIN..=SCORE_MAX));
        Self { id: id.into(), scores }
    }
}

/// A preference decided by one annotation dimension (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub winner: String,
    pub loser: String,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub prompt_id: String,
    pub candidates: Vec<AnnotatedCandidate>,
    pub pairs: Vec<SyntheticPair>,
}

impl SyntheticInstance {
    /// Builds the pair list implied by the candidate count and checks it.
    pub fn new(prompt_id: impl Into<String>, candidates: Vec<AnnotatedCandidate>) -> Result<Self> {
        let mut pairs: Vec<SyntheticPair> = (0..3)
            .map(|k| SyntheticPair {
                winner: CYCLE_IDS[k].into(),
                loser: CYCLE_IDS[(k + 1) % 3].into(),
                dimension: k,
            })
            .collect();
        if candidates.len() == 4 {
            pairs.extend((0..3).map(|k| SyntheticPair {
                winner: DOMINANT_ID.into(),
                loser: CYCLE_IDS[k].into(),
                dimension: k,
            }));
        }
        let inst = Self { prompt_id: prompt_id.into(), candidates, pairs };
        inst.validate()?;
        Ok(inst)
    }

    pub fn mode(&self) -> SynthMode {
        if self.candidates.len() == 4 {
            SynthMode::DominantCycle
        } else {
            SynthMode::Cyclic
        }
    }

    fn candidate(&self, id: &str) -> Result<&AnnotatedCandidate> {
        self.candidates
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| PrefError::Data(format!("{}: no candidate {id:?}", self.prompt_id)))
    }

    /// Checks the structural invariants and every strict inequality.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PrefError::Data(format!("{}: {msg}", self.prompt_id)));
        let expected: &[&str] = match self.candidates.len() {
            3 => &CYCLE_IDS,
            4 => &["A", "B", "C", "D"],
            k => return bad(format!("expected 3 or 4 candidates, got {k}")),
        };
        let ids: Vec<&str> = self.candidates.iter().map(|c| c.id.as_str()).collect();
        if ids != expected {
            return bad(format!("candidate ids {ids:?}, expected {expected:?}"));
        }
        let n_pairs = if self.candidates.len() == 3 { 3 } else { 6 };
        if self.pairs.len() != n_pairs {
            return bad(format!("expected {n_pairs} pairs, got {}", self.pairs.len()));
        }
        for (k, p) in self.pairs.iter().enumerate() {
            let (w, l) = if k < 3 {
                (CYCLE_IDS[k], CYCLE_IDS[(k + 1) % 3])
            } else {
                (DOMINANT_ID, CYCLE_IDS[k - 3])
            };
            if p.winner != w || p.loser != l || p.dimension != k % 3 {
                return bad(format!("pair {k} is {p:?}"));
            }
            let (sw, sl) = (self.candidate(w)?.scores[p.dimension], self.candidate(l)?.scores[p.dimension]);
            if sw <= sl {
                return bad(format!("{w} > {l} needs a strict gap on dimension {}, got {sw} vs {sl}", p.dimension));
            }
        }
        if self.mode() == SynthMode::DominantCycle {
            let d = self.candidate(DOMINANT_ID)?;
            for c in &self.candidates[..3] {
                if (0..3).any(|k| d.scores[k] <= c.scores[k]) {
                    return bad(format!("D does not dominate {} on every deciding dimension", c.id));
                }
            }
        }
        Ok(())
    }
}

fn generate(seed: u64, count: usize, mode: SynthMode) -> Result<Vec<SyntheticInstance>> {
    if count == 0 {
        return Err(PrefError::domain("count must be at least 1"));
    }
    let mut rng = substream(seed, "synthdata");
    let mut out = Vec::with_capacity(count);
    for p in 0..count {
        let prompt = format!("p{p}");
        let mut rejections = 0;
        loop {
            let mut cands: Vec<AnnotatedCandidate> = CYCLE_IDS.iter().map(|id| AnnotatedCandidate::random(id, &mut rng)).collect();
            if mode == SynthMode::DominantCycle {
                cands.push(AnnotatedCandidate::random(DOMINANT_ID, &mut rng));
            }
            match SyntheticInstance::new(prompt.clone(), cands) {
                Ok(inst) => {
                    out.push(inst);
                    break;
                }
                Err(_) => {
                    rejections += 1;
                    if rejections >= MAX_REJECTIONS {
                        return Err(PrefError::Generation(format!("{prompt}: {rejections} rejections")));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `count` rock-paper-scissors instances.
pub fn gen_cyclic(seed: u64, count: usize) -> Result<Vec<SyntheticInstance>> {
    generate(seed, count, SynthMode::Cyclic)
}

/// `count` instances of a 3-cycle plus a dominant candidate.
pub fn gen_dominant_cycle(seed: u64, count: usize) -> Result<Vec<SyntheticInstance>> {
    generate(seed, count, SynthMode::DominantCycle)
}

pub fn generate_mode(mode: SynthMode, seed: u64, count: usize) -> Result<Vec<SyntheticInstance>> {
    generate(seed, count, mode)
}

/// Tabular pair data: one record per pair, winner first. Items are
/// namespaced by prompt (`p3/A`) and each prompt is its own context.
pub fn to_pair_dataset(instances: &[SyntheticInstance]) -> Result<PairDataset> {
    let mut data = PairDataset::default();
    for inst in instances {
        inst.validate()?;
        for p in &inst.pairs {
            let w = format!("{}/{}", inst.prompt_id, p.winner);
            let l = format!("{}/{}", inst.prompt_id, p.loser);
            data.push_ids(Some(&inst.prompt_id), &w, &l)?;
        }
    }
    Ok(data)
}

/// One instance per line, annotations included.
pub fn instances_to_jsonl(instances: &[SyntheticInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instances serialise"));
        out.push('\n');
    }
    out
}

pub fn instances_from_jsonl(text: &str) -> Result<Vec<SyntheticInstance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let inst: SyntheticInstance =
                serde_json::from_str(l).map_err(|e| PrefError::Data(format!("line {}: {e}", k + 1)))?;
            inst.validate()?;
            Ok(inst)
        })
        .collect()
}

/// Sidecar written next to generated JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub instances: usize,
    pub mode: SynthMode,
    pub seed: u64,
}
