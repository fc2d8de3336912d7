//! In-context example selection.
//!
//! Three strategies fill the slots of a [`ShotPlan`] from a per-category
//! reference pool that never contains the query:
//!
//! * [`Strategy::Ours`] takes the candidate with the smallest Euclidean
//!   distance between encoder features of candidate and query.
//! * [`Strategy::Rices`] takes the candidate with the largest cosine
//!   similarity. Cosine ignores feature magnitude, so a candidate whose
//!   features point the same way but sit far away still wins.
//! * [`Strategy::Random`] draws uniformly, keyed by `(seed, query id)`.
//!
//! Slots are filled greedily in plan order without replacement. Ties go to
//! the ascending image id.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Label};
use crate::embedding::{cosine, euclidean, norm, EmbeddingError, EmbeddingStore};
use crate::rng::keyed_rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectError {
    #[error("slot {slot} needs a {label} example but the pool has none left")]
    InsufficientPool { slot: usize, label: Label },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("strategy {0} needs an embedding store")]
    StoreRequired(Strategy),
    #[error("invalid shot plan {0:?}")]
    InvalidPlan(String),
}

/// One ICL slot: a defective (`Pos`) or non-defective (`Neg`) example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Pos,
    Neg,
}

impl Slot {
    pub fn label(self) -> Label {
        match self {
            Slot::Pos => Label::Defective,
            Slot::Neg => Label::Good,
        }
    }
}

/// Ordered example labels, named like `1-pos` or `2-neg-pos`; `0` means no ICL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ShotPlan {
    slots: Vec<Slot>,
}

impl ShotPlan {
    pub const NAMES: [&'static str; 7] = ["0", "1-pos", "1-neg", "2-pos-pos", "2-neg-neg", "2-pos-neg", "2-neg-pos"];

    pub fn new(slots: Vec<Slot>) -> Result<Self, SelectError> {
        if slots.len() > 2 {
            return Err(SelectError::InvalidPlan(format!("{} slots", slots.len())));
        }
        Ok(Self { slots })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl FromStr for ShotPlan {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, SelectError> {
        let bad = || SelectError::InvalidPlan(s.to_string());
        let mut parts = s.trim().split('-');
        let n: usize = parts.next().and_then(|n| n.parse().ok()).ok_or_else(bad)?;
        let slots = parts
            .map(|p| match p {
                "pos" => Ok(Slot::Pos),
                "neg" => Ok(Slot::Neg),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if slots.len() != n {
            return Err(bad());
        }
        Self::new(slots).map_err(|_| bad())
    }
}

impl fmt::Display for ShotPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.slots.len())?;
        for s in &self.slots {
            f.write_str(match s {
                Slot::Pos => "-pos",
                Slot::Neg => "-neg",
            })?;
        }
        Ok(())
    }
}

impl Serialize for ShotPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ShotPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ours,
    Rices,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ours => "ours",
            Strategy::Rices => "rices",
            Strategy::Random => "random",
        })
    }
}

/// A labeled reference image with a known answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub image_id: String,
    pub label: Label,
    pub answer: Answer,
}

/// Reference candidates for one query, sorted by id, query excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePool {
    category: String,
    candidates: Vec<PoolCandidate>,
}

impl ExamplePool {
    pub fn new(
        category: impl Into<String>,
        candidates: impl IntoIterator<Item = PoolCandidate>,
        query_id: &str,
    ) -> Self {
        let mut candidates: Vec<PoolCandidate> =
            candidates.into_iter().filter(|c| c.image_id != query_id).collect();
        candidates.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        candidates.dedup_by(|a, b| a.image_id == b.image_id);
        Self {
            category: category.into(),
            candidates,
        }
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn candidates(&self) -> &[PoolCandidate] {
        &self.candidates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenExample {
    pub image_id: String,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: Vec<ChosenExample>,
    /// Distance (ours) or similarity (rices) of each chosen example; empty
    /// for random selection.
    pub scores: Vec<f64>,
    pub strategy: Strategy,
}

impl SelectionResult {
    pub fn empty(strategy: Strategy) -> Self {
        Self {
            chosen: vec![],
            scores: vec![],
            strategy,
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.chosen.iter().map(|c| c.image_id.clone()).collect()
    }
}

/// Greedy slot filling: for each slot take the unused candidate of the right
/// label with the smallest key (ties by id, already the pool order).
fn fill_greedy(
    pool: &ExamplePool,
    plan: &ShotPlan,
    keys: &[Option<f64>],
    strategy: Strategy,
    report: impl Fn(f64) -> f64,
) -> Result<SelectionResult, SelectError> {
    let mut used = vec![false; pool.candidates.len()];
    let mut out = SelectionResult::empty(strategy);
    for (slot_idx, slot) in plan.slots().iter().enumerate() {
        let best = pool
            .candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| !used[*i] && c.label == slot.label())
            .filter_map(|(i, _)| keys[i].map(|k| (i, k)))
            // keys are finite; partial_cmp treats -0.0 == 0.0 so ties fall back to id order
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        let Some((i, key)) = best else {
            return Err(SelectError::InsufficientPool {
                slot: slot_idx,
                label: slot.label(),
            });
        };
        used[i] = true;
        let c = &pool.candidates[i];
        out.chosen.push(ChosenExample {
            image_id: c.image_id.clone(),
            answer: c.answer.clone(),
        });
        out.scores.push(report(key));
    }
    Ok(out)
}

/// Nearest candidates by Euclidean distance in feature space.
pub fn select_ours(
    query_id: &str,
    pool: &ExamplePool,
    store: &EmbeddingStore,
    plan: &ShotPlan,
) -> Result<SelectionResult, SelectError> {
    if plan.is_empty() {
        return Ok(SelectionResult::empty(Strategy::Ours));
    }
    let q = store.get(query_id)?;
    let keys = pool
        .candidates
        .iter()
        .map(|c| Ok(Some(euclidean(store.get(&c.image_id)?, q)?)))
        .collect::<Result<Vec<_>, SelectError>>()?;
    fill_greedy(pool, plan, &keys, Strategy::Ours, |d| d)
}

/// RICES: most cosine-similar candidates. Zero-norm candidates are skipped.
pub fn select_rices(
    query_id: &str,
    pool: &ExamplePool,
    store: &EmbeddingStore,
    plan: &ShotPlan,
) -> Result<SelectionResult, SelectError> {
    if plan.is_empty() {
        return Ok(SelectionResult::empty(Strategy::Rices));
    }
    let q = store.get(query_id)?;
    if norm(q) == 0.0 {
        return Err(EmbeddingError::ZeroNorm.into());
    }
    let keys = pool
        .candidates
        .iter()
        .map(|c| {
            let v = store.get(&c.image_id)?;
            match cosine(v, q) {
                Ok(sim) => Ok(Some(-sim)),
                Err(EmbeddingError::ZeroNorm) => {
                    warn!("skipping zero-norm candidate {}", c.image_id);
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>, SelectError>>()?;
    fill_greedy(pool, plan, &keys, Strategy::Rices, |k| -k)
}

/// Uniform draws without replacement, keyed by `(seed, query_id)`.
pub fn select_random(
    query_id: &str,
    pool: &ExamplePool,
    plan: &ShotPlan,
    seed: u64,
) -> Result<SelectionResult, SelectError> {
    let mut rng = keyed_rng(seed, query_id);
    let mut used = vec![false; pool.candidates.len()];
    let mut out = SelectionResult::empty(Strategy::Random);
    for (slot_idx, slot) in plan.slots().iter().enumerate() {
        let sub: Vec<usize> = (0..pool.candidates.len())
            .filter(|&i| !used[i] && pool.candidates[i].label == slot.label())
            .collect();
        if sub.is_empty() {
            return Err(SelectError::InsufficientPool {
                slot: slot_idx,
                label: slot.label(),
            });
        }
        let i = sub[rng.random_range(0..sub.len())];
        used[i] = true;
        let c = &pool.candidates[i];
        out.chosen.push(ChosenExample {
            image_id: c.image_id.clone(),
            answer: c.answer.clone(),
        });
    }
    Ok(out)
}

pub fn select(
    strategy: Strategy,
    query_id: &str,
    pool: &ExamplePool,
    store: Option<&EmbeddingStore>,
    plan: &ShotPlan,
    seed: u64,
) -> Result<SelectionResult, SelectError> {
    match strategy {
        Strategy::Random => select_random(query_id, pool, plan, seed),
        Strategy::Ours => select_ours(query_id, pool, store.ok_or(SelectError::StoreRequired(strategy))?, plan),
        Strategy::Rices => select_rices(query_id, pool, store.ok_or(SelectError::StoreRequired(strategy))?, plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BBox, Corpus, ImageRecord, Split};
    use crate::embedding::EmbeddingVector;
    use std::path::PathBuf;

    fn defect() -> Answer {
        Answer::Defect {
            mode: "crack".into(),
            bbox: BBox::new(0.1, 0.1, 0.2, 0.2).unwrap(),
        }
    }

    fn cand(id: &str, label: Label) -> PoolCandidate {
        PoolCandidate {
            image_id: id.into(),
            label,
            answer: if label == Label::Good { Answer::None } else { defect() },
        }
    }

    fn store(vectors: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        let corpus = Corpus::new(
            vectors
                .iter()
                .map(|(id, _)| ImageRecord {
                    id: id.to_string(),
                    category: "bottle".into(),
                    split: Split::Test,
                    label: Label::Good,
                    defect_type: None,
                    image_path: PathBuf::from("x.png"),
                    mask_path: None,
                    width: 1,
                    height: 1,
                    flags: vec![],
                })
                .collect(),
        )
        .unwrap();
        EmbeddingStore::from_vectors(
            vectors.iter().map(|(id, v)| EmbeddingVector {
                image_id: id.to_string(),
                vec: v.clone(),
            }),
            &corpus,
        )
        .unwrap()
    }

    #[test]
    fn plan_names_round_trip() {
        for name in ShotPlan::NAMES {
            assert_eq!(name.parse::<ShotPlan>().unwrap().to_string(), name);
        }
        assert!("1-pos-neg".parse::<ShotPlan>().is_err());
        assert!("3-pos-pos-pos".parse::<ShotPlan>().is_err());
        assert!("pos".parse::<ShotPlan>().is_err());
        assert!("0".parse::<ShotPlan>().unwrap().is_empty());
    }

    #[test]
    fn ours_picks_nearest() {
        let s = store(&[("a", vec![0.0, 0.0]), ("b", vec![3.0, 4.0]), ("q", vec![1.0, 1.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good), cand("b", Label::Good)], "q");
        let r = select_ours("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap();
        assert_eq!(r.ids(), vec!["a"]);
        assert!((r.scores[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ours_identical_embedding_wins_at_zero() {
        let s = store(&[("a", vec![0.0, 0.0]), ("b", vec![1.0, 1.0]), ("q", vec![1.0, 1.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good), cand("b", Label::Good)], "q");
        let r = select_ours("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap();
        assert_eq!((r.ids(), r.scores), (vec!["b".to_string()], vec![0.0]));
    }

    #[test]
    fn ours_two_pos_in_distance_order() {
        let s = store(&[("a", vec![5.0, 0.0]), ("b", vec![1.0, 0.0]), ("q", vec![0.0, 0.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Defective), cand("b", Label::Defective)], "q");
        let r = select_ours("q", &pool, &s, &"2-pos-pos".parse().unwrap()).unwrap();
        assert_eq!(r.ids(), vec!["b", "a"]);
        assert_eq!(r.scores, vec![1.0, 5.0]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let s = store(&[("m", vec![1.0, 0.0]), ("c", vec![0.0, 1.0]), ("q", vec![0.0, 0.0])]);
        let pool = ExamplePool::new("bottle", [cand("m", Label::Good), cand("c", Label::Good)], "q");
        assert_eq!(select_ours("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap().ids(), vec!["c"]);
    }

    #[test]
    fn insufficient_pool_names_the_slot() {
        let s = store(&[("a", vec![0.0]), ("q", vec![1.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good)], "q");
        let err = select_ours("q", &pool, &s, &"2-neg-pos".parse().unwrap()).unwrap_err();
        assert_eq!(
            err,
            SelectError::InsufficientPool {
                slot: 1,
                label: Label::Defective
            }
        );
        let err = select_ours("q", &pool, &s, &"2-neg-neg".parse().unwrap()).unwrap_err();
        assert_eq!(err, SelectError::InsufficientPool { slot: 1, label: Label::Good });
    }

    #[test]
    fn query_never_in_pool() {
        let s = store(&[("a", vec![0.0]), ("q", vec![0.0])]);
        let pool = ExamplePool::new("bottle", [cand("q", Label::Good), cand("a", Label::Good)], "q");
        assert_eq!(pool.candidates().len(), 1);
        assert_eq!(select_ours("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap().ids(), vec!["a"]);
    }

    #[test]
    fn rices_examples() {
        let s = store(&[("a", vec![5.0, 0.0]), ("b", vec![0.0, 1.0]), ("q", vec![1.0, 0.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good), cand("b", Label::Good)], "q");
        let r = select_rices("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap();
        assert_eq!((r.ids(), r.scores), (vec!["a".to_string()], vec![1.0]));

        let s = store(&[("a", vec![2.0, 2.0]), ("b", vec![-1.0, -1.0]), ("q", vec![1.0, 1.0])]);
        let r = select_rices("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap();
        assert_eq!(r.ids(), vec!["a"]);
    }

    #[test]
    fn rices_skips_zero_norm_candidates() {
        let s = store(&[("a", vec![0.0, 0.0]), ("b", vec![-1.0, 0.0]), ("q", vec![1.0, 0.0])]);
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good), cand("b", Label::Good)], "q");
        assert_eq!(select_rices("q", &pool, &s, &"1-neg".parse().unwrap()).unwrap().ids(), vec!["b"]);
        assert!(select_rices("q", &pool, &s, &"2-neg-neg".parse().unwrap()).is_err());
    }

    #[test]
    fn random_is_deterministic_and_respects_labels() {
        let pool = ExamplePool::new(
            "bottle",
            [
                cand("a", Label::Good),
                cand("b", Label::Good),
                cand("c", Label::Defective),
                cand("d", Label::Good),
            ],
            "q",
        );
        let plan: ShotPlan = "2-pos-neg".parse().unwrap();
        let r1 = select_random("q", &pool, &plan, 11).unwrap();
        let r2 = select_random("q", &pool, &plan, 11).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.chosen[0].image_id, "c");
        assert_ne!(r1.chosen[1].image_id, "c");
    }

    #[test]
    fn random_single_element_sub_pool() {
        let pool = ExamplePool::new("bottle", [cand("only", Label::Good), cand("x", Label::Defective)], "q");
        for seed in 0..20 {
            assert_eq!(select_random("q", &pool, &"1-neg".parse().unwrap(), seed).unwrap().ids(), vec!["only"]);
        }
    }

    #[test]
    fn random_frequencies_within_four_sigma() {
        // Binomial(n = 10_000, p = 1/4): mean 2500, sigma = sqrt(n p (1-p)) = 43.30.
        let pool = ExamplePool::new("bottle", ["a", "b", "c", "d"].map(|id| cand(id, Label::Good)), "q");
        let plan: ShotPlan = "1-neg".parse().unwrap();
        let mut counts = std::collections::HashMap::new();
        for seed in 0..10_000u64 {
            let r = select_random("q", &pool, &plan, seed).unwrap();
            *counts.entry(r.chosen[0].image_id.clone()).or_insert(0u32) += 1;
        }
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for id in ["a", "b", "c", "d"] {
            let n = f64::from(counts[id]);
            assert!((n - 2500.0).abs() <= 4.0 * sigma, "{id}: {n}");
        }
    }

    #[test]
    fn zero_plan_selects_nothing() {
        let pool = ExamplePool::new("bottle", [cand("a", Label::Good)], "q");
        let r = select(Strategy::Random, "q", &pool, None, &ShotPlan::zero(), 0).unwrap();
        assert!(r.chosen.is_empty());
        assert_eq!(
            select(Strategy::Ours, "q", &pool, None, &"1-neg".parse().unwrap(), 0).unwrap_err(),
            SelectError::StoreRequired(Strategy::Ours)
        );
    }
}
