//! Seeded toy reference-game worlds.
//!
//! Items are binary attribute vectors. Every problem set holds one target and
//! nine distractors; each distractor is the target with one or more of its
//! attributes removed (and possibly a few added), so every distractor can be
//! ruled out by naming some attribute the target has and it lacks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Caption, Error, ItemId, RefGameContext, Result, Token, Vocabulary};

pub const SET_SIZE: usize = 10;

const ATTRIBUTE_WORDS: &[&str] = &[
    "red", "blue", "green", "yellow", "wooden", "metal", "round", "square", "striped", "dotted",
    "small", "large", "shiny", "dark", "bright", "furry", "tall", "flat", "open", "closed",
    "wet", "dry", "old", "new", "empty", "full", "soft", "hard", "curved", "broken", "clean",
    "dirty",
];
const FILLER_WORDS: &[&str] = &["photo", "thing", "scene", "view", "shot", "picture", "image", "object"];
const EOS_WORD: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub n_sets: usize,
    pub n_attributes: usize,
    pub overlap_min: usize,
    pub seed: u64,
    /// Words true of no item.
    pub n_fillers: usize,
    /// Per-attribute inclusion probability of a target.
    pub density: f64,
    /// Upper bound on target attributes each distractor loses (at least one).
    pub max_removed: usize,
    /// Upper bound on extra attributes each distractor gains.
    pub max_added: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_sets: 100,
            n_attributes: 12,
            overlap_min: 3,
            seed: 0,
            n_fillers: 2,
            density: 0.5,
            max_removed: 2,
            max_added: 1,
        }
    }
}

/// A problem set: ten items in presentation order, one of them the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSet {
    pub set_id: String,
    pub items: Vec<ItemId>,
    pub target: ItemId,
}

impl ProblemSet {
    /// Target first, distractors in presentation order.
    pub fn context(&self) -> RefGameContext {
        let distractors = self.items.iter().filter(|i| **i != self.target).cloned().collect();
        RefGameContext::new(self.target.clone(), distractors).expect("validated problem set")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    params: WorldParams,
    attributes: Vec<String>,
    fillers: Vec<String>,
    vocabulary: Vocabulary,
    items: BTreeMap<ItemId, Vec<bool>>,
    problem_sets: Vec<ProblemSet>,
    reference_captions: BTreeMap<ItemId, Caption>,
}

impl ToyWorld {
    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn fillers(&self) -> &[String] {
        &self.fillers
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn items(&self) -> &BTreeMap<ItemId, Vec<bool>> {
        &self.items
    }

    pub fn problem_sets(&self) -> &[ProblemSet] {
        &self.problem_sets
    }

    pub fn reference_captions(&self) -> &BTreeMap<ItemId, Caption> {
        &self.reference_captions
    }

    pub fn item_attributes(&self, item: &ItemId) -> Result<&[bool]> {
        self.items.get(item).map(Vec::as_slice).ok_or_else(|| Error::UnknownItem(item.0.clone()))
    }

    /// Attribute words occupy token ids `0..n_attributes`.
    pub fn attribute_of(&self, token: Token) -> Option<usize> {
        (token.index() < self.attributes.len()).then_some(token.index())
    }

    pub fn attribute_token(&self, attribute: usize) -> Token {
        Token(attribute as u32)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WorldFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    fn build(
        params: WorldParams,
        attributes: Vec<String>,
        fillers: Vec<String>,
        items: BTreeMap<ItemId, Vec<bool>>,
        problem_sets: Vec<ProblemSet>,
        reference_words: BTreeMap<ItemId, Vec<Token>>,
    ) -> Result<Self> {
        let mut words = attributes.clone();
        words.extend(fillers.iter().cloned());
        words.push(EOS_WORD.to_string());
        let eos = Token((words.len() - 1) as u32);
        let vocabulary = Vocabulary::new(words, eos)?;
        let reference_captions = reference_words
            .into_iter()
            .map(|(id, w)| Caption::from_words(&w, eos).map(|c| (id, c)))
            .collect::<Result<_>>()?;
        let world = Self { params, attributes, fillers, vocabulary, items, problem_sets, reference_captions };
        world.validate()?;
        Ok(world)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleWorld(msg));
        let n = self.attributes.len();
        for (id, attrs) in &self.items {
            if attrs.len() != n {
                return bad(format!("item `{id}` has {} attributes, expected {n}", attrs.len()));
            }
            if !attrs.iter().any(|&b| b) {
                return bad(format!("item `{id}` has no attribute set"));
            }
        }
        let mut set_ids = BTreeSet::new();
        for set in &self.problem_sets {
            if !set_ids.insert(&set.set_id) {
                return bad(format!("duplicate set id `{}`", set.set_id));
            }
            if set.items.len() != SET_SIZE {
                return bad(format!("set `{}` has {} items, expected {SET_SIZE}", set.set_id, set.items.len()));
            }
            if !set.items.contains(&set.target) {
                return bad(format!("set `{}`: target is not among its items", set.set_id));
            }
            let target = self.item_attributes(&set.target)?;
            let unique: BTreeSet<_> = set.items.iter().collect();
            if unique.len() != SET_SIZE {
                return bad(format!("set `{}` repeats an item", set.set_id));
            }
            for d in set.items.iter().filter(|i| **i != set.target) {
                let shared = shared_count(target, self.item_attributes(d)?);
                if shared < self.params.overlap_min {
                    return bad(format!(
                        "set `{}`: distractor `{d}` shares {shared} < overlap_min {} attributes",
                        set.set_id, self.params.overlap_min
                    ));
                }
            }
        }
        for (id, caption) in &self.reference_captions {
            self.item_attributes(id)?;
            if caption.words().is_empty() {
                return bad(format!("reference caption of `{id}` is empty"));
            }
        }
        Ok(())
    }
}

fn shared_count(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

fn attribute_name(index: usize) -> String {
    ATTRIBUTE_WORDS.get(index).map(|s| s.to_string()).unwrap_or_else(|| format!("attr{index}"))
}

fn filler_name(index: usize) -> String {
    FILLER_WORDS.get(index).map(|s| s.to_string()).unwrap_or_else(|| format!("filler{index}"))
}

/// [`WorldParams::generate`] with default filler count, density and flip bounds.
pub fn generate_toy_world(n_sets: usize, n_attributes: usize, overlap_min: usize, seed: u64) -> Result<ToyWorld> {
    WorldParams { n_sets, n_attributes, overlap_min, seed, ..WorldParams::default() }.generate()
}

const SET_ATTEMPTS: usize = 1000;
const DISTRACTOR_ATTEMPTS: usize = 200;

impl WorldParams {
    pub fn generate(&self) -> Result<ToyWorld> {
        let n = self.n_attributes;
        if n < self.overlap_min + 2 {
            return Err(Error::InfeasibleWorld(format!(
                "n_attributes ({n}) must be >= overlap_min + 2 ({})",
                self.overlap_min + 2
            )));
        }
        if self.n_sets == 0 {
            return Err(Error::InfeasibleWorld("n_sets must be >= 1".into()));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return Err(Error::InfeasibleWorld(format!("density ({}) must lie in (0, 1)", self.density)));
        }
        if self.max_removed == 0 {
            return Err(Error::InfeasibleWorld("max_removed must be >= 1".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut items = BTreeMap::new();
        let mut problem_sets = Vec::with_capacity(self.n_sets);
        let mut references = BTreeMap::new();

        for s in 0..self.n_sets {
            let (target, distractors) = (0..SET_ATTEMPTS)
                .find_map(|_| self.sample_set(&mut rng))
                .ok_or_else(|| {
                    Error::InfeasibleWorld(format!(
                        "could not place {} distinct distractors sharing >= {} attributes in set {s}",
                        SET_SIZE - 1,
                        self.overlap_min
                    ))
                })?;
            let target_pos = rng.random_range(0..SET_SIZE);
            let ids: Vec<ItemId> = (0..SET_SIZE).map(|p| ItemId(format!("s{s:03}-i{p}"))).collect();
            let mut others = distractors.iter();
            for (p, id) in ids.iter().enumerate() {
                let attrs = if p == target_pos { target.clone() } else { others.next().unwrap().clone() };
                items.insert(id.clone(), attrs);
            }
            let discriminative: Vec<Token> = (0..n)
                .filter(|&a| target[a] && distractors.iter().any(|d| !d[a]))
                .map(|a| Token(a as u32))
                .collect();
            references.insert(ids[target_pos].clone(), discriminative);
            problem_sets.push(ProblemSet {
                set_id: format!("s{s:03}"),
                target: ids[target_pos].clone(),
                items: ids,
            });
        }

        let attributes = (0..n).map(attribute_name).collect();
        let fillers = (0..self.n_fillers).map(filler_name).collect();
        ToyWorld::build(self.clone(), attributes, fillers, items, problem_sets, references)
    }

    fn sample_set(&self, rng: &mut ChaCha8Rng) -> Option<(Vec<bool>, Vec<Vec<bool>>)> {
        let n = self.n_attributes;
        let target: Vec<bool> = (0..n).map(|_| rng.random_bool(self.density)).collect();
        let k = target.iter().filter(|&&b| b).count();
        if k < self.overlap_min + 1 || k > n - 1 {
            return None;
        }
        let present: Vec<usize> = (0..n).filter(|&a| target[a]).collect();
        let absent: Vec<usize> = (0..n).filter(|&a| !target[a]).collect();
        let remove_hi = self.max_removed.min(k - self.overlap_min);
        let add_hi = self.max_added.min(absent.len());

        let mut distractors: Vec<Vec<bool>> = Vec::with_capacity(SET_SIZE - 1);
        for _ in 0..SET_SIZE - 1 {
            let d = (0..DISTRACTOR_ATTEMPTS).find_map(|_| {
                let mut d = target.clone();
                let r = rng.random_range(1..=remove_hi);
                for i in sample(rng, present.len(), r) {
                    d[present[i]] = false;
                }
                let a = rng.random_range(0..=add_hi);
                for i in sample(rng, absent.len(), a) {
                    d[absent[i]] = true;
                }
                let fresh = d.iter().any(|&b| b) && d != target && !distractors.contains(&d);
                fresh.then_some(d)
            })?;
            distractors.push(d);
        }
        Some((target, distractors))
    }
}

/// On-disk form of a [`ToyWorld`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    params: WorldParams,
    attributes: Vec<String>,
    fillers: Vec<String>,
    items: BTreeMap<ItemId, Vec<u8>>,
    sets: Vec<ProblemSet>,
    reference_captions: BTreeMap<ItemId, String>,
}

impl From<&ToyWorld> for WorldFile {
    fn from(w: &ToyWorld) -> Self {
        WorldFile {
            params: w.params.clone(),
            attributes: w.attributes.clone(),
            fillers: w.fillers.clone(),
            items: w.items.iter().map(|(k, v)| (k.clone(), v.iter().map(|&b| b as u8).collect())).collect(),
            sets: w.problem_sets.clone(),
            reference_captions: w
                .reference_captions
                .iter()
                .map(|(k, c)| (k.clone(), w.vocabulary.detokenize(c.tokens()).expect("own vocabulary")))
                .collect(),
        }
    }
}

impl TryFrom<WorldFile> for ToyWorld {
    type Error = Error;
    fn try_from(f: WorldFile) -> Result<Self> {
        let mut items = BTreeMap::new();
        for (id, bits) in f.items {
            let attrs = bits
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::InfeasibleWorld(format!("item `{id}`: attribute flags must be 0 or 1"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            items.insert(id, attrs);
        }
        let attr_index: BTreeMap<&str, Token> =
            f.attributes.iter().enumerate().map(|(i, a)| (a.as_str(), Token(i as u32))).collect();
        let mut references = BTreeMap::new();
        for (id, text) in &f.reference_captions {
            let words = text
                .split_whitespace()
                .map(|w| {
                    attr_index.get(w).copied().ok_or_else(|| {
                        Error::InfeasibleWorld(format!("reference caption of `{id}`: unknown word {w:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            references.insert(id.clone(), words);
        }
        ToyWorld::build(f.params, f.attributes, f.fillers, items, f.sets, references)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = generate_toy_world(20, 10, 3, 42).unwrap();
        let b = generate_toy_world(20, 10, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_toy_world(20, 10, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn hundred_sets_of_ten() {
        let w = generate_toy_world(100, 12, 3, 1).unwrap();
        assert_eq!(w.problem_sets().len(), 100);
        assert!(w.problem_sets().iter().all(|s| s.items.len() == SET_SIZE));
        assert_eq!(w.items().len(), 1000);
    }

    #[test]
    fn overlap_is_respected_exhaustively() {
        let w = generate_toy_world(100, 12, 3, 9).unwrap();
        for set in w.problem_sets() {
            let t = w.item_attributes(&set.target).unwrap();
            for d in set.items.iter().filter(|i| **i != set.target) {
                let dv = w.item_attributes(d).unwrap();
                assert!(shared_count(t, dv) >= 3, "{} / {d}", set.set_id);
                assert_ne!(t, dv);
            }
        }
    }

    #[test]
    fn reference_captions_are_discriminative_attributes() {
        let w = generate_toy_world(30, 10, 3, 5).unwrap();
        for set in w.problem_sets() {
            let cap = &w.reference_captions()[&set.target];
            assert!(cap.is_complete());
            let t = w.item_attributes(&set.target).unwrap();
            let expected: Vec<Token> = (0..w.n_attributes())
                .filter(|&a| {
                    t[a] && set.items.iter().any(|d| *d != set.target && !w.item_attributes(d).unwrap()[a])
                })
                .map(|a| Token(a as u32))
                .collect();
            assert_eq!(cap.words(), expected.as_slice());
        }
    }

    #[test]
    fn infeasible_bounds_are_named() {
        let err = generate_toy_world(5, 4, 3, 0).unwrap_err();
        assert!(err.to_string().contains("overlap_min + 2"), "{err}");
        let err = WorldParams { density: 1.5, ..WorldParams::default() }.generate().unwrap_err();
        assert!(err.to_string().contains("density"), "{err}");
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let w = generate_toy_world(12, 10, 2, 77).unwrap();
        let back = ToyWorld::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn vocabulary_layout() {
        let w = generate_toy_world(3, 9, 2, 0).unwrap();
        let v = w.vocabulary();
        assert_eq!(v.len(), 9 + 2 + 1);
        assert_eq!(v.eos(), Token(11));
        assert_eq!(w.attribute_of(Token(8)), Some(8));
        assert_eq!(w.attribute_of(Token(9)), None);
    }
}
