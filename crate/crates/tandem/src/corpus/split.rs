//! Leak-safe corpus splitting: sentences shared between the dependency
//! and SRL corpora always land in the same split of both.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn suffix(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Split ratios plus pre-assigned ids inherited from a paired corpus.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub shared_sentence_map: BTreeMap<String, Split>,
}

impl SplitSpec {
    pub fn new(ratios: (f64, f64, f64)) -> Self {
        SplitSpec {
            ratios,
            shared_sentence_map: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::config(format!(
                "split ratios must be non-negative, got {a}:{b}:{c}"
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split ratios must sum to 1, got {a}:{b}:{c}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl SplitCorpus {
    pub fn get(&self, split: Split) -> &[Sentence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn push(&mut self, split: Split, s: Sentence) {
        match split {
            Split::Train => self.train.push(s),
            Split::Dev => self.dev.push(s),
            Split::Test => self.test.push(s),
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Integer apportionment of `n` by ratios: floors plus largest remainders.
pub fn apportion(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let rs = [ratios.0, ratios.1, ratios.2];
    let mut counts = [0usize; 3];
    let mut rema: Vec<(f64, usize)> = Vec::with_capacity(3);
    let mut assigned = 0;
    for (k, r) in rs.iter().enumerate() {
        let exact = n as f64 * r;
        let fl = exact.floor() as usize;
        counts[k] = fl;
        assigned += fl;
        rema.push((exact - fl as f64, k));
    }
    // largest fractional remainder first; ties favor the earlier split
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut left = n - assigned;
    for (_, k) in rema {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Assign every id not already in `forced` so that the overall split
/// sizes match the ratios as closely as integer counts allow.
fn assign_corpus(
    ids: &[String],
    forced: &BTreeMap<String, Split>,
    ratios: (f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, Split> {
    let mut result = BTreeMap::new();
    let mut forced_counts = [0usize; 3];
    let mut unassigned: Vec<&String> = Vec::new();
    for id in ids {
        if let Some(&split) = forced.get(id) {
            result.insert(id.clone(), split);
            forced_counts[split as usize] += 1;
        } else {
            unassigned.push(id);
        }
    }
    let targets = apportion(ids.len(), ratios);
    let mut need = [0i64; 3];
    for k in 0..3 {
        need[k] = targets[k] as i64 - forced_counts[k] as i64;
    }
    // forced counts can overshoot a target; push the deficit onto the
    // other splits, largest allocation first
    let mut total_need: i64 = need.iter().sum();
    debug_assert!(total_need <= unassigned.len() as i64);
    while total_need < unassigned.len() as i64 {
        let k = (0..3).max_by_key(|&k| need[k]).unwrap();
        need[k] += 1;
        total_need += 1;
    }
    for k in 0..3 {
        if need[k] < 0 {
            let mut deficit = -need[k];
            need[k] = 0;
            while deficit > 0 {
                let j = (0..3).max_by_key(|&j| need[j]).unwrap();
                if need[j] == 0 {
                    break;
                }
                need[j] -= 1;
                deficit -= 1;
            }
        }
    }
    unassigned.shuffle(rng);
    let mut it = unassigned.into_iter();
    for (k, split) in Split::ALL.iter().enumerate() {
        for _ in 0..need[k] {
            if let Some(id) = it.next() {
                result.insert(id.clone(), *split);
            }
        }
    }
    // ratios summing to 1 guarantee the needs cover everything, but be
    // safe against float edge cases
    for id in it {
        result.insert(id.clone(), Split::Train);
    }
    result
}

/// Split both corpora. Sentences with the same id occupy the same split
/// name in both; the remainder is distributed to match the ratios, with
/// deterministic results for a fixed seed.
pub fn split_leak_safe(
    dp_corpus: Vec<Sentence>,
    srl_corpus: Vec<Sentence>,
    spec: &SplitSpec,
    seed: u64,
) -> Result<(SplitCorpus, SplitCorpus)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dp_ids: Vec<String> = dp_corpus.iter().map(|s| s.id.clone()).collect();
    let dp_assign = assign_corpus(&dp_ids, &spec.shared_sentence_map, spec.ratios, &mut rng);

    // SRL inherits the DP assignment for shared ids, plus any explicit map.
    let mut srl_forced = spec.shared_sentence_map.clone();
    for s in &srl_corpus {
        if let Some(&split) = dp_assign.get(&s.id) {
            srl_forced.insert(s.id.clone(), split);
        }
    }
    let srl_ids: Vec<String> = srl_corpus.iter().map(|s| s.id.clone()).collect();
    let srl_assign = assign_corpus(&srl_ids, &srl_forced, spec.ratios, &mut rng);

    let mut dp_out = SplitCorpus::default();
    for s in dp_corpus {
        let split = dp_assign[&s.id];
        dp_out.push(split, s);
    }
    let mut srl_out = SplitCorpus::default();
    for s in srl_corpus {
        let split = srl_assign[&s.id];
        srl_out.push(split, s);
    }
    Ok((dp_out, srl_out))
}
