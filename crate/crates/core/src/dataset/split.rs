//! Train/validation/test split that keeps each physical defect in one subset.
//!
//! Samples sharing a defect id are linked; each connected group is assigned
//! whole to one subset. Groups are shuffled with the seed and then dealt,
//! largest first, to whichever subset is furthest below its target size.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::AnnotatedSample;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedSample>,
    pub val: Vec<AnnotatedSample>,
    pub test: Vec<AnnotatedSample>,
}

impl DatasetSplit {
    pub fn from_indices(samples: &[AnnotatedSample], idx: &SplitIndices) -> Self {
        let pick = |v: &[usize]| v.iter().map(|&i| samples[i].clone()).collect();
        DatasetSplit {
            train: pick(&idx.train),
            val: pick(&idx.val),
            test: pick(&idx.test),
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Integer subset sizes closest to `fractions * n` (largest remainder).
fn targets(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut t = [0usize; 3];
    for i in 0..3 {
        t[i] = (raw[i] + 1e-9).floor() as usize;
    }
    let mut rest = n.saturating_sub(t.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - t[a] as f64;
        let rb = raw[b] - t[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        t[i] += 1;
        rest -= 1;
    }
    t
}

/// Assign sample indices to train/val/test.
pub fn split_indices(samples: &[AnnotatedSample], fractions: [f64; 3], seed_value: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut uf = UnionFind((0..samples.len()).collect());
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.boxes.len() != s.defect_ids.len() {
            return Err(Error::Validation {
                sample: format!("#{i}"),
                message: "every box needs a defect id".into(),
            });
        }
        for id in &s.defect_ids {
            if id.is_empty() {
                return Err(Error::Validation {
                    sample: format!("#{i}"),
                    message: "empty defect id".into(),
                });
            }
            match first_seen.get(id.as_str()) {
                Some(&j) => uf.union(i, j),
                None => {
                    first_seen.insert(id, i);
                }
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..samples.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    // Keyed by smallest member so the pre-shuffle order is independent of
    // hash iteration order.
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by_key(|g| g[0]);
    let mut rng = seed::rng(seed_value);
    groups.shuffle(&mut rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let target = targets(samples.len(), fractions);
    let largest = *target.iter().max().unwrap();
    if let Some(g) = groups.iter().find(|g| g.len() > largest) {
        let mut ids: Vec<String> = g.iter().flat_map(|&i| samples[i].defect_ids.iter().cloned()).collect();
        ids.sort();
        ids.dedup();
        return Err(Error::SplitConflict { ids });
    }

    let mut out: [Vec<usize>; 3] = Default::default();
    for g in groups {
        let k = (0..3)
            .max_by_key(|&k| (target[k] as i64 - out[k].len() as i64, std::cmp::Reverse(k)))
            .unwrap();
        out[k].extend(g);
    }
    for v in &mut out {
        v.sort_unstable();
    }
    let [train, val, test] = out;
    Ok(SplitIndices { train, val, test })
}

/// Split samples so that no defect id appears in more than one subset.
pub fn split_by_defect(samples: &[AnnotatedSample], fractions: [f64; 3], seed_value: u64) -> Result<DatasetSplit> {
    let idx = split_indices(samples, fractions, seed_value)?;
    Ok(DatasetSplit::from_indices(samples, &idx))
}
