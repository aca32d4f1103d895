//! Labeled-span and coreference evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall) }
    }
}

/// Numerators and denominators of precision and recall, summed over
/// instances or documents before dividing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        Prf::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }

    pub fn add(&mut self, other: &Counts) {
        self.p_num += other.p_num;
        self.p_den += other.p_den;
        self.r_num += other.r_num;
        self.r_den += other.r_den;
    }
}

/// Exact-match counts for one instance's predicted and gold items.
pub fn match_counts<T: Ord>(gold: &[T], predicted: &[T]) -> Counts {
    let g: BTreeSet<&T> = gold.iter().collect();
    let p: BTreeSet<&T> = predicted.iter().collect();
    let correct = g.intersection(&p).count() as f64;
    Counts { p_num: correct, p_den: p.len() as f64, r_num: correct, r_den: g.len() as f64 }
}

/// Micro-averaged precision/recall/F1 over instances of labeled items such
/// as `(span, role)` pairs.
pub fn srl_prf<T: Ord>(gold: &[Vec<T>], predicted: &[Vec<T>]) -> Prf {
    srl_counts(gold, predicted).prf()
}

pub fn srl_counts<T: Ord>(gold: &[Vec<T>], predicted: &[Vec<T>]) -> Counts {
    assert_eq!(gold.len(), predicted.len(), "one prediction per instance");
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(predicted) {
        c.add(&match_counts(g, p));
    }
    c
}

fn cluster_of<M: Ord>(clusters: &[Vec<M>]) -> BTreeMap<&M, usize> {
    clusters.iter().enumerate().flat_map(|(k, c)| c.iter().map(move |m| (m, k))).collect()
}

/// Σ(|k| − p(k)) and Σ(|k| − 1) of `key` clusters partitioned by `response`.
fn muc_side<M: Ord>(key: &[Vec<M>], response: &[Vec<M>]) -> (f64, f64) {
    let of = cluster_of(response);
    let (mut num, mut den) = (0.0, 0.0);
    for k in key {
        let mut parts = BTreeSet::new();
        let mut unaligned = 0;
        for m in k {
            match of.get(m) {
                Some(&r) => {
                    parts.insert(r);
                }
                None => unaligned += 1,
            }
        }
        num += (k.len() - parts.len() - unaligned) as f64;
        den += (k.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Counts {
    let (r_num, r_den) = muc_side(gold, predicted);
    let (p_num, p_den) = muc_side(predicted, gold);
    Counts { p_num, p_den, r_num, r_den }
}

pub fn muc<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Prf {
    muc_counts(gold, predicted).prf()
}

/// Σ over `key` mentions of |key cluster ∩ response cluster| / |key cluster|;
/// a mention missing from `response` is its own singleton there.
fn b3_side<M: Ord>(key: &[Vec<M>], response: &[Vec<M>]) -> f64 {
    let of = cluster_of(response);
    let mut total = 0.0;
    for k in key {
        let mut overlap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut missing = 0;
        for m in k {
            match of.get(m) {
                Some(&r) => *overlap.entry(r).or_default() += 1,
                None => missing += 1,
            }
        }
        let sq: usize = overlap.values().map(|c| c * c).sum::<usize>() + missing;
        total += sq as f64 / k.len() as f64;
    }
    total
}

fn mention_count<M: Ord>(clusters: &[Vec<M>]) -> usize {
    clusters.iter().map(Vec::len).sum()
}

/// B³ counts over the union of mentions: mentions present on one side only
/// count as singletons on the other.
pub fn b_cubed_counts<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Counts {
    let gold_of = cluster_of(gold);
    let pred_of = cluster_of(predicted);
    let only_pred = pred_of.keys().filter(|m| !gold_of.contains_key(*m)).count();
    let only_gold = gold_of.keys().filter(|m| !pred_of.contains_key(*m)).count();
    // Extra singletons contribute 1 each to the side that lacks them.
    Counts {
        p_num: b3_side(predicted, gold) + only_gold as f64,
        p_den: (mention_count(predicted) + only_gold) as f64,
        r_num: b3_side(gold, predicted) + only_pred as f64,
        r_den: (mention_count(gold) + only_pred) as f64,
    }
}

pub fn b_cubed<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Prf {
    b_cubed_counts(gold, predicted).prf()
}

pub fn phi4<M: Ord>(a: &[M], b: &[M]) -> f64 {
    let sa: BTreeSet<&M> = a.iter().collect();
    let common = b.iter().filter(|m| sa.contains(m)).count();
    ratio(2.0 * common as f64, (a.len() + b.len()) as f64)
}

pub fn ceaf_phi4_counts<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Counts {
    let sim: Vec<Vec<f64>> = gold.iter().map(|g| predicted.iter().map(|p| phi4(g, p)).collect()).collect();
    let total = max_assignment(&sim).1;
    Counts { p_num: total, p_den: predicted.len() as f64, r_num: total, r_den: gold.len() as f64 }
}

pub fn ceaf_phi4<M: Ord>(gold: &[Vec<M>], predicted: &[Vec<M>]) -> Prf {
    ceaf_phi4_counts(gold, predicted).prf()
}

/// Unweighted mean of the three F1 values.
pub fn conll_average(muc: &Prf, b3: &Prf, ceaf: &Prf) -> f64 {
    (muc.f1 + b3.f1 + ceaf.f1) / 3.0
}

/// Corpus-level coreference scores, accumulated per document.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorefScorer {
    pub muc: Counts,
    pub b_cubed: Counts,
    pub ceaf: Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorefReport {
    pub muc: Prf,
    pub b_cubed: Prf,
    pub ceaf_phi4: Prf,
    pub average_f1: f64,
}

impl CorefScorer {
    pub fn add_document<M: Ord>(&mut self, gold: &[Vec<M>], predicted: &[Vec<M>]) {
        self.muc.add(&muc_counts(gold, predicted));
        self.b_cubed.add(&b_cubed_counts(gold, predicted));
        self.ceaf.add(&ceaf_phi4_counts(gold, predicted));
    }

    pub fn report(&self) -> CorefReport {
        let (m, b, c) = (self.muc.prf(), self.b_cubed.prf(), self.ceaf.prf());
        CorefReport { muc: m, b_cubed: b, ceaf_phi4: c, average_f1: conll_average(&m, &b, &c) }
    }
}

/// Maximum-weight one-to-one assignment of rows to columns of a (possibly
/// rectangular) similarity matrix. Returns the column assigned to each row,
/// if any, and the total weight.
pub fn max_assignment(sim: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let max = sim.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    // Square cost matrix; padding cells have the same cost as a zero match.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - sim[i][j]
        } else {
            max
        }
    };
    // Potentials-based Hungarian method over 1-based arrays.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let (i, c) = (p[j] - 1, j - 1);
        if i < rows && c < cols {
            assign[i] = Some(c);
            total += sim[i][c];
        }
    }
    (assign, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn srl_examples() {
        let g = vec![vec![(1, 'a'), (3, 'b')]];
        assert_eq!(srl_prf(&g, &g), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        let p = vec![vec![(1, 'a'), (4, 'b')]];
        assert_eq!(srl_prf(&g, &p), Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
        let wrong_role = vec![vec![(1, 'a'), (3, 'c')]];
        assert_eq!(srl_prf(&g, &wrong_role).precision, 0.5);
        let none: Vec<Vec<(i32, char)>> = vec![vec![]];
        assert_eq!(srl_prf(&none, &none).f1, 0.0);
    }

    #[test]
    fn muc_examples() {
        let gold = vec![vec!['a', 'b', 'c']];
        let pred = vec![vec!['a', 'b'], vec!['c']];
        let m = muc(&gold, &pred);
        assert!(close(m.precision, 1.0) && close(m.recall, 0.5) && close(m.f1, 2.0 / 3.0));
        assert_eq!(muc(&gold, &gold).f1, 1.0);
        let empty: Vec<Vec<char>> = vec![];
        let m = muc(&gold, &empty);
        assert_eq!((m.precision, m.recall), (0.0, 0.0));
    }

    #[test]
    fn b_cubed_examples() {
        let gold = vec![vec!['a', 'b'], vec!['c']];
        let pred = vec![vec!['a', 'b', 'c']];
        let b = b_cubed(&gold, &pred);
        assert!(close(b.recall, 1.0) && close(b.precision, 5.0 / 9.0));
        let singles = vec![vec!['a'], vec!['b']];
        assert_eq!(b_cubed(&singles, &singles).f1, 1.0);
    }

    #[test]
    fn ceaf_examples() {
        let c = ceaf_phi4(&[vec!['a', 'b']], &[vec!['b', 'c']]);
        assert!(close(c.precision, 0.5) && close(c.recall, 0.5) && close(c.f1, 0.5));
        let g = vec![vec![1, 2], vec![3]];
        assert_eq!(ceaf_phi4(&g, &g).f1, 1.0);
    }

    #[test]
    fn conll_average_row() {
        let f = |x: f64| Prf { precision: 0.0, recall: 0.0, f1: x };
        let avg = conll_average(&f(75.8), &f(65.0), &f(60.8));
        assert_eq!(libm::round(avg * 10.0) / 10.0, 67.2);
        assert_eq!(conll_average(&f(0.6), &f(0.6), &f(0.6)), 0.6);
    }

    fn brute_max(sim: &[Vec<f64>]) -> f64 {
        fn go(sim: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == sim.len() {
                return 0.0;
            }
            let mut best = go(sim, i + 1, used);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(sim[i][j] + go(sim, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let cols = sim.first().map_or(0, Vec::len);
        go(sim, 0, &mut vec![false; cols])
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(seed in 0u64..5000, rows in 0usize..7, cols in 0usize..7) {
            let mut rng = rng_from_seed(seed);
            let sim: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let (assign, total) = max_assignment(&sim);
            prop_assert!((total - brute_max(&sim)).abs() < 1e-9);
            let used: Vec<usize> = assign.iter().flatten().copied().collect();
            let distinct: BTreeSet<usize> = used.iter().copied().collect();
            prop_assert_eq!(used.len(), distinct.len());
        }

        #[test]
        fn swapping_sides_swaps_p_and_r(seed in 0u64..2000) {
            let mut rng = rng_from_seed(seed);
            let mut random_clusters = || {
                let mut cl: Vec<Vec<u32>> = vec![Vec::new(); 4];
                for m in 0..10u32 {
                    if rng.gen_bool(0.8) {
                        cl[rng.gen_range(0..4)].push(m);
                    }
                }
                cl.retain(|c| !c.is_empty());
                cl
            };
            let (g, p) = (random_clusters(), random_clusters());
            for (a, b) in [(muc(&g, &p), muc(&p, &g)), (b_cubed(&g, &p), b_cubed(&p, &g)), (ceaf_phi4(&g, &p), ceaf_phi4(&p, &g))] {
                prop_assert!(close(a.precision, b.recall) && close(a.recall, b.precision));
                for x in [a.precision, a.recall, a.f1] {
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
                }
            }
        }
    }

    #[test]
    fn micro_counts_are_sums() {
        let g = vec![vec![1, 2, 3], vec![4]];
        let p = vec![vec![1, 5], vec![4, 6]];
        let total = srl_counts(&g, &p);
        let mut sum = match_counts(&g[0], &p[0]);
        sum.add(&match_counts(&g[1], &p[1]));
        assert_eq!(total, sum);
    }
}
