//! Truncated enumeration of the support of the invariant distribution.
//!
//! For a detectable atom `i` the support is the closure of
//! `S_i = { f_{l_1} ∘ ... ∘ f_{l_s}(P*_i) }` over all finite words. A depth-`d`
//! breadth-first search from `P*_i` produces a finite lower approximation;
//! duplicates are merged at resolution `delta` in spectral norm.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::detectable_subsets;
use crate::error::{Error, Result};
use crate::matcone::{distance, quantized_key, CovMatrix, QuantKey, SymMatrix};
use crate::riccati::{dare_fixed_point, FixedPoint, MapFamily, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use crate::sysmodel::{Schedule, SensorNetwork, SubsetId};

pub const DEFAULT_DELTA: f64 = 1e-8;
pub const DEFAULT_NODE_CAP: usize = 100_000;

/// Which maps the enumeration composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Alphabet {
    /// `f_0` plus the maps of the schedule's atoms.
    #[default]
    Schedule,
    /// Every subset `0..2^N`, including zero-probability ones.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportOptions {
    pub depth: usize,
    pub node_cap: usize,
    pub delta: f64,
    pub alphabet: Alphabet,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions {
            depth: 6,
            node_cap: DEFAULT_NODE_CAP,
            delta: DEFAULT_DELTA,
            alphabet: Alphabet::Schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    pub cov: CovMatrix,
    /// `l_1, ..., l_s`; the point is `f_{l_1}(f_{l_2}(... f_{l_s}(P*)))`.
    pub word: Vec<SubsetId>,
}

impl SupportPoint {
    pub fn depth(&self) -> usize {
        self.word.len()
    }

    /// Word as dot-separated subset ids, outermost map first. Empty for the anchor.
    pub fn word_string(&self) -> String {
        self.word.iter().map(|l| l.0.to_string()).collect::<Vec<_>>().join(".")
    }
}

#[derive(Debug, Clone)]
pub struct SupportSet {
    pub anchor: SubsetId,
    pub fixed_point: FixedPoint,
    pub depth: usize,
    pub delta: f64,
    pub alphabet: Vec<SubsetId>,
    pub points: Vec<SupportPoint>,
    /// New points found at each depth; entry 0 is the anchor.
    pub counts_per_depth: Vec<usize>,
    /// The last level still produced new points, so deeper words would add more.
    pub depth_truncated: bool,
    /// Enumeration stopped at `node_cap` points.
    pub cap_reached: bool,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn covs(&self) -> impl Iterator<Item = &CovMatrix> {
        self.points.iter().map(|p| &p.cov)
    }

    pub fn truncated(&self) -> bool {
        self.depth_truncated || self.cap_reached
    }

    /// Every point of `self` lies within `tol` of some point of `other`.
    pub fn is_contained_in(&self, other: &SupportSet, tol: f64) -> Result<bool> {
        for p in self.covs() {
            if nearest_distance(p, other.covs())? > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn nearest_distance<'a>(x: &SymMatrix, set: impl Iterator<Item = &'a CovMatrix>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for y in set {
        best = best.min(distance(x, y)?);
    }
    Ok(best)
}

/// `f_{l_1} ∘ ... ∘ f_{l_s}(start)`.
pub fn replay_word(maps: &MapFamily<'_>, start: &CovMatrix, word: &[SubsetId]) -> Result<CovMatrix> {
    let mut x = start.clone();
    for &l in word.iter().rev() {
        x = maps.apply(l, &x)?;
    }
    Ok(x)
}

fn alphabet_for(net: &SensorNetwork, schedule: &Schedule, alphabet: Alphabet) -> Vec<SubsetId> {
    let mut ids: Vec<SubsetId> = match alphabet {
        Alphabet::Full => (0..net.n_subsets()).map(SubsetId).collect(),
        Alphabet::Schedule => std::iter::once(SubsetId::EMPTY).chain(schedule.support()).collect(),
    };
    ids.sort();
    ids.dedup();
    ids
}

/// Points already accepted, indexed for duplicate detection.
struct DedupIndex {
    delta: f64,
    keys: HashMap<QuantKey, usize>,
    // floor(P_11 / delta) -> point indices, for the distance merge
    buckets: HashMap<u64, Vec<usize>>,
}

impl DedupIndex {
    fn new(delta: f64) -> Self {
        DedupIndex {
            delta,
            keys: HashMap::new(),
            buckets: HashMap::new(),
        }
    }

    fn bucket(&self, x: &SymMatrix) -> f64 {
        (x.get(0, 0) / self.delta).floor()
    }

    fn find(&self, x: &SymMatrix, points: &[SupportPoint]) -> Result<Option<usize>> {
        if let Some(&k) = self.keys.get(&quantized_key(x, self.delta)) {
            return Ok(Some(k));
        }
        let b = self.bucket(x);
        for nb in [b - 1.0, b, b + 1.0] {
            if let Some(ids) = self.buckets.get(&nb.to_bits()) {
                for &k in ids {
                    if distance(x, &points[k].cov)? <= self.delta {
                        return Ok(Some(k));
                    }
                }
            }
        }
        Ok(None)
    }

    fn insert(&mut self, x: &SymMatrix, index: usize) {
        self.keys.insert(quantized_key(x, self.delta), index);
        let b = self.bucket(x);
        self.buckets.entry(b.to_bits()).or_default().push(index);
    }
}

/// Breadth-first closure of `{P*_i}` under the chosen map alphabet.
pub fn enumerate_support(
    net: &SensorNetwork,
    schedule: &Schedule,
    anchor: SubsetId,
    opts: &SupportOptions,
) -> Result<SupportSet> {
    if !(opts.delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {}", opts.delta)));
    }
    if opts.node_cap == 0 {
        return Err(Error::InvalidArgument("node cap must be positive".into()));
    }
    if !detectable_subsets(net, schedule)?.contains(&anchor) {
        return Err(Error::NotInDetectableSet(anchor));
    }
    let fixed_point = dare_fixed_point(net, anchor, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
    let alphabet = alphabet_for(net, schedule, opts.alphabet);
    let maps = MapFamily::new(net, alphabet.iter().copied())?;

    let mut points = vec![SupportPoint {
        cov: fixed_point.value.clone(),
        word: Vec::new(),
    }];
    let mut index = DedupIndex::new(opts.delta);
    index.insert(&points[0].cov, 0);
    let mut counts_per_depth = vec![1];
    let mut frontier = vec![0usize];
    let mut cap_reached = points.len() >= opts.node_cap;

    for _level in 1..=opts.depth {
        if frontier.is_empty() || cap_reached {
            break;
        }
        // children in (parent order, map id) order
        let children: Vec<Result<(usize, SubsetId, CovMatrix)>> = frontier
            .par_iter()
            .flat_map_iter(|&parent| {
                let maps = &maps;
                let points = &points;
                alphabet
                    .iter()
                    .map(move |&l| maps.apply(l, &points[parent].cov).map(|c| (parent, l, c)))
            })
            .collect();
        let mut next = Vec::new();
        for child in children {
            let (parent, l, cov) = child?;
            if index.find(&cov, &points)?.is_some() {
                continue;
            }
            if points.len() >= opts.node_cap {
                cap_reached = true;
                break;
            }
            let mut word = Vec::with_capacity(points[parent].word.len() + 1);
            word.push(l);
            word.extend_from_slice(&points[parent].word);
            let k = points.len();
            index.insert(&cov, k);
            points.push(SupportPoint { cov, word });
            next.push(k);
        }
        counts_per_depth.push(next.len());
        frontier = next;
    }
    let depth_truncated = !frontier.is_empty() && counts_per_depth.len() > opts.depth;

    Ok(SupportSet {
        anchor,
        fixed_point,
        depth: opts.depth,
        delta: opts.delta,
        alphabet,
        points,
        counts_per_depth,
        depth_truncated,
        cap_reached,
    })
}

/// Symmetrized Hausdorff distance in spectral norm between two point sets.
pub fn hausdorff_points(a: &[CovMatrix], b: &[CovMatrix]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let one_sided = |x: &[CovMatrix], y: &[CovMatrix]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in x {
            worst = worst.max(nearest_distance(p, y.iter())?);
        }
        Ok(worst)
    };
    Ok(one_sided(a, b)?.max(one_sided(b, a)?))
}

pub fn hausdorff_distance(s1: &SupportSet, s2: &SupportSet) -> Result<f64> {
    let a: Vec<CovMatrix> = s1.covs().cloned().collect();
    let b: Vec<CovMatrix> = s2.covs().cloned().collect();
    hausdorff_points(&a, &b)
}

/// `r_s = ||f_j^s(P*_i) - P*_j||` for `s = 1..=s_max`.
pub fn cross_subset_limit_check(
    net: &SensorNetwork,
    schedule: &Schedule,
    i: SubsetId,
    j: SubsetId,
    s_max: usize,
) -> Result<Vec<f64>> {
    let detectable = detectable_subsets(net, schedule)?;
    for s in [i, j] {
        if !detectable.contains(&s) {
            return Err(Error::NotInDetectableSet(s));
        }
    }
    let start = dare_fixed_point(net, i, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?.value;
    let target = dare_fixed_point(net, j, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?.value;
    let maps = MapFamily::new(net, [j])?;
    let mut x = start;
    let mut out = Vec::with_capacity(s_max);
    for s in 0..s_max {
        x = maps.apply(j, &x).map_err(|e| e.at_step(s))?;
        out.push(distance(&x, &target)?);
    }
    Ok(out)
}
