//! Circular run statistics on independent Bernoulli trials.
//!
//! Trials `ξ_0, …, ξ_{L−1}` are read circularly. `X_j` indicates that the
//! pattern `0^{k1} 1^{k2}` starts at position `j` (so it reads
//! `ξ_j … ξ_{j+k1+k2−1}`), and `W = Σ_j X_j`. Three families are covered:
//! `(1,1)`-runs (failure followed by success, `L = N`), `(k1,k2)`-runs
//! (`L = N·m` with `m = k1 + k2 − 1`) and `k`-runs (`k1 = 0`, `L = N`).
//!
//! The exact law comes from a transfer DP over the last `window` trials,
//! closed around the circle by conditioning on the opening window. Brute
//! force enumeration is kept as the oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist_core::{factorial_cumulants, CumulantTriple, LatticeMeasure};
use crate::error::{Error, Result};

/// Largest DP window (pattern length − 1).
pub const MAX_WINDOW: usize = 14;
/// Largest trial count for exhaustive enumeration.
pub const MAX_BRUTE_FORCE: usize = 22;
/// Largest number of trials enumerated when conditioning on a window.
pub const MAX_CONDITIONING_BITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunsKind {
    OneOne,
    K1k2,
    Kruns,
}

impl std::fmt::Display for RunsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunsKind::OneOne => "one_one",
            RunsKind::K1k2 => "k1k2",
            RunsKind::Kruns => "kruns",
        })
    }
}

impl std::str::FromStr for RunsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_one" | "11" => Ok(RunsKind::OneOne),
            "k1k2" => Ok(RunsKind::K1k2),
            "kruns" => Ok(RunsKind::Kruns),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsModel {
    pub kind: RunsKind,
    pub k1: usize,
    pub k2: usize,
    /// Success probability of each trial; its length is the trial count.
    pub probs: Vec<f64>,
}

/// Radii of the nested neighborhoods `A_i ⊆ B_i ⊆ C_i` around an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhoods {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl Neighborhoods {
    /// Indices within `radius` of `i` on a circle of `len`, in offset order
    /// `−radius..=radius`, without repeats when the circle is short.
    pub fn members(i: usize, radius: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * radius + 1);
        let mut seen = vec![false; len];
        for d in -(radius as i64)..=radius as i64 {
            let j = (i as i64 + d).rem_euclid(len as i64) as usize;
            if !seen[j] {
                seen[j] = true;
                out.push(j);
            }
        }
        out
    }
}

impl RunsModel {
    pub fn one_one(probs: Vec<f64>) -> Result<Self> {
        Self::checked(RunsKind::OneOne, 1, 1, probs)
    }

    pub fn k1k2(k1: usize, k2: usize, probs: Vec<f64>) -> Result<Self> {
        if k1 == 0 || k2 == 0 {
            return Err(Error::Domain("(k1,k2)-runs need k1, k2 >= 1".into()));
        }
        if k1 + k2 == 2 {
            return Err(Error::Domain("k1 = k2 = 1 is the (1,1) model".into()));
        }
        Self::checked(RunsKind::K1k2, k1, k2, probs)
    }

    pub fn kruns(k: usize, probs: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("k-runs need k >= 1".into()));
        }
        Self::checked(RunsKind::Kruns, 0, k, probs)
    }

    /// Identical success probability `p` with the trial count implied by `N`:
    /// `N` for `(1,1)` and `k`-runs, `N·m` for `(k1,k2)`-runs. For `k`-runs
    /// `k2` is `k` and `k1` is ignored.
    pub fn identical(kind: RunsKind, big_n: usize, k1: usize, k2: usize, p: f64) -> Result<Self> {
        match kind {
            RunsKind::OneOne => Self::one_one(vec![p; big_n]),
            RunsKind::K1k2 => Self::k1k2(k1, k2, vec![p; big_n * (k1 + k2 - 1).max(1)]),
            RunsKind::Kruns => Self::kruns(k2, vec![p; big_n]),
        }
    }

    fn checked(kind: RunsKind, k1: usize, k2: usize, probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Domain(format!("trial probability {p} is outside (0, 1)")));
        }
        if probs.len() < k1 + k2 {
            return Err(Error::Domain(format!(
                "{} trials cannot hold a pattern of length {}",
                probs.len(),
                k1 + k2
            )));
        }
        Ok(RunsModel { kind, k1, k2, probs })
    }

    pub fn pattern(&self) -> Vec<u8> {
        let mut p = vec![0u8; self.k1];
        p.extend(std::iter::repeat_n(1u8, self.k2));
        p
    }

    pub fn pattern_len(&self) -> usize {
        self.k1 + self.k2
    }

    /// Pattern length − 1; the `m` of the `(k1,k2)` family.
    pub fn window(&self) -> usize {
        self.pattern_len() - 1
    }

    pub fn trials(&self) -> usize {
        self.probs.len()
    }

    /// `N` as used by the family: trials divided by `m` for `(k1,k2)`-runs.
    pub fn big_n(&self) -> usize {
        match self.kind {
            RunsKind::K1k2 => self.trials() / self.window(),
            _ => self.trials(),
        }
    }

    /// The common success probability, when all trials share one.
    pub fn identical_p(&self) -> Option<f64> {
        let p = self.probs[0];
        self.probs.iter().all(|&q| q == p).then_some(p)
    }

    /// `E X_j` for every start `j`.
    pub fn indicator_means(&self) -> Vec<f64> {
        let l = self.trials();
        (0..l)
            .map(|j| {
                let mut b = 1.0;
                for t in 0..self.k1 {
                    b *= 1.0 - self.probs[(j + t) % l];
                }
                for t in 0..self.k2 {
                    b *= self.probs[(j + self.k1 + t) % l];
                }
                b
            })
            .collect()
    }

    /// Neighborhood radii: 1, 2, 3 for `(1,1)`; `m+1` multiples for
    /// `(k1,k2)`; `k` multiples for `k`-runs.
    pub fn neighborhoods(&self) -> Neighborhoods {
        let r = match self.kind {
            RunsKind::OneOne => 1,
            RunsKind::K1k2 => self.window() + 1,
            RunsKind::Kruns => self.k2,
        };
        Neighborhoods { a: r, b: 2 * r, c: 3 * r }
    }

    /// Pattern bits packed with pattern position `t` at bit `t`.
    fn pattern_code(&self) -> u64 {
        self.pattern().iter().enumerate().map(|(t, &b)| (b as u64) << t).sum()
    }
}

/// Law of the number of counted pattern starts on a circle of trials.
///
/// The first `w = pattern_len − 1` trials are enumerated; for each opening
/// the DP carries (last `w` trials, count) forward, and the wrap-around
/// starts are closed by feeding the opening trials again.
fn occurrence_law(probs: &[f64], pattern: &[u8], counted: &[bool]) -> Result<Vec<f64>> {
    let l = probs.len();
    let plen = pattern.len();
    let w = plen - 1;
    if w > MAX_WINDOW {
        return Err(Error::StateSpace(format!("window {w} exceeds {MAX_WINDOW}")));
    }
    if l < plen {
        return Err(Error::Domain("fewer trials than the pattern length".into()));
    }
    let n_states = 1usize << w;
    let state_mask = n_states - 1;
    let full_mask = (1usize << plen) - 1;
    // MSB-first: the oldest trial in a window is its highest bit
    let pat = pattern.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
    let mut total = vec![0.0; 1];
    for s0 in 0..n_states {
        let bit0 = |t: usize| (s0 >> (w - 1 - t)) & 1;
        let mut w0 = 1.0;
        for t in 0..w {
            w0 *= if bit0(t) == 1 { probs[t] } else { 1.0 - probs[t] };
        }
        if w0 == 0.0 {
            continue;
        }
        let mut dist: Vec<Vec<f64>> = vec![Vec::new(); n_states];
        dist[s0] = vec![w0];
        for t in w..l + w {
            let p1 = if t < l { probs[t] } else { bit0(t - l) as f64 };
            let count_here = counted[t - w];
            let mut next: Vec<Vec<f64>> = vec![Vec::new(); n_states];
            for (state, row) in dist.iter().enumerate() {
                if row.is_empty() {
                    continue;
                }
                for b in 0..2usize {
                    let pb = if b == 1 { p1 } else { 1.0 - p1 };
                    if pb == 0.0 {
                        continue;
                    }
                    let win = ((state << 1) | b) & full_mask;
                    let hit = (count_here && win == pat) as usize;
                    let dst = &mut next[win & state_mask];
                    if dst.len() < row.len() + hit {
                        dst.resize(row.len() + hit, 0.0);
                    }
                    for (c, &v) in row.iter().enumerate() {
                        dst[c + hit] += v * pb;
                    }
                }
            }
            dist = next;
        }
        for row in dist {
            if total.len() < row.len() {
                total.resize(row.len(), 0.0);
            }
            for (c, v) in row.into_iter().enumerate() {
                total[c] += v;
            }
        }
    }
    Ok(total)
}

/// Exact law of `W` by the transfer DP.
pub fn exact_law(model: &RunsModel) -> Result<LatticeMeasure> {
    let counted = vec![true; model.trials()];
    let w = occurrence_law(&model.probs, &model.pattern(), &counted)?;
    Ok(LatticeMeasure::new(0, w))
}

/// Per-trial weight tables so a packed assignment's probability is two
/// lookups.
struct SplitWeights {
    low_bits: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl SplitWeights {
    fn new(probs: &[f64]) -> Self {
        let low_bits = probs.len() / 2;
        let table = |ps: &[f64]| -> Vec<f64> {
            (0..1usize << ps.len())
                .map(|m| ps.iter().enumerate().map(|(t, &p)| if (m >> t) & 1 == 1 { p } else { 1.0 - p }).product())
                .collect()
        };
        SplitWeights { low_bits, low: table(&probs[..low_bits]), high: table(&probs[low_bits..]) }
    }

    fn weight(&self, bits: u64) -> f64 {
        let lm = (1u64 << self.low_bits) - 1;
        self.low[(bits & lm) as usize] * self.high[(bits >> self.low_bits) as usize]
    }
}

/// Exhaustive `2^L` enumeration.
pub fn brute_force_law(model: &RunsModel) -> Result<LatticeMeasure> {
    let l = model.trials();
    if l > MAX_BRUTE_FORCE {
        return Err(Error::StateSpace(format!("{l} trials exceed the enumeration limit {MAX_BRUTE_FORCE}")));
    }
    let plen = model.pattern_len();
    let pat = model.pattern_code();
    let pmask = (1u64 << plen) - 1;
    let weights = SplitWeights::new(&model.probs);
    // Neumaier summation: 2^L terms per run would otherwise cost ~1e-13
    let (mut out, mut carry) = (vec![0.0; l + 1], vec![0.0; l + 1]);
    for bits in 0..1u64 << l {
        let doubled = bits | (bits << l);
        let count = (0..l).filter(|&j| (doubled >> j) & pmask == pat).count();
        let (s, v) = (out[count], weights.weight(bits));
        let t = s + v;
        carry[count] += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        out[count] = t;
    }
    Ok(LatticeMeasure::new(0, out.iter().zip(&carry).map(|(s, c)| s + c).collect()))
}

/// `Γ` from the local sums for a pattern that cannot overlap itself.
///
/// `Γ₁ = Σ b_i`, `Γ₂ = −Σ_i Σ_{j∈A_i} b_i b_j` and
/// `Γ₃ = Σ_i b_i (Σ_{j∈A_i} b_j)² + ½ Σ_i Σ_{j∈B_i∖A_i} Σ_{l∈A_i∩A_j} b_i b_j b_l`,
/// where `A_i` holds the starts whose occurrences would overlap `i`
/// (radius `m`) and `B_i` has radius `2m`. Needs `L ≥ 4m + 1` so that
/// these sets do not wrap onto themselves.
pub fn closed_cumulants_k1k2(probs: &[f64], k1: usize, k2: usize) -> Result<CumulantTriple> {
    let model = if k1 == 1 && k2 == 1 { RunsModel::one_one(probs.to_vec())? } else { RunsModel::k1k2(k1, k2, probs.to_vec())? };
    let l = model.trials();
    let m = model.window();
    if l < 4 * m + 1 {
        return Err(Error::Domain(format!("closed cumulants need at least {} trials", 4 * m + 1)));
    }
    let b = model.indicator_means();
    let at = |i: i64| b[i.rem_euclid(l as i64) as usize];
    let mi = m as i64;
    let (mut g1, mut g2, mut g3) = (0.0, 0.0, 0.0);
    for i in 0..l as i64 {
        let bi = at(i);
        let local: f64 = (-mi..=mi).map(|d| at(i + d)).sum();
        g1 += bi;
        g2 -= bi * local;
        g3 += bi * local * local;
        // j at offset d ∈ (m, 2m]; A_i ∩ A_j is offsets [d − m, m]
        for d in (mi + 1..=2 * mi).flat_map(|d| [d, -d]) {
            let (lo, hi) = if d > 0 { (d - mi, mi) } else { (-mi, d + mi) };
            let shared: f64 = (lo..=hi).map(|e| at(i + e)).sum();
            g3 += 0.5 * bi * at(i + d) * shared;
        }
    }
    Ok(CumulantTriple::new(g1, g2, g3))
}

pub fn closed_cumulants_11(probs: &[f64]) -> Result<CumulantTriple> {
    closed_cumulants_k1k2(probs, 1, 1)
}

/// `E W³` for `k`-runs with identical `p`, summed over the relative
/// positions of three occurrence indicators.
///
/// With `P(e) = p^e` and indices taken relative to `X_1`, the pairs `(j, l)`
/// fall into five groups: both at offset zero or one of them there; the
/// nearer index overlapping `X_1` (`0 < d < k`); the nearer index exactly
/// adjacent (`d = k`); separated by less than a pattern length from a third
/// overlapping run (`k < d < 2k − 1`); and the rest, where only overlaps
/// with the farther index remain. Valid for `N ≥ 3k − 2`.
pub fn kruns_third_moment(p: f64, k: usize, big_n: usize) -> f64 {
    let pw = |e: usize| p.powi(e as i32);
    let n = big_n as f64;
    let sum_range = |from: usize, to_excl: usize, base: usize| -> f64 { (from..to_excl).map(|s| pw(base + s)).sum() };
    let ca1 = pw(k) + 2.0 * sum_range(1, k, k) + (n - 2.0 * k as f64 + 1.0) * pw(2 * k);
    let ca2: f64 = (1..k)
        .map(|d| {
            2.0 * ((d as f64 + 1.0) * pw(k + d)
                + 2.0 * sum_range(1, k, k + d)
                + (n - d as f64 - 2.0 * k as f64 + 1.0) * pw(2 * k + d))
        })
        .sum();
    let ca3 = 2.0 * ((k as f64 + 1.0) * pw(2 * k) + 2.0 * sum_range(1, k, 2 * k) + (n - 3.0 * k as f64 + 1.0) * pw(3 * k));
    let ca4: f64 = (k + 1..(2 * k).saturating_sub(1))
        .map(|d| {
            let g = d - k;
            2.0 * (2.0 * pw(2 * k)
                + (k as f64 - g as f64 + 1.0) * pw(k + d)
                + 2.0 * sum_range(1, g, 2 * k)
                + 2.0 * sum_range(1, k, 2 * k)
                + (n - d as f64 - 2.0 * k as f64 + 1.0) * pw(3 * k))
        })
        .sum();
    let d0 = (2 * k - 1).max(k + 1) as f64;
    let cnt5 = n - 2.0 * d0 + 1.0;
    let ca5 = cnt5 * (2.0 * pw(2 * k) + 4.0 * sum_range(1, k, 2 * k) + (n - 4.0 * k as f64 + 2.0) * pw(3 * k));
    n * (ca1 + ca2 + ca3 + ca4 + ca5)
}

/// `Γ` for `k`-runs with identical `p`: `Γ₁ = Np^k`,
/// `Γ₂ = Np^k/(1−p)·[2(p − p^k) − (2k−1)p^k(1−p)]` and `Γ₃` assembled from
/// `E W³`. Short circles (`N < 4k − 2`) use the exact law instead.
pub fn closed_cumulants_kruns(p: f64, k: usize, big_n: usize) -> Result<CumulantTriple> {
    if !(p > 0.0 && p < 1.0) || k == 0 {
        return Err(Error::Domain(format!("k-runs need p in (0,1) and k >= 1, got p = {p}, k = {k}")));
    }
    if big_n < 4 * k - 2 {
        return Ok(factorial_cumulants(&exact_law(&RunsModel::kruns(k, vec![p; big_n])?)?));
    }
    let n = big_n as f64;
    let pk = p.powi(k as i32);
    let m1 = n * pk;
    let g2 = m1 / (1.0 - p) * (2.0 * (p - pk) - (2.0 * k as f64 - 1.0) * pk * (1.0 - p));
    let m2 = g2 + m1 + m1 * m1;
    let m3 = kruns_third_moment(p, k, big_n);
    let g3 = 0.5 * (m3 - 3.0 * m1 * m2 - 3.0 * m2 + 2.0 * m1.powi(3) + 3.0 * m1 * m1 + 2.0 * m1);
    Ok(CumulantTriple::new(m1, g2, g3))
}

/// Closed-form cumulants for any model, where one exists.
pub fn closed_cumulants(model: &RunsModel) -> Result<CumulantTriple> {
    match model.kind {
        RunsKind::OneOne | RunsKind::K1k2 => closed_cumulants_k1k2(&model.probs, model.k1, model.k2),
        RunsKind::Kruns => {
            let p = model
                .identical_p()
                .ok_or_else(|| Error::Domain("closed k-runs cumulants need identical p".into()))?;
            closed_cumulants_kruns(p, model.k2, model.trials())
        }
    }
}

/// One value of the conditioning vector with its probability and the
/// conditional law of the counted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEntry {
    /// `X_j` for the conditioning indices, in table order.
    pub x: Vec<u8>,
    pub weight: f64,
    pub law: LatticeMeasure,
}

/// Mixture decomposition of `W` over the values of a block of indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLawTable {
    /// Conditioning indices in offset order.
    pub members: Vec<usize>,
    pub entries: Vec<ConditionalEntry>,
}

impl ConditionalLawTable {
    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// `Σ weight · law`, which must give back the unconditional law.
    pub fn mixture(&self) -> LatticeMeasure {
        let hi = self.entries.iter().map(|e| e.law.max_index()).max().unwrap_or(0).max(0) as usize;
        let mut w = vec![0.0; hi + 1];
        for e in &self.entries {
            for (k, v) in e.law.iter() {
                w[k as usize] += e.weight * v;
            }
        }
        LatticeMeasure::new(0, w)
    }

    /// Largest `D(W | X = x)` over the values `x` with positive probability.
    pub fn max_smoothness(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| crate::dist_core::smoothness_d(&e.law))
            .fold(0.0, f64::max)
    }
}

/// `L(W | X_{C_i})` with `C_i` the model's outer neighborhood of `i`.
pub fn conditional_laws(model: &RunsModel, i: usize) -> Result<ConditionalLawTable> {
    let r = model.neighborhoods().c;
    let l = model.trials() as i64;
    let len = (2 * r + 1).min(model.trials());
    let start = if len == model.trials() { 0 } else { (i as i64 - r as i64).rem_euclid(l) as usize };
    conditional_laws_on(model, start, len, &vec![true; model.trials()])
}

/// Law of `Σ_{j counted} X_j` given the indicators `X_start, …, X_{start+len−1}`.
///
/// The trials that decide those indicators are enumerated; the rest of the
/// sum only sees the first and last `window` of them, so its law is computed
/// once per value of those boundary trials by the DP with them frozen, and
/// each conditioning value gets the probability-weighted mixture.
pub fn conditional_laws_on(model: &RunsModel, start: usize, len: usize, counted: &[bool]) -> Result<ConditionalLawTable> {
    let l = model.trials();
    let w = model.window();
    let plen = model.pattern_len();
    if len == 0 || len > l || counted.len() != l {
        return Err(Error::Domain("conditioning block must be a nonempty part of the circle".into()));
    }
    let members: Vec<usize> = (0..len).map(|o| (start + o) % l).collect();
    let pat = model.pattern_code();
    let pmask = (1u64 << plen) - 1;

    if len + w >= l {
        // the block reads the whole circle
        if l > MAX_CONDITIONING_BITS {
            return Err(Error::StateSpace(format!("{l} trials exceed the conditioning limit")));
        }
        let weights = SplitWeights::new(&model.probs);
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for bits in 0..1u64 << l {
            let doubled = bits | (bits << l);
            let hit = |j: usize| (doubled >> j) & pmask == pat;
            let key = members.iter().enumerate().fold(0u64, |acc, (o, &j)| acc | ((hit(j) as u64) << o));
            let count = (0..l).filter(|&j| counted[j] && hit(j)).count();
            let row = groups.entry(key).or_insert_with(|| vec![0.0; l + 1]);
            row[count] += weights.weight(bits);
        }
        return Ok(finish_table(groups.into_iter().map(|(k, row)| (k, LatticeMeasure::new(0, row))).collect(), members));
    }

    let span = len + w;
    if span > MAX_CONDITIONING_BITS {
        return Err(Error::StateSpace(format!("conditioning reads {span} trials, limit {MAX_CONDITIONING_BITS}")));
    }
    let span_probs: Vec<f64> = (0..span).map(|t| model.probs[(start + t) % l]).collect();
    let weights = SplitWeights::new(&span_probs);
    // boundary: first w and last w trials of the span
    let boundary: Vec<usize> = {
        let mut v: Vec<usize> = (0..w).chain(span - w..span).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let boundary_key = |bits: u64| boundary.iter().enumerate().fold(0u64, |acc, (o, &t)| acc | (((bits >> t) & 1) << o));

    // (x, boundary) → weight
    let mut cells: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for bits in 0..1u64 << span {
        let wt = weights.weight(bits);
        if wt == 0.0 {
            continue;
        }
        let x = (0..len).fold(0u64, |acc, o| acc | ((((bits >> o) & pmask == pat) as u64) << o));
        *cells.entry((x, boundary_key(bits))).or_insert(0.0) += wt;
    }

    let mut rest_counted = counted.to_vec();
    for &j in &members {
        rest_counted[j] = false;
    }
    let mut rest_laws: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(_, bkey) in cells.keys() {
        if rest_laws.contains_key(&bkey) {
            continue;
        }
        let mut probs = model.probs.clone();
        for (o, &t) in boundary.iter().enumerate() {
            probs[(start + t) % l] = ((bkey >> o) & 1) as f64;
        }
        rest_laws.insert(bkey, occurrence_law(&probs, &model.pattern(), &rest_counted)?);
    }

    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (&(x, bkey), &wt) in &cells {
        let shift = members.iter().enumerate().filter(|&(o, &j)| counted[j] && (x >> o) & 1 == 1).count();
        let rest = &rest_laws[&bkey];
        let row = groups.entry(x).or_insert_with(|| vec![0.0; l + 1]);
        for (c, &v) in rest.iter().enumerate() {
            if c + shift <= l {
                row[c + shift] += wt * v;
            }
        }
    }
    Ok(finish_table(groups.into_iter().map(|(k, row)| (k, LatticeMeasure::new(0, row))).collect(), members))
}

/// Normalizes grouped joint weights into (probability, conditional law)
/// entries, sorted by the packed conditioning value for determinism.
fn finish_table(mut groups: Vec<(u64, LatticeMeasure)>, members: Vec<usize>) -> ConditionalLawTable {
    let len = members.len();
    groups.sort_by_key(|(k, _)| *k);
    let entries = groups
        .into_iter()
        .filter_map(|(key, joint)| {
            let weight = joint.mass();
            if weight <= 0.0 {
                return None;
            }
            let law = LatticeMeasure::new(joint.offset, joint.weights.iter().map(|v| v / weight).collect());
            let x = (0..len).map(|o| ((key >> o) & 1) as u8).collect();
            Some(ConditionalEntry { x, weight, law })
        })
        .collect();
    ConditionalLawTable { members, entries }
}

/// The 1-dependent regrouping of `(k1,k2)`-runs into blocks
/// `T_i = X_{im} + … + X_{im+m−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub m: usize,
    pub blocks: usize,
    pub p: f64,
    /// Largest conditional probability that a block is empty given its two
    /// neighboring blocks.
    pub a_bar: f64,
}

/// Blocks for a `(k1,k2)` model with identical `p` (or `(1,1)`, where
/// `m = 1` and `T_i = X_i`).
pub fn block_sums(model: &RunsModel) -> Result<BlockStructure> {
    if model.kind == RunsKind::Kruns {
        return Err(Error::Domain("block regrouping applies to (k1,k2)-runs".into()));
    }
    let p = model.identical_p().ok_or_else(|| Error::Domain("block regrouping needs identical p".into()))?;
    let m = model.window();
    let blocks = model.trials() / m;
    if blocks < 4 {
        return Err(Error::Domain("need at least four blocks".into()));
    }
    // T_{j−1}, T_j, T_{j+1} read 4m consecutive trials
    let span = 4 * m;
    if span > MAX_CONDITIONING_BITS {
        return Err(Error::StateSpace(format!("block neighborhood reads {span} trials")));
    }
    let pat = model.pattern_code();
    let pmask = (1u64 << model.pattern_len()) - 1;
    let weights = SplitWeights::new(&vec![p; span]);
    let block = |bits: u64, b: usize| (b * m..(b + 1) * m).filter(|&o| (bits >> o) & pmask == pat).count();
    let mut joint = BTreeMap::<(usize, usize), (f64, f64)>::new();
    for bits in 0..1u64 << span {
        let wt = weights.weight(bits);
        let e = joint.entry((block(bits, 0), block(bits, 2))).or_insert((0.0, 0.0));
        e.0 += wt;
        if block(bits, 1) == 0 {
            e.1 += wt;
        }
    }
    let a_bar = joint.values().filter(|(t, _)| *t > 0.0).map(|(t, z)| z / t).fold(0.0, f64::max);
    Ok(BlockStructure { m, blocks, p, a_bar })
}

/// Joint law of the block values `T_{i−radius}, …, T_{i+radius}` (identical
/// `p`, so the same for every `i`), by enumerating the trials they read.
pub fn block_window_law(model: &RunsModel, radius: usize) -> Result<Vec<(Vec<u8>, f64)>> {
    let p = model.identical_p().ok_or_else(|| Error::Domain("block windows need identical p".into()))?;
    let m = model.window();
    let width = 2 * radius + 1;
    if model.trials() / m < width + 1 {
        return Err(Error::Domain("circle too short for the block window".into()));
    }
    let span = (width + 1) * m;
    if span > MAX_CONDITIONING_BITS {
        return Err(Error::StateSpace(format!("block window reads {span} trials")));
    }
    let pat = model.pattern_code();
    let pmask = (1u64 << model.pattern_len()) - 1;
    let weights = SplitWeights::new(&vec![p; span]);
    let mut joint: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for bits in 0..1u64 << span {
        let t: Vec<u8> =
            (0..width).map(|b| (b * m..(b + 1) * m).filter(|&o| (bits >> o) & pmask == pat).count() as u8).collect();
        *joint.entry(t).or_insert(0.0) += weights.weight(bits);
    }
    let mut out: Vec<_> = joint.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Joint law of `X_{i−radius}, …, X_{i+radius}` (no conditional laws).
pub fn window_law(model: &RunsModel, i: usize, radius: usize) -> Result<Vec<(Vec<u8>, f64)>> {
    let l = model.trials();
    let len = 2 * radius + 1;
    let w = model.window();
    if len + w > l {
        let table = conditional_laws_on(model, (i + l - radius % l) % l, len.min(l), &vec![false; l])?;
        return Ok(table.entries.into_iter().map(|e| (e.x, e.weight)).collect());
    }
    let span = len + w;
    if span > MAX_CONDITIONING_BITS + 8 {
        return Err(Error::StateSpace(format!("window reads {span} trials")));
    }
    let start = (i as i64 - radius as i64).rem_euclid(l as i64) as usize;
    let span_probs: Vec<f64> = (0..span).map(|t| model.probs[(start + t) % l]).collect();
    let weights = SplitWeights::new(&span_probs);
    let pat = model.pattern_code();
    let pmask = (1u64 << model.pattern_len()) - 1;
    let mut joint: BTreeMap<u64, f64> = BTreeMap::new();
    for bits in 0..1u64 << span {
        let x = (0..len).fold(0u64, |acc, o| acc | ((((bits >> o) & pmask == pat) as u64) << o));
        *joint.entry(x).or_insert(0.0) += weights.weight(bits);
    }
    let mut out: Vec<_> = joint.into_iter().map(|(k, v)| ((0..len).map(|o| ((k >> o) & 1) as u8).collect(), v)).collect();
    out.sort_by(|a: &(Vec<u8>, f64), b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist_core::{make_binomial, raw_moments};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn assert_cumulants(a: CumulantTriple, b: CumulantTriple, tol: f64) {
        assert!(
            close(a.gamma1, b.gamma1, tol) && close(a.gamma2, b.gamma2, tol) && close(a.gamma3, b.gamma3, tol),
            "{a:?} vs {b:?}"
        );
    }

    #[test]
    fn one_one_two_trials() {
        let m = RunsModel::one_one(vec![0.5, 0.5]).unwrap();
        let law = exact_law(&m).unwrap();
        assert!(law.linf_distance(&LatticeMeasure::new(0, vec![0.5, 0.5])) < 1e-15);
        assert!(law.linf_distance(&brute_force_law(&m).unwrap()) < 1e-15);
    }

    #[test]
    fn single_success_runs_are_binomial() {
        let m = RunsModel::kruns(1, vec![0.3; 12]).unwrap();
        assert!(exact_law(&m).unwrap().linf_distance(&make_binomial(12, 0.3).unwrap()) < 1e-15);
    }

    #[test]
    fn k1k2_small_case_matches_enumeration() {
        let m = RunsModel::identical(RunsKind::K1k2, 3, 1, 2, 0.5).unwrap();
        assert_eq!(m.trials(), 6);
        assert!(exact_law(&m).unwrap().linf_distance(&brute_force_law(&m).unwrap()) < 1e-14);
    }

    #[test]
    fn brute_force_refuses_long_sequences() {
        let m = RunsModel::one_one(vec![0.5; 23]).unwrap();
        assert!(matches!(brute_force_law(&m), Err(Error::StateSpace(_))));
    }

    #[test]
    fn identical_one_one_cumulants() {
        let (n, p) = (100usize, 0.6);
        let g = closed_cumulants_11(&vec![p; n]).unwrap();
        let (nf, a) = (n as f64, p * (1.0 - p));
        assert_cumulants(g, CumulantTriple::new(nf * a, -3.0 * nf * a * a, 10.0 * nf * a.powi(3)), 1e-13);
        assert_cumulants(g, CumulantTriple::new(24.0, -17.28, 13.824), 1e-13);
        let small = vec![p; 12];
        let exact = factorial_cumulants(&exact_law(&RunsModel::one_one(small.clone()).unwrap()).unwrap());
        assert_cumulants(closed_cumulants_11(&small).unwrap(), exact, 1e-10);
    }

    #[test]
    fn identical_k1k2_cumulants() {
        let (k1, k2, big_n, p) = (2usize, 1usize, 20usize, 0.35);
        let m = (k1 + k2 - 1) as f64;
        let model = RunsModel::identical(RunsKind::K1k2, big_n, k1, k2, p).unwrap();
        let b = (1.0 - p).powi(k1 as i32) * p.powi(k2 as i32);
        let nm = big_n as f64 * m;
        let expected = CumulantTriple::new(
            nm * b,
            -nm * (2.0 * m + 1.0) * b * b,
            nm * ((2.0 * m + 1.0).powi(2) + 0.5 * m * (m + 1.0)) * b.powi(3),
        );
        assert_cumulants(closed_cumulants(&model).unwrap(), expected, 1e-12);
    }

    #[test]
    fn kruns_two_cumulants_small() {
        let g = closed_cumulants_kruns(0.3, 2, 10).unwrap();
        assert!(close(g.gamma1, 0.9, 1e-14));
        assert!(close(g.gamma2, 0.297, 1e-13));
        let exact = factorial_cumulants(&exact_law(&RunsModel::kruns(2, vec![0.3; 10]).unwrap()).unwrap());
        assert_cumulants(g, exact, 1e-10);
    }

    #[test]
    fn kruns_third_moment_matches_exact_law() {
        for (big_n, k, p) in [(14, 3, 0.3), (12, 2, 0.4), (10, 1, 0.3), (14, 4, 0.6), (13, 5, 0.7), (7, 3, 0.5)] {
            let law = exact_law(&RunsModel::kruns(k, vec![p; big_n]).unwrap()).unwrap();
            let m3 = raw_moments(&law)[2];
            assert!(close(kruns_third_moment(p, k, big_n), m3, 1e-10), "N={big_n} k={k}");
        }
    }

    #[test]
    fn kruns_third_cumulant_limit() {
        // |Γ₃/(Np^k) − 3p²/(1−p)²| measured against k·p^k
        let p: f64 = 0.3;
        let limit = 3.0 * p * p / (1.0 - p).powi(2);
        let ratios: Vec<f64> = (2..=24)
            .step_by(2)
            .map(|k| {
                let n = 10 * k + 100;
                let g = closed_cumulants_kruns(p, k, n).unwrap();
                (g.gamma3 / (n as f64 * p.powi(k as i32)) - limit).abs() / (k as f64 * p.powi(k as i32))
            })
            .collect();
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(c < 4.0, "{ratios:?}");
        // a bare p^k normalization keeps growing
        let k = 24;
        let n = 10 * k + 100;
        let g = closed_cumulants_kruns(p, k, n).unwrap();
        let bare = (g.gamma3 / (n as f64 * p.powi(k as i32)) - limit).abs() / p.powi(k as i32);
        assert!(bare > 20.0);
    }

    #[test]
    fn kruns_large_circle_is_signed_regime() {
        let g = closed_cumulants_kruns(0.3, 3, 200).unwrap();
        let t = crate::matching::match_m2(&g).unwrap();
        assert!(t.lambda < 0.0);
        let g = closed_cumulants_kruns(0.3, 3, 100).unwrap();
        assert!(close(g.gamma1, 2.7, 1e-14) && close(g.gamma2, 1.7415, 1e-12));
    }

    #[test]
    fn conditional_table_reassembles_law() {
        let model = RunsModel::one_one(vec![0.3, 0.5, 0.6, 0.4, 0.7, 0.2, 0.55, 0.45, 0.35, 0.65]).unwrap();
        let table = conditional_laws(&model, 2).unwrap();
        assert!((table.total_weight() - 1.0).abs() < 1e-12);
        for e in &table.entries {
            assert!((e.law.mass() - 1.0).abs() < 1e-12);
        }
        assert!(table.mixture().linf_distance(&exact_law(&model).unwrap()) < 1e-12);
    }

    /// `E D(W | X_{C_i})` by enumerating every sequence and grouping by the
    /// indicator values on `C_i`.
    fn brute_expected_smoothness(model: &RunsModel, i: usize) -> f64 {
        let l = model.trials();
        let c = Neighborhoods::members(i, model.neighborhoods().c, l);
        let pat = model.pattern_code();
        let pmask = (1u64 << model.pattern_len()) - 1;
        let mut groups: BTreeMap<Vec<u8>, Vec<f64>> = BTreeMap::new();
        for bits in 0..1u64 << l {
            let wt: f64 = (0..l).map(|t| if (bits >> t) & 1 == 1 { model.probs[t] } else { 1.0 - model.probs[t] }).product();
            let doubled = bits | (bits << l);
            let x: Vec<u8> = (0..l).map(|j| ((doubled >> j) & pmask == pat) as u8).collect();
            let key: Vec<u8> = c.iter().map(|&j| x[j]).collect();
            let w = x.iter().map(|&v| v as usize).sum::<usize>();
            groups.entry(key).or_insert_with(|| vec![0.0; l + 1])[w] += wt;
        }
        groups
            .values()
            .map(|row| {
                let mass: f64 = row.iter().sum();
                let law = LatticeMeasure::new(0, row.iter().map(|v| v / mass).collect());
                mass * crate::dist_core::smoothness_d(&law)
            })
            .sum()
    }

    #[test]
    fn conditional_smoothness_matches_enumeration() {
        let model = RunsModel::one_one(vec![0.5; 10]).unwrap();
        let table = conditional_laws(&model, 1).unwrap();
        let ed: f64 = table.entries.iter().map(|e| e.weight * crate::dist_core::smoothness_d(&e.law)).sum();
        assert!((ed - brute_expected_smoothness(&model, 1)).abs() < 1e-12);
        let model = RunsModel::k1k2(1, 2, vec![0.3, 0.6, 0.5, 0.4, 0.7, 0.35, 0.45, 0.55, 0.65, 0.25, 0.5, 0.4]).unwrap();
        let table = conditional_laws(&model, 4).unwrap();
        let ed: f64 = table.entries.iter().map(|e| e.weight * crate::dist_core::smoothness_d(&e.law)).sum();
        assert!((ed - brute_expected_smoothness(&model, 4)).abs() < 1e-12);
    }

    #[test]
    fn forced_conditioning_gives_point_mass() {
        // the block covers every start, so W is known from X_{C_i}
        let model = RunsModel::one_one(vec![0.4; 7]).unwrap();
        let table = conditional_laws(&model, 3).unwrap();
        for e in &table.entries {
            assert_eq!(e.law.weights.iter().filter(|&&v| v > 0.0).count(), 1);
            assert!((crate::dist_core::smoothness_d(&e.law) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shifting_by_the_block_sum_keeps_smoothness() {
        // D(W − X*_G | X_G) = D(W | X_G): compare with the table that does not count G
        let model = RunsModel::one_one(vec![0.45; 12]).unwrap();
        let full = conditional_laws(&model, 5).unwrap();
        let mut counted = vec![true; 12];
        for j in 2..=8 {
            counted[j] = false;
        }
        let rest = conditional_laws_on(&model, 2, 7, &counted).unwrap();
        for (a, b) in full.entries.iter().zip(&rest.entries) {
            assert_eq!(a.x, b.x);
            let da = crate::dist_core::smoothness_d(&a.law);
            let db = crate::dist_core::smoothness_d(&b.law);
            assert!((da - db).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_of_one_are_the_indicators() {
        let model = RunsModel::one_one(vec![0.3; 12]).unwrap();
        let b = block_sums(&model).unwrap();
        assert_eq!(b.m, 1);
        let direct = window_law(&model, 5, 2).unwrap();
        let blocks = block_window_law(&model, 2).unwrap();
        for ((x, w), (t, v)) in direct.iter().zip(&blocks) {
            assert_eq!(x, t);
            assert!((w - v).abs() < 1e-14);
        }
    }

    #[test]
    fn block_values_are_binary_and_sum_to_w() {
        let model = RunsModel::identical(RunsKind::K1k2, 6, 1, 2, 0.4).unwrap();
        let l = model.trials();
        let pat = model.pattern_code();
        let pmask = (1u64 << model.pattern_len()) - 1;
        for bits in 0..1u64 << l {
            let doubled = bits | (bits << l);
            let x: Vec<usize> = (0..l).map(|j| ((doubled >> j) & pmask == pat) as usize).collect();
            let t: Vec<usize> = x.chunks(2).map(|c| c.iter().sum()).collect();
            assert!(t.iter().all(|&v| v <= 1));
            assert_eq!(t.iter().sum::<usize>(), x.iter().sum::<usize>());
        }
    }

    #[test]
    fn a_bar_by_enumeration() {
        for (k1, k2) in [(1, 3), (2, 2)] {
            let model = RunsModel::identical(RunsKind::K1k2, 8, k1, k2, 0.3).unwrap();
            let b = block_sums(&model).unwrap();
            let law = block_window_law(&model, 1).unwrap();
            let mut by_nb: BTreeMap<(u8, u8), (f64, f64)> = BTreeMap::new();
            for (t, w) in &law {
                let e = by_nb.entry((t[0], t[2])).or_insert((0.0, 0.0));
                e.0 += w;
                if t[1] == 0 {
                    e.1 += w;
                }
            }
            let direct = by_nb.values().map(|(t, z)| z / t).fold(0.0, f64::max);
            assert!((b.a_bar - direct).abs() < 1e-14);
            assert!(b.a_bar >= 0.5 && b.a_bar < 1.0, "{}", b.a_bar);
        }
    }

    #[test]
    fn two_occupied_neighbors_leave_no_room_when_m_is_two() {
        // three occurrences of length 3 cannot fit in the 8 trials read by
        // three blocks of two starts
        let model = RunsModel::identical(RunsKind::K1k2, 8, 1, 2, 0.3).unwrap();
        assert_eq!(block_sums(&model).unwrap().a_bar, 1.0);
    }

    /// Checks that `(X_u : u ∈ inner)` is independent of `(X_v : v ∉ outer)`
    /// by exhaustive enumeration.
    fn independent(model: &RunsModel, inner: &[usize], outer: &[usize]) -> bool {
        let l = model.trials();
        let far: Vec<usize> = (0..l).filter(|j| !outer.contains(j)).collect();
        let pat = model.pattern_code();
        let pmask = (1u64 << model.pattern_len()) - 1;
        let mut joint: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for bits in 0..1u64 << l {
            let wt: f64 = (0..l).map(|t| if (bits >> t) & 1 == 1 { model.probs[t] } else { 1.0 - model.probs[t] }).product();
            let doubled = bits | (bits << l);
            let x = |j: usize| ((doubled >> j) & pmask == pat) as u64;
            let a = inner.iter().enumerate().fold(0, |acc, (o, &j)| acc | (x(j) << o));
            let b = far.iter().enumerate().fold(0, |acc, (o, &j)| acc | (x(j) << o));
            *joint.entry((a, b)).or_insert(0.0) += wt;
        }
        let mut left: BTreeMap<u64, f64> = BTreeMap::new();
        let mut right: BTreeMap<u64, f64> = BTreeMap::new();
        for (&(a, b), &w) in &joint {
            *left.entry(a).or_insert(0.0) += w;
            *right.entry(b).or_insert(0.0) += w;
        }
        left.iter().all(|(a, pa)| right.iter().all(|(b, pb)| (joint.get(&(*a, *b)).copied().unwrap_or(0.0) - pa * pb).abs() < 1e-13))
    }

    #[test]
    fn neighborhoods_give_local_dependence() {
        let cases = [
            RunsModel::one_one(vec![0.3, 0.6, 0.5, 0.4, 0.7, 0.35, 0.45, 0.55, 0.65, 0.25, 0.5, 0.4]).unwrap(),
            RunsModel::k1k2(1, 2, vec![0.4; 14]).unwrap(),
            RunsModel::kruns(2, vec![0.5; 14]).unwrap(),
        ];
        for model in &cases {
            let l = model.trials();
            let nb = model.neighborhoods();
            let i = 6;
            let a = Neighborhoods::members(i, nb.a, l);
            let b = Neighborhoods::members(i, nb.b, l);
            let c = Neighborhoods::members(i, nb.c, l);
            assert!(independent(model, &[i], &a), "{:?} A", model.kind);
            assert!(independent(model, &a, &b), "{:?} B", model.kind);
            assert!(independent(model, &b, &c), "{:?} C", model.kind);
        }
    }

    fn arb_model() -> impl Strategy<Value = RunsModel> {
        (0usize..3, 4usize..=14).prop_flat_map(|(kind, l)| {
            prop::collection::vec(0.05f64..0.95, l).prop_flat_map(move |probs| {
                let probs = probs.clone();
                (1usize..=3, 1usize..=3).prop_map(move |(a, b)| match kind {
                    0 => RunsModel::one_one(probs.clone()).unwrap(),
                    1 if a + b > 2 && a + b <= probs.len() => RunsModel::k1k2(a, b, probs.clone()).unwrap(),
                    _ => RunsModel::kruns(b.min(probs.len()), probs.clone()).unwrap(),
                })
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dp_matches_enumeration(model in arb_model()) {
            let a = exact_law(&model).unwrap();
            let b = brute_force_law(&model).unwrap();
            prop_assert!(a.linf_distance(&b) <= 1e-13);
        }

        #[test]
        fn closed_cumulants_match_exact_law(model in arb_model()) {
            prop_assume!(model.kind != RunsKind::Kruns && model.trials() > 4 * model.window());
            let exact = factorial_cumulants(&exact_law(&model).unwrap());
            let closed = closed_cumulants(&model).unwrap();
            prop_assert!((exact.gamma1 - closed.gamma1).abs() < 1e-10);
            prop_assert!((exact.gamma2 - closed.gamma2).abs() < 1e-10);
            prop_assert!((exact.gamma3 - closed.gamma3).abs() < 1e-10);
        }

        #[test]
        fn kruns_closed_cumulants_match(k in 1usize..=4, n in 4usize..=14, p in 0.05f64..0.95) {
            prop_assume!(n >= k);
            let exact = factorial_cumulants(&exact_law(&RunsModel::kruns(k, vec![p; n]).unwrap()).unwrap());
            let closed = closed_cumulants_kruns(p, k, n).unwrap();
            prop_assert!((exact.gamma1 - closed.gamma1).abs() < 1e-10);
            prop_assert!((exact.gamma2 - closed.gamma2).abs() < 1e-10);
            prop_assert!((exact.gamma3 - closed.gamma3).abs() < 1e-10);
        }
    }
}
