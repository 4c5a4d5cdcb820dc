//! Explicit total-variation bounds for the compound approximations.
//!
//! The main bound is `Θ₂ ΣΞ_{i,2}` against M2 and `Θ₁[ΣΞ_{i,1} + δp²/q]`
//! against M1, where `Ξ_{i,j}` is a ledger of local mixed moments of
//! `(X_i, X*_{A_i}, X*_{B_i}, X*_{C_i})` weighted by the conditional
//! smoothness `D(W | X_{C_i})`. Replacing every `D` factor by one gives
//! `Ξ′`, which is paired with a constant `K ≥ D`. The run-specific bounds
//! supply such `K` in closed form.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist_core::{smoothness_d, smoothness_d1, LatticeMeasure, Target, TargetKind};
use crate::error::{Error, Result};
use crate::matching::MatchResult;
use crate::runs_models::{
    block_sums, block_window_law, conditional_laws, conditional_laws_on, RunsKind, RunsModel, MAX_BRUTE_FORCE,
};
use crate::stein_ops::{check_assumptions, theta_constants};

/// `D(U) ≤ 4` for every law, so 4 is always a valid smoothness constant.
pub const UNIVERSAL_SMOOTHNESS: f64 = 4.0;
/// Largest trial count for the enumerated heterogeneous smoothness constant.
pub const MAX_SMOOTHNESS_ENUMERATION: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XiMode {
    /// Every `D(W | X_{C_i})` evaluated from the conditional laws.
    Exact,
    /// Every `D(W | X_{C_i})` replaced by one.
    Prime,
}

impl std::str::FromStr for XiMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(XiMode::Exact),
            "prime" => Ok(XiMode::Prime),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

/// One configuration of the local sums with its probability and the
/// smoothness factor attached to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSample {
    pub x: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub weight: f64,
    pub d: f64,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            comp += (s - t) + v;
        } else {
            comp += (v - t) + s;
        }
        s = t;
    }
    s + comp
}

/// `β₁ = −p/q` for M1, `β₂ = q̄` for M2.
pub fn beta_for(target: &Target) -> f64 {
    match target {
        Target::M1(t) => -t.p / t.q(),
        Target::M2(t) => t.q_bar,
    }
}

/// The four blocks of `Ξ_{i,j}` evaluated over a weighted sample set.
pub fn xi_blocks(samples: &[LocalSample], beta: f64) -> [f64; 4] {
    let e = |f: &dyn Fn(&LocalSample) -> f64| compensated_sum(samples.iter().map(|s| s.weight * f(s)));
    let ex = e(&|s| s.x);
    let ea = e(&|s| s.a);
    let eb = e(&|s| s.b);
    let one_minus = 1.0 - beta;

    let t1 = one_minus / 12.0
        * (ex * e(&|s| {
            let (a, ba, cb, ca) = (s.a, s.b - s.a, s.c - s.b, s.c - s.a);
            (a * (a + 1.0) * (6.0 * s.c - 4.0 * a - 8.0) + 6.0 * a * (cb + ca - 2.0) * (ba - 1.0)) * s.d
        }) + e(&|s| {
            let (x, a, ba, cb, ca) = (s.x, s.a, s.b - s.a, s.c - s.b, s.c - s.a);
            (x * a * (a - 1.0) * (6.0 * s.c - 4.0 * a - 10.0) + 6.0 * x * (a - 1.0) * (cb + ca - 2.0) * (ba - 1.0)) * s.d
        }));
    let t2 = beta.abs() / 2.0 * e(&|s| s.x * (s.b - 1.0) * (2.0 * s.c - s.b - 2.0) * s.d);
    let t3 = 0.5
        * (one_minus * (ex * ea - e(&|s| s.x * (s.a - 1.0))) + beta * ex).abs()
        * e(&|s| s.b * (2.0 * s.c - s.b - 1.0) * s.d);
    let exa = e(&|s| s.x * s.a);
    let cov = one_minus * (ex * e(&|s| s.a * s.b) - e(&|s| s.x * s.a * s.b) - ex * ea * eb + exa * eb)
        + one_minus / 2.0 * (e(&|s| s.x * s.a * s.a) - ex * e(&|s| s.a * s.a) + exa - ex * ea)
        + e(&|s| s.x * s.b)
        - ex * eb
        - ex;
    let t4 = cov.abs() * e(&|s| s.c * s.d);
    [t1, t2, t3, t4]
}

pub fn xi_from_samples(samples: &[LocalSample], beta: f64) -> f64 {
    xi_blocks(samples, beta).iter().sum()
}

/// Indicator-level local samples around `i`; `D` comes from the conditional
/// laws when `with_smoothness`, else it is one.
pub fn local_samples(model: &RunsModel, i: usize, with_smoothness: bool) -> Result<Vec<LocalSample>> {
    let l = model.trials();
    let nb = model.neighborhoods();
    let table = if with_smoothness {
        conditional_laws(model, i)?
    } else {
        let len = (2 * nb.c + 1).min(l);
        let start = if len == l { 0 } else { (i + l - nb.c % l) % l };
        conditional_laws_on(model, start, len, &vec![false; l])?
    };
    let pos: BTreeMap<usize, usize> = table.members.iter().enumerate().map(|(o, &j)| (j, o)).collect();
    let set = |r: usize| -> Vec<usize> {
        crate::runs_models::Neighborhoods::members(i, r, l).into_iter().map(|j| pos[&j]).collect()
    };
    let (a_set, b_set, c_set) = (set(nb.a), set(nb.b), set(nb.c));
    let centre = pos[&i];
    Ok(table
        .entries
        .iter()
        .map(|e| {
            let sum = |s: &[usize]| s.iter().map(|&o| e.x[o] as f64).sum::<f64>();
            LocalSample {
                x: e.x[centre] as f64,
                a: sum(&a_set),
                b: sum(&b_set),
                c: sum(&c_set),
                weight: e.weight,
                d: if with_smoothness { smoothness_d(&e.law) } else { 1.0 },
            }
        })
        .collect())
}

/// Block-level samples `(T_i, T*_{A}, T*_{B}, T*_{C})` with radii 1, 2, 3 and
/// `D = 1`.
pub fn block_samples(model: &RunsModel) -> Result<Vec<LocalSample>> {
    Ok(block_window_law(model, 3)?
        .into_iter()
        .map(|(t, w)| {
            let s = |lo: usize, hi: usize| t[lo..=hi].iter().map(|&v| v as f64).sum::<f64>();
            LocalSample { x: t[3] as f64, a: s(2, 4), b: s(1, 5), c: s(0, 6), weight: w, d: 1.0 }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiTerms {
    pub index: usize,
    pub target: TargetKind,
    /// With the exact `D(W | X_{C_i})` factors; absent in prime mode or when
    /// the conditional laws were infeasible.
    pub xi: Option<f64>,
    pub xi_prime: f64,
    pub warning: Option<String>,
}

pub fn xi_terms(model: &RunsModel, i: usize, target: &Target, mode: XiMode) -> Result<XiTerms> {
    let beta = beta_for(target);
    let xi_prime = xi_from_samples(&local_samples(model, i, false)?, beta);
    let (xi, warning) = match mode {
        XiMode::Prime => (None, None),
        XiMode::Exact => match local_samples(model, i, true) {
            Ok(s) => (Some(xi_from_samples(&s, beta)), None),
            Err(Error::StateSpace(msg)) => (None, Some(format!("exact smoothness infeasible ({msg}); prime mode used"))),
            Err(e) => return Err(e),
        },
    };
    Ok(XiTerms { index: i, target: target.kind(), xi, xi_prime, warning })
}

/// `Ξ` over every index. Identical-`p` models are shift invariant, so one
/// index stands for all of them.
pub fn all_xi_terms(model: &RunsModel, target: &Target, mode: XiMode) -> Result<Vec<XiTerms>> {
    if model.identical_p().is_some() {
        let t = xi_terms(model, 0, target, mode)?;
        return Ok((0..model.trials()).map(|i| XiTerms { index: i, ..t.clone() }).collect());
    }
    (0..model.trials()).into_par_iter().map(|i| xi_terms(model, i, target, mode)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub bound_value: Option<f64>,
    pub applicable: bool,
    /// Failed hypotheses; empty when applicable.
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
    pub components: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(name: &str) -> Self {
        BoundReport {
            name: name.into(),
            bound_value: None,
            applicable: false,
            reasons: Vec::new(),
            warnings: Vec::new(),
            components: BTreeMap::new(),
        }
    }

    fn component(&mut self, key: &str, v: f64) {
        self.components.insert(key.into(), v);
    }

    fn finish(mut self, value: f64) -> Self {
        if !value.is_finite() {
            self.reasons.push(format!("bound is not finite ({value})"));
        }
        if self.reasons.is_empty() {
            self.applicable = true;
            self.bound_value = Some(value);
        }
        self
    }
}

/// Records the (H1)/(H2) and `θ < ½` gates; returns `Θ` when they pass.
fn gate_target(report: &mut BoundReport, target: &Target) -> Option<f64> {
    let h = check_assumptions(target);
    report.component("lambda", target.lambda());
    if !h.ok {
        report.reasons.push(format!("perturbation assumption fails (margin {})", h.margin));
    }
    match theta_constants(target) {
        Ok(tc) => {
            report.component("theta", tc.theta);
            report.component("Theta", tc.big_theta);
            h.ok.then_some(tc.big_theta)
        }
        Err(e) => {
            report.reasons.push(e.to_string());
            None
        }
    }
}

/// `Θ₂ΣΞ_{i,2}` or `Θ₁[ΣΞ_{i,1} + δp²/q]`; in prime mode `ΣΞ` becomes
/// `K·ΣΞ′` with `K` supplied or taken from the family's smoothness lemma
/// (capped at 4).
pub fn bound_theorem_main(model: &RunsModel, m: &MatchResult, mode: XiMode, k_const: Option<f64>) -> Result<BoundReport> {
    let target = m.target();
    let mut report = BoundReport::new(match mode {
        XiMode::Exact => "main_exact",
        XiMode::Prime => "main_prime",
    });
    let Some(big_theta) = gate_target(&mut report, &target) else {
        return Ok(report);
    };
    let terms = all_xi_terms(model, &target, mode)?;
    report.warnings.extend(terms.iter().filter_map(|t| t.warning.clone()).take(1));
    let sum_prime = compensated_sum(terms.iter().map(|t| t.xi_prime));
    report.component("sum_xi_prime", sum_prime);
    let exact_sum = match mode {
        XiMode::Exact => terms.iter().map(|t| t.xi).collect::<Option<Vec<f64>>>().map(compensated_sum),
        XiMode::Prime => None,
    };
    let ledger = match exact_sum {
        Some(s) => {
            report.component("sum_xi", s);
            s
        }
        None => {
            let k = match k_const {
                Some(k) => k,
                None => lemma_smoothness(model).unwrap_or(UNIVERSAL_SMOOTHNESS).min(UNIVERSAL_SMOOTHNESS),
            };
            report.component("K", k);
            k * sum_prime
        }
    };
    let value = match target {
        Target::M2(_) => big_theta * ledger,
        Target::M1(t) => {
            let delta_term = t.delta * t.p * t.p / t.q();
            report.component("delta_term", delta_term);
            big_theta * (ledger + delta_term)
        }
    };
    Ok(report.finish(value))
}

/// The family's closed-form bound on `D(W | X_{C_i})`, if one applies.
fn lemma_smoothness(model: &RunsModel) -> Option<f64> {
    match model.kind {
        RunsKind::OneOne => smoothness_k_11runs(&model.probs).ok(),
        RunsKind::Kruns => smoothness_k_kruns(model.trials(), model.k2, model.identical_p()?).ok(),
        RunsKind::K1k2 => None,
    }
}

/// `N(i, Z)`, the number of free indicators left after removing `C_i` and
/// the even-indexed ones: `0.5N − 3` for odd `N`, `0.5N − 2` for even `N`.
pub fn free_count(big_n: usize) -> f64 {
    if big_n % 2 == 1 {
        0.5 * big_n as f64 - 3.0
    } else {
        0.5 * big_n as f64 - 2.0
    }
}

/// Bound on `D(W | X_{C_i})` for `(1,1)`-runs.
///
/// Identical `p`: `16·E[Σ_{𝓕₂} a]^{-1} ≤ (16/a)·32/(9N(i,Z) − 9)` with
/// `a = p(1−p)`. Otherwise the largest over `i` of `E[4 ∧ 16/V_i]` with
/// `V_i = Σ_{j∈𝓕₂(i,Z)} (1−p_{j−1})p_j`, by enumerating every sequence.
pub fn smoothness_k_11runs(probs: &[f64]) -> Result<f64> {
    Ok(smoothness_k_11runs_per_index(probs)?.into_iter().fold(0.0, f64::max))
}

/// The per-index constants behind [`smoothness_k_11runs`].
pub fn smoothness_k_11runs_per_index(probs: &[f64]) -> Result<Vec<f64>> {
    let n = probs.len();
    for j in 0..n {
        let a = (1.0 - probs[(j + n - 1) % n]) * probs[j];
        if a > 0.5 {
            return Err(Error::Inapplicable(format!("(1 - p_{{j-1}}) p_j = {a} exceeds 1/2 at j = {j}")));
        }
    }
    let first = probs[0];
    if probs.iter().all(|&p| p == first) {
        let denom = 9.0 * free_count(n) - 9.0;
        if denom <= 0.0 {
            return Err(Error::Inapplicable(format!("N = {n} leaves too few free indicators")));
        }
        let k = 16.0 / (first * (1.0 - first)) * 32.0 / denom;
        return Ok(vec![k; n]);
    }
    if n > MAX_SMOOTHNESS_ENUMERATION {
        return Err(Error::StateSpace(format!("{n} trials exceed {MAX_SMOOTHNESS_ENUMERATION} for enumeration")));
    }
    let model = RunsModel::one_one(probs.to_vec())?;
    let c_radius = model.neighborhoods().c;
    let weight_of = |j: usize| (1.0 - probs[(j + n - 1) % n]) * probs[j];
    let mut out = vec![0.0; n];
    for bits in 0u64..1 << n {
        let wt: f64 = (0..n).map(|t| if (bits >> t) & 1 == 1 { probs[t] } else { 1.0 - probs[t] }).product();
        // X_j = 1 when trial j fails and trial j+1 succeeds
        let x = |j: usize| (bits >> j) & 1 == 0 && (bits >> ((j + 1) % n)) & 1 == 1;
        for (i, acc) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            // free indices: outside C_i and not in Z (odd positions counted from one)
            for j in (0..n).step_by(2) {
                let dist = (j as i64 - i as i64).rem_euclid(n as i64).min((i as i64 - j as i64).rem_euclid(n as i64));
                if dist as usize <= c_radius {
                    continue;
                }
                if !x((j + n - 1) % n) && !x((j + 1) % n) {
                    v += weight_of(j);
                }
            }
            *acc += wt * if v > 0.0 { (16.0 / v).min(4.0) } else { 4.0 };
        }
    }
    Ok(out)
}

/// `D(W | X_{C_i}) ≤ 1 ∧ 10.58/((N − 10k + 8)p^k(1−p)³)` for `k`-runs,
/// valid for `N > 10k`.
pub fn smoothness_k_kruns(big_n: usize, k: usize, p: f64) -> Result<f64> {
    if big_n <= 10 * k {
        return Err(Error::Inapplicable(format!("N = {big_n} is not above 10k = {}", 10 * k)));
    }
    let denom = (big_n as f64 - 10.0 * k as f64 + 8.0) * p.powi(k as i32) * (1.0 - p).powi(3);
    Ok((10.58 / denom).min(1.0))
}

/// `Ξ′₁/((1−2θ₁)⌊n+λ/p⌋pq)·{16qΣ_i E[Σ_{𝓕₂} a]^{-1} + p²δ}` for
/// `(1,1)`-runs, with `Ξ′₁ = max_i Ξ′_{i,1}`.
pub fn bound_11runs(model: &RunsModel, m: &MatchResult) -> Result<BoundReport> {
    let mut report = BoundReport::new("one_one_runs");
    if model.kind != RunsKind::OneOne {
        return Err(Error::Domain("bound_11runs needs a (1,1)-runs model".into()));
    }
    let Target::M1(t) = m.target() else {
        report.reasons.push("needs the binomial (M1) regime".into());
        return Ok(report);
    };
    let target = m.target();
    if gate_target(&mut report, &target).is_none() {
        return Ok(report);
    }
    let ks = match smoothness_k_11runs_per_index(&model.probs) {
        Ok(k) => k,
        Err(e @ Error::Inapplicable(_)) => {
            report.reasons.push(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let xi_max = all_xi_terms(model, &target, XiMode::Prime)?.iter().map(|x| x.xi_prime).fold(f64::MIN, f64::max);
    let q = t.q();
    let theta = report.components["theta"];
    let gamma = t.floor_mean_ratio();
    let sum_k = compensated_sum(ks.iter().copied());
    report.component("xi_prime_max", xi_max);
    report.component("sum_smoothness", sum_k);
    report.component("K", ks.iter().copied().fold(0.0, f64::max));
    let value = xi_max / ((1.0 - 2.0 * theta) * gamma * t.p * q) * (q * sum_k + t.p * t.p * t.delta);
    Ok(report.finish(value))
}

/// `2(2m+1)/(2(2m+1)² + 3m(m+1))`; `θ₁` stays below ½ asymptotically when
/// `b = (1−p)^{k1}p^{k2}` is below it.
pub fn c_m(m: usize) -> f64 {
    let m = m as f64;
    2.0 * (2.0 * m + 1.0) / (2.0 * (2.0 * m + 1.0).powi(2) + 3.0 * m * (m + 1.0))
}

/// `lim_{N→∞} θ₁ = m(m+1)b/(2(2m+1) − [2(2m+1)² + m(m+1)]b)`.
pub fn theta_limit_k1k2(m: usize, b: f64) -> f64 {
    let m = m as f64;
    m * (m + 1.0) * b / (2.0 * (2.0 * m + 1.0) - (2.0 * (2.0 * m + 1.0).powi(2) + m * (m + 1.0)) * b)
}

/// `(k1,k2)`-runs through the 1-dependent blocks:
/// `Ξ′₁/((1−2θ₁)⌊n+λ/p⌋pq)·{16qΣ_i [N(i,Z)(1−ā)]^{-1} + p²δ}`.
pub fn bound_k1k2(model: &RunsModel, m: &MatchResult) -> Result<BoundReport> {
    if model.kind == RunsKind::OneOne {
        return bound_11runs(model, m);
    }
    if model.kind != RunsKind::K1k2 {
        return Err(Error::Domain("bound_k1k2 needs a (k1,k2)-runs model".into()));
    }
    let mut report = BoundReport::new("k1k2_runs");
    let p = model.identical_p().ok_or_else(|| Error::Domain("bound_k1k2 needs identical p".into()))?;
    let win = model.window();
    let b = (1.0 - p).powi(model.k1 as i32) * p.powi(model.k2 as i32);
    report.component("b", b);
    report.component("c_m", c_m(win));
    report.component("theta_limit", theta_limit_k1k2(win, b));
    let Target::M1(t) = m.target() else {
        report.reasons.push("needs the binomial (M1) regime".into());
        return Ok(report);
    };
    let target = m.target();
    if gate_target(&mut report, &target).is_none() {
        return Ok(report);
    }
    let blocks = block_sums(model)?;
    report.component("a_bar", blocks.a_bar);
    if blocks.a_bar < 0.5 {
        report.reasons.push(format!("a_bar = {} is below 1/2", blocks.a_bar));
    }
    if blocks.a_bar >= 1.0 {
        report.reasons.push("a_bar = 1: two occupied neighbours can force an empty block, so 1 - a_bar = 0".into());
    }
    let free = free_count(blocks.blocks);
    if free <= 0.0 {
        report.reasons.push(format!("{} blocks leave no free block", blocks.blocks));
    }
    if !report.reasons.is_empty() {
        return Ok(report);
    }
    let xi = xi_from_samples(&block_samples(model)?, beta_for(&target));
    let q = t.q();
    let theta = report.components["theta"];
    let gamma = t.floor_mean_ratio();
    let sum_inv = blocks.blocks as f64 / (free * (1.0 - blocks.a_bar));
    report.component("xi_prime_max", xi);
    report.component("sum_inverse", sum_inv);
    let value = xi / ((1.0 - 2.0 * theta) * gamma * t.p * q) * (16.0 * q * sum_inv + t.p * t.p * t.delta);
    Ok(report.finish(value))
}

/// `(9 ∧ 95.22(1−2p)/((N−10k+8)p^k(1−p)²))·(2k−1)(4k−3)(6k−5)p³` for
/// `k`-runs with `p < ½`, `N > 10k`.
pub fn bound_kruns_t5(big_n: usize, k: usize, p: f64) -> BoundReport {
    let mut report = BoundReport::new("kruns_closed_form");
    if !(p > 0.0 && p < 0.5) {
        report.reasons.push(format!("p = {p} is not in (0, 1/2)"));
    }
    if big_n <= 10 * k {
        report.reasons.push(format!("N = {big_n} is not above 10k = {}", 10 * k));
    }
    if !report.reasons.is_empty() {
        return report;
    }
    let (n, kf) = (big_n as f64, k as f64);
    let rate = 95.22 * (1.0 - 2.0 * p) / ((n - 10.0 * kf + 8.0) * p.powi(k as i32) * (1.0 - p).powi(2));
    let poly = (2.0 * kf - 1.0) * (4.0 * kf - 3.0) * (6.0 * kf - 5.0) * p.powi(3);
    report.component("rate_factor", rate.min(9.0));
    report.component("polynomial", poly);
    report.finish(rate.min(9.0) * poly)
}

/// `4.5(4k−3)(2k−1)p²(2 ∧ 4.6/√((N−4k+2)p^k(1−p)³))`, the earlier bound
/// for `k`-runs against a negative binomial.
pub fn bound_wang_xia(big_n: usize, k: usize, p: f64) -> f64 {
    let kf = k as f64;
    let base = (big_n as f64 - 4.0 * kf + 2.0) * p.powi(k as i32) * (1.0 - p).powi(3);
    let factor = if base > 0.0 { (4.6 / base.sqrt()).min(2.0) } else { 2.0 };
    4.5 * (4.0 * kf - 3.0) * (2.0 * kf - 1.0) * p * p * factor
}

/// Outcome of checking `D(W | X_{C_i}) ≤ 𝒟(W₁ | X_{C_{1,i}})·𝒟(W₂ | X_{C_{2,i}})`
/// on a circle of `k`-runs by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductChainCheck {
    /// Centre (0-based) of the neighborhood covering the gap between `W₁` and `W₂`.
    pub index: usize,
    pub n1: usize,
    /// Largest `D(W | X_{C_i} = c) − 𝒟(W₁ | c₁)𝒟(W₂ | c₂)` over values `c`.
    pub max_excess: f64,
    pub max_smoothness: f64,
    pub max_product: f64,
    /// `1 ∧ 10.58/((N − 10k + 8)p^k(1−p)³)` when `N > 10k`.
    pub closed_form: Option<f64>,
    /// Largest distance between `L(W₁ + W₂ | c)` and `L(W₁ | c₁) ∗ L(W₂ | c₂)`.
    pub max_convolution_gap: f64,
    pub holds: bool,
}

/// `W₁ = X_1 + … + X_{N₁}` and `W₂ = X_{N₁+k} + … + X_N` (counting from one)
/// with `N₁ = ⌊(N−k)/2⌋`; `C_i` is centred on the `k − 1` indicators between
/// them. Every trial sequence is enumerated.
///
/// With `circular` the indicators wrap as in the model, so `W₂`'s last runs
/// share trials with `W₁`'s first ones. Otherwise the `N` indicators read an
/// open line of `N + k − 1` trials, where the two sums touch only through
/// the gap.
pub fn product_chain_check(big_n: usize, k: usize, p: f64, circular: bool) -> Result<ProductChainCheck> {
    let n_trials = if circular { big_n } else { big_n + k - 1 };
    if n_trials > MAX_BRUTE_FORCE {
        return Err(Error::StateSpace(format!("{n_trials} trials exceed {MAX_BRUTE_FORCE}")));
    }
    let model = RunsModel::kruns(k, vec![p; big_n])?;
    let n1 = (big_n - k) / 2;
    let radius = model.neighborhoods().c;
    if 2 * radius + 1 > big_n {
        return Err(Error::Domain("C_i covers the whole circle".into()));
    }
    // 0-based: W₁ over 0..n1, gap n1..n1+k−1, W₂ over n1+k−1..big_n
    let index = n1 + (k - 1) / 2;
    let c_set = crate::runs_models::Neighborhoods::members(index, radius, big_n);
    let c1: Vec<usize> = c_set.iter().copied().filter(|&j| j < n1).collect();
    let c2: Vec<usize> = c_set.iter().copied().filter(|&j| j >= n1 + k - 1).collect();
    let pack = |x: &[bool], set: &[usize]| set.iter().enumerate().fold(0u64, |acc, (o, &j)| acc | ((x[j] as u64) << o));

    let mut full: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut part1: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut part2: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut keys: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for bits in 0u64..1 << n_trials {
        let ones = bits.count_ones() as i32;
        let wt = p.powi(ones) * (1.0 - p).powi(n_trials as i32 - ones);
        let doubled = if circular { bits | (bits << big_n) } else { bits };
        let pat = (1u64 << k) - 1;
        let x: Vec<bool> = (0..big_n).map(|j| (doubled >> j) & pat == pat).collect();
        let w1 = x[..n1].iter().filter(|&&v| v).count();
        let w2 = x[n1 + k - 1..].iter().filter(|&&v| v).count();
        let (kc, k1, k2) = (pack(&x, &c_set), pack(&x, &c1), pack(&x, &c2));
        keys.insert(kc, (k1, k2));
        full.entry(kc).or_insert_with(|| vec![0.0; big_n + 1])[w1 + w2] += wt;
        part1.entry(k1).or_insert_with(|| vec![0.0; big_n + 1])[w1] += wt;
        part2.entry(k2).or_insert_with(|| vec![0.0; big_n + 1])[w2] += wt;
    }
    let normalize = |row: &Vec<f64>| {
        let mass: f64 = row.iter().sum();
        LatticeMeasure::new(0, row.iter().map(|v| v / mass).collect())
    };
    let (mut max_excess, mut max_d, mut max_prod, mut max_gap) = (f64::MIN, 0.0f64, 0.0f64, 0.0f64);
    for (kc, row) in &full {
        let (k1, k2) = keys[kc];
        let law = normalize(row);
        let (l1, l2) = (normalize(&part1[&k1]), normalize(&part2[&k2]));
        let d = smoothness_d(&law);
        let prod = smoothness_d1(&l1) * smoothness_d1(&l2);
        max_excess = max_excess.max(d - prod);
        max_d = max_d.max(d);
        max_prod = max_prod.max(prod);
        max_gap = max_gap.max(law.linf_distance(&crate::dist_core::convolve(&l1, &l2)));
    }
    Ok(ProductChainCheck {
        index,
        n1,
        max_excess,
        max_smoothness: max_d,
        max_product: max_prod,
        closed_form: smoothness_k_kruns(big_n, k, p).ok(),
        max_convolution_gap: max_gap,
        holds: max_excess <= 1e-12,
    })
}
