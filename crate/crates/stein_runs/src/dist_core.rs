//! Finitely supported measures on the integers.
//!
//! A [`LatticeMeasure`] stores a contiguous block of weights starting at
//! `offset`. Probability laws and signed targets (a negative-binomial or
//! binomial convolved with a "Poisson" of negative rate) share the type; the
//! only difference is the `is_probability` flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation tolerance for builders with infinite support.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Weights in `[-NEG_CLAMP, 0)` are treated as rounding noise and clamped.
const NEG_CLAMP: f64 = 1e-15;

/// Signed builders must land within this distance of unit mass.
const SIGNED_MASS_TOL: f64 = 1e-9;

/// Recursion values past this magnitude mean the recursion has gone unstable.
const BLOWUP: f64 = 1e6;

/// Rescaling threshold for the scaled recursions.
const RESCALE: f64 = 1e200;

/// Relative size below which a decaying tail weight is dropped.
const NEGLIGIBLE: f64 = 1e-40;

/// Below this `|λ|` the M1 target is built by direct convolution.
const SMALL_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawMeasure", into = "RawMeasure")]
pub struct LatticeMeasure {
    pub offset: i64,
    pub weights: Vec<f64>,
    pub is_probability: bool,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    offset: i64,
    weights: Vec<f64>,
}

impl From<RawMeasure> for LatticeMeasure {
    fn from(raw: RawMeasure) -> Self {
        LatticeMeasure::new(raw.offset, raw.weights)
    }
}

impl From<LatticeMeasure> for RawMeasure {
    fn from(m: LatticeMeasure) -> Self {
        RawMeasure { offset: m.offset, weights: m.weights }
    }
}

impl LatticeMeasure {
    /// Builds a measure, clamping rounding-level negatives and dropping exact
    /// zeros at either end.
    pub fn new(offset: i64, mut weights: Vec<f64>) -> Self {
        let is_probability = weights.iter().all(|&w| w >= -NEG_CLAMP);
        if is_probability {
            for w in weights.iter_mut() {
                if *w < 0.0 {
                    *w = 0.0;
                }
            }
        }
        let mut m = LatticeMeasure { offset, weights, is_probability };
        m.trim_zeros();
        m
    }

    pub fn point_mass(k: i64) -> Self {
        LatticeMeasure { offset: k, weights: vec![1.0], is_probability: true }
    }

    fn trim_zeros(&mut self) {
        let lead = self.weights.iter().take_while(|&&w| w == 0.0).count();
        if lead == self.weights.len() {
            self.weights.clear();
            return;
        }
        self.weights.drain(..lead);
        self.offset += lead as i64;
        while self.weights.last() == Some(&0.0) {
            self.weights.pop();
        }
    }

    /// Drops leading and trailing weights whose combined absolute mass on each
    /// side stays below `tol / 2`.
    pub fn trim_tails(&mut self, tol: f64) {
        let half = tol / 2.0;
        let mut acc = 0.0;
        let mut lead = 0;
        for &w in &self.weights {
            if acc + w.abs() >= half {
                break;
            }
            acc += w.abs();
            lead += 1;
        }
        if lead == self.weights.len() {
            return;
        }
        let mut acc = 0.0;
        let mut trail = 0;
        for &w in self.weights.iter().rev() {
            if acc + w.abs() >= half {
                break;
            }
            acc += w.abs();
            trail += 1;
        }
        let end = self.weights.len() - trail;
        self.weights.truncate(end);
        self.weights.drain(..lead);
        self.offset += lead as i64;
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest index carrying stored mass (offset − 1 for an empty measure).
    pub fn max_index(&self) -> i64 {
        self.offset + self.weights.len() as i64 - 1
    }

    /// Weight at `k`, zero outside the stored window.
    pub fn get(&self, k: i64) -> f64 {
        let i = k - self.offset;
        if i < 0 || i >= self.weights.len() as i64 {
            0.0
        } else {
            self.weights[i as usize]
        }
    }

    /// `(k, weight)` pairs over the stored window.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.weights.iter().enumerate().map(move |(i, &w)| (self.offset + i as i64, w))
    }

    /// The same measure moved right by `s`.
    pub fn shifted(&self, s: i64) -> Self {
        LatticeMeasure { offset: self.offset + s, ..self.clone() }
    }

    /// `Σ_k f(k)·weight_k`.
    pub fn expect(&self, f: impl Fn(i64) -> f64) -> f64 {
        self.iter().map(|(k, w)| w * f(k)).sum()
    }

    /// Largest absolute pointwise difference.
    pub fn linf_distance(&self, other: &Self) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.max_index().max(other.max_index());
        (lo..=hi).map(|k| (self.get(k) - other.get(k)).abs()).fold(0.0, f64::max)
    }
}

/// Factorial cumulants Γ₁, Γ₂, Γ₃.
///
/// `gamma3` follows the halved convention used throughout the matching
/// equations: `Γ₃ = ½(ϑ₃ − 3m₁ϑ₂ + 2m₁³)`, so a binomial has `Γ₃ = np³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantTriple {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl CumulantTriple {
    pub fn new(gamma1: f64, gamma2: f64, gamma3: f64) -> Self {
        CumulantTriple { gamma1, gamma2, gamma3 }
    }
}

impl std::ops::Add for CumulantTriple {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        CumulantTriple::new(self.gamma1 + o.gamma1, self.gamma2 + o.gamma2, self.gamma3 + o.gamma3)
    }
}

/// Parameters of `Bin(n, p) ∗ Po(λ)` as produced by matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParamsM1 {
    pub n: u64,
    pub p: f64,
    pub lambda: f64,
    pub delta: f64,
    pub n_tilde: f64,
}

impl TargetParamsM1 {
    /// Parameters with an integer `n` and no fractional remainder.
    pub fn exact(n: u64, p: f64, lambda: f64) -> Self {
        TargetParamsM1 { n, p, lambda, delta: 0.0, n_tilde: n as f64 }
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// `⌊n + λ/p⌋`, read as the nearest integer when within `1e-9` relative
    /// of it so that rounding in matched parameters cannot drop a unit.
    pub fn floor_mean_ratio(&self) -> f64 {
        let x = self.n as f64 + self.lambda / self.p;
        let nearest = x.round();
        if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
            nearest
        } else {
            x.floor()
        }
    }
}

/// Parameters of `NB(r, p̄) ∗ Po(λ)`; `λ < 0` makes the target signed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParamsM2 {
    pub r: f64,
    pub p_bar: f64,
    pub lambda: f64,
    pub q_bar: f64,
}

impl TargetParamsM2 {
    pub fn new(r: f64, p_bar: f64, lambda: f64) -> Self {
        TargetParamsM2 { r, p_bar, lambda, q_bar: 1.0 - p_bar }
    }

    pub fn is_signed(&self) -> bool {
        self.lambda < 0.0
    }
}

/// Which compound family a target belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// `Bin(n, p) ∗ Po(λ)`
    M1,
    /// `NB(r, p̄) ∗ Po(λ)`
    M2,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetKind::M1 => "M1",
            TargetKind::M2 => "M2",
        })
    }
}

/// A fully parameterized compound target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "which", content = "params")]
pub enum Target {
    M1(TargetParamsM1),
    M2(TargetParamsM2),
}

impl Target {
    pub fn kind(&self) -> TargetKind {
        match self {
            Target::M1(_) => TargetKind::M1,
            Target::M2(_) => TargetKind::M2,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Target::M1(t) => t.lambda,
            Target::M2(t) => t.lambda,
        }
    }

    /// The target's pmf (signed when `λ < 0`).
    pub fn build(&self, tail_tol: f64) -> Result<LatticeMeasure> {
        match self {
            Target::M1(t) => make_compound_m1(t, tail_tol),
            Target::M2(t) => make_compound_m2(t, tail_tol),
        }
    }
}

fn check_unit_interval(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} must lie in (0, 1)")))
    }
}

fn check_tail_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol <= 1e-6 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tail_tol = {tol} must lie in (0, 1e-6]")))
    }
}

/// Unimodal pmf from successive ratios `w_{k+1}/w_k = ratio(k)`, built outward
/// from the mode with `w_mode = 1` so nothing overflows, then normalized.
///
/// `hi` bounds the support when finite. Otherwise the upper walk stops once
/// a geometric bound on the remaining mass falls under `tol/2` of the running
/// total; `decay_cap(k)` must bound every later ratio. With `trim_low` the
/// downward walk applies the mirrored test using the backward ratios.
fn unimodal_from_ratios(
    mode: usize,
    hi: Option<usize>,
    tol: f64,
    trim_low: bool,
    ratio: impl Fn(usize) -> f64,
    decay_cap: impl Fn(usize) -> f64,
) -> LatticeMeasure {
    let mut upper = vec![1.0];
    let mut total = 1.0;
    let mut k = mode;
    loop {
        if let Some(h) = hi {
            if k >= h {
                break;
            }
        } else {
            let rho = decay_cap(k);
            let w = *upper.last().unwrap();
            if rho < 1.0 && w * rho / (1.0 - rho) < 0.5 * tol * total {
                break;
            }
        }
        let w = upper.last().unwrap() * ratio(k);
        if w == 0.0 {
            break;
        }
        upper.push(w);
        total += w;
        k += 1;
    }
    let mut lower = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 {
        let back = 1.0 / ratio(k - 1);
        if trim_low {
            // backward ratios shrink as k falls, so this one bounds the rest
            if back < 1.0 && w * back / (1.0 - back) < 0.5 * tol * total {
                break;
            }
        }
        w *= back;
        if w == 0.0 {
            break;
        }
        lower.push(w);
        total += w;
        k -= 1;
    }
    let offset = (mode - lower.len()) as i64;
    lower.reverse();
    lower.extend(upper);
    let s: f64 = lower.iter().sum();
    for v in lower.iter_mut() {
        *v /= s;
    }
    LatticeMeasure::new(offset, lower)
}

/// `Bin(n, p)` on `{0, …, n}`.
pub fn make_binomial(n: u64, p: f64) -> Result<LatticeMeasure> {
    check_unit_interval("p", p)?;
    make_pseudo_binomial_unchecked(n as f64, p)
}

/// Pseudo-binomial: the binomial pmf with real `N > 1`, cut at `⌊N⌋` and
/// renormalized. Integer `N` gives the ordinary binomial.
pub fn make_pseudo_binomial(big_n: f64, p: f64) -> Result<LatticeMeasure> {
    if !(big_n > 1.0) || !big_n.is_finite() {
        return Err(Error::Domain(format!("N = {big_n} must exceed 1")));
    }
    check_unit_interval("p", p)?;
    make_pseudo_binomial_unchecked(big_n, p)
}

fn make_pseudo_binomial_unchecked(big_n: f64, p: f64) -> Result<LatticeMeasure> {
    let top = big_n.floor() as usize;
    if top == 0 {
        return Ok(LatticeMeasure::point_mass(0));
    }
    let odds = p / (1.0 - p);
    let ratio = |k: usize| (big_n - k as f64) / (k as f64 + 1.0) * odds;
    let mode = (((big_n + 1.0) * p).floor() as usize).min(top);
    Ok(unimodal_from_ratios(mode, Some(top), 0.0, false, ratio, |_| 0.0))
}

/// `NB(r, p̄)` with pmf `C(r+k−1, k) p̄^r q̄^k` on `{0, 1, …}`, truncated so the
/// omitted mass is below `tail_tol`, then renormalized.
pub fn make_negative_binomial(r: f64, p_bar: f64, tail_tol: f64) -> Result<LatticeMeasure> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("r = {r} must be positive")));
    }
    check_unit_interval("p_bar", p_bar)?;
    check_tail_tol(tail_tol)?;
    let q_bar = 1.0 - p_bar;
    let ratio = |k: usize| q_bar * (r + k as f64) / (k as f64 + 1.0);
    // ratios rise toward q̄ when r < 1 and fall toward it when r > 1
    let cap = |k: usize| if r < 1.0 { q_bar } else { ratio(k) };
    let mode = if r > 1.0 { ((r - 1.0) * q_bar / p_bar).floor() as usize } else { 0 };
    Ok(unimodal_from_ratios(mode, None, tail_tol, true, ratio, cap))
}

/// `Po(λ)` for `λ > 0`, truncated below `tail_tol` on both sides.
pub fn make_poisson(lambda: f64, tail_tol: f64) -> Result<LatticeMeasure> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must be positive; use a compound builder for signed targets"
        )));
    }
    check_tail_tol(tail_tol)?;
    let ratio = |k: usize| lambda / (k as f64 + 1.0);
    Ok(unimodal_from_ratios(lambda.floor() as usize, None, tail_tol, true, ratio, ratio))
}

/// Index beyond which a Poisson of rate `|λ|` has negligible mass (far below
/// any tolerance used here).
fn poisson_reach(lambda: f64) -> usize {
    let l = lambda.abs();
    (l + 12.0 * l.sqrt() + 40.0).ceil() as usize
}

/// `Bin(n, p) ∗ Po(λ)` from the three-term recursion
/// `q(k+1)μ_{k+1} = (np + λq − pk)μ_k + λpμ_{k−1}`, `μ₀ = qⁿe^{−λ}`.
///
/// Running the recursion forward is only stable while the pmf is the
/// dominant solution, which holds up to `k* = n + λq/p` (where the middle
/// coefficient changes sign). Past `k*` the pmf is the minimal solution, so
/// that stretch is computed by backward recursion from `μ_{K+1} = 0, μ_K = 1`
/// far in the tail and rescaled to agree with the forward pass at `k*`.
/// Negative `λ` gives a signed measure; mass is then checked, not forced.
pub fn make_compound_m1(params: &TargetParamsM1, tail_tol: f64) -> Result<LatticeMeasure> {
    let TargetParamsM1 { n, p, lambda, .. } = *params;
    check_unit_interval("p", p)?;
    check_tail_tol(tail_tol)?;
    if lambda == 0.0 {
        return make_binomial(n, p);
    }
    if lambda.abs() < SMALL_LAMBDA {
        return small_lambda_m1(n, p, lambda, tail_tol);
    }
    let q = 1.0 - p;
    let nf = n as f64;
    let log_mu0 = nf * q.ln() - lambda;
    let big_k = n as usize + poisson_reach(lambda);
    let mid = |k: usize| nf * p + lambda * q - p * k as f64;
    // past the end of the support the whole range is forward-stable
    let switch = (nf + lambda * q / p).floor().max(1.0);
    let mut switch = if switch + 2.0 >= big_k as f64 { big_k } else { switch as usize };
    // Miller's backward pass needs room to converge
    let big_k = if switch < big_k { big_k.max(switch + 200) } else { big_k };

    // values are v_k·e^{log_scale}; rescaling keeps v representable
    let mut v = vec![0.0; big_k + 1];
    let mut log_scale = log_mu0;
    let mut peak = 1.0f64;
    v[0] = 1.0;
    for k in 0..switch {
        let prev = if k > 0 { v[k - 1] } else { 0.0 };
        v[k + 1] = (mid(k) * v[k] + lambda * p * prev) / (q * (k as f64 + 1.0));
        if v[k + 1].abs() > RESCALE {
            for x in v[..=k + 1].iter_mut() {
                *x /= RESCALE;
            }
            log_scale += RESCALE.ln();
            peak /= RESCALE;
        }
        peak = peak.max(v[k + 1].abs());
        // past the binomial part the pmf only decays; once it is negligible
        // the remaining stretch can be dropped
        if k + 1 > n as usize && v[k + 1].abs() < NEGLIGIBLE * peak {
            switch = big_k;
            break;
        }
    }
    if switch < big_k {
        let mut back = vec![0.0; big_k + 2];
        back[big_k] = 1.0;
        for k in (switch..big_k + 1).rev() {
            let kf = k as f64;
            back[k - 1] = (q * (kf + 1.0) * back[k + 1] - mid(k) * back[k]) / (lambda * p);
            if back[k - 1].abs() > RESCALE {
                for x in back[k - 1..].iter_mut() {
                    *x /= RESCALE;
                }
            }
        }
        if back[switch] == 0.0 || !back[switch].is_finite() {
            return Err(Error::Instability(format!("backward pass vanished at k = {switch}")));
        }
        let glue = v[switch] / back[switch];
        let check = glue * back[switch - 1];
        if (check - v[switch - 1]).abs() > 1e-6 * v[switch - 1].abs().max(v[switch].abs()) {
            return Err(Error::Instability(format!(
                "forward and backward passes disagree at k = {}: {} vs {}",
                switch - 1,
                v[switch - 1],
                check
            )));
        }
        for k in switch + 1..=big_k {
            v[k] = glue * back[k];
        }
    }
    let weights: Vec<f64> = v
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { x.signum() * (x.abs().ln() + log_scale).exp() })
        .collect();
    finish_compound(weights, lambda, tail_tol)
}

/// `NB(r, p̄) ∗ Po(λ)` from `(k+1)μ_{k+1} = (q̄(r+k) + λ)μ_k − λq̄μ_{k−1}`,
/// `μ₀ = p̄^r e^{−λ}`. Here the pmf is the dominant solution and forward
/// recursion is stable.
pub fn make_compound_m2(params: &TargetParamsM2, tail_tol: f64) -> Result<LatticeMeasure> {
    let TargetParamsM2 { r, p_bar, lambda, .. } = *params;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("r = {r} must be positive")));
    }
    check_unit_interval("p_bar", p_bar)?;
    check_tail_tol(tail_tol)?;
    if lambda == 0.0 {
        return make_negative_binomial(r, p_bar, tail_tol);
    }
    let q_bar = 1.0 - p_bar;
    let mu0 = (r * p_bar.ln() - lambda).exp();
    if mu0 == 0.0 || !mu0.is_finite() {
        return Err(Error::Instability(format!("starting weight p̄^r e^-λ = {mu0} is not representable")));
    }
    let mean = r * q_bar / p_bar + lambda.abs();
    let sd = (r * q_bar / (p_bar * p_bar) + lambda.abs()).sqrt();
    let min_len = (mean + 12.0 * sd + 40.0).ceil() as usize;
    let max_len = 50 * min_len + 100_000;
    let mut weights = vec![mu0];
    let mut prev = 0.0;
    let mut cur = mu0;
    let mut k = 0usize;
    loop {
        let kf = k as f64;
        let next = ((q_bar * (r + kf) + lambda) * cur - lambda * q_bar * prev) / (kf + 1.0);
        if !next.is_finite() || next.abs() > BLOWUP {
            return Err(Error::Instability(format!("recursion diverged at k = {}", k + 1)));
        }
        weights.push(next);
        prev = cur;
        cur = next;
        k += 1;
        // past the bulk, stop once two consecutive terms are negligible
        if k >= min_len && cur.abs() < 1e-3 * tail_tol && prev.abs() < 1e-3 * tail_tol {
            break;
        }
        if k > max_len {
            return Err(Error::Instability("recursion did not decay".into()));
        }
    }
    finish_compound(weights, lambda, tail_tol)
}

/// For tiny `|λ|` the backward pass divides by `λp` and loses everything,
/// while the (possibly signed) Poisson series is short, so convolve directly.
fn small_lambda_m1(n: u64, p: f64, lambda: f64, tail_tol: f64) -> Result<LatticeMeasure> {
    let mut terms = vec![(-lambda).exp()];
    while terms.last().is_some_and(|t| t.abs() > 1e-3 * tail_tol * f64::EPSILON) {
        let j = terms.len() as f64;
        let next = terms[terms.len() - 1] * lambda / j;
        terms.push(next);
    }
    let poisson = LatticeMeasure::new(0, terms);
    finish_compound(convolve(&make_binomial(n, p)?, &poisson).weights, lambda, tail_tol)
}

fn finish_compound(weights: Vec<f64>, lambda: f64, tail_tol: f64) -> Result<LatticeMeasure> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || w.abs() > BLOWUP) {
        return Err(Error::Instability(format!("weight {w} out of range")));
    }
    let mut m = LatticeMeasure::new(0, weights);
    m.trim_tails(tail_tol);
    let mass = m.mass();
    if lambda < 0.0 {
        if (mass - 1.0).abs() > SIGNED_MASS_TOL {
            return Err(Error::Instability(format!("signed target has mass {mass}")));
        }
    } else {
        if (mass - 1.0).abs() > SIGNED_MASS_TOL {
            return Err(Error::Instability(format!("target has mass {mass}")));
        }
        for w in m.weights.iter_mut() {
            *w /= mass;
        }
    }
    Ok(m)
}

/// Exact discrete convolution.
pub fn convolve(a: &LatticeMeasure, b: &LatticeMeasure) -> LatticeMeasure {
    if a.weights.is_empty() || b.weights.is_empty() {
        return LatticeMeasure::new(a.offset + b.offset, Vec::new());
    }
    let mut out = vec![0.0; a.weights.len() + b.weights.len() - 1];
    for (i, &x) in a.weights.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.weights.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    let mut m = LatticeMeasure::new(a.offset + b.offset, out);
    m.is_probability = a.is_probability && b.is_probability;
    m
}

/// Total-variation distance `½ Σ|a_k − b_k|` between measures of equal mass.
pub fn tv_distance(a: &LatticeMeasure, b: &LatticeMeasure) -> Result<f64> {
    let (ma, mb) = (a.mass(), b.mass());
    if (ma - mb).abs() > 1e-6 {
        return Err(Error::MassMismatch { left: ma, right: mb });
    }
    if a.weights.is_empty() && b.weights.is_empty() {
        return Ok(0.0);
    }
    let lo = a.offset.min(b.offset);
    let hi = a.max_index().max(b.max_index());
    Ok(0.5 * (lo..=hi).map(|k| (a.get(k) - b.get(k)).abs()).sum::<f64>())
}

/// `D = Σ_m |p_{m−2} − 2p_{m−1} + p_m|`: total variation of the second difference.
pub fn smoothness_d(a: &LatticeMeasure) -> f64 {
    if a.weights.is_empty() {
        return 0.0;
    }
    (a.offset..=a.max_index() + 2)
        .map(|m| (a.get(m - 2) - 2.0 * a.get(m - 1) + a.get(m)).abs())
        .sum()
}

/// `𝒟 = Σ_k |p_k − p_{k−1}|`: total variation of the first difference.
pub fn smoothness_d1(a: &LatticeMeasure) -> f64 {
    if a.weights.is_empty() {
        return 0.0;
    }
    (a.offset..=a.max_index() + 1).map(|k| (a.get(k) - a.get(k - 1)).abs()).sum()
}

/// Raw moments `(E X, E X², E X³)` over the stored window.
pub fn raw_moments(a: &LatticeMeasure) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (k, w) in a.iter() {
        let x = k as f64;
        m[0] += w * x;
        m[1] += w * x * x;
        m[2] += w * x * x * x;
    }
    m
}

/// Factorial moments `ϑ_j = E X(X−1)⋯(X−j+1)` for j = 1, 2, 3.
pub fn factorial_moments(a: &LatticeMeasure) -> [f64; 3] {
    let mut t = [0.0; 3];
    for (k, w) in a.iter() {
        let x = k as f64;
        t[0] += w * x;
        t[1] += w * x * (x - 1.0);
        t[2] += w * x * (x - 1.0) * (x - 2.0);
    }
    t
}

/// Factorial cumulants of a unit-mass measure.
///
/// Equivalent to `Γ₂ = ϑ₂ − m₁²`, `Γ₃ = ½(ϑ₃ − 3m₁ϑ₂ + 2m₁³)` but evaluated
/// through central moments, which avoids the cancellation of the raw form
/// when the mean is large: `Γ₂ = c₂ − m`, `Γ₃ = ½(c₃ − 3c₂ + 2m)`.
pub fn factorial_cumulants(a: &LatticeMeasure) -> CumulantTriple {
    let mean: f64 = a.iter().map(|(k, w)| w * k as f64).sum();
    let (mut c2, mut c3) = (0.0, 0.0);
    for (k, w) in a.iter() {
        let d = k as f64 - mean;
        c2 += w * d * d;
        c3 += w * d * d * d;
    }
    CumulantTriple::new(mean, c2 - mean, 0.5 * (c3 - 3.0 * c2 + 2.0 * mean))
}
