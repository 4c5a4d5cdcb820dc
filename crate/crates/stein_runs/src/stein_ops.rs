//! Stein operators for the binomial family and their compound-Poisson
//! perturbations, the Stein equation on a truncated support, and the
//! constants (ε, γ, θ, Θ) that turn a Stein bound into a TV bound.
//!
//! Every operator here has the shape
//! `A g(k) = (a + βk) g(k+1) − k g(k) − λβ Δg(k+1)` with
//! `Δg(k+1) = g(k+2) − g(k+1)`; the unified (no-Poisson) form is `λ = 0`.

use serde::{Deserialize, Serialize};

use crate::dist_core::{LatticeMeasure, Target, TargetKind, TargetParamsM1, TargetParamsM2};
use crate::error::{Error, Result};

/// `A g(k) = (α + βk) g(k+1) − k g(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedOperator {
    pub alpha: f64,
    pub beta: f64,
}

impl UnifiedOperator {
    pub fn binomial(n: f64, p: f64) -> Self {
        let q = 1.0 - p;
        UnifiedOperator { alpha: n * p / q, beta: -p / q }
    }

    pub fn negative_binomial(r: f64, p_bar: f64) -> Self {
        let q_bar = 1.0 - p_bar;
        UnifiedOperator { alpha: r * q_bar, beta: q_bar }
    }

    /// Same coefficients as the binomial with a real size `N`.
    pub fn pseudo_binomial(big_n: f64, p: f64) -> Self {
        Self::binomial(big_n, p)
    }

    /// Chen's Poisson operator `λ g(k+1) − k g(k)`.
    pub fn poisson(lambda: f64) -> Self {
        UnifiedOperator { alpha: lambda, beta: 0.0 }
    }

    pub fn apply(&self, g: impl Fn(i64) -> f64, k: i64) -> f64 {
        (self.alpha + self.beta * k as f64) * g(k + 1) - k as f64 * g(k)
    }
}

/// `A g(k) = (a + βk) g(k+1) − k g(k) − λβ Δg(k+1)`, `a = α + λ(1 − β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundOperator {
    pub a: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl CompoundOperator {
    pub fn from_unified(op: UnifiedOperator, lambda: f64) -> Self {
        CompoundOperator { a: op.alpha + lambda * (1.0 - op.beta), beta: op.beta, lambda }
    }

    pub fn m1(t: &TargetParamsM1) -> Self {
        Self::from_unified(UnifiedOperator::binomial(t.n as f64, t.p), t.lambda)
    }

    pub fn m2(t: &TargetParamsM2) -> Self {
        Self::from_unified(UnifiedOperator::negative_binomial(t.r, t.p_bar), t.lambda)
    }

    pub fn for_target(t: &Target) -> Self {
        match t {
            Target::M1(p) => Self::m1(p),
            Target::M2(p) => Self::m2(p),
        }
    }

    pub fn apply(&self, g: impl Fn(i64) -> f64, k: i64) -> f64 {
        let (g1, g2) = (g(k + 1), g(k + 2));
        (self.a + self.beta * k as f64) * g1 - k as f64 * g(k) - self.lambda * self.beta * (g2 - g1)
    }
}

/// `|Σ_k target_k · A g(k)|`.
pub fn stein_identity_residual(target: &LatticeMeasure, op: &CompoundOperator, g: impl Fn(i64) -> f64) -> f64 {
    target.iter().map(|(k, w)| w * op.apply(&g, k)).sum::<f64>().abs()
}

/// Solution of `A g(k) = h(k) − E h(M)` on `k = 0..=support_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinSolution {
    /// `g(0), g(1), …, g(K + 1)` with `K` the solved range; `g(0) = 0` by
    /// convention and the function is held flat beyond the last entry.
    pub g: Vec<f64>,
    /// Largest equation residual over `0..K`.
    pub residual: f64,
}

impl SteinSolution {
    pub fn value(&self, k: i64) -> f64 {
        if k <= 0 {
            0.0
        } else {
            self.g[(k as usize).min(self.g.len() - 1)]
        }
    }

    /// `max_{k ≥ 1} |g(k+1) − g(k)|`. `Δg(0)` is excluded since `g(0)` is a
    /// free constant of the equation.
    pub fn max_abs_delta(&self) -> f64 {
        self.g.windows(2).skip(1).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }
}

/// Residual ceiling for an accepted Stein solution.
const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Solves the Stein equation for test function `h` against `target`, whose
/// pmf must satisfy `Σ_k target_k · A g(k) = 0` (the target of `op`).
///
/// Summing the equation against the target pmf `μ` up to `K` telescopes to
/// the first-order relation
/// `(K+1)μ_{K+1} g(K+1) − λβ μ_K g(K+2) = S_K`, `S_K = Σ_{k≤K} μ_k (h(k) − Eh)`,
/// so the solutions form a one-parameter family `g = P + c·u`. Solving the
/// three-term system directly is hopeless in double precision: any rounding
/// in the direction of `μ` is amplified by the near-singularity and swamps
/// the answer. Here `u` (the homogeneous solution) is normalized at its peak
/// and both `u` and `P` are propagated away from that peak, which is the
/// stable direction on either side. The constant `c` is chosen to minimize
/// `max |Δg|` over the solved range; with `λβ = 0` the relation determines
/// `g` outright (for Poisson it is Chen's formula).
///
/// The solved range is `0..=K` with `K = min(support_max, max_index − 1)`.
pub fn solve_stein_equation(
    op: &CompoundOperator,
    h: impl Fn(i64) -> f64,
    target: &LatticeMeasure,
    support_max: usize,
) -> Result<SteinSolution> {
    if target.offset < 0 || target.weights.is_empty() {
        return Err(Error::Domain("target must live on the non-negative integers".into()));
    }
    let last = target.max_index() as usize;
    if last < 2 {
        return Err(Error::Domain("target support too short for a Stein solve".into()));
    }
    let top = support_max.min(last - 1).max(1);
    let mu_full = restore_low_tail(op, target);
    let mu = |k: usize| mu_full.get(k).copied().unwrap_or(0.0);
    let eh = target.expect(&h) / target.mass();
    let r = |k: usize| h(k as i64) - eh;

    // partial sums S_K, taken from whichever end keeps them relatively accurate
    let mut head = vec![0.0; last + 1];
    let mut acc = 0.0;
    for k in 0..=last {
        acc += mu(k) * r(k);
        head[k] = acc;
    }
    let mut tail = vec![0.0; last + 1];
    let mut acc = 0.0;
    for k in (0..=last).rev() {
        tail[k] = -acc;
        acc += mu(k) * r(k);
    }
    let mut cum = 0.0;
    let s: Vec<f64> = (0..=last)
        .map(|k| {
            cum += mu(k).abs();
            if cum < 0.5 * target.mass() {
                head[k]
            } else {
                tail[k]
            }
        })
        .collect();

    let lb = op.lambda * op.beta;
    // first index carrying weight after the low tail was restored
    let lo = mu_full.iter().position(|&m| m != 0.0).unwrap_or(0);
    if lo >= top {
        return Err(Error::Domain("solve range ends before the target support starts".into()));
    }
    let mut g = vec![0.0; top + 2];
    if lb == 0.0 {
        for k in lo..=top {
            let denom = (k as f64 + 1.0) * mu(k + 1);
            g[k + 1] = if denom != 0.0 { s[k] / denom } else { g[k] };
        }
    } else {
        // g(K+2) = ρ_K g(K+1) + σ_K for K = lo..top−1
        let mut rho = vec![0.0; top];
        let mut sigma = vec![0.0; top];
        for k in lo..top {
            let m = mu(k);
            if m == 0.0 {
                return Err(Error::Instability(format!("target weight vanishes at k = {k}")));
            }
            rho[k] = (k as f64 + 1.0) * mu(k + 1) / (lb * m);
            sigma[k] = -s[k] / (lb * m);
            if rho[k] == 0.0 || !rho[k].is_finite() {
                return Err(Error::Instability(format!("degenerate recursion at k = {k}")));
            }
        }
        // indices into g: j = lo+1..=top+1, step j → j+1 uses ρ_{j−1}
        let first = lo + 1;
        let mut log_u = vec![0.0; top + 2];
        for j in first..=top {
            log_u[j + 1] = log_u[j] + rho[j - 1].abs().ln();
        }
        let anchor = (first..=top + 1).max_by(|&a, &b| log_u[a].total_cmp(&log_u[b])).unwrap();
        let mut u = vec![0.0; top + 2];
        let mut part = vec![0.0; top + 2];
        u[anchor] = 1.0;
        for j in anchor..=top {
            u[j + 1] = rho[j - 1] * u[j];
            part[j + 1] = rho[j - 1] * part[j] + sigma[j - 1];
        }
        for j in (first..anchor).rev() {
            u[j] = u[j + 1] / rho[j - 1];
            part[j] = (part[j + 1] - sigma[j - 1]) / rho[j - 1];
        }
        let du: Vec<f64> = (first..=top).map(|j| u[j + 1] - u[j]).collect();
        let dp: Vec<f64> = (first..=top).map(|j| part[j + 1] - part[j]).collect();
        let c = minimize_max_abs(&dp, &du);
        for j in first..=top + 1 {
            g[j] = part[j] + c * u[j];
        }
    }
    // only reached when μ underflows at the far left; hold g flat there
    for k in (1..=lo).rev() {
        g[k] = g[k + 1];
    }
    let mut sol = SteinSolution { g, residual: 0.0 };
    sol.residual = (lo as i64..top as i64)
        .map(|k| (op.apply(|j| sol.value(j), k) - (h(k) - eh)).abs())
        .fold(0.0, f64::max);
    if !(sol.residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Instability(format!(
            "Stein solve residual {} exceeds {SOLVE_RESIDUAL_TOL}",
            sol.residual
        )));
    }
    Ok(sol)
}

/// Target weights on `0..=max_index`, with the trimmed low tail regenerated
/// from the adjoint recursion `jμ_j = (a + β(j−1) + λβ)μ_{j−1} − λβμ_{j−2}`,
/// which is stable running up the rising left tail.
fn restore_low_tail(op: &CompoundOperator, target: &LatticeMeasure) -> Vec<f64> {
    let lo = target.offset as usize;
    let mut mu = vec![0.0; lo];
    mu.extend(target.weights.iter().copied());
    if lo == 0 {
        return mu;
    }
    let lb = op.lambda * op.beta;
    let mut nu = vec![0.0; lo + 1];
    nu[0] = 1.0;
    for j in 1..=lo {
        let jf = j as f64;
        let prev2 = if j >= 2 { nu[j - 2] } else { 0.0 };
        nu[j] = ((op.a + op.beta * (jf - 1.0) + lb) * nu[j - 1] - lb * prev2) / jf;
        if nu[j].abs() > 1e250 {
            nu.iter_mut().take(j + 1).for_each(|v| *v *= 1e-250);
        }
    }
    if nu[lo] == 0.0 || !nu[lo].is_finite() {
        return mu;
    }
    let scale = mu[lo] / nu[lo];
    for j in 0..lo {
        mu[j] = nu[j] * scale;
    }
    mu
}

/// `argmin_c max_j |a_j + c·b_j|`, a convex piecewise-linear problem.
///
/// The minimizer lies between the smallest and largest root `−a_j/b_j`.
/// Those roots can span hundreds of orders of magnitude, so the bracket is
/// bisected in `asinh(c)` on the sign of a subgradient.
fn minimize_max_abs(a: &[f64], b: &[f64]) -> f64 {
    let roots = a.iter().zip(b).filter(|(_, &bj)| bj != 0.0).map(|(&aj, &bj)| -aj / bj);
    let (lo, hi) = roots.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if lo > hi {
        return 0.0;
    }
    let slope = |c: f64| {
        let (mut best, mut grad) = (f64::NEG_INFINITY, 0.0);
        for (&aj, &bj) in a.iter().zip(b) {
            let v = aj + c * bj;
            if v.abs() > best {
                best = v.abs();
                grad = v.signum() * bj;
            }
        }
        grad
    };
    let (mut lo, mut hi) = (lo.asinh(), hi.asinh());
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if slope(mid.sinh()) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi)).sinh()
}

/// Uncompounded families with a classical `‖Δg‖` bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Binomial { n: u64, p: f64 },
    NegativeBinomial { r: f64, p_bar: f64 },
    PseudoBinomial { big_n: f64, p: f64 },
}

/// `‖Δg‖ ≤ 2/(np)`, `2/(rq̄)`, `2/(⌊N⌋p)` for indicator test functions.
pub fn delta_g_bound_simple(family: Family) -> f64 {
    match family {
        Family::Binomial { n, p } => 2.0 / (n as f64 * p),
        Family::NegativeBinomial { r, p_bar } => 2.0 / (r * (1.0 - p_bar)),
        Family::PseudoBinomial { big_n, p } => 2.0 / (big_n.floor() * p),
    }
}

/// Size of the Poisson perturbation against the base operator's strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    /// `|λ|p/q` for M1, `|λ|q̄` for M2.
    pub epsilon: f64,
    /// `⌊n + λ/p⌋` for M1, `rq̄ + λp̄` for M2.
    pub gamma: f64,
    /// `2/p` for M1, `2` for M2.
    pub omega: f64,
}

impl PerturbationBudget {
    pub fn m1(t: &TargetParamsM1) -> Self {
        let q = t.q();
        PerturbationBudget {
            epsilon: t.lambda.abs() * t.p / q,
            gamma: t.floor_mean_ratio(),
            omega: 2.0 / t.p,
        }
    }

    pub fn m2(t: &TargetParamsM2) -> Self {
        PerturbationBudget {
            epsilon: t.lambda.abs() * t.q_bar,
            gamma: t.r * t.q_bar + t.lambda * t.p_bar,
            omega: 2.0,
        }
    }

    pub fn for_target(t: &Target) -> Self {
        match t {
            Target::M1(p) => Self::m1(p),
            Target::M2(p) => Self::m2(p),
        }
    }

    /// `γ/ω − ε`; the assumption holds iff this is positive.
    pub fn margin(&self) -> f64 {
        self.gamma / self.omega - self.epsilon
    }
}

/// Outcome of the (H1)/(H2) check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub ok: bool,
    pub epsilon: f64,
    pub margin: f64,
}

/// (H1): `ε₁ < (p/2)⌊n + λ/p⌋`; (H2): `ε₂ < (rq̄ + λp̄)/2`. `|λ|` throughout.
pub fn check_assumptions(t: &Target) -> AssumptionCheck {
    let b = PerturbationBudget::for_target(t);
    let margin = b.margin();
    AssumptionCheck { ok: margin > 0.0, epsilon: b.epsilon, margin }
}

/// `‖Δg‖ ≤ 1/(γp − 2ε₁)` (M1) or `1/(γ − 2ε₂)` (M2), i.e. `1/(2(γ/ω − ε))`.
pub fn delta_g_bound_perturbed(budget: &PerturbationBudget, which: TargetKind) -> Result<f64> {
    let margin = budget.margin();
    if margin <= 0.0 {
        let h = match which {
            TargetKind::M1 => "H1",
            TargetKind::M2 => "H2",
        };
        return Err(Error::Assumption(format!(
            "{h} fails: epsilon = {} is not below gamma/omega = {}",
            budget.epsilon,
            budget.gamma / budget.omega
        )));
    }
    Ok(1.0 / (2.0 * margin))
}

/// `θ` and the prefactor `Θ` of the main bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaConstants {
    pub theta: f64,
    pub big_theta: f64,
}

/// Computes `θ` and `Θ`, taking `|λ|` so signed targets are covered.
///
/// `Θ` has `λ` in its denominator, so `λ = 0` is reported as inapplicable
/// rather than passed to the limit.
pub fn theta_constants(t: &Target) -> Result<ThetaConstants> {
    let lambda = t.lambda().abs();
    if lambda == 0.0 {
        return Err(Error::Inapplicable("lambda = 0 leaves Theta undefined".into()));
    }
    let (theta, scale) = match t {
        Target::M1(m) => {
            let q = m.q();
            let gamma = m.floor_mean_ratio();
            if gamma <= 0.0 {
                return Err(Error::Inapplicable(format!("floor(n + lambda/p) = {gamma} is not positive")));
            }
            (lambda / (gamma * q), q / (lambda * m.p))
        }
        Target::M2(m) => {
            let gamma = m.r * m.q_bar + m.lambda * m.p_bar;
            if gamma <= 0.0 {
                return Err(Error::Inapplicable(format!("r q_bar + lambda p_bar = {gamma} is not positive")));
            }
            (lambda * m.q_bar / gamma, 1.0 / (lambda * m.q_bar))
        }
    };
    if theta >= 0.5 {
        return Err(Error::Inapplicable(format!("theta = {theta} is not below 1/2")));
    }
    Ok(ThetaConstants { theta, big_theta: theta * scale / (1.0 - 2.0 * theta) })
}
