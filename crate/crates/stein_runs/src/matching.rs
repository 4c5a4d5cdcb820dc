//! Three-cumulant matching of a count `W` to a compound target.
//!
//! Given `(Γ₁, Γ₂, Γ₃)` the sign of `Γ₂ = Var W − E W` picks the family:
//! underdispersed counts go to `Bin(n, p) ∗ Po(λ)`, overdispersed ones to
//! `NB(r, p̄) ∗ Po(λ)`. Both systems have closed-form solutions. A negative
//! `λ` is accepted and flagged, since the resulting signed target is still a
//! usable approximation.

use serde::{Deserialize, Serialize};

use crate::dist_core::{CumulantTriple, Target, TargetKind, TargetParamsM1, TargetParamsM2};
use crate::error::{Error, Result};

/// Relative tolerance for re-deriving the input cumulants from the match.
const SYSTEM_TOL: f64 = 1e-10;

/// When `ñ` is this close (relatively) to an integer, `n` is taken as that
/// integer, so rounding in `Γ` does not turn `27` into `26.999…` and then
/// `26`. `δ = ñ − n` then keeps the system exact, at the price of a `δ` that
/// may be negative at the level of the tolerance.
const INTEGER_SNAP: f64 = 1e-9;

/// Largest `ñ` accepted; beyond this the binomial part is numerically Poisson.
const MAX_N_TILDE: f64 = 1e12;

/// `Γ` from raw moments `(E W, E W², E W³)`.
///
/// Uses `ϑ₂ = m₂ − m₁`, `ϑ₃ = m₃ − 3m₂ + 2m₁`, then `Γ₂ = ϑ₂ − m₁²` and
/// `Γ₃ = ½(ϑ₃ − 3m₁ϑ₂ + 2m₁³)`.
pub fn cumulants_from_raw_moments(m1: f64, m2: f64, m3: f64) -> CumulantTriple {
    let t2 = m2 - m1;
    let t3 = m3 - 3.0 * m2 + 2.0 * m1;
    CumulantTriple::new(m1, t2 - m1 * m1, 0.5 * (t3 - 3.0 * m1 * t2 + 2.0 * m1 * m1 * m1))
}

/// `q̄` of the matched NB part written directly in raw moments.
pub fn beta2_from_raw_moments(m1: f64, m2: f64, m3: f64) -> f64 {
    let num = m3 - 3.0 * m1 * m2 - 3.0 * m2 + 2.0 * m1.powi(3) + 3.0 * m1 * m1 + 2.0 * m1;
    let den = m3 - 3.0 * m1 * m2 - m2 + 2.0 * m1.powi(3) + m1 * m1;
    num / den
}

/// Family choice from the sign of `Γ₂`.
pub fn select_regime(gamma: &CumulantTriple) -> Result<TargetKind> {
    if gamma.gamma2 < 0.0 {
        Ok(TargetKind::M1)
    } else if gamma.gamma2 > 0.0 {
        Ok(TargetKind::M2)
    } else {
        Err(Error::RegimeUndetermined)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Largest relative residual of `np + λ = Γ₁`, `−(n+δ)p² = Γ₂`, `(n+δ)p³ = Γ₃`.
pub fn m1_system_residual(t: &TargetParamsM1, gamma: &CumulantTriple) -> f64 {
    let nt = t.n as f64 + t.delta;
    let g1 = t.n as f64 * t.p + t.lambda;
    rel_err(g1, gamma.gamma1)
        .max(rel_err(-nt * t.p * t.p, gamma.gamma2))
        .max(rel_err(nt * t.p.powi(3), gamma.gamma3))
}

/// Largest relative residual of `rq̄/p̄ + λ = Γ₁`, `rq̄²/p̄² = Γ₂`, `rq̄³/p̄³ = Γ₃`.
pub fn m2_system_residual(t: &TargetParamsM2, gamma: &CumulantTriple) -> f64 {
    let s = t.q_bar / t.p_bar;
    rel_err(t.r * s + t.lambda, gamma.gamma1)
        .max(rel_err(t.r * s * s, gamma.gamma2))
        .max(rel_err(t.r * s.powi(3), gamma.gamma3))
}

/// Solves for `Bin(n, p) ∗ Po(λ)`: `ñ = −Γ₂³/Γ₃²`, `n = ⌊ñ⌋`, `δ = ñ − n`,
/// `p = −Γ₃/Γ₂`, `λ = Γ₁ − np`.
pub fn match_m1(gamma: &CumulantTriple) -> Result<TargetParamsM1> {
    let CumulantTriple { gamma1, gamma2, gamma3 } = *gamma;
    if !(gamma2 < 0.0 && gamma3 > 0.0) {
        return Err(Error::Regime(format!(
            "binomial matching needs gamma2 < 0 < gamma3, got ({gamma2}, {gamma3})"
        )));
    }
    let p = -gamma3 / gamma2;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Infeasible(format!("matched p = {p} is outside (0, 1)")));
    }
    let n_tilde = -gamma2.powi(3) / (gamma3 * gamma3);
    if !(n_tilde <= MAX_N_TILDE) {
        return Err(Error::Infeasible(format!("matched n = {n_tilde} is too large")));
    }
    let nearest = n_tilde.round();
    let n = if (n_tilde - nearest).abs() <= INTEGER_SNAP * nearest.max(1.0) { nearest } else { n_tilde.floor() };
    let t = TargetParamsM1 { n: n as u64, p, lambda: gamma1 - n * p, delta: n_tilde - n, n_tilde };
    let res = m1_system_residual(&t, gamma);
    if res > SYSTEM_TOL {
        return Err(Error::Instability(format!("binomial match residual {res}")));
    }
    Ok(t)
}

/// Solves for `NB(r, p̄) ∗ Po(λ)`: `p̄ = Γ₂/(Γ₂+Γ₃)`, `r = Γ₂³/Γ₃²`,
/// `λ = Γ₁ − Γ₂²/Γ₃`.
pub fn match_m2(gamma: &CumulantTriple) -> Result<TargetParamsM2> {
    let CumulantTriple { gamma1, gamma2, gamma3 } = *gamma;
    if !(gamma2 > 0.0 && gamma3 > 0.0) {
        return Err(Error::Regime(format!(
            "negative binomial matching needs gamma2, gamma3 > 0, got ({gamma2}, {gamma3})"
        )));
    }
    let sum = gamma2 + gamma3;
    if !(sum > 0.0) {
        return Err(Error::Infeasible("gamma2 + gamma3 is not positive".into()));
    }
    let t = TargetParamsM2 {
        r: gamma2.powi(3) / (gamma3 * gamma3),
        p_bar: gamma2 / sum,
        lambda: gamma1 - gamma2 * gamma2 / gamma3,
        q_bar: gamma3 / sum,
    };
    let res = m2_system_residual(&t, gamma);
    if res > SYSTEM_TOL {
        return Err(Error::Instability(format!("negative binomial match residual {res}")));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    /// (H1) for M1, (H2) for M2.
    pub h_ok: bool,
    /// Perturbation ratio; the main bound needs it below ½.
    pub theta: f64,
    /// Sign of `λ` as −1, 0 or 1.
    pub lambda_sign: i8,
    pub p_in_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub which: TargetKind,
    pub m1_params: Option<TargetParamsM1>,
    pub m2_params: Option<TargetParamsM2>,
    pub signed: bool,
    pub diagnostics: MatchDiagnostics,
}

impl MatchResult {
    pub fn target(&self) -> Target {
        match (self.m1_params, self.m2_params) {
            (Some(t), _) => Target::M1(t),
            (_, Some(t)) => Target::M2(t),
            _ => unreachable!("a match always carries parameters"),
        }
    }
}

/// `θ` without the applicability gate: `|λ|/(⌊n+λ/p⌋q)` or `|λ|q̄/(rq̄+λp̄)`.
fn raw_theta(t: &Target) -> f64 {
    match t {
        Target::M1(m) => m.lambda.abs() / (m.floor_mean_ratio() * m.q()),
        Target::M2(m) => m.lambda.abs() * m.q_bar / (m.r * m.q_bar + m.lambda * m.p_bar),
    }
}

/// Picks the regime and matches. Assumption failures are reported in the
/// diagnostics, not raised; only bound evaluation is gated on them.
pub fn match_cumulants(gamma: &CumulantTriple) -> Result<MatchResult> {
    match_as(gamma, select_regime(gamma)?)
}

/// Matches into a chosen family regardless of the sign of `Γ₂`; the family
/// solvers still refuse parameters outside their domain.
pub fn match_as(gamma: &CumulantTriple, which: TargetKind) -> Result<MatchResult> {
    let (m1_params, m2_params, p) = match which {
        TargetKind::M1 => {
            let t = match_m1(gamma)?;
            (Some(t), None, t.p)
        }
        TargetKind::M2 => {
            let t = match_m2(gamma)?;
            (None, Some(t), t.p_bar)
        }
    };
    let mut out = MatchResult {
        which,
        m1_params,
        m2_params,
        signed: false,
        diagnostics: MatchDiagnostics { h_ok: false, theta: 0.0, lambda_sign: 0, p_in_range: p > 0.0 && p < 1.0 },
    };
    let target = out.target();
    let lambda = target.lambda();
    out.signed = lambda < 0.0;
    out.diagnostics.h_ok = crate::stein_ops::check_assumptions(&target).ok;
    out.diagnostics.theta = raw_theta(&target);
    out.diagnostics.lambda_sign = if lambda > 0.0 {
        1
    } else if lambda < 0.0 {
        -1
    } else {
        0
    };
    Ok(out)
}
