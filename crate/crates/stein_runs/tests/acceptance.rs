//! Acceptance suite: ten end-to-end checks with pinned tolerances, one
//! PASS/FAIL line each. Oracles are written out here independently of the
//! library code they check.
//!
//! A criterion listed in `KNOWN_FAILURES` is still run and still printed as
//! FAIL; the test only insists that it keeps failing, so a fix shows up as a
//! test failure that forces the list to be updated.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stein_runs::bounds::{
    bound_kruns_t5, bound_wang_xia, product_chain_check, smoothness_k_11runs, XiMode,
};
use stein_runs::dist_core::{
    convolve, factorial_cumulants, make_binomial, make_compound_m1, make_compound_m2, make_negative_binomial,
    make_poisson, tv_distance, CumulantTriple, Target, TargetKind, TargetParamsM1, TargetParamsM2,
};
use stein_runs::harness::{family_bounds, fit_log_log, CSV_HEADER};
use stein_runs::matching::{m1_system_residual, match_as, match_cumulants};
use stein_runs::runs_models::{brute_force_law, closed_cumulants, conditional_laws, exact_law, RunsKind, RunsModel};
use stein_runs::stein_ops::{
    delta_g_bound_perturbed, solve_stein_equation, stein_identity_residual, CompoundOperator, PerturbationBudget,
};

/// 8: the closed-form k-runs bound stays above the earlier one on the desk
/// grid (its rate factor saturates at 9 while the other caps at 2).
/// 9: on the circle `W₂`'s last runs share trials with `W₁`'s first, so the
/// conditional law does not factorize and `D ≤ 𝒟·𝒟` fails; the smoothness
/// lemma half of the criterion passes.
const KNOWN_FAILURES: &[usize] = &[8, 9];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn max_gamma_gap(a: &CumulantTriple, b: &CumulantTriple) -> f64 {
    [(a.gamma1, b.gamma1), (a.gamma2, b.gamma2), (a.gamma3, b.gamma3)]
        .iter()
        .map(|&(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

fn random_model(rng: &mut ChaCha8Rng, kind: RunsKind) -> RunsModel {
    match kind {
        RunsKind::OneOne => {
            let l = rng.gen_range(5..=14);
            RunsModel::one_one((0..l).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
        }
        RunsKind::K1k2 => {
            // closed forms need 4m + 1 trials, m = k1 + k2 − 1
            let (k1, k2) = [(1, 2), (2, 1), (1, 3), (2, 2), (3, 1)][rng.gen_range(0..5)];
            let m = k1 + k2 - 1;
            let l = rng.gen_range(4 * m + 1..=14);
            RunsModel::k1k2(k1, k2, (0..l).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
        }
        RunsKind::Kruns => {
            let k = rng.gen_range(1..=4usize);
            let l = rng.gen_range((4 * k - 2).max(3)..=14);
            RunsModel::kruns(k, vec![rng.gen_range(0.05..0.95); l]).unwrap()
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut law_gap, mut gamma_gap) = (0.0f64, 0.0f64);
    for kind in [RunsKind::OneOne, RunsKind::K1k2, RunsKind::Kruns] {
        for _ in 0..50 {
            let model = random_model(&mut rng, kind);
            let law = exact_law(&model).map_err(|e| e.to_string())?;
            law_gap = law_gap.max(law.linf_distance(&brute_force_law(&model).map_err(|e| e.to_string())?));
            let closed = closed_cumulants(&model).map_err(|e| e.to_string())?;
            gamma_gap = gamma_gap.max(max_gamma_gap(&closed, &factorial_cumulants(&law)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("law L∞ {law_gap:.2e}, cumulant gap {gamma_gap:.2e}, {secs:.1} s");
    if law_gap <= 1e-13 && gamma_gap <= 1e-10 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_target(rng: &mut ChaCha8Rng, i: usize) -> Target {
    if i.is_multiple_of(2) {
        Target::M1(TargetParamsM1::exact(rng.gen_range(1..40), rng.gen_range(0.05..0.9), rng.gen_range(0.05..8.0)))
    } else {
        Target::M2(TargetParamsM2::new(rng.gen_range(0.5..12.0), rng.gen_range(0.1..0.9), rng.gen_range(0.05..8.0)))
    }
}

fn stein_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut targets: Vec<Target> = (0..19).map(|i| random_target(&mut rng, i)).collect();
    // signed: r q̄ + λ p̄ = 2.5 − 0.4 > 0
    targets.push(Target::M2(TargetParamsM2::new(5.0, 0.5, -0.8)));
    let mut worst = 0.0f64;
    let mut signed_seen = false;
    for t in &targets {
        let law = t.build(1e-15).map_err(|e| e.to_string())?;
        signed_seen |= matches!(t, Target::M2(m) if m.lambda < 0.0);
        let op = CompoundOperator::for_target(t);
        let mut tests: Vec<Box<dyn Fn(i64) -> f64>> =
            vec![Box::new(|_| 1.0), Box::new(|k| k as f64), Box::new(|k| k.min(10) as f64)];
        for a in 0..=law.max_index().min(40) {
            tests.push(Box::new(move |k| (k <= a) as i32 as f64));
        }
        for g in &tests {
            worst = worst.max(stein_identity_residual(&law, &op, g));
        }
    }
    let detail = format!("max residual {worst:.2e} over {} targets", targets.len());
    if worst <= 1e-9 && signed_seen {
        Ok(detail)
    } else {
        Err(format!("{detail}, signed target present: {signed_seen}"))
    }
}

fn panjer_vs_convolution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let lambda = rng.gen_range(0.05..10.0);
        let poisson = make_poisson(lambda, 1e-16).map_err(|e| e.to_string())?;
        let (built, oracle) = if i % 2 == 0 {
            let (n, p) = (rng.gen_range(1..60), rng.gen_range(0.05..0.95));
            let t = TargetParamsM1::exact(n, p, lambda);
            (make_compound_m1(&t, 1e-16), convolve(&make_binomial(n, p).unwrap(), &poisson))
        } else {
            let (r, pb) = (rng.gen_range(0.3..15.0), rng.gen_range(0.05..0.8));
            let t = TargetParamsM2::new(r, pb, lambda);
            (make_compound_m2(&t, 1e-16), convolve(&make_negative_binomial(r, pb, 1e-16).unwrap(), &poisson))
        };
        worst = worst.max(built.map_err(|e| e.to_string())?.linf_distance(&oracle));
    }
    let detail = format!("max L∞ {worst:.2e} over 20 cases");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn delta_g_lemma() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        // 1/(⌊n + λ/p⌋p − 2|λ|p/q) = 1/(30·0.8 − 2·2.4·4)
        (Target::M1(TargetParamsM1::exact(27, 0.8, 2.4)), 1.0 / (30.0 * 0.8 - 2.0 * 2.4 * 0.8 / 0.2)),
        // 1/(r q̄ + λ p̄ − 2|λ| q̄) = 1/(1.5 + 0.2 − 0.4)
        (Target::M2(TargetParamsM2::new(3.0, 0.5, 0.4)), 1.0 / (1.5 + 0.2 - 0.4)),
    ];
    for (t, oracle) in cases {
        let lib = delta_g_bound_perturbed(&PerturbationBudget::for_target(&t), t.kind()).map_err(|e| e.to_string())?;
        let law = t.build(1e-15).map_err(|e| e.to_string())?;
        let op = CompoundOperator::for_target(&t);
        let top = law.max_index();
        let mut worst = 0.0f64;
        for a in 0..=top {
            let h = move |k: i64| (k <= a) as i32 as f64;
            let s = solve_stein_equation(&op, h, &law, top as usize).map_err(|e| e.to_string())?;
            worst = worst.max(s.max_abs_delta());
        }
        ok &= worst <= oracle && rel(lib, oracle) < 1e-12;
        lines.push(format!("{:?} max|Δg| {worst:.4} vs {oracle:.4}", t.kind()));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matching_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut m1_res, mut m2_err) = (0.0f64, 0.0f64);
    for i in 0..50 {
        if i % 2 == 0 {
            let t = TargetParamsM1::exact(rng.gen_range(5..60), rng.gen_range(0.1..0.8), rng.gen_range(0.2..6.0));
            let gamma = factorial_cumulants(&make_compound_m1(&t, 1e-16).map_err(|e| e.to_string())?);
            let back = match_as(&gamma, TargetKind::M1).map_err(|e| e.to_string())?;
            let Target::M1(b) = back.target() else { return Err("matched the wrong family".into()) };
            m1_res = m1_res.max(m1_system_residual(&b, &gamma));
        } else {
            let t = TargetParamsM2::new(rng.gen_range(1.0..12.0), rng.gen_range(0.1..0.6), rng.gen_range(0.2..6.0));
            let gamma = factorial_cumulants(&make_compound_m2(&t, 1e-16).map_err(|e| e.to_string())?);
            let back = match_as(&gamma, TargetKind::M2).map_err(|e| e.to_string())?;
            let Target::M2(b) = back.target() else { return Err("matched the wrong family".into()) };
            m2_err = m2_err.max(rel(b.r, t.r)).max(rel(b.p_bar, t.p_bar)).max(rel(b.lambda, t.lambda));
        }
    }
    // identical-p (1,1): Γ = (Na, −3Na², 10Na³) with a = p(1−p)
    let mut reproduced = true;
    for big_n in [50usize, 100, 1000] {
        for p in [0.3, 0.5, 0.6] {
            let a = p * (1.0 - p);
            let gamma = closed_cumulants(&RunsModel::one_one(vec![p; big_n]).unwrap()).map_err(|e| e.to_string())?;
            let m = match_as(&gamma, TargetKind::M1).map_err(|e| e.to_string())?;
            let Target::M1(t) = m.target() else { return Err("matched the wrong family".into()) };
            reproduced &= t.n == (27 * big_n / 100) as u64 && rel(t.p, 10.0 / 3.0 * a) < 1e-12;
        }
    }
    let detail = format!("M1 residual {m1_res:.2e}, M2 rel err {m2_err:.2e}, (1,1) n and p reproduced: {reproduced}");
    if m1_res <= 1e-10 && m2_err <= 1e-9 && reproduced {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn soundness() -> Outcome {
    let cases: &[(RunsKind, usize, usize, f64, &[usize])] = &[
        (RunsKind::OneOne, 1, 1, 0.6, &[50, 100, 200]),
        (RunsKind::K1k2, 1, 2, 0.3, &[40, 80]),
        (RunsKind::Kruns, 0, 3, 0.3, &[100, 200]),
    ];
    let mut checked = 0;
    let mut tightest = f64::INFINITY;
    for &(kind, k1, k2, p, grid) in cases {
        for &big_n in grid {
            let model = RunsModel::identical(kind, big_n, k1, k2, p).unwrap();
            let law = exact_law(&model).map_err(|e| e.to_string())?;
            let m = match_cumulants(&factorial_cumulants(&law)).map_err(|e| e.to_string())?;
            let tv = tv_distance(&law, &m.target().build(1e-14).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for report in family_bounds(&model, &m, XiMode::Exact).map_err(|e| e.to_string())? {
                if let Some(b) = report.bound_value {
                    checked += 1;
                    tightest = tightest.min(b / tv);
                    if b < tv {
                        return Err(format!("{kind} N={big_n}: {} = {b:.3e} below TV {tv:.3e}", report.name));
                    }
                }
            }
        }
    }
    Ok(format!("{checked} applicable bounds, smallest bound/TV {tightest:.1}"))
}

fn slope(points: &[(f64, f64)]) -> Result<f64, String> {
    fit_log_log(points).map(|f| f.slope).map_err(|e| e.to_string())
}

fn rates() -> Outcome {
    // ⌊27N/100⌋ = 27N/100 on this grid, so the matched δ stays at zero;
    // N = 50 (δ = ½) is fitted separately for the record only
    let mut tv_points = Vec::new();
    for big_n in [50usize, 100, 200, 300, 400] {
        let law = exact_law(&RunsModel::identical(RunsKind::OneOne, big_n, 1, 1, 0.6).unwrap()).map_err(|e| e.to_string())?;
        let m = match_cumulants(&factorial_cumulants(&law)).map_err(|e| e.to_string())?;
        let tv = tv_distance(&law, &m.target().build(1e-14).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        tv_points.push((big_n as f64, tv));
    }
    // closed-form bounds: grid where neither min() cap is active
    let grid = [1000usize, 2000, 4000, 8000];
    let t5: Vec<_> = grid.iter().map(|&n| (n as f64, bound_kruns_t5(n, 3, 0.3).bound_value.unwrap())).collect();
    let wx: Vec<_> = grid.iter().map(|&n| (n as f64, bound_wang_xia(n, 3, 0.3))).collect();
    let (s_tv, s_t5, s_wx) = (slope(&tv_points[1..])?, slope(&t5)?, slope(&wx)?);
    let s_all = slope(&tv_points)?;
    let detail = format!("TV slope {s_tv:.3} (constant δ; {s_all:.3} with N=50), closed-form bound slope {s_t5:.3}, earlier bound slope {s_wx:.3}");
    if (-1.15..=-0.85).contains(&s_tv) && (-1.05..=-0.95).contains(&s_t5) && (-0.55..=-0.45).contains(&s_wx) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kruns_comparison() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for big_n in [100usize, 200, 400] {
        let t5 = bound_kruns_t5(big_n, 3, 0.3).bound_value.ok_or("closed-form bound inapplicable")?;
        let wx = bound_wang_xia(big_n, 3, 0.3);
        ok &= t5 < wx;
        lines.push(format!("N={big_n}: {t5:.2} vs {wx:.2}"));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn smoothness_chain() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [0.4, 0.5, 0.6] {
        let model = RunsModel::one_one(vec![p; 14]).unwrap();
        let k = smoothness_k_11runs(&model.probs).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for i in 0..14 {
            worst = worst.max(conditional_laws(&model, i).map_err(|e| e.to_string())?.max_smoothness());
        }
        ok &= worst <= k;
        lines.push(format!("p={p}: max D {worst:.3} ≤ K {k:.3}"));
    }
    // C_i spans 6k + 1 indicators, so k = 3 needs a longer circle. The
    // model wraps around; the open line is reported alongside for contrast.
    for (big_n, k, p) in [(14, 2usize, 0.3), (14, 2, 0.5), (20, 3, 0.3), (20, 3, 0.5)] {
        let circle = product_chain_check(big_n, k, p, true).map_err(|e| e.to_string())?;
        let line = product_chain_check(big_n, k, p, false).map_err(|e| e.to_string())?;
        ok &= circle.holds;
        lines.push(format!(
            "N={big_n} k={k} p={p}: product excess {:.2e} on the circle, {:.2e} on a line",
            circle.max_excess, line.max_excess
        ));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("stein_runs_acceptance_{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let config = dir.join("sweep.toml");
    // the 60-trial point goes through the seeded simulation fallback
    std::fs::write(
        &config,
        "sweep = [30, 60, 20]\nseed = 7\nmonte_carlo_samples = 100000\nmax_exact_trials = 40\n\n[model]\nkind = \"one_one\"\np = 0.6\n",
    )
    .map_err(|e| e.to_string())?;
    let run = || -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_stein-runs"))
            .args(["sweep", "--config"])
            .arg(&config)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok(out.stdout)
    };
    let (a, b) = (run()?, run()?);
    let _ = std::fs::remove_dir_all(&dir);
    let text = String::from_utf8(a.clone()).map_err(|e| e.to_string())?;
    let header = text.lines().next().unwrap_or("");
    let expected = "N,k1,k2,p,gamma1,gamma2,gamma3,target,n,p_match,lambda,delta,r,p_bar,theta,tv,bound,bound_wx,ratio,applicable";
    let mut detail = format!("{} rows, identical bytes: {}, header exact: {}", text.lines().count() - 1, a == b, header == expected);
    if let Some((x, y)) = text.lines().zip(String::from_utf8_lossy(&b).lines()).find(|(x, y)| x != y) {
        detail += &format!("; first difference:\n  {x}\n  {y}");
    }
    if a == b && header == expected && CSV_HEADER == expected {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("Stein identities", stein_identities),
        ("compound builders vs convolution", panjer_vs_convolution),
        ("Stein solution increments", delta_g_lemma),
        ("matching round trip", matching_round_trip),
        ("bound soundness", soundness),
        ("decay rates", rates),
        ("k-runs bound comparison", kruns_comparison),
        ("smoothness chain", smoothness_chain),
        ("sweep determinism and format", determinism),
    ];
    let mut unexpected = Vec::new();
    let _ = writeln!(std::io::stderr());
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let (pass, detail) = match check() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let known = KNOWN_FAILURES.contains(&id);
        // straight to stderr so the lines survive the harness's capture
        let _ = writeln!(
            std::io::stderr(),
            "{} {id:>2} {name}: {detail}{}",
            if pass { "PASS" } else { "FAIL" },
            if known && !pass { " (known failure)" } else { "" }
        );
        if pass == known {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "criteria with unexpected outcome: {unexpected:?}");
}
