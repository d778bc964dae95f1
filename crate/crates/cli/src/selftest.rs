//! Module-by-module invariant suite with fixed seeds. The suites are public
//! so the acceptance target can run them at full size.

use std::collections::HashMap;
use std::fmt::Write as _;

use loopgas::cluster::{
    all_brackets, riemann_sum_bound_check, tree_bound_check, tree_count, trees, zeta_matrix, EdgeOrder,
};
use loopgas::field::{correlation_inequality_check, hubbard_stratonovich_check, wick_check, GaussianField};
use loopgas::interactions::InteractionParams;
use loopgas::lattice::{heat_kernel_suite, periodize_potential, PotentialSpec, Torus};
use loopgas::largemass::{gamma_lm, gamma_lm_literal, LmParams};
use loopgas::loop_mc::{estimate_gamma_p, estimate_rel_partition, free_gas_gamma1, EnsembleSpec};
use loopgas::mc::{rng_for, Exec};
use loopgas::quantum::{feynman_kac_check, solve};
use loopgas::volume::{volume_sweep, VolumeSweepSpec};
use nalgebra::DMatrix;
use rand::Rng as _;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(module: &'static str, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { module, name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// One block per module, one line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut modules: Vec<&str> = Vec::new();
        for c in &self.checks {
            if !modules.contains(&c.module) {
                modules.push(c.module);
            }
        }
        for m in modules {
            let cs: Vec<&Check> = self.checks.iter().filter(|c| c.module == m).collect();
            let ok = cs.iter().all(|c| c.pass);
            let _ = writeln!(out, "[{}] {m}", if ok { "PASS" } else { "FAIL" });
            for c in cs {
                let _ = writeln!(out, "    {} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
        }
        let _ = writeln!(out, "{}", if self.pass() { "selftest: all checks passed" } else { "selftest: FAILED" });
        out
    }
}

// ---------------------------------------------------------------------------
// Suites

/// Heat-kernel identities on the grid `d × L × t`.
pub fn heat_kernel_grid(ds: &[usize], ls: &[usize], ts: &[f64]) -> Result<Check> {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut pass = true;
    let mut n = 0;
    for &d in ds {
        for &l in ls {
            for &t in ts {
                let r = heat_kernel_suite(d, l, t)?;
                pass &= r.pass;
                worst.0 = worst.0.max(r.normalization_error);
                worst.1 = worst.1.max(r.semigroup_error);
                worst.2 = worst.2.max(r.bessel_error.max(r.quadrature_error));
                n += 1;
            }
        }
    }
    Ok(Check::new(
        "lattice",
        "heat kernel range/normalization/semigroup/periodization",
        pass,
        format!("{n} cases; worst errors {:.1e} / {:.1e} / {:.1e}", worst.0, worst.1, worst.2),
    ))
}

/// `|φ| <= tree bound` and the Kruskal resummation on random `ζ = e^{-𝒱/2} - 1`, `n <= 5`.
pub fn tree_bound_suite(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = rng_for(seed, 0x5442, 0);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..instances {
        let n = 1 + i % 5;
        let mut v = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a + 1..n {
                let u: f64 = rng.gen();
                let val = if u < 0.1 {
                    0.0
                } else if u < 0.15 {
                    f64::INFINITY
                } else {
                    -3.0 * (1.0 - rng.gen::<f64>()).ln()
                };
                v[(a, b)] = val;
                v[(b, a)] = val;
            }
        }
        let order = if i % 3 == 0 { EdgeOrder::shuffled(n, seed ^ i as u64) } else { EdgeOrder::lexicographic(n) };
        let r = tree_bound_check(&zeta_matrix(&v, 0.5), &order)?;
        failures += usize::from(!r.holds);
        worst = worst.max(r.identity_error);
    }
    Ok(Check::new(
        "cluster",
        "tree bound and resummation identity",
        failures == 0 && worst <= 1e-12,
        format!("{instances} instances, {failures} violations, worst identity error {worst:.1e}"),
    ))
}

/// Preimage of every spanning tree under Kruskal is the interval `[T, M(T)]`,
/// exhaustively for `n <= n_max` under three edge orders.
pub fn kruskal_suite(n_max: usize) -> Result<Check> {
    let mut total = 0;
    let mut bad = 0;
    for n in 1..=n_max {
        for order in [EdgeOrder::lexicographic(n), EdgeOrder::reverse_lexicographic(n), EdgeOrder::shuffled(n, 7)] {
            for b in all_brackets(n, &order)? {
                total += 1;
                bad += usize::from(!b.pass);
            }
        }
    }
    Ok(Check::new("cluster", "Kruskal bracket", bad == 0, format!("{total} trees checked, {bad} mismatches")))
}

/// `tree_count(δ)` against enumeration for every degree sequence, `n <= n_max`.
pub fn tree_count_suite(n_max: usize) -> Result<Check> {
    let mut bad = Vec::new();
    let mut sequences = 0;
    for n in 1..=n_max {
        let all = trees(n)?;
        let mut hist: HashMap<Vec<usize>, u64> = HashMap::new();
        for t in &all {
            *hist.entry(t.degrees()).or_default() += 1;
        }
        let target = if n == 1 { 0 } else { 2 * n - 2 };
        let mut seqs = Vec::new();
        compositions(n, target, &mut Vec::new(), &mut seqs);
        for d in seqs {
            sequences += 1;
            let want = hist.get(&d).copied().unwrap_or(0);
            if tree_count(&d) != want {
                bad.push(format!("{d:?}: {} vs {want}", tree_count(&d)));
            }
        }
        if n >= 2 && all.len() as u64 != (n as u64).pow(n as u32 - 2) {
            bad.push(format!("n={n}: {} trees", all.len()));
        }
    }
    Ok(Check::new(
        "cluster",
        "tree counts by degree sequence",
        bad.is_empty(),
        if bad.is_empty() { format!("{sequences} degree sequences") } else { bad.join("; ") },
    ))
}

/// Sequences of `n` entries, each at least 1 (or exactly 0 for `n = 1`), summing to `total`.
fn compositions(n: usize, total: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if n == 1 && cur.is_empty() {
        out.push(vec![total]);
        return;
    }
    if cur.len() == n {
        if total == 0 {
            out.push(cur.clone());
        }
        return;
    }
    let left = n - cur.len();
    for k in 1..=total.saturating_sub(left - 1) {
        cur.push(k);
        compositions(n, total - k, cur, out);
        cur.pop();
    }
}

/// Hubbard–Stratonovich, Wick moments `p <= 3` and the correlation inequality.
pub fn gaussian_suite(samples: u64, seed: u64, exec: &Exec) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let spec = PotentialSpec::exponential(1, 0, 1.0, 0.8)?;
    let v6 = periodize_potential(&spec, 6)?;
    let mut rng = rng_for(seed, 0x4853, 0);
    let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hs = hubbard_stratonovich_check(&v6, &f, samples, seed, exec)?;
    checks.push(Check::new(
        "field",
        "Hubbard–Stratonovich",
        hs.pass,
        format!(
            "deterministic error {:.1e}; MC {:.6} ± {:.1e} vs {:.6}",
            hs.deterministic_error, hs.estimate.mean, hs.estimate.std_error, hs.exact
        ),
    ));
    let torus = Torus::new(1, 3)?;
    let gf = GaussianField::new(&torus, 1.0)?;
    let cases = vec![
        (vec![0], vec![0]),
        (vec![0], vec![1]),
        (vec![0, 1], vec![1, 2]),
        (vec![0, 0], vec![0, 0]),
        (vec![0, 1, 2], vec![2, 1, 0]),
        (vec![0, 0, 1], vec![1, 0, 0]),
    ];
    let w = wick_check(&gf, &cases, samples, seed, exec)?;
    let worst = w.entries.iter().map(|(_, _, exact, e)| (e.mean - exact).abs() / e.std_error).fold(0.0, f64::max);
    checks.push(Check::new(
        "field",
        "complex Wick moments p <= 3",
        w.pass,
        format!("{} moments, worst {worst:.2}σ, factor error {:.1e}", w.entries.len(), w.factor_error),
    ));
    let v3 = periodize_potential(&PotentialSpec::on_site(1, 1.0)?, 3)?;
    let c = correlation_inequality_check(&gf, &v3, &[0.0, 0.25, 0.5, 1.0], &[0], &[1], samples, seed, exec)?;
    checks.push(Check::new(
        "field",
        "correlation inequality on λ ∈ {0, 0.25, 0.5, 1}",
        c.pass,
        if c.pass { "0 <= Γ̂ <= Wick within 3σ".to_string() } else { c.violations.join("; ") },
    ));
    Ok(checks)
}

/// Feynman–Kac on `d = 1, L = 4, t = 1` with a random nonnegative potential.
pub fn feynman_kac_suite(samples: u64, seed: u64, exec: &Exec) -> Result<Check> {
    let torus = Torus::new(1, 4)?;
    let mut rng = rng_for(seed, 0x464b, 0);
    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
    let r = feynman_kac_check(&torus, &v, 1.0, samples, seed, exec)?;
    Ok(Check::new(
        "quantum",
        "Feynman–Kac kernel",
        r.pass,
        format!("{} entries, worst {:.2}σ", r.entries.len(), r.max_deviation),
    ))
}

/// `Γ₁^lm(x, x) = a/(1+a)`, `a = e^{-κ0}`, for the hard core on `L = 3`,
/// against the closed form and the literal sum.
pub fn largemass_hard_core_suite() -> Result<Check> {
    let v = periodize_potential(&PotentialSpec::hard_core(1)?, 3)?;
    let p = LmParams::new(1.0, v, 1e-14)?;
    let a = (-1.0f64).exp();
    let want = a / (1.0 + a);
    let mut worst = 0.0f64;
    for x in 0..3 {
        let g = gamma_lm(&p, &[x], &[x])?;
        let lit = gamma_lm_literal(&p, &[x], &[x], 3, 3)?;
        worst = worst.max((g - want).abs()).max((lit - want).abs());
    }
    Ok(Check::new("largemass", "hard-core diagonal a/(1+a)", worst <= 1e-10, format!("worst error {worst:.1e}")))
}

// ---------------------------------------------------------------------------

pub fn run_selftest(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<SelftestReport> {
    cfg.expect(Experiment::Selftest)?;
    let n = cfg.samples;
    let mut checks = vec![heat_kernel_grid(&[1, 2], &[3, 5], &[0.1, 1.0, 3.0])?];

    checks.extend(gaussian_suite(n, seed, exec)?);
    checks.push(feynman_kac_suite(n, seed, exec)?);

    let torus = Torus::new(1, 3)?;
    let zero = periodize_potential(&PotentialSpec::on_site(1, 0.0)?, 3)?;
    let free = solve(&InteractionParams::meanfield(0.5, zero)?, 1.0, 1e-12, 1, exec)?;
    let exact = free_gas_gamma1(&torus, 0.5, 1.0)?;
    let err = free.gammas[0].max_abs_diff(&exact);
    checks.push(Check::new("quantum", "free Γ₁ = A(I - A)^{-1}", err <= 1e-10, format!("max error {err:.1e}")));

    let v = periodize_potential(&PotentialSpec::on_site(1, 0.5)?, 3)?;
    let params = InteractionParams::generic(0.5, 0.2, v)?;
    let sol = solve(&params, 1.0, 1e-12, 1, exec)?;
    let spec = EnsembleSpec::ginibre(params, Some(1.0))?;
    let z = estimate_rel_partition(&spec, n, seed, exec)?;
    let g = estimate_gamma_p(&spec, &[0], &[0], n, seed, exec)?;
    let (zq, gq) = (sol.partition.z_rel, sol.gammas[0].at(0, 0));
    checks.push(Check::new(
        "loop_mc",
        "Ginibre 𝒵 and Γ₁(0,0) vs quantum oracle",
        z.agrees(zq, 3.0, 0.0) && g.agrees(gq, 3.0, 0.0),
        format!("𝒵 {:.5} ± {:.1e} vs {zq:.5}; Γ₁ {:.5} ± {:.1e} vs {gq:.5}", z.mean, z.std_error, g.mean, g.std_error),
    ));

    checks.push(tree_count_suite(7)?);
    checks.push(kruskal_suite(5)?);
    checks.push(tree_bound_suite(2000, seed)?);
    let rs = riemann_sum_bound_check(&[0.5, 1.0, 2.0], &[1.0, 0.5, 0.1], 8)?;
    checks.push(Check::new("cluster", "Riemann-sum bound", rs.pass, format!("constant {:.3}", rs.constant)));

    checks.push(largemass_hard_core_suite()?);

    let free_sweep = VolumeSweepSpec {
        d: 1,
        ls: vec![3, 4, 6],
        nu: 0.25,
        kappa: 1.0,
        potential: PotentialSpec::on_site(1, 0.0)?,
        n_max: 2,
        l0: 3,
    };
    let r = volume_sweep(&free_sweep, n, seed, exec)?;
    let mut worst = 0.0f64;
    for row in &r.rows {
        let t = Torus::new(1, row.l)?;
        let k = free_gas_gamma1(&t, 0.25, 1.0)?;
        for (e, d) in r.displacements.iter().enumerate() {
            worst = worst.max((row.gamma[e] - k.at(0, t.site_of(d))).abs() / row.gamma_err[e]);
        }
    }
    checks.push(Check::new("volume", "free Γ₁ per volume", worst <= 4.0, format!("worst {worst:.2}σ")));

    Ok(SelftestReport { checks })
}
