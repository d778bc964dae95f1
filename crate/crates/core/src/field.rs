//! The classical complex field with quartic weight
//! `e^{-W(φ)}`, `W = ½ Σ_{x,y} |φ(x)|² v(x-y) |φ(y)|²`, under the complex
//! Gaussian measure with covariance `C = (-Δ/2 + κ)^{-1}`.
//!
//! Convention: `E[φ̄(x) φ(y)] = C_{x,y}` and `E[φ(x) φ(y)] = 0`.

use nalgebra::{Cholesky, Complex, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::lattice::{check_positive_type, laplacian_matrix, PeriodicPotential, Torus};
use crate::linalg::{sym_eigen, sym_function};
use crate::mc::{stream, Exec, McEstimate, Rng};
use crate::quad::integrate;
use crate::quantum::permutations;

type C64 = Complex<f64>;

#[derive(Clone, Debug)]
pub struct GaussianField {
    torus: Torus,
    kappa: f64,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianField {
    pub fn new(torus: &Torus, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return invalid(format!("κ = {kappa} must be positive"));
        }
        let n = torus.volume();
        let prec = laplacian_matrix(torus) * -0.5 + DMatrix::identity(n, n) * kappa;
        let cov = prec.try_inverse().ok_or_else(|| Error::Validation("precision matrix is singular".into()))?;
        let cov = (&cov + cov.transpose()) * 0.5;
        let factor = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))?
            .l();
        Ok(Self { torus: torus.clone(), kappa, cov, factor })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// `φ = F z` with `z` standard complex normal (`E|z_k|² = 1`).
pub fn sample_field(gf: &GaussianField, rng: &mut Rng) -> Vec<C64> {
    let n = gf.cov.nrows();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z: Vec<C64> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            C64::new(a * s, b * s)
        })
        .collect();
    (0..n)
        .map(|x| (0..=x).map(|k| z[k] * gf.factor[(x, k)]).sum())
        .collect()
}

/// `W(φ) = ½ Σ |φ(x)|² v(x-y) |φ(y)|²`.
pub fn quartic_weight(phi: &[C64], v: &PeriodicPotential) -> f64 {
    let s: Vec<f64> = phi.iter().map(|p| p.norm_sqr()).collect();
    let mut w = 0.0;
    for (x, sx) in s.iter().enumerate() {
        for (y, sy) in s.iter().enumerate() {
            let vv = v.pair(x, y);
            if vv != 0.0 {
                w += sx * vv * sy;
            }
        }
    }
    0.5 * w
}

fn check_potential(gf: &GaussianField, v: &PeriodicPotential) -> Result<()> {
    if v.hard_core() {
        return invalid("the classical field needs a finite potential");
    }
    if v.torus() != &gf.torus {
        return invalid("potential and field live on different tori");
    }
    Ok(())
}

/// `Re Π_i φ̄(y_i) φ(x_i)`.
fn monomial(phi: &[C64], x: &[usize], y: &[usize]) -> f64 {
    let mut m = C64::new(1.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        m *= phi[b].conj() * phi[a];
    }
    m.re
}

/// `𝒵^cl = E[e^{-W}]`.
pub fn estimate_zcl(gf: &GaussianField, v: &PeriodicPotential, n_samples: u64, seed: u64, exec: &Exec) -> Result<McEstimate> {
    check_potential(gf, v)?;
    let acc = exec.run(n_samples, seed, stream::MAIN, |rng| Ok::<f64, Error>((-quartic_weight(&sample_field(gf, rng), v)).exp()))?;
    Ok(McEstimate::from_welford(&acc, seed))
}

/// Unnormalized `Γ̂_p = E[Π φ̄(y_i) φ(x_i) e^{-W}]` on stream `tag`.
pub fn estimate_gamma_hat(
    gf: &GaussianField,
    v: &PeriodicPotential,
    x: &[usize],
    y: &[usize],
    n_samples: u64,
    seed: u64,
    tag: u64,
    exec: &Exec,
) -> Result<McEstimate> {
    check_potential(gf, v)?;
    check_points(gf, x, y)?;
    let acc = exec.run(n_samples, seed, tag, |rng| {
        let phi = sample_field(gf, rng);
        Ok::<f64, Error>(monomial(&phi, x, y) * (-quartic_weight(&phi, v)).exp())
    })?;
    Ok(McEstimate::from_welford(&acc, seed))
}

fn check_points(gf: &GaussianField, x: &[usize], y: &[usize]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return invalid("need p >= 1 source and target points");
    }
    let n = gf.torus.volume();
    if x.iter().chain(y).any(|s| *s >= n) {
        return invalid("point outside the torus");
    }
    Ok(())
}

/// `Γ_p^cl(x⃗, y⃗)` as a ratio of independent-stream estimates.
pub fn estimate_gamma_cl(
    gf: &GaussianField,
    v: &PeriodicPotential,
    x: &[usize],
    y: &[usize],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<McEstimate> {
    let num = estimate_gamma_hat(gf, v, x, y, n_samples, seed, stream::NUMERATOR, exec)?;
    let acc = exec.run(n_samples, seed, stream::DENOMINATOR, |rng| {
        Ok::<f64, Error>((-quartic_weight(&sample_field(gf, rng), v)).exp())
    })?;
    let den = McEstimate::from_welford(&acc, seed);
    if den.mean <= 3.0 * den.std_error {
        return Err(Error::DegenerateRatio(format!("denominator {} ± {}", den.mean, den.std_error)));
    }
    Ok(McEstimate::ratio(&num, &den))
}

/// `Σ_π Π_i C_{x_i, y_π(i)}`.
pub fn wick_value(cov: &DMatrix<f64>, x: &[usize], y: &[usize]) -> f64 {
    permutations(x.len())
        .iter()
        .map(|pi| (0..x.len()).map(|i| cov[(x[i], y[pi[i]])]).product::<f64>())
        .sum()
}

// ---------------------------------------------------------------------------
// Single site

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleSite {
    pub z: f64,
    pub gamma: f64,
}

/// `Z = κ∫ e^{-κs - ws²/2} ds` and `Γ_p = κ∫ s^p e^{-κs - ws²/2} ds / Z`.
pub fn quadrature_single_site(kappa: f64, w: f64, p: usize) -> Result<SingleSite> {
    if !(kappa > 0.0) || !(w >= 0.0) {
        return invalid("need κ > 0 and w >= 0");
    }
    let f = |q: usize| {
        move |s: f64| s.powi(q as i32) * (-kappa * s - 0.5 * w * s * s).exp()
    };
    // beyond `top` the integrand is below e^{-700} of its scale; the pieces
    // grow geometrically from the natural width so no peak is skipped
    let q = p as f64 + 1.0;
    let mut top = 760.0 * q / kappa;
    if w > 0.0 {
        top = top.min((1520.0 * q / w).sqrt());
    }
    let width = if w > 0.0 { (1.0 / kappa).min(1.0 / w.sqrt()) } else { 1.0 / kappa };
    let mut cuts = vec![0.0];
    let mut c = width / 4.0;
    while c < top {
        cuts.push(c);
        c *= 2.0;
    }
    cuts.push(top);
    let piecewise = |q: usize| -> Result<f64> {
        cuts.windows(2).map(|ab| integrate(f(q), ab[0], ab[1], 1e-16)).sum()
    };
    let z = kappa * piecewise(0)?;
    let m = kappa * piecewise(p)?;
    if !(z > 0.0) {
        return Err(Error::Precision("single-site partition underflowed".into()));
    }
    Ok(SingleSite { z, gamma: m / z })
}

/// Closed form `κ √(π/2w) e^{κ²/2w} erfc(κ/√(2w))` of the single-site partition.
pub fn single_site_z_closed_form(kappa: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 1.0;
    }
    let a = kappa / (2.0 * w).sqrt();
    kappa * (std::f64::consts::PI / (2.0 * w)).sqrt() * (a * a).exp() * erfc(a)
}

// ---------------------------------------------------------------------------
// Hubbard–Stratonovich

/// Symmetric square root of the PSD matrix `V_{xy} = v(x-y)`.
fn potential_factor(v: &PeriodicPotential) -> Result<DMatrix<f64>> {
    let (pos, min) = check_positive_type(v)?;
    if !pos {
        return invalid(format!("v is not of positive type (min Fourier value {min})"));
    }
    let n = v.torus().volume();
    let m = DMatrix::from_fn(n, n, |a, b| v.pair(a, b));
    Ok(sym_function(&m, |e| e.max(0.0).sqrt()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HsReport {
    /// `e^{-½⟨f, v f⟩}`.
    pub exact: f64,
    /// MC of `E[e^{i⟨f, σ⟩}]`; the imaginary part is reported separately.
    pub estimate: McEstimate,
    pub imaginary: McEstimate,
    /// `|e^{-½ fᵀSSᵀf} - e^{-½⟨f, v f⟩}|` for the sampler factor `S`.
    pub deterministic_error: f64,
    pub pass: bool,
}

/// `E_{μ_v}[e^{i⟨f, σ⟩}] = e^{-½⟨f, v f⟩}` for the real Gaussian `μ_v` of covariance `v`.
pub fn hubbard_stratonovich_check(
    v: &PeriodicPotential,
    f: &[f64],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<HsReport> {
    let n = v.torus().volume();
    if f.len() != n {
        return invalid("test vector has the wrong length");
    }
    let s = potential_factor(v)?;
    let fv = DVector::from_column_slice(f);
    let vm = DMatrix::from_fn(n, n, |a, b| v.pair(a, b));
    let exact = (-0.5 * fv.dot(&(&vm * &fv))).exp();
    let via_factor = (-0.5 * (s.transpose() * &fv).norm_squared()).exp();
    let deterministic_error = (exact - via_factor).abs();
    // σ = S g, ⟨f, σ⟩ = ⟨Sᵀf, g⟩
    let proj: Vec<f64> = (s.transpose() * &fv).iter().copied().collect();
    let acc = exec.run_vec(n_samples, seed, stream::MAIN, 2, |rng, out| {
        let t: f64 = proj.iter().map(|p| p * rng.sample::<f64, _>(StandardNormal)).sum();
        out[0] = t.cos();
        out[1] = t.sin();
        Ok::<(), Error>(())
    })?;
    let estimate = McEstimate::from_welford(&acc[0], seed);
    let imaginary = McEstimate::from_welford(&acc[1], seed);
    let pass = deterministic_error <= 1e-12 && estimate.agrees(exact, 3.0, 1e-15) && imaginary.agrees(0.0, 3.0, 1e-15);
    Ok(HsReport { exact, estimate, imaginary, deterministic_error, pass })
}

/// Probabilists' Gauss–Hermite rule (weights sum to 1) by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |a, b| if a + 1 == b || b + 1 == a { (a.max(b) as f64).sqrt() } else { 0.0 });
    let eig = sym_eigen(&j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `𝒵^cl = E_g[det(I - i C diag(S g))^{-1}]` by tensor Gauss–Hermite over `g`.
///
/// Exact up to the quadrature error; meant for `|Λ| <= 4`.
pub fn zcl_hubbard_stratonovich(gf: &GaussianField, v: &PeriodicPotential, nodes: usize) -> Result<f64> {
    check_potential(gf, v)?;
    let s = potential_factor(v)?;
    let n = gf.torus.volume();
    let count = nodes.checked_pow(n as u32).filter(|c| *c <= 20_000_000).ok_or_else(|| {
        Error::Budget(format!("{nodes}^{n} quadrature nodes"))
    })?;
    let (t, w) = gauss_hermite(nodes);
    let cov: DMatrix<C64> = gf.cov.map(|c| C64::new(c, 0.0));
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    for _ in 0..count {
        let g = DVector::from_iterator(n, idx.iter().map(|&i| t[i]));
        let weight: f64 = idx.iter().map(|&i| w[i]).product();
        let sigma = &s * g;
        let mut m = DMatrix::<C64>::identity(n, n);
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] -= C64::new(0.0, 1.0) * cov[(a, b)] * sigma[b];
            }
        }
        total += weight * (C64::new(1.0, 0.0) / m.determinant()).re;
        for c in idx.iter_mut() {
            *c += 1;
            if *c < nodes {
                break;
            }
            *c = 0;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Correlation inequality

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub lambda: f64,
    pub gamma_hat: McEstimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub wick: f64,
    pub rows: Vec<CorrelationRow>,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// `0 <= Γ̂_p^{cl,λ} <= Γ̂_p^{cl,0}` across a λ grid, with fresh samples per λ.
pub fn correlation_inequality_check(
    gf: &GaussianField,
    v: &PeriodicPotential,
    lambdas: &[f64],
    x: &[usize],
    y: &[usize],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<CorrelationReport> {
    let (pos, _) = check_positive_type(v)?;
    if !pos {
        return invalid("correlation inequality needs a positive-type potential");
    }
    let wick = wick_value(&gf.cov, x, y);
    let free = estimate_gamma_hat(gf, &v.scaled(0.0), x, y, n_samples, seed, 0x4349_0000, exec)?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (i, &lam) in lambdas.iter().enumerate() {
        if !(lam >= 0.0) {
            return invalid("λ must be >= 0");
        }
        let e = estimate_gamma_hat(gf, &v.scaled(lam), x, y, n_samples, seed, 0x4349_0001 + i as u64, exec)?;
        if e.mean < -3.0 * e.std_error {
            violations.push(format!("λ={lam}: Γ̂ = {} ± {} is negative", e.mean, e.std_error));
        }
        if e.mean > free.mean + 3.0 * e.std_error.hypot(free.std_error) {
            violations.push(format!("λ={lam}: Γ̂ = {} exceeds the free value {}", e.mean, free.mean));
        }
        if lam == 0.0 && !e.agrees(wick, 3.0, 0.0) {
            violations.push(format!("λ=0: Γ̂ = {} ± {} differs from Wick {wick}", e.mean, e.std_error));
        }
        rows.push(CorrelationRow { lambda: lam, gamma_hat: e });
    }
    Ok(CorrelationReport { wick, pass: violations.is_empty(), rows, violations })
}

// ---------------------------------------------------------------------------
// Wick moments

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WickReport {
    pub entries: Vec<(Vec<usize>, Vec<usize>, f64, McEstimate)>,
    /// `max |F Fᵀ - C|`.
    pub factor_error: f64,
    pub pass: bool,
}

/// Free moments `E[Π φ̄(y_i) φ(x_i)]` against permanents of `C`, for the given index pairs.
pub fn wick_check(
    gf: &GaussianField,
    cases: &[(Vec<usize>, Vec<usize>)],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<WickReport> {
    let zero = PeriodicPotential::from_values(&gf.torus, vec![0.0; gf.torus.volume()], false)?;
    let factor_error = (&gf.factor * gf.factor.transpose() - &gf.cov).amax();
    let mut entries = Vec::new();
    let mut pass = factor_error < 1e-12;
    for (i, (x, y)) in cases.iter().enumerate() {
        let e = estimate_gamma_hat(gf, &zero, x, y, n_samples, seed, 0x5749_0000 + i as u64, exec)?;
        let w = wick_value(&gf.cov, x, y);
        pass &= e.agrees(w, 3.0, 0.0);
        entries.push((x.clone(), y.clone(), w, e));
    }
    Ok(WickReport { entries, factor_error, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{periodize_potential, PotentialSpec};
    use crate::mc::{rng_for, Welford};

    fn onsite(l: usize, w: f64) -> PeriodicPotential {
        periodize_potential(&PotentialSpec::on_site(1, w).unwrap(), l).unwrap()
    }

    fn ex() -> Exec {
        Exec::new(4)
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        let t = Torus::new(1, 3).unwrap();
        assert!(GaussianField::new(&t, 0.0).is_err());
        assert!(GaussianField::new(&t, -1.0).is_err());
    }

    #[test]
    fn empirical_covariance_and_holomorphic_pairing() {
        let t = Torus::new(1, 3).unwrap();
        let gf = GaussianField::new(&t, 0.8).unwrap();
        let mut rng = rng_for(5, 0, 0);
        let mut cov = vec![Welford::default(); 9];
        let mut hol = vec![Welford::default(); 9];
        for _ in 0..100_000 {
            let phi = sample_field(&gf, &mut rng);
            for x in 0..3 {
                for y in 0..3 {
                    cov[3 * x + y].push((phi[x].conj() * phi[y]).re);
                    hol[3 * x + y].push((phi[x] * phi[y]).re);
                }
            }
        }
        for x in 0..3 {
            for y in 0..3 {
                let c = &cov[3 * x + y];
                assert!((c.mean - gf.covariance()[(x, y)]).abs() < 4.0 * c.std_error());
                let h = &hol[3 * x + y];
                assert!(h.mean.abs() < 4.0 * h.std_error());
            }
        }
    }

    #[test]
    fn single_site_modulus_is_exponential() {
        let t = Torus::new(1, 1).unwrap();
        let gf = GaussianField::new(&t, 2.0).unwrap();
        let mut rng = rng_for(6, 0, 0);
        let mut w = Welford::default();
        for _ in 0..100_000 {
            w.push(sample_field(&gf, &mut rng)[0].norm_sqr());
        }
        assert!((w.mean - 0.5).abs() < 4.0 * w.std_error());
        // exponential law: variance = mean²
        assert!((w.variance() - 0.25).abs() < 0.01);
    }

    #[test]
    fn single_site_quadrature() {
        for p in 1..4 {
            let s = quadrature_single_site(1.5, 0.0, p).unwrap();
            let want = (1..=p).map(|k| k as f64).product::<f64>() / 1.5f64.powi(p as i32);
            assert!((s.gamma - want).abs() < 1e-12 * want);
            assert!((s.z - 1.0).abs() < 1e-12);
        }
        for (k, w) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.1)] {
            let s = quadrature_single_site(k, w, 1).unwrap();
            // the closed form is limited by the ~1e-10 accuracy of erfc
            assert!((s.z - single_site_z_closed_form(k, w)).abs() < 1e-9 * s.z);
        }
        let zs: Vec<f64> = [1.0, 10.0, 100.0, 1000.0].iter().map(|w| quadrature_single_site(1.0, *w, 1).unwrap().z).collect();
        assert!(zs.windows(2).all(|p| p[1] < p[0] && p[1] > 0.0));
    }

    #[test]
    fn single_site_mc_matches_quadrature() {
        let t = Torus::new(1, 1).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        let v = onsite(1, 1.0);
        let exact = quadrature_single_site(1.0, 1.0, 1).unwrap();
        let z = estimate_zcl(&gf, &v, 200_000, 3, &ex()).unwrap();
        assert!(z.agrees(exact.z, 3.0, 0.0));
        let g = estimate_gamma_cl(&gf, &v, &[0], &[0], 200_000, 4, &ex()).unwrap();
        assert!(g.agrees(exact.gamma, 3.0, 0.0), "{} ± {} vs {}", g.mean, g.std_error, exact.gamma);
    }

    #[test]
    fn free_partition_is_one_and_coupling_lowers_it() {
        let t = Torus::new(1, 3).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        assert_eq!(estimate_zcl(&gf, &onsite(3, 0.0), 100, 1, &ex()).unwrap().mean, 1.0);
        let a = estimate_zcl(&gf, &onsite(3, 0.3), 50_000, 1, &ex()).unwrap();
        let b = estimate_zcl(&gf, &onsite(3, 0.9), 50_000, 1, &ex()).unwrap();
        assert!(b.mean < a.mean);
    }

    #[test]
    fn free_gamma_is_wick() {
        let t = Torus::new(1, 3).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        let cases = vec![
            (vec![0], vec![0]),
            (vec![0], vec![1]),
            (vec![0, 1], vec![1, 2]),
            (vec![0, 0], vec![0, 0]),
            (vec![0, 1, 2], vec![2, 1, 0]),
        ];
        let r = wick_check(&gf, &cases, 200_000, 8, &ex()).unwrap();
        assert!(r.pass, "{:?}", r.entries);
        let g = estimate_gamma_cl(&gf, &onsite(3, 0.0), &[0, 1], &[1, 2], 100_000, 9, &ex()).unwrap();
        assert!(g.agrees(wick_value(gf.covariance(), &[0, 1], &[1, 2]), 3.0, 0.0));
    }

    #[test]
    fn hubbard_stratonovich_identities() {
        let v = onsite(3, 1.0);
        let r = hubbard_stratonovich_check(&v, &[0.0; 3], 1000, 1, &ex()).unwrap();
        assert_eq!(r.exact, 1.0);
        assert!(r.pass);
        let r = hubbard_stratonovich_check(&v, &[1.0, 0.0, 0.0], 100_000, 2, &ex()).unwrap();
        assert!((r.exact - (-0.5f64).exp()).abs() < 1e-15);
        assert!(r.pass);
        let spec = PotentialSpec::exponential(1, 0, 1.0, 0.8).unwrap();
        let v = periodize_potential(&spec, 6).unwrap();
        let mut rng = rng_for(3, 0, 0);
        let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = hubbard_stratonovich_check(&v, &f, 100_000, 3, &ex()).unwrap();
        assert!(r.deterministic_error < 1e-12);
        assert!(r.pass, "{r:?}");
        let bad = periodize_potential(&PotentialSpec::table(1, 0, &[(vec![0], 0.1), (vec![1], 1.0)]).unwrap(), 4).unwrap();
        assert!(hubbard_stratonovich_check(&bad, &[0.0; 4], 10, 1, &ex()).is_err());
    }

    #[test]
    fn gauss_hermite_moments() {
        let (t, w) = gauss_hermite(12);
        let m = |k: i32| t.iter().zip(&w).map(|(x, wi)| wi * x.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(8) - 105.0).abs() < 1e-9);
    }

    #[test]
    fn hubbard_stratonovich_partition_matches_single_site() {
        let t = Torus::new(1, 1).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        let z = zcl_hubbard_stratonovich(&gf, &onsite(1, 0.5), 200).unwrap();
        let want = quadrature_single_site(1.0, 0.5, 1).unwrap().z;
        assert!((z - want).abs() < 1e-6, "{z} vs {want}");
    }

    #[test]
    fn hubbard_stratonovich_partition_matches_mc_on_three_sites() {
        let t = Torus::new(1, 3).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        let v = onsite(3, 0.5);
        let exact = zcl_hubbard_stratonovich(&gf, &v, 60).unwrap();
        let mc = estimate_zcl(&gf, &v, 200_000, 4, &ex()).unwrap();
        assert!(mc.agrees(exact, 3.0, 0.0), "{} ± {} vs {exact}", mc.mean, mc.std_error);
    }

    #[test]
    fn correlation_inequality_holds() {
        let t = Torus::new(1, 3).unwrap();
        let gf = GaussianField::new(&t, 1.0).unwrap();
        let r = correlation_inequality_check(&gf, &onsite(3, 1.0), &[0.0, 0.25, 0.5, 1.0], &[0], &[1], 50_000, 5, &ex()).unwrap();
        assert!(r.pass, "{:?}", r.violations);
        let hat = &r.rows[2].gamma_hat;
        assert!(hat.mean <= gf.covariance()[(0, 1)] + 3.0 * hat.std_error);
    }
}
