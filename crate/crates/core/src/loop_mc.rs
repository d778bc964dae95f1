//! Poissonized Monte Carlo for loop ensembles.
//!
//! `E[e^{-V(Φ)}]` over a Poisson configuration `Φ` with intensity `𝕃` equals
//! `e^{-m(𝕃)} Σ_n (1/n!) ∫𝕃^n e^{-V}`, which is the relative partition
//! function. Correlation kernels are ratios of an open-path numerator and
//! that denominator, estimated on independent streams.

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interactions::{boltzmann, v_total_cl, v_total_ginibre, v_total_largemass, InteractionParams, Mode};
use crate::kernel::Kernel;
use crate::lattice::{laplacian_matrix, PeriodicPotential, Torus};
use crate::mc::{stream, Exec, McEstimate, Rng};
use crate::paths::{sample_free_walk, BridgeStats, LoopIntensity, LoopKind, OpenLaw, Path};
use crate::quantum::permutations;

/// Largest `p` whose permutations are enumerated.
pub const MAX_P: usize = 4;

#[derive(Clone, Debug)]
pub enum Ensemble {
    /// Grid loops with the Bose-gas interaction of `params`.
    Ginibre(InteractionParams),
    /// Continuum loops of duration `>= ε` with `V = ½⟨f, v f⟩`.
    Symanzik { potential: PeriodicPotential, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    Ginibre,
    SymanzikEps { eps: f64 },
}

#[derive(Clone)]
pub struct EnsembleSpec {
    pub torus: Torus,
    pub ensemble: Ensemble,
    pub intensity: LoopIntensity,
    pub kappa: f64,
}

impl EnsembleSpec {
    /// Ginibre ensemble; `kappa` is ignored in large-mass mode (`κ = κ0/ν`).
    pub fn ginibre(params: InteractionParams, kappa: Option<f64>) -> Result<Self> {
        let kappa = params.kappa_for(kappa)?;
        let torus = params.potential.torus().clone();
        let intensity = LoopIntensity::new(&torus, LoopKind::Ginibre { nu: params.nu, kappa })?;
        Self::checked(Self { torus, ensemble: Ensemble::Ginibre(params), intensity, kappa })
    }

    pub fn symanzik(potential: PeriodicPotential, kappa: f64, eps: f64) -> Result<Self> {
        if potential.hard_core() {
            return invalid("the Symanzik ensemble needs a finite potential");
        }
        let torus = potential.torus().clone();
        let intensity = LoopIntensity::new(&torus, LoopKind::Symanzik { kappa, eps })?;
        Self::checked(Self { torus, ensemble: Ensemble::Symanzik { potential, eps }, intensity, kappa })
    }

    fn checked(self) -> Result<Self> {
        if !self.intensity.mass().is_finite() {
            return invalid("loop intensity has infinite mass");
        }
        Ok(self)
    }

    pub fn kind(&self) -> EnsembleKind {
        match self.ensemble {
            Ensemble::Ginibre(_) => EnsembleKind::Ginibre,
            Ensemble::Symanzik { eps, .. } => EnsembleKind::SymanzikEps { eps },
        }
    }

    /// Total interaction of a configuration in this ensemble's mode.
    pub fn total_v(&self, config: &[Path]) -> Result<f64> {
        match &self.ensemble {
            Ensemble::Ginibre(p) if p.mode == Mode::LargeMass => v_total_largemass(config, p),
            Ensemble::Ginibre(p) => v_total_ginibre(config, p),
            Ensemble::Symanzik { potential, .. } => Ok(v_total_cl(config, potential)),
        }
    }

    /// Duration law of open paths.
    pub fn open_law(&self) -> OpenLaw {
        match &self.ensemble {
            Ensemble::Ginibre(p) => OpenLaw::Grid { nu: p.nu, kappa: self.kappa },
            Ensemble::Symanzik { .. } => OpenLaw::Continuum { kappa: self.kappa },
        }
    }

    /// Poisson background configuration.
    pub fn sample_background(&self, rng: &mut Rng, stats: &mut BridgeStats) -> Result<Vec<Path>> {
        let m = self.intensity.mass();
        let n = if m > 0.0 {
            Poisson::new(m).map_err(|e| Error::Validation(e.to_string()))?.sample(rng) as usize
        } else {
            0
        };
        (0..n).map(|_| self.intensity.sample_loop(rng, stats)).collect()
    }

    fn meta(&self, est: McEstimate) -> McEstimate {
        est.with_meta("loop_mass", self.intensity.mass())
            .with_meta("truncated_tail", self.intensity.truncated_tail())
    }
}

fn acceptance(accepted: f64, attempts: f64) -> f64 {
    if attempts > 0.0 {
        accepted / attempts
    } else {
        1.0
    }
}

/// `𝒵` (Ginibre) or `𝒵^{cl,ε}` (Symanzik).
pub fn estimate_rel_partition(spec: &EnsembleSpec, n_samples: u64, seed: u64, exec: &Exec) -> Result<McEstimate> {
    denominator(spec, n_samples, seed, stream::MAIN, exec)
}

fn denominator(spec: &EnsembleSpec, n_samples: u64, seed: u64, tag: u64, exec: &Exec) -> Result<McEstimate> {
    let acc = exec.run_vec(n_samples, seed, tag, 3, |rng, out| {
        let mut stats = BridgeStats::default();
        let phi = spec.sample_background(rng, &mut stats)?;
        out[0] = boltzmann(spec.total_v(&phi)?);
        out[1] = stats.accepted as f64;
        out[2] = stats.attempts as f64;
        Ok::<(), Error>(())
    })?;
    let est = McEstimate::from_welford(&acc[0], seed).with_meta("bridge_acceptance", acceptance(acc[1].mean, acc[2].mean));
    Ok(spec.meta(est))
}

/// Numerator sample `Σ_π Π_i 1{ω_i: x_i → y_π(i)} e^{-V(ω⃗ ∪ Φ)} · norm^p` on one shared background.
fn numerator_sample(
    spec: &EnsembleSpec,
    x: &[usize],
    ys: &[Vec<usize>],
    rng: &mut Rng,
    out: &mut [f64],
) -> Result<()> {
    let law = spec.open_law();
    let norm = law.normalization().powi(x.len() as i32);
    let mut stats = BridgeStats::default();
    let phi = spec.sample_background(rng, &mut stats)?;
    for (slot, y) in ys.iter().enumerate() {
        let mut config = phi.clone();
        let mut hit = true;
        for (xi, yi) in x.iter().zip(y) {
            let w = sample_free_walk(&spec.torus, *xi, law.sample(rng), rng);
            hit &= w.end() == *yi;
            config.push(w);
        }
        if hit {
            out[slot] += boltzmann(spec.total_v(&config)?) * norm;
        }
    }
    Ok(())
}

fn check_points(spec: &EnsembleSpec, x: &[usize], y: &[usize]) -> Result<()> {
    let p = x.len();
    if p == 0 || p != y.len() {
        return invalid("need p >= 1 source and target points");
    }
    if p > MAX_P {
        return Err(Error::Unsupported(format!("p = {p} > {MAX_P}")));
    }
    let n = spec.torus.volume();
    if x.iter().chain(y).any(|s| *s >= n) {
        return invalid("point outside the torus");
    }
    Ok(())
}

fn ratio_checked(num: &McEstimate, den: &McEstimate) -> Result<McEstimate> {
    if den.mean <= 3.0 * den.std_error {
        return Err(Error::DegenerateRatio(format!(
            "denominator {} ± {} is within 3σ of zero",
            den.mean, den.std_error
        )));
    }
    Ok(McEstimate::ratio(num, den))
}

/// Kernel entry `Γ_p(x⃗, y⃗)` (Ginibre) or `Γ_p^{cl,ε}(x⃗, y⃗)` (Symanzik).
pub fn estimate_gamma_p(
    spec: &EnsembleSpec,
    x: &[usize],
    y: &[usize],
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<McEstimate> {
    check_points(spec, x, y)?;
    let ys: Vec<Vec<usize>> = permutations(x.len()).into_iter().map(|pi| pi.iter().map(|&k| y[k]).collect()).collect();
    let acc = exec.run(n_samples, seed, stream::NUMERATOR, |rng| {
        let mut per = vec![0.0; ys.len()];
        numerator_sample(spec, x, &ys, rng, &mut per)?;
        Ok::<f64, Error>(per.iter().sum())
    })?;
    let num = McEstimate::from_welford(&acc, seed);
    let den = denominator(spec, n_samples, seed, stream::DENOMINATOR, exec)?;
    Ok(spec.meta(ratio_checked(&num, &den)?.with_meta("denominator", den.mean)))
}

/// Row `y ↦ Γ₁(x, y)` from one open path per sample.
pub fn estimate_gamma1_row(spec: &EnsembleSpec, x: usize, n_samples: u64, seed: u64, exec: &Exec) -> Result<Vec<McEstimate>> {
    let n = spec.torus.volume();
    if x >= n {
        return invalid("point outside the torus");
    }
    let law = spec.open_law();
    let norm = law.normalization();
    let acc = exec.run_vec(n_samples, seed, stream::NUMERATOR, n, |rng, out| {
        let mut stats = BridgeStats::default();
        let mut config = spec.sample_background(rng, &mut stats)?;
        let w = sample_free_walk(&spec.torus, x, law.sample(rng), rng);
        let end = w.end();
        config.push(w);
        out[end] = boltzmann(spec.total_v(&config)?) * norm;
        Ok::<(), Error>(())
    })?;
    let den = denominator(spec, n_samples, seed, stream::DENOMINATOR, exec)?;
    acc.iter()
        .map(|a| ratio_checked(&McEstimate::from_welford(a, seed), &den).map(|e| spec.meta(e)))
        .collect()
}

/// Full `Γ₁` on the torus from one row and translation invariance.
pub fn estimate_gamma1_kernel(spec: &EnsembleSpec, n_samples: u64, seed: u64, exec: &Exec) -> Result<(Kernel, Kernel)> {
    let row = estimate_gamma1_row(spec, 0, n_samples, seed, exec)?;
    let n = spec.torus.volume();
    let mut mean = Kernel::zeros(1, n)?;
    let mut err = Kernel::zeros(1, n)?;
    for x in 0..n {
        for y in 0..n {
            let e = &row[spec.torus.sub(y, x)];
            mean.set(&[x], &[y], e.mean);
            err.set(&[x], &[y], e.std_error);
        }
    }
    Ok((mean, err))
}

/// Free-gas `Γ₁ = A(I - A)^{-1}`, `A = e^{ν(Δ/2 - κ)}`.
pub fn free_gas_gamma1(torus: &Torus, nu: f64, kappa: f64) -> Result<Kernel> {
    if !(nu > 0.0) {
        return invalid("ν must be positive");
    }
    // spectral radius of A is e^{-κν}
    if !(kappa * nu > 0.0) {
        return Err(Error::Divergence(format!("spectral radius e^{{-κν}} = {} >= 1", (-kappa * nu).exp())));
    }
    let m = crate::linalg::sym_function(&(laplacian_matrix(torus) * 0.5), |l| {
        let a = (nu * (l - kappa)).exp();
        a / (1.0 - a)
    });
    Kernel::from_matrix(1, torus.volume(), &m)
}

/// Mean of `e^{-V}` over a Poisson process on a finite set of weighted atoms.
///
/// Used to check the Poissonization identity against exhaustive sums.
pub fn poissonized_atoms<F>(atoms: &[(f64, Path)], v: F, n_samples: u64, seed: u64, exec: &Exec) -> Result<McEstimate>
where
    F: Fn(&[Path]) -> Result<f64> + Sync + Send,
{
    let mass: f64 = atoms.iter().map(|a| a.0).sum();
    let acc = exec.run(n_samples, seed, stream::MAIN, |rng| {
        let n = if mass > 0.0 { Poisson::new(mass).map_err(|e| Error::Validation(e.to_string()))?.sample(rng) as usize } else { 0 };
        let config: Vec<Path> = (0..n)
            .map(|_| {
                let mut u = rng.gen::<f64>() * mass;
                for (w, p) in atoms {
                    if u < *w {
                        return p.clone();
                    }
                    u -= w;
                }
                atoms.last().expect("atoms").1.clone()
            })
            .collect();
        Ok::<f64, Error>(boltzmann(v(&config)?))
    })?;
    Ok(McEstimate::from_welford(&acc, seed))
}
