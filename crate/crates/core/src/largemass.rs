//! The infinite-mass classical gas of weighted particles `(k, x)`.
//!
//! A particle carries weight `e^{-κ0 k}/k`. Grouping particles by site, the
//! total occupation `K_x = Σ_{i: x_i = x} k_i` determines the energy, and the
//! combinatorial weight of all ways to split `K_x` into particles is exactly
//! one (the coefficient of `t^K` in `exp(Σ t^k/k) = 1/(1-t)`). Hence
//!
//! `Z^lm = Σ_{K ∈ N^Λ} e^{-κ0|K| - V(K)}`,
//!
//! with `K ∈ {0,1}^Λ` under a hard core. Marking `m_z` particles at site `z`
//! contributes a factor `C(K_z, m_z)`, the number of ways to pick their
//! occupations. The literal truncated particle sums are kept as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interactions::v_lm;
use crate::kernel::Kernel;
use crate::lattice::PeriodicPotential;
use crate::paths::Path;
use crate::quantum::permutations;

/// Largest number of occupation vectors enumerated.
pub const MAX_STATES: usize = 5_000_000;

#[derive(Clone, Debug)]
pub struct LmParams {
    pub kappa0: f64,
    pub potential: PeriodicPotential,
    pub tol: f64,
}

impl LmParams {
    pub fn new(kappa0: f64, potential: PeriodicPotential, tol: f64) -> Result<Self> {
        if !(kappa0 > 0.0) || !kappa0.is_finite() {
            return invalid(format!("κ0 = {kappa0} must be positive"));
        }
        if !(tol > 0.0) {
            return invalid("tolerance must be positive");
        }
        Ok(Self { kappa0, potential, tol })
    }

    fn volume(&self) -> usize {
        self.potential.torus().volume()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmPartition {
    /// `Z^lm(∅)`.
    pub z: f64,
    /// `Z^lm(∅) (1 - e^{-κ0})^{|Λ|}`.
    pub z_rel: f64,
    /// Largest per-site occupation kept.
    pub k_max: usize,
    /// Bound on the discarded (weighted) mass, relative to `Z^lm`.
    pub tail_bound: f64,
}

/// Occupation vectors with their Boltzmann weights.
struct Table {
    states: Vec<(Vec<u32>, f64)>,
    z: f64,
    k_max: usize,
    tail: f64,
}

fn energy(k: &[u32], v: &PeriodicPotential) -> f64 {
    let hc = v.hard_core();
    let mut e = 0.0;
    for (x, &kx) in k.iter().enumerate().filter(|p| *p.1 > 0) {
        for (y, &ky) in k.iter().enumerate().filter(|p| *p.1 > 0) {
            if hc && x == y {
                continue;
            }
            e += v.pair(x, y) * (kx as f64) * (ky as f64);
        }
    }
    0.5 * e
}

/// `Σ_{k > from} (1+k)^p e^{-κ0 k - v0 k²/2}` by direct summation until negligible.
fn weighted_tail(kappa0: f64, v0: f64, p: usize, from: usize) -> f64 {
    let mut s = 0.0;
    let mut k = from + 1;
    loop {
        let kf = k as f64;
        let t = (1.0 + kf).powi(p as i32) * (-kappa0 * kf - 0.5 * v0 * kf * kf).exp();
        s += t;
        if t < 1e-18 * s.max(1e-300) && kf > p as f64 / kappa0 {
            return s;
        }
        k += 1;
    }
}

fn table(params: &LmParams, p: usize) -> Result<Table> {
    let v = &params.potential;
    let n = params.volume();
    let (k_max, tail) = if v.hard_core() {
        (1, 0.0)
    } else {
        // v >= 0 lets every other site be bounded by its own one-site series
        let v0 = v.at(0);
        let full = weighted_tail(params.kappa0, v0, p, 0) + 1.0;
        let mut k_max = 1;
        loop {
            let tail = n as f64 * weighted_tail(params.kappa0, v0, p, k_max) * full.powi(n as i32 - 1);
            if tail < params.tol {
                break (k_max, tail);
            }
            k_max += 1;
        }
    };
    let count = (k_max + 1).checked_pow(n as u32).filter(|c| *c <= MAX_STATES).ok_or_else(|| {
        Error::Budget(format!("{}^{n} occupation vectors exceed {MAX_STATES}", k_max + 1))
    })?;
    let mut states = Vec::with_capacity(count);
    let mut k = vec![0u32; n];
    for _ in 0..count {
        let total: u32 = k.iter().sum();
        let w = (-params.kappa0 * total as f64 - energy(&k, v)).exp();
        states.push((k.clone(), w));
        for c in k.iter_mut() {
            *c += 1;
            if *c as usize <= k_max {
                break;
            }
            *c = 0;
        }
    }
    let z = states.iter().map(|s| s.1).sum();
    Ok(Table { states, z, k_max, tail })
}

/// `Z^lm` and the relative `𝒵^lm`.
pub fn z_lm(params: &LmParams) -> Result<LmPartition> {
    let t = table(params, 0)?;
    let z_rel = t.z * (1.0 - (-params.kappa0).exp()).powi(params.volume() as i32);
    Ok(LmPartition { z: t.z, z_rel, k_max: t.k_max, tail_bound: t.tail / t.z })
}

fn binomial(n: u32, k: usize) -> f64 {
    if k as u32 > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n as f64 - i as f64) / (i + 1) as f64)
}

fn matching_permutations(x: &[usize], y: &[usize]) -> usize {
    permutations(x.len()).iter().filter(|pi| (0..x.len()).all(|i| y[pi[i]] == x[i])).count()
}

fn gamma_from_table(t: &Table, x: &[usize], y: &[usize]) -> f64 {
    let perms = matching_permutations(x, y);
    if perms == 0 {
        return 0.0;
    }
    let n = t.states.first().map_or(0, |s| s.0.len());
    let mut marks = vec![0usize; n];
    for &s in x {
        marks[s] += 1;
    }
    let s: f64 = t
        .states
        .iter()
        .map(|(k, w)| w * marks.iter().enumerate().filter(|m| *m.1 > 0).map(|(z, &m)| binomial(k[z], m)).product::<f64>())
        .sum();
    perms as f64 * s / t.z
}

/// `Γ_p^lm(x⃗, y⃗)`.
pub fn gamma_lm(params: &LmParams, x: &[usize], y: &[usize]) -> Result<f64> {
    check_points(params, x, y)?;
    let t = table(params, x.len())?;
    Ok(gamma_from_table(&t, x, y))
}

fn check_points(params: &LmParams, x: &[usize], y: &[usize]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return invalid("need p >= 1 source and target points");
    }
    if x.len() > 6 {
        return Err(Error::Unsupported(format!("p = {} > 6", x.len())));
    }
    if x.iter().chain(y).any(|s| *s >= params.volume()) {
        return invalid("point outside the torus");
    }
    Ok(())
}

/// All entries of `Γ_p^lm`.
pub fn gamma_lm_kernel(params: &LmParams, p: usize) -> Result<Kernel> {
    let n = params.volume();
    let mut k = Kernel::zeros(p, n)?;
    let t = table(params, p)?;
    for i in 0..k.side() {
        let x = k.decode(i);
        for j in 0..k.side() {
            let y = k.decode(j);
            *k.at_mut(i, j) = gamma_from_table(&t, &x, &y);
        }
    }
    Ok(k)
}

/// `g^lm = log 𝒵^lm / |Λ|`.
pub fn gibbs_potential_lm(params: &LmParams) -> Result<f64> {
    Ok(z_lm(params)?.z_rel.ln() / params.volume() as f64)
}

// ---------------------------------------------------------------------------
// Literal particle sums

/// Particles `(k, x)` with `k <= k_max`.
fn particles(n_sites: usize, k_max: usize) -> Vec<(usize, usize)> {
    (1..=k_max).flat_map(|k| (0..n_sites).map(move |x| (k, x))).collect()
}

fn for_each_tuple<F: FnMut(&[usize])>(alphabet: usize, len: usize, mut f: F) {
    let mut idx = vec![0usize; len];
    if len == 0 {
        f(&idx);
        return;
    }
    if alphabet == 0 {
        return;
    }
    loop {
        f(&idx);
        let mut i = 0;
        loop {
            idx[i] += 1;
            if idx[i] < alphabet {
                break;
            }
            idx[i] = 0;
            i += 1;
            if i == len {
                return;
            }
        }
    }
}

/// `Σ_{n <= n_max} (1/n!) Σ_{(k_i, x_i)} Π(e^{-κ0 k_i}/k_i) e^{-V^lm}`, optionally with marked particles.
fn literal_sum(params: &LmParams, marked: &[(usize, usize)], k_max: usize, n_max: usize) -> Result<f64> {
    let parts = particles(params.volume(), k_max);
    let mut total = 0.0;
    let mut fact = 1.0;
    for n in 0..=n_max {
        if n > 0 {
            fact *= n as f64;
        }
        let mut s = 0.0;
        let mut err = None;
        for_each_tuple(parts.len(), n, |idx| {
            let mut k: Vec<usize> = marked.iter().map(|m| m.0).collect();
            let mut x: Vec<usize> = marked.iter().map(|m| m.1).collect();
            let mut w = 1.0;
            for &i in idx {
                let (ki, xi) = parts[i];
                k.push(ki);
                x.push(xi);
                w *= (-params.kappa0 * ki as f64).exp() / ki as f64;
            }
            match v_lm(&k, &x, &params.potential) {
                Ok(e) if e.is_finite() => s += w * (-e).exp(),
                Ok(_) => {}
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        total += s / fact;
    }
    Ok(total)
}

/// Literal truncated `(Z^lm, 𝒵^lm)`; the normalizer is truncated at the same `k_max`.
pub fn z_lm_literal(params: &LmParams, k_max: usize, n_max: usize) -> Result<(f64, f64)> {
    let z = literal_sum(params, &[], k_max, n_max)?;
    let log_norm: f64 = params.volume() as f64 * (1..=k_max).map(|k| (-params.kappa0 * k as f64).exp() / k as f64).sum::<f64>();
    Ok((z, z * (-log_norm).exp()))
}

/// Literal truncated `Σ_{k⃗} Σ_π e^{-κ0|k⃗|} δ(πy⃗ - x⃗) Z^lm(k⃗, x⃗) / Z^lm`.
pub fn gamma_lm_literal(params: &LmParams, x: &[usize], y: &[usize], k_max: usize, n_max: usize) -> Result<f64> {
    check_points(params, x, y)?;
    let perms = matching_permutations(x, y);
    if perms == 0 {
        return Ok(0.0);
    }
    let z = literal_sum(params, &[], k_max, n_max)?;
    let mut s = 0.0;
    let mut err = None;
    for_each_tuple(k_max, x.len(), |ks| {
        let marked: Vec<(usize, usize)> = ks.iter().zip(x).map(|(k, xi)| (k + 1, *xi)).collect();
        let w: f64 = marked.iter().map(|m| (-params.kappa0 * m.0 as f64).exp()).product();
        match literal_sum(params, &marked, k_max, n_max) {
            Ok(zk) => s += w * zk,
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(perms as f64 * s / z)
}

// ---------------------------------------------------------------------------
// Constant loops as particles

/// Constant loops of duration `kν` at `x` as particles `(k, x)`.
pub fn weighted_particle_view(config: &[Path], nu: f64) -> Result<Vec<(usize, usize)>> {
    config
        .iter()
        .map(|p| {
            if !p.is_constant() {
                return invalid("loop is not constant");
            }
            let k = (p.duration() / nu).round();
            if k < 1.0 || (k * nu - p.duration()).abs() > 1e-9 * p.duration() {
                return invalid(format!("duration {} is not in νN*", p.duration()));
            }
            Ok((k as usize, p.start()))
        })
        .collect()
}

/// Inverse of [`weighted_particle_view`].
pub fn particles_to_loops(particles: &[(usize, usize)], nu: f64) -> Vec<Path> {
    particles.iter().map(|&(k, x)| Path::constant(x, k as f64 * nu)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::{v_hat, v_total_largemass, InteractionParams};
    use crate::lattice::{periodize_potential, PotentialSpec};
    use crate::mc::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn hard(l: usize) -> PeriodicPotential {
        periodize_potential(&PotentialSpec::hard_core(1).unwrap(), l).unwrap()
    }

    fn onsite(l: usize, w: f64) -> PeriodicPotential {
        periodize_potential(&PotentialSpec::on_site(1, w).unwrap(), l).unwrap()
    }

    #[test]
    fn hard_core_closed_forms() {
        let a = (-1.0f64).exp();
        let p = LmParams::new(1.0, hard(3), 1e-12).unwrap();
        let z = z_lm(&p).unwrap();
        assert!((z.z_rel - (1.0 - (-2.0f64).exp()).powi(3)).abs() < 1e-12);
        assert!((z.z - (1.0 + a).powi(3)).abs() < 1e-12);
        assert!((gamma_lm(&p, &[1], &[1]).unwrap() - a / (1.0 + a)).abs() < 1e-12);
        assert_eq!(gamma_lm(&p, &[1], &[2]).unwrap(), 0.0);
        assert!((gibbs_potential_lm(&p).unwrap() - (1.0 - (-2.0f64).exp()).ln()).abs() < 1e-12);
        // literal sums: k >= 2 carries infinite self-energy, so k_max = 3 changes nothing
        let (zl, _) = z_lm_literal(&p, 3, 3).unwrap();
        assert!((zl - z.z).abs() < 1e-12);
        let gl = gamma_lm_literal(&p, &[1], &[1], 3, 3).unwrap();
        assert!((gl - a / (1.0 + a)).abs() < 1e-10);
    }

    #[test]
    fn free_soft_gas_is_relative_one() {
        let p = LmParams::new(0.7, onsite(3, 0.0), 1e-13).unwrap();
        assert!((z_lm(&p).unwrap().z_rel - 1.0).abs() < 1e-12);
        assert!(gibbs_potential_lm(&p).unwrap().abs() < 1e-12);
        // free occupation of one site: Σ K e^{-κ0 K}(1 - e^{-κ0}) = a/(1-a)
        let a = (-0.7f64).exp();
        assert!((gamma_lm(&p, &[0], &[0]).unwrap() - a / (1.0 - a)).abs() < 1e-11);
    }

    #[test]
    fn resummation_matches_literal_particle_sums() {
        let spec = PotentialSpec::table(1, 0, &[(vec![0], 1.2), (vec![1], 0.4)]).unwrap();
        let p = LmParams::new(1.5, periodize_potential(&spec, 2).unwrap(), 1e-13).unwrap();
        let exact = z_lm(&p).unwrap();
        let (zl, _) = z_lm_literal(&p, 6, 6).unwrap();
        assert!((zl - exact.z).abs() < 2e-4 * exact.z, "{zl} vs {}", exact.z);
        let g = gamma_lm(&p, &[0], &[0]).unwrap();
        let gl = gamma_lm_literal(&p, &[0], &[0], 5, 5).unwrap();
        assert!((g - gl).abs() < 2e-3 * g, "{g} vs {gl}");
        let g2 = gamma_lm(&p, &[0, 1], &[1, 0]).unwrap();
        let g2l = gamma_lm_literal(&p, &[0, 1], &[1, 0], 4, 4).unwrap();
        assert!((g2 - g2l).abs() < 5e-3 * g2, "{g2} vs {g2l}");
    }

    #[test]
    fn relative_partition_decreases_with_potential() {
        let a = z_lm(&LmParams::new(1.0, onsite(3, 0.3), 1e-12).unwrap()).unwrap().z_rel;
        let b = z_lm(&LmParams::new(1.0, onsite(3, 0.6), 1e-12).unwrap()).unwrap().z_rel;
        assert!(b < a && a < 1.0 && b > 0.0);
    }

    #[test]
    fn kernel_is_diagonal_up_to_permutation() {
        let p = LmParams::new(1.0, onsite(3, 0.3), 1e-12).unwrap();
        let k = gamma_lm_kernel(&p, 2).unwrap();
        for i in 0..k.side() {
            for j in 0..k.side() {
                let (mut x, mut y) = (k.decode(i), k.decode(j));
                x.sort();
                y.sort();
                if x != y {
                    assert_eq!(k.at(i, j), 0.0);
                } else {
                    assert!(k.at(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn particle_pair_energy_is_v_hat() {
        let v = onsite(3, 0.4);
        let nu = 0.25;
        assert!((v_lm(&[2, 3], &[1, 1], &v).unwrap() - (4.0 + 9.0 + 12.0) * 0.4 / 2.0).abs() < 1e-12);
        let pair = v_lm(&[2, 3], &[1, 1], &v).unwrap() - v_lm(&[2], &[1], &v).unwrap() - v_lm(&[3], &[1], &v).unwrap();
        assert!((pair - v_hat(2.0 * nu, 1, 3.0 * nu, 1, nu, &v)).abs() < 1e-12);
    }

    #[test]
    fn hard_core_double_occupancy_is_infinite() {
        let params = InteractionParams::largemass(0.5, 1.0, hard(3)).unwrap();
        let loops = particles_to_loops(&[(2, 0)], 0.5);
        assert_eq!(v_total_largemass(&loops, &params).unwrap(), f64::INFINITY);
        assert_eq!(v_lm(&[2], &[0], &hard(3)).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn particle_view_round_trip(seed in 0u64..500) {
            let mut rng = rng_for(seed, 0, 0);
            let nu = 0.3;
            let parts: Vec<(usize, usize)> = (0..rng.gen_range(0..6)).map(|_| (rng.gen_range(1..5), rng.gen_range(0..4))).collect();
            let loops = particles_to_loops(&parts, nu);
            prop_assert_eq!(weighted_particle_view(&loops, nu).unwrap(), parts);
        }
    }

    #[test]
    fn non_constant_loops_are_rejected() {
        let p = Path::new(0, 1.0, vec![(0.5, 1)]).unwrap();
        assert!(weighted_particle_view(&[p], 0.5).is_err());
        assert!(weighted_particle_view(&[Path::constant(0, 0.7)], 0.5).is_err());
    }
}
