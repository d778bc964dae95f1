//! Exact grand-canonical Bose gas on small tori.
//!
//! The working basis is the occupation-number basis of each particle-number
//! sector, which is the range of the symmetrizer on `Λ^n`. The product basis
//! with an explicit symmetrizer is kept ([`ManyBodySpace`]) and used to
//! cross-check the occupation route on tiny sectors.
//!
//! Sectors are truncated with a rigorous bound: the interaction is at least
//! `b(n) >= 0` on sector `n`, and the free sector traces `h_n(z)` (complete
//! homogeneous polynomials in `z_ξ = e^{-ν(κ+λ_ξ)}`) dominate the kinetic
//! part, so the discarded mass is at most `Σ_{m>n} m^p e^{-b(m)} h_m(z)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interactions::{InteractionParams, Mode};
use crate::kernel::Kernel;
use crate::lattice::{check_positive_type, laplacian_matrix, mode_rates, Torus};
use crate::linalg::{sym_eigen, sym_eigenvalues, sym_function};
use crate::mc::{Exec, McEstimate};
use crate::paths::sample_free_walk;

/// Largest sector dimension diagonalized densely.
pub const MAX_SECTOR_DIM: usize = 2500;
/// Largest product-basis dimension built.
pub const MAX_PRODUCT_DIM: usize = 4096;
pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_FREE_TERMS: usize = 1 << 15;

fn check_kappa(params: &InteractionParams, kappa: f64) -> Result<()> {
    if !(kappa * params.nu > 0.0) || !kappa.is_finite() {
        return invalid(format!("κν = {} must be positive", kappa * params.nu));
    }
    Ok(())
}

fn drops_self_term(params: &InteractionParams) -> bool {
    params.mode == Mode::LargeMass && params.potential.hard_core()
}

// ---------------------------------------------------------------------------
// Product basis

/// `Λ^n` with coincident tuples removed under a hard core.
#[derive(Clone, Debug)]
pub struct ManyBodySpace {
    torus: Torus,
    n: usize,
    hard_core: bool,
    states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl ManyBodySpace {
    pub fn new(torus: &Torus, n: usize, hard_core: bool) -> Result<Self> {
        if n == 0 {
            return invalid("many-body space needs n >= 1");
        }
        let v = torus.volume();
        let full = v
            .checked_pow(n as u32)
            .filter(|d| *d <= MAX_PRODUCT_DIM)
            .ok_or_else(|| Error::Budget(format!("|Λ|^n = {v}^{n} exceeds {MAX_PRODUCT_DIM}")))?;
        let mut states = Vec::new();
        for mut i in 0..full {
            let tuple: Vec<usize> = (0..n)
                .map(|_| {
                    let s = i % v;
                    i /= v;
                    s
                })
                .collect();
            if hard_core && (0..n).any(|a| (a + 1..n).any(|b| tuple[a] == tuple[b])) {
                continue;
            }
            states.push(tuple);
        }
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { torus: torus.clone(), n, hard_core, states, index })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[Vec<usize>] {
        &self.states
    }

    pub fn index_of(&self, tuple: &[usize]) -> Option<usize> {
        self.index.get(tuple).copied()
    }

    /// `P⁺ = (1/n!) Σ_π U_π`.
    pub fn symmetrizer(&self) -> DMatrix<f64> {
        let perms = permutations(self.n);
        let w = 1.0 / perms.len() as f64;
        let mut p = DMatrix::zeros(self.dim(), self.dim());
        for (i, s) in self.states.iter().enumerate() {
            for pi in &perms {
                let t: Vec<usize> = pi.iter().map(|&k| s[k]).collect();
                let j = self.index[&t];
                p[(j, i)] += w;
            }
        }
        p
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// First-quantized `H_n` on the (masked) product basis.
pub fn hamiltonian(space: &ManyBodySpace, params: &InteractionParams) -> Result<DMatrix<f64>> {
    let torus = &space.torus;
    if params.potential.torus() != torus {
        return invalid("potential and space live on different tori");
    }
    if space.hard_core != params.potential.hard_core() {
        return invalid("hard-core mask does not match the potential");
    }
    let lap = laplacian_matrix(torus);
    let v = &params.potential;
    let drop_self = drops_self_term(params);
    let dim = space.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for (i, s) in space.states.iter().enumerate() {
        let mut pot = 0.0;
        for a in 0..space.n {
            for b in 0..space.n {
                if a == b && drop_self {
                    continue;
                }
                pot += v.pair(s[a], s[b]);
            }
        }
        let pot = params.lambda * pot / 2.0;
        if !pot.is_finite() {
            return Err(Error::Validation(format!("infinite potential on retained state {s:?}")));
        }
        h[(i, i)] += pot;
        for a in 0..space.n {
            let x = s[a];
            h[(i, i)] -= params.nu / 2.0 * lap[(x, x)];
            let mut t = s.clone();
            for y in (0..torus.volume()).filter(|&y| y != x && lap[(y, x)] != 0.0) {
                t[a] = y;
                if let Some(j) = space.index_of(&t) {
                    h[(j, i)] -= params.nu / 2.0 * lap[(y, x)];
                }
            }
        }
    }
    Ok(h)
}

fn gibbs_matrix(h: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    sym_function(h, |e| (-(e + shift)).exp())
}

/// Entries of `e^{-(H + shift)}` on demand, `O(dim)` each, without forming
/// the dense product.
struct GibbsEntries {
    /// `Uᵀ`, so that column `j` is row `j` of `U`.
    ut: DMatrix<f64>,
    /// `diag(w) Uᵀ`.
    wut: DMatrix<f64>,
    trace: f64,
}

impl GibbsEntries {
    fn new(h: &DMatrix<f64>, shift: f64) -> Self {
        let e = sym_eigen(h);
        let w = e.eigenvalues.map(|v| (-(v + shift)).exp());
        let ut = e.eigenvectors.transpose();
        let mut wut = ut.clone();
        for (k, mut row) in wut.row_iter_mut().enumerate() {
            row *= w[k];
        }
        Self { ut, wut, trace: w.sum() }
    }

    fn get(&self, j: usize, i: usize) -> f64 {
        self.wut.column(j).dot(&self.ut.column(i))
    }

    fn trace(&self) -> f64 {
        self.trace
    }
}

/// `tr(e^{-(H_n + κνn)} P⁺_n)` on the product basis.
pub fn product_basis_trace(params: &InteractionParams, kappa: f64, n: usize) -> Result<f64> {
    check_kappa(params, kappa)?;
    if n == 0 {
        return Ok(1.0);
    }
    let space = ManyBodySpace::new(params.potential.torus(), n, params.potential.hard_core())?;
    let g = gibbs_matrix(&hamiltonian(&space, params)?, kappa * params.nu * n as f64);
    Ok((g * space.symmetrizer()).trace())
}

/// `Γ_p` from partial traces on the product basis, all sectors `n <= n_max`.
pub fn product_basis_gamma(p: usize, params: &InteractionParams, kappa: f64, n_max: usize) -> Result<Kernel> {
    check_kappa(params, kappa)?;
    let torus = params.potential.torus();
    let hc = params.potential.hard_core();
    let xi: f64 = (0..=n_max).map(|n| product_basis_trace(params, kappa, n)).sum::<Result<f64>>()?;
    let mut k = Kernel::zeros(p, torus.volume())?;
    for m in p..=n_max {
        let space = ManyBodySpace::new(torus, m, hc)?;
        let rho = gibbs_matrix(&hamiltonian(&space, params)?, kappa * params.nu * m as f64) * space.symmetrizer();
        let n = m - p;
        let factor: f64 = ((n + 1)..=m).map(|j| j as f64).product::<f64>() / xi;
        for (i, s) in space.states.iter().enumerate() {
            for (j, t) in space.states.iter().enumerate() {
                if s[p..] == t[p..] {
                    let (xi_, yi) = (k.encode(&s[..p]), k.encode(&t[..p]));
                    *k.at_mut(xi_, yi) += factor * rho[(i, j)];
                }
            }
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Occupation-number sectors

/// Occupation configurations with `Σ n_x = n`, each `n_x <= max_occ`.
#[derive(Clone, Debug)]
pub struct FockSector {
    n: usize,
    max_occ: u16,
    states: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl FockSector {
    pub fn new(n_sites: usize, n: usize, hard_core: bool) -> Result<Self> {
        let max_occ: u16 = if hard_core { 1 } else { u16::try_from(n).map_err(|_| Error::Budget(format!("sector n = {n}")))? };
        let dim = fock_dimension(n_sites, n, hard_core);
        if dim > MAX_SECTOR_DIM {
            return Err(Error::Budget(format!("sector n = {n} on {n_sites} sites has dimension {dim}")));
        }
        let mut states = Vec::with_capacity(dim);
        let mut cur = vec![0u16; n_sites];
        fill(&mut cur, 0, n, max_occ, &mut states);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { n, max_occ, states, index })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[Vec<u16>] {
        &self.states
    }

    pub fn index_of(&self, occ: &[u16]) -> Option<usize> {
        self.index.get(occ).copied()
    }
}

fn fill(cur: &mut Vec<u16>, site: usize, left: usize, max_occ: u16, out: &mut Vec<Vec<u16>>) {
    if site + 1 == cur.len() {
        if left <= max_occ as usize {
            cur[site] = left as u16;
            out.push(cur.clone());
        }
        return;
    }
    for k in 0..=left.min(max_occ as usize) {
        cur[site] = k as u16;
        fill(cur, site + 1, left - k, max_occ, out);
    }
    cur[site] = 0;
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Dimension of the symmetric (or hard-core) sector.
pub fn fock_dimension(n_sites: usize, n: usize, hard_core: bool) -> usize {
    let d = if hard_core { binomial(n_sites, n) } else { binomial(n_sites + n - 1, n) };
    if d > usize::MAX as f64 / 2.0 {
        usize::MAX
    } else {
        d.round() as usize
    }
}

fn occupation_energy(occ: &[u16], params: &InteractionParams) -> f64 {
    let v = &params.potential;
    let drop_self = drops_self_term(params);
    let mut e = 0.0;
    for (x, &nx) in occ.iter().enumerate().filter(|p| *p.1 > 0) {
        for (y, &ny) in occ.iter().enumerate().filter(|p| *p.1 > 0) {
            if x == y && drop_self {
                continue;
            }
            e += v.pair(x, y) * (nx as f64) * (ny as f64);
        }
    }
    params.lambda * e / 2.0
}

/// Second-quantized `H_n` restricted to an occupation sector.
pub fn sector_hamiltonian(sector: &FockSector, params: &InteractionParams) -> Result<DMatrix<f64>> {
    let torus = params.potential.torus();
    let lap = laplacian_matrix(torus);
    let dim = sector.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for (i, s) in sector.states.iter().enumerate() {
        let pot = occupation_energy(s, params);
        if !pot.is_finite() {
            return Err(Error::Validation(format!("infinite potential on retained state {s:?}")));
        }
        h[(i, i)] += pot;
        let mut t = s.clone();
        for x in (0..s.len()).filter(|&x| s[x] > 0) {
            h[(i, i)] -= params.nu / 2.0 * lap[(x, x)] * s[x] as f64;
            for y in (0..s.len()).filter(|&y| y != x && lap[(y, x)] != 0.0) {
                if s[y] >= sector.max_occ {
                    continue;
                }
                t[x] -= 1;
                t[y] += 1;
                let j = sector.index[&t];
                h[(j, i)] -= params.nu / 2.0 * lap[(y, x)] * ((s[x] as f64) * (s[y] as f64 + 1.0)).sqrt();
                t[x] += 1;
                t[y] -= 1;
            }
        }
    }
    Ok(h)
}

/// `a_{x_1} … a_{x_p}` (annihilations) then `a†_{y_1} … a†_{y_p}`; returns the coefficient.
fn apply_hop(occ: &mut [u16], x: &[usize], y: &[usize], max_occ: u16) -> Option<f64> {
    let mut c = 1.0;
    for &a in x {
        if occ[a] == 0 {
            return None;
        }
        c *= (occ[a] as f64).sqrt();
        occ[a] -= 1;
    }
    for &b in y {
        if occ[b] >= max_occ {
            return None;
        }
        occ[b] += 1;
        c *= (occ[b] as f64).sqrt();
    }
    Some(c)
}

// ---------------------------------------------------------------------------
// Free-gas bounds

/// `z_ξ = e^{-ν(κ+λ_ξ)}` for every Fourier mode.
pub fn free_mode_weights(torus: &Torus, nu: f64, kappa: f64) -> Vec<f64> {
    mode_rates(torus).into_iter().map(|r| (-nu * (kappa + r)).exp()).collect()
}

/// `Ξ₀ = Π_ξ (1 - z_ξ)^{-1}`.
pub fn free_partition(torus: &Torus, nu: f64, kappa: f64) -> f64 {
    free_mode_weights(torus, nu, kappa).into_iter().map(|z| 1.0 / (1.0 - z)).product()
}

/// Free sector traces `h_0..h_m_max` by the power-sum recurrence.
pub fn free_sector_traces(z: &[f64], m_max: usize) -> Vec<f64> {
    let p: Vec<f64> = (0..=m_max).map(|k| z.iter().map(|zi| zi.powi(k as i32)).sum()).collect();
    let mut h = vec![1.0; m_max + 1];
    for m in 1..=m_max {
        h[m] = (1..=m).map(|k| p[k] * h[m - k]).sum::<f64>() / m as f64;
    }
    h
}

/// Interaction lower bound on sector `n`.
fn interaction_floor(params: &InteractionParams, positive_type: bool, n: usize) -> f64 {
    if drops_self_term(params) {
        return 0.0;
    }
    let n = n as f64;
    let v = &params.potential;
    let mut b = n * v.at(0);
    if positive_type {
        b = b.max(v.l1_norm() * n * n / v.torus().volume() as f64);
    }
    params.lambda * b / 2.0
}

/// Smallest `n_max` whose weighted tail bound is below `tol`, and that bound.
/// Particle cutoff `n_max` and its tail bound for `Ξ` and `Γ_1..Γ_p` at tolerance `tol`.
pub fn particle_cutoff(params: &InteractionParams, kappa: f64, p: usize, tol: f64) -> Result<(usize, f64)> {
    check_kappa(params, kappa)?;
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    choose_cutoff(params, kappa, p, tol)
}

fn choose_cutoff(params: &InteractionParams, kappa: f64, p: usize, tol: f64) -> Result<(usize, f64)> {
    let torus = params.potential.torus();
    let vol = torus.volume();
    let z = free_mode_weights(torus, params.nu, kappa);
    let pos = !params.potential.hard_core() && check_positive_type(&params.potential)?.0;
    let hard = drops_self_term(params);
    let zmax = z.iter().cloned().fold(0.0, f64::max);
    // rigorous bound on Σ_{m>M} m^p e^{-b(m)} h_m from h_m <= C(m+V-1, V-1) zmax^m
    let far_bound = |big_m: usize| -> f64 {
        let m = (big_m + 1) as f64;
        let v = vol as f64;
        let ratio = zmax * (m + v) / (m + 1.0) * ((m + 1.0) / m).powi(p as i32);
        if ratio >= 1.0 {
            return f64::INFINITY;
        }
        let ln_binom: f64 = (1..vol).map(|j| ((m + j as f64) / j as f64).ln()).sum();
        let first = (ln_binom + m * zmax.ln() + p as f64 * m.ln()).exp();
        (-interaction_floor(params, pos, big_m + 1)).exp() * first / (1.0 - ratio)
    };
    let mut m_max = 64;
    let h = loop {
        if hard && m_max >= vol {
            break (free_sector_traces(&z, m_max), 0.0);
        }
        let far = far_bound(m_max);
        if far < 1e-3 * tol {
            break (free_sector_traces(&z, m_max), far);
        }
        if m_max >= MAX_FREE_TERMS {
            return Err(Error::Divergence(format!("free sector traces not summable to {tol} within {m_max} terms")));
        }
        m_max = (m_max * 2).min(MAX_FREE_TERMS);
    };
    let (h, far) = h;
    let far = if hard { 0.0 } else { far };
    let mut tail = vec![0.0; m_max + 2];
    tail[m_max] = far;
    for m in (0..m_max).rev() {
        let k = m + 1;
        let term = if hard && k > vol {
            0.0
        } else {
            (k as f64).powi(p as i32) * (-interaction_floor(params, pos, k)).exp() * h[k]
        };
        tail[m] = tail[m + 1] + term;
    }
    let n = (0..=m_max).find(|&n| tail[n] < tol || hard && n >= vol).unwrap_or(m_max);
    Ok((n, if hard && n >= vol { 0.0 } else { tail[n] }))
}

// ---------------------------------------------------------------------------
// Grand-canonical results

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrandCanonicalResult {
    pub xi: f64,
    pub xi_free: f64,
    pub z_rel: f64,
    pub per_n: Vec<f64>,
    pub n_max: usize,
    pub tail_bound: f64,
}

impl GrandCanonicalResult {
    /// `Σ_n n w_n / Ξ`.
    pub fn mean_particle_number(&self) -> f64 {
        self.per_n.iter().enumerate().map(|(n, w)| n as f64 * w).sum::<f64>() / self.xi
    }
}

#[derive(Clone, Debug)]
pub struct QuantumSolution {
    pub partition: GrandCanonicalResult,
    /// `gammas[p - 1] = Γ_p`.
    pub gammas: Vec<Kernel>,
}

/// Exact `Ξ`, `𝒵` and `Γ_1..Γ_{p_max}`.
pub fn solve(params: &InteractionParams, kappa: f64, tol: f64, p_max: usize, exec: &Exec) -> Result<QuantumSolution> {
    check_kappa(params, kappa)?;
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let torus = params.potential.torus();
    let vol = torus.volume();
    let hc = params.potential.hard_core();
    let (n_max, tail_bound) = choose_cutoff(params, kappa, p_max, tol)?;
    let kappa_nu = kappa * params.nu;
    if p_max == 0 && (params.lambda == 0.0 || params.potential.is_zero()) {
        // the sector traces of the free gas are the h_n themselves
        let per_n = free_sector_traces(&free_mode_weights(torus, params.nu, kappa), n_max);
        let xi: f64 = per_n.iter().sum();
        let xi_free = free_partition(torus, params.nu, kappa);
        let partition = GrandCanonicalResult { xi, xi_free, z_rel: xi / xi_free, per_n, n_max, tail_bound };
        return Ok(QuantumSolution { partition, gammas: Vec::new() });
    }
    for n in 0..=n_max {
        if fock_dimension(vol, n, hc) > MAX_SECTOR_DIM {
            return Err(Error::Budget(format!(
                "truncation needs n_max = {n_max} but sector {n} exceeds {MAX_SECTOR_DIM} states"
            )));
        }
    }
    let sectors: Vec<Result<(f64, Vec<Kernel>)>> = exec.map_items(n_max + 1, |n| {
        let mut gammas = Vec::new();
        if n == 0 {
            for p in 1..=p_max {
                gammas.push(Kernel::zeros(p, vol)?);
            }
            return Ok((1.0, gammas));
        }
        let sector = FockSector::new(vol, n, hc)?;
        if sector.dim() == 0 {
            for p in 1..=p_max {
                gammas.push(Kernel::zeros(p, vol)?);
            }
            return Ok((0.0, gammas));
        }
        let h = sector_hamiltonian(&sector, params)?;
        let shift = kappa_nu * n as f64;
        if p_max == 0 {
            let tr = sym_eigenvalues(&h).iter().map(|e| (-(e + shift)).exp()).sum();
            return Ok((tr, gammas));
        }
        let g = GibbsEntries::new(&h, shift);
        for p in 1..=p_max {
            let mut k = Kernel::zeros(p, vol)?;
            if p <= n {
                for (i, s) in sector.states.iter().enumerate() {
                    for xi in 0..k.side() {
                        let x = k.decode(xi);
                        for yi in 0..k.side() {
                            let y = k.decode(yi);
                            let mut t = s.clone();
                            if let Some(c) = apply_hop(&mut t, &x, &y, sector.max_occ) {
                                *k.at_mut(xi, yi) += c * g.get(sector.index[&t], i);
                            }
                        }
                    }
                }
            }
            gammas.push(k);
        }
        Ok((g.trace(), gammas))
    });
    let mut per_n = Vec::with_capacity(n_max + 1);
    let mut gammas: Vec<Kernel> = (1..=p_max).map(|p| Kernel::zeros(p, vol)).collect::<Result<_>>()?;
    for s in sectors {
        let (tr, ks) = s?;
        per_n.push(tr);
        for (acc, k) in gammas.iter_mut().zip(ks) {
            for i in 0..acc.side() {
                for j in 0..acc.side() {
                    *acc.at_mut(i, j) += k.at(i, j);
                }
            }
        }
    }
    let xi: f64 = per_n.iter().sum();
    for k in &mut gammas {
        for i in 0..k.side() {
            for j in 0..k.side() {
                *k.at_mut(i, j) /= xi;
            }
        }
    }
    let xi_free = free_partition(torus, params.nu, kappa);
    let partition = GrandCanonicalResult { xi, xi_free, z_rel: xi / xi_free, per_n, n_max, tail_bound };
    Ok(QuantumSolution { partition, gammas })
}

fn default_exec() -> Exec {
    Exec::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn grand_partition(params: &InteractionParams, kappa: f64, tol: f64) -> Result<GrandCanonicalResult> {
    Ok(solve(params, kappa, tol, 0, &default_exec())?.partition)
}

pub fn reduced_density_matrix(p: usize, params: &InteractionParams, kappa: f64, tol: f64) -> Result<Kernel> {
    if p == 0 {
        return invalid("p must be >= 1");
    }
    Ok(solve(params, kappa, tol, p, &default_exec())?.gammas.pop().expect("p >= 1"))
}

/// `g = log 𝒵 / |Λ|`.
pub fn gibbs_potential(params: &InteractionParams, kappa: f64, tol: f64) -> Result<f64> {
    let r = grand_partition(params, kappa, tol)?;
    Ok(r.z_rel.ln() / params.potential.torus().volume() as f64)
}

// ---------------------------------------------------------------------------
// Feynman–Kac

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeynmanKacEntry {
    pub x: usize,
    pub y: usize,
    pub exact: f64,
    pub estimate: McEstimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeynmanKacReport {
    pub entries: Vec<FeynmanKacEntry>,
    /// Largest `|estimate - exact| / std_error`.
    pub max_deviation: f64,
    pub pass: bool,
}

/// `e^{t(Δ/2 - V)}` by eigendecomposition.
pub fn feynman_kac_exact(torus: &Torus, v_site: &[f64], t: f64) -> Result<DMatrix<f64>> {
    if v_site.len() != torus.volume() || v_site.iter().any(|v| !v.is_finite()) {
        return invalid("site potential must be finite with one value per site");
    }
    let m = laplacian_matrix(torus) * 0.5 - DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v_site));
    Ok(sym_function(&m, |e| (t * e).exp()))
}

/// Matrix exponential against `E_x[1{ω(t)=y} e^{-∫V(ω)}]` for all `(x, y)`.
pub fn feynman_kac_check(
    torus: &Torus,
    v_site: &[f64],
    t: f64,
    n_samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<FeynmanKacReport> {
    if !(t > 0.0) {
        return invalid("t must be positive");
    }
    let exact = feynman_kac_exact(torus, v_site, t)?;
    let n = torus.volume();
    let mut entries = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut pass = true;
    for x in 0..n {
        let acc = exec.run_vec(n_samples, seed, 0x464b_0000 + x as u64, n, |rng, out| {
            let w = sample_free_walk(torus, x, t, rng);
            let weight: f64 = (-w.segments().map(|(a, b, s)| (b - a) * v_site[s]).sum::<f64>()).exp();
            out[w.end()] = weight;
            Ok::<(), Error>(())
        })?;
        for (y, a) in acc.iter().enumerate() {
            let est = McEstimate::from_welford(a, seed);
            let target = exact[(y, x)];
            let dev = if est.std_error > 0.0 {
                (est.mean - target).abs() / est.std_error
            } else if (est.mean - target).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            max_dev = max_dev.max(dev);
            pass &= dev <= 3.0;
            entries.push(FeynmanKacEntry { x, y, exact: target, estimate: est });
        }
    }
    Ok(FeynmanKacReport { entries, max_deviation: max_dev, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{periodize_potential, PotentialSpec};
    use crate::mc::rng_for;
    use rand::Rng;

    fn onsite(l: usize, w: f64) -> crate::lattice::PeriodicPotential {
        periodize_potential(&PotentialSpec::on_site(1, w).unwrap(), l).unwrap()
    }

    fn seq() -> Exec {
        Exec::sequential(1)
    }

    #[test]
    fn product_space_dimensions_and_symmetrizer() {
        let t = Torus::new(1, 3).unwrap();
        let s = ManyBodySpace::new(&t, 2, true).unwrap();
        assert_eq!(s.dim(), 6);
        for (n, hc) in [(2, false), (3, false), (2, true), (3, true)] {
            let s = ManyBodySpace::new(&t, n, hc).unwrap();
            let p = s.symmetrizer();
            assert!((&p * &p - &p).amax() < 1e-12);
            assert!((&p - p.transpose()).amax() < 1e-12);
            // rank of P⁺ is the occupation-sector dimension
            assert!((p.trace() - fock_dimension(3, n, hc) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn single_particle_and_single_site_hamiltonians() {
        let t = Torus::new(1, 4).unwrap();
        let params = InteractionParams::generic(0.3, 0.7, onsite(4, 2.0)).unwrap();
        let h = hamiltonian(&ManyBodySpace::new(&t, 1, false).unwrap(), &params).unwrap();
        let want = laplacian_matrix(&t) * (-0.15) + DMatrix::identity(4, 4) * 0.7;
        assert!((h - want).amax() < 1e-12);
        let t1 = Torus::new(1, 1).unwrap();
        let params = InteractionParams::generic(0.3, 0.7, onsite(1, 2.0)).unwrap();
        for n in 1..5 {
            let h = hamiltonian(&ManyBodySpace::new(&t1, n, false).unwrap(), &params).unwrap();
            assert!((h[(0, 0)] - 0.35 * 2.0 * (n * n) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_spectrum_matches_symmetric_product_spectrum() {
        let v = periodize_potential(&PotentialSpec::table(1, 0, &[(vec![0], 0.4), (vec![1], 0.1)]).unwrap(), 3).unwrap();
        let params = InteractionParams::generic(0.7, 0.5, v).unwrap();
        for n in 1..=3 {
            let want = product_basis_trace(&params, 0.8, n).unwrap();
            let sector = FockSector::new(3, n, false).unwrap();
            let h = sector_hamiltonian(&sector, &params).unwrap();
            let got: f64 = gibbs_matrix(&h, 0.56 * n as f64).trace();
            assert!((got - want).abs() < 1e-12 * want, "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn hard_core_sector_matches_masked_product_basis() {
        let t = Torus::new(2, 2).unwrap();
        let v = periodize_potential(&PotentialSpec::table(2, 1, &[(vec![1, 0], 0.3)]).unwrap(), 2).unwrap();
        let params = InteractionParams::largemass(0.4, 1.0, v).unwrap();
        let kappa = params.kappa_for(None).unwrap();
        for n in 1..=3 {
            let want = product_basis_trace(&params, kappa, n).unwrap();
            let sector = FockSector::new(t.volume(), n, true).unwrap();
            let got = gibbs_matrix(&sector_hamiltonian(&sector, &params).unwrap(), kappa * 0.4 * n as f64).trace();
            assert!((got - want).abs() < 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn free_single_site_partition() {
        let params = InteractionParams::generic(0.5, 0.0, onsite(1, 0.0)).unwrap();
        let r = grand_partition(&params, 0.6, 1e-12).unwrap();
        let want = 1.0 / (1.0 - (-0.3f64).exp());
        assert!((r.xi - want).abs() < 1e-10 * want);
        assert!((r.z_rel - 1.0).abs() < 1e-10);
        assert!(r.tail_bound < 1e-12);
    }

    #[test]
    fn free_gas_is_relative_one() {
        let v = periodize_potential(&PotentialSpec::on_site(2, 0.0).unwrap(), 2).unwrap();
        let params = InteractionParams::generic(0.8, 0.3, v).unwrap();
        let r = grand_partition(&params, 4.0, 1e-11).unwrap();
        assert!((r.z_rel - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_site_series() {
        let nu = 0.3;
        let w = 1.5;
        let kappa = 0.4;
        let params = InteractionParams::meanfield(nu, onsite(1, w)).unwrap();
        let sol = solve(&params, kappa, 1e-13, 1, &seq()).unwrap();
        let weight = |n: f64| (-(nu * nu * w * n * n / 2.0 + kappa * nu * n)).exp();
        let xi: f64 = (0..4000).map(|n| weight(n as f64)).sum();
        let n1: f64 = (0..4000).map(|n| n as f64 * weight(n as f64)).sum();
        assert!((sol.partition.xi - xi).abs() < 1e-12 * xi);
        assert!((sol.gammas[0].at(0, 0) - n1 / xi).abs() < 1e-11 * n1 / xi);
    }

    #[test]
    fn free_gamma_matches_resolvent_and_trace_identity() {
        let t = Torus::new(1, 3).unwrap();
        let params = InteractionParams::generic(0.6, 1.0, onsite(3, 0.0)).unwrap();
        let sol = solve(&params, 3.0, 1e-13, 1, &seq()).unwrap();
        let want = crate::loop_mc::free_gas_gamma1(&t, 0.6, 3.0).unwrap();
        assert!(sol.gammas[0].max_abs_diff(&want) < 1e-10);
        let tr: f64 = (0..3).map(|x| sol.gammas[0].get(&[x], &[x])).sum();
        assert!((tr - sol.partition.mean_particle_number()).abs() < 1e-10);
        let l1 = crate::loop_mc::free_gas_gamma1(&Torus::new(1, 1).unwrap(), 0.6, 1.2).unwrap();
        let a = (-0.72f64).exp();
        assert!((l1.at(0, 0) - a / (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn occupation_gamma_matches_product_partial_traces() {
        let v = periodize_potential(&PotentialSpec::table(1, 0, &[(vec![0], 0.8), (vec![1], 0.2)]).unwrap(), 3).unwrap();
        let params = InteractionParams::generic(1.0, 1.0, v).unwrap();
        let kappa = 2.5;
        // both routes truncated at the same n_max = 5
        let n_max = 5;
        for p in 1..=2 {
            let prod = product_basis_gamma(p, &params, kappa, n_max).unwrap();
            let mut xi = 0.0;
            let mut k = Kernel::zeros(p, 3).unwrap();
            for n in 0..=n_max {
                if n == 0 {
                    xi += 1.0;
                    continue;
                }
                let sector = FockSector::new(3, n, false).unwrap();
                let g = gibbs_matrix(&sector_hamiltonian(&sector, &params).unwrap(), kappa * n as f64);
                xi += g.trace();
                for (i, s) in sector.states().iter().enumerate() {
                    for a in 0..k.side() {
                        for b in 0..k.side() {
                            let mut st = s.clone();
                            if let Some(c) = apply_hop(&mut st, &k.decode(a), &k.decode(b), n as u16) {
                                *k.at_mut(a, b) += c * g[(sector.index_of(&st).unwrap(), i)];
                            }
                        }
                    }
                }
            }
            let mut worst: f64 = 0.0;
            for a in 0..k.side() {
                for b in 0..k.side() {
                    worst = worst.max((k.at(a, b) / xi - prod.at(a, b)).abs());
                }
            }
            assert!(worst < 1e-12, "p={p}: {worst}");
        }
    }

    #[test]
    fn gamma_invariants() {
        let v = periodize_potential(&PotentialSpec::table(1, 0, &[(vec![0], 0.5), (vec![1], 0.25)]).unwrap(), 4).unwrap();
        let params = InteractionParams::generic(0.5, 0.4, v).unwrap();
        let sol = solve(&params, 2.0, 1e-11, 2, &Exec::new(4)).unwrap();
        let g1 = &sol.gammas[0];
        let t = Torus::new(1, 4).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                let shifted = g1.get(&[t.sub(x, y)], &[0]);
                assert!((g1.get(&[x], &[y]) - shifted).abs() < 1e-12);
            }
        }
        for g in &sol.gammas {
            let m = g.as_matrix();
            assert!((&m - m.transpose()).amax() < 1e-12);
            assert!(m.symmetric_eigen().eigenvalues.min() > -1e-12);
        }
        assert!(sol.partition.z_rel < 1.0);
    }

    #[test]
    fn hard_core_excludes_double_occupancy() {
        let v = periodize_potential(&PotentialSpec::hard_core(1).unwrap(), 3).unwrap();
        let params = InteractionParams::largemass(0.2, 1.0, v).unwrap();
        let kappa = params.kappa_for(None).unwrap();
        let sol = solve(&params, kappa, 1e-12, 2, &seq()).unwrap();
        assert_eq!(sol.partition.n_max, 3);
        assert_eq!(sol.partition.tail_bound, 0.0);
        let g2 = &sol.gammas[1];
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    assert_eq!(g2.get(&[x, x], &[y, z]), 0.0);
                }
            }
        }
    }

    #[test]
    fn sector_parallelism_is_deterministic() {
        let params = InteractionParams::generic(0.5, 0.2, onsite(3, 0.5)).unwrap();
        let a = solve(&params, 1.0, 1e-10, 1, &Exec::new(4)).unwrap();
        let b = solve(&params, 1.0, 1e-10, 1, &seq()).unwrap();
        assert_eq!(a.partition.xi.to_bits(), b.partition.xi.to_bits());
        assert_eq!(a.gammas[0], b.gammas[0]);
    }

    #[test]
    fn gibbs_potential_sign() {
        let params = InteractionParams::generic(0.5, 0.2, onsite(3, 0.5)).unwrap();
        assert!(gibbs_potential(&params, 1.0, 1e-10).unwrap() < 0.0);
        let free = InteractionParams::generic(0.5, 0.2, onsite(3, 0.0)).unwrap();
        assert!(gibbs_potential(&free, 1.0, 1e-10).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gibbs_operator_entrywise_nonnegative() {
        let params = InteractionParams::generic(0.9, 0.6, onsite(3, 0.7)).unwrap();
        for n in 1..=4 {
            let sector = FockSector::new(3, n, false).unwrap();
            let g = gibbs_matrix(&sector_hamiltonian(&sector, &params).unwrap(), 0.0);
            assert!(g.min() > -1e-14);
        }
    }

    #[test]
    fn free_traces_match_brute_force() {
        let z = [0.5, 0.3, 0.2];
        let h = free_sector_traces(&z, 6);
        for (m, hm) in h.iter().enumerate() {
            let mut s = 0.0;
            for a in 0..=m {
                for b in 0..=m - a {
                    s += z[0].powi(a as i32) * z[1].powi(b as i32) * z[2].powi((m - a - b) as i32);
                }
            }
            assert!((hm - s).abs() < 1e-14);
        }
    }

    #[test]
    fn feynman_kac_constant_and_zero_potential() {
        let t = Torus::new(1, 3).unwrap();
        let hk = crate::lattice::HeatKernel::new(&t);
        let e0 = feynman_kac_exact(&t, &[0.0; 3], 0.7).unwrap();
        let ec = feynman_kac_exact(&t, &[0.4; 3], 0.7).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((e0[(y, x)] - hk.value(0.7, t.sub(y, x))).abs() < 1e-12);
                assert!((ec[(y, x)] - e0[(y, x)] * (-0.28f64).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feynman_kac_random_potential() {
        let t = Torus::new(1, 4).unwrap();
        let mut rng = rng_for(11, 0, 0);
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
        let r = feynman_kac_check(&t, &v, 1.0, 40_000, 3, &Exec::new(4)).unwrap();
        assert!(r.max_deviation < 4.5, "{}", r.max_deviation);
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
