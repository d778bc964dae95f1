//! Exact loop–loop interaction functionals for step paths.
//!
//! Grid functionals cut a path of duration `kν` into `k` slices of length
//! `ν` and integrate over the common offset `t ∈ [0, ν)`. Along that offset
//! every slice is a step function, so the integral is a finite sum over the
//! merged jump offsets and carries no discretization error.

use crate::error::{invalid, Result};
use crate::lattice::PeriodicPotential;
use crate::paths::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `λ = ν²`, `κ` fixed.
    MeanField,
    /// Free coupling `λ`.
    Generic,
    /// `λ = 1`, `κ = κ0/ν`; with a hard core the diagonal self term is dropped.
    LargeMass,
}

#[derive(Clone, Debug)]
pub struct InteractionParams {
    pub nu: f64,
    pub lambda: f64,
    pub kappa0: Option<f64>,
    pub mode: Mode,
    pub potential: PeriodicPotential,
}

impl InteractionParams {
    pub fn meanfield(nu: f64, potential: PeriodicPotential) -> Result<Self> {
        Self::build(nu, nu * nu, None, Mode::MeanField, potential)
    }

    pub fn generic(nu: f64, lambda: f64, potential: PeriodicPotential) -> Result<Self> {
        Self::build(nu, lambda, None, Mode::Generic, potential)
    }

    pub fn largemass(nu: f64, kappa0: f64, potential: PeriodicPotential) -> Result<Self> {
        if !(kappa0 > 0.0) {
            return invalid("large-mass mode needs κ0 > 0");
        }
        Self::build(nu, 1.0, Some(kappa0), Mode::LargeMass, potential)
    }

    fn build(nu: f64, lambda: f64, kappa0: Option<f64>, mode: Mode, potential: PeriodicPotential) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return invalid(format!("ν = {nu} must be positive"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("λ = {lambda} must be finite and >= 0"));
        }
        if potential.hard_core() && mode != Mode::LargeMass {
            return invalid("a hard core is only meaningful in large-mass mode");
        }
        Ok(Self { nu, lambda, kappa0, mode, potential })
    }

    /// `κ` of the Bose gas: `κ0/ν` in large-mass mode.
    pub fn kappa_for(&self, kappa: Option<f64>) -> Result<f64> {
        match (self.mode, self.kappa0, kappa) {
            (Mode::LargeMass, Some(k0), _) => Ok(k0 / self.nu),
            (_, _, Some(k)) if k > 0.0 => Ok(k),
            _ => invalid("κ must be positive"),
        }
    }

    /// Same parameters with another potential.
    pub fn with_potential(&self, potential: PeriodicPotential) -> Result<Self> {
        Self::build(self.nu, self.lambda, self.kappa0, self.mode, potential)
    }
}

/// `Σ_{a,b} f_a g_b v(a-b)`, skipping zero weights so that `0·∞` never occurs.
fn bilinear(v: &PeriodicPotential, f: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, fa) in f.iter().enumerate().filter(|p| *p.1 != 0.0) {
        for (b, gb) in g.iter().enumerate().filter(|p| *p.1 != 0.0) {
            s += fa * gb * v.pair(a, b);
        }
    }
    s
}

fn local_times(path: &Path, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    path.add_local_times(&mut t);
    t
}

/// `𝒱^cl(ω, ω̃) = ∫∫ v(ω(t) - ω̃(t̃)) dt dt̃`.
pub fn v_cl_pair(a: &Path, b: &Path, v: &PeriodicPotential) -> f64 {
    let n = v.torus().volume();
    bilinear(v, &local_times(a, n), &local_times(b, n))
}

/// `½⟨f, v f⟩` with `f` the summed local times of the configuration.
pub fn v_total_cl(config: &[Path], v: &PeriodicPotential) -> f64 {
    let n = v.torus().volume();
    let mut f = vec![0.0; n];
    for p in config {
        p.add_local_times(&mut f);
    }
    0.5 * bilinear(v, &f, &f)
}

/// `½ Σ_{i,j} pair(ω_i, ω_j)`, self terms included.
pub fn v_total<F: Fn(&Path, &Path) -> f64>(config: &[Path], pair_fn: F) -> f64 {
    let mut s = 0.0;
    for (i, a) in config.iter().enumerate() {
        s += 0.5 * pair_fn(a, a);
        for b in &config[i + 1..] {
            s += pair_fn(a, b);
        }
    }
    s
}

/// Number of `ν`-slices of a grid path.
pub fn grid_slices(path: &Path, nu: f64) -> Result<usize> {
    let k = (path.duration() / nu).round();
    if k < 1.0 || (path.duration() - k * nu).abs() > 1e-9 * path.duration() {
        return invalid(format!("duration {} is not on the grid νN* with ν = {nu}", path.duration()));
    }
    Ok(k as usize)
}

/// Slice start sites and `(offset, from, to)` moves along `t ∈ (0, ν)`.
fn fold(path: &Path, nu: f64, group: usize, starts: &mut [Vec<i32>], events: &mut Vec<(f64, usize, usize, usize)>) -> Result<()> {
    let k = grid_slices(path, nu)?;
    let mut r = 0usize;
    let mut cur = path.start();
    starts[group][cur] += 1;
    for &(t, s) in path.jumps() {
        let slice = ((t / nu).floor() as usize).min(k - 1);
        while r < slice {
            r += 1;
            starts[group][cur] += 1;
        }
        let off = t - slice as f64 * nu;
        if off <= 0.0 {
            // the jump sits exactly on a slice boundary: it belongs to the start
            starts[group][cur] -= 1;
            starts[group][s] += 1;
        } else {
            events.push((off, group, cur, s));
        }
        cur = s;
    }
    while r + 1 < k {
        r += 1;
        starts[group][cur] += 1;
    }
    Ok(())
}

/// `∫_0^ν Q(N_0(t), N_1(t), …) dt` for grouped slice occupations.
fn sweep<Q>(groups: &[(&Path, usize)], n_groups: usize, nu: f64, n_sites: usize, q: Q) -> Result<f64>
where
    Q: Fn(&[Vec<i32>]) -> f64,
{
    let mut occ = vec![vec![0i32; n_sites]; n_groups];
    let mut events = Vec::new();
    for (p, g) in groups {
        fold(p, nu, *g, &mut occ, &mut events)?;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut t = 0.0;
    let mut i = 0;
    while i <= events.len() {
        let next = if i < events.len() { events[i].0 } else { nu };
        let dt = next - t;
        if dt > 0.0 {
            let val = q(&occ);
            if val == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            total += val * dt;
            t = next;
        }
        if i == events.len() {
            break;
        }
        let (_, g, from, to) = events[i];
        occ[g][from] -= 1;
        occ[g][to] += 1;
        i += 1;
    }
    Ok(total)
}

fn occupancy_form(v: &PeriodicPotential, a: &[i32], b: &[i32]) -> f64 {
    let mut s = 0.0;
    for (x, na) in a.iter().enumerate().filter(|p| *p.1 != 0) {
        for (y, nb) in b.iter().enumerate().filter(|p| *p.1 != 0) {
            s += (*na as f64) * (*nb as f64) * v.pair(x, y);
        }
    }
    s
}

/// `𝒱^{ν,λ}(ω, ω̃) = (λ/ν) Σ_{r, r̃} ∫_0^ν v(ω(rν+t) - ω̃(r̃ν+t)) dt`.
pub fn v_ginibre_pair(a: &Path, b: &Path, params: &InteractionParams) -> Result<f64> {
    if params.lambda == 0.0 {
        grid_slices(a, params.nu)?;
        grid_slices(b, params.nu)?;
        return Ok(0.0);
    }
    let v = &params.potential;
    let n = v.torus().volume();
    let i = sweep(&[(a, 0), (b, 1)], 2, params.nu, n, |occ| occupancy_form(v, &occ[0], &occ[1]))?;
    Ok(params.lambda / params.nu * i)
}

/// `V = ½ Σ_{i,j} 𝒱^{ν,λ}(ω_i, ω_j)` in one sweep over all slices.
pub fn v_total_ginibre(config: &[Path], params: &InteractionParams) -> Result<f64> {
    if config.is_empty() {
        return Ok(0.0);
    }
    let groups: Vec<(&Path, usize)> = config.iter().map(|p| (p, 0)).collect();
    if params.lambda == 0.0 {
        for p in config {
            grid_slices(p, params.nu)?;
        }
        return Ok(0.0);
    }
    let v = &params.potential;
    let n = v.torus().volume();
    let i = sweep(&groups, 1, params.nu, n, |occ| occupancy_form(v, &occ[0], &occ[0]))?;
    Ok(0.5 * params.lambda / params.nu * i)
}

/// Large-mass total `½Σ_{i≠j}𝒱^{ν,1} + ½Σ_i 𝒱̃^{ν,1} + v(0)|T|/(2ν)·1{R=0}`.
///
/// Without a hard core this equals the ordinary total at `λ = 1`. With one,
/// slices never interact with themselves, and two different slices on the
/// same site at the same offset give `+∞`.
pub fn v_total_largemass(config: &[Path], params: &InteractionParams) -> Result<f64> {
    if params.mode != Mode::LargeMass {
        return invalid("v_total_largemass needs large-mass parameters");
    }
    if !params.potential.hard_core() {
        return v_total_ginibre(config, params);
    }
    if config.is_empty() {
        return Ok(0.0);
    }
    let v = &params.potential;
    let n = v.torus().volume();
    let groups: Vec<(&Path, usize)> = config.iter().map(|p| (p, 0)).collect();
    let i = sweep(&groups, 1, params.nu, n, |occ| {
        let o = &occ[0];
        if o.iter().any(|c| *c >= 2) {
            return f64::INFINITY;
        }
        let mut s = 0.0;
        for (x, na) in o.iter().enumerate().filter(|p| *p.1 != 0) {
            for (y, nb) in o.iter().enumerate().filter(|p| *p.1 != 0 && p.0 != x) {
                s += (*na as f64) * (*nb as f64) * v.pair(x, y);
            }
        }
        s
    })?;
    Ok(0.5 / params.nu * i)
}

/// `V̂(ω, ω̃) = T T̃ v(x - x̃)/ν²` for constant loops.
pub fn v_hat(t: f64, x: usize, t2: f64, x2: usize, nu: f64, v: &PeriodicPotential) -> f64 {
    let w = v.pair(x, x2);
    if w == 0.0 {
        0.0
    } else {
        t * t2 * w / (nu * nu)
    }
}

/// Classical large-mass energy `V^lm(k, x)`.
pub fn v_lm(k: &[usize], x: &[usize], v: &PeriodicPotential) -> Result<f64> {
    if k.len() != x.len() || k.iter().any(|&ki| ki == 0) {
        return invalid("v_lm needs positive k and |k| = |x|");
    }
    if v.hard_core() {
        if k.iter().any(|&ki| ki != 1) {
            return Ok(f64::INFINITY);
        }
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i != j {
                    if x[i] == x[j] {
                        return Ok(f64::INFINITY);
                    }
                    s += v.pair(x[i], x[j]);
                }
            }
        }
        return Ok(0.5 * s);
    }
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += (k[i] * k[j]) as f64 * v.pair(x[i], x[j]);
        }
    }
    Ok(0.5 * s)
}

/// `e^{-V}` with `e^{-∞} = 0`.
#[inline]
pub fn boltzmann(v: f64) -> f64 {
    if v == f64::INFINITY {
        0.0
    } else {
        (-v).exp()
    }
}
