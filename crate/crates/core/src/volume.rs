//! Volume-coupled expansion estimates of `g = log 𝒵/|Λ|` and `Γ₁` over a
//! list of side lengths.
//!
//! Every walk is drawn once on `Z^d` and projected onto each torus of the
//! sweep, so the estimates for different `L` share their randomness and a
//! difference between two volumes only picks up noise from samples whose
//! projections differ. Loops are rooted relative to an anchor by a two-sided
//! geometric displacement and reweighted; a loop counts on `Λ_L` when it
//! closes there and its root lies in the window `[-L/2, L/2)^d`.
//!
//! Both quantities are cluster-expansion truncations at order `n_max`, with
//! the tree-bound majorant of the next order reported alongside.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::cluster::{tree_bound, ursell, vcal_matrix, zeta_matrix, MAX_ORDER};
use crate::error::{invalid, Error, Result};
use crate::interactions::{boltzmann, InteractionParams};
use crate::lattice::{periodize_potential, PotentialSpec, Torus};
use crate::mc::{Exec, Rng, Welford};
use crate::paths::Path;

const G_TAG: u64 = 0x564f_0001;
const GAMMA_TAG: u64 = 0x564f_0002;
/// Ratio of the root displacement law `P(k) ∝ a^{|k|}` per coordinate.
const ROOT_RATIO: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct VolumeSweepSpec {
    pub d: usize,
    /// Increasing side lengths, each at least 3.
    pub ls: Vec<usize>,
    pub nu: f64,
    pub kappa: f64,
    pub potential: PotentialSpec,
    pub n_max: usize,
    /// Side of the centered box on which `Γ₁` is compared.
    pub l0: usize,
}

impl VolumeSweepSpec {
    fn validate(&self) -> Result<()> {
        if self.ls.len() < 2 || self.ls.windows(2).any(|w| w[0] >= w[1]) || self.ls[0] < 3 {
            return invalid("volume sweep needs at least two increasing sides >= 3");
        }
        if self.l0 == 0 || self.l0 > self.ls[0] {
            return invalid(format!("box side {} must lie in 1..={}", self.l0, self.ls[0]));
        }
        if self.n_max == 0 || self.n_max > MAX_ORDER {
            return Err(Error::Budget(format!("truncation order {} not in 1..={MAX_ORDER}", self.n_max)));
        }
        if !(self.nu > 0.0 && self.kappa > 0.0 && self.kappa * self.nu <= 1.0) {
            return invalid("need ν, κ > 0 with κν <= 1");
        }
        if self.potential.d() != self.d {
            return invalid("potential dimension does not match");
        }
        Ok(())
    }
}

struct ZWalk {
    start: Vec<i64>,
    duration: f64,
    jumps: Vec<(f64, Vec<i64>)>,
}

impl ZWalk {
    /// Same law as a torus walk: jumps at total rate `d` along a uniform signed step.
    fn sample(start: Vec<i64>, duration: f64, rng: &mut Rng) -> Self {
        let d = start.len();
        let clock = Exp::new(d as f64).expect("positive rate");
        let mut jumps = Vec::new();
        let mut cur = start.clone();
        let mut t = clock.sample(rng);
        while t < duration {
            let dir = rng.gen_range(0..2 * d);
            cur[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            jumps.push((t, cur.clone()));
            t += clock.sample(rng);
        }
        Self { start, duration, jumps }
    }

    fn end(&self) -> &[i64] {
        self.jumps.last().map(|j| j.1.as_slice()).unwrap_or(&self.start)
    }

    fn closes_mod(&self, l: usize) -> bool {
        self.end().iter().zip(&self.start).all(|(a, b)| (a - b).rem_euclid(l as i64) == 0)
    }

    fn project(&self, torus: &Torus) -> Result<Path> {
        let jumps = self.jumps.iter().map(|(t, x)| (*t, torus.site_of(x))).collect();
        Path::new(torus.site_of(&self.start), self.duration, jumps)
    }
}

fn in_window(x: &[i64], l: usize) -> bool {
    let l = l as i64;
    x.iter().all(|&u| 2 * u >= -l && 2 * u < l)
}

/// `k = g1 - g2` with independent geometric `g_i`, so `P(k) = (1-a)/(1+a)·a^{|k|}`.
fn sample_root(d: usize, rng: &mut Rng) -> (Vec<i64>, f64) {
    let a = ROOT_RATIO;
    let geo = |rng: &mut Rng| ((1.0 - rng.gen::<f64>()).ln() / a.ln()).floor() as i64;
    let mut p = 1.0;
    let x: Vec<i64> = (0..d)
        .map(|_| {
            let k = geo(rng) - geo(rng);
            p *= (1.0 - a) / (1.0 + a) * a.powi(k.unsigned_abs() as i32);
            k
        })
        .collect();
    (x, p)
}

/// Grid duration `T = kν` with `P(k) = (1-r) r^{k-1}`, `r = e^{-κν}`.
fn sample_duration(nu: f64, kappa: f64, rng: &mut Rng) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    (1.0 + (u.ln() / (-kappa * nu)).floor()) * nu
}

struct Volume {
    l: usize,
    torus: Torus,
    params: InteractionParams,
}

struct Ctx {
    d: usize,
    nu: f64,
    kappa: f64,
    n_max: usize,
    volumes: Vec<Volume>,
    /// Displacements `y - x` for `x, y` in the centered `L0` box.
    disp: Vec<Vec<i64>>,
}

impl Ctx {
    fn r(&self) -> f64 {
        (-self.kappa * self.nu).exp()
    }

    /// `Σ_T e^{-κT}`, the weight of one open path.
    fn open_norm(&self) -> f64 {
        self.r() / (1.0 - self.r())
    }

    /// `(ν e^{-κT}/T) / P(T)` for a loop of duration `t`.
    fn loop_weight(&self, t: f64) -> f64 {
        self.nu * self.open_norm() / t
    }

    /// `n` loops: the first rooted at the origin, the rest at reweighted displacements.
    fn draw_loops(&self, n: usize, anchored_first: bool, rng: &mut Rng) -> (Vec<ZWalk>, Vec<f64>, Vec<Vec<i64>>) {
        let mut walks = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut roots = Vec::with_capacity(n);
        for i in 0..n {
            let (root, w) = if i == 0 && anchored_first { (vec![0; self.d], 1.0) } else { sample_root(self.d, rng) };
            let t = sample_duration(self.nu, self.kappa, rng);
            walks.push(ZWalk::sample(root.clone(), t, rng));
            weights.push(self.loop_weight(t) / w);
            roots.push(root);
        }
        (walks, weights, roots)
    }
}

/// Number of leading loops that live on `Λ_L`.
fn valid_prefix(walks: &[ZWalk], roots: &[Vec<i64>], l: usize) -> usize {
    walks.iter().zip(roots).take_while(|(w, r)| w.closes_mod(l) && in_window(r, l)).count()
}

/// Per-site `X - X⁰` truncated at `n_max` and the next-order majorant, for each volume.
fn g_sample(ctx: &Ctx, rng: &mut Rng, out: &mut [f64]) -> Result<()> {
    let n_loops = ctx.n_max + 1;
    let (walks, weights, roots) = ctx.draw_loops(n_loops, true, rng);
    for (vi, vol) in ctx.volumes.iter().enumerate() {
        let k = valid_prefix(&walks, &roots, vol.l);
        if k == 0 {
            continue;
        }
        let paths: Vec<Path> = walks[..k].iter().map(|w| w.project(&vol.torus)).collect::<Result<_>>()?;
        let vcal = vcal_matrix(&paths, &vol.params)?;
        let selfw: Vec<f64> = (0..k).map(|i| boltzmann(0.5 * vcal[(i, i)])).collect();
        let zeta = zeta_matrix(&vcal, 1.0);
        let (mut g, mut rem) = (0.0, 0.0);
        let (mut a, mut w) = (1.0, 1.0);
        for n in 1..=k {
            a *= weights[n - 1];
            w *= selfw[n - 1];
            let z = zeta.view((0, 0), (n, n)).into_owned();
            if n == 1 {
                g += a * (w - 1.0);
            } else if n <= ctx.n_max {
                g += a * w * ursell(&z)?;
            } else {
                rem += a * w * tree_bound(&z)?;
            }
        }
        out[2 * vi] = g;
        out[2 * vi + 1] = rem;
    }
    let nl = ctx.volumes.len();
    for i in 0..nl - 1 {
        out[2 * nl + i] = out[2 * i] - out[2 * (i + 1)];
    }
    Ok(())
}

/// Layout of the `Γ₁` sample vector.
struct GammaLayout {
    nl: usize,
    ne: usize,
}

impl GammaLayout {
    fn value(&self, vi: usize, e: usize) -> usize {
        vi * self.ne + e
    }
    fn remainder(&self, vi: usize, e: usize) -> usize {
        (self.nl + vi) * self.ne + e
    }
    fn diff(&self, i: usize, e: usize) -> usize {
        (2 * self.nl + i) * self.ne + e
    }
    fn dim(&self) -> usize {
        (3 * self.nl - 1) * self.ne
    }
}

/// `Γ₁(0, e)` for every box displacement `e` and volume, truncated at `n_max`.
fn gamma_sample(ctx: &Ctx, lay: &GammaLayout, rng: &mut Rng, out: &mut [f64]) -> Result<()> {
    let t0 = sample_duration(ctx.nu, ctx.kappa, rng);
    let open = ZWalk::sample(vec![0; ctx.d], t0, rng);
    let (walks, weights, roots) = ctx.draw_loops(ctx.n_max, false, rng);
    let norm = ctx.open_norm();
    let mut per_volume = vec![(0.0, 0.0, 0usize); ctx.volumes.len()];
    for (vi, vol) in ctx.volumes.iter().enumerate() {
        let k = valid_prefix(&walks, &roots, vol.l);
        let mut paths = vec![open.project(&vol.torus)?];
        for w in &walks[..k] {
            paths.push(w.project(&vol.torus)?);
        }
        let vcal = vcal_matrix(&paths, &vol.params)?;
        let selfw: Vec<f64> = (0..paths.len()).map(|i| boltzmann(0.5 * vcal[(i, i)])).collect();
        let zeta = zeta_matrix(&vcal, 1.0);
        let (mut x, mut rem) = (1.0, 0.0);
        let (mut a, mut w) = (1.0, 1.0);
        for n in 2..=k + 1 {
            a *= weights[n - 2];
            w *= selfw[n - 1];
            let z = zeta.view((0, 0), (n, n)).into_owned();
            if n <= ctx.n_max {
                x += n as f64 * a * w * ursell(&z)?;
            } else {
                rem += n as f64 * a * w * tree_bound(&z)?;
            }
        }
        per_volume[vi] = (norm * selfw[0] * x, norm * selfw[0] * rem, paths[0].end());
    }
    for (ei, e) in ctx.disp.iter().enumerate() {
        let mut vals = Vec::with_capacity(ctx.volumes.len());
        for (vi, vol) in ctx.volumes.iter().enumerate() {
            let (val, rem, end) = per_volume[vi];
            let hit = vol.torus.site_of(e) == end;
            let v = if hit { val } else { 0.0 };
            out[lay.value(vi, ei)] = v;
            out[lay.remainder(vi, ei)] = if hit { rem } else { 0.0 };
            vals.push(v);
        }
        for i in 0..vals.len() - 1 {
            out[lay.diff(i, ei)] = vals[i] - vals[i + 1];
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub l: usize,
    pub g: f64,
    pub g_err: f64,
    pub g_remainder: f64,
    /// `Γ₁(0, e)` for each displacement in [`VolumeReport::displacements`].
    pub gamma: Vec<f64>,
    pub gamma_err: Vec<f64>,
    pub gamma_remainder: Vec<f64>,
    /// `‖Γ₁‖_{L0,1}`.
    pub gamma_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeStep {
    pub l_from: usize,
    pub l_to: usize,
    pub g_diff: f64,
    pub g_diff_err: f64,
    /// Bounds on `|g^{L} - g^{L'}|` from `3σ` and both truncation majorants.
    pub g_lower: f64,
    pub g_upper: f64,
    pub gamma_diff_norm: f64,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub nu: f64,
    pub kappa: f64,
    pub n_max: usize,
    pub l0: usize,
    pub n_samples: u64,
    pub displacements: Vec<Vec<i64>>,
    pub rows: Vec<VolumeRow>,
    pub steps: Vec<VolumeStep>,
    /// Each step's upper bound lies below the previous step's lower bound.
    pub g_cauchy: bool,
    pub gamma_cauchy: bool,
}

impl VolumeReport {
    pub fn pass(&self) -> bool {
        self.g_cauchy && self.gamma_cauchy
    }
}

/// `sup_x Σ_y f(y - x)` over the centered `L0` box.
fn box_norm(box_coords: &[Vec<i64>], disp: &[Vec<i64>], f: &[f64]) -> f64 {
    box_coords
        .iter()
        .map(|x| {
            box_coords
                .iter()
                .map(|y| {
                    let e: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                    f[disp.iter().position(|d| *d == e).expect("displacement in range")]
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

fn strictly_decreasing(steps: &[(f64, f64)]) -> bool {
    steps.windows(2).all(|w| w[1].1 < w[0].0)
}

pub fn volume_sweep(spec: &VolumeSweepSpec, n_samples: u64, seed: u64, exec: &Exec) -> Result<VolumeReport> {
    spec.validate()?;
    let volumes = spec
        .ls
        .iter()
        .map(|&l| {
            let torus = Torus::new(spec.d, l)?;
            let params = InteractionParams::meanfield(spec.nu, periodize_potential(&spec.potential, l)?)?;
            Ok(Volume { l, torus, params })
        })
        .collect::<Result<Vec<_>>>()?;
    let span = 2 * spec.l0 as i64 - 1;
    let ne = (span as usize).pow(spec.d as u32);
    let disp: Vec<Vec<i64>> = (0..ne)
        .map(|mut i| {
            (0..spec.d)
                .map(|_| {
                    let c = (i % span as usize) as i64 - (spec.l0 as i64 - 1);
                    i /= span as usize;
                    c
                })
                .collect()
        })
        .collect();
    let inner = Torus::new(spec.d, spec.l0)?;
    let box_coords: Vec<Vec<i64>> = (0..inner.volume()).map(|s| inner.centered(s)).collect();
    let ctx = Ctx { d: spec.d, nu: spec.nu, kappa: spec.kappa, n_max: spec.n_max, volumes, disp };
    let nl = ctx.volumes.len();

    let g_acc = exec.run_vec(n_samples, seed, G_TAG, 3 * nl - 1, |rng, out| g_sample(&ctx, rng, out))?;
    let lay = GammaLayout { nl, ne };
    let gm_acc = exec.run_vec(n_samples, seed, GAMMA_TAG, lay.dim(), |rng, out| gamma_sample(&ctx, &lay, rng, out))?;

    let stat = |w: &Welford| (w.mean, w.std_error());
    let rows: Vec<VolumeRow> = (0..nl)
        .map(|vi| {
            let (g, g_err) = stat(&g_acc[2 * vi]);
            let gamma: Vec<f64> = (0..ne).map(|e| gm_acc[lay.value(vi, e)].mean).collect();
            VolumeRow {
                l: ctx.volumes[vi].l,
                g,
                g_err,
                g_remainder: g_acc[2 * vi + 1].mean,
                gamma_norm: box_norm(&box_coords, &ctx.disp, &gamma.iter().map(|v| v.abs()).collect::<Vec<_>>()),
                gamma,
                gamma_err: (0..ne).map(|e| gm_acc[lay.value(vi, e)].std_error()).collect(),
                gamma_remainder: (0..ne).map(|e| gm_acc[lay.remainder(vi, e)].mean).collect(),
            }
        })
        .collect();
    let steps: Vec<VolumeStep> = (0..nl - 1)
        .map(|i| {
            let (gd, gd_err) = stat(&g_acc[2 * nl + i]);
            let g_slack = rows[i].g_remainder.abs() + rows[i + 1].g_remainder.abs();
            let mut lo = vec![0.0; ne];
            let mut hi = vec![0.0; ne];
            let mut mid = vec![0.0; ne];
            for e in 0..ne {
                let (m, s) = stat(&gm_acc[lay.diff(i, e)]);
                let slack = rows[i].gamma_remainder[e].abs() + rows[i + 1].gamma_remainder[e].abs();
                mid[e] = m.abs();
                lo[e] = (m.abs() - 3.0 * s - slack).max(0.0);
                hi[e] = m.abs() + 3.0 * s + slack;
            }
            VolumeStep {
                l_from: rows[i].l,
                l_to: rows[i + 1].l,
                g_diff: gd,
                g_diff_err: gd_err,
                g_lower: (gd.abs() - 3.0 * gd_err - g_slack).max(0.0),
                g_upper: gd.abs() + 3.0 * gd_err + g_slack,
                gamma_diff_norm: box_norm(&box_coords, &ctx.disp, &mid),
                gamma_lower: box_norm(&box_coords, &ctx.disp, &lo),
                gamma_upper: box_norm(&box_coords, &ctx.disp, &hi),
            }
        })
        .collect();
    let g_cauchy = strictly_decreasing(&steps.iter().map(|s| (s.g_lower, s.g_upper)).collect::<Vec<_>>());
    let gamma_cauchy = strictly_decreasing(&steps.iter().map(|s| (s.gamma_lower, s.gamma_upper)).collect::<Vec<_>>());
    Ok(VolumeReport {
        nu: spec.nu,
        kappa: spec.kappa,
        n_max: spec.n_max,
        l0: spec.l0,
        n_samples,
        displacements: ctx.disp,
        rows,
        steps,
        g_cauchy,
        gamma_cauchy,
    })
}
