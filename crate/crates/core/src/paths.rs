//! Continuous-time random-walk paths, free-walk and loop sampling, and the
//! single-loop intensity measures.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{invalid, Error, Result};
use crate::lattice::{mode_rates, HeatKernel, Torus};
use crate::special::exp_integral_e1;

/// Right-continuous step path `[0, T] → Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    start: usize,
    duration: f64,
    jumps: Vec<(f64, usize)>,
}

impl Path {
    pub fn new(start: usize, duration: f64, jumps: Vec<(f64, usize)>) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return invalid(format!("path duration {duration} must be positive"));
        }
        let mut prev = 0.0;
        for &(t, _) in &jumps {
            if !(t > prev) || t >= duration {
                return invalid(format!("jump time {t} not strictly inside ({prev}, {duration})"));
            }
            prev = t;
        }
        Ok(Self { start, duration, jumps })
    }

    pub fn constant(x: usize, duration: f64) -> Self {
        Self::new(x, duration, Vec::new()).expect("positive duration")
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn jumps(&self) -> &[(f64, usize)] {
        &self.jumps
    }

    pub fn end(&self) -> usize {
        self.jumps.last().map_or(self.start, |j| j.1)
    }

    pub fn is_constant(&self) -> bool {
        self.jumps.is_empty()
    }

    /// Site at time `t` (post-jump value at a jump time).
    pub fn position(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.duration).contains(&t) {
            return invalid(format!("time {t} outside [0, {}]", self.duration));
        }
        Ok(self.position_unchecked(t))
    }

    #[inline]
    pub(crate) fn position_unchecked(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|j| j.0 <= t);
        if k == 0 {
            self.start
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Constant pieces `(t0, t1, site)`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.jumps.len();
        (0..=n).map(move |i| {
            let t0 = if i == 0 { 0.0 } else { self.jumps[i - 1].0 };
            let t1 = if i == n { self.duration } else { self.jumps[i].0 };
            let site = if i == 0 { self.start } else { self.jumps[i - 1].1 };
            (t0, t1, site)
        })
    }

    pub fn local_time(&self, site: usize) -> f64 {
        self.segments().filter(|s| s.2 == site).map(|s| s.1 - s.0).sum()
    }

    /// Adds this path's local times into `out`.
    pub fn add_local_times(&self, out: &mut [f64]) {
        for (t0, t1, s) in self.segments() {
            out[s] += t1 - t0;
        }
    }

    /// True when consecutive sites differ by a signed unit step of `torus`.
    pub fn is_walk_on(&self, torus: &Torus) -> bool {
        let mut cur = self.start;
        for &(_, s) in &self.jumps {
            if s >= torus.volume() || !(0..2 * torus.d()).any(|dir| torus.step(cur, dir) == s) {
                return false;
            }
            cur = s;
        }
        cur < torus.volume() && self.start < torus.volume()
    }

    /// Parses the `x0 T t1:s1 t2:s2 ...` line format.
    pub fn from_line(line: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed path line {line:?}"));
        let mut it = line.split_whitespace();
        let start = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let duration = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let jumps = it
            .map(|tok| {
                let (t, s) = tok.split_once(':').ok_or_else(bad)?;
                Ok((t.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(start, duration, jumps)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.start, self.duration)?;
        for (t, s) in &self.jumps {
            write!(f, " {t}:{s}")?;
        }
        Ok(())
    }
}

/// Walk with generator `Δ/2` from `x` for time `duration`: jumps at total
/// rate `d`, each along one of the `2d` signed steps. Steps that do not move
/// (only on `L = 1`) are not recorded.
pub fn sample_free_walk<R: Rng + ?Sized>(torus: &Torus, x: usize, duration: f64, rng: &mut R) -> Path {
    let d = torus.d();
    let mut jumps = Vec::new();
    if torus.l() > 1 {
        let clock = Exp::new(d as f64).expect("positive rate");
        let mut t = clock.sample(rng);
        let mut cur = x;
        while t < duration {
            let next = torus.step(cur, rng.gen_range(0..2 * d));
            if next != cur && t > 0.0 {
                jumps.push((t, next));
                cur = next;
            }
            t += clock.sample(rng);
        }
    }
    Path { start: x, duration, jumps }
}

/// Law of open-path durations, weighted by `e^{-κT}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpenLaw {
    /// `T ∈ νN*` with weight `e^{-κT}`.
    Grid { nu: f64, kappa: f64 },
    /// `T ∈ (0, ∞)` with density `e^{-κT}`.
    Continuum { kappa: f64 },
}

impl OpenLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OpenLaw::Grid { nu, kappa } if nu > 0.0 && kappa > 0.0 => Ok(()),
            OpenLaw::Continuum { kappa } if kappa > 0.0 => Ok(()),
            _ => invalid(format!("duration law {self:?} is not normalizable (need κ, ν > 0)")),
        }
    }

    /// Total weight `Σ_k e^{-κνk}` or `∫ e^{-κT} dT`.
    pub fn normalization(&self) -> f64 {
        match *self {
            OpenLaw::Grid { nu, kappa } => {
                let q = (-kappa * nu).exp();
                q / (1.0 - q)
            }
            OpenLaw::Continuum { kappa } => 1.0 / kappa,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            OpenLaw::Grid { nu, kappa } => {
                let u: f64 = 1.0 - rng.gen::<f64>();
                let k = 1.0 + (u.ln() / (-kappa * nu)).floor();
                k * nu
            }
            OpenLaw::Continuum { kappa } => Exp::new(kappa).expect("κ > 0").sample(rng),
        }
    }
}

/// One draw of `T ~ law`, a free walk from `x`, and `1{end = y} f(ω)`.
///
/// Returns `(value, normalization)`; the mean of `value · normalization`
/// is `Σ_T e^{-κT} ∫𝕎^T_{y,x}(dω) f(ω)` (or the `dT` integral).
pub fn open_path_weighted_sample<R, F>(
    torus: &Torus,
    x: usize,
    y: usize,
    law: &OpenLaw,
    rng: &mut R,
    f: F,
) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: FnOnce(&Path) -> f64,
{
    law.validate()?;
    let t = law.sample(rng);
    let path = sample_free_walk(torus, x, t, rng);
    let value = if path.end() == y { f(&path) } else { 0.0 };
    Ok((value, law.normalization()))
}

/// Residual tail mass allowed when truncating duration laws (relative).
pub const DURATION_TAIL: f64 = 1e-12;
const BRIDGE_BUDGET: u64 = 1_000_000;
const GRID_RATIO: f64 = 1.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoopKind {
    /// Grid durations `T ∈ νN*`.
    Ginibre { nu: f64, kappa: f64 },
    /// Continuum durations `T >= ε`.
    Symanzik { kappa: f64, eps: f64 },
}

#[derive(Clone, Debug)]
enum DurationTable {
    /// `cdf[k-1] = P(T <= kν)`.
    Grid { nu: f64, cdf: Vec<f64> },
    /// Geometric bins `[edges[i], edges[i+1])` with cumulative masses `cdf[i]`.
    Continuum { edges: Vec<f64>, cdf: Vec<f64> },
}

/// Closed-loop intensity measure `𝕃` on a torus together with its
/// normalized duration law.
#[derive(Clone)]
pub struct LoopIntensity {
    kind: LoopKind,
    torus: Torus,
    hk: Arc<HeatKernel>,
    mass: f64,
    tail: f64,
    table: DurationTable,
    rates: Vec<(f64, f64)>,
}

/// Sample statistics of the bridge rejection step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BridgeStats {
    pub accepted: u64,
    pub attempts: u64,
}

impl LoopIntensity {
    pub fn new(torus: &Torus, kind: LoopKind) -> Result<Self> {
        let hk = Arc::new(HeatKernel::new(torus));
        let volume = torus.volume() as f64;
        // distinct mode rates with multiplicities
        let mut rates: Vec<(f64, f64)> = Vec::new();
        for r in mode_rates(torus) {
            match rates.iter_mut().find(|(q, _)| (q - r).abs() < 1e-13) {
                Some(e) => e.1 += 1.0,
                None => rates.push((r, 1.0)),
            }
        }
        match kind {
            LoopKind::Ginibre { nu, kappa } => {
                if !(nu > 0.0 && kappa > 0.0) {
                    return invalid("Ginibre loops need ν, κ > 0");
                }
                let q = (-kappa * nu).exp();
                let mut weights = Vec::new();
                let mut mass = 0.0;
                let mut k = 1usize;
                let tail = loop {
                    let w = q.powi(k as i32) * hk.at_origin(k as f64 * nu) * volume / k as f64;
                    weights.push(w);
                    mass += w;
                    let bound = volume * q.powi(k as i32 + 1) / ((k + 1) as f64 * (1.0 - q));
                    if bound < DURATION_TAIL * mass {
                        break bound;
                    }
                    k += 1;
                    if k > 50_000_000 {
                        return Err(Error::Budget("Ginibre duration law too long".into()));
                    }
                };
                let mut acc = 0.0;
                let cdf = weights.iter().map(|w| {
                    acc += w;
                    acc / mass
                }).collect();
                Ok(Self { kind, torus: torus.clone(), hk, mass, tail, table: DurationTable::Grid { nu, cdf }, rates })
            }
            LoopKind::Symanzik { kappa, eps } => {
                if !(kappa > 0.0 && eps > 0.0) {
                    return invalid("Symanzik loops need κ, ε > 0");
                }
                let upper = |t: f64| -> f64 {
                    rates.iter().map(|(r, m)| m * exp_integral_e1((kappa + r) * t)).sum()
                };
                let mass = upper(eps);
                let mut edges = vec![eps];
                let mut tails = vec![mass];
                loop {
                    let t = edges.last().unwrap() * GRID_RATIO;
                    let u = upper(t);
                    edges.push(t);
                    tails.push(u);
                    if u < DURATION_TAIL * mass {
                        break;
                    }
                }
                let tail = *tails.last().unwrap();
                let cdf = tails.iter().skip(1).map(|u| (mass - u) / (mass - tail)).collect();
                Ok(Self {
                    kind,
                    torus: torus.clone(),
                    hk,
                    mass,
                    tail,
                    table: DurationTable::Continuum { edges, cdf },
                    rates,
                })
            }
        }
    }

    pub fn kind(&self) -> LoopKind {
        self.kind
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn heat_kernel(&self) -> &HeatKernel {
        &self.hk
    }

    /// Total mass `m(𝕃)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Mass dropped by truncating the duration law.
    pub fn truncated_tail(&self) -> f64 {
        self.tail
    }

    /// Unnormalized duration weight: `e^{-κT}ψ^T(0)|Λ|/T`, times `ν` on the grid.
    pub fn duration_weight(&self, t: f64) -> f64 {
        let volume = self.torus.volume() as f64;
        match self.kind {
            LoopKind::Ginibre { nu, kappa } => nu * (-kappa * t).exp() * self.hk.at_origin(t) * volume / t,
            LoopKind::Symanzik { kappa, .. } => (-kappa * t).exp() * self.hk.at_origin(t) * volume / t,
        }
    }

    /// Grid probabilities `P(T = kν)` for `k = 1..`; `None` for continuum laws.
    pub fn grid_probabilities(&self) -> Option<Vec<f64>> {
        match &self.table {
            DurationTable::Grid { cdf, .. } => {
                let mut prev = 0.0;
                Some(cdf.iter().map(|c| {
                    let p = c - prev;
                    prev = *c;
                    p
                }).collect())
            }
            DurationTable::Continuum { .. } => None,
        }
    }

    /// Exact mass of durations in `[a, b)` (continuum law only).
    pub fn continuum_mass_between(&self, a: f64, b: f64) -> Option<f64> {
        match self.kind {
            LoopKind::Symanzik { kappa, eps } => {
                let a = a.max(eps);
                if b <= a {
                    return Some(0.0);
                }
                let e = |t: f64| -> f64 {
                    if t.is_infinite() {
                        0.0
                    } else {
                        self.rates.iter().map(|(r, m)| m * exp_integral_e1((kappa + r) * t)).sum()
                    }
                };
                Some(e(a) - e(b))
            }
            LoopKind::Ginibre { .. } => None,
        }
    }

    pub fn sample_duration<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.table {
            DurationTable::Grid { nu, cdf } => {
                let u: f64 = rng.gen();
                let k = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                (k + 1) as f64 * nu
            }
            DurationTable::Continuum { edges, cdf } => {
                let u: f64 = rng.gen();
                let i = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                let (a, b) = (edges[i], edges[i + 1]);
                // the density is decreasing, so its value at `a` bounds the bin
                let top = self.duration_weight(a);
                loop {
                    let t = a + (b - a) * rng.gen::<f64>();
                    if rng.gen::<f64>() * top <= self.duration_weight(t) {
                        return t;
                    }
                }
            }
        }
    }

    /// Exact draw from `𝕃 / m(𝕃)` (up to the recorded duration truncation).
    pub fn sample_loop<R: Rng + ?Sized>(&self, rng: &mut R, stats: &mut BridgeStats) -> Result<Path> {
        let t = self.sample_duration(rng);
        let x = rng.gen_range(0..self.torus.volume());
        sample_bridge(&self.torus, x, t, rng, stats)
    }
}

/// Bridge from `x` to `x` of duration `t` by rejection of free walks.
pub fn sample_bridge<R: Rng + ?Sized>(
    torus: &Torus,
    x: usize,
    t: f64,
    rng: &mut R,
    stats: &mut BridgeStats,
) -> Result<Path> {
    for _ in 0..BRIDGE_BUDGET {
        stats.attempts += 1;
        let p = sample_free_walk(torus, x, t, rng);
        if p.end() == x {
            stats.accepted += 1;
            return Ok(p);
        }
    }
    Err(Error::Sampling(format!(
        "bridge rejection budget of {BRIDGE_BUDGET} exceeded at T={t} on L={}",
        torus.l()
    )))
}
