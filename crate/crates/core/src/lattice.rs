//! Periodic lattice geometry, the discrete Laplacian, heat kernels and
//! interaction potentials.
//!
//! Sites of `Λ_L = [-L/2, L/2)^d` are indexed by `Σ_j u_j L^j` with
//! `u_j ∈ {0, …, L-1}`; [`Torus::centered`] recovers the representative in
//! the centered cube. Steps wrap around, so for `L = 2` both signed steps
//! reach the same neighbour (doubled edge weight) and for `L = 1` every
//! step is a self-loop and `Δ = 0`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::special::scaled_bessel_i;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Torus {
    d: usize,
    l: usize,
    volume: usize,
}

impl Torus {
    pub fn new(d: usize, l: usize) -> Result<Self> {
        if d == 0 || l == 0 {
            return invalid(format!("torus needs d, L >= 1 (got d={d}, L={l})"));
        }
        let volume = l
            .checked_pow(d as u32)
            .filter(|v| *v <= 1 << 24)
            .ok_or_else(|| Error::Validation(format!("torus {l}^{d} too large")))?;
        Ok(Self { d, l, volume })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of sites `L^d`.
    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.d);
        let mut s = site;
        for _ in 0..self.d {
            c.push(s % self.l);
            s /= self.l;
        }
        c
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &u| acc * self.l + u % self.l)
    }

    /// Site of an arbitrary integer vector, reduced mod `L`.
    pub fn site_of(&self, x: &[i64]) -> usize {
        let l = self.l as i64;
        x.iter().rev().fold(0, |acc, &u| acc * self.l + u.rem_euclid(l) as usize)
    }

    /// Representative of `site` in `[-L/2, L/2)^d`.
    pub fn centered(&self, site: usize) -> Vec<i64> {
        self.coords(site)
            .into_iter()
            .map(|u| if 2 * u < self.l { u as i64 } else { u as i64 - self.l as i64 })
            .collect()
    }

    /// Neighbour reached by signed step `dir ∈ 0..2d` (`2j` is `+e_j`, `2j+1` is `-e_j`).
    #[inline]
    pub fn step(&self, site: usize, dir: usize) -> usize {
        let j = dir / 2;
        let stride = self.l.pow(j as u32);
        let u = (site / stride) % self.l;
        let nu = if dir % 2 == 0 { (u + 1) % self.l } else { (u + self.l - 1) % self.l };
        site - u * stride + nu * stride
    }

    /// Site of `a - b`.
    pub fn sub(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.d {
            let (ua, ub) = (a % self.l, b % self.l);
            out += ((ua + self.l - ub) % self.l) * stride;
            a /= self.l;
            b /= self.l;
            stride *= self.l;
        }
        out
    }

    /// Site of `a + b`.
    pub fn add(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.d {
            out += ((a % self.l + b % self.l) % self.l) * stride;
            a /= self.l;
            b /= self.l;
            stride *= self.l;
        }
        out
    }

    /// Periodic Euclidean norm `|x|_L`.
    pub fn norm(&self, site: usize) -> f64 {
        self.coords(site)
            .into_iter()
            .map(|u| {
                let m = u.min(self.l - u) as f64;
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Sites of the centered sub-box `Λ_{L0}` embedded in this torus.
    pub fn sub_box(&self, l0: usize) -> Result<Vec<usize>> {
        if l0 == 0 || l0 > self.l {
            return invalid(format!("sub-box side {l0} not in 1..={}", self.l));
        }
        let inner = Torus::new(self.d, l0)?;
        Ok((0..inner.volume()).map(|s| self.site_of(&inner.centered(s))).collect())
    }
}

/// Matrix of `Δ`, `(Δf)(x) = Σ_e (f(x+e) - f(x))` over the `2d` signed steps.
pub fn laplacian_matrix(torus: &Torus) -> DMatrix<f64> {
    let n = torus.volume();
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        for dir in 0..2 * torus.d() {
            let y = torus.step(x, dir);
            m[(x, y)] += 1.0;
            m[(x, x)] -= 1.0;
        }
    }
    m
}

/// Rates `λ_ξ = Σ_j (1 - cos ξ_j)` of all Fourier modes, so that `Δ/2` has eigenvalues `-λ_ξ`.
pub fn mode_rates(torus: &Torus) -> Vec<f64> {
    let one_d: Vec<f64> = (0..torus.l())
        .map(|k| 1.0 - (2.0 * PI * k as f64 / torus.l() as f64).cos())
        .collect();
    (0..torus.volume())
        .map(|s| torus.coords(s).into_iter().map(|k| one_d[k]).sum())
        .collect()
}

/// Spectral heat kernel `ψ^{L,t}` of the walk with generator `Δ/2`.
///
/// The Fourier sum factorizes over coordinates, so tables are built from
/// one-dimensional kernels. Tables are memoized per `t`.
pub struct HeatKernel {
    torus: Torus,
    one_d_rates: Vec<f64>,
    cache: RwLock<HashMap<u64, Arc<Vec<f64>>>>,
}

impl HeatKernel {
    pub fn new(torus: &Torus) -> Self {
        let l = torus.l();
        let one_d_rates = (0..l).map(|k| 1.0 - (2.0 * PI * k as f64 / l as f64).cos()).collect();
        Self { torus: torus.clone(), one_d_rates, cache: RwLock::new(HashMap::new()) }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    fn one_d(&self, t: f64) -> Vec<f64> {
        let l = self.torus.l();
        (0..l)
            .map(|u| {
                let s: f64 = self
                    .one_d_rates
                    .iter()
                    .enumerate()
                    .map(|(k, r)| (-t * r).exp() * (2.0 * PI * (k * u) as f64 / l as f64).cos())
                    .sum();
                (s / l as f64).max(0.0)
            })
            .collect()
    }

    /// Full table `x ↦ ψ^{L,t}(x)`.
    pub fn table(&self, t: f64) -> Arc<Vec<f64>> {
        assert!(t >= 0.0, "heat kernel needs t >= 0");
        let key = t.to_bits();
        if let Some(tab) = self.cache.read().unwrap().get(&key) {
            return tab.clone();
        }
        let g = self.one_d(t);
        let tab: Vec<f64> = (0..self.torus.volume())
            .map(|s| self.torus.coords(s).into_iter().map(|u| g[u]).product())
            .collect();
        let tab = Arc::new(tab);
        self.cache.write().unwrap().insert(key, tab.clone());
        tab
    }

    pub fn value(&self, t: f64, x: usize) -> f64 {
        self.table(t)[x]
    }

    /// `ψ^{L,t}(0)` without touching the cache.
    pub fn at_origin(&self, t: f64) -> f64 {
        let l = self.torus.l() as f64;
        let g: f64 = self.one_d_rates.iter().map(|r| (-t * r).exp()).sum::<f64>() / l;
        g.powi(self.torus.d() as i32)
    }
}

/// Torus convolution `(f * g)(x) = Σ_y f(y) g(x - y)`.
pub fn convolve(torus: &Torus, f: &[f64], g: &[f64]) -> Vec<f64> {
    let n = torus.volume();
    (0..n)
        .map(|x| (0..n).map(|y| f[y] * g[torus.sub(x, y)]).sum())
        .collect()
}

/// `ψ^{∞,t}(x)` on `Z^d` by adaptive quadrature of the Fourier integral.
pub fn heat_kernel_infinite(d: usize, t: f64, x: &[i64], tail_tol: f64) -> Result<f64> {
    if t < 0.0 || tail_tol <= 0.0 || x.len() != d {
        return invalid("heat_kernel_infinite needs t >= 0, tol > 0 and x of length d");
    }
    let tol = tail_tol / d as f64;
    let mut prod = 1.0;
    for &xj in x {
        let xj = xj as f64;
        let factor = quad::integrate(
            |xi: f64| (-t * (1.0 - xi.cos())).exp() * (xi * xj).cos(),
            0.0,
            PI,
            tol * PI,
        )? / PI;
        prod *= factor;
    }
    Ok(prod)
}

/// `ψ^{∞,t}(x) = Π_j e^{-t} I_{x_j}(t)`.
pub fn heat_kernel_infinite_bessel(t: f64, x: &[i64]) -> f64 {
    x.iter().map(|&xj| scaled_bessel_i(xj.unsigned_abs(), t)).product()
}

/// Heat-kernel identities on one `(d, L, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelReport {
    pub d: usize,
    pub l: usize,
    pub t: f64,
    pub min: f64,
    pub max: f64,
    pub normalization_error: f64,
    /// `max |ψ^s * ψ^t - ψ^{s+t}|` with `s = 0.5`.
    pub semigroup_error: f64,
    /// `max |Σ_k ψ^∞(x + Lk) - ψ^L(x)|` with `ψ^∞` from Bessel functions.
    pub bessel_error: f64,
    /// Same with `ψ^∞` from quadrature.
    pub quadrature_error: f64,
    pub pass: bool,
}

/// Range, normalization (1e-12), semigroup (1e-10) and periodization of both
/// infinite-volume routes (1e-8).
pub fn heat_kernel_suite(d: usize, l: usize, t: f64) -> Result<HeatKernelReport> {
    if !(t >= 0.0) || !t.is_finite() {
        return invalid("t must be finite and >= 0");
    }
    let torus = Torus::new(d, l)?;
    let hk = HeatKernel::new(&torus);
    let tab = hk.table(t);
    let min = tab.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = tab.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let normalization_error = (tab.iter().sum::<f64>() - 1.0).abs();
    let s = 0.5;
    let conv = convolve(&torus, &hk.table(s), &tab);
    let semigroup_error = conv.iter().zip(hk.table(s + t).iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // ψ^∞ factorizes over coordinates, so the image sum does too
    let images = ((t + 40.0) / l as f64).ceil() as i64 + 1;
    let li = l as i64;
    let mut bessel_1d = Vec::with_capacity(l);
    let mut quad_1d = Vec::with_capacity(l);
    for u in 0..li {
        let (mut b, mut q) = (0.0, 0.0);
        for k in -images..=images {
            b += heat_kernel_infinite_bessel(t, &[u + li * k]);
            q += heat_kernel_infinite(1, t, &[u + li * k], 1e-14)?;
        }
        bessel_1d.push(b);
        quad_1d.push(q);
    }
    let (mut bessel_error, mut quadrature_error) = (0.0f64, 0.0f64);
    for (x, v) in tab.iter().enumerate() {
        let c = torus.coords(x);
        let b: f64 = c.iter().map(|&u| bessel_1d[u]).product();
        let q: f64 = c.iter().map(|&u| quad_1d[u]).product();
        bessel_error = bessel_error.max((b - v).abs());
        quadrature_error = quadrature_error.max((q - v).abs());
    }
    let pass = min >= 0.0
        && max <= 1.0
        && normalization_error <= 1e-12
        && semigroup_error <= 1e-10
        && bessel_error <= 1e-8
        && quadrature_error <= 1e-8;
    Ok(HeatKernelReport { d, l, t, min, max, normalization_error, semigroup_error, bessel_error, quadrature_error, pass })
}

/// How the finite part of a potential is described on `Z^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Finitely supported table, symmetric under `x ↦ -x`.
    Table(BTreeMap<Vec<i64>, f64>),
    /// `amplitude · e^{-rate |x|_1}`.
    Exponential { amplitude: f64, rate: f64 },
}

/// Pair potential `v` on `Z^d` with hard-core radius `R ∈ {0, 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    d: usize,
    r: u8,
    shape: Shape,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialFile {
    d: usize,
    #[serde(rename = "R")]
    r: u8,
    #[serde(default)]
    entries: Vec<(Vec<i64>, f64)>,
    #[serde(default)]
    exponential: Option<ExpFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpFile {
    amplitude: f64,
    rate: f64,
}

impl PotentialSpec {
    /// Builds a table potential; the mirror image of each entry is added when missing.
    pub fn table(d: usize, r: u8, entries: &[(Vec<i64>, f64)]) -> Result<Self> {
        if d == 0 || r > 1 {
            return invalid(format!("potential needs d >= 1 and R in {{0,1}} (got d={d}, R={r})"));
        }
        let mut given = BTreeMap::new();
        for (x, w) in entries {
            if x.len() != d {
                return invalid(format!("entry {x:?} has wrong dimension"));
            }
            if !w.is_finite() || *w < 0.0 {
                return invalid(format!("entry {x:?} has value {w}; need finite and >= 0"));
            }
            if r == 1 && x.iter().all(|&u| u == 0) {
                return invalid("hard-core potential cannot carry a finite value at the origin");
            }
            if given.insert(x.clone(), *w).is_some() {
                return invalid(format!("duplicate site {x:?}"));
            }
        }
        let mut table = given.clone();
        for (x, w) in &given {
            let m: Vec<i64> = x.iter().map(|u| -u).collect();
            match given.get(&m) {
                Some(w2) if w2 != w => {
                    return invalid(format!("v({x:?}) = {w} but v({m:?}) = {w2}"));
                }
                _ => {
                    table.insert(m, *w);
                }
            }
        }
        table.retain(|_, w| *w != 0.0);
        Ok(Self { d, r, shape: Shape::Table(table) })
    }

    /// `v = w δ_0`.
    pub fn on_site(d: usize, w: f64) -> Result<Self> {
        Self::table(d, 0, &[(vec![0; d], w)])
    }

    /// Pure hard core: `v(0) = ∞`, zero elsewhere.
    pub fn hard_core(d: usize) -> Result<Self> {
        Self::table(d, 1, &[])
    }

    pub fn exponential(d: usize, r: u8, amplitude: f64, rate: f64) -> Result<Self> {
        if d == 0 || r > 1 || !(amplitude >= 0.0) || !(rate > 0.0) || !amplitude.is_finite() {
            return invalid("exponential potential needs amplitude >= 0 and rate > 0");
        }
        Ok(Self { d, r, shape: Shape::Exponential { amplitude, rate } })
    }

    /// Parses `{"d", "R", "entries": [[x, v], ...]}`, optionally with
    /// `"exponential": {"amplitude", "rate"}` instead of entries.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: PotentialFile = serde_json::from_str(s)
            .map_err(|e| Error::Validation(format!("potential file: {e}")))?;
        match f.exponential {
            Some(e) if f.entries.is_empty() => Self::exponential(f.d, f.r, e.amplitude, e.rate),
            Some(_) => invalid("potential file has both entries and exponential"),
            None => Self::table(f.d, f.r, &f.entries),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Hard-core radius.
    pub fn r(&self) -> u8 {
        self.r
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// `v(x)` on `Z^d`, `+∞` inside the hard core.
    pub fn value(&self, x: &[i64]) -> f64 {
        if self.r == 1 && x.iter().all(|&u| u == 0) {
            return f64::INFINITY;
        }
        self.finite_value(x)
    }

    /// `ṽ(x) = v(x) 1{|x| >= R}`.
    pub fn finite_value(&self, x: &[i64]) -> f64 {
        if self.r == 1 && x.iter().all(|&u| u == 0) {
            return 0.0;
        }
        match &self.shape {
            Shape::Table(t) => t.get(x).copied().unwrap_or(0.0),
            Shape::Exponential { amplitude, rate } => {
                amplitude * (-rate * x.iter().map(|u| u.abs() as f64).sum::<f64>()).exp()
            }
        }
    }

    /// `‖ṽ‖_{ℓ¹(Z^d)}`.
    pub fn l1_norm(&self) -> f64 {
        match &self.shape {
            Shape::Table(t) => t.values().sum(),
            Shape::Exponential { amplitude, rate } => {
                let q = (-rate).exp();
                let full = amplitude * ((1.0 + q) / (1.0 - q)).powi(self.d as i32);
                if self.r == 1 {
                    full - amplitude
                } else {
                    full
                }
            }
        }
    }

    /// Scales the finite part by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return invalid("scale must be finite and >= 0");
        }
        let shape = match &self.shape {
            Shape::Table(t) => {
                let mut t: BTreeMap<_, _> = t.iter().map(|(k, v)| (k.clone(), v * c)).collect();
                t.retain(|_, w| *w != 0.0);
                Shape::Table(t)
            }
            Shape::Exponential { amplitude, rate } => {
                Shape::Exponential { amplitude: amplitude * c, rate: *rate }
            }
        };
        Ok(Self { d: self.d, r: self.r, shape })
    }

    /// True when the finite part vanishes identically.
    pub fn is_zero(&self) -> bool {
        match &self.shape {
            Shape::Table(t) => t.is_empty(),
            Shape::Exponential { amplitude, .. } => *amplitude == 0.0,
        }
    }
}

/// Absolute per-site truncation threshold for image sums.
pub const POTENTIAL_TAIL: f64 = 1e-14;

/// Periodized potential `v^L` on a torus, with `+∞` at the origin for a hard core.
#[derive(Clone, Debug)]
pub struct PeriodicPotential {
    torus: Torus,
    values: Vec<f64>,
    hard_core: bool,
    pair: Vec<f64>,
}

impl PeriodicPotential {
    pub fn from_values(torus: &Torus, values: Vec<f64>, hard_core: bool) -> Result<Self> {
        let n = torus.volume();
        if values.len() != n {
            return invalid("potential table has wrong length");
        }
        for (x, w) in values.iter().enumerate() {
            let ok = if x == 0 && hard_core { *w == f64::INFINITY } else { w.is_finite() && *w >= 0.0 };
            if !ok {
                return invalid(format!("v^L({x}) = {w} is not admissible"));
            }
            let mx = torus.sub(0, x);
            if (values[mx] - w).abs() > 1e-12 * w.abs().max(1.0) && w.is_finite() {
                return invalid(format!("v^L is not even at site {x}"));
            }
        }
        let mut pair = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                pair[a * n + b] = values[torus.sub(a, b)];
            }
        }
        Ok(Self { torus: torus.clone(), values, hard_core, pair })
    }

    /// `v^L(x)` for a difference site `x`.
    #[inline]
    pub fn at(&self, x: usize) -> f64 {
        self.values[x]
    }

    /// `v^L(a - b)`.
    #[inline]
    pub fn pair(&self, a: usize, b: usize) -> f64 {
        self.pair[a * self.torus.volume() + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn hard_core(&self) -> bool {
        self.hard_core
    }

    /// Table of the finite part (hard core replaced by 0).
    pub fn finite_part(&self) -> Vec<f64> {
        self.values.iter().map(|w| if w.is_finite() { *w } else { 0.0 }).collect()
    }

    /// `‖ṽ^L‖_{ℓ¹(Λ_L)}`.
    pub fn l1_norm(&self) -> f64 {
        self.finite_part().iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|w| *w == 0.0)
    }

    /// Same table multiplied by `c` (the hard core stays infinite).
    pub fn scaled(&self, c: f64) -> Self {
        let values = self
            .values
            .iter()
            .map(|w| if w.is_finite() { w * c } else { *w })
            .collect();
        Self::from_values(&self.torus, values, self.hard_core).expect("scaling keeps validity")
    }

    /// Largest finite entry.
    pub fn max_finite(&self) -> f64 {
        self.finite_part().into_iter().fold(0.0, f64::max)
    }
}

/// `v^L(x) = Σ_{k ∈ (LZ)^d} v(x + k)`.
pub fn periodize_potential(spec: &PotentialSpec, l: usize) -> Result<PeriodicPotential> {
    let torus = Torus::new(spec.d, l)?;
    let n = torus.volume();
    let mut values = vec![0.0; n];
    match &spec.shape {
        Shape::Table(t) => {
            for (x, w) in t {
                values[torus.site_of(x)] += w;
            }
        }
        Shape::Exponential { amplitude, rate } => {
            if *amplitude > 0.0 {
                // The image sum factorizes over coordinates for the ℓ¹ decay.
                let lf = l as f64;
                let q = (-rate * lf).exp();
                let factor_max = 1.0 / (1.0 - q) + q / (1.0 - q);
                let mut m_max = 0i64;
                loop {
                    let tail = 2.0 * (-rate * lf * m_max as f64).exp() / (1.0 - q);
                    let bound = amplitude * spec.d as f64 * tail * factor_max.powi(spec.d as i32 - 1);
                    if bound < POTENTIAL_TAIL || m_max > 100_000 {
                        break;
                    }
                    m_max += 1;
                }
                let one_d: Vec<f64> = (0..l as i64)
                    .map(|u| {
                        (-m_max..=m_max)
                            .map(|m| (-rate * (u + m * l as i64).abs() as f64).exp())
                            .sum()
                    })
                    .collect();
                for (s, v) in values.iter_mut().enumerate() {
                    *v = amplitude * torus.coords(s).into_iter().map(|u| one_d[u]).product::<f64>();
                }
                if spec.r == 1 {
                    // only the residue class of 0 contains the origin
                    values[0] -= amplitude;
                }
            }
        }
    }
    let hard_core = spec.r == 1;
    if hard_core {
        values[0] = f64::INFINITY;
    }
    PeriodicPotential::from_values(&torus, values, hard_core)
}

/// Smallest real part of the discrete Fourier transform of `v^L`; positive type iff `>= -1e-10`.
pub fn check_positive_type(v: &PeriodicPotential) -> Result<(bool, f64)> {
    if v.hard_core() {
        return invalid("positive type is undefined for a hard-core potential");
    }
    let torus = v.torus();
    let n = torus.volume();
    let l = torus.l() as f64;
    let coords: Vec<Vec<usize>> = (0..n).map(|s| torus.coords(s)).collect();
    let mut min = f64::INFINITY;
    for xi in &coords {
        let mut re = 0.0;
        for (x, cx) in coords.iter().enumerate() {
            let phase: f64 = xi.iter().zip(cx).map(|(k, u)| (k * u) as f64).sum::<f64>() * 2.0 * PI / l;
            re += v.at(x) * phase.cos();
        }
        min = min.min(re);
    }
    Ok((min >= -1e-10, min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplacian_rows() {
        let t = Torus::new(1, 4).unwrap();
        let m = laplacian_matrix(&t);
        assert_eq!((m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]), (-2.0, 1.0, 0.0, 1.0));
        let one = laplacian_matrix(&Torus::new(1, 1).unwrap());
        assert_eq!(one[(0, 0)], 0.0);
        let two = laplacian_matrix(&Torus::new(1, 2).unwrap());
        assert_eq!((two[(0, 0)], two[(0, 1)]), (-2.0, 2.0));
    }

    #[test]
    fn laplacian_spectrum_matches_cosines() {
        let t = Torus::new(1, 8).unwrap();
        let m = laplacian_matrix(&t);
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> =
            (0..8).map(|k| 2.0 * ((2.0 * PI * k as f64 / 8.0).cos() - 1.0)).collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rates: Vec<f64> = mode_rates(&t).iter().map(|r| -2.0 * r).collect();
        rates.sort_by(f64::total_cmp);
        for (a, b) in rates.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_kernel_examples() {
        let hk = HeatKernel::new(&Torus::new(1, 5).unwrap());
        let t0 = hk.table(0.0);
        assert!((t0[0] - 1.0).abs() < 1e-15 && t0[1..].iter().all(|v| v.abs() < 1e-15));
        assert!((hk.table(1.3).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((hk.value(0.01, 0) - 1.0).abs() <= 0.011);
        assert!((hk.at_origin(0.7) - hk.value(0.7, 0)).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_matches_matrix_exponential() {
        let t = Torus::new(2, 3).unwrap();
        let eig = laplacian_matrix(&t).symmetric_eigen();
        let s = 0.8;
        let d = eig.eigenvalues.map(|e| (0.5 * s * e).exp());
        let k = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
        let hk = HeatKernel::new(&t);
        for y in 0..t.volume() {
            assert!((k[(y, 0)] - hk.value(s, y)).abs() < 1e-13);
        }
    }

    #[test]
    fn infinite_kernel_routes_agree() {
        let q = heat_kernel_infinite(1, 1.0, &[0], 1e-13).unwrap();
        assert!((q - 0.465_759_607_593_640_6).abs() < 1e-12);
        assert!((heat_kernel_infinite_bessel(1.0, &[0]) - q).abs() < 1e-12);
        assert!((heat_kernel_infinite(2, 0.0, &[0, 0], 1e-12).unwrap() - 1.0).abs() < 1e-12);
        for x in [[0, 0], [1, 2], [3, -1], [6, 0]] {
            let a = heat_kernel_infinite(2, 2.5, &x, 1e-13).unwrap();
            let b = heat_kernel_infinite_bessel(2.5, &x);
            assert!((a - b).abs() < 1e-12, "{x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn periodization_of_infinite_kernel() {
        let t = Torus::new(1, 5).unwrap();
        let hk = HeatKernel::new(&t);
        for x in 0..5i64 {
            let s: f64 = (-6..=6).map(|k| heat_kernel_infinite_bessel(2.0, &[x + 5 * k])).sum();
            assert!((s - hk.value(2.0, x as usize)).abs() < 1e-8);
        }
    }

    #[test]
    fn heat_kernel_suite_grid() {
        for d in [1, 2] {
            for l in [3, 5] {
                for t in [0.1, 1.0, 3.0] {
                    let r = heat_kernel_suite(d, l, t).unwrap();
                    assert!(r.pass, "{r:?}");
                }
            }
        }
        assert!(heat_kernel_suite(1, 3, -1.0).is_err());
    }

    #[test]
    fn exponential_decay_witness() {
        let t = Torus::new(1, 20).unwrap();
        let hk = HeatKernel::new(&t);
        for &s in &[0.5, 1.0, 2.0] {
            let tab = hk.table(s);
            for x in 3..10 {
                let drop = tab[x].ln() - tab[x + 1].ln();
                assert!(drop > 0.5, "t={s}, x={x}: log-drop {drop}");
            }
        }
    }

    #[test]
    fn potential_periodization() {
        let on = PotentialSpec::on_site(2, 0.7).unwrap();
        let p = periodize_potential(&on, 1).unwrap();
        assert_eq!(p.values(), &[0.7]);
        let e = PotentialSpec::exponential(1, 0, 1.0, 1.0).unwrap();
        let p = periodize_potential(&e, 3).unwrap();
        let q = (-3f64).exp();
        assert!((p.at(0) - (1.0 + 2.0 * q / (1.0 - q))).abs() < 1e-14);
        assert!((p.l1_norm() - e.l1_norm()).abs() < 1e-12);
        let e2 = PotentialSpec::exponential(2, 0, 0.4, 0.7).unwrap();
        let p2 = periodize_potential(&e2, 4).unwrap();
        assert!((p2.l1_norm() - e2.l1_norm()).abs() < 1e-12);
        // a hard core only replaces the residue class of the origin
        let h2 = periodize_potential(&PotentialSpec::exponential(2, 1, 0.4, 0.7).unwrap(), 4).unwrap();
        assert!(h2.at(0).is_infinite());
        assert_eq!(&h2.values()[1..], &p2.values()[1..]);
    }

    #[test]
    fn potential_json() {
        let p = PotentialSpec::from_json_str(r#"{"d":1,"R":0,"entries":[[[1],0.5],[[0],2.0]]}"#)
            .unwrap();
        assert_eq!(p.value(&[-1]), 0.5);
        assert!(PotentialSpec::from_json_str(r#"{"d":1,"R":0,"entries":[[[1],0.5],[[1],0.5]]}"#)
            .is_err());
        assert!(PotentialSpec::from_json_str(r#"{"d":1,"R":0,"entries":[[[1],0.5],[[-1],0.2]]}"#)
            .is_err());
        assert!(PotentialSpec::from_json_str(r#"{"d":1,"R":1,"entries":[[[0],1.0]]}"#).is_err());
        assert!(PotentialSpec::from_json_str(r#"{"d":1,"R":0,"entries":[[[1],-1.0]]}"#).is_err());
        let hc = PotentialSpec::from_json_str(r#"{"d":1,"R":1}"#).unwrap();
        assert!(hc.value(&[0]).is_infinite());
    }

    #[test]
    fn positive_type_examples() {
        let t = Torus::new(1, 6).unwrap();
        let delta = periodize_potential(&PotentialSpec::on_site(1, 1.0).unwrap(), 6).unwrap();
        assert!(check_positive_type(&delta).unwrap().0);
        let nn = PotentialSpec::table(1, 0, &[(vec![1], 1.0)]).unwrap();
        let (ok, min) = check_positive_type(&periodize_potential(&nn, 6).unwrap()).unwrap();
        assert!(!ok && (min + 2.0).abs() < 1e-12);
        let bump = PotentialSpec::table(1, 0, &[(vec![0], 2.0), (vec![1], 1.0)]).unwrap();
        assert!(check_positive_type(&periodize_potential(&bump, 6).unwrap()).unwrap().0);
        let hc = periodize_potential(&PotentialSpec::hard_core(1).unwrap(), 6).unwrap();
        assert!(check_positive_type(&hc).is_err());
        assert_eq!(t.volume(), 6);
    }

    #[test]
    fn geometry() {
        let t = Torus::new(2, 4).unwrap();
        assert_eq!(t.centered(t.site(&[2, 3])), vec![-2, -1]);
        assert_eq!(t.sub_box(2).unwrap().len(), 4);
        assert!((t.norm(t.site(&[3, 2])) - 5f64.sqrt()).abs() < 1e-15);
        let t3 = Torus::new(1, 3).unwrap();
        assert_eq!(t3.sub_box(3).unwrap(), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn kernel_range_normalization_semigroup(
            d in 1usize..3, l in 1usize..7, s in 0.0f64..4.0, t in 0.0f64..4.0
        ) {
            let torus = Torus::new(d, l).unwrap();
            let hk = HeatKernel::new(&torus);
            let a = hk.table(s);
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let c = convolve(&torus, &a, &hk.table(t));
            let st = hk.table(s + t);
            for (u, v) in c.iter().zip(st.iter()) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }

        #[test]
        fn step_and_sub_are_consistent(l in 1usize..6, site in 0usize..25, dir in 0usize..4) {
            let t = Torus::new(2, l).unwrap();
            let x = site % t.volume();
            let y = t.step(x, dir);
            let back = if dir % 2 == 0 { dir + 1 } else { dir - 1 };
            prop_assert_eq!(t.step(y, back), x);
            prop_assert_eq!(t.add(t.sub(y, x), x), y);
        }
    }
}
