//! `p`-point kernels on `Λ^p × Λ^p`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::Torus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    p: usize,
    n_sites: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(p: usize, n_sites: usize) -> Result<Self> {
        let side = n_sites
            .checked_pow(p as u32)
            .filter(|s| s.checked_mul(*s).is_some_and(|t| t <= 1 << 26))
            .ok_or_else(|| crate::Error::Budget(format!("kernel with p={p}, |Λ|={n_sites} too large")))?;
        if p == 0 {
            return invalid("kernel needs p >= 1");
        }
        Ok(Self { p, n_sites, data: vec![0.0; side * side] })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Number of multi-indices `|Λ|^p`.
    pub fn side(&self) -> usize {
        self.n_sites.pow(self.p as u32)
    }

    pub fn encode(&self, x: &[usize]) -> usize {
        x.iter().rev().fold(0, |acc, &s| acc * self.n_sites + s)
    }

    pub fn decode(&self, mut i: usize) -> Vec<usize> {
        (0..self.p)
            .map(|_| {
                let s = i % self.n_sites;
                i /= self.n_sites;
                s
            })
            .collect()
    }

    pub fn get(&self, x: &[usize], y: &[usize]) -> f64 {
        self.data[self.encode(x) * self.side() + self.encode(y)]
    }

    pub fn set(&mut self, x: &[usize], y: &[usize], v: f64) {
        let i = self.encode(x) * self.side() + self.encode(y);
        self.data[i] = v;
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.side() + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let s = self.side();
        &mut self.data[i * s + j]
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn as_matrix(&self) -> nalgebra::DMatrix<f64> {
        let s = self.side();
        nalgebra::DMatrix::from_row_slice(s, s, &self.data)
    }

    pub fn from_matrix(p: usize, n_sites: usize, m: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let mut k = Self::zeros(p, n_sites)?;
        if m.nrows() != k.side() || m.ncols() != k.side() {
            return invalid("matrix shape does not match kernel");
        }
        for i in 0..k.side() {
            for j in 0..k.side() {
                *k.at_mut(i, j) = m[(i, j)];
            }
        }
        Ok(k)
    }

    /// CSV rows `x_1..x_p, y_1..y_p, value` with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let head: Vec<String> = (1..=self.p)
            .map(|i| format!("x{i}"))
            .chain((1..=self.p).map(|i| format!("y{i}")))
            .chain(["value".to_string()])
            .collect();
        writeln!(w, "{}", head.join(","))?;
        for i in 0..self.side() {
            for j in 0..self.side() {
                let cells: Vec<String> = self
                    .decode(i)
                    .into_iter()
                    .chain(self.decode(j))
                    .map(|s| s.to_string())
                    .collect();
                writeln!(w, "{},{:e}", cells.join(","), self.at(i, j))?;
            }
        }
        Ok(())
    }
}

/// `‖K‖_{L0,p}`: sup over `x⃗ ∈ Λ_{L0}^p` of `Σ_{y⃗ ∈ Λ_{L0}^p} |K(x⃗, y⃗)|`.
pub fn kernel_norm(k: &Kernel, torus: &Torus, l0: usize) -> Result<f64> {
    if torus.volume() != k.n_sites() {
        return invalid("kernel does not live on this torus");
    }
    let sites = torus.sub_box(l0)?;
    let p = k.p();
    let count = sites.len().pow(p as u32);
    let tuple = |mut i: usize| -> Vec<usize> {
        (0..p)
            .map(|_| {
                let s = sites[i % sites.len()];
                i /= sites.len();
                s
            })
            .collect()
    };
    let mut best: f64 = 0.0;
    for i in 0..count {
        let x = tuple(i);
        let row: f64 = (0..count).map(|j| k.get(&x, &tuple(j)).abs()).sum();
        best = best.max(row);
    }
    Ok(best)
}
