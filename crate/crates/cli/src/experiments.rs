//! Experiment drivers. Each `run_*` returns a typed result whose `write`
//! emits the CSV files documented in the README.

use std::fs::File;
use std::path::Path;

use loopgas::cluster::log_z_expansion;
use loopgas::field::{estimate_gamma_cl, estimate_zcl, quadrature_single_site, zcl_hubbard_stratonovich, GaussianField};
use loopgas::interactions::InteractionParams;
use loopgas::lattice::{heat_kernel_suite, HeatKernelReport, PeriodicPotential, Torus};
use loopgas::largemass::{gamma_lm_kernel, z_lm, LmParams};
use loopgas::loop_mc::{estimate_gamma_p, estimate_rel_partition, EnsembleSpec};
use loopgas::mc::{Exec, McEstimate};
use loopgas::quantum::{particle_cutoff, solve};
use loopgas::volume::{volume_sweep, VolumeReport, VolumeSweepSpec};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, LambdaRule};
use crate::error::{config_err, Result};
use crate::fit::{fit_order, successive_ratios, OrderFit};

/// Quadrature nodes per site of the exact Hubbard–Stratonovich route.
const HS_NODES: usize = 40;
/// Largest `|Λ|` handled by the Hubbard–Stratonovich quadrature.
const HS_MAX_SITES: usize = 4;

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join(name))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_log(dir: &Path, name: &str, log: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), log.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    Ok(())
}

fn sites(s: &[usize]) -> String {
    s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn per_index_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Uses the exact oracle when `|Λ|^{p + n_cut} <= budget`.
fn choose_oracle(
    params: &InteractionParams,
    kappa: f64,
    p: usize,
    cfg: &ExperimentConfig,
    log: &mut Vec<String>,
) -> Result<(bool, usize)> {
    let vol = params.potential.torus().volume() as f64;
    let (n_cut, _) = particle_cutoff(params, kappa, p, cfg.tolerances.oracle_tol)?;
    let cost = vol.powi((p + n_cut) as i32);
    let oracle = cost <= cfg.tolerances.oracle_budget;
    log.push(format!(
        "chooser: nu={} |Λ|^(p+n_cut) = {}^({}+{}) = {cost:e} {} {:e} -> {}",
        params.nu,
        vol,
        p,
        n_cut,
        if oracle { "<=" } else { ">" },
        cfg.tolerances.oracle_budget,
        if oracle { "quantum oracle" } else { "loop MC" }
    ));
    Ok((oracle, n_cut))
}

fn combined(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

// ---------------------------------------------------------------------------
// Mean-field sweep

#[derive(Clone, Debug, Serialize)]
pub struct MeanfieldRow {
    pub nu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub p: usize,
    pub x: String,
    pub y: String,
    pub method: String,
    pub n_cut: usize,
    /// `ν^p Γ_p^{ν,κ,ν²}(x⃗, y⃗)`.
    pub quantum: f64,
    pub quantum_err: f64,
    pub classical: f64,
    pub classical_err: f64,
    pub diff: f64,
    pub diff_err: f64,
    pub z_quantum: f64,
    pub z_quantum_err: f64,
    pub z_classical: f64,
    pub z_classical_err: f64,
    pub z_diff: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitRow {
    pub quantity: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

fn fit_row(quantity: &str, f: Option<OrderFit>) -> FitRow {
    let f = f.unwrap_or(OrderFit { slope: f64::NAN, intercept: f64::NAN, r_squared: f64::NAN, n_points: 0 });
    FitRow { quantity: quantity.into(), slope: f.slope, intercept: f.intercept, r_squared: f.r_squared, n_points: f.n_points }
}

#[derive(Clone, Debug)]
pub struct MeanfieldResult {
    pub rows: Vec<MeanfieldRow>,
    pub fits: Vec<FitRow>,
    pub log: Vec<String>,
}

impl MeanfieldResult {
    pub fn gamma_ratios(&self) -> Vec<f64> {
        successive_ratios(&self.rows.iter().map(|r| r.diff).collect::<Vec<_>>())
    }

    pub fn z_ratios(&self) -> Vec<f64> {
        successive_ratios(&self.rows.iter().map(|r| r.z_diff).collect::<Vec<_>>())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "meanfield.csv", &self.rows)?;
        write_csv(dir, "meanfield_fit.csv", &self.fits)?;
        write_log(dir, "meanfield.log", &self.log)
    }
}

pub fn run_meanfield(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<MeanfieldResult> {
    cfg.expect(Experiment::Meanfield)?;
    cfg.lambda_rule(&[LambdaRule::NuSquared])?;
    if cfg.kappa0.is_some() {
        return config_err("the mean-field regime keeps κ fixed; kappa0 is not read");
    }
    let kappa = cfg.kappa()?;
    let torus = cfg.torus()?;
    let v = cfg.periodic_potential(torus.l())?;
    let (x, y) = cfg.points(torus.volume())?;
    let p = cfg.p;
    let mut log = Vec::new();
    let classical = classical_target(&torus, &v, kappa, &x, &y, cfg, seed, exec, &mut log)?;
    let mut rows = Vec::new();
    for (i, &nu) in cfg.nus()?.iter().enumerate() {
        let s = per_index_seed(seed, i);
        let params = InteractionParams::meanfield(nu, v.clone())?;
        let (oracle, n_cut) = choose_oracle(&params, kappa, p, cfg, &mut log)?;
        let (g, z, method) = if oracle {
            let sol = solve(&params, kappa, cfg.tolerances.oracle_tol, p, exec)?;
            let g = sol.gammas[p - 1].get(&x, &y);
            (McEstimate::exact(g), McEstimate::exact(sol.partition.z_rel), "quantum_oracle")
        } else {
            let spec = EnsembleSpec::ginibre(params.clone(), Some(kappa))?;
            let g = estimate_gamma_p(&spec, &x, &y, cfg.samples, s, exec)?;
            let z = estimate_rel_partition(&spec, cfg.samples, s, exec)?;
            (g, z, "loop_mc")
        };
        let scale = nu.powi(p as i32);
        let (q, qe) = (scale * g.mean, scale * g.std_error);
        rows.push(MeanfieldRow {
            nu,
            kappa,
            lambda: nu * nu,
            p,
            x: sites(&x),
            y: sites(&y),
            method: method.into(),
            n_cut,
            quantum: q,
            quantum_err: qe,
            classical: classical.0.mean,
            classical_err: classical.0.std_error,
            diff: (q - classical.0.mean).abs(),
            diff_err: combined(qe, classical.0.std_error),
            z_quantum: z.mean,
            z_quantum_err: z.std_error,
            z_classical: classical.1.mean,
            z_classical_err: classical.1.std_error,
            z_diff: (z.mean - classical.1.mean).abs(),
            samples: cfg.samples,
            seed: s,
        });
    }
    let fits = vec![
        fit_row("gamma", fit_order(&rows.iter().map(|r| (r.nu, r.diff)).collect::<Vec<_>>())),
        fit_row("z", fit_order(&rows.iter().map(|r| (r.nu, r.z_diff)).collect::<Vec<_>>())),
    ];
    Ok(MeanfieldResult { rows, fits, log })
}

/// `(Γ_p^cl(x⃗, y⃗), 𝒵^cl)`: quadrature on one site, field MC otherwise.
#[allow(clippy::too_many_arguments)]
fn classical_target(
    torus: &Torus,
    v: &PeriodicPotential,
    kappa: f64,
    x: &[usize],
    y: &[usize],
    cfg: &ExperimentConfig,
    seed: u64,
    exec: &Exec,
    log: &mut Vec<String>,
) -> Result<(McEstimate, McEstimate)> {
    if torus.volume() == 1 {
        log.push("classical target: single-site quadrature".into());
        let ss = quadrature_single_site(kappa, v.at(0), x.len())?;
        return Ok((McEstimate::exact(ss.gamma), McEstimate::exact(ss.z)));
    }
    let gf = GaussianField::new(torus, kappa)?;
    let g = estimate_gamma_cl(&gf, v, x, y, cfg.samples, seed, exec)?;
    let z = if torus.volume() <= HS_MAX_SITES {
        log.push(format!("classical target: field MC for Γ, Hubbard–Stratonovich quadrature ({HS_NODES} nodes) for 𝒵"));
        McEstimate::exact(zcl_hubbard_stratonovich(&gf, v, HS_NODES)?)
    } else {
        log.push("classical target: field MC for Γ and 𝒵".into());
        estimate_zcl(&gf, v, cfg.samples, seed, exec)?
    };
    Ok((g, z))
}

// ---------------------------------------------------------------------------
// Large-mass sweep

#[derive(Clone, Debug, Serialize)]
pub struct LargemassRow {
    pub nu: f64,
    pub kappa0: f64,
    pub kappa: f64,
    pub p: usize,
    pub x: String,
    pub y: String,
    pub quantum: f64,
    pub largemass: f64,
    pub diff: f64,
    pub n_cut: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LargemassZRow {
    pub nu: f64,
    pub kappa0: f64,
    pub z_quantum: f64,
    pub z_largemass: f64,
    pub z_diff: f64,
    pub max_entry_diff: f64,
}

#[derive(Clone, Debug)]
pub struct LargemassResult {
    pub n_sites: usize,
    pub p: usize,
    pub nus: Vec<f64>,
    pub rows: Vec<LargemassRow>,
    pub z_rows: Vec<LargemassZRow>,
    pub fits: Vec<FitRow>,
    pub log: Vec<String>,
}

impl LargemassResult {
    /// Entry `(i, j)` of the large-mass kernel and the per-ν differences.
    pub fn entry(&self, i: usize, j: usize) -> (f64, Vec<f64>) {
        let side = self.n_sites.pow(self.p as u32);
        let k = i * side + j;
        let per: Vec<f64> = (0..self.nus.len()).map(|n| self.rows[n * side * side + k].diff).collect();
        (self.rows[k].largemass, per)
    }

    pub fn side(&self) -> usize {
        self.n_sites.pow(self.p as u32)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "largemass.csv", &self.rows)?;
        write_csv(dir, "largemass_z.csv", &self.z_rows)?;
        write_csv(dir, "largemass_fit.csv", &self.fits)?;
        write_log(dir, "largemass.log", &self.log)
    }
}

pub fn run_largemass(cfg: &ExperimentConfig, _seed: u64, exec: &Exec) -> Result<LargemassResult> {
    cfg.expect(Experiment::Largemass)?;
    cfg.lambda_rule(&[LambdaRule::One])?;
    if cfg.kappa.is_some() {
        return config_err("the large-mass regime sets κ = κ0/ν; give kappa0, not kappa");
    }
    let kappa0 = cfg.kappa0()?;
    let torus = cfg.torus()?;
    let v = cfg.periodic_potential(torus.l())?;
    let p = cfg.p;
    let lm = LmParams::new(kappa0, v.clone(), cfg.tolerances.oracle_tol)?;
    let target = gamma_lm_kernel(&lm, p)?;
    let z_target = z_lm(&lm)?;
    let mut log = vec![format!("large-mass target: k_max = {}, tail bound {:e}", z_target.k_max, z_target.tail_bound)];
    let side = target.side();
    let mut rows = Vec::new();
    let mut z_rows = Vec::new();
    let nus = cfg.nus()?;
    for &nu in &nus {
        let params = InteractionParams::largemass(nu, kappa0, v.clone())?;
        let kappa = kappa0 / nu;
        let (n_cut, _) = particle_cutoff(&params, kappa, p, cfg.tolerances.oracle_tol)?;
        log.push(format!("nu={nu}: quantum oracle, n_cut = {n_cut}"));
        let sol = solve(&params, kappa, cfg.tolerances.oracle_tol, p, exec)?;
        let g = &sol.gammas[p - 1];
        let mut max_diff: f64 = 0.0;
        for i in 0..side {
            for j in 0..side {
                let diff = (g.at(i, j) - target.at(i, j)).abs();
                max_diff = max_diff.max(diff);
                rows.push(LargemassRow {
                    nu,
                    kappa0,
                    kappa,
                    p,
                    x: sites(&g.decode(i)),
                    y: sites(&g.decode(j)),
                    quantum: g.at(i, j),
                    largemass: target.at(i, j),
                    diff,
                    n_cut,
                });
            }
        }
        z_rows.push(LargemassZRow {
            nu,
            kappa0,
            z_quantum: sol.partition.z_rel,
            z_largemass: z_target.z_rel,
            z_diff: (sol.partition.z_rel - z_target.z_rel).abs(),
            max_entry_diff: max_diff,
        });
    }
    let fits = vec![
        fit_row("gamma_max", fit_order(&z_rows.iter().map(|r| (r.nu, r.max_entry_diff)).collect::<Vec<_>>())),
        fit_row("z", fit_order(&z_rows.iter().map(|r| (r.nu, r.z_diff)).collect::<Vec<_>>())),
    ];
    Ok(LargemassResult { n_sites: torus.volume(), p, nus, rows, z_rows, fits, log })
}

// ---------------------------------------------------------------------------
// Volume sweep

#[derive(Clone, Debug, Serialize)]
pub struct VolumeRowCsv {
    pub nu: f64,
    pub kappa: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_max: usize,
    pub g: f64,
    pub g_err: f64,
    pub g_remainder: f64,
    pub gamma_norm: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeStepCsv {
    pub nu: f64,
    pub l_from: usize,
    pub l_to: usize,
    #[serde(rename = "L0")]
    pub l0: usize,
    pub g_diff: f64,
    pub g_diff_err: f64,
    pub g_lower: f64,
    pub g_upper: f64,
    pub gamma_diff_norm: f64,
    pub gamma_lower: f64,
    pub gamma_upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeKernelCsv {
    pub nu: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub displacement: String,
    pub value: f64,
    pub std_error: f64,
    pub remainder: f64,
}

#[derive(Clone, Debug)]
pub struct VolumeResult {
    pub reports: Vec<VolumeReport>,
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
    pub log: Vec<String>,
}

impl VolumeResult {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(VolumeReport::pass)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut rows = Vec::new();
        let mut steps = Vec::new();
        let mut kernel = Vec::new();
        for (r, &seed) in self.reports.iter().zip(&self.seeds) {
            for row in &r.rows {
                rows.push(VolumeRowCsv {
                    nu: r.nu,
                    kappa: r.kappa,
                    l: row.l,
                    n_max: r.n_max,
                    g: row.g,
                    g_err: row.g_err,
                    g_remainder: row.g_remainder,
                    gamma_norm: row.gamma_norm,
                    samples: r.n_samples,
                    seed,
                });
                for (e, d) in r.displacements.iter().enumerate() {
                    kernel.push(VolumeKernelCsv {
                        nu: r.nu,
                        l: row.l,
                        displacement: d.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
                        value: row.gamma[e],
                        std_error: row.gamma_err[e],
                        remainder: row.gamma_remainder[e],
                    });
                }
            }
            for s in &r.steps {
                steps.push(VolumeStepCsv {
                    nu: r.nu,
                    l_from: s.l_from,
                    l_to: s.l_to,
                    l0: r.l0,
                    g_diff: s.g_diff,
                    g_diff_err: s.g_diff_err,
                    g_lower: s.g_lower,
                    g_upper: s.g_upper,
                    gamma_diff_norm: s.gamma_diff_norm,
                    gamma_lower: s.gamma_lower,
                    gamma_upper: s.gamma_upper,
                });
            }
        }
        write_csv(dir, "volume.csv", &rows)?;
        write_csv(dir, "volume_steps.csv", &steps)?;
        write_csv(dir, "volume_kernel.csv", &kernel)?;
        write_log(dir, "volume.log", &self.log)
    }
}

pub fn run_volume(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<VolumeResult> {
    cfg.expect(Experiment::Volume)?;
    cfg.lambda_rule(&[LambdaRule::NuSquared])?;
    let kappa = cfg.kappa()?;
    let potential = cfg.potential_spec()?;
    let ls = cfg.sides()?;
    if ls.len() < 2 || ls.windows(2).any(|w| w[0] >= w[1]) {
        return config_err("L_list must hold at least two increasing sides");
    }
    let mut warnings = Vec::new();
    let l1 = potential.l1_norm();
    if l1 > cfg.tolerances.l1_threshold {
        warnings.push(format!("‖v‖₁ = {l1} exceeds the smallness threshold {}", cfg.tolerances.l1_threshold));
    }
    let mut reports = Vec::new();
    let mut seeds = Vec::new();
    let mut log = Vec::new();
    for (i, &nu) in cfg.nus()?.iter().enumerate() {
        let s = per_index_seed(seed, i);
        let spec = VolumeSweepSpec {
            d: cfg.d,
            ls: ls.clone(),
            nu,
            kappa,
            potential: potential.clone(),
            n_max: cfg.n_max.unwrap_or(4),
            l0: cfg.l0()?,
        };
        let r = volume_sweep(&spec, cfg.samples, s, exec)?;
        log.push(format!("nu={nu}: g Cauchy {}, Γ₁ Cauchy {}", r.g_cauchy, r.gamma_cauchy));
        reports.push(r);
        seeds.push(s);
    }
    log.extend(warnings.iter().map(|w| format!("warning: {w}")));
    Ok(VolumeResult { reports, seeds, warnings, log })
}

// ---------------------------------------------------------------------------
// Heat kernel

#[derive(Clone, Debug)]
pub struct HeatkernelResult {
    pub reports: Vec<HeatKernelReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatkernelRow {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub t: f64,
    pub min: f64,
    pub max: f64,
    pub normalization_error: f64,
    pub semigroup_error: f64,
    pub bessel_error: f64,
    pub quadrature_error: f64,
    pub pass: bool,
}

impl HeatkernelResult {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<HeatkernelRow> = self
            .reports
            .iter()
            .map(|r| HeatkernelRow {
                d: r.d,
                l: r.l,
                t: r.t,
                min: r.min,
                max: r.max,
                normalization_error: r.normalization_error,
                semigroup_error: r.semigroup_error,
                bessel_error: r.bessel_error,
                quadrature_error: r.quadrature_error,
                pass: r.pass,
            })
            .collect();
        write_csv(dir, "heatkernel.csv", &rows)
    }
}

pub fn run_heatkernel(cfg: &ExperimentConfig) -> Result<HeatkernelResult> {
    cfg.expect(Experiment::Heatkernel)?;
    if cfg.t.is_empty() || cfg.t.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return config_err("t must be a non-empty list of times >= 0");
    }
    let mut reports = Vec::new();
    for l in cfg.sides()? {
        for &t in &cfg.t {
            reports.push(heat_kernel_suite(cfg.d, l, t)?);
        }
    }
    Ok(HeatkernelResult { reports })
}

// ---------------------------------------------------------------------------
// Ginibre ensemble

fn ginibre_params(cfg: &ExperimentConfig, nu: f64, v: PeriodicPotential, rule: LambdaRule) -> Result<(InteractionParams, f64)> {
    Ok(match rule {
        LambdaRule::NuSquared => (InteractionParams::meanfield(nu, v)?, cfg.kappa()?),
        LambdaRule::Explicit => (InteractionParams::generic(nu, cfg.lambda.expect("checked"), v)?, cfg.kappa()?),
        LambdaRule::One => {
            let k0 = cfg.kappa0()?;
            (InteractionParams::largemass(nu, k0, v)?, k0 / nu)
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GinibreRow {
    pub nu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub quantity: String,
    pub x: String,
    pub y: String,
    pub estimate: f64,
    pub std_error: f64,
    pub oracle: f64,
    pub rel_std_error: f64,
    pub sigmas: f64,
    pub agree: bool,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct GinibreResult {
    pub rows: Vec<GinibreRow>,
    pub log: Vec<String>,
}

impl GinibreResult {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "ginibre_z.csv", &self.rows)?;
        write_log(dir, "ginibre_z.log", &self.log)
    }
}

pub fn run_ginibre_z(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<GinibreResult> {
    cfg.expect(Experiment::GinibreZ)?;
    let rule = cfg.lambda_rule(&[LambdaRule::Explicit, LambdaRule::NuSquared, LambdaRule::One])?;
    let torus = cfg.torus()?;
    let v = cfg.periodic_potential(torus.l())?;
    let (x, y) = cfg.points(torus.volume())?;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for (i, &nu) in cfg.nus()?.iter().enumerate() {
        let s = per_index_seed(seed, i);
        let (params, kappa) = ginibre_params(cfg, nu, v.clone(), rule)?;
        let spec = EnsembleSpec::ginibre(params.clone(), Some(kappa))?;
        let z = estimate_rel_partition(&spec, cfg.samples, s, exec)?;
        let g = estimate_gamma_p(&spec, &x, &y, cfg.samples, s, exec)?;
        let (n_cut, _) = particle_cutoff(&params, kappa, cfg.p, cfg.tolerances.oracle_tol)?;
        log.push(format!("nu={nu}: reference is the quantum oracle, n_cut = {n_cut}"));
        let sol = solve(&params, kappa, cfg.tolerances.oracle_tol, cfg.p, exec)?;
        let (oz, og) = (sol.partition.z_rel, sol.gammas[cfg.p - 1].get(&x, &y));
        for (name, est, o, xs, ys) in [("Z", &z, oz, String::new(), String::new()), ("Gamma", &g, og, sites(&x), sites(&y))] {
            let sigmas = (est.mean - o).abs() / est.std_error;
            rows.push(GinibreRow {
                nu,
                kappa,
                lambda: params.lambda,
                quantity: if name == "Gamma" { format!("Gamma_{}", cfg.p) } else { name.into() },
                x: xs,
                y: ys,
                estimate: est.mean,
                std_error: est.std_error,
                oracle: o,
                rel_std_error: est.std_error / est.mean.abs(),
                sigmas,
                agree: est.agrees(o, cfg.tolerances.sigma, 0.0),
                samples: cfg.samples,
                seed: s,
            });
        }
    }
    Ok(GinibreResult { rows, log })
}

// ---------------------------------------------------------------------------
// Cluster expansion of log 𝒵

#[derive(Clone, Debug, Serialize)]
pub struct ClusterTermRow {
    pub nu: f64,
    pub order: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub ess: f64,
    /// Tree-bound majorant of the first omitted order when truncating here.
    pub tree_bound_remainder: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterSummaryRow {
    pub nu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub n_max: usize,
    pub log_z: f64,
    pub log_z_err: f64,
    pub remainder: f64,
    pub z_expansion: f64,
    pub z_oracle: f64,
    pub z_diff: f64,
    /// `σ·(std error) + remainder`, both mapped through `exp`.
    pub allowance: f64,
    pub agree: bool,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ClusterResult {
    pub terms: Vec<ClusterTermRow>,
    pub summary: Vec<ClusterSummaryRow>,
    pub log: Vec<String>,
}

impl ClusterResult {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "cluster_logz_terms.csv", &self.terms)?;
        write_csv(dir, "cluster_logz.csv", &self.summary)?;
        write_log(dir, "cluster_logz.log", &self.log)
    }
}

pub fn run_cluster_logz(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<ClusterResult> {
    cfg.expect(Experiment::ClusterLogz)?;
    let rule = cfg.lambda_rule(&[LambdaRule::Explicit, LambdaRule::NuSquared])?;
    let torus = cfg.torus()?;
    let v = cfg.periodic_potential(torus.l())?;
    let n_max = cfg.n_max()?;
    let mut terms = Vec::new();
    let mut summary = Vec::new();
    let mut log = Vec::new();
    for (i, &nu) in cfg.nus()?.iter().enumerate() {
        let s = per_index_seed(seed, i);
        let (params, kappa) = ginibre_params(cfg, nu, v.clone(), rule)?;
        let spec = EnsembleSpec::ginibre(params.clone(), Some(kappa))?;
        let x = log_z_expansion(&spec, n_max, cfg.samples, s, exec)?;
        for (k, t) in x.terms.iter().enumerate() {
            let next = x.terms.get(k + 1).map_or(x.remainder, |n| n.bound);
            terms.push(ClusterTermRow {
                nu,
                order: t.order,
                mean: t.mean,
                std_error: t.std_error,
                n_samples: t.n_samples,
                ess: t.ess,
                tree_bound_remainder: next,
            });
        }
        let (n_cut, _) = particle_cutoff(&params, kappa, 0, cfg.tolerances.oracle_tol)?;
        log.push(format!("nu={nu}: reference is the quantum oracle, n_cut = {n_cut}"));
        let z_oracle = solve(&params, kappa, cfg.tolerances.oracle_tol, 0, exec)?.partition.z_rel;
        let z = x.value.exp();
        let allowance = z * (cfg.tolerances.sigma * x.std_error) + z * (x.remainder.exp() - 1.0);
        summary.push(ClusterSummaryRow {
            nu,
            kappa,
            lambda: params.lambda,
            n_max,
            log_z: x.value,
            log_z_err: x.std_error,
            remainder: x.remainder,
            z_expansion: z,
            z_oracle,
            z_diff: (z - z_oracle).abs(),
            allowance,
            agree: (z - z_oracle).abs() <= allowance,
            samples: cfg.samples,
            seed: s,
        });
    }
    Ok(ClusterResult { terms, summary, log })
}

// ---------------------------------------------------------------------------
// Symanzik ensemble

#[derive(Clone, Debug, Serialize)]
pub struct SymanzikRow {
    pub eps: f64,
    pub z_eps: f64,
    pub z_eps_err: f64,
    pub z_field: f64,
    pub z_field_err: f64,
    /// Exact `𝒵^cl` by Hubbard–Stratonovich quadrature, NaN when too large.
    pub z_hs: f64,
    pub sigmas: f64,
    pub agree: bool,
    /// `|𝒵^{cl,ε} - 𝒵^cl|` against the best available reference.
    pub drift: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RichardsonRow {
    pub eps_a: f64,
    pub eps_b: f64,
    /// Linear extrapolation of `𝒵^{cl,ε}` to `ε = 0`.
    pub z_extrapolated: f64,
    pub z_extrapolated_err: f64,
    pub reference: f64,
    pub sigmas: f64,
}

#[derive(Clone, Debug)]
pub struct SymanzikResult {
    pub rows: Vec<SymanzikRow>,
    pub richardson: Vec<RichardsonRow>,
    pub log: Vec<String>,
}

impl SymanzikResult {
    pub fn pairwise_agree(&self) -> bool {
        self.rows.iter().all(|r| r.agree)
    }

    /// The drift shrinks strictly along the ε list.
    pub fn drift_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].drift < w[0].drift)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(dir, "symanzik_z.csv", &self.rows)?;
        write_csv(dir, "symanzik_richardson.csv", &self.richardson)?;
        write_log(dir, "symanzik_z.log", &self.log)
    }
}

pub fn run_symanzik_z(cfg: &ExperimentConfig, seed: u64, exec: &Exec) -> Result<SymanzikResult> {
    cfg.expect(Experiment::SymanzikZ)?;
    let kappa = cfg.kappa()?;
    let torus = cfg.torus()?;
    let v = cfg.periodic_potential(torus.l())?;
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0)) {
        return config_err("eps must be a non-empty list of positive cut-offs");
    }
    let gf = GaussianField::new(&torus, kappa)?;
    let field = estimate_zcl(&gf, &v, cfg.samples, seed, exec)?;
    let mut log = Vec::new();
    let hs = if torus.volume() <= HS_MAX_SITES {
        let z = zcl_hubbard_stratonovich(&gf, &v, HS_NODES)?;
        log.push(format!("reference: Hubbard–Stratonovich quadrature, {HS_NODES} nodes: {z}"));
        z
    } else {
        log.push("reference: field MC".into());
        f64::NAN
    };
    let reference = if hs.is_finite() { hs } else { field.mean };
    let mut rows = Vec::new();
    let mut ests = Vec::new();
    for (i, &eps) in cfg.eps.iter().enumerate() {
        let s = per_index_seed(seed, i + 1);
        let spec = EnsembleSpec::symanzik(v.clone(), kappa, eps)?;
        let z = estimate_rel_partition(&spec, cfg.samples, s, exec)?;
        let err = combined(z.std_error, field.std_error);
        rows.push(SymanzikRow {
            eps,
            z_eps: z.mean,
            z_eps_err: z.std_error,
            z_field: field.mean,
            z_field_err: field.std_error,
            z_hs: hs,
            sigmas: (z.mean - field.mean).abs() / err,
            agree: (z.mean - field.mean).abs() <= cfg.tolerances.sigma * err,
            drift: (z.mean - reference).abs(),
            samples: cfg.samples,
            seed: s,
        });
        ests.push((eps, z));
    }
    let richardson = ests
        .windows(2)
        .map(|w| {
            let ((ea, za), (eb, zb)) = (&w[0], &w[1]);
            let ca = -eb / (ea - eb);
            let cb = ea / (ea - eb);
            let z0 = ca * za.mean + cb * zb.mean;
            let err = combined(ca * za.std_error, cb * zb.std_error);
            let ref_err = if hs.is_finite() { 0.0 } else { field.std_error };
            RichardsonRow {
                eps_a: *ea,
                eps_b: *eb,
                z_extrapolated: z0,
                z_extrapolated_err: err,
                reference,
                sigmas: (z0 - reference).abs() / combined(err, ref_err),
            }
        })
        .collect();
    Ok(SymanzikResult { rows, richardson, log })
}
