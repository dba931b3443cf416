//! Spherical-geometry reconstruction: attenuation-aware filtered backprojection and the
//! Neumann-series correction `h = (I + T)⁻¹ h^a`.
//!
//! With `q = t·(spherical mean)` the backprojection reads
//! `h(x) = −(1/(2πϖ)) Δ_x ∫ e^{κ∞|ξ−x|} q^a(|ξ−x|, ξ) dS(ξ)`, and the correction kernel is
//! `F_T(x,y) = −(1/(8π²ϖ)) Σ_{j≥1} (1/j!) Δ_x ∫ |ξ−y|^{j−1} r_j*(|ξ−x|−|ξ−y|) dS(ξ)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attenuation::{AttenuationModel, RjKernel};
use crate::error::{Error, Result};
use crate::forward::SphereMeasurement;
use crate::phantom::{dist, norm, GridSpec, VolumeGrid};
use crate::quadrature::{gauss_legendre, SphereNodes};
use crate::transforms::{interp_trace, UniformGrid1D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TMode {
    MatrixFree,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SphereReconConfig {
    pub target: GridSpec,
    pub series_j: usize,
    pub neumann_max_iter: usize,
    pub neumann_tol: f64,
    pub laplacian_order: usize,
    pub t_mode: TMode,
    /// Power-iteration steps for the norm estimate.
    pub power_iters: usize,
    /// Radial bin width for shell integrals, as a fraction of the smallest grid spacing.
    pub shell_step_factor: f64,
    /// Required clearance between the inflated target grid and the detector sphere.
    pub margin: f64,
}

impl Default for SphereReconConfig {
    fn default() -> Self {
        Self {
            target: GridSpec { origin: [-1.0; 3], spacing: [2.0 / 47.0; 3], dims: [48; 3] },
            series_j: 8,
            neumann_max_iter: 50,
            neumann_tol: 1e-6,
            laplacian_order: 2,
            t_mode: TMode::MatrixFree,
            power_iters: 8,
            shell_step_factor: 0.5,
            margin: 0.0,
        }
    }
}

impl SphereReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if self.series_j == 0 {
            return Err(Error::Config("series_j must be at least 1".into()));
        }
        if !(self.neumann_tol > 0.0) {
            return Err(Error::Config("neumann_tol must be positive".into()));
        }
        if self.laplacian_order != 2 && self.laplacian_order != 4 {
            return Err(Error::Config(format!("laplacian_order must be 2 or 4, got {}", self.laplacian_order)));
        }
        if !(self.shell_step_factor > 0.0) {
            return Err(Error::Config("shell_step_factor must be positive".into()));
        }
        Ok(())
    }

    fn halo(&self) -> usize {
        self.laplacian_order / 2
    }
}

fn require_unit_speed(model: &AttenuationModel) -> Result<()> {
    if model.c != 1.0 {
        return Err(Error::InvalidInput(format!(
            "spherical reconstruction uses time-of-flight t = |ξ−x| and needs c = 1, got {}",
            model.c
        )));
    }
    Ok(())
}

fn check_inside(grid: &GridSpec, radius: f64, margin: f64) -> Result<()> {
    let r = grid.max_radius();
    if r >= radius - margin {
        return Err(Error::InvalidInput(format!(
            "reconstruction grid reaches radius {r}, sphere radius is {radius} (margin {margin})"
        )));
    }
    Ok(())
}

/// `e^{κ∞ t} q^a(t, ξ)`.
pub fn multiply_m(meas: &SphereMeasurement, model: &AttenuationModel) -> Result<SphereMeasurement> {
    let tg = meas.t_grid;
    let tmax = tg.start.abs().max(tg.end().abs());
    if model.kappa_inf * tmax > 700.0 {
        return Err(Error::GrowthBudgetExceeded { exponent: model.kappa_inf * tmax });
    }
    let scale: Vec<f64> = tg.points().iter().map(|&t| (model.kappa_inf * t).exp()).collect();
    let mut out = meas.clone();
    let n = tg.n;
    for (i, v) in out.values.iter_mut().enumerate() {
        *v *= scale[i % n];
    }
    Ok(out)
}

/// `I(x) = Σ_i w_i e^{κ∞ d_i} g_i(d_i)`, `d_i = |ξ_i − x|`, on every node of `grid`.
fn sphere_integral(
    traces: &[f64],
    t_grid: &UniformGrid1D,
    nodes: &[[f64; 3]],
    weights: &[f64],
    kappa_inf: f64,
    grid: &GridSpec,
) -> VolumeGrid {
    let mut out = VolumeGrid::zeros(grid);
    let [_, n1, n2] = grid.dims;
    let nt = t_grid.n;
    out.values.par_chunks_mut(n1 * n2).enumerate().for_each(|(i, plane)| {
        // node-outer order keeps one trace in cache; each voxel still sums nodes in order
        let pts: Vec<[f64; 3]> = (0..n1).flat_map(|j| (0..n2).map(move |k| grid.point(i, j, k))).collect();
        for (m, (xi, w)) in nodes.iter().zip(weights).enumerate() {
            let trace = &traces[m * nt..(m + 1) * nt];
            for (acc, x) in plane.iter_mut().zip(&pts) {
                let d = dist(*xi, *x);
                let v = interp_trace(trace, t_grid, d);
                if v != 0.0 {
                    *acc += if kappa_inf != 0.0 { w * (kappa_inf * d).exp() * v } else { w * v };
                }
            }
        }
    });
    out
}

/// Central-difference Laplacian; input carries `halo` extra layers, output is the interior.
pub fn discrete_laplacian(f: &VolumeGrid, halo: usize, order: usize) -> Result<VolumeGrid> {
    let need = order / 2;
    if (order != 2 && order != 4) || halo < need {
        return Err(Error::InvalidInput(format!("order {order} Laplacian needs halo >= {need}, got {halo}")));
    }
    if f.dims.iter().any(|&d| d <= 2 * halo) {
        return Err(Error::InvalidInput("grid too small for the requested halo".into()));
    }
    let dims = [f.dims[0] - 2 * halo, f.dims[1] - 2 * halo, f.dims[2] - 2 * halo];
    let spec = GridSpec {
        origin: [
            f.origin[0] + halo as f64 * f.spacing[0],
            f.origin[1] + halo as f64 * f.spacing[1],
            f.origin[2] + halo as f64 * f.spacing[2],
        ],
        spacing: f.spacing,
        dims,
    };
    let mut out = VolumeGrid::zeros(&spec);
    let inv: Vec<f64> = f.spacing.iter().map(|h| 1.0 / (h * h)).collect();
    let (c0, c1, c2) = if order == 2 { (-2.0, 1.0, 0.0) } else { (-30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0) };
    let [_, m1, m2] = dims;
    out.values.par_chunks_mut(m1 * m2).enumerate().for_each(|(i, plane)| {
        for j in 0..m1 {
            for k in 0..m2 {
                let (a, b, c) = (i + halo, j + halo, k + halo);
                let centre = f.get(a, b, c);
                let mut s = 0.0;
                let axes = [
                    (f.get(a + 1, b, c) + f.get(a - 1, b, c), if c2 != 0.0 { f.get(a + 2, b, c) + f.get(a - 2, b, c) } else { 0.0 }),
                    (f.get(a, b + 1, c) + f.get(a, b - 1, c), if c2 != 0.0 { f.get(a, b + 2, c) + f.get(a, b - 2, c) } else { 0.0 }),
                    (f.get(a, b, c + 1) + f.get(a, b, c - 1), if c2 != 0.0 { f.get(a, b, c + 2) + f.get(a, b, c - 2) } else { 0.0 }),
                ];
                for (ax, (n1s, n2s)) in axes.iter().enumerate() {
                    s += inv[ax] * (c0 * centre + c1 * n1s + c2 * n2s);
                }
                plane[j * m2 + k] = s;
            }
        }
    });
    Ok(out)
}

/// `−(1/(2πϖ)) Δ_x ∫ w(|ξ−x|) g(|ξ−x|, ξ) dS(ξ)` with `w(d) = e^{κ∞ d}`.
#[allow(clippy::too_many_arguments)]
fn backproject_traces(
    traces: &[f64],
    t_grid: &UniformGrid1D,
    nodes: &[[f64; 3]],
    weights: &[f64],
    radius: f64,
    kappa_inf: f64,
    target: &GridSpec,
    order: usize,
) -> Result<VolumeGrid> {
    let halo = order / 2;
    let big = target.inflated(halo);
    let integral = sphere_integral(traces, t_grid, nodes, weights, kappa_inf, &big);
    let mut lap = discrete_laplacian(&integral, halo, order)?;
    let c = -1.0 / (2.0 * PI * radius);
    lap.values.iter_mut().for_each(|v| *v *= c);
    lap.origin = target.origin;
    Ok(lap)
}

/// Attenuation-aware backprojection `h^a = B_p M q^a`, with `M` folded into the weight.
pub fn fbp_backproject(meas: &SphereMeasurement, model: &AttenuationModel, cfg: &SphereReconConfig) -> Result<VolumeGrid> {
    cfg.validate()?;
    model.validate()?;
    require_unit_speed(model)?;
    meas.validate()?;
    let big = cfg.target.inflated(cfg.halo());
    check_inside(&big, meas.radius, cfg.margin)?;
    backproject_traces(
        &meas.values,
        &meas.t_grid,
        &meas.nodes,
        &meas.weights,
        meas.radius,
        model.kappa_inf,
        &cfg.target,
        cfg.laplacian_order,
    )
}

/// `Σ_{j=1}^{J} (1/j!) ρ^{j−1} r_j*(τ)` evaluated pointwise.
#[derive(Clone, Debug)]
pub struct SeriesKernel {
    kernels: Vec<RjKernel>,
    kappa_inf: f64,
    inv_fact: Vec<f64>,
}

impl SeriesKernel {
    pub fn new(model: &AttenuationModel, j_max: usize, grid: &UniformGrid1D) -> Result<Self> {
        let kernels = model.rj_kernels(j_max, grid)?;
        let mut inv_fact = vec![1.0; j_max + 1];
        for j in 1..=j_max {
            inv_fact[j] = inv_fact[j - 1] / j as f64;
        }
        Ok(Self { kernels, kappa_inf: model.kappa_inf, inv_fact })
    }

    pub fn j_max(&self) -> usize {
        self.kernels.len() - 1
    }

    /// `(1/j!) r_j*(τ)` for `j = 1..=J`.
    #[inline]
    pub fn terms(&self, tau: f64) -> Vec<f64> {
        let e = (self.kappa_inf * tau).exp();
        (1..self.kernels.len()).map(|j| self.kernels[j].eval(tau).re * e * self.inv_fact[j]).collect()
    }

    #[inline]
    pub fn eval(&self, tau: f64, rho: f64) -> f64 {
        let e = (self.kappa_inf * tau).exp();
        let mut p = 1.0;
        let mut acc = 0.0;
        for j in 1..self.kernels.len() {
            acc += self.kernels[j].eval(tau).re * p * self.inv_fact[j];
            p *= rho;
        }
        acc * e
    }

    /// Ratio of the largest `J`-th term to the largest first term over `τ ∈ [-τ_max, τ_max]`
    /// and `ρ ≤ ρ_max`.
    pub fn tail_ratio(&self, tau_max: f64, rho_max: f64) -> f64 {
        let n = 200;
        let mut first: f64 = 0.0;
        let mut last: f64 = 0.0;
        let jm = self.j_max();
        for k in 0..=n {
            let tau = -tau_max + 2.0 * tau_max * k as f64 / n as f64;
            let t = self.terms(tau);
            first = first.max(t[0].abs());
            last = last.max(t[jm - 1].abs() * rho_max.powi(jm as i32 - 1));
        }
        if first == 0.0 {
            0.0
        } else {
            last / first
        }
    }
}

/// Pointwise evaluation of `F₀` and `F_T` with a product rule aligned to `x − y`,
/// split at the circle where `|ξ−x| = |ξ−y|` so the jump of `r₁` sits on a panel edge.
#[derive(Clone, Debug)]
pub struct KernelEvaluator {
    pub series: SeriesKernel,
    pub radius: f64,
    mu: (Vec<f64>, Vec<f64>),
    n_phi: usize,
}

impl KernelEvaluator {
    pub fn new(series: SeriesKernel, radius: f64, n_mu: usize, n_phi: usize) -> Self {
        Self { series, radius, mu: gauss_legendre(n_mu), n_phi }
    }

    /// `F₀(x, y) = −(1/(8π²ϖ)) ∫ K(|ξ−x|−|ξ−y|, |ξ−y|) dS(ξ)`.
    pub fn f0(&self, x: [f64; 3], y: [f64; 3]) -> f64 {
        let r = self.radius;
        let dxy = dist(x, y);
        let (e, u, v) = if dxy > 0.0 {
            frame([(x[0] - y[0]) / dxy, (x[1] - y[1]) / dxy, (x[2] - y[2]) / dxy])
        } else {
            frame([0.0, 0.0, 1.0])
        };
        let mut panels = vec![(-1.0, 1.0)];
        if dxy > 0.0 {
            let ms = (norm(x).powi(2) - norm(y).powi(2)) / (2.0 * r * dxy);
            if ms > -1.0 && ms < 1.0 {
                panels = vec![(-1.0, ms), (ms, 1.0)];
            }
        }
        let dphi = 2.0 * PI / self.n_phi as f64;
        let (cphi, sphi): (Vec<f64>, Vec<f64>) =
            (0..self.n_phi).map(|k| ((k as f64 + 0.5) * dphi).cos()).zip((0..self.n_phi).map(|k| ((k as f64 + 0.5) * dphi).sin())).unzip();
        let mut total = 0.0;
        for (a, b) in panels {
            let half = 0.5 * (b - a);
            for (gx, gw) in self.mu.0.iter().zip(&self.mu.1) {
                let mu = a + half * (gx + 1.0);
                let s = (1.0 - mu * mu).max(0.0).sqrt();
                let mut ring = 0.0;
                for k in 0..self.n_phi {
                    let dir = [
                        mu * e[0] + s * (cphi[k] * u[0] + sphi[k] * v[0]),
                        mu * e[1] + s * (cphi[k] * u[1] + sphi[k] * v[1]),
                        mu * e[2] + s * (cphi[k] * u[2] + sphi[k] * v[2]),
                    ];
                    let xi = [r * dir[0], r * dir[1], r * dir[2]];
                    let ry = dist(xi, y);
                    ring += self.series.eval(dist(xi, x) - ry, ry);
                }
                total += gw * half * ring * dphi;
            }
        }
        -total * r * r / (8.0 * PI * PI * r)
    }

    /// Seven-point finite-difference Laplacian in `x` of [`Self::f0`] with step `h`.
    pub fn ft(&self, x: [f64; 3], y: [f64; 3], h: f64) -> f64 {
        let c = self.f0(x, y);
        let mut s = -6.0 * c;
        for a in 0..3 {
            let mut p = x;
            p[a] += h;
            s += self.f0(p, y);
            p[a] -= 2.0 * h;
            s += self.f0(p, y);
        }
        s / (h * h)
    }
}

/// Orthonormal frame with first vector `e`.
fn frame(e: [f64; 3]) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let a = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = a[0] * e[0] + a[1] * e[1] + a[2] * e[2];
    let mut u = [a[0] - d * e[0], a[1] - d * e[1], a[2] - d * e[2]];
    let nu = norm(u);
    u = [u[0] / nu, u[1] / nu, u[2] / nu];
    let v = [e[1] * u[2] - e[2] * u[1], e[2] * u[0] - e[0] * u[2], e[0] * u[1] - e[1] * u[0]];
    (e, u, v)
}

/// Matrix-free data: `T h = B_p[G h]`, `(G h)(t, ξ) = (1/4π) Σ_j (1/j!) ∫ r_j*(t−ρ) ρ^{j−1} S_h(ρ, ξ) dρ`
/// with `S_h(ρ, ξ)` the shell integral of `h` about `ξ`.
#[derive(Clone, Debug)]
struct MatrixFree {
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    radius: f64,
    rho_grid: UniformGrid1D,
    /// `(1/j!) r_j*(l·Δρ)` for lags `l ∈ [−L, L]`, stored `[j−1][l + L]`.
    lag_table: Vec<Vec<f64>>,
    max_lag: usize,
    order: usize,
}

#[derive(Clone, Debug)]
enum TInner {
    Zero,
    MatrixFree(Box<MatrixFree>),
    Dense { matrix: Vec<f64>, n: usize },
}

/// The correction operator `T` on a fixed target grid.
#[derive(Clone, Debug)]
pub struct TOperator {
    pub mode: TMode,
    pub grid: GridSpec,
    pub norm_estimate: f64,
    pub series_j: usize,
    inner: TInner,
}

impl TOperator {
    pub fn is_zero(&self) -> bool {
        matches!(self.inner, TInner::Zero)
    }

    /// Dense operator from an explicit row-major matrix (already multiplied by cell volume).
    pub fn from_matrix(grid: GridSpec, matrix: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if matrix.len() != n * n {
            return Err(Error::GridMismatch(format!("{} entries for {n}x{n} operator", matrix.len())));
        }
        let mut t = TOperator { mode: TMode::Dense, grid, norm_estimate: 0.0, series_j: 0, inner: TInner::Dense { matrix, n } };
        t.norm_estimate = t.estimate_norm(30);
        Ok(t)
    }

    pub fn apply(&self, h: &VolumeGrid) -> Result<VolumeGrid> {
        if !h.spec().matches(&self.grid) {
            return Err(Error::GridMismatch("operand grid differs from operator grid".into()));
        }
        match &self.inner {
            TInner::Zero => Ok(VolumeGrid::zeros(&self.grid)),
            TInner::Dense { matrix, n } => {
                let vals: Vec<f64> = (0..*n)
                    .into_par_iter()
                    .map(|i| matrix[i * n..(i + 1) * n].iter().zip(&h.values).map(|(a, b)| a * b).sum())
                    .collect();
                VolumeGrid::from_values(&self.grid, vals)
            }
            TInner::MatrixFree(mf) => mf.apply(h, &self.grid),
        }
    }

    /// Dominant eigenvalue magnitude from the growth ratio of repeated application.
    fn estimate_norm(&self, iters: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v = VolumeGrid::zeros(&self.grid);
        v.values.iter_mut().for_each(|x| *x = rng.gen::<f64>() - 0.5);
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let n0 = v.norm();
            if n0 == 0.0 {
                return 0.0;
            }
            v.values.iter_mut().for_each(|x| *x /= n0);
            let w = match self.apply(&v) {
                Ok(w) => w,
                Err(_) => return f64::NAN,
            };
            est = w.norm();
            v = w;
        }
        est
    }
}

impl MatrixFree {
    fn apply(&self, h: &VolumeGrid, grid: &GridSpec) -> Result<VolumeGrid> {
        let dv = grid.cell_volume();
        let nr = self.rho_grid.n;
        let dr = self.rho_grid.step;
        let jm = self.lag_table.len();
        let l = self.max_lag as isize;
        let [n0, n1, n2] = grid.dims;
        let pts: Vec<([f64; 3], f64)> = (0..n0)
            .flat_map(|i| (0..n1).flat_map(move |j| (0..n2).map(move |k| (i, j, k))))
            .filter_map(|(i, j, k)| {
                let v = h.get(i, j, k);
                (v != 0.0).then(|| (grid.point(i, j, k), v * dv))
            })
            .collect();
        let traces: Vec<Vec<f64>> = self
            .nodes
            .par_iter()
            .map(|&xi| {
                let mut shell = vec![0.0; nr];
                for (y, m) in &pts {
                    let u = dist(xi, *y) / dr;
                    let b = u.floor() as usize;
                    if b + 1 >= nr {
                        continue;
                    }
                    let f = u - b as f64;
                    shell[b] += m * (1.0 - f);
                    shell[b + 1] += m * f;
                }
                let lo = shell.iter().position(|&s| s != 0.0);
                let mut g = vec![0.0; nr];
                let Some(lo) = lo else { return g };
                let hi = shell.iter().rposition(|&s| s != 0.0).unwrap_or(lo);
                // A_j(b) = ρ_b^{j−1} S_b / (4π)
                let mut a = vec![vec![0.0; hi - lo + 1]; jm];
                for b in lo..=hi {
                    let rho = b as f64 * dr;
                    let mut p = 1.0 / (4.0 * PI);
                    for aj in a.iter_mut() {
                        aj[b - lo] = shell[b] * p;
                        p *= rho;
                    }
                }
                for (k, gk) in g.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for b in lo..=hi {
                        let lag = k as isize - b as isize;
                        if lag.abs() > l {
                            continue;
                        }
                        let li = (lag + l) as usize;
                        for j in 0..jm {
                            acc += self.lag_table[j][li] * a[j][b - lo];
                        }
                    }
                    *gk = acc;
                }
                g
            })
            .collect();
        let flat: Vec<f64> = traces.concat();
        backproject_traces(&flat, &self.rho_grid, &self.nodes, &self.weights, self.radius, 0.0, grid, self.order)
    }
}

/// Builds `T` for the node set of the measurement surface.
pub fn assemble_t(model: &AttenuationModel, nodes: &SphereNodes, cfg: &SphereReconConfig) -> Result<TOperator> {
    cfg.validate()?;
    model.validate()?;
    require_unit_speed(model)?;
    let big = cfg.target.inflated(cfg.halo());
    check_inside(&big, nodes.radius, cfg.margin)?;
    if model.kappa_star.is_zero() {
        return Ok(TOperator { mode: cfg.t_mode, grid: cfg.target, norm_estimate: 0.0, series_j: 0, inner: TInner::Zero });
    }
    let h = cfg.target.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let dr = h * cfg.shell_step_factor;
    let rho_max = 2.0 * nodes.radius;
    let nr = (rho_max / dr).ceil() as usize + 4;
    let rho_grid = UniformGrid1D::new(0.0, dr, nr)?;
    let kgrid = UniformGrid1D { start: -((2 * nr) as f64) * dr, step: dr, n: 4 * nr + 1 };

    let mut j_max = cfg.series_j;
    let series = loop {
        let s = SeriesKernel::new(model, j_max, &kgrid)?;
        let tail = s.tail_ratio(rho_max, rho_max);
        if tail <= 1e-8 {
            break s;
        }
        if j_max >= 40 {
            return Err(Error::SeriesNotConverged(tail));
        }
        j_max += 4;
    };

    let mut op = match cfg.t_mode {
        TMode::MatrixFree => {
            let max_lag = nr;
            let lag_table: Vec<Vec<f64>> = (0..series.j_max())
                .map(|j| {
                    (0..=2 * max_lag)
                        .map(|li| {
                            let tau = (li as f64 - max_lag as f64) * dr;
                            series.terms(tau)[j]
                        })
                        .collect()
                })
                .collect();
            TOperator {
                mode: TMode::MatrixFree,
                grid: cfg.target,
                norm_estimate: 0.0,
                series_j: series.j_max(),
                inner: TInner::MatrixFree(Box::new(MatrixFree {
                    nodes: nodes.points.clone(),
                    weights: nodes.weights.clone(),
                    radius: nodes.radius,
                    rho_grid,
                    lag_table,
                    max_lag,
                    order: cfg.laplacian_order,
                })),
            }
        }
        TMode::Dense => {
            let n = cfg.target.len();
            if n > DENSE_MAX_NODES {
                return Err(Error::Config(format!(
                    "dense T is limited to {DENSE_MAX_NODES} grid nodes, target has {n}"
                )));
            }
            let matrix = assemble_dense(&series, nodes, &cfg.target)?;
            TOperator { mode: TMode::Dense, grid: cfg.target, norm_estimate: 0.0, series_j: series.j_max(), inner: TInner::Dense { matrix, n } }
        }
    };
    op.norm_estimate = op.estimate_norm(cfg.power_iters);
    Ok(op)
}

/// 12³ nodes: a 24 MB matrix.
pub const DENSE_MAX_NODES: usize = 1728;

/// `F₀` with the measurement node set, used by the dense assembly.
fn f0_nodes(series: &SeriesKernel, nodes: &SphereNodes, x: [f64; 3], y: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for (xi, w) in nodes.points.iter().zip(&nodes.weights) {
        let ry = dist(*xi, y);
        acc += w * series.eval(dist(*xi, x) - ry, ry);
    }
    -acc / (8.0 * PI * PI * nodes.radius)
}

fn ft_nodes(series: &SeriesKernel, nodes: &SphereNodes, x: [f64; 3], y: [f64; 3], h: [f64; 3]) -> f64 {
    let c = f0_nodes(series, nodes, x, y);
    let mut s = 0.0;
    for a in 0..3 {
        let mut p = x;
        p[a] += h[a];
        let plus = f0_nodes(series, nodes, p, y);
        p[a] -= 2.0 * h[a];
        let minus = f0_nodes(series, nodes, p, y);
        s += (plus + minus - 2.0 * c) / (h[a] * h[a]);
    }
    s
}

fn assemble_dense(series: &SeriesKernel, nodes: &SphereNodes, grid: &GridSpec) -> Result<Vec<f64>> {
    let n = grid.len();
    let [n0, n1, n2] = grid.dims;
    let pts: Vec<[f64; 3]> = (0..n0)
        .flat_map(|i| (0..n1).flat_map(move |j| (0..n2).map(move |k| grid.point(i, j, k))))
        .collect();
    let h = grid.spacing;
    let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let dv = grid.cell_volume();
    let rows: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|&x| {
            pts.iter()
                .map(|&y| {
                    if dist(x, y) < 2.0 * hmin {
                        // cell average over a 3×3×3 sub-grid of the source cell
                        let mut acc = 0.0;
                        for a in [-1.0, 0.0, 1.0] {
                            for b in [-1.0, 0.0, 1.0] {
                                for c in [-1.0, 0.0, 1.0] {
                                    let ys = [y[0] + a * h[0] / 3.0, y[1] + b * h[1] / 3.0, y[2] + c * h[2] / 3.0];
                                    acc += ft_nodes(series, nodes, x, ys, h);
                                }
                            }
                        }
                        acc / 27.0 * dv
                    } else {
                        ft_nodes(series, nodes, x, y, h) * dv
                    }
                })
                .collect()
        })
        .collect();
    debug_assert_eq!(rows.len(), n);
    Ok(rows.concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolverKind {
    Neumann,
    Richardson,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeumannReport {
    pub solver: SolverKind,
    pub iterations: usize,
    /// `‖h_{k+1} − h_k‖ / ‖rhs‖` per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub norm_estimate: f64,
}

impl NeumannReport {
    /// Geometric mean of successive residual ratios after the first step.
    pub fn mean_contraction(&self) -> f64 {
        let r = &self.residuals;
        if r.len() < 3 {
            return f64::NAN;
        }
        let k = r.len() - 1;
        (r[k] / r[1]).powf(1.0 / (k - 1) as f64)
    }
}

/// `h_{k+1} = rhs − T h_k` from `h₀ = rhs`; Richardson with damping `1/(1+ρ)` when `ρ ≥ 1`.
pub fn neumann_solve(t: &TOperator, rhs: &VolumeGrid, cfg: &SphereReconConfig) -> Result<(VolumeGrid, NeumannReport)> {
    let rhs_norm = rhs.norm();
    let richardson = t.norm_estimate >= 1.0;
    let solver = if richardson { SolverKind::Richardson } else { SolverKind::Neumann };
    let mut report = NeumannReport {
        solver,
        iterations: 0,
        residuals: Vec::new(),
        converged: false,
        norm_estimate: t.norm_estimate,
    };
    if t.is_zero() || rhs_norm == 0.0 {
        report.iterations = 1;
        report.residuals.push(0.0);
        report.converged = true;
        return Ok((rhs.clone(), report));
    }
    let damping = if richardson { 1.0 / (1.0 + t.norm_estimate) } else { 1.0 };
    let mut h = rhs.clone();
    for it in 0..cfg.neumann_max_iter {
        let th = t.apply(&h)?;
        let next: Vec<f64> = if richardson {
            h.values
                .iter()
                .zip(&rhs.values)
                .zip(&th.values)
                .map(|((hv, r), tv)| hv + damping * (r - hv - tv))
                .collect()
        } else {
            rhs.values.iter().zip(&th.values).map(|(r, tv)| r - tv).collect()
        };
        let diff: f64 = next.iter().zip(&h.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / rhs_norm;
        h.values = next;
        report.residuals.push(diff);
        report.iterations = it + 1;
        if !diff.is_finite() {
            break;
        }
        if diff <= cfg.neumann_tol {
            report.converged = true;
            return Ok((h, report));
        }
    }
    Err(Error::NotConverged { residuals: report.residuals })
}

#[derive(Clone, Debug, Serialize)]
pub struct SphereReconReport {
    pub neumann: NeumannReport,
    pub series_j: usize,
}

/// `h = (I + T)⁻¹ B_p M q^a`. Returns the corrected volume, the uncorrected `h^a`, and a report.
pub fn reconstruct_sphere(
    meas: &SphereMeasurement,
    model: &AttenuationModel,
    cfg: &SphereReconConfig,
) -> Result<(VolumeGrid, VolumeGrid, SphereReconReport)> {
    let ha = fbp_backproject(meas, model, cfg)?;
    let t = assemble_t(model, &meas.node_set(), cfg)?;
    let (h, neumann) = neumann_solve(&t, &ha, cfg)?;
    Ok((h, ha, SphereReconReport { neumann, series_j: t.series_j }))
}
