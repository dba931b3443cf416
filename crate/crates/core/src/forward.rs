//! Synthetic measurements: the unattenuated oracle, the attenuated frequency-domain kernel
//! pipeline, the time-domain series pipeline, and the dispersion-relation check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::attenuation::AttenuationModel;
use crate::error::{Error, Result};
use crate::phantom::{dist, Phantom, SUPPORT_WIDTHS};
use crate::quadrature::SphereNodes;
use crate::transforms::{
    dft_forward, fourier_laplace_eval, lagrange4, Axis, AxisLabel, SpectralField, UniformGrid1D,
};

type C64 = Complex64;
const I: C64 = C64 { re: 0.0, im: 1.0 };
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSpec {
    pub t_grid: UniformGrid1D,
    pub xi1: UniformGrid1D,
    pub xi2: UniformGrid1D,
}

impl PlaneSpec {
    fn points(&self) -> Vec<[f64; 3]> {
        let mut pts = Vec::with_capacity(self.xi1.n * self.xi2.n);
        for i in 0..self.xi1.n {
            for j in 0..self.xi2.n {
                pts.push([self.xi1.at(i), self.xi2.at(j), 0.0]);
            }
        }
        pts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SphereSpec {
    pub nodes: SphereNodes,
    pub t_grid: UniformGrid1D,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceSpec {
    Plane(PlaneSpec),
    Sphere(SphereSpec),
}

impl SurfaceSpec {
    pub fn t_grid(&self) -> &UniformGrid1D {
        match self {
            SurfaceSpec::Plane(p) => &p.t_grid,
            SurfaceSpec::Sphere(s) => &s.t_grid,
        }
    }

    fn points(&self) -> Vec<[f64; 3]> {
        match self {
            SurfaceSpec::Plane(p) => p.points(),
            SurfaceSpec::Sphere(s) => s.nodes.points.clone(),
        }
    }
}

/// `q^a(t_k, ξ_ij)` on the plane `x₃ = 0`; values ordered `[t][ξ₁][ξ₂]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneMeasurement {
    pub t_grid: UniformGrid1D,
    pub xi1: UniformGrid1D,
    pub xi2: UniformGrid1D,
    pub values: Vec<f64>,
}

impl PlaneMeasurement {
    pub fn zeros(spec: &PlaneSpec) -> Self {
        Self {
            t_grid: spec.t_grid,
            xi1: spec.xi1,
            xi2: spec.xi2,
            values: vec![0.0; spec.t_grid.n * spec.xi1.n * spec.xi2.n],
        }
    }

    pub fn spec(&self) -> PlaneSpec {
        PlaneSpec { t_grid: self.t_grid, xi1: self.xi1, xi2: self.xi2 }
    }

    #[inline]
    pub fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.xi1.n + i) * self.xi2.n + j
    }

    /// Time trace at detector `(i, j)`.
    pub fn trace(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.t_grid.n).map(|k| self.values[self.idx(k, i, j)]).collect()
    }
}

/// `q^a(t_k, ξ_i)` at sphere nodes; values ordered `[node][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereMeasurement {
    pub radius: f64,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub t_grid: UniformGrid1D,
    pub values: Vec<f64>,
}

impl SphereMeasurement {
    pub fn zeros(spec: &SphereSpec) -> Self {
        Self {
            radius: spec.nodes.radius,
            nodes: spec.nodes.points.clone(),
            weights: spec.nodes.weights.clone(),
            t_grid: spec.t_grid,
            values: vec![0.0; spec.nodes.len() * spec.t_grid.n],
        }
    }

    pub fn trace(&self, i: usize) -> &[f64] {
        let n = self.t_grid.n;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn node_set(&self) -> SphereNodes {
        SphereNodes { radius: self.radius, points: self.nodes.clone(), weights: self.weights.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.nodes.len() || self.values.len() != self.nodes.len() * self.t_grid.n {
            return Err(Error::GridMismatch("sphere measurement arrays disagree in length".into()));
        }
        for p in &self.nodes {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if (r - self.radius).abs() > 1e-12 * self.radius.max(1.0) {
                return Err(Error::InvalidInput(format!("node at radius {r}, expected {}", self.radius)));
            }
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidInput("sphere weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Measurement {
    Plane(PlaneMeasurement),
    Sphere(SphereMeasurement),
}

impl Measurement {
    pub fn values(&self) -> &[f64] {
        match self {
            Measurement::Plane(p) => &p.values,
            Measurement::Sphere(s) => &s.values,
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Measurement::Plane(p) => &mut p.values,
            Measurement::Sphere(s) => &mut s.values,
        }
    }

    pub fn into_plane(self) -> Result<PlaneMeasurement> {
        match self {
            Measurement::Plane(p) => Ok(p),
            Measurement::Sphere(_) => Err(Error::InvalidInput("expected a planar measurement".into())),
        }
    }

    pub fn into_sphere(self) -> Result<SphereMeasurement> {
        match self {
            Measurement::Sphere(s) => Ok(s),
            Measurement::Plane(_) => Err(Error::InvalidInput("expected a spherical measurement".into())),
        }
    }
}

/// Fills a measurement from per-detector traces produced by `f`.
fn assemble<F>(spec: &SurfaceSpec, f: F) -> Result<Measurement>
where
    F: Fn([f64; 3]) -> Result<Vec<f64>> + Sync,
{
    let pts = spec.points();
    let traces: Vec<Vec<f64>> = pts.par_iter().map(|&p| f(p)).collect::<Result<_>>()?;
    Ok(match spec {
        SurfaceSpec::Plane(ps) => {
            let mut m = PlaneMeasurement::zeros(ps);
            let nd = pts.len();
            for (d, tr) in traces.iter().enumerate() {
                for (k, v) in tr.iter().enumerate() {
                    m.values[k * nd + d] = *v;
                }
            }
            Measurement::Plane(m)
        }
        SurfaceSpec::Sphere(ss) => {
            let mut m = SphereMeasurement::zeros(ss);
            m.values = traces.concat();
            Measurement::Sphere(m)
        }
    })
}

fn check_geometry(phantom: &Phantom, spec: &SurfaceSpec) -> Result<()> {
    phantom.validate()?;
    match spec {
        SurfaceSpec::Plane(_) => phantom.check_half_space(),
        SurfaceSpec::Sphere(s) => phantom.check_inside_sphere(s.nodes.radius, 0.0),
    }
}

/// `q(t, ξ) = (Rh)(t, ξ)` from the closed-form spherical means.
pub fn simulate_q_unattenuated(phantom: &Phantom, spec: &SurfaceSpec) -> Result<Measurement> {
    check_geometry(phantom, spec)?;
    let tg = *spec.t_grid();
    assemble(spec, |xi| Ok((0..tg.n).map(|k| phantom.spherical_q(tg.at(k), xi)).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSimConfig {
    /// Source-grid samples per blob width.
    pub points_per_width: f64,
    /// Source grid is clipped at this many widths around each blob.
    pub truncation_widths: f64,
    /// Internal time window is this multiple of the output window (wrap-around guard).
    pub time_oversample: usize,
    /// Radial bins per time step used to group source points by distance.
    pub bins_per_step: usize,
    /// Frequencies above `bandwidth_widths·c/s_min` are dropped; the phantom carries no
    /// energy there and the source quadrature would alias.
    pub bandwidth_widths: f64,
    /// Re-run at doubled source resolution and fail if the output moves by more than 1e-3.
    pub self_check: bool,
}

impl Default for KernelSimConfig {
    fn default() -> Self {
        Self { points_per_width: 4.0, truncation_widths: 8.0, time_oversample: 2, bins_per_step: 4, bandwidth_widths: 9.0, self_check: false }
    }
}

/// Midpoint-rule source points `(y, h(y)·ΔV)`.
pub fn source_points(phantom: &Phantom, points_per_width: f64, truncation_widths: f64) -> Vec<([f64; 3], f64)> {
    if phantom.blobs.is_empty() {
        return Vec::new();
    }
    let h = phantom.min_width() / points_per_width;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for b in &phantom.blobs {
        for a in 0..3 {
            lo[a] = lo[a].min(b.center[a] - truncation_widths * b.width);
            hi[a] = hi[a].max(b.center[a] + truncation_widths * b.width);
        }
    }
    let n: Vec<usize> = (0..3).map(|a| ((hi[a] - lo[a]) / h).ceil().max(1.0) as usize).collect();
    let dv = h * h * h;
    let mut pts = Vec::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let y = [
                    lo[0] + (i as f64 + 0.5) * h,
                    lo[1] + (j as f64 + 0.5) * h,
                    lo[2] + (k as f64 + 0.5) * h,
                ];
                let inside = phantom
                    .blobs
                    .iter()
                    .any(|b| dist(y, b.center) <= truncation_widths * b.width);
                if inside {
                    let v = phantom.eval(y);
                    if v != 0.0 {
                        pts.push((y, v * dv));
                    }
                }
            }
        }
    }
    pts
}

/// `𝓕₁q^a(ω_k, ξ) = (1/(4π√(2π))) Σ_p m_p e^{iκ(ω_k)r_p}/r_p` for all `κ_k` at once, with the
/// source masses grouped on a fine radial grid by cubic deposition.
fn kernel_spectrum(xi: [f64; 3], src: &[([f64; 3], f64)], kappas: &[C64], dr: f64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); kappas.len()];
    if src.is_empty() {
        return out;
    }
    let mut rmin = f64::INFINITY;
    let mut rmax: f64 = 0.0;
    let radii: Vec<f64> = src
        .iter()
        .map(|(y, _)| {
            let r = dist(xi, *y);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            r
        })
        .collect();
    let r0 = rmin - 2.0 * dr;
    let nb = ((rmax - r0) / dr).ceil() as usize + 4;
    let mut bins = vec![0.0; nb];
    for ((_, m), &r) in src.iter().zip(&radii) {
        let u = (r - r0) / dr;
        let i = (u.floor() as usize).clamp(1, nb - 3);
        let w = lagrange4(u - (i - 1) as f64);
        for s in 0..4 {
            bins[i - 1 + s] += m * w[s];
        }
    }
    let first = bins.iter().position(|&b| b != 0.0).unwrap_or(0);
    let last = bins.iter().rposition(|&b| b != 0.0).unwrap_or(0);
    let weighted: Vec<f64> = (first..=last).map(|b| bins[b] / (r0 + b as f64 * dr)).collect();
    let ra = r0 + first as f64 * dr;
    let norm = 1.0 / (4.0 * PI * SQRT_2PI);
    for (o, &kap) in out.iter_mut().zip(kappas) {
        let ratio = (I * kap * dr).exp();
        let mut ph = (I * kap * ra).exp();
        let mut acc = C64::new(0.0, 0.0);
        for &w in &weighted {
            acc += ph * w;
            ph *= ratio;
        }
        *o = acc * norm;
    }
    out
}

/// Attenuated data from the frequency-domain Green's kernel with `κ(ω)` in the exponent,
/// followed by a discrete inverse transform in time.
pub fn simulate_qa_kernel(
    phantom: &Phantom,
    model: &AttenuationModel,
    spec: &SurfaceSpec,
    cfg: &KernelSimConfig,
) -> Result<Measurement> {
    check_geometry(phantom, spec)?;
    model.validate()?;
    let out = simulate_qa_kernel_once(phantom, model, spec, cfg)?;
    if cfg.self_check {
        let fine = KernelSimConfig { points_per_width: 2.0 * cfg.points_per_width, self_check: false, ..*cfg };
        let ref_out = simulate_qa_kernel_once(phantom, model, spec, &fine)?;
        let change = rel_l2(out.values(), ref_out.values());
        if change > 1e-3 {
            return Err(Error::QuadratureTooCoarse(change));
        }
    }
    Ok(out)
}

fn simulate_qa_kernel_once(
    phantom: &Phantom,
    model: &AttenuationModel,
    spec: &SurfaceSpec,
    cfg: &KernelSimConfig,
) -> Result<Measurement> {
    let tg = *spec.t_grid();
    let n_int = (cfg.time_oversample.max(1) * tg.n).next_power_of_two();
    let dw = 2.0 * PI / (n_int as f64 * tg.step);
    let nf = n_int / 2 + 1;
    let nf = if phantom.blobs.is_empty() {
        nf
    } else {
        let w_cut = cfg.bandwidth_widths * model.c / phantom.min_width();
        nf.min((w_cut / dw).ceil() as usize + 1)
    };
    let kappas: Vec<C64> = (0..nf).map(|k| model.kappa_real(k as f64 * dw)).collect();
    let src = source_points(phantom, cfg.points_per_width, cfg.truncation_widths);
    let dr = model.c * tg.step / cfg.bins_per_step.max(1) as f64;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_int);
    let residue = std::sync::Mutex::new((0.0f64, 0.0f64));
    let m = assemble(spec, |xi| {
        let spec_half = kernel_spectrum(xi, &src, &kappas, dr);
        let mut buf = vec![C64::new(0.0, 0.0); n_int];
        for k in 0..spec_half.len() {
            let w = k as f64 * dw;
            let v = spec_half[k] * C64::from_polar(1.0, -w * tg.start);
            if k == 0 || 2 * k == n_int {
                buf[k] = C64::new(v.re, 0.0);
            } else {
                buf[k] = v;
                buf[n_int - k] = v.conj();
            }
        }
        fft.process(&mut buf);
        let scale = dw / SQRT_2PI;
        let mut re2 = 0.0;
        let mut im2 = 0.0;
        let trace: Vec<f64> = buf[..tg.n]
            .iter()
            .map(|v| {
                re2 += (v.re * scale).powi(2);
                im2 += (v.im * scale).powi(2);
                v.re * scale
            })
            .collect();
        let mut r = residue.lock().expect("poisoned");
        r.0 += re2;
        r.1 += im2;
        Ok(trace)
    })?;
    let (re2, im2) = residue.into_inner().expect("poisoned");
    if re2 > 0.0 && (im2 / re2).sqrt() > 1e-8 {
        return Err(Error::InvalidInput(format!("imaginary residue {:e} in time traces", (im2 / re2).sqrt())));
    }
    Ok(m)
}

/// Symmetric kernel grid with the data time step covering every lag of the data window.
pub fn rj_grid_for(t_grid: &UniformGrid1D) -> UniformGrid1D {
    let half = 2 * t_grid.n;
    UniformGrid1D { start: -(half as f64) * t_grid.step, step: t_grid.step, n: 2 * half + 1 }
}

/// Attenuated sphere data from the series
/// `q^a(t) = e^{-κ∞t} Σ_j (1/j!) ∫ r_j*(τ)(t−τ)^j q(t−τ) dτ`, `r_j* = e^{κ∞τ} r_j`, `r₀ = δ`.
pub fn simulate_qa_series(
    phantom: &Phantom,
    model: &AttenuationModel,
    spec: &SphereSpec,
    j_max: usize,
) -> Result<SphereMeasurement> {
    let surf = SurfaceSpec::Sphere(spec.clone());
    check_geometry(phantom, &surf)?;
    model.validate()?;
    let tg = spec.t_grid;
    let rg = rj_grid_for(&tg);
    let kernels = model.rj_kernels(j_max, &rg)?;
    let centre = (rg.n - 1) / 2;
    // r_j*(lag·Δt) for lags −(n−1)…(n−1)
    let n = tg.n;
    let lagged: Vec<Vec<f64>> = kernels
        .iter()
        .skip(1)
        .map(|k| {
            (0..2 * n - 1)
                .map(|l| {
                    let idx = centre + l + 1 - n;
                    let tau = rg.at(idx);
                    k.values[idx].re * (model.kappa_inf * tau).exp()
                })
                .collect()
        })
        .collect();
    let mut inv_fact = vec![1.0; j_max + 1];
    for j in 1..=j_max {
        inv_fact[j] = inv_fact[j - 1] / j as f64;
    }
    let t: Vec<f64> = tg.points();
    let results: Vec<(Vec<f64>, f64, f64)> = spec
        .nodes
        .points
        .par_iter()
        .map(|&xi| {
            let q: Vec<f64> = t.iter().map(|&tt| phantom.spherical_q(tt, xi)).collect();
            let mut total = q.clone();
            let mut last_sq = 0.0;
            for j in 1..=j_max {
                let g: Vec<f64> = t.iter().zip(&q).map(|(tt, qq)| tt.powi(j as i32) * qq).collect();
                let kern = &lagged[j - 1];
                let mut term_sq = 0.0;
                for k in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        if g[m] != 0.0 {
                            acc += kern[k + n - 1 - m] * g[m];
                        }
                    }
                    let v = acc * tg.step * inv_fact[j];
                    total[k] += v;
                    term_sq += v * v;
                }
                if j == j_max {
                    last_sq = term_sq;
                }
            }
            let sum_sq: f64 = total.iter().map(|v| v * v).sum();
            for (k, v) in total.iter_mut().enumerate() {
                *v *= (-model.kappa_inf * t[k]).exp();
            }
            (total, last_sq, sum_sq)
        })
        .collect();
    let last: f64 = results.iter().map(|r| r.1).sum();
    let sum: f64 = results.iter().map(|r| r.2).sum();
    if j_max > 0 && sum > 0.0 && (last / sum).sqrt() > 1e-6 {
        return Err(Error::TruncationNotConverged((last / sum).sqrt()));
    }
    let mut out = SphereMeasurement::zeros(spec);
    out.values = results.into_iter().flat_map(|r| r.0).collect();
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct DispersionConfig {
    pub points_per_width: f64,
    pub truncation_widths: f64,
    /// Time samples per blob width for the unattenuated trace.
    pub samples_per_width: f64,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self { points_per_width: 4.0, truncation_widths: 9.0, samples_per_width: 16.0 }
    }
}

#[derive(Clone, Debug)]
pub struct DispersionReport {
    pub omegas: Vec<f64>,
    /// `𝓕₁p^a(ω, x)` from the attenuated kernel.
    pub attenuated: Vec<C64>,
    /// `ω/κ(ω) · 𝓕₁p(κ(ω), x)` from the unattenuated trace.
    pub continued: Vec<C64>,
    pub max_rel_error: f64,
}

/// Compares `𝓕₁p^a(ω, x)` with `ω/κ(ω)·𝓕₁p(κ(ω), x)`, each side from its own quadrature.
/// `ω = 0` entries are skipped.
pub fn verify_dispersion_relation(
    phantom: &Phantom,
    model: &AttenuationModel,
    x: [f64; 3],
    omega_grid: &[f64],
    cfg: &DispersionConfig,
) -> Result<DispersionReport> {
    phantom.validate()?;
    model.validate()?;
    for b in &phantom.blobs {
        if dist(x, b.center) <= SUPPORT_WIDTHS * b.width {
            return Err(Error::InvalidInput("observation point lies inside the phantom support".into()));
        }
    }
    let src = source_points(phantom, cfg.points_per_width, cfg.truncation_widths);
    let s = phantom.min_width();
    let t_max = phantom
        .blobs
        .iter()
        .map(|b| dist(x, b.center) + (cfg.truncation_widths + 2.0) * b.width)
        .fold(0.0, f64::max);
    let dt = s / cfg.samples_per_width;
    let nt = (t_max / dt).ceil() as usize + 1;
    let tg = UniformGrid1D::new(0.0, dt, nt)?;
    let trace: Vec<f64> = tg.points().iter().map(|&t| phantom.spherical_q(t, x)).collect();
    let norm = 1.0 / (4.0 * PI * SQRT_2PI);
    let mut omegas = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut max_err: f64 = 0.0;
    for &w in omega_grid {
        if w == 0.0 {
            continue;
        }
        let kap = model.eval_kappa(C64::new(w, 0.0))?;
        let fq_att: C64 = src
            .par_iter()
            .map(|(y, m)| {
                let r = dist(x, *y);
                (I * kap * r).exp() * (m / r)
            })
            .sum::<C64>()
            * norm;
        let left = -I * w * fq_att;
        let fq = fourier_laplace_eval(&trace, &tg, kap)?;
        let fp = -I * kap * fq;
        let right = fp * (w / kap);
        let err = (left - right).norm() / right.norm().max(f64::MIN_POSITIVE);
        max_err = max_err.max(err);
        omegas.push(w);
        lhs.push(left);
        rhs.push(right);
    }
    Ok(DispersionReport { omegas, attenuated: lhs, continued: rhs, max_rel_error: max_err })
}

/// Energy fraction of the space-time spectrum of planar data lying in `|ω| < |σ|`.
pub fn cone_energy_fraction(meas: &PlaneMeasurement) -> Result<f64> {
    let field = SpectralField::from_real(
        vec![
            Axis::physical(meas.t_grid, AxisLabel::T),
            Axis::physical(meas.xi1, AxisLabel::Xi1),
            Axis::physical(meas.xi2, AxisLabel::Xi2),
        ],
        &meas.values,
    )?;
    let spec = dft_forward(&field, &[0, 1, 2])?;
    let (w, s1, s2) = (spec.axes[0].grid, spec.axes[1].grid, spec.axes[2].grid);
    let mut outside = 0.0;
    let mut total = 0.0;
    for k in 0..w.n {
        for i in 0..s1.n {
            for j in 0..s2.n {
                let e = spec.values[(k * s1.n + i) * s2.n + j].norm_sqr();
                total += e;
                let sig = (s1.at(i).powi(2) + s2.at(j).powi(2)).sqrt();
                if w.at(k).abs() < sig {
                    outside += e;
                }
            }
        }
    }
    Ok(if total > 0.0 { outside / total } else { 0.0 })
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}
