//! Uniform-grid spectral transforms.
//!
//! Convention: `F f(η) = (2π)^{-n/2} ∫ f(x) e^{+iη·x} dx`, inverse with `e^{-iη·x}`.
//! Spectral axes are stored in centred order, index `m` holding frequency
//! `(m - n/2)·Δω` with `Δω = 2π/(n·Δx)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

pub type C64 = Complex64;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid1D {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl UniformGrid1D {
    pub fn new(start: f64, step: f64, n: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() {
            return Err(Error::InvalidInput(format!("grid step must be positive and finite, got {step}")));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("grid needs at least 2 samples, got {n}")));
        }
        Ok(Self { start, step, n })
    }

    /// `n` samples on `[0, t_max]` inclusive.
    pub fn span(start: f64, end: f64, n: usize) -> Result<Self> {
        Self::new(start, (end - start) / (n as f64 - 1.0), n)
    }

    /// Grid centred on zero with `n` samples; for even `n` the sample `-n/2·step` has no mirror.
    pub fn centered(step: f64, n: usize) -> Result<Self> {
        Self::new(-((n / 2) as f64) * step, step, n)
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.at(self.n - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.at(k)).collect()
    }

    /// Frequency grid dual to this one, centred order.
    pub fn dual(&self) -> UniformGrid1D {
        let dw = 2.0 * PI / (self.n as f64 * self.step);
        UniformGrid1D { start: -((self.n / 2) as f64) * dw, step: dw, n: self.n }
    }

    pub fn is_symmetric(&self) -> bool {
        (self.start + self.end()).abs() <= 1e-9 * self.step
    }

    pub fn same_as(&self, other: &UniformGrid1D) -> bool {
        self.n == other.n
            && (self.step - other.step).abs() <= 1e-12 * self.step
            && (self.start - other.start).abs() <= 1e-9 * self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisLabel {
    T,
    Xi1,
    Xi2,
    X1,
    X2,
    X3,
    Omega,
    Sigma1,
    Sigma2,
    Rho,
}

impl AxisLabel {
    pub fn dual(self) -> AxisLabel {
        use AxisLabel::*;
        match self {
            T => Omega,
            Xi1 => Sigma1,
            Xi2 => Sigma2,
            X1 => Sigma1,
            X2 => Sigma2,
            X3 => Rho,
            Omega => T,
            Sigma1 => Xi1,
            Sigma2 => Xi2,
            Rho => X3,
        }
    }

    pub fn is_spectral(self) -> bool {
        matches!(self, AxisLabel::Omega | AxisLabel::Sigma1 | AxisLabel::Sigma2 | AxisLabel::Rho)
    }
}

/// One axis of a [`SpectralField`]. `partner` is the grid on the other side of the transform,
/// so a spectral axis remembers where its physical samples lived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub grid: UniformGrid1D,
    pub partner: UniformGrid1D,
    pub label: AxisLabel,
}

impl Axis {
    pub fn physical(grid: UniformGrid1D, label: AxisLabel) -> Self {
        Axis { grid, partner: grid.dual(), label }
    }
}

/// Complex samples on a 1–3 dimensional product grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub axes: Vec<Axis>,
    pub values: Vec<C64>,
    pub hermitian: bool,
}

impl SpectralField {
    pub fn new(axes: Vec<Axis>, values: Vec<C64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::InvalidInput(format!("1 to 3 axes supported, got {}", axes.len())));
        }
        let count: usize = axes.iter().map(|a| a.grid.n).product();
        if count != values.len() {
            return Err(Error::GridMismatch(format!("{} values for {} grid points", values.len(), count)));
        }
        Ok(Self { axes, values, hermitian: false })
    }

    pub fn from_real(axes: Vec<Axis>, values: &[f64]) -> Result<Self> {
        Self::new(axes, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn zeros(axes: Vec<Axis>) -> Self {
        let count: usize = axes.iter().map(|a| a.grid.n).product();
        SpectralField { axes, values: vec![C64::new(0.0, 0.0); count], hermitian: false }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.grid.n).collect()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        let dims = self.dims();
        idx.iter().zip(&dims).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.values[self.index(idx)]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// L² norm weighted by the cell volume of every axis.
    pub fn weighted_norm(&self) -> f64 {
        let cell: f64 = self.axes.iter().map(|a| a.grid.step).product();
        self.norm() * cell.sqrt()
    }
}

/// Calls `f` on every 1D line of a row-major array along `axis`.
pub(crate) fn for_each_line<F>(values: &mut [C64], dims: &[usize], axis: usize, mut f: F)
where
    F: FnMut(&mut [C64]),
{
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut line = vec![C64::new(0.0, 0.0); n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for k in 0..n {
                line[k] = values[base + k * inner];
            }
            f(&mut line);
            for k in 0..n {
                values[base + k * inner] = line[k];
            }
        }
    }
}

fn check_axes(field: &SpectralField, axes: &[usize]) -> Result<()> {
    for &a in axes {
        if a >= field.axes.len() {
            return Err(Error::GridMismatch(format!("axis {a} out of range for {}-d field", field.axes.len())));
        }
    }
    Ok(())
}

/// Forward transform along the listed axes (physical → spectral).
pub fn dft_forward(field: &SpectralField, axes: &[usize]) -> Result<SpectralField> {
    check_axes(field, axes)?;
    for &a in axes {
        if field.axes[a].label.is_spectral() {
            return Err(Error::GridMismatch(format!("axis {a} is already spectral")));
        }
    }
    let mut out = field.clone();
    let dims = field.dims();
    let mut planner = FftPlanner::<f64>::new();
    for &a in axes {
        let x = field.axes[a].grid;
        let w = x.dual();
        let n = x.n;
        let h = n / 2;
        // The unnormalised inverse FFT computes Σ_k f_k e^{+2πi mk/n}.
        let fft = planner.plan_fft_inverse(n);
        let scale: Vec<C64> = (0..n)
            .map(|m| C64::from_polar(x.step / SQRT_2PI, w.at(m) * x.start))
            .collect();
        let mut tmp = vec![C64::new(0.0, 0.0); n];
        for_each_line(&mut out.values, &dims, a, |line| {
            fft.process(line);
            for m in 0..n {
                tmp[m] = line[(m + n - h) % n] * scale[m];
            }
            line.copy_from_slice(&tmp);
        });
        out.axes[a] = Axis { grid: w, partner: x, label: field.axes[a].label.dual() };
    }
    Ok(out)
}

/// Inverse transform along the listed axes (spectral → physical).
pub fn dft_inverse(field: &SpectralField, axes: &[usize]) -> Result<SpectralField> {
    check_axes(field, axes)?;
    for &a in axes {
        if !field.axes[a].label.is_spectral() {
            return Err(Error::GridMismatch(format!("axis {a} is not spectral")));
        }
    }
    let mut out = field.clone();
    let dims = field.dims();
    let mut planner = FftPlanner::<f64>::new();
    for &a in axes {
        let w = field.axes[a].grid;
        let x = field.axes[a].partner;
        let n = w.n;
        if x.n != n {
            return Err(Error::GridMismatch("partner grid length differs".into()));
        }
        let h = n / 2;
        let fft = planner.plan_fft_forward(n);
        let pre: Vec<C64> = (0..n).map(|m| C64::from_polar(1.0, -w.at(m) * x.start)).collect();
        // After removing the start phase, frequency index m contributes e^{-2πi (m-h) k/n}.
        let post: Vec<C64> = (0..n)
            .map(|k| C64::from_polar(w.step / SQRT_2PI, 2.0 * PI * (h as f64) * (k as f64) / n as f64))
            .collect();
        let mut tmp = vec![C64::new(0.0, 0.0); n];
        for_each_line(&mut out.values, &dims, a, |line| {
            for m in 0..n {
                tmp[m] = line[m] * pre[m];
            }
            fft.process(&mut tmp);
            for k in 0..n {
                line[k] = tmp[k] * post[k];
            }
        });
        out.axes[a] = Axis { grid: x, partner: w, label: field.axes[a].label.dual() };
    }
    out.hermitian = false;
    Ok(out)
}

/// Transform of a real time trace sampled on `grid`, evaluated at an arbitrary complex frequency:
/// `(1/√(2π)) Σ_k w_k f(t_k) e^{i z t_k} Δt` with trapezoid end weights.
pub fn fourier_laplace_eval(trace: &[f64], grid: &UniformGrid1D, z: C64) -> Result<C64> {
    guard_growth(grid, z)?;
    let n = trace.len().min(grid.n);
    let step = C64::new(0.0, 1.0) * z * grid.step;
    let ratio = step.exp();
    let mut phase = (C64::new(0.0, 1.0) * z * grid.start).exp();
    let mut acc = C64::new(0.0, 0.0);
    for (k, &v) in trace[..n].iter().enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        acc += phase * (w * v);
        phase *= ratio;
    }
    Ok(acc * (grid.step / SQRT_2PI))
}

/// Complex-trace variant used when the trace is already a spatial spectrum.
pub fn fourier_laplace_eval_complex(trace: &[C64], grid: &UniformGrid1D, z: C64) -> Result<C64> {
    guard_growth(grid, z)?;
    let n = trace.len().min(grid.n);
    let ratio = (C64::new(0.0, 1.0) * z * grid.step).exp();
    let mut phase = (C64::new(0.0, 1.0) * z * grid.start).exp();
    let mut acc = C64::new(0.0, 0.0);
    for (k, &v) in trace[..n].iter().enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        acc += phase * v * w;
        phase *= ratio;
    }
    Ok(acc * (grid.step / SQRT_2PI))
}

fn guard_growth(grid: &UniformGrid1D, z: C64) -> Result<()> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidInput("non-finite frequency".into()));
    }
    let tmax = grid.start.abs().max(grid.end().abs());
    if z.im < 0.0 && -z.im * tmax > 700.0 {
        return Err(Error::GrowthBudgetExceeded { exponent: -z.im * tmax });
    }
    Ok(())
}

/// Cubic (four-point Lagrange) interpolation of a sampled trace. Zero outside the window.
pub fn interp_trace(trace: &[f64], grid: &UniformGrid1D, t: f64) -> f64 {
    let n = trace.len().min(grid.n);
    let u = (t - grid.start) / grid.step;
    if !(u >= 0.0) || u > (n - 1) as f64 {
        return 0.0;
    }
    if n < 4 {
        let i = (u.floor() as usize).min(n - 2);
        let f = u - i as f64;
        return trace[i] * (1.0 - f) + trace[i + 1] * f;
    }
    let i = (u.floor() as usize).clamp(1, n - 3);
    let x = u - (i - 1) as f64;
    let w = lagrange4(x);
    w[0] * trace[i - 1] + w[1] * trace[i] + w[2] * trace[i + 1] + w[3] * trace[i + 2]
}

/// Weights of the cubic through nodes 0,1,2,3 evaluated at `x`.
#[inline]
pub(crate) fn lagrange4(x: f64) -> [f64; 4] {
    let a = x;
    let b = x - 1.0;
    let c = x - 2.0;
    let d = x - 3.0;
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

/// Derivative of [`lagrange4`] weights with respect to `x`.
#[inline]
pub(crate) fn lagrange4_deriv(x: f64) -> [f64; 4] {
    let a = x;
    let b = x - 1.0;
    let c = x - 2.0;
    let d = x - 3.0;
    [
        -(c * d + b * d + b * c) / 6.0,
        (c * d + a * d + a * c) / 2.0,
        -(b * d + a * d + a * b) / 2.0,
        (b * c + a * c + a * b) / 6.0,
    ]
}

/// Standard Bessel function of order one half, `√(2/π)·sin z/√z`.
pub fn bessel_j_half(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        return (2.0 / PI).sqrt() * z.sqrt() * (1.0 - z * z / 6.0);
    }
    (2.0 / PI).sqrt() * z.sin() / z.sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct HankelCheckConfig {
    /// Half-width of the Cartesian cube used for the 3D transform.
    pub extent: f64,
    /// Samples per axis of the Cartesian cube.
    pub n: usize,
    /// Radial cutoff for the Hankel integral.
    pub r_max: f64,
    /// Gauss–Legendre panels on `[0, r_max]`.
    pub panels: usize,
}

impl Default for HankelCheckConfig {
    fn default() -> Self {
        Self { extent: 10.0, n: 64, r_max: 12.0, panels: 48 }
    }
}

#[derive(Clone, Debug)]
pub struct HankelReport {
    pub k: Vec<f64>,
    /// `k^{1/2}·F f(k)` from the Cartesian quadrature.
    pub fourier_side: Vec<f64>,
    /// `∫ r^{1/2} f(r) J_{1/2}(kr) r dr`.
    pub hankel_side: Vec<f64>,
    pub max_rel_deviation: f64,
}

/// Compares both sides of the radial Hankel–Fourier identity in three dimensions,
/// `k^{1/2} F f(k) = ∫₀^∞ r^{1/2} f(r) J_{1/2}(kr) r dr`, for a radial profile `f`.
pub fn hankel_radial_check<F>(profile: F, k_grid: &[f64], cfg: &HankelCheckConfig) -> HankelReport
where
    F: Fn(f64) -> f64 + Sync,
{
    use rayon::prelude::*;
    let n = cfg.n;
    let h = 2.0 * cfg.extent / n as f64;
    let coords: Vec<f64> = (0..n).map(|i| -cfg.extent + (i as f64 + 0.5) * h).collect();
    // Values along x₁ integrated over the transverse plane once; the radial field makes
    // the transform at (k,0,0) a cosine sum over these slab totals.
    let slabs: Vec<f64> = coords
        .par_iter()
        .map(|&x1| {
            let mut s = 0.0;
            for &x2 in &coords {
                for &x3 in &coords {
                    s += profile((x1 * x1 + x2 * x2 + x3 * x3).sqrt());
                }
            }
            s
        })
        .collect();
    let (gx, gw) = gauss_legendre(16);
    let panel = cfg.r_max / cfg.panels as f64;
    let mut fourier_side = Vec::with_capacity(k_grid.len());
    let mut hankel_side = Vec::with_capacity(k_grid.len());
    let mut max_dev: f64 = 0.0;
    for &k in k_grid {
        let mut f = C64::new(0.0, 0.0);
        for (i, &x1) in coords.iter().enumerate() {
            f += C64::from_polar(slabs[i], k * x1);
        }
        let lhs = k.sqrt() * f.re * h * h * h / (2.0 * PI).powf(1.5);
        let mut rhs = 0.0;
        for p in 0..cfg.panels {
            let a = p as f64 * panel;
            for (x, w) in gx.iter().zip(&gw) {
                let r = a + 0.5 * panel * (x + 1.0);
                rhs += 0.5 * panel * w * r.sqrt() * profile(r) * bessel_j_half(k * r) * r;
            }
        }
        let scale = rhs.abs().max(lhs.abs());
        let dev = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        max_dev = max_dev.max(dev);
        fourier_side.push(lhs);
        hankel_side.push(rhs);
    }
    HankelReport { k: k_grid.to_vec(), fourier_side, hankel_side, max_rel_deviation: max_dev }
}
