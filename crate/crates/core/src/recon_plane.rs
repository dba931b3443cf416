//! Planar-geometry inversion through the inverse dispersion map, and the spectral
//! operators `R*`, `E` and the cone projection.
//!
//! With `q` measured on `x₃ = 0` and `h` supported in `x₃ > 0`,
//! `𝓕h(σ, ϱ) = −2iϱ · 𝓕q^a(κ⁻¹(sgn ϱ·√(ϱ² + |σ|²)), σ)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attenuation::AttenuationModel;
use crate::error::{Error, Result};
use crate::forward::PlaneMeasurement;
use crate::phantom::{GridSpec, VolumeGrid};
use crate::transforms::{
    dft_forward, dft_inverse, fourier_laplace_eval_complex, lagrange4, lagrange4_deriv, Axis, AxisLabel, SpectralField,
    UniformGrid1D, C64,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneReconConfig {
    /// `x₁₂` period must equal the measurement `ξ` period, with no more samples than the data.
    pub target: GridSpec,
    /// Largest `|(σ, ϱ)|` kept; `None` keeps the whole grid.
    pub freq_cutoff: Option<f64>,
    /// Frequencies with `e^{|im κ⁻¹(ω*)|·T}` above this are zeroed.
    pub growth_budget: f64,
    /// Raised-cosine taper width in `|ω*| − |σ|` next to the cone boundary; 0 disables it.
    pub damping: f64,
}

impl Default for PlaneReconConfig {
    fn default() -> Self {
        Self {
            target: GridSpec { origin: [-4.0, -4.0, 0.0], spacing: [0.125, 0.125, 4.0 / 64.0], dims: [64, 64, 64] },
            freq_cutoff: None,
            growth_budget: 1e6,
            damping: 0.0,
        }
    }
}

impl PlaneReconConfig {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if !(self.growth_budget >= 1.0) {
            return Err(Error::Config(format!("growth_budget must be >= 1, got {}", self.growth_budget)));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(Error::Config("damping must be finite and non-negative".into()));
        }
        if let Some(c) = self.freq_cutoff {
            if !(c > 0.0) {
                return Err(Error::Config("freq_cutoff must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PlaneReconReport {
    pub evaluated: usize,
    pub zeroed_growth: usize,
    pub zeroed_inverse: usize,
    pub zeroed_cutoff: usize,
    /// `‖im h‖ / ‖re h‖` before the imaginary part is dropped.
    pub imag_residue: f64,
}

/// Exact planar inversion.
pub fn reconstruct_plane(
    meas: &PlaneMeasurement,
    model: &AttenuationModel,
    cfg: &PlaneReconConfig,
) -> Result<(VolumeGrid, PlaneReconReport)> {
    model.validate()?;
    if model.kappa_inf == 0.0 && model.kappa_star.is_zero() {
        return reconstruct_plane_classical(meas, model.c, cfg);
    }
    reconstruct_with(meas, cfg, |w| model.eval_kappa_inverse(C64::new(w, 0.0)))
}

/// Unattenuated inversion, `κ⁻¹(ω) = c·ω`.
pub fn reconstruct_plane_classical(
    meas: &PlaneMeasurement,
    c: f64,
    cfg: &PlaneReconConfig,
) -> Result<(VolumeGrid, PlaneReconReport)> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidInput(format!("wave speed must be positive, got {c}")));
    }
    reconstruct_with(meas, cfg, |w| Ok(C64::new(c * w, 0.0)))
}

/// Index offset from target spectral index to data spectral index along one `ξ` axis.
fn band_offset(data: &UniformGrid1D, n_t: usize, dx_t: f64, axis: usize) -> Result<usize> {
    let period_d = data.n as f64 * data.step;
    let period_t = n_t as f64 * dx_t;
    if (period_d - period_t).abs() > 1e-9 * period_d {
        return Err(Error::GridMismatch(format!(
            "target x{} period {period_t} differs from measurement period {period_d}",
            axis + 1
        )));
    }
    if n_t > data.n {
        return Err(Error::GridMismatch(format!("target x{} has more samples than the data", axis + 1)));
    }
    Ok(data.n / 2 - n_t / 2)
}

fn reconstruct_with<F>(meas: &PlaneMeasurement, cfg: &PlaneReconConfig, inv: F) -> Result<(VolumeGrid, PlaneReconReport)>
where
    F: Fn(f64) -> Result<C64> + Sync,
{
    cfg.validate()?;
    let tg = meas.t_grid;
    if meas.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("measurement contains non-finite values".into()));
    }
    let [n1, n2, n3] = cfg.target.dims;
    let off1 = band_offset(&meas.xi1, n1, cfg.target.spacing[0], 0)?;
    let off2 = band_offset(&meas.xi2, n2, cfg.target.spacing[1], 1)?;
    if let Some(cut) = cfg.freq_cutoff {
        let nyq = PI / meas.xi1.step.max(meas.xi2.step).max(tg.step);
        if cut > nyq * (1.0 + 1e-12) {
            return Err(Error::Config(format!("freq_cutoff {cut} above the measurement Nyquist {nyq}")));
        }
    }

    let x1 = UniformGrid1D::new(cfg.target.origin[0], cfg.target.spacing[0], n1)?;
    let x2 = UniformGrid1D::new(cfg.target.origin[1], cfg.target.spacing[1], n2)?;
    let x3 = UniformGrid1D::new(cfg.target.origin[2], cfg.target.spacing[2], n3)?;
    let (s1, s2, r3) = (x1.dual(), x2.dual(), x3.dual());
    let d_rho = r3.step;

    let data = SpectralField::from_real(
        vec![
            Axis::physical(tg, AxisLabel::T),
            Axis::physical(meas.xi1, AxisLabel::Xi1),
            Axis::physical(meas.xi2, AxisLabel::Xi2),
        ],
        &meas.values,
    )?;
    let q = dft_forward(&data, &[1, 2])?;
    let (nd1, nd2) = (meas.xi1.n, meas.xi2.n);
    let nt = tg.n;
    let t_end = tg.start.abs().max(tg.end().abs());
    let cut = cfg.freq_cutoff.unwrap_or(f64::INFINITY);

    // staggered ϱ lattice: ϱ_l = ϱ^c_l + Δϱ/2 never hits ϱ = 0
    let rho: Vec<f64> = (0..n3).map(|l| r3.at(l) + 0.5 * d_rho).collect();

    let columns: Vec<(Vec<C64>, PlaneReconReport)> = (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let (m1, m2) = (idx / n2, idx % n2);
            let mut rep = PlaneReconReport::default();
            let mut col = vec![C64::new(0.0, 0.0); n3];
            // the unpaired lowest row is dropped so the result stays real
            if (n1 % 2 == 0 && m1 == 0) || (n2 % 2 == 0 && m2 == 0) {
                return (col, rep);
            }
            let (d1, d2) = (m1 + off1, m2 + off2);
            let trace: Vec<C64> = (0..nt).map(|k| q.values[(k * nd1 + d1) * nd2 + d2]).collect();
            let (a, b) = (s1.at(m1), s2.at(m2));
            let s = (a * a + b * b).sqrt();
            for (l, &r) in rho.iter().enumerate() {
                let k = (r * r + s * s).sqrt();
                if k > cut {
                    rep.zeroed_cutoff += 1;
                    continue;
                }
                let w_star = r.signum() * k;
                let taper = if cfg.damping > 0.0 && k - s < cfg.damping {
                    0.5 * (1.0 - (PI * (k - s) / cfg.damping).cos())
                } else {
                    1.0
                };
                let z = match inv(w_star) {
                    Ok(z) => z,
                    Err(_) => {
                        rep.zeroed_inverse += 1;
                        continue;
                    }
                };
                if z.im < 0.0 && -z.im * t_end > cfg.growth_budget.ln() {
                    rep.zeroed_growth += 1;
                    continue;
                }
                match fourier_laplace_eval_complex(&trace, &tg, z) {
                    Ok(v) => {
                        col[l] = v * C64::new(0.0, -2.0 * r) * taper;
                        rep.evaluated += 1;
                    }
                    Err(_) => rep.zeroed_growth += 1,
                }
            }
            (col, rep)
        })
        .collect();

    let mut report = PlaneReconReport::default();
    let mut spec = vec![C64::new(0.0, 0.0); n1 * n2 * n3];
    for (idx, (col, rep)) in columns.into_iter().enumerate() {
        spec[idx * n3..(idx + 1) * n3].copy_from_slice(&col);
        report.evaluated += rep.evaluated;
        report.zeroed_growth += rep.zeroed_growth;
        report.zeroed_inverse += rep.zeroed_inverse;
        report.zeroed_cutoff += rep.zeroed_cutoff;
    }
    hermitian_symmetrize(&mut spec, [n1, n2, n3]);

    let field = SpectralField::new(
        vec![
            Axis { grid: s1, partner: x1, label: AxisLabel::Sigma1 },
            Axis { grid: s2, partner: x2, label: AxisLabel::Sigma2 },
            Axis { grid: r3, partner: x3, label: AxisLabel::Rho },
        ],
        spec,
    )?;
    let h = dft_inverse(&field, &[0, 1, 2])?;
    let demod: Vec<C64> = (0..n3).map(|l| C64::from_polar(1.0, -0.5 * d_rho * x3.at(l))).collect();
    let mut re2 = 0.0;
    let mut im2 = 0.0;
    let values: Vec<f64> = h
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let l = i % n3;
            let v = v * demod[l];
            re2 += v.re * v.re;
            im2 += v.im * v.im;
            if x3.at(l) <= 0.0 {
                0.0
            } else {
                v.re
            }
        })
        .collect();
    report.imag_residue = if re2 > 0.0 { (im2 / re2).sqrt() } else { 0.0 };
    if report.imag_residue > 1e-6 {
        return Err(Error::InvalidInput(format!("imaginary residue {:e} after inversion", report.imag_residue)));
    }
    Ok((VolumeGrid::from_values(&cfg.target, values)?, report))
}

/// `F(−σ, −ϱ) = conj F(σ, ϱ)` on a centred `σ` grid and a staggered `ϱ` grid.
fn hermitian_symmetrize(spec: &mut [C64], dims: [usize; 3]) {
    let [n1, n2, n3] = dims;
    let mirror = |m: usize, n: usize| if n.is_multiple_of(2) { (n - m) % n } else { n - 1 - m };
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            for l in 0..n3 {
                let a = (m1 * n2 + m2) * n3 + l;
                let b = (mirror(m1, n1) * n2 + mirror(m2, n2)) * n3 + (n3 - 1 - l);
                if b < a {
                    continue;
                }
                let avg = 0.5 * (spec[a] + spec[b].conj());
                spec[a] = avg;
                spec[b] = avg.conj();
            }
        }
    }
}

/// `|σ|` for every `σ` point of a field whose first axis is `ω`.
fn sigma_norms(field: &SpectralField) -> Vec<f64> {
    let sig_axes = &field.axes[1..];
    let count: usize = sig_axes.iter().map(|a| a.grid.n).product();
    (0..count)
        .map(|mut idx| {
            let mut s2 = 0.0;
            for ax in sig_axes.iter().rev() {
                let v = ax.grid.at(idx % ax.grid.n);
                s2 += v * v;
                idx /= ax.grid.n;
            }
            s2.sqrt()
        })
        .collect()
}

fn check_omega_first(field: &SpectralField) -> Result<()> {
    if field.axes.len() < 2 || field.axes[0].label != AxisLabel::Omega {
        return Err(Error::GridMismatch("expected a field over (ω, σ…) with ω first".into()));
    }
    if field.axes[1..].iter().any(|a| !a.label.is_spectral()) {
        return Err(Error::GridMismatch("σ axes must be spectral".into()));
    }
    Ok(())
}

/// Cubic interpolation of `line` at `w`; 0 outside the grid.
fn interp_line(line: &[C64], grid: &UniformGrid1D, w: f64) -> C64 {
    let n = line.len();
    let u = (w - grid.start) / grid.step;
    if !(u >= 0.0) || u > (n - 1) as f64 {
        return C64::new(0.0, 0.0);
    }
    let b = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let wt = lagrange4(u - b as f64);
    (0..4).map(|s| line[b + s] * wt[s]).sum()
}

/// Cubic interpolation at `|w| ≥ s` using only nodes with `|ω| ≥ s` on the same side.
fn interp_in_cone(line: &[C64], grid: &UniformGrid1D, w: f64, s: f64) -> C64 {
    let n = line.len() as isize;
    let u = (w - grid.start) / grid.step;
    if !(u >= 0.0) || u > (n - 1) as f64 {
        return C64::new(0.0, 0.0);
    }
    let tol = 1e-12 * grid.step;
    let mut b = (u.floor() as isize - 1).clamp(0, n - 4);
    if w >= 0.0 {
        let lo = ((s - tol - grid.start) / grid.step).ceil() as isize;
        if b < lo {
            b = lo;
        }
    } else {
        let hi = ((-s + tol - grid.start) / grid.step).floor() as isize;
        if b + 3 > hi {
            b = hi - 3;
        }
    }
    if b < 0 || b + 3 >= n {
        // too close to the grid edge for an in-cone stencil
        return interp_line(line, grid, w);
    }
    let wt = lagrange4(u - b as f64);
    (0..4).map(|k| line[b as usize + k] * wt[k]).sum()
}

/// `(𝓕R*φ)(σ, ϱ) = (1/(2i)) [𝓕φ(k, σ) − 𝓕φ(−k, σ)] / k`, `k = √(ϱ² + |σ|²)`.
///
/// Input over `(ω, σ…)`, output over `(σ…, ϱ)` on `rho`.
pub fn rstar_freq_apply(field: &SpectralField, rho: &UniformGrid1D) -> Result<SpectralField> {
    check_omega_first(field)?;
    let wg = field.axes[0].grid;
    let nw = wg.n;
    let sig = sigma_norms(field);
    let ns = sig.len();
    let nr = rho.n;
    let mut out = vec![C64::new(0.0, 0.0); ns * nr];
    out.par_chunks_mut(nr).enumerate().for_each(|(j, row)| {
        let line: Vec<C64> = (0..nw).map(|m| field.values[m * ns + j]).collect();
        let s = sig[j];
        for (l, o) in row.iter_mut().enumerate() {
            let r = rho.at(l);
            let k = (r * r + s * s).sqrt();
            *o = if k < 1e-12 * wg.step {
                // limit 2·∂_ω𝓕φ(0, σ)
                let u = -wg.start / wg.step;
                let b = (u.floor() as isize - 1).clamp(0, nw as isize - 4) as usize;
                let d = lagrange4_deriv(u - b as f64);
                let deriv: C64 = (0..4).map(|t| line[b + t] * d[t]).sum::<C64>() / wg.step;
                deriv * 2.0 / (2.0 * I)
            } else {
                (interp_in_cone(&line, &wg, k, s) - interp_in_cone(&line, &wg, -k, s)) / (2.0 * I * k)
            };
        }
    });
    let mut axes: Vec<Axis> = field.axes[1..].to_vec();
    let partner = UniformGrid1D { start: -((nr / 2) as f64) * 2.0 * PI / (nr as f64 * rho.step), step: 2.0 * PI / (nr as f64 * rho.step), n: nr };
    axes.push(Axis { grid: *rho, partner, label: AxisLabel::Rho });
    SpectralField::new(axes, out)
}

/// `(𝓕Eψ)(ω, σ) = iω ψ(sgn ω·√(ω² − |σ|²), σ)` inside the cone, 0 outside.
pub fn e_remap_apply(field: &SpectralField) -> Result<SpectralField> {
    check_omega_first(field)?;
    let wg = field.axes[0].grid;
    let nw = wg.n;
    let sig = sigma_norms(field);
    let ns = sig.len();
    let asym = evenness_violation(field)?;
    if asym > 1e-10 {
        return Err(Error::EvennessViolation(asym));
    }
    let mut out = field.clone();
    let cols: Vec<Vec<C64>> = (0..ns)
        .into_par_iter()
        .map(|j| {
            let line: Vec<C64> = (0..nw).map(|m| field.values[m * ns + j]).collect();
            let s = sig[j];
            (0..nw)
                .map(|m| {
                    let w = wg.at(m);
                    if w.abs() < s {
                        C64::new(0.0, 0.0)
                    } else {
                        let arg = w.signum() * (w * w - s * s).max(0.0).sqrt();
                        I * w * interp_line(&line, &wg, arg)
                    }
                })
                .collect()
        })
        .collect();
    for (j, col) in cols.iter().enumerate() {
        for (m, v) in col.iter().enumerate() {
            out.values[m * ns + j] = *v;
        }
    }
    out.hermitian = false;
    Ok(out)
}

/// Largest `|ψ(ω) − ψ(−ω)|` relative to `max|ψ|`, over mirrored grid pairs.
pub fn evenness_violation(field: &SpectralField) -> Result<f64> {
    check_omega_first(field)?;
    let wg = field.axes[0].grid;
    let ns = field.values.len() / wg.n;
    let scale = field.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for m in 0..wg.n {
        let w = wg.at(m);
        let u = (-w - wg.start) / wg.step;
        let mm = u.round();
        if mm < 0.0 || mm >= wg.n as f64 || (u - mm).abs() > 1e-6 {
            continue;
        }
        let mm = mm as usize;
        for j in 0..ns {
            worst = worst.max((field.values[m * ns + j] - field.values[mm * ns + j]).norm());
        }
    }
    Ok(worst / scale)
}

/// Zeroes `|ω| < |σ|`; idempotent.
pub fn cone_project(field: &SpectralField) -> Result<SpectralField> {
    check_omega_first(field)?;
    let wg = field.axes[0].grid;
    let sig = sigma_norms(field);
    let ns = sig.len();
    let mut out = field.clone();
    for m in 0..wg.n {
        let w = wg.at(m).abs();
        for (j, &s) in sig.iter().enumerate() {
            if w < s {
                out.values[m * ns + j] = C64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_q_unattenuated, PlaneSpec, SurfaceSpec};
    use crate::phantom::Phantom;

    fn small_setup() -> (PlaneMeasurement, PlaneReconConfig) {
        let p = Phantom::single([0.3, -0.2, 1.2], 0.3, 1.0);
        let spec = PlaneSpec {
            t_grid: UniformGrid1D::span(0.0, 6.0, 96).unwrap(),
            xi1: UniformGrid1D::centered(0.25, 32).unwrap(),
            xi2: UniformGrid1D::centered(0.25, 32).unwrap(),
        };
        let m = simulate_q_unattenuated(&p, &SurfaceSpec::Plane(spec)).unwrap().into_plane().unwrap();
        let cfg = PlaneReconConfig {
            target: GridSpec { origin: [-4.0, -4.0, 0.0], spacing: [0.25, 0.25, 0.25], dims: [32, 32, 16] },
            ..Default::default()
        };
        (m, cfg)
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let (mut m, cfg) = small_setup();
        m.values.iter_mut().for_each(|v| *v = 0.0);
        let (h, rep) = reconstruct_plane(&m, &AttenuationModel::lossless(), &cfg).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
        assert_eq!(rep.zeroed_growth, 0);
    }

    #[test]
    fn linear_in_data() {
        let (m, cfg) = small_setup();
        let mut m2 = m.clone();
        for (i, v) in m2.values.iter_mut().enumerate() {
            *v = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
        }
        let mut mix = m.clone();
        for ((o, a), b) in mix.values.iter_mut().zip(&m.values).zip(&m2.values) {
            *o = 2.0 * a - 0.5 * b;
        }
        let model = AttenuationModel::lossless();
        let (h1, _) = reconstruct_plane(&m, &model, &cfg).unwrap();
        let (h2, _) = reconstruct_plane(&m2, &model, &cfg).unwrap();
        let (hm, _) = reconstruct_plane(&mix, &model, &cfg).unwrap();
        let scale = hm.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for ((x, a), b) in hm.values.iter().zip(&h1.values).zip(&h2.values) {
            assert!((x - (2.0 * a - 0.5 * b)).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn cyclic_shift_covariance() {
        let (m, cfg) = small_setup();
        let mut shifted = m.clone();
        let (n1, n2) = (m.xi1.n, m.xi2.n);
        for k in 0..m.t_grid.n {
            for i in 0..n1 {
                for j in 0..n2 {
                    shifted.values[m.idx(k, (i + 1) % n1, j)] = m.values[m.idx(k, i, j)];
                }
            }
        }
        let model = AttenuationModel::lossless();
        let (h, _) = reconstruct_plane(&m, &model, &cfg).unwrap();
        let (hs, _) = reconstruct_plane(&shifted, &model, &cfg).unwrap();
        let [d1, d2, d3] = cfg.target.dims;
        let scale = h.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..d1 {
            for j in 0..d2 {
                for l in 0..d3 {
                    let a = hs.get((i + 1) % d1, j, l);
                    let b = h.get(i, j, l);
                    assert!((a - b).abs() <= 1e-6 * scale, "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn lossless_model_equals_classical_path() {
        let (m, cfg) = small_setup();
        let (a, _) = reconstruct_plane(&m, &AttenuationModel::lossless(), &cfg).unwrap();
        let (b, _) = reconstruct_plane_classical(&m, 1.0, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn rejects_mismatched_period() {
        let (m, mut cfg) = small_setup();
        cfg.target.spacing[0] = 0.2;
        assert!(matches!(reconstruct_plane(&m, &AttenuationModel::lossless(), &cfg), Err(Error::GridMismatch(_))));
    }

    fn omega_sigma_field(nw: usize, dw: f64, ns: usize, ds: f64) -> SpectralField {
        let wg = UniformGrid1D::centered(dw, nw).unwrap();
        let sg = UniformGrid1D::centered(ds, ns).unwrap();
        let axes = vec![
            Axis { grid: wg, partner: wg.dual(), label: AxisLabel::Omega },
            Axis { grid: sg, partner: sg.dual(), label: AxisLabel::Sigma1 },
            Axis { grid: sg, partner: sg.dual(), label: AxisLabel::Sigma2 },
        ];
        SpectralField::zeros(axes)
    }

    #[test]
    fn rstar_parity_rules() {
        let mut f = omega_sigma_field(64, 0.1, 8, 0.2);
        let (nw, ns) = (64, 64);
        let wg = f.axes[0].grid;
        for m in 0..nw {
            let w = wg.at(m);
            for j in 0..ns {
                f.values[m * ns + j] = C64::new((-w * w).exp(), 0.0);
            }
        }
        let rho = UniformGrid1D::new(0.05, 0.1, 10).unwrap();
        let out = rstar_freq_apply(&f, &rho).unwrap();
        assert!(out.values.iter().all(|v| v.norm() < 1e-14));

        for m in 0..nw {
            let w = wg.at(m);
            for j in 0..ns {
                f.values[m * ns + j] = C64::new(w * (-w * w).exp(), 0.0);
            }
        }
        let out = rstar_freq_apply(&f, &rho).unwrap();
        let sig = sigma_norms(&f);
        for (j, s) in sig.iter().enumerate() {
            for l in 0..rho.n {
                let k = (rho.at(l).powi(2) + s * s).sqrt();
                let line: Vec<C64> = (0..nw).map(|m| f.values[m * ns + j]).collect();
                let expect = 2.0 * interp_in_cone(&line, &wg, k, *s) / (2.0 * I * k);
                assert!((out.values[j * rho.n + l] - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn e_remap_basics() {
        let mut f = omega_sigma_field(64, 0.1, 8, 0.2);
        assert!(e_remap_apply(&f).unwrap().values.iter().all(|v| v.norm() == 0.0));
        let wg = f.axes[0].grid;
        let ns = 64;
        for m in 0..64 {
            let w = wg.at(m);
            for j in 0..ns {
                f.values[m * ns + j] = C64::new((-w * w).exp() * (1.0 + j as f64), 0.0);
            }
        }
        let e = e_remap_apply(&f).unwrap();
        let sig = sigma_norms(&f);
        for m in 0..64 {
            let w = wg.at(m);
            for (j, &s) in sig.iter().enumerate() {
                let v = e.values[m * ns + j];
                if w.abs() < s {
                    assert_eq!(v.norm(), 0.0);
                } else if (w.abs() - s).abs() < 1e-12 {
                    let psi0 = f.values[32 * ns + j];
                    assert!((v - I * w * psi0).norm() < 1e-9 * psi0.norm());
                }
            }
        }
        f.values[10 * ns] += C64::new(1e-6, 0.0);
        assert!(matches!(e_remap_apply(&f), Err(Error::EvennessViolation(_))));
    }

    #[test]
    fn cone_projection_idempotent() {
        let mut f = omega_sigma_field(32, 0.2, 8, 0.3);
        for (i, v) in f.values.iter_mut().enumerate() {
            *v = C64::new(((i * 31) % 17) as f64, ((i * 13) % 7) as f64);
        }
        let once = cone_project(&f).unwrap();
        let twice = cone_project(&once).unwrap();
        assert_eq!(once.values, twice.values);
        let again = cone_project(&once).unwrap();
        assert_eq!(again, once);
    }

    /// `φ(t, ξ) = t e^{−t²/2a²} e^{−|ξ|²/2b²}` is odd in `t`, so `R*φ` has the closed form
    /// `a²b²/(a²+b²) e^{−x₃²/2a²} e^{−|x₁₂|²/2(a²+b²)}` with `R*φ(x) = (1/2π)∫φ(|x−ξ|, ξ)/|x−ξ| dξ`.
    #[test]
    fn rstar_matches_time_domain_quadrature() {
        let (a, b): (f64, f64) = (0.7, 0.9);
        let nw = 128;
        let wg = UniformGrid1D::centered(0.12, nw).unwrap();
        let sg = UniformGrid1D::centered(2.0 * PI / 12.8, 32).unwrap();
        let xg = UniformGrid1D::centered(0.4, 32).unwrap();
        let axes = vec![
            Axis { grid: wg, partner: wg.dual(), label: AxisLabel::Omega },
            Axis { grid: sg, partner: xg, label: AxisLabel::Sigma1 },
            Axis { grid: sg, partner: xg, label: AxisLabel::Sigma2 },
        ];
        let mut f = SpectralField::zeros(axes);
        let ns = 32 * 32;
        let sig = sigma_norms(&f);
        for m in 0..nw {
            let w = wg.at(m);
            for (j, s) in sig.iter().enumerate() {
                f.values[m * ns + j] =
                    I * w * a.powi(3) * (-w * w * a * a / 2.0).exp() * b * b * (-s * s * b * b / 2.0).exp();
            }
        }
        let x3 = UniformGrid1D::centered(0.4, 32).unwrap();
        let rho = x3.dual();
        let mut out = rstar_freq_apply(&f, &rho).unwrap();
        out.axes[2].partner = x3;
        let phys = dft_inverse(&out, &[0, 1, 2]).unwrap();

        let c2 = a * a + b * b;
        let closed = |x: [f64; 3]| a * a * b * b / c2 * (-x[2] * x[2] / (2.0 * a * a)).exp() * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * c2)).exp();
        // direct quadrature of the time-domain formula in polar coordinates about x₁₂
        let quad = |x: [f64; 3]| {
            let (gx, gw) = crate::quadrature::gauss_legendre(24);
            let nphi = 64;
            let mut acc = 0.0;
            for (ir, (g, wg)) in (0..12).flat_map(|p| gx.iter().zip(&gw).map(move |t| (p, t))).map(|(p, (g, w))| (p, (*g, *w))) {
                let r = 0.75 * (ir as f64 + 0.5 * (g + 1.0));
                let dr = 0.375 * wg;
                for ip in 0..nphi {
                    let ph = 2.0 * PI * ip as f64 / nphi as f64;
                    let xi = [x[0] + r * ph.cos(), x[1] + r * ph.sin()];
                    let d = (r * r + x[2] * x[2]).sqrt();
                    let phi = d * (-d * d / (2.0 * a * a)).exp() * (-(xi[0] * xi[0] + xi[1] * xi[1]) / (2.0 * b * b)).exp();
                    acc += phi / d * r * dr * 2.0 * PI / nphi as f64;
                }
            }
            acc / (2.0 * PI)
        };
        let peak = closed([0.0; 3]);
        for &(i, j, l) in &[(16, 16, 16), (18, 15, 17), (12, 20, 19), (16, 16, 20), (21, 14, 13)] {
            let x = [xg.at(i), xg.at(j), x3.at(l)];
            let from_freq = phys.values[(i * 32 + j) * 32 + l];
            let q = quad(x);
            assert!((q - closed(x)).abs() < 1e-6 * peak, "quadrature {q} closed {}", closed(x));
            assert!(from_freq.im.abs() < 1e-8 * peak);
            assert!((from_freq.re - q).abs() < 1e-4 * peak, "{} vs {q}", from_freq.re);
        }
    }
}
