//! Gaussian-blob sources with closed-form spherical means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blobs are truncated at this many widths when a finite support is needed.
pub const SUPPORT_WIDTHS: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    pub center: [f64; 3],
    pub width: f64,
    pub amplitude: f64,
}

impl Blob {
    pub fn new(center: [f64; 3], width: f64, amplitude: f64) -> Self {
        Self { center, width, amplitude }
    }

    #[inline]
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let d2 = dist2(x, self.center);
        self.amplitude * (-d2 / (2.0 * self.width * self.width)).exp()
    }

    /// Mean of the blob over the sphere of radius `t` centred at distance `d` from its centre.
    pub fn sphere_mean(&self, t: f64, d: f64) -> f64 {
        let s2 = self.width * self.width;
        let x = d * t / s2;
        if x < 1e-3 {
            // sinh(x)/x series
            let shx = 1.0 + x * x / 6.0 + x.powi(4) / 120.0;
            return self.amplitude * (-(d * d + t * t) / (2.0 * s2)).exp() * shx;
        }
        self.amplitude * (-(d - t) * (d - t) / (2.0 * s2)).exp() * (-(-2.0 * x).exp_m1()) / (2.0 * x)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phantom {
    pub blobs: Vec<Blob>,
}

impl Phantom {
    pub fn new(blobs: Vec<Blob>) -> Result<Self> {
        let p = Self { blobs };
        p.validate()?;
        Ok(p)
    }

    pub fn single(center: [f64; 3], width: f64, amplitude: f64) -> Self {
        Self { blobs: vec![Blob::new(center, width, amplitude)] }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.blobs {
            if !(b.width > 0.0) || !b.width.is_finite() {
                return Err(Error::InvalidInput(format!("blob width must be positive, got {}", b.width)));
            }
            if !b.amplitude.is_finite() || b.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("blob parameters must be finite".into()));
            }
        }
        Ok(())
    }

    /// `max |center| + 6·width` over the blobs; zero for an empty phantom.
    pub fn support_radius(&self) -> f64 {
        self.blobs
            .iter()
            .map(|b| norm(b.center) + SUPPORT_WIDTHS * b.width)
            .fold(0.0, f64::max)
    }

    pub fn min_width(&self) -> f64 {
        self.blobs.iter().map(|b| b.width).fold(f64::INFINITY, f64::min)
    }

    pub fn max_amplitude(&self) -> f64 {
        self.blobs.iter().map(|b| b.amplitude.abs()).fold(0.0, f64::max)
    }

    /// Requires the source to sit strictly inside the ball of radius `radius - eps`.
    pub fn check_inside_sphere(&self, radius: f64, eps: f64) -> Result<()> {
        let r = self.support_radius();
        if r >= radius - eps {
            return Err(Error::InvalidInput(format!(
                "phantom support radius {r} must be below sphere radius {radius} minus margin {eps}"
            )));
        }
        Ok(())
    }

    pub fn check_half_space(&self) -> Result<()> {
        if self.blobs.iter().any(|b| b.center[2] <= 0.0) {
            return Err(Error::InvalidInput("planar geometry needs all blob centres at x3 > 0".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        self.blobs.iter().map(|b| b.eval(x)).sum()
    }

    /// `(Rh)(t, ξ) = t · (mean of h over the sphere of radius t about ξ)`.
    pub fn spherical_mean_oracle(&self, t: f64, xi: [f64; 3]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("sphere radius must be positive, got {t}")));
        }
        Ok(self.spherical_q(t, xi))
    }

    /// Same as [`Self::spherical_mean_oracle`] but returns 0 for `t <= 0`.
    #[inline]
    pub fn spherical_q(&self, t: f64, xi: [f64; 3]) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        t * self.blobs.iter().map(|b| b.sphere_mean(t, norm(sub(xi, b.center)))).sum::<f64>()
    }

    pub fn rasterize(&self, spec: &GridSpec) -> VolumeGrid {
        let mut g = VolumeGrid::zeros(spec);
        let [_, n1, n2] = spec.dims;
        g.values.par_chunks_mut(n1 * n2).enumerate().for_each(|(i, plane)| {
            for j in 0..n1 {
                for k in 0..n2 {
                    plane[j * n2 + k] = self.eval(spec.point(i, j, k));
                }
            }
        });
        g
    }
}

/// Axis-aligned uniform grid description (no values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let g = Self { origin, spacing, dims };
        g.validate()?;
        Ok(g)
    }

    /// `n³` nodes spanning `[-half, half]³`.
    pub fn cube(half: f64, n: usize) -> Result<Self> {
        let h = 2.0 * half / (n as f64 - 1.0);
        Self::new([-half; 3], [h; 3], [n; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("grid spacing must be positive and finite".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidInput("grid dims must be nonzero".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Same spacing, `halo` extra nodes on every side.
    pub fn inflated(&self, halo: usize) -> GridSpec {
        let h = halo as f64;
        GridSpec {
            origin: [
                self.origin[0] - h * self.spacing[0],
                self.origin[1] - h * self.spacing[1],
                self.origin[2] - h * self.spacing[2],
            ],
            spacing: self.spacing,
            dims: [self.dims[0] + 2 * halo, self.dims[1] + 2 * halo, self.dims[2] + 2 * halo],
        }
    }

    /// Largest distance from the origin of any node.
    pub fn max_radius(&self) -> f64 {
        let mut r2 = 0.0;
        for a in 0..3 {
            let lo = self.origin[a];
            let hi = self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a];
            r2 += lo.abs().max(hi.abs()).powi(2);
        }
        f64::sqrt(r2)
    }

    pub fn matches(&self, other: &GridSpec) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= 1e-12 * self.spacing[a]
                    && (self.origin[a] - other.origin[a]).abs() <= 1e-9 * self.spacing[a]
            })
    }
}

/// Real samples on a [`GridSpec`], row-major with `x₁` slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl VolumeGrid {
    pub fn zeros(spec: &GridSpec) -> Self {
        Self { origin: spec.origin, spacing: spec.spacing, dims: spec.dims, values: vec![0.0; spec.len()] }
    }

    pub fn from_values(spec: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), spec.len())));
        }
        Ok(Self { origin: spec.origin, spacing: spec.spacing, dims: spec.dims, values })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { origin: self.origin, spacing: self.spacing, dims: self.dims }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.idx(i, j, k)]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copy of the sub-block starting at `offset` with dimensions `dims`.
    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> VolumeGrid {
        let spec = GridSpec {
            origin: [
                self.origin[0] + offset[0] as f64 * self.spacing[0],
                self.origin[1] + offset[1] as f64 * self.spacing[1],
                self.origin[2] + offset[2] as f64 * self.spacing[2],
            ],
            spacing: self.spacing,
            dims,
        };
        let mut out = VolumeGrid::zeros(&spec);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let v = self.get(i + offset[0], j + offset[1], k + offset[2]);
                    let o = out.idx(i, j, k);
                    out.values[o] = v;
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    dist2(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SphereNodes;

    #[test]
    fn point_values() {
        let p = Phantom::single([0.1, -0.2, 0.3], 0.5, 2.0);
        assert_eq!(p.eval([0.1, -0.2, 0.3]), 2.0);
        let v = p.eval([0.6, -0.2, 0.3]);
        assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        let two = Phantom::new(vec![Blob::new([-1.0, 0.0, 0.0], 1.0, 1.0), Blob::new([1.0, 0.0, 0.0], 0.5, 3.0)]).unwrap();
        let mid = two.eval([0.0, 0.0, 0.0]);
        assert!((mid - ((-0.5f64).exp() + 3.0 * (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn centered_mean_collapses() {
        let p = Phantom::single([0.0; 3], 0.4, 1.5);
        for &t in &[0.05, 0.3, 1.1] {
            let q = p.spherical_mean_oracle(t, [0.0; 3]).unwrap();
            assert!((q - t * 1.5 * (-t * t / 0.32f64).exp()).abs() < 1e-14);
        }
        assert!(p.spherical_mean_oracle(0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn small_radius_limit() {
        let p = Phantom::single([0.3, 0.1, -0.2], 0.5, 1.0);
        let xi = [0.5, 0.4, 0.0];
        let t = 1e-7;
        let q = p.spherical_mean_oracle(t, xi).unwrap();
        assert!((q / t - p.eval(xi)).abs() < 1e-9);
    }

    #[test]
    fn off_center_matches_quadrature() {
        let p = Phantom::single([0.0, 0.0, 2.0], 0.5, 1.0);
        let rule = SphereNodes::gauss_product(60, 120, 1.0).unwrap();
        let mean = rule.integrate(|e| p.eval(e)) / (4.0 * std::f64::consts::PI);
        let q = p.spherical_mean_oracle(1.0, [0.0; 3]).unwrap();
        assert!((q - mean).abs() < 1e-10 * mean.abs(), "{q} {mean}");
    }

    #[test]
    fn rasterized_norm() {
        let s = 0.3;
        let p = Phantom::single([0.0; 3], s, 1.0);
        let h = s / 4.0;
        let spec = GridSpec::cube(2.4, 65).unwrap();
        assert!(spec.spacing[0] <= h);
        let g = p.rasterize(&spec);
        let l2 = (g.norm().powi(2) * spec.cell_volume()).sqrt();
        // ∫ e^{-|x|²/s²} dx = (s√π)³
        let exact = (s * std::f64::consts::PI.sqrt()).powf(1.5);
        assert!((l2 - exact).abs() < 0.01 * exact);
        let zero = Phantom::default().rasterize(&spec);
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let one = p.rasterize(&GridSpec::new([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap());
        assert_eq!(one.values[0], 1.0);
    }
}
