//! Gauss–Legendre rules and sphere node sets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSetKind {
    Fibonacci,
    GaussProduct,
}

/// Quadrature nodes on the sphere `|ξ| = radius`; weights sum to `4π·radius²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereNodes {
    pub radius: f64,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereNodes {
    /// Fibonacci lattice with equal weights.
    pub fn fibonacci(n: usize, radius: f64) -> Result<Self> {
        if n == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput("Fibonacci set needs n > 0 and radius > 0".into()));
        }
        let golden = PI * (3.0 - 5f64.sqrt());
        let points = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                [radius * r * phi.cos(), radius * r * phi.sin(), radius * z]
            })
            .collect();
        let w = 4.0 * PI * radius * radius / n as f64;
        Ok(Self { radius, points, weights: vec![w; n] })
    }

    /// Gauss–Legendre in `cos θ` times trapezoid in `φ`; exact for spherical harmonics of
    /// degree below `min(2·n_theta, n_phi)`.
    pub fn gauss_product(n_theta: usize, n_phi: usize, radius: f64) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput("product rule needs positive sizes and radius".into()));
        }
        let (mu, wmu) = gauss_legendre(n_theta);
        let mut points = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        let dphi = 2.0 * PI / n_phi as f64;
        for (m, wm) in mu.iter().zip(&wmu) {
            let s = (1.0 - m * m).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                points.push([radius * s * phi.cos(), radius * s * phi.sin(), radius * m]);
                weights.push(wm * dphi * radius * radius);
            }
        }
        Ok(Self { radius, points, weights })
    }

    pub fn build(kind: NodeSetKind, n: usize, radius: f64) -> Result<Self> {
        match kind {
            NodeSetKind::Fibonacci => Self::fibonacci(n, radius),
            NodeSetKind::GaussProduct => {
                let nt = ((n as f64 / 2.0).sqrt().round() as usize).max(1);
                Self::gauss_product(nt, 2 * nt, radius)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rotated(&self, rot: &[[f64; 3]; 3]) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = [0.0; 3];
                for i in 0..3 {
                    q[i] = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
                }
                q
            })
            .collect();
        Self { radius: self.radius, points, weights: self.weights.clone() }
    }

    pub fn integrate<F: Fn([f64; 3]) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }
}
