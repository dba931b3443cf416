//! PATG binary files, JSON run configuration, volume metrics, slices and measurement noise.
//!
//! PATG layout, all little-endian: `"PATG"`, version `u16 = 1`, kind `u8`
//! (1 volume, 2 plane measurement, 3 sphere measurement), `ndims u8`, then per axis
//! `{origin f64, spacing f64, count u64}`. Sphere files continue with `N u64` and
//! `N × {x, y, z, w} f64`. The `f64` payload is row-major over `(t, ξ₁, ξ₂)`,
//! `(x₁, x₂, x₃)` or `[node][t]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attenuation::AttenuationModel;
use crate::error::{Error, Result};
use crate::forward::{KernelSimConfig, PlaneMeasurement, PlaneSpec, SphereMeasurement, SphereSpec, SurfaceSpec};
use crate::phantom::{GridSpec, Phantom, VolumeGrid};
use crate::quadrature::{NodeSetKind, SphereNodes};
use crate::recon_plane::PlaneReconConfig;
use crate::recon_sphere::SphereReconConfig;
use crate::transforms::UniformGrid1D;

const MAGIC: &[u8; 4] = b"PATG";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum PatgData {
    Volume(VolumeGrid),
    Plane(PlaneMeasurement),
    Sphere(SphereMeasurement),
}

impl PatgData {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PatgData::Volume(_) => "volume",
            PatgData::Plane(_) => "plane measurement",
            PatgData::Sphere(_) => "sphere measurement",
        }
    }
}

fn put_axis(buf: &mut Vec<u8>, origin: f64, spacing: f64, count: usize) {
    buf.extend_from_slice(&origin.to_le_bytes());
    buf.extend_from_slice(&spacing.to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
}

fn put_values(buf: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("refusing to write non-finite values".into()));
    }
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(data: &PatgData) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    match data {
        PatgData::Volume(v) => {
            buf.extend_from_slice(&[1u8, 3u8]);
            for a in 0..3 {
                put_axis(&mut buf, v.origin[a], v.spacing[a], v.dims[a]);
            }
            put_values(&mut buf, &v.values)?;
        }
        PatgData::Plane(m) => {
            buf.extend_from_slice(&[2u8, 3u8]);
            for g in [m.t_grid, m.xi1, m.xi2] {
                put_axis(&mut buf, g.start, g.step, g.n);
            }
            put_values(&mut buf, &m.values)?;
        }
        PatgData::Sphere(m) => {
            m.validate()?;
            buf.extend_from_slice(&[3u8, 1u8]);
            put_axis(&mut buf, m.t_grid.start, m.t_grid.step, m.t_grid.n);
            buf.extend_from_slice(&(m.nodes.len() as u64).to_le_bytes());
            let mut block = Vec::with_capacity(4 * m.nodes.len());
            for (p, w) in m.nodes.iter().zip(&m.weights) {
                block.extend_from_slice(&[p[0], p[1], p[2], *w]);
            }
            put_values(&mut buf, &block)?;
            put_values(&mut buf, &m.values)?;
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("file truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn axis(&mut self) -> Result<(f64, f64, usize)> {
        let o = self.f64()?;
        let s = self.f64()?;
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Format("axis count overflows".into()))?;
        Ok((o, s, n))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let raw = self.take(len)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("payload contains non-finite values".into()));
        }
        Ok(v)
    }
}

fn checked_product(counts: &[usize]) -> Result<usize> {
    counts
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .ok_or_else(|| Error::Format("payload size overflows".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<PatgData> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("missing PATG magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PATG version {version}")));
    }
    let kind = r.u8()?;
    let ndims = r.u8()?;
    let expect_dims = match kind {
        1 | 2 => 3,
        3 => 1,
        k => return Err(Error::Format(format!("unknown PATG kind {k}"))),
    };
    if ndims != expect_dims {
        return Err(Error::Format(format!("kind {kind} needs {expect_dims} axes, file has {ndims}")));
    }
    let axes: Vec<(f64, f64, usize)> = (0..ndims).map(|_| r.axis()).collect::<Result<_>>()?;
    let grid = |a: (f64, f64, usize)| UniformGrid1D::new(a.0, a.1, a.2).map_err(|e| Error::Format(e.to_string()));
    let data = match kind {
        1 => {
            let spec = GridSpec::new([axes[0].0, axes[1].0, axes[2].0], [axes[0].1, axes[1].1, axes[2].1], [axes[0].2, axes[1].2, axes[2].2])
                .map_err(|e| Error::Format(e.to_string()))?;
            let n = checked_product(&[axes[0].2, axes[1].2, axes[2].2])?;
            PatgData::Volume(VolumeGrid::from_values(&spec, r.values(n)?)?)
        }
        2 => {
            let spec = PlaneSpec { t_grid: grid(axes[0])?, xi1: grid(axes[1])?, xi2: grid(axes[2])? };
            let n = checked_product(&[axes[0].2, axes[1].2, axes[2].2])?;
            let mut m = PlaneMeasurement::zeros(&spec);
            m.values = r.values(n)?;
            PatgData::Plane(m)
        }
        _ => {
            let t_grid = grid(axes[0])?;
            let nn = usize::try_from(r.u64()?).map_err(|_| Error::Format("node count overflows".into()))?;
            let block = r.values(checked_product(&[nn, 4])?)?;
            let nodes: Vec<[f64; 3]> = block.chunks_exact(4).map(|c| [c[0], c[1], c[2]]).collect();
            let weights: Vec<f64> = block.chunks_exact(4).map(|c| c[3]).collect();
            if nodes.is_empty() {
                return Err(Error::Format("sphere file has no nodes".into()));
            }
            let radius = nodes.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>() / nn as f64;
            let values = r.values(checked_product(&[nn, t_grid.n])?)?;
            let m = SphereMeasurement { radius, nodes, weights, t_grid, values };
            m.validate().map_err(|e| Error::Format(e.to_string()))?;
            PatgData::Sphere(m)
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(data)
}

pub fn write_patg(path: &Path, data: &PatgData) -> Result<()> {
    let bytes = to_bytes(data)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_patg(path: &Path) -> Result<PatgData> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VolumeMetrics {
    pub rel_l2: f64,
    pub max_abs: f64,
    /// Centroid of `b` minus centroid of `a`, per axis.
    pub centroid_shift: [f64; 3],
}

fn centroid(v: &VolumeGrid) -> [f64; 3] {
    let mut m = 0.0;
    let mut c = [0.0; 3];
    for i in 0..v.dims[0] {
        for j in 0..v.dims[1] {
            for k in 0..v.dims[2] {
                let w = v.get(i, j, k);
                let p = v.spec().point(i, j, k);
                m += w;
                for a in 0..3 {
                    c[a] += w * p[a];
                }
            }
        }
    }
    if m == 0.0 {
        return [0.0; 3];
    }
    [c[0] / m, c[1] / m, c[2] / m]
}

/// `‖b − a‖/‖a‖`, `max|b − a|` and the centroid shift, with `a` as the reference.
pub fn compare_volumes(a: &VolumeGrid, b: &VolumeGrid) -> Result<VolumeMetrics> {
    if !a.spec().matches(&b.spec()) {
        return Err(Error::GridMismatch("volumes live on different grids".into()));
    }
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        let d = y - x;
        diff2 += d * d;
        ref2 += x * x;
        max_abs = max_abs.max(d.abs());
    }
    let rel_l2 = if ref2 > 0.0 {
        (diff2 / ref2).sqrt()
    } else if diff2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let (ca, cb) = (centroid(a), centroid(b));
    Ok(VolumeMetrics { rel_l2, max_abs, centroid_shift: [cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]] })
}

/// 2D slice through a volume at `index` along `axis`: the remaining two axes in order,
/// their coordinates, and values `[u][v]`.
pub fn extract_slice(vol: &VolumeGrid, axis: usize, index: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if axis > 2 || index >= vol.dims[axis] {
        return Err(Error::InvalidInput(format!("slice {index} along axis {axis} is out of range")));
    }
    let (ua, va) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let coord = |a: usize, i: usize| vol.origin[a] + i as f64 * vol.spacing[a];
    let us: Vec<f64> = (0..vol.dims[ua]).map(|i| coord(ua, i)).collect();
    let vs: Vec<f64> = (0..vol.dims[va]).map(|i| coord(va, i)).collect();
    let mut vals = Vec::with_capacity(us.len() * vs.len());
    for u in 0..us.len() {
        for v in 0..vs.len() {
            let mut idx = [0; 3];
            idx[axis] = index;
            idx[ua] = u;
            idx[va] = v;
            vals.push(vol.get(idx[0], idx[1], idx[2]));
        }
    }
    Ok((us, vs, vals))
}

/// `x,y,value` rows with 17 significant digits.
pub fn slice_csv(vol: &VolumeGrid, axis: usize, index: usize) -> Result<String> {
    let (us, vs, vals) = extract_slice(vol, axis, index)?;
    let mut out = String::from("x,y,value\n");
    for (i, u) in us.iter().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            out.push_str(&format!("{u:.16e},{v:.16e},{:.16e}\n", vals[i * vs.len() + j]));
        }
    }
    Ok(out)
}

/// Binary 16-bit PGM (P5, big-endian samples), min–max scaled; rows follow the first
/// remaining axis.
pub fn slice_pgm(vol: &VolumeGrid, axis: usize, index: usize) -> Result<Vec<u8>> {
    let (us, vs, vals) = extract_slice(vol, axis, index)?;
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n65535\n", vs.len(), us.len())?;
    for v in vals {
        let s = if range > 0.0 { ((v - lo) / range * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

/// Adds Gaussian noise with standard deviation `relative_sigma · max|q|`.
pub fn add_noise(values: &mut [f64], relative_sigma: f64, seed: u64) -> Result<()> {
    if !(relative_sigma >= 0.0) || !relative_sigma.is_finite() {
        return Err(Error::Config("noise level must be finite and non-negative".into()));
    }
    let peak = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if relative_sigma == 0.0 || peak == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, relative_sigma * peak).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values.iter_mut() {
        *v += dist.sample(&mut rng);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Plane,
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneGeometry {
    pub t_max: f64,
    pub nt: usize,
    /// Detector patch is `[-extent/2, extent/2)²`.
    pub extent: f64,
    pub n_xi: usize,
}

impl PlaneGeometry {
    pub fn spec(&self) -> Result<PlaneSpec> {
        if self.n_xi < 2 || !(self.extent > 0.0) {
            return Err(Error::Config("plane geometry needs n_xi >= 2 and a positive extent".into()));
        }
        let xi = UniformGrid1D::centered(self.extent / self.n_xi as f64, self.n_xi)?;
        Ok(PlaneSpec { t_grid: UniformGrid1D::span(0.0, self.t_max, self.nt)?, xi1: xi, xi2: xi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereGeometry {
    pub radius: f64,
    pub nodes: usize,
    #[serde(default = "default_node_set")]
    pub node_set: NodeSetKind,
    pub t_max: f64,
    pub nt: usize,
}

fn default_node_set() -> NodeSetKind {
    NodeSetKind::Fibonacci
}

impl SphereGeometry {
    pub fn spec(&self) -> Result<SphereSpec> {
        Ok(SphereSpec {
            nodes: SphereNodes::build(self.node_set, self.nodes, self.radius)?,
            t_grid: UniformGrid1D::span(0.0, self.t_max, self.nt)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMethod {
    /// Unattenuated oracle when the model is lossless, kernel otherwise.
    Auto,
    Kernel,
    Series,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub method: SimulationMethod,
    pub series_j: usize,
    pub kernel: KernelSimConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { method: SimulationMethod::Auto, series_j: 8, kernel: KernelSimConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub relative_sigma: f64,
    pub seed: u64,
}

/// One JSON document describing a full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub model: AttenuationModel,
    pub phantom: Phantom,
    #[serde(default)]
    pub plane: Option<PlaneGeometry>,
    #[serde(default)]
    pub sphere: Option<SphereGeometry>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub plane_recon: Option<PlaneReconConfig>,
    #[serde(default)]
    pub sphere_recon: Option<SphereReconConfig>,
    /// Grid for the `phantom` subcommand; defaults to the reconstruction target.
    #[serde(default)]
    pub phantom_grid: Option<GridSpec>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.phantom.validate().map_err(|e| Error::Config(e.to_string()))?;
        match self.geometry {
            Geometry::Plane => {
                let g = self.plane.ok_or_else(|| Error::Config("plane geometry needs a `plane` block".into()))?;
                g.spec().map_err(|e| Error::Config(e.to_string()))?;
                if let Some(r) = &self.plane_recon {
                    r.validate()?;
                }
            }
            Geometry::Sphere => {
                let g = self.sphere.ok_or_else(|| Error::Config("sphere geometry needs a `sphere` block".into()))?;
                if !(g.radius > 0.0) || g.nodes == 0 {
                    return Err(Error::Config("sphere needs a positive radius and node count".into()));
                }
                if let Some(r) = &self.sphere_recon {
                    r.validate()?;
                }
            }
        }
        if let Some(n) = &self.noise {
            if !(n.relative_sigma >= 0.0) || !n.relative_sigma.is_finite() {
                return Err(Error::Config("noise.relative_sigma must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn surface(&self) -> Result<SurfaceSpec> {
        match self.geometry {
            Geometry::Plane => Ok(SurfaceSpec::Plane(
                self.plane.ok_or_else(|| Error::Config("missing `plane` block".into()))?.spec()?,
            )),
            Geometry::Sphere => Ok(SurfaceSpec::Sphere(
                self.sphere.ok_or_else(|| Error::Config("missing `sphere` block".into()))?.spec()?,
            )),
        }
    }

    pub fn plane_recon_config(&self) -> PlaneReconConfig {
        self.plane_recon.unwrap_or_default()
    }

    pub fn sphere_recon_config(&self) -> SphereReconConfig {
        self.sphere_recon.unwrap_or_default()
    }

    pub fn phantom_grid(&self) -> GridSpec {
        self.phantom_grid.unwrap_or_else(|| match self.geometry {
            Geometry::Plane => self.plane_recon_config().target,
            Geometry::Sphere => self.sphere_recon_config().target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attenuation::KappaStar;

    fn volume() -> VolumeGrid {
        let spec = GridSpec::new([-1.0, -0.5, 0.25], [0.1, 0.2, 0.3], [4, 3, 5]).unwrap();
        let vals = (0..spec.len()).map(|i| (i as f64 * 0.37).sin() * 1e-3 + i as f64).collect();
        VolumeGrid::from_values(&spec, vals).unwrap()
    }

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let d = PatgData::Volume(volume());
        let bytes = to_bytes(&d).unwrap();
        assert_eq!(&bytes[..4], b"PATG");
        assert_eq!(bytes.len(), 4 + 2 + 2 + 3 * 24 + 60 * 8);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn measurement_round_trips() {
        let ps = PlaneSpec {
            t_grid: UniformGrid1D::span(0.0, 1.0, 5).unwrap(),
            xi1: UniformGrid1D::centered(0.5, 4).unwrap(),
            xi2: UniformGrid1D::centered(0.25, 3).unwrap(),
        };
        let mut pm = PlaneMeasurement::zeros(&ps);
        pm.values.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 / 7.0);
        let b = to_bytes(&PatgData::Plane(pm.clone())).unwrap();
        assert_eq!(from_bytes(&b).unwrap(), PatgData::Plane(pm));

        let ss = SphereSpec { nodes: SphereNodes::fibonacci(7, 2.0).unwrap(), t_grid: UniformGrid1D::span(0.0, 4.0, 6).unwrap() };
        let mut sm = SphereMeasurement::zeros(&ss);
        sm.values.iter_mut().enumerate().for_each(|(i, v)| *v = -(i as f64).sqrt());
        let b = to_bytes(&PatgData::Sphere(sm.clone())).unwrap();
        let back = from_bytes(&b).unwrap();
        assert_eq!(to_bytes(&back).unwrap(), b);
        match back {
            PatgData::Sphere(m) => {
                assert_eq!(m.values, sm.values);
                assert_eq!(m.nodes, sm.nodes);
                assert!((m.radius - 2.0).abs() < 1e-14);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = to_bytes(&PatgData::Volume(volume())).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(from_bytes(&nan).is_err());
    }

    #[test]
    fn compare_metrics() {
        let a = volume();
        let m = compare_volumes(&a, &a).unwrap();
        assert_eq!((m.rel_l2, m.max_abs, m.centroid_shift), (0.0, 0.0, [0.0; 3]));
        let mut b = a.clone();
        b.values.iter_mut().for_each(|v| *v *= 2.0);
        assert!((compare_volumes(&a, &b).unwrap().rel_l2 - 1.0).abs() < 1e-15);

        let spec = a.spec();
        let mut pert = a.clone();
        let mut p2 = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..5 {
                    let x = spec.point(i, j, k);
                    let g = 0.3 * (-(x[0] * x[0] + x[1] * x[1] + (x[2] - 1.0).powi(2)) / 0.5).exp();
                    let idx = pert.idx(i, j, k);
                    pert.values[idx] += g;
                    p2 += g * g;
                }
            }
        }
        let a2: f64 = a.values.iter().map(|v| v * v).sum();
        let m = compare_volumes(&a, &pert).unwrap();
        assert!((m.rel_l2 - (p2 / a2).sqrt()).abs() < 1e-12 * m.rel_l2);
        let other = VolumeGrid::zeros(&GridSpec::cube(1.0, 3).unwrap());
        assert!(compare_volumes(&a, &other).is_err());
    }

    #[test]
    fn csv_and_pgm_slices() {
        let v = volume();
        let csv = slice_csv(&v, 2, 1).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 1 + 4 * 3);
        let fields: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(fields, vec![-1.0, -0.5, v.get(0, 0, 1)]);
        let third: f64 = lines[5].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(third, v.get(1, 1, 1));
        let pgm = slice_pgm(&v, 0, 2).unwrap();
        let header = b"P5\n5 3\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 2 * 15);
        assert_eq!(&pgm[header.len()..header.len() + 2], &[0, 0]);
        assert_eq!(&pgm[pgm.len() - 2..], &[255, 255]);
        assert!(slice_csv(&v, 0, 9).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let mut a = vec![1.0; 100];
        let mut b = a.clone();
        add_noise(&mut a, 0.01, 42).unwrap();
        add_noise(&mut b, 0.01, 42).unwrap();
        assert_eq!(a, b);
        let mut c = vec![1.0; 100];
        add_noise(&mut c, 0.01, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_parsing() {
        let text = r#"{
            "geometry": "sphere",
            "model": {"c": 1.0, "kappa_inf": 0.1, "kappa_star": {"family": "rational", "alpha": -0.02, "beta": 1.0, "gamma": 0.02}},
            "phantom": [{"center": [0.1, 0.0, 0.0], "width": 0.2, "amplitude": 1.0}],
            "sphere": {"radius": 2.0, "nodes": 100, "t_max": 4.0, "nt": 128}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.model.kappa_star, KappaStar::causal_rational(-0.02, 1.0));
        assert!(matches!(cfg.surface().unwrap(), SurfaceSpec::Sphere(_)));
        let typo = text.replace("\"nt\"", "\"n_t\"");
        assert!(matches!(RunConfig::from_json(&typo), Err(Error::Config(_))));
        let extra = text.replacen('{', "{\"bogus\": 1,", 1);
        assert!(RunConfig::from_json(&extra).is_err());
        let missing = text.replace("\"geometry\": \"sphere\"", "\"geometry\": \"plane\"");
        assert!(RunConfig::from_json(&missing).is_err());
    }
}
