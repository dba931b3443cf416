use attenopat::attenuation::{rj_boundedness_report, AttenuationModel, KappaStar};
use attenopat::forward::{simulate_q_unattenuated, simulate_qa_kernel, KernelSimConfig, SphereSpec, SurfaceSpec};
use attenopat::phantom::{Blob, GridSpec, Phantom};
use attenopat::quadrature::{gauss_legendre, SphereNodes};
use attenopat::recon_sphere::{reconstruct_sphere, SphereReconConfig};
use attenopat::transforms::{
    dft_forward, dft_inverse, fourier_laplace_eval, Axis, AxisLabel, SpectralField, UniformGrid1D,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> impl Strategy<Value = AttenuationModel> {
    (0.0..0.3f64, -0.2..0.0f64, 0.2..3.0f64, 0.5..2.0f64).prop_map(|(kinf, alpha, beta, c)| {
        AttenuationModel::new(c, kinf, KappaStar::causal_rational(alpha, beta)).unwrap()
    })
}

fn random_field(dims: &[usize], seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [AxisLabel::T, AxisLabel::Xi1, AxisLabel::Xi2];
    let axes: Vec<Axis> = dims
        .iter()
        .zip(labels)
        .map(|(&n, l)| Axis::physical(UniformGrid1D::new(-0.3 * n as f64, 0.6, n).unwrap(), l))
        .collect();
    let count: usize = dims.iter().product();
    let vals = (0..count).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    SpectralField::new(axes, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kappa_reflection_symmetry(m in model(), w in -50.0..50.0f64) {
        let a = m.eval_kappa(Complex64::new(w, 0.0)).unwrap();
        let b = m.eval_kappa(Complex64::new(-w, 0.0)).unwrap();
        prop_assert_eq!(b, -a.conj());
    }

    #[test]
    fn kappa_inverse_round_trip(m in model(), re in -30.0..30.0f64, im in 0.0..3.0f64) {
        let z = Complex64::new(re, im);
        let w = m.eval_kappa_inverse(z).unwrap();
        let back = m.eval_kappa(w).unwrap_or_else(|_| m.kappa(w));
        prop_assert!((back - z).norm() <= 10.0 * m.newton_tol * z.norm().max(1.0), "{z} -> {w} -> {back}");
    }

    #[test]
    fn dft_round_trip_and_parseval(n1 in 2usize..24, n2 in 2usize..24, n3 in 2usize..12, seed in any::<u64>()) {
        let f = random_field(&[n1, n2, n3], seed);
        let g = dft_forward(&f, &[0, 1, 2]).unwrap();
        let back = dft_inverse(&g, &[0, 1, 2]).unwrap();
        let err = f.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12 * f.norm().max(1.0), "round trip {err:e}");
        let (p, q) = (f.weighted_norm(), g.weighted_norm());
        prop_assert!((p - q).abs() <= 1e-10 * p, "parseval {p} vs {q}");
    }

    #[test]
    fn dft_single_axis_round_trip(n in 2usize..200, axis in 0usize..2, seed in any::<u64>()) {
        let f = random_field(&[n, 5], seed);
        let back = dft_inverse(&dft_forward(&f, &[axis]).unwrap(), &[axis]).unwrap();
        let err = f.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn laplace_eval_matches_dft_on_grid(center in 2.5..4.0f64, width in 0.15..0.4f64, k in 0usize..40) {
        let g = UniformGrid1D::new(0.0, 0.02, 400).unwrap();
        let trace: Vec<f64> = g.points().iter().map(|t| (-(t - center).powi(2) / (2.0 * width * width)).exp()).collect();
        let field = SpectralField::from_real(vec![Axis::physical(g, AxisLabel::T)], &trace).unwrap();
        let spec = dft_forward(&field, &[0]).unwrap();
        let wg = spec.axes[0].grid;
        let idx = wg.n / 2 + k;
        let direct = fourier_laplace_eval(&trace, &g, Complex64::new(wg.at(idx), 0.0)).unwrap();
        prop_assert!((direct - spec.values[idx]).norm() <= 1e-8, "{direct} vs {}", spec.values[idx]);
    }

    #[test]
    fn rj_kernels_are_causal(alpha in -0.2..-0.01f64, beta in 0.5..2.0f64, kinf in 0.0..0.2f64) {
        let m = AttenuationModel::new(1.0, kinf, KappaStar::causal_rational(alpha, beta)).unwrap();
        let grid = UniformGrid1D::new(-25.6, 0.05, 1025).unwrap();
        for k in &m.rj_kernels(4, &grid).unwrap()[1..] {
            let r = rj_boundedness_report(k);
            prop_assert!(r.causal_leak_fraction <= 1e-6, "j = {}: leak {:e}", r.j, r.causal_leak_fraction);
        }
    }

    #[test]
    fn blob_positive_with_gaussian_tail(
        c in prop::array::uniform3(-1.0..1.0f64),
        s in 0.05..0.5f64,
        a in 0.1..10.0f64,
        dir in prop::array::uniform3(-1.0..1.0f64),
        extra in 0.0..3.0f64,
    ) {
        let p = Phantom::single(c, s, a);
        let dn = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-3);
        let at = |r: f64| [c[0] + r * dir[0] / dn, c[1] + r * dir[1] / dn, c[2] + r * dir[2] / dn];
        prop_assert!(p.eval(at(extra * s)) > 0.0 || extra * extra > 1400.0);
        // outside support_radius the Gaussian tail is at most e^{-18}; past 7.5 widths it is below 1e-12
        let x = at(p.support_radius() + norm(c) + extra * s);
        prop_assert!(p.eval(x) <= (-18.0f64).exp() * a);
        let far = at((7.5 + extra) * s);
        prop_assert!(p.eval(far) < 1e-12 * a);
    }
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// `t ·` spherical mean by a Gauss–Legendre × trapezoid product rule on `|y − ξ| = t`.
fn mean_by_quadrature(p: &Phantom, t: f64, xi: [f64; 3]) -> f64 {
    let (mu, wmu) = gauss_legendre(96);
    let nphi = 192;
    let mut acc = 0.0;
    for (m, w) in mu.iter().zip(&wmu) {
        let st = (1.0 - m * m).sqrt();
        for k in 0..nphi {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / nphi as f64;
            let y = [xi[0] + t * st * phi.cos(), xi[1] + t * st * phi.sin(), xi[2] + t * m];
            acc += w * p.eval(y);
        }
    }
    t * acc / (2.0 * nphi as f64)
}

#[test]
fn spherical_mean_oracle_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let s = rng.gen_range(0.2..0.5);
        let p = Phantom::single(c, s, rng.gen_range(0.5..2.0));
        let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let d = norm([xi[0] - c[0], xi[1] - c[1], xi[2] - c[2]]);
        // radii where the sphere passes through the bulk of the blob
        let t = (d + rng.gen_range(-1.5..1.5) * s).max(0.05);
        let want = mean_by_quadrature(&p, t, xi);
        let got = p.spherical_mean_oracle(t, xi).unwrap();
        worst = worst.max((got - want).abs() / want.abs().max(1e-300));
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

/// 90° turn about x₃: `(x, y, z) ↦ (−y, x, z)`.
const ROT: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];

#[test]
fn sphere_reconstruction_is_rotation_equivariant() {
    let m = AttenuationModel::new(1.0, 0.1, KappaStar::causal_rational(-0.05, 1.0)).unwrap();
    let blobs = [Blob::new([0.3, -0.1, 0.1], 0.2, 1.0), Blob::new([-0.2, 0.35, -0.15], 0.22, 0.5)];
    let turned: Vec<Blob> = blobs
        .iter()
        .map(|b| Blob::new([-b.center[1], b.center[0], b.center[2]], b.width, b.amplitude))
        .collect();
    let p = Phantom::new(blobs.to_vec()).unwrap();
    let pr = Phantom::new(turned).unwrap();
    let nodes = SphereNodes::fibonacci(400, 2.0).unwrap();
    let t_grid = UniformGrid1D::span(0.0, 4.0, 256).unwrap();
    let spec = SphereSpec { nodes: nodes.clone(), t_grid };
    let spec_r = SphereSpec { nodes: nodes.rotated(&ROT), t_grid };
    let n = 13;
    let cfg = SphereReconConfig { target: GridSpec::cube(0.8, n).unwrap(), ..Default::default() };
    let kcfg = KernelSimConfig::default();

    for model in [AttenuationModel::lossless(), m] {
        let (q, qr) = if model.is_lossless() {
            (
                simulate_q_unattenuated(&p, &SurfaceSpec::Sphere(spec.clone())).unwrap(),
                simulate_q_unattenuated(&pr, &SurfaceSpec::Sphere(spec_r.clone())).unwrap(),
            )
        } else {
            (
                simulate_qa_kernel(&p, &model, &SurfaceSpec::Sphere(spec.clone()), &kcfg).unwrap(),
                simulate_qa_kernel(&pr, &model, &SurfaceSpec::Sphere(spec_r.clone()), &kcfg).unwrap(),
            )
        };
        let (q, qr) = (q.into_sphere().unwrap(), qr.into_sphere().unwrap());
        let (h, _, _) = reconstruct_sphere(&q, &model, &cfg).unwrap();
        let (hr, _, _) = reconstruct_sphere(&qr, &model, &cfg).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((hr.get(n - 1 - j, i, k) - h.get(i, j, k)).abs());
                }
            }
        }
        let peak = h.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6 * peak, "kappa_inf {}: rotation mismatch {worst:e} of peak {peak:e}", model.kappa_inf);
    }
}
