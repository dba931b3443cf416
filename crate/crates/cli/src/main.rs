use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use attenopat::attenuation::{AttenuationModel, HerglotzGrid, KappaStar};
use attenopat::forward::{
    rel_l2, simulate_q_unattenuated, simulate_qa_kernel, simulate_qa_series, verify_dispersion_relation,
    DispersionConfig, KernelSimConfig, Measurement, SphereSpec, SurfaceSpec,
};
use attenopat::io::{self, Geometry, PatgData, RunConfig, SimulationMethod};
use attenopat::phantom::{Blob, GridSpec, Phantom, VolumeGrid};
use attenopat::quadrature::SphereNodes;
use attenopat::recon_plane::reconstruct_plane;
use attenopat::recon_sphere::{reconstruct_sphere, SphereReconConfig};
use attenopat::transforms::UniformGrid1D;
use attenopat::Error;
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

#[derive(Parser)]
#[command(name = "attenopat", version, about = "Photoacoustic simulation and reconstruction in attenuating media")]
struct Cli {
    /// Worker threads; defaults to ATTENOPAT_THREADS, then to all cores.
    #[arg(long, global = true, env = "ATTENOPAT_THREADS")]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the configured phantom to a volume file.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate attenuated measurements on the configured surface.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the source volume from a measurement file.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Measurement file written by `simulate`.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON file for the solver report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Error metrics of `b` against the reference volume `a`.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the metrics as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run reduced-scale consistency checks.
    Selftest,
    /// Extract an axis-aligned plane from a volume as CSV or PGM.
    Slice {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        axis: usize,
        /// Index along `axis`; defaults to the middle plane.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, value_enum, default_value_t = SliceFormat::Csv)]
        format: SliceFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceFormat {
    Csv,
    Pgm,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            if code == 3 {
                let report = json!({ "error": format!("{e:?}"), "message": e.to_string() });
                eprintln!("{report}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn read_volume(path: &Path) -> attenopat::Result<VolumeGrid> {
    match io::read_patg(path)? {
        PatgData::Volume(v) => Ok(v),
        other => Err(Error::Format(format!("{} holds a {}, expected a volume", path.display(), other.kind_name()))),
    }
}

fn run(cli: &Cli) -> attenopat::Result<u8> {
    let verbose = cli.verbose;
    match &cli.command {
        Command::Phantom { config, out } => {
            let cfg = RunConfig::load(config)?;
            let grid = cfg.phantom_grid();
            log(verbose, format!("rasterizing {} blobs on {:?}", cfg.phantom.blobs.len(), grid.dims));
            io::write_patg(out, &PatgData::Volume(cfg.phantom.rasterize(&grid)))?;
        }
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(config)?;
            let start = Instant::now();
            let mut meas = simulate(&cfg)?;
            if let Some(n) = cfg.noise {
                io::add_noise(meas.values_mut(), n.relative_sigma, n.seed)?;
            }
            log(verbose, format!("simulated in {:.2} s", start.elapsed().as_secs_f64()));
            let data = match meas {
                Measurement::Plane(m) => PatgData::Plane(m),
                Measurement::Sphere(m) => PatgData::Sphere(m),
            };
            io::write_patg(out, &data)?;
        }
        Command::Reconstruct { config, input, out, report } => {
            let cfg = RunConfig::load(config)?;
            let start = Instant::now();
            let (h, rep) = match (io::read_patg(input)?, cfg.geometry) {
                (PatgData::Plane(m), Geometry::Plane) => {
                    let (h, r) = reconstruct_plane(&m, &cfg.model, &cfg.plane_recon_config())?;
                    (h, json!(r))
                }
                (PatgData::Sphere(m), Geometry::Sphere) => {
                    let (h, _, r) = reconstruct_sphere(&m, &cfg.model, &cfg.sphere_recon_config())?;
                    (h, json!(r))
                }
                (d, g) => {
                    return Err(Error::Config(format!("{g:?} geometry cannot reconstruct from a {}", d.kind_name())));
                }
            };
            log(verbose, format!("reconstructed in {:.2} s: {rep}", start.elapsed().as_secs_f64()));
            io::write_patg(out, &PatgData::Volume(h))?;
            if let Some(p) = report {
                std::fs::write(p, serde_json::to_string_pretty(&rep).expect("report serializes"))?;
            }
        }
        Command::Compare { a, b, out } => {
            let m = io::compare_volumes(&read_volume(a)?, &read_volume(b)?)?;
            let text = serde_json::to_string_pretty(&m).expect("metrics serialize");
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Selftest => return selftest(verbose),
        Command::Slice { input, axis, index, format, out } => {
            let v = read_volume(input)?;
            if *axis > 2 {
                return Err(Error::Config(format!("axis {axis} out of range")));
            }
            let index = index.unwrap_or(v.dims[*axis] / 2);
            match format {
                SliceFormat::Csv => std::fs::write(out, io::slice_csv(&v, *axis, index)?)?,
                SliceFormat::Pgm => std::fs::write(out, io::slice_pgm(&v, *axis, index)?)?,
            }
        }
    }
    Ok(0)
}

fn simulate(cfg: &RunConfig) -> attenopat::Result<Measurement> {
    let surface = cfg.surface()?;
    let sim = cfg.simulation;
    match sim.method {
        SimulationMethod::Auto if cfg.model.is_lossless() => simulate_q_unattenuated(&cfg.phantom, &surface),
        SimulationMethod::Auto | SimulationMethod::Kernel => {
            simulate_qa_kernel(&cfg.phantom, &cfg.model, &surface, &sim.kernel)
        }
        SimulationMethod::Series => match &surface {
            SurfaceSpec::Sphere(s) => Ok(Measurement::Sphere(simulate_qa_series(&cfg.phantom, &cfg.model, s, sim.series_j)?)),
            SurfaceSpec::Plane(_) => Err(Error::Config("the series simulator needs sphere geometry".into())),
        },
    }
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> attenopat::Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
    }
}

fn selftest(verbose: bool) -> attenopat::Result<u8> {
    let start = Instant::now();
    let model = AttenuationModel::new(1.0, 0.1, KappaStar::causal_rational(-0.05, 1.0))?;
    let p = Phantom::new(vec![Blob::new([0.2, -0.1, 0.15], 0.2, 1.0), Blob::new([-0.3, 0.25, -0.2], 0.24, 0.6)])?;
    let sphere = |n: usize, nt: usize| -> attenopat::Result<SphereSpec> {
        Ok(SphereSpec { nodes: SphereNodes::fibonacci(n, 2.0)?, t_grid: UniformGrid1D::span(0.0, 4.0, nt)? })
    };

    let mut checks = Vec::new();
    checks.push(check("herglotz", || {
        let r = model.herglotz_check(&HerglotzGrid::rectangle(20.0, 5.0, 41, 11));
        Ok((r.pass, format!("min Im kappa {:.3e}, min slope {:.3e}", r.min_im_kappa, r.min_slope)))
    }));
    checks.push(check("kappa inverse", || {
        let mut worst: f64 = 0.0;
        for re in [-6.0, -1.5, 0.3, 2.0, 7.5] {
            for im in [0.0, 0.2, 1.0] {
                let z = Complex64::new(re, im);
                let back = model.eval_kappa_inverse(model.eval_kappa(z)?)?;
                worst = worst.max((back - z).norm() / z.norm());
            }
        }
        Ok((worst <= 1e-10, format!("max rel err {worst:.2e} (<= 1e-10)")))
    }));
    checks.push(check("dispersion relation", || {
        let one = Phantom::single([0.0; 3], 0.5, 1.0);
        let omegas = [0.5, 1.0, 2.0, 4.0, 8.0];
        let r = verify_dispersion_relation(&one, &model, [5.0, 0.0, 0.0], &omegas, &DispersionConfig::default())?;
        Ok((r.max_rel_error <= 1e-6, format!("max rel err {:.2e} (<= 1e-6)", r.max_rel_error)))
    }));
    checks.push(check("kernel vs series", || {
        let spec = sphere(100, 256)?;
        let k = simulate_qa_kernel(&p, &model, &SurfaceSpec::Sphere(spec.clone()), &KernelSimConfig::default())?;
        let s = simulate_qa_series(&p, &model, &spec, 8)?;
        let e = rel_l2(k.values(), &s.values);
        Ok((e <= 1e-3, format!("rel L2 {e:.2e} (<= 1e-3)")))
    }));
    checks.push(check("lossless degeneracy", || {
        let spec = SurfaceSpec::Sphere(sphere(100, 256)?);
        let k = simulate_qa_kernel(&p, &AttenuationModel::lossless(), &spec, &KernelSimConfig::default())?;
        let u = simulate_q_unattenuated(&p, &spec)?;
        let e = rel_l2(k.values(), u.values());
        Ok((e <= 1e-3, format!("rel L2 {e:.2e} (<= 1e-3)")))
    }));
    checks.push(check("sphere reconstruction", || {
        let spec = sphere(1500, 512)?;
        let cfg = SphereReconConfig { target: GridSpec::cube(1.0, 24)?, ..Default::default() };
        let truth = p.rasterize(&cfg.target);
        let q = simulate_qa_series(&p, &model, &spec, 8)?;
        let (h, _, rep) = reconstruct_sphere(&q, &model, &cfg)?;
        let e = io::compare_volumes(&truth, &h)?.rel_l2;
        let ok = e <= 0.05 && rep.neumann.converged;
        Ok((ok, format!("rel L2 {e:.3} (<= 0.05), {} Neumann iterations", rep.neumann.iterations)))
    }));
    checks.push(check("file round trip", || {
        let v = p.rasterize(&GridSpec::cube(1.0, 8)?);
        let bytes = io::to_bytes(&PatgData::Volume(v.clone()))?;
        let back = io::from_bytes(&bytes)?;
        Ok((back == PatgData::Volume(v) && io::to_bytes(&back)? == bytes, "bit-identical".into()))
    }));

    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    log(verbose, format!("selftest finished in {:.1} s", start.elapsed().as_secs_f64()));
    if failed > 0 {
        eprintln!("{}", json!({ "error": "selftest", "failed": failed, "total": checks.len() }));
        return Ok(3);
    }
    Ok(0)
}
