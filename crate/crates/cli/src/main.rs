use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use acgibbs::energy::{landscape_lower_probe, Energy, DELTA0};
use acgibbs::experiments::{run_main_theorem, run_verification_battery, validate_schedule, ExperimentSchedule};
use acgibbs::gaussian::{
    concentration_h1_check, concentration_sup_check, exact_sample, log_partition_ratio_21, log_partition_ratio_31,
    GaussianKind, GaussianSpec,
};
use acgibbs::sampler::{estimate_log_z, mala_chain, unadjusted_langevin, ChainConfig, ChainSample};
use acgibbs::tubular::Tubular;
use acgibbs::{assemble, build_grid, make_quartic_potential, solve_profile, Field, GridSpec, PotentialSpec};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "acgibbs", version, about = "Allen-Cahn Gibbs measure laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the transition profile and its derivatives
    Profile {
        /// `quartic` or a JSON file `{"coefficients": [c0, c1, ...]}`
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long, default_value_t = 8.0)]
        xmax: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a grid, print its bookkeeping, optionally dump the matrices
    Mesh {
        #[command(flatten)]
        grid: GridArgs,
        /// stiffness to this path, mass to `<stem>_mass.mtx` beside it
        #[arg(long)]
        dump_matrices: Option<PathBuf>,
    },
    /// Evaluate the energy of a field
    Energy {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Lower landscape probe at one or more distances
    Landscape {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        delta: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tubular coordinates of a field
    Project {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gaussian reference measures: samples or a named check
    Gaussian {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = Measure::Rho)]
        measure: Measure,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, value_enum)]
        check: Option<Check>,
        /// sup-norm level (default three coordinate standard deviations)
        #[arg(long)]
        delta: Option<f64>,
        /// H1 excess radius (default `sqrt(eps / kappa)`)
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Langevin chain and trace distance, energy and acceptance
    Mcmc {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 0.3)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Mala)]
        method: Method,
        /// ULA time step
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Thermodynamic-integration estimate of log Z
    Logz {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 12)]
        rungs: usize,
        #[arg(long, default_value_t = 4000)]
        samples_per_rung: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.15)]
        slack: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an epsilon schedule from a JSON config
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// run the verification battery instead of the tail experiment
        #[arg(long)]
        battery: bool,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long = "L", default_value_t = 2.0)]
    half_length: f64,
    #[arg(long, default_value_t = 4)]
    n: usize,
}

impl GridArgs {
    fn build(&self) -> Result<GridSpec> {
        Ok(build_grid(self.d, self.half_length, self.n)?)
    }
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    mesh_scale: f64,
}

impl ScheduleArgs {
    fn grid(&self) -> Result<GridSpec> {
        let mut s = ExperimentSchedule::default_for(vec![self.eps]);
        s.d = self.d;
        s.lambda = self.lambda;
        s.alpha = self.alpha;
        s.lambda1 = 0.5 * self.lambda.min(2.0 * self.alpha);
        s.length_scale = self.length_scale;
        s.mesh_scale = self.mesh_scale;
        Ok(validate_schedule(&s)?.rows[0].grid)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Measure {
    Nu1,
    Nu2,
    Rho,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Sup,
    H1,
    Ratio21,
    Ratio31,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Mala,
    Ula,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        _ => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_potential(name: &str) -> Result<PotentialSpec> {
    if name == "quartic" {
        return Ok(make_quartic_potential());
    }
    #[derive(serde::Deserialize)]
    struct File {
        coefficients: Vec<f64>,
    }
    let text = std::fs::read_to_string(name).with_context(|| format!("reading potential {name}"))?;
    let f: File = serde_json::from_str(&text)?;
    Ok(PotentialSpec::custom(f.coefficients)?)
}

fn load_field(path: &Path) -> Result<Field> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading field {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn mass_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_mass.mtx"))
}

fn write_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Profile {
            potential,
            xmax,
            samples,
            out,
        } => {
            if samples < 2 || !(xmax > 0.0) {
                bail!("need --samples >= 2 and --xmax > 0");
            }
            let profile = solve_profile(&load_potential(&potential)?)?;
            let mut w = csv::Writer::from_writer(output(&out)?);
            w.write_record(["x", "m", "m'", "m''"])?;
            for i in 0..samples {
                let x = -xmax + 2.0 * xmax * i as f64 / (samples - 1) as f64;
                w.serialize((x, profile.value(x), profile.derivative(x), profile.second_derivative(x)))?;
            }
            w.flush()?;
        }
        Command::Mesh { grid, dump_matrices } => {
            let g = grid.build()?;
            if let Some(path) = dump_matrices {
                let fem = assemble(&g);
                fem.stiffness.write_matrix_market(BufWriter::new(File::create(&path)?), true)?;
                let mass = mass_path(&path);
                fem.mass.write_matrix_market(BufWriter::new(File::create(&mass)?), true)?;
                log::info!("wrote {} and {}", path.display(), mass.display());
            }
            write_json(&None, &g)?;
        }
        Command::Energy { field, potential, report } => {
            let h = load_field(&field)?;
            let energy = Energy::new(Arc::new(assemble(&h.grid)), load_potential(&potential)?);
            write_json(&report, &energy.evaluate(&h))?;
        }
        Command::Landscape {
            grid,
            delta,
            trials,
            seed,
            out,
        } => {
            let g = grid.build()?;
            let fem = Arc::new(assemble(&g));
            let pot = make_quartic_potential();
            let energy = Energy::new(fem.clone(), pot.clone());
            let tubular = Tubular::new(fem, solve_profile(&pot)?);
            let mut w = csv::Writer::from_writer(output(&out)?);
            w.write_record(["delta", "c0_estimate", "min_energy"])?;
            for d in delta {
                let p = landscape_lower_probe(&energy, &tubular, d, DELTA0, trials, seed)?;
                w.serialize((p.delta, p.c0_estimate, p.min_energy))?;
            }
            w.flush()?;
        }
        Command::Project { field, potential, out } => {
            let h = load_field(&field)?;
            let tubular = Tubular::new(Arc::new(assemble(&h.grid)), solve_profile(&load_potential(&potential)?)?);
            let c = tubular.project(&h)?;
            write_json(
                &out,
                &serde_json::json!({ "xi": c.xi, "dist": c.dist, "orth_residual": c.orth_residual }),
            )?;
        }
        Command::Gaussian {
            grid,
            measure,
            eps,
            kappa,
            samples,
            check,
            delta,
            radius,
            seed,
            out,
        } => {
            let g = grid.build()?;
            let mut w = csv::Writer::from_writer(output(&out)?);
            match check {
                Some(c) => {
                    w.write_record(["check", "eps", "kappa", "value", "bound", "pass"])?;
                    let (name, value, bound, pass) = match c {
                        Check::Ratio21 => {
                            let v = log_partition_ratio_21(&g, eps)?;
                            ("ratio21", v, v, true)
                        }
                        Check::Ratio31 => {
                            let r = log_partition_ratio_31(&g, eps, kappa)?;
                            ("ratio31", r.value, r.upper, r.pass)
                        }
                        Check::Sup => {
                            let delta = delta.unwrap_or(3.0 * (eps / kappa).sqrt());
                            let r = concentration_sup_check(&g, eps, kappa, delta, samples, seed)?;
                            ("sup", r.freq, r.bound, r.pass)
                        }
                        Check::H1 => {
                            let radius = radius.unwrap_or((eps / kappa).sqrt());
                            let r = concentration_h1_check(&g, eps, kappa, radius, samples, seed)?;
                            ("h1", r.freq, r.bound, r.pass)
                        }
                    };
                    w.serialize((name, eps, kappa, value, bound, pass))?;
                    w.flush()?;
                    if !pass {
                        bail!("{name} check failed at d = {}, L = {}, n = {}, eps = {eps}, kappa = {kappa}", g.d, g.half_length, g.n);
                    }
                }
                None => {
                    let kind = match measure {
                        Measure::Nu1 => GaussianKind::Nu1 { eps },
                        Measure::Nu2 => GaussianKind::Nu2,
                        Measure::Rho => GaussianKind::Rho { eps, kappa },
                    };
                    let fem = assemble(&g);
                    let spec = GaussianSpec::new(&fem, kind)?;
                    let h1 = fem.shifted_stiffness(1.0);
                    w.write_record(["sample", "sup", "l2", "h1"])?;
                    for i in 0..samples {
                        let h = exact_sample(&spec, seed.wrapping_add(i as u64));
                        w.serialize((i, h.sup_norm(), fem.l2_sq(&h).sqrt(), h1.quad_form(&h.coeffs).sqrt()))?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::Mcmc {
            schedule,
            delta,
            samples,
            seed,
            method,
            step,
            out,
        } => {
            let g = schedule.grid()?;
            let fem = Arc::new(assemble(&g));
            let pot = make_quartic_potential();
            let energy = Energy::new(fem.clone(), pot.clone());
            let tubular = Tubular::new(fem, solve_profile(&pot)?);
            let mut config = ChainConfig::new(schedule.eps);
            config.n_samples = samples;
            config.seed = seed;
            if method == Method::Ula {
                config.step = step;
            }
            let chain: Box<dyn Iterator<Item = acgibbs::Result<ChainSample>>> = match method {
                Method::Mala => Box::new(mala_chain(config, energy, Some(&tubular))?),
                Method::Ula => Box::new(unadjusted_langevin(config, energy, Some(&tubular))?),
            };
            let mut w = csv::Writer::from_writer(output(&out)?);
            w.write_record(["iter", "dist", "energy", "accept"])?;
            let mut above = 0usize;
            let mut count = 0usize;
            for s in chain {
                let s = s?;
                let dist = tubular.dist_to_manifold(&s.field);
                above += (dist > delta) as usize;
                count += 1;
                w.serialize((s.iter, dist, s.energy, s.accepted as u8))?;
            }
            w.flush()?;
            log::info!("fraction with dist > {delta}: {}", above as f64 / count.max(1) as f64);
        }
        Command::Logz {
            schedule,
            rungs,
            samples_per_rung,
            seed,
            slack,
            out,
        } => {
            let g = schedule.grid()?;
            let est = estimate_log_z(&g, &make_quartic_potential(), schedule.eps, rungs, samples_per_rung, seed, slack)?;
            write_json(&out, &est)?;
        }
        Command::Experiment {
            config,
            out,
            csv,
            battery,
        } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let schedule: ExperimentSchedule = serde_json::from_str(&text)?;
            let report = if battery {
                run_verification_battery(&schedule)?
            } else {
                run_main_theorem(&schedule)?
            };
            report.write_json(output(&out)?)?;
            if let Some(p) = &csv {
                report.write_csv(BufWriter::new(File::create(p)?))?;
            }
            if report.hard_failure() {
                bail!("hard identity check failed");
            }
        }
    }
    Ok(())
}
