//! `cyldimer`: seeded, reproducible dimer experiments on cylinders.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cyldimer::elliptic::{theta1, theta3, EllipticContext};
use cyldimer::experiment::{self, ExperimentConfig, ExperimentKind};
use cyldimer::io::{write_coupling_csv, write_covers};
use cyldimer::Error;
use num_complex::Complex64;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cyldimer", version, about = "Dimer height statistics on cylinders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML, or JSON when the name ends in `.json`).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, value_name = "N", env = "CYLDIMER_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a domain and report its cover count and face products.
    Validate(Common),
    /// Draw uniform dimer covers.
    Sample(Common),
    /// Exact and sampled height moments with the fitted prediction.
    Moments(Common),
    /// Dump the full coupling table as CSV.
    Couplings(Common),
    /// Elliptic moment and cumulant predictions for given `ell` and `mu` (or `M2`, `M3`).
    Predict(Common),
    /// Discrete against continuum quantities over a mesh sequence, as CSV.
    Convergence(Common),
    /// Tabulate theta functions, Weierstrass functions and `f_mu` on a grid.
    SpecialEval {
        #[command(flatten)]
        common: Common,
        /// Horizontal period; taken from the configuration when absent.
        #[arg(long)]
        ell: Option<f64>,
        /// Defaults to the configured value, then to 0.25.
        #[arg(long)]
        mu: Option<f64>,
        /// Grid points per direction.
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidDomain(_) | Error::NoCover(_) | Error::FaceCondition { .. } => 1,
        Error::Singular { .. }
        | Error::Numerical(_)
        | Error::Pole(_)
        | Error::Precision(_)
        | Error::Range(_)
        | Error::TooLarge(_) => 2,
        Error::Config(_) | Error::Parse { .. } | Error::Precondition(_) | Error::Io(_) | Error::Json(_) => 3,
    }
}

fn load_config(common: &Common, kind: Option<ExperimentKind>) -> cyldimer::Result<ExperimentConfig> {
    let mut config = match &common.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut c: ExperimentConfig = if path.extension().is_some_and(|x| x == "json") {
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            };
            // Domain files are looked up next to the configuration.
            if let (Some(df), Some(dir)) = (c.domain_file.as_mut(), path.parent()) {
                if df.is_relative() {
                    *df = dir.join(&*df);
                }
            }
            c
        }
    };
    if let (Some(want), Some(got)) = (kind, config.kind) {
        if want != got {
            return Err(Error::Config(format!("configuration is for {got:?}, not {want:?}")));
        }
    }
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if common.out.is_some() {
        config.output = common.out.clone();
    }
    Ok(config)
}

fn with_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> cyldimer::Result<()>) -> cyldimer::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> cyldimer::Result<()> {
    with_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn special_eval(w: &mut dyn Write, ell: f64, mu: f64, grid: usize) -> cyldimer::Result<()> {
    let ctx = EllipticContext::new(ell)?;
    writeln!(w, "# ell = {ell:e}")?;
    writeln!(w, "# mu = {mu:e}")?;
    writeln!(w, "# tau = {:e}i", ctx.tau.im)?;
    writeln!(w, "# e1 = {:e}, e2 = {:e}, e3 = {:e}", ctx.e1, ctx.e2, ctx.e3)?;
    writeln!(w, "x,y,quantity,re,im")?;
    let z_mu = ctx.mu_point(mu).z_mu;
    let n = grid.max(1);
    for i in 0..n {
        for j in 0..n {
            // Cell centres of an n × n grid over the fundamental rectangle.
            let x = (i as f64 + 0.5) / n as f64;
            let y = (j as f64 + 0.5) / n as f64;
            let z = Complex64::new(x * ell, (2.0 * y - 1.0) * PI);
            let values = [
                ("theta1", theta1(z / ell, ctx.tau)?),
                ("theta3", theta3(z / ell, ctx.tau)?),
                ("wp", ctx.wp(z)?),
                ("wp_prime", ctx.wp_deriv(z, 1)?),
                ("zeta", ctx.zeta(z)?),
                ("f_mu", ctx.f_mu(z, mu)?),
                ("wp_minus_wp_mu", ctx.wp(z)? - ctx.wp(z_mu)?),
            ];
            for (name, v) in values {
                writeln!(w, "{x},{y},{name},{:e},{:e}", v.re, v.im)?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> cyldimer::Result<u8> {
    let common = match &cli.command {
        Command::Validate(c)
        | Command::Sample(c)
        | Command::Moments(c)
        | Command::Couplings(c)
        | Command::Predict(c)
        | Command::Convergence(c) => c,
        Command::SpecialEval { common, .. } => common,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let kind = match &cli.command {
        Command::Validate(_) => Some(ExperimentKind::Validate),
        Command::Sample(_) => Some(ExperimentKind::Sample),
        Command::Moments(_) => Some(ExperimentKind::Moments),
        Command::Couplings(_) => Some(ExperimentKind::Couplings),
        Command::Predict(_) => Some(ExperimentKind::Predict),
        Command::Convergence(_) => Some(ExperimentKind::Convergence),
        Command::SpecialEval { .. } => None,
    };
    let config = load_config(common, kind)?;
    let out = config.output.as_deref();
    match cli.command {
        Command::Validate(_) => {
            let outcome = experiment::run_validate(&config)?;
            write_json(out, &outcome)?;
            if !outcome.valid {
                return Ok(1);
            }
        }
        Command::Sample(_) => {
            let (domain, covers) = experiment::run_sample(&config)?;
            let seed = config.seed.expect("checked by run_sample");
            with_output(out, |mut w| write_covers(&mut w, &domain, seed, &covers))?;
        }
        Command::Moments(_) => write_json(out, &experiment::run_moments(&config)?)?,
        Command::Couplings(_) => {
            let (domain, table) = experiment::run_couplings(&config)?;
            with_output(out, |mut w| write_coupling_csv(&mut w, &table, &domain))?;
        }
        Command::Predict(_) => write_json(out, &experiment::run_predict(&config)?)?,
        Command::Convergence(_) => {
            let table = experiment::run_convergence(&config)?;
            for flag in &table.flags {
                eprintln!("warning: {flag}");
            }
            with_output(out, |mut w| table.write_csv(&mut w))?;
        }
        Command::SpecialEval { ell, mu, grid, .. } => {
            let ell = ell
                .or(config.ell)
                .ok_or_else(|| Error::Config("special-eval needs --ell or `ell` in the configuration".into()))?;
            let mu = mu.or(config.mu).unwrap_or(0.25);
            with_output(out, |w| special_eval(w, ell, mu, grid))?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
