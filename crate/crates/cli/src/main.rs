use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shadow_gm::harness::output::{write_report, write_series_csv};
use shadow_gm::harness::{
    convergence_study, picard_check, run_ensemble, run_trajectory, verify_bounds, Config, RunMode, RunSpec, Scheme,
    TrajectoryStatus,
};
use shadow_gm::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_BLOW_UP: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "shadow-gm", version, about = "Stochastic shadow Gierer-Meinhardt simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its monitored functionals as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trajectory index within the master seed's family.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run an ensemble and write the aggregate report.
    Ensemble(Common),
    /// Check the pathwise bounds over an ensemble; exits 2 on a violation, 3 on blow-up.
    VerifyBounds(Common),
    /// Check contraction of the Picard maps on one window per path; exits 2 on failure.
    PicardCheck(Common),
    /// Measure strong convergence of the inhibitor integrator under dt halving.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Number of time-step levels (at least 3).
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Validate the configuration and report the exponent regime.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides stochastic.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides stochastic.paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Overrides stochastic.barrier_K.
    #[arg(long)]
    barrier: Option<f64>,
    /// Overrides integrator.dt and drops stochastic.steps.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Overrides run.horizon.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Overrides run.workers (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides run.output_dir.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Em,
    Transform,
    Ode,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    Localized,
}

impl Common {
    fn load(&self) -> Result<(Config, RunSpec), Error> {
        let mut cfg = Config::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.stochastic.master_seed = seed;
        }
        if let Some(paths) = self.paths {
            cfg.stochastic.paths = paths;
        }
        if let Some(k) = self.barrier {
            cfg.stochastic.barrier_k = k;
        }
        if let Some(dt) = self.dt {
            cfg.integrator.dt = Some(dt);
            cfg.stochastic.steps = None;
        }
        if let Some(scheme) = self.scheme {
            cfg.integrator.scheme = match scheme {
                SchemeArg::Em => Scheme::Em,
                SchemeArg::Transform => Scheme::Transform,
                SchemeArg::Ode => Scheme::Ode,
            };
        }
        if let Some(h) = self.horizon {
            cfg.run.horizon = h;
        }
        if let Some(mode) = self.mode {
            cfg.run.mode = match mode {
                ModeArg::Global => RunMode::Global,
                ModeArg::Localized => RunMode::Localized,
            };
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(dir) = &self.output_dir {
            cfg.run.output_dir = dir.clone();
        }
        let spec = cfg.resolve()?;
        Ok((cfg, spec))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn announce(paths: &[&Path]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Simulate { common, index } => {
            let (_, spec) = common.load()?;
            let rec = run_trajectory(&spec, index)?;
            let csv = spec.output_dir.join(format!("trajectory_{index}.csv"));
            write_series_csv(&csv, &rec.series)?;
            announce(&[&csv]);
            println!("status={}", rec.status.name());
            println!("final_time={}", rec.final_time);
            println!("final_gamma={}", rec.final_gamma);
            println!("b_sup={}", rec.b_sup);
            println!("min_lb_margin={}", rec.summary.min_lb_margin);
            println!("min_lemma32_margin={}", rec.summary.min_lemma32_margin);
            println!("max_h_alpha_beta={}", rec.summary.max_h_alpha_beta);
            if let Some(e) = &rec.failure {
                println!("failure={e}");
            }
            let blew_up = rec.status == TrajectoryStatus::BlowUp;
            Ok(if blew_up && spec.global_regime() { EXIT_BLOW_UP } else { 0 })
        }
        Command::Ensemble(common) => {
            let (_, spec) = common.load()?;
            let rep = run_ensemble(&spec)?;
            let kv = rep.to_key_value();
            let (txt, json) = write_report(&spec.output_dir, "ensemble", &kv, &rep.to_json())?;
            announce(&[&txt, &json]);
            print!("{kv}");
            Ok(if rep.global_regime && rep.blow_up > 0 { EXIT_BLOW_UP } else { 0 })
        }
        Command::VerifyBounds(common) => {
            let (_, spec) = common.load()?;
            let rep = verify_bounds(&spec)?;
            let kv = rep.to_key_value();
            let (txt, json) = write_report(&spec.output_dir, "verify_bounds", &kv, &rep.to_json())?;
            announce(&[&txt, &json]);
            print!("{kv}");
            Ok(rep.exit_code() as u8)
        }
        Command::PicardCheck(common) => {
            let (_, spec) = common.load()?;
            let rep = picard_check(&spec)?;
            let kv = rep.to_key_value();
            let (txt, json) = write_report(&spec.output_dir, "picard_check", &kv, &rep.to_json())?;
            announce(&[&txt, &json]);
            print!("{kv}");
            Ok(if rep.passed { 0 } else { EXIT_VIOLATION })
        }
        Command::Convergence { common, levels } => {
            let (_, spec) = common.load()?;
            let rep = convergence_study(&spec, levels)?;
            let kv = rep.to_key_value();
            let (txt, json) = write_report(&spec.output_dir, "convergence", &kv, &rep.to_json())?;
            announce(&[&txt, &json]);
            print!("{kv}");
            Ok(0)
        }
        Command::Validate(common) => {
            let (cfg, spec) = common.load()?;
            let regime = cfg.model.check_global_regime(spec.grid.dimension());
            println!("valid=true");
            println!("normalized={}", cfg.model.is_normalized());
            println!("kappa={}", regime.kappa);
            println!("regime_threshold={}", regime.threshold);
            println!("global_regime={}", regime.holds);
            println!("delta={}", spec.monitor.delta);
            println!("steps={}", spec.steps);
            println!("dt={}", spec.dt);
            Ok(0)
        }
    }
}
