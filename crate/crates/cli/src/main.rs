//! `nvolo`: traces, sweeps, waveform optimization and Rabi comparisons
//! from a single TOML config.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nvolo::harness::{constant_scheme, run_olo, run_sweep, Metric, OloSpec, PulsePair, SweepMode};
use nvolo::pump::pair_trace_csv;
use nvolo::rabi::{compare_schemes, RabiScheme, SchemeKind};
use nvolo::{metrics, PiecewiseWaveform, PumpSimulator};

use config::RunConfig;
use output::{Outputs, Summary};

pub const OLO_INIT_CSV: &str = "olo_init_waveform.csv";
pub const OLO_READOUT_CSV: &str = "olo_readout_waveform.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<nvolo::Error> for CliError {
    fn from(e: nvolo::Error) -> Self {
        use nvolo::Error::*;
        match e {
            Config(_) | ParamDomain { .. } | Domain(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "nvolo",
    version,
    about = "NV readout simulation and laser waveform optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Poisson-sample photon counts instead of using expectations.
    #[arg(long)]
    stochastic: bool,
    /// Override one config key, e.g. `--set olo.n_read=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Paired spin-state photon traces for the configured sequence.
    Trace(Common),
    /// Constant-pulse traversal over power and duration.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Which pulse the grid varies.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SweepMode>,
    },
    /// Optimize the readout waveform.
    Optimize(Common),
    /// Compare readout schemes on a simulated Rabi oscillation.
    Rabi(Common),
}

fn parse_mode(s: &str) -> Result<SweepMode, String> {
    match s {
        "global" => Ok(SweepMode::Global),
        "init-only" => Ok(SweepMode::InitOnly),
        _ => Err(format!("unknown mode `{s}` (expected global or init-only)")),
    }
}

struct Run {
    name: &'static str,
    cfg: RunConfig,
    out: Outputs,
    stochastic: bool,
}

impl Run {
    fn new(name: &'static str, common: &Common) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&common.config, &common.overrides)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        let dir = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        // Resolved parameters go into the manifest, not just the ones given.
        cfg.photophysics = Some(cfg.params());
        cfg.out_dir = None;
        Ok(Self {
            name,
            cfg,
            out: Outputs::new(dir),
            stochastic: common.stochastic,
        })
    }
}

fn trace(run: &mut Run) -> Result<Summary, CliError> {
    let seq = RunConfig::require(&run.cfg.sequence, "sequence")?.clone();
    let params = run.cfg.params();
    let mut sim = PumpSimulator::new(&params)?;
    let (t0, t1) = sim.pair(&seq)?;
    let (l0, l1) = sim.pair_counts(&seq)?;
    run.out.write("trace.csv", &pair_trace_csv(&t0, &t1))?;
    let mut s = Summary::default();
    s.num("l0", l0.0);
    s.num("l1", l1.0);
    s.opt("snr", metrics::snr(l0, l1).ok());
    s.opt("contrast", metrics::contrast(l0, l1).ok());
    Ok(s)
}

fn sweep(run: &mut Run, mode: Option<SweepMode>) -> Result<Summary, CliError> {
    let seq = RunConfig::require(&run.cfg.sequence, "sequence")?.clone();
    let spec = run
        .cfg
        .sweep
        .as_mut()
        .ok_or_else(|| CliError::Config("missing `[sweep]` section in config".into()))?;
    if let Some(m) = mode {
        spec.mode = m;
    }
    let spec = spec.clone();
    let result = run_sweep(&spec, &seq, &run.cfg.params())?;
    let tag = match spec.mode {
        SweepMode::Global => "global",
        SweepMode::InitOnly => "init-only",
    };
    run.out
        .write(&format!("sweep_{tag}.csv"), &result.to_csv())?;
    run.out
        .write(&format!("projection_{tag}.csv"), &result.projection_csv())?;
    let mut s = Summary::default();
    s.text("mode", tag);
    s.int("points", result.points.len() as i64);
    s.int(
        "undefined_points",
        result.points.iter().filter(|p| p.snr.is_none()).count() as i64,
    );
    if let Some(b) = result.best(Metric::Snr) {
        s.num("best_snr", b.snr.unwrap());
        s.num("best_amplitude", b.amplitude);
        s.num("best_duration_ns", b.duration_ns);
    }
    Ok(s)
}

fn optimize(run: &mut Run) -> Result<Summary, CliError> {
    let seq = RunConfig::require(&run.cfg.sequence, "sequence")?.clone();
    let seed = run.cfg.seed;
    let stochastic = run.stochastic;
    let spec = run
        .cfg
        .olo
        .as_mut()
        .ok_or_else(|| CliError::Config("missing `[olo]` section in config".into()))?;
    spec.optimizer.seed = seed;
    spec.stochastic |= stochastic;
    let spec = spec.clone();
    let r = run_olo(&spec, &seq, &run.cfg.params())?;
    run.out.write("olo_log.jsonl", &r.state.log_jsonl())?;
    run.out.write(OLO_INIT_CSV, &r.init.to_csv())?;
    run.out.write(OLO_READOUT_CSV, &r.readout.to_csv())?;
    run.out
        .write("olo_traces.csv", &pair_trace_csv(&r.traces.0, &r.traces.1))?;

    let mut s = Summary::default();
    s.num("baseline_snr", r.baseline_snr());
    s.num("baseline_amplitude", r.baseline.amplitude);
    s.num("baseline_duration_ns", r.baseline.duration_ns);
    s.num("init_amplitude", r.init_choice.amplitude);
    s.num("init_duration_ns", r.init_choice.duration_ns);
    s.num("start_snr", r.start_snr);
    s.num("final_snr", r.final_snr);
    s.num("improvement", r.improvement);
    s.num("best_objective", r.state.best_value);
    s.int("queries", r.state.queries as i64);
    s.int("cycles", r.state.iterations as i64);
    s.bool("budget_exhausted", r.state.budget_exhausted);
    s.num("final_alpha", r.state.alpha);
    Ok(s)
}

fn rabi(run: &mut Run) -> Result<Summary, CliError> {
    let seq = RunConfig::require(&run.cfg.sequence, "sequence")?.clone();
    let seed = run.cfg.seed;
    let stochastic = run.stochastic;
    let cfg = run
        .cfg
        .rabi
        .as_mut()
        .ok_or_else(|| CliError::Config("missing `[rabi]` section in config".into()))?;
    cfg.seed = seed;
    cfg.stochastic |= stochastic;
    let cfg = cfg.clone();
    let olo = run.cfg.olo.get_or_insert_with(OloSpec::default).clone();
    let params = run.cfg.params();

    let read = |name: &str| -> Result<PiecewiseWaveform, CliError> {
        let path = run.out.dir().join(name);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Config(format!(
                "missing {}; run `nvolo optimize` with the same --out first",
                path.display()
            ))
        })?;
        Ok(PiecewiseWaveform::from_csv(&text, olo.optimizer.bounds)?)
    };
    let olo_pulses = PulsePair {
        init: read(OLO_INIT_CSV)?,
        readout: read(OLO_READOUT_CSV)?,
    };
    let baseline = run_sweep(&olo.baseline, &seq, &params)?;
    let schemes = [
        RabiScheme {
            kind: SchemeKind::Olo,
            pulses: olo_pulses,
        },
        RabiScheme {
            kind: SchemeKind::ConstantSnr,
            pulses: constant_scheme(&baseline, Metric::Snr)?,
        },
        RabiScheme {
            kind: SchemeKind::ConstantContrast,
            pulses: constant_scheme(&baseline, Metric::Contrast)?,
        },
    ];
    let cmp = compare_schemes(&cfg, &schemes, &seq, &params)?;
    let mut s = Summary::default();
    for c in &cmp.curves {
        let label = c.kind.label();
        run.out.write(&format!("rabi_{label}.csv"), &c.to_csv())?;
        let mut t = Summary::default();
        t.opt("contrast", c.contrast);
        t.opt("mean_dev", c.mean_dev);
        t.num("noise_dev", c.noise_dev);
        t.num("photons_per_rep", c.photons_per_rep);
        if let Some(f) = c.fit {
            t.num("fit_offset", f.offset);
            t.num("fit_amplitude", f.amplitude);
            t.num("fit_omega", f.omega);
            t.num("fit_phase", f.phase);
        }
        if let Some(e) = &c.fit_error {
            t.text("fit_error", e);
        }
        s.table(label, t);
    }
    let mut o = Summary::default();
    o.text(
        "deviation_basis",
        if cmp.stochastic {
            "observed"
        } else {
            "shot-noise"
        },
    );
    if let Some(b) = cmp.olo_beats_constant_snr_contrast() {
        o.bool("olo_contrast_above_constant_snr", b);
    }
    if let Some(b) = cmp.olo_beats_constant_contrast_deviation() {
        o.bool("olo_deviation_below_constant_contrast", b);
    }
    s.table("orderings", o);
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let (mut run, mode) = match &cli.command {
        Command::Trace(c) => (Run::new("trace", c)?, None),
        Command::Sweep { common, mode } => (Run::new("sweep", common)?, *mode),
        Command::Optimize(c) => (Run::new("optimize", c)?, None),
        Command::Rabi(c) => (Run::new("rabi", c)?, None),
    };
    let summary = match run.name {
        "trace" => trace(&mut run)?,
        "sweep" => sweep(&mut run, mode)?,
        "optimize" => optimize(&mut run)?,
        _ => rabi(&mut run)?,
    };
    let text = summary.to_toml()?;
    run.out
        .write(&format!("{}_summary.toml", run.name), &text)?;
    run.out.finish(run.name, &run.cfg, started.elapsed())?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvolo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
