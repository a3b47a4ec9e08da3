use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};

use quantctl::codec::{ClosedLoop, Scheme};
use quantctl::config::{ConfigError, Experiment, ExperimentConfig};
use quantctl::dump::{Dump, TrajectoryWriter};
use quantctl::model::validate_scheme;
use quantctl::noise::NoiseSpec;
use quantctl::sim::{self, SimError};
use quantctl::trial_rng;

#[derive(Parser)]
#[command(name = "quantctl", version, about = "Quantized control experiments with a two-part zooming code")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, global = true, value_parser = ["reproduce-paper", "smoke"])]
    preset: Option<String>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Replaces the configured seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Replaces the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check every scheme condition for each configured N.
    Validate,
    /// Run the configured sweep over N and fit the convergence order.
    Sweep,
    /// Write one trajectory as a binary dump and a CSV projection.
    Trace {
        /// Fixed bins; defaults to the first configured N.
        #[arg(long = "n")]
        n: Option<u32>,
        #[arg(long, default_value_t = 5000)]
        steps: u64,
    },
    /// Distortion of the fixed quantizer against N.
    Distortion {
        #[arg(long, value_enum, default_value_t = Source::Gaussian)]
        source: Source,
        /// Moment order m in the bin size 2 N^(-1 + 2/m).
        #[arg(long, default_value_t = 8.0)]
        moment: f64,
        /// Shape parameter for the BG source.
        #[arg(long, default_value_t = 2.0)]
        bg_delta: f64,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
        n_list: Vec<u32>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
    /// Empirical return-time tail against the analytic bound.
    Tailbound {
        #[arg(long = "n")]
        n: Option<u32>,
        #[arg(long, default_value_t = 100_000)]
        episodes: u64,
        #[arg(long, default_value_t = 12)]
        k_max: u32,
    },
    /// Average cost with exact state observation.
    Baseline {
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Gaussian,
    Bg,
    Config,
}

enum Failure {
    Validation(String),
    Parse(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Parse(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Validation(r) => Failure::Validation(format!("scheme fails validation:\n{r}")),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(m) | Failure::Parse(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn load(global: &Global) -> Result<Experiment, Failure> {
    let cfg = match (&global.config, &global.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Failure::Parse("one of --config or --preset is required".into())),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    };
    let mut exp = cfg.build()?;
    if let Some(seed) = global.seed_override {
        exp.seed = seed;
    }
    if let Some(dir) = &global.out_dir {
        exp.output.dir = dir.clone();
    }
    Ok(exp)
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exp = load(&cli.global)?;
    match cli.command {
        Command::Validate => validate(&exp),
        Command::Sweep => sweep(&exp, cli.global.workers),
        Command::Trace { n, steps } => trace(&exp, n, steps),
        Command::Distortion {
            source,
            moment,
            bg_delta,
            n_list,
            samples,
        } => distortion(&exp, source, moment, bg_delta, &n_list, samples),
        Command::Tailbound { n, episodes, k_max } => tailbound(&exp, n, episodes, k_max),
        Command::Baseline { steps } => baseline(&exp, steps),
    }
}

fn validate(exp: &Experiment) -> Result<(), Failure> {
    let first = validate_scheme(&exp.params, &exp.model);
    print!("N = {}\n{first}", exp.params.fixed_bins);
    let mut failing = Vec::new();
    for &n in &exp.n_list[1..] {
        let report = validate_scheme(&exp.params.with_fixed_bins(n), &exp.model);
        if !report.passed() {
            let names: Vec<&str> = report.failures().map(|c| c.label).collect();
            println!("N = {n}: FAIL {}", names.join("; "));
            failing.push(n);
        }
    }
    if first.passed() && failing.is_empty() {
        println!("all conditions hold for {} value(s) of N", exp.n_list.len());
        Ok(())
    } else {
        let labels: Vec<&str> = first.failures().map(|c| c.label).collect();
        Err(Failure::Validation(format!(
            "conditions violated: {}",
            if labels.is_empty() {
                format!("for N in {failing:?}")
            } else {
                labels.join("; ")
            }
        )))
    }
}

fn sweep(exp: &Experiment, workers: usize) -> Result<(), Failure> {
    let report = validate_scheme(&exp.params, &exp.model);
    if !report.passed() {
        return Err(Failure::Validation(format!("scheme fails validation:\n{report}")));
    }
    let total = exp.n_list.len() * exp.seeds as usize;
    let done = AtomicUsize::new(0);
    let result = sim::sweep(&exp.sweep_config(workers), |out| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        match out {
            Ok(t) => eprintln!(
                "[{k}/{total}] N={} T={} gap={} ({:?})",
                t.fixed_bins, t.steps, t.gap, t.stopped_by
            ),
            Err(f) => eprintln!("[{k}/{total}] N={} failed: {}", f.fixed_bins, f.error),
        }
    })?;

    let dir = &exp.output.dir;
    let (csv_path, mut w) = create(dir, "sweep.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    let (_, mut w) = create(dir, "sweep_failures.csv")?;
    result.write_failures_csv(&mut w)?;
    w.flush()?;

    let optimum = exp.model.optimal_cost().map_err(|e| Failure::Runtime(e.to_string()))?;
    let fit = sim::fit_convergence_order(&result);
    let summary = match &fit {
        Ok(f) => serde_json::json!({
            "slope": f.slope,
            "intercept": f.intercept,
            "r_squared": f.r_squared,
            "rows_used": f.rows_used,
            "rows_excluded": f.rows_excluded,
            "classical_optimum": optimum,
        }),
        Err(e) => serde_json::json!({ "error": e.to_string(), "classical_optimum": optimum }),
    };
    let (_, mut w) = create(dir, "fit.json")?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;

    println!("classical optimum tr(QΣ) = {optimum}");
    match fit {
        Ok(f) => println!(
            "convergence order slope = {} (intercept {}, R² = {}, {} rows used, {} excluded)",
            f.slope, f.intercept, f.r_squared, f.rows_used, f.rows_excluded
        ),
        Err(e) => println!("no fit: {e}"),
    }
    println!("wrote {}", csv_path.display());
    let ok = result.success_fraction();
    if ok >= 0.8 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("only {:.0}% of rows succeeded", 100.0 * ok)))
    }
}

fn trace(exp: &Experiment, n: Option<u32>, steps: u64) -> Result<(), Failure> {
    let params = exp.params.with_fixed_bins(n.unwrap_or(exp.params.fixed_bins));
    let report = validate_scheme(&params, &exp.model);
    if !report.passed() {
        return Err(Failure::Validation(format!("scheme fails validation:\n{report}")));
    }
    let scheme = Scheme::new(params, exp.model.dim()).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut rng = trial_rng(exp.seed, sim::trial_stream(params.fixed_bins, 0));
    let mut cl = ClosedLoop::from_init(scheme, &exp.model, &mut rng).map_err(|e| Failure::Runtime(e.to_string()))?;
    let dir = &exp.output.dir;
    let name = format!("trace_N{}", params.fixed_bins);
    let (bin_path, w) = create(dir, &format!("{name}.qctr"))?;
    let mut writer = TrajectoryWriter::new(w, &scheme)?;
    for _ in 0..steps {
        let x = cl.state().to_vec();
        let state = cl.encoder().state();
        let t = cl.t();
        cl.step(&mut rng).map_err(|e| Failure::Runtime(e.to_string()))?;
        writer.push(t, &x, state, cl.encoder().message())?;
    }
    writer.finish()?;

    let dump = Dump::read(&mut io::BufReader::new(File::open(&bin_path)?)).map_err(|e| Failure::Runtime(e.to_string()))?;
    let (csv_path, mut w) = create(dir, &format!("{name}.csv"))?;
    dump.write_csv(&params, &mut w)?;
    w.flush()?;
    println!("wrote {} and {} ({} records)", bin_path.display(), csv_path.display(), dump.records.len());
    Ok(())
}

fn distortion(exp: &Experiment, source: Source, moment: f64, bg_delta: f64, n_list: &[u32], samples: u64) -> Result<(), Failure> {
    let spec = match source {
        Source::Gaussian => NoiseSpec::scalar_gaussian(1.0),
        Source::Bg => NoiseSpec::scaled_bg(1.0, bg_delta, 1),
        Source::Config => Ok(exp.model.noise().clone()),
    }
    .map_err(|e| Failure::Parse(e.to_string()))?;
    let curve = sim::quantizer_distortion(&spec, n_list, moment, samples, exp.seed)?;
    let (path, mut w) = create(&exp.output.dir, "distortion.csv")?;
    writeln!(w, "N,delta,empirical,empirical_stderr,analytic")?;
    for p in &curve.points {
        writeln!(w, "{},{},{},{},{}", p.bins, p.delta, p.monte_carlo, p.mc_stderr, p.oracle)?;
    }
    w.flush()?;
    println!("theory slope = {}", -2.0 + 4.0 / moment);
    println!("oracle slope = {}", curve.oracle_fit.slope);
    if let Some(f) = curve.mc_fit {
        println!("monte carlo slope = {}", f.slope);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn tailbound(exp: &Experiment, n: Option<u32>, episodes: u64, k_max: u32) -> Result<(), Failure> {
    let params = exp.params.with_fixed_bins(n.unwrap_or(exp.params.fixed_bins));
    let start = vec![0.0; exp.model.dim()];
    let exponent = params.initial_exponent;
    let delta = params.bin_size(exponent);
    let tail = sim::estimate_return_tail(&exp.model, &params, &start, exponent, k_max, episodes, exp.seed)?;
    let (path, mut w) = create(&exp.output.dir, "tailbound.csv")?;
    writeln!(w, "k,empirical,empirical_stderr,analytic")?;
    let mut violations = 0;
    for k in 1..=k_max {
        let p = tail.survival[k as usize];
        let se = tail.stderr(k as usize);
        let bound = sim::tail_bound_value(&params, &exp.model, delta, k)?;
        if p > bound + 4.0 * se.max(1.0 / episodes as f64) {
            violations += 1;
        }
        writeln!(w, "{k},{p},{se},{bound}")?;
    }
    w.flush()?;
    println!("{violations} of {k_max} values of k exceed the bound beyond 4 sigma");
    println!("wrote {}", path.display());
    Ok(())
}

fn baseline(exp: &Experiment, steps: u64) -> Result<(), Failure> {
    let r = sim::fully_observed_baseline(&exp.model, exp.seed, steps)?;
    let (path, mut w) = create(&exp.output.dir, "baseline.csv")?;
    writeln!(w, "steps,empirical,empirical_stderr,analytic")?;
    writeln!(w, "{steps},{},{},{}", r.avg_cost, r.stderr, r.optimum)?;
    w.flush()?;
    println!(
        "average cost = {} ± {} (tr(QΣ) = {}, relative error {})",
        r.avg_cost,
        r.stderr,
        r.optimum,
        (r.avg_cost - r.optimum).abs() / r.optimum
    );
    println!("wrote {}", path.display());
    Ok(())
}
