use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use omg_core::experiments::{reproduce, Experiment};
use omg_core::sim::{compare, trajectory_csv};
use omg_core::tuning::{ideal_bound_closed_form, tune};
use omg_core::{ConfigError, ConfigFile, PolicySpec, SimConfig, SimResult, StorageParams, TuneMethod};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "omg", version, about = "Online storage control: tuning, simulation and experiment presets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Maxw,
    Mins,
}

impl From<Method> for TuneMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Maxw => TuneMethod::MaxWeight,
            Method::Mins => TuneMethod::MinBound,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u32>,
    /// Directory for result JSON and trajectory CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict OMG to operations that keep the next level feasible.
    #[arg(long)]
    enforce_level_constraint: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Tune (gamma, w) and print them with the certified bound.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "maxw")]
        method: Method,
    },
    /// Simulate the configured policies and print aggregate results.
    Simulate(RunArgs),
    /// Simulate and print a ranking with paired per-seed differences.
    Compare {
        #[arg(long, required_unless_present = "results")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        enforce_level_constraint: bool,
        /// Compare previously saved result files instead of simulating.
        #[arg(long, num_args = 1.., conflicts_with = "config")]
        results: Vec<PathBuf>,
    },
    /// Certified bound as the level-to-ramp ratio rho grows, as CSV.
    BoundSweep {
        /// Storage and cost to sweep; the level range is rescaled per rho.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `start:end:count`, geometrically spaced.
        #[arg(long, default_value = "2:10000:25")]
        rho_range: String,
        #[arg(long, value_enum, default_value = "maxw")]
        method: Method,
    },
    /// Run a preset experiment and check its acceptance inequalities.
    Reproduce {
        experiment: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_sim(args: &RunArgs) -> Result<SimConfig, Failure> {
    let mut cfg = ConfigFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(r) = args.replications {
        cfg.sim.replications = r;
    }
    if args.out.is_some() {
        cfg.sim.keep_trajectory = true;
    }
    if args.enforce_level_constraint {
        for p in &mut cfg.policies {
            if let PolicySpec::Omg {
                enforce_level_constraint,
                ..
            } = p
            {
                *enforce_level_constraint = true;
            }
        }
    }
    Ok(cfg.to_sim_config()?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_outputs(dir: &Path, result: &SimResult) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("result.json"), &result.to_json())?;
    for p in &result.policies {
        if let Some(rows) = &p.trajectory {
            write_file(&dir.join(format!("trajectory-{}.csv", p.name)), &trajectory_csv(rows))?;
        }
    }
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<SimResult, Failure> {
    let config = load_sim(args)?;
    let result = omg_core::run(&config).map_err(runtime)?;
    if let Some(dir) = &args.out {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}

fn parse_rho_range(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Config(format!("--rho-range expects start:end:count with 1 < start <= end, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b, n): (f64, f64, usize) = (
        a.parse().map_err(|_| bad())?,
        b.parse().map_err(|_| bad())?,
        n.parse().map_err(|_| bad())?,
    );
    if !(a > 1.0 && b >= a && n >= 1 && b.is_finite()) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect())
}

fn default_sweep_config() -> ConfigFile {
    ConfigFile::from_json(
        r#"{
            "storage": {"lambda": 1.0, "s_min": 0, "s_max": 100, "u_min": -10, "u_max": 10},
            "cost": {"family": "balancing", "q_plus": 1, "q_minus": 1},
            "process": {"kind": "iid",
                        "delta": {"kind": "point_mass", "value": 0},
                        "price": {"kind": "point_mass", "value": 1},
                        "supports": {"delta_min": -1, "delta_max": 1, "price_min": 1, "price_max": 1}}
        }"#,
    )
    .expect("built-in sweep configuration")
}

fn bound_sweep(config: Option<&Path>, rho_range: &str, method: Method) -> Result<String, Failure> {
    let rhos = parse_rho_range(rho_range)?;
    let cfg = match config {
        Some(p) => ConfigFile::load(p)?,
        None => default_sweep_config(),
    };
    let base = cfg.to_sim_config()?;
    let bounds = base.subgradient_bounds().map_err(|e| Failure::Config(e.to_string()))?;
    let st = *base.storage.params();
    let ramp = st.u_max - st.u_min;
    let symmetric = st.lambda == 1.0 && st.u_min == -st.u_max;

    let mut out = String::from(if symmetric { "rho,bound,closed_form\n" } else { "rho,bound\n" });
    let mut previous = f64::INFINITY;
    for rho in rhos {
        let sized = StorageParams {
            s_max: st.s_min + rho * ramp,
            ..st
        }
        .validate()
        .map_err(|e| Failure::Config(format!("rho = {rho}: {e}")))?;
        let p = tune(&sized, &bounds, method.into(), &base.tune).map_err(runtime)?;
        // The level term keeps leaky storage bounds from vanishing, so only
        // lossless-in-time storage is required to improve with capacity.
        if st.lambda == 1.0 && p.certified_bound > previous * (1.0 + 1e-12) {
            return Err(runtime(format!("bound increased at rho = {rho}")));
        }
        previous = p.certified_bound;
        if symmetric {
            let closed = ideal_bound_closed_form(bounds.spread(), st.u_max, rho);
            out.push_str(&format!("{rho},{},{closed}\n", p.certified_bound));
        } else {
            out.push_str(&format!("{rho},{}\n", p.certified_bound));
        }
    }
    Ok(out)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Tune { config, method } => {
            let cfg = ConfigFile::load(&config)?;
            let sim = cfg.to_sim_config()?;
            let p = sim.tune(method.into()).map_err(|e| Failure::Config(e.to_string()))?;
            let out = json!({
                "gamma": p.gamma,
                "w": p.w,
                "d_lo": p.bounds.d_lo,
                "d_hi": p.bounds.d_hi,
                "bound": p.certified_bound,
                "method": p.method.to_string(),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Simulate(args) => {
            let result = simulate(&args)?;
            println!("{}", result.to_json());
        }
        Command::Compare {
            config,
            seed,
            replications,
            out,
            enforce_level_constraint,
            results,
        } => {
            let loaded: Vec<SimResult> = if results.is_empty() {
                let config = config.ok_or_else(|| Failure::Config("compare needs --config or --results".into()))?;
                vec![simulate(&RunArgs {
                    config,
                    seed,
                    replications,
                    out,
                    enforce_level_constraint,
                })?]
            } else {
                results
                    .iter()
                    .map(|p| {
                        let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
                    })
                    .collect::<Result<_, _>>()?
            };
            let refs: Vec<&SimResult> = loaded.iter().collect();
            let cmp = compare(&refs).map_err(runtime)?;
            println!("{}", serde_json::to_string_pretty(&cmp).expect("json"));
        }
        Command::BoundSweep {
            config,
            rho_range,
            method,
        } => {
            print!("{}", bound_sweep(config.as_deref(), &rho_range, method)?);
        }
        Command::Reproduce {
            experiment,
            seed,
            replications,
            out,
        } => {
            let exp: Experiment = experiment.parse().map_err(Failure::Config)?;
            let report = reproduce(exp, seed, replications)?;
            print!("{}", report.render());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
                let json = serde_json::to_string_pretty(&report).expect("json");
                write_file(&dir.join(format!("{exp}.json")), &json)?;
            }
            if !report.passed() {
                return Err(Failure::Runtime(format!("{exp}: acceptance check failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("OMG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
