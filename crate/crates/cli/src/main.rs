use clap::{Args, Parser, Subcommand, ValueEnum};
use hdnet::experiments::{
    self, fluid_compare, pareto_table, run_scenario, sweep, thermal_report, validate, Format,
    OutputDir, ResultRecord, ValidateOptions,
};
use hdnet::policy::Policy;
use hdnet::scenario::{load_named_or_path, ScenarioConfig, SweepAxis, SweepSpec, BUNDLED};
use hdnet::Error;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "hdnet", version, about = "Heat-diffusion routing simulator and thermal solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled fixture.
    #[arg(long)]
    config: String,
    /// Run one seed instead of the scenario's replication seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon (slots); burn-in follows unless set in the file.
    #[arg(long)]
    horizon: Option<usize>,
    /// Directory for traces, metrics and the result store.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutFormat,
    /// Override the policy: `hd:<beta>`, `bp` or `vbp:<v>`.
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario.
    Run(Common),
    /// Sweep a parameter grid over replication seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `beta`, `v` or `capacity:<tail->head>`; defaults to the file's sweep block.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated increasing grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Solve the thermal reference model of a scenario.
    Thermal {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Also simulate HD and compare mean flows with the prediction.
        #[arg(long)]
        compare: bool,
    },
    /// Run the property suite.
    Validate {
        /// Scenario for the trace-based checks (default: lossy_link).
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: OutFormat,
        /// Smaller random samples.
        #[arg(long)]
        quick: bool,
    },
    /// List bundled fixtures.
    Fixtures,
}

fn parse_policy(text: &str) -> Result<Policy, Error> {
    let bad = || hdnet::ConfigError::invalid("--policy", format!("cannot parse `{text}`"));
    let policy = match text.split_once(':') {
        None if text == "bp" => Policy::Bp,
        Some(("hd", x)) => Policy::hd(x.parse().map_err(|_| bad())?),
        Some(("vbp", x)) => Policy::Vbp {
            v: x.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad().into()),
    };
    policy.validate()?;
    Ok(policy)
}

fn load(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = load_named_or_path(&common.config)?;
    if let Some(h) = common.horizon {
        cfg.run.horizon = h;
        if cfg.run.burn_in.is_some_and(|b| b >= h) {
            cfg.run.burn_in = None;
        }
    }
    if let Some(p) = &common.policy {
        cfg.policy = parse_policy(p)?;
    }
    if let Some(s) = common.seed {
        cfg.run.seeds = vec![s];
    }
    cfg.resolve(cfg.run.seeds[0])?;
    Ok(cfg)
}

fn output_dir(dir: &Option<PathBuf>, format: OutFormat) -> Result<Option<OutputDir>, Error> {
    dir.as_ref()
        .map(|d| OutputDir::new(d, format.into()))
        .transpose()
}

fn print_records(records: &[ResultRecord], format: OutFormat) -> Result<(), Error> {
    match format {
        OutFormat::Json => println!("{}", to_json(&records)?),
        OutFormat::Csv => {
            println!("scenario,policy,parameter,seed,q_bar,r_bar,null_rate,verdict");
            for r in records {
                println!(
                    "{},{},{},{},{},{},{},{}",
                    r.scenario,
                    r.policy,
                    r.parameter.map(|p| p.to_string()).unwrap_or_default(),
                    r.seed,
                    r.q_bar,
                    r.r_bar,
                    r.null_rate,
                    r.verdict
                );
            }
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

fn parse_axis(text: &str) -> Result<SweepAxis, Error> {
    match text.split_once(':') {
        None if text == "beta" => Ok(SweepAxis::Beta),
        None if text == "v" => Ok(SweepAxis::V),
        Some(("capacity", edge)) => Ok(SweepAxis::Capacity(edge.to_string())),
        _ => Err(hdnet::ConfigError::invalid("--axis", format!("cannot parse `{text}`")).into()),
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let out = output_dir(&common.out_dir, common.format)?;
            let mut records = Vec::new();
            for &seed in &cfg.run.seeds {
                let sc = cfg.resolve(seed)?;
                records.push(run_scenario(&sc, seed, out.as_ref())?.record);
            }
            print_records(&records, common.format)?;
            Ok(if records.iter().all(ResultRecord::is_stable) {
                0
            } else {
                EXIT_UNSTABLE
            })
        }
        Command::Sweep { common, axis, grid } => {
            let cfg = load(&common)?;
            let mut spec = match (&axis, &cfg.sweep) {
                (Some(a), _) => SweepSpec {
                    axis: parse_axis(a)?,
                    grid: Vec::new(),
                    seeds: None,
                },
                (None, Some(s)) => s.clone(),
                (None, None) => {
                    return Err(hdnet::ConfigError::invalid(
                        "sweep",
                        "no sweep block in the scenario; pass --axis and --grid",
                    )
                    .into())
                }
            };
            if let Some(g) = grid {
                spec.grid = g;
            } else if axis.is_some() {
                match &cfg.sweep {
                    Some(s) if s.axis == spec.axis => spec.grid = s.grid.clone(),
                    _ => return Err(hdnet::ConfigError::invalid("--grid", "grid required").into()),
                }
            }
            if common.seed.is_some() {
                spec.seeds = Some(cfg.run.seeds.clone());
            }
            let records = sweep(&cfg, &spec)?;
            let rows = pareto_table(&spec, &records);
            if let Some(out) = output_dir(&common.out_dir, common.format)? {
                out.append_records(&records)?;
                let stem = format!("{}-sweep", cfg.id);
                match out.format {
                    Format::Json => {
                        experiments::write_json(&out.dir.join(format!("{stem}.json")), &rows)?
                    }
                    Format::Csv => {
                        experiments::write_pareto_csv(&out.dir.join(format!("{stem}.csv")), &rows)?
                    }
                }
            }
            match common.format {
                OutFormat::Json => println!("{}", to_json(&json!({ "records": records, "table": rows }))?),
                OutFormat::Csv => {
                    println!("value,runs,unstable,q_mean,q_se,r_mean,r_se");
                    for r in &rows {
                        println!(
                            "{},{},{},{},{},{},{}",
                            r.value, r.runs, r.unstable, r.q_mean, r.q_se, r.r_mean, r.r_se
                        );
                    }
                }
            }
            Ok(0)
        }
        Command::Thermal {
            common,
            beta,
            compare,
        } => {
            let cfg = load(&common)?;
            let seed = cfg.run.seeds[0];
            let sc = cfg.resolve(seed)?;
            let report = thermal_report(&sc, beta)?;
            let fluid = if compare {
                Some(fluid_compare(&sc, beta, seed)?)
            } else {
                None
            };
            let body = json!({ "scenario": sc.id, "thermal": report, "fluid": fluid });
            if let Some(out) = output_dir(&common.out_dir, common.format)? {
                experiments::write_json(&out.dir.join(format!("{}-thermal.json", sc.id)), &body)?;
            }
            match common.format {
                OutFormat::Json => println!("{}", to_json(&body)?),
                OutFormat::Csv => {
                    println!("edge,sigma,flow_poisson,flow_thomson,f_bar");
                    for k in 0..sc.network.edge_count() {
                        println!(
                            "{},{},{},{},{}",
                            sc.network.edge_label(k),
                            report.sigma[k],
                            report.poisson.flows[k],
                            report.thomson.flows[k],
                            fluid.as_ref().map(|f| f.f_bar[k].to_string()).unwrap_or_default()
                        );
                    }
                }
            }
            Ok(0)
        }
        Command::Validate {
            config,
            seed,
            horizon,
            out_dir,
            format,
            quick,
        } => {
            let mut opts = ValidateOptions::default();
            if quick {
                opts.lemma_graphs = 100;
                opts.duality_graphs = 40;
                opts.perturbations = 20;
                opts.slot_states = 1000;
                opts.lemma5_horizon = 20_000;
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(h) = horizon {
                opts.lemma5_horizon = h;
            }
            let scenario = match &config {
                Some(c) => Some(load_named_or_path(c)?.resolve(opts.seed)?),
                None => None,
            };
            let report = validate(&opts, scenario.as_ref())?;
            if let Some(out) = output_dir(&out_dir, format)? {
                experiments::write_json(&out.dir.join("validation.json"), &report)?;
            }
            match format {
                OutFormat::Json => println!("{}", to_json(&report)?),
                OutFormat::Csv => {
                    println!("check,status,summary");
                    for c in &report.checks {
                        println!("{},{:?},\"{}\"", c.name, c.status, c.summary.replace('"', "'"));
                    }
                }
            }
            Ok(if report.passed() { 0 } else { EXIT_VALIDATION })
        }
        Command::Fixtures => {
            for (name, _) in BUNDLED {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => 1,
            })
        }
    }
}
