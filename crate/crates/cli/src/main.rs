use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use islandprobe::detector::{build_libraries, BaselineLibrary, TopologyState, DEFAULT_THRESHOLD};
use islandprobe::harness::{run_gap_table, run_monte_carlo, MonteCarloConfig, DEFAULT_PROBE_DELAY};
use islandprobe::nugap::DEFAULT_GRID_POINTS;
use islandprobe::pipeline::{probe_pass, PipelineConfig, Scenario, FINE_DT};
use islandprobe::signal::{build_prbpt, default_polynomial, generate_prbs, ProbingConfig};
use islandprobe::{BreakerStates, NetworkModel};

#[derive(Parser)]
#[command(
    name = "islandprobe",
    version,
    about = "Islanding detection by pulse-compression probing"
)]
struct Cli {
    /// Network fixture (JSON).
    #[arg(
        long,
        global = true,
        env = "ISLANDPROBE_FIXTURE",
        default_value = "fixtures/feeder34_reduced.json"
    )]
    fixture: PathBuf,
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Simulation step in seconds; must divide every bit duration.
    #[arg(long, global = true, default_value_t = FINE_DT)]
    dt: f64,
    /// Worker threads for concurrent simulations.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one period of a probing pulse train and print its period.
    Signal(SignalArgs),
    /// Probe the fixture in one breaker state and dump traces and realizations.
    Probe(ProbeArgs),
    /// Build and persist baseline libraries.
    Baseline(BaselineArgs),
    /// Gap from every single-breaker state to the intact baseline.
    Gaptable(GapArgs),
    /// Randomized breaker-opening experiment, islanding decisions.
    Montecarlo(McArgs),
    /// Randomized experiment classified against the full state library.
    Topology(McArgs),
}

#[derive(Args)]
struct SignalArgs {
    #[arg(long, default_value_t = 12)]
    order: u32,
    /// Bit duration in seconds.
    #[arg(long)]
    bit_duration: f64,
    /// Pulse magnitude in volts.
    #[arg(long, default_value_t = 600.0)]
    magnitude: f64,
    /// Feedback polynomial, e.g. "x^12+x^11+x^10+x^4+1".
    #[arg(long)]
    polynomial: Option<String>,
}

#[derive(Args)]
struct ProbeArgs {
    /// `intact` or a breaker id to hold open.
    #[arg(long, default_value = "intact")]
    state: String,
    /// Plants injecting simultaneously (default: all).
    #[arg(long = "plant")]
    plants: Vec<u8>,
}

#[derive(Args)]
struct BaselineArgs {
    /// `intact` or `all` (intact plus every single-breaker state).
    #[arg(long, default_value = "all")]
    states: String,
    /// Plants whose libraries are written (default: all).
    #[arg(long = "plant")]
    plants: Vec<u8>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Probe start in seconds for the tabulated states.
    #[arg(long, default_value_t = 0.16 + DEFAULT_PROBE_DELAY)]
    probe_start: f64,
    /// Also persist the libraries built along the way.
    #[arg(long)]
    save_baselines: bool,
}

#[derive(Args)]
struct McArgs {
    /// JSON file with a full experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Directory holding `plant_<id>` libraries from `baseline`; built on the fly when absent.
    #[arg(long)]
    baseline_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            let report = json!({ "error": { "category": category, "message": format!("{e:#}") } });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    let Some(core) = e.chain().find_map(|c| c.downcast_ref::<islandprobe::Error>()) else {
        return ("cli", 1);
    };
    let category = core.category();
    let code = match category {
        "io" => 3,
        "netsim" => 4,
        "signal" => 5,
        "probe" => 6,
        "sysid" => 7,
        "nugap" => 8,
        "detector" => 9,
        "harness" => 10,
        _ => 1,
    };
    (category, code)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    std::fs::create_dir_all(&cli.output_dir).with_context(|| format!("creating {}", cli.output_dir.display()))?;
    match &cli.command {
        Command::Signal(a) => cmd_signal(cli, a),
        Command::Probe(a) => cmd_probe(cli, a),
        Command::Baseline(a) => cmd_baseline(cli, a),
        Command::Gaptable(a) => cmd_gaptable(cli, a),
        Command::Montecarlo(a) => cmd_montecarlo(cli, a, false),
        Command::Topology(a) => cmd_montecarlo(cli, a, true),
    }
}

fn load_fixture(cli: &Cli) -> anyhow::Result<NetworkModel> {
    Ok(NetworkModel::load(&cli.fixture)?)
}

fn pipeline(cli: &Cli) -> PipelineConfig {
    PipelineConfig::default().with_dt(cli.dt)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn cmd_signal(cli: &Cli, a: &SignalArgs) -> anyhow::Result<()> {
    let cfg = ProbingConfig::new(a.order, a.bit_duration, a.magnitude, cli.dt)?;
    let poly = match &a.polynomial {
        Some(p) => p.clone(),
        None => default_polynomial(a.order)?,
    };
    let prbs = generate_prbs(a.order, &poly)?;
    let p = build_prbpt(&prbs, &cfg)?;
    let path = cli.output_dir.join("prbpt.csv");
    let file = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    p.write_csv(std::io::BufWriter::new(file))?;
    write_json(
        &cli.output_dir.join("signal.json"),
        &json!({
            "order": a.order,
            "bit_duration": a.bit_duration,
            "magnitude": a.magnitude,
            "dt": cli.dt,
            "polynomial": prbs.polynomial_id,
            "pulses": cfg.pulses(),
            "period_seconds": cfg.period(),
            "samples": p.len(),
        }),
    )?;
    println!("T_p = {:.5} s ({:.2} ms)", cfg.period(), cfg.period() * 1e3);
    Ok(())
}

fn parse_state(s: &str) -> anyhow::Result<TopologyState> {
    if s == "intact" {
        return Ok(TopologyState::Intact);
    }
    let b: u8 = s
        .parse()
        .with_context(|| format!("state `{s}` is neither `intact` nor a breaker id"))?;
    Ok(TopologyState::Breaker(b))
}

fn selected(net: &NetworkModel, plants: &[u8]) -> anyhow::Result<Vec<u8>> {
    if plants.is_empty() {
        return Ok(net.plant_ids());
    }
    for &p in plants {
        net.plant(p)?;
    }
    Ok(plants.to_vec())
}

fn cmd_probe(cli: &Cli, a: &ProbeArgs) -> anyhow::Result<()> {
    let net = load_fixture(cli)?;
    let state = parse_state(&a.state)?;
    let states: BreakerStates = state.breakers();
    states.validate()?;
    let plants = selected(&net, &a.plants)?;
    let cfg = pipeline(cli);
    let est = probe_pass(&Scenario::steady(&net, &states), &plants, &cfg)?;
    let mut summary = Vec::new();
    for e in &est {
        let dir = cli.output_dir.join(format!("plant_{}", e.plant_id));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, trace) in [("current.csv", &e.current), ("correlation.csv", &e.correlation)] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
            trace.write_csv(std::io::BufWriter::new(file))?;
        }
        let mut markov = String::from("lag,value\n");
        for (k, v) in e.markov.values.iter().enumerate() {
            markov.push_str(&format!("{},{v}\n", k as f64 * e.markov.spacing));
        }
        std::fs::write(dir.join("markov.csv"), markov)?;
        e.realization.save(dir.join("realization.json"))?;
        log(cli, format!("plant {}: order {}", e.plant_id, e.realization.order()));
        summary.push(json!({
            "plant_id": e.plant_id,
            "order": e.realization.order(),
            "spectral_radius": e.realization.spectral_radius(),
            "islanded": net.is_islanded(e.plant_id, &states)?,
        }));
    }
    write_json(
        &cli.output_dir.join("probe.json"),
        &json!({
            "fixture": cli.fixture,
            "fixture_hash": net.fingerprint(),
            "state": state.to_string(),
            "plants": plants,
            "pipeline": cfg,
            "results": summary,
        }),
    )?;
    println!("probed {} plant(s) in state {state}", est.len());
    Ok(())
}

fn cmd_baseline(cli: &Cli, a: &BaselineArgs) -> anyhow::Result<()> {
    let net = load_fixture(cli)?;
    let all = match a.states.as_str() {
        "all" => true,
        "intact" => false,
        other => bail!("--states must be `all` or `intact`, got `{other}`"),
    };
    let plants = selected(&net, &a.plants)?;
    let cfg = pipeline(cli);
    log(cli, "probing baseline states");
    let libs = build_libraries(&net, &cfg, a.grid_points, all)?;
    for lib in libs.iter().filter(|l| plants.contains(&l.plant_id)) {
        let dir = cli.output_dir.join(format!("plant_{}", lib.plant_id));
        lib.save(&dir)?;
        println!(
            "plant {}: {} realization(s) in {}",
            lib.plant_id,
            1 + lib.per_state.len(),
            dir.display()
        );
    }
    write_json(
        &cli.output_dir.join("baseline.json"),
        &json!({
            "fixture": cli.fixture,
            "fixture_hash": net.fingerprint(),
            "states": a.states,
            "plants": plants,
            "grid_points": a.grid_points,
            "pipeline": cfg,
        }),
    )
}

fn cmd_gaptable(cli: &Cli, a: &GapArgs) -> anyhow::Result<()> {
    let net = load_fixture(cli)?;
    let cfg = pipeline(cli);
    log(cli, "probing 13 states twice");
    let (table, libs) = run_gap_table(&net, &cfg, a.grid_points, a.probe_start)?;
    table.write_csv(cli.output_dir.join("gap_table.csv"))?;
    table.write_json(cli.output_dir.join("gap_table.json"))?;
    if a.save_baselines {
        for lib in &libs {
            lib.save(cli.output_dir.join("baselines").join(format!("plant_{}", lib.plant_id)))?;
        }
    }
    let header: Vec<String> = table
        .plants
        .iter()
        .map(|p| format!("{:>9}", format!("plant {p}")))
        .collect();
    println!("{:>7} {}", "state", header.join(" "));
    for ((st, row), isl) in table.states.iter().zip(&table.gaps).zip(&table.islanded) {
        let cells: Vec<String> = row
            .iter()
            .zip(isl)
            .map(|(g, i)| format!("{:>9}", format!("{g:.3}{}", if *i { "*" } else { " " })))
            .collect();
        println!("{:>7} {}", st.to_string(), cells.join(" "));
    }
    let (isl, con) = table.separation();
    println!("lowest islanded gap {isl:.3}, highest connected gap {con:.3} (* = islanded)");
    Ok(())
}

fn load_libraries(dir: &Path, net: &NetworkModel) -> anyhow::Result<Vec<BaselineLibrary>> {
    net.plant_ids()
        .into_iter()
        .map(|p| {
            let sub = dir.join(format!("plant_{p}"));
            BaselineLibrary::load(&sub, net).with_context(|| format!("loading baseline library {}", sub.display()))
        })
        .collect()
}

fn cmd_montecarlo(cli: &Cli, a: &McArgs, topology: bool) -> anyhow::Result<()> {
    let net = load_fixture(cli)?;
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(islandprobe::Error::from)?
        }
        None => MonteCarloConfig {
            dt: cli.dt,
            ..Default::default()
        },
    };
    cfg.n_runs = a.runs.unwrap_or(cfg.n_runs);
    cfg.rng_seed = a.seed.unwrap_or(cfg.rng_seed);
    cfg.threshold = a.threshold.unwrap_or(cfg.threshold);
    cfg.grid_points = a.grid_points.unwrap_or(cfg.grid_points);
    cfg.workers = cli.workers.or(cfg.workers);
    cfg.topology = topology;
    cfg.validate()?;
    let libs = match &a.baseline_dir {
        Some(dir) => load_libraries(dir, &net)?,
        None => {
            log(cli, "building baseline libraries");
            build_libraries(&net, &cfg.pipeline(), cfg.grid_points, topology)?
        }
    };
    log(cli, format!("running {} randomized run(s)", cfg.n_runs));
    let report = run_monte_carlo(&cfg, &net, &libs)?;
    let stem = if topology { "topology" } else { "montecarlo" };
    report.write_csv(cli.output_dir.join(format!("{stem}_runs.csv")))?;
    report.write_json(cli.output_dir.join(format!("{stem}_summary.json")))?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
    for p in &report.per_plant {
        let mut line = format!(
            "plant {}: connected {}/{} ({}), islanded {}/{} ({})",
            p.plant_id,
            p.connected_correct,
            p.connected_runs,
            pct(p.connected_accuracy),
            p.islanded_correct,
            p.islanded_runs,
            pct(p.islanded_accuracy)
        );
        if topology {
            line.push_str(&format!(
                ", topology {}, islanding via topology {}",
                pct(p.topology_accuracy),
                pct(p.islanding_accuracy_via_topology)
            ));
        }
        println!("{line}");
    }
    if cfg.threshold != DEFAULT_THRESHOLD {
        log(
            cli,
            format!(
                "threshold {} differs from the default {DEFAULT_THRESHOLD}",
                cfg.threshold
            ),
        );
    }
    Ok(())
}
