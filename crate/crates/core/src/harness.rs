//! Experiment drivers: the per-state gap table and randomized Monte-Carlo accuracy runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    classify_islanding, classify_topology, libraries_from_states, probe_states, BaselineLibrary, Decision,
    TopologyState, DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::netsim::{BreakerStates, NetworkModel};
use crate::nugap::DEFAULT_GRID_POINTS;
use crate::pipeline::{probe_pass, PipelineConfig, Scenario, FINE_DT, INIT_HOLD};

/// Delay between a breaker event and the start of probing: two 60 Hz cycles.
pub const DEFAULT_PROBE_DELAY: f64 = 2.0 / 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_runs: usize,
    pub load_scale_range: (f64, f64),
    pub event_time: f64,
    pub probe_delay: f64,
    pub rng_seed: u64,
    pub dt: f64,
    pub threshold: f64,
    pub grid_points: usize,
    /// Also classify each run against the full state library.
    pub topology: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_runs: 300,
            load_scale_range: (0.5, 1.5),
            event_time: 0.16,
            probe_delay: DEFAULT_PROBE_DELAY,
            rng_seed: 2024,
            dt: FINE_DT,
            threshold: DEFAULT_THRESHOLD,
            grid_points: DEFAULT_GRID_POINTS,
            topology: false,
            workers: None,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.load_scale_range;
        if self.n_runs == 0 {
            return Err(Error::Schedule("n_runs must be at least 1".into()));
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidScale(lo));
        }
        if !(self.event_time > INIT_HOLD && self.probe_delay >= 0.0) {
            return Err(Error::Schedule(format!(
                "event at {} s must follow the {} s initialization and precede probing",
                self.event_time, INIT_HOLD
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Schedule("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig::default().with_dt(self.dt)
    }
}

/// One randomized draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDraw {
    pub run: usize,
    pub breaker: u8,
    pub load_scales: Vec<f64>,
}

/// Draws every run's load scales and breaker sequentially from a single seeded stream.
pub fn draw_runs(cfg: &MonteCarloConfig, net: &NetworkModel) -> Vec<RunDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let breakers = net.breaker_ids();
    let (lo, hi) = cfg.load_scale_range;
    (0..cfg.n_runs)
        .map(|run| {
            let load_scales = (0..net.loads.len()).map(|_| rng.random_range(lo..hi)).collect();
            let breaker = breakers[rng.random_range(0..breakers.len())];
            RunDraw {
                run,
                breaker,
                load_scales,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantOutcome {
    pub plant_id: u8,
    pub gap: f64,
    pub decision: Decision,
    pub truth: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_state: Option<TopologyState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub breaker: u8,
    pub load_scales: Vec<f64>,
    pub plants: Vec<PlantOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantAccuracy {
    pub plant_id: u8,
    pub connected_runs: usize,
    pub connected_correct: usize,
    /// Percent; `None` when the class never occurred.
    pub connected_accuracy: Option<f64>,
    pub islanded_runs: usize,
    pub islanded_correct: usize,
    pub islanded_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub islanding_accuracy_via_topology: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub config: MonteCarloConfig,
    pub fixture_hash: String,
    pub per_plant: Vec<PlantAccuracy>,
    pub runs: Vec<RunRecord>,
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

impl AccuracyReport {
    /// Recomputes the per-plant table from run records.
    pub fn tabulate(config: MonteCarloConfig, fixture_hash: String, runs: Vec<RunRecord>) -> Self {
        let mut table: BTreeMap<u8, [usize; 6]> = BTreeMap::new();
        for r in &runs {
            for p in &r.plants {
                let t = table.entry(p.plant_id).or_default();
                let ok = p.decision == p.truth;
                if p.truth.is_islanded() {
                    t[2] += 1;
                    t[3] += ok as usize;
                } else {
                    t[0] += 1;
                    t[1] += ok as usize;
                }
                if let Some(d) = p.topology_decision {
                    t[4] += (d == p.truth) as usize;
                }
                let true_state = TopologyState::Breaker(r.breaker);
                t[5] += (p.topology_state == Some(true_state)) as usize;
            }
        }
        let per_plant = table
            .into_iter()
            .map(|(plant_id, t)| {
                let n = t[0] + t[2];
                PlantAccuracy {
                    plant_id,
                    connected_runs: t[0],
                    connected_correct: t[1],
                    connected_accuracy: percent(t[1], t[0]),
                    islanded_runs: t[2],
                    islanded_correct: t[3],
                    islanded_accuracy: percent(t[3], t[2]),
                    topology_accuracy: config.topology.then(|| percent(t[5], n)).flatten(),
                    islanding_accuracy_via_topology: config.topology.then(|| percent(t[4], n)).flatten(),
                }
            })
            .collect();
        Self {
            config,
            fixture_hash,
            per_plant,
            runs,
        }
    }

    pub fn all_correct(&self) -> bool {
        self.runs.iter().flat_map(|r| &r.plants).all(|p| p.decision == p.truth)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let summary = serde_json::json!({
            "config": self.config,
            "fixture_hash": self.fixture_hash,
            "per_plant": self.per_plant,
        });
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per run and plant.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out =
            String::from("run,seed_offset,breaker,plant,gap,decision,truth,topology_state,topology_decision\n");
        for r in &self.runs {
            for p in &r.plants {
                out.push_str(&format!(
                    "{},{},{},{},{:.6},{},{},{},{}\n",
                    r.run,
                    r.run,
                    r.breaker,
                    p.plant_id,
                    p.gap,
                    label(p.decision),
                    label(p.truth),
                    p.topology_state.map(|s| s.to_string()).unwrap_or_default(),
                    p.topology_decision.map(label).unwrap_or_default(),
                ));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn label(d: Decision) -> &'static str {
    match d {
        Decision::Islanded => "islanded",
        Decision::GridConnected => "connected",
    }
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(job))
            .map_err(|e| Error::Schedule(e.to_string())),
        None => Ok(job()),
    }
}

fn execute_run(
    net: &NetworkModel,
    libs: &[BaselineLibrary],
    cfg: &MonteCarloConfig,
    draw: &RunDraw,
) -> Result<RunRecord> {
    let scaled = net.scale_loads(&draw.load_scales)?;
    let scenario = Scenario::breaker_event(&scaled, draw.breaker, cfg.event_time, cfg.probe_delay);
    let estimates = probe_pass(&scenario, &net.plant_ids(), &cfg.pipeline())?;
    let open = BreakerStates::open(draw.breaker);
    let mut plants = Vec::with_capacity(estimates.len());
    for est in &estimates {
        let lib = libs
            .iter()
            .find(|l| l.plant_id == est.plant_id)
            .ok_or(Error::UnknownPlant(est.plant_id))?;
        let det = classify_islanding(&est.realization, lib, cfg.threshold)?;
        let topo = if cfg.topology {
            Some(classify_topology(&est.realization, lib)?)
        } else {
            None
        };
        plants.push(PlantOutcome {
            plant_id: est.plant_id,
            gap: det.gap_to_intact.value,
            decision: det.decision,
            truth: Decision::from_islanded(net.is_islanded(est.plant_id, &open)?),
            topology_state: topo.map(|t| t.state),
            topology_decision: topo.map(|t| t.islanding_decision),
        });
    }
    Ok(RunRecord {
        run: draw.run,
        breaker: draw.breaker,
        load_scales: draw.load_scales.clone(),
        plants,
    })
}

/// Runs the randomized breaker-opening experiment. Draws are generated up front so the report
/// does not depend on scheduling; runs are then executed concurrently.
pub fn run_monte_carlo(cfg: &MonteCarloConfig, net: &NetworkModel, libs: &[BaselineLibrary]) -> Result<AccuracyReport> {
    cfg.validate()?;
    if cfg.topology {
        if let Some(l) = libs.iter().find(|l| !l.is_complete()) {
            let missing = l
                .breakers
                .iter()
                .copied()
                .filter(|b| !l.per_state.contains_key(b))
                .collect();
            return Err(Error::IncompleteLibrary(missing));
        }
    }
    let draws = draw_runs(cfg, net);
    let runs = in_pool(cfg.workers, || {
        draws
            .par_iter()
            .map(|d| {
                execute_run(net, libs, cfg, d).map_err(|e| Error::RunFailed {
                    run: d.run,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(AccuracyReport::tabulate(cfg.clone(), net.fingerprint(), runs))
}

/// Monte-Carlo with topology classification against the full state library.
pub fn run_topology_eval(
    cfg: &MonteCarloConfig,
    net: &NetworkModel,
    libs: &[BaselineLibrary],
) -> Result<AccuracyReport> {
    let cfg = MonteCarloConfig {
        topology: true,
        ..cfg.clone()
    };
    run_monte_carlo(&cfg, net, libs)
}

/// Gap from each probed state to each plant's intact baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub plants: Vec<u8>,
    pub states: Vec<TopologyState>,
    /// `gaps[state][plant]`.
    pub gaps: Vec<Vec<f64>>,
    /// Whether the fixture map says the plant is islanded in that state.
    pub islanded: Vec<Vec<bool>>,
    pub pipeline: PipelineConfig,
    pub probe_start: f64,
    pub fixture_hash: String,
}

impl GapTable {
    /// Smallest islanded-cell gap and largest connected-cell gap.
    pub fn separation(&self) -> (f64, f64) {
        let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
        for (row, isl) in self.gaps.iter().zip(&self.islanded) {
            for (&g, &i) in row.iter().zip(isl) {
                if i {
                    worst.0 = worst.0.min(g);
                } else {
                    worst.1 = worst.1.max(g);
                }
            }
        }
        worst
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let header: Vec<String> = self.plants.iter().map(|p| format!("plant_{p}")).collect();
        let mut out = format!("state,{}\n", header.join(","));
        for (st, row) in self.states.iter().zip(&self.gaps) {
            let cells: Vec<String> = row.iter().map(|g| format!("{g:.4}")).collect();
            out.push_str(&format!("{st},{}\n", cells.join(",")));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Builds full baseline libraries by probing every state right after initialization, then
/// probes each state again at a later point of the fundamental cycle and tabulates gaps to the
/// intact baselines. The intact row therefore compares two independent probes.
pub fn run_gap_table(
    net: &NetworkModel,
    cfg: &PipelineConfig,
    grid_points: usize,
    probe_start: f64,
) -> Result<(GapTable, Vec<BaselineLibrary>)> {
    let mut states = vec![TopologyState::Intact];
    states.extend(net.breaker_ids().into_iter().map(TopologyState::Breaker));
    let baselines = probe_states(net, &states, cfg)?;
    let libs = libraries_from_states(net, &baselines, grid_points)?;
    let plants = net.plant_ids();
    let rows = states
        .par_iter()
        .map(|st| {
            let scenario = Scenario {
                probe_start,
                ..Scenario::steady(net, &st.breakers())
            };
            let est = probe_pass(&scenario, &plants, cfg)?;
            let mut gaps = Vec::new();
            let mut isl = Vec::new();
            for (e, lib) in est.iter().zip(&libs) {
                gaps.push(lib.gap_to_intact(&e.realization)?.value);
                isl.push(net.is_islanded(e.plant_id, &st.breakers())?);
            }
            Ok((gaps, isl))
        })
        .collect::<Result<Vec<_>>>()?;
    let (gaps, islanded) = rows.into_iter().unzip();
    Ok((
        GapTable {
            plants,
            states,
            gaps,
            islanded,
            pipeline: *cfg,
            probe_start,
            fixture_hash: net.fingerprint(),
        },
        libs,
    ))
}
