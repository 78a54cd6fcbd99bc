//! End-to-end probing pass: simulate with every requested plant injecting its PRBPT, then
//! filter, correlate, extract Markov parameters and realize a model per plant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{
    simulate, BreakerAction, BreakerEvent, BreakerStates, NetworkModel, PlantInjection, ProbingWindow,
    SimulationSchedule,
};
use crate::probe::{extract_markov, highpass_filter, Correlator, MarkovSequence, DEFAULT_CUTOFF_HZ};
use crate::signal::{build_prbpt, build_reference, generate_prbs, injection_waveform, SignalTrace};
use crate::sysid::{project_poles, realize, record_radius, StateSpaceRealization, DEFAULT_TOL};

/// Full-resolution simulation step.
pub const FINE_DT: f64 = 1e-6;
/// Coarsest step dividing the 40/48/56 us bit durations; used for desk-scale runs.
pub const DESK_DT: f64 = 4e-6;
/// Initialization period before any probing.
pub const INIT_HOLD: f64 = 0.05;
/// Total simulated time per pass.
pub const SIM_END: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dt: f64,
    /// High-pass cutoff applied to the measured current; `None` skips filtering.
    pub cutoff_hz: Option<f64>,
    /// Number of Markov parameters retained for Hankel assembly.
    pub markov_len: usize,
    pub era_tol: f64,
    /// Cyclic prefix injected before the analysed period.
    pub lead_in: f64,
    pub t_end: f64,
    /// Permit simultaneous probing by plants sharing a bit duration (interference studies).
    #[serde(default)]
    pub allow_shared_bit_duration: bool,
    /// Project realized poles onto the disc of radius `record_radius(markov_len)`.
    #[serde(default = "enabled")]
    pub project_poles: bool,
}

fn enabled() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dt: FINE_DT,
            cutoff_hz: Some(DEFAULT_CUTOFF_HZ),
            markov_len: 512,
            era_tol: DEFAULT_TOL,
            lead_in: 0.04,
            t_end: SIM_END,
            allow_shared_bit_duration: false,
            project_poles: true,
        }
    }
}

impl PipelineConfig {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Result of one probing pass at one plant.
#[derive(Debug, Clone)]
pub struct PlantEstimate {
    pub plant_id: u8,
    pub markov: MarkovSequence,
    pub realization: StateSpaceRealization,
    /// Correlator output over one period (lags from 0).
    pub correlation: SignalTrace,
    /// Raw measured plant current over the whole pass.
    pub current: SignalTrace,
}

/// What happens to the network during a pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub net: NetworkModel,
    pub initial_states: BreakerStates,
    pub events: Vec<BreakerEvent>,
    pub probe_start: f64,
}

impl Scenario {
    /// Fixed topology from `t = 0`; probing right after initialization.
    pub fn steady(net: &NetworkModel, states: &BreakerStates) -> Self {
        Self {
            net: net.clone(),
            initial_states: states.clone(),
            events: Vec::new(),
            probe_start: INIT_HOLD,
        }
    }

    /// Intact start, one breaker opened at `event_time`, probing `delay` seconds later.
    pub fn breaker_event(net: &NetworkModel, breaker: u8, event_time: f64, delay: f64) -> Self {
        Self {
            net: net.clone(),
            initial_states: BreakerStates::intact(),
            events: vec![BreakerEvent {
                time: event_time,
                breaker_id: breaker,
                action: BreakerAction::Open,
            }],
            probe_start: event_time + delay,
        }
    }
}

/// Runs one simulated pass in which every plant in `probing` injects simultaneously.
pub fn probe_pass(scenario: &Scenario, probing: &[u8], cfg: &PipelineConfig) -> Result<Vec<PlantEstimate>> {
    let net = &scenario.net;
    let dt = cfg.dt;
    if !cfg.allow_shared_bit_duration {
        net.check_distinct_probing(probing)?;
    }
    let start = (scenario.probe_start / dt).round() * dt;
    let mut injections = Vec::new();
    let mut windows = Vec::new();
    let mut per_plant = Vec::new();
    for &pid in probing {
        let plant = net.plant(pid)?;
        let pcfg = plant.probing.config(dt)?;
        let prbs = generate_prbs(pcfg.order, &plant.probing.polynomial_id)?;
        let p = build_prbpt(&prbs, &pcfg)?;
        let s = build_reference(&prbs, &pcfg)?;
        let lead = (cfg.lead_in / pcfg.bit_duration).round() * pcfg.bit_duration;
        injections.push(PlantInjection {
            plant_id: pid,
            trace: injection_waveform(&p, lead, 1, start),
        });
        windows.push(ProbingWindow {
            plant_id: pid,
            t_start: start,
            lead_in: lead,
            n_periods: 1,
        });
        per_plant.push((pid, pcfg, s, lead));
    }
    let schedule = SimulationSchedule {
        dt,
        t_end: cfg.t_end,
        init_hold: INIT_HOLD.min(start),
        initial_states: scenario.initial_states.clone(),
        events: scenario.events.clone(),
        probing_windows: windows,
    };
    let measured = simulate(net, &schedule, &injections)?;
    per_plant
        .into_iter()
        .map(|(pid, pcfg, s, lead)| {
            let m = measured
                .iter()
                .find(|m| m.plant_id == pid)
                .ok_or(Error::UnknownPlant(pid))?;
            let y = match cfg.cutoff_hz {
                Some(fc) => highpass_filter(&m.injected_current, fc)?,
                None => m.injected_current.clone(),
            };
            let from = ((start + lead) / dt).round() as usize;
            let n = pcfg.period_samples();
            if from + n > y.len() {
                return Err(Error::InsufficientSamples {
                    needed: from + n,
                    available: y.len(),
                });
            }
            let window = SignalTrace::new(y.samples[from..from + n].to_vec(), dt, start + lead);
            let z = Correlator::new(&s).correlate(&window)?;
            let markov = extract_markov(&z, pcfg.bit_duration, cfg.markov_len)?;
            let mut realization = realize(&markov, cfg.era_tol)?;
            if cfg.project_poles {
                realization = project_poles(&realization, record_radius(cfg.markov_len));
            }
            Ok(PlantEstimate {
                plant_id: pid,
                markov,
                realization,
                correlation: z,
                current: m.injected_current.clone(),
            })
        })
        .collect()
}
