//! Reduced single-phase feeder model and its discrete-time (trapezoidal companion) simulation.
//!
//! Every inductive element is a series R-L two-terminal whose trapezoidal companion is a
//! conductance `1/(R + 2L/dt)` in parallel with a history current source; capacitors use
//! `2C/dt` with their own history. The grid and each plant are ideal voltage sources behind
//! their series R-L, so all nodal unknowns are bus voltages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{ProbingConfig, SignalTrace};

/// Number of switchable breakers in the feeder.
pub const BREAKER_COUNT: u8 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: String,
    pub to: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaker_id: Option<u8>,
}

/// Shunt R-L load. Effective impedance is `(R + jwL) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntLoad {
    pub bus: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl ShuntLoad {
    pub fn effective_r(&self) -> f64 {
        self.r / self.scale
    }

    pub fn effective_l(&self) -> f64 {
        self.l / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntCap {
    pub bus: String,
    #[serde(rename = "C")]
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSource {
    pub bus: String,
    /// Peak voltage.
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(rename = "series_R")]
    pub series_r: f64,
    #[serde(rename = "series_L")]
    pub series_l: f64,
}

/// Probing parameters stored with a plant; the sample interval is supplied at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantProbing {
    pub order: u32,
    pub bit_duration: f64,
    pub magnitude: f64,
    pub polynomial_id: String,
}

impl PlantProbing {
    pub fn config(&self, dt: f64) -> Result<ProbingConfig> {
        ProbingConfig::new(self.order, self.bit_duration, self.magnitude, dt)
    }
}

/// Inverter plant: ideal sinusoid (plus probing) behind the coupling R-L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantPort {
    pub plant_id: u8,
    pub bus: String,
    #[serde(rename = "coupling_R")]
    pub coupling_r: f64,
    #[serde(rename = "coupling_L")]
    pub coupling_l: f64,
    /// Peak voltage of the nominal sinusoid.
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
    pub probing: PlantProbing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub buses: Vec<String>,
    pub branches: Vec<Branch>,
    pub loads: Vec<ShuntLoad>,
    pub caps: Vec<ShuntCap>,
    pub grid_source: GridSource,
    pub plants: Vec<PlantPort>,
}

/// Set of open breakers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BreakerStates {
    pub open_set: BTreeSet<u8>,
}

impl BreakerStates {
    pub fn intact() -> Self {
        Self::default()
    }

    pub fn open(id: u8) -> Self {
        Self {
            open_set: BTreeSet::from([id]),
        }
    }

    pub fn is_open(&self, id: u8) -> bool {
        self.open_set.contains(&id)
    }

    pub fn validate(&self) -> Result<()> {
        match self.open_set.iter().find(|&&b| b == 0 || b > BREAKER_COUNT) {
            Some(&b) => Err(Error::UnknownBreaker(b)),
            None => Ok(()),
        }
    }
}

impl NetworkModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("network serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn plant(&self, plant_id: u8) -> Result<&PlantPort> {
        self.plants
            .iter()
            .find(|p| p.plant_id == plant_id)
            .ok_or(Error::UnknownPlant(plant_id))
    }

    pub fn plant_ids(&self) -> Vec<u8> {
        self.plants.iter().map(|p| p.plant_id).collect()
    }

    pub fn breaker_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.branches.iter().filter_map(|b| b.breaker_id).collect();
        ids.sort_unstable();
        ids
    }

    fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.as_str(), i)).collect()
    }

    /// Circuit checks plus pairwise-distinct probing bit durations.
    pub fn validate(&self) -> Result<()> {
        self.validate_circuit()?;
        self.check_distinct_probing(&self.plant_ids())
    }

    /// Rejects simultaneous probing by plants sharing a bit duration.
    pub fn check_distinct_probing(&self, plant_ids: &[u8]) -> Result<()> {
        let plants: Vec<&PlantPort> = self.plants.iter().filter(|p| plant_ids.contains(&p.plant_id)).collect();
        for (i, a) in plants.iter().enumerate() {
            for b in &plants[i + 1..] {
                if (a.probing.bit_duration - b.probing.bit_duration).abs() < 1e-12 {
                    return Err(Error::InvalidNetwork(format!(
                        "plants {} and {} share bit duration {}",
                        a.plant_id, b.plant_id, a.probing.bit_duration
                    )));
                }
            }
        }
        Ok(())
    }

    /// Structural and parameter checks on the circuit alone.
    pub fn validate_circuit(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidNetwork(m));
        let idx = self.bus_index();
        if idx.len() != self.buses.len() {
            return bad("duplicate bus ids".into());
        }
        let known = |b: &str| idx.contains_key(b);
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let mut breakers = BTreeSet::new();
        for br in &self.branches {
            if !known(&br.from) || !known(&br.to) || br.from == br.to {
                return bad(format!(
                    "branch {}-{} references unknown or identical buses",
                    br.from, br.to
                ));
            }
            if !nonneg(br.r) || !nonneg(br.l) || br.r + br.l <= 0.0 {
                return bad(format!("branch {}-{} needs R, L >= 0 and R + L > 0", br.from, br.to));
            }
            if let Some(id) = br.breaker_id {
                if id == 0 || id > BREAKER_COUNT || !breakers.insert(id) {
                    return bad(format!("breaker id {id} invalid or duplicated"));
                }
            }
        }
        for ld in &self.loads {
            if !known(&ld.bus) || !nonneg(ld.r) || !nonneg(ld.l) || ld.r + ld.l <= 0.0 {
                return bad(format!("load at {} invalid", ld.bus));
            }
            if !(ld.scale.is_finite() && ld.scale > 0.0) {
                return Err(Error::InvalidScale(ld.scale));
            }
        }
        for cap in &self.caps {
            if !known(&cap.bus) || !nonneg(cap.c) {
                return bad(format!("capacitor at {} invalid", cap.bus));
            }
        }
        let g = &self.grid_source;
        if !known(&g.bus) || !nonneg(g.series_r) || !nonneg(g.series_l) || g.series_r + g.series_l <= 0.0 {
            return bad("grid source invalid".into());
        }
        if !(g.frequency.is_finite() && g.frequency > 0.0) {
            return bad("grid frequency must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.plants {
            if !known(&p.bus) || !ids.insert(p.plant_id) {
                return bad(format!("plant {} invalid or duplicated", p.plant_id));
            }
            if !nonneg(p.coupling_r) || !nonneg(p.coupling_l) || p.coupling_r + p.coupling_l <= 0.0 {
                return bad(format!("plant {} coupling invalid", p.plant_id));
            }
        }
        let comps = self.components(&BreakerStates::intact());
        if comps.iter().collect::<BTreeSet<_>>().len() > 1 {
            return bad("bus graph is not connected with all breakers closed".into());
        }
        Ok(())
    }

    /// Component label of every bus with the given breakers open.
    fn components(&self, states: &BreakerStates) -> Vec<usize> {
        let idx = self.bus_index();
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for br in &self.branches {
            if br.breaker_id.is_some_and(|id| states.is_open(id)) {
                continue;
            }
            let (a, b) = (
                find(&mut parent, idx[br.from.as_str()]),
                find(&mut parent, idx[br.to.as_str()]),
            );
            parent[a] = b;
        }
        (0..self.buses.len()).map(|i| find(&mut parent, i)).collect()
    }

    /// Whether the plant's bus has lost its path to the grid source.
    pub fn is_islanded(&self, plant_id: u8, states: &BreakerStates) -> Result<bool> {
        let plant = self.plant(plant_id)?;
        let idx = self.bus_index();
        let comps = self.components(states);
        Ok(comps[idx[plant.bus.as_str()]] != comps[idx[self.grid_source.bus.as_str()]])
    }

    /// For every breaker, the plants left islanded when it alone is open.
    pub fn island_map(&self) -> BTreeMap<u8, Vec<u8>> {
        self.breaker_ids()
            .into_iter()
            .map(|id| {
                let st = BreakerStates::open(id);
                let plants = self
                    .plant_ids()
                    .into_iter()
                    .filter(|&p| self.is_islanded(p, &st).unwrap_or(false))
                    .collect();
                (id, plants)
            })
            .collect()
    }

    /// Copy with every load's admittance multiplied by its factor.
    pub fn scale_loads(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.loads.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} scale factors for {} loads",
                factors.len(),
                self.loads.len()
            )));
        }
        if let Some(&f) = factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
            return Err(Error::InvalidScale(f));
        }
        let mut net = self.clone();
        for (ld, f) in net.loads.iter_mut().zip(factors) {
            ld.scale *= f;
        }
        Ok(net)
    }

    /// Copy with the grid and plant sinusoids switched off (probing still applies).
    pub fn with_sources_zeroed(&self) -> Self {
        let mut net = self.clone();
        net.grid_source.amplitude = 0.0;
        for p in &mut net.plants {
            p.amplitude = 0.0;
        }
        net
    }

    /// Reports a bus set that has no shunt path to ground under the given state.
    fn check_references(&self, states: &BreakerStates, dc: bool) -> Result<()> {
        let comps = self.components(states);
        let idx = self.bus_index();
        let mut grounded = BTreeSet::new();
        for ld in &self.loads {
            grounded.insert(comps[idx[ld.bus.as_str()]]);
        }
        if !dc {
            for c in self.caps.iter().filter(|c| c.c > 0.0) {
                grounded.insert(comps[idx[c.bus.as_str()]]);
            }
        }
        grounded.insert(comps[idx[self.grid_source.bus.as_str()]]);
        for p in &self.plants {
            grounded.insert(comps[idx[p.bus.as_str()]]);
        }
        let floating: Vec<String> = self
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| !grounded.contains(&comps[*i]))
            .map(|(_, b)| b.clone())
            .collect();
        if floating.is_empty() {
            Ok(())
        } else {
            Err(Error::FloatingSubnetwork { buses: floating })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Terminal {
    Ground,
    Node(usize),
    /// 0 = grid, 1.. = plants in model order.
    Source(usize),
}

#[derive(Debug, Clone)]
struct RlElement {
    a: Terminal,
    b: Terminal,
    r: f64,
    l: f64,
    breaker: Option<u8>,
    closed: bool,
    g: f64,
    /// `2L/dt - R`
    k: f64,
    i: f64,
}

#[derive(Debug, Clone)]
struct CapElement {
    node: usize,
    c: f64,
    g: f64,
    i: f64,
}

/// Time-stepping nodal solver for one network, holding the factorized nodal matrix for the
/// current breaker state together with all element states.
#[derive(Debug, Clone)]
pub struct DiscreteSolver {
    net: NetworkModel,
    dt: f64,
    states: BreakerStates,
    rl: Vec<RlElement>,
    caps: Vec<CapElement>,
    /// Row-major inverse of the nodal conductance matrix.
    inverse: Vec<f64>,
    v: Vec<f64>,
    src_v: Vec<f64>,
    rhs: Vec<f64>,
    /// Element index of each plant's coupling, in model order.
    plant_elements: Vec<usize>,
    plant_buses: Vec<usize>,
}

/// Builds a solver for the given breaker state with all element states at zero.
pub fn assemble(net: &NetworkModel, states: &BreakerStates, dt: f64) -> Result<DiscreteSolver> {
    net.validate_circuit()?;
    states.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Schedule(format!("invalid time step {dt}")));
    }
    let idx = net.bus_index();
    let mut rl = Vec::new();
    let mk = |a, b, r: f64, l: f64, breaker: Option<u8>| RlElement {
        a,
        b,
        r,
        l,
        breaker,
        closed: true,
        g: 0.0,
        k: 0.0,
        i: 0.0,
    };
    for br in &net.branches {
        rl.push(mk(
            Terminal::Node(idx[br.from.as_str()]),
            Terminal::Node(idx[br.to.as_str()]),
            br.r,
            br.l,
            br.breaker_id,
        ));
    }
    for ld in &net.loads {
        rl.push(mk(
            Terminal::Node(idx[ld.bus.as_str()]),
            Terminal::Ground,
            ld.effective_r(),
            ld.effective_l(),
            None,
        ));
    }
    let g = &net.grid_source;
    rl.push(mk(
        Terminal::Source(0),
        Terminal::Node(idx[g.bus.as_str()]),
        g.series_r,
        g.series_l,
        None,
    ));
    let mut plant_elements = Vec::new();
    let mut plant_buses = Vec::new();
    for (k, p) in net.plants.iter().enumerate() {
        plant_elements.push(rl.len());
        plant_buses.push(idx[p.bus.as_str()]);
        rl.push(mk(
            Terminal::Source(k + 1),
            Terminal::Node(idx[p.bus.as_str()]),
            p.coupling_r,
            p.coupling_l,
            None,
        ));
    }
    for e in &mut rl {
        e.g = 1.0 / (e.r + 2.0 * e.l / dt);
        e.k = 2.0 * e.l / dt - e.r;
    }
    let caps = net
        .caps
        .iter()
        .filter(|c| c.c > 0.0)
        .map(|c| CapElement {
            node: idx[c.bus.as_str()],
            c: c.c,
            g: 2.0 * c.c / dt,
            i: 0.0,
        })
        .collect();
    let n = net.buses.len();
    let mut solver = DiscreteSolver {
        net: net.clone(),
        dt,
        states: BreakerStates::intact(),
        rl,
        caps,
        inverse: Vec::new(),
        v: vec![0.0; n],
        src_v: vec![0.0; net.plants.len() + 1],
        rhs: vec![0.0; n],
        plant_elements,
        plant_buses,
    };
    solver.set_states(states)?;
    Ok(solver)
}

impl DiscreteSolver {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &BreakerStates {
        &self.states
    }

    /// Applies a new breaker state and refactorizes. Opened branches lose their current
    /// instantly; closed ones start from zero current.
    pub fn set_states(&mut self, states: &BreakerStates) -> Result<()> {
        states.validate()?;
        self.net.check_references(states, false)?;
        for e in &mut self.rl {
            let closed = e.breaker.is_none_or(|id| !states.is_open(id));
            if closed != e.closed {
                e.i = 0.0;
            }
            e.closed = closed;
        }
        let n = self.net.buses.len();
        let mut gm = DMatrix::<f64>::zeros(n, n);
        for e in self.rl.iter().filter(|e| e.closed) {
            match (e.a, e.b) {
                (Terminal::Node(a), Terminal::Node(b)) => {
                    gm[(a, a)] += e.g;
                    gm[(b, b)] += e.g;
                    gm[(a, b)] -= e.g;
                    gm[(b, a)] -= e.g;
                }
                (Terminal::Node(a), _) | (_, Terminal::Node(a)) => gm[(a, a)] += e.g,
                _ => {}
            }
        }
        for c in &self.caps {
            gm[(c.node, c.node)] += c.g;
        }
        let inv = gm.lu().try_inverse().ok_or_else(|| Error::FloatingSubnetwork {
            buses: self.net.buses.clone(),
        })?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::FloatingSubnetwork {
                buses: self.net.buses.clone(),
            });
        }
        self.inverse = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| inv[(i, j)])
            .collect();
        self.states = states.clone();
        Ok(())
    }

    fn terminal_voltage(&self, t: Terminal) -> f64 {
        match t {
            Terminal::Ground => 0.0,
            Terminal::Node(i) => self.v[i],
            Terminal::Source(s) => self.src_v[s],
        }
    }

    /// Initializes every element at the sinusoidal steady state of the sources at `t`
    /// (probing excluded), using a phasor solve at the grid frequency.
    pub fn initialize_steady_state(&mut self, t: f64) -> Result<()> {
        let w = 2.0 * PI * self.net.grid_source.frequency;
        let n = self.net.buses.len();
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        let mut inj = nalgebra::DVector::<Complex64>::zeros(n);
        let sources = self.source_phasors();
        let adm = |e: &RlElement| 1.0 / Complex64::new(e.r, w * e.l);
        for e in self.rl.iter().filter(|e| e.closed) {
            let ye = adm(e);
            match (e.a, e.b) {
                (Terminal::Node(a), Terminal::Node(b)) => {
                    y[(a, a)] += ye;
                    y[(b, b)] += ye;
                    y[(a, b)] -= ye;
                    y[(b, a)] -= ye;
                }
                (Terminal::Source(s), Terminal::Node(b)) => {
                    y[(b, b)] += ye;
                    inj[b] += ye * sources[s];
                }
                (Terminal::Node(a), Terminal::Ground) => y[(a, a)] += ye,
                _ => {}
            }
        }
        for c in &self.caps {
            y[(c.node, c.node)] += Complex64::new(0.0, w * c.c);
        }
        let vph = y.lu().solve(&inj).ok_or(Error::SingularAtFrequency { omega: w })?;
        let rot = Complex64::from_polar(1.0, w * t);
        let phasor = |term: Terminal| match term {
            Terminal::Ground => Complex64::new(0.0, 0.0),
            Terminal::Node(i) => vph[i],
            Terminal::Source(s) => sources[s],
        };
        for i in 0..n {
            self.v[i] = (vph[i] * rot).re;
        }
        for (s, ph) in sources.iter().enumerate() {
            self.src_v[s] = (ph * rot).re;
        }
        for e in &mut self.rl {
            e.i = if e.closed {
                ((phasor(e.a) - phasor(e.b)) * adm(e) * rot).re
            } else {
                0.0
            };
        }
        for c in &mut self.caps {
            c.i = (vph[c.node] * Complex64::new(0.0, w * c.c) * rot).re;
        }
        Ok(())
    }

    fn source_phasors(&self) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(self.net.grid_source.amplitude, 0.0)];
        out.extend(
            self.net
                .plants
                .iter()
                .map(|p| Complex64::from_polar(p.amplitude, p.phase_deg.to_radians())),
        );
        out
    }

    /// Sinusoidal source voltages at time `t` (grid first, then plants in model order).
    pub fn source_voltages(&self, t: f64) -> Vec<f64> {
        let w = 2.0 * PI * self.net.grid_source.frequency;
        let mut out = vec![self.net.grid_source.amplitude * (w * t).cos()];
        out.extend(
            self.net
                .plants
                .iter()
                .map(|p| p.amplitude * (w * t + p.phase_deg.to_radians()).cos()),
        );
        out
    }

    /// Advances one step given the source voltages at the new time point.
    pub fn step(&mut self, sources: &[f64]) {
        let n = self.v.len();
        self.rhs.iter_mut().for_each(|r| *r = 0.0);
        let mut hist = Vec::with_capacity(self.rl.len());
        for e in &self.rl {
            if !e.closed {
                hist.push(0.0);
                continue;
            }
            let vn = self.terminal_voltage(e.a) - self.terminal_voltage(e.b);
            let h = if e.l > 0.0 { e.g * (vn + e.k * e.i) } else { 0.0 };
            hist.push(h);
        }
        self.src_v.copy_from_slice(sources);
        for (e, &h) in self.rl.iter().zip(&hist) {
            if !e.closed {
                continue;
            }
            match (e.a, e.b) {
                (Terminal::Node(a), Terminal::Node(b)) => {
                    self.rhs[a] -= h;
                    self.rhs[b] += h;
                }
                (Terminal::Node(a), Terminal::Ground) => self.rhs[a] -= h,
                (Terminal::Source(s), Terminal::Node(b)) => self.rhs[b] += e.g * self.src_v[s] + h,
                _ => {}
            }
        }
        let cap_hist: Vec<f64> = self.caps.iter().map(|c| -c.g * self.v[c.node] - c.i).collect();
        for (c, &h) in self.caps.iter().zip(&cap_hist) {
            self.rhs[c.node] -= h;
        }
        for i in 0..n {
            let row = &self.inverse[i * n..(i + 1) * n];
            self.v[i] = row.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        }
        for (k, h) in hist.into_iter().enumerate() {
            let e = &self.rl[k];
            if !e.closed {
                continue;
            }
            let v = self.terminal_voltage(e.a) - self.terminal_voltage(e.b);
            self.rl[k].i = e.g * v + h;
        }
        for (c, h) in self.caps.iter_mut().zip(cap_hist) {
            c.i = c.g * self.v[c.node] + h;
        }
    }

    /// Current flowing from the plant source into its bus.
    pub fn plant_current(&self, plant_index: usize) -> f64 {
        self.rl[self.plant_elements[plant_index]].i
    }

    pub fn plant_bus_voltage(&self, plant_index: usize) -> f64 {
        self.v[self.plant_buses[plant_index]]
    }

    /// `sum 1/2 L i^2 + sum 1/2 C v^2` over all energy-storing elements.
    pub fn stored_energy(&self) -> f64 {
        let mag: f64 = self.rl.iter().map(|e| 0.5 * e.l * e.i * e.i).sum();
        let el: f64 = self
            .caps
            .iter()
            .map(|c| 0.5 * c.c * self.v[c.node] * self.v[c.node])
            .sum();
        mag + el
    }

    /// Sets arbitrary element states (inductor currents, capacitor voltages); for tests of
    /// free response.
    pub fn set_raw_state(&mut self, currents: &[f64], voltages: &[f64]) {
        for (e, &i) in self.rl.iter_mut().zip(currents) {
            e.i = if e.closed { i } else { 0.0 };
        }
        self.v.copy_from_slice(voltages);
        // consistent capacitor currents are unknown; start them at zero
        for c in &mut self.caps {
            c.i = 0.0;
        }
    }

    /// Sets the source voltages taken as the previous time point (a step applied at `0-`).
    pub fn prime_sources(&mut self, sources: &[f64]) {
        self.src_v.copy_from_slice(sources);
    }

    pub fn element_count(&self) -> usize {
        self.rl.len()
    }

    pub fn node_count(&self) -> usize {
        self.v.len()
    }

    pub fn node_voltages(&self) -> &[f64] {
        &self.v
    }
}

/// Breaker action at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakerAction {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakerEvent {
    pub time: f64,
    pub breaker_id: u8,
    pub action: BreakerAction,
}

/// Interval during which a plant injects its probing waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbingWindow {
    pub plant_id: u8,
    pub t_start: f64,
    /// Cyclic prefix injected ahead of the analysed periods.
    pub lead_in: f64,
    pub n_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSchedule {
    pub dt: f64,
    pub t_end: f64,
    pub init_hold: f64,
    #[serde(default)]
    pub initial_states: BreakerStates,
    #[serde(default)]
    pub events: Vec<BreakerEvent>,
    #[serde(default)]
    pub probing_windows: Vec<ProbingWindow>,
}

impl SimulationSchedule {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Schedule(m));
        if !(self.dt > 0.0 && self.t_end > 0.0) {
            return err("dt and t_end must be positive".into());
        }
        if !(0.0..=self.t_end).contains(&self.init_hold) {
            return err(format!("init_hold {} outside [0, {}]", self.init_hold, self.t_end));
        }
        if let Some(e) = self.events.iter().find(|e| !(0.0..=self.t_end).contains(&e.time)) {
            return err(format!("event at {} s outside [0, {}]", e.time, self.t_end));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Injection waveform attached to one plant; `trace.t_start` is the injection onset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantInjection {
    pub plant_id: u8,
    pub trace: SignalTrace,
}

/// Measured waveforms at one plant port, sampled from `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMeasurement {
    pub plant_id: u8,
    pub injected_current: SignalTrace,
    pub port_voltage: SignalTrace,
}

/// Time-steps the network over the schedule, starting from the sinusoidal steady state of
/// the initial breaker configuration.
pub fn simulate(
    net: &NetworkModel,
    schedule: &SimulationSchedule,
    injections: &[PlantInjection],
) -> Result<Vec<PlantMeasurement>> {
    schedule.validate()?;
    let dt = schedule.dt;
    let steps = schedule.steps();
    let mut solver = assemble(net, &schedule.initial_states, dt)?;
    solver.initialize_steady_state(0.0)?;

    // probe sample offsets per plant index
    let mut probes: Vec<Option<(usize, &[f64])>> = vec![None; net.plants.len()];
    for inj in injections {
        let pi = net
            .plants
            .iter()
            .position(|p| p.plant_id == inj.plant_id)
            .ok_or(Error::UnknownPlant(inj.plant_id))?;
        if (inj.trace.dt - dt).abs() > 1e-9 * dt {
            return Err(Error::Schedule(format!(
                "probing signal for plant {} sampled at {} s, schedule uses {} s",
                inj.plant_id, inj.trace.dt, dt
            )));
        }
        let offset = inj.trace.t_start / dt;
        if (offset - offset.round()).abs() > 1e-6 || offset < 0.0 {
            return Err(Error::Schedule(format!(
                "probing onset {} s for plant {} is not on the simulation grid",
                inj.trace.t_start, inj.plant_id
            )));
        }
        if let Some(w) = schedule.probing_windows.iter().find(|w| w.plant_id == inj.plant_id) {
            if (w.t_start - inj.trace.t_start).abs() > 0.5 * dt {
                return Err(Error::Schedule(format!(
                    "plant {} window starts at {} s but its probing signal at {} s",
                    inj.plant_id, w.t_start, inj.trace.t_start
                )));
            }
            if w.t_start < schedule.init_hold {
                return Err(Error::Schedule(format!(
                    "plant {} probes before the end of initialization",
                    inj.plant_id
                )));
            }
        }
        if inj.trace.t_start + inj.trace.duration() > schedule.t_end + 0.5 * dt {
            return Err(Error::Schedule(format!(
                "probing for plant {} runs past the end of the simulation",
                inj.plant_id
            )));
        }
        probes[pi] = Some((offset.round() as usize, &inj.trace.samples));
    }

    let mut events = schedule.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;
    let mut states = schedule.initial_states.clone();

    let np = net.plants.len();
    let mut currents = vec![Vec::with_capacity(steps + 1); np];
    let mut voltages = vec![Vec::with_capacity(steps + 1); np];
    let record = |solver: &DiscreteSolver, c: &mut Vec<Vec<f64>>, v: &mut Vec<Vec<f64>>| {
        for p in 0..np {
            c[p].push(solver.plant_current(p));
            v[p].push(solver.plant_bus_voltage(p));
        }
    };
    record(&solver, &mut currents, &mut voltages);
    for k in 1..=steps {
        let t = k as f64 * dt;
        let t_prev = t - dt;
        let mut changed = false;
        while next_event < events.len() && events[next_event].time <= t_prev + 0.5 * dt {
            let ev = events[next_event];
            match ev.action {
                BreakerAction::Open => states.open_set.insert(ev.breaker_id),
                BreakerAction::Close => states.open_set.remove(&ev.breaker_id),
            };
            changed = true;
            next_event += 1;
        }
        if changed {
            solver.set_states(&states)?;
        }
        let mut src = solver.source_voltages(t);
        for (p, probe) in probes.iter().enumerate() {
            if let Some((offset, samples)) = probe {
                if k >= *offset && k - offset < samples.len() {
                    src[p + 1] += samples[k - offset];
                }
            }
        }
        solver.step(&src);
        record(&solver, &mut currents, &mut voltages);
    }
    Ok(net
        .plants
        .iter()
        .zip(currents.into_iter().zip(voltages))
        .map(|(p, (c, v))| PlantMeasurement {
            plant_id: p.plant_id,
            injected_current: SignalTrace::new(c, dt, 0.0),
            port_voltage: SignalTrace::new(v, dt, 0.0),
        })
        .collect())
}

/// Driving-point impedance at the plant's source terminal with all sources zeroed.
pub fn thevenin_response(
    net: &NetworkModel,
    states: &BreakerStates,
    plant_id: u8,
    omegas: &[f64],
) -> Result<Vec<Complex64>> {
    net.validate_circuit()?;
    states.validate()?;
    let plant = net.plant(plant_id)?;
    let idx = net.bus_index();
    let n = net.buses.len();
    let target = idx[plant.bus.as_str()];
    let adm = |r: f64, l: f64, w: f64| {
        let z = Complex64::new(r, w * l);
        if z.norm() < 1e-12 {
            Complex64::new(1e12, 0.0)
        } else {
            1.0 / z
        }
    };
    omegas
        .iter()
        .map(|&w| {
            let mut y = DMatrix::<Complex64>::zeros(n, n);
            for br in &net.branches {
                if br.breaker_id.is_some_and(|id| states.is_open(id)) {
                    continue;
                }
                let (a, b) = (idx[br.from.as_str()], idx[br.to.as_str()]);
                let ye = adm(br.r, br.l, w);
                y[(a, a)] += ye;
                y[(b, b)] += ye;
                y[(a, b)] -= ye;
                y[(b, a)] -= ye;
            }
            for ld in &net.loads {
                let a = idx[ld.bus.as_str()];
                y[(a, a)] += adm(ld.effective_r(), ld.effective_l(), w);
            }
            for c in &net.caps {
                let a = idx[c.bus.as_str()];
                y[(a, a)] += Complex64::new(0.0, w * c.c);
            }
            let g = &net.grid_source;
            let a = idx[g.bus.as_str()];
            y[(a, a)] += adm(g.series_r, g.series_l, w);
            for p in net.plants.iter().filter(|p| p.plant_id != plant_id) {
                let a = idx[p.bus.as_str()];
                y[(a, a)] += adm(p.coupling_r, p.coupling_l, w);
            }
            let mut e = nalgebra::DVector::<Complex64>::zeros(n);
            e[target] = Complex64::new(1.0, 0.0);
            let v = y.lu().solve(&e).ok_or(Error::SingularAtFrequency { omega: w })?;
            let zb = v[target];
            if !(zb.re.is_finite() && zb.im.is_finite()) {
                return Err(Error::SingularAtFrequency { omega: w });
            }
            Ok(Complex64::new(plant.coupling_r, w * plant.coupling_l) + zb)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probing(t0: f64) -> PlantProbing {
        PlantProbing {
            order: 6,
            bit_duration: t0,
            magnitude: 1.0,
            polynomial_id: "x^6+x^5+1".into(),
        }
    }

    /// Grid bus `g`, load bus `b` joined by one branch; plant at `b`.
    fn two_bus(r: f64, l: f64) -> NetworkModel {
        NetworkModel {
            description: String::new(),
            buses: vec!["g".into(), "b".into()],
            branches: vec![Branch {
                from: "g".into(),
                to: "b".into(),
                r,
                l,
                breaker_id: Some(1),
            }],
            loads: vec![ShuntLoad {
                bus: "b".into(),
                r: 10.0,
                l: 0.0,
                scale: 1.0,
            }],
            caps: vec![],
            grid_source: GridSource {
                bus: "g".into(),
                amplitude: 100.0,
                frequency: 60.0,
                series_r: 1e-3,
                series_l: 0.0,
            },
            plants: vec![PlantPort {
                plant_id: 1,
                bus: "b".into(),
                coupling_r: 0.1,
                coupling_l: 1e-3,
                amplitude: 100.0,
                phase_deg: 0.0,
                probing: probing(4e-6),
            }],
        }
    }

    #[test]
    fn validation_catches_bad_models() {
        let mut net = two_bus(1.0, 0.0);
        net.branches[0].r = 0.0;
        assert!(net.validate().is_err());
        let mut net = two_bus(1.0, 0.0);
        net.branches[0].breaker_id = Some(13);
        assert!(net.validate().is_err());
        let mut net = two_bus(1.0, 0.0);
        net.buses.push("lonely".into());
        assert!(net.validate().is_err());
        let mut net = two_bus(1.0, 0.0);
        let mut p2 = net.plants[0].clone();
        p2.plant_id = 2;
        net.plants.push(p2);
        assert!(net.validate().is_err(), "shared bit duration must be rejected");
    }

    #[test]
    fn resistive_branch_obeys_ohms_law() {
        let mut net = two_bus(1.0, 0.0);
        net.loads[0].r = 1e9;
        net.plants[0].amplitude = 0.0;
        net.plants[0].coupling_l = 0.0;
        net.plants[0].coupling_r = 1e9;
        let mut s = assemble(&net, &BreakerStates::intact(), 1e-6).unwrap();
        s.step(&[10.0, 0.0]);
        let v = s.node_voltages();
        let i = (v[0] - v[1]) / 1.0;
        // source -> 1 mOhm -> g -> 1 Ohm -> b -> ~open
        assert!((v[0] - 10.0).abs() < 1e-6);
        assert!(i.abs() < 1e-6);
        net.loads[0].r = 1.0;
        let mut s = assemble(&net, &BreakerStates::intact(), 1e-6).unwrap();
        s.step(&[10.0, 0.0]);
        let v = s.node_voltages().to_vec();
        let expected_i = 10.0 / (1e-3 + 1.0 + 1.0);
        assert!(((v[0] - v[1]) - expected_i).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn inductor_ramp_matches_closed_form() {
        // grid source -> ideal L = 1 mH -> ground-shorted bus
        let mut net = two_bus(0.0, 1e-3);
        net.grid_source.series_r = 1e-12;
        net.loads[0].r = 1e-9;
        net.plants[0].coupling_r = 1e12;
        net.plants[0].coupling_l = 0.0;
        let dt = 1e-6;
        let mut s = assemble(&net, &BreakerStates::intact(), dt).unwrap();
        let v = 5.0;
        s.prime_sources(&[v, 0.0]);
        s.set_raw_state(&vec![0.0; s.element_count()], &[v, 0.0]);
        for _ in 0..100 {
            s.step(&[v, 0.0]);
        }
        // branch current = current into the load bus
        let i = s.node_voltages()[1] / 1e-9;
        let analytic = v * 100.0 * dt / 1e-3;
        assert!(((i - analytic) / analytic).abs() < 1e-3, "{i} vs {analytic}");
    }

    #[test]
    fn open_breaker_with_load_island_still_assembles() {
        let net = two_bus(1.0, 1e-4);
        assert!(assemble(&net, &BreakerStates::open(1), 1e-6).is_ok());
        assert!(net.is_islanded(1, &BreakerStates::open(1)).unwrap());
        assert!(!net.is_islanded(1, &BreakerStates::intact()).unwrap());
    }

    #[test]
    fn floating_island_is_reported() {
        let mut net = two_bus(1.0, 1e-4);
        net.buses.push("f".into());
        net.branches.push(Branch {
            from: "b".into(),
            to: "f".into(),
            r: 1.0,
            l: 0.0,
            breaker_id: Some(2),
        });
        match assemble(&net, &BreakerStates::open(2), 1e-6) {
            Err(Error::FloatingSubnetwork { buses }) => assert_eq!(buses, vec!["f".to_string()]),
            other => panic!("expected floating subnetwork, got {other:?}"),
        }
    }

    #[test]
    fn series_impedance_into_stiff_bus() {
        let mut net = two_bus(1e-12, 0.0);
        net.grid_source.series_r = 1e-12;
        net.grid_source.series_l = 0.0;
        let w = [0.0, 377.0, 1e4];
        let z = thevenin_response(&net, &BreakerStates::intact(), 1, &w).unwrap();
        for (zi, wi) in z.iter().zip(w) {
            assert!((zi - Complex64::new(0.1, wi * 1e-3)).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_frequency_impedance_is_resistive() {
        let net = two_bus(0.5, 1e-3);
        let z = thevenin_response(&net, &BreakerStates::intact(), 1, &[0.0]).unwrap()[0];
        assert_eq!(z.im, 0.0);
        // 0.1 + (0.5 + 1e-3) || 10
        let expected = 0.1 + 1.0 / (1.0 / 0.501 + 1.0 / 10.0);
        assert!((z.re - expected).abs() < 1e-9);
    }

    #[test]
    fn scaling_loads() {
        let net = two_bus(1.0, 0.0);
        assert_eq!(net.scale_loads(&[1.0]).unwrap(), net);
        let s = net.scale_loads(&[2.0]).unwrap();
        assert!((s.loads[0].effective_r() - 5.0).abs() < 1e-12);
        assert!(matches!(net.scale_loads(&[0.0]), Err(Error::InvalidScale(_))));
        assert!(net.scale_loads(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn steady_state_start_has_no_transient() {
        let mut net = two_bus(0.05, 2e-4);
        net.plants[0].phase_deg = 5.0;
        let dt = 1.0 / 60_000.0;
        let sched = SimulationSchedule {
            dt,
            t_end: 1.0 / 60.0 * 3.0,
            init_hold: 0.0,
            initial_states: BreakerStates::intact(),
            events: vec![],
            probing_windows: vec![],
        };
        let out = simulate(&net, &sched, &[]).unwrap();
        let y = &out[0].injected_current.samples;
        let period = 1000;
        // periodic from the first sample
        for k in 0..period {
            let d = (y[k] - y[k + 2 * period]).abs();
            assert!(d < 1e-3 * y.iter().fold(0.0f64, |m, v| m.max(v.abs())), "k={k}");
        }
    }
}
