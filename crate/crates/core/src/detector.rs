//! Islanding and topology classification against stored baseline realizations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{BreakerStates, NetworkModel};
use crate::nugap::{check_delta, gap_from_responses, FrequencyGrid, GapValue};
use crate::pipeline::{probe_pass, PipelineConfig, Scenario};
use crate::sysid::StateSpaceRealization;

/// Islanding threshold on the nu-gap to the intact baseline.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Islanded,
    GridConnected,
}

impl Decision {
    pub fn from_islanded(islanded: bool) -> Self {
        if islanded {
            Decision::Islanded
        } else {
            Decision::GridConnected
        }
    }

    pub fn is_islanded(self) -> bool {
        self == Decision::Islanded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub decision: Decision,
    pub gap_to_intact: GapValue,
    pub threshold: f64,
    pub plant_id: u8,
}

/// Network state named by the topology classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopologyState {
    Intact,
    Breaker(u8),
}

impl TopologyState {
    pub fn breakers(self) -> BreakerStates {
        match self {
            TopologyState::Intact => BreakerStates::intact(),
            TopologyState::Breaker(b) => BreakerStates::open(b),
        }
    }
}

impl std::fmt::Display for TopologyState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopologyState::Intact => write!(f, "intact"),
            TopologyState::Breaker(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyResult {
    pub state: TopologyState,
    pub gap: GapValue,
    pub islanding_decision: Decision,
}

/// Stored realizations for one plant: the intact network and optionally every single-breaker
/// state, together with the frequency grid and the fixture's breaker-to-island map.
#[derive(Debug, Clone)]
pub struct BaselineLibrary {
    pub plant_id: u8,
    pub intact: StateSpaceRealization,
    pub per_state: BTreeMap<u8, StateSpaceRealization>,
    pub grid: FrequencyGrid,
    /// Breakers expected in a full library.
    pub breakers: Vec<u8>,
    /// Breakers whose opening islands this plant.
    pub islanding_breakers: BTreeSet<u8>,
    pub fixture_hash: String,
    intact_response: Vec<Complex64>,
    state_responses: BTreeMap<u8, Vec<Complex64>>,
}

impl BaselineLibrary {
    pub fn new(
        net: &NetworkModel,
        plant_id: u8,
        intact: StateSpaceRealization,
        per_state: BTreeMap<u8, StateSpaceRealization>,
        grid: FrequencyGrid,
    ) -> Result<Self> {
        net.plant(plant_id)?;
        let islanding_breakers = net
            .island_map()
            .into_iter()
            .filter(|(_, plants)| plants.contains(&plant_id))
            .map(|(b, _)| b)
            .collect();
        Self::from_parts(
            plant_id,
            intact,
            per_state,
            grid,
            net.breaker_ids(),
            islanding_breakers,
            net.fingerprint(),
        )
    }

    fn from_parts(
        plant_id: u8,
        intact: StateSpaceRealization,
        per_state: BTreeMap<u8, StateSpaceRealization>,
        grid: FrequencyGrid,
        breakers: Vec<u8>,
        islanding_breakers: BTreeSet<u8>,
        fixture_hash: String,
    ) -> Result<Self> {
        for r in per_state.values() {
            check_delta(intact.delta, r.delta)?;
        }
        let intact_response = intact.freq_response(&grid.omegas)?;
        let state_responses = per_state
            .iter()
            .map(|(&b, r)| Ok((b, r.freq_response(&grid.omegas)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            plant_id,
            intact,
            per_state,
            grid,
            breakers,
            islanding_breakers,
            fixture_hash,
            intact_response,
            state_responses,
        })
    }

    pub fn delta(&self) -> f64 {
        self.intact.delta
    }

    pub fn is_complete(&self) -> bool {
        self.breakers.iter().all(|b| self.per_state.contains_key(b))
    }

    fn measured_response(&self, measured: &StateSpaceRealization) -> Result<Vec<Complex64>> {
        check_delta(measured.delta, self.delta())?;
        measured.freq_response(&self.grid.omegas)
    }

    /// Gap from a measured realization to the intact baseline.
    pub fn gap_to_intact(&self, measured: &StateSpaceRealization) -> Result<GapValue> {
        let p = self.measured_response(measured)?;
        gap_from_responses(&p, &self.intact_response, &self.grid)
    }

    /// Writes one realization file per state plus `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.intact.save(dir.join("intact.json"))?;
        let mut files = BTreeMap::from([("intact".to_string(), "intact.json".to_string())]);
        for (b, r) in &self.per_state {
            let name = format!("breaker_{b:02}.json");
            r.save(dir.join(&name))?;
            files.insert(b.to_string(), name);
        }
        let manifest = Manifest {
            plant_id: self.plant_id,
            fixture_hash: self.fixture_hash.clone(),
            delta_seconds: self.delta(),
            grid: self.grid.clone(),
            breakers: self.breakers.clone(),
            islanding_breakers: self.islanding_breakers.clone(),
            files,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads a library and refuses it if it was built from a different fixture.
    pub fn load(dir: impl AsRef<Path>, net: &NetworkModel) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let hash = net.fingerprint();
        if m.fixture_hash != hash {
            return Err(Error::LibraryMismatch(format!(
                "library in {} was built for fixture {} but the current fixture hashes to {}",
                dir.display(),
                m.fixture_hash,
                hash
            )));
        }
        let intact_file = m
            .files
            .get("intact")
            .ok_or_else(|| Error::LibraryMismatch("manifest lacks the intact realization".into()))?;
        let intact = StateSpaceRealization::load(dir.join(intact_file))?;
        let mut per_state = BTreeMap::new();
        for (key, file) in m.files.iter().filter(|(k, _)| k.as_str() != "intact") {
            let b: u8 = key
                .parse()
                .map_err(|_| Error::LibraryMismatch(format!("bad state key `{key}`")))?;
            per_state.insert(b, StateSpaceRealization::load(dir.join(file))?);
        }
        check_delta(intact.delta, m.delta_seconds)?;
        Self::from_parts(
            m.plant_id,
            intact,
            per_state,
            m.grid,
            m.breakers,
            m.islanding_breakers,
            m.fixture_hash,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    plant_id: u8,
    fixture_hash: String,
    delta_seconds: f64,
    grid: FrequencyGrid,
    breakers: Vec<u8>,
    islanding_breakers: BTreeSet<u8>,
    files: BTreeMap<String, String>,
}

/// Islanded iff the gap to the intact baseline is strictly larger than `threshold`.
pub fn classify_islanding(
    measured: &StateSpaceRealization,
    lib: &BaselineLibrary,
    threshold: f64,
) -> Result<DetectionResult> {
    let gap = lib.gap_to_intact(measured)?;
    Ok(DetectionResult {
        decision: Decision::from_islanded(gap.value > threshold),
        gap_to_intact: gap,
        threshold,
        plant_id: lib.plant_id,
    })
}

/// Nearest stored state in the nu-gap. Ties go to the intact state, then the lowest breaker.
/// A library holding only the intact realization always answers `Intact`.
pub fn classify_topology(measured: &StateSpaceRealization, lib: &BaselineLibrary) -> Result<TopologyResult> {
    if !lib.per_state.is_empty() && !lib.is_complete() {
        let missing = lib
            .breakers
            .iter()
            .copied()
            .filter(|b| !lib.per_state.contains_key(b))
            .collect();
        return Err(Error::IncompleteLibrary(missing));
    }
    let p = lib.measured_response(measured)?;
    let mut best = (
        TopologyState::Intact,
        gap_from_responses(&p, &lib.intact_response, &lib.grid)?,
    );
    for (&b, resp) in &lib.state_responses {
        let g = gap_from_responses(&p, resp, &lib.grid)?;
        if g.value < best.1.value {
            best = (TopologyState::Breaker(b), g);
        }
    }
    let islanded = matches!(best.0, TopologyState::Breaker(b) if lib.islanding_breakers.contains(&b));
    Ok(TopologyResult {
        state: best.0,
        gap: best.1,
        islanding_decision: Decision::from_islanded(islanded),
    })
}

/// Probes the network in the given state at nominal loads (all plants injecting) and returns
/// this plant's realization.
pub fn build_baseline(
    net: &NetworkModel,
    states: &BreakerStates,
    plant_id: u8,
    cfg: &PipelineConfig,
) -> Result<StateSpaceRealization> {
    let est = probe_pass(&Scenario::steady(net, states), &net.plant_ids(), cfg)?;
    est.into_iter()
        .find(|e| e.plant_id == plant_id)
        .map(|e| e.realization)
        .ok_or(Error::UnknownPlant(plant_id))
}

/// Realizations of every plant for every requested state, one simulation per state run
/// concurrently. Keyed by state, then plant id.
pub fn probe_states(
    net: &NetworkModel,
    states: &[TopologyState],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<TopologyState, BTreeMap<u8, StateSpaceRealization>>> {
    let plants = net.plant_ids();
    states
        .par_iter()
        .map(|&st| {
            let est = probe_pass(&Scenario::steady(net, &st.breakers()), &plants, cfg)?;
            Ok((st, est.into_iter().map(|e| (e.plant_id, e.realization)).collect()))
        })
        .collect()
}

/// Baseline libraries for every plant; with `all_states` the twelve single-breaker states are
/// included for topology classification.
pub fn build_libraries(
    net: &NetworkModel,
    cfg: &PipelineConfig,
    grid_points: usize,
    all_states: bool,
) -> Result<Vec<BaselineLibrary>> {
    let mut states = vec![TopologyState::Intact];
    if all_states {
        states.extend(net.breaker_ids().into_iter().map(TopologyState::Breaker));
    }
    let table = probe_states(net, &states, cfg)?;
    libraries_from_states(net, &table, grid_points)
}

pub(crate) fn libraries_from_states(
    net: &NetworkModel,
    table: &BTreeMap<TopologyState, BTreeMap<u8, StateSpaceRealization>>,
    grid_points: usize,
) -> Result<Vec<BaselineLibrary>> {
    net.plants
        .iter()
        .map(|p| {
            let realization = |st: &TopologyState| {
                table
                    .get(st)
                    .and_then(|m| m.get(&p.plant_id))
                    .cloned()
                    .ok_or(Error::UnknownPlant(p.plant_id))
            };
            let intact = realization(&TopologyState::Intact)?;
            let per_state = table
                .keys()
                .filter_map(|st| match st {
                    TopologyState::Breaker(b) => Some(realization(st).map(|r| (*b, r))),
                    TopologyState::Intact => None,
                })
                .collect::<Result<_>>()?;
            let grid = FrequencyGrid::for_spacing(intact.delta, grid_points)?;
            BaselineLibrary::new(net, p.plant_id, intact, per_state, grid)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn first_order(pole: f64, gain: f64) -> StateSpaceRealization {
        StateSpaceRealization {
            a: DMatrix::from_element(1, 1, pole),
            b: DVector::from_element(1, 1.0),
            c: DVector::from_element(1, gain),
            d: 0.0,
            delta: 1e-4,
        }
    }

    fn library(per_state: BTreeMap<u8, StateSpaceRealization>) -> BaselineLibrary {
        BaselineLibrary::from_parts(
            1,
            first_order(0.5, 1.0),
            per_state,
            FrequencyGrid::for_spacing(1e-4, 64).unwrap(),
            vec![1, 2],
            BTreeSet::from([1]),
            "hash".into(),
        )
        .unwrap()
    }

    #[test]
    fn decision_follows_strict_threshold() {
        let lib = library(BTreeMap::new());
        let r = classify_islanding(&first_order(0.5, 1.0), &lib, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.decision, Decision::GridConnected);
        assert_eq!(r.gap_to_intact.value, 0.0);
        let far = first_order(0.5, -1.0);
        let g = lib.gap_to_intact(&far).unwrap().value;
        assert!(g > 0.9);
        assert_eq!(
            classify_islanding(&far, &lib, 0.9).unwrap().decision,
            Decision::Islanded
        );
        // exactly at the threshold is not "larger than"
        assert_eq!(
            classify_islanding(&far, &lib, g).unwrap().decision,
            Decision::GridConnected
        );
    }

    #[test]
    fn topology_prefers_nearest_and_breaks_ties_toward_intact() {
        let per_state = BTreeMap::from([(1, first_order(0.5, 500.0)), (2, first_order(0.5, 1.0))]);
        let lib = library(per_state);
        let r = classify_topology(&first_order(0.5, 1.0), &lib).unwrap();
        assert_eq!(r.state, TopologyState::Intact);
        assert_eq!(r.gap.value, 0.0);
        let r = classify_topology(&first_order(0.5, 450.0), &lib).unwrap();
        assert_eq!(r.state, TopologyState::Breaker(1));
        assert_eq!(r.islanding_decision, Decision::Islanded);
    }

    #[test]
    fn intact_only_library_never_names_a_breaker() {
        let lib = library(BTreeMap::new());
        let r = classify_topology(&first_order(0.5, 450.0), &lib).unwrap();
        assert_eq!(r.state, TopologyState::Intact);
        assert_eq!(r.islanding_decision, Decision::GridConnected);
    }

    #[test]
    fn partial_library_is_rejected() {
        let lib = library(BTreeMap::from([(1, first_order(0.5, 2.0))]));
        assert!(matches!(
            classify_topology(&first_order(0.5, 1.0), &lib),
            Err(Error::IncompleteLibrary(m)) if m == vec![2]
        ));
    }

    #[test]
    fn mismatched_spacing_is_rejected() {
        let lib = library(BTreeMap::new());
        let mut r = first_order(0.5, 1.0);
        r.delta = 2e-4;
        assert!(matches!(
            classify_islanding(&r, &lib, 0.9),
            Err(Error::DeltaMismatch(..))
        ));
    }
}
