//! Time integration of memristor networks.
//!
//! At every instant the node voltages follow from current balance at the
//! internal nodes (a dense symmetric positive-definite solve), while each
//! link's resistance obeys `dR/dt = f(V_from - V_to)`. The coupled system is
//! advanced with implicit Euler; the implicit relation is solved by
//! fixed-point iteration on the resistances, clamping to the hard limits
//! inside the loop.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, NodeId, NodeRole};
use crate::signals::Signal;
use crate::util::fmt_num;

/// One signal per external node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriveAssignment(BTreeMap<NodeId, Signal>);

impl DriveAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: NodeId, signal: Signal) -> Self {
        self.0.insert(node, signal);
        self
    }

    pub fn insert(&mut self, node: NodeId, signal: Signal) {
        self.0.insert(node, signal);
    }

    pub fn get(&self, node: NodeId) -> Option<&Signal> {
        self.0.get(&node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Signal)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn check(&self, network: &Network) -> Result<()> {
        for (&id, signal) in &self.0 {
            if network.role(id) != Some(NodeRole::External) {
                return Err(Error::UnexpectedDrive(id));
            }
            if !signal.is_valid() {
                return Err(Error::Config(format!("invalid signal on node {id}")));
            }
        }
        for id in network.ids_with_role(NodeRole::External) {
            if !self.0.contains_key(&id) {
                return Err(Error::MissingDrive(id));
            }
        }
        Ok(())
    }

    /// Parses the TOML drive document (`[[drive]]` tables with `node` plus
    /// the signal fields).
    pub fn load(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            #[serde(default)]
            drive: Vec<Entry>,
        }
        #[derive(Deserialize)]
        struct Entry {
            node: NodeId,
            #[serde(flatten)]
            signal: Signal,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| crate::util::toml_error(text, &e))?;
        let mut out = Self::new();
        for e in doc.drive {
            if out.0.insert(e.node, e.signal).is_some() {
                return Err(Error::Config(format!("node {} has more than one drive", e.node)));
            }
        }
        Ok(out)
    }

    pub fn store(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            drive: Vec<Entry<'a>>,
        }
        #[derive(Serialize)]
        struct Entry<'a> {
            node: NodeId,
            #[serde(flatten)]
            signal: &'a Signal,
        }
        let doc = Doc {
            drive: self
                .0
                .iter()
                .map(|(&node, signal)| Entry { node, signal })
                .collect(),
        };
        toml::to_string(&doc).expect("drive document is always serializable")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: usize,
    /// Maximum relative resistance change accepted as converged.
    pub fp_tolerance: f64,
    pub fp_max_iterations: usize,
    /// Relative bound on the current imbalance at each internal node.
    pub kcl_tolerance: f64,
    /// Absolute current scale (A) below which the KCL bound stops shrinking.
    pub kcl_floor: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.006,
            n_steps: 500,
            fp_tolerance: 1e-9,
            fp_max_iterations: 100,
            kcl_tolerance: 1e-8,
            kcl_floor: 1e-12,
        }
    }
}

impl SimulationConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.fp_tolerance > 0.0) {
            return Err(Error::Config("fp_tolerance must be positive".into()));
        }
        if self.fp_max_iterations == 0 {
            return Err(Error::Config("fp_max_iterations must be at least 1".into()));
        }
        if !(self.kcl_tolerance > 0.0) || !(self.kcl_floor >= 0.0) {
            return Err(Error::Config("KCL tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Instantaneous network state. Vectors follow declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub t: f64,
    pub resistances: Vec<f64>,
    pub node_voltages: Vec<f64>,
}

/// Precomputed index maps for assembling the internal-node conductance matrix.
#[derive(Debug, Clone)]
pub struct NodalSystem {
    /// Node index -> position among the unknowns, `None` for fixed nodes.
    unknown: Vec<Option<usize>>,
    n_unknowns: usize,
    /// Link endpoints as node indices.
    ends: Vec<(usize, usize)>,
    index: HashMap<NodeId, usize>,
}

impl NodalSystem {
    pub fn new(network: &Network) -> Self {
        let index: HashMap<NodeId, usize> = network
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let mut n_unknowns = 0;
        let unknown = network
            .nodes()
            .iter()
            .map(|n| {
                (n.role == NodeRole::Internal).then(|| {
                    n_unknowns += 1;
                    n_unknowns - 1
                })
            })
            .collect();
        let ends = network
            .links()
            .iter()
            .map(|l| (index[&l.from], index[&l.to]))
            .collect();
        Self {
            unknown,
            n_unknowns,
            ends,
            index,
        }
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn link_ends(&self) -> &[(usize, usize)] {
        &self.ends
    }

    /// Fills in the internal entries of `voltages`; fixed entries are read as
    /// boundary values.
    pub fn solve_into(&self, resistances: &[f64], voltages: &mut [f64]) -> Result<()> {
        let m = self.n_unknowns;
        if m == 0 {
            return Ok(());
        }
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (&(a, b), &r) in self.ends.iter().zip(resistances) {
            let c = 1.0 / r;
            match (self.unknown[a], self.unknown[b]) {
                (Some(i), Some(j)) => {
                    g[(i, i)] += c;
                    g[(j, j)] += c;
                    g[(i, j)] -= c;
                    g[(j, i)] -= c;
                }
                (Some(i), None) => {
                    g[(i, i)] += c;
                    rhs[i] += c * voltages[b];
                }
                (None, Some(j)) => {
                    g[(j, j)] += c;
                    rhs[j] += c * voltages[a];
                }
                (None, None) => {}
            }
        }
        let chol = g.cholesky().ok_or(Error::SingularSystem)?;
        let x = chol.solve(&rhs);
        for (node, slot) in self.unknown.iter().enumerate() {
            if let Some(i) = slot {
                voltages[node] = x[*i];
            }
        }
        Ok(())
    }

    /// Net current into each node (A), with the sum of absolute branch
    /// currents touching it.
    pub fn node_currents(&self, resistances: &[f64], voltages: &[f64]) -> Vec<(f64, f64)> {
        let mut acc = vec![(0.0, 0.0); voltages.len()];
        for (&(a, b), &r) in self.ends.iter().zip(resistances) {
            let i = (voltages[a] - voltages[b]) / r;
            acc[a].0 -= i;
            acc[b].0 += i;
            acc[a].1 += i.abs();
            acc[b].1 += i.abs();
        }
        acc
    }
}

/// Solves for the internal node voltages given every fixed node's voltage.
pub fn solve_node_voltages(
    network: &Network,
    resistances: &[f64],
    boundary: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, f64>> {
    if resistances.len() != network.links().len() {
        return Err(Error::Dimension(format!(
            "{} resistances for {} links",
            resistances.len(),
            network.links().len()
        )));
    }
    let system = NodalSystem::new(network);
    let mut v = vec![0.0; network.nodes().len()];
    for (i, n) in network.nodes().iter().enumerate() {
        if n.role.is_fixed() {
            v[i] = *boundary.get(&n.id).ok_or(Error::MissingBoundary(n.id))?;
        }
    }
    system.solve_into(resistances, &mut v)?;
    Ok(network
        .nodes()
        .iter()
        .zip(v)
        .filter(|(n, _)| n.role == NodeRole::Internal)
        .map(|(n, v)| (n.id, v))
        .collect())
}

/// Reusable integrator for one network, drive set and configuration.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    network: &'a Network,
    drives: &'a DriveAssignment,
    config: SimulationConfig,
    system: NodalSystem,
    /// Per node: drive signal, or `None` for grounded/internal nodes.
    sources: Vec<Option<Signal>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        network: &'a Network,
        drives: &'a DriveAssignment,
        config: SimulationConfig,
    ) -> Result<Self> {
        let violations = network.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        config.check()?;
        drives.check(network)?;
        let sources = network
            .nodes()
            .iter()
            .map(|n| drives.get(n.id).copied())
            .collect();
        Ok(Self {
            network,
            drives,
            config,
            system: NodalSystem::new(network),
            sources,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn drives(&self) -> &DriveAssignment {
        self.drives
    }

    fn boundary(&self, t: f64) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| s.map_or(0.0, |s| s.evaluate(t)))
            .collect()
    }

    /// State at `t` with resistances `r` and voltages solved from them.
    pub fn consistent_state(&self, t: f64, resistances: Vec<f64>) -> Result<NetworkState> {
        let mut v = self.boundary(t);
        self.system.solve_into(&resistances, &mut v)?;
        Ok(NetworkState {
            t,
            resistances,
            node_voltages: v,
        })
    }

    pub fn initial_state(&self) -> Result<NetworkState> {
        self.consistent_state(0.0, self.network.initial_resistances())
    }

    /// Largest relative KCL residual over internal nodes, and where it is.
    pub fn kcl_check(&self, state: &NetworkState) -> Result<()> {
        let currents = self
            .system
            .node_currents(&state.resistances, &state.node_voltages);
        for (n, (net, abs)) in self.network.nodes().iter().zip(currents) {
            if n.role != NodeRole::Internal {
                continue;
            }
            let bound = self.config.kcl_tolerance * abs.max(self.config.kcl_floor);
            if net.abs() > bound {
                return Err(Error::KclViolation {
                    node: n.id,
                    residual: net.abs(),
                    bound,
                });
            }
        }
        Ok(())
    }

    /// Advances `state` to `t_next` with one implicit Euler step.
    pub fn advance(&self, state: &NetworkState, t_next: f64) -> Result<NetworkState> {
        let dt = t_next - state.t;
        let links = self.network.links();
        let mut v = self.boundary(t_next);
        let mut r = state.resistances.clone();
        let mut next = vec![0.0; r.len()];
        let mut change = f64::INFINITY;
        for _ in 0..self.config.fp_max_iterations {
            self.system.solve_into(&r, &mut v)?;
            change = 0.0;
            for (k, (link, &(a, b))) in links.iter().zip(self.system.link_ends()).enumerate() {
                let p = &link.params;
                next[k] = p.clamp(state.resistances[k] + dt * p.rate(v[a] - v[b]));
                change = f64::max(change, (next[k] - r[k]).abs() / next[k].abs());
            }
            std::mem::swap(&mut r, &mut next);
            if change <= self.config.fp_tolerance {
                break;
            }
        }
        if change > self.config.fp_tolerance {
            return Err(Error::NonConvergence {
                iterations: self.config.fp_max_iterations,
                residual: change,
            });
        }
        self.system.solve_into(&r, &mut v)?;
        Ok(NetworkState {
            t: t_next,
            resistances: r,
            node_voltages: v,
        })
    }

    pub fn step(&self, state: &NetworkState) -> Result<NetworkState> {
        self.advance(state, state.t + self.config.dt)
    }

    /// Integrates from the consistent initial state for `n_steps` steps.
    pub fn run(&self) -> Result<SimulationTrace> {
        self.run_with(|_, _| {})
    }

    /// Like [`run`](Self::run), calling `observe(index, state)` on each
    /// recorded state.
    pub fn run_with(
        &self,
        mut observe: impl FnMut(usize, &NetworkState),
    ) -> Result<SimulationTrace> {
        let wrap = |step: usize| move |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };
        let mut trace = SimulationTrace::with_capacity(self.network, self.config.n_steps + 1);
        let mut state = self.initial_state().map_err(wrap(0))?;
        self.kcl_check(&state).map_err(wrap(0))?;
        observe(0, &state);
        trace.push(&self.system, &state);
        for n in 1..=self.config.n_steps {
            // times are n*dt rather than a running sum so reruns line up exactly
            let t_next = n as f64 * self.config.dt;
            state = self.advance(&state, t_next).map_err(wrap(n))?;
            self.kcl_check(&state).map_err(wrap(n))?;
            observe(n, &state);
            trace.push(&self.system, &state);
        }
        Ok(trace)
    }
}

pub fn step_implicit_euler(
    network: &Network,
    state: &NetworkState,
    drives: &DriveAssignment,
    config: &SimulationConfig,
) -> Result<NetworkState> {
    Simulator::new(network, drives, *config)?.step(state)
}

pub fn simulate(
    network: &Network,
    drives: &DriveAssignment,
    config: &SimulationConfig,
) -> Result<SimulationTrace> {
    Simulator::new(network, drives, *config)?.run()
}

/// Recorded time series. Outer index is node (or link) in declaration
/// order, inner index is the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub node_ids: Vec<NodeId>,
    pub times: Vec<f64>,
    pub node_voltages: Vec<Vec<f64>>,
    pub resistances: Vec<Vec<f64>>,
    pub currents: Vec<Vec<f64>>,
    pub voltage_drops: Vec<Vec<f64>>,
}

impl SimulationTrace {
    fn with_capacity(network: &Network, samples: usize) -> Self {
        let nodes = network.nodes().len();
        let links = network.links().len();
        let series = |n: usize| vec![Vec::with_capacity(samples); n];
        Self {
            node_ids: network.nodes().iter().map(|n| n.id).collect(),
            times: Vec::with_capacity(samples),
            node_voltages: series(nodes),
            resistances: series(links),
            currents: series(links),
            voltage_drops: series(links),
        }
    }

    fn push(&mut self, system: &NodalSystem, state: &NetworkState) {
        self.times.push(state.t);
        for (series, &v) in self.node_voltages.iter_mut().zip(&state.node_voltages) {
            series.push(v);
        }
        for (k, &(a, b)) in system.link_ends().iter().enumerate() {
            let r = state.resistances[k];
            let vm = state.node_voltages[a] - state.node_voltages[b];
            self.resistances[k].push(r);
            self.voltage_drops[k].push(vm);
            self.currents[k].push(vm / r);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn voltage(&self, node: NodeId) -> Option<&[f64]> {
        let i = self.node_ids.iter().position(|&id| id == node)?;
        Some(&self.node_voltages[i])
    }

    /// Snapshot at sample `i`.
    pub fn state(&self, i: usize) -> NetworkState {
        NetworkState {
            t: self.times[i],
            resistances: self.resistances.iter().map(|s| s[i]).collect(),
            node_voltages: self.node_voltages.iter().map(|s| s[i]).collect(),
        }
    }

    /// `t,V_node_<id>...,R_link_<k>...,I_link_<k>...,VM_link_<k>...`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.node_ids.iter().map(|id| format!("V_node_{id}")));
        for prefix in ["R", "I", "VM"] {
            header.extend((0..self.resistances.len()).map(|k| format!("{prefix}_link_{k}")));
        }
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            line.push_str(&fmt_num(self.times[i]));
            let columns = self
                .node_voltages
                .iter()
                .chain(&self.resistances)
                .chain(&self.currents)
                .chain(&self.voltage_drops);
            for series in columns {
                line.push(',');
                line.push_str(&fmt_num(series[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}
