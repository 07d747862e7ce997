//! Navigation policies over a discretized workspace: gradient following,
//! belief-map pursuit support, and tabular RL (Expected SARSA as printed,
//! with Q-learning for comparison) plus the episode training loop.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::StepDirection;
use crate::{Error, Result};

/// The seven agent actions, in the fixed tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Forward,
    Backward,
    Stay,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Forward,
        Action::Backward,
        Action::Stay,
    ];

    /// The six moving actions (everything but Stay).
    pub const MOVES: [Action; 6] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Forward,
        Action::Backward,
    ];

    pub fn direction(self) -> StepDirection {
        match self {
            Action::Left => StepDirection::Left,
            Action::Right => StepDirection::Right,
            Action::Up => StepDirection::Up,
            Action::Down => StepDirection::Down,
            Action::Forward => StepDirection::Forward,
            Action::Backward => StepDirection::Backward,
            Action::Stay => StepDirection::Stay,
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Forward => Action::Backward,
            Action::Backward => Action::Forward,
            Action::Stay => Action::Stay,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::Stay => "stay",
        }
    }

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|a| *a == self).unwrap()
    }
}

/// Regular lattice over the workspace bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    /// m per cell
    pub cell: f64,
    pub dims: [usize; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        // covers the reachable shell of the default arm with margin
        GridSpec { origin: [-1.0, -1.0, -1.0], cell: 0.05, dims: [40, 40, 40] }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cell <= 0.0 {
            return Err(Error::Config("grid cell size must be positive".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("grid dims must be positive".into()));
        }
        Ok(())
    }
}

/// One lattice cell; positions are floor-mapped with a half-open interval
/// rule, so an exact cell edge belongs to the higher cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteState {
    pub i: u16,
    pub j: u16,
    pub k: u16,
}

/// Floor-map a position to its grid cell, clamping to the box.
pub fn discretize_state(position: &Vector3<f64>, grid: &GridSpec) -> DiscreteState {
    let idx = |p: f64, o: f64, dim: usize| -> u16 {
        let raw = ((p - o) / grid.cell).floor();
        raw.clamp(0.0, (dim - 1) as f64) as u16
    };
    DiscreteState {
        i: idx(position.x, grid.origin[0], grid.dims[0]),
        j: idx(position.y, grid.origin[1], grid.dims[1]),
        k: idx(position.z, grid.origin[2], grid.dims[2]),
    }
}

/// Training constants; defaults are the reported settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlHyperparams {
    pub gamma: f64,
    /// non-decaying learning rate
    pub alpha: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
}

impl Default for RlHyperparams {
    fn default() -> Self {
        RlHyperparams { gamma: 0.8, alpha: 0.1, epsilon: 0.1, episodes: 1000, steps_per_episode: 100 }
    }
}

impl RlHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// Which update rule the trainer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// uniform average over next-state actions, as printed
    ExpectedSarsa,
    QLearning,
    /// epsilon-greedy-weighted expectation variant, off by default
    ExpectedSarsaPolicyWeighted,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ExpectedSarsa => "esarsa",
            Algorithm::QLearning => "qlearn",
            Algorithm::ExpectedSarsaPolicyWeighted => "esarsa_weighted",
        }
    }
}

/// Sparse tabular action-value function; unseen pairs read as zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: HashMap<(DiscreteState, Action), f64>,
}

impl QTable {
    pub fn new() -> Self {
        QTable::default()
    }

    pub fn get(&self, s: DiscreteState, a: Action) -> f64 {
        self.values.get(&(s, a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: DiscreteState, a: Action, v: f64) {
        self.values.insert((s, a), v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when any action value has been written for this state.
    pub fn visited(&self, s: DiscreteState) -> bool {
        Action::ALL.iter().any(|a| self.values.contains_key(&(s, *a)))
    }

    /// Greedy action with ties broken by the fixed action order.
    pub fn argmax(&self, s: DiscreteState) -> Action {
        let mut best = Action::ALL[0];
        let mut best_v = self.get(s, best);
        for a in &Action::ALL[1..] {
            let v = self.get(s, *a);
            if v > best_v {
                best = *a;
                best_v = v;
            }
        }
        best
    }

    pub fn max_value(&self, s: DiscreteState) -> f64 {
        Action::ALL.iter().map(|a| self.get(s, *a)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_value(&self, s: DiscreteState) -> f64 {
        Action::ALL.iter().map(|a| self.get(s, *a)).sum::<f64>() / Action::ALL.len() as f64
    }

    /// Deterministically ordered entries, for serialization and reports.
    pub fn sorted_entries(&self) -> Vec<(DiscreteState, Action, f64)> {
        let mut entries: Vec<(DiscreteState, Action, f64)> =
            self.values.iter().map(|((s, a), v)| (*s, *a, *v)).collect();
        entries.sort_by_key(|(s, a, _)| (s.i, s.j, s.k, a.index()));
        entries
    }
}

/// Versioned on-disk form of a trained table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableFile {
    pub version: u32,
    pub grid: GridSpec,
    pub action_order: Vec<String>,
    pub algorithm: String,
    /// (i, j, k, action, value) triples, sorted
    pub entries: Vec<(u16, u16, u16, String, f64)>,
}

pub const QTABLE_FILE_VERSION: u32 = 1;

pub fn save_qtable(table: &QTable, grid: &GridSpec, algorithm: Algorithm, path: &Path) -> Result<()> {
    let file = QTableFile {
        version: QTABLE_FILE_VERSION,
        grid: grid.clone(),
        action_order: Action::ALL.iter().map(|a| a.name().to_string()).collect(),
        algorithm: algorithm.name().to_string(),
        entries: table
            .sorted_entries()
            .into_iter()
            .map(|(s, a, v)| (s.i, s.j, s.k, a.name().to_string(), v))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Estimation(format!("serialize q-table: {e}")))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_qtable(path: &Path) -> Result<(QTable, GridSpec)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: QTableFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("parse q-table: {e}")))?;
    if file.version != QTABLE_FILE_VERSION {
        return Err(Error::Config(format!("unsupported q-table version {}", file.version)));
    }
    let mut table = QTable::new();
    for (i, j, k, name, v) in &file.entries {
        let action = Action::ALL
            .iter()
            .find(|a| a.name() == name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown action {name}")))?;
        table.set(DiscreteState { i: *i, j: *j, k: *k }, action, *v);
    }
    Ok((table, file.grid))
}

/// Per-step reward: -1 inside the plume, -5 outside it.
pub fn reward(in_plume: bool) -> i32 {
    if in_plume {
        -1
    } else {
        -5
    }
}

/// Epsilon-greedy action selection over the 7 actions.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &QTable,
    s: DiscreteState,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..Action::ALL.len())]
    } else {
        q.argmax(s)
    }
}

/// Expected SARSA as printed: the next-state term is the uniform average
/// over all 7 actions, `Q += alpha [r + (gamma/n) sum_i Q(s', a'_i) - Q]`.
pub fn expected_sarsa_update(
    q: &mut QTable,
    s: DiscreteState,
    a: Action,
    r: f64,
    s_next: Option<DiscreteState>,
    hp: &RlHyperparams,
) {
    let bootstrap = s_next.map_or(0.0, |sn| q.mean_value(sn));
    let old = q.get(s, a);
    q.set(s, a, old + hp.alpha * (r + hp.gamma * bootstrap - old));
}

/// Epsilon-greedy-weighted expectation variant (flagged, off by default).
pub fn expected_sarsa_update_policy_weighted(
    q: &mut QTable,
    s: DiscreteState,
    a: Action,
    r: f64,
    s_next: Option<DiscreteState>,
    hp: &RlHyperparams,
) {
    let bootstrap = s_next.map_or(0.0, |sn| {
        let n = Action::ALL.len() as f64;
        (1.0 - hp.epsilon) * q.max_value(sn) + hp.epsilon * q.mean_value(sn) * n / n
    });
    let old = q.get(s, a);
    q.set(s, a, old + hp.alpha * (r + hp.gamma * bootstrap - old));
}

/// Q-learning: `Q += alpha [r + gamma max_a' Q(s', a') - Q]`.
pub fn q_learning_update(
    q: &mut QTable,
    s: DiscreteState,
    a: Action,
    r: f64,
    s_next: Option<DiscreteState>,
    hp: &RlHyperparams,
) {
    let bootstrap = s_next.map_or(0.0, |sn| q.max_value(sn));
    let old = q.get(s, a);
    q.set(s, a, old + hp.alpha * (r + hp.gamma * bootstrap - old));
}

/// What one environment step reports back to the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub state: DiscreteState,
    pub in_plume: bool,
    /// the sensor came within the success radius of the source
    pub located: bool,
}

/// Episode environment the trainer drives. Resets must start the agent
/// off-plume.
pub trait NavEnv {
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DiscreteState>;
    fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<EnvStep>;
}

/// Run the episode loop and return the trained table with the per-episode
/// return curve. Episodes cap at `steps_per_episode` or end early when the
/// source is located.
pub fn train<E: NavEnv, R: Rng + ?Sized>(
    env: &mut E,
    hp: &RlHyperparams,
    algorithm: Algorithm,
    rng: &mut R,
) -> Result<(QTable, Vec<f64>)> {
    hp.validate()?;
    let mut q = QTable::new();
    let mut curve = Vec::with_capacity(hp.episodes);
    let value_floor = -5.0 / (1.0 - hp.gamma) - 1e-9;
    for _ in 0..hp.episodes {
        let mut s = env.reset(rng)?;
        let mut total = 0.0;
        for _ in 0..hp.steps_per_episode {
            let a = epsilon_greedy(&q, s, hp.epsilon, rng);
            let out = env.step(a, rng)?;
            let r = reward(out.in_plume) as f64;
            total += r;
            let s_next = if out.located { None } else { Some(out.state) };
            match algorithm {
                Algorithm::ExpectedSarsa => expected_sarsa_update(&mut q, s, a, r, s_next, hp),
                Algorithm::QLearning => q_learning_update(&mut q, s, a, r, s_next, hp),
                Algorithm::ExpectedSarsaPolicyWeighted => {
                    expected_sarsa_update_policy_weighted(&mut q, s, a, r, s_next, hp)
                }
            }
            let updated = q.get(s, a);
            if updated > 1e-9 || updated < value_floor {
                return Err(Error::Estimation(format!(
                    "q value {updated} escaped the contraction bound [{value_floor}, 0]"
                )));
            }
            s = out.state;
            if out.located {
                break;
            }
        }
        curve.push(total);
    }
    Ok((q, curve))
}

/// Moving-average smoothing of a learning curve (window trailing).
pub fn smooth_curve(curve: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(curve.len());
    let mut sum = 0.0;
    for (i, v) in curve.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= curve[i - w];
        }
        out.push(sum / (i.min(w - 1) + 1) as f64);
    }
    out
}

/// Gradient-following policy state: repeat the last action while the signal
/// improves, otherwise sweep the untried directions of a randomized cycle,
/// leaving the reverse of the just-failed action for last.
#[derive(Debug, Clone)]
pub struct GradientPolicy {
    last_action: Action,
    sweep: Vec<Action>,
}

impl Default for GradientPolicy {
    fn default() -> Self {
        GradientPolicy::new()
    }
}

impl GradientPolicy {
    pub fn new() -> Self {
        GradientPolicy { last_action: Action::Stay, sweep: Vec::new() }
    }

    pub fn last_action(&self) -> Action {
        self.last_action
    }

    pub fn next_action<R: Rng + ?Sized>(&mut self, signal_improving: bool, rng: &mut R) -> Action {
        if signal_improving && self.last_action != Action::Stay {
            self.sweep.clear();
            return self.last_action;
        }
        if self.sweep.is_empty() {
            let mut dirs = Action::MOVES.to_vec();
            dirs.shuffle(rng);
            self.sweep = dirs;
        }
        // the reverse of the action that just failed goes to the back of the
        // remaining cycle (still tried eventually, never first)
        if self.last_action != Action::Stay && self.sweep.len() > 1 {
            let reverse = self.last_action.opposite();
            if let Some(pos) = self.sweep.iter().position(|a| *a == reverse) {
                let r = self.sweep.remove(pos);
                self.sweep.push(r);
            }
        }
        let a = self.sweep.remove(0);
        self.last_action = a;
        a
    }
}

/// Greedy pursuit of a Cartesian target: move along the axis with the
/// largest remaining offset, or stay when within `deadband`.
pub fn action_toward(current: &Vector3<f64>, target: &Vector3<f64>, deadband: f64) -> Action {
    let d = target - current;
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    if ax.max(ay).max(az) <= deadband {
        return Action::Stay;
    }
    if ax >= ay && ax >= az {
        if d.x > 0.0 {
            Action::Forward
        } else {
            Action::Backward
        }
    } else if ay >= az {
        if d.y > 0.0 {
            Action::Left
        } else {
            Action::Right
        }
    } else if d.z > 0.0 {
        Action::Up
    } else {
        Action::Down
    }
}
