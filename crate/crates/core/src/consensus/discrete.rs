//! Finite-state correction: agents hold logic ids from a finite space, each
//! mapped to a real conclusion. A round commits only a move that keeps the
//! mean and strictly lowers the variance, so no state can repeat.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{mean, variance, ConsensusError, BALANCE_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSystem {
    ids: Vec<String>,
    values: Vec<f64>,
    grid: Vec<f64>,
}

impl DiscreteSystem {
    pub fn new<I, S>(logic_space: I) -> Result<Self, ConsensusError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (id, value) in logic_space {
            if !value.is_finite() {
                return Err(ConsensusError::NonFinite(value));
            }
            let id = id.into();
            if ids.contains(&id) {
                continue;
            }
            ids.push(id);
            values.push(value);
        }
        if ids.is_empty() {
            return Err(ConsensusError::TooFewAgents(0));
        }
        let mut grid = values.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Ok(Self { ids, values, grid })
    }

    /// One logic id per grid value, named after the value.
    pub fn from_grid(grid: &[f64]) -> Result<Self, ConsensusError> {
        Self::new(grid.iter().map(|v| (format!("{v}"), *v)))
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn logic_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn value(&self, logic: usize) -> f64 {
        self.values[logic]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, ConsensusError> {
        self.ids
            .iter()
            .position(|i| i == id)
            .ok_or_else(|| ConsensusError::UnknownLogicId(id.to_string()))
    }

    /// First logic carrying exactly this grid value.
    fn logic_for(&self, value: f64) -> usize {
        self.values
            .iter()
            .position(|v| *v == value)
            .expect("grid values come from the logic space")
    }

    fn grid_pos(&self, value: f64) -> usize {
        self.grid.iter().position(|g| *g == value).expect("value on grid")
    }

    pub fn values_of(&self, state: &[usize]) -> Vec<f64> {
        state.iter().map(|&l| self.values[l]).collect()
    }
}

/// Picks the next committed move, or `None` at a fixed point.
pub trait RevisionRule {
    fn next_state(&self, system: &DiscreteSystem, state: &[usize]) -> Option<Vec<usize>>;
}

/// Moves one agent below the mean up one grid step and one agent above the
/// mean down one grid step. The first pair (lowest indices) whose move keeps
/// the mean and strictly lowers the variance is committed.
#[derive(Debug, Clone, Copy, Default)]
pub struct OppositePairStep;

/// Minimum variance decrease that counts as strict.
const STRICT_DECREASE: f64 = 1e-12;

impl RevisionRule for OppositePairStep {
    fn next_state(&self, system: &DiscreteSystem, state: &[usize]) -> Option<Vec<usize>> {
        if state.len() < 2 {
            return None;
        }
        let values = system.values_of(state);
        let m = mean(&values);
        let v = variance(&values).ok()?;
        let grid = system.grid();
        let lows: Vec<usize> = (0..state.len()).filter(|&j| values[j] < m).collect();
        let highs: Vec<usize> = (0..state.len()).filter(|&j| values[j] > m).collect();
        for &lo in &lows {
            let up = system.grid_pos(values[lo]) + 1;
            if up >= grid.len() {
                continue;
            }
            for &hi in &highs {
                let down = system.grid_pos(values[hi]);
                if down == 0 {
                    continue;
                }
                let mut next = state.to_vec();
                next[lo] = system.logic_for(grid[up]);
                next[hi] = system.logic_for(grid[down - 1]);
                let next_values = system.values_of(&next);
                let next_var = variance(&next_values).ok()?;
                let mean_kept = (mean(&next_values) - m).abs() <= BALANCE_TOL;
                if mean_kept && next_var < v - STRICT_DECREASE * v.max(1.0) {
                    return Some(next);
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStep {
    pub round: u32,
    pub logic: Vec<String>,
    pub values: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOutcome {
    pub trajectory: Vec<DiscreteStep>,
    /// Reached a fixed point before the round cap.
    pub terminated: bool,
    /// Some state vector appeared twice.
    pub revisited: bool,
}

impl DiscreteOutcome {
    pub fn committed_moves(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    /// Variance decreases between consecutive states.
    pub fn decrements(&self) -> Vec<f64> {
        self.trajectory
            .windows(2)
            .map(|w| w[0].variance - w[1].variance)
            .collect()
    }
}

pub fn run_discrete(
    system: &DiscreteSystem,
    initial: &[&str],
    rule: &dyn RevisionRule,
    max_rounds: u32,
) -> Result<DiscreteOutcome, ConsensusError> {
    if initial.len() < 2 {
        return Err(ConsensusError::TooFewAgents(initial.len()));
    }
    let mut state = initial
        .iter()
        .map(|id| system.index_of(id))
        .collect::<Result<Vec<_>, _>>()?;
    let record = |round: u32, state: &[usize]| -> Result<DiscreteStep, ConsensusError> {
        let values = system.values_of(state);
        Ok(DiscreteStep {
            round,
            logic: state.iter().map(|&l| system.logic_ids()[l].clone()).collect(),
            variance: variance(&values)?,
            values,
        })
    };
    let mut seen: HashSet<Vec<usize>> = HashSet::from([state.clone()]);
    let mut trajectory = vec![record(0, &state)?];
    let mut revisited = false;
    let mut round = 0;
    let terminated = loop {
        let Some(next) = rule.next_state(system, &state) else {
            break true;
        };
        if round >= max_rounds {
            break false;
        }
        round += 1;
        revisited |= !seen.insert(next.clone());
        state = next;
        trajectory.push(record(round, &state)?);
    };
    Ok(DiscreteOutcome { trajectory, terminated, revisited })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_admissible_move() {
        let sys = DiscreteSystem::from_grid(&[0.0, 1.0, 2.0]).unwrap();
        let out = run_discrete(&sys, &["0", "2"], &OppositePairStep, 10).unwrap();
        assert!(out.terminated);
        assert!(!out.revisited);
        assert_eq!(out.committed_moves(), 1);
        assert_eq!(out.trajectory[1].values, vec![1.0, 1.0]);
    }

    #[test]
    fn agreement_is_immediate_fixed_point() {
        let sys = DiscreteSystem::from_grid(&[0.0, 1.0, 2.0]).unwrap();
        let out = run_discrete(&sys, &["1", "1", "1"], &OppositePairStep, 10).unwrap();
        assert!(out.terminated);
        assert_eq!(out.committed_moves(), 0);
    }

    #[test]
    fn unknown_id() {
        let sys = DiscreteSystem::from_grid(&[0.0, 1.0]).unwrap();
        assert_eq!(
            run_discrete(&sys, &["0", "7"], &OppositePairStep, 10),
            Err(ConsensusError::UnknownLogicId("7".into()))
        );
    }

    #[test]
    fn shared_values_use_first_logic() {
        let sys = DiscreteSystem::new([("a", 0.0), ("b", 1.0), ("b2", 1.0), ("c", 2.0)]).unwrap();
        assert_eq!(sys.grid(), &[0.0, 1.0, 2.0]);
        let out = run_discrete(&sys, &["a", "c"], &OppositePairStep, 10).unwrap();
        assert_eq!(out.trajectory[1].logic, vec!["b", "b"]);
    }

    #[test]
    fn cap_stops_before_fixed_point() {
        let sys = DiscreteSystem::from_grid(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = run_discrete(&sys, &["0", "4"], &OppositePairStep, 1).unwrap();
        assert!(!out.terminated);
        assert_eq!(out.committed_moves(), 1);
        let full = run_discrete(&sys, &["0", "4"], &OppositePairStep, 10).unwrap();
        assert!(full.terminated);
        assert_eq!(full.trajectory.last().unwrap().values, vec![2.0, 2.0]);
    }
}
