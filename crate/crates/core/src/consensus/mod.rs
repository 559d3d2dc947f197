//! Scalar correction dynamics over agent conclusions.
//!
//! Each agent holds a real-valued conclusion. A correction round moves agent
//! `j` toward the group mean by a coefficient `alpha_j` in `[0, 1]`:
//!
//! ```text
//! c'_j = (1 - alpha_j) * c_j + alpha_j * mean
//! ```
//!
//! When the weighted deviations cancel (`sum alpha_j * (c_j - mean) = 0`) the
//! mean is fixed and the sample variance becomes
//! `sum (1 - alpha_j)^2 (c_j - mean)^2 / (n - 1)`, so any round in which a
//! deviant agent corrects strictly lowers the variance. [`discrete`] covers the
//! finite-state version where agents can only sit on grid values.

pub mod discrete;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discrete::{run_discrete, DiscreteOutcome, DiscreteStep, DiscreteSystem, OppositePairStep, RevisionRule};

/// Absolute/relative tolerance for balance and mean checks.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("variance needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("alpha[{index}] = {value} is outside [0, 1]")]
    AlphaOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("correction plan is not balanced (residual {residual:e})")]
    UnbalancedPlan { residual: f64 },
    #[error("conclusion {0} is not finite")]
    NonFinite(f64),
    #[error("postcondition violated: {0}")]
    PostconditionViolated(String),
    #[error("unknown logic id `{0}`")]
    UnknownLogicId(String),
    #[error("tolerance must be positive and max_rounds at least 1")]
    BadStopRule,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(values: &[f64]) -> Result<f64, ConsensusError> {
    if values.len() < 2 {
        return Err(ConsensusError::TooFewAgents(values.len()));
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|c| (c - m).powi(2)).sum();
    Ok(ss / (values.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    conclusions: Vec<f64>,
    round: u32,
    history: Vec<Vec<f64>>,
}

impl ConsensusState {
    pub fn new(conclusions: Vec<f64>) -> Result<Self, ConsensusError> {
        if conclusions.len() < 2 {
            return Err(ConsensusError::TooFewAgents(conclusions.len()));
        }
        if let Some(&bad) = conclusions.iter().find(|c| !c.is_finite()) {
            return Err(ConsensusError::NonFinite(bad));
        }
        Ok(Self { conclusions, round: 0, history: Vec::new() })
    }

    pub fn conclusions(&self) -> &[f64] {
        &self.conclusions
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Conclusion vectors of every earlier round, oldest first.
    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.conclusions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conclusions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.conclusions)
    }

    pub fn variance(&self) -> f64 {
        variance(&self.conclusions).expect("state holds at least two agents")
    }

    pub fn deviations(&self) -> Vec<f64> {
        let m = self.mean();
        self.conclusions.iter().map(|c| c - m).collect()
    }

    /// Variance predicted for the next round under `alphas`.
    pub fn predicted_variance(&self, alphas: &[f64]) -> f64 {
        let ss: f64 = self
            .deviations()
            .iter()
            .zip(alphas)
            .map(|(d, a)| ((1.0 - a) * d).powi(2))
            .sum();
        ss / (self.len() - 1) as f64
    }

    /// Applies one balanced correction round.
    ///
    /// Checks afterwards that the mean moved by at most [`BALANCE_TOL`] and
    /// that the measured variance matches the closed form.
    pub fn apply_round(&self, plan: &CorrectionPlan) -> Result<ConsensusState, ConsensusError> {
        if plan.alphas.len() != self.len() {
            return Err(ConsensusError::LengthMismatch {
                expected: self.len(),
                got: plan.alphas.len(),
            });
        }
        let deviations = self.deviations();
        let residual = balance_residual(&deviations, &plan.alphas);
        if !plan.balanced || !within_balance(&deviations, residual) {
            return Err(ConsensusError::UnbalancedPlan { residual });
        }
        let m = self.mean();
        let next: Vec<f64> = self
            .conclusions
            .iter()
            .zip(&plan.alphas)
            .map(|(c, a)| (1.0 - a) * c + a * m)
            .collect();

        let new_mean = mean(&next);
        if (new_mean - m).abs() > BALANCE_TOL {
            return Err(ConsensusError::PostconditionViolated(format!(
                "mean drifted from {m} to {new_mean}"
            )));
        }
        let old_var = self.variance();
        let closed = self.predicted_variance(&plan.alphas);
        let measured = variance(&next)?;
        if (measured - closed).abs() > BALANCE_TOL * closed.max(old_var * 1e-6).max(f64::MIN_POSITIVE) {
            return Err(ConsensusError::PostconditionViolated(format!(
                "variance {measured} differs from closed form {closed}"
            )));
        }

        let mut history = self.history.clone();
        history.push(self.conclusions.clone());
        Ok(ConsensusState { conclusions: next, round: self.round + 1, history })
    }
}

fn balance_residual(deviations: &[f64], alphas: &[f64]) -> f64 {
    deviations.iter().zip(alphas).map(|(d, a)| a * d).sum()
}

fn within_balance(deviations: &[f64], residual: f64) -> bool {
    let scale: f64 = deviations.iter().map(|d| d.abs()).sum();
    residual.abs() <= BALANCE_TOL * scale.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPlan {
    alphas: Vec<f64>,
    balanced: bool,
}

impl CorrectionPlan {
    /// Accepts `alphas` as-is, marking the plan balanced only if it already is.
    pub fn checked(state: &ConsensusState, alphas: Vec<f64>) -> Result<Self, ConsensusError> {
        validate_alphas(&alphas, state.len())?;
        let deviations = state.deviations();
        let balanced = within_balance(&deviations, balance_residual(&deviations, &alphas));
        Ok(Self { alphas, balanced })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// True when no deviant agent corrects, so the round changes nothing.
    pub fn is_idle(&self, state: &ConsensusState) -> bool {
        state
            .deviations()
            .iter()
            .zip(&self.alphas)
            .all(|(d, a)| *d == 0.0 || *a == 0.0)
    }
}

fn validate_alphas(alphas: &[f64], n: usize) -> Result<(), ConsensusError> {
    if alphas.len() != n {
        return Err(ConsensusError::LengthMismatch { expected: n, got: alphas.len() });
    }
    match alphas.iter().position(|a| !(0.0..=1.0).contains(a)) {
        Some(index) => Err(ConsensusError::AlphaOutOfRange { index, value: alphas[index] }),
        None => Ok(()),
    }
}

/// Rescales proposed coefficients so the weighted deviations cancel.
///
/// With `P` the weighted sum over agents above the mean and `M` the one below,
/// the heavier side is scaled by `min(P, M) / max(P, M)`. If exactly one side
/// has weight, that side is zeroed. Agents at the mean keep their proposal.
pub fn balance_deviations(deviations: &[f64], proposed: &[f64]) -> Result<Vec<f64>, ConsensusError> {
    validate_alphas(proposed, deviations.len())?;
    let above: f64 = deviations
        .iter()
        .zip(proposed)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, a)| a * d)
        .sum();
    let below: f64 = deviations
        .iter()
        .zip(proposed)
        .filter(|(d, _)| **d < 0.0)
        .map(|(d, a)| a * d.abs())
        .sum();
    if above == below {
        return Ok(proposed.to_vec());
    }
    let factor = above.min(below) / above.max(below);
    let scale_positive = above > below;
    Ok(deviations
        .iter()
        .zip(proposed)
        .map(|(d, a)| {
            let on_heavy_side = if scale_positive { *d > 0.0 } else { *d < 0.0 };
            if on_heavy_side {
                (a * factor).clamp(0.0, 1.0)
            } else {
                *a
            }
        })
        .collect())
}

pub fn balance_projection(
    state: &ConsensusState,
    proposed: &[f64],
) -> Result<CorrectionPlan, ConsensusError> {
    let alphas = balance_deviations(&state.deviations(), proposed)?;
    Ok(CorrectionPlan { alphas, balanced: true })
}

/// Source of proposed correction coefficients for each round.
pub trait AlphaPolicy {
    fn propose(&self, state: &ConsensusState) -> Vec<f64>;
}

impl<F> AlphaPolicy for F
where
    F: Fn(&ConsensusState) -> Vec<f64>,
{
    fn propose(&self, state: &ConsensusState) -> Vec<f64> {
        self(state)
    }
}

/// Same coefficient for every agent.
#[derive(Debug, Clone, Copy)]
pub struct UniformAlpha(pub f64);

impl AlphaPolicy for UniformAlpha {
    fn propose(&self, state: &ConsensusState) -> Vec<f64> {
        vec![self.0; state.len()]
    }
}

/// `alpha` for agents farther than `min_deviation` from the mean, 0 otherwise.
///
/// Stands in for "only flagged agents revise".
#[derive(Debug, Clone, Copy)]
pub struct DeviantAlpha {
    pub alpha: f64,
    pub min_deviation: f64,
}

impl Default for DeviantAlpha {
    fn default() -> Self {
        Self { alpha: 0.5, min_deviation: 0.0 }
    }
}

impl AlphaPolicy for DeviantAlpha {
    fn propose(&self, state: &ConsensusState) -> Vec<f64> {
        state
            .deviations()
            .iter()
            .map(|d| if d.abs() > self.min_deviation { self.alpha } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub round: u32,
    pub conclusions: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Tolerance,
    Idle,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn variances(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.variance).collect()
    }

    pub fn final_round(&self) -> u32 {
        self.steps.last().map_or(0, |s| s.round)
    }

    /// Tab-separated `round variance c_1 .. c_n` lines.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let mut cells = vec![step.round.to_string(), step.variance.to_string()];
            cells.extend(step.conclusions.iter().map(|c| c.to_string()));
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Iterates propose, project, apply until the variance is at most `tol`, a
/// round corrects nobody, or `max_rounds` rounds have run.
pub fn run_continuous(
    initial: ConsensusState,
    policy: &dyn AlphaPolicy,
    tol: f64,
    max_rounds: u32,
) -> Result<Trajectory, ConsensusError> {
    if !(tol > 0.0) || max_rounds == 0 {
        return Err(ConsensusError::BadStopRule);
    }
    let step = |s: &ConsensusState| TrajectoryStep {
        round: s.round(),
        conclusions: s.conclusions().to_vec(),
        variance: s.variance(),
    };
    let mut state = initial;
    let mut steps = vec![step(&state)];
    let stop = loop {
        if state.variance() <= tol {
            break StopReason::Tolerance;
        }
        let plan = balance_projection(&state, &state_alphas(policy, &state)?)?;
        let idle = plan.is_idle(&state);
        state = state.apply_round(&plan)?;
        steps.push(step(&state));
        if idle {
            break StopReason::Idle;
        }
        if state.round() >= max_rounds {
            break StopReason::MaxRounds;
        }
    };
    Ok(Trajectory { steps, stop })
}

fn state_alphas(policy: &dyn AlphaPolicy, state: &ConsensusState) -> Result<Vec<f64>, ConsensusError> {
    let alphas = policy.propose(state);
    validate_alphas(&alphas, state.len())?;
    Ok(alphas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[0.0, 2.0]), 1.0);
        assert_eq!(mean(&[1.0, 1.0, 1.0]), 1.0);
        assert!(close(mean(&[0.1, 0.2, 0.7]), 1.0 / 3.0));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance(&[0.0, 2.0]).unwrap(), 2.0);
        assert_eq!(variance(&[3.5; 6]).unwrap(), 0.0);
        assert_eq!(variance(&[1.0]), Err(ConsensusError::TooFewAgents(1)));
    }

    #[test]
    fn projection_scales_heavier_side() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let plan = balance_projection(&s, &[0.8, 0.4]).unwrap();
        assert!(close(plan.alphas()[0], 0.4) && close(plan.alphas()[1], 0.4));
        let residual: f64 = s.deviations().iter().zip(plan.alphas()).map(|(d, a)| d * a).sum();
        assert!(residual.abs() < 1e-15);

        let alphas = balance_deviations(&[0.0, -2.0, 1.0], &[0.3, 0.5, 0.5]).unwrap();
        assert_eq!(alphas, vec![0.3, 0.25, 0.5]);
        assert_eq!(0.25 * -2.0 + 0.5 * 1.0, 0.0);
    }

    #[test]
    fn projection_zeroes_lonely_side() {
        let alphas = balance_deviations(&[-1.0, 1.0], &[0.0, 0.7]).unwrap();
        assert_eq!(alphas, vec![0.0, 0.0]);
    }

    #[test]
    fn projection_without_deviation_is_identity() {
        let s = ConsensusState::new(vec![4.0, 4.0, 4.0]).unwrap();
        let plan = balance_projection(&s, &[0.1, 0.9, 0.3]).unwrap();
        assert_eq!(plan.alphas(), &[0.1, 0.9, 0.3]);
        assert!(plan.is_balanced());
    }

    #[test]
    fn projection_rejects_bad_alphas() {
        assert_eq!(
            balance_deviations(&[1.0, -1.0], &[0.5, 1.5]),
            Err(ConsensusError::AlphaOutOfRange { index: 1, value: 1.5 })
        );
        assert!(balance_deviations(&[1.0, -1.0], &[f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn apply_round_halves_gap() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let plan = balance_projection(&s, &[0.5, 0.5]).unwrap();
        let next = s.apply_round(&plan).unwrap();
        assert_eq!(next.conclusions(), &[0.5, 1.5]);
        assert_eq!(next.variance(), 0.5);
        assert_eq!(next.mean(), 1.0);
        assert_eq!(next.round(), 1);
        assert_eq!(next.history(), &[vec![0.0, 2.0]]);
    }

    #[test]
    fn zero_alphas_only_advance_round() {
        let s = ConsensusState::new(vec![0.0, 3.0, 9.0]).unwrap();
        let plan = balance_projection(&s, &[0.0; 3]).unwrap();
        let next = s.apply_round(&plan).unwrap();
        assert_eq!(next.conclusions(), s.conclusions());
        assert_eq!(next.round(), 1);
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let s = ConsensusState::new(vec![1.0, 1.0, 1.0]).unwrap();
        let plan = balance_projection(&s, &[0.2, 0.7, 1.0]).unwrap();
        let next = s.apply_round(&plan).unwrap();
        assert_eq!(next.conclusions(), &[1.0, 1.0, 1.0]);
        assert_eq!(next.variance(), 0.0);
    }

    #[test]
    fn unbalanced_plan_rejected() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let plan = CorrectionPlan::checked(&s, vec![0.8, 0.4]).unwrap();
        assert!(!plan.is_balanced());
        assert!(matches!(s.apply_round(&plan), Err(ConsensusError::UnbalancedPlan { .. })));
        let uniform = CorrectionPlan::checked(&s, vec![0.3, 0.3]).unwrap();
        assert!(uniform.is_balanced());
        assert!(s.apply_round(&uniform).is_ok());
    }

    #[test]
    fn geometric_decay() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let t = run_continuous(s, &UniformAlpha(0.5), 1e-300, 3).unwrap();
        assert_eq!(t.variances(), vec![2.0, 0.5, 0.125, 0.03125]);
        assert_eq!(t.stop, StopReason::MaxRounds);
    }

    #[test]
    fn tolerance_stop_within_bound() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let t = run_continuous(s, &UniformAlpha(0.5), 1e-12, 100).unwrap();
        assert_eq!(t.stop, StopReason::Tolerance);
        // 2 * 0.25^k <= 1e-12 first holds at k = 21.
        assert_eq!(t.final_round(), 21);
    }

    #[test]
    fn idle_policy_stops_after_one_round() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let t = run_continuous(s, &UniformAlpha(0.0), 1e-9, 50).unwrap();
        assert_eq!(t.stop, StopReason::Idle);
        assert_eq!(t.final_round(), 1);
        assert_eq!(t.steps[1].conclusions, vec![0.0, 2.0]);
    }

    #[test]
    fn deviant_policy_leaves_centre_alone() {
        let s = ConsensusState::new(vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(DeviantAlpha::default().propose(&s), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn table_format() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        let t = run_continuous(s, &UniformAlpha(0.5), 1e-9, 1).unwrap();
        assert_eq!(t.to_table(), "0\t2\t0\t2\n1\t0.5\t0.5\t1.5\n");
    }

    #[test]
    fn bad_stop_rule() {
        let s = ConsensusState::new(vec![0.0, 2.0]).unwrap();
        assert!(run_continuous(s.clone(), &UniformAlpha(0.5), 0.0, 3).is_err());
        assert!(run_continuous(s, &UniformAlpha(0.5), 1e-3, 0).is_err());
    }
}
