use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchRule {
    /// Range dichotomies on the least-converged one-hot group, then
    /// most-fractional single binaries.
    #[default]
    OneHotDichotomy,
    /// Plain 0/1 branching on the most fractional binary.
    MostFractional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    /// Absolute tolerance used when accepting an incumbent against the
    /// original constraints.
    pub tol_feas: f64,
    /// Relative gap `|incumbent − bound| / max(1, |incumbent|)`.
    pub tol_gap: f64,
    pub tol_int: f64,
    pub node_limit: usize,
    pub time_limit_s: f64,
    pub branch_rule: BranchRule,
    /// Interior-point stopping tolerance on scaled residuals and gap.
    pub ipm_tol: f64,
    pub ipm_max_iter: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_gap: 1e-6,
            tol_int: 1e-5,
            node_limit: 100_000,
            time_limit_s: 600.0,
            branch_rule: BranchRule::OneHotDichotomy,
            ipm_tol: 1e-8,
            ipm_max_iter: 120,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tol_feas", self.tol_feas),
            ("tol_gap", self.tol_gap),
            ("tol_int", self.tol_int),
            ("time_limit_s", self.time_limit_s),
            ("ipm_tol", self.ipm_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() && name != "time_limit_s" {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.node_limit == 0 || self.ipm_max_iter == 0 {
            return Err("node and iteration limits must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SocpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

/// Outcome of one continuous solve. `x` is in the program's variable space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocpSolution {
    pub status: SocpStatus,
    pub x: Vec<f64>,
    /// Objective value in the program's own sense.
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Multipliers of the reduced equality rows and cone rows. On
    /// `PrimalInfeasible` this is the Farkas ray instead.
    pub dual_eq: Vec<f64>,
    pub dual_cone: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
    /// The root relaxation is unbounded.
    Unbounded,
    /// The tree was exhausted but some nodes could not be solved reliably and
    /// no incumbent exists.
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub incumbent: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub socp_solves: usize,
    pub numerical_failures: usize,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    (incumbent - bound).abs() / incumbent.abs().max(1.0)
}
