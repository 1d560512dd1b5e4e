//! Solver-agnostic description of a mixed-integer second-order cone program.
//!
//! A [`ConicProgram`] is a flat list of named variables, sparse linear rows,
//! cone memberships, optional nonconvex quadratic rows and one-hot groups of
//! binaries. Builders attach a free-form `label` and `element` to every
//! constraint so that a dump can be traced back to the model that produced it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ProgramError;

/// Index of a variable inside a [`ConicProgram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// `None` means unbounded below.
    pub lower: Option<f64>,
    /// `None` means unbounded above.
    pub upper: Option<f64>,
    #[serde(default)]
    pub binary: bool,
}

/// Affine expression `Σ coef·x + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    #[serde(default)]
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self { terms: Vec::new(), constant: value }
    }

    pub fn var(v: VarId) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.push(v, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }

    /// Merge duplicate variables and drop zero coefficients.
    pub fn compact(&mut self) {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        self.terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, &(_, c)| m.max(c.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `expr (sense) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub element: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    /// Signed violation: positive when the row is violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.expr.eval(x);
        match self.sense {
            Sense::Le => lhs - self.rhs,
            Sense::Ge => self.rhs - lhs,
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cone {
    /// `‖x‖₂ ≤ t`.
    SecondOrder { t: LinExpr, x: Vec<LinExpr> },
    /// `2·u·v ≥ ‖x‖₂²` with `u, v ≥ 0`.
    Rotated { u: LinExpr, v: LinExpr, x: Vec<LinExpr> },
}

impl Cone {
    /// Lower to the standard form `‖rest‖ ≤ head` (rotated cones use the usual
    /// `(u+v)/√2, (u−v)/√2` change of variables).
    pub fn standard_parts(&self) -> (LinExpr, Vec<LinExpr>) {
        match self {
            Cone::SecondOrder { t, x } => (t.clone(), x.clone()),
            Cone::Rotated { u, v, x } => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let mut head = LinExpr::new();
                let mut diff = LinExpr::new();
                for &(var, c) in &u.terms {
                    head.push(var, s * c);
                    diff.push(var, s * c);
                }
                for &(var, c) in &v.terms {
                    head.push(var, s * c);
                    diff.push(var, -s * c);
                }
                head.constant = s * (u.constant + v.constant);
                diff.constant = s * (u.constant - v.constant);
                head.compact();
                diff.compact();
                let mut rest = x.clone();
                rest.push(diff);
                (head, rest)
            }
        }
    }

    /// Positive when the point lies outside the cone.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Cone::SecondOrder { t, x: parts } => {
                let norm = parts.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                norm - t.eval(x)
            }
            Cone::Rotated { u, v, x: parts } => {
                let uu = u.eval(x);
                let vv = v.eval(x);
                let sq = parts.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
                // Same geometry as the lowered standard cone, so tolerances agree.
                let head = (uu + vv) * std::f64::consts::FRAC_1_SQRT_2;
                let diff = (uu - vv) * std::f64::consts::FRAC_1_SQRT_2;
                (sq + diff * diff).sqrt() - head
            }
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        let (a, b): (Vec<&LinExpr>, Vec<&LinExpr>) = match self {
            Cone::SecondOrder { t, x } => (vec![t], x.iter().collect()),
            Cone::Rotated { u, v, x } => (vec![u, v], x.iter().collect()),
        };
        a.into_iter()
            .chain(b)
            .flat_map(|e| e.terms.iter().map(|&(v, _)| v))
            .collect::<Vec<_>>()
            .into_iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub label: String,
    pub element: String,
    pub cone: Cone,
}

/// `linear + Σ coef·xᵢ·xⱼ (sense) rhs`; generally nonconvex. Programs holding
/// such rows are descriptive only and are rejected by the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadRow {
    pub label: String,
    pub element: String,
    pub linear: LinExpr,
    pub quad: Vec<(VarId, VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl QuadRow {
    pub fn eval_lhs(&self, x: &[f64]) -> f64 {
        self.linear.eval(x) + self.quad.iter().map(|&(i, j, c)| c * x[i.0] * x[j.0]).sum::<f64>()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.eval_lhs(x);
        match self.sense {
            Sense::Le => lhs - self.rhs,
            Sense::Ge => self.rhs - lhs,
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Binaries of which exactly one (when the group's defining row forces it)
/// takes value one. Used by branch-and-bound for range dichotomies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHotGroup {
    pub label: String,
    pub vars: Vec<VarId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: ObjectiveSense,
    pub linear: LinExpr,
    /// Diagonal quadratic terms `coef·x²`.
    #[serde(default)]
    pub quad: Vec<(VarId, f64)>,
}

impl Default for Objective {
    fn default() -> Self {
        Self { sense: ObjectiveSense::Minimize, linear: LinExpr::new(), quad: Vec::new() }
    }
}

impl Objective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.linear.eval(x) + self.quad.iter().map(|&(v, c)| c * x[v.0] * x[v.0]).sum::<f64>()
    }
}

/// One constraint that a candidate point fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramViolation {
    pub label: String,
    pub element: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub name: String,
    pub variables: Vec<Variable>,
    pub rows: Vec<Row>,
    pub cones: Vec<ConeConstraint>,
    #[serde(default)]
    pub quad_rows: Vec<QuadRow>,
    #[serde(default)]
    pub one_hot: Vec<OneHotGroup>,
    pub objective: Objective,
}

impl ConicProgram {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> VarId {
        self.variables.push(Variable { name: name.into(), lower, upper, binary: false });
        VarId(self.variables.len() - 1)
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, None, None)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable { name: name.into(), lower: Some(0.0), upper: Some(1.0), binary: true });
        VarId(self.variables.len() - 1)
    }

    pub fn add_row(
        &mut self,
        label: impl Into<String>,
        element: impl Into<String>,
        mut expr: LinExpr,
        sense: Sense,
        rhs: f64,
    ) {
        // Fold the expression constant into the right-hand side.
        let rhs = rhs - expr.constant;
        expr.constant = 0.0;
        expr.compact();
        self.rows.push(Row { label: label.into(), element: element.into(), expr, sense, rhs });
    }

    pub fn add_cone(&mut self, label: impl Into<String>, element: impl Into<String>, cone: Cone) {
        self.cones.push(ConeConstraint { label: label.into(), element: element.into(), cone });
    }

    pub fn add_quad_row(&mut self, row: QuadRow) {
        self.quad_rows.push(row);
    }

    pub fn add_one_hot(&mut self, label: impl Into<String>, vars: Vec<VarId>) {
        self.one_hot.push(OneHotGroup { label: label.into(), vars });
    }

    pub fn binaries(&self) -> Vec<VarId> {
        self.variables.iter().enumerate().filter(|(_, v)| v.binary).map(|(i, _)| VarId(i)).collect()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.binary).count()
    }

    /// True when the program can be handed to the conic solver: no quadratic
    /// rows and a purely linear objective.
    pub fn is_solvable(&self) -> bool {
        self.quad_rows.is_empty() && self.objective.quad.is_empty()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name).map(VarId)
    }

    /// Structural checks: every reference points at a declared variable and
    /// one-hot groups are disjoint sets of binaries.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        let check = |v: VarId, what: &str| {
            if v.0 >= n {
                Err(ProgramError::UnknownVariable { index: v.0, context: what.to_string() })
            } else {
                Ok(())
            }
        };
        for (i, var) in self.variables.iter().enumerate() {
            if let (Some(l), Some(u)) = (var.lower, var.upper) {
                if l > u {
                    return Err(ProgramError::EmptyBounds { name: var.name.clone(), lower: l, upper: u });
                }
            }
            if var.binary && (var.lower.is_none() || var.upper.is_none()) {
                return Err(ProgramError::UnboundedBinary(self.variables[i].name.clone()));
            }
        }
        for row in &self.rows {
            for &(v, _) in &row.expr.terms {
                check(v, &row.label)?;
            }
        }
        for cone in &self.cones {
            for v in cone.cone.vars() {
                check(v, &cone.label)?;
            }
        }
        for q in &self.quad_rows {
            for &(v, _) in &q.linear.terms {
                check(v, &q.label)?;
            }
            for &(a, b, _) in &q.quad {
                check(a, &q.label)?;
                check(b, &q.label)?;
            }
        }
        for &(v, _) in &self.objective.linear.terms {
            check(v, "objective")?;
        }
        for &(v, _) in &self.objective.quad {
            check(v, "objective")?;
        }
        let mut seen = BTreeSet::new();
        for g in &self.one_hot {
            for &v in &g.vars {
                check(v, &g.label)?;
                if !self.variables[v.0].binary {
                    return Err(ProgramError::NonBinaryInGroup {
                        group: g.label.clone(),
                        name: self.variables[v.0].name.clone(),
                    });
                }
                if !seen.insert(v) {
                    return Err(ProgramError::OverlappingGroups(self.variables[v.0].name.clone()));
                }
            }
        }
        Ok(())
    }

    /// Every constraint (bounds, rows, cones, quadratic rows and, optionally,
    /// integrality) violated by more than `tol`.
    pub fn violations(&self, x: &[f64], tol: f64, check_integrality: bool) -> Vec<ProgramViolation> {
        let mut out = Vec::new();
        for var in self.variables.iter().zip(x) {
            let (v, &val) = var;
            if let Some(l) = v.lower {
                if l - val > tol {
                    out.push(ProgramViolation { label: "lower_bound".into(), element: v.name.clone(), residual: l - val });
                }
            }
            if let Some(u) = v.upper {
                if val - u > tol {
                    out.push(ProgramViolation { label: "upper_bound".into(), element: v.name.clone(), residual: val - u });
                }
            }
            if check_integrality && v.binary {
                let frac = (val - val.round()).abs();
                if frac > tol {
                    out.push(ProgramViolation { label: "integrality".into(), element: v.name.clone(), residual: frac });
                }
            }
        }
        for row in &self.rows {
            let r = row.violation(x);
            if r > tol {
                out.push(ProgramViolation { label: row.label.clone(), element: row.element.clone(), residual: r });
            }
        }
        for c in &self.cones {
            let r = c.cone.violation(x);
            if r > tol {
                out.push(ProgramViolation { label: c.label.clone(), element: c.element.clone(), residual: r });
            }
        }
        for q in &self.quad_rows {
            let r = q.violation(x);
            if r > tol {
                out.push(ProgramViolation { label: q.label.clone(), element: q.element.clone(), residual: r });
            }
        }
        out
    }

    /// Number of rows, cones and quadratic rows per label.
    pub fn counts_by_label(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for label in self
            .rows
            .iter()
            .map(|r| &r.label)
            .chain(self.cones.iter().map(|c| &c.label))
            .chain(self.quad_rows.iter().map(|q| &q.label))
        {
            *counts.entry(label.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotated_cone_lowering_matches_definition() {
        // q² ≤ w encoded as 2·w·(1/2) ≥ q².
        let mut p = ConicProgram::new("t");
        let q = p.add_free("q");
        let w = p.add_free("w");
        let cone = Cone::Rotated { u: LinExpr::var(w), v: LinExpr::constant(0.5), x: vec![LinExpr::var(q)] };
        for &(qv, wv, inside) in &[(2.0, 4.0, true), (2.0, 4.1, true), (2.0, 3.9, false), (0.0, 0.0, true)] {
            let x = [qv, wv];
            let (head, rest) = cone.standard_parts();
            let norm = rest.iter().map(|e| e.eval(&x).powi(2)).sum::<f64>().sqrt();
            assert_eq!(norm <= head.eval(&x) + 1e-12, inside, "q={qv} w={wv}");
            assert_eq!(cone.violation(&x) <= 1e-12, inside);
        }
    }

    #[test]
    fn validate_rejects_overlapping_groups() {
        let mut p = ConicProgram::new("t");
        let a = p.add_binary("a");
        let b = p.add_binary("b");
        p.add_one_hot("g1", vec![a, b]);
        p.add_one_hot("g2", vec![b]);
        assert!(matches!(p.validate(), Err(ProgramError::OverlappingGroups(_))));
    }

    #[test]
    fn validate_rejects_dangling_cone_reference() {
        let mut p = ConicProgram::new("t");
        let a = p.add_free("a");
        p.add_cone("c", "e", Cone::SecondOrder { t: LinExpr::var(a), x: vec![LinExpr::var(VarId(7))] });
        assert!(matches!(p.validate(), Err(ProgramError::UnknownVariable { index: 7, .. })));
    }

    #[test]
    fn row_constant_is_folded_into_rhs() {
        let mut p = ConicProgram::new("t");
        let a = p.add_free("a");
        p.add_row("r", "e", LinExpr::var(a).plus(2.0), Sense::Le, 5.0);
        assert_eq!(p.rows[0].rhs, 3.0);
        assert!(p.violations(&[3.0], 1e-9, false).is_empty());
        assert_eq!(p.violations(&[4.0], 1e-9, false).len(), 1);
    }
}
