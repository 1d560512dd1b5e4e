use nalgebra::{DMatrix, DVector};

use crate::error::ProgramError;
use crate::ipm;
use crate::presolve::{presolve, Presolved, Reduction};
use crate::program::ConicProgram;
use crate::settings::{SocpSolution, SocpStatus, SolveSettings};

/// Solve the continuous relaxation (binaries in `[0, 1]`) of `program`.
pub fn solve_socp(program: &ConicProgram, settings: &SolveSettings) -> Result<SocpSolution, ProgramError> {
    let lower: Vec<f64> = program.variables.iter().map(|v| v.lower.unwrap_or(f64::NEG_INFINITY)).collect();
    let upper: Vec<f64> = program.variables.iter().map(|v| v.upper.unwrap_or(f64::INFINITY)).collect();
    solve_with_bounds(program, &lower, &upper, settings)
}

/// As [`solve_socp`] with the variable bounds replaced.
pub fn solve_with_bounds(
    program: &ConicProgram,
    lower: &[f64],
    upper: &[f64],
    settings: &SolveSettings,
) -> Result<SocpSolution, ProgramError> {
    if !program.is_solvable() {
        return Err(ProgramError::Nonconvex);
    }
    program.validate()?;
    let red = match presolve(program, lower, upper) {
        Ok(r) => r,
        Err(Presolved::Infeasible(_)) => {
            return Ok(SocpSolution {
                status: SocpStatus::PrimalInfeasible,
                x: vec![f64::NAN; program.num_vars()],
                objective: f64::NAN,
                iterations: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                gap: f64::INFINITY,
                dual_eq: Vec::new(),
                dual_cone: Vec::new(),
            })
        }
    };
    let form = &red.form;
    if form.n == 0 && form.g.is_empty() && form.a.is_empty() {
        let x = red.expand(&[]);
        return Ok(SocpSolution {
            status: SocpStatus::Optimal,
            objective: program.objective.eval(&x),
            x,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            dual_eq: Vec::new(),
            dual_cone: Vec::new(),
        });
    }
    let out = ipm::solve(form, settings.ipm_tol, settings.tol_feas, settings.ipm_max_iter);
    let tau = out.tau;
    let (x, dual_eq, dual_cone) = match out.status {
        SocpStatus::Optimal => {
            let xs: Vec<f64> = out.x.iter().map(|v| v / tau).collect();
            let mut x = red.expand(&xs);
            polish_equalities(&red, &mut x);
            let yscale = red.obj_scale / tau;
            (
                x,
                out.y.iter().zip(&red.eq_scale).map(|(y, s)| y * s * yscale).collect(),
                out.z.iter().zip(&red.cone_scale).map(|(z, s)| z * s * yscale).collect(),
            )
        }
        // Certificates are returned as rays in the scaled reduced space.
        SocpStatus::PrimalInfeasible => (vec![f64::NAN; program.num_vars()], out.y.clone(), out.z.clone()),
        SocpStatus::DualInfeasible => (red.expand(&out.x), Vec::new(), Vec::new()),
        _ => {
            let xs: Vec<f64> = out.x.iter().map(|v| v / tau).collect();
            (red.expand(&xs), Vec::new(), Vec::new())
        }
    };
    let objective = if out.status == SocpStatus::Optimal { program.objective.eval(&x) } else { f64::NAN };
    Ok(SocpSolution {
        status: out.status,
        x,
        objective,
        iterations: out.iterations,
        primal_residual: out.pres,
        dual_residual: out.dres,
        gap: out.gap,
        dual_eq,
        dual_cone,
    })
}

/// Minimum-norm correction of the free columns onto the equality rows, in the
/// unscaled space. Kept only if it reduces the residual.
fn polish_equalities(red: &Reduction, x: &mut [f64]) {
    let p = red.a_orig.len();
    if p == 0 {
        return;
    }
    let mut xr = vec![0.0; red.form.n];
    for (j, col) in red.col_of.iter().enumerate() {
        if let Some(k) = col {
            xr[*k] = x[j];
        }
    }
    let residual = |xr: &[f64]| -> Vec<f64> {
        red.a_orig.iter().zip(&red.b_orig).map(|(r, b)| r.iter().map(|&(j, v)| v * xr[j]).sum::<f64>() - b).collect()
    };
    let r = residual(&xr);
    let before = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if before == 0.0 {
        return;
    }
    let mut aat = DMatrix::<f64>::zeros(p, p);
    // Dense A' by columns for the outer products.
    let n = red.form.n;
    let mut dense = DMatrix::<f64>::zeros(p, n);
    for (i, row) in red.a_orig.iter().enumerate() {
        for &(j, v) in row {
            dense[(i, j)] += v;
        }
    }
    aat.gemm(1.0, &dense, &dense.transpose(), 0.0);
    let eps = 1e-13 * aat.diagonal().amax().max(1.0);
    for i in 0..p {
        aat[(i, i)] += eps;
    }
    let Some(w) = aat.lu().solve(&DVector::from_vec(r)) else {
        return;
    };
    let dx = dense.transpose() * w;
    let cand: Vec<f64> = xr.iter().zip(dx.iter()).map(|(a, d)| a - d).collect();
    let after = residual(&cand).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if after < before {
        for (j, col) in red.col_of.iter().enumerate() {
            if let Some(k) = col {
                x[j] = cand[*k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{Cone, LinExpr, ObjectiveSense, Objective, Sense};

    #[test]
    fn one_dimensional_lp() {
        let mut p = ConicProgram::new("lp");
        let x = p.add_free("x");
        p.add_row("lb", "", LinExpr::var(x), Sense::Ge, 3.0);
        p.objective = Objective { sense: ObjectiveSense::Minimize, linear: LinExpr::var(x), quad: vec![] };
        let sol = solve_socp(&p, &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SocpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-7, "{:?}", sol.x);
    }

    #[test]
    fn rotated_cone_is_tight() {
        // min t  s.t.  q² ≤ t,  q = 2.
        let mut p = ConicProgram::new("rot");
        let t = p.add_free("t");
        let q = p.add_free("q");
        p.add_row("fix", "", LinExpr::var(q), Sense::Eq, 2.0);
        p.add_cone("c", "", Cone::Rotated { u: LinExpr::var(t), v: LinExpr::constant(0.5), x: vec![LinExpr::var(q)] });
        p.objective.linear = LinExpr::var(t);
        let sol = solve_socp(&p, &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SocpStatus::Optimal);
        assert!((sol.x[0] - 4.0).abs() < 1e-6, "{:?}", sol.x);
    }

    #[test]
    fn soc_with_free_head() {
        // min t s.t. ‖(x − 1, y − 2)‖ ≤ t, x + y = 0 → t = 3/√2.
        let mut p = ConicProgram::new("soc");
        let t = p.add_free("t");
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.add_row("sum", "", LinExpr::var(x).term(y, 1.0), Sense::Eq, 0.0);
        p.add_cone(
            "c",
            "",
            Cone::SecondOrder { t: LinExpr::var(t), x: vec![LinExpr::var(x).plus(-1.0), LinExpr::var(y).plus(-2.0)] },
        );
        p.objective.linear = LinExpr::var(t);
        let sol = solve_socp(&p, &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SocpStatus::Optimal);
        assert!((sol.objective - 3.0 / 2f64.sqrt()).abs() < 1e-7, "{}", sol.objective);
    }

    #[test]
    fn infeasible_lp_is_reported() {
        let mut p = ConicProgram::new("inf");
        let x = p.add_var("x", Some(0.0), None);
        let y = p.add_var("y", Some(0.0), None);
        p.add_row("a", "", LinExpr::var(x).term(y, 1.0), Sense::Le, -1.0);
        p.objective.linear = LinExpr::var(x);
        let sol = solve_socp(&p, &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SocpStatus::PrimalInfeasible);
    }

    #[test]
    fn unbounded_lp_is_reported() {
        let mut p = ConicProgram::new("unb");
        let x = p.add_var("x", Some(0.0), None);
        let y = p.add_var("y", Some(0.0), None);
        p.add_row("a", "", LinExpr::var(x).term(y, -1.0), Sense::Le, 1.0);
        p.objective = Objective { sense: ObjectiveSense::Maximize, linear: LinExpr::var(x).term(y, 1.0), quad: vec![] };
        let sol = solve_socp(&p, &SolveSettings::default()).unwrap();
        assert_eq!(sol.status, SocpStatus::DualInfeasible);
    }

    #[test]
    fn quadratic_rows_are_rejected() {
        let mut p = ConicProgram::new("q");
        let x = p.add_free("x");
        p.objective.quad.push((x, 1.0));
        assert_eq!(solve_socp(&p, &SolveSettings::default()).unwrap_err(), ProgramError::Nonconvex);
    }
}
