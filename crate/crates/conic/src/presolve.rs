//! Reduction of a [`ConicProgram`] with given bounds to the standard form
//!
//! ```text
//! minimize c'x  s.t.  A x = b,  G x + s = h,  s ∈ R₊ˡ × Q^{q₁} × … × Q^{q_m}
//! ```
//!
//! Fixed variables are substituted, singleton rows become bounds, and rows
//! over the same support with proportional coefficients are merged into one
//! interval (an opposing pair with touching right-hand sides becomes an
//! equality). The result is Ruiz-equilibrated; cone blocks share one row scale.

use std::collections::BTreeMap;

use crate::program::{ConicProgram, ObjectiveSense, Sense};

pub(crate) type SparseRow = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub(crate) struct StandardForm {
    pub n: usize,
    pub c: Vec<f64>,
    pub a: Vec<SparseRow>,
    pub b: Vec<f64>,
    pub g: Vec<SparseRow>,
    pub h: Vec<f64>,
    pub lp_dim: usize,
    pub soc_dims: Vec<usize>,
}

/// Standard form plus the data needed to map a reduced point back.
#[derive(Clone, Debug)]
pub(crate) struct Reduction {
    pub form: StandardForm,
    /// Unscaled equality rows, for the final projection.
    pub a_orig: Vec<SparseRow>,
    pub b_orig: Vec<f64>,
    /// Original variable → reduced column.
    pub col_of: Vec<Option<usize>>,
    pub fixed: Vec<f64>,
    /// x_orig[col] = col_scale[col] · x_scaled[col].
    pub col_scale: Vec<f64>,
    pub eq_scale: Vec<f64>,
    pub cone_scale: Vec<f64>,
    /// The reduced cost vector was divided by this.
    pub obj_scale: f64,
}

impl Reduction {
    pub fn expand(&self, x_scaled: &[f64]) -> Vec<f64> {
        self.col_of
            .iter()
            .enumerate()
            .map(|(j, col)| match col {
                Some(k) => self.col_scale[*k] * x_scaled[*k],
                None => self.fixed[j],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Presolved {
    Infeasible(String),
}

struct WorkRow {
    terms: SparseRow,
    sense: Sense,
    rhs: f64,
    label: String,
}

const FIX_TOL: f64 = 1e-9;

fn feas_tol(scale: f64) -> f64 {
    FIX_TOL * scale.abs().max(1.0)
}

pub(crate) fn presolve(program: &ConicProgram, lower: &[f64], upper: &[f64]) -> Result<Reduction, Presolved> {
    let nv = program.num_vars();
    let mut lb = lower.to_vec();
    let mut ub = upper.to_vec();
    let mut fixed: Vec<Option<f64>> = vec![None; nv];

    let settle = |j: usize, lb: &mut [f64], ub: &mut [f64], fixed: &mut [Option<f64>]| -> Result<(), Presolved> {
        if lb[j] > ub[j] {
            if lb[j] - ub[j] <= feas_tol(lb[j]) {
                let mid = 0.5 * (lb[j] + ub[j]);
                lb[j] = mid;
                ub[j] = mid;
            } else {
                return Err(Presolved::Infeasible(format!(
                    "bounds of `{}` cross: [{}, {}]",
                    program.variables[j].name, lb[j], ub[j]
                )));
            }
        }
        if fixed[j].is_none() && lb[j] == ub[j] {
            fixed[j] = Some(lb[j]);
        }
        Ok(())
    };
    for j in 0..nv {
        settle(j, &mut lb, &mut ub, &mut fixed)?;
    }

    let mut rows: Vec<WorkRow> = program
        .rows
        .iter()
        .map(|r| WorkRow {
            terms: r.expr.terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            sense: r.sense,
            rhs: r.rhs,
            label: format!("{}[{}]", r.label, r.element),
        })
        .collect();
    let mut active = vec![true; rows.len()];

    loop {
        let mut changed = false;
        for (ri, row) in rows.iter_mut().enumerate() {
            if !active[ri] {
                continue;
            }
            let mut rhs = row.rhs;
            let mut kept = Vec::with_capacity(row.terms.len());
            for &(j, c) in &row.terms {
                match fixed[j] {
                    Some(v) => rhs -= c * v,
                    None => kept.push((j, c)),
                }
            }
            if kept.len() != row.terms.len() {
                row.terms = kept;
                row.rhs = rhs;
            }
            match row.terms.len() {
                0 => {
                    let tol = feas_tol(row.rhs);
                    let ok = match row.sense {
                        Sense::Le => 0.0 <= row.rhs + tol,
                        Sense::Ge => 0.0 >= row.rhs - tol,
                        Sense::Eq => row.rhs.abs() <= tol,
                    };
                    if !ok {
                        return Err(Presolved::Infeasible(format!("row {} reduces to 0 {:?} {}", row.label, row.sense, row.rhs)));
                    }
                    active[ri] = false;
                    changed = true;
                }
                1 => {
                    let (j, a) = row.terms[0];
                    let v = row.rhs / a;
                    let (upper_side, lower_side) = match (row.sense, a > 0.0) {
                        (Sense::Eq, _) => (true, true),
                        (Sense::Le, true) | (Sense::Ge, false) => (true, false),
                        (Sense::Le, false) | (Sense::Ge, true) => (false, true),
                    };
                    if upper_side && v < ub[j] {
                        ub[j] = v;
                    }
                    if lower_side && v > lb[j] {
                        lb[j] = v;
                    }
                    settle(j, &mut lb, &mut ub, &mut fixed)?;
                    active[ri] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    // Merge rows over identical supports with proportional coefficients.
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (ri, row) in rows.iter_mut().enumerate() {
        if !active[ri] {
            continue;
        }
        row.terms.sort_by_key(|&(j, _)| j);
        let lead = row.terms[0].1;
        for t in row.terms.iter_mut() {
            t.1 /= lead;
        }
        row.rhs /= lead;
        if lead < 0.0 {
            row.sense = match row.sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        groups.entry(row.terms.iter().map(|&(j, _)| j).collect()).or_default().push(ri);
    }
    // (coefficients, lo, hi)
    let mut merged: Vec<(SparseRow, f64, f64)> = Vec::new();
    for (_, members) in groups {
        let mut classes: Vec<(SparseRow, f64, f64)> = Vec::new();
        for ri in members {
            let row = &rows[ri];
            let (lo, hi) = match row.sense {
                Sense::Le => (f64::NEG_INFINITY, row.rhs),
                Sense::Ge => (row.rhs, f64::INFINITY),
                Sense::Eq => (row.rhs, row.rhs),
            };
            let same = classes.iter_mut().find(|(t, _, _)| {
                t.iter().zip(&row.terms).all(|(a, b)| (a.1 - b.1).abs() <= 1e-12 * a.1.abs().max(1.0))
            });
            match same {
                Some(class) => {
                    class.1 = class.1.max(lo);
                    class.2 = class.2.min(hi);
                }
                None => classes.push((row.terms.clone(), lo, hi)),
            }
        }
        for (t, lo, hi) in classes {
            if lo > hi {
                if lo - hi > feas_tol(lo.max(hi.abs())) {
                    return Err(Presolved::Infeasible(format!("row interval [{lo}, {hi}] is empty")));
                }
                let mid = 0.5 * (lo + hi);
                merged.push((t, mid, mid));
            } else if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 * hi.abs().max(1.0) {
                merged.push((t, hi, hi));
            } else {
                merged.push((t, lo, hi));
            }
        }
    }

    // Cone blocks in standard orientation with fixed values substituted.
    struct Block {
        rows: Vec<(SparseRow, f64)>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for cc in &program.cones {
        let (head, rest) = cc.cone.standard_parts();
        let mut out = Vec::with_capacity(rest.len() + 1);
        let mut all_const = true;
        let mut values = Vec::with_capacity(rest.len() + 1);
        for e in std::iter::once(&head).chain(rest.iter()) {
            let mut k = e.constant;
            let mut terms = Vec::new();
            for &(v, c) in &e.terms {
                match fixed[v.0] {
                    Some(val) => k += c * val,
                    None => terms.push((v.0, c)),
                }
            }
            all_const &= terms.is_empty();
            values.push(k);
            // s = h − G x with s = e(x) = terms·x + k  ⇒  G = −terms, h = k.
            out.push((terms.into_iter().map(|(j, c)| (j, -c)).collect::<SparseRow>(), k));
        }
        if all_const {
            let norm = values[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm - values[0] > feas_tol(values[0]) {
                return Err(Presolved::Infeasible(format!("cone {}[{}] violated by fixed values", cc.label, cc.element)));
            }
            continue;
        }
        blocks.push(Block { rows: out });
    }

    // Objective in minimize form.
    let obj_sign = match program.objective.sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    let mut cfull = vec![0.0; nv];
    for &(v, c) in &program.objective.linear.terms {
        cfull[v.0] += c;
    }

    // Columns used by some remaining constraint; unused ones sit at their best bound.
    let mut used = vec![false; nv];
    for (t, _, _) in &merged {
        for &(j, _) in t {
            used[j] = true;
        }
    }
    for b in &blocks {
        for (t, _) in &b.rows {
            for &(j, _) in t {
                used[j] = true;
            }
        }
    }
    for j in 0..nv {
        if fixed[j].is_some() || used[j] {
            continue;
        }
        let c = obj_sign * cfull[j];
        let choice = if c > 0.0 {
            lb[j]
        } else if c < 0.0 {
            ub[j]
        } else {
            0.0_f64.clamp(lb[j], ub[j])
        };
        if choice.is_finite() {
            fixed[j] = Some(choice);
        }
    }

    let mut col_of = vec![None; nv];
    let mut n = 0;
    for j in 0..nv {
        if fixed[j].is_none() {
            col_of[j] = Some(n);
            n += 1;
        }
    }
    let remap = |t: &SparseRow| -> SparseRow { t.iter().map(|&(j, c)| (col_of[j].expect("free column"), c)).collect() };

    let mut c = vec![0.0; n];
    for j in 0..nv {
        if let Some(k) = col_of[j] {
            c[k] = obj_sign * cfull[j];
        }
    }

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut g = Vec::new();
    let mut h = Vec::new();
    for (t, lo, hi) in &merged {
        let t = remap(t);
        if lo == hi {
            a.push(t);
            b.push(*hi);
            continue;
        }
        if hi.is_finite() {
            g.push(t.clone());
            h.push(*hi);
        }
        if lo.is_finite() {
            g.push(t.iter().map(|&(k, v)| (k, -v)).collect());
            h.push(-lo);
        }
    }
    for j in 0..nv {
        if let Some(k) = col_of[j] {
            if lb[j].is_finite() {
                g.push(vec![(k, -1.0)]);
                h.push(-lb[j]);
            }
            if ub[j].is_finite() {
                g.push(vec![(k, 1.0)]);
                h.push(ub[j]);
            }
        }
    }
    let lp_dim = g.len();
    let mut soc_dims = Vec::new();
    for blk in &blocks {
        soc_dims.push(blk.rows.len());
        for (t, k) in &blk.rows {
            g.push(remap(t));
            h.push(*k);
        }
    }

    let a_orig = a.clone();
    let b_orig = b.clone();

    // Ruiz equilibration.
    let mut col_scale = vec![1.0; n];
    let mut eq_scale = vec![1.0; a.len()];
    let mut g_scale = vec![1.0; g.len()];
    for _ in 0..12 {
        let mut cmax = vec![0.0_f64; n];
        for (r, rs) in a.iter_mut().zip(eq_scale.iter_mut()) {
            let m = r.iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
            if m > 0.0 {
                let s = 1.0 / m.sqrt();
                *rs *= s;
                r.iter_mut().for_each(|e| e.1 *= s);
            }
        }
        for i in 0..lp_dim {
            let m = g[i].iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
            if m > 0.0 {
                let s = 1.0 / m.sqrt();
                g_scale[i] *= s;
                g[i].iter_mut().for_each(|e| e.1 *= s);
            }
        }
        let mut off = lp_dim;
        for &d in &soc_dims {
            let m = g[off..off + d].iter().flatten().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
            if m > 0.0 {
                let s = 1.0 / m.sqrt();
                for i in off..off + d {
                    g_scale[i] *= s;
                    g[i].iter_mut().for_each(|e| e.1 *= s);
                }
            }
            off += d;
        }
        for r in a.iter().chain(g.iter()) {
            for &(k, v) in r {
                cmax[k] = cmax[k].max(v.abs());
            }
        }
        let mut worst = 0.0_f64;
        let cs: Vec<f64> = cmax
            .iter()
            .map(|&m| {
                if m > 0.0 {
                    worst = worst.max((1.0 - m).abs());
                    1.0 / m.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for r in a.iter_mut().chain(g.iter_mut()) {
            for e in r.iter_mut() {
                e.1 *= cs[e.0];
            }
        }
        for k in 0..n {
            col_scale[k] *= cs[k];
        }
        if worst < 1e-3 {
            break;
        }
    }
    for (bi, s) in b.iter_mut().zip(&eq_scale) {
        *bi *= s;
    }
    for (hi, s) in h.iter_mut().zip(&g_scale) {
        *hi *= s;
    }
    for k in 0..n {
        c[k] *= col_scale[k];
    }
    let cmax = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let obj_scale = if cmax > 0.0 { cmax } else { 1.0 };
    c.iter_mut().for_each(|v| *v /= obj_scale);

    let mut cone_scale = g_scale;
    cone_scale.shrink_to_fit();
    let fixed_vals = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    Ok(Reduction {
        form: StandardForm { n, c, a, b, g, h, lp_dim, soc_dims },
        a_orig,
        b_orig,
        col_of,
        fixed: fixed_vals,
        col_scale,
        eq_scale,
        cone_scale,
        obj_scale,
    })
}
