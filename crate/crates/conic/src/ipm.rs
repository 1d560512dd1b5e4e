//! Primal-dual interior point on the homogeneous self-dual embedding
//!
//! ```text
//!  A'y + G'z + cτ       = 0
//! −Ax + bτ              = 0
//! −Gx + hτ − s          = 0
//! −c'x − b'y − h'z − κ  = 0,   s, z ∈ K,  τ, κ ≥ 0,  s∘z = 0,  τκ = 0
//! ```
//!
//! with Nesterov–Todd scaling and a Mehrotra predictor-corrector. The Newton
//! systems are reduced to `[G'W⁻²G, A'; A, 0]`, factored densely with a small
//! quasi-definite regularization and cleaned up by iterative refinement.

use nalgebra::{DMatrix, DVector};

use crate::cone::{dot, norm, ConeLayout, Scaling};
use crate::presolve::{SparseRow, StandardForm};
use crate::settings::SocpStatus;

#[derive(Clone, Debug)]
pub(crate) struct IpmOutput {
    pub status: SocpStatus,
    /// Unnormalized iterate; divide by `tau` for the solution on `Optimal`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub tau: f64,
    pub iterations: usize,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
}

const REG: f64 = 1e-9;
const REFINE_STEPS: usize = 4;
const STEP_FRACTION: f64 = 0.99;

fn mul(rows: &[SparseRow], x: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
}

fn mul_t(rows: &[SparseRow], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (r, &yi) in rows.iter().zip(y) {
        if yi != 0.0 {
            for &(j, v) in r {
                out[j] += v * yi;
            }
        }
    }
    out
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct Kkt<'a> {
    form: &'a StandardForm,
    layout: &'a ConeLayout,
    h: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    winv2_diag: Vec<f64>,
    winv2_blocks: Vec<Vec<f64>>,
    scaling: Scaling,
}

impl<'a> Kkt<'a> {
    fn new(form: &'a StandardForm, layout: &'a ConeLayout, scaling: &Scaling) -> Option<Self> {
        let n = form.n;
        let p = form.a.len();
        let (winv2_diag, winv2_blocks) = scaling.w_inv_sq_blocks(layout);
        let mut h = DMatrix::<f64>::zeros(n, n);
        for (i, row) in form.g[..layout.lp].iter().enumerate() {
            let d = winv2_diag[i];
            for &(j, a) in row {
                for &(k, b) in row {
                    h[(j, k)] += d * a * b;
                }
            }
        }
        for ((o, d), m) in layout.blocks().zip(&winv2_blocks) {
            for r in 0..d {
                for c in 0..d {
                    let w = m[r * d + c];
                    if w == 0.0 {
                        continue;
                    }
                    for &(j, a) in &form.g[o + r] {
                        for &(k, b) in &form.g[o + c] {
                            h[(j, k)] += w * a * b;
                        }
                    }
                }
            }
        }
        let mut k = DMatrix::<f64>::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        for i in 0..n {
            k[(i, i)] += REG;
        }
        for (i, row) in form.a.iter().enumerate() {
            for &(j, v) in row {
                k[(n + i, j)] = v;
                k[(j, n + i)] = v;
            }
            k[(n + i, n + i)] = -REG;
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lu = k.lu();
        Some(Self { form, layout, h, lu, winv2_diag, winv2_blocks, scaling: scaling.clone() })
    }

    fn apply_winv2(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..self.layout.lp {
            out[i] = self.winv2_diag[i] * v[i];
        }
        for ((o, d), m) in self.layout.blocks().zip(&self.winv2_blocks) {
            for r in 0..d {
                out[o + r] = (0..d).map(|c| m[r * d + c] * v[o + c]).sum();
            }
        }
        out
    }

    /// One pass through the reduced system `[H, A'; A, 0]`.
    fn reduced_solve(&self, r1: &[f64], r2: &[f64], r3: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.form.n;
        let p = self.form.a.len();
        let w3 = self.apply_winv2(r3);
        let gw3 = mul_t(&self.form.g, &w3, n);
        let mut rhs = DVector::<f64>::zeros(n + p);
        for i in 0..n {
            rhs[i] = r1[i] + gw3[i];
        }
        for i in 0..p {
            rhs[n + i] = r2[i];
        }
        let mut sol = self.lu.solve(&rhs)?;
        // Remove the regularization error on the reduced system.
        for _ in 0..2 {
            let dx = sol.rows(0, n).into_owned();
            let dy: Vec<f64> = sol.rows(n, p).iter().copied().collect();
            let hx = &self.h * &dx;
            let aty = mul_t(&self.form.a, &dy, n);
            let ax = mul(&self.form.a, dx.as_slice());
            let mut res = DVector::<f64>::zeros(n + p);
            for i in 0..n {
                res[i] = rhs[i] - hx[i] - aty[i];
            }
            for i in 0..p {
                res[n + i] = rhs[n + i] - ax[i];
            }
            sol += self.lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let dy: Vec<f64> = sol.rows(n, p).iter().copied().collect();
        let mut gx = mul(&self.form.g, &dx);
        axpy(-1.0, r3, &mut gx);
        let dz = self.apply_winv2(&gx);
        Some((dx, dy, dz))
    }

    /// Solve `A'dy + G'dz = r1, A dx = r2, G dx − W² dz = r3`, refining on the
    /// unreduced residuals so that the dual rows are met to working precision
    /// even when `W` is badly conditioned.
    fn solve(&self, r1: &[f64], r2: &[f64], r3: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.form.n;
        let (mut dx, mut dy, mut dz) = self.reduced_solve(r1, r2, r3)?;
        let scale = 1.0 + norm(r1).max(norm(r2)).max(norm(r3));
        for _ in 0..REFINE_STEPS {
            let aty = mul_t(&self.form.a, &dy, n);
            let gtz = mul_t(&self.form.g, &dz, n);
            let e1: Vec<f64> = (0..n).map(|i| r1[i] - aty[i] - gtz[i]).collect();
            let ax = mul(&self.form.a, &dx);
            let e2: Vec<f64> = r2.iter().zip(&ax).map(|(a, b)| a - b).collect();
            let gx = mul(&self.form.g, &dx);
            let w2z = self.scaling.w(self.layout, &self.scaling.w(self.layout, &dz));
            let e3: Vec<f64> = (0..r3.len()).map(|i| r3[i] - gx[i] + w2z[i]).collect();
            let err = norm(&e1).max(norm(&e2)).max(norm(&e3));
            if err <= 1e-15 * scale {
                break;
            }
            let (cx, cy, cz) = self.reduced_solve(&e1, &e2, &e3)?;
            axpy(1.0, &cx, &mut dx);
            axpy(1.0, &cy, &mut dy);
            axpy(1.0, &cz, &mut dz);
        }
        Some((dx, dy, dz))
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

pub(crate) fn solve(form: &StandardForm, tol: f64, accept_tol: f64, max_iter: usize) -> IpmOutput {
    let n = form.n;
    let p = form.a.len();
    let m = form.g.len();
    let layout = ConeLayout { lp: form.lp_dim, soc: form.soc_dims.clone() };
    let e = layout.unit();
    let degree = layout.degree() as f64;

    let fail = |status, iterations| IpmOutput {
        status,
        x: vec![0.0; n],
        y: vec![0.0; p],
        z: vec![0.0; m],
        tau: 1.0,
        iterations,
        pres: f64::INFINITY,
        dres: f64::INFINITY,
        gap: f64::INFINITY,
    };

    // Initial point from two least-squares problems with W = I.
    let ident = match Scaling::new(&layout, &e, &e) {
        Some(s) => s,
        None => return fail(SocpStatus::NumericalFailure, 0),
    };
    let kkt0 = match Kkt::new(form, &layout, &ident) {
        Some(k) => k,
        None => return fail(SocpStatus::NumericalFailure, 0),
    };
    let Some((mut x, _, zp)) = kkt0.solve(&vec![0.0; n], &form.b, &form.h) else {
        return fail(SocpStatus::NumericalFailure, 0);
    };
    let mut s: Vec<f64> = zp.iter().map(|v| -v).collect();
    let neg_c: Vec<f64> = form.c.iter().map(|v| -v).collect();
    let Some((_, mut y, mut z)) = kkt0.solve(&neg_c, &vec![0.0; p], &vec![0.0; m]) else {
        return fail(SocpStatus::NumericalFailure, 0);
    };
    let shift = |v: &mut Vec<f64>| {
        let me = layout.min_eig(v);
        if me < 1.0 {
            axpy(1.0 - me, &e, v);
        }
    };
    shift(&mut s);
    shift(&mut z);
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let bnorm = 1.0 + norm(&form.b);
    let hnorm = 1.0 + norm(&form.h);
    let cnorm = 1.0 + norm(&form.c);

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(f64, IpmOutput)> = None;
    let mut stalls = 0;
    for iter in 0..=max_iter {
        // Residuals.
        let aty = mul_t(&form.a, &y, n);
        let gtz = mul_t(&form.g, &z, n);
        let ax = mul(&form.a, &x);
        let gx = mul(&form.g, &x);
        let r1: Vec<f64> = (0..n).map(|i| aty[i] + gtz[i] + form.c[i] * tau).collect();
        let r2: Vec<f64> = (0..p).map(|i| -ax[i] + form.b[i] * tau).collect();
        let r3: Vec<f64> = (0..m).map(|i| -gx[i] + form.h[i] * tau - s[i]).collect();
        let cx = dot(&form.c, &x);
        let by = dot(&form.b, &y);
        let hz = dot(&form.h, &z);
        let r4 = -cx - by - hz - kappa;

        let pres = (norm(&r2) / bnorm).max(norm(&r3) / hnorm) / tau;
        let dres = norm(&r1) / cnorm / tau;
        let sz = dot(&s, &z);
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap_abs = sz / (tau * tau);
        let gap = gap_abs / pcost.abs().min(dcost.abs()).max(1.0);
        last = (pres, dres, gap);

        let out = |status, x: &[f64], y: &[f64], z: &[f64], tau: f64| IpmOutput {
            status,
            x: x.to_vec(),
            y: y.to_vec(),
            z: z.to_vec(),
            tau,
            iterations: iter,
            pres,
            dres,
            gap,
        };

        if pres <= tol && dres <= tol && gap <= tol {
            return out(SocpStatus::Optimal, &x, &y, &z, tau);
        }
        let hz_by = by + hz;
        if hz_by < 0.0 && norm(&aty.iter().zip(&gtz).map(|(a, b)| a + b).collect::<Vec<_>>()) <= tol * -hz_by {
            return out(SocpStatus::PrimalInfeasible, &x, &y, &z, tau);
        }
        if cx < 0.0 {
            let gxs: Vec<f64> = gx.iter().zip(&s).map(|(a, b)| a + b).collect();
            if norm(&ax).max(norm(&gxs)) <= tol * -cx {
                return out(SocpStatus::DualInfeasible, &x, &y, &z, tau);
            }
        }
        // Late iterations can lose accuracy once W is badly conditioned; keep
        // the best acceptable iterate and fall back to it.
        let metric = pres.max(dres).max(gap);
        if metric <= accept_tol && best.as_ref().map_or(true, |(m, _)| metric < *m) {
            best = Some((metric, out(SocpStatus::Optimal, &x, &y, &z, tau)));
        }
        if let Some((m, b)) = &best {
            if metric > 1e3 * m {
                return b.clone();
            }
        }
        let stuck = |_x: &[f64], _y: &[f64], _z: &[f64], _tau: f64, status| match &best {
            Some((_, b)) => b.clone(),
            None => out(status, &x, &y, &z, tau),
        };
        if iter == max_iter {
            return stuck(&x, &y, &z, tau, SocpStatus::MaxIterations);
        }

        let Some(scaling) = Scaling::new(&layout, &s, &z) else {
            return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
        };
        let lambda = scaling.w(&layout, &z);
        let mu = (sz + tau * kappa) / (degree + 1.0);
        let Some(kkt) = Kkt::new(form, &layout, &scaling) else {
            return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
        };
        let Some((vx, vy, vz)) = kkt.solve(&neg_c, &form.b, &form.h) else {
            return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
        };
        let denom_base = kappa / tau - dot(&form.c, &vx) - dot(&form.b, &vy) - dot(&form.h, &vz);

        let direction = |eta: f64, d_s: &[f64], d_k: f64| -> Option<Direction> {
            let lds = layout.inv_product(&lambda, d_s);
            let wlds = scaling.w(&layout, &lds);
            let u1: Vec<f64> = r1.iter().map(|v| -eta * v).collect();
            let u2: Vec<f64> = r2.iter().map(|v| eta * v).collect();
            let u3: Vec<f64> = r3.iter().zip(&wlds).map(|(v, w)| eta * v - w).collect();
            let (ux, uy, uz) = kkt.solve(&u1, &u2, &u3)?;
            let num = -eta * r4 + d_k / tau + dot(&form.c, &ux) + dot(&form.b, &uy) + dot(&form.h, &uz);
            let dtau = num / denom_base;
            if !dtau.is_finite() {
                return None;
            }
            let dx: Vec<f64> = ux.iter().zip(&vx).map(|(u, v)| u + dtau * v).collect();
            let dy: Vec<f64> = uy.iter().zip(&vy).map(|(u, v)| u + dtau * v).collect();
            let dz: Vec<f64> = uz.iter().zip(&vz).map(|(u, v)| u + dtau * v).collect();
            // G dx + ds = ηR3 + h dτ, taken from the linear rows rather than the
            // scaled complementarity so that residuals contract exactly.
            let gdx = mul(&form.g, &dx);
            let ds: Vec<f64> = (0..m).map(|i| eta * r3[i] + form.h[i] * dtau - gdx[i]).collect();
            let dkappa = (d_k - kappa * dtau) / tau;
            Some(Direction { dx, dy, dz, ds, dtau, dkappa })
        };
        let step_len = |d: &Direction| -> f64 {
            let mut a = layout.max_step(&s, &d.ds).min(layout.max_step(&z, &d.dz));
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        // Predictor.
        let ll = layout.product(&lambda, &lambda);
        let ds_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let Some(aff) = direction(1.0, &ds_aff, -kappa * tau) else {
            return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
        };
        let alpha_aff = step_len(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let winv_ds = scaling.w_inv(&layout, &aff.ds);
        let w_dz = scaling.w(&layout, &aff.dz);
        let cross = layout.product(&winv_ds, &w_dz);
        let d_s: Vec<f64> = (0..m).map(|i| -ll[i] - cross[i] + sigma * mu * e[i]).collect();
        let d_k = -kappa * tau - aff.dkappa * aff.dtau + sigma * mu;
        let Some(dir) = direction(1.0 - sigma, &d_s, d_k) else {
            return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
        };
        let alpha = (STEP_FRACTION * step_len(&dir)).min(1.0);
        if !(alpha > 1e-12) {
            stalls += 1;
            if stalls > 2 {
                return stuck(&x, &y, &z, tau, SocpStatus::NumericalFailure);
            }
            continue;
        }
        axpy(alpha, &dir.dx, &mut x);
        axpy(alpha, &dir.dy, &mut y);
        axpy(alpha, &dir.dz, &mut z);
        axpy(alpha, &dir.ds, &mut s);
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        if !(tau > 0.0 && kappa > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return fail(SocpStatus::NumericalFailure, iter);
        }
        // Renormalize the embedding so that iterates stay O(1).
        let scale = tau.max(kappa);
        if scale > 1e8 || scale < 1e-8 {
            for v in x.iter_mut().chain(y.iter_mut()).chain(z.iter_mut()).chain(s.iter_mut()) {
                *v /= scale;
            }
            tau /= scale;
            kappa /= scale;
        }
    }
    let (pres, dres, gap) = last;
    IpmOutput { status: SocpStatus::MaxIterations, x, y, z, tau, iterations: max_iter, pres, dres, gap }
}
