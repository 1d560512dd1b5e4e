//! Jordan algebra and Nesterov–Todd scaling on `R₊ˡ × Q^{q₁} × …`.
//!
//! Vectors are laid out as the LP part followed by each cone block; every
//! routine walks the same layout.

#[derive(Clone, Debug)]
pub(crate) struct ConeLayout {
    pub lp: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.lp + self.soc.iter().sum::<usize>()
    }

    pub fn degree(&self) -> usize {
        self.lp + self.soc.len()
    }

    /// (offset, dim) of each second-order block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut off = self.lp;
        self.soc.iter().map(move |&d| {
            let o = off;
            off += d;
            (o, d)
        })
    }

    /// Identity element `e`.
    pub fn unit(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[..self.lp].iter_mut().for_each(|v| *v = 1.0);
        for (o, _) in self.blocks() {
            e[o] = 1.0;
        }
        e
    }

    /// Smallest eigenvalue over all blocks (`s₀ − ‖s₁‖` for cones).
    pub fn min_eig(&self, s: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &v in &s[..self.lp] {
            m = m.min(v);
        }
        for (o, d) in self.blocks() {
            let nrm = norm(&s[o + 1..o + d]);
            m = m.min(s[o] - nrm);
        }
        m
    }

    /// `u ∘ v`.
    pub fn product(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for i in 0..self.lp {
            out[i] = u[i] * v[i];
        }
        for (o, d) in self.blocks() {
            out[o] = dot(&u[o..o + d], &v[o..o + d]);
            for i in 1..d {
                out[o + i] = u[o] * v[o + i] + v[o] * u[o + i];
            }
        }
        out
    }

    /// `x` with `λ ∘ x = v`.
    pub fn inv_product(&self, lambda: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..self.lp {
            out[i] = v[i] / lambda[i];
        }
        for (o, d) in self.blocks() {
            let l0 = lambda[o];
            let l1 = &lambda[o + 1..o + d];
            let v1 = &v[o + 1..o + d];
            let det = l0 * l0 - dot(l1, l1);
            let x0 = (l0 * v[o] - dot(l1, v1)) / det;
            out[o] = x0;
            for i in 1..d {
                out[o + i] = (v[o + i] - x0 * lambda[o + i]) / l0;
            }
        }
        out
    }

    /// Largest `α ≥ 0` with `x + α·dx` in the cone (may be `∞`).
    pub fn max_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.lp {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
        for (o, d) in self.blocks() {
            let a = dx[o] * dx[o] - dot(&dx[o + 1..o + d], &dx[o + 1..o + d]);
            let b = x[o] * dx[o] - dot(&x[o + 1..o + d], &dx[o + 1..o + d]);
            let c = (x[o] * x[o] - dot(&x[o + 1..o + d], &x[o + 1..o + d])).max(0.0);
            let disc = b * b - a * c;
            if (a >= 0.0 && b >= 0.0) || (a > 0.0 && disc < 0.0) {
                continue;
            }
            let denom = -b + disc.max(0.0).sqrt();
            if denom > 0.0 {
                alpha = alpha.min(c / denom);
            } else {
                alpha = 0.0;
            }
        }
        alpha.max(0.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
struct SocScale {
    eta: f64,
    /// Normalized scaling point `w̄` with `w̄₀² − ‖w̄₁‖² = 1`.
    w: Vec<f64>,
}

/// Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`.
#[derive(Clone, Debug)]
pub(crate) struct Scaling {
    lp: Vec<f64>,
    soc: Vec<SocScale>,
}

impl Scaling {
    pub fn new(layout: &ConeLayout, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut lp = Vec::with_capacity(layout.lp);
        for i in 0..layout.lp {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            lp.push((s[i] / z[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(layout.soc.len());
        for (o, d) in layout.blocks() {
            let sb = &s[o..o + d];
            let zb = &z[o..o + d];
            let sres = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
            let zres = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
            if !(sres > 0.0 && zres > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return None;
            }
            let sn = sres.sqrt();
            let zn = zres.sqrt();
            let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
            let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
            let mut w = vec![0.0; d];
            w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for i in 1..d {
                w[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
            }
            soc.push(SocScale { eta: (sn / zn).sqrt(), w });
        }
        Some(Self { lp, soc })
    }

    fn apply(&self, layout: &ConeLayout, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..layout.lp {
            out[i] = if inverse { v[i] / self.lp[i] } else { v[i] * self.lp[i] };
        }
        for ((o, d), sc) in layout.blocks().zip(&self.soc) {
            let w = &sc.w;
            let vb = &v[o..o + d];
            let sign = if inverse { -1.0 } else { 1.0 };
            let w1v1 = dot(&w[1..], &vb[1..]);
            let scale = if inverse { 1.0 / sc.eta } else { sc.eta };
            out[o] = scale * (w[0] * vb[0] + sign * w1v1);
            let coef = sign * vb[0] + w1v1 / (1.0 + w[0]);
            for i in 1..d {
                out[o + i] = scale * (vb[i] + coef * w[i]);
            }
        }
        out
    }

    pub fn w(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        self.apply(layout, v, false)
    }

    pub fn w_inv(&self, layout: &ConeLayout, v: &[f64]) -> Vec<f64> {
        self.apply(layout, v, true)
    }

    /// `W⁻²` as LP diagonal plus one dense block per cone.
    pub fn w_inv_sq_blocks(&self, layout: &ConeLayout) -> (Vec<f64>, Vec<Vec<f64>>) {
        let diag = self.lp.iter().map(|w| 1.0 / (w * w)).collect();
        let mut blocks = Vec::with_capacity(self.soc.len());
        for ((o, d), _) in layout.blocks().zip(&self.soc) {
            let mut m = vec![0.0; d * d];
            for col in 0..d {
                let mut e = vec![0.0; layout.dim()];
                e[o + col] = 1.0;
                let once = self.w_inv(layout, &e);
                let twice = self.w_inv(layout, &once);
                for row in 0..d {
                    m[row * d + col] = twice[o + row];
                }
            }
            blocks.push(m);
        }
        (diag, blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ConeLayout {
        ConeLayout { lp: 2, soc: vec![3, 2] }
    }

    fn interior(raw: &[f64]) -> Vec<f64> {
        // Push a raw vector strictly inside by lifting heads.
        let l = layout();
        let mut v = raw.to_vec();
        for i in 0..l.lp {
            v[i] = v[i].abs() + 0.1;
        }
        for (o, d) in l.blocks() {
            v[o] = norm(&v[o + 1..o + d]) + raw[o].abs() + 0.1;
        }
        v
    }

    proptest! {
        #[test]
        fn scaling_maps_z_and_s_to_same_point(raw_s in proptest::collection::vec(-3.0..3.0f64, 7),
                                              raw_z in proptest::collection::vec(-3.0..3.0f64, 7)) {
            let l = layout();
            let s = interior(&raw_s);
            let z = interior(&raw_z);
            let w = Scaling::new(&l, &s, &z).unwrap();
            let wz = w.w(&l, &z);
            let winv_s = w.w_inv(&l, &s);
            for (a, b) in wz.iter().zip(&winv_s) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
            let back = w.w(&l, &w.w_inv(&l, &s));
            for (a, b) in back.iter().zip(&s) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn inverse_product_inverts_product(raw_l in proptest::collection::vec(-3.0..3.0f64, 7),
                                           v in proptest::collection::vec(-3.0..3.0f64, 7)) {
            let l = layout();
            let lam = interior(&raw_l);
            let x = l.inv_product(&lam, &v);
            let back = l.product(&lam, &x);
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn max_step_lands_on_boundary(raw in proptest::collection::vec(-3.0..3.0f64, 7),
                                      dir in proptest::collection::vec(-3.0..3.0f64, 7)) {
            let l = layout();
            let x = interior(&raw);
            let a = l.max_step(&x, &dir);
            if a.is_finite() {
                let at: Vec<f64> = x.iter().zip(&dir).map(|(p, q)| p + a * q).collect();
                prop_assert!(l.min_eig(&at).abs() <= 1e-7 * (1.0 + norm(&at)));
            } else {
                let far: Vec<f64> = x.iter().zip(&dir).map(|(p, q)| p + 1e6 * q).collect();
                prop_assert!(l.min_eig(&far) >= -1e-6 * norm(&far));
            }
        }
    }
}
