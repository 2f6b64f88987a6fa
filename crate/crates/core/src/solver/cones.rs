//! Cone arithmetic for the product of a nonnegative orthant and second-order
//! cones, including Nesterov-Todd scaling.

use nalgebra::{DMatrix, DVector};

/// Row layout of the conic slack: `nonneg` orthant rows first, then one
/// block per second-order cone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeLayout {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// `(start, dim)` of every SOC block.
    pub fn soc_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut start = self.nonneg;
        self.soc.iter().map(move |&d| {
            let s = start;
            start += d;
            (s, d)
        })
    }

    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        e.rows_mut(0, self.nonneg).fill(1.0);
        for (s, _) in self.soc_blocks() {
            e[s] = 1.0;
        }
        e
    }

    /// Smallest `a` such that `u + a e` is in the cone boundary/interior.
    pub fn interior_shift(&self, u: &DVector<f64>) -> f64 {
        let mut a = f64::NEG_INFINITY;
        for i in 0..self.nonneg {
            a = a.max(-u[i]);
        }
        for (s, d) in self.soc_blocks() {
            let tail = u.rows(s + 1, d - 1).norm();
            a = a.max(tail - u[s]);
        }
        a
    }

    /// Jordan product `u o v`.
    pub fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for i in 0..self.nonneg {
            out[i] = u[i] * v[i];
        }
        for (s, d) in self.soc_blocks() {
            let ut = u.rows(s + 1, d - 1);
            let vt = v.rows(s + 1, d - 1);
            out[s] = u[s] * v[s] + ut.dot(&vt);
            for j in 1..d {
                out[s + j] = u[s] * v[s + j] + v[s] * u[s + j];
            }
        }
        out
    }

    /// Solves `lambda o w = d` for `w`.
    pub fn jordan_div(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(d.len());
        for i in 0..self.nonneg {
            out[i] = d[i] / lambda[i];
        }
        for (s, dim) in self.soc_blocks() {
            let l0 = lambda[s];
            let lt = lambda.rows(s + 1, dim - 1);
            let dt = d.rows(s + 1, dim - 1);
            let det = l0 * l0 - lt.norm_squared();
            let w0 = (l0 * d[s] - lt.dot(&dt)) / det;
            out[s] = w0;
            for j in 1..dim {
                out[s + j] = (d[s + j] - w0 * lambda[s + j]) / l0;
            }
        }
        out
    }

    /// Largest step `a` keeping `u + a du` in the cone, capped at `cap`.
    pub fn max_step(&self, u: &DVector<f64>, du: &DVector<f64>, cap: f64) -> f64 {
        let mut a = cap;
        for i in 0..self.nonneg {
            if du[i] < 0.0 {
                a = a.min(-u[i] / du[i]);
            }
        }
        for (s, d) in self.soc_blocks() {
            a = a.min(soc_step(&u.rows(s, d).into_owned(), &du.rows(s, d).into_owned(), cap));
        }
        a.max(0.0)
    }
}

fn soc_step(u: &DVector<f64>, du: &DVector<f64>, cap: f64) -> f64 {
    let d = u.len();
    let ut = u.rows(1, d - 1);
    let dut = du.rows(1, d - 1);
    let qa = du[0] * du[0] - dut.norm_squared();
    let qb = 2.0 * (u[0] * du[0] - ut.dot(&dut));
    let qc = (u[0] * u[0] - ut.norm_squared()).max(0.0);
    let mut a = cap;
    if du[0] < 0.0 {
        a = a.min(-u[0] / du[0]);
    }
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if scale == 0.0 {
        return a;
    }
    if qa.abs() <= 1e-14 * scale {
        if qb < 0.0 {
            a = a.min(-qc / qb);
        }
        return a;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return a;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    let mut roots = [f64::INFINITY; 2];
    if q != 0.0 {
        roots[0] = q / qa;
        roots[1] = qc / q;
    } else {
        roots[0] = 0.0;
    }
    for r in roots {
        if r > 0.0 {
            a = a.min(r);
        }
    }
    a
}

/// Nesterov-Todd scaling `W` with `W z = W^{-1} s = lambda`, stored densely.
pub struct NtScaling {
    pub w: DMatrix<f64>,
    pub w_inv: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl NtScaling {
    pub fn new(layout: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let m = layout.dim();
        let mut w = DMatrix::zeros(m, m);
        let mut w_inv = DMatrix::zeros(m, m);
        for i in 0..layout.nonneg {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            let r = (s[i] / z[i]).sqrt();
            w[(i, i)] = r;
            w_inv[(i, i)] = 1.0 / r;
        }
        for (st, d) in layout.soc_blocks() {
            let sb = s.rows(st, d);
            let zb = z.rows(st, d);
            let (s_tail, z_tail) = (sb.rows(1, d - 1).norm(), zb.rows(1, d - 1).norm());
            let s_det = (sb[0] - s_tail) * (sb[0] + s_tail);
            let z_det = (zb[0] - z_tail) * (zb[0] + z_tail);
            if !(s_det > 0.0 && z_det > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return None;
            }
            let s_n = s_det.sqrt();
            let z_n = z_det.sqrt();
            let sbar = sb / s_n;
            let zbar = zb / z_n;
            let gamma = ((1.0 + sbar.dot(&zbar)) / 2.0).sqrt();
            let mut wbar = DVector::zeros(d);
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for j in 1..d {
                wbar[j] = (sbar[j] - zbar[j]) / (2.0 * gamma);
            }
            let eta = (s_n / z_n).sqrt();
            let w0 = wbar[0];
            for a in 0..d {
                for b in 0..d {
                    let (val, inv) = match (a, b) {
                        (0, 0) => (w0, w0),
                        (0, _) => (wbar[b], -wbar[b]),
                        (_, 0) => (wbar[a], -wbar[a]),
                        _ => {
                            let v = f64::from(u8::from(a == b)) + wbar[a] * wbar[b] / (1.0 + w0);
                            (v, v)
                        }
                    };
                    w[(st + a, st + b)] = eta * val;
                    w_inv[(st + a, st + b)] = inv / eta;
                }
            }
        }
        let lambda = &w * z;
        Some(Self { w, w_inv, lambda })
    }
}
