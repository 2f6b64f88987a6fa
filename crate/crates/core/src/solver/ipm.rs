//! Homogeneous self-dual interior-point method with Mehrotra
//! predictor-corrector steps and Nesterov-Todd scaling.
//!
//! Standard form: `min c'x s.t. Ax = b, Gx + s = h, s in K`, dual
//! `max -b'y - h'z s.t. A'y + G'z + c = 0, z in K`.

use nalgebra::{DMatrix, DVector};

use super::cones::{ConeLayout, NtScaling};
use super::compile::StandardForm;

const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 10;
const REGULARIZATION: f64 = 1e-11;
/// Certificate residual accepted for infeasibility and unboundedness.
const INFEASIBILITY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub feas: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub max_iter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterStat {
    pub iteration: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

pub struct IpmResult {
    pub outcome: Outcome,
    /// For `Optimal` the solution divided by tau; for certificates the
    /// normalized ray.
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub s: DVector<f64>,
    pub iterations: usize,
    pub certificate_residual: Option<f64>,
    pub stats: Vec<IterStat>,
}

/// Factored KKT system in NT-scaled form,
/// `[0 A' Gs'; A 0 0; Gs 0 -I] [dx; dy; dzs] = [bx; by; bzs]` with
/// `Gs = W^{-1} G` and `dzs = W dz`.
struct Kkt<'a> {
    sf: &'a StandardForm,
    gs: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Kkt<'a> {
    fn new(sf: &'a StandardForm, w_inv: &DMatrix<f64>) -> Option<Self> {
        let n = sf.c.len();
        let p = sf.b.len();
        let gs = w_inv * &sf.g;
        let h = gs.tr_mul(&gs);
        // The data are equilibrated, so an absolute shift is enough to keep
        // the factorization nonsingular; refinement removes its effect.
        let delta = REGULARIZATION;
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        for i in 0..n {
            k[(i, i)] += delta;
        }
        k.view_mut((0, n), (n, p)).copy_from(&sf.a.transpose());
        k.view_mut((n, 0), (p, n)).copy_from(&sf.a);
        for i in 0..p {
            k[(n + i, n + i)] = -delta;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { sf, gs, lu })
    }

    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut dx, mut dy, mut dz) = self.solve_reduced(bx, by, bz)?;
        let target = 1e-14 * bx.amax().max(by.amax()).max(bz.amax()).max(1.0);
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let rx = bx - (self.sf.a.tr_mul(&dy) + self.gs.tr_mul(&dz));
            let ry = by - &self.sf.a * &dx;
            let rz = bz - (&self.gs * &dx - &dz);
            let err = rx.amax().max(ry.amax()).max(rz.amax());
            if err <= target || err >= 0.5 * last {
                break;
            }
            last = err;
            let (cx, cy, cz) = self.solve_reduced(&rx, &ry, &rz)?;
            dx += cx;
            dy += cy;
            dz += cz;
        }
        Some((dx, dy, dz))
    }

    fn solve_reduced(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = bx.len();
        let p = by.len();
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(bx + self.gs.tr_mul(bz)));
        rhs.rows_mut(n, p).copy_from(by);
        let sol = self.lu.solve(&rhs)?;
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, p).into_owned();
        let dz = &self.gs * &dx - bz;
        if dx.iter().chain(dy.iter()).chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy, dz))
    }
}

/// Search direction; `dzs`/`dss` are the scaled `W dz` and `W^{-1} ds`.
struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dzs: DVector<f64>,
    dss: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

pub fn solve(sf: &StandardForm, tol: &Tolerances) -> IpmResult {
    let cones = &sf.cones;
    let n = sf.c.len();
    let p = sf.b.len();
    let mg = sf.h.len();
    let degree = cones.degree() as f64;
    let e = cones.identity();

    let stalled = |it, stats| IpmResult {
        outcome: Outcome::Stalled,
        x: DVector::zeros(n),
        y: DVector::zeros(p),
        z: DVector::zeros(mg),
        s: DVector::zeros(mg),
        iterations: it,
        certificate_residual: None,
        stats,
    };

    // Initial point from the W = I system.
    let eye = DMatrix::identity(mg, mg);
    let Some(kkt) = Kkt::new(sf, &eye) else {
        return stalled(0, Vec::new());
    };
    let Some((mut x, _, zp)) = kkt.solve(&DVector::zeros(n), &sf.b, &sf.h) else {
        return stalled(0, Vec::new());
    };
    let mut s = -zp;
    let Some((_, mut y, mut z)) = kkt.solve(&-&sf.c, &DVector::zeros(p), &DVector::zeros(mg)) else {
        return stalled(0, Vec::new());
    };
    shift_interior(cones, &mut s, &e);
    shift_interior(cones, &mut z, &e);
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let norm_b = sf.b.amax().max(sf.h.amax()).max(1.0);
    let norm_c = sf.c.amax().max(1.0);
    let mut stats = Vec::new();

    for it in 0..=tol.max_iter {
        // Residuals of the embedding.
        let rx = sf.a.tr_mul(&y) + sf.g.tr_mul(&z) + &sf.c * tau;
        let ry = &sf.b * tau - &sf.a * &x;
        let rz = &s + &sf.g * &x - &sf.h * tau;
        let cx = sf.c.dot(&x);
        let by = sf.b.dot(&y);
        let hz = sf.h.dot(&z);
        let rtau = kappa + cx + by + hz;
        let mu = (s.dot(&z) + tau * kappa) / (degree + 1.0);

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = s.dot(&z) / (tau * tau);
        // Residuals relative to the size of the terms that produce them.
        let ax = &sf.a * &x;
        let gx = &sf.g * &x;
        let aty = sf.a.tr_mul(&y);
        let gtz = sf.g.tr_mul(&z);
        let pres = ry.amax().max(rz.amax()) / tau
            / norm_b.max(ax.amax() / tau).max(gx.amax() / tau).max(s.amax() / tau);
        let dres = rx.amax() / tau / norm_c.max(aty.amax() / tau).max(gtz.amax() / tau);
        let rel_gap = gap / pcost.abs().max(dcost.abs()).max(f64::MIN_POSITIVE);
        if let Some(last) = stats.last_mut() {
            let last: &mut IterStat = last;
            last.pcost = pcost;
            last.dcost = dcost;
            last.gap = gap;
            last.pres = pres;
            last.dres = dres;
            last.tau = tau;
            last.kappa = kappa;
        } else {
            stats.push(IterStat { iteration: 0, pcost, dcost, gap, pres, dres, tau, kappa, step: 0.0 });
        }

        if pres <= tol.feas && dres <= tol.feas && (gap <= tol.abs_gap || rel_gap <= tol.rel_gap) {
            return IpmResult {
                outcome: Outcome::Optimal,
                x: x / tau,
                y: y / tau,
                z: z / tau,
                s: s / tau,
                iterations: it,
                certificate_residual: None,
                stats,
            };
        }
        // Infeasibility certificates.
        if by + hz < 0.0 {
            let scale = -(by + hz);
            let res = (sf.a.tr_mul(&y) + sf.g.tr_mul(&z)).amax() / scale;
            if res <= tol.feas.max(INFEASIBILITY_TOL) {
                return IpmResult {
                    outcome: Outcome::PrimalInfeasible,
                    x: DVector::zeros(n),
                    y: y / scale,
                    z: z / scale,
                    s: DVector::zeros(mg),
                    iterations: it,
                    certificate_residual: Some(res),
                    stats,
                };
            }
        }
        if cx < 0.0 {
            let scale = -cx;
            let res = (&sf.a * &x).amax().max((&sf.g * &x + &s).amax()) / scale;
            if res <= tol.feas.max(INFEASIBILITY_TOL) {
                return IpmResult {
                    outcome: Outcome::DualInfeasible,
                    x: x / scale,
                    y: DVector::zeros(p),
                    z: DVector::zeros(mg),
                    s: s / scale,
                    iterations: it,
                    certificate_residual: Some(res),
                    stats,
                };
            }
        }
        if it == tol.max_iter {
            break;
        }

        let Some(nt) = NtScaling::new(cones, &s, &z) else {
            return stalled(it, stats);
        };
        let Some(kkt) = Kkt::new(sf, &nt.w_inv) else {
            return stalled(it, stats);
        };
        let hs = &nt.w_inv * &sf.h;
        let Some((x2, y2, z2)) = kkt.solve(&-&sf.c, &sf.b, &hs) else {
            return stalled(it, stats);
        };
        let denom_base = sf.c.dot(&x2) + sf.b.dot(&y2) + hs.dot(&z2);
        let lam = &nt.lambda;
        let lam_sq = cones.jordan(lam, lam);
        let rzs = &nt.w_inv * &rz;

        let direction = |eta: f64, ds_target: &DVector<f64>, dk_target: f64| -> Option<Direction> {
            let f1 = &rx * -eta;
            let f2 = &ry * eta;
            let lds = cones.jordan_div(lam, ds_target);
            let f3 = &rzs * -eta - &lds;
            let (x1, y1, z1) = kkt.solve(&f1, &f2, &f3)?;
            let num = -eta * rtau - dk_target / tau - (sf.c.dot(&x1) + sf.b.dot(&y1) + hs.dot(&z1));
            let dtau = num / (denom_base - kappa / tau);
            let dx = x1 + &x2 * dtau;
            let dy = y1 + &y2 * dtau;
            let dzs = z1 + &z2 * dtau;
            // ds from the linearized cone row keeps that residual exact;
            // W^{-1} ds equals lds - dzs up to the solve error.
            let ds = &rz * -eta - &sf.g * &dx + &sf.h * dtau;
            let dss = &nt.w_inv * &ds;
            let dkappa = (dk_target - kappa * dtau) / tau;
            if !dtau.is_finite() || !dkappa.is_finite() {
                return None;
            }
            Some(Direction { dx, dy, dzs, dss, dtau, dkappa })
        };
        let max_step = |d: &Direction| -> f64 {
            // Measured on the iterates themselves so the additive update
            // stays interior even when W is slightly inexact.
            let ds = &nt.w * &d.dss;
            let dz = &nt.w_inv * &d.dzs;
            let mut a = cones.max_step(&s, &ds, 1.0).min(cones.max_step(&z, &dz, 1.0));
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        // Predictor.
        let Some(aff) = direction(1.0, &-&lam_sq, -tau * kappa) else {
            return stalled(it, stats);
        };
        let alpha_aff = max_step(&aff);
        let sigma = (1.0 - alpha_aff).powi(3);
        // Corrector with the second-order term.
        let corr = cones.jordan(&aff.dss, &aff.dzs);
        let ds_target = -&lam_sq - corr + &e * (sigma * mu);
        let dk_target = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
        let Some(d) = direction(1.0 - sigma, &ds_target, dk_target) else {
            return stalled(it, stats);
        };
        let ds = &nt.w * &d.dss;
        let dz = &nt.w_inv * &d.dzs;
        let mut alpha = (STEP_FRACTION * max_step(&d)).min(1.0);
        // Rounding can still put the new point on the boundary; back off
        // until both iterates are strictly interior.
        let (s_new, z_new) = loop {
            if alpha < 1e-12 {
                return stalled(it, stats);
            }
            let s_new = &s + &ds * alpha;
            let z_new = &z + &dz * alpha;
            if cones.interior_shift(&s_new) < 0.0 && cones.interior_shift(&z_new) < 0.0 {
                break (s_new, z_new);
            }
            alpha *= 0.8;
        };
        x += &d.dx * alpha;
        y += &d.dy * alpha;
        s = s_new;
        z = z_new;
        tau += d.dtau * alpha;
        kappa += d.dkappa * alpha;
        stats.push(IterStat {
            iteration: it + 1,
            pcost: f64::NAN,
            dcost: f64::NAN,
            gap: f64::NAN,
            pres: f64::NAN,
            dres: f64::NAN,
            tau,
            kappa,
            step: alpha,
        });
    }
    IpmResult {
        outcome: Outcome::MaxIterations,
        x: x / tau,
        y: y / tau,
        z: z / tau,
        s: s / tau,
        iterations: tol.max_iter,
        certificate_residual: None,
        stats,
    }
}

fn shift_interior(cones: &ConeLayout, u: &mut DVector<f64>, e: &DVector<f64>) {
    let a = cones.interior_shift(u);
    if a >= 0.0 {
        *u += e * (1.0 + a);
    }
}
