//! Network model, no-load operating point and the affine/quadratic
//! surrogates used by the scheduler.
//!
//! Injections are stacked as `x = [P; Q]` over a set of buses, in per-unit on
//! the network's `s_base_kva`. Positive values inject power into the feeder.
//! All matrices use the *ordered* bus space: slack first, then the
//! remaining buses in document order.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Tolerance below which eigenvalues of the loss Hessian are clipped.
pub const PSD_CLIP_TOL: f64 = 1e-9;

const PF_TOL: f64 = 1e-10;
const PF_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Peak real demand, kW. Scaled by demand profiles during scheduling.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub p_load_kw: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub q_load_kvar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: String,
    pub to: String,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line-charging susceptance, split equally between both ends.
    #[serde(default)]
    pub b_shunt_pu: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Raw electrical model of a balanced distribution network.
#[derive(Clone, Debug, PartialEq)]
pub struct BusNetwork {
    pub s_base_kva: f64,
    pub slack_voltage: C64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    s_base_kva: f64,
    #[serde(default = "default_slack")]
    slack_voltage_pu: [f64; 2],
    buses: Vec<Bus>,
    branches: Vec<Branch>,
}

fn default_slack() -> [f64; 2] {
    [1.0, 0.0]
}

impl BusNetwork {
    /// Parses and validates the network JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        let net = BusNetwork {
            s_base_kva: doc.s_base_kva,
            slack_voltage: C64::new(doc.slack_voltage_pu[0], doc.slack_voltage_pu[1]),
            buses: doc.buses,
            branches: doc.branches,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            s_base_kva: self.s_base_kva,
            slack_voltage_pu: [self.slack_voltage.re, self.slack_voltage.im],
            buses: self.buses.clone(),
            branches: self.branches.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    /// Checks the structural invariants: a single slack bus, unique ids,
    /// nonnegative resistances, nonzero impedances and a connected graph.
    pub fn validate(&self) -> Result<()> {
        if !(self.s_base_kva > 0.0) {
            return Err(Error::Model("s_base_kva must be positive".into()));
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id.as_str()) {
                return Err(Error::Model(format!("duplicate bus id '{}'", bus.id)));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::Model(format!("expected exactly one slack bus, found {slacks}")));
        }
        let index = self.index();
        let mut adjacency = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            let (Some(&f), Some(&t)) = (index.get(br.from.as_str()), index.get(br.to.as_str())) else {
                return Err(Error::Model(format!(
                    "branch {k} ({} - {}) references an unknown bus",
                    br.from, br.to
                )));
            };
            if f == t {
                return Err(Error::Model(format!("branch {k} is a self-loop at bus '{}'", br.from)));
            }
            if br.r_pu < 0.0 || !br.r_pu.is_finite() || !br.x_pu.is_finite() {
                return Err(Error::Model(format!("branch {k} has invalid impedance")));
            }
            if br.r_pu == 0.0 && br.x_pu == 0.0 {
                return Err(Error::Model(format!("branch {k} ({} - {}) has zero impedance", br.from, br.to)));
            }
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        let slack = self.buses.iter().position(|b| b.kind == BusKind::Slack).unwrap();
        let mut visited = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([slack]);
        visited[slack] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(lost) = visited.iter().position(|v| !v) {
            return Err(Error::Model(format!(
                "network is disconnected: bus '{}' is not reachable from the slack",
                self.buses[lost].id
            )));
        }
        Ok(())
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    /// Document indices in solver order (slack first).
    fn order(&self) -> Vec<usize> {
        let slack = self.buses.iter().position(|b| b.kind == BusKind::Slack).unwrap_or(0);
        std::iter::once(slack).chain((0..self.buses.len()).filter(|&i| i != slack)).collect()
    }

    /// Ids of the non-slack buses in the order used by all injection
    /// vectors and voltage sensitivities.
    pub fn load_bus_ids(&self) -> Vec<String> {
        self.order()[1..].iter().map(|&i| self.buses[i].id.clone()).collect()
    }

    /// Position of a non-slack bus in the injection ordering.
    pub fn load_bus_position(&self, id: &str) -> Option<usize> {
        self.order()[1..].iter().position(|&i| self.buses[i].id == id)
    }

    pub fn slack_id(&self) -> &str {
        &self.buses[self.order()[0]].id
    }

    /// Peak demand at every non-slack bus as a complex injection in pu
    /// (negative: demand is withdrawn from the feeder).
    pub fn peak_demand_injection(&self) -> Vec<C64> {
        self.order()[1..]
            .iter()
            .map(|&i| -C64::new(self.buses[i].p_load_kw, self.buses[i].q_load_kvar) / self.s_base_kva)
            .collect()
    }
}

/// Bus admittance matrix in solver order.
#[derive(Clone, Debug)]
pub struct Admittance {
    pub y: DMatrix<C64>,
}

impl Admittance {
    pub fn n_bus(&self) -> usize {
        self.y.nrows()
    }
    pub fn y0l(&self) -> DVector<C64> {
        self.y.view((0, 1), (1, self.n_bus() - 1)).transpose().column(0).into_owned()
    }
    pub fn yl0(&self) -> DVector<C64> {
        self.y.view((1, 0), (self.n_bus() - 1, 1)).column(0).into_owned()
    }
    pub fn yll(&self) -> DMatrix<C64> {
        let n = self.n_bus() - 1;
        self.y.view((1, 1), (n, n)).into_owned()
    }
}

/// Assembles the nodal admittance matrix with the pi branch model.
pub fn build_admittance(net: &BusNetwork) -> Result<Admittance> {
    net.validate()?;
    let order = net.order();
    let mut pos = vec![0usize; order.len()];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    let index = net.index();
    let n = net.buses.len();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for br in &net.branches {
        let f = pos[index[br.from.as_str()]];
        let t = pos[index[br.to.as_str()]];
        let ys = C64::new(1.0, 0.0) / C64::new(br.r_pu, br.x_pu);
        let ysh = C64::new(0.0, br.b_shunt_pu / 2.0);
        y[(f, f)] += ys + ysh;
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    Ok(Admittance { y })
}

/// Voltages at zero injection, together with the inverse of `Y_LL` that
/// every later step reuses.
#[derive(Clone, Debug)]
pub struct NoLoadSolution {
    pub v_slack: C64,
    /// Non-slack voltages.
    pub w: DVector<C64>,
    pub yll_inv: DMatrix<C64>,
}

impl NoLoadSolution {
    /// Slack voltage followed by `w`.
    pub fn full(&self) -> DVector<C64> {
        let mut v = DVector::zeros(self.w.len() + 1);
        v[0] = self.v_slack;
        v.rows_mut(1, self.w.len()).copy_from(&self.w);
        v
    }
}

/// Solves `Y_LL w = -Y_L0 v_slack`.
pub fn solve_noload(net: &BusNetwork, adm: &Admittance) -> Result<NoLoadSolution> {
    let yll = adm.yll();
    let scale = yll.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let lu = yll.clone().lu();
    let yll_inv = lu
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .ok_or_else(|| Error::Model("Y_LL is singular".into()))?;
    // Reject numerically singular blocks too.
    let cond = scale * yll_inv.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !(cond < 1e14) {
        return Err(Error::Model(format!("Y_LL is numerically singular (condition ~{cond:.1e})")));
    }
    let w = -(&yll_inv * adm.yl0()) * net.slack_voltage;
    Ok(NoLoadSolution {
        v_slack: net.slack_voltage,
        w,
        yll_inv,
    })
}

/// Converged nonlinear power flow.
#[derive(Clone, Debug)]
pub struct PowerFlow {
    /// All bus voltages in solver order (slack first).
    pub v: DVector<C64>,
    /// Total real losses `Re(v^H Y v)`, pu.
    pub loss: f64,
    pub iterations: usize,
}

impl PowerFlow {
    /// Magnitudes at the non-slack buses.
    pub fn load_magnitudes(&self) -> DVector<f64> {
        DVector::from_iterator(self.v.len() - 1, self.v.iter().skip(1).map(|v| v.norm()))
    }
}

/// Fixed-point (Z-bus) power flow for the given non-slack injections (pu).
pub fn ac_power_flow(adm: &Admittance, noload: &NoLoadSolution, injections: &[C64]) -> Result<PowerFlow> {
    let n = noload.w.len();
    if injections.len() != n {
        return Err(Error::Validation(format!(
            "expected {n} non-slack injections, got {}",
            injections.len()
        )));
    }
    let s_conj = DVector::from_iterator(n, injections.iter().map(|s| s.conj()));
    let mut v = noload.w.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=PF_MAX_ITER {
        let current = DVector::from_iterator(n, s_conj.iter().zip(v.iter()).map(|(s, v)| s / v.conj()));
        let next = &noload.w + &noload.yll_inv * current;
        residual = (&next - &v).iter().map(|d| d.norm()).fold(0.0, f64::max);
        v = next;
        if !residual.is_finite() || v.iter().any(|x| !(x.norm() > 1e-3 && x.norm() < 1e3)) {
            return Err(Error::NonConvergence {
                iterations: it,
                residual,
            });
        }
        if residual < PF_TOL {
            let mut full = DVector::zeros(n + 1);
            full[0] = noload.v_slack;
            full.rows_mut(1, n).copy_from(&v);
            let loss = total_loss(adm, &full);
            return Ok(PowerFlow {
                v: full,
                loss,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: PF_MAX_ITER,
        residual,
    })
}

/// `Re(v^H Y v)`.
pub fn total_loss(adm: &Admittance, v: &DVector<C64>) -> f64 {
    v.dotc(&(&adm.y * v)).re
}

/// Complex voltage sensitivity of the non-slack buses to the stacked
/// injections `[P; Q]` at every non-slack bus, evaluated at no load.
///
/// Column `j` is `Y_LL^-1 e_j / conj(w_j)`; column `n + j` is `-i` times
/// the same. This is the first-order Taylor expansion of the fixed-point map
/// `v = w + Y_LL^-1 diag(conj(v))^-1 conj(s)` about `s = 0`.
pub fn voltage_sensitivity(noload: &NoLoadSolution) -> DMatrix<C64> {
    let n = noload.w.len();
    let mut m = DMatrix::<C64>::zeros(n, 2 * n);
    for j in 0..n {
        let scale = C64::new(1.0, 0.0) / noload.w[j].conj();
        for k in 0..n {
            let d = noload.yll_inv[(k, j)] * scale;
            m[(k, j)] = d;
            m[(k, n + j)] = d * C64::new(0.0, -1.0);
        }
    }
    m
}

fn magnitude_jacobian(noload: &NoLoadSolution, sens: &DMatrix<C64>) -> DMatrix<f64> {
    DMatrix::from_fn(sens.nrows(), sens.ncols(), |k, j| {
        let w = noload.w[k];
        (w.conj() * sens[(k, j)]).re / w.norm()
    })
}

/// Affine voltage-magnitude model at the listed non-slack buses:
/// `|V| ~ K x + b` with `x = [P_pcc; Q_pcc]`.
pub fn linearize_voltage(noload: &NoLoadSolution, pcc: &[usize]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = noload.w.len();
    if let Some(bad) = pcc.iter().find(|&&p| p >= n) {
        return Err(Error::Model(format!("PCC position {bad} is outside the network")));
    }
    let full = magnitude_jacobian(noload, &voltage_sensitivity(noload));
    let k = select_columns(&full, pcc);
    let b = noload.w.map(|w| w.norm());
    Ok((k, b))
}

/// Quadratic model `x^T Q x + l^T x + sigma` of network losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LossQuadratic {
    /// Symmetric PSD Hessian block (the quadratic coefficient).
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub sigma: f64,
}

impl LossQuadratic {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quad * x)) + self.lin.dot(x) + self.sigma
    }

    pub fn gradient_at(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * &self.quad * x + &self.lin
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.quad.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Substitutes the affine complex-voltage model into `Re(v^H Y v)` for
/// injections at every non-slack bus.
pub fn build_loss_quadratic(adm: &Admittance, noload: &NoLoadSolution) -> LossQuadratic {
    let n = noload.w.len();
    let g = adm.y.map(|y| y.re);
    let u0 = noload.full();
    let sens = voltage_sensitivity(noload);
    let g_ll = g.view((1, 1), (n, n)).map(|v| C64::new(v, 0.0));
    let g_all_l = g.columns(1, n).map(|v| C64::new(v, 0.0));

    let gm = &g_ll * &sens;
    let hess = sens.adjoint() * gm;
    let quad = project_psd(&hess.map(|v| v.re));
    let row = u0.adjoint() * (g_all_l * &sens);
    let lin = DVector::from_iterator(2 * n, row.iter().map(|v| 2.0 * v.re));
    let sigma = total_loss(adm, &u0);
    LossQuadratic { quad, lin, sigma }
}

/// Symmetrizes and clips negative eigenvalues to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

fn select_columns(m: &DMatrix<f64>, pcc: &[usize]) -> DMatrix<f64> {
    let n = m.ncols() / 2;
    let mut cols = Vec::with_capacity(2 * pcc.len());
    cols.extend(pcc.iter().copied());
    cols.extend(pcc.iter().map(|p| p + n));
    m.select_columns(cols.iter())
}

fn stacked_indices(pcc: &[usize], n: usize) -> Vec<usize> {
    pcc.iter().copied().chain(pcc.iter().map(|p| p + n)).collect()
}

/// Stacks complex injections as `[P; Q]`.
pub fn stack(injections: &[C64]) -> DVector<f64> {
    let n = injections.len();
    DVector::from_fn(2 * n, |i, _| if i < n { injections[i].re } else { injections[i - n].im })
}

/// Linearization of a network about its no-load point, restricted to a set
/// of converter terminals but retaining the full-bus models needed to fold
/// in background injections.
#[derive(Clone, Debug)]
pub struct LinearizedGrid {
    pub bus_ids: Vec<String>,
    pub s_base_kva: f64,
    /// Terminal index to non-slack bus position.
    pub pcc: Vec<usize>,
    /// `(n_bus - 1) x 2m` magnitude sensitivity at the terminals.
    pub k: DMatrix<f64>,
    /// No-load voltage magnitudes.
    pub b: DVector<f64>,
    /// Loss model in the terminal injections.
    pub loss: LossQuadratic,
    pub k_full: DMatrix<f64>,
    pub loss_full: LossQuadratic,
}

/// Per-timestep models with background injections folded into the
/// constant and linear terms.
#[derive(Clone, Debug)]
pub struct FoldedModel {
    pub k: DMatrix<f64>,
    pub b: DVector<f64>,
    pub loss: LossQuadratic,
}

impl LinearizedGrid {
    pub fn build(net: &BusNetwork, pcc_ids: &[impl AsRef<str>]) -> Result<Self> {
        let adm = build_admittance(net)?;
        let noload = solve_noload(net, &adm)?;
        Self::from_parts(net, &adm, &noload, pcc_ids)
    }

    pub fn from_parts(
        net: &BusNetwork,
        adm: &Admittance,
        noload: &NoLoadSolution,
        pcc_ids: &[impl AsRef<str>],
    ) -> Result<Self> {
        let bus_ids = net.load_bus_ids();
        let mut pcc = Vec::with_capacity(pcc_ids.len());
        for id in pcc_ids {
            let id = id.as_ref();
            let p = net.load_bus_position(id).ok_or_else(|| {
                if id == net.slack_id() {
                    Error::Model(format!("PCC bus '{id}' is the slack bus"))
                } else {
                    Error::Model(format!("PCC bus '{id}' is not in the network"))
                }
            })?;
            pcc.push(p);
        }
        let k_full = magnitude_jacobian(noload, &voltage_sensitivity(noload));
        let b = noload.w.map(|w| w.norm());
        let loss_full = build_loss_quadratic(adm, noload);
        let k = select_columns(&k_full, &pcc);
        let loss = restrict(&loss_full, &pcc);
        Ok(Self {
            bus_ids,
            s_base_kva: net.s_base_kva,
            pcc,
            k,
            b,
            loss,
            k_full,
            loss_full,
        })
    }

    pub fn n_terminals(&self) -> usize {
        self.pcc.len()
    }

    /// Shifts the models by background injections at every non-slack bus.
    pub fn fold(&self, background: &[C64]) -> Result<FoldedModel> {
        let n = self.bus_ids.len();
        if background.len() != n {
            return Err(Error::Validation(format!(
                "expected {n} background injections, got {}",
                background.len()
            )));
        }
        let xd = stack(background);
        let b = &self.b + &self.k_full * &xd;
        let grad = self.loss_full.gradient_at(&xd);
        let idx = stacked_indices(&self.pcc, n);
        let lin = DVector::from_iterator(idx.len(), idx.iter().map(|&i| grad[i]));
        let sigma = self.loss_full.eval(&xd);
        Ok(FoldedModel {
            k: self.k.clone(),
            b,
            loss: LossQuadratic {
                quad: self.loss.quad.clone(),
                lin,
                sigma,
            },
        })
    }

    /// Model with no background injections.
    pub fn unloaded(&self) -> FoldedModel {
        FoldedModel {
            k: self.k.clone(),
            b: self.b.clone(),
            loss: self.loss.clone(),
        }
    }

    /// Expands terminal injections `[P_c; Q_c]` to complex injections at
    /// every non-slack bus.
    pub fn expand_terminal_injections(&self, x: &DVector<f64>) -> Vec<C64> {
        let m = self.pcc.len();
        let mut out = vec![C64::new(0.0, 0.0); self.bus_ids.len()];
        for (i, &p) in self.pcc.iter().enumerate() {
            out[p] += C64::new(x[i], x[m + i]);
        }
        out
    }
}

fn restrict(full: &LossQuadratic, pcc: &[usize]) -> LossQuadratic {
    let idx = stacked_indices(pcc, full.lin.len() / 2);
    let quad = full.quad.select_rows(idx.iter()).select_columns(idx.iter());
    LossQuadratic {
        quad: project_psd(&quad),
        lin: DVector::from_iterator(idx.len(), idx.iter().map(|&i| full.lin[i])),
        sigma: full.sigma,
    }
}
