//! Assembly of one timestep's scheduling program.
//!
//! Decision variables per terminal `i` (1-based in names):
//! `P_c[i]`, `Q_c[i]` (ac-side injection), `S_c[i]` (apparent power),
//! `P_dc[i]` (power drawn into the dc link) and `P_loss_conv[i]`. The dc link
//! optionally carries a DER as `P_dc[m+1]`. Network losses enter through an
//! epigraph variable `P_loss_ntwk` bounded by a rotated second-order cone
//! on the quadratic loss model, whose head is the auxiliary `loss_head`.
//! With a cardinality limit `n < m`, binaries `z[i]` switch the legs on via
//! `S_c[i] <= M z[i]` and `sum z <= n`.

mod ir;

pub use ir::{parse_ir, serialize_ir, AffineExpr, ConicProgramIR, LinearRow, SocCone, Term, Var};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FoldedModel, LinearizedGrid, C64};

/// Eigenvalues of the loss Hessian below this fraction of the largest are
/// dropped from the cone factor.
const FACTOR_RANK_TOL: f64 = 1e-12;

/// Converter terminals and ratings, in per-unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ConverterSpec {
    pub pcc_buses: Vec<String>,
    /// Loss coefficient `k` of the linear loss model `k * S_c`.
    pub loss_coeff: f64,
    /// Total ac/dc capacity shared by all legs, pu.
    pub s_total: f64,
    pub has_dc_der: bool,
}

impl ConverterSpec {
    pub fn new(pcc_buses: Vec<String>, s_total: f64) -> Self {
        Self {
            pcc_buses,
            loss_coeff: 0.01,
            s_total,
            has_dc_der: false,
        }
    }

    pub fn m(&self) -> usize {
        self.pcc_buses.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m() < 2 {
            return Err(Error::Validation(format!("a multiport needs at least 2 terminals, got {}", self.m())));
        }
        if !(self.loss_coeff >= 0.0) || !self.loss_coeff.is_finite() {
            return Err(Error::Validation(format!("loss coefficient must be >= 0, got {}", self.loss_coeff)));
        }
        if !(self.s_total > 0.0) || !self.s_total.is_finite() {
            return Err(Error::Validation(format!("total capacity must be > 0, got {}", self.s_total)));
        }
        for (i, a) in self.pcc_buses.iter().enumerate() {
            if self.pcc_buses[..i].contains(a) {
                return Err(Error::Validation(format!("PCC bus '{a}' is listed twice")));
            }
        }
        Ok(())
    }
}

/// Serialized as a bare integer or the string `"unconstrained"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CardinalityLimit {
    Unconstrained,
    AtMost(usize),
}

impl CardinalityLimit {
    /// Whether binaries are required for `m` terminals.
    pub fn is_binding(self, m: usize) -> bool {
        matches!(self, CardinalityLimit::AtMost(n) if n < m)
    }

    pub fn limit(self, m: usize) -> usize {
        match self {
            CardinalityLimit::Unconstrained => m,
            CardinalityLimit::AtMost(n) => n.min(m),
        }
    }

    pub fn label(self) -> String {
        match self {
            CardinalityLimit::Unconstrained => "unconstrained".into(),
            CardinalityLimit::AtMost(n) => format!("n{n}"),
        }
    }
}

impl std::fmt::Display for CardinalityLimit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CardinalityLimit::Unconstrained => write!(f, "unconstrained"),
            CardinalityLimit::AtMost(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for CardinalityLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("unconstrained") || s.eq_ignore_ascii_case("inf") {
            return Ok(CardinalityLimit::Unconstrained);
        }
        s.parse::<usize>()
            .map(CardinalityLimit::AtMost)
            .map_err(|_| Error::Validation(format!("invalid cardinality '{s}' (expected an integer or 'unconstrained')")))
    }
}

impl Serialize for CardinalityLimit {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CardinalityLimit::Unconstrained => ser.serialize_str("unconstrained"),
            CardinalityLimit::AtMost(n) => ser.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for CardinalityLimit {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Name(String),
        }
        match Raw::deserialize(de)? {
            Raw::Count(n) => Ok(CardinalityLimit::AtMost(n as usize)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Conditions for one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepInput {
    /// Background injections at every non-slack bus, pu (demand negative).
    pub background: Vec<C64>,
    /// Real power of the DER on the dc link, pu.
    pub p_der: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub cardinality: CardinalityLimit,
    /// Non-slack bus positions with voltage limits; `None` monitors all.
    pub monitored: Option<Vec<usize>>,
}

impl TimestepInput {
    pub fn unloaded(n_load_buses: usize, v_min: f64, v_max: f64, cardinality: CardinalityLimit) -> Self {
        Self {
            background: vec![C64::new(0.0, 0.0); n_load_buses],
            p_der: 0.0,
            v_min,
            v_max,
            cardinality,
            monitored: None,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::Validation(format!(
                "v_min ({}) must be below v_max ({})",
                self.v_min, self.v_max
            )));
        }
        if !self.p_der.is_finite() {
            return Err(Error::Validation("P_DER must be finite".into()));
        }
        if let CardinalityLimit::AtMost(n) = self.cardinality {
            if n > m {
                return Err(Error::Validation(format!("cardinality limit {n} exceeds terminal count {m}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to assemble (or independently evaluate) one
/// timestep: the folded network models plus converter and limits.
#[derive(Clone, Debug)]
pub struct TimestepModel {
    pub bus_ids: Vec<String>,
    pub folded: FoldedModel,
    pub conv: ConverterSpec,
    pub ts: TimestepInput,
}

impl TimestepModel {
    pub fn new(grid: &LinearizedGrid, conv: &ConverterSpec, ts: &TimestepInput) -> Result<Self> {
        conv.validate()?;
        ts.validate(conv.m())?;
        let grid_pcc: Vec<&str> = grid.pcc.iter().map(|&p| grid.bus_ids[p].as_str()).collect();
        if grid_pcc != conv.pcc_buses.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Validation(format!(
                "converter terminals {:?} do not match the linearization terminals {:?}",
                conv.pcc_buses, grid_pcc
            )));
        }
        if let Some(mon) = &ts.monitored {
            if let Some(bad) = mon.iter().find(|&&p| p >= grid.bus_ids.len()) {
                return Err(Error::Validation(format!("monitored bus position {bad} is out of range")));
            }
        }
        Ok(Self {
            bus_ids: grid.bus_ids.clone(),
            folded: grid.fold(&ts.background)?,
            conv: conv.clone(),
            ts: ts.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.conv.m()
    }

    pub fn monitored(&self) -> Vec<usize> {
        match &self.ts.monitored {
            Some(v) => v.clone(),
            None => (0..self.bus_ids.len()).collect(),
        }
    }

    /// Voltage magnitudes predicted for terminal injections `x = [P_c; Q_c]`.
    pub fn voltages(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.folded.k * x + &self.folded.b
    }

    /// Network loss predicted by the quadratic model.
    pub fn network_loss(&self, x: &DVector<f64>) -> f64 {
        self.folded.loss.eval(x)
    }
}

/// Uniform big-M bound for the leg apparent powers: no leg can exceed the
/// shared total capacity.
pub fn big_m_value(conv: &ConverterSpec) -> f64 {
    conv.s_total
}

/// Options that change the program shape without changing its meaning.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    /// Emit binaries and big-M rows even when `n >= m` makes them vacuous.
    pub binaries_when_vacuous: bool,
}

pub fn build_timestep_program(grid: &LinearizedGrid, conv: &ConverterSpec, ts: &TimestepInput) -> Result<ConicProgramIR> {
    build_program(&TimestepModel::new(grid, conv, ts)?, BuildOptions::default())
}

/// Factor `F` with `F^T F = Q` for a symmetric PSD `Q`, dropping null
/// directions.
pub fn psd_factor(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("loss Hessian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new((q + q.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if let Some(neg) = eig.eigenvalues.iter().find(|&&l| l < -1e-9 * top.max(1.0)) {
        return Err(Error::Model(format!("loss Hessian is not PSD (eigenvalue {neg:.3e})")));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > FACTOR_RANK_TOL * top)
        .collect();
    let mut f = DMatrix::zeros(keep.len(), q.ncols());
    for (r, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for c in 0..q.ncols() {
            f[(r, c)] = s * eig.eigenvectors[(c, i)];
        }
    }
    Ok(f)
}

pub fn build_program(model: &TimestepModel, opts: BuildOptions) -> Result<ConicProgramIR> {
    let m = model.m();
    let conv = &model.conv;
    let ts = &model.ts;
    let folded = &model.folded;
    let with_binaries = ts.cardinality.is_binding(m) || (opts.binaries_when_vacuous && ts.cardinality != CardinalityLimit::Unconstrained);

    let mut vars: Vec<String> = Vec::new();
    let mut add = |name: String| {
        vars.push(name);
        vars.len() - 1
    };
    let p_c: Vec<usize> = (1..=m).map(|i| add(format!("P_c[{i}]"))).collect();
    let q_c: Vec<usize> = (1..=m).map(|i| add(format!("Q_c[{i}]"))).collect();
    let s_c: Vec<usize> = (1..=m).map(|i| add(format!("S_c[{i}]"))).collect();
    let n_dc = m + usize::from(conv.has_dc_der);
    let p_dc: Vec<usize> = (1..=n_dc).map(|i| add(format!("P_dc[{i}]"))).collect();
    let p_loss_conv: Vec<usize> = (1..=m).map(|i| add(format!("P_loss_conv[{i}]"))).collect();
    let p_loss_ntwk = add("P_loss_ntwk".into());
    let loss_head = add("loss_head".into());
    let binaries: Vec<String> = if with_binaries {
        (1..=m).map(|i| format!("z[{i}]")).collect()
    } else {
        Vec::new()
    };

    let c = |v: usize, coef: f64| Term::new(Var::Cont(v), coef);
    // Stacked injection x = [P_c; Q_c] as variable indices.
    let x_vars: Vec<usize> = p_c.iter().chain(&q_c).copied().collect();
    let dot_x = |coefs: &[f64], scale: f64| -> Vec<Term> {
        coefs
            .iter()
            .zip(&x_vars)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, &v)| c(v, a * scale))
            .collect()
    };

    let mut equalities = Vec::new();
    equalities.push(LinearRow {
        name: "dc_balance".into(),
        terms: p_dc.iter().map(|&v| c(v, 1.0)).collect(),
        rhs: 0.0,
    });
    for i in 0..m {
        equalities.push(LinearRow {
            name: format!("conv_balance[{}]", i + 1),
            terms: vec![c(p_dc[i], 1.0), c(p_loss_conv[i], 1.0), c(p_c[i], -1.0)],
            rhs: 0.0,
        });
    }
    if conv.has_dc_der {
        equalities.push(LinearRow {
            name: "dc_der".into(),
            terms: vec![c(p_dc[m], 1.0)],
            rhs: ts.p_der,
        });
    }
    for i in 0..m {
        equalities.push(LinearRow {
            name: format!("conv_loss[{}]", i + 1),
            terms: vec![c(p_loss_conv[i], 1.0), c(s_c[i], -conv.loss_coeff)],
            rhs: 0.0,
        });
    }
    // loss_head = (P_loss_ntwk - lambda x - sigma + 1) / 2
    let lin: Vec<f64> = folded.loss.lin.iter().copied().collect();
    let sigma = folded.loss.sigma;
    let mut head_terms = vec![c(loss_head, 1.0), c(p_loss_ntwk, -0.5)];
    head_terms.extend(dot_x(&lin, 0.5));
    equalities.push(LinearRow {
        name: "loss_head_def".into(),
        terms: head_terms,
        rhs: 0.5 * (1.0 - sigma),
    });

    let mut inequalities = Vec::new();
    for &j in &model.monitored() {
        let row: Vec<f64> = folded.k.row(j).iter().copied().collect();
        let bus = &model.bus_ids[j];
        inequalities.push(LinearRow {
            name: format!("v_max[{bus}]"),
            terms: dot_x(&row, 1.0),
            rhs: ts.v_max - folded.b[j],
        });
        inequalities.push(LinearRow {
            name: format!("v_min[{bus}]"),
            terms: dot_x(&row, -1.0),
            rhs: folded.b[j] - ts.v_min,
        });
    }
    inequalities.push(LinearRow {
        name: "capacity".into(),
        terms: s_c.iter().map(|&v| c(v, 1.0)).collect(),
        rhs: conv.s_total,
    });
    let big_m = big_m_value(conv);
    if with_binaries {
        for (i, &s) in s_c.iter().enumerate() {
            inequalities.push(LinearRow {
                name: format!("big_m[{}]", i + 1),
                terms: vec![c(s, 1.0), Term::new(Var::Bin(i), -big_m)],
                rhs: 0.0,
            });
        }
        inequalities.push(LinearRow {
            name: "cardinality".into(),
            terms: (0..m).map(|i| Term::new(Var::Bin(i), 1.0)).collect(),
            rhs: ts.cardinality.limit(m) as f64,
        });
    }

    let mut soc_cones: Vec<SocCone> = (0..m)
        .map(|i| SocCone {
            name: format!("apparent[{}]", i + 1),
            head: s_c[i],
            tail: vec![AffineExpr::var(p_c[i]), AffineExpr::var(q_c[i])],
        })
        .collect();
    let f = psd_factor(&folded.loss.quad)?;
    let mut tail: Vec<AffineExpr> = (0..f.nrows())
        .map(|r| {
            let row: Vec<f64> = f.row(r).iter().copied().collect();
            AffineExpr {
                terms: dot_x(&row, 1.0),
                constant: 0.0,
            }
        })
        .collect();
    // (P_loss_ntwk - lambda x - sigma - 1) / 2
    let mut last = vec![c(p_loss_ntwk, 0.5)];
    last.extend(dot_x(&lin, -0.5));
    tail.push(AffineExpr {
        terms: last,
        constant: -0.5 * (sigma + 1.0),
    });
    soc_cones.push(SocCone {
        name: "loss_epigraph".into(),
        head: loss_head,
        tail,
    });

    let mut obj = vec![c(p_loss_ntwk, 1.0)];
    obj.extend(p_loss_conv.iter().map(|&v| c(v, 1.0)));

    let ir = ConicProgramIR {
        variables: vars,
        binaries,
        equalities,
        inequalities,
        soc_cones,
        objective: AffineExpr {
            terms: obj,
            constant: 0.0,
        },
        big_m,
    };
    ir.validate()?;
    Ok(ir)
}

/// Indices of the semantic variables of a program built by
/// [`build_program`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub p_c: Vec<usize>,
    pub q_c: Vec<usize>,
    pub s_c: Vec<usize>,
    pub p_loss_conv: Vec<usize>,
    pub p_loss_ntwk: usize,
}

impl Layout {
    pub fn of(ir: &ConicProgramIR) -> Result<Self> {
        let find = |name: String| {
            ir.continuous(&name)
                .ok_or_else(|| Error::Validation(format!("program has no variable '{name}'")))
        };
        let mut p_c = Vec::new();
        while let Some(i) = ir.continuous(&format!("P_c[{}]", p_c.len() + 1)) {
            p_c.push(i);
        }
        let m = p_c.len();
        Ok(Self {
            q_c: (1..=m).map(|i| find(format!("Q_c[{i}]"))).collect::<Result<_>>()?,
            s_c: (1..=m).map(|i| find(format!("S_c[{i}]"))).collect::<Result<_>>()?,
            p_loss_conv: (1..=m).map(|i| find(format!("P_loss_conv[{i}]"))).collect::<Result<_>>()?,
            p_loss_ntwk: find("P_loss_ntwk".into())?,
            p_c,
        })
    }

    pub fn m(&self) -> usize {
        self.p_c.len()
    }

    /// Stacked `[P_c; Q_c]` from a primal vector.
    pub fn injections(&self, primal: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.m(),
            self.p_c.iter().chain(&self.q_c).map(|&i| primal[i]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn setup(m: usize, der: bool, card: CardinalityLimit) -> ConicProgramIR {
        let net = fixtures::two_feeder_5bus();
        let pcc: Vec<String> = fixtures::FIVE_BUS_PCC[..m].iter().map(|s| s.to_string()).collect();
        let grid = LinearizedGrid::build(&net, &pcc).unwrap();
        let mut conv = ConverterSpec::new(pcc, 1.0);
        conv.has_dc_der = der;
        let ts = TimestepInput::unloaded(4, 0.9, 1.1, card);
        build_timestep_program(&grid, &conv, &ts).unwrap()
    }

    #[test]
    fn counts_follow_closed_form() {
        for m in 2..=4 {
            for der in [false, true] {
                for constrained in [false, true] {
                    let card = if constrained { CardinalityLimit::AtMost(1) } else { CardinalityLimit::Unconstrained };
                    let ir = setup(m, der, card);
                    let d = usize::from(der);
                    let c = usize::from(constrained);
                    assert_eq!(ir.n_continuous(), 5 * m + 2 + d);
                    assert_eq!(ir.n_binaries(), c * m);
                    assert_eq!(ir.equalities.len(), 2 * m + 2 + d);
                    assert_eq!(ir.inequalities.len(), 2 * 4 + 1 + c * (m + 1));
                    assert_eq!(ir.soc_cones.len(), m + 1);
                    let dc = ir.equality("dc_balance").unwrap();
                    assert_eq!(dc.terms.len(), m + d);
                }
            }
        }
    }

    #[test]
    fn four_terminals_limit_two_has_four_binaries() {
        let ir = setup(4, false, CardinalityLimit::AtMost(2));
        assert_eq!(ir.n_binaries(), 4);
        assert_eq!(ir.inequalities.iter().filter(|r| r.name.starts_with("big_m")).count(), 4);
        assert_eq!(ir.inequalities.iter().filter(|r| r.name == "cardinality").count(), 1);
        assert_eq!(ir.inequality("cardinality").unwrap().rhs, 2.0);
    }

    #[test]
    fn unconstrained_has_no_binaries() {
        assert_eq!(setup(2, false, CardinalityLimit::Unconstrained).n_binaries(), 0);
        assert_eq!(setup(3, false, CardinalityLimit::AtMost(3)).n_binaries(), 0);
    }

    #[test]
    fn cardinality_above_m_is_rejected() {
        let net = fixtures::two_feeder_5bus();
        let pcc = vec!["3".to_string(), "5".to_string()];
        let grid = LinearizedGrid::build(&net, &pcc).unwrap();
        let conv = ConverterSpec::new(pcc, 1.0);
        let ts = TimestepInput::unloaded(4, 0.9, 1.1, CardinalityLimit::AtMost(3));
        assert!(matches!(build_timestep_program(&grid, &conv, &ts), Err(Error::Validation(_))));
    }

    #[test]
    fn big_m_is_total_capacity() {
        let conv = ConverterSpec::new(vec!["a".into(), "b".into()], 1.0);
        assert_eq!(big_m_value(&conv), 1.0);
        // 3200 kVA and 750 kVA on a 1000 kVA base.
        for kva in [3200.0, 750.0] {
            let conv = ConverterSpec::new(vec!["a".into(), "b".into()], kva / 1000.0);
            assert_eq!(big_m_value(&conv) * 1000.0, kva);
        }
    }

    #[test]
    fn binaries_only_in_big_m_and_cardinality_rows() {
        let ir = setup(3, true, CardinalityLimit::AtMost(1));
        for row in &ir.inequalities {
            if row.terms.iter().any(|t| matches!(t.var, Var::Bin(_))) {
                assert!(row.name.starts_with("big_m") || row.name == "cardinality", "{}", row.name);
            }
        }
    }

    #[test]
    fn converter_loss_is_an_equality_row() {
        let ir = setup(2, false, CardinalityLimit::Unconstrained);
        let row = ir.equality("conv_loss[1]").unwrap();
        assert_eq!(row.rhs, 0.0);
        assert_eq!(row.terms.len(), 2);
    }

    #[test]
    fn factor_reproduces_matrix() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let f = psd_factor(&q).unwrap();
        assert_eq!(f.nrows(), 2);
        assert!((f.transpose() * &f - q).amax() < 1e-12);
        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(psd_factor(&neg).is_err());
    }

    #[test]
    fn layout_finds_variables() {
        let ir = setup(3, true, CardinalityLimit::AtMost(2));
        let l = Layout::of(&ir).unwrap();
        assert_eq!(l.m(), 3);
        assert_eq!(ir.variables[l.s_c[2]], "S_c[3]");
        assert_eq!(ir.variables[l.p_loss_ntwk], "P_loss_ntwk");
    }
}
