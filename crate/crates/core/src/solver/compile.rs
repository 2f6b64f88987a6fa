//! Lowering of a [`ConicProgramIR`] with binary fixings into the standard
//! form `min c'x s.t. Ax = b, Gx + s = h, s in K`, with presolve and the map
//! back to IR rows and variables.

use nalgebra::{DMatrix, DVector};

use super::cones::ConeLayout;
use crate::program::{ConicProgramIR, Term, Var};

/// Presolve feasibility tolerance on rows that lose all free variables.
const CONST_ROW_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinaryMode {
    Fixed(bool),
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NonnegOrigin {
    Inequality(usize),
    BinaryLower(usize),
    BinaryUpper(usize),
    /// `head >= 0` left from a cone whose tail vanished.
    ConeHead(usize),
    /// `head - sign * tail[pos] >= 0` from a cone with one live tail entry.
    ConeSplit { cone: usize, pos: usize, sign: f64 },
}

#[derive(Clone, Debug)]
pub struct StandardForm {
    pub c: DVector<f64>,
    pub obj_const: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: ConeLayout,
}

/// How standard-form entities map back to the IR.
#[derive(Clone, Debug)]
pub struct Postsolve {
    pub columns: Vec<Var>,
    pub fixed_cont: Vec<Option<f64>>,
    pub eq_rows: Vec<usize>,
    pub nonneg_rows: Vec<NonnegOrigin>,
    /// IR cone index and the cone entries kept in the block.
    pub cone_blocks: Vec<(usize, Vec<usize>)>,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Compiled {
    Ready(StandardForm, Postsolve),
    /// Presolve proved infeasibility; carries the violated row and amount.
    Infeasible { row: String, violation: f64 },
}

pub fn compile(ir: &ConicProgramIR, modes: &[BinaryMode]) -> Compiled {
    assert_eq!(modes.len(), ir.n_binaries(), "one mode per binary");
    let n_cont = ir.n_continuous();
    let binary_values: Vec<Option<f64>> = modes
        .iter()
        .map(|m| match m {
            BinaryMode::Fixed(v) => Some(f64::from(u8::from(*v))),
            BinaryMode::Relaxed => None,
        })
        .collect();
    let mut fixed_cont: Vec<Option<f64>> = vec![None; n_cont];

    // Collapse cones whose head is forced to zero by a single-variable row
    // (a leg switched off by its indicator): head and tail variables are 0.
    let mut dropped_cones = vec![false; ir.soc_cones.len()];
    for row in &ir.inequalities {
        let mut free: Vec<&Term> = Vec::new();
        let mut rhs = row.rhs;
        let mut relaxed = false;
        for t in &row.terms {
            match t.var {
                Var::Cont(_) => free.push(t),
                Var::Bin(j) => match binary_values[j] {
                    Some(v) => rhs -= t.coef * v,
                    None => relaxed = true,
                },
            }
        }
        if relaxed || free.len() != 1 || free[0].coef <= 0.0 || rhs > 0.0 {
            continue;
        }
        let Var::Cont(head) = free[0].var else { unreachable!() };
        let Some(ci) = ir.soc_cones.iter().position(|c| c.head == head) else {
            continue;
        };
        if rhs / free[0].coef < -CONST_ROW_TOL {
            return Compiled::Infeasible {
                row: row.name.clone(),
                violation: -rhs / free[0].coef,
            };
        }
        let cone = &ir.soc_cones[ci];
        let simple = cone.tail.iter().all(|e| {
            e.constant == 0.0 && e.terms.len() == 1 && matches!(e.terms[0].var, Var::Cont(_)) && e.terms[0].coef != 0.0
        });
        if !simple {
            continue;
        }
        fixed_cont[head] = Some(0.0);
        for e in &cone.tail {
            if let Var::Cont(v) = e.terms[0].var {
                fixed_cont[v] = Some(0.0);
            }
        }
        dropped_cones[ci] = true;
    }

    let mut columns: Vec<Var> = Vec::new();
    let mut col_of_cont = vec![usize::MAX; n_cont];
    for (i, f) in fixed_cont.iter().enumerate() {
        if f.is_none() {
            col_of_cont[i] = columns.len();
            columns.push(Var::Cont(i));
        }
    }
    let mut col_of_bin = vec![usize::MAX; ir.n_binaries()];
    for (j, v) in binary_values.iter().enumerate() {
        if v.is_none() {
            col_of_bin[j] = columns.len();
            columns.push(Var::Bin(j));
        }
    }
    let n = columns.len();

    // Splits terms into a dense row over the free columns plus a constant.
    let lower = |terms: &[Term]| -> (DVector<f64>, f64) {
        let mut row = DVector::zeros(n);
        let mut konst = 0.0;
        for t in terms {
            match t.var {
                Var::Cont(i) => match fixed_cont[i] {
                    Some(v) => konst += t.coef * v,
                    None => row[col_of_cont[i]] += t.coef,
                },
                Var::Bin(j) => match binary_values[j] {
                    Some(v) => konst += t.coef * v,
                    None => row[col_of_bin[j]] += t.coef,
                },
            }
        }
        (row, konst)
    };

    let mut a_rows = Vec::new();
    let mut b = Vec::new();
    let mut eq_rows = Vec::new();
    for (i, r) in ir.equalities.iter().enumerate() {
        let (row, konst) = lower(&r.terms);
        let rhs = r.rhs - konst;
        if row.iter().all(|&v| v == 0.0) {
            if rhs.abs() > CONST_ROW_TOL * r.rhs.abs().max(1.0) {
                return Compiled::Infeasible {
                    row: r.name.clone(),
                    violation: rhs.abs(),
                };
            }
            continue;
        }
        a_rows.push(row);
        b.push(rhs);
        eq_rows.push(i);
    }

    let mut g_rows = Vec::new();
    let mut h = Vec::new();
    let mut nonneg_rows = Vec::new();
    for (i, r) in ir.inequalities.iter().enumerate() {
        let (row, konst) = lower(&r.terms);
        let rhs = r.rhs - konst;
        if row.iter().all(|&v| v == 0.0) {
            if rhs < -CONST_ROW_TOL * r.rhs.abs().max(1.0) {
                return Compiled::Infeasible {
                    row: r.name.clone(),
                    violation: -rhs,
                };
            }
            continue;
        }
        g_rows.push(row);
        h.push(rhs);
        nonneg_rows.push(NonnegOrigin::Inequality(i));
    }
    for (j, &col) in col_of_bin.iter().enumerate() {
        if col == usize::MAX {
            continue;
        }
        let mut lo = DVector::zeros(n);
        lo[col] = -1.0;
        g_rows.push(lo);
        h.push(0.0);
        nonneg_rows.push(NonnegOrigin::BinaryLower(j));
        let mut hi = DVector::zeros(n);
        hi[col] = 1.0;
        g_rows.push(hi);
        h.push(1.0);
        nonneg_rows.push(NonnegOrigin::BinaryUpper(j));
    }

    // Tail entries that are identically zero are dropped; cones left with
    // one or two entries become linear rows.
    let mut soc_rows = Vec::new();
    let mut soc_h = Vec::new();
    let mut soc = Vec::new();
    let mut cone_blocks = Vec::new();
    for (ci, cone) in ir.soc_cones.iter().enumerate() {
        if dropped_cones[ci] {
            continue;
        }
        let head_terms = [Term::new(Var::Cont(cone.head), 1.0)];
        let mut entries = vec![lower(&head_terms)];
        entries.extend(cone.tail.iter().map(|e| {
            let (row, konst) = lower(&e.terms);
            (row, konst + e.constant)
        }));
        if entries.iter().all(|(row, _)| row.iter().all(|&v| v == 0.0)) {
            let head = entries[0].1;
            let tail: f64 = entries[1..].iter().map(|(_, k)| k * k).sum::<f64>().sqrt();
            if tail - head > CONST_ROW_TOL {
                return Compiled::Infeasible {
                    row: cone.name.clone(),
                    violation: tail - head,
                };
            }
            continue;
        }
        let kept: Vec<usize> = (0..entries.len())
            .filter(|&k| k == 0 || entries[k].1 != 0.0 || entries[k].0.iter().any(|&v| v != 0.0))
            .collect();
        // s = expr = row x + k  =>  G = -row, h = k
        match kept.len() {
            1 => {
                let (row, konst) = &entries[0];
                g_rows.push(-row);
                h.push(*konst);
                nonneg_rows.push(NonnegOrigin::ConeHead(ci));
            }
            2 => {
                let pos = kept[1];
                for sign in [1.0, -1.0] {
                    let row = &entries[0].0 - &entries[pos].0 * sign;
                    g_rows.push(-row);
                    h.push(entries[0].1 - sign * entries[pos].1);
                    nonneg_rows.push(NonnegOrigin::ConeSplit { cone: ci, pos, sign });
                }
            }
            _ => {
                for &k in &kept {
                    soc_rows.push(-&entries[k].0);
                    soc_h.push(entries[k].1);
                }
                soc.push(kept.len());
                cone_blocks.push((ci, kept));
            }
        }
    }
    let nonneg = g_rows.len();
    g_rows.extend(soc_rows);
    h.extend(soc_h);

    let (c, obj_const) = lower(&ir.objective.terms);
    let stack = |rows: &[DVector<f64>]| {
        if rows.is_empty() {
            DMatrix::zeros(0, n)
        } else {
            DMatrix::from_fn(rows.len(), n, |r, k| rows[r][k])
        }
    };
    Compiled::Ready(
        StandardForm {
            c,
            obj_const: obj_const + ir.objective.constant,
            a: stack(&a_rows),
            b: DVector::from_vec(b),
            g: stack(&g_rows),
            h: DVector::from_vec(h),
            cones: ConeLayout { nonneg, soc },
        },
        Postsolve {
            columns,
            fixed_cont,
            eq_rows,
            nonneg_rows,
            cone_blocks,
        },
    )
}

/// Ruiz row/column equilibration; rows of one SOC block share a factor.
pub struct Scaling {
    pub col: DVector<f64>,
    pub eq_row: DVector<f64>,
    pub cone_row: DVector<f64>,
}

pub fn equilibrate(sf: &StandardForm, passes: usize) -> (StandardForm, Scaling) {
    let n = sf.c.len();
    let p = sf.b.len();
    let mg = sf.h.len();
    let mut a = sf.a.clone();
    let mut g = sf.g.clone();
    let mut col = DVector::from_element(n, 1.0);
    let mut eq_row = DVector::from_element(p, 1.0);
    let mut cone_row = DVector::from_element(mg, 1.0);
    let blocks: Vec<(usize, usize)> = sf.cones.soc_blocks().collect();
    let safe = |v: f64| if v < 1e-8 { 1.0 } else { 1.0 / v.sqrt() };
    for _ in 0..passes {
        let mut dc = DVector::zeros(n);
        for k in 0..n {
            let m = a.column(k).amax().max(g.column(k).amax());
            dc[k] = safe(m);
        }
        let mut da = DVector::zeros(p);
        for r in 0..p {
            da[r] = safe(a.row(r).amax());
        }
        let mut dg = DVector::zeros(mg);
        for r in 0..sf.cones.nonneg {
            dg[r] = safe(g.row(r).amax());
        }
        for &(s, d) in &blocks {
            let m = (s..s + d).map(|r| g.row(r).amax()).fold(0.0, f64::max);
            dg.rows_mut(s, d).fill(safe(m));
        }
        for r in 0..p {
            a.row_mut(r).scale_mut(da[r]);
        }
        for r in 0..mg {
            g.row_mut(r).scale_mut(dg[r]);
        }
        for k in 0..n {
            a.column_mut(k).scale_mut(dc[k]);
            g.column_mut(k).scale_mut(dc[k]);
        }
        col.component_mul_assign(&dc);
        eq_row.component_mul_assign(&da);
        cone_row.component_mul_assign(&dg);
    }
    let scaled = StandardForm {
        c: sf.c.component_mul(&col),
        obj_const: sf.obj_const,
        a,
        b: sf.b.component_mul(&eq_row),
        g,
        h: sf.h.component_mul(&cone_row),
        cones: sf.cones.clone(),
    };
    (scaled, Scaling { col, eq_row, cone_row })
}
