//! Solver-independent description of a mixed-integer conic program and its
//! canonical JSON form.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference to a continuous variable or a binary indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Cont(usize),
    Bin(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub var: Var,
    pub coef: f64,
}

impl Term {
    pub fn new(var: Var, coef: f64) -> Self {
        Self { var, coef }
    }
}

/// `sum(terms) = rhs` for equalities, `sum(terms) <= rhs` for inequalities.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub name: String,
    pub terms: Vec<Term>,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AffineExpr {
    pub terms: Vec<Term>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn var(v: usize) -> Self {
        Self {
            terms: vec![Term::new(Var::Cont(v), 1.0)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, cont: &[f64], bin: &[f64]) -> f64 {
        self.constant + eval_terms(&self.terms, cont, bin)
    }
}

pub(crate) fn eval_terms(terms: &[Term], cont: &[f64], bin: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            t.coef
                * match t.var {
                    Var::Cont(i) => cont[i],
                    Var::Bin(i) => bin[i],
                }
        })
        .sum()
}

/// `head >= || tail ||_2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SocCone {
    pub name: String,
    pub head: usize,
    pub tail: Vec<AffineExpr>,
}

/// One timestep's mixed-integer second-order cone program.
#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgramIR {
    pub variables: Vec<String>,
    pub binaries: Vec<String>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub soc_cones: Vec<SocCone>,
    /// Minimized linear functional.
    pub objective: AffineExpr,
    pub big_m: f64,
}

impl ConicProgramIR {
    pub fn n_continuous(&self) -> usize {
        self.variables.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        if let Some(i) = self.variables.iter().position(|v| v == name) {
            return Some(Var::Cont(i));
        }
        self.binaries.iter().position(|v| v == name).map(Var::Bin)
    }

    pub fn continuous(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn var_name(&self, v: Var) -> &str {
        match v {
            Var::Cont(i) => &self.variables[i],
            Var::Bin(i) => &self.binaries[i],
        }
    }

    pub fn inequality(&self, name: &str) -> Option<&LinearRow> {
        self.inequalities.iter().find(|r| r.name == name)
    }

    pub fn equality(&self, name: &str) -> Option<&LinearRow> {
        self.equalities.iter().find(|r| r.name == name)
    }

    pub fn cone(&self, name: &str) -> Option<&SocCone> {
        self.soc_cones.iter().find(|c| c.name == name)
    }

    /// Checks structural invariants: indices in range, unique names, each
    /// cone head used by one cone only, and binaries confined to
    /// inequality rows.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for (i, v) in self.variables.iter().chain(&self.binaries).enumerate() {
            if !names.insert(v.as_str()) {
                return Err(Error::Validation(format!("variable #{i} '{v}' is declared twice")));
            }
        }
        let check_terms = |terms: &[Term], locus: &str, allow_bin: bool| -> Result<()> {
            for (j, t) in terms.iter().enumerate() {
                let ok = match t.var {
                    Var::Cont(i) => i < self.variables.len(),
                    Var::Bin(i) => allow_bin && i < self.binaries.len(),
                };
                if !ok || !t.coef.is_finite() {
                    return Err(Error::Validation(format!("{locus}.terms[{j}] is invalid")));
                }
            }
            Ok(())
        };
        for (i, r) in self.equalities.iter().enumerate() {
            check_terms(&r.terms, &format!("equalities[{i}]"), false)?;
        }
        for (i, r) in self.inequalities.iter().enumerate() {
            check_terms(&r.terms, &format!("inequalities[{i}]"), true)?;
        }
        check_terms(&self.objective.terms, "objective", false)?;
        let mut heads = HashSet::new();
        for (i, c) in self.soc_cones.iter().enumerate() {
            if c.head >= self.variables.len() {
                return Err(Error::Validation(format!("soc_cones[{i}].head is out of range")));
            }
            if !heads.insert(c.head) {
                return Err(Error::Validation(format!(
                    "variable '{}' heads more than one cone",
                    self.variables[c.head]
                )));
            }
            for (j, e) in c.tail.iter().enumerate() {
                check_terms(&e.terms, &format!("soc_cones[{i}].tail[{j}]"), false)?;
            }
        }
        Ok(())
    }

    /// Canonical JSON document. Floats use the shortest representation that
    /// reads back to the same bits.
    pub fn to_json(&self) -> String {
        let doc = IrDoc::from_ir(self);
        let mut out = serde_json::to_string_pretty(&doc).expect("IR serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: IrDoc = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        doc.into_ir()
    }
}

pub fn serialize_ir(ir: &ConicProgramIR) -> String {
    ir.to_json()
}

pub fn parse_ir(text: &str) -> Result<ConicProgramIR> {
    ConicProgramIR::from_json(text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IrDoc {
    variables: Vec<String>,
    equalities: Vec<RowDoc>,
    inequalities: Vec<RowDoc>,
    soc_cones: Vec<ConeDoc>,
    binaries: Vec<String>,
    objective: ExprDoc,
    big_m: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowDoc {
    name: String,
    terms: Vec<(String, f64)>,
    rhs: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprDoc {
    terms: Vec<(String, f64)>,
    constant: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeDoc {
    name: String,
    head: String,
    tail: Vec<ExprDoc>,
}

impl IrDoc {
    fn from_ir(ir: &ConicProgramIR) -> Self {
        let terms = |ts: &[Term]| ts.iter().map(|t| (ir.var_name(t.var).to_string(), t.coef)).collect();
        let row = |r: &LinearRow| RowDoc {
            name: r.name.clone(),
            terms: terms(&r.terms),
            rhs: r.rhs,
        };
        let expr = |e: &AffineExpr| ExprDoc {
            terms: terms(&e.terms),
            constant: e.constant,
        };
        IrDoc {
            variables: ir.variables.clone(),
            equalities: ir.equalities.iter().map(row).collect(),
            inequalities: ir.inequalities.iter().map(row).collect(),
            soc_cones: ir
                .soc_cones
                .iter()
                .map(|c| ConeDoc {
                    name: c.name.clone(),
                    head: ir.variables[c.head].clone(),
                    tail: c.tail.iter().map(expr).collect(),
                })
                .collect(),
            binaries: ir.binaries.clone(),
            objective: expr(&ir.objective),
            big_m: ir.big_m,
        }
    }

    fn into_ir(self) -> Result<ConicProgramIR> {
        let mut lookup: HashMap<&str, Var> = HashMap::new();
        for (i, v) in self.variables.iter().enumerate() {
            if lookup.insert(v, Var::Cont(i)).is_some() {
                return Err(Error::parse(format!("variables[{i}]"), format!("duplicate variable '{v}'")));
            }
        }
        for (i, v) in self.binaries.iter().enumerate() {
            if lookup.insert(v, Var::Bin(i)).is_some() {
                return Err(Error::parse(format!("binaries[{i}]"), format!("duplicate variable '{v}'")));
            }
        }
        let terms = |ts: &[(String, f64)], locus: &str| -> Result<Vec<Term>> {
            ts.iter()
                .enumerate()
                .map(|(j, (name, coef))| {
                    lookup
                        .get(name.as_str())
                        .map(|&var| Term::new(var, *coef))
                        .ok_or_else(|| Error::parse(format!("{locus}.terms[{j}]"), format!("unknown variable '{name}'")))
                })
                .collect()
        };
        let rows = |rs: &[RowDoc], section: &str| -> Result<Vec<LinearRow>> {
            rs.iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(LinearRow {
                        name: r.name.clone(),
                        terms: terms(&r.terms, &format!("{section}[{i}]"))?,
                        rhs: r.rhs,
                    })
                })
                .collect()
        };
        let equalities = rows(&self.equalities, "equalities")?;
        let inequalities = rows(&self.inequalities, "inequalities")?;
        let mut soc_cones = Vec::with_capacity(self.soc_cones.len());
        for (i, c) in self.soc_cones.iter().enumerate() {
            let head = match lookup.get(c.head.as_str()) {
                Some(Var::Cont(h)) => *h,
                _ => {
                    return Err(Error::parse(
                        format!("soc_cones[{i}].head"),
                        format!("'{}' is not a continuous variable", c.head),
                    ))
                }
            };
            let tail = c
                .tail
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    Ok(AffineExpr {
                        terms: terms(&e.terms, &format!("soc_cones[{i}].tail[{j}]"))?,
                        constant: e.constant,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            soc_cones.push(SocCone {
                name: c.name.clone(),
                head,
                tail,
            });
        }
        let objective = AffineExpr {
            terms: terms(&self.objective.terms, "objective")?,
            constant: self.objective.constant,
        };
        let ir = ConicProgramIR {
            variables: self.variables,
            binaries: self.binaries,
            equalities,
            inequalities,
            soc_cones,
            objective,
            big_m: self.big_m,
        };
        ir.validate().map_err(|e| Error::parse("document", e.to_string()))?;
        Ok(ir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ConicProgramIR {
        ConicProgramIR {
            variables: vec!["t".into(), "a".into()],
            binaries: vec!["z".into()],
            equalities: vec![LinearRow {
                name: "fix".into(),
                terms: vec![Term::new(Var::Cont(1), 1.0)],
                rhs: 0.1 + 0.2,
            }],
            inequalities: vec![LinearRow {
                name: "big_m".into(),
                terms: vec![Term::new(Var::Cont(0), 1.0), Term::new(Var::Bin(0), -3.0)],
                rhs: 0.0,
            }],
            soc_cones: vec![SocCone {
                name: "c".into(),
                head: 0,
                tail: vec![AffineExpr::var(1), AffineExpr { terms: vec![], constant: 4.0 }],
            }],
            objective: AffineExpr {
                terms: vec![Term::new(Var::Cont(0), 1.0)],
                constant: 0.0,
            },
            big_m: 3.0,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ir = tiny();
        let back = parse_ir(&serialize_ir(&ir)).unwrap();
        assert_eq!(back, ir);
        assert_eq!(serialize_ir(&back), serialize_ir(&ir));
    }

    #[test]
    fn missing_objective_is_a_parse_error() {
        let text = serialize_ir(&tiny());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("objective");
        let err = parse_ir(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("objective"));
    }

    #[test]
    fn unknown_variable_reports_locus() {
        let mut v: serde_json::Value = serde_json::from_str(&serialize_ir(&tiny())).unwrap();
        v["equalities"][0]["terms"][0][0] = "nope".into();
        let err = parse_ir(&v.to_string()).unwrap_err();
        match err {
            Error::Parse { locus, .. } => assert_eq!(locus, "equalities[0].terms[0]"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn binaries_in_equalities_are_rejected() {
        let mut ir = tiny();
        ir.equalities[0].terms.push(Term::new(Var::Bin(0), 1.0));
        assert!(ir.validate().is_err());
    }

    #[test]
    fn shared_cone_head_is_rejected() {
        let mut ir = tiny();
        let c = ir.soc_cones[0].clone();
        ir.soc_cones.push(c);
        assert!(ir.validate().is_err());
    }
}
