//! The built-in tautology table.

use std::io;

use serde::Serialize;

use super::{consistency, ConsistencyError, ConsistencyEstimate, IntegrationConfig};
use crate::formula::{parse_formula, Formula};
use crate::semantics::TNorm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tautology {
    pub group: &'static str,
    pub text: &'static str,
}

impl Tautology {
    pub fn formula(&self) -> Formula {
        parse_formula(self.text).expect("built-in tautology parses")
    }
}

const fn t(group: &'static str, text: &'static str) -> Tautology {
    Tautology { group, text }
}

pub const TAUTOLOGIES: [Tautology; 22] = [
    t("axiom schemata", "P -> (Q -> P)"),
    t("axiom schemata", "(P -> (Q -> R)) -> ((P -> Q) -> (P -> R))"),
    t("axiom schemata", "(~P -> ~Q) -> (Q -> P)"),
    t("primitive propositions", "(P | P) -> P"),
    t("primitive propositions", "Q -> (P | Q)"),
    t("primitive propositions", "(P | Q) -> (Q | P)"),
    t("primitive propositions", "(P | (Q | R)) -> (Q | (P | R))"),
    t("primitive propositions", "(Q -> R) -> ((P | Q) -> (P | R))"),
    t("excluded middle", "P | ~P"),
    t("contradiction", "~(P & ~P)"),
    t("double negation", "P <-> ~(~P)"),
    t("transposition", "(P <-> Q) <-> (~P <-> ~Q)"),
    t("transposition", "((P & Q) -> R) <-> ((P & ~R) -> ~Q)"),
    t("tautology", "P <-> (P & P)"),
    t("tautology", "P <-> (P | P)"),
    t("absorption", "(P -> Q) <-> (P <-> (P & Q))"),
    t("absorption", "Q -> (P <-> (P & Q))"),
    t("distribution", "(P & (Q | R)) <-> ((P & Q) | (P & R))"),
    t("distribution", "(P | (Q & R)) <-> ((P | Q) & (P | R))"),
    t("de morgan", "(P & Q) <-> ~(~P | ~Q)"),
    t("de morgan", "~(P & Q) <-> (~P | ~Q)"),
    t("material excluded middle", "(P -> Q) | (Q -> P)"),
];

/// Column order of the table.
pub const TABLE_FAMILIES: [TNorm; 5] = [
    TNorm::SProduct,
    TNorm::SGodel,
    TNorm::Lukasiewicz,
    TNorm::RProduct,
    TNorm::RGodel,
];

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub group: &'static str,
    pub tautology: &'static str,
    /// One estimate per family, in the table's family order.
    pub cells: Vec<(TNorm, ConsistencyEstimate)>,
}

impl SuiteRow {
    pub fn get(&self, family: TNorm) -> Option<&ConsistencyEstimate> {
        self.cells.iter().find(|(t, _)| *t == family).map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteTable {
    pub families: Vec<TNorm>,
    pub rows: Vec<SuiteRow>,
}

impl SuiteTable {
    pub fn row(&self, text: &str) -> Option<&SuiteRow> {
        self.rows.iter().find(|r| r.tautology == text)
    }

    /// Columns: `group, tautology`, then `<family>, <family>_stderr` per
    /// family.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["group".to_string(), "tautology".to_string()];
        for t in &self.families {
            header.push(t.name().to_string());
            header.push(format!("{}_stderr", t.name()));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.group.to_string(), row.tautology.to_string()];
            for (_, e) in &row.cells {
                rec.push(format!("{:.6}", e.value));
                rec.push(format!("{:.6}", e.std_error));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Integrates every built-in tautology under every family in `families`.
pub fn tautology_suite(
    families: &[TNorm],
    cfg: &IntegrationConfig,
) -> Result<SuiteTable, ConsistencyError> {
    let rows = TAUTOLOGIES
        .iter()
        .map(|taut| {
            let f = taut.formula();
            let cells = families
                .iter()
                .map(|&fam| Ok((fam, consistency(&f, fam, cfg)?)))
                .collect::<Result<Vec<_>, ConsistencyError>>()?;
            Ok(SuiteRow {
                group: taut.group,
                tautology: taut.text,
                cells,
            })
        })
        .collect::<Result<Vec<_>, ConsistencyError>>()?;
    Ok(SuiteTable {
        families: families.to_vec(),
        rows,
    })
}
