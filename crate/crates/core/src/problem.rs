//! A fully sampled problem instance and its axiom gate.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{validate_operator_axioms, ModulusConfig, OperatorSpec};
use crate::report::{Axiom, ValidationReport};
use crate::switching::{validate_cost_axioms, validate_data_axioms, ProblemData, SwitchingCosts};

/// Axioms whose failure blocks solving.
pub const REQUIRED_AXIOMS: [Axiom; 7] = [Axiom::F1, Axiom::F2, Axiom::Ellipticity, Axiom::O2, Axiom::O3, Axiom::O4, Axiom::O5];

/// Reported always, blocking only in strict mode.
pub const ADVISORY_AXIOMS: [Axiom; 3] = [Axiom::F4, Axiom::O6, Axiom::O7];

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    /// O3 passes when every cycle sum exceeds `eta`.
    pub eta: f64,
    pub modulus: ModulusConfig,
    pub strict: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { eta: 0.0, modulus: ModulusConfig::default(), strict: false }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub grid: Arc<Grid>,
    /// One operator per mode.
    pub operators: Vec<OperatorSpec>,
    pub costs: SwitchingCosts,
    pub data: ProblemData,
}

impl ProblemInstance {
    /// A single operator is shared by every mode.
    pub fn new(grid: Arc<Grid>, mut operators: Vec<OperatorSpec>, costs: SwitchingCosts, data: ProblemData) -> Result<Self> {
        let m = costs.m();
        if data.m != m {
            return Err(Error::Data(format!("data has {} modes, costs have {m}", data.m)));
        }
        if operators.len() == 1 && m > 1 {
            operators = vec![operators[0].clone(); m];
        }
        if operators.len() != m {
            return Err(Error::Operator(format!("{} operators for {m} modes", operators.len())));
        }
        if costs.values().len() != grid.len() * m * m || data.g.len() != grid.spatial_len() * m || data.f.len() != grid.len() * m {
            return Err(Error::Data("cost or data arrays do not match the grid".into()));
        }
        for op in &operators {
            op.validate_on(&grid)?;
        }
        Ok(Self { grid, operators, costs, data })
    }

    pub fn m(&self) -> usize {
        self.costs.m()
    }

    pub fn validate(&self, opts: &ValidateOptions) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (i, op) in self.operators.iter().enumerate() {
            let mut r = validate_operator_axioms(op, self.grid.domain(), &opts.modulus);
            if self.m() > 1 {
                for e in &mut r.entries {
                    if !e.passed {
                        if let Some(w) = &mut e.witness {
                            w.modes = vec![i + 1];
                        }
                    }
                }
            }
            report.extend(r);
        }
        report.extend(validate_cost_axioms(&self.costs, &self.grid, opts.eta));
        report.extend(validate_data_axioms(&self.costs, &self.data, &self.grid));
        report.merged()
    }

    /// Blocks on required axioms, and on advisory ones when `strict`.
    pub fn gate(report: &ValidationReport, strict: bool) -> Result<()> {
        for e in report.failures() {
            if REQUIRED_AXIOMS.contains(&e.axiom) || (strict && ADVISORY_AXIOMS.contains(&e.axiom)) {
                let detail = match &e.witness {
                    Some(w) => format!("margin {:e}; modes {:?} at {:?}", e.margin, w.modes, w.location),
                    None => format!("margin {:e}", e.margin),
                };
                return Err(Error::Axiom { axiom: e.axiom.id().to_string(), detail });
            }
        }
        Ok(())
    }
}
