//! Verdicts produced by the axiom validators and the sub/supersolution checks.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Axiom {
    F1,
    F2,
    F4,
    Ellipticity,
    O2,
    O3,
    O4,
    O5,
    O6,
    O7,
    /// Min-form inequality at interior nodes.
    Equation,
    /// Ordering against `g` on the initial face.
    InitialData,
    /// Ordering against `f` on the spatial boundary.
    BoundaryData,
    Comparison,
}

impl Axiom {
    pub fn id(&self) -> &'static str {
        match self {
            Axiom::F1 => "F1",
            Axiom::F2 => "F2",
            Axiom::F4 => "F4",
            Axiom::Ellipticity => "ellipticity",
            Axiom::O2 => "O2",
            Axiom::O3 => "O3",
            Axiom::O4 => "O4",
            Axiom::O5 => "O5",
            Axiom::O6 => "O6",
            Axiom::O7 => "O7",
            Axiom::Equation => "equation",
            Axiom::InitialData => "initial-data",
            Axiom::BoundaryData => "boundary-data",
            Axiom::Comparison => "comparison",
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Where and with which numbers a check attained its worst margin.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Witness {
    /// Full-grid node index, when the check is node based.
    pub node: Option<usize>,
    /// 1-based mode indices involved (cycle, triple, pair, ...).
    pub modes: Vec<usize>,
    /// Coordinates `(y, x1, .., xn)` of the witness.
    pub location: Vec<f64>,
    pub values: Vec<(String, f64)>,
}

impl Witness {
    pub fn at(node: usize, location: Vec<f64>) -> Self {
        Self { node: Some(node), location, ..Self::default() }
    }

    pub fn modes(mut self, modes: impl IntoIterator<Item = usize>) -> Self {
        self.modes = modes.into_iter().collect();
        self
    }

    pub fn value(mut self, name: impl Into<String>, v: f64) -> Self {
        self.values.push((name.into(), v));
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry {
    pub axiom: Axiom,
    pub passed: bool,
    /// Signed slack of the worst case; negative means violated.
    pub margin: f64,
    /// Number of violating samples or nodes.
    pub violations: usize,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

/// Running minimum of a margin together with its witness.
#[derive(Debug, Clone)]
pub struct Tracker {
    axiom: Axiom,
    margin: f64,
    witness: Option<Witness>,
    violations: usize,
    threshold: f64,
    strict: bool,
}

impl Tracker {
    /// Margins below `threshold` count as violations.
    pub fn new(axiom: Axiom, threshold: f64) -> Self {
        Self { axiom, margin: f64::INFINITY, witness: None, violations: 0, threshold, strict: false }
    }

    /// Margins at or below `threshold` count as violations.
    pub fn strict(axiom: Axiom, threshold: f64) -> Self {
        Self { strict: true, ..Self::new(axiom, threshold) }
    }

    /// Records a margin; the witness closure only runs for a new worst case.
    pub fn observe(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        if margin < self.threshold || (self.strict && margin == self.threshold) || margin.is_nan() {
            self.violations += 1;
        }
        if margin < self.margin || (margin.is_nan() && !self.margin.is_nan()) {
            self.margin = margin;
            self.witness = Some(witness());
        }
    }

    pub fn merge(&mut self, other: Tracker) {
        self.violations += other.violations;
        if other.margin < self.margin || (other.margin.is_nan() && !self.margin.is_nan()) {
            self.margin = other.margin;
            self.witness = other.witness;
        }
    }

    pub fn finish(self) -> Entry {
        Entry {
            axiom: self.axiom,
            passed: self.violations == 0,
            margin: self.margin,
            violations: self.violations,
            witness: self.witness,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<Entry>,
}

impl ValidationReport {
    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.entries.extend(other.entries);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, axiom: Axiom) -> Option<&Entry> {
        self.entries.iter().find(|e| e.axiom == axiom)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    /// Passes when every listed axiom that is present passed.
    pub fn passed_all_of(&self, axioms: &[Axiom]) -> bool {
        self.entries.iter().filter(|e| axioms.contains(&e.axiom)).all(|e| e.passed)
    }

    /// Folds entries sharing an axiom into one: worst margin and its witness, summed violations.
    pub fn merged(self) -> Self {
        let mut out: Vec<Entry> = Vec::new();
        for e in self.entries {
            match out.iter_mut().find(|o| o.axiom == e.axiom) {
                None => out.push(e),
                Some(o) => {
                    o.passed &= e.passed;
                    o.violations += e.violations;
                    if e.margin < o.margin || (e.margin.is_nan() && !o.margin.is_nan()) {
                        o.margin = e.margin;
                        o.witness = e.witness;
                    }
                    if o.note.is_none() {
                        o.note = e.note;
                    }
                }
            }
        }
        Self { entries: out }
    }

    /// Smallest margin over all entries.
    pub fn worst_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin).fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(f, "{:<14} {} margin={:e} violations={}", e.axiom.id(), if e.passed { "PASS" } else { "FAIL" }, e.margin, e.violations)?;
            if let Some(w) = &e.witness {
                if !e.passed {
                    write!(f, " witness: node={:?} modes={:?} at={:?}", w.node, w.modes, w.location)?;
                    for (k, v) in &w.values {
                        write!(f, " {k}={v}")?;
                    }
                }
            }
            if let Some(n) = &e.note {
                write!(f, " ({n})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
