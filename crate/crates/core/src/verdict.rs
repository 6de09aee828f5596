use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The check could not run on the given inputs (for example an empty
    /// sample). Never to be read as a pass.
    Inconclusive,
}

/// A point where a check was violated, or where it came closest to being
/// violated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    pub magnitude: f64,
}

impl Witness {
    pub fn at(x: &[f64], magnitude: f64) -> Self {
        Self { x: x.to_vec(), times: Vec::new(), magnitude }
    }

    pub fn at_time(x: &[f64], t: f64, magnitude: f64) -> Self {
        Self { x: x.to_vec(), times: vec![t], magnitude }
    }
}

/// Outcome of a sampled check. A `pass` is falsification-style: no
/// violation was found at the sampled resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    pub witness: Option<Witness>,
    pub tolerance: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn new(check: impl Into<String>, status: Status, tolerance: f64, samples: usize) -> Self {
        Self {
            check: check.into(),
            status,
            witness: None,
            tolerance,
            samples,
            note: None,
        }
    }

    pub fn with_witness(mut self, w: Option<Witness>) -> Self {
        self.witness = w;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// Keeps the largest violation seen so far; ties go to the earlier sample.
#[derive(Debug, Default)]
pub(crate) struct WorstCase {
    best: Option<Witness>,
}

impl WorstCase {
    pub fn offer(&mut self, magnitude: f64, make: impl FnOnce() -> Witness) {
        let better = match &self.best {
            None => true,
            Some(w) => magnitude > w.magnitude,
        };
        if better {
            let mut w = make();
            w.magnitude = magnitude;
            self.best = Some(w);
        }
    }

    pub fn magnitude(&self) -> Option<f64> {
        self.best.as_ref().map(|w| w.magnitude)
    }

    pub fn into_witness(self) -> Option<Witness> {
        self.best
    }
}
