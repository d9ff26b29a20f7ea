//! Core domain types: atomic states, transitions, per-atom feature matrices
//! and scalar channels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// One atomic configuration. Row `i` of `positions` is the same physical atom
/// in every state of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicState {
    pub id: String,
    pub positions: Vec<Vec3>,
    pub symbols: Vec<String>,
}

impl AtomicState {
    pub fn new(id: impl Into<String>, positions: Vec<Vec3>, symbols: Vec<String>) -> Result<Self> {
        let id = id.into();
        if positions.is_empty() {
            return Err(Error::StateMismatch {
                state: id,
                message: "state has no atoms".into(),
            });
        }
        if symbols.len() != positions.len() {
            return Err(Error::StateMismatch {
                state: id,
                message: format!(
                    "{} element symbols for {} positions",
                    symbols.len(),
                    positions.len()
                ),
            });
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::StateMismatch {
                state: id,
                message: format!("non-finite coordinate on atom {i}"),
            });
        }
        Ok(Self {
            id,
            positions,
            symbols,
        })
    }

    /// Convenience constructor for single-element systems.
    pub fn uniform(id: impl Into<String>, positions: Vec<Vec3>, symbol: &str) -> Result<Self> {
        let symbols = vec![symbol.to_string(); positions.len()];
        Self::new(id, positions, symbols)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Ordered pair of state ids `(initial, final)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransitionLabel(pub String, pub String);

impl TransitionLabel {
    pub fn new(initial: impl Into<String>, terminal: impl Into<String>) -> Self {
        Self(initial.into(), terminal.into())
    }

    pub fn initial(&self) -> &str {
        &self.0
    }

    pub fn terminal(&self) -> &str {
        &self.1
    }

    pub fn reversed(&self) -> Self {
        Self(self.1.clone(), self.0.clone())
    }

    /// File-system friendly stem, e.g. `s12_to_s13`.
    pub fn file_stem(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        format!("{}_to_{}", clean(&self.0), clean(&self.1))
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.0, self.1)
    }
}

impl FromStr for TransitionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once("->") {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(Self::new(a, b)),
            _ => Err(Error::InvalidArgument(format!(
                "transition label `{s}` is not of the form initial->final"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub label: TransitionLabel,
    pub initial: Arc<AtomicState>,
    pub terminal: Arc<AtomicState>,
}

impl Transition {
    pub fn new(initial: Arc<AtomicState>, terminal: Arc<AtomicState>) -> Result<Self> {
        if initial.len() != terminal.len() {
            return Err(Error::StateMismatch {
                state: terminal.id.clone(),
                message: format!(
                    "has {} atoms but initial state `{}` has {}",
                    terminal.len(),
                    initial.id,
                    initial.len()
                ),
            });
        }
        if let Some(i) = (0..initial.len()).find(|&i| initial.symbols[i] != terminal.symbols[i]) {
            return Err(Error::StateMismatch {
                state: terminal.id.clone(),
                message: format!(
                    "atom {i} is `{}` but `{}` in initial state `{}`",
                    terminal.symbols[i], initial.symbols[i], initial.id
                ),
            });
        }
        Ok(Self {
            label: TransitionLabel::new(initial.id.clone(), terminal.id.clone()),
            initial,
            terminal,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.initial.len()
    }

    /// The same transition with initial and final states exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            label: self.label.reversed(),
            initial: Arc::clone(&self.terminal),
            terminal: Arc::clone(&self.initial),
        }
    }
}

/// Dense `n × k` per-atom feature matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub state_id: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(state_id: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let state_id = state_id.into();
        if cols == 0 {
            return Err(Error::StateMismatch {
                state: state_id,
                message: "feature matrix has zero columns".into(),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::StateMismatch {
                state: state_id,
                message: "feature matrix contains non-finite values".into(),
            });
        }
        Ok(Self {
            state_id,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(state_id: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            state_id: state_id.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Reorders rows so that new row `r` is old row `perm[r]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self {
            state_id: self.state_id.clone(),
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// A named per-atom scalar channel with its ensemble-wide range.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub name: String,
    pub per_transition: BTreeMap<TransitionLabel, Vec<f64>>,
    pub global_min: f64,
    pub global_max: f64,
}

impl ScalarField {
    pub fn new(name: impl Into<String>, per_transition: BTreeMap<TransitionLabel, Vec<f64>>) -> Result<Self> {
        let name = name.into();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for values in per_transition.values() {
            for &v in values {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("scalar field `{name}`")));
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo > hi {
            lo = 0.0;
            hi = 0.0;
        }
        Ok(Self {
            name,
            per_transition,
            global_min: lo,
            global_max: hi,
        })
    }
}
