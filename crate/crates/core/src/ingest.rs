//! Dataset manifest, loading, validation and writing.
//!
//! A dataset is described by a TOML manifest:
//!
//! ```toml
//! name = "pt147"
//! bond_cutoff = 3.3          # optional, Å
//! feature_dir = "features"   # optional, looked up as <dir>/<state_id>.npy|.csv
//!
//! [[transitions]]
//! file = "transitions/t0.extxyz"   # two frames: initial, final
//! initial = "s0"                   # optional if frames carry state_id=...
//! final = "s1"
//!
//! [[transitions]]
//! initial_file = "states/s1.extxyz"
//! final_file = "states/s2.extxyz"
//!
//! [[features]]
//! state = "s0"
//! file = "features/s0.npy"         # or .csv, n rows × k columns
//!
//! [[scalars]]
//! name = "cna"
//! file = "scalars/cna.csv"         # rows: initial,final,v_1,...,v_n
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::bonds::{self, BondGraph, BondSet};
use crate::error::{Error, Result};
use crate::extxyz::{self, Frame, Precision};
use crate::model::{AtomicState, FeatureMatrix, ScalarField, Transition, TransitionLabel};
use crate::npy;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    name: Option<String>,
    bond_cutoff: Option<f64>,
    feature_dir: Option<PathBuf>,
    #[serde(default)]
    transitions: Vec<TransitionEntry>,
    #[serde(default)]
    features: Vec<FeatureEntry>,
    #[serde(default)]
    scalars: Vec<ScalarEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub file: Option<PathBuf>,
    pub initial_file: Option<PathBuf>,
    pub final_file: Option<PathBuf>,
    pub initial: Option<String>,
    #[serde(rename = "final")]
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub state: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarEntry {
    pub name: String,
    pub file: PathBuf,
}

/// Parsed manifest with all paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub name: String,
    pub bond_cutoff: Option<f64>,
    pub feature_dir: Option<PathBuf>,
    pub transitions: Vec<TransitionEntry>,
    pub features: Vec<FeatureEntry>,
    pub scalars: Vec<ScalarEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut transitions = raw.transitions;
        for (i, t) in transitions.iter_mut().enumerate() {
            let ok = match (&t.file, &t.initial_file, &t.final_file) {
                (Some(_), None, None) | (None, Some(_), Some(_)) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!(
                        "transition entry {i} needs either `file` or both `initial_file` and `final_file`"
                    ),
                });
            }
            t.file = t.file.as_ref().map(resolve);
            t.initial_file = t.initial_file.as_ref().map(resolve);
            t.final_file = t.final_file.as_ref().map(resolve);
        }
        if let Some(c) = raw.bond_cutoff {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!("bond_cutoff must be positive, got {c}"),
                });
            }
        }
        let name = raw.name.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
        Ok(Self {
            path: path.to_path_buf(),
            name,
            bond_cutoff: raw.bond_cutoff,
            feature_dir: raw.feature_dir.as_ref().map(resolve),
            transitions,
            features: raw
                .features
                .into_iter()
                .map(|f| FeatureEntry {
                    file: resolve(&f.file),
                    state: f.state,
                })
                .collect(),
            scalars: raw
                .scalars
                .into_iter()
                .map(|s| ScalarEntry {
                    file: resolve(&s.file),
                    name: s.name,
                })
                .collect(),
        })
    }
}

/// Immutable, validated transition ensemble.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub transitions: Vec<Transition>,
    pub features: BTreeMap<String, Arc<FeatureMatrix>>,
    pub scalars: Vec<ScalarField>,
    pub bond_cutoff: f64,
    pub bonds: Vec<BondGraph>,
    index: HashMap<TransitionLabel, usize>,
}

impl Dataset {
    /// Validates the parts and computes bond connectivity for every state.
    /// With `bond_cutoff = None` the cutoff is the median of the per-state
    /// default cutoffs.
    pub fn from_parts(
        name: impl Into<String>,
        transitions: Vec<Transition>,
        features: BTreeMap<String, FeatureMatrix>,
        scalars: Vec<ScalarField>,
        bond_cutoff: Option<f64>,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let mut index = HashMap::with_capacity(transitions.len());
        for (i, t) in transitions.iter().enumerate() {
            if index.insert(t.label.clone(), i).is_some() {
                return Err(Error::DuplicateTransition(t.label.to_string()));
            }
        }

        let mut states: BTreeMap<&str, &Arc<AtomicState>> = BTreeMap::new();
        for t in &transitions {
            for s in [&t.initial, &t.terminal] {
                if let Some(prev) = states.insert(s.id.as_str(), s) {
                    if !Arc::ptr_eq(prev, s) && prev.as_ref() != s.as_ref() {
                        return Err(Error::StateMismatch {
                            state: s.id.clone(),
                            message: "appears with two different geometries".into(),
                        });
                    }
                }
            }
        }
        let n = transitions[0].atom_count();
        for (id, s) in &states {
            if s.len() != n {
                return Err(Error::StateMismatch {
                    state: id.to_string(),
                    message: format!("has {} atoms, expected {n}", s.len()),
                });
            }
        }

        // every referenced state needs features; k must agree everywhere
        let mut k_votes: BTreeMap<usize, usize> = BTreeMap::new();
        for id in states.keys() {
            let f = features.get(*id).ok_or_else(|| Error::StateMismatch {
                state: id.to_string(),
                message: "no feature matrix".into(),
            })?;
            if f.rows() != n {
                return Err(Error::StateMismatch {
                    state: id.to_string(),
                    message: format!("feature matrix has {} rows, expected {n}", f.rows()),
                });
            }
            *k_votes.entry(f.cols()).or_default() += 1;
        }
        if k_votes.len() > 1 {
            let (&k, _) = k_votes.iter().max_by_key(|(k, c)| (**c, std::cmp::Reverse(**k))).unwrap();
            let offender = states
                .keys()
                .find(|id| features[**id].cols() != k)
                .unwrap();
            return Err(Error::StateMismatch {
                state: offender.to_string(),
                message: format!(
                    "feature matrix has {} columns, expected {k}",
                    features[*offender].cols()
                ),
            });
        }

        for sf in &scalars {
            for (label, v) in &sf.per_transition {
                if !index.contains_key(label) {
                    return Err(Error::Validation(format!(
                        "scalar `{}` references unknown transition {label}",
                        sf.name
                    )));
                }
                if v.len() != n {
                    return Err(Error::Validation(format!(
                        "scalar `{}` has {} values for {label}, expected {n}",
                        sf.name,
                        v.len()
                    )));
                }
            }
        }

        let unique: Vec<&Arc<AtomicState>> = states.values().copied().collect();
        let cutoff = match bond_cutoff {
            Some(c) => c,
            None if n < 2 => 1.0,
            None => {
                let mut per_state = unique
                    .par_iter()
                    .map(|s| bonds::default_bond_cutoff(s))
                    .collect::<Result<Vec<f64>>>()?;
                bonds::median(&mut per_state)
            }
        };
        let bond_sets: HashMap<&str, Arc<BondSet>> = unique
            .par_iter()
            .map(|s| Ok((s.id.as_str(), Arc::new(bonds::compute_bonds(s, cutoff)?))))
            .collect::<Result<_>>()?;
        let bonds = transitions
            .iter()
            .map(|t| BondGraph {
                label: t.label.clone(),
                initial: Arc::clone(&bond_sets[t.initial.id.as_str()]),
                terminal: Arc::clone(&bond_sets[t.terminal.id.as_str()]),
            })
            .collect();

        let features = features
            .into_iter()
            .filter(|(id, _)| states.contains_key(id.as_str()))
            .map(|(id, f)| (id, Arc::new(f)))
            .collect();

        Ok(Self {
            name: name.into(),
            transitions,
            features,
            scalars,
            bond_cutoff: cutoff,
            bonds,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.transitions[0].atom_count()
    }

    pub fn feature_count(&self) -> usize {
        self.features.values().next().map_or(0, |f| f.cols())
    }

    pub fn state_count(&self) -> usize {
        self.features.len()
    }

    pub fn labels(&self) -> Vec<TransitionLabel> {
        self.transitions.iter().map(|t| t.label.clone()).collect()
    }

    pub fn index_of(&self, label: &TransitionLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn transition(&self, label: &TransitionLabel) -> Option<&Transition> {
        self.index_of(label).map(|i| &self.transitions[i])
    }

    /// Feature matrices of the initial and final state of transition `t`.
    pub fn features_of(&self, t: usize) -> (&FeatureMatrix, &FeatureMatrix) {
        let tr = &self.transitions[t];
        (
            &self.features[&tr.initial.id],
            &self.features[&tr.terminal.id],
        )
    }

    pub fn scalar(&self, name: &str) -> Option<&ScalarField> {
        self.scalars.iter().find(|s| s.name == name)
    }

    /// SHA-256 over labels, geometry and features; independent of the name
    /// and of file layout.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.transitions {
            h.update(t.label.0.as_bytes());
            h.update([0u8]);
            h.update(t.label.1.as_bytes());
            h.update([0u8]);
            for s in [&t.initial, &t.terminal] {
                for (sym, p) in s.symbols.iter().zip(&s.positions) {
                    h.update(sym.as_bytes());
                    for c in p.iter() {
                        h.update(c.to_le_bytes());
                    }
                }
            }
        }
        for (id, f) in &self.features {
            h.update(id.as_bytes());
            h.update([0u8]);
            for v in f.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn frame_state(frame: Frame, id: Option<&String>, path: &Path) -> Result<AtomicState> {
    let id = match id {
        Some(id) => id.clone(),
        None => frame.info.get("state_id").cloned().ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            message: "frame has no state_id and the manifest names none".into(),
        })?,
    };
    AtomicState::new(id, frame.positions, frame.species)
}

fn read_features(path: &Path, state: &str) -> Result<FeatureMatrix> {
    let is_npy = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("npy"));
    if is_npy {
        let a = npy::read(path)?;
        return FeatureMatrix::new(state, a.rows, a.cols, a.data);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad number `{}`", s.trim())))
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {c} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    FeatureMatrix::new(state, rows, cols.unwrap_or(0), data)
}

fn read_scalars(path: &Path, name: &str) -> Result<ScalarField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut per = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::parse(path, lineno + 1, "expected initial,final,values..."));
        }
        let values = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        per.insert(TransitionLabel::new(fields[0], fields[1]), values);
    }
    ScalarField::new(name, per)
}

/// Loads and validates the dataset described by the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    load_manifest(&manifest)
}

pub fn load_manifest(manifest: &DatasetManifest) -> Result<Dataset> {
    let mut states: HashMap<String, Arc<AtomicState>> = HashMap::new();
    let mut intern = |s: AtomicState| -> Result<Arc<AtomicState>> {
        if let Some(prev) = states.get(&s.id) {
            if prev.as_ref() != &s {
                return Err(Error::StateMismatch {
                    state: s.id,
                    message: "appears with two different geometries".into(),
                });
            }
            return Ok(Arc::clone(prev));
        }
        let a = Arc::new(s);
        states.insert(a.id.clone(), Arc::clone(&a));
        Ok(a)
    };

    let mut transitions = Vec::with_capacity(manifest.transitions.len());
    for entry in &manifest.transitions {
        let (a, b) = if let Some(file) = &entry.file {
            let mut frames = extxyz::read(file)?;
            if frames.len() != 2 {
                return Err(Error::Manifest {
                    path: file.clone(),
                    message: format!("expected 2 frames, found {}", frames.len()),
                });
            }
            let b = frames.pop().unwrap();
            let a = frames.pop().unwrap();
            (
                frame_state(a, entry.initial.as_ref(), file)?,
                frame_state(b, entry.terminal.as_ref(), file)?,
            )
        } else {
            let fa = entry.initial_file.as_ref().unwrap();
            let fb = entry.final_file.as_ref().unwrap();
            let read_one = |p: &PathBuf| -> Result<Frame> {
                let mut frames = extxyz::read(p)?;
                if frames.is_empty() {
                    return Err(Error::Manifest {
                        path: p.clone(),
                        message: "no frames".into(),
                    });
                }
                Ok(frames.swap_remove(0))
            };
            let a = read_one(fa)?;
            let b = read_one(fb)?;
            (
                frame_state(a, entry.initial.as_ref(), fa)?,
                frame_state(b, entry.terminal.as_ref(), fb)?,
            )
        };
        transitions.push(Transition::new(intern(a)?, intern(b)?)?);
    }

    let mut features = BTreeMap::new();
    for f in &manifest.features {
        features.insert(f.state.clone(), read_features(&f.file, &f.state)?);
    }
    if let Some(dir) = &manifest.feature_dir {
        let mut ids: Vec<&String> = states.keys().collect();
        ids.sort();
        for id in ids {
            if features.contains_key(id) {
                continue;
            }
            let npy_path = dir.join(format!("{id}.npy"));
            let csv_path = dir.join(format!("{id}.csv"));
            let path = if npy_path.exists() { npy_path } else { csv_path };
            features.insert(id.clone(), read_features(&path, id)?);
        }
    }
    let scalars = manifest
        .scalars
        .iter()
        .map(|s| read_scalars(&s.file, &s.name))
        .collect::<Result<Vec<_>>>()?;

    Dataset::from_parts(
        manifest.name.clone(),
        transitions,
        features,
        scalars,
        manifest.bond_cutoff,
    )
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes the dataset as a manifest plus extxyz/npy/csv files under `dir`
/// with bit-exact float formatting. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mk = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let tdir = dir.join("transitions");
    let fdir = dir.join("features");
    mk(&tdir)?;
    mk(&fdir)?;

    let mut m = String::new();
    let _ = writeln!(m, "name = {}", toml_str(&dataset.name));
    let _ = writeln!(m, "bond_cutoff = {:?}", dataset.bond_cutoff);
    for (i, t) in dataset.transitions.iter().enumerate() {
        let file = format!("transitions/{i:05}_{}.extxyz", t.label.file_stem());
        let frames: Vec<Frame> = [&t.initial, &t.terminal]
            .iter()
            .map(|s| {
                let mut f = Frame::new(s.symbols.clone(), s.positions.clone());
                f.info.insert("state_id".into(), s.id.clone());
                f
            })
            .collect();
        extxyz::write(&dir.join(&file), &frames, Precision::RoundTrip)?;
        let _ = writeln!(
            m,
            "\n[[transitions]]\nfile = {}\ninitial = {}\nfinal = {}",
            toml_str(&file),
            toml_str(t.label.initial()),
            toml_str(t.label.terminal())
        );
    }
    for (i, (id, f)) in dataset.features.iter().enumerate() {
        let file = format!("features/{i:05}_{}.npy", safe_name(id));
        npy::write(
            &dir.join(&file),
            &npy::Array2 {
                rows: f.rows(),
                cols: f.cols(),
                data: f.as_slice().to_vec(),
            },
        )?;
        let _ = writeln!(
            m,
            "\n[[features]]\nstate = {}\nfile = {}",
            toml_str(id),
            toml_str(&file)
        );
    }
    if !dataset.scalars.is_empty() {
        let sdir = dir.join("scalars");
        mk(&sdir)?;
        for (i, sf) in dataset.scalars.iter().enumerate() {
            let file = format!("scalars/{i:03}_{}.csv", safe_name(&sf.name));
            let mut body = String::new();
            for (label, values) in &sf.per_transition {
                let _ = write!(body, "{},{}", label.0, label.1);
                for v in values {
                    let _ = write!(body, ",{v:?}");
                }
                body.push('\n');
            }
            let p = dir.join(&file);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            let _ = writeln!(
                m,
                "\n[[scalars]]\nname = {}\nfile = {}",
                toml_str(&sf.name),
                toml_str(&file)
            );
        }
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, m).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn toml_str(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
