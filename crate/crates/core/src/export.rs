//! Hierarchical export of an analysis and of the scratchpad.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cluster::flat_roots;
use crate::descriptors::per_atom_scalars;
use crate::error::{Error, Result};
use crate::extxyz::{self, Frame, Precision};
use crate::model::{Transition, TransitionLabel};
use crate::pipeline::Analysis;
use crate::session::{ScratchContent, ScratchItem, Session, SessionContext, StaleReport};

/// Significant digits of exported coordinates.
pub const EXPORT_DIGITS: usize = 12;
pub const NOTES_FILE: &str = "notes.txt";
pub const ABSORBED_FILE: &str = "absorbed.txt";
pub const REPORT_FILE: &str = "report.html";

/// One exported folder and what went into it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportedFolder {
    pub node: usize,
    pub path: PathBuf,
    pub transitions: Vec<TransitionLabel>,
    pub children: Vec<ExportedFolder>,
}

impl ExportedFolder {
    pub fn leaf_folders(&self) -> Vec<&ExportedFolder> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.leaf_folders()).collect()
        }
    }
}

/// Keeps file-system names portable.
pub fn sanitize(name: &str) -> String {
    let s: String = name
        .trim()
        .chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.' | ' ') { c } else { '_' })
        .collect();
    let s = s.trim_matches(|c| c == '.' || c == ' ').to_string();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

/// Returns `base`, or `base_2`, `base_3`, ... if taken (case-insensitive).
fn unique(base: &str, taken: &mut BTreeSet<String>) -> String {
    let mut name = base.to_string();
    let mut k = 2;
    while taken.contains(&name.to_lowercase()) {
        name = format!("{base}_{k}");
        k += 1;
    }
    taken.insert(name.to_lowercase());
    name
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Two frames (initial, final) with the per-atom scalar channels as
/// extra columns.
pub fn transition_frames(transition: &Transition, channels: &BTreeMap<String, Vec<f64>>) -> [Frame; 2] {
    let frame = |state: &crate::model::AtomicState, idx: usize| {
        let mut f = Frame::new(state.symbols.clone(), state.positions.clone());
        f.info.insert("state_id".into(), state.id.clone());
        f.info.insert("transition".into(), transition.label.to_string());
        f.info.insert("frame".into(), idx.to_string());
        for (name, values) in channels {
            f.push_scalar_column(name.clone(), values);
        }
        f
    };
    [frame(&transition.initial, 0), frame(&transition.terminal, 1)]
}

pub fn write_transition(path: &Path, transition: &Transition, channels: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    extxyz::write(
        path,
        &transition_frames(transition, channels),
        Precision::Significant(EXPORT_DIGITS),
    )
}

fn export_transition(analysis: &Analysis, dir: &Path, dataset_index: usize) -> Result<TransitionLabel> {
    let t = &analysis.dataset.transitions[dataset_index];
    let scalars = per_atom_scalars(&analysis.dataset, dataset_index)?;
    write_transition(&dir.join(format!("{}.extxyz", t.label.file_stem())), t, &scalars.channels)?;
    Ok(t.label.clone())
}

/// Writes one folder per cluster from the root down to the flat clusters
/// at `session.cluster_cutoff`. Flat-cluster folders hold the member
/// transitions; reduced-away duplicates are listed in `absorbed.txt`.
pub fn export_all(session: &Session, analysis: &Analysis, out: &Path) -> Result<ExportedFolder> {
    mkdir(out)?;
    let tree = &analysis.hierarchy.tree;
    let flat: BTreeSet<usize> = flat_roots(tree, session.cluster_cutoff).into_iter().collect();
    let names = session.labels();
    let folder_name = |node: usize| {
        names
            .get(&node)
            .map(|n| sanitize(n))
            .unwrap_or_else(|| format!("cluster_{node}"))
    };

    fn visit(
        node: usize,
        dir: PathBuf,
        analysis: &Analysis,
        session: &Session,
        flat: &BTreeSet<usize>,
        folder_name: &dyn Fn(usize) -> String,
    ) -> Result<ExportedFolder> {
        mkdir(&dir)?;
        if let Some(a) = session.annotation(node) {
            if !a.notes.is_empty() {
                write_text(&dir.join(NOTES_FILE), &a.notes)?;
            }
        }
        let tree = &analysis.hierarchy.tree;
        if flat.contains(&node) {
            let mut transitions = Vec::new();
            let mut sidecar = String::new();
            for leaf in tree.leaves(node) {
                let label = export_transition(analysis, &dir, analysis.dataset_index(leaf))?;
                for absorbed in analysis.reduction.absorbed_by(&label) {
                    let _ = writeln!(sidecar, "{absorbed}\t{label}");
                }
                transitions.push(label);
            }
            if !sidecar.is_empty() {
                write_text(&dir.join(ABSORBED_FILE), &format!("# absorbed\trepresentative\n{sidecar}"))?;
            }
            return Ok(ExportedFolder {
                node,
                path: dir,
                transitions,
                children: Vec::new(),
            });
        }
        let [l, r] = tree.node(node).and_then(|n| n.children).expect("non-flat nodes are internal");
        let mut taken = BTreeSet::from([NOTES_FILE.to_lowercase()]);
        let mut children = Vec::new();
        for c in [l, r] {
            let name = unique(&folder_name(c), &mut taken);
            children.push(visit(c, dir.join(name), analysis, session, flat, folder_name)?);
        }
        Ok(ExportedFolder {
            node,
            path: dir,
            transitions: Vec::new(),
            children,
        })
    }

    let root = tree.root();
    let root_dir = out.join(unique(&folder_name(root), &mut BTreeSet::new()));
    visit(root, root_dir, analysis, session, &flat, &folder_name)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScratchpadExport {
    pub root: PathBuf,
    pub report: PathBuf,
    /// Visual group id → folder.
    pub folders: BTreeMap<u64, PathBuf>,
    pub files: Vec<PathBuf>,
    pub stale: StaleReport,
}

fn item_stem(item: &ScratchItem) -> String {
    match &item.content {
        ScratchContent::Transition { label, .. } => label.file_stem(),
        ScratchContent::Cluster { cluster, .. } => format!("cluster_{}", cluster.node),
        ScratchContent::Text { content, is_title } => {
            let head: String = content.split_whitespace().take(5).collect::<Vec<_>>().join(" ");
            let kind = if *is_title { "title" } else { "note" };
            if head.is_empty() {
                format!("{kind}_{}", item.id)
            } else {
                format!("{kind}_{}_{}", item.id, sanitize(&head))
            }
        }
    }
}

/// Maps the scratchpad onto the file system: one folder per visual group
/// (nested like the groups, named by their titles), transitions as
/// extxyz, clusters as member lists, text as `.txt`, plus `report.html`.
pub fn export_scratchpad(session: &Session, analysis: &Analysis, out: &Path) -> Result<ScratchpadExport> {
    let mut session = session.clone();
    let stale = session.validate(analysis);
    mkdir(out)?;
    let mut folders = BTreeMap::new();
    let mut taken: BTreeMap<Option<u64>, BTreeSet<String>> = BTreeMap::new();
    let mut stack: Vec<(Option<u64>, PathBuf)> = vec![(None, out.to_path_buf())];
    taken.entry(None).or_default().insert(REPORT_FILE.to_string());
    while let Some((parent, dir)) = stack.pop() {
        for g in session.children_of(parent) {
            let name = unique(&sanitize(&session.group_name(g.id)), taken.entry(parent).or_default());
            let path = dir.join(name);
            mkdir(&path)?;
            folders.insert(g.id, path.clone());
            stack.push((Some(g.id), path));
        }
    }

    let mut files = Vec::new();
    let naming_titles: BTreeSet<u64> = session
        .groups
        .iter()
        .filter_map(|g| session.titles_in(Some(g.id)).first().map(|t| t.id))
        .collect();
    for (group, items) in session.items_by_group() {
        let dir = group.map_or_else(|| out.to_path_buf(), |g| folders[&g].clone());
        let names = taken.entry(group).or_default();
        for item in items {
            if naming_titles.contains(&item.id) {
                continue;
            }
            let stem = item_stem(item);
            match &item.content {
                ScratchContent::Transition { label, .. } => {
                    let idx = analysis.dataset.index_of(label).expect("validated");
                    let t = &analysis.dataset.transitions[idx];
                    let scalars = per_atom_scalars(&analysis.dataset, idx)?;
                    let path = dir.join(format!("{}.extxyz", unique(&stem, names)));
                    write_transition(&path, t, &scalars.channels)?;
                    files.push(path);
                }
                ScratchContent::Cluster { cluster, .. } => {
                    let name = session
                        .labels()
                        .get(&cluster.node)
                        .map(|n| sanitize(n))
                        .unwrap_or(stem);
                    let path = dir.join(format!("{}.members.txt", unique(&name, names)));
                    let mut text = format!("# cluster {} (medoid {})\n", cluster.node, cluster.medoid);
                    for leaf in analysis.members(cluster.node)? {
                        let _ = writeln!(text, "{}", analysis.leaf_label(leaf));
                    }
                    write_text(&path, &text)?;
                    files.push(path);
                }
                ScratchContent::Text { content, .. } => {
                    let path = dir.join(format!("{}.txt", unique(&stem, names)));
                    write_text(&path, content)?;
                    files.push(path);
                }
            }
        }
    }
    let report = out.join(REPORT_FILE);
    write_text(&report, &render_report(&session, analysis, &stale))?;
    Ok(ScratchpadExport {
        root: out.to_path_buf(),
        report,
        folders,
        files,
        stale,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Orthographic xy projection of a transition as a small inline SVG:
/// initial positions as dots, displacements as segments.
fn snapshot_svg(t: &Transition, size: f64) -> String {
    let pts = &t.initial.positions;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts.iter().chain(&t.terminal.positions) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let map = |x: f64, a: usize| 4.0 + (x - lo[a]) / span * (size - 8.0);
    let mut s = format!(r#"<svg width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    for (p, q) in pts.iter().zip(&t.terminal.positions) {
        let (x0, y0) = (map(p.x, 0), map(p.y, 1));
        let (x1, y1) = (map(q.x, 0), map(q.y, 1));
        let _ = write!(s, r##"<circle cx="{x0:.1}" cy="{y0:.1}" r="1.5" fill="#888"/>"##);
        if (x1 - x0).abs() + (y1 - y0).abs() > 0.5 {
            let _ = write!(
                s,
                r##"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y1:.1}" stroke="#c33" stroke-width="1"/>"##
            );
        }
    }
    s.push_str("</svg>");
    s
}

pub fn render_report(session: &Session, analysis: &Analysis, stale: &StaleReport) -> String {
    let mut body = String::new();
    let mut groups: Vec<_> = session.groups.iter().collect();
    groups.sort_by_key(|g| session.depth(g.id));
    for g in groups {
        let r = g.rect;
        let _ = write!(
            body,
            r#"<div class="group" style="left:{}px;top:{}px;width:{}px;height:{}px"><span>{}</span></div>"#,
            r.x,
            r.y,
            r.width,
            r.height,
            escape(&session.group_name(g.id))
        );
    }
    for item in &session.scratchpad {
        let [x, y] = item.position;
        let inner = match &item.content {
            ScratchContent::Text { content, is_title } => {
                let tag = if *is_title { "b" } else { "span" };
                format!("<{tag}>{}</{tag}>", escape(content))
            }
            ScratchContent::Transition { label, view } => {
                let svg = analysis
                    .dataset
                    .transition(label)
                    .map(|t| snapshot_svg(t, 120.0))
                    .unwrap_or_default();
                let state = serde_json::to_string(view).unwrap_or_default();
                format!(
                    r#"<div class="title">{}</div>{svg}<pre>{}</pre>"#,
                    escape(&label.to_string()),
                    escape(&state)
                )
            }
            ScratchContent::Cluster { cluster, view } => {
                let name = session
                    .labels()
                    .get(&cluster.node)
                    .cloned()
                    .unwrap_or_else(|| format!("cluster {}", cluster.node));
                let state = serde_json::to_string(view).unwrap_or_default();
                format!(
                    r#"<div class="title">{} ({} transitions, medoid {})</div><pre>{}</pre>"#,
                    escape(&name),
                    cluster.size,
                    escape(&cluster.medoid.to_string()),
                    escape(&state)
                )
            }
        };
        let _ = write!(
            body,
            r#"<div class="item" data-id="{}" style="left:{x}px;top:{y}px">{inner}</div>"#,
            item.id
        );
    }
    let warnings: String = stale
        .lines()
        .iter()
        .map(|l| format!("<li>{}</li>", escape(l)))
        .collect();
    format!(
        r#"<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>Scratchpad report: {name}</title>
<style>
body {{ font-family: sans-serif; margin: 1em; }}
#canvas {{ position: relative; min-height: 600px; border: 1px solid #ccc; }}
.group {{ position: absolute; border: 2px solid #446; background: rgba(60,60,120,0.05); }}
.group > span {{ font-size: 11px; color: #446; }}
.item {{ position: absolute; font-size: 12px; }}
.item pre {{ font-size: 9px; margin: 0; max-width: 240px; white-space: pre-wrap; }}
.title {{ font-weight: bold; }}
</style></head>
<body>
<h1>{name}</h1>
<p>Reduction cutoff {rc}, cluster cutoff {cc}, {items} items, {ngroups} groups.</p>
<ul class="warnings">{warnings}</ul>
<div id="canvas">{body}</div>
</body></html>
"#,
        name = escape(&analysis.dataset.name),
        rc = session.reduction_cutoff,
        cc = session.cluster_cutoff,
        items = session.scratchpad.len(),
        ngroups = session.groups.len(),
    )
}

/// Reads an exported transition file back as its two frames.
pub fn read_transition_file(path: &Path) -> Result<(Frame, Frame)> {
    let mut frames = extxyz::read(path)?;
    if frames.len() != 2 {
        return Err(Error::parse(path, 1, format!("expected 2 frames, found {}", frames.len())));
    }
    let last = frames.pop().unwrap();
    Ok((frames.pop().unwrap(), last))
}

/// The `StaleReport` a session would produce against `analysis`.
pub fn stale_references(session: &Session, analysis: &dyn SessionContext) -> StaleReport {
    session.clone().validate(analysis)
}
