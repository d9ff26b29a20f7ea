//! Analyst session state and its JSON persistence.
//!
//! Clusters are referenced by node id together with the medoid label and
//! size that the node had when the reference was made. A reference whose
//! node id no longer matches is re-resolved by `(medoid, size)`; if that
//! fails it is reported as stale and dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TransitionLabel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterRef {
    pub node: usize,
    pub medoid: TransitionLabel,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub cluster: ClusterRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualizationMode {
    #[default]
    Atom,
    Superquadric,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub zoom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    #[serde(default)]
    pub mode: VisualizationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    /// Interpolation parameter between the initial (0) and final (1) state.
    #[serde(default)]
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<String>,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            mode: VisualizationMode::Atom,
            camera: None,
            s: 0.0,
            scalar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScratchContent {
    Transition { label: TransitionLabel, view: ViewSpec },
    Cluster { cluster: ClusterRef, view: ViewSpec },
    Text { content: String, is_title: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScratchItem {
    pub id: u64,
    pub position: [f64; 2],
    #[serde(flatten)]
    pub content: ScratchContent,
}

impl ScratchItem {
    pub fn is_title(&self) -> bool {
        matches!(self.content, ScratchContent::Text { is_title: true, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.x + self.width && p[1] >= self.y && p[1] <= self.y + self.height
    }

    pub fn contains_rect(&self, r: &Rect) -> bool {
        r.x >= self.x && r.y >= self.y && r.x + r.width <= self.x + self.width && r.y + r.height <= self.y + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualGroup {
    pub id: u64,
    pub rect: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub dataset_hash: String,
    pub reduction_cutoff: f64,
    pub cluster_cutoff: f64,
    #[serde(default)]
    pub annotations: Vec<NodeAnnotation>,
    #[serde(default)]
    pub scratchpad: Vec<ScratchItem>,
    #[serde(default)]
    pub groups: Vec<VisualGroup>,
}

/// References that did not survive validation against an analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StaleReport {
    pub hash_mismatch: bool,
    pub dropped_transitions: Vec<TransitionLabel>,
    pub dropped_clusters: Vec<ClusterRef>,
    pub remapped_clusters: Vec<(ClusterRef, ClusterRef)>,
    pub dropped_groups: Vec<u64>,
}

impl StaleReport {
    pub fn is_clean(&self) -> bool {
        !self.hash_mismatch
            && self.dropped_transitions.is_empty()
            && self.dropped_clusters.is_empty()
            && self.dropped_groups.is_empty()
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.hash_mismatch {
            out.push("session was saved against a different dataset".to_string());
        }
        out.extend(self.dropped_transitions.iter().map(|l| format!("dropped transition {l}")));
        out.extend(
            self.dropped_clusters
                .iter()
                .map(|c| format!("dropped cluster {} (medoid {}, {} members)", c.node, c.medoid, c.size)),
        );
        out.extend(self.dropped_groups.iter().map(|g| format!("dropped visual group {g}")));
        out
    }
}

/// What a session is validated against.
pub trait SessionContext {
    fn dataset_hash(&self) -> String;
    fn has_transition(&self, label: &TransitionLabel) -> bool;
    /// Current node for a reference, if it still exists.
    fn resolve_cluster(&self, cluster: &ClusterRef) -> Option<ClusterRef>;
}

impl Session {
    pub fn new(dataset_hash: impl Into<String>, reduction_cutoff: f64, cluster_cutoff: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset_hash: dataset_hash.into(),
            reduction_cutoff,
            cluster_cutoff,
            annotations: Vec::new(),
            scratchpad: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Session(e.to_string()))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let s: Session = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported schema version {}", s.schema_version),
            ));
        }
        s.check().map_err(|e| Error::parse(path, 1, e.to_string()))?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Structural checks independent of any dataset.
    pub fn check(&self) -> Result<()> {
        if !(self.reduction_cutoff >= 0.0) || !(self.cluster_cutoff >= 0.0) {
            return Err(Error::Session("cutoffs must be finite and >= 0".into()));
        }
        let mut ids = BTreeSet::new();
        for item in &self.scratchpad {
            if !ids.insert(item.id) {
                return Err(Error::Session(format!("duplicate scratchpad item id {}", item.id)));
            }
            if !item.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Session(format!("item {} has a non-finite position", item.id)));
            }
        }
        let by_id: BTreeMap<u64, &VisualGroup> = self.groups.iter().map(|g| (g.id, g)).collect();
        if by_id.len() != self.groups.len() {
            return Err(Error::Session("duplicate visual group id".into()));
        }
        for g in &self.groups {
            let r = g.rect;
            if ![r.x, r.y, r.width, r.height].iter().all(|v| v.is_finite()) || r.width < 0.0 || r.height < 0.0 {
                return Err(Error::Session(format!("group {} has an invalid rectangle", g.id)));
            }
            let mut seen = BTreeSet::from([g.id]);
            let mut cur = g;
            while let Some(p) = cur.parent {
                let parent = by_id
                    .get(&p)
                    .ok_or_else(|| Error::Session(format!("group {} has unknown parent {p}", cur.id)))?;
                if !parent.rect.contains_rect(&cur.rect) {
                    return Err(Error::Session(format!(
                        "group {} is not inside its parent {p}",
                        cur.id
                    )));
                }
                if !seen.insert(p) {
                    return Err(Error::Session(format!("group {} is part of a parent cycle", g.id)));
                }
                cur = parent;
            }
        }
        Ok(())
    }

    /// Drops references that `ctx` no longer knows and re-maps clusters
    /// whose node id moved.
    pub fn validate(&mut self, ctx: &dyn SessionContext) -> StaleReport {
        let mut report = StaleReport {
            hash_mismatch: self.dataset_hash != ctx.dataset_hash(),
            ..Default::default()
        };
        let fix = |c: &mut ClusterRef, report: &mut StaleReport| -> bool {
            match ctx.resolve_cluster(c) {
                Some(now) => {
                    if now != *c {
                        report.remapped_clusters.push((c.clone(), now.clone()));
                        *c = now;
                    }
                    true
                }
                None => {
                    report.dropped_clusters.push(c.clone());
                    false
                }
            }
        };
        self.annotations.retain_mut(|a| fix(&mut a.cluster, &mut report));
        self.scratchpad.retain_mut(|item| match &mut item.content {
            ScratchContent::Transition { label, .. } => {
                let ok = ctx.has_transition(label);
                if !ok {
                    report.dropped_transitions.push(label.clone());
                }
                ok
            }
            ScratchContent::Cluster { cluster, .. } => fix(cluster, &mut report),
            ScratchContent::Text { .. } => true,
        });
        self.dataset_hash = ctx.dataset_hash();
        report
    }

    pub fn annotation(&self, node: usize) -> Option<&NodeAnnotation> {
        self.annotations.iter().find(|a| a.cluster.node == node)
    }

    fn annotation_mut(&mut self, cluster: &ClusterRef) -> &mut NodeAnnotation {
        if let Some(i) = self.annotations.iter().position(|a| a.cluster.node == cluster.node) {
            self.annotations[i].cluster = cluster.clone();
            return &mut self.annotations[i];
        }
        self.annotations.push(NodeAnnotation {
            cluster: cluster.clone(),
            label: None,
            notes: String::new(),
        });
        self.annotations.last_mut().unwrap()
    }

    /// Sets or clears (empty string) the label of a cluster.
    pub fn set_label(&mut self, cluster: &ClusterRef, label: &str) {
        let a = self.annotation_mut(cluster);
        a.label = (!label.trim().is_empty()).then(|| label.trim().to_string());
        self.prune();
    }

    pub fn set_notes(&mut self, cluster: &ClusterRef, notes: &str) {
        self.annotation_mut(cluster).notes = notes.to_string();
        self.prune();
    }

    fn prune(&mut self) {
        self.annotations.retain(|a| a.label.is_some() || !a.notes.is_empty());
    }

    /// Node id → label, for display and export.
    pub fn labels(&self) -> BTreeMap<usize, String> {
        self.annotations
            .iter()
            .filter_map(|a| a.label.clone().map(|l| (a.cluster.node, l)))
            .collect()
    }

    /// Deepest group whose rectangle contains `p` (smallest area on ties).
    pub fn group_at(&self, p: [f64; 2]) -> Option<u64> {
        self.groups
            .iter()
            .filter(|g| g.rect.contains_point(p))
            .min_by(|a, b| {
                self.depth(b.id)
                    .cmp(&self.depth(a.id))
                    .then(a.rect.area().total_cmp(&b.rect.area()))
                    .then(a.id.cmp(&b.id))
            })
            .map(|g| g.id)
    }

    pub fn depth(&self, group: u64) -> usize {
        let mut d = 0;
        let mut cur = self.groups.iter().find(|g| g.id == group);
        while let Some(p) = cur.and_then(|g| g.parent) {
            d += 1;
            cur = self.groups.iter().find(|g| g.id == p);
        }
        d
    }

    /// Items grouped by the deepest enclosing visual group (`None` = root).
    pub fn items_by_group(&self) -> BTreeMap<Option<u64>, Vec<&ScratchItem>> {
        let mut out: BTreeMap<Option<u64>, Vec<&ScratchItem>> = BTreeMap::new();
        for item in &self.scratchpad {
            out.entry(self.group_at(item.position)).or_default().push(item);
        }
        out
    }

    /// Name of a group: the first title directly inside it (top-most, then
    /// left-most), otherwise `group_<id>`.
    pub fn group_name(&self, group: u64) -> String {
        self.titles_in(Some(group))
            .first()
            .map(|t| match &t.content {
                ScratchContent::Text { content, .. } => content.trim().to_string(),
                _ => unreachable!(),
            })
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("group_{group}"))
    }

    /// Title items whose deepest enclosing group is `group`, top to bottom.
    pub fn titles_in(&self, group: Option<u64>) -> Vec<&ScratchItem> {
        let mut titles: Vec<&ScratchItem> = self
            .scratchpad
            .iter()
            .filter(|i| i.is_title() && self.group_at(i.position) == group)
            .collect();
        titles.sort_by(|a, b| {
            a.position[1]
                .total_cmp(&b.position[1])
                .then(a.position[0].total_cmp(&b.position[0]))
                .then(a.id.cmp(&b.id))
        });
        titles
    }

    pub fn children_of(&self, parent: Option<u64>) -> Vec<&VisualGroup> {
        let mut v: Vec<&VisualGroup> = self.groups.iter().filter(|g| g.parent == parent).collect();
        v.sort_by_key(|g| g.id);
        v
    }

    pub fn next_item_id(&self) -> u64 {
        self.scratchpad.iter().map(|i| i.id + 1).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_session_is_stable() {
        let s = Session::new("abc", 0.3, 1.0);
        let text = s.to_json().unwrap();
        let back = Session::from_json(&text, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn corrupt_file_reports_line() {
        let err = Session::from_json("{\n  \"schema_version\": 1,\n  oops\n}", Path::new("s.json")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn parent_must_enclose_child() {
        let mut s = Session::new("h", 0.0, 0.0);
        s.groups.push(VisualGroup {
            id: 1,
            rect: Rect { x: 0.0, y: 0.0, width: 10.0, height: 10.0 },
            parent: None,
        });
        s.groups.push(VisualGroup {
            id: 2,
            rect: Rect { x: 5.0, y: 5.0, width: 10.0, height: 2.0 },
            parent: Some(1),
        });
        assert!(s.check().is_err());
    }
}
