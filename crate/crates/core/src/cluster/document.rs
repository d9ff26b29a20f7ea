use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::TransitionLabel;

use super::colors::{HueRange, NodeColor};
use super::dendrogram::Dendrogram;

/// Nested, serialisable view of a dendrogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDocument {
    pub id: usize,
    pub height: f64,
    pub size: usize,
    pub medoid: usize,
    pub medoid_label: String,
    pub hue_range: HueRange,
    pub color: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeDocument>,
}

pub fn tree_document(
    tree: &Dendrogram,
    root: usize,
    leaf_labels: &[TransitionLabel],
    colors: &[NodeColor],
    names: &BTreeMap<usize, String>,
) -> TreeDocument {
    // children-first assembly keeps this iterative for deep trees
    let order = tree.subtree(root);
    let mut built: BTreeMap<usize, TreeDocument> = BTreeMap::new();
    for &v in order.iter().rev() {
        let node = tree.node(v).expect("valid node");
        let children = match node.children {
            Some([l, r]) => vec![built.remove(&l).unwrap(), built.remove(&r).unwrap()],
            None => Vec::new(),
        };
        built.insert(
            v,
            TreeDocument {
                id: v,
                height: node.height,
                size: node.size,
                medoid: node.medoid,
                medoid_label: leaf_labels[node.medoid].to_string(),
                hue_range: colors[v].range,
                color: colors[v].rgb.clone(),
                label: names.get(&v).cloned(),
                transition: node.is_leaf().then(|| leaf_labels[v].to_string()),
                children,
            },
        );
    }
    built.remove(&root).expect("root document")
}
