//! HTTP/JSON routes.
//!
//! Distance tiles are raw little-endian float32 row blocks: a request for
//! rows `[start, end)` of an `m × m` matrix returns `(end - start) · m · 4`
//! bytes, row-major, described by the `x-matrix-*` headers.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use transens_core::cluster::{flat_roots, hilbert_layout, histogram, HueRange, LeafOrdering};
use transens_core::descriptors::{per_atom_scalars, DistanceMatrix};
use transens_core::export::{export_all, export_scratchpad};
use transens_core::field::threshold_filter;
use transens_core::model::{TransitionLabel, Vec3};
use transens_core::pipeline::Analysis;
use transens_core::session::{ScratchContent, ScratchItem, Session, SessionContext, VisualGroup};

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, RETRY_AFTER_MS};

type AppStateRef = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/dataset/summary", get(dataset_summary))
        .route("/progress", get(progress))
        .route("/distance/{which}", get(distance_tile))
        .route("/distance/{which}/labels", get(distance_labels))
        .route("/reduction/histogram", get(reduction_histogram))
        .route("/reduction", post(set_reduction))
        .route("/dendrogram", get(dendrogram))
        .route("/cluster-cutoff", post(set_cluster_cutoff))
        .route("/cluster/{id}", get(cluster))
        .route("/cluster/{id}/aligned", get(cluster_aligned))
        .route("/cluster/{id}/glyphs", get(cluster_glyphs))
        .route("/cluster/{id}/field", get(cluster_field))
        .route("/transition/{label}", get(transition))
        .route("/node/{id}/label", post(set_node_label))
        .route("/node/{id}/notes", post(set_node_notes))
        .route("/scratchpad", get(scratchpad).post(set_scratchpad))
        .route("/session", get(session))
        .route("/export", post(export))
        .fallback(|| async { ApiError::not_found("unknown_route", "no such endpoint") })
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::invalid(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::invalid(e.body_text()))
}

fn node_id(id: Result<Path<usize>, PathRejection>, analysis: &Analysis) -> ApiResult<usize> {
    match id {
        Ok(Path(id)) if analysis.node_exists(id) => Ok(id),
        Ok(Path(id)) => Err(ApiError::not_found("unknown_node", format!("no node {id} in the current hierarchy"))),
        Err(e) => Err(ApiError::not_found("unknown_node", e.body_text())),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn positions(p: &[Vec3]) -> Vec<[f64; 3]> {
    p.iter().map(|v| [v.x, v.y, v.z]).collect()
}

#[derive(Serialize)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    children: Option<[usize; 2]>,
    height: f64,
    size: usize,
    medoid: usize,
    medoid_label: String,
    color: String,
    hue_range: HueRange,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transition: Option<String>,
}

/// Subtree of `root` as a flat, parent-first node list.
fn node_records(a: &Analysis, root: usize, names: &BTreeMap<usize, String>) -> Vec<NodeRecord> {
    let tree = &a.hierarchy.tree;
    tree.subtree(root)
        .into_iter()
        .map(|id| {
            let n = tree.node(id).expect("subtree node");
            NodeRecord {
                id,
                parent: if id == root { None } else { tree.parent(id) },
                children: n.children,
                height: n.height,
                size: n.size,
                medoid: n.medoid,
                medoid_label: a.leaf_label(n.medoid).to_string(),
                color: a.hierarchy.colors[id].rgb.clone(),
                hue_range: a.hierarchy.colors[id].range,
                label: names.get(&id).cloned(),
                transition: n.is_leaf().then(|| a.leaf_label(id).to_string()),
            }
        })
        .collect()
}

/// Flat clusters at `cutoff` with their block of the display order.
fn flat_clusters(a: &Analysis, cutoff: f64, names: &BTreeMap<usize, String>) -> Vec<Value> {
    let tree = &a.hierarchy.tree;
    let mut start = 0;
    flat_roots(tree, cutoff)
        .into_iter()
        .map(|root| {
            let n = tree.node(root).expect("flat root");
            let v = json!({
                "node": root,
                "size": n.size,
                "start": start,
                "height": n.height,
                "medoid_label": a.leaf_label(n.medoid).to_string(),
                "color": a.hierarchy.colors[root].rgb,
                "label": names.get(&root),
            });
            start += n.size;
            v
        })
        .collect()
}

async fn dataset_summary(State(state): AppStateRef) -> Json<Value> {
    let a = state.analysis();
    let s = state.session();
    let d = &state.dataset;
    Json(json!({
        "name": d.name,
        "content_hash": d.content_hash(),
        "transitions": d.len(),
        "states": d.state_count(),
        "atoms": d.atom_count(),
        "features": d.feature_count(),
        "bond_cutoff": d.bond_cutoff,
        "scalars": d.scalars.iter().map(|s| &s.name).collect::<Vec<_>>(),
        "distances_from_cache": state.ensemble.from_cache,
        "whitened_dimensions": state.ensemble.whitening.as_ref().map(|w| w.retained()),
        "reduction_cutoff": a.reduction.cutoff,
        "kept": a.leaf_count(),
        "kept_fraction": a.reduction.kept_fraction(d.len()),
        "cluster_cutoff": s.cluster_cutoff,
        "clusters": flat_roots(&a.hierarchy.tree, s.cluster_cutoff).len(),
        "root": a.hierarchy.tree.root(),
    }))
}

async fn progress(State(state): AppStateRef) -> Json<Value> {
    Json(json!(state.progress()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TileQuery {
    start: Option<usize>,
    end: Option<usize>,
    /// `index` (matrix order) or `display` (optimal leaf order; reduced only).
    order: Option<String>,
}

fn matrix_for<'a>(which: &str, a: &'a Analysis, order: Option<&str>) -> ApiResult<Cow<'a, DistanceMatrix>> {
    let display = match order.unwrap_or("index") {
        "index" => false,
        "display" => true,
        o => return Err(ApiError::invalid(format!("order must be `index` or `display`, got `{o}`"))),
    };
    match (which, display) {
        ("full", false) => Ok(Cow::Borrowed(a.full_distances())),
        ("reduced", false) => Ok(Cow::Borrowed(a.reduced_distances())),
        ("reduced", true) => Ok(Cow::Owned(
            a.reduced_distances().submatrix(&a.hierarchy.tree.depth_first_order()),
        )),
        ("full", true) => Err(ApiError::invalid("display order is only defined for the reduced matrix")),
        _ => Err(ApiError::not_found("unknown_matrix", format!("no matrix `{which}`; use `full` or `reduced`"))),
    }
}

async fn distance_tile(
    State(state): AppStateRef,
    Path(which): Path<String>,
    q: Result<Query<TileQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let a = state.analysis();
    let d = matrix_for(&which, &a, q.order.as_deref())?;
    let m = d.len();
    let start = q.start.unwrap_or(0);
    let end = q.end.unwrap_or(m);
    if start > end || end > m {
        return Err(ApiError::invalid(format!("row range [{start}, {end}) outside 0..{m}")));
    }
    let bytes = d.rows_f32_le(start, end);
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .header("x-matrix-size", m)
        .header("x-row-start", start)
        .header("x-row-end", end)
        .header("x-dtype", "float32-le")
        .header("x-reduction-cutoff", a.reduction.cutoff.to_string())
        .body(Body::from(bytes))
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn distance_labels(
    State(state): AppStateRef,
    Path(which): Path<String>,
    q: Result<Query<TileQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let a = state.analysis();
    let d = matrix_for(&which, &a, q.order.as_deref())?;
    Ok(Json(json!({
        "matrix": which,
        "size": d.len(),
        "labels": d.labels().iter().map(|l| l.to_string()).collect::<Vec<_>>(),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramQuery {
    bins: Option<usize>,
}

async fn reduction_histogram(
    State(state): AppStateRef,
    q: Result<Query<HistogramQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let bins = q.bins.unwrap_or(20);
    if bins == 0 || bins > 10_000 {
        return Err(ApiError::invalid("bins must be in 1..=10000"));
    }
    let a = state.analysis();
    let r = &a.reduction;
    let groups: Vec<Value> = r
        .groups
        .iter()
        .filter(|g| g.members.len() > 1)
        .map(|g| {
            json!({
                "node": g.node,
                "medoid": g.medoid,
                "medoid_label": a.full_distances().labels()[g.medoid].to_string(),
                "members": g.members,
                "height": g.height,
                "mean_distance": g.mean_distance,
            })
        })
        .collect();
    Ok(Json(json!({
        "cutoff": r.cutoff,
        "total": state.dataset.len(),
        "kept": r.kept.len(),
        "histogram": histogram(&r.group_means(), bins),
        "groups": groups,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReductionRequest {
    cutoff: f64,
}

fn reduction_response(a: &Analysis, total: usize, cached: bool, stale: Vec<String>) -> Json<Value> {
    Json(json!({
        "cutoff": a.reduction.cutoff,
        "total": total,
        "kept": a.leaf_count(),
        "kept_fraction": a.reduction.kept_fraction(total),
        "removed": total - a.leaf_count(),
        "cached": cached,
        "stale": stale,
    }))
}

async fn set_reduction(
    State(state): AppStateRef,
    payload: Result<Json<ReductionRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let cutoff = body(payload)?.cutoff;
    if !(cutoff.is_finite() && cutoff >= 0.0) {
        return Err(ApiError::invalid(format!("reduction cutoff must be finite and >= 0, got {cutoff}")));
    }
    let total = state.dataset.len();
    if let Some(a) = state.cached_reduction(cutoff) {
        let stale = if Arc::ptr_eq(&a, &state.analysis()) {
            Vec::new()
        } else {
            state.install(Arc::clone(&a))?.lines()
        };
        return Ok(reduction_response(&a, total, true, stale));
    }
    let Some(guard) = state.try_begin("reduction") else {
        return Err(ApiError::busy(&state.running_job(), RETRY_AFTER_MS));
    };
    let (dataset, ensemble) = (Arc::clone(&state.dataset), Arc::clone(&state.ensemble));
    let a = blocking(move || Ok(Analysis::with_reduction(dataset, ensemble, cutoff)?)).await?;
    let a = Arc::new(a);
    let stale = state.install(Arc::clone(&a))?.lines();
    drop(guard);
    Ok(reduction_response(&a, total, false, stale))
}

async fn dendrogram(State(state): AppStateRef) -> Json<Value> {
    let a = state.analysis();
    let s = state.session();
    let names = s.labels();
    let tree = &a.hierarchy.tree;
    Json(json!({
        "root": tree.root(),
        "leaf_count": tree.leaf_count(),
        "reduction_cutoff": a.reduction.cutoff,
        "cluster_cutoff": s.cluster_cutoff,
        "leaf_order": tree.depth_first_order(),
        "leaf_labels": (0..tree.leaf_count()).map(|l| a.leaf_label(l).to_string()).collect::<Vec<_>>(),
        "ordering_cost": a.hierarchy.ordering.cost,
        "nodes": node_records(&a, tree.root(), &names),
        "clusters": flat_clusters(&a, s.cluster_cutoff, &names),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoffRequest {
    value: f64,
}

async fn set_cluster_cutoff(
    State(state): AppStateRef,
    payload: Result<Json<CutoffRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let value = body(payload)?.value;
    if !(value.is_finite() && value >= 0.0) {
        return Err(ApiError::invalid(format!("cluster cutoff must be finite and >= 0, got {value}")));
    }
    state.with_session(|s, a| {
        s.cluster_cutoff = value;
        Ok(Json(json!({
            "cluster_cutoff": value,
            "clusters": flat_clusters(a, value, &s.labels()),
        })))
    })
}

async fn cluster(State(state): AppStateRef, id: Result<Path<usize>, PathRejection>) -> ApiResult<Json<Value>> {
    let a = state.analysis();
    let node = node_id(id, &a)?;
    let session = state.session();
    let names = session.labels();
    let n = a.hierarchy.tree.node(node).expect("checked node");
    let leaves = a.members(node)?;
    let local = a.reduced_distances().submatrix(&leaves);
    let layout = hilbert_layout(&LeafOrdering::new((0..leaves.len()).collect(), &local));
    let cells: Vec<Value> = leaves
        .iter()
        .zip(&layout.cells)
        .map(|(&leaf, &(row, col))| json!({ "leaf": leaf, "label": a.leaf_label(leaf).to_string(), "row": row, "col": col }))
        .collect();
    let annotation = session.annotation(node);
    Ok(Json(json!({
        "node": node,
        "cluster": a.cluster_ref(node),
        "label": annotation.and_then(|x| x.label.clone()),
        "notes": annotation.map(|x| x.notes.clone()).unwrap_or_default(),
        "height": n.height,
        "size": n.size,
        "parent": a.hierarchy.tree.parent(node),
        "color": a.hierarchy.colors[node].rgb,
        "medoid": { "leaf": n.medoid, "label": a.leaf_label(n.medoid).to_string() },
        "members": leaves.iter().map(|&l| a.leaf_label(l).to_string()).collect::<Vec<_>>(),
        "leaf_order": leaves,
        "hilbert": { "order": layout.order, "side": layout.side, "cells": cells },
        "dendrogram": node_records(&a, node, &names),
        "heatmap": { "size": leaves.len(), "values": local.as_slice() },
    })))
}

fn view_key(kind: &str, a: &Analysis, node: usize, extra: &str) -> String {
    format!("{kind}:{:016x}:{node}:{extra}", a.reduction.cutoff.to_bits())
}

fn with_cached(mut v: Value, cached: bool) -> Json<Value> {
    v["cached"] = json!(cached);
    Json(v)
}

async fn cluster_aligned(State(state): AppStateRef, id: Result<Path<usize>, PathRejection>) -> ApiResult<Json<Value>> {
    let a = state.analysis();
    let node = node_id(id, &a)?;
    let key = view_key("aligned", &a, node, "");
    if let Some(v) = state.cached_view(&key) {
        return Ok(with_cached((*v).clone(), true));
    }
    let v = blocking(move || {
        let g = a.align_cluster(node)?;
        let members: Vec<Value> = g
            .members
            .iter()
            .map(|m| {
                json!({
                    "label": m.label.to_string(),
                    "alignment": m.result,
                    "initial": positions(&m.transition.initial.positions),
                    "final": positions(&m.transition.terminal.positions),
                })
            })
            .collect();
        Ok(json!({
            "node": node,
            "reference": g.reference_member().label.to_string(),
            "members": members,
            "warnings": g.warnings.iter().map(|(l, w)| json!({ "label": l.to_string(), "reason": w })).collect::<Vec<_>>(),
        }))
    })
    .await?;
    Ok(with_cached((*state.store_view(key, v)).clone(), false))
}

async fn cluster_glyphs(State(state): AppStateRef, id: Result<Path<usize>, PathRejection>) -> ApiResult<Json<Value>> {
    let a = state.analysis();
    let node = node_id(id, &a)?;
    let key = view_key("glyphs", &a, node, "");
    if let Some(v) = state.cached_view(&key) {
        return Ok(with_cached((*v).clone(), true));
    }
    let params = state.config.glyphs;
    let v = blocking(move || {
        let sets = a.cluster_glyphs(node, &params)?;
        let members: Vec<Value> = sets
            .iter()
            .map(|(label, field, glyphs)| {
                json!({
                    "label": label.to_string(),
                    "invariants": field.atoms.iter().map(|s| [s.invariants.k1, s.invariants.k2, s.invariants.k3]).collect::<Vec<_>>(),
                    "glyphs": glyphs,
                })
            })
            .collect();
        Ok(json!({ "node": node, "params": params, "members": members }))
    })
    .await?;
    Ok(with_cached((*state.store_view(key, v)).clone(), false))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldQuery {
    sigma: Option<f64>,
    tau: Option<f64>,
}

async fn cluster_field(
    State(state): AppStateRef,
    id: Result<Path<usize>, PathRejection>,
    q: Result<Query<FieldQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let a = state.analysis();
    let node = node_id(id, &a)?;
    let q = query(q)?;
    let tau = q.tau.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&tau) {
        return Err(ApiError::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    let sigma = q.sigma.or(state.config.sigma);
    if let Some(s) = sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(ApiError::invalid(format!("sigma must be finite and > 0, got {s}")));
        }
    }
    let key = view_key("field", &a, node, &sigma.map_or("auto".into(), |s| format!("{:016x}", s.to_bits())));
    let (field, cached) = match state.cached_field(&key) {
        Some(f) => (f, true),
        None => {
            let f = blocking(move || Ok(a.cluster_field(node, sigma)?)).await?;
            (state.store_field(key, f), false)
        }
    };
    let elements = threshold_filter(&field, tau);
    let colored = elements.iter().filter(|e| e.is_colored()).count();
    Ok(Json(json!({
        "node": node,
        "tau": tau,
        "cached": cached,
        "colored": colored,
        "field": field.as_ref(),
        "elements": elements,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionQuery {
    scalar: Option<String>,
}

async fn transition(
    State(state): AppStateRef,
    Path(label): Path<String>,
    q: Result<Query<TransitionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let a = state.analysis();
    let parsed: TransitionLabel = label
        .parse()
        .map_err(|_| ApiError::not_found("unknown_transition", format!("`{label}` is not a transition label")))?;
    let index = state
        .dataset
        .index_of(&parsed)
        .ok_or_else(|| ApiError::not_found("unknown_transition", format!("no transition {parsed}")))?;
    let t = &state.dataset.transitions[index];
    let scalars = per_atom_scalars(&state.dataset, index)?;
    let mut channels = BTreeMap::new();
    for (name, values) in &scalars.channels {
        if q.scalar.as_deref().is_some_and(|s| s != name) {
            continue;
        }
        let (lo, hi, scope) = match state.dataset.scalar(name) {
            Some(f) => (f.global_min, f.global_max, "dataset"),
            None => (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                "transition",
            ),
        };
        channels.insert(name.clone(), json!({ "values": values, "min": lo, "max": hi, "range_scope": scope }));
    }
    if let Some(s) = &q.scalar {
        if channels.is_empty() {
            return Err(ApiError::not_found("unknown_scalar", format!("no scalar channel `{s}`")));
        }
    }
    let bonds = &state.dataset.bonds[index].initial;
    Ok(Json(json!({
        "label": parsed.to_string(),
        "index": index,
        "leaf": a.leaf_of(&parsed),
        "absorbed_by": a.reduction.removed.iter().find(|(_, v)| v.contains(&parsed)).map(|(k, _)| k.to_string()),
        "symbols": t.initial.symbols,
        "initial": positions(&t.initial.positions),
        "final": positions(&t.terminal.positions),
        "bonds": bonds.edges().iter().map(|b| [b.i, b.j]).collect::<Vec<_>>(),
        "scalars": channels,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NotesRequest {
    notes: String,
}

async fn set_node_label(
    State(state): AppStateRef,
    id: Result<Path<usize>, PathRejection>,
    payload: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let node = node_id(id, &state.analysis())?;
    let label = body(payload)?.label;
    state.with_session(|s, a| {
        let c = a.cluster_ref(node).ok_or_else(|| ApiError::not_found("unknown_node", format!("no node {node}")))?;
        s.set_label(&c, &label);
        Ok(Json(json!({ "node": node, "cluster": c, "label": s.annotation(node).and_then(|x| x.label.clone()) })))
    })
}

async fn set_node_notes(
    State(state): AppStateRef,
    id: Result<Path<usize>, PathRejection>,
    payload: Result<Json<NotesRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let node = node_id(id, &state.analysis())?;
    let notes = body(payload)?.notes;
    state.with_session(|s, a| {
        let c = a.cluster_ref(node).ok_or_else(|| ApiError::not_found("unknown_node", format!("no node {node}")))?;
        s.set_notes(&c, &notes);
        Ok(Json(json!({ "node": node, "cluster": c, "notes": notes })))
    })
}

/// Display color of every transition and cluster item at the current
/// cluster cutoff.
fn item_colors(a: &Analysis, s: &Session) -> BTreeMap<u64, String> {
    let tree = &a.hierarchy.tree;
    let mut leaf_root = vec![0; tree.leaf_count()];
    for root in flat_roots(tree, s.cluster_cutoff) {
        for leaf in tree.leaves(root) {
            leaf_root[leaf] = root;
        }
    }
    let color_of_node = |node: usize| {
        let n = tree.node(node)?;
        let root = if tree.height(node) <= s.cluster_cutoff { leaf_root[n.medoid] } else { node };
        Some(a.hierarchy.colors[root].rgb.clone())
    };
    s.scratchpad
        .iter()
        .filter_map(|item| {
            let c = match &item.content {
                ScratchContent::Transition { label, .. } => a.leaf_of(label).map(|l| a.hierarchy.colors[leaf_root[l]].rgb.clone()),
                ScratchContent::Cluster { cluster, .. } => color_of_node(cluster.node),
                ScratchContent::Text { .. } => None,
            }?;
            Some((item.id, c))
        })
        .collect()
}

async fn scratchpad(State(state): AppStateRef) -> Json<Value> {
    let a = state.analysis();
    let s = state.session();
    Json(json!({
        "items": s.scratchpad,
        "groups": s.groups,
        "colors": item_colors(&a, &s),
        "next_item_id": s.next_item_id(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScratchpadRequest {
    #[serde(default)]
    items: Vec<ScratchItem>,
    #[serde(default)]
    groups: Vec<VisualGroup>,
}

async fn set_scratchpad(
    State(state): AppStateRef,
    payload: Result<Json<ScratchpadRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    state.with_session(|s, a| {
        for item in &req.items {
            match &item.content {
                ScratchContent::Transition { label, .. } if !a.has_transition(label) => {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "unknown_reference",
                        format!("item {} refers to unknown transition {label}", item.id),
                    ));
                }
                ScratchContent::Cluster { cluster, .. } if a.resolve_cluster(cluster).is_none() => {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "unknown_reference",
                        format!("item {} refers to unknown cluster {}", item.id, cluster.node),
                    ));
                }
                _ => {}
            }
        }
        s.scratchpad = req.items;
        s.groups = req.groups;
        s.validate(a);
        Ok(Json(json!({
            "items": s.scratchpad,
            "groups": s.groups,
            "colors": item_colors(a, s),
            "next_item_id": s.next_item_id(),
        })))
    })
}

async fn session(State(state): AppStateRef) -> Json<Session> {
    Json(state.session())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum ExportMode {
    All,
    Scratchpad,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    mode: ExportMode,
}

/// First unused `<base>/<stem>-<n>`.
fn fresh_dir(base: &std::path::Path, stem: &str) -> PathBuf {
    (1..)
        .map(|n| base.join(format!("{stem}-{n}")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

async fn export(State(state): AppStateRef, payload: Result<Json<ExportRequest>, JsonRejection>) -> ApiResult<impl IntoResponse> {
    let mode = body(payload)?.mode;
    let a = state.analysis();
    let s = state.session();
    let base = state.config.export_dir.clone();
    let v = blocking(move || {
        std::fs::create_dir_all(&base).map_err(|e| ApiError::internal(format!("creating {}: {e}", base.display())))?;
        match mode {
            ExportMode::All => {
                let dir = fresh_dir(&base, "all");
                let out = export_all(&s, &a, &dir)?;
                Ok(json!({
                    "mode": "all",
                    "path": dir,
                    "leaf_folders": out.leaf_folders().len(),
                    "transitions": out.leaf_folders().iter().map(|f| f.transitions.len()).sum::<usize>(),
                    "tree": out,
                }))
            }
            ExportMode::Scratchpad => {
                let dir = fresh_dir(&base, "scratchpad");
                let out = export_scratchpad(&s, &a, &dir)?;
                Ok(json!({
                    "mode": "scratchpad",
                    "path": dir,
                    "report": out.report,
                    "folders": out.folders,
                    "files": out.files,
                    "stale": out.stale.lines(),
                }))
            }
        }
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)))
}
