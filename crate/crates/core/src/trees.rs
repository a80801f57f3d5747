//! Embedded metric trees filtered by radial distance from the root, and the
//! event tables built from them.

use crate::error::{Error, Result};
use crate::nelson_aalen::{CurveKind, StepCurve};
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

pub const DEFAULT_PROXIMITY_RADIUS: f64 = 200.0;

/// Covariates computed for every edge, in column order.
pub const TREE_COVARIATES: [&str; 7] = ["width", "euclid", "path_ratio", "nodes_within", "order", "azimuth", "n_children"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Root,
    Branch,
    Leaf,
    Censored,
    PassThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeStatus {
    Leaf,
    Branch,
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Leaf,
    Branch,
}

impl EventKind {
    pub fn matches(self, status: EdgeStatus) -> bool {
        matches!(
            (self, status),
            (EventKind::Leaf, EdgeStatus::Leaf) | (EventKind::Branch, EdgeStatus::Branch)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub coords: [f64; 3],
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Node indices.
    pub parent: usize,
    pub child: usize,
    pub polyline: Vec<[f64; 3]>,
    pub width: f64,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn arclength(polyline: &[[f64; 3]]) -> f64 {
    polyline.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

/// Rooted tree with polyline edges embedded in the plane or in space.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTree {
    tree_id: String,
    dim: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: usize,
    /// Incoming edge per node (none for the root).
    parent_edge: Vec<Option<usize>>,
    /// Outgoing edges per node.
    children: Vec<Vec<usize>>,
}

impl MetricTree {
    pub fn new(tree_id: impl Into<String>, dim: usize, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let tree_id = tree_id.into();
        let invalid = |reason: String| Error::InvalidTree { tree: tree_id.clone(), reason };
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("coordinates must be 2- or 3-dimensional, got {dim}")));
        }
        let mut seen = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if seen.insert(n.id.as_str(), i).is_some() {
                return Err(invalid(format!("duplicate node id `{}`", n.id)));
            }
            if n.coords.iter().any(|c| !c.is_finite()) || (dim == 2 && n.coords[2] != 0.0) {
                return Err(invalid(format!("node `{}` has invalid coordinates", n.id)));
            }
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].kind == NodeKind::Root).collect();
        if roots.len() != 1 {
            return Err(invalid(format!("expected exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        let mut parent_edge = vec![None; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            if edge.parent >= nodes.len() || edge.child >= nodes.len() {
                return Err(invalid(format!("edge {e} refers to a missing node")));
            }
            let (p, c) = (&nodes[edge.parent], &nodes[edge.child]);
            if !(edge.width > 0.0 && edge.width.is_finite()) {
                return Err(invalid(format!("edge {}-{} has non-positive width {}", p.id, c.id, edge.width)));
            }
            if edge.child == root {
                return Err(invalid(format!("edge {}-{} points into the root", p.id, c.id)));
            }
            if parent_edge[edge.child].replace(e).is_some() {
                return Err(invalid(format!("node `{}` has more than one parent", c.id)));
            }
            children[edge.parent].push(e);
            if edge.polyline.len() < 2 {
                return Err(invalid(format!("edge {}-{} polyline has fewer than 2 points", p.id, c.id)));
            }
            let tol = |a: &[f64; 3]| 1e-9 * (1.0 + a.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let (first, last) = (&edge.polyline[0], &edge.polyline[edge.polyline.len() - 1]);
            if dist(first, &p.coords) > tol(&p.coords) || dist(last, &c.coords) > tol(&c.coords) {
                return Err(invalid(format!(
                    "edge {}-{} polyline must start at the parent and end at the child",
                    p.id, c.id
                )));
            }
        }
        if let Some(orphan) = (0..nodes.len()).find(|&i| i != root && parent_edge[i].is_none()) {
            return Err(invalid(format!("node `{}` has no parent", nodes[orphan].id)));
        }
        // n − 1 edges with one parent each: connected iff every node reaches the root.
        let mut reached = vec![false; nodes.len()];
        let mut stack = vec![root];
        reached[root] = true;
        while let Some(v) = stack.pop() {
            for &e in &children[v] {
                let c = edges[e].child;
                if !reached[c] {
                    reached[c] = true;
                    stack.push(c);
                }
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(invalid(format!("node `{}` is not connected to the root (cycle)", nodes[i].id)));
        }
        for (i, n) in nodes.iter().enumerate() {
            let c = children[i].len();
            let ok = match n.kind {
                NodeKind::Root => c >= 1,
                NodeKind::Leaf | NodeKind::Censored => c == 0,
                NodeKind::PassThrough => c == 1,
                NodeKind::Branch => c >= 2,
            };
            if !ok {
                return Err(invalid(format!("{:?} node `{}` has {c} children", n.kind, n.id)));
            }
        }
        Ok(Self { tree_id, dim, nodes, edges, root, parent_edge, children })
    }

    pub fn tree_id(&self) -> &str {
        &self.tree_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Outgoing edge indices of a node.
    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn parent_edge(&self, node: usize) -> Option<usize> {
        self.parent_edge[node]
    }

    pub fn edge_id(&self, e: usize) -> String {
        format!("{}-{}", self.nodes[self.edges[e].parent].id, self.nodes[self.edges[e].child].id)
    }

    /// Radial distance of a node from the root.
    pub fn radius(&self, node: usize) -> f64 {
        dist(&self.nodes[node].coords, &self.nodes[self.root].coords)
    }

    /// Removes pass-through nodes, joining their polylines. The merged width
    /// is the arclength-weighted mean.
    pub fn contracted(&self) -> Result<MetricTree> {
        if self.nodes.iter().all(|n| n.kind != NodeKind::PassThrough) {
            return Ok(self.clone());
        }
        let mut index = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.kind != NodeKind::PassThrough {
                index[i] = nodes.len();
                nodes.push(n.clone());
            }
        }
        let mut edges = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.kind == NodeKind::PassThrough || i == self.root {
                continue;
            }
            let mut chain = Vec::new();
            let mut v = i;
            loop {
                let e = self.parent_edge[v].expect("non-root node has a parent");
                chain.push(e);
                v = self.edges[e].parent;
                if self.nodes[v].kind != NodeKind::PassThrough {
                    break;
                }
            }
            chain.reverse();
            let mut polyline: Vec<[f64; 3]> = Vec::new();
            let (mut wsum, mut lsum) = (0.0, 0.0);
            for &e in &chain {
                let edge = &self.edges[e];
                let skip = usize::from(!polyline.is_empty());
                polyline.extend_from_slice(&edge.polyline[skip..]);
                let len = arclength(&edge.polyline);
                wsum += edge.width * len;
                lsum += len;
            }
            let width = if lsum > 0.0 {
                wsum / lsum
            } else {
                chain.iter().map(|&e| self.edges[e].width).sum::<f64>() / chain.len() as f64
            };
            edges.push(Edge { parent: index[v], child: index[i], polyline, width });
        }
        MetricTree::new(self.tree_id.clone(), self.dim, nodes, edges)
    }

    pub fn from_json_str(s: &str) -> Result<MetricTree> {
        let raw: TreeJson = serde_json::from_str(s)?;
        raw.into_tree()
    }

    /// The ingestion format read by [`MetricTree::from_json_str`].
    pub fn to_json(&self) -> serde_json::Value {
        let point = |c: &[f64; 3]| -> Vec<f64> { c[..self.dim].to_vec() };
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                let mut v = serde_json::json!({ "id": n.id, "x": n.coords[0], "y": n.coords[1], "kind": n.kind });
                if self.dim == 3 {
                    v["z"] = n.coords[2].into();
                }
                v
            })
            .collect();
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "parent": self.nodes[e.parent].id,
                    "child": self.nodes[e.child].id,
                    "width": e.width,
                    "polyline": e.polyline.iter().map(point).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "tree_id": self.tree_id, "nodes": nodes, "edges": edges })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
enum JsonId {
    Int(i64),
    Str(String),
}

impl JsonId {
    fn into_string(self) -> String {
        match self {
            JsonId::Int(i) => i.to_string(),
            JsonId::Str(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
struct NodeJson {
    id: JsonId,
    x: f64,
    y: f64,
    z: Option<f64>,
    kind: NodeKind,
}

#[derive(Debug, Deserialize)]
struct EdgeJson {
    parent: JsonId,
    child: JsonId,
    width: f64,
    #[serde(default)]
    polyline: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct TreeJson {
    tree_id: JsonId,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

impl TreeJson {
    fn into_tree(self) -> Result<MetricTree> {
        let tree_id = self.tree_id.into_string();
        let invalid = |reason: String| Error::InvalidTree { tree: tree_id.clone(), reason };
        let has_z = self.nodes.iter().any(|n| n.z.is_some());
        let dim = if has_z { 3 } else { 2 };
        if has_z && self.nodes.iter().any(|n| n.z.is_none()) {
            return Err(invalid("nodes mix 2- and 3-dimensional coordinates".into()));
        }
        let nodes: Vec<Node> = self
            .nodes
            .into_iter()
            .map(|n| Node { id: n.id.into_string(), coords: [n.x, n.y, n.z.unwrap_or(0.0)], kind: n.kind })
            .collect();
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in self.edges {
            let (p, c) = (e.parent.into_string(), e.child.into_string());
            let lookup = |id: &str| index.get(id).copied().ok_or_else(|| invalid(format!("edge refers to unknown node `{id}`")));
            let (pi, ci) = (lookup(&p)?, lookup(&c)?);
            let polyline = if e.polyline.is_empty() {
                vec![nodes[pi].coords, nodes[ci].coords]
            } else {
                e.polyline
                    .iter()
                    .map(|pt| match pt.as_slice() {
                        [x, y] if dim == 2 => Ok([*x, *y, 0.0]),
                        [x, y, z] if dim == 3 => Ok([*x, *y, *z]),
                        _ => Err(invalid(format!("edge {p}-{c} has a polyline point of dimension {}", pt.len()))),
                    })
                    .collect::<Result<_>>()?
            };
            edges.push(Edge { parent: pi, child: ci, polyline, width: e.width });
        }
        MetricTree::new(tree_id, dim, nodes, edges)
    }
}

/// Reads a JSON file holding one tree object or an array of them.
pub fn read_trees_json(path: &Path) -> Result<Vec<MetricTree>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}:{}:{}", path.display(), e.line(), e.column()), e.to_string()))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let raw: TreeJson = serde_json::from_value(v)
                .map_err(|e| Error::parse(format!("{} tree {k}", path.display()), e.to_string()))?;
            raw.into_tree()
        })
        .collect()
}

/// Whether the segment p–q meets the sphere of radius r about c.
fn segment_meets_sphere(p: &[f64; 3], q: &[f64; 3], c: &[f64; 3], r: f64) -> bool {
    let d: [f64; 3] = std::array::from_fn(|k| q[k] - p[k]);
    let len2 = d.iter().map(|v| v * v).sum::<f64>();
    let t = if len2 > 0.0 {
        ((0..3).map(|k| (c[k] - p[k]) * d[k]).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest: [f64; 3] = std::array::from_fn(|k| p[k] + t * d[k]);
    dist(&closest, c) <= r && r <= dist(p, c).max(dist(q, c))
}

/// Edges whose polyline meets the circle (sphere) of radius `r` about the
/// root. Empty for r ≤ 0.
pub fn radial_risk_set(tree: &MetricTree, r: f64) -> BTreeSet<String> {
    if !(r > 0.0) {
        return BTreeSet::new();
    }
    let c = tree.nodes[tree.root].coords;
    (0..tree.edges.len())
        .filter(|&e| tree.edges[e].polyline.windows(2).any(|w| segment_meets_sphere(&w[0], &w[1], &c, r)))
        .map(|e| tree.edge_id(e))
        .collect()
}

/// Geometric and node-radius interval risk sets at one radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetComparison {
    pub radius: f64,
    pub geometric: BTreeSet<String>,
    pub interval: BTreeSet<String>,
}

impl RiskSetComparison {
    /// Edges in exactly one of the two sets.
    pub fn discrepancy(&self) -> BTreeSet<String> {
        self.geometric.symmetric_difference(&self.interval).cloned().collect()
    }
}

/// Compares the circle-crossing risk set with {entry < r ≤ exit} on the
/// contracted tree, logging any disagreement.
pub fn compare_risk_sets(tree: &MetricTree, r: f64) -> Result<RiskSetComparison> {
    let t = tree.contracted()?;
    let geometric = radial_risk_set(&t, r);
    let interval = (0..t.edges.len())
        .filter(|&e| t.radius(t.edges[e].parent) < r && r <= t.radius(t.edges[e].child))
        .map(|e| t.edge_id(e))
        .collect();
    let cmp = RiskSetComparison { radius: r, geometric, interval };
    let diff = cmp.discrepancy();
    if !diff.is_empty() {
        log::warn!("tree `{}` at r={r}: geometric and interval risk sets differ on {:?}", t.tree_id, diff);
    }
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub tree_id: String,
    pub edge: String,
    pub entry: f64,
    pub exit: f64,
    pub status: EdgeStatus,
    pub covariates: Vec<f64>,
}

/// An edge left out of the table because it grows towards the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedEdge {
    pub tree_id: String,
    pub edge: String,
    pub entry: f64,
    pub exit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    covariate_names: Vec<String>,
    rows: Vec<EventRow>,
    excluded: Vec<ExcludedEdge>,
}

impl EventTable {
    pub fn new(covariate_names: Vec<String>, rows: Vec<EventRow>) -> Result<Self> {
        let mut names = BTreeSet::new();
        if let Some(dup) = covariate_names.iter().find(|n| !names.insert(n.as_str())) {
            return Err(Error::domain(format!("duplicate covariate `{dup}`")));
        }
        for r in &rows {
            if !(r.entry < r.exit) {
                return Err(Error::domain(format!(
                    "row {}/{} has entry {} not below exit {}",
                    r.tree_id, r.edge, r.entry, r.exit
                )));
            }
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::domain(format!(
                    "row {}/{} has {} covariates, expected {}",
                    r.tree_id,
                    r.edge,
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
        }
        Ok(Self { covariate_names, rows, excluded: Vec::new() })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn rows(&self) -> &[EventRow] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [EventRow] {
        &mut self.rows
    }

    pub fn excluded(&self) -> &[ExcludedEdge] {
        &self.excluded
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.covariates[k]).collect())
    }

    /// Appends a covariate column, e.g. a basis expansion of another column.
    pub fn add_column(&mut self, name: impl Into<String>, values: &[f64]) -> Result<()> {
        let name = name.into();
        if self.column_index(&name).is_some() {
            return Err(Error::domain(format!("covariate `{name}` already present")));
        }
        if values.len() != self.rows.len() {
            return Err(Error::domain(format!("column `{name}` has {} values for {} rows", values.len(), self.rows.len())));
        }
        for (r, v) in self.rows.iter_mut().zip(values) {
            r.covariates.push(*v);
        }
        self.covariate_names.push(name);
        Ok(())
    }

    pub fn event_count(&self, event: EventKind) -> usize {
        self.rows.iter().filter(|r| event.matches(r.status)).count()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tree_id", "edge", "entry_radius", "exit_radius", "status"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.tree_id.clone(),
                r.edge.clone(),
                r.entry.to_string(),
                r.exit.to_string(),
                status_name(r.status).to_string(),
            ];
            rec.extend(r.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        let fixed = ["tree_id", "edge", "entry_radius", "exit_radius", "status"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
            return Err(Error::parse(
                format!("{}:1", path.display()),
                format!("header must start with {}", fixed.join(",")),
            ));
        }
        let names: Vec<String> = header.iter().skip(fixed.len()).map(String::from).collect();
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(format!("{}:{line} field {}", path.display(), i + 1), format!("not a number: `{}`", rec.get(i).unwrap_or(""))))
            };
            let status = match rec.get(4).unwrap_or("").trim() {
                "leaf" => EdgeStatus::Leaf,
                "branch" => EdgeStatus::Branch,
                "censored" => EdgeStatus::Censored,
                other => return Err(Error::parse(format!("{}:{line} field 5", path.display()), format!("unknown status `{other}`"))),
            };
            rows.push(EventRow {
                tree_id: rec.get(0).unwrap_or("").to_string(),
                edge: rec.get(1).unwrap_or("").to_string(),
                entry: field(2)?,
                exit: field(3)?,
                status,
                covariates: (fixed.len()..header.len()).map(field).collect::<Result<_>>()?,
            });
        }
        EventTable::new(names, rows)
    }
}

fn status_name(s: EdgeStatus) -> &'static str {
    match s {
        EdgeStatus::Leaf => "leaf",
        EdgeStatus::Branch => "branch",
        EdgeStatus::Censored => "censored",
    }
}

fn tree_rows(tree: &MetricTree, proximity_radius: f64) -> Result<(Vec<EventRow>, Vec<ExcludedEdge>)> {
    let t = tree.contracted()?;
    let root = t.nodes[t.root].coords;
    // Generation order by walking down from the root.
    let mut order = vec![0usize; t.edges.len()];
    let mut stack: Vec<(usize, usize)> = t.children[t.root].iter().map(|&e| (e, 1)).collect();
    while let Some((e, g)) = stack.pop() {
        order[e] = g;
        stack.extend(t.children[t.edges[e].child].iter().map(|&c| (c, g + 1)));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (e, edge) in t.edges.iter().enumerate() {
        let (entry, exit) = (t.radius(edge.parent), t.radius(edge.child));
        if !(exit > entry) {
            log::warn!(
                "tree `{}` edge {} grows inwards (entry {entry}, exit {exit}); excluded",
                t.tree_id,
                t.edge_id(e)
            );
            excluded.push(ExcludedEdge { tree_id: t.tree_id.clone(), edge: t.edge_id(e), entry, exit });
            continue;
        }
        let child = &t.nodes[edge.child];
        let status = match child.kind {
            NodeKind::Leaf => EdgeStatus::Leaf,
            NodeKind::Branch => EdgeStatus::Branch,
            NodeKind::Censored => EdgeStatus::Censored,
            NodeKind::Root | NodeKind::PassThrough => {
                return Err(Error::Internal(format!("edge {} ends in a {:?} node", t.edge_id(e), child.kind)))
            }
        };
        let euclid = dist(&t.nodes[edge.parent].coords, &child.coords);
        if euclid == 0.0 {
            return Err(Error::InvalidTree { tree: t.tree_id.clone(), reason: format!("edge {} has zero length", t.edge_id(e)) });
        }
        let segments = edge.polyline.len() - 1;
        let path_ratio = if segments == 1 { 1.0 } else { (arclength(&edge.polyline) / euclid).max(1.0) };
        let nodes_within = t
            .nodes
            .iter()
            .enumerate()
            .filter(|&(i, n)| i != edge.child && dist(&n.coords, &child.coords) <= proximity_radius)
            .count();
        let v: [f64; 3] = std::array::from_fn(|k| child.coords[k] - root[k]);
        let azimuth = (v[1] / dist(&child.coords, &root)).clamp(-1.0, 1.0).acos();
        rows.push(EventRow {
            tree_id: t.tree_id.clone(),
            edge: t.edge_id(e),
            entry,
            exit,
            status,
            covariates: vec![
                edge.width,
                euclid,
                path_ratio,
                nodes_within as f64,
                order[e] as f64,
                azimuth,
                t.children[edge.child].len() as f64,
            ],
        });
    }
    Ok((rows, excluded))
}

/// One row per (contracted) edge with node-radius entry and exit, status
/// from the child node, and the standard covariates. Trees are processed
/// in parallel and concatenated in tree_id order.
pub fn build_event_table(trees: &[MetricTree], proximity_radius: f64) -> Result<EventTable> {
    if !(proximity_radius >= 0.0) {
        return Err(Error::domain(format!("proximity radius must be non-negative, got {proximity_radius}")));
    }
    let mut order: Vec<usize> = (0..trees.len()).collect();
    order.sort_by(|&a, &b| trees[a].tree_id.cmp(&trees[b].tree_id));
    let parts = order
        .par_iter()
        .map(|&i| tree_rows(&trees[i], proximity_radius))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (r, x) in parts {
        rows.extend(r);
        excluded.extend(x);
    }
    let mut table = EventTable::new(TREE_COVARIATES.iter().map(|s| s.to_string()).collect(), rows)?;
    table.excluded = excluded;
    Ok(table)
}

/// Nelson–Aalen over radius with risk set {entry < r ≤ exit}.
pub fn tree_nelson_aalen(table: &EventTable, event: EventKind) -> Result<StepCurve> {
    if table.is_empty() {
        return Err(Error::domain("event table is empty"));
    }
    let mut radii: Vec<f64> = table.rows.iter().filter(|r| event.matches(r.status)).map(|r| r.exit).collect();
    if radii.is_empty() {
        return Ok(StepCurve::empty(CurveKind::Step));
    }
    radii.sort_by(f64::total_cmp);
    let mut levels = Vec::new();
    let mut jumps = Vec::new();
    let mut i = 0;
    while i < radii.len() {
        let r = radii[i];
        let d = radii[i..].iter().take_while(|&&x| x == r).count();
        let at_risk = table.rows.iter().filter(|row| row.entry < r && r <= row.exit).count();
        levels.push(r);
        jumps.push(d as f64 / at_risk as f64);
        i += d;
    }
    StepCurve::from_jumps(levels, &jumps)
}

/// Parameters of a planar random tree grown outwards from the root. Each
/// edge ends in a leaf at rate `leaf_rate · exp(beta · width)` or in a
/// bifurcation at rate `branch_rate` (per unit radius), and is censored at
/// the window radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeGrowth {
    pub leaf_rate: f64,
    pub branch_rate: f64,
    pub beta: f64,
    pub window: f64,
    pub root_edges: usize,
    pub width_range: (f64, f64),
    /// Growth stops branching once this many edges exist.
    pub max_edges: usize,
}

impl Default for TreeGrowth {
    fn default() -> Self {
        Self {
            leaf_rate: 0.4,
            branch_rate: 0.3,
            beta: 0.7,
            window: 5.0,
            root_edges: 3,
            width_range: (0.5, 2.0),
            max_edges: 10_000,
        }
    }
}

/// Grows a random tree with straight, radially monotone edges.
pub fn grow_tree(g: &TreeGrowth, tree_id: impl Into<String>, seed: u64) -> Result<MetricTree> {
    if !(g.leaf_rate > 0.0 && g.branch_rate >= 0.0 && g.window > 0.0 && g.root_edges >= 1) {
        return Err(Error::domain("tree growth needs positive rates, window and root edges"));
    }
    let (wlo, whi) = g.width_range;
    if !(wlo > 0.0 && whi >= wlo) {
        return Err(Error::domain("width range must be positive and ordered"));
    }
    let mut rng = stream_rng(seed, 0x7733);
    let mut nodes = vec![Node { id: "0".into(), coords: [0.0; 3], kind: NodeKind::Root }];
    let mut edges = Vec::new();
    // (parent node, parent radius, parent angle from vertical)
    let mut pending: Vec<(usize, f64, f64)> = Vec::new();
    for _ in 0..g.root_edges {
        pending.push((0, 0.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)));
    }
    let mut cursor = 0;
    while cursor < pending.len() {
        let (parent, r0, theta0) = pending[cursor];
        cursor += 1;
        let width = rng.random_range(wlo..=whi);
        let leaf = g.leaf_rate * (g.beta * width).exp();
        let total = leaf + g.branch_rate;
        let length = Exp::new(total).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng);
        let r1 = (r0 + length).min(g.window);
        // Angular drift small enough that radius grows along the segment.
        let max_turn = if r0 > 0.0 { (r0 / r1).min(1.0).acos() } else { 0.0 };
        let theta = theta0 + rng.random_range(-0.9..=0.9) * max_turn;
        let kind = if r0 + length >= g.window {
            NodeKind::Censored
        } else if rng.random::<f64>() * total < leaf || edges.len() + pending.len() - cursor + 2 > g.max_edges {
            NodeKind::Leaf
        } else {
            NodeKind::Branch
        };
        let coords = [r1 * theta.sin(), r1 * theta.cos(), 0.0];
        let child = nodes.len();
        nodes.push(Node { id: child.to_string(), coords, kind });
        edges.push(Edge { parent, child, polyline: vec![nodes[parent].coords, coords], width });
        if kind == NodeKind::Branch {
            pending.push((child, r1, theta));
            pending.push((child, r1, theta));
        }
    }
    MetricTree::new(tree_id, 2, nodes, edges)
}
