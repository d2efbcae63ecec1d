//! Covariate clustering and top-down hierarchical group testing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupSpec};
use crate::error::{Error, Result};
use crate::inference::{estimate, test_group, CorrectionSample, EstimateOptions};
use crate::lasso::{fit_initial, InitialFit, InitialOptions};
use crate::linalg;
use crate::projection::{Mode, Weight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Complete,
    Average,
}

impl Linkage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub members: GroupSpec,
    pub children: Vec<usize>,
    #[serde(skip)]
    pub parent: Option<usize>,
    pub height: f64,
}

/// Binary cluster tree over covariates `1..=p`. Nodes `0..p` are the leaves
/// (node `j` holds covariate `j + 1`); internal nodes follow in merge order
/// and the last node is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TreeNode>", into = "Vec<TreeNode>")]
pub struct ClusterTree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl From<ClusterTree> for Vec<TreeNode> {
    fn from(t: ClusterTree) -> Self {
        t.nodes
    }
}

impl TryFrom<Vec<TreeNode>> for ClusterTree {
    type Error = Error;

    fn try_from(nodes: Vec<TreeNode>) -> Result<Self> {
        ClusterTree::from_nodes(nodes)
    }
}

impl ClusterTree {
    /// Validates an explicit tree: ids equal positions, one root covering
    /// `1..=p`, and the children of every node partition its members.
    pub fn from_nodes(mut nodes: Vec<TreeNode>) -> Result<Self> {
        let bad = |msg: String| Error::Invalid(format!("invalid tree: {msg}"));
        if nodes.is_empty() {
            return Err(bad("no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(bad(format!("node at position {i} has id {}", node.id)));
            }
        }
        let mut parent = vec![None; nodes.len()];
        for node in &nodes {
            for &c in &node.children {
                if c >= nodes.len() {
                    return Err(bad(format!("node {} has unknown child {c}", node.id)));
                }
                if parent[c].is_some() {
                    return Err(bad(format!("node {c} has two parents")));
                }
                parent[c] = Some(node.id);
            }
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(bad(format!("expected one root, found {}", roots.len())));
        }
        let root = roots[0];
        for node in &nodes {
            if node.children.is_empty() {
                if node.members.len() != 1 {
                    return Err(bad(format!("leaf {} is not a singleton", node.id)));
                }
                continue;
            }
            let mut union: Vec<usize> = Vec::with_capacity(node.members.len());
            for &c in &node.children {
                union.extend_from_slice(nodes[c].members.indices());
            }
            union.sort_unstable();
            if union != node.members.indices() {
                return Err(bad(format!(
                    "children of node {} do not partition its members",
                    node.id
                )));
            }
        }
        let p = nodes[root].members.len();
        if nodes[root].members.max_index() != p {
            return Err(bad(format!("root does not cover 1..={p}")));
        }
        for (node, par) in nodes.iter_mut().zip(parent) {
            node.parent = par;
        }
        Ok(ClusterTree { nodes, root })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn p(&self) -> usize {
        self.nodes[self.root].members.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Agglomerative clustering of the columns of `d` with dissimilarity
/// `1 − r²`. Ties go to the pair whose smallest members are smallest.
pub fn build_tree(d: &Dataset, linkage: Linkage) -> Result<ClusterTree> {
    let p = d.p();
    if p < 2 {
        return Err(Error::Invalid(format!("clustering needs p >= 2, got {p}")));
    }
    let corr =
        linalg::column_correlation(d.x()).map_err(|j| Error::Invalid(format!("column {} has zero variance", j + 1)))?;
    let diss = corr.mapv(|r| 1.0 - r * r);
    Ok(cluster(diss.as_slice().expect("standard layout"), p, linkage))
}

/// Clustering on a row-major `p × p` dissimilarity matrix.
pub fn cluster(diss: &[f64], p: usize, linkage: Linkage) -> ClusterTree {
    let mut dist = diss.to_vec();
    let mut nodes: Vec<TreeNode> = (0..p)
        .map(|j| TreeNode {
            id: j,
            members: GroupSpec::new(vec![j + 1]).expect("singleton"),
            children: Vec::new(),
            parent: None,
            height: 0.0,
        })
        .collect();
    // slot s holds a live cluster; slots are ordered by smallest member
    // because a merge keeps the lower slot
    let mut alive: Vec<usize> = (0..p).collect();
    let mut node_of: Vec<usize> = (0..p).collect();
    let mut size: Vec<usize> = vec![1; p];

    while alive.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (ia, &a) in alive.iter().enumerate() {
            let row = &dist[a * p..(a + 1) * p];
            for &b in &alive[ia + 1..] {
                if row[b] < best.0 {
                    best = (row[b], a, b);
                }
            }
        }
        let (h, a, b) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for &k in &alive {
            if k == a || k == b {
                continue;
            }
            let (dak, dbk) = (dist[a * p + k], dist[b * p + k]);
            let merged = match linkage {
                Linkage::Complete => dak.max(dbk),
                Linkage::Average => (na * dak + nb * dbk) / (na + nb),
            };
            dist[a * p + k] = merged;
            dist[k * p + a] = merged;
        }
        let (left, right) = (node_of[a], node_of[b]);
        let mut members = nodes[left].members.indices().to_vec();
        members.extend_from_slice(nodes[right].members.indices());
        let id = nodes.len();
        nodes[left].parent = Some(id);
        nodes[right].parent = Some(id);
        nodes.push(TreeNode {
            id,
            members: GroupSpec::new(members).expect("disjoint clusters"),
            children: vec![left, right],
            parent: None,
            height: h,
        });
        node_of[a] = id;
        size[a] += size[b];
        alive.retain(|&s| s != b);
    }
    let root = nodes.len() - 1;
    ClusterTree { nodes, root }
}

/// `min(p_raw · p_total / group_size, 1)`.
pub fn adjust_pvalue(p_raw: f64, group_size: usize, p_total: usize) -> f64 {
    (p_raw * p_total as f64 / group_size as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedNode {
    pub id: usize,
    pub group: GroupSpec,
    pub depth: usize,
    /// `None` when the node could not be tested.
    pub p_raw: Option<f64>,
    pub p_tilde: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub group: GroupSpec,
    pub p_raw: f64,
    pub p_tilde: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierResult {
    pub findings: Vec<Finding>,
    pub alpha: f64,
    pub tested_count: usize,
    pub untestable: usize,
    /// Every tested node in breadth-first order.
    pub tested: Vec<TestedNode>,
}

impl HierResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "members,p_raw,p_tilde,p_adjusted").map_err(io)?;
        for f in &self.findings {
            writeln!(w, "{},{},{},{}", f.group.join(";"), f.p_raw, f.p_tilde, f.p_adjusted).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn finding_groups(&self) -> Vec<GroupSpec> {
        self.findings.iter().map(|f| f.group.clone()).collect()
    }
}

/// Top-down testing with a caller-supplied group p-value. Nodes on one level
/// are evaluated in parallel; results are assembled in tree order.
pub fn run_hierarchy_with<F>(tree: &ClusterTree, alpha: f64, pvalue: F) -> Result<HierResult>
where
    F: Fn(&GroupSpec) -> Result<f64> + Sync,
{
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p = tree.p();
    let mut tested: Vec<TestedNode> = Vec::new();
    let mut untestable = 0;
    // (node, adjusted p-value of its parent)
    let mut level: Vec<(usize, f64)> = vec![(tree.root(), 0.0)];
    let mut depth = 0;
    while !level.is_empty() {
        let raw: Vec<Result<f64>> = level
            .par_iter()
            .map(|&(id, _)| pvalue(&tree.node(id).members))
            .collect();
        let mut next = Vec::new();
        for (&(id, parent_adj), r) in level.iter().zip(raw) {
            let node = tree.node(id);
            let p_raw = match r {
                Ok(v) if v.is_finite() => Some(v.clamp(0.0, 1.0)),
                Ok(v) => {
                    log::warn!("group {} gave p-value {v}; treated as not significant", node.members);
                    None
                }
                Err(e) => {
                    log::warn!(
                        "group {} could not be tested ({e}); treated as not significant",
                        node.members
                    );
                    None
                }
            };
            if p_raw.is_none() {
                untestable += 1;
            }
            let p_tilde = p_raw.map_or(1.0, |v| adjust_pvalue(v, node.members.len(), p));
            let p_adjusted = p_tilde.max(parent_adj);
            let significant = p_raw.is_some() && p_adjusted <= alpha;
            if significant {
                next.extend(node.children.iter().map(|&c| (c, p_adjusted)));
            }
            tested.push(TestedNode {
                id,
                group: node.members.clone(),
                depth,
                p_raw,
                p_tilde,
                p_adjusted,
                significant,
            });
        }
        level = next;
        depth += 1;
    }

    let significant: HashSet<usize> = tested.iter().filter(|t| t.significant).map(|t| t.id).collect();
    let findings = tested
        .iter()
        .filter(|t| t.significant)
        .filter(|t| !tree.node(t.id).children.iter().any(|c| significant.contains(c)))
        .map(|t| Finding {
            group: t.group.clone(),
            p_raw: t.p_raw.expect("significant nodes were tested"),
            p_tilde: t.p_tilde,
            p_adjusted: t.p_adjusted,
        })
        .collect();
    Ok(HierResult {
        findings,
        alpha,
        tested_count: tested.len(),
        untestable,
        tested,
    })
}

/// Group test used at every node.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HierEngine {
    /// `sigma` or `identity`.
    pub mode: Mode,
    pub tau: f64,
    pub c_lambda: f64,
    pub initial: InitialOptions,
}

impl Default for HierEngine {
    fn default() -> Self {
        let est = EstimateOptions::default();
        HierEngine {
            mode: Mode::Sigma,
            tau: est.tau,
            c_lambda: est.c_lambda,
            initial: InitialOptions::default(),
        }
    }
}

/// Fits once and tests every visited node with the one-sided group test.
pub fn run_hierarchy(d: &Dataset, tree: &ClusterTree, alpha: f64, engine: &HierEngine) -> Result<HierResult> {
    let fit = fit_initial(d, &engine.initial)?;
    run_hierarchy_fitted(d, &fit, tree, alpha, engine)
}

pub fn run_hierarchy_fitted(
    d: &Dataset,
    fit: &InitialFit,
    tree: &ClusterTree,
    alpha: f64,
    engine: &HierEngine,
) -> Result<HierResult> {
    if tree.p() != d.p() {
        return Err(Error::Dimension(format!(
            "tree covers {} covariates but the data has p = {}",
            tree.p(),
            d.p()
        )));
    }
    let weight = match engine.mode {
        Mode::Sigma => Weight::Sigma,
        Mode::Identity => Weight::Identity,
        Mode::General => {
            return Err(Error::Invalid(
                "hierarchical testing supports modes sigma and identity".into(),
            ))
        }
    };
    let sample = CorrectionSample::new(fit, d)?;
    let opts = EstimateOptions {
        tau: engine.tau,
        c_lambda: engine.c_lambda,
        ..Default::default()
    };
    run_hierarchy_with(tree, alpha, |g| {
        let est = estimate(&sample, fit, g, weight, &opts)?;
        Ok(test_group(&est, alpha)?.p_value)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn leaf(id: usize) -> TreeNode {
        TreeNode {
            id,
            members: GroupSpec::new(vec![id + 1]).unwrap(),
            children: vec![],
            parent: None,
            height: 0.0,
        }
    }

    fn internal(id: usize, members: Vec<usize>, children: Vec<usize>) -> TreeNode {
        TreeNode {
            id,
            members: GroupSpec::new(members).unwrap(),
            children,
            parent: None,
            height: 1.0,
        }
    }

    #[test]
    fn adjustment_examples() {
        assert_eq!(adjust_pvalue(0.03, 500, 500), 0.03);
        assert_abs_diff_eq!(adjust_pvalue(0.01, 100, 500), 0.05, epsilon = 1e-15);
        assert_eq!(adjust_pvalue(0.5, 1, 500), 1.0);
    }

    #[test]
    fn two_columns_make_one_merge() {
        let x = ndarray::array![[1.0, 0.3], [2.0, -1.0], [0.5, 0.2], [3.0, 1.0]];
        let d = Dataset::new(x, ndarray::array![0.0, 1.0, 0.0, 1.0]).unwrap();
        let t = build_tree(&d, Linkage::Complete).unwrap();
        assert_eq!(t.nodes().len(), 3);
        assert_eq!(t.node(t.root()).children, vec![0, 1]);
        assert_eq!(t.node(0).parent, Some(2));
    }

    #[test]
    fn duplicated_columns_merge_first() {
        let x = ndarray::array![
            [1.0, 0.3, 2.0],
            [2.0, -1.0, 4.0],
            [0.5, 0.2, 1.0],
            [3.0, 1.0, 6.0],
            [-1.0, 0.7, -2.0]
        ];
        let d = Dataset::new(x, ndarray::Array1::zeros(5)).unwrap();
        let t = build_tree(&d, Linkage::Complete).unwrap();
        assert_eq!(t.node(3).members.indices(), &[1, 3]);
        assert_abs_diff_eq!(t.node(3).height, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_rejected() {
        let x = ndarray::array![[1.0, 0.3], [1.0, -1.0], [1.0, 0.2]];
        let d = Dataset::new(x, ndarray::array![0.0, 1.0, 0.0]).unwrap();
        assert!(build_tree(&d, Linkage::Average).is_err());
    }

    #[test]
    fn ties_break_by_smallest_member() {
        // all dissimilarities equal: merges proceed (1,2), then ({1,2},3), ...
        let p = 4;
        let mut diss = vec![0.5; p * p];
        for i in 0..p {
            diss[i * p + i] = 0.0;
        }
        let t = cluster(&diss, p, Linkage::Average);
        assert_eq!(t.node(4).children, vec![0, 1]);
        assert_eq!(t.node(5).children, vec![4, 2]);
        assert_eq!(t.node(6).children, vec![5, 3]);
    }

    #[test]
    fn tree_json_round_trip() {
        let p = 5;
        let diss: Vec<f64> = (0..p * p)
            .map(|k| {
                if k / p == k % p {
                    0.0
                } else {
                    ((k / p) as f64 - (k % p) as f64).abs() / 5.0
                }
            })
            .collect();
        let t = cluster(&diss, p, Linkage::Complete);
        let back = ClusterTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let json = serde_json::to_value(&t).unwrap();
        assert!(json[0].get("parent").is_none());
        assert!(json[0].get("members").is_some());
    }

    #[test]
    fn invalid_trees_rejected() {
        let nodes = vec![leaf(0), leaf(1), internal(2, vec![1, 2, 3], vec![0, 1])];
        assert!(ClusterTree::from_nodes(nodes).is_err());
        let nodes = vec![leaf(0), leaf(1)];
        assert!(ClusterTree::from_nodes(nodes).is_err());
    }

    fn chain_tree() -> ClusterTree {
        // root {1,2,3} -> {1,2} and {3}; {1,2} -> {1}, {2}
        ClusterTree::from_nodes(vec![
            leaf(0),
            leaf(1),
            leaf(2),
            internal(3, vec![1, 2], vec![0, 1]),
            internal(4, vec![1, 2, 3], vec![3, 2]),
        ])
        .unwrap()
    }

    #[test]
    fn non_significant_root_stops() {
        let t = chain_tree();
        let r = run_hierarchy_with(&t, 0.05, |_| Ok(0.2)).unwrap();
        assert!(r.findings.is_empty());
        assert_eq!(r.tested_count, 1);
    }

    #[test]
    fn monotone_adjustment_along_path() {
        // p̃ along root → {1,2} → {1} is (0.001, 0.04, 0.2)
        let t = chain_tree();
        let r = run_hierarchy_with(&t, 0.05, |g| {
            Ok(match g.len() {
                3 => 0.001,
                2 => 0.04 * 2.0 / 3.0,
                _ => {
                    if g.contains(3) {
                        0.9
                    } else {
                        0.2 / 3.0
                    }
                }
            })
        })
        .unwrap();
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].group.indices(), &[1, 2]);
        assert_abs_diff_eq!(r.findings[0].p_adjusted, 0.04, epsilon = 1e-12);
        let leaf1 = r.tested.iter().find(|n| n.id == 0).unwrap();
        assert_abs_diff_eq!(leaf1.p_adjusted, 0.2, epsilon = 1e-12);
        assert!(!leaf1.significant);
        // node {3} was tested (its parent is the root) but not significant
        assert_eq!(r.tested_count, 5);
    }

    #[test]
    fn failing_engine_marks_node_untestable() {
        let t = chain_tree();
        let r = run_hierarchy_with(&t, 0.05, |g| {
            if g.len() == 2 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(0.0)
            }
        })
        .unwrap();
        assert_eq!(r.untestable, 1);
        // {1,2} failed, so only the leaf {3} is reported below the root
        let groups: Vec<Vec<usize>> = r.findings.iter().map(|f| f.group.indices().to_vec()).collect();
        assert_eq!(groups, vec![vec![3]]);
    }

    #[test]
    fn csv_export_has_header() {
        let t = chain_tree();
        let r = run_hierarchy_with(&t, 0.05, |_| Ok(0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        r.write_csv(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "members,p_raw,p_tilde,p_adjusted\n"
        );
    }
}
