//! Mention graphs, entity graphs and the graph convolution layer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::nn::Fwd;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Mention,
    Entity,
}

/// Edge categories. A node pair may carry several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Two mentions in one sentence.
    MentionSentence,
    /// Two mentions with the same canonical string.
    MentionString,
    /// Neighbors in mention order.
    MentionOrder,
    /// Two entities co-occurring in some sentence.
    EntitySentence,
    /// Neighbors in first-appearance order.
    EntityOrder,
}

/// A mention occurrence with its canonical entity string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mention {
    pub span: Span,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<usize>,
    /// Documents the node occurs in; two entries for a merged common entity.
    pub documents: Vec<usize>,
}

/// Undirected edge with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub kinds: Vec<EdgeKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTopology {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// Symmetrically normalized adjacency with self-loops.
    #[serde(skip, default = "empty_adjacency")]
    pub adjacency: Tensor,
}

fn empty_adjacency() -> Tensor {
    Tensor::zeros(0, 0)
}

/// Edge kinds left out of construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeFilter {
    pub disabled: BTreeSet<EdgeKind>,
}

impl EdgeFilter {
    pub fn allows(&self, kind: EdgeKind) -> bool {
        !self.disabled.contains(&kind)
    }
}

#[derive(Default)]
struct EdgeSet(BTreeMap<(usize, usize), BTreeSet<EdgeKind>>);

impl EdgeSet {
    fn insert(&mut self, i: usize, j: usize, kind: EdgeKind, filter: &EdgeFilter) {
        if i != j && filter.allows(kind) {
            self.0.entry((i.min(j), i.max(j))).or_default().insert(kind);
        }
    }

    fn into_edges(self) -> Vec<GraphEdge> {
        self.0
            .into_iter()
            .map(|((a, b), k)| GraphEdge {
                a,
                b,
                kinds: k.into_iter().collect(),
            })
            .collect()
    }
}

/// `Â = D^{-1/2} (A + I) D^{-1/2}` with degrees counting the self-loop.
pub fn normalized_adjacency(n: usize, edges: &[GraphEdge]) -> Tensor {
    let mut deg = alloc::vec![1.0f64; n];
    for e in edges {
        deg[e.a] += 1.0;
        deg[e.b] += 1.0;
    }
    let mut m = Tensor::zeros(n, n);
    for (i, &d) in deg.iter().enumerate() {
        m.row_mut(i)[i] = 1.0 / d;
    }
    for e in edges {
        let v = 1.0 / libm::sqrt(deg[e.a] * deg[e.b]);
        m.row_mut(e.a)[e.b] = v;
        m.row_mut(e.b)[e.a] = v;
    }
    m
}

impl GraphTopology {
    fn new(nodes: Vec<GraphNode>, edges: EdgeSet) -> Self {
        let edges = edges.into_edges();
        let adjacency = normalized_adjacency(nodes.len(), &edges);
        GraphTopology {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize, kind: EdgeKind) -> bool {
        let (a, b) = (i.min(j), i.max(j));
        self.edges
            .iter()
            .any(|e| e.a == a && e.b == b && e.kinds.contains(&kind))
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut adj = alloc::vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = alloc::vec![false; n];
        let mut stack = alloc::vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Rebuilds `adjacency`, which is not serialized.
    pub fn renormalize(&mut self) {
        self.adjacency = normalized_adjacency(self.nodes.len(), &self.edges);
    }
}

fn sorted_mentions(sent_ids: &[usize], mentions: &[Mention]) -> Result<Vec<Mention>> {
    if mentions.is_empty() {
        return Err(Error::domain("document has no entity mention"));
    }
    for m in mentions {
        m.span.check(sent_ids.len(), "mentions")?;
    }
    // stable: of two mentions with one span, the earlier listed wins
    let mut sorted = mentions.to_vec();
    sorted.sort_by_key(|m| m.span);
    sorted.dedup_by(|later, kept| later.span == kept.span);
    Ok(sorted)
}

/// One node per mention occurrence, in document order.
pub fn build_mention_graph(
    sent_ids: &[usize],
    mentions: &[Mention],
    document: usize,
    filter: &EdgeFilter,
) -> Result<GraphTopology> {
    let ms = sorted_mentions(sent_ids, mentions)?;
    let mut edges = EdgeSet::default();
    for i in 0..ms.len() {
        for j in i + 1..ms.len() {
            if sent_ids[ms[i].span.start()] == sent_ids[ms[j].span.start()] {
                edges.insert(i, j, EdgeKind::MentionSentence, filter);
            }
            if ms[i].name == ms[j].name {
                edges.insert(i, j, EdgeKind::MentionString, filter);
            }
        }
        if i + 1 < ms.len() {
            edges.insert(i, i + 1, EdgeKind::MentionOrder, filter);
        }
    }
    let nodes = ms
        .into_iter()
        .map(|m| GraphNode {
            kind: NodeKind::Mention,
            sentence: Some(sent_ids[m.span.start()]),
            span: Some(m.span),
            name: m.name,
            documents: alloc::vec![document],
        })
        .collect();
    Ok(GraphTopology::new(nodes, edges))
}

/// One node per distinct mention string, in order of first appearance.
pub fn build_entity_graph(
    sent_ids: &[usize],
    mentions: &[Mention],
    document: usize,
    filter: &EdgeFilter,
) -> Result<GraphTopology> {
    let ms = sorted_mentions(sent_ids, mentions)?;
    let mut names: Vec<String> = Vec::new();
    let mut sentences: Vec<BTreeSet<usize>> = Vec::new();
    for m in &ms {
        let i = match names.iter().position(|n| *n == m.name) {
            Some(i) => i,
            None => {
                names.push(m.name.clone());
                sentences.push(BTreeSet::new());
                names.len() - 1
            }
        };
        sentences[i].insert(sent_ids[m.span.start()]);
    }
    let mut edges = EdgeSet::default();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            if !sentences[i].is_disjoint(&sentences[j]) {
                edges.insert(i, j, EdgeKind::EntitySentence, filter);
            }
        }
        if i + 1 < names.len() {
            edges.insert(i, i + 1, EdgeKind::EntityOrder, filter);
        }
    }
    let nodes = names
        .into_iter()
        .map(|name| GraphNode {
            kind: NodeKind::Entity,
            name,
            span: None,
            sentence: None,
            documents: alloc::vec![document],
        })
        .collect();
    Ok(GraphTopology::new(nodes, edges))
}

/// Unified graph: all subject-side nodes, then the object-side nodes that are
/// not common. Also returns where each object-side node landed.
pub fn unify_entity_graphs(
    subject_side: &GraphTopology,
    object_side: &GraphTopology,
    commons: &[String],
) -> Result<(GraphTopology, Vec<usize>)> {
    if commons.is_empty() {
        return Err(Error::validation("common_entities", "no common entity to merge on"));
    }
    for c in commons {
        for (g, side) in [(subject_side, "subject"), (object_side, "object")] {
            if g.node_index(c).is_none() {
                return Err(Error::validation(
                    "common_entities",
                    format!("{c:?} missing from the {side} document graph"),
                ));
            }
        }
    }
    let mut nodes = subject_side.nodes.clone();
    let mut placed = Vec::with_capacity(object_side.len());
    for node in &object_side.nodes {
        if commons.contains(&node.name) {
            let i = subject_side.node_index(&node.name).unwrap_or_default();
            for d in &node.documents {
                if !nodes[i].documents.contains(d) {
                    nodes[i].documents.push(*d);
                }
            }
            placed.push(i);
        } else {
            placed.push(nodes.len());
            nodes.push(node.clone());
        }
    }
    let mut edges = EdgeSet::default();
    let all = EdgeFilter::default();
    for e in &subject_side.edges {
        for &k in &e.kinds {
            edges.insert(e.a, e.b, k, &all);
        }
    }
    for e in &object_side.edges {
        for &k in &e.kinds {
            edges.insert(placed[e.a], placed[e.b], k, &all);
        }
    }
    Ok((GraphTopology::new(nodes, edges), placed))
}

/// `ReLU(Â G Wᵀ)` where row i of `g` is node i's feature.
pub fn gcn_layer(f: &mut Fwd, adjacency: Var, g: Var, w: Var) -> Result<Var> {
    let wt = f.tape.transpose(w);
    let gw = f.tape.matmul(g, wt)?;
    let m = f.tape.matmul(adjacency, gw)?;
    Ok(f.tape.relu(m))
}

/// Plain-value [`gcn_layer`].
pub fn gcn_layer_values(adjacency: &Tensor, g: &Tensor, w: &Tensor) -> Result<Tensor> {
    let m = adjacency.matmul(&g.matmul(&w.transpose())?)?;
    Ok(m.map(|x| x.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterStore;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(b: usize, e: usize, name: &str) -> Mention {
        Mention {
            span: Span(b, e),
            name: name.to_string(),
        }
    }

    #[test]
    fn single_mention_is_a_self_loop() {
        let g = build_mention_graph(&[0, 0], &[m(0, 1, "x")], 0, &EdgeFilter::default()).unwrap();
        assert_eq!(g.adjacency, Tensor::from_rows(&[vec![1.0]]).unwrap());
        assert!(g.is_connected());
        assert!(build_mention_graph(&[0], &[], 0, &EdgeFilter::default()).is_err());
    }

    #[test]
    fn adjacency_matches_degree_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random_bool(0.4) {
                        edges.push(GraphEdge { a, b, kinds: vec![EdgeKind::MentionSentence] });
                    }
                }
            }
            let adj = normalized_adjacency(n, &edges);
            let mut a = vec![vec![0.0; n]; n];
            for (i, row) in a.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            for e in &edges {
                a[e.a][e.b] = 1.0;
                a[e.b][e.a] = 1.0;
            }
            let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
            for i in 0..n {
                for j in 0..n {
                    let want = a[i][j] / (deg[i] * deg[j]).sqrt();
                    assert!((adj.row(i)[j] - want).abs() < 1e-15);
                    assert_eq!(adj.row(i)[j], adj.row(j)[i]);
                }
            }
        }
    }

    #[test]
    fn entity_graph_clique_when_one_sentence() {
        let ms = [m(0, 0, "a"), m(1, 1, "b"), m(2, 2, "c"), m(3, 3, "a")];
        let g = build_entity_graph(&[0; 4], &ms, 0, &EdgeFilter::default()).unwrap();
        assert_eq!(g.len(), 3);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(g.has_edge(i, j, EdgeKind::EntitySentence));
        }
    }

    // Rule-by-rule re-derivation over raw mention lists.
    fn oracle_mention_edges(sent: &[usize], ms: &[Mention]) -> BTreeSet<(usize, usize, EdgeKind)> {
        let mut out = BTreeSet::new();
        for i in 0..ms.len() {
            for j in 0..ms.len() {
                if i >= j {
                    continue;
                }
                if sent[ms[i].span.0] == sent[ms[j].span.0] {
                    out.insert((i, j, EdgeKind::MentionSentence));
                }
                if ms[i].name == ms[j].name {
                    out.insert((i, j, EdgeKind::MentionString));
                }
                if j == i + 1 {
                    out.insert((i, j, EdgeKind::MentionOrder));
                }
            }
        }
        out
    }

    fn flatten(g: &GraphTopology) -> BTreeSet<(usize, usize, EdgeKind)> {
        g.edges
            .iter()
            .flat_map(|e| e.kinds.iter().map(move |&k| (e.a, e.b, k)))
            .collect()
    }

    #[test]
    fn random_documents_match_rule_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let names = ["a", "b", "c"];
        for _ in 0..100 {
            let n = 12;
            let mut sent = vec![0usize; n];
            for i in 1..n {
                sent[i] = sent[i - 1] + usize::from(rng.random_bool(0.3));
            }
            let mut starts: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                starts.swap(i, rng.random_range(0..=i));
            }
            let mut ms: Vec<Mention> = starts[..5]
                .iter()
                .map(|&s| m(s, s, names[rng.random_range(0..3)]))
                .collect();
            ms.sort();
            let g = build_mention_graph(&sent, &ms, 0, &EdgeFilter::default()).unwrap();
            assert_eq!(flatten(&g), oracle_mention_edges(&sent, &ms));
            assert!(g.is_connected());

            let eg = build_entity_graph(&sent, &ms, 0, &EdgeFilter::default()).unwrap();
            let mut order: Vec<&str> = Vec::new();
            for x in &ms {
                if !order.contains(&x.name.as_str()) {
                    order.push(&x.name);
                }
            }
            let mut want = BTreeSet::new();
            for i in 0..order.len() {
                for j in i + 1..order.len() {
                    let co = ms.iter().any(|p| {
                        p.name == order[i]
                            && ms.iter().any(|q| q.name == order[j] && sent[q.span.0] == sent[p.span.0])
                    });
                    if co {
                        want.insert((i, j, EdgeKind::EntitySentence));
                    }
                    if j == i + 1 {
                        want.insert((i, j, EdgeKind::EntityOrder));
                    }
                }
            }
            assert_eq!(flatten(&eg), want);
            assert!(eg.is_connected());
        }
    }

    #[test]
    fn disabled_kinds_are_skipped() {
        let mut filter = EdgeFilter::default();
        filter.disabled.insert(EdgeKind::MentionOrder);
        let ms = [m(0, 0, "a"), m(1, 1, "b")];
        let g = build_mention_graph(&[0, 1], &ms, 0, &filter).unwrap();
        assert!(g.edges.is_empty());
        assert!(!g.is_connected());
    }

    #[test]
    fn unify_two_triangles_on_one_node() {
        let side = |names: [&str; 3], doc| {
            let ms: Vec<Mention> = names.iter().enumerate().map(|(i, s)| m(i, i, s)).collect();
            build_entity_graph(&[0, 0, 0], &ms, doc, &EdgeFilter::default()).unwrap()
        };
        let gs = side(["a", "b", "c"], 0);
        let go = side(["c", "d", "e"], 1);
        let (u, placed) = unify_entity_graphs(&gs, &go, &["c".to_string()]).unwrap();
        assert_eq!(u.len(), 5);
        assert_eq!(placed, vec![2, 3, 4]);
        assert_eq!(u.nodes[2].documents, vec![0, 1]);
        assert_eq!(u.edges.len(), 6);
        assert!(u.has_edge(2, 3, EdgeKind::EntitySentence));
        assert!(!u.has_edge(0, 3, EdgeKind::EntitySentence));
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(u.adjacency.row(i)[j], u.adjacency.row(j)[i]);
            }
        }
        assert!(unify_entity_graphs(&gs, &go, &[]).is_err());
        assert!(unify_entity_graphs(&gs, &go, &["a".to_string()]).is_err());
    }

    #[test]
    fn gcn_small_cases() {
        let id = Tensor::identity(2);
        let v = Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap();
        let one = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(gcn_layer_values(&one, &v, &id).unwrap(), v);
        let half = Tensor::filled(2, 2, 0.5);
        let g = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 5.0]]).unwrap();
        let out = gcn_layer_values(&half, &g, &id).unwrap();
        assert_eq!(out, Tensor::from_rows(&[vec![1.5, 4.0], vec![1.5, 4.0]]).unwrap());
    }

    #[test]
    fn gcn_matches_neighbor_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6;
        let d = 4;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(0.5) {
                    edges.push(GraphEdge { a, b, kinds: vec![EdgeKind::EntitySentence] });
                }
            }
        }
        let adj = normalized_adjacency(n, &edges);
        let g = Tensor::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let store = ParameterStore::new();
        let mut f = Fwd::eval(&store);
        let (a, gv, wv) = (f.tape.constant(adj.clone()), f.tape.constant(g.clone()), f.tape.constant(w.clone()));
        let out = gcn_layer(&mut f, a, gv, wv).unwrap();
        let got = f.value(out).clone();
        for i in 0..n {
            for r in 0..d {
                let mut s = 0.0;
                for j in 0..n {
                    let wg: f64 = (0..d).map(|c| w.row(r)[c] * g.row(j)[c]).sum();
                    s += adj.row(i)[j] * wg;
                }
                assert!((got.row(i)[r] - s.max(0.0)).abs() < 1e-10);
            }
        }
        assert_eq!(got, gcn_layer_values(&adj, &g, &w).unwrap());
    }
}
