//! Architecture graphs, declarative search spaces, canonical forms,
//! enumeration, uniform sampling, and JSON-lines serialization.

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndgrad::CounterRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell architecture as a small attributed DAG.
///
/// Edges are `(src, dst, attr)` triples sorted lexicographically with no
/// duplicate `(src, dst)` pair. Graphs may be constructed with arbitrary node
/// labels; [`canonicalize`](ArchGraph::canonicalize) relabels them into the
/// unique canonical form (topological, `src < dst` on every edge) used for
/// storage, hashing, and dedup.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchGraph {
    num_nodes: usize,
    node_attrs: Vec<u16>,
    edges: Vec<(u16, u16, u16)>,
}

impl ArchGraph {
    /// Validates structure: index bounds, no self-loops, no duplicate
    /// `(src, dst)` pairs, and acyclicity.
    pub fn new(num_nodes: usize, node_attrs: Vec<u16>, mut edges: Vec<(u16, u16, u16)>) -> Result<Self> {
        if node_attrs.len() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} node attributes for {} nodes",
                node_attrs.len(),
                num_nodes
            )));
        }
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        for &(s, d, _) in &edges {
            if s as usize >= num_nodes || d as usize >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({s}, {d}) out of range for {num_nodes} nodes"
                )));
            }
            if s == d {
                return Err(Error::InvalidGraph(format!("self-loop on node {s}")));
            }
        }
        let g = ArchGraph { num_nodes, node_attrs, edges };
        if g.topological_order().is_none() {
            return Err(Error::InvalidGraph("cycle detected".into()));
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn node_attrs(&self) -> &[u16] {
        &self.node_attrs
    }

    pub fn edges(&self) -> &[(u16, u16, u16)] {
        &self.edges
    }

    /// One topological order, or `None` when the edge set has a cycle.
    fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.num_nodes;
        let mut indegree = vec![0usize; n];
        for &(_, d, _) in &self.edges {
            indegree[d as usize] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for &(s, d, _) in &self.edges {
                if s as usize == v {
                    indegree[d as usize] -= 1;
                    if indegree[d as usize] == 0 {
                        ready.push(d as usize);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Relabels nodes into the canonical topological order.
    ///
    /// The canonical order is the one minimizing the serialized pair
    /// `(node attribute sequence, relabeled edge list)` over every
    /// topological order, so any relabeling of the same DAG canonicalizes
    /// identically and the operation is idempotent. Candidate orders are
    /// restricted to attribute-minimal choices at each step, which is exact
    /// for this minimization and keeps the search tiny for cell-sized graphs.
    pub fn canonicalize(&self) -> ArchGraph {
        let n = self.num_nodes;
        if n == 0 {
            return self.clone();
        }
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for &(s, d, _) in &self.edges {
            succ[s as usize].push(d as usize);
            indegree[d as usize] += 1;
        }

        struct Search<'a> {
            graph: &'a ArchGraph,
            succ: &'a [Vec<usize>],
            order: Vec<usize>,
            best: Option<(Vec<u16>, Vec<(u16, u16, u16)>, Vec<usize>)>,
        }

        impl Search<'_> {
            fn run(&mut self, indegree: &mut [usize], remaining: usize) {
                if remaining == 0 {
                    let attrs: Vec<u16> =
                        self.order.iter().map(|&v| self.graph.node_attrs[v]).collect();
                    let mut position = vec![0u16; self.order.len()];
                    for (new, &orig) in self.order.iter().enumerate() {
                        position[orig] = new as u16;
                    }
                    let mut edges: Vec<(u16, u16, u16)> = self
                        .graph
                        .edges
                        .iter()
                        .map(|&(s, d, a)| (position[s as usize], position[d as usize], a))
                        .collect();
                    edges.sort_unstable();
                    let candidate = (attrs, edges, self.order.clone());
                    match &self.best {
                        Some(best) if (&best.0, &best.1) <= (&candidate.0, &candidate.1) => {}
                        _ => self.best = Some(candidate),
                    }
                    return;
                }
                let available: Vec<usize> =
                    (0..indegree.len()).filter(|&v| indegree[v] == 0 && !self.order.contains(&v)).collect();
                let min_attr =
                    available.iter().map(|&v| self.graph.node_attrs[v]).min().expect("DAG has a source");
                for &v in available.iter().filter(|&&v| self.graph.node_attrs[v] == min_attr) {
                    self.order.push(v);
                    for &w in &self.succ[v] {
                        indegree[w] -= 1;
                    }
                    self.run(indegree, remaining - 1);
                    for &w in &self.succ[v] {
                        indegree[w] += 1;
                    }
                    self.order.pop();
                }
            }
        }

        let mut search = Search { graph: self, succ: &succ, order: Vec::new(), best: None };
        search.run(&mut indegree, n);
        let (attrs, edges, _) = search.best.expect("validated DAG always has a topological order");
        ArchGraph { num_nodes: n, node_attrs: attrs, edges }
    }

    /// True when the graph equals its own canonical form.
    pub fn is_canonical(&self) -> bool {
        *self == self.canonicalize()
    }

    /// Stable text key of the canonical form; used for dedup and hashing.
    pub fn canonical_key(&self) -> String {
        let c = self.canonicalize();
        let nodes: Vec<String> = c.node_attrs.iter().map(|a| a.to_string()).collect();
        let edges: Vec<String> =
            c.edges.iter().map(|(s, d, a)| format!("{s}-{d}:{a}")).collect();
        format!("n{};{};{}", c.num_nodes, nodes.join(","), edges.join(","))
    }

    /// 64-bit content hash of the canonical form, rendered as fixed-width hex.
    pub fn arch_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_key().as_bytes()))
    }

    /// In-neighbors `u` of `v` over edges `(u, v)`.
    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, d, _)| d as usize == v)
            .map(|&(s, _, a)| (s as usize, a))
    }

    /// True when a directed path exists from `from` to `to`.
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        let mut reach = vec![false; self.num_nodes];
        reach[from] = true;
        let mut frontier = vec![from];
        while let Some(v) = frontier.pop() {
            for &(s, d, _) in &self.edges {
                if s as usize == v && !reach[d as usize] {
                    reach[d as usize] = true;
                    frontier.push(d as usize);
                }
            }
        }
        reach[to]
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Numeric form of [`ArchGraph::arch_hash`].
pub fn fnv_hash_of(g: &ArchGraph) -> u64 {
    fnv1a64(g.canonical_key().as_bytes())
}

/// Whether operators annotate nodes (NB101-style) or edges (NB201-style).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    OperatorOnNode,
    OperatorOnEdge,
}

/// Whether the edge set is a fixed template or free per graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeTemplate {
    Fixed,
    Free,
}

/// Reserved node attributes for operator-on-node spaces.
pub const NODE_ATTR_INPUT: u16 = 0;
pub const NODE_ATTR_OUTPUT: u16 = 1;

/// Declarative description of a cell search space.
///
/// Operator-on-edge spaces use node attributes equal to the node order and a
/// single fixed edge template (the first `max_edges` ordered pairs), so the
/// space enumerates to `edge_vocab_size ^ num_edge_slots` architectures.
/// Operator-on-node spaces reserve node attributes 0 and 1 for the input and
/// output nodes, set `edge_vocab_size = 1`, and leave the edge set free.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kind: SpaceKind,
    pub num_nodes: usize,
    pub node_vocab_size: usize,
    pub edge_vocab_size: usize,
    pub edge_template: EdgeTemplate,
    pub max_edges: usize,
}

impl SearchSpace {
    /// Operator-on-edge space over `num_nodes` with a fixed template of the
    /// first `max_edges` ordered pairs (all pairs when `None`).
    pub fn operator_on_edge(
        num_nodes: usize,
        edge_vocab_size: usize,
        max_edges: Option<usize>,
    ) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::InvalidSpace("operator-on-edge space needs at least 2 nodes".into()));
        }
        if edge_vocab_size == 0 {
            return Err(Error::InvalidSpace("edge vocabulary must be non-empty".into()));
        }
        let all_pairs = num_nodes * (num_nodes - 1) / 2;
        let max_edges = max_edges.unwrap_or(all_pairs);
        if max_edges == 0 || max_edges > all_pairs {
            return Err(Error::InvalidSpace(format!(
                "max_edges {max_edges} out of range 1..={all_pairs}"
            )));
        }
        Ok(SearchSpace {
            kind: SpaceKind::OperatorOnEdge,
            num_nodes,
            node_vocab_size: num_nodes,
            edge_vocab_size,
            edge_template: EdgeTemplate::Fixed,
            max_edges,
        })
    }

    /// The default synthetic-benchmark shape: 4 nodes, 6 edge slots, 5
    /// operators, 15,625 architectures.
    pub fn nb201_like() -> Self {
        SearchSpace::operator_on_edge(4, 5, None).expect("static shape")
    }

    /// Operator-on-node space with `num_operators` computational operator
    /// types plus reserved input/output attributes, and a free edge set.
    pub fn operator_on_node(num_nodes: usize, num_operators: usize, max_edges: usize) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::InvalidSpace("operator-on-node space needs input and output nodes".into()));
        }
        if num_operators == 0 {
            return Err(Error::InvalidSpace("operator vocabulary must be non-empty".into()));
        }
        if max_edges == 0 {
            return Err(Error::InvalidSpace("max_edges must be positive".into()));
        }
        Ok(SearchSpace {
            kind: SpaceKind::OperatorOnNode,
            num_nodes,
            node_vocab_size: 2 + num_operators,
            edge_vocab_size: 1,
            edge_template: EdgeTemplate::Free,
            max_edges,
        })
    }

    /// Ordered `(src, dst)` slot pairs of the decoder layout; for fixed
    /// templates these are exactly the edges every architecture carries.
    pub fn slot_pairs(&self) -> Vec<(u16, u16)> {
        let mut pairs = Vec::new();
        for s in 0..self.num_nodes {
            for d in (s + 1)..self.num_nodes {
                pairs.push((s as u16, d as u16));
            }
        }
        if self.edge_template == EdgeTemplate::Fixed {
            pairs.truncate(self.max_edges);
        }
        pairs
    }

    pub fn num_edge_slots(&self) -> usize {
        self.slot_pairs().len()
    }

    /// Exact architecture count for fixed-template spaces.
    pub fn count(&self) -> Option<u128> {
        match self.edge_template {
            EdgeTemplate::Fixed => {
                Some((self.edge_vocab_size as u128).pow(self.num_edge_slots() as u32))
            }
            EdgeTemplate::Free => None,
        }
    }

    /// Node attribute classes the decoder predicts; operator-on-node spaces
    /// get one extra reserved "absent" class for padded slots.
    pub fn node_classes(&self) -> usize {
        match self.kind {
            SpaceKind::OperatorOnNode => self.node_vocab_size + 1,
            SpaceKind::OperatorOnEdge => self.node_vocab_size,
        }
    }

    /// The decoder-only class index marking a padded node slot.
    pub fn absent_class(&self) -> Option<usize> {
        match self.kind {
            SpaceKind::OperatorOnNode => Some(self.node_vocab_size),
            SpaceKind::OperatorOnEdge => None,
        }
    }

    /// Full validation of a graph against this space's vocabularies and
    /// template. Accepts non-canonical labelings.
    pub fn validate(&self, g: &ArchGraph) -> Result<()> {
        if let Some(&bad) = g.node_attrs().iter().find(|&&a| a as usize >= self.node_vocab_size) {
            return Err(Error::InvalidGraph(format!(
                "node attribute {bad} outside vocabulary of {}",
                self.node_vocab_size
            )));
        }
        if let Some(&(_, _, bad)) =
            g.edges().iter().find(|&&(_, _, a)| a as usize >= self.edge_vocab_size)
        {
            return Err(Error::InvalidGraph(format!(
                "edge attribute {bad} outside vocabulary of {}",
                self.edge_vocab_size
            )));
        }
        match self.kind {
            SpaceKind::OperatorOnEdge => {
                if g.num_nodes() != self.num_nodes {
                    return Err(Error::InvalidGraph(format!(
                        "expected {} nodes, got {}",
                        self.num_nodes,
                        g.num_nodes()
                    )));
                }
                let c = g.canonicalize();
                let want: Vec<u16> = (0..self.num_nodes as u16).collect();
                if c.node_attrs() != want {
                    return Err(Error::InvalidGraph(
                        "operator-on-edge node attributes must be the node orders".into(),
                    ));
                }
                if self.edge_template == EdgeTemplate::Fixed {
                    let have: Vec<(u16, u16)> = c.edges().iter().map(|&(s, d, _)| (s, d)).collect();
                    if have != self.slot_pairs() {
                        return Err(Error::InvalidGraph(
                            "edge set does not match the fixed template".into(),
                        ));
                    }
                }
            }
            SpaceKind::OperatorOnNode => {
                if g.num_nodes() > self.num_nodes {
                    return Err(Error::InvalidGraph(format!(
                        "{} nodes exceed the space limit {}",
                        g.num_nodes(),
                        self.num_nodes
                    )));
                }
                if g.edges().len() > self.max_edges {
                    return Err(Error::InvalidGraph(format!(
                        "{} edges exceed the space limit {}",
                        g.edges().len(),
                        self.max_edges
                    )));
                }
                let inputs = g.node_attrs().iter().filter(|&&a| a == NODE_ATTR_INPUT).count();
                let outputs = g.node_attrs().iter().filter(|&&a| a == NODE_ATTR_OUTPUT).count();
                if inputs != 1 || outputs != 1 {
                    return Err(Error::InvalidGraph(format!(
                        "need exactly one input and one output node, got {inputs}/{outputs}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds and fully validates a graph belonging to this space.
    pub fn graph(
        &self,
        node_attrs: Vec<u16>,
        edges: Vec<(u16, u16, u16)>,
    ) -> Result<ArchGraph> {
        let g = ArchGraph::new(node_attrs.len(), node_attrs, edges)?;
        self.validate(&g)?;
        Ok(g)
    }

    /// Streams every architecture of a fixed-template space exactly once, in
    /// lexicographic order of the edge-operator assignment.
    pub fn enumerate(&self) -> Result<SpaceEnumeration> {
        if self.edge_template != EdgeTemplate::Fixed {
            return Err(Error::UnsupportedEnumeration(
                "free-template spaces have no finite enumeration".into(),
            ));
        }
        Ok(SpaceEnumeration { space: self.clone(), next: Some(vec![0; self.num_edge_slots()]) })
    }

    /// Builds the architecture for one fixed-template operator assignment.
    pub fn assemble(&self, assignment: &[u16]) -> Result<ArchGraph> {
        if self.edge_template != EdgeTemplate::Fixed {
            return Err(Error::InvalidSpace("assignments require a fixed template".into()));
        }
        if assignment.len() != self.num_edge_slots() {
            return Err(Error::InvalidGraph(format!(
                "{} operators for {} slots",
                assignment.len(),
                self.num_edge_slots()
            )));
        }
        let node_attrs: Vec<u16> = (0..self.num_nodes as u16).collect();
        let edges: Vec<(u16, u16, u16)> = self
            .slot_pairs()
            .iter()
            .zip(assignment)
            .map(|(&(s, d), &a)| (s, d, a))
            .collect();
        self.graph(node_attrs, edges)
    }

    /// The fixed-template operator assignment of a valid graph.
    pub fn assignment_of(&self, g: &ArchGraph) -> Result<Vec<u16>> {
        self.validate(g)?;
        let c = g.canonicalize();
        Ok(c.edges().iter().map(|&(_, _, a)| a).collect())
    }

    /// Draws one valid canonical architecture. For fixed-template spaces the
    /// draw is uniform over the whole space.
    pub fn sample_uniform(&self, rng: &mut CounterRng) -> ArchGraph {
        match self.edge_template {
            EdgeTemplate::Fixed => {
                let assignment: Vec<u16> = (0..self.num_edge_slots())
                    .map(|_| rng.below(self.edge_vocab_size) as u16)
                    .collect();
                self.assemble(&assignment).expect("template assignment is always valid")
            }
            EdgeTemplate::Free => self.sample_free(rng),
        }
    }

    /// Random operator-on-node graph: a fixed node count with a chain
    /// backbone guaranteeing input-to-output connectivity, plus random skip
    /// edges up to `max_edges`. Not uniform; free-template spaces carry no
    /// uniformity contract.
    fn sample_free(&self, rng: &mut CounterRng) -> ArchGraph {
        let n = self.num_nodes;
        let mut attrs = vec![0u16; n];
        attrs[n - 1] = NODE_ATTR_OUTPUT;
        for attr in attrs.iter_mut().take(n - 1).skip(1) {
            *attr = (2 + rng.below(self.node_vocab_size - 2)) as u16;
        }
        let mut edges: Vec<(u16, u16, u16)> =
            (0..n - 1).map(|i| (i as u16, i as u16 + 1, 0)).collect();
        for s in 0..n {
            for d in (s + 2)..n {
                if edges.len() >= self.max_edges {
                    break;
                }
                if rng.uniform() < 0.5 {
                    edges.push((s as u16, d as u16, 0));
                }
            }
        }
        self.graph(attrs, edges).expect("backbone construction is valid").canonicalize()
    }
}

/// Iterator over every architecture of a fixed-template space.
pub struct SpaceEnumeration {
    space: SearchSpace,
    next: Option<Vec<u16>>,
}

impl Iterator for SpaceEnumeration {
    type Item = ArchGraph;

    fn next(&mut self) -> Option<ArchGraph> {
        let current = self.next.take()?;
        let g = self.space.assemble(&current).expect("enumerated assignment is valid");
        // Odometer increment, last slot fastest.
        let mut bumped = current;
        let vocab = self.space.edge_vocab_size as u16;
        let mut pos = bumped.len();
        loop {
            if pos == 0 {
                self.next = None;
                break;
            }
            pos -= 1;
            bumped[pos] += 1;
            if bumped[pos] < vocab {
                self.next = Some(bumped);
                break;
            }
            bumped[pos] = 0;
        }
        Some(g)
    }
}

/// One JSON-lines record: `{"nodes":[...],"edges":[[src,dst,attr],...],"score":float|null}`.
#[derive(Serialize, Deserialize)]
struct Record {
    nodes: Vec<u16>,
    edges: Vec<(u16, u16, u16)>,
    score: Option<f64>,
}

/// Writes architectures (with optional scores) as JSON lines.
pub fn write_jsonl<'a, I>(path: &Path, items: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a ArchGraph, Option<f64>)>,
{
    let file = std::fs::File::create(path).map_err(Error::io(path.display().to_string()))?;
    let mut out = BufWriter::new(file);
    for (g, score) in items {
        let record = Record {
            nodes: g.node_attrs().to_vec(),
            edges: g.edges().to_vec(),
            score,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("serialize record: {e}")))?;
        writeln!(out, "{line}").map_err(Error::io(path.display().to_string()))?;
    }
    out.flush().map_err(Error::io(path.display().to_string()))?;
    Ok(())
}

/// Reads and validates a JSON-lines architecture file against a space.
/// Errors carry the 1-based line number of the offending record.
pub fn read_jsonl(path: &Path, space: &SearchSpace) -> Result<Vec<(ArchGraph, Option<f64>)>> {
    let file = std::fs::File::open(path).map_err(Error::io(path.display().to_string()))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::io(path.display().to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        let graph = space
            .graph(record.nodes, record.edges)
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        out.push((graph, record.score));
    }
    Ok(out)
}

/// Content hash over the canonical serialization of a whole record list.
pub fn dataset_hash(items: &[(ArchGraph, Option<f64>)]) -> u64 {
    let mut acc = String::new();
    for (g, score) in items {
        acc.push_str(&g.canonical_key());
        match score {
            Some(s) => acc.push_str(&format!("={s:e};")),
            None => acc.push(';'),
        }
    }
    fnv1a64(acc.as_bytes())
}

/// Applies a node relabeling: node `v` becomes `perm[v]`.
pub fn relabel(g: &ArchGraph, perm: &[usize]) -> ArchGraph {
    let mut attrs = vec![0u16; g.num_nodes()];
    for (v, &p) in perm.iter().enumerate() {
        attrs[p] = g.node_attrs()[v];
    }
    let edges: Vec<(u16, u16, u16)> = g
        .edges()
        .iter()
        .map(|&(s, d, a)| (perm[s as usize] as u16, perm[d as usize] as u16, a))
        .collect();
    ArchGraph::new(g.num_nodes(), attrs, edges).expect("permutation preserves validity")
}

/// Uniform sample of up to `count` distinct architectures, rejecting
/// duplicates (and anything in `exclude`) by canonical key. Returns fewer
/// when the attempt budget exhausts, which happens only when `count` is
/// close to (or beyond) the number of reachable architectures.
pub fn sample_distinct(
    space: &SearchSpace,
    count: usize,
    exclude: &HashSet<String>,
    rng: &mut CounterRng,
) -> Vec<ArchGraph> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts_left = 200usize.saturating_mul(count).saturating_add(10_000);
    while out.len() < count && attempts_left > 0 {
        attempts_left -= 1;
        let g = space.sample_uniform(rng);
        let key = g.canonical_key();
        if exclude.contains(&key) || !seen.insert(key) {
            continue;
        }
        out.push(g);
    }
    out
}
