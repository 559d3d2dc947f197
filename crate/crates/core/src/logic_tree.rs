//! Syllogism nodes and the directed logical tree built from them.
//!
//! A tree is a DAG: an edge `a -> b` means node `a` is a necessary antecedent
//! of node `b`. A node may feed several consequents, so this is not a strict
//! tree. Mutating operations consume the tree and hand back a new value.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("node id {0} already present")]
    DuplicateNodeId(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("edge {0} -> {1} would close a directed cycle")]
    CycleDetected(NodeId, NodeId),
    #[error("edge {0} -> {1} already present")]
    DuplicateEdge(NodeId, NodeId),
    #[error("merged trees form a cycle through edges {}", format_edges(.0))]
    MergeCycle(Vec<(NodeId, NodeId)>),
    #[error("tree is empty")]
    EmptyTree,
    #[error("nothing to merge")]
    NothingToMerge,
    #[error("{0} text must not be empty")]
    EmptyText(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn format_edges(edges: &[(NodeId, NodeId)]) -> String {
    edges
        .iter()
        .map(|(a, b)| format!("{a}->{b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PremiseKind {
    Major,
    Minor,
}

/// Where a premise came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PremiseSource {
    Question,
    Knowledge,
    Revision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Premise {
    text: String,
    kind: PremiseKind,
    source: PremiseSource,
}

impl Premise {
    pub fn new(
        text: impl Into<String>,
        kind: PremiseKind,
        source: PremiseSource,
    ) -> Result<Self, TreeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TreeError::EmptyText(match kind {
                PremiseKind::Major => "major premise",
                PremiseKind::Minor => "minor premise",
            }));
        }
        Ok(Self { text, kind, source })
    }

    pub fn major(text: impl Into<String>) -> Result<Self, TreeError> {
        Self::new(text, PremiseKind::Major, PremiseSource::Knowledge)
    }

    pub fn minor(text: impl Into<String>) -> Result<Self, TreeError> {
        Self::new(text, PremiseKind::Minor, PremiseSource::Question)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> PremiseKind {
        self.kind
    }

    pub fn source(&self) -> PremiseSource {
        self.source
    }
}

/// Three-level trust label, ordered `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Credibility {
    Low,
    Medium,
    High,
}

impl Credibility {
    pub const ALL: [Credibility; 3] = [Credibility::Low, Credibility::Medium, Credibility::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Credibility::Low => "Low",
            Credibility::Medium => "Medium",
            Credibility::High => "High",
        }
    }

    /// Weight used when tallying support for an option.
    pub fn weight(self) -> u32 {
        match self {
            Credibility::Low => 1,
            Credibility::Medium => 2,
            Credibility::High => 3,
        }
    }

    /// Medium and High nodes are frozen once calibrated.
    pub fn locks(self) -> bool {
        self >= Credibility::Medium
    }
}

impl fmt::Display for Credibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Credibility {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Credibility::High),
            "medium" => Ok(Credibility::Medium),
            "low" => Ok(Credibility::Low),
            other => Err(format!("unknown credibility `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyllogismNode {
    pub id: NodeId,
    major: Premise,
    minor: Premise,
    conclusion: String,
    pub credibility: Option<Credibility>,
    /// Low-confidence marker: the node is material for the next discussion round.
    pub flagged: bool,
    /// Set by calibration on Medium/High nodes; later rounds may not downgrade them.
    pub locked: bool,
}

impl SyllogismNode {
    pub fn new(
        id: u32,
        major: impl Into<String>,
        minor: impl Into<String>,
        conclusion: impl Into<String>,
    ) -> Result<Self, TreeError> {
        Self::from_premises(
            NodeId(id),
            Premise::major(major)?,
            Premise::minor(minor)?,
            conclusion,
        )
    }

    pub fn from_premises(
        id: NodeId,
        major: Premise,
        minor: Premise,
        conclusion: impl Into<String>,
    ) -> Result<Self, TreeError> {
        let conclusion = conclusion.into();
        if conclusion.trim().is_empty() {
            return Err(TreeError::EmptyText("conclusion"));
        }
        // Kind is fixed by position regardless of what the caller built.
        let major = Premise { kind: PremiseKind::Major, ..major };
        let minor = Premise { kind: PremiseKind::Minor, ..minor };
        Ok(Self {
            id,
            major,
            minor,
            conclusion,
            credibility: None,
            flagged: false,
            locked: false,
        })
    }

    pub fn with_credibility(mut self, credibility: Credibility) -> Self {
        self.credibility = Some(credibility);
        self
    }

    pub fn with_flag(mut self, flagged: bool) -> Self {
        self.flagged = flagged;
        self
    }

    pub fn major(&self) -> &Premise {
        &self.major
    }

    pub fn minor(&self) -> &Premise {
        &self.minor
    }

    pub fn conclusion(&self) -> &str {
        &self.conclusion
    }

    /// Normalized (major, minor, conclusion) triple used for cross-agent identity.
    pub fn triad_key(&self) -> (String, String, String) {
        (
            normalize_text(&self.major.text),
            normalize_text(&self.minor.text),
            normalize_text(&self.conclusion),
        )
    }
}

/// Lowercase and collapse every whitespace run to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    Agent(u32),
    Merged,
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Agent(id) => write!(f, "agent-{id}"),
            Owner::Merged => f.write_str("merged"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalTree {
    nodes: Vec<SyllogismNode>,
    edges: BTreeSet<(NodeId, NodeId)>,
    pub owner: Owner,
    pub round: u32,
}

impl LogicalTree {
    pub fn new(owner: Owner, round: u32) -> Self {
        Self {
            nodes: Vec::new(),
            edges: BTreeSet::new(),
            owner,
            round,
        }
    }

    pub fn nodes(&self) -> &[SyllogismNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&SyllogismNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    /// Next id not yet used by any node.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0).max().unwrap_or(0) + 1)
    }

    pub fn add_node(mut self, node: SyllogismNode) -> Result<Self, TreeError> {
        if self.contains(node.id) {
            return Err(TreeError::DuplicateNodeId(node.id));
        }
        self.nodes.push(node);
        Ok(self)
    }

    pub fn add_edge(mut self, from: NodeId, to: NodeId) -> Result<Self, TreeError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(TreeError::UnknownNode(id));
            }
        }
        if self.edges.contains(&(from, to)) {
            return Err(TreeError::DuplicateEdge(from, to));
        }
        if from == to || reachable(&self.edges, to, from) {
            return Err(TreeError::CycleDetected(from, to));
        }
        self.edges.insert((from, to));
        Ok(self)
    }

    /// Applies `f` to every node. Ids are restored afterwards so the edge set stays valid.
    pub fn map_nodes(mut self, mut f: impl FnMut(SyllogismNode) -> SyllogismNode) -> Self {
        self.nodes = self
            .nodes
            .into_iter()
            .map(|n| {
                let id = n.id;
                SyllogismNode { id, ..f(n) }
            })
            .collect();
        self
    }

    /// Conclusions of every sink node (out-degree zero), ascending by id.
    pub fn root_conclusions(&self) -> Result<Vec<(NodeId, &str)>, TreeError> {
        if self.is_empty() {
            return Err(TreeError::EmptyTree);
        }
        let sources: BTreeSet<NodeId> = self.edges.iter().map(|&(from, _)| from).collect();
        let mut roots: Vec<(NodeId, &str)> = self
            .nodes
            .iter()
            .filter(|n| !sources.contains(&n.id))
            .map(|n| (n.id, n.conclusion.as_str()))
            .collect();
        roots.sort_by_key(|&(id, _)| id);
        Ok(roots)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &SyllogismNode> {
        self.nodes.iter().filter(|n| n.flagged)
    }

    pub fn locked(&self) -> impl Iterator<Item = &SyllogismNode> {
        self.nodes.iter().filter(|n| n.locked)
    }

    /// Graphviz document with one statement per node and per edge, ids ascending.
    pub fn to_graph_description(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph logical_tree {\n");
        out.push_str("  node [shape=box];\n");
        let mut nodes: Vec<&SyllogismNode> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        for n in nodes {
            let cred = n.credibility.map(Credibility::as_str).unwrap_or("unrated");
            let label = format!(
                "{} | {} \u{22a2} {} [{}]",
                n.major.text, n.minor.text, n.conclusion, cred
            );
            out.push_str(&format!("  n{} [label=\"{}\"", n.id, dot_escape(&label)));
            if n.flagged {
                out.push_str(", style=dashed, color=red");
            }
            out.push_str("];\n");
        }
        for (from, to) in &self.edges {
            out.push_str(&format!("  n{from} -> n{to};\n"));
        }
        out.push_str("}\n");
        out
    }

    /// Canonical line-delimited form: `N` records for nodes then `E` records for edges.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let cred = n.credibility.map(Credibility::as_str).unwrap_or("-");
            out.push_str(&format!(
                "N\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                n.id,
                cred,
                n.flagged,
                n.locked,
                field(&n.major.text),
                field(&n.minor.text),
                field(&n.conclusion),
            ));
        }
        for (from, to) in &self.edges {
            out.push_str(&format!("E\t{from}\t{to}\n"));
        }
        out
    }

    pub fn parse_records(text: &str, owner: Owner, round: u32) -> Result<Self, TreeError> {
        let mut tree = LogicalTree::new(owner, round);
        let mut edges = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let perr = |message: String| TreeError::Parse { line: line_no, message };
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            match cells[0] {
                "N" => {
                    if cells.len() != 8 {
                        return Err(perr(format!("node record has {} fields, want 8", cells.len())));
                    }
                    let id = parse_id(cells[1]).map_err(&perr)?;
                    let credibility = match cells[2] {
                        "-" => None,
                        s => Some(s.parse::<Credibility>().map_err(&perr)?),
                    };
                    let flagged = cells[3]
                        .parse::<bool>()
                        .map_err(|_| perr(format!("bad flagged value `{}`", cells[3])))?;
                    let locked = cells[4]
                        .parse::<bool>()
                        .map_err(|_| perr(format!("bad locked value `{}`", cells[4])))?;
                    let mut node = SyllogismNode::new(id.0, cells[5], cells[6], cells[7])
                        .map_err(|e| perr(e.to_string()))?;
                    node.credibility = credibility;
                    node.flagged = flagged;
                    node.locked = locked;
                    tree = tree.add_node(node).map_err(|e| perr(e.to_string()))?;
                }
                "E" => {
                    if cells.len() != 3 {
                        return Err(perr(format!("edge record has {} fields, want 3", cells.len())));
                    }
                    let from = parse_id(cells[1]).map_err(&perr)?;
                    let to = parse_id(cells[2]).map_err(&perr)?;
                    edges.push((line_no, from, to));
                }
                other => return Err(perr(format!("unknown record kind `{other}`"))),
            }
        }
        for (line, from, to) in edges {
            tree = tree
                .add_edge(from, to)
                .map_err(|e| TreeError::Parse { line, message: e.to_string() })?;
        }
        Ok(tree)
    }
}

fn parse_id(s: &str) -> Result<NodeId, String> {
    s.trim()
        .parse::<u32>()
        .map(NodeId)
        .map_err(|_| format!("bad node id `{s}`"))
}

fn field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

fn adjacency(edges: &BTreeSet<(NodeId, NodeId)>) -> BTreeMap<NodeId, Vec<NodeId>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    adj
}

/// Whether `target` can be reached from `start` along directed edges.
fn reachable(edges: &BTreeSet<(NodeId, NodeId)>, start: NodeId, target: NodeId) -> bool {
    let adj = adjacency(edges);
    let mut seen = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        if n == target {
            return true;
        }
        if seen.insert(n) {
            if let Some(next) = adj.get(&n) {
                stack.extend(next.iter().copied());
            }
        }
    }
    false
}

/// Unions the trees, deduplicating nodes by normalized triad.
///
/// Duplicates keep the highest credibility among their copies. Ids are
/// reassigned from 1 in order of first appearance. If the union contains a
/// cycle, every edge lying on one is reported.
pub fn merge_trees(trees: &[LogicalTree]) -> Result<LogicalTree, TreeError> {
    if trees.is_empty() {
        return Err(TreeError::NothingToMerge);
    }
    let mut by_key: HashMap<(String, String, String), usize> = HashMap::new();
    let mut nodes: Vec<SyllogismNode> = Vec::new();
    // Whether some copy of the merged node was flagged.
    let mut any_flagged: Vec<bool> = Vec::new();
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();

    for tree in trees {
        let mut remap: HashMap<NodeId, NodeId> = HashMap::new();
        for node in &tree.nodes {
            let key = node.triad_key();
            let slot = match by_key.get(&key) {
                Some(&slot) => {
                    let merged = &mut nodes[slot];
                    merged.credibility = merged.credibility.max(node.credibility);
                    merged.locked |= node.locked;
                    any_flagged[slot] |= node.flagged;
                    slot
                }
                None => {
                    let slot = nodes.len();
                    let mut fresh = node.clone();
                    fresh.id = NodeId(slot as u32 + 1);
                    nodes.push(fresh);
                    any_flagged.push(node.flagged);
                    by_key.insert(key, slot);
                    slot
                }
            };
            remap.insert(node.id, nodes[slot].id);
        }
        for (a, b) in &tree.edges {
            edges.insert((remap[a], remap[b]));
        }
    }
    for (node, flagged) in nodes.iter_mut().zip(any_flagged) {
        node.flagged = flagged && !node.credibility.is_some_and(Credibility::locks);
    }

    let offending: Vec<(NodeId, NodeId)> = edges
        .iter()
        .copied()
        .filter(|&(a, b)| a == b || reachable(&edges, b, a))
        .collect();
    if !offending.is_empty() {
        return Err(TreeError::MergeCycle(offending));
    }
    Ok(LogicalTree {
        nodes,
        edges,
        owner: Owner::Merged,
        round: trees.iter().map(|t| t.round).max().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u32) -> SyllogismNode {
        SyllogismNode::new(id, format!("rule {id}"), format!("fact {id}"), format!("c{id}")).unwrap()
    }

    fn tree_with(ids: &[u32]) -> LogicalTree {
        ids.iter()
            .fold(LogicalTree::new(Owner::Agent(1), 0), |t, &i| t.add_node(node(i)).unwrap())
    }

    #[test]
    fn add_node_to_empty_tree() {
        let t = tree_with(&[1]);
        assert_eq!(t.len(), 1);
        assert!(t.edges().is_empty());
    }

    #[test]
    fn duplicate_node_id_rejected() {
        let err = tree_with(&[1]).add_node(node(1)).unwrap_err();
        assert_eq!(err, TreeError::DuplicateNodeId(NodeId(1)));
    }

    #[test]
    fn append_preserves_edges() {
        let t = tree_with(&[1, 2]).add_edge(NodeId(1), NodeId(2)).unwrap();
        let t = t.add_node(node(3)).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.edges().len(), 1);
    }

    #[test]
    fn two_cycle_rejected() {
        let t = tree_with(&[1, 2]).add_edge(NodeId(1), NodeId(2)).unwrap();
        assert_eq!(
            t.add_edge(NodeId(2), NodeId(1)).unwrap_err(),
            TreeError::CycleDetected(NodeId(2), NodeId(1))
        );
    }

    #[test]
    fn self_loop_and_unknown_and_duplicate_edges() {
        let t = tree_with(&[1, 2]);
        assert!(matches!(
            t.clone().add_edge(NodeId(1), NodeId(1)),
            Err(TreeError::CycleDetected(..))
        ));
        assert_eq!(
            t.clone().add_edge(NodeId(1), NodeId(9)).unwrap_err(),
            TreeError::UnknownNode(NodeId(9))
        );
        let t = t.add_edge(NodeId(1), NodeId(2)).unwrap();
        assert_eq!(
            t.add_edge(NodeId(1), NodeId(2)).unwrap_err(),
            TreeError::DuplicateEdge(NodeId(1), NodeId(2))
        );
    }

    #[test]
    fn parallel_support_is_allowed() {
        let t = tree_with(&[1, 2, 3, 4])
            .add_edge(NodeId(1), NodeId(2))
            .unwrap()
            .add_edge(NodeId(2), NodeId(3))
            .unwrap()
            .add_edge(NodeId(1), NodeId(3))
            .unwrap();
        assert_eq!(t.edges().len(), 3);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(SyllogismNode::new(1, "  ", "b", "c").is_err());
        assert!(SyllogismNode::new(1, "a", "b", "\n").is_err());
    }

    #[test]
    fn root_conclusions_of_chain_and_forest() {
        let chain = tree_with(&[1, 2, 3])
            .add_edge(NodeId(1), NodeId(2))
            .unwrap()
            .add_edge(NodeId(2), NodeId(3))
            .unwrap();
        assert_eq!(chain.root_conclusions().unwrap(), vec![(NodeId(3), "c3")]);
        let forest = tree_with(&[2, 1]);
        assert_eq!(
            forest.root_conclusions().unwrap(),
            vec![(NodeId(1), "c1"), (NodeId(2), "c2")]
        );
        assert_eq!(
            LogicalTree::new(Owner::Merged, 0).root_conclusions().unwrap_err(),
            TreeError::EmptyTree
        );
    }

    #[test]
    fn merge_keeps_max_credibility() {
        let a = LogicalTree::new(Owner::Agent(1), 0)
            .add_node(
                SyllogismNode::new(1, "All X cause Y", "Patient has X", "Patient may have Y")
                    .unwrap()
                    .with_credibility(Credibility::High),
            )
            .unwrap();
        let b = LogicalTree::new(Owner::Agent(2), 0)
            .add_node(
                SyllogismNode::new(7, "all x  cause Y", "patient has x", "Patient   may have y")
                    .unwrap()
                    .with_credibility(Credibility::Low)
                    .with_flag(true),
            )
            .unwrap();
        let merged = merge_trees(&[a, b]).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.nodes()[0].credibility, Some(Credibility::High));
        assert!(!merged.nodes()[0].flagged);
        assert_eq!(merged.owner, Owner::Merged);
    }

    #[test]
    fn singleton_merge_is_reowned() {
        let t = tree_with(&[1, 2]).add_edge(NodeId(1), NodeId(2)).unwrap();
        let merged = merge_trees(std::slice::from_ref(&t)).unwrap();
        assert_eq!(merged.owner, Owner::Merged);
        assert_eq!(merged.nodes(), t.nodes());
        assert_eq!(merged.edges(), t.edges());
    }

    #[test]
    fn contradictory_antecedence_is_a_merge_cycle() {
        let a = tree_with(&[1, 2]).add_edge(NodeId(1), NodeId(2)).unwrap();
        let b = tree_with(&[1, 2]).add_edge(NodeId(2), NodeId(1)).unwrap();
        match merge_trees(&[a, b]) {
            Err(TreeError::MergeCycle(edges)) => {
                assert_eq!(edges, vec![(NodeId(1), NodeId(2)), (NodeId(2), NodeId(1))]);
            }
            other => panic!("expected MergeCycle, got {other:?}"),
        }
    }

    #[test]
    fn graph_description_shapes() {
        let empty = LogicalTree::new(Owner::Merged, 0).to_graph_description();
        assert_eq!(empty.lines().filter(|l| l.contains("label=") || l.contains("->")).count(), 0);

        let t = tree_with(&[1, 2]).add_edge(NodeId(1), NodeId(2)).unwrap();
        let doc = t.to_graph_description();
        assert_eq!(doc.lines().filter(|l| l.contains("label=")).count(), 2);
        assert_eq!(doc.lines().filter(|l| l.contains("->")).count(), 1);
        assert_eq!(doc, t.to_graph_description());

        let flagged = LogicalTree::new(Owner::Agent(1), 0)
            .add_node(node(1).with_flag(true))
            .unwrap()
            .to_graph_description();
        assert!(flagged.contains("style=dashed"));
        assert!(!doc.contains("style=dashed"));
    }

    #[test]
    fn records_replace_tabs_in_text() {
        let t = LogicalTree::new(Owner::Agent(1), 0)
            .add_node(SyllogismNode::new(1, "a\tb", "c", "d").unwrap())
            .unwrap();
        let rec = t.to_records();
        assert_eq!(rec, "N\t1\t-\tfalse\tfalse\ta b\tc\td\n");
        let back = LogicalTree::parse_records(&rec, Owner::Agent(1), 0).unwrap();
        assert_eq!(back.nodes()[0].major().text(), "a b");
    }

    #[test]
    fn parse_records_rejects_garbage() {
        for bad in ["X\t1", "N\t1\tHigh", "N\tx\tHigh\tfalse\tfalse\ta\tb\tc", "N\t1\tHigh\tfalse\tmaybe\ta\tb\tc", "E\t1\t2"] {
            assert!(LogicalTree::parse_records(bad, Owner::Merged, 0).is_err(), "{bad}");
        }
    }
}
