//! Directed memristor networks: node roles, links, structural validation,
//! the two reference topologies and the TOML network file format.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memristor::MemristorParams;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    /// Driven by a voltage source.
    External,
    /// Held at 0 V.
    Grounded,
    /// Floating; its voltage follows from current balance.
    Internal,
}

impl NodeRole {
    pub fn is_fixed(self) -> bool {
        !matches!(self, NodeRole::Internal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
}

/// A memristive element. The rate law sees `V = V_from - V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub params: MemristorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateNode(NodeId),
    UnknownNode { link: usize, node: NodeId },
    SelfLoop { link: usize, node: NodeId },
    ParallelLink { link: usize, first: usize, from: NodeId, to: NodeId },
    BadParams { link: usize, reason: String },
    NoFixedVoltageNode,
    Unreachable(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            Violation::UnknownNode { link, node } => {
                write!(f, "link {link} references missing node {node}")
            }
            Violation::SelfLoop { link, node } => write!(f, "self-loop at node {node} (link {link})"),
            Violation::ParallelLink {
                link,
                first,
                from,
                to,
            } => write!(
                f,
                "link {link} ({from}->{to}) is parallel to link {first}"
            ),
            Violation::BadParams { link, reason } => write!(f, "link {link}: {reason}"),
            Violation::NoFixedVoltageNode => {
                write!(f, "no fixed-voltage node (external or grounded)")
            }
            Violation::Unreachable(id) => {
                write!(f, "internal node {id} has no path to a fixed-voltage node")
            }
        }
    }
}

/// Nodes and links in declaration order. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
}

impl Network {
    /// Builds a network, rejecting it if any structural rule is broken.
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self> {
        let net = Self::new_unchecked(nodes, links);
        let violations = net.validate();
        if violations.is_empty() {
            Ok(net)
        } else {
            Err(Error::InvalidNetwork(violations))
        }
    }

    pub fn new_unchecked(nodes: Vec<Node>, links: Vec<Link>) -> Self {
        Self { nodes, links }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn role(&self, id: NodeId) -> Option<NodeRole> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.role)
    }

    pub fn ids_with_role(&self, role: NodeRole) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.role == role)
            .map(|n| n.id)
            .collect()
    }

    pub fn initial_resistances(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.params.r_init).collect()
    }

    /// Number of links touching each node.
    pub fn degrees(&self) -> BTreeMap<NodeId, usize> {
        let mut deg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for l in &self.links {
            *deg.entry(l.from).or_default() += 1;
            *deg.entry(l.to).or_default() += 1;
        }
        deg
    }

    /// Every broken structural rule; empty when the network is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                out.push(Violation::DuplicateNode(n.id));
            }
        }

        let mut pairs: HashMap<(NodeId, NodeId), usize> = HashMap::new();
        for (k, l) in self.links.iter().enumerate() {
            for end in [l.from, l.to] {
                if !seen.contains(&end) {
                    out.push(Violation::UnknownNode { link: k, node: end });
                }
            }
            if l.from == l.to {
                out.push(Violation::SelfLoop {
                    link: k,
                    node: l.from,
                });
                continue;
            }
            let key = (l.from.min(l.to), l.from.max(l.to));
            if let Some(&first) = pairs.get(&key) {
                out.push(Violation::ParallelLink {
                    link: k,
                    first,
                    from: l.from,
                    to: l.to,
                });
            } else {
                pairs.insert(key, k);
            }
            if let Some(reason) = l.params.check() {
                out.push(Violation::BadParams { link: k, reason });
            }
        }

        let fixed: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.role.is_fixed())
            .map(|n| n.id)
            .collect();
        if fixed.is_empty() {
            out.push(Violation::NoFixedVoltageNode);
            return out;
        }

        // breadth-first search from all fixed nodes over undirected links
        let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for l in &self.links {
            adj.entry(l.from).or_default().push(l.to);
            adj.entry(l.to).or_default().push(l.from);
        }
        let mut reached: BTreeSet<NodeId> = fixed.iter().copied().collect();
        let mut queue: Vec<NodeId> = fixed;
        while let Some(id) = queue.pop() {
            for &next in adj.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                if reached.insert(next) {
                    queue.push(next);
                }
            }
        }
        let mut reported = HashSet::new();
        for n in &self.nodes {
            if n.role == NodeRole::Internal && !reached.contains(&n.id) && reported.insert(n.id) {
                out.push(Violation::Unreachable(n.id));
            }
        }
        out
    }

    /// Serializes to the TOML network document.
    pub fn store(&self) -> String {
        let doc = NetworkDoc {
            nodes: self.nodes.clone(),
            links: self.links.iter().map(LinkDoc::from).collect(),
        };
        toml::to_string(&doc).expect("network document is always serializable")
    }

    /// Parses and validates a TOML network document.
    pub fn load(text: &str) -> Result<Self> {
        let doc: NetworkDoc =
            toml::from_str(text).map_err(|e| crate::util::toml_error(text, &e))?;
        let links = doc.links.into_iter().map(Link::from).collect();
        Network::new(doc.nodes, links)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default)]
    nodes: Vec<Node>,
    #[serde(default)]
    links: Vec<LinkDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    from: NodeId,
    to: NodeId,
    v_t: f64,
    alpha: f64,
    beta: f64,
    r_min: f64,
    r_max: f64,
    r_init: f64,
}

impl From<&Link> for LinkDoc {
    fn from(l: &Link) -> Self {
        let p = l.params;
        LinkDoc {
            from: l.from,
            to: l.to,
            v_t: p.v_threshold,
            alpha: p.alpha,
            beta: p.beta,
            r_min: p.r_min,
            r_max: p.r_max,
            r_init: p.r_init,
        }
    }
}

impl From<LinkDoc> for Link {
    fn from(d: LinkDoc) -> Self {
        Link {
            from: d.from,
            to: d.to,
            params: MemristorParams {
                alpha: d.alpha,
                beta: d.beta,
                v_threshold: d.v_t,
                r_min: d.r_min,
                r_max: d.r_max,
                r_init: d.r_init,
            },
        }
    }
}

pub const CUBE_R_MIN: f64 = 1.45;
pub const CUBE_R_MAX: f64 = 1.55;
pub const CUBE_R_INIT: f64 = 1.5;

/// (from, to, v_t, alpha, beta) for the 54 links of the 3x3x3 cube.
#[rustfmt::skip]
const CUBE_LINKS: [(NodeId, NodeId, f64, f64, f64); 54] = [
    (10, 1, 0.374442, 0.339527, 0.76859),
    (1, 2, 0.338867, 0.766728, 1.681),
    (4, 1, 0.916852, 0.190449, 1.01836),
    (2, 3, 0.395556, 0.59712, 0.715665),
    (2, 5, 0.957822, 0.552519, 1.38086),
    (2, 11, 0.456982, 0.197251, 0.499046),
    (12, 3, 0.509442, 0.193125, 0.38095),
    (3, 6, 0.129586, 0.379953, 0.580798),
    (4, 7, 0.63842, 0.816642, 1.21164),
    (4, 5, 0.497659, 0.89305, 1.24712),
    (4, 13, 0.812996, 0.836584, 1.11225),
    (5, 8, 0.312802, 0.599889, 0.799181),
    (14, 5, 0.424215, 0.973887, 1.53969),
    (5, 6, 0.211621, 0.656048, 0.761047),
    (9, 6, 0.95086, 0.670889, 0.970032),
    (6, 15, 0.501306, 0.433332, 0.782898),
    (16, 7, 0.746284, 0.571936, 1.28032),
    (7, 8, 0.367929, 0.584094, 1.23548),
    (8, 17, 0.607931, 0.824092, 1.78827),
    (8, 9, 0.955427, 0.970764, 1.62366),
    (9, 18, 0.734346, 0.553811, 0.963794),
    (10, 19, 0.348097, 0.603011, 0.71191),
    (10, 11, 0.63911, 0.522766, 0.656083),
    (13, 10, 0.983575, 0.770146, 1.51798),
    (11, 14, 0.125702, 0.702939, 1.50984),
    (11, 12, 0.292193, 0.603787, 1.14385),
    (20, 11, 0.363118, 0.711326, 1.61589),
    (15, 12, 0.459023, 0.830813, 1.71065),
    (12, 21, 0.248844, 0.716935, 0.964279),
    (13, 22, 0.591142, 0.685118, 0.850874),
    (14, 13, 0.417162, 0.503876, 1.20527),
    (16, 13, 0.330005, 0.188323, 1.12526),
    (14, 15, 0.640415, 0.889584, 1.77304),
    (14, 17, 0.268105, 0.826208, 0.946175),
    (14, 23, 0.976, 0.920302, 1.71634),
    (24, 15, 0.124989, 0.257296, 0.473974),
    (15, 18, 0.761428, 0.73645, 1.17762),
    (25, 16, 0.848135, 0.475557, 1.45515),
    (17, 16, 0.134474, 0.606631, 1.58427),
    (26, 17, 0.879447, 0.610327, 0.764154),
    (17, 18, 0.80575, 0.205049, 0.8331),
    (18, 27, 0.164033, 0.458028, 1.00478),
    (20, 19, 0.263635, 0.958362, 1.59943),
    (19, 22, 0.319153, 0.679248, 0.933867),
    (23, 20, 0.374859, 0.436996, 0.831076),
    (21, 20, 0.110315, 0.223772, 0.589538),
    (21, 24, 0.448737, 0.352571, 0.710772),
    (22, 23, 0.803082, 0.646101, 0.806519),
    (25, 22, 0.655003, 0.947564, 1.39472),
    (23, 24, 0.394366, 0.693992, 1.68974),
    (23, 26, 0.790899, 0.792383, 1.54045),
    (24, 27, 0.587119, 0.493326, 0.967518),
    (26, 25, 0.253639, 0.787869, 1.65719),
    (27, 26, 0.388202, 0.511768, 0.809962),
];

/// The 27-node, 54-link cubic network: nodes 1-3 external, node 4
/// grounded, nodes 5-27 internal.
pub fn build_cube() -> Network {
    let nodes = (1..=27)
        .map(|id| Node {
            id,
            role: match id {
                1..=3 => NodeRole::External,
                4 => NodeRole::Grounded,
                _ => NodeRole::Internal,
            },
        })
        .collect();
    let links = CUBE_LINKS
        .iter()
        .map(|&(from, to, v_t, alpha, beta)| Link {
            from,
            to,
            params: MemristorParams {
                alpha,
                beta,
                v_threshold: v_t,
                r_min: CUBE_R_MIN,
                r_max: CUBE_R_MAX,
                r_init: CUBE_R_INIT,
            },
        })
        .collect();
    Network::new_unchecked(nodes, links)
}

pub const BENCHMARK_SERIES_RESISTANCE: f64 = 10_000.0;

pub fn benchmark_memristor() -> MemristorParams {
    MemristorParams {
        alpha: 146_000.0,
        beta: 146_000.0,
        v_threshold: 4.0,
        r_min: 675.0,
        r_max: 10_000.0,
        r_init: 10_000.0,
    }
}

/// Source (node 1) -> 10 kΩ resistor -> node 2 -> memristor -> ground (node 3).
///
/// Link 0 is the passive resistor, link 1 the memristor.
pub fn build_series_benchmark() -> Network {
    build_series_benchmark_with(benchmark_memristor())
}

pub fn build_series_benchmark_with(memristor: MemristorParams) -> Network {
    let nodes = vec![
        Node {
            id: 1,
            role: NodeRole::External,
        },
        Node {
            id: 2,
            role: NodeRole::Internal,
        },
        Node {
            id: 3,
            role: NodeRole::Grounded,
        },
    ];
    let links = vec![
        Link {
            from: 1,
            to: 2,
            params: MemristorParams::passive(BENCHMARK_SERIES_RESISTANCE),
        },
        Link {
            from: 2,
            to: 3,
            params: memristor,
        },
    ];
    Network::new_unchecked(nodes, links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn node(id: NodeId, role: NodeRole) -> Node {
        Node { id, role }
    }

    fn link(from: NodeId, to: NodeId) -> Link {
        Link {
            from,
            to,
            params: MemristorParams::passive(1.0),
        }
    }

    #[test]
    fn cube_counts_and_rows() {
        let cube = build_cube();
        assert_eq!(cube.nodes().len(), 27);
        assert_eq!(cube.links().len(), 54);
        assert!(cube.validate().is_empty());

        let first = cube.links().iter().find(|l| l.from == 10 && l.to == 1).unwrap();
        assert_eq!(first.params.v_threshold, 0.374442);
        assert_eq!(first.params.alpha, 0.339527);
        assert_eq!(first.params.beta, 0.76859);
        let last = cube.links().iter().find(|l| l.from == 27 && l.to == 26).unwrap();
        assert_eq!(last.params.v_threshold, 0.388202);

        assert_eq!(cube.ids_with_role(NodeRole::External), vec![1, 2, 3]);
        assert_eq!(cube.ids_with_role(NodeRole::Grounded), vec![4]);
        assert_eq!(cube.ids_with_role(NodeRole::Internal).len(), 23);
        for l in cube.links() {
            assert_eq!(
                (l.params.r_min, l.params.r_max, l.params.r_init),
                (1.45, 1.55, 1.5)
            );
        }
    }

    #[test]
    fn cube_degree_profile_is_simple_cubic() {
        let deg = build_cube().degrees();
        let mut histogram = BTreeMap::new();
        for d in deg.values() {
            *histogram.entry(*d).or_insert(0) += 1;
        }
        assert_eq!(
            histogram,
            BTreeMap::from([(3, 8), (4, 12), (5, 6), (6, 1)])
        );
        assert_eq!(deg.values().sum::<usize>(), 108);
    }

    #[test]
    fn series_benchmark_layout() {
        let net = build_series_benchmark();
        assert_eq!(net.nodes().len(), 3);
        assert_eq!(net.links().len(), 2);
        assert!(net.validate().is_empty());
        let passive = net.links()[0].params;
        assert_eq!((passive.alpha, passive.beta), (0.0, 0.0));
        assert!(passive.is_passive());
        let m = net.links()[1].params;
        assert_eq!(m.r_init, 10_000.0);
        assert_eq!(m.r_min, 675.0);
        assert_eq!(m.alpha, 146_000.0);
        assert_eq!(m.v_threshold, 4.0);
    }

    #[test]
    fn only_internal_nodes_is_singular() {
        let net = Network::new_unchecked(
            vec![node(1, NodeRole::Internal), node(2, NodeRole::Internal)],
            vec![link(1, 2)],
        );
        assert_eq!(net.validate(), vec![Violation::NoFixedVoltageNode]);
    }

    #[test]
    fn self_loop_reported() {
        let net = Network::new_unchecked(
            vec![node(1, NodeRole::External), node(2, NodeRole::Grounded)],
            vec![link(1, 1), link(1, 2)],
        );
        let v = net.validate();
        assert_eq!(v, vec![Violation::SelfLoop { link: 0, node: 1 }]);
        assert!(v[0].to_string().contains("self-loop at node 1"));
    }

    #[test]
    fn parallel_and_unreachable_reported() {
        let net = Network::new_unchecked(
            vec![
                node(1, NodeRole::External),
                node(2, NodeRole::Grounded),
                node(3, NodeRole::Internal),
                node(4, NodeRole::Internal),
            ],
            vec![link(1, 2), link(2, 1), link(3, 4)],
        );
        let v = net.validate();
        assert!(v.contains(&Violation::ParallelLink {
            link: 1,
            first: 0,
            from: 2,
            to: 1
        }));
        assert!(v.contains(&Violation::Unreachable(3)));
        assert!(v.contains(&Violation::Unreachable(4)));
    }

    #[test]
    fn new_rejects_invalid() {
        let err = Network::new(vec![node(1, NodeRole::Internal)], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(_)));
    }

    #[test]
    fn store_load_round_trip_builders() {
        for net in [build_cube(), build_series_benchmark()] {
            let text = net.store();
            assert_eq!(Network::load(&text).unwrap(), net);
            assert_eq!(text, Network::load(&text).unwrap().store());
        }
    }

    #[test]
    fn load_reports_missing_endpoint() {
        let text = r#"
nodes = [{ id = 1, role = "external" }, { id = 2, role = "grounded" }]
[[links]]
from = 1
to = 7
v_t = 0.1
alpha = 1.0
beta = 1.0
r_min = 1.0
r_max = 2.0
r_init = 1.5
"#;
        let err = Network::load(text).unwrap_err();
        match &err {
            Error::InvalidNetwork(v) => {
                assert!(v.contains(&Violation::UnknownNode { link: 0, node: 7 }))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("missing node 7"));
    }

    #[test]
    fn load_reports_duplicate_node() {
        let text = r#"
nodes = [{ id = 1, role = "external" }, { id = 1, role = "grounded" }]
links = []
"#;
        let err = Network::load(text).unwrap_err();
        assert!(err.to_string().contains("duplicate node id 1"));
    }

    #[test]
    fn load_reports_position_of_syntax_error() {
        let text = "nodes = []\nlinks = [\n  { from = 1, to = }\n]\n";
        match Network::load(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "nodes = [{ id = 1, role = \"floating\" }]\nlinks = []\n";
        match Network::load(text).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("floating"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_network() -> impl Strategy<Value = Network> {
        (3usize..10).prop_flat_map(|n| {
            let params = (
                0.0..2.0f64,
                0.0..2.0f64,
                0.0..1.0f64,
                0.1..10.0f64,
                0.0..1.0f64,
                0.0..1.0f64,
            );
            (
                Just(n),
                proptest::collection::vec(params, n - 1),
                proptest::collection::vec(0.0..1.0f64, n - 1),
            )
                .prop_map(|(n, ps, parents)| {
                    let nodes: Vec<Node> = (0..n as NodeId)
                        .map(|i| Node {
                            id: i + 1,
                            role: match i {
                                0 => NodeRole::External,
                                1 => NodeRole::Grounded,
                                _ => NodeRole::Internal,
                            },
                        })
                        .collect();
                    // spanning tree: node i+2 attaches to an earlier node
                    let links = ps
                        .into_iter()
                        .zip(parents)
                        .enumerate()
                        .map(|(i, ((a, b, vt, rmin, span, pos), parent))| {
                            let child = i as NodeId + 2;
                            let parent = 1 + (parent * (child - 1) as f64) as NodeId;
                            let r_max = rmin + span;
                            Link {
                                from: parent.min(child - 1),
                                to: child,
                                params: MemristorParams {
                                    alpha: a,
                                    beta: b,
                                    v_threshold: vt,
                                    r_min: rmin,
                                    r_max,
                                    r_init: rmin + pos * span,
                                },
                            }
                        })
                        .collect();
                    Network::new_unchecked(nodes, links)
                })
        })
    }

    proptest! {
        #[test]
        fn store_load_identity(net in arb_network()) {
            prop_assert!(net.validate().is_empty());
            let loaded = Network::load(&net.store()).unwrap();
            prop_assert_eq!(loaded, net);
        }
    }
}
