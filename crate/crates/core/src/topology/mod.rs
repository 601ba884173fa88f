//! Oversubscribed Clos fabric, up*/down* route tables and virtual lanes.

mod clos;

pub use clos::{build_clos, build_star, build_with_shape, ClosShape};

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::SimTime;

pub type NodeId = usize;
pub type PortId = usize;
pub type HostId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unrealizable topology: {0}")]
    Unrealizable(String),
    #[error("routing table error: {0}")]
    Routing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Tor,
    Aggregation,
    Core,
}

impl Tier {
    fn level(self) -> u8 {
        match self {
            Tier::Tor => 1,
            Tier::Aggregation => 2,
            Tier::Core => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    Switch(Tier),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortInfo {
    pub peer: NodeId,
    pub peer_port: PortId,
    pub link: usize,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub ports: Vec<PortInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub a: (NodeId, PortId),
    pub b: (NodeId, PortId),
    pub rate_bps: u64,
    pub delay: SimTime,
}

/// Data lanes. Escape-lane traffic follows the fixed up*/down* route and is
/// never deflected; packets may move from `Deflect` to `Escape` but not back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VirtualLane {
    Escape = 0,
    Deflect = 1,
}

impl VirtualLane {
    pub const ALL: [VirtualLane; 2] = [VirtualLane::Escape, VirtualLane::Deflect];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Fields an ECMP hash may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowKey {
    pub src: HostId,
    pub dst: HostId,
    pub flow_id: u64,
}

/// Per-switch table: destination ToR -> equal-cost next-hop ports (ascending).
#[derive(Debug, Clone)]
pub struct RouteTable {
    // [switch - num_hosts][tor index]
    next_hops: Vec<Vec<Vec<PortId>>>,
}

/// Built fabric. Hosts are nodes `0..num_hosts`; switches follow.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    shape: ClosShape,
    num_hosts: usize,
    link_rate_bps: u64,
    link_delay: SimTime,
    host_tor: Vec<NodeId>,
    host_port: Vec<PortId>,
    host_tor_idx: Vec<usize>,
    tor_nodes: Vec<NodeId>,
    tor_distance: Vec<Vec<u32>>,
    routes: RouteTable,
    ecmp_salt: u64,
}

impl Topology {
    fn from_parts(
        nodes: Vec<Node>,
        links: Vec<Link>,
        shape: ClosShape,
        link_rate_bps: u64,
        link_delay: SimTime,
    ) -> Result<Self, TopologyError> {
        let num_hosts = nodes
            .iter()
            .take_while(|n| n.kind == NodeKind::Host)
            .count();
        let mut host_tor = Vec::with_capacity(num_hosts);
        let mut host_port = Vec::with_capacity(num_hosts);
        for (h, node) in nodes.iter().enumerate().take(num_hosts) {
            if node.ports.len() != 1 {
                return Err(TopologyError::Unrealizable(format!(
                    "host {h} must attach to exactly one ToR"
                )));
            }
            let p = node.ports[0];
            host_tor.push(p.peer);
            host_port.push(p.peer_port);
        }
        let tor_nodes: Vec<NodeId> = (num_hosts..nodes.len())
            .filter(|&n| nodes[n].kind == NodeKind::Switch(Tier::Tor))
            .collect();
        let tor_index: HashMap<NodeId, usize> =
            tor_nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

        let host_tor_idx = host_tor.iter().map(|t| tor_index[t]).collect();
        let mut topo = Topology {
            nodes,
            links,
            shape,
            num_hosts,
            link_rate_bps,
            link_delay,
            host_tor,
            host_port,
            host_tor_idx,
            tor_nodes,
            tor_distance: Vec::new(),
            routes: RouteTable {
                next_hops: Vec::new(),
            },
            ecmp_salt: 0,
        };
        topo.build_routes()?;
        Ok(topo)
    }

    /// BFS from every ToR over the switch graph; next hops are the neighbours one
    /// step closer. In a Clos every such shortest path is up*/down*.
    fn build_routes(&mut self) -> Result<(), TopologyError> {
        let n_sw = self.nodes.len() - self.num_hosts;
        let n_tor = self.tor_nodes.len();
        let mut next_hops = vec![vec![Vec::new(); n_tor]; n_sw];
        let mut tor_distance = vec![vec![u32::MAX; n_tor]; n_tor];
        for (ti, &tor) in self.tor_nodes.iter().enumerate() {
            let mut dist = vec![u32::MAX; self.nodes.len()];
            dist[tor] = 0;
            let mut q = VecDeque::from([tor]);
            while let Some(u) = q.pop_front() {
                for p in &self.nodes[u].ports {
                    let v = p.peer;
                    if self.is_host(v) || dist[v] != u32::MAX {
                        continue;
                    }
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
            for s in self.num_hosts..self.nodes.len() {
                if dist[s] == u32::MAX {
                    return Err(TopologyError::Routing(format!(
                        "switch {s} cannot reach ToR {tor}"
                    )));
                }
                if s == tor {
                    continue;
                }
                let hops: Vec<PortId> = self.nodes[s]
                    .ports
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| !self.is_host(p.peer) && dist[p.peer] + 1 == dist[s])
                    .map(|(i, _)| i)
                    .collect();
                if hops.is_empty() {
                    return Err(TopologyError::Routing(format!(
                        "switch {s} has no next hop toward ToR {tor}"
                    )));
                }
                next_hops[s - self.num_hosts][ti] = hops;
            }
            for (tj, &other) in self.tor_nodes.iter().enumerate() {
                tor_distance[tj][ti] = dist[other];
            }
        }
        self.routes = RouteTable { next_hops };
        self.tor_distance = tor_distance;
        Ok(())
    }

    /// Per-run salt mixed into every ECMP hash.
    pub fn set_ecmp_salt(&mut self, salt: u64) {
        self.ecmp_salt = salt;
    }

    pub fn ecmp_salt(&self) -> u64 {
        self.ecmp_salt
    }

    pub fn shape(&self) -> ClosShape {
        self.shape
    }

    /// Host-facing to uplink capacity ratio at a ToR; 1 for a single switch.
    pub fn oversubscription(&self) -> f64 {
        if self.shape.is_single_tor() {
            1.0
        } else {
            self.shape.hosts_per_tor as f64 / self.shape.uplinks_per_tor as f64
        }
    }

    pub fn num_hosts(&self) -> usize {
        self.num_hosts
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_rate_bps(&self) -> u64 {
        self.link_rate_bps
    }

    pub fn link_delay(&self) -> SimTime {
        self.link_delay
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.num_hosts..self.nodes.len()
    }

    #[inline]
    pub fn is_host(&self, n: NodeId) -> bool {
        n < self.num_hosts
    }

    pub fn tier(&self, n: NodeId) -> Option<Tier> {
        match self.nodes[n].kind {
            NodeKind::Switch(t) => Some(t),
            NodeKind::Host => None,
        }
    }

    #[inline]
    pub fn tor_of(&self, host: HostId) -> NodeId {
        self.host_tor[host]
    }

    /// Port on `host`'s ToR that faces the host.
    #[inline]
    pub fn host_port(&self, host: HostId) -> PortId {
        self.host_port[host]
    }

    /// True if `port` on `switch` leads to an end host.
    #[inline]
    pub fn is_host_facing(&self, switch: NodeId, port: PortId) -> bool {
        self.is_host(self.nodes[switch].ports[port].peer)
    }

    /// Equal-cost next hops from `switch` toward host `dst`.
    #[inline]
    pub fn next_hops(&self, switch: NodeId, dst: HostId) -> &[PortId] {
        let tor = self.host_tor[dst];
        if switch == tor {
            std::slice::from_ref(&self.host_port[dst])
        } else {
            &self.routes.next_hops[switch - self.num_hosts][self.host_tor_idx[dst]]
        }
    }

    /// Hash-based ECMP choice. The same flow at the same switch always maps to
    /// the same port.
    pub fn ecmp_next_hop(&self, switch: NodeId, key: FlowKey) -> PortId {
        let hops = self.next_hops(switch, key.dst);
        assert!(
            !hops.is_empty(),
            "destination {} unreachable from {switch}",
            key.dst
        );
        if hops.len() == 1 {
            return hops[0];
        }
        let h = ecmp_hash(key, self.ecmp_salt, switch as u64);
        hops[(h % hops.len() as u64) as usize]
    }

    /// Deterministic escape-lane next hop: the lowest-index equal-cost port.
    pub fn escape_next_hop(&self, switch: NodeId, dst: HostId) -> PortId {
        *self
            .next_hops(switch, dst)
            .first()
            .unwrap_or_else(|| panic!("destination {dst} unreachable from {switch}"))
    }

    /// Links on a shortest host-to-host path.
    pub fn shortest_hops(&self, src: HostId, dst: HostId) -> u32 {
        if src == dst {
            return 0;
        }
        let a = self.host_tor_idx[src];
        let b = self.host_tor_idx[dst];
        2 + self.tor_distance[a][b]
    }

    pub fn max_shortest_hops(&self) -> u32 {
        let mut m = 2;
        for row in &self.tor_distance {
            for &d in row {
                m = m.max(2 + d);
            }
        }
        m
    }

    /// Propagation plus per-hop serialization of one data packet and one ACK
    /// along the shortest path.
    pub fn base_rtt(&self, src: HostId, dst: HostId, data_bytes: u64, ack_bytes: u64) -> SimTime {
        let hops = self.shortest_hops(src, dst) as u64;
        let prop = SimTime(2 * hops * self.link_delay.as_nanos());
        let ser = SimTime::serialization(data_bytes, self.link_rate_bps).as_nanos()
            + SimTime::serialization(ack_bytes, self.link_rate_bps).as_nanos();
        prop + SimTime(hops * ser)
    }

    /// Channel-dependency graph of the escape lane has no cycle.
    ///
    /// Channels are directed (node, port) pairs. A dependency `c1 -> c2` exists when
    /// an escape-lane packet for some destination arriving over `c1` leaves over `c2`.
    pub fn escape_dependency_acyclic(&self) -> bool {
        self.find_escape_cycle().is_none()
    }

    pub fn find_escape_cycle(&self) -> Option<Vec<(NodeId, PortId)>> {
        let mut chan_id: HashMap<(NodeId, PortId), usize> = HashMap::new();
        let mut chans = Vec::new();
        for (n, node) in self.nodes.iter().enumerate() {
            for p in 0..node.ports.len() {
                chan_id.insert((n, p), chans.len());
                chans.push((n, p));
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); chans.len()];
        // one representative destination host per ToR suffices: routes are per ToR
        let reps: Vec<HostId> = {
            let mut seen = HashMap::new();
            (0..self.num_hosts)
                .filter(|&h| seen.insert(self.host_tor[h], ()).is_none())
                .collect()
        };
        for &dst in &reps {
            for s in self.switches() {
                let out = self.escape_next_hop(s, dst);
                let out_c = chan_id[&(s, out)];
                for p in &self.nodes[s].ports {
                    let upstream = p.peer;
                    let feeds = if self.is_host(upstream) {
                        true
                    } else {
                        self.escape_next_hop(upstream, dst) == p.peer_port
                    };
                    if feeds {
                        let in_c = chan_id[&(upstream, p.peer_port)];
                        if !adj[in_c].contains(&out_c) {
                            adj[in_c].push(out_c);
                        }
                    }
                }
            }
        }
        // iterative DFS, colours: 0 white, 1 grey, 2 black
        let mut colour = vec![0u8; chans.len()];
        let mut parent = vec![usize::MAX; chans.len()];
        for start in 0..chans.len() {
            if colour[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            colour[start] = 1;
            while let Some((u, i)) = stack.pop() {
                if i < adj[u].len() {
                    stack.push((u, i + 1));
                    let v = adj[u][i];
                    match colour[v] {
                        0 => {
                            colour[v] = 1;
                            parent[v] = u;
                            stack.push((v, 0));
                        }
                        1 => {
                            let mut cycle = vec![chans[v]];
                            let mut w = u;
                            while w != v && w != usize::MAX {
                                cycle.push(chans[w]);
                                w = parent[w];
                            }
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    colour[u] = 2;
                }
            }
        }
        None
    }

    /// Summary of the built fabric for the topology dump.
    pub fn audit(&self) -> TopologyAudit {
        let mut down_bw: u128 = 0;
        let mut up_bw: u128 = 0;
        let mut counts = [0usize; 4];
        for s in self.switches() {
            let tier = self.tier(s).expect("switch");
            counts[tier.level() as usize] += 1;
            if tier == Tier::Tor {
                for p in &self.nodes[s].ports {
                    let rate = self.links[p.link].rate_bps as u128;
                    if self.is_host(p.peer) {
                        down_bw += rate;
                    } else {
                        up_bw += rate;
                    }
                }
            }
        }
        let measured = if up_bw == 0 {
            None
        } else {
            Some(down_bw as f64 / up_bw as f64)
        };
        TopologyAudit {
            hosts: self.num_hosts,
            tors: counts[1],
            aggregation: counts[2],
            cores: counts[3],
            shape: self.shape,
            tor_radix: self.shape.tor_radix(),
            agg_radix: self.shape.agg_radix(),
            core_radix: self.shape.core_radix(),
            links: self.links.len(),
            link_rate_bps: self.link_rate_bps,
            link_delay_ns: self.link_delay.as_nanos(),
            tor_down_bps: down_bw as f64,
            tor_up_bps: up_bw as f64,
            oversubscription: measured,
            max_path_hops: self.max_shortest_hops(),
            escape_acyclic: self.escape_dependency_acyclic(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyAudit {
    pub hosts: usize,
    pub tors: usize,
    pub aggregation: usize,
    pub cores: usize,
    pub shape: ClosShape,
    pub tor_radix: usize,
    pub agg_radix: usize,
    pub core_radix: usize,
    pub links: usize,
    pub link_rate_bps: u64,
    pub link_delay_ns: u64,
    pub tor_down_bps: f64,
    pub tor_up_bps: f64,
    pub oversubscription: Option<f64>,
    pub max_path_hops: u32,
    pub escape_acyclic: bool,
}

/// splitmix64 finaliser.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit hash of the flow fields, the run salt and the switch (the switch term
/// decorrelates choices at successive tiers).
#[inline]
pub fn ecmp_hash(key: FlowKey, salt: u64, switch: u64) -> u64 {
    let mut h = mix64(salt ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ key.src as u64);
    h = mix64(h ^ (key.dst as u64).rotate_left(21));
    h = mix64(h ^ key.flow_id.rotate_left(42));
    mix64(h ^ switch.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
