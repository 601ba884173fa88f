use serde::Serialize;

use crate::simcore::SimTime;

use super::{Link, Node, NodeKind, PortInfo, Tier, Topology, TopologyError};

/// Largest single-switch fabric the builder will fall back to.
const MAX_SINGLE_TOR_RADIX: usize = 64;

/// Fan-outs of a three-tier Clos.
///
/// Each ToR has `hosts_per_tor` host ports and `uplinks_per_tor` uplinks, one to
/// each aggregation switch of its pod. Aggregation switches are 1:1 (one uplink per
/// ToR below). Core switches form `uplinks_per_tor` groups; core group `j` joins
/// aggregation switch `j` of every pod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClosShape {
    pub hosts_per_tor: usize,
    pub uplinks_per_tor: usize,
    pub tors_per_pod: usize,
    pub pods: usize,
}

impl ClosShape {
    pub fn single_tor(hosts: usize) -> Self {
        Self {
            hosts_per_tor: hosts,
            uplinks_per_tor: 0,
            tors_per_pod: 1,
            pods: 1,
        }
    }

    pub fn is_single_tor(&self) -> bool {
        self.uplinks_per_tor == 0
    }

    pub fn num_hosts(&self) -> usize {
        self.hosts_per_tor * self.tors_per_pod * self.pods
    }

    pub fn num_tors(&self) -> usize {
        self.tors_per_pod * self.pods
    }

    pub fn aggs_per_pod(&self) -> usize {
        self.uplinks_per_tor
    }

    pub fn num_aggs(&self) -> usize {
        self.aggs_per_pod() * self.pods
    }

    pub fn num_cores(&self) -> usize {
        if self.is_single_tor() {
            0
        } else {
            self.uplinks_per_tor * self.tors_per_pod
        }
    }

    pub fn tor_radix(&self) -> usize {
        self.hosts_per_tor + self.uplinks_per_tor
    }

    pub fn agg_radix(&self) -> usize {
        if self.is_single_tor() {
            0
        } else {
            2 * self.tors_per_pod
        }
    }

    pub fn core_radix(&self) -> usize {
        if self.is_single_tor() {
            0
        } else {
            self.pods
        }
    }

    fn max_radix(&self) -> usize {
        self.tor_radix().max(self.agg_radix()).max(self.core_radix())
    }

    fn num_switches(&self) -> usize {
        self.num_tors() + self.num_aggs() + self.num_cores()
    }

    /// Choose fan-outs for `num_hosts` at an integer `oversubscription`.
    ///
    /// Candidates are three-tier shapes with at least two pods, plus a single ToR
    /// for tiny fabrics. The smallest maximum radix wins, then the fewest
    /// switches. Shapes with a single ToR uplink are only used when nothing else
    /// fits, since they leave ECMP and deflection with no alternative port.
    pub fn solve(num_hosts: usize, oversubscription: usize) -> Result<Self, TopologyError> {
        if num_hosts < 2 {
            return Err(TopologyError::Unrealizable(format!(
                "need at least 2 hosts, got {num_hosts}"
            )));
        }
        if oversubscription == 0 {
            return Err(TopologyError::Unrealizable(
                "oversubscription must be >= 1".into(),
            ));
        }
        let mut multi: Vec<ClosShape> = Vec::new();
        for h in (oversubscription..=num_hosts).step_by(oversubscription) {
            if !num_hosts.is_multiple_of(h) {
                continue;
            }
            let rest = num_hosts / h;
            for t in 1..=rest {
                if !rest.is_multiple_of(t) {
                    continue;
                }
                let pods = rest / t;
                if pods < 2 {
                    continue;
                }
                multi.push(ClosShape {
                    hosts_per_tor: h,
                    uplinks_per_tor: h / oversubscription,
                    tors_per_pod: t,
                    pods,
                });
            }
        }
        if multi.iter().any(|s| s.uplinks_per_tor >= 2) {
            multi.retain(|s| s.uplinks_per_tor >= 2);
        }
        let mut candidates = multi;
        if num_hosts <= MAX_SINGLE_TOR_RADIX {
            candidates.push(ClosShape::single_tor(num_hosts));
        }
        candidates
            .into_iter()
            .min_by_key(|s| (s.max_radix(), s.num_switches(), s.hosts_per_tor))
            .ok_or_else(|| {
                TopologyError::Unrealizable(format!(
                    "{num_hosts} hosts cannot be split into ToRs whose host-port count is a \
                     multiple of the {oversubscription}:1 oversubscription with >= 2 pods"
                ))
            })
    }
}

/// Build a Clos fabric with uniform link rate and propagation delay.
pub fn build_clos(
    num_hosts: usize,
    oversubscription: usize,
    link_rate_bps: u64,
    link_delay: SimTime,
) -> Result<Topology, TopologyError> {
    let shape = ClosShape::solve(num_hosts, oversubscription)?;
    build_with_shape(shape, link_rate_bps, link_delay)
}

/// All hosts on one switch.
pub fn build_star(
    num_hosts: usize,
    link_rate_bps: u64,
    link_delay: SimTime,
) -> Result<Topology, TopologyError> {
    if num_hosts < 2 {
        return Err(TopologyError::Unrealizable(
            "a star needs at least 2 hosts".into(),
        ));
    }
    build_with_shape(ClosShape::single_tor(num_hosts), link_rate_bps, link_delay)
}

pub fn build_with_shape(
    shape: ClosShape,
    link_rate_bps: u64,
    link_delay: SimTime,
) -> Result<Topology, TopologyError> {
    if link_rate_bps == 0 {
        return Err(TopologyError::Unrealizable("link rate must be positive".into()));
    }
    let num_hosts = shape.num_hosts();
    let mut nodes: Vec<Node> = (0..num_hosts)
        .map(|_| Node {
            kind: NodeKind::Host,
            ports: Vec::with_capacity(1),
        })
        .collect();
    let tor_base = nodes.len();
    for _ in 0..shape.num_tors() {
        nodes.push(Node {
            kind: NodeKind::Switch(Tier::Tor),
            ports: Vec::new(),
        });
    }
    let agg_base = nodes.len();
    for _ in 0..shape.num_aggs() {
        nodes.push(Node {
            kind: NodeKind::Switch(Tier::Aggregation),
            ports: Vec::new(),
        });
    }
    let core_base = nodes.len();
    for _ in 0..shape.num_cores() {
        nodes.push(Node {
            kind: NodeKind::Switch(Tier::Core),
            ports: Vec::new(),
        });
    }

    let mut links = Vec::new();
    let mut connect = |nodes: &mut Vec<Node>, a: usize, b: usize| {
        let pa = nodes[a].ports.len();
        let pb = nodes[b].ports.len();
        let id = links.len();
        nodes[a].ports.push(PortInfo {
            peer: b,
            peer_port: pb,
            link: id,
        });
        nodes[b].ports.push(PortInfo {
            peer: a,
            peer_port: pa,
            link: id,
        });
        links.push(Link {
            a: (a, pa),
            b: (b, pb),
            rate_bps: link_rate_bps,
            delay: link_delay,
        });
    };

    // host ports first on every ToR, so host-facing ports are 0..hosts_per_tor
    for h in 0..num_hosts {
        let tor = tor_base + h / shape.hosts_per_tor;
        connect(&mut nodes, h, tor);
    }
    let aggs_per_pod = shape.aggs_per_pod();
    for pod in 0..shape.pods {
        for t in 0..shape.tors_per_pod {
            let tor = tor_base + pod * shape.tors_per_pod + t;
            for a in 0..aggs_per_pod {
                connect(&mut nodes, tor, agg_base + pod * aggs_per_pod + a);
            }
        }
    }
    // aggregation down ports precede up ports
    for pod in 0..shape.pods {
        for a in 0..aggs_per_pod {
            let agg = agg_base + pod * aggs_per_pod + a;
            for c in 0..shape.tors_per_pod {
                connect(&mut nodes, agg, core_base + a * shape.tors_per_pod + c);
            }
        }
    }

    Topology::from_parts(nodes, links, shape, link_rate_bps, link_delay)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_shape() {
        let s = ClosShape::solve(128, 4).unwrap();
        assert_eq!(s.num_hosts(), 128);
        assert_eq!(s.hosts_per_tor, 4 * s.uplinks_per_tor);
        assert!(s.uplinks_per_tor >= 2);
        assert!(s.pods >= 2);
    }

    #[test]
    fn thousand_host_shape() {
        let s = ClosShape::solve(1024, 4).unwrap();
        assert_eq!(s.num_hosts(), 1024);
        assert_eq!(s.hosts_per_tor / s.uplinks_per_tor, 4);
    }

    #[test]
    fn two_hosts_collapse_to_one_tor() {
        let s = ClosShape::solve(2, 1).unwrap();
        assert!(s.is_single_tor());
    }

    #[test]
    fn unrealizable_combination_names_constraint() {
        let err = ClosShape::solve(128, 3).unwrap_err();
        assert!(err.to_string().contains("multiple of the 3:1"), "{err}");
        assert!(ClosShape::solve(1, 1).is_err());
    }
}
