//! Cloudlet placement, sensor ownership, receptive-field halos and the
//! feature-exchange plan between cloudlets.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{cheb_basis, haversine_km, Coord, ScaledLaplacian, SensorGraph};
use crate::model::ModelConfig;
use crate::rng;

/// Distances closer than this count as ties in [`assign_sensors`].
const TIE_KM: f64 = 1e-12;

/// Owner cloudlet of every sensor: the nearest one within `range_km`, ties
/// going to the lowest cloudlet index.
pub fn assign_sensors(
    ids: &[String],
    sensors: &[Coord],
    cloudlets: &[Coord],
    range_km: f64,
) -> Result<Vec<usize>> {
    if cloudlets.is_empty() {
        return Err(Error::input("at least one cloudlet is required"));
    }
    if !(range_km > 0.0) {
        return Err(Error::input(format!(
            "communication range must be positive, got {range_km}"
        )));
    }
    if ids.len() != sensors.len() {
        return Err(Error::shape("sensor ids", sensors.len(), ids.len()));
    }
    let mut owner = Vec::with_capacity(sensors.len());
    let mut uncovered = Vec::new();
    for (id, &s) in ids.iter().zip(sensors) {
        let mut best: Option<(usize, f64)> = None;
        for (c, &pos) in cloudlets.iter().enumerate() {
            let d = haversine_km(s, pos)?;
            if d > range_km {
                continue;
            }
            match best {
                Some((_, bd)) if d >= bd - TIE_KM => {}
                _ => best = Some((c, d)),
            }
        }
        match best {
            Some((c, _)) => owner.push(c),
            None => uncovered.push(id.clone()),
        }
    }
    if !uncovered.is_empty() {
        return Err(Error::UncoveredSensors(uncovered));
    }
    Ok(owner)
}

/// Graph reach of the model: each block's order-`K-1` Chebyshev filter
/// spreads information `K-1` hops.
pub fn receptive_hops(config: &ModelConfig, override_hops: Option<usize>) -> usize {
    override_hops.unwrap_or(config.st_blocks * config.cheb_k.saturating_sub(1))
}

/// Pairs of cloudlets within `range_km` of each other, `a < b`.
pub fn cloudlet_adjacency(cloudlets: &[Coord], range_km: f64) -> Result<Vec<(usize, usize)>> {
    let mut links = Vec::new();
    for a in 0..cloudlets.len() {
        for b in a + 1..cloudlets.len() {
            if haversine_km(cloudlets[a], cloudlets[b])? <= range_km {
                links.push((a, b));
            }
        }
    }
    Ok(links)
}

/// Node features one cloudlet forwards to another every timestep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExchangeEntry {
    pub src: usize,
    pub dst: usize,
    pub nodes: Vec<usize>,
}

impl ExchangeEntry {
    pub fn floats_per_timestep(&self) -> usize {
        self.nodes.len()
    }
}

/// Ordered by `(src, dst)`, node lists ascending, no self entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExchangePlan {
    pub entries: Vec<ExchangeEntry>,
}

impl ExchangePlan {
    pub fn floats_per_timestep(&self) -> usize {
        self.entries
            .iter()
            .map(ExchangeEntry::floats_per_timestep)
            .sum()
    }
}

/// Breadth-first expansion of each cloudlet's owned set over the neighbour
/// lists, `hops` levels deep, minus the owned nodes.
pub fn compute_halos(
    owner: &[usize],
    n_cloudlets: usize,
    neighbours: &[Vec<usize>],
    hops: usize,
) -> Result<(Vec<Vec<usize>>, ExchangePlan)> {
    let n = owner.len();
    if neighbours.len() != n {
        return Err(Error::shape("neighbour lists", n, neighbours.len()));
    }
    if let Some(&c) = owner.iter().find(|&&c| c >= n_cloudlets) {
        return Err(Error::input(format!(
            "owner {c} out of range for {n_cloudlets} cloudlets"
        )));
    }
    let mut halos = Vec::with_capacity(n_cloudlets);
    // (src, dst) -> nodes
    let mut flows: Vec<Vec<BTreeSet<usize>>> =
        vec![vec![BTreeSet::new(); n_cloudlets]; n_cloudlets];
    for c in 0..n_cloudlets {
        let mut depth = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for v in (0..n).filter(|&v| owner[v] == c) {
            depth[v] = 0;
            queue.push_back(v);
        }
        while let Some(v) = queue.pop_front() {
            if depth[v] == hops {
                continue;
            }
            for &u in &neighbours[v] {
                if depth[u] == usize::MAX {
                    depth[u] = depth[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        let halo: Vec<usize> = (0..n)
            .filter(|&v| depth[v] != usize::MAX && owner[v] != c)
            .collect();
        for &v in &halo {
            flows[owner[v]][c].insert(v);
        }
        halos.push(halo);
    }
    let mut entries = Vec::new();
    for (src, row) in flows.into_iter().enumerate() {
        for (dst, nodes) in row.into_iter().enumerate() {
            if !nodes.is_empty() {
                entries.push(ExchangeEntry {
                    src,
                    dst,
                    nodes: nodes.into_iter().collect(),
                });
            }
        }
    }
    Ok((halos, ExchangePlan { entries }))
}

/// Sensors split among cloudlets together with the halos needed for exact
/// local forward passes.
#[derive(Debug, Clone, Serialize)]
pub struct CloudletPartition {
    pub positions: Vec<Coord>,
    pub comm_range_km: f64,
    pub hops: usize,
    pub owner: Vec<usize>,
    pub owned: Vec<Vec<usize>>,
    pub halo: Vec<Vec<usize>>,
    pub plan: ExchangePlan,
    pub cloudlet_adjacency: Vec<(usize, usize)>,
}

impl CloudletPartition {
    pub fn build(
        graph: &SensorGraph,
        positions: Vec<Coord>,
        comm_range_km: f64,
        hops: usize,
    ) -> Result<Self> {
        let owner = assign_sensors(&graph.ids, &graph.coords, &positions, comm_range_km)?;
        let adjacency = cloudlet_adjacency(&positions, comm_range_km)?;
        Self::from_owner(graph, positions, comm_range_km, hops, owner, adjacency)
    }

    /// One cloudlet owning every sensor, with no neighbours.
    pub fn single(graph: &SensorGraph) -> Result<Self> {
        let position = graph
            .coords
            .first()
            .copied()
            .unwrap_or(Coord::new(0.0, 0.0));
        Self::from_owner(
            graph,
            vec![position],
            f64::INFINITY,
            0,
            vec![0; graph.n()],
            Vec::new(),
        )
    }

    /// Partition from an explicit ownership map and cloudlet link list.
    pub fn from_owner(
        graph: &SensorGraph,
        positions: Vec<Coord>,
        comm_range_km: f64,
        hops: usize,
        owner: Vec<usize>,
        cloudlet_adjacency: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let k = positions.len();
        if owner.len() != graph.n() {
            return Err(Error::shape("owner map", graph.n(), owner.len()));
        }
        if let Some(&(a, b)) = cloudlet_adjacency
            .iter()
            .find(|&&(a, b)| a >= k || b >= k || a == b)
        {
            return Err(Error::input(format!("invalid cloudlet link ({a}, {b})")));
        }
        let (halo, plan) = compute_halos(&owner, k, &graph.neighbours(), hops)?;
        let owned = (0..k)
            .map(|c| (0..owner.len()).filter(|&v| owner[v] == c).collect())
            .collect();
        Ok(Self {
            positions,
            comm_range_km,
            hops,
            owner,
            owned,
            halo,
            plan,
            cloudlet_adjacency,
        })
    }

    pub fn n_cloudlets(&self) -> usize {
        self.positions.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.owner.len()
    }

    /// Owned and halo nodes of cloudlet `c`, ascending global index.
    pub fn local_nodes(&self, c: usize) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.owned[c].iter().chain(&self.halo[c]).copied().collect();
        nodes.sort_unstable();
        nodes
    }

    pub fn neighbours_of(&self, c: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .cloudlet_adjacency
            .iter()
            .filter_map(|&(a, b)| {
                if a == c {
                    Some(b)
                } else if b == c {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, c: usize) -> usize {
        self.neighbours_of(c).len()
    }

    pub fn degree_sum(&self) -> usize {
        2 * self.cloudlet_adjacency.len()
    }

    /// `Σ_c |owned[c] ∪ halo[c]| / n`.
    pub fn duplication_factor(&self) -> f64 {
        let total: usize = (0..self.n_cloudlets())
            .map(|c| self.owned[c].len() + self.halo[c].len())
            .sum();
        total as f64 / self.n_sensors() as f64
    }

    /// Writes `sensor_id,cloudlet_id`.
    pub fn write_owner_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sensor_id", "cloudlet_id"])?;
        for (id, c) in ids.iter().zip(&self.owner) {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `src,dst,node_id`, one row per forwarded node.
    pub fn write_plan_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["src", "dst", "node_id"])?;
        for e in &self.plan.entries {
            for &v in &e.nodes {
                w.write_record([&e.src.to_string(), &e.dst.to_string(), ids[v].as_str()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Subgraph on a node set: principal submatrix of the weights plus the index
/// map back to the full graph.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub weights: Array2<f64>,
}

pub fn extract_subgraph(graph: &SensorGraph, nodes: &[usize]) -> Result<Subgraph> {
    if nodes.is_empty() {
        return Err(Error::input(
            "cannot extract a subgraph on an empty node set",
        ));
    }
    if let Some(&v) = nodes.iter().find(|&&v| v >= graph.n()) {
        return Err(Error::input(format!(
            "node {v} out of range for {} sensors",
            graph.n()
        )));
    }
    let m = nodes.len();
    let weights = Array2::from_shape_fn((m, m), |(a, b)| graph.weights[[nodes[a], nodes[b]]]);
    Ok(Subgraph {
        nodes: nodes.to_vec(),
        weights,
    })
}

/// Chebyshev basis for a node subset, built from the full graph's rescaled
/// Laplacian so local and global forward passes agree on owned nodes.
pub fn subgraph_basis(
    full: &ScaledLaplacian,
    nodes: &[usize],
    k: usize,
) -> Result<Vec<Array2<f64>>> {
    cheb_basis(&full.restrict(nodes).matrix, k)
}

/// A center cloudlet ringed by six at `radius_km`, neighbours on the ring
/// `radius_km` apart.
pub fn hex_layout(center: Coord, radius_km: f64) -> Vec<Coord> {
    let mut out = vec![center];
    for i in 0..6 {
        let a = i as f64 * std::f64::consts::PI / 3.0;
        out.push(center.offset_km(radius_km * a.cos(), radius_km * a.sin()));
    }
    out
}

/// Advisory cloudlet positions from Lloyd's k-means on planar sensor
/// offsets, seeded with k-means++.
pub fn suggest_positions(coords: &[Coord], k: usize, seed: u64) -> Result<Vec<Coord>> {
    if k == 0 || k > coords.len() {
        return Err(Error::input(format!(
            "need 1..={} cloudlets, got {k}",
            coords.len()
        )));
    }
    let origin = coords[0];
    let pts: Vec<(f64, f64)> = coords.iter().map(|c| c.planar_km(&origin)).collect();
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let mut rng = rng::stream(seed, &[0x6b6d]);
    let mut centers = vec![pts[rng.gen_range(0..pts.len())]];
    while centers.len() < k {
        let w: Vec<f64> = pts
            .iter()
            .map(|&p| {
                centers
                    .iter()
                    .map(|&c| d2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            w.iter()
                .position(|&x| {
                    r -= x;
                    r <= 0.0
                })
                .unwrap_or(pts.len() - 1)
        } else {
            rng.gen_range(0..pts.len())
        };
        centers.push(pts[pick]);
    }
    for _ in 0..100 {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for &p in &pts {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(i, &c)| (i, d2(p, c)))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            sums[best].0 += p.0;
            sums[best].1 += p.1;
            sums[best].2 += 1;
        }
        let next: Vec<(f64, f64)> = sums
            .iter()
            .zip(&centers)
            .map(|(&(x, y, m), &c)| {
                if m > 0 {
                    (x / m as f64, y / m as f64)
                } else {
                    c
                }
            })
            .collect();
        let moved = next.iter().zip(&centers).any(|(a, b)| d2(*a, *b) > 1e-18);
        centers = next;
        if !moved {
            break;
        }
    }
    Ok(centers
        .into_iter()
        .map(|(x, y)| origin.offset_km(x, y))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> (Vec<usize>, Vec<Vec<usize>>) {
        (vec![0, 1, 1], vec![vec![1], vec![0, 2], vec![1]])
    }

    #[test]
    fn path_graph_halos_and_plan() {
        let (owner, nb) = path3();
        let (halo, plan) = compute_halos(&owner, 2, &nb, 1).unwrap();
        assert_eq!(halo, vec![vec![1], vec![0]]);
        assert_eq!(
            plan.entries,
            vec![
                ExchangeEntry {
                    src: 0,
                    dst: 1,
                    nodes: vec![0]
                },
                ExchangeEntry {
                    src: 1,
                    dst: 0,
                    nodes: vec![1]
                },
            ]
        );
    }

    #[test]
    fn zero_hops_means_no_halo() {
        let (owner, nb) = path3();
        let (halo, plan) = compute_halos(&owner, 2, &nb, 0).unwrap();
        assert!(halo.iter().all(Vec::is_empty));
        assert!(plan.entries.is_empty());
    }

    #[test]
    fn complete_graph_halo_is_complement() {
        let n = 6;
        let nb: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        let owner = vec![0, 1, 0, 1, 1, 0];
        let (halo, _) = compute_halos(&owner, 2, &nb, 1).unwrap();
        assert_eq!(halo[0], vec![1, 3, 4]);
        assert_eq!(halo[1], vec![0, 2, 5]);
    }

    #[test]
    fn hops_follow_blocks_and_order() {
        let cfg = ModelConfig::default();
        assert_eq!(receptive_hops(&cfg, None), 4);
        let one = ModelConfig {
            st_blocks: 1,
            cheb_k: 2,
            ..Default::default()
        };
        assert_eq!(receptive_hops(&one, None), 1);
        assert_eq!(receptive_hops(&cfg, Some(2)), 2);
    }

    #[test]
    fn nearest_in_range_with_low_index_tie_break() {
        let o = Coord::new(34.0, -118.0);
        let ids: Vec<String> = vec!["a".into()];
        let cl = vec![
            o.offset_km(5.0, 0.0),
            o.offset_km(0.0, 3.0),
            o.offset_km(0.0, -3.0),
        ];
        let d1 = haversine_km(o, cl[1]).unwrap();
        let d2 = haversine_km(o, cl[2]).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        let owner = assign_sensors(&ids, &[o], &cl, 8.0).unwrap();
        assert_eq!(owner, vec![1]);
        let single = assign_sensors(&ids, &[o], &cl[..1], 8.0).unwrap();
        assert_eq!(single, vec![0]);
    }

    #[test]
    fn uncovered_sensors_are_listed() {
        let o = Coord::new(34.0, -118.0);
        let far = o.offset_km(8.001, 0.0);
        let near = o.offset_km(1.0, 0.0);
        let ids: Vec<String> = vec!["near".into(), "far".into()];
        let err = assign_sensors(&ids, &[near, far], &[o], 8.0).unwrap_err();
        match err {
            Error::UncoveredSensors(list) => assert_eq!(list, vec!["far".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn full_and_singleton_extraction() {
        let o = Coord::new(34.0, -118.0);
        let coords = vec![o, o.offset_km(1.0, 0.0), o.offset_km(0.0, 1.5)];
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let g = SensorGraph::build(ids, coords, None, None, 0.1).unwrap();
        let full = extract_subgraph(&g, &[0, 1, 2]).unwrap();
        assert_eq!(full.weights, g.weights);
        let one = extract_subgraph(&g, &[1]).unwrap();
        assert_eq!(one.weights, Array2::<f64>::zeros((1, 1)));
        assert!(extract_subgraph(&g, &[]).is_err());
    }

    #[test]
    fn kmeans_suggestions_are_deterministic() {
        let o = Coord::new(34.0, -118.0);
        let coords: Vec<Coord> = (0..20)
            .map(|i| o.offset_km((i % 5) as f64, (i / 5) as f64 * 3.0))
            .collect();
        let a = suggest_positions(&coords, 3, 4).unwrap();
        let b = suggest_positions(&coords, 3, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
