use rustc_hash::FxHashMap as HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Frame, Vec3};

/// Density-clustering parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Neighbourhood radius, meters.
    pub radius: f64,
    /// Neighbours (including the point itself) needed for a core point.
    pub min_points: usize,
    /// Clusters smaller than this are dissolved into noise.
    pub min_cluster_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            radius: 0.8,
            min_points: 3,
            min_cluster_size: 10,
        }
    }
}

/// Per-point cluster assignment (`-1` = noise, ground or unclustered).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterSet {
    pub assignment: Vec<i32>,
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Builds a set from a per-point assignment; ids must be dense from zero.
    pub fn from_assignment(assignment: Vec<i32>) -> Self {
        let n = assignment
            .iter()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize);
        let mut clusters = vec![Vec::new(); n];
        for (i, &c) in assignment.iter().enumerate() {
            if c >= 0 {
                clusters[c as usize].push(i);
            }
        }
        ClusterSet {
            assignment,
            clusters,
        }
    }
}

pub fn cluster(frame: &Frame) -> ClusterSet {
    cluster_with(frame, &ClusterConfig::default())
}

/// DBSCAN over the non-ground points of `frame`. Points are visited in
/// index order and cluster ids are assigned in order of discovery, so the
/// result is deterministic.
pub fn cluster_with(frame: &Frame, cfg: &ClusterConfig) -> ClusterSet {
    let idx = frame.non_ground_indices();
    let pts: Vec<Vec3> = idx.iter().map(|&i| frame.points[i].position).collect();
    let local = dbscan(&pts, cfg);
    let mut assignment = vec![-1; frame.len()];
    for (k, &c) in local.iter().enumerate() {
        assignment[idx[k]] = c;
    }
    ClusterSet::from_assignment(assignment)
}

const NOISE: i32 = -1;

/// Uniform grid whose cells are small enough that any two points sharing a
/// cell lie within the clustering radius of each other.
struct CellGrid {
    size: f64,
    /// Cells within this many steps may hold points within the radius.
    reach: i32,
    cells: HashMap<[i32; 3], Vec<u32>>,
}

impl CellGrid {
    fn new(points: &[Vec3], radius: f64) -> Self {
        let size = radius / 3f64.sqrt() * (1.0 - 1e-9);
        let mut grid = CellGrid {
            size,
            reach: (radius / size).ceil() as i32,
            cells: HashMap::default(),
        };
        for (i, p) in points.iter().enumerate() {
            let k = grid.key(p);
            grid.cells.entry(k).or_default().push(i as u32);
        }
        grid
    }

    fn key(&self, p: &Vec3) -> [i32; 3] {
        [
            (p.x / self.size).floor() as i32,
            (p.y / self.size).floor() as i32,
            (p.z / self.size).floor() as i32,
        ]
    }

    fn offsets(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        let r = self.reach;
        (-r..=r).flat_map(move |x| (-r..=r).flat_map(move |y| (-r..=r).map(move |z| [x, y, z])))
    }

    fn cell(&self, k: &[i32; 3], o: &[i32; 3]) -> Option<&Vec<u32>> {
        self.cells.get(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]])
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let up = parent[parent[i as usize] as usize];
        parent[i as usize] = up;
        i = up;
    }
    i
}

/// DBSCAN on a bare point list; returns dense cluster ids or `-1`.
///
/// Clusters are numbered by their lowest-index core point, and a border point
/// joins the lowest-numbered cluster with a core point in reach, which is what
/// a breadth-first expansion in index order produces.
pub fn dbscan(points: &[Vec3], cfg: &ClusterConfig) -> Vec<i32> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let r2 = cfg.radius * cfg.radius;
    let grid = CellGrid::new(points, cfg.radius);
    let offsets: Vec<[i32; 3]> = grid.offsets().collect();

    let core: Vec<bool> = points
        .par_iter()
        .map(|p| {
            let k = grid.key(p);
            if grid.cells[&k].len() >= cfg.min_points {
                return true;
            }
            let mut count = 0;
            for o in &offsets {
                for &j in grid.cell(&k, o).into_iter().flatten() {
                    if (points[j as usize] - p).norm_squared() <= r2 {
                        count += 1;
                        if count >= cfg.min_points {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .collect();

    let core_cells: HashMap<[i32; 3], Vec<u32>> = grid
        .cells
        .iter()
        .map(|(k, m)| {
            (
                *k,
                m.iter()
                    .copied()
                    .filter(|&i| core[i as usize])
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, m)| !m.is_empty())
        .collect();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    for (k, cores) in &core_cells {
        for &c in &cores[1..] {
            let (a, b) = (find(&mut parent, cores[0]), find(&mut parent, c));
            parent[b as usize] = a;
        }
        for o in offsets.iter().filter(|o| **o > [0, 0, 0]) {
            let Some(other) = core_cells.get(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]]) else {
                continue;
            };
            let (a, b) = (find(&mut parent, cores[0]), find(&mut parent, other[0]));
            if a == b {
                continue;
            }
            let linked = cores.iter().any(|&i| {
                other
                    .iter()
                    .any(|&j| (points[i as usize] - points[j as usize]).norm_squared() <= r2)
            });
            if linked {
                parent[b as usize] = a;
            }
        }
    }

    let mut label = vec![NOISE; n];
    let mut rank = vec![NOISE; n];
    let mut next_id = 0;
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i as u32) as usize;
            if rank[root] == NOISE {
                rank[root] = next_id;
                next_id += 1;
            }
            label[i] = rank[root];
        }
    }
    let border: Vec<(usize, i32)> = (0..n)
        .into_par_iter()
        .filter(|&i| !core[i])
        .filter_map(|i| {
            let k = grid.key(&points[i]);
            offsets
                .iter()
                .filter_map(|o| core_cells.get(&[k[0] + o[0], k[1] + o[1], k[2] + o[2]]))
                .flatten()
                .filter(|&&j| (points[j as usize] - points[i]).norm_squared() <= r2)
                .map(|&j| label[j as usize])
                .min()
                .map(|l| (i, l))
        })
        .collect();
    for (i, l) in border {
        label[i] = l;
    }

    let mut sizes = vec![0usize; next_id as usize];
    for &l in &label {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    let mut remap = vec![NOISE; next_id as usize];
    let mut dense = 0;
    for (old, &s) in sizes.iter().enumerate() {
        if s >= cfg.min_cluster_size {
            remap[old] = dense;
            dense += 1;
        }
    }
    label
        .into_iter()
        .map(|l| if l >= 0 { remap[l as usize] } else { NOISE })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;

    fn box_surface(origin: Vec3, len: f64, step: f64) -> Vec<Vec3> {
        let n = (len / step).round() as usize;
        let mut out = Vec::new();
        for i in 0..=n {
            for k in 0..=n {
                out.push(origin + Vec3::new(i as f64 * step, 0.0, k as f64 * step));
                out.push(origin + Vec3::new(0.0, i as f64 * step, k as f64 * step));
            }
        }
        out
    }

    fn frame_of(points: Vec<Vec3>) -> Frame {
        Frame::new(
            points
                .into_iter()
                .map(|p| TimedPoint::new(p, 0.0, 0))
                .collect(),
            0.1,
        )
    }

    #[test]
    fn two_separated_boxes() {
        let mut pts = box_surface(Vec3::zeros(), 2.0, 0.2);
        let n0 = pts.len();
        pts.extend(box_surface(Vec3::new(12.0, 0.0, 0.0), 2.0, 0.2));
        let cs = cluster(&frame_of(pts));
        assert_eq!(cs.len(), 2);
        assert!(cs.assignment[..n0].iter().all(|&c| c == 0));
        assert!(cs.assignment[n0..].iter().all(|&c| c == 1));
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pts = box_surface(Vec3::zeros(), 2.0, 0.2);
        pts.push(Vec3::new(30.0, 30.0, 0.0));
        let cs = cluster(&frame_of(pts));
        assert_eq!(*cs.assignment.last().unwrap(), -1);
        assert_eq!(cs.len(), 1);
    }

    #[test]
    fn gaps_within_radius_stay_connected() {
        let mut pts = box_surface(Vec3::zeros(), 2.0, 0.2);
        pts.extend(box_surface(Vec3::new(2.7, 0.0, 0.0), 2.0, 0.2));
        let cs = cluster(&frame_of(pts));
        assert_eq!(cs.len(), 1);
    }

    #[test]
    fn ground_points_are_skipped() {
        let mut f = frame_of(box_surface(Vec3::zeros(), 2.0, 0.2));
        for p in f.points.iter_mut() {
            p.ground = true;
        }
        let cs = cluster(&f);
        assert!(cs.is_empty());
        assert!(cs.assignment.iter().all(|&c| c == -1));
    }

    #[test]
    fn empty_input() {
        let cs = cluster(&frame_of(vec![]));
        assert!(cs.is_empty() && cs.assignment.is_empty());
    }

    #[test]
    fn clusters_are_disjoint_and_complete() {
        let mut pts = box_surface(Vec3::zeros(), 1.0, 0.25);
        pts.extend(box_surface(Vec3::new(5.0, 5.0, 0.0), 1.0, 0.25));
        let cs = cluster(&frame_of(pts));
        let mut seen = vec![0; cs.assignment.len()];
        for (id, members) in cs.clusters.iter().enumerate() {
            for &m in members {
                assert_eq!(cs.assignment[m], id as i32);
                seen[m] += 1;
            }
        }
        for (i, &c) in cs.assignment.iter().enumerate() {
            assert_eq!(seen[i], (c >= 0) as i32);
        }
    }

    /// Breadth-first DBSCAN in index order over O(n²) neighbour lists.
    fn dbscan_oracle(points: &[Vec3], cfg: &ClusterConfig) -> Vec<i32> {
        use std::collections::VecDeque;
        let n = points.len();
        let r2 = cfg.radius * cfg.radius;
        let nb: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| (points[i] - points[j]).norm_squared() <= r2)
                    .collect()
            })
            .collect();
        let core = |i: usize| nb[i].len() >= cfg.min_points;
        let mut label = vec![-2; n];
        let mut id = 0;
        for i in 0..n {
            if label[i] != -2 {
                continue;
            }
            if !core(i) {
                label[i] = -1;
                continue;
            }
            label[i] = id;
            let mut queue = VecDeque::from([i]);
            while let Some(j) = queue.pop_front() {
                if !core(j) {
                    continue;
                }
                for &k in &nb[j] {
                    if label[k] == -2 {
                        queue.push_back(k);
                        label[k] = id;
                    } else if label[k] == -1 {
                        label[k] = id;
                    }
                }
            }
            id += 1;
        }
        let mut sizes = vec![0; id as usize];
        for &l in &label {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        let mut remap = vec![-1; id as usize];
        let mut dense = 0;
        for (c, &s) in sizes.iter().enumerate() {
            if s >= cfg.min_cluster_size {
                remap[c] = dense;
                dense += 1;
            }
        }
        label
            .into_iter()
            .map(|l| if l >= 0 { remap[l as usize] } else { -1 })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn matches_breadth_first_oracle(
            raw in proptest::collection::vec((0u8..40, 0u8..40, 0u8..6), 0..300),
            radius in 0.3f64..1.5,
            min_points in 1usize..6,
            min_cluster_size in 1usize..12,
        ) {
            // Coarse lattice coordinates produce many exact-radius ties.
            let pts: Vec<Vec3> = raw
                .iter()
                .map(|&(x, y, z)| Vec3::new(x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25))
                .collect();
            let cfg = ClusterConfig { radius, min_points, min_cluster_size };
            proptest::prop_assert_eq!(dbscan(&pts, &cfg), dbscan_oracle(&pts, &cfg));
        }
    }
}
