//! Exact nearest-neighbour search over a fixed 3D point set.
//!
//! A static kd-tree with bucketed leaves. Queries return the true minimum
//! Euclidean distance; among equidistant candidates the lowest original
//! index wins, so results match a brute-force scan bit for bit.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{HimoError, Result};

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable spatial index supporting exact nearest-neighbour and radius queries.
#[derive(Clone, Debug)]
pub struct NnIndex {
    coords: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl FromIterator<Vector3<f64>> for NnIndex {
    fn from_iter<I: IntoIterator<Item = Vector3<f64>>>(points: I) -> Self {
        let raw: Vec<[f64; 3]> = points.into_iter().map(|p| [p.x, p.y, p.z]).collect();
        assert!(
            raw.len() < u32::MAX as usize,
            "point set too large for NnIndex"
        );
        let mut perm: Vec<u32> = (0..raw.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * raw.len() / LEAF_SIZE + 1);
        if !raw.is_empty() {
            build(&raw, &mut perm, 0, &mut nodes);
        }
        let coords = perm.iter().map(|&i| raw[i as usize]).collect();
        NnIndex {
            coords,
            ids: perm,
            nodes,
        }
    }
}

impl NnIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        points.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Nearest indexed point to `query` as `(distance, original index)`.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(f64, usize)> {
        if self.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = (f64::INFINITY, u32::MAX);
        self.search_nearest(0, &q, &mut best);
        Some((best.0.sqrt(), best.1 as usize))
    }

    /// Squared distance variant of [`NnIndex::nearest`].
    pub fn nearest_squared(&self, query: &Vector3<f64>) -> Option<(f64, usize)> {
        if self.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = (f64::INFINITY, u32::MAX);
        self.search_nearest(0, &q, &mut best);
        Some((best.0, best.1 as usize))
    }

    /// Batched nearest-neighbour queries, evaluated in parallel.
    pub fn nearest_many(&self, queries: &[Vector3<f64>]) -> Result<Vec<(f64, usize)>> {
        if self.is_empty() {
            return Err(HimoError::EmptyPointSet);
        }
        Ok(queries
            .par_iter()
            .map(|q| self.nearest(q).expect("nonempty index"))
            .collect())
    }

    /// Appends to `out` the original indices of all points within `radius`
    /// (inclusive) of `query`, in no particular order.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        if self.is_empty() {
            return;
        }
        let q = [query.x, query.y, query.z];
        self.search_radius(0, &q, radius * radius, out);
    }

    fn search_nearest(&self, node: usize, q: &[f64; 3], best: &mut (f64, u32)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start as usize..end as usize {
                    let d2 = dist2(q, &self.coords[k]);
                    let id = self.ids[k];
                    if d2 < best.0 || (d2 == best.0 && id < best.1) {
                        *best = (d2, id);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_nearest(near as usize, q, best);
                // `<=` keeps equidistant candidates reachable for the tie rule.
                if diff * diff <= best.0 {
                    self.search_nearest(far as usize, q, best);
                }
            }
        }
    }

    fn search_radius(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start as usize..end as usize {
                    if dist2(q, &self.coords[k]) <= r2 {
                        out.push(self.ids[k] as usize);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.search_radius(left as usize, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.search_radius(right as usize, q, r2, out);
                }
            }
        }
    }
}

fn build(raw: &[[f64; 3]], perm: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if perm.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + perm.len()) as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in perm.iter() {
        let p = &raw[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&i, &j| {
        raw[i as usize][axis]
            .total_cmp(&raw[j as usize][axis])
            .then(i.cmp(&j))
    });
    let value = raw[perm[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_perm, right_perm) = perm.split_at_mut(mid);
    let left = build(raw, left_perm, offset, nodes);
    let right = build(raw, right_perm, offset + mid, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

/// Distance from `query` to its nearest neighbour in `index`, with the
/// neighbour's index. Ties resolve to the lowest point index.
pub fn nn_distance(query: &Vector3<f64>, index: &NnIndex) -> Result<(f64, usize)> {
    index.nearest(query).ok_or(HimoError::EmptyPointSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(query: &Vector3<f64>, pts: &[Vector3<f64>]) -> (f64, usize) {
        let q = [query.x, query.y, query.z];
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            let d2 = dist2(&q, &[p.x, p.y, p.z]);
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        (best.0.sqrt(), best.1)
    }

    #[test]
    fn identity_case() {
        let idx = NnIndex::new(&[Vector3::zeros()]);
        assert_eq!(nn_distance(&Vector3::zeros(), &idx).unwrap(), (0.0, 0));
    }

    #[test]
    fn two_points() {
        let idx = NnIndex::new(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)]);
        assert_eq!(nn_distance(&Vector3::zeros(), &idx).unwrap(), (1.0, 0));
    }

    #[test]
    fn empty_index_errors() {
        let idx = NnIndex::new(&[]);
        assert!(matches!(
            nn_distance(&Vector3::zeros(), &idx),
            Err(HimoError::EmptyPointSet)
        ));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let pts: Vec<_> = (0..40)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 40.0;
                Vector3::new(a.cos(), a.sin(), 0.0)
            })
            .chain(std::iter::repeat_n(Vector3::new(1.0, 0.0, 0.0), 30))
            .collect();
        let idx = NnIndex::new(&pts);
        // Duplicates of point 0 exist at indices 40..70.
        let (d, i) = idx.nearest(&Vector3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!((d, i), (1.0, 0));
        let (_, i) = idx.nearest(&Vector3::zeros()).unwrap();
        assert_eq!(i, brute(&Vector3::zeros(), &pts).1);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = NnIndex::new(&pts);
        for _ in 0..100 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(idx.nearest(&q).unwrap(), brute(&q, &pts));
        }
    }

    #[test]
    fn grid_points_with_many_ties() {
        let pts: Vec<_> = (0..1000)
            .map(|i| Vector3::new((i % 10) as f64, ((i / 10) % 10) as f64, (i / 100) as f64))
            .collect();
        let idx = NnIndex::new(&pts);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let q = Vector3::new(
                rng.random_range(0..20) as f64 * 0.5,
                rng.random_range(0..20) as f64 * 0.5,
                rng.random_range(0..20) as f64 * 0.5,
            );
            assert_eq!(idx.nearest(&q).unwrap(), brute(&q, &pts));
        }
    }

    #[test]
    fn radius_query_matches_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..800)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = NnIndex::new(&pts);
        let q = Vector3::new(0.5, 0.5, 0.5);
        let mut got = Vec::new();
        idx.within_radius(&q, 0.2, &mut got);
        got.sort_unstable();
        let want: Vec<_> = (0..pts.len())
            .filter(|&i| (pts[i] - q).norm_squared() <= 0.04)
            .collect();
        assert_eq!(got, want);
    }
}
