use std::ops::Range;

use rayon::prelude::*;
use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::geometry::{Frame, Vec3};

/// Integer voxel coordinate.
pub type VoxelKey = [i32; 3];

/// Voxels per side of a region-of-interest block.
const BLOCK: i32 = 8;
const BLOCK_BITS: usize = (BLOCK * BLOCK * BLOCK) as usize;

fn block_of(k: &VoxelKey) -> (VoxelKey, usize) {
    let b = [
        k[0].div_euclid(BLOCK),
        k[1].div_euclid(BLOCK),
        k[2].div_euclid(BLOCK),
    ];
    let l = [
        k[0].rem_euclid(BLOCK),
        k[1].rem_euclid(BLOCK),
        k[2].rem_euclid(BLOCK),
    ];
    (b, ((l[0] * BLOCK + l[1]) * BLOCK + l[2]) as usize)
}

/// Sparse set of voxels that are worth tracking, stored as bitsets per block
/// so that rays can skip whole blocks that contain none of them.
#[derive(Clone, Debug, Default)]
struct Roi {
    blocks: HashMap<VoxelKey, [u64; BLOCK_BITS / 64]>,
    dense: Option<DenseBlocks>,
}

/// Block lookup table over the bounding box of a frozen [`Roi`].
#[derive(Clone, Debug)]
struct DenseBlocks {
    lo: VoxelKey,
    dims: [i32; 3],
    /// Index into `words` per block of the box, `u32::MAX` when absent.
    slot: Vec<u32>,
    words: Vec<[u64; BLOCK_BITS / 64]>,
}

/// Largest bounding box (in blocks) given a lookup table.
const MAX_DENSE_BLOCKS: i64 = 1 << 22;

impl DenseBlocks {
    fn index(&self, b: &VoxelKey) -> Option<usize> {
        let mut idx = 0usize;
        for ((&k, &lo), &dim) in b.iter().zip(&self.lo).zip(&self.dims) {
            let o = k - lo;
            if o < 0 || o >= dim {
                return None;
            }
            idx = idx * dim as usize + o as usize;
        }
        Some(idx)
    }

    fn words(&self, b: &VoxelKey) -> Option<&[u64; BLOCK_BITS / 64]> {
        let s = self.slot[self.index(b)?];
        (s != u32::MAX).then(|| &self.words[s as usize])
    }
}

impl Roi {
    fn insert(&mut self, k: &VoxelKey) {
        let (b, bit) = block_of(k);
        self.blocks.entry(b).or_insert([0; BLOCK_BITS / 64])[bit / 64] |= 1 << (bit % 64);
        self.dense = None;
    }

    /// Builds the lookup table unless the bounding box is too large.
    fn freeze(&mut self) {
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for b in self.blocks.keys() {
            for a in 0..3 {
                lo[a] = lo[a].min(b[a]);
                hi[a] = hi[a].max(b[a]);
            }
        }
        if self.blocks.is_empty() {
            return;
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        if dims.iter().map(|&d| d as i64).product::<i64>() > MAX_DENSE_BLOCKS {
            return;
        }
        let mut dense = DenseBlocks {
            lo,
            dims,
            slot: vec![u32::MAX; dims.iter().map(|&d| d as usize).product()],
            words: Vec::with_capacity(self.blocks.len()),
        };
        for (b, w) in &self.blocks {
            let i = dense.index(b).expect("inside bounding box");
            dense.slot[i] = dense.words.len() as u32;
            dense.words.push(*w);
        }
        self.dense = Some(dense);
    }

    fn words(&self, b: &VoxelKey) -> Option<&[u64; BLOCK_BITS / 64]> {
        match &self.dense {
            Some(d) => d.words(b),
            None => self.blocks.get(b),
        }
    }

    fn contains(&self, k: &VoxelKey) -> bool {
        let (b, bit) = block_of(k);
        self.words(&b)
            .is_some_and(|w| w[bit / 64] & (1 << (bit % 64)) != 0)
    }

    fn has_block(&self, b: &VoxelKey) -> bool {
        self.words(b).is_some()
    }
}

/// Visits the cells of a regular grid with spacing `cell` crossed by the
/// segment `origin + s * d`, `s ∈ [s0, s1]`, in order. The callback gets the
/// cell and the parameter interval spent inside it and returns `false` to stop.
fn traverse(
    origin: &Vec3,
    d: &Vec3,
    cell: f64,
    s0: f64,
    s1: f64,
    mut visit: impl FnMut(VoxelKey, f64, f64) -> bool,
) {
    if s1 <= s0 {
        return;
    }
    let start = origin + d * s0;
    let mut key = [0i32; 3];
    let mut step = [0i32; 3];
    let mut next = [f64::INFINITY; 3];
    let mut delta = [f64::INFINITY; 3];
    for a in 0..3 {
        key[a] = (start[a] / cell).floor() as i32;
        if d[a] > 0.0 {
            step[a] = 1;
            delta[a] = cell / d[a];
            next[a] = ((key[a] + 1) as f64 * cell - origin[a]) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            delta[a] = -cell / d[a];
            next[a] = (key[a] as f64 * cell - origin[a]) / d[a];
        }
    }
    let mut s = s0;
    loop {
        let axis = if next[0] <= next[1] && next[0] <= next[2] {
            0
        } else if next[1] <= next[2] {
            1
        } else {
            2
        };
        let exit = next[axis].min(s1);
        if !visit(key, s, exit) || next[axis] >= s1 {
            return;
        }
        s = next[axis];
        key[axis] += step[axis];
        next[axis] += delta[axis];
    }
}

/// Maximum number of scans one grid can tell apart.
pub const MAX_SCANS: usize = 32;

/// Voxel occupancy accumulated from rays, scan by scan. A voxel crossed by the
/// interior of any ray is seen-empty; the voxel holding a ray's end point is
/// seen-occupied. Flags are kept per scan so that queries can ask whether a
/// voxel was empty in a scan that saw no surface next to it.
#[derive(Clone, Debug)]
pub struct FreeSpaceGrid {
    pub voxel_size: f64,
    empty: HashMap<VoxelKey, u32>,
    occupied: HashMap<VoxelKey, u32>,
    roi: Option<Roi>,
    /// `roi` dilated by `margin` voxels; occupancy is recorded there.
    roi_dilated: Option<Roi>,
    margin: i32,
}

impl FreeSpaceGrid {
    pub fn new(voxel_size: f64) -> Self {
        FreeSpaceGrid {
            voxel_size,
            empty: HashMap::default(),
            occupied: HashMap::default(),
            roi: None,
            roi_dilated: None,
            margin: 0,
        }
    }

    /// A grid that only records the voxels in `keys` (and occupancy within
    /// `margin` voxels of them); answers for those voxels are identical to an
    /// unrestricted grid.
    pub fn with_roi(
        voxel_size: f64,
        keys: impl IntoIterator<Item = VoxelKey>,
        margin: usize,
    ) -> Self {
        let m = margin as i32;
        let mut roi = Roi::default();
        let mut dilated = Roi::default();
        for k in keys {
            roi.insert(&k);
            for dx in -m..=m {
                for dy in -m..=m {
                    for dz in -m..=m {
                        dilated.insert(&[k[0] + dx, k[1] + dy, k[2] + dz]);
                    }
                }
            }
        }
        roi.freeze();
        dilated.freeze();
        FreeSpaceGrid {
            voxel_size,
            empty: HashMap::default(),
            occupied: HashMap::default(),
            roi: Some(roi),
            roi_dilated: Some(dilated),
            margin: m,
        }
    }

    pub fn key(&self, p: &Vec3) -> VoxelKey {
        [
            (p.x / self.voxel_size).floor() as i32,
            (p.y / self.voxel_size).floor() as i32,
            (p.z / self.voxel_size).floor() as i32,
        ]
    }

    fn tracked(&self, k: &VoxelKey) -> bool {
        self.roi.as_ref().is_none_or(|r| r.contains(k))
    }

    fn tracked_occupancy(&self, k: &VoxelKey) -> bool {
        self.roi_dilated.as_ref().is_none_or(|r| r.contains(k))
    }

    /// Voxels crossed by the ray interior, excluding the terminal voxel.
    fn carve(&self, origin: &Vec3, end: &Vec3, out: &mut Vec<VoxelKey>) {
        let terminal = self.key(end);
        let d = end - origin;
        let mut take = |k: VoxelKey| {
            if k != terminal && self.tracked(&k) {
                out.push(k);
            }
        };
        match &self.roi {
            None => traverse(origin, &d, self.voxel_size, 0.0, 1.0, |k, _, _| {
                take(k);
                true
            }),
            Some(roi) => {
                let coarse = self.voxel_size * BLOCK as f64;
                traverse(origin, &d, coarse, 0.0, 1.0, |b, s0, s1| {
                    if roi.has_block(&b) {
                        traverse(origin, &d, self.voxel_size, s0, s1, |k, _, _| {
                            take(k);
                            true
                        });
                    }
                    true
                });
            }
        }
    }

    /// Adds all rays `(origin, end)` of scan `scan` (< [`MAX_SCANS`]), in
    /// parallel; the result does not depend on ray order.
    pub fn insert_scan(&mut self, scan: usize, rays: &[(Vec3, Vec3)]) {
        assert!(scan < MAX_SCANS, "scan id {scan} exceeds {MAX_SCANS}");
        let bit = 1u32 << scan;
        let empty: HashSet<VoxelKey> = rays
            .par_chunks(4096)
            .map(|chunk| {
                let mut keys = Vec::new();
                for (o, e) in chunk {
                    self.carve(o, e, &mut keys);
                }
                keys.into_iter().collect::<HashSet<_>>()
            })
            .reduce(HashSet::default, |mut a, b| {
                if a.len() < b.len() {
                    return b.into_iter().chain(a).collect();
                }
                a.extend(b);
                a
            });
        for k in empty {
            *self.empty.entry(k).or_default() |= bit;
        }
        for (_, e) in rays {
            let t = self.key(e);
            if self.tracked_occupancy(&t) {
                *self.occupied.entry(t).or_default() |= bit;
            }
        }
    }

    /// Seen-empty by the interior of any ray.
    pub fn is_seen_empty(&self, k: &VoxelKey) -> bool {
        self.empty.get(k).is_some_and(|&f| f != 0)
    }

    pub fn is_seen_occupied(&self, k: &VoxelKey) -> bool {
        self.occupied.get(k).is_some_and(|&f| f != 0)
    }

    /// Seen-empty by some scan that hit nothing within the grid's margin of
    /// `k`. Rays grazing a surface pass through voxels holding that surface;
    /// the same scan then also hits the surface nearby, which vetoes the vote.
    pub fn is_free(&self, k: &VoxelKey) -> bool {
        self.is_free_in(k, u32::MAX)
    }

    /// [`Self::is_free`] counting only the scans whose bits are set in `scans`.
    pub fn is_free_in(&self, k: &VoxelKey, scans: u32) -> bool {
        let carved = self.empty.get(k).map_or(0, |c| c & scans);
        if carved == 0 {
            return false;
        }
        let m = self.margin;
        let mut near = 0u32;
        for dx in -m..=m {
            for dy in -m..=m {
                for dz in -m..=m {
                    if let Some(o) = self.occupied.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        near |= o;
                    }
                }
            }
        }
        carved & !near != 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeSpaceConfig {
    pub voxel_size: f64,
    /// Frames in the window, centered on the target where possible.
    pub window: usize,
    /// A scan's vote for a voxel is ignored when that scan hit anything
    /// within this many voxels of it.
    pub surface_margin: usize,
    /// Sensor origins in the ego frame, indexed by sensor id.
    pub sensor_origins: Vec<Vec3>,
}

impl Default for FreeSpaceConfig {
    fn default() -> Self {
        FreeSpaceConfig {
            voxel_size: 0.2,
            window: 5,
            surface_margin: 1,
            sensor_origins: vec![Vec3::new(0.0, 0.0, 1.9)],
        }
    }
}

/// Range of `size` consecutive frames around `target`, shifted to fit in `0..n`.
pub fn window_range(n: usize, target: usize, size: usize) -> std::ops::Range<usize> {
    let size = size.min(n).max(1);
    let start = target.saturating_sub(size / 2).min(n - size);
    start..start + size
}

/// Indices of non-ground points of `frames[target]` lying in voxels that rays
/// of another frame in `frames` passed through, ignoring votes of frames that
/// hit a surface within `surface_margin` voxels. Frames must be
/// ego-compensated to their scan end and carry ego trajectories.
pub fn dynamic_freespace(
    frames: &[Frame],
    target: usize,
    cfg: &FreeSpaceConfig,
) -> Result<Vec<usize>> {
    if target >= frames.len() {
        return Err(HimoError::InvalidArgument(format!(
            "target {target} outside window of {}",
            frames.len()
        )));
    }
    let mut out = dynamic_freespace_batch(frames, &[(target, 0..frames.len())], cfg)?;
    Ok(out.pop().expect("one target"))
}

/// [`dynamic_freespace`] for several targets, each with its own window of
/// `frames`, sharing one grid. Every frame of the windows' union is carved
/// once. The union must span at most [`MAX_SCANS`] frames.
pub fn dynamic_freespace_batch(
    frames: &[Frame],
    targets: &[(usize, Range<usize>)],
    cfg: &FreeSpaceConfig,
) -> Result<Vec<Vec<usize>>> {
    if cfg.sensor_origins.is_empty() {
        return Err(HimoError::InvalidArgument("no sensor origins".into()));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    for (t, w) in targets {
        if w.len() < 2 || w.end > frames.len() || !w.contains(t) {
            return Err(HimoError::InvalidArgument(format!(
                "window {w:?} of target {t} needs at least 2 of {} frames including the target",
                frames.len()
            )));
        }
    }
    let lo = targets
        .iter()
        .map(|(_, w)| w.start)
        .min()
        .expect("nonempty");
    let hi = targets.iter().map(|(_, w)| w.end).max().expect("nonempty");
    if hi - lo > MAX_SCANS {
        return Err(HimoError::InvalidArgument(format!(
            "free-space windows span {} frames, at most {MAX_SCANS} allowed",
            hi - lo
        )));
    }
    let mut ego = Vec::with_capacity(hi - lo);
    for f in &frames[lo..hi] {
        ego.push(f.ego.ok_or_else(|| {
            HimoError::NotCoRegistered(format!("frame {} has no ego trajectory", f.frame_index))
        })?);
    }
    let used = |j: usize| targets.iter().any(|(_, w)| w.contains(&j));

    let probe = FreeSpaceGrid::new(cfg.voxel_size);
    let queries: Vec<Vec<(usize, Vec3)>> = targets
        .iter()
        .map(|&(t, _)| {
            let end = ego[t - lo].end;
            frames[t]
                .non_ground_indices()
                .into_iter()
                .map(|i| (i, end.apply(&frames[t].points[i].position)))
                .collect()
        })
        .collect();
    let mut grid = FreeSpaceGrid::with_roi(
        cfg.voxel_size,
        queries.iter().flatten().map(|(_, p)| probe.key(p)),
        cfg.surface_margin,
    );

    for j in (lo..hi).filter(|&j| used(j)) {
        let f = &frames[j];
        let traj = ego[j - lo];
        let rays: Vec<(Vec3, Vec3)> = f
            .points
            .par_iter()
            .map(|p| {
                let mount = cfg
                    .sensor_origins
                    .get(p.sensor_id as usize)
                    .unwrap_or(&cfg.sensor_origins[cfg.sensor_origins.len() - 1]);
                let origin = traj.pose_at(p.t / f.scan_duration).apply(mount);
                (origin, traj.end.apply(&p.position))
            })
            .collect();
        grid.insert_scan(j - lo, &rays);
    }

    Ok(targets
        .iter()
        .zip(queries)
        .map(|((t, w), q)| {
            let mask = w
                .clone()
                .filter(|j| j != t)
                .fold(0u32, |m, j| m | 1 << (j - lo));
            q.into_iter()
                .filter(|(_, p)| grid.is_free_in(&grid.key(p), mask))
                .map(|(i, _)| i)
                .collect()
        })
        .collect())
}
