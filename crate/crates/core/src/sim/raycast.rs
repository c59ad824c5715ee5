use crate::geometry::Vec3;

/// Slab test of the ray `origin + s * dir` against an axis-aligned box.
/// Returns the entry parameter of the first intersection with `s > s_min`.
pub fn ray_aabb(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3, s_min: f64) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut ta = (lo[a] - origin[a]) * inv;
        let mut tb = (hi[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    if t0 > s_min {
        Some(t0)
    } else if t1 > s_min && t0 <= s_min {
        // Origin inside the box: the sensor sees the far wall.
        Some(t1)
    } else {
        None
    }
}

/// Intersection with the horizontal plane `z = height`.
pub fn ray_plane_z(origin: &Vec3, dir: &Vec3, height: f64, s_min: f64) -> Option<f64> {
    if dir.z >= -1e-12 {
        return None;
    }
    let s = (height - origin.z) / dir.z;
    (s > s_min).then_some(s)
}
