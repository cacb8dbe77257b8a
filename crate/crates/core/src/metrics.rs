//! Overlap, boundary-distance and volume agreement between a reference and
//! a predicted label map.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{ImageError, LabelMap, Spacing};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("class {0} is absent from one of the masks")]
    EmptyMask(u8),
    #[error("class {0} is absent from the ground truth")]
    EmptyGroundTruth(u8),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn counts(g: &LabelMap, s: &LabelMap, class_id: u8) -> Result<(usize, usize, usize), MetricsError> {
    g.check_same_dims(s)?;
    let (mut ng, mut ns, mut both) = (0, 0, 0);
    for (&a, &b) in g.labels().iter().zip(s.labels()) {
        let (ia, ib) = (a == class_id, b == class_id);
        ng += ia as usize;
        ns += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok((ng, ns, both))
}

/// `|G ∩ S| / |G ∪ S|`; 1 when both masks are empty.
pub fn jaccard(g: &LabelMap, s: &LabelMap, class_id: u8) -> Result<f64, MetricsError> {
    let (ng, ns, both) = counts(g, s, class_id)?;
    let union = ng + ns - both;
    Ok(if union == 0 { 1.0 } else { both as f64 / union as f64 })
}

/// `2|G ∩ S| / (|G| + |S|)` in percent; 100 when both masks are empty.
pub fn dice(g: &LabelMap, s: &LabelMap, class_id: u8) -> Result<f64, MetricsError> {
    let (ng, ns, both) = counts(g, s, class_id)?;
    Ok(if ng + ns == 0 { 100.0 } else { 200.0 * both as f64 / (ng + ns) as f64 })
}

/// `|V_s − V_g| / V_g` in percent.
pub fn avd(g: &LabelMap, s: &LabelMap, class_id: u8, spacing: Spacing) -> Result<f64, MetricsError> {
    let (ng, ns, _) = counts(g, s, class_id)?;
    if ng == 0 {
        return Err(MetricsError::EmptyGroundTruth(class_id));
    }
    let v = spacing.voxel_volume();
    let (vg, vs) = (ng as f64 * v, ns as f64 * v);
    Ok((vs - vg).abs() / vg * 100.0)
}

/// Voxels of `class_id` with at least one face neighbour of another class
/// (4-neighbourhood in-plane, plus the two slice neighbours for volumes).
/// Neighbours outside the grid do not count; a class filling the whole
/// grid is its own boundary.
pub fn boundary(labels: &LabelMap, class_id: u8) -> Vec<bool> {
    let (w, h, d) = labels.dims();
    let l = labels.labels();
    let idx = |x: usize, y: usize, z: usize| (z * h + y) * w + x;
    let mut out = vec![false; l.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = idx(x, y, z);
                if l[i] != class_id {
                    continue;
                }
                let other = |j: usize| l[j] != class_id;
                out[i] = (x > 0 && other(idx(x - 1, y, z)))
                    || (x + 1 < w && other(idx(x + 1, y, z)))
                    || (y > 0 && other(idx(x, y - 1, z)))
                    || (y + 1 < h && other(idx(x, y + 1, z)))
                    || (z > 0 && other(idx(x, y, z - 1)))
                    || (z + 1 < d && other(idx(x, y, z + 1)));
            }
        }
    }
    if !out.iter().any(|&b| b) {
        for (o, &v) in out.iter_mut().zip(l) {
            *o = v == class_id;
        }
    }
    out
}

/// Exact 1-D squared distance transform by the lower envelope of parabolas;
/// `f` holds input costs (`∞` where no site) and is overwritten.
fn edt_1d(f: &mut [f64], step: f64, v: &mut [usize], z: &mut [f64], buf: &mut [f64]) {
    let n = f.len();
    buf[..n].copy_from_slice(f);
    let f_in = &buf[..n];
    let w = step * step;
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if !f_in[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f_in[q] + w * (q * q) as f64) - (f_in[p] + w * (p * p) as f64)) / (2.0 * w * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !started {
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = (q as f64 - p as f64) * step;
        f[q] = dq * dq + f_in[p];
    }
}

/// Squared Euclidean distance (in mm²) from every voxel to the nearest
/// site; `∞` everywhere when there are no sites.
pub fn squared_distance_transform(sites: &[bool], dims: (usize, usize, usize), spacing: Spacing) -> Vec<f64> {
    let (w, h, d) = dims;
    let mut f: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n = w.max(h).max(d);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut buf = vec![0.0; n];
    let mut line = vec![0.0; n];
    for z_ in 0..d {
        for y in 0..h {
            let off = (z_ * h + y) * w;
            edt_1d(&mut f[off..off + w], spacing.x, &mut v, &mut z, &mut buf);
        }
    }
    for z_ in 0..d {
        for x in 0..w {
            for y in 0..h {
                line[y] = f[(z_ * h + y) * w + x];
            }
            edt_1d(&mut line[..h], spacing.y, &mut v, &mut z, &mut buf);
            for y in 0..h {
                f[(z_ * h + y) * w + x] = line[y];
            }
        }
    }
    if d > 1 {
        for y in 0..h {
            for x in 0..w {
                for z_ in 0..d {
                    line[z_] = f[(z_ * h + y) * w + x];
                }
                edt_1d(&mut line[..d], spacing.z, &mut v, &mut z, &mut buf);
                for z_ in 0..d {
                    f[(z_ * h + y) * w + x] = line[z_];
                }
            }
        }
    }
    f
}

/// Nearest-rank percentile of unsorted values (`p` in `(0, 100]`).
pub fn nearest_rank_percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = libm::ceil(p / 100.0 * n as f64) as usize;
    values[rank.clamp(1, n) - 1]
}

fn directed_h95(from: &[bool], to_dist2: &[f64]) -> f64 {
    let mut d: Vec<f64> = from.iter().zip(to_dist2).filter(|(b, _)| **b).map(|(_, &v)| libm::sqrt(v)).collect();
    nearest_rank_percentile(&mut d, 95.0)
}

/// Symmetric 95th-percentile Hausdorff distance between the class
/// boundaries, in mm.
pub fn hausdorff95(g: &LabelMap, s: &LabelMap, class_id: u8, spacing: Spacing) -> Result<f64, MetricsError> {
    g.check_same_dims(s)?;
    if g.count(class_id) == 0 || s.count(class_id) == 0 {
        return Err(MetricsError::EmptyMask(class_id));
    }
    let bg = boundary(g, class_id);
    let bs = boundary(s, class_id);
    let dg = squared_distance_transform(&bg, g.dims(), spacing);
    let ds = squared_distance_transform(&bs, s.dims(), spacing);
    Ok(directed_h95(&bg, &ds).max(directed_h95(&bs, &dg)))
}

/// All four scores for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub jaccard: f64,
    pub dice_pct: f64,
    /// `None` when either mask is empty
    pub hd95_mm: Option<f64>,
    /// `None` when the ground truth is empty
    pub avd_pct: Option<f64>,
}

pub fn class_scores(g: &LabelMap, s: &LabelMap, class_id: u8, spacing: Spacing) -> Result<ClassScores, MetricsError> {
    let hd = match hausdorff95(g, s, class_id, spacing) {
        Ok(v) => Some(v),
        Err(MetricsError::EmptyMask(_)) => None,
        Err(e) => return Err(e),
    };
    let av = match avd(g, s, class_id, spacing) {
        Ok(v) => Some(v),
        Err(MetricsError::EmptyGroundTruth(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ClassScores { jaccard: jaccard(g, s, class_id)?, dice_pct: dice(g, s, class_id)?, hd95_mm: hd, avd_pct: av })
}
