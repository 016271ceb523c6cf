//! Exact squared Euclidean distance transform on an anisotropic grid.

use ndarray::{Array3, ArrayViewMut1, Axis};

/// Lower envelope of parabolas along one line. `f` holds squared distances (inf for
/// unset); sample `i` sits at position `i * spacing`.
fn transform_line(mut f: ArrayViewMut1<f64>, spacing: f64, scratch: &mut Scratch) {
    let n = f.len();
    let Scratch { v, z, out } = scratch;
    v.clear();
    z.clear();
    out.clear();
    let pos = |i: usize| i as f64 * spacing;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&r) = v.last() else { break };
            let s = ((f[q] + pos(q) * pos(q)) - (f[r] + pos(r) * pos(r))) / (2.0 * (pos(q) - pos(r)));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        return;
    }
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out.push(d * d + f[v[k]]);
    }
    for (dst, &src) in f.iter_mut().zip(out.iter()) {
        *dst = src;
    }
}

#[derive(Default)]
struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
    out: Vec<f64>,
}

/// Squared distance (in spacing units) from every voxel to the nearest `true` voxel of
/// `sites`; infinite everywhere when `sites` is empty.
pub fn squared_distance_transform(sites: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut f = sites.mapv(|s| if s { 0.0 } else { f64::INFINITY });
    let mut scratch = Scratch::default();
    for (a, &sp) in spacing.iter().enumerate() {
        for line in f.lanes_mut(Axis(a)) {
            transform_line(line, sp, &mut scratch);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let shape = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..7));
            let sites = Array3::from_shape_simple_fn(shape, || rng.gen_bool(0.1));
            let spacing = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
            let dt = squared_distance_transform(&sites, spacing);
            let pts: Vec<_> = sites.indexed_iter().filter(|(_, &s)| s).map(|(i, _)| i).collect();
            for (idx, &d) in dt.indexed_iter() {
                let best = pts
                    .iter()
                    .map(|p| {
                        let dz = (idx.0 as f64 - p.0 as f64) * spacing[0];
                        let dy = (idx.1 as f64 - p.1 as f64) * spacing[1];
                        let dx = (idx.2 as f64 - p.2 as f64) * spacing[2];
                        dz * dz + dy * dy + dx * dx
                    })
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    assert!((d - best).abs() < 1e-9, "{idx:?}: {d} vs {best}");
                } else {
                    assert!(d.is_infinite());
                }
            }
        }
    }
}
