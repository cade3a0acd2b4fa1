//! Marching-cubes case table, generated from per-face contour segments.
//!
//! Corner `c` sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1). A corner is
//! "inside" when its value is negative; case bit `c` is set for inside corners.
//! On faces with two diagonal inside corners the outside corners are cut off,
//! a rule that depends only on the face so neighbouring cells agree.

use std::sync::OnceLock;

use crate::math::Vec3;

/// The 12 cube edges as (corner, corner, axis) with the first corner lower.
pub const EDGES: [(usize, usize, usize); 12] = {
    let mut out = [(0, 0, 0); 12];
    let mut n = 0;
    let mut a = 0;
    while a < 8 {
        let mut axis = 0;
        while axis < 3 {
            let b = a | (1 << axis);
            if b != a {
                out[n] = (a, b, axis);
                n += 1;
            }
            axis += 1;
        }
        a += 1;
    }
    out
};

fn corner_pos(c: usize) -> Vec3 {
    Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

fn edge_mid(e: usize) -> Vec3 {
    let (a, b, _) = EDGES[e];
    (corner_pos(a) + corner_pos(b)) * 0.5
}

fn edge_index(a: usize, b: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    EDGES.iter().position(|&(p, q, _)| p == a && q == b).unwrap()
}

/// Directed segments on one face for the given case.
fn face_segments(case: usize, axis: usize, side: usize) -> Vec<(usize, usize)> {
    let inside = |c: usize| case >> c & 1 == 1;
    let corners: Vec<usize> = (0..8).filter(|c| (c >> axis) & 1 == side).collect();
    let mut f = Vec3::zeros();
    f[axis] = if side == 1 { 1.0 } else { -1.0 };
    let face_edges: Vec<(usize, usize)> = corners
        .iter()
        .flat_map(|&a| corners.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| a < b && (a ^ b).count_ones() == 1)
        .collect();
    let crossing: Vec<usize> = face_edges
        .iter()
        .filter(|&&(a, b)| inside(a) != inside(b))
        .map(|&(a, b)| edge_index(a, b))
        .collect();
    let outside: Vec<usize> = corners.iter().copied().filter(|&c| !inside(c)).collect();
    let mut raw = Vec::new();
    match crossing.len() {
        0 => {}
        2 => {
            let centroid = outside.iter().map(|&c| corner_pos(c)).sum::<Vec3>() / outside.len() as f64;
            raw.push((crossing[0], crossing[1], centroid));
        }
        4 => {
            // cut off each outside corner separately
            for &c in &outside {
                let adj: Vec<usize> = crossing
                    .iter()
                    .copied()
                    .filter(|&e| EDGES[e].0 == c || EDGES[e].1 == c)
                    .collect();
                raw.push((adj[0], adj[1], corner_pos(c)));
            }
        }
        _ => unreachable!("a square face has an even number of sign changes"),
    }
    raw.into_iter()
        .map(|(p, q, toward_outside)| {
            let mid = (edge_mid(p) + edge_mid(q)) * 0.5;
            let s = toward_outside - mid;
            let t = s.cross(&f);
            if (edge_mid(q) - edge_mid(p)).dot(&t) > 0.0 {
                (p, q)
            } else {
                (q, p)
            }
        })
        .collect()
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        for side in 0..2 {
            for (p, q) in face_segments(case, axis, side) {
                assert_eq!(next[p], usize::MAX, "edge {p} starts two segments in case {case}");
                next[p] = q;
            }
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !used[e] {
            used[e] = true;
            lp.push(e);
            e = next[e];
            assert_ne!(e, usize::MAX, "open contour in case {case}");
        }
        assert_eq!(e, start, "contour does not close in case {case}");
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

/// Triangles (as edge indices) for each of the 256 cases, oriented so normals
/// point from inside (negative) toward outside (positive).
pub fn triangle_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}
