//! Static k-d tree over 3D points for nearest-neighbour queries.

use crate::math::Vec3;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Permuted point indices; the subtree over `order[lo..hi]` is split at its midpoint.
    order: Vec<usize>,
    axes: Vec<u8>,
}

const LEAF: usize = 8;

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_rec(points, &mut order, &mut axes);
        Self {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and squared distance of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    /// Indices of the k nearest points (k may exceed the point count), closest first.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search_k(q, 0, self.order.len(), k, &mut heap);
        }
        heap
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let d = (self.points[i] - q).norm_squared();
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff <= 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        let d = (self.points[pivot] - q).norm_squared();
        if d < best.1 || (d == best.1 && pivot < best.0) {
            *best = (pivot, d);
        }
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }

    fn search_k(&self, q: &Vec3, lo: usize, hi: usize, k: usize, heap: &mut Vec<(usize, f64)>) {
        let offer = |i: usize, heap: &mut Vec<(usize, f64)>| {
            let d = (self.points[i] - q).norm_squared();
            if heap.len() == k {
                let (wi, wd) = heap[k - 1];
                if d > wd || (d == wd && i > wi) {
                    return;
                }
                heap.pop();
            }
            let pos = heap.partition_point(|&(j, e)| e < d || (e == d && j < i));
            heap.insert(pos, (i, d));
        };
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                offer(i, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff <= 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search_k(q, near.0, near.1, k, heap);
        offer(pivot, heap);
        if heap.len() < k || diff * diff <= heap[heap.len() - 1].1 {
            self.search_k(q, far.0, far.1, k, heap);
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [usize], axes: &mut [u8]) {
    if order.len() <= LEAF {
        return;
    }
    // split on the axis of largest spread
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build_rec(points, left, la);
    build_rec(points, &mut right[1..], &mut ra[1..]);
}
