//! Voxel-grid index over integer RGB points with multiplicities.
//!
//! Survey data has millions of rows but only a few hundred thousand distinct
//! triplets per label, so points are deduplicated and counted first. Queries
//! only use exact integer squared distances, which keeps radius counts and
//! neighbor orderings reproducible.

use crate::color::Rgb;

const CELL_SHIFT: u32 = 4;
const CELL_SIZE: i32 = 1 << CELL_SHIFT;
const CELLS_PER_AXIS: i32 = 256 / CELL_SIZE;

pub struct ColorIndex {
    points: Vec<Rgb>,
    counts: Vec<u32>,
    cell_start: Vec<u32>,
    cell_items: Vec<u32>,
}

#[inline]
fn cell_of(p: Rgb) -> [i32; 3] {
    p.0.map(|c| i32::from(c) >> CELL_SHIFT)
}

#[inline]
fn cell_id([x, y, z]: [i32; 3]) -> usize {
    ((x * CELLS_PER_AXIS + y) * CELLS_PER_AXIS + z) as usize
}

impl ColorIndex {
    pub fn new<I: IntoIterator<Item = Rgb>>(colors: I) -> Self {
        let mut all: Vec<Rgb> = colors.into_iter().collect();
        all.sort_unstable();
        let mut points = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        for p in all {
            if points.last() == Some(&p) {
                *counts.last_mut().unwrap() += 1;
            } else {
                points.push(p);
                counts.push(1);
            }
        }

        let n_cells = (CELLS_PER_AXIS * CELLS_PER_AXIS * CELLS_PER_AXIS) as usize;
        let mut cell_start = vec![0u32; n_cells + 1];
        for &p in &points {
            cell_start[cell_id(cell_of(p)) + 1] += 1;
        }
        for i in 0..n_cells {
            cell_start[i + 1] += cell_start[i];
        }
        let mut fill = cell_start.clone();
        let mut cell_items = vec![0u32; points.len()];
        for (i, &p) in points.iter().enumerate() {
            let c = cell_id(cell_of(p));
            cell_items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }

        ColorIndex {
            points,
            counts,
            cell_start,
            cell_items,
        }
    }

    /// Distinct points in ascending lexicographic order.
    pub fn points(&self) -> &[Rgb] {
        &self.points
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn position(&self, p: Rgb) -> Option<usize> {
        self.points.binary_search(&p).ok()
    }

    fn cell_points(&self, cell: [i32; 3]) -> &[u32] {
        let id = cell_id(cell);
        &self.cell_items[self.cell_start[id] as usize..self.cell_start[id + 1] as usize]
    }

    /// Total multiplicity of indexed samples within Euclidean `radius` of `p`,
    /// including samples located at `p` itself.
    pub fn count_within(&self, p: Rgb, radius: f64) -> u64 {
        if radius < 0.0 {
            return 0;
        }
        let r2 = radius * radius;
        let reach = radius.floor() as i32;
        let lo = p.0.map(|c| ((i32::from(c) - reach).max(0)) >> CELL_SHIFT);
        let hi = p.0.map(|c| ((i32::from(c) + reach).min(255)) >> CELL_SHIFT);
        let mut total = 0u64;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    for &i in self.cell_points([x, y, z]) {
                        let i = i as usize;
                        if f64::from(self.points[i].squared_distance(p)) <= r2 {
                            total += u64::from(self.counts[i]);
                        }
                    }
                }
            }
        }
        total
    }

    /// The `k` nearest samples to the point at `index`, excluding one instance
    /// of that point. Duplicates count individually; ties are broken by point
    /// order. Returned values are indices into [`ColorIndex::points`].
    pub fn k_nearest(&self, index: usize, k: usize) -> Vec<usize> {
        let p = self.points[index];
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        let wanted = (k as u64).min(total.saturating_sub(1)) as usize;
        if wanted == 0 {
            return Vec::new();
        }

        let center = cell_of(p);
        let mut candidates: Vec<(u32, u32)> = Vec::new();
        for ring in 0..CELLS_PER_AXIS {
            self.push_ring(center, ring, p, &mut candidates);
            candidates.sort_unstable();

            let mut have = 0usize;
            let mut kth = None;
            for &(d2, i) in &candidates {
                let mut c = self.counts[i as usize] as usize;
                if i as usize == index {
                    c -= 1;
                }
                have += c;
                if have >= wanted {
                    kth = Some(d2);
                    break;
                }
            }

            let bound = outside_bound(p, center, ring);
            let done = match (kth, bound) {
                (_, None) => true,
                (Some(d2), Some(b)) => i64::from(d2) < b * b,
                (None, Some(_)) => false,
            };
            if done {
                break;
            }
        }

        let mut out = Vec::with_capacity(wanted);
        for &(_, i) in &candidates {
            let i = i as usize;
            let mut c = self.counts[i] as usize;
            if i == index {
                c -= 1;
            }
            for _ in 0..c {
                if out.len() == wanted {
                    return out;
                }
                out.push(i);
            }
        }
        out
    }

    fn push_ring(&self, center: [i32; 3], ring: i32, p: Rgb, out: &mut Vec<(u32, u32)>) {
        let lo = center.map(|c| (c - ring).max(0));
        let hi = center.map(|c| (c + ring).min(CELLS_PER_AXIS - 1));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let cheb = (x - center[0])
                        .abs()
                        .max((y - center[1]).abs())
                        .max((z - center[2]).abs());
                    if cheb != ring {
                        continue;
                    }
                    for &i in self.cell_points([x, y, z]) {
                        out.push((self.points[i as usize].squared_distance(p), i));
                    }
                }
            }
        }
    }
}

/// Lower bound on the distance from `p` to any point outside the cube of
/// cells within `ring` of `center`; `None` when that cube covers everything.
fn outside_bound(p: Rgb, center: [i32; 3], ring: i32) -> Option<i64> {
    let mut bound: Option<i64> = None;
    for (&channel, &cell) in p.0.iter().zip(&center) {
        let c = i64::from(channel);
        let lo_cell = cell - ring;
        let hi_cell = cell + ring;
        if lo_cell > 0 {
            let edge = i64::from(lo_cell) * i64::from(CELL_SIZE);
            let d = c - edge + 1;
            bound = Some(bound.map_or(d, |b| b.min(d)));
        }
        if hi_cell < CELLS_PER_AXIS - 1 {
            let edge = i64::from(hi_cell + 1) * i64::from(CELL_SIZE);
            let d = edge - c;
            bound = Some(bound.map_or(d, |b| b.min(d)));
        }
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Rgb], counts: &[u32], index: usize, k: usize) -> Vec<usize> {
        let p = points[index];
        let mut order: Vec<(u32, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, q)| (q.squared_distance(p), i))
            .collect();
        order.sort_unstable();
        let mut out = Vec::new();
        for (_, i) in order {
            let c = counts[i] as usize - usize::from(i == index);
            for _ in 0..c {
                if out.len() < k {
                    out.push(i);
                }
            }
        }
        out
    }

    fn arb_rgb() -> impl Strategy<Value = Rgb> {
        prop_oneof![
            any::<[u8; 3]>().prop_map(Rgb),
            (0u8..40, 0u8..40, 0u8..40).prop_map(|(r, g, b)| Rgb::new(r, g, b)),
        ]
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(colors in prop::collection::vec(arb_rgb(), 1..120), k in 1usize..8) {
            let index = ColorIndex::new(colors.iter().copied());
            for i in 0..index.points().len() {
                let got = index.k_nearest(i, k);
                let want = brute_knn(index.points(), index.counts(), i, k);
                prop_assert_eq!(got, want);
            }
        }

        #[test]
        fn radius_count_matches_brute_force(colors in prop::collection::vec(arb_rgb(), 1..120), radius in 0.0f64..60.0) {
            let index = ColorIndex::new(colors.iter().copied());
            for &p in index.points() {
                let want = colors
                    .iter()
                    .filter(|q| f64::from(q.squared_distance(p)) <= radius * radius)
                    .count() as u64;
                prop_assert_eq!(index.count_within(p, radius), want);
            }
        }
    }

    #[test]
    fn duplicates_are_neighbors_of_each_other() {
        let index = ColorIndex::new(vec![Rgb::new(5, 5, 5); 4]);
        assert_eq!(index.points().len(), 1);
        assert_eq!(index.k_nearest(0, 10), vec![0, 0, 0]);
        assert_eq!(index.count_within(Rgb::new(5, 5, 5), 0.0), 4);
    }
}
