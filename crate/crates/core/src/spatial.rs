//! Uniform voxel hash grid with exact nearest-neighbour, k-nearest and radius
//! queries.
//!
//! Queries expand Chebyshev rings of cells around the query cell and stop once
//! the k-th best distance is strictly inside the searched block. When the ring
//! volume outgrows the number of occupied cells the search falls back to
//! visiting occupied cells in order of their box distance, so far-away queries
//! stay bounded. Both paths are exact; ties resolve to the lowest point index.

use rustc_hash::FxHashMap;

use crate::math::Vec3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct HashGrid {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    cells: FxHashMap<Cell, Vec<u32>>,
}

/// Bounded list of the `k` best `(index, squared distance)` pairs.
struct Best {
    k: usize,
    items: Vec<(usize, f64)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn better(a: (usize, f64), b: (usize, f64)) -> bool {
        a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
    }

    fn offer(&mut self, idx: usize, d2: f64) {
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if !Self::better((idx, d2), worst) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .iter()
            .position(|&it| Self::better((idx, d2), it))
            .unwrap_or(self.items.len());
        self.items.insert(pos, (idx, d2));
    }

    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    fn worst_d2(&self) -> f64 {
        self.items.last().map(|x| x.1).unwrap_or(f64::INFINITY)
    }
}

impl HashGrid {
    /// Indexes `points`. Without an explicit `cell` edge, one is chosen from
    /// the bounding box so that cells hold a handful of points on average.
    pub fn build(points: &[Vec3], cell: Option<f64>) -> Self {
        let (lo, hi) = bounds(points);
        let cell = cell.filter(|c| *c > 0.0 && c.is_finite()).unwrap_or_else(|| {
            let ext = (hi - lo).max().max(1e-9);
            let per_axis = ((points.len().max(1) as f64) / 2.0).cbrt().max(1.0);
            ext / per_axis
        });
        let mut cells: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        let mut grid = HashGrid {
            points: points.to_vec(),
            origin: lo,
            cell,
            cells: FxHashMap::default(),
        };
        for (i, p) in points.iter().enumerate() {
            cells.entry(grid.key(p)).or_default().push(i as u32);
        }
        grid.cells = cells;
        grid
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

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn key(&self, p: &Vec3) -> Cell {
        let r = (p - self.origin) / self.cell;
        (r[0].floor() as i64, r[1].floor() as i64, r[2].floor() as i64)
    }

    /// Minimum distance from `q` to the boundary of the block of cells within
    /// Chebyshev radius `r` of `c`.
    fn block_margin(&self, q: &Vec3, c: Cell, r: i64) -> f64 {
        let c = [c.0, c.1, c.2];
        let mut m = f64::INFINITY;
        for a in 0..3 {
            let lo = self.origin[a] + (c[a] - r) as f64 * self.cell;
            let hi = self.origin[a] + (c[a] + r + 1) as f64 * self.cell;
            m = m.min(q[a] - lo).min(hi - q[a]);
        }
        m.max(0.0)
    }

    fn box_dist2(&self, q: &Vec3, c: &Cell) -> f64 {
        let c = [c.0, c.1, c.2];
        let mut d2 = 0.0;
        for a in 0..3 {
            let lo = self.origin[a] + c[a] as f64 * self.cell;
            let hi = lo + self.cell;
            let d = if q[a] < lo {
                lo - q[a]
            } else if q[a] > hi {
                q[a] - hi
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    fn scan_cell(&self, cell: &Cell, q: &Vec3, exclude: Option<usize>, best: &mut Best) {
        if let Some(ids) = self.cells.get(cell) {
            for &i in ids {
                let i = i as usize;
                if Some(i) == exclude {
                    continue;
                }
                best.offer(i, (self.points[i] - q).norm_squared());
            }
        }
    }

    fn search(&self, q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let avail = self.points.len() - usize::from(exclude.is_some_and(|e| e < self.points.len()));
        let k = k.min(avail);
        if k == 0 {
            return Vec::new();
        }
        let mut best = Best::new(k);
        let c = self.key(q);
        let budget = 2 * self.cells.len() + 27;
        let mut visited = 0usize;
        let mut r = 0i64;
        loop {
            visit_ring(c, r, |cell| self.scan_cell(&cell, q, exclude, &mut best));
            visited += ring_size(r);
            if best.full() {
                let m = self.block_margin(q, c, r);
                if best.worst_d2() < m * m {
                    return best.items;
                }
            }
            if visited + ring_size(r + 1) > budget {
                break;
            }
            r += 1;
        }
        // Fall back to the occupied cells outside the searched block.
        let mut rest: Vec<(f64, Cell)> = self
            .cells
            .keys()
            .filter(|k| cheb(**k, c) > r)
            .map(|k| (self.box_dist2(q, k), *k))
            .collect();
        rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (d2, cell) in rest {
            if best.full() && d2 > best.worst_d2() {
                break;
            }
            self.scan_cell(&cell, q, exclude, &mut best);
        }
        best.items
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.search(q, 1, None).into_iter().next()
    }

    /// Nearest point other than `exclude`.
    pub fn nearest_excluding(&self, q: &Vec3, exclude: usize) -> Option<(usize, f64)> {
        self.search(q, 1, Some(exclude)).into_iter().next()
    }

    /// The `k` nearest points ordered by `(distance, index)`.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        self.search(q, k, None)
    }

    /// Indices of points with `‖p − q‖ ≤ radius`, ascending.
    pub fn within(&self, q: &Vec3, radius: f64, exclude: Option<usize>) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        let reach = (radius / self.cell).ceil() as i64;
        let c = self.key(q);
        let mut test = |ids: &Vec<u32>| {
            for &i in ids {
                let i = i as usize;
                if Some(i) != exclude && (self.points[i] - q).norm_squared() <= r2 {
                    out.push(i);
                }
            }
        };
        let block = (2 * reach + 1).pow(3) as usize;
        if block > 2 * self.cells.len() {
            for (key, ids) in &self.cells {
                if self.box_dist2(q, key) <= r2 {
                    test(ids);
                }
            }
        } else {
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            test(ids);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn count_within(&self, q: &Vec3, radius: f64, exclude: Option<usize>) -> usize {
        self.within(q, radius, exclude).len()
    }
}

fn cheb(a: Cell, b: Cell) -> i64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs()).max((a.2 - b.2).abs())
}

fn ring_size(r: i64) -> usize {
    if r == 0 {
        1
    } else {
        ((2 * r + 1).pow(3) - (2 * r - 1).pow(3)) as usize
    }
}

fn visit_ring(c: Cell, r: i64, mut f: impl FnMut(Cell)) {
    if r == 0 {
        f(c);
        return;
    }
    for dx in -r..=r {
        for dy in -r..=r {
            let edge = dx.abs() == r || dy.abs() == r;
            if edge {
                for dz in -r..=r {
                    f((c.0 + dx, c.1 + dy, c.2 + dz));
                }
            } else {
                f((c.0 + dx, c.1 + dy, c.2 - r));
                f((c.0 + dx, c.1 + dy, c.2 + r));
            }
        }
    }
}

pub(crate) fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        (lo, hi)
    }
}
