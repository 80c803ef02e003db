use super::vec3::{self, Vec3};

/// Uniform hash grid for exact nearest-neighbour queries over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

const MAX_CELLS_PER_AXIS: usize = 256;

impl PointGrid {
    /// Builds the grid with cells about twice the mean spacing of a surface
    /// sampled by `points`. Returns `None` for an empty set.
    pub fn new(points: &[Vec3]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext = vec3::sub(hi, lo);
        let area = 2.0 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[2] * ext[0]);
        let spacing = (area / points.len() as f64).sqrt();
        let max_ext = ext[0].max(ext[1]).max(ext[2]);
        let cell = (2.0 * spacing)
            .max(max_ext / MAX_CELLS_PER_AXIS as f64)
            .max(1e-9);
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(MAX_CELLS_PER_AXIS + 1));
        let mut grid = Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncells = dims[0] * dims[1] * dims[2];
        let cells: Vec<usize> = points.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        let mut starts = vec![0u32; ncells + 1];
        for &c in &cells {
            starts[c + 1] += 1;
        }
        for c in 0..ncells {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.starts = starts;
        grid.order = order;
        Some(grid)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Index and squared distance of the point closest to `q`; ties resolve to
    /// the lower index.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let center = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for ring in 0..=max_ring {
            let lo = center.map(|c| c as isize - ring as isize);
            let hi = center.map(|c| c as isize + ring as isize);
            for x in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                        let on_shell = x == lo[0] || x == hi[0] || y == lo[1] || y == hi[1] || z == lo[2] || z == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let c = self.flat([x as usize, y as usize, z as usize]);
                        for &i in &self.order[self.starts[c] as usize..self.starts[c + 1] as usize] {
                            let d = vec3::dist2(q, self.points[i as usize]);
                            if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                                best = (i as usize, d);
                            }
                        }
                    }
                }
            }
            // Unvisited points are at least `ring` cells away.
            let bound = ring as f64 * self.cell;
            if best.0 != usize::MAX && best.1 < bound * bound {
                break;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                let v = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                ];
                vec3::scale(v, 0.6 / vec3::norm(v))
            })
            .collect();
        let grid = PointGrid::new(&pts).unwrap();
        for _ in 0..500 {
            let q = [
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            ];
            let (i, d) = grid.nearest(q);
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, &p)| (i, vec3::dist2(q, p)))
                .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            assert_eq!(d, bd);
            assert_eq!(i, bi);
        }
    }

    #[test]
    fn single_and_coincident_points() {
        let g = PointGrid::new(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(g.nearest([0.0; 3]), (0, 14.0));
        let g = PointGrid::new(&[[0.0; 3], [0.0; 3]]).unwrap();
        assert_eq!(g.nearest([1.0, 0.0, 0.0]), (0, 1.0));
        assert!(PointGrid::new(&[]).is_none());
    }
}
