//! Discrete parameter grids, sampled sets and the random/nearest-neighbor
//! queries the greedy loop runs against them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in parameter space. For the Burgers problems `coords = (a, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint {
    pub coords: Vec<f64>,
}

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn distance_sq(&self, other: &ParamPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// Range and resolution of one parameter dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl ParamRange {
    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            // exact endpoint, avoids round-off in min + (count-1)*step
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

/// Tensor-product grid `D^h`, stored row-major with dimension 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParamSpace {
    ranges: Vec<ParamRange>,
    normalize_distances: bool,
    points: Vec<ParamPoint>,
}

impl DiscreteParamSpace {
    pub fn ranges(&self) -> &[ParamRange] {
        &self.ranges
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[ParamPoint] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &ParamPoint {
        &self.points[index]
    }

    pub fn normalize_distances(&self) -> bool {
        self.normalize_distances
    }

    /// Switches KNN distances to per-dimension normalized coordinates.
    pub fn with_normalized_distances(mut self, on: bool) -> Self {
        self.normalize_distances = on;
        self
    }

    /// Per-dimension grid indices of a flat index.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (d, r) in self.ranges.iter().enumerate().rev() {
            out[d] = index % r.count;
            index /= r.count;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        self.ranges
            .iter()
            .zip(multi)
            .fold(0, |acc, (r, &i)| acc * r.count + i)
    }

    /// Flat index of the grid point equal to `p` (within 1e-12 per coordinate).
    pub fn index_of(&self, p: &ParamPoint) -> Option<usize> {
        if p.dim() != self.dim() {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for (r, &c) in self.ranges.iter().zip(&p.coords) {
            let t = (c - r.min) / (r.max - r.min) * (r.count - 1) as f64;
            let i = t.round();
            if i < 0.0 || i as usize >= r.count || (r.value(i as usize) - c).abs() > 1e-12 {
                return None;
            }
            multi.push(i as usize);
        }
        Some(self.flat_index(&multi))
    }

    /// Distance used for nearest-neighbor queries and Shepard weights.
    pub fn distance_sq(&self, a: &ParamPoint, b: &ParamPoint) -> f64 {
        if !self.normalize_distances {
            return a.distance_sq(b);
        }
        self.ranges
            .iter()
            .zip(a.coords.iter().zip(&b.coords))
            .map(|(r, (x, y))| {
                let d = (x - y) / (r.max - r.min);
                d * d
            })
            .sum()
    }

    /// Maps a point into the coordinates in which distances are measured.
    pub fn metric_coords(&self, p: &ParamPoint) -> ParamPoint {
        if !self.normalize_distances {
            return p.clone();
        }
        ParamPoint::new(
            self.ranges
                .iter()
                .zip(&p.coords)
                .map(|(r, c)| (c - r.min) / (r.max - r.min))
                .collect(),
        )
    }
}

/// Builds the inclusive tensor-product grid.
pub fn build_grid(ranges: &[(f64, f64)], counts: &[usize]) -> Result<DiscreteParamSpace> {
    if ranges.is_empty() || ranges.len() != counts.len() {
        return Err(Error::InvalidArgument(format!(
            "need one count per range, got {} ranges and {} counts",
            ranges.len(),
            counts.len()
        )));
    }
    let mut dims = Vec::with_capacity(ranges.len());
    for (d, (&(min, max), &count)) in ranges.iter().zip(counts).enumerate() {
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "dimension {d}: count must be at least 2, got {count}"
            )));
        }
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dimension {d}: invalid range [{min}, {max}]"
            )));
        }
        dims.push(ParamRange { min, max, count });
    }

    let total: usize = dims.iter().map(|r| r.count).product();
    let mut space = DiscreteParamSpace {
        ranges: dims,
        normalize_distances: false,
        points: Vec::with_capacity(total),
    };
    for flat in 0..total {
        let multi = space.multi_index(flat);
        let coords = space
            .ranges
            .iter()
            .zip(&multi)
            .map(|(r, &i)| r.value(i))
            .collect();
        space.points.push(ParamPoint { coords });
    }
    Ok(space)
}

/// Ordered, duplicate-free list of sampled grid indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleSet {
    indices: Vec<usize>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks uniqueness and bounds against `grid_len`.
    pub fn from_indices(indices: Vec<usize>, grid_len: usize) -> Result<Self> {
        let mut set = Self::new();
        for i in indices {
            set.insert(i, grid_len)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, index: usize, grid_len: usize) -> Result<()> {
        if index >= grid_len {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for grid of {grid_len} points"
            )));
        }
        if self.contains(index) {
            return Err(Error::InvalidArgument(format!(
                "index {index} already sampled"
            )));
        }
        self.indices.push(index);
        Ok(())
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of a grid index within the set.
    pub fn position(&self, index: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == index)
    }
}

/// Indices of all `2^n` extreme-coordinate combinations, ascending.
pub fn corner_indices(space: &DiscreteParamSpace) -> SampleSet {
    let n = space.dim();
    let mut indices: Vec<usize> = (0..1usize << n)
        .map(|mask| {
            let multi: Vec<usize> = (0..n)
                .map(|d| {
                    if mask >> (n - 1 - d) & 1 == 1 {
                        space.ranges[d].count - 1
                    } else {
                        0
                    }
                })
                .collect();
            space.flat_index(&multi)
        })
        .collect();
    indices.sort_unstable();
    indices.dedup();
    SampleSet { indices }
}

/// Nearest grid indices to an evenly spaced `counts` lattice over the grid,
/// i.e. a predefined uniform training set.
pub fn uniform_indices(space: &DiscreteParamSpace, counts: &[usize]) -> Result<SampleSet> {
    if counts.len() != space.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} counts, got {}",
            space.dim(),
            counts.len()
        )));
    }
    let per_dim: Vec<Vec<usize>> = space
        .ranges
        .iter()
        .zip(counts)
        .map(|(r, &c)| {
            if c == 0 || c > r.count {
                return Err(Error::InvalidArgument(format!(
                    "uniform count {c} not in 1..={}",
                    r.count
                )));
            }
            Ok(if c == 1 {
                vec![(r.count - 1) / 2]
            } else {
                (0..c)
                    .map(|i| ((i * (r.count - 1)) as f64 / (c - 1) as f64).round() as usize)
                    .collect()
            })
        })
        .collect::<Result<_>>()?;

    let total: usize = counts.iter().product();
    let mut set = SampleSet::new();
    for t in 0..total {
        let mut rem = t;
        let mut multi = vec![0; counts.len()];
        for d in (0..counts.len()).rev() {
            multi[d] = per_dim[d][rem % counts[d]];
            rem /= counts[d];
        }
        set.insert(space.flat_index(&multi), space.len())?;
    }
    Ok(set)
}

/// Draws `size` unsampled indices uniformly without replacement.
///
/// The draw depends only on `(space.len(), sampled, size, seed)`.
pub fn random_subset(
    space: &DiscreteParamSpace,
    sampled: &SampleSet,
    size: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let available: Vec<usize> = (0..space.len()).filter(|&i| !sampled.contains(i)).collect();
    if size > available.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {size} exceeds {} available candidates",
            available.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, available.len(), size)
        .into_iter()
        .map(|i| available[i])
        .collect())
}

/// The `k` sampled indices closest to `query`, ascending by distance with
/// ties going to the lower grid index.
pub fn knn_indices(
    space: &DiscreteParamSpace,
    query: &ParamPoint,
    sampled: &SampleSet,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k < 1 || k > sampled.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            sampled.len()
        )));
    }
    if query.dim() != space.dim() {
        return Err(Error::shape(
            format!("{}-dimensional parameter", space.dim()),
            format!("{}-dimensional query", query.dim()),
        ));
    }
    let mut scored: Vec<(usize, f64)> = sampled
        .indices()
        .iter()
        .map(|&i| (i, space.distance_sq(query, space.point(i))))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_21x21() -> DiscreteParamSpace {
        build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[21, 21]).unwrap()
    }

    #[test]
    fn grid_441_points_with_endpoints() {
        let g = grid_21x21();
        assert_eq!(g.len(), 441);
        assert_eq!(g.point(0).coords, vec![0.7, 0.9]);
        assert_eq!(g.point(440).coords, vec![0.9, 1.1]);
        // dimension 0 slowest
        assert_eq!(g.point(1).coords[0], 0.7);
        assert!((g.point(21).coords[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn two_point_grid() {
        let g = build_grid(&[(0.0, 1.0)], &[2]).unwrap();
        assert_eq!(
            g.points(),
            &[ParamPoint::new(vec![0.0]), ParamPoint::new(vec![1.0])]
        );
    }

    #[test]
    fn midpoint_of_3x3() {
        let g = build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[3, 3]).unwrap();
        let mid = g.point(4);
        assert!((mid.coords[0] - 0.8).abs() < 1e-15);
        assert!((mid.coords[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(build_grid(&[(0.0, 1.0)], &[1]).is_err());
        assert!(build_grid(&[(1.0, 0.0)], &[3]).is_err());
        assert!(build_grid(&[(0.0, 0.0)], &[3]).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[3, 3]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = build_grid(&[(0.0, 1.0), (2.0, 3.0), (-1.0, 1.0)], &[3, 4, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
            assert_eq!(g.index_of(g.point(i)), Some(i));
        }
        assert_eq!(g.index_of(&ParamPoint::new(vec![0.1, 2.0, 0.0])), None);
    }

    #[test]
    fn corners_of_21x21_grid() {
        let g = grid_21x21();
        let c = corner_indices(&g);
        let pts: Vec<_> = c
            .indices()
            .iter()
            .map(|&i| g.point(i).coords.clone())
            .collect();
        assert_eq!(
            pts,
            vec![
                vec![0.7, 0.9],
                vec![0.7, 1.1],
                vec![0.9, 0.9],
                vec![0.9, 1.1]
            ]
        );
    }

    #[test]
    fn corners_of_small_grids() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!(corner_indices(&g).indices(), &[0, 1, 2, 3]);
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let c = corner_indices(&g);
        assert_eq!(c.len(), 4);
        assert!(!c.contains(4));
    }

    #[test]
    fn corners_are_endpoints_in_any_dimension() {
        for n in 1..=4 {
            let ranges = vec![(0.0, 1.0); n];
            let counts: Vec<usize> = (0..n).map(|d| 2 + d).collect();
            let g = build_grid(&ranges, &counts).unwrap();
            let c = corner_indices(&g);
            assert_eq!(c.len(), 1 << n);
            for &i in c.indices() {
                assert!(g.point(i).coords.iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
    }

    #[test]
    fn random_subset_size_of_first_level() {
        let g = grid_21x21();
        let sampled = corner_indices(&g);
        let s = random_subset(&g, &sampled, 64, 7).unwrap();
        assert_eq!(s.len(), 64);
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 64);
        assert!(s.iter().all(|&i| !sampled.contains(i)));
    }

    #[test]
    fn random_subset_forced_choice() {
        let g = build_grid(&[(0.0, 1.0)], &[5]).unwrap();
        let sampled = SampleSet::from_indices(vec![0, 1, 3, 4], 5).unwrap();
        assert_eq!(random_subset(&g, &sampled, 1, 99).unwrap(), vec![2]);
        assert!(random_subset(&g, &sampled, 2, 99).is_err());
    }

    #[test]
    fn random_subset_is_deterministic() {
        let g = grid_21x21();
        let sampled = corner_indices(&g);
        assert_eq!(
            random_subset(&g, &sampled, 16, 3).unwrap(),
            random_subset(&g, &sampled, 16, 3).unwrap()
        );
    }

    #[test]
    fn random_subset_disjoint_over_many_seeds() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[7, 7]).unwrap();
        let sampled = SampleSet::from_indices(vec![0, 6, 42, 48, 24, 10], g.len()).unwrap();
        for seed in 0..1000 {
            let s = random_subset(&g, &sampled, 1 + (seed as usize % 40), seed).unwrap();
            let mut u = s.clone();
            u.sort_unstable();
            u.dedup();
            assert_eq!(u.len(), s.len());
            assert!(s.iter().all(|&i| !sampled.contains(i) && i < g.len()));
        }
    }

    #[test]
    fn knn_self_match_and_ties() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let sampled = SampleSet::from_indices(vec![8, 2, 0], 9).unwrap();
        let r = knn_indices(&g, g.point(2), &sampled, 1).unwrap();
        assert_eq!(r, vec![(2, 0.0)]);
        // (0, 0.5) is equidistant from 0 = (0,0) and 2 = (0,1)
        let r = knn_indices(&g, &ParamPoint::new(vec![0.0, 0.5]), &sampled, 1).unwrap();
        assert_eq!(r[0].0, 0);
        assert!(knn_indices(&g, g.point(0), &sampled, 0).is_err());
        assert!(knn_indices(&g, g.point(0), &sampled, 4).is_err());
    }

    #[test]
    fn knn_center_of_corners_vs_brute_force() {
        let g = grid_21x21();
        let sampled = corner_indices(&g);
        let q = ParamPoint::new(vec![0.8, 1.0]);
        let got = knn_indices(&g, &q, &sampled, 4).unwrap();
        let mut brute: Vec<(usize, f64)> = sampled
            .indices()
            .iter()
            .map(|&i| {
                let p = g.point(i);
                let d = ((p.coords[0] - 0.8).powi(2) + (p.coords[1] - 1.0).powi(2)).sqrt();
                (i, d)
            })
            .collect();
        brute.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let got_idx: Vec<_> = got.iter().map(|x| x.0).collect();
        let brute_idx: Vec<_> = brute.iter().map(|x| x.0).collect();
        let mut sorted = got_idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, sampled.indices());
        for (a, b) in got.iter().zip(&brute) {
            assert!((a.1 - b.1).abs() < 1e-14);
        }
        assert_eq!(got_idx, brute_idx);
    }

    #[test]
    fn uniform_lattice() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[11, 11]).unwrap();
        let u = uniform_indices(&g, &[4, 3]).unwrap();
        assert_eq!(u.len(), 12);
        let a: Vec<f64> = u.indices().iter().map(|&i| g.point(i).coords[0]).collect();
        assert_eq!(a[0], 0.0);
        assert_eq!(*a.last().unwrap(), 1.0);
        let u = uniform_indices(&g, &[2, 2]).unwrap();
        assert_eq!(u.indices(), corner_indices(&g).indices());
    }

    #[test]
    fn normalized_distance_switch() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 100.0)], &[2, 2])
            .unwrap()
            .with_normalized_distances(true);
        let d = g.distance_sq(
            &ParamPoint::new(vec![0.0, 0.0]),
            &ParamPoint::new(vec![1.0, 100.0]),
        );
        assert!((d - 2.0).abs() < 1e-15);
    }
}
