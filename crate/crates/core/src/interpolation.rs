//! KNN convex (Shepard) interpolation of coefficient matrices.
//!
//! Weights use the inverse squared distance kernel `phi = 1 / |mu - mu_i|^2`
//! and are normalized to a partition of unity, so every interpolated entry
//! stays inside the range spanned by the neighbors.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::parameter_space::{knn_indices, DiscreteParamSpace, ParamPoint, SampleSet};

/// Squared distance below which a query counts as sitting on a neighbor.
pub const COINCIDENCE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ShepardWeights {
    /// Positions into the neighbor list passed to [`shepard_weights`], or
    /// grid indices when produced by [`interpolate_coeffs`].
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Shepard weights of `query` with respect to `neighbors` (raw coordinates).
pub fn shepard_weights(query: &ParamPoint, neighbors: &[ParamPoint]) -> Result<ShepardWeights> {
    let d2: Vec<f64> = neighbors.iter().map(|p| query.distance_sq(p)).collect();
    weights_from_sq_distances(neighbors, &d2)
}

fn weights_from_sq_distances(neighbors: &[ParamPoint], d2: &[f64]) -> Result<ShepardWeights> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument(
            "Shepard weights need at least one neighbor".into(),
        ));
    }
    for i in 0..neighbors.len() {
        for j in 0..i {
            if neighbors[i].distance_sq(&neighbors[j]) < COINCIDENCE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "neighbors {j} and {i} coincide"
                )));
            }
        }
    }
    let k = neighbors.len();
    let mut weights = vec![0.0; k];
    // accumulate in ascending-distance order
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    if d2[order[0]] < COINCIDENCE_TOL {
        weights[order[0]] = 1.0;
    } else {
        let total: f64 = order.iter().map(|&i| 1.0 / d2[i]).sum();
        for &i in &order {
            weights[i] = (1.0 / d2[i]) / total;
        }
    }
    Ok(ShepardWeights {
        neighbors: (0..k).collect(),
        weights,
    })
}

/// `sum_i Psi_i(query) Xi_i` over the `k` nearest sampled points.
///
/// `coeffs[j]` belongs to `sampled.indices()[j]`.
pub fn interpolate_coeffs(
    space: &DiscreteParamSpace,
    query: &ParamPoint,
    sampled: &SampleSet,
    coeffs: &[Array2<f64>],
    k: usize,
) -> Result<(Array2<f64>, ShepardWeights)> {
    if coeffs.len() != sampled.len() {
        return Err(Error::shape(
            format!("{} coefficient matrices", sampled.len()),
            coeffs.len(),
        ));
    }
    let shape = coeffs.first().map(|c| c.dim()).unwrap_or_default();
    if let Some(bad) = coeffs.iter().find(|c| c.dim() != shape) {
        return Err(Error::shape(
            format!("{shape:?}"),
            format!("{:?}", bad.dim()),
        ));
    }

    let nearest = knn_indices(space, query, sampled, k)?;
    let q = space.metric_coords(query);
    let pts: Vec<ParamPoint> = nearest
        .iter()
        .map(|&(i, _)| space.metric_coords(space.point(i)))
        .collect();
    let d2: Vec<f64> = pts.iter().map(|p| q.distance_sq(p)).collect();
    let mut w = weights_from_sq_distances(&pts, &d2)?;
    w.neighbors = nearest.iter().map(|&(i, _)| i).collect();

    let mut out = Array2::zeros(shape);
    for (&grid_index, &weight) in w.neighbors.iter().zip(&w.weights) {
        if weight == 0.0 {
            continue;
        }
        let pos = sampled
            .position(grid_index)
            .expect("knn returns sampled indices");
        out.scaled_add(weight, &coeffs[pos]);
    }
    Ok((out, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameter_space::build_grid;

    fn p(c: &[f64]) -> ParamPoint {
        ParamPoint::new(c.to_vec())
    }

    #[test]
    fn coincident_query_takes_all_weight() {
        let n: Vec<_> = (0..7).map(|i| p(&[i as f64, (i * i) as f64])).collect();
        let w = shepard_weights(&n[5], &n).unwrap();
        for (i, &wi) in w.weights.iter().enumerate() {
            assert_eq!(wi, if i == 5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn symmetric_and_hand_values() {
        let w = shepard_weights(&p(&[0.0, 0.0]), &[p(&[1.0, 0.0]), p(&[-1.0, 0.0])]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        // phi = (1, 0.25) -> Psi = (0.8, 0.2)
        let w = shepard_weights(&p(&[0.0, 0.0]), &[p(&[1.0, 0.0]), p(&[2.0, 0.0])]).unwrap();
        assert!((w.weights[0] - 0.8).abs() < 1e-15);
        assert!((w.weights[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(shepard_weights(&p(&[0.0]), &[]).is_err());
        assert!(shepard_weights(&p(&[0.0]), &[p(&[1.0]), p(&[1.0])]).is_err());
    }

    #[test]
    fn k1_and_exact_reproduction() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let sampled = SampleSet::from_indices(vec![0, 4, 20, 24, 12], 25).unwrap();
        let coeffs: Vec<Array2<f64>> = (0..5)
            .map(|s| Array2::from_shape_fn((3, 2), |(i, j)| (s * 6 + i * 2 + j) as f64))
            .collect();
        // k = 1 picks the nearest sample's matrix
        let (xi, _) = interpolate_coeffs(&g, g.point(7), &sampled, &coeffs, 1).unwrap();
        assert_eq!(xi, coeffs[4]);
        for k in 1..=5 {
            for (pos, &gi) in sampled.indices().iter().enumerate() {
                let (xi, _) = interpolate_coeffs(&g, g.point(gi), &sampled, &coeffs, k).unwrap();
                assert_eq!(xi, coeffs[pos]);
            }
        }
    }

    #[test]
    fn interpolation_propagates_errors() {
        let g = build_grid(&[(0.0, 1.0)], &[3]).unwrap();
        let sampled = SampleSet::from_indices(vec![0, 2], 3).unwrap();
        let coeffs = vec![Array2::zeros((2, 1)), Array2::zeros((2, 1))];
        assert!(interpolate_coeffs(&g, g.point(1), &sampled, &coeffs, 3).is_err());
        assert!(interpolate_coeffs(&g, g.point(1), &sampled, &coeffs[..1], 1).is_err());
        let mixed = vec![Array2::zeros((2, 1)), Array2::zeros((3, 1))];
        assert!(interpolate_coeffs(&g, g.point(1), &sampled, &mixed, 2).is_err());
    }
}
