use crate::linalg::BandedCholesky;
use nalgebra::{DMatrix, DVector};

/// Modes of a snapshot set, orthonormal in the inner product `vᵀ M v`.
#[derive(Debug, Clone)]
pub struct PodModes {
    /// `N × r` matrix of modes; `r = 0` when every snapshot vanishes.
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl PodModes {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.ncols() == 0
    }
}

/// Proper orthogonal decomposition with respect to `M = L Lᵀ`.
///
/// Keeps the smallest `r` whose discarded energy `Σ_{i>r} σ_i²` is at most
/// `tol² Σ σ_i²`. The SVD is taken of `Lᵀ Y`, which avoids squaring the
/// condition number as the correlation-matrix route would.
pub fn pod(snapshots: &[DVector<f64>], mass: &BandedCholesky, tol: f64) -> PodModes {
    let n = mass.dim();
    if snapshots.is_empty() {
        return PodModes {
            modes: DMatrix::zeros(n, 0),
            singular_values: vec![],
        };
    }
    let mut w = DMatrix::zeros(n, snapshots.len());
    for (j, s) in snapshots.iter().enumerate() {
        assert_eq!(s.len(), n, "snapshot length");
        w.set_column(j, &mass.mul_upper(s.as_slice()));
    }
    let svd = w.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return PodModes {
            modes: DMatrix::zeros(n, 0),
            singular_values: sv,
        };
    }
    let mut tail = total;
    let mut r = 0;
    for s in &sv {
        if tail <= tol * tol * total {
            break;
        }
        tail -= s * s;
        r += 1;
        if tail < 0.0 {
            tail = 0.0;
        }
    }
    let r = r.max(1);
    let u = svd.u.expect("left singular vectors requested");
    let mut modes = DMatrix::zeros(n, r);
    for (k, &i) in order.iter().take(r).enumerate() {
        let mut col = u.column(i).clone_owned();
        mass.solve_upper_in_place(col.as_mut_slice());
        modes.set_column(k, &col);
    }
    PodModes {
        modes,
        singular_values: sv,
    }
}
