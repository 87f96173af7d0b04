//! Gauss–Legendre rules and their tensor products.

use crate::error::{Error, Result};
use crate::model::{NominalDensity, ParamPoint};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Tensor rule for the expectation under a product-uniform density: the
/// weights sum to one.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub points: Vec<ParamPoint>,
    pub weights: Vec<f64>,
}

pub fn tensor_rule(density: &NominalDensity, order: usize) -> Result<TensorRule> {
    let dim = density.dim();
    if dim > 3 {
        return Err(Error::QuadratureDimension { dim });
    }
    if order == 0 {
        return Err(Error::InvalidConfig("quadrature order must be at least 1".into()));
    }
    let (x, w) = gauss_legendre(order);
    let total = order.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut u = Vec::with_capacity(dim);
        let mut wt = 1.0;
        for _ in 0..dim {
            let i = rem % order;
            rem /= order;
            u.push(0.5 * (x[i] + 1.0));
            wt *= 0.5 * w[i];
        }
        points.push(density.from_unit(&u));
        weights.push(wt);
    }
    Ok(TensorRule { points, weights })
}
