use super::Projection;
use crate::cvar::{CvarParams, QuadratureOracle};
use crate::error::{Error, Result};
use crate::model::{ControlVector, StochasticModel};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

/// Identifies a reference solution on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceKey {
    pub problem: String,
    pub beta: f64,
    pub epsilon: f64,
    pub nu: Option<f64>,
    pub mesh: Option<usize>,
    pub grid_order: usize,
    pub projection: Projection,
    pub tol: f64,
}

impl ReferenceKey {
    fn file_name(&self) -> String {
        let mut s = format!("{}-b{}-e{}-g{}", self.problem, self.beta, self.epsilon, self.grid_order);
        if let Some(nu) = self.nu {
            s.push_str(&format!("-nu{nu}"));
        }
        if let Some(n) = self.mesh {
            s.push_str(&format!("-n{n}"));
        }
        if let Projection::Box { lower, upper } = self.projection {
            s.push_str(&format!("-box{lower}_{upper}"));
        }
        s.push_str(&format!("-tol{}.json", self.tol));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    pub grid_order: usize,
    /// Stop once `‖R‖_Z ≤ tol`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Step length in the definition of `R = (z − P(z − α∇))/α`.
    pub alpha: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            grid_order: 64,
            tol: 1e-10,
            max_iterations: 100_000,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub key: Option<ReferenceKey>,
    pub z: Vec<f64>,
    pub value: f64,
    pub t_star: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl Reference {
    pub fn control(&self) -> ControlVector {
        ControlVector::from_slice(&self.z)
    }
}

/// Projected gradient on the quadrature-discretized smoothed CVaR with
/// Barzilai–Borwein steps and a nonmonotone Armijo safeguard. `t` is
/// re-minimized exactly at every evaluation.
pub fn compute_reference<M: StochasticModel + ?Sized>(
    model: &M,
    params: &CvarParams,
    projection: &Projection,
    config: &ReferenceConfig,
    z0: Option<ControlVector>,
) -> Result<Reference> {
    let space = model.control_space();
    let (oracle, _) = QuadratureOracle::new(model, *params, config.grid_order)?.with_cached_forms()?;
    let mut z = projection.project(&z0.unwrap_or_else(|| ControlVector::zeros(space.dim())));
    let mut cur = oracle.evaluate(&z)?;
    let mut history: VecDeque<f64> = VecDeque::from([cur.value]);
    let mut lambda = 1.0;
    let residual = |z: &ControlVector, g: &ControlVector| {
        let p = projection.project(&(z - &g.scale(config.alpha)));
        space.norm(&(z - &p)) / config.alpha
    };
    let mut res = residual(&z, &cur.gradient);
    for it in 0..config.max_iterations {
        if res <= config.tol {
            return Ok(Reference {
                key: None,
                z: z.as_slice().to_vec(),
                value: cur.value,
                t_star: cur.t_star,
                residual_norm: res,
                iterations: it,
            });
        }
        let d = &projection.project(&(&z - &cur.gradient.scale(lambda))) - &z;
        let slope = space.inner(&cur.gradient, &d);
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 1.0;
        let next = loop {
            let zn = &z + &d.scale(s);
            let r = oracle.evaluate(&zn)?;
            if r.value <= fmax + 1e-4 * s * slope + 4.0 * f64::EPSILON * fmax.abs() || s < 1e-12 {
                break (zn, r);
            }
            s *= 0.5;
        };
        let (zn, rn) = next;
        let sk = &zn - &z;
        let yk = &rn.gradient - &cur.gradient;
        let sy = space.inner(&sk, &yk);
        lambda = if sy > 0.0 {
            (space.norm_squared(&sk) / sy).clamp(1e-10, 1e10)
        } else {
            1e10f64.min(1.0 / space.norm(&rn.gradient).max(1e-300))
        };
        z = zn;
        cur = rn;
        history.push_back(cur.value);
        if history.len() > 10 {
            history.pop_front();
        }
        res = residual(&z, &cur.gradient);
    }
    Err(Error::NonConvergence {
        what: "reference solver",
        iterations: config.max_iterations,
        residual: res,
    })
}

/// Directory of JSON reference solutions. A stored entry is only reused if
/// its full key matches.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub const ENV: &'static str = "RISKGRAD_CACHE";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The directory named by `RISKGRAD_CACHE`, else `fallback`.
    pub fn from_env_or(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(Self::ENV) {
            Some(d) if !d.is_empty() => Self::new(PathBuf::from(d)),
            _ => Self::new(fallback),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, key: &ReferenceKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    pub fn load(&self, key: &ReferenceKey) -> Result<Option<Reference>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let r: Reference = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        Ok((r.key.as_ref() == Some(key)).then_some(r))
    }

    pub fn store(&self, reference: &Reference) -> Result<()> {
        let key = reference
            .key
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("reference without key".into()))?;
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path(key);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(reference)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Cached reference for `key`, computing and storing it on a miss.
    pub fn get_or_compute(
        &self,
        key: &ReferenceKey,
        compute: impl FnOnce() -> Result<Reference>,
    ) -> Result<Reference> {
        if let Some(r) = self.load(key)? {
            return Ok(r);
        }
        let mut r = compute()?;
        r.key = Some(key.clone());
        self.store(&r)?;
        // Hand back what a later run will read, bit for bit.
        Ok(self.load(key)?.unwrap_or(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{toy_quadratic, TOY_CENTER};

    #[test]
    fn toy_reference_is_the_centre() {
        let toy = toy_quadratic();
        let p = CvarParams::new(0.9, 1e-4).unwrap();
        let cfg = ReferenceConfig {
            grid_order: 16,
            ..Default::default()
        };
        let r = compute_reference(&toy, &p, &Projection::Identity, &cfg, None).unwrap();
        assert!(r.residual_norm <= 1e-10);
        for (a, b) in r.z.iter().zip(TOY_CENTER) {
            assert!((a - b).abs() < 1e-8, "{:?}", r.z);
        }
    }

    #[test]
    fn cache_roundtrip_and_key_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::new(dir.path());
        let key = ReferenceKey {
            problem: "toy-quadratic".into(),
            beta: 0.9,
            epsilon: 1e-4,
            nu: None,
            mesh: None,
            grid_order: 8,
            projection: Projection::Identity,
            tol: 1e-10,
        };
        let mut calls = 0;
        let mut make = || {
            calls += 1;
            Ok(Reference {
                key: None,
                z: vec![1.0, 2.0],
                value: 3.0,
                t_star: 0.5,
                residual_norm: 0.0,
                iterations: 1,
            })
        };
        let a = cache.get_or_compute(&key, &mut make).unwrap();
        let b = cache.get_or_compute(&key, &mut make).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls, 1);
        // A file whose stored key differs is never reused.
        let mut other = key.clone();
        other.tol = 1e-9;
        std::fs::copy(cache.path(&key), cache.path(&other)).unwrap();
        assert!(cache.load(&other).unwrap().is_none());
    }

    #[test]
    fn stored_floats_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::new(dir.path());
        let key = ReferenceKey {
            problem: "fem-kappa1".into(),
            beta: 0.95,
            epsilon: 1e-4,
            nu: Some(1e-3),
            mesh: Some(16),
            grid_order: 64,
            projection: Projection::Identity,
            tol: 1e-10,
        };
        let z: Vec<f64> = (1..200u32).map(|i| (i as f64).sqrt() * 1e-3 / 7.0 + f64::EPSILON * i as f64).collect();
        let r = Reference {
            key: Some(key.clone()),
            z: z.clone(),
            value: 0.1 + 0.2,
            t_star: 2.0f64.sqrt(),
            residual_norm: 5e-324,
            iterations: 3,
        };
        cache.store(&r).unwrap();
        let back = cache.load(&key).unwrap().unwrap();
        assert!(back.z.iter().zip(&z).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.value.to_bits(), r.value.to_bits());
        assert_eq!(back.t_star.to_bits(), r.t_star.to_bits());
    }
}
