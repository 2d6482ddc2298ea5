use crate::error::{Error, Result};
use crate::stats::wrap_angle;
use std::collections::HashSet;

/// Support of one scalar coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Unbounded,
    Positive,
    /// Open interval (a, b).
    Interval(f64, f64),
    /// Angle in (−π, π].
    Circular,
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Unbounded => x.is_finite(),
            Support::Positive => x.is_finite() && x > 0.0,
            Support::Interval(a, b) => x > a && x < b,
            Support::Circular => x > -std::f64::consts::PI && x <= std::f64::consts::PI,
        }
    }

    pub fn to_unconstrained(&self, x: f64) -> f64 {
        match *self {
            Support::Unbounded => x,
            Support::Positive => x.ln(),
            Support::Interval(a, b) => {
                let u = (x - a) / (b - a);
                (u / (1.0 - u)).ln()
            }
            Support::Circular => wrap_angle(x),
        }
    }

    pub fn to_constrained(&self, z: f64) -> f64 {
        match *self {
            Support::Unbounded => z,
            Support::Positive => z.exp(),
            Support::Interval(a, b) => a + (b - a) / (1.0 + (-z).exp()),
            Support::Circular => wrap_angle(z),
        }
    }

    /// log |dx/dz| at unconstrained value `z`.
    pub fn log_jacobian(&self, z: f64) -> f64 {
        match *self {
            Support::Unbounded | Support::Circular => 0.0,
            Support::Positive => z,
            Support::Interval(a, b) => {
                // log σ(z) + log σ(−z), written to avoid overflow
                let l = -softplus(-z) - softplus(z);
                (b - a).ln() + l
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub name: String,
    pub support: Support,
    /// Initial proposal standard deviation on the unconstrained scale.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockSpec {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Named coordinates partitioned into blocks, plus optional overlay blocks
/// that re-visit coordinates already owned by a partition block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSpace {
    pub(crate) coords: Vec<Coordinate>,
    pub(crate) blocks: Vec<BlockSpec>,
    names: HashSet<String>,
}

impl ParameterSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a partition block of new coordinates; returns their indices.
    pub fn add_block(&mut self, block_name: &str, coords: &[(&str, Support, f64)]) -> Result<Vec<usize>> {
        if coords.is_empty() {
            return Err(Error::config(format!("block {block_name} has no coordinates")));
        }
        let mut idx = Vec::with_capacity(coords.len());
        for (name, support, scale) in coords {
            if !self.names.insert(name.to_string()) {
                return Err(Error::config(format!("duplicate coordinate name {name}")));
            }
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(Error::config(format!("coordinate {name}: proposal scale must be positive")));
            }
            idx.push(self.coords.len());
            self.coords.push(Coordinate { name: name.to_string(), support: *support, scale: *scale });
        }
        self.blocks.push(BlockSpec { name: block_name.to_string(), indices: idx.clone() });
        Ok(idx)
    }

    /// Convenience: one coordinate in its own block.
    pub fn add_scalar(&mut self, name: &str, support: Support, scale: f64) -> Result<usize> {
        Ok(self.add_block(name, &[(name, support, scale)])?[0])
    }

    /// Extra update block over existing coordinates.
    pub fn add_overlay(&mut self, block_name: &str, indices: &[usize]) -> Result<()> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.coords.len()) {
            return Err(Error::config(format!("overlay {block_name} has invalid indices")));
        }
        let mut seen = HashSet::new();
        if !indices.iter().all(|i| seen.insert(*i)) {
            return Err(Error::config(format!("overlay {block_name} repeats a coordinate")));
        }
        self.blocks.push(BlockSpec { name: block_name.to_string(), indices: indices.to_vec() });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn coordinate(&self, i: usize) -> &Coordinate {
        &self.coords[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.coords.iter().zip(x).all(|(c, v)| c.support.contains(*v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterSpace::new();
        s.add_scalar("a", Support::Unbounded, 1.0).unwrap();
        assert!(s.add_scalar("a", Support::Positive, 1.0).is_err());
        assert!(s.add_overlay("o", &[0, 0]).is_err());
        assert!(s.add_overlay("o", &[3]).is_err());
    }

    proptest! {
        #[test]
        fn transforms_invert(z in -20.0f64..20.0) {
            for sup in [Support::Unbounded, Support::Positive, Support::Interval(-2.0, 5.0)] {
                let x = sup.to_constrained(z);
                prop_assert!(sup.contains(x));
                prop_assert!((sup.to_unconstrained(x) - z).abs() < 1e-6 * (1.0 + z.abs()));
            }
        }

        #[test]
        fn interval_jacobian_matches_finite_difference(z in -10.0f64..10.0) {
            let sup = Support::Interval(0.0, 1.0);
            let h = 1e-6;
            let fd = (sup.to_constrained(z + h) - sup.to_constrained(z - h)) / (2.0 * h);
            prop_assert!((sup.log_jacobian(z) - fd.ln()).abs() < 1e-5);
        }
    }
}
