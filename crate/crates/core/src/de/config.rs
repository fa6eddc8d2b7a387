use serde::{Deserialize, Serialize};

/// Differential evolution hyperparameters.
///
/// Defaults are the alignment experiment settings: population 7, 50
/// generations, mutation and recombination rate 0.9, absolute tolerance
/// 1e-9, seed 42, box bounds [-5, 5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DEConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub mutation_rate: f64,
    pub recombination_rate: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub abs_tolerance: f64,
    pub rng_seed: u64,
}

impl Default for DEConfig {
    fn default() -> Self {
        Self {
            population_size: 7,
            max_generations: 50,
            mutation_rate: 0.9,
            recombination_rate: 0.9,
            lower_bound: -5.0,
            upper_bound: 5.0,
            abs_tolerance: 1e-9,
            rng_seed: 42,
        }
    }
}

impl DEConfig {
    /// Human-readable problems with this configuration; empty when valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.population_size < 4 {
            out.push("population_size must be ≥ 4".to_string());
        }
        if self.max_generations < 1 {
            out.push("max_generations must be ≥ 1".to_string());
        }
        if !(self.mutation_rate.is_finite() && self.mutation_rate > 0.0) {
            out.push("mutation_rate must be a finite value > 0".to_string());
        }
        if !(0.0..=1.0).contains(&self.recombination_rate) {
            out.push("recombination_rate must lie in [0, 1]".to_string());
        }
        if !(self.lower_bound.is_finite() && self.upper_bound.is_finite()) {
            out.push("bounds must be finite".to_string());
        } else if self.lower_bound >= self.upper_bound {
            out.push("lower_bound must be < upper_bound".to_string());
        } else if f32_bounds(self.lower_bound, self.upper_bound).is_none() {
            out.push("bounds must enclose at least one f32 value".to_string());
        }
        if !(self.abs_tolerance >= 0.0) {
            out.push("abs_tolerance must be ≥ 0".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), super::DeError> {
        let diags = self.diagnostics();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(super::DeError::InvalidConfig(diags.join("; ")))
        }
    }

    /// The narrowest f32 interval inside `[lower_bound, upper_bound]`.
    pub(crate) fn bounds_f32(&self) -> (f32, f32) {
        f32_bounds(self.lower_bound, self.upper_bound).expect("validated bounds")
    }
}

fn f32_bounds(lo: f64, hi: f64) -> Option<(f32, f32)> {
    let mut lo32 = lo as f32;
    if f64::from(lo32) < lo {
        lo32 = lo32.next_up();
    }
    let mut hi32 = hi as f32;
    if f64::from(hi32) > hi {
        hi32 = hi32.next_down();
    }
    (lo32 <= hi32).then_some((lo32, hi32))
}
