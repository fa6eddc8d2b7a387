//! Current-to-best/1 mutation with box clamping, binomial crossover with one
//! forced component, and greedy one-to-one selection.

use rand::Rng;

use super::{DEConfig, DeError, SoftPrompt};

fn check_shape(expected: &SoftPrompt, actual: &SoftPrompt) -> Result<(), DeError> {
    if expected.shape() != actual.shape() {
        return Err(DeError::ShapeMismatch {
            expected: expected.shape(),
            actual: actual.shape(),
        });
    }
    Ok(())
}

/// `v = x_t + beta * (x_best - x_t + b - c)`, clamped elementwise to the bounds.
pub fn mutate(
    target: &SoftPrompt,
    best: &SoftPrompt,
    b: &SoftPrompt,
    c: &SoftPrompt,
    cfg: &DEConfig,
) -> Result<SoftPrompt, DeError> {
    for other in [best, b, c] {
        check_shape(target, other)?;
    }
    let beta = cfg.mutation_rate;
    let (lo, hi) = cfg.bounds_f32();
    let values = target
        .values()
        .iter()
        .zip(best.values())
        .zip(b.values().iter().zip(c.values()))
        .map(|((&xt, &xb), (&xbv, &xcv))| {
            let (xt, xb, bv, cv) = (f64::from(xt), f64::from(xb), f64::from(xbv), f64::from(xcv));
            let v = xt + beta * (xb - xt + bv - cv);
            (v as f32).clamp(lo, hi)
        })
        .collect();
    Ok(SoftPrompt::from_parts_unchecked(
        target.token_count(),
        target.embed_dim(),
        values,
    ))
}

/// Binomial crossover. See [`crossover_traced`] for the draw order.
pub fn crossover<R: Rng + ?Sized>(
    target: &SoftPrompt,
    mutant: &SoftPrompt,
    cfg: &DEConfig,
    rng: &mut R,
) -> Result<SoftPrompt, DeError> {
    crossover_traced(target, mutant, cfg, rng).map(|(trial, _)| trial)
}

/// Binomial crossover that also reports the forced index `R`.
///
/// Draws `R` uniformly over the flattened entries first, then one `U(0,1)`
/// per entry; entry `i` comes from the mutant when `r_i < C_r` or `i == R`.
pub fn crossover_traced<R: Rng + ?Sized>(
    target: &SoftPrompt,
    mutant: &SoftPrompt,
    cfg: &DEConfig,
    rng: &mut R,
) -> Result<(SoftPrompt, usize), DeError> {
    check_shape(target, mutant)?;
    let n = target.values().len();
    if n == 0 {
        return Err(DeError::ShapeMismatch {
            expected: (1, 1),
            actual: target.shape(),
        });
    }
    let forced = rng.random_range(0..n);
    let cr = cfg.recombination_rate;
    let values = target
        .values()
        .iter()
        .zip(mutant.values())
        .enumerate()
        .map(|(i, (&t, &m))| {
            let r: f64 = rng.random();
            if r < cr || i == forced {
                m
            } else {
                t
            }
        })
        .collect();
    let trial = SoftPrompt::from_parts_unchecked(target.token_count(), target.embed_dim(), values);
    Ok((trial, forced))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Trial,
    Target,
}

/// The trial survives only on strict improvement; ties keep the incumbent.
pub fn select(target_fitness: f64, trial_fitness: f64) -> Selection {
    if trial_fitness < target_fitness {
        Selection::Trial
    } else {
        Selection::Target
    }
}
