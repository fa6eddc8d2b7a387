//! Hyperparameter sweeps over token count, mutation rate, recombination
//! rate and population size.

use std::io::Write;
use std::sync::Arc;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::experiment::{row_output_dir, run_de_experiment};
use super::{ExperimentConfig, HarnessError};
use crate::de::streams::{stream, TAG_SWEEP};
use crate::respondents::Respondent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every combination, in list order.
    Exhaustive,
    /// `trials` independent draws, one value per list.
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub token_counts: Vec<usize>,
    pub mutation_rates: Vec<f64>,
    pub recombination_rates: Vec<f64>,
    pub population_sizes: Vec<usize>,
    pub trials: usize,
    pub sampling: Sampling,
    pub sweep_seed: u64,
}

impl Default for AblationGrid {
    /// The 15-trial random search over the published value lists.
    fn default() -> Self {
        Self {
            token_counts: vec![10, 20, 40, 60, 80, 100],
            mutation_rates: vec![0.2, 0.5, 0.7, 0.9],
            recombination_rates: vec![0.2, 0.5, 0.7, 0.9],
            population_sizes: vec![5, 10, 20, 30],
            trials: 15,
            sampling: Sampling::Random,
            sweep_seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationSetting {
    pub exp_no: usize,
    pub tokens: usize,
    pub mutation_rate: f64,
    pub recombination_rate: f64,
    pub population_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: AblationSetting,
    /// Final loss, or the error message for a failed row.
    pub outcome: Result<f64, String>,
}

impl AblationGrid {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, empty) in [
            ("token_counts", self.token_counts.is_empty()),
            ("mutation_rates", self.mutation_rates.is_empty()),
            ("recombination_rates", self.recombination_rates.is_empty()),
            ("population_sizes", self.population_sizes.is_empty()),
        ] {
            if empty {
                out.push(format!("ablation.{name} must not be empty"));
            }
        }
        if self.sampling == Sampling::Random && self.trials < 1 {
            out.push("ablation.trials must be ≥ 1 for random sampling".into());
        }
        out
    }

    /// The settings this grid expands to, numbered from 1.
    pub fn settings(&self) -> Result<Vec<AblationSetting>, HarnessError> {
        let diags = self.diagnostics();
        if !diags.is_empty() {
            return Err(HarnessError::Validation(diags));
        }
        let make = |exp_no, t, m, r, p| AblationSetting {
            exp_no,
            tokens: t,
            mutation_rate: m,
            recombination_rate: r,
            population_size: p,
        };
        let mut out = Vec::new();
        match self.sampling {
            Sampling::Exhaustive => {
                for &t in &self.token_counts {
                    for &m in &self.mutation_rates {
                        for &r in &self.recombination_rates {
                            for &p in &self.population_sizes {
                                out.push(make(out.len() + 1, t, m, r, p));
                            }
                        }
                    }
                }
            }
            Sampling::Random => {
                for trial in 0..self.trials {
                    let mut rng = stream(self.sweep_seed, TAG_SWEEP, trial as u64, 0);
                    let t = self.token_counts[rng.random_range(0..self.token_counts.len())];
                    let m = self.mutation_rates[rng.random_range(0..self.mutation_rates.len())];
                    let r = self.recombination_rates[rng.random_range(0..self.recombination_rates.len())];
                    let p = self.population_sizes[rng.random_range(0..self.population_sizes.len())];
                    out.push(make(trial + 1, t, m, r, p));
                }
            }
        }
        Ok(out)
    }
}

/// The experiment config for one sweep row.
pub fn row_config(cfg: &ExperimentConfig, setting: &AblationSetting) -> ExperimentConfig {
    let mut row = cfg.clone();
    row.token_count = setting.tokens;
    row.de.mutation_rate = setting.mutation_rate;
    row.de.recombination_rate = setting.recombination_rate;
    row.de.population_size = setting.population_size;
    row.output_dir = row_output_dir(&cfg.output_dir, setting.exp_no);
    row.resume = false;
    row.refresh_resolved();
    row
}

/// Runs one DE experiment per setting. A failing row is recorded and the
/// sweep continues.
pub fn run_ablation<F>(grid: &AblationGrid, cfg: &ExperimentConfig, mut backend_for: F) -> Result<Vec<AblationRow>, HarnessError>
where
    F: FnMut(&ExperimentConfig) -> Result<Arc<dyn Respondent>, HarnessError>,
{
    let settings = grid.settings()?;
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let row_cfg = row_config(cfg, &setting);
        let outcome = backend_for(&row_cfg)
            .and_then(|backend| run_de_experiment(&row_cfg, backend.as_ref()))
            .map(|run| run.report.vsm13_loss)
            .map_err(|e| e.to_string());
        match &outcome {
            Ok(loss) => info!("ablation {:>2}: {setting:?} -> {loss}", setting.exp_no),
            Err(e) => warn!("ablation {:>2}: {setting:?} failed: {e}", setting.exp_no),
        }
        rows.push(AblationRow { setting, outcome });
    }
    Ok(rows)
}

/// CSV with columns `exp_no,tokens,mutation_rate,recombination_rate,population_size,vsm13_loss`.
/// Failed rows carry `ERROR: <message>` in the loss column.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "exp_no",
        "tokens",
        "mutation_rate",
        "recombination_rate",
        "population_size",
        "vsm13_loss",
    ])?;
    for row in rows {
        let s = &row.setting;
        let loss = match &row.outcome {
            Ok(loss) => loss.to_string(),
            Err(e) => format!("ERROR: {e}"),
        };
        w.write_record([
            s.exp_no.to_string(),
            s.tokens.to_string(),
            s.mutation_rate.to_string(),
            s.recombination_rate.to_string(),
            s.population_size.to_string(),
            loss,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_settings_come_from_lists() {
        let grid = AblationGrid::default();
        let settings = grid.settings().unwrap();
        assert_eq!(settings.len(), 15);
        for (i, s) in settings.iter().enumerate() {
            assert_eq!(s.exp_no, i + 1);
            assert!(grid.token_counts.contains(&s.tokens));
            assert!(grid.mutation_rates.contains(&s.mutation_rate));
            assert!(grid.recombination_rates.contains(&s.recombination_rate));
            assert!(grid.population_sizes.contains(&s.population_size));
        }
        assert_eq!(settings, grid.settings().unwrap());
        let other = AblationGrid {
            sweep_seed: 7,
            ..AblationGrid::default()
        };
        assert_ne!(settings, other.settings().unwrap());
    }

    #[test]
    fn exhaustive_is_cartesian() {
        let grid = AblationGrid {
            token_counts: vec![1, 2],
            mutation_rates: vec![0.5],
            recombination_rates: vec![0.2, 0.9],
            population_sizes: vec![4, 5, 6],
            sampling: Sampling::Exhaustive,
            ..Default::default()
        };
        let s = grid.settings().unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!((s[0].tokens, s[0].recombination_rate, s[0].population_size), (1, 0.2, 4));
        assert_eq!((s[11].tokens, s[11].recombination_rate, s[11].population_size), (2, 0.9, 6));
    }

    #[test]
    fn empty_lists_rejected() {
        let grid = AblationGrid {
            population_sizes: vec![],
            trials: 0,
            ..Default::default()
        };
        assert_eq!(grid.diagnostics().len(), 2);
        assert!(grid.settings().is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            AblationRow {
                setting: AblationSetting {
                    exp_no: 1,
                    tokens: 10,
                    mutation_rate: 0.2,
                    recombination_rate: 0.9,
                    population_size: 5,
                },
                outcome: Ok(1.5),
            },
            AblationRow {
                setting: AblationSetting {
                    exp_no: 2,
                    tokens: 20,
                    mutation_rate: 0.5,
                    recombination_rate: 0.5,
                    population_size: 10,
                },
                outcome: Err("TransportError, x".into()),
            },
        ];
        let mut buf = Vec::new();
        write_ablation_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "exp_no,tokens,mutation_rate,recombination_rate,population_size,vsm13_loss");
        assert_eq!(lines[1], "1,10,0.2,0.9,5,1.5");
        assert_eq!(lines[2], "2,20,0.5,0.5,10,\"ERROR: TransportError, x\"");
    }
}
