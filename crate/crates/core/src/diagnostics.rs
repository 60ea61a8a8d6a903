//! Behavioral diagnostics over sampled trajectories: diversity (mean
//! pairwise ADE/FDE), quality (min ADE/FDE to the ground truth),
//! performance (mean PDMS) and oracle Best-of-N.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{pdms_of, ScoringParams};
use crate::traj::{ade, fde, Trajectory as Traj};
use crate::world::Scenario;
use crate::{Scalar, Trajectory};

/// Mean pairwise `(ADE, FDE)` over all unordered pairs.
pub fn diversity<T: Scalar>(samples: &[Traj<T>]) -> Result<(T, T)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("diversity needs k >= 2 samples, got {}", samples.len())));
    }
    let mut sa = T::zero();
    let mut sf = T::zero();
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            sa += ade(&samples[i], &samples[j])?;
            sf += fde(&samples[i], &samples[j])?;
            pairs += 1;
        }
    }
    let n = T::from_usize_lossy(pairs);
    Ok((sa / n, sf / n))
}

/// `(min ADE, min FDE)` to the ground truth; the minima may come from
/// different samples.
pub fn quality<T: Scalar>(samples: &[Traj<T>], gt: &Traj<T>) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(Error::invalid("quality needs at least one sample"));
    }
    let mut best = (T::infinity(), T::infinity());
    for s in samples {
        best.0 = best.0.min(ade(s, gt)?);
        best.1 = best.1.min(fde(s, gt)?);
    }
    Ok(best)
}

/// Mean PDMS of the samples.
pub fn performance(samples: &[Trajectory], scenario: &Scenario, params: &ScoringParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("performance needs at least one sample"));
    }
    Ok(mean_of(&samples.iter().map(|s| pdms_of(s, scenario, params)).collect::<Vec<_>>()))
}

/// Mean taken as an offset below the maximum, so it never rounds above it
/// and identical scores average exactly.
fn mean_of(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top - v.iter().map(|x| top - x).sum::<f64>() / v.len() as f64
}

/// Oracle selection: index and PDMS of the best sample, lowest index on ties.
pub fn best_of_n(samples: &[Trajectory], scenario: &Scenario, params: &ScoringParams) -> Result<(usize, f64)> {
    select_best(&samples.iter().map(|s| pdms_of(s, scenario, params)).collect::<Vec<_>>())
}

fn select_best(scores: &[f64]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| Error::invalid("best-of-n needs at least one sample"))
}

/// Diagnostics of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub scenario_id: String,
    pub k: usize,
    pub mean_pade: Option<f64>,
    pub mean_pfde: Option<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
    pub mean_pdms: f64,
    pub n: usize,
    pub bon_index: usize,
    pub bon_pdms: f64,
    /// Mean PDMS over the same `n` samples Best-of-N chose from.
    pub bon_pool_mean_pdms: f64,
}

/// Diagnostics from a pool of samples: the first `k` feed diversity,
/// quality and performance, the first `n` feed Best-of-N.
pub fn diagnose(
    scenario: &Scenario,
    pool: &[Trajectory],
    k: usize,
    n: usize,
    params: &ScoringParams,
) -> Result<DiagnosticsRow> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("k and n must be >= 1"));
    }
    if pool.len() < k.max(n) {
        return Err(Error::invalid(format!("sample pool of {} is smaller than max(k, n)", pool.len())));
    }
    let scores: Vec<f64> = pool[..k.max(n)].iter().map(|s| pdms_of(s, scenario, params)).collect();
    let ks = &pool[..k];
    let (mean_pade, mean_pfde) = if k >= 2 {
        let (a, f) = diversity(ks)?;
        (Some(a), Some(f))
    } else {
        (None, None)
    };
    let (min_ade, min_fde) = quality(ks, &scenario.gt)?;
    let (bon_index, bon_pdms) = select_best(&scores[..n])?;
    Ok(DiagnosticsRow {
        scenario_id: scenario.id.clone(),
        k,
        mean_pade,
        mean_pfde,
        min_ade,
        min_fde,
        mean_pdms: mean_of(&scores[..k]),
        n,
        bon_index,
        bon_pdms,
        bon_pool_mean_pdms: mean_of(&scores[..n]),
    })
}

/// Scenario means of every row field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub scenarios: usize,
    pub k: usize,
    pub n: usize,
    pub mean_pade: Option<f64>,
    pub mean_pfde: Option<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
    pub mean_pdms: f64,
    pub bon_pdms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub summary: DiagnosticsSummary,
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsReport {
    pub fn from_rows(rows: Vec<DiagnosticsRow>) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::invalid("no diagnostics rows"))?;
        let (k, n) = (first.k, first.n);
        let m = rows.len() as f64;
        let mean = |f: &dyn Fn(&DiagnosticsRow) -> f64| rows.iter().map(f).sum::<f64>() / m;
        let opt_mean = |f: &dyn Fn(&DiagnosticsRow) -> Option<f64>| {
            rows.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / m)
        };
        Ok(Self {
            summary: DiagnosticsSummary {
                scenarios: rows.len(),
                k,
                n,
                mean_pade: opt_mean(&|r| r.mean_pade),
                mean_pfde: opt_mean(&|r| r.mean_pfde),
                min_ade: mean(&|r| r.min_ade),
                min_fde: mean(&|r| r.min_fde),
                mean_pdms: mean(&|r| r.mean_pdms),
                bon_pdms: mean(&|r| r.bon_pdms),
            },
            rows,
        })
    }
}
