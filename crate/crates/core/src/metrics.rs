//! Error metrics on de-normalized speeds and their aggregation across
//! cloudlets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sum WMAPE divides by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WmapeDenominator {
    /// `Σ x̂`, the sum of predictions.
    #[default]
    Predicted,
    /// `Σ x`, the sum of ground truth.
    Truth,
}

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::shape("metric inputs", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::input("metrics need at least one value"));
    }
    Ok(())
}

pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let mse = truth
        .iter()
        .zip(pred)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt())
}

/// `Σ|x - x̂| / Σ d · 100` with `d` chosen by `denominator`.
pub fn wmape(truth: &[f64], pred: &[f64], denominator: WmapeDenominator) -> Result<f64> {
    check(truth, pred)?;
    let abs: f64 = truth.iter().zip(pred).map(|(x, y)| (x - y).abs()).sum();
    let denom: f64 = match denominator {
        WmapeDenominator::Predicted => pred.iter().sum(),
        WmapeDenominator::Truth => truth.iter().sum(),
    };
    if denom == 0.0 {
        return Err(Error::input("WMAPE denominator sums to zero"));
    }
    Ok(abs / denom * 100.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Cloudlet(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Global => write!(f, "global"),
            Scope::Cloudlet(c) => write!(f, "cloudlet-{c}"),
        }
    }
}

/// Metrics for one scope and horizon, with the per-entry means that make
/// weighted aggregation exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scope: Scope,
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub wmape: f64,
    pub samples: usize,
    pub nodes: usize,
    /// Evaluated entries (unmasked `(sample, node)` pairs).
    pub count: usize,
    /// Mean of the WMAPE denominator terms.
    pub denom_mean: f64,
}

impl MetricReport {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        scope: Scope,
        horizon: usize,
        truth: &[f64],
        pred: &[f64],
        samples: usize,
        nodes: usize,
        denominator: WmapeDenominator,
    ) -> Result<Self> {
        let mae = mae(truth, pred)?;
        let rmse = rmse(truth, pred)?;
        let wmape = wmape(truth, pred, denominator)?;
        let denom = match denominator {
            WmapeDenominator::Predicted => pred,
            WmapeDenominator::Truth => truth,
        };
        let report = Self {
            scope,
            horizon,
            mae,
            rmse,
            wmape,
            samples,
            nodes,
            count: truth.len(),
            denom_mean: denom.iter().sum::<f64>() / denom.len() as f64,
        };
        report.assert_consistent();
        Ok(report)
    }

    fn assert_consistent(&self) {
        // MAE <= RMSE up to rounding
        assert!(
            self.mae <= self.rmse * (1.0 + 1e-12) + 1e-300,
            "MAE {} exceeds RMSE {}",
            self.mae,
            self.rmse
        );
    }
}

/// Global report from per-cloudlet reports weighted by node counts. When
/// every cloudlet is evaluated on the same samples this equals computing the
/// metrics on the pooled predictions.
pub fn aggregate_weighted(reports: &[MetricReport], node_counts: &[usize]) -> Result<MetricReport> {
    if reports.len() != node_counts.len() {
        return Err(Error::shape(
            "aggregation node counts",
            reports.len(),
            node_counts.len(),
        ));
    }
    if reports.is_empty() {
        return Err(Error::input("nothing to aggregate"));
    }
    if node_counts.iter().any(|&n| n == 0) {
        return Err(Error::input(
            "every aggregated cloudlet needs at least one node",
        ));
    }
    let horizon = reports[0].horizon;
    if reports.iter().any(|r| r.horizon != horizon) {
        return Err(Error::input(
            "cannot aggregate reports of different horizons",
        ));
    }
    let total: f64 = node_counts.iter().sum::<usize>() as f64;
    let weighted = |f: &dyn Fn(&MetricReport) -> f64| {
        reports
            .iter()
            .zip(node_counts)
            .map(|(r, &n)| n as f64 * f(r))
            .sum::<f64>()
            / total
    };
    let mae = weighted(&|r| r.mae);
    let mse = weighted(&|r| r.rmse * r.rmse);
    let denom = weighted(&|r| r.denom_mean);
    if denom == 0.0 {
        return Err(Error::input("WMAPE denominator sums to zero"));
    }
    let report = MetricReport {
        scope: Scope::Global,
        horizon,
        mae,
        rmse: mse.sqrt(),
        wmape: mae / denom * 100.0,
        samples: reports.iter().map(|r| r.samples).max().unwrap_or(0),
        nodes: node_counts.iter().sum(),
        count: reports.iter().map(|r| r.count).sum(),
        denom_mean: denom,
    };
    report.assert_consistent();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 2.0, 2.0];
        assert!((mae(&x, &y).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((rmse(&x, &y).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let w = wmape(&[50.0, 70.0], &[60.0, 60.0], WmapeDenominator::Predicted).unwrap();
        assert!((w - 16.666_666_666_666_668).abs() < 1e-12);
        assert_eq!(
            wmape(&[60.0, 60.0], &[60.0, 60.0], WmapeDenominator::Predicted).unwrap(),
            0.0
        );
    }

    #[test]
    fn denominator_choice() {
        let w = wmape(&[50.0, 50.0], &[60.0, 60.0], WmapeDenominator::Truth).unwrap();
        assert!((w - 20.0).abs() < 1e-12);
        assert!(wmape(&[1.0], &[0.0], WmapeDenominator::Predicted).is_err());
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregation_preconditions() {
        let r = MetricReport::compute(
            Scope::Cloudlet(0),
            3,
            &[1.0],
            &[2.0],
            1,
            1,
            WmapeDenominator::Predicted,
        )
        .unwrap();
        assert!(aggregate_weighted(&[r.clone()], &[]).is_err());
        assert!(aggregate_weighted(&[r.clone()], &[0]).is_err());
        let g = aggregate_weighted(&[r.clone(), r.clone()], &[2, 2]).unwrap();
        assert!((g.mae - r.mae).abs() < 1e-15 && (g.wmape - r.wmape).abs() < 1e-12);
        assert_eq!(Scope::Cloudlet(4).to_string(), "cloudlet-4");
    }
}
