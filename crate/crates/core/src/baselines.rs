//! Manual account features and a logistic-regression reference classifier.
//!
//! The 16 features summarize one account's received/sent transaction volume,
//! counterparty counts, per-day averages, and contract-call activity. Amounts
//! are expressed in Ether (value / 1e18); a day is a UTC calendar day, and an
//! account is active on a day when it sent, received, or called anything.
//! Received/sent statistics cover plain transactions; contract calls are
//! counted by the three dedicated call features.

use crate::graph::InteractionRecord;
use ndarray::{Array1, Array2};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("labels are degenerate: a single class cannot be fit")]
    DegenerateLabels,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt feature table: {0}")]
    Corrupt(String),
}

pub const WEI_PER_ETHER: f64 = 1e18;

pub const MANUAL_FEATURE_NAMES: [&str; 16] = [
    "active_days",
    "total_received",
    "num_received_tx",
    "inter_acct_received",
    "total_output",
    "num_output_tx",
    "inter_acct_output",
    "avg_received",
    "avg_received_day",
    "avg_received_tx_day",
    "avg_output",
    "avg_output_day",
    "avg_output_tx_day",
    "times_contract_called",
    "times_contract_called_day",
    "num_contract_called",
];

/// The 16 manual features, all non-negative; averages are zero whenever their
/// denominator is zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManualFeatureVector {
    pub active_days: f64,
    pub total_received: f64,
    pub num_received_tx: f64,
    pub inter_acct_received: f64,
    pub total_output: f64,
    pub num_output_tx: f64,
    pub inter_acct_output: f64,
    pub avg_received: f64,
    pub avg_received_day: f64,
    pub avg_received_tx_day: f64,
    pub avg_output: f64,
    pub avg_output_day: f64,
    pub avg_output_tx_day: f64,
    pub times_contract_called: f64,
    pub times_contract_called_day: f64,
    pub num_contract_called: f64,
}

impl ManualFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.active_days,
            self.total_received,
            self.num_received_tx,
            self.inter_acct_received,
            self.total_output,
            self.num_output_tx,
            self.inter_acct_output,
            self.avg_received,
            self.avg_received_day,
            self.avg_received_tx_day,
            self.avg_output,
            self.avg_output_day,
            self.avg_output_tx_day,
            self.times_contract_called,
            self.times_contract_called_day,
            self.num_contract_called,
        ]
    }
}

fn utc_day(timestamp: i64) -> i64 {
    timestamp.div_euclid(86_400)
}

/// Extracts the manual features of `account` from the records that involve
/// it (other records contribute nothing).
pub fn extract_manual_features(account: &str, records: &[InteractionRecord]) -> ManualFeatureVector {
    let mut days = BTreeSet::new();
    let mut senders = BTreeSet::new();
    let mut recipients = BTreeSet::new();
    let mut contracts = BTreeSet::new();
    let mut f = ManualFeatureVector::default();
    for r in records {
        let is_sender = r.from == account;
        let is_receiver = r.to == account;
        if !is_sender && !is_receiver {
            continue;
        }
        days.insert(utc_day(r.timestamp));
        let eth = r.value as f64 / WEI_PER_ETHER;
        if is_receiver && !r.to_is_contract {
            f.total_received += eth;
            f.num_received_tx += 1.0;
            senders.insert(r.from.as_str());
        }
        if is_sender {
            if r.to_is_contract {
                f.times_contract_called += 1.0;
                contracts.insert(r.to.as_str());
            } else {
                f.total_output += eth;
                f.num_output_tx += 1.0;
                recipients.insert(r.to.as_str());
            }
        }
    }
    f.active_days = days.len() as f64;
    f.inter_acct_received = senders.len() as f64;
    f.inter_acct_output = recipients.len() as f64;
    f.num_contract_called = contracts.len() as f64;
    let per = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    f.avg_received = per(f.total_received, f.num_received_tx);
    f.avg_received_day = per(f.total_received, f.active_days);
    f.avg_received_tx_day = per(f.num_received_tx, f.active_days);
    f.avg_output = per(f.total_output, f.num_output_tx);
    f.avg_output_day = per(f.total_output, f.active_days);
    f.avg_output_tx_day = per(f.num_output_tx, f.active_days);
    f.times_contract_called_day = per(f.times_contract_called, f.active_days);
    f
}

/// Writes the feature CSV: `account,label` followed by the 16 feature names.
pub fn write_features_csv<W: std::io::Write>(
    writer: W,
    rows: &[(String, String, ManualFeatureVector)],
) -> Result<(), BaselineError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["account".to_string(), "label".to_string()];
    header.extend(MANUAL_FEATURE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| BaselineError::Corrupt(e.to_string()))?;
    for (account, label, feats) in rows {
        let mut rec = vec![account.clone(), label.clone()];
        rec.extend(feats.to_vec().iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| BaselineError::Corrupt(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV back as `(account, label, features)` rows.
pub fn read_features_csv<R: std::io::Read>(
    reader: R,
) -> Result<Vec<(String, String, Vec<f64>)>, BaselineError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| BaselineError::Corrupt(e.to_string()))?
        .clone();
    if headers.len() != 18 || &headers[0] != "account" || &headers[1] != "label" {
        return Err(BaselineError::Corrupt(
            "expected header account,label,<16 features>".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| BaselineError::Corrupt(e.to_string()))?;
        if row.len() != 18 {
            return Err(BaselineError::Corrupt(format!("row {}: wrong arity", i + 2)));
        }
        let feats = (2..18)
            .map(|c| {
                row[c]
                    .parse::<f64>()
                    .map_err(|_| BaselineError::Corrupt(format!("row {}: bad float", i + 2)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        out.push((row[0].to_string(), row[1].to_string(), feats));
    }
    Ok(out)
}

/// Column-wise standardizer fitted on a training matrix.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(ndarray::Axis(0)) / n;
        let mut std = Array1::zeros(x.ncols());
        for c in 0..x.ncols() {
            let mut var = 0.0;
            for r in 0..x.nrows() {
                var += (x[[r, c]] - mean[c]).powi(2);
            }
            let s = (var / n).sqrt();
            std[c] = if s > 1e-12 { s } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for c in 0..row.len() {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogRegConfig {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            lr: 0.1,
            epochs: 500,
        }
    }
}

/// Binary logistic regression weights (bias unpenalized).
#[derive(Debug, Clone)]
pub struct LogRegModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss and gradients of the L2-penalized logistic objective; exposed so the
/// gradient can be verified against finite differences.
pub fn logreg_loss_grad(
    weights: &Array1<f64>,
    bias: f64,
    x: &Array2<f64>,
    y: &[f64],
    l2: f64,
) -> (f64, Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    let mut grad_w = Array1::zeros(x.ncols());
    let mut grad_b = 0.0;
    for (r, &target) in y.iter().enumerate() {
        let z = x.row(r).dot(weights) + bias;
        let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
        loss -= (target * p.ln() + (1.0 - target) * (1.0 - p).ln()) / n;
        let delta = (p - target) / n;
        grad_w.scaled_add(delta, &x.row(r));
        grad_b += delta;
    }
    loss += 0.5 * l2 * weights.dot(weights);
    grad_w.scaled_add(l2, weights);
    (loss, grad_w, grad_b)
}

/// Fits binary logistic regression by full-batch gradient descent.
/// Features must already be column-standardized.
pub fn logreg_fit(
    x: &Array2<f64>,
    y: &[f64],
    cfg: &LogRegConfig,
) -> Result<LogRegModel, BaselineError> {
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == y.len() {
        return Err(BaselineError::DegenerateLabels);
    }
    let mut weights = Array1::zeros(x.ncols());
    let mut bias = 0.0;
    for _ in 0..cfg.epochs {
        let (_, grad_w, grad_b) = logreg_loss_grad(&weights, bias, x, y, cfg.l2);
        weights.scaled_add(-cfg.lr, &grad_w);
        bias -= cfg.lr * grad_b;
    }
    Ok(LogRegModel { weights, bias })
}

/// Positive-class probability per row.
pub fn logreg_predict(model: &LogRegModel, x: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| sigmoid(row.dot(&model.weights) + model.bias))
        .collect()
}

/// One-vs-rest wrapper for multiclass problems.
#[derive(Debug, Clone)]
pub struct OneVsRest {
    pub models: Vec<LogRegModel>,
}

pub fn ovr_fit(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &LogRegConfig,
) -> Result<OneVsRest, BaselineError> {
    let models = (0..n_classes)
        .map(|class| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { 0.0 })
                .collect();
            logreg_fit(x, &y, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OneVsRest { models })
}

pub fn ovr_predict(ovr: &OneVsRest, x: &Array2<f64>) -> Vec<usize> {
    let scores: Vec<Vec<f64>> = ovr.models.iter().map(|m| logreg_predict(m, x)).collect();
    (0..x.nrows())
        .map(|r| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (c, s) in scores.iter().enumerate() {
                if s[r] > best_v {
                    best_v = s[r];
                    best = c;
                }
            }
            best
        })
        .collect()
}
