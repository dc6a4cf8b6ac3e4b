//! Final assignment report: per-view soft assignments, per-view and fused
//! hard labels, the consensus rate, and (when ground truth is available)
//! ACC/NMI/ARI for every view and the fused prediction. Stored values are
//! raw fractions.

use super::{consensus_of_labels, fuse_soft, soft_assignments, TrainState};
use crate::cluster::SoftAssignment;
use crate::data::MultiViewDataset;
use crate::error::Result;
use crate::metrics;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl MetricTriple {
    pub fn compute(true_labels: &[usize], pred_labels: &[usize]) -> Result<Self> {
        Ok(MetricTriple {
            acc: metrics::acc(true_labels, pred_labels)?,
            nmi: metrics::nmi(true_labels, pred_labels)?,
            ari: metrics::ari(true_labels, pred_labels)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub per_view: Vec<MetricTriple>,
    pub fused: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub n_views: usize,
    pub n_samples: usize,
    pub n_clusters: usize,
    pub mode: String,
    pub seed: u64,
    /// Q^v as nested rows, one matrix per view.
    pub per_view_soft: Vec<Vec<Vec<f64>>>,
    pub per_view_hard: Vec<Vec<usize>>,
    pub fused_hard: Vec<usize>,
    pub consensus_rate: f64,
    pub metrics: Option<ReportMetrics>,
}

pub(super) fn build_report(
    state: &TrainState,
    dataset: &MultiViewDataset,
) -> Result<AssignmentReport> {
    let soft = soft_assignments(state, dataset)?;
    let per_view_hard: Vec<Vec<usize>> = soft.iter().map(SoftAssignment::hard_labels).collect();
    let fused_hard = fuse_soft(&soft).hard_labels();
    let consensus = consensus_of_labels(&per_view_hard);

    let metrics = match dataset.labels() {
        Some(truth) => {
            let per_view = per_view_hard
                .iter()
                .map(|pred| MetricTriple::compute(truth, pred))
                .collect::<Result<Vec<_>>>()?;
            let fused = MetricTriple::compute(truth, &fused_hard)?;
            Some(ReportMetrics { per_view, fused })
        }
        None => None,
    };

    let per_view_soft = soft
        .iter()
        .map(|q| {
            let t = q.values();
            (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
        })
        .collect();

    Ok(AssignmentReport {
        n_views: state.n_views(),
        n_samples: dataset.n_samples(),
        n_clusters: state.config.n_clusters,
        mode: state.config.mode.to_string(),
        seed: state.config.seed,
        per_view_soft,
        per_view_hard,
        fused_hard,
        consensus_rate: consensus,
        metrics,
    })
}

impl AssignmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            crate::error::DemvcError::Ingestion(format!("cannot parse assignment report: {e}"))
        })
    }
}
