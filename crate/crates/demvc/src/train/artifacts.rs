//! Run artifact directory: config snapshot, per-view checkpoints, loss and
//! turn history CSVs, the assignment report, and optional embedding dumps.

use super::{AssignmentReport, TrainState};
use crate::autoencoder::save_checkpoint;
use crate::data::{write_embeddings, MultiViewDataset};
use crate::error::Result;
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

/// Writes the full artifact set into `dir` (created if missing):
/// config.txt, view<i>.aecp, loss_history.csv, turns.csv, report.json and,
/// when requested, embeddings.mvds.
pub fn write_run_artifacts(
    dir: &Path,
    state: &TrainState,
    dataset: &MultiViewDataset,
    report: &AssignmentReport,
    dump_embeddings: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), state.config.to_key_values())?;

    for (v, ae) in state.autoencoders.iter().enumerate() {
        save_checkpoint(
            ae,
            Some(&state.adam[v]),
            &dir.join(format!("view{}.aecp", v + 1)),
        )?;
    }

    let v = state.n_views();
    let mut csv = String::from("iter,L");
    for i in 1..=v {
        write!(csv, ",L_r_{i}").unwrap();
    }
    for i in 1..=v {
        write!(csv, ",L_c_{i}").unwrap();
    }
    csv.push_str(",consensus_rate\n");
    for rec in &state.loss_history {
        write!(csv, "{},{}", rec.iter, rec.total).unwrap();
        for r in &rec.recon {
            write!(csv, ",{r}").unwrap();
        }
        for c in &rec.cluster {
            write!(csv, ",{c}").unwrap();
        }
        writeln!(csv, ",{}", rec.consensus).unwrap();
    }
    std::fs::write(dir.join("loss_history.csv"), csv)?;

    let mut turns = String::from(
        "turn,referred_view,start_iter,steps,target_checksum_start,target_checksum_end",
    );
    for i in 1..=v {
        write!(turns, ",grad_norm_{i}").unwrap();
    }
    turns.push_str(",consensus_after\n");
    for (t, rec) in state.turn_log.iter().enumerate() {
        write!(
            turns,
            "{},{},{},{},{:016x},{:016x}",
            t,
            rec.referred + 1,
            rec.start_iter,
            rec.steps,
            rec.target_checksum_start,
            rec.target_checksum_end
        )
        .unwrap();
        for g in &rec.grad_norms {
            write!(turns, ",{g}").unwrap();
        }
        writeln!(turns, ",{}", rec.consensus_after).unwrap();
    }
    std::fs::write(dir.join("turns.csv"), turns)?;

    std::fs::write(dir.join("report.json"), report.to_json())?;

    if dump_embeddings {
        let embeddings: Vec<Tensor> = state
            .autoencoders
            .iter()
            .zip(dataset.views())
            .map(|(ae, view)| ae.encode(view))
            .collect::<Result<_>>()?;
        write_embeddings(&embeddings, &dir.join("embeddings.mvds"))?;
    }
    Ok(())
}
