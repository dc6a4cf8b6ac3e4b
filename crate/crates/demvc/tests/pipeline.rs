//! Pipeline integration: artifacts on disk, checkpoint reload consistency,
//! and report serialization.

use demvc::autoencoder::load_checkpoint;
use demvc::data::{load_mvds, make_gaussian_multiview};
use demvc::train::{fit, write_run_artifacts, AssignmentReport, Mode, TrainConfig};

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk_scale(3);
    cfg.pretrain_epochs = 5;
    cfg.batch_size = 16;
    cfg.batches_per_turn = 5;
    cfg.total_finetune_iters = 20;
    cfg.hidden_dims = vec![8];
    cfg.embed_dim = 3;
    cfg.consensus_threshold = 2.0;
    cfg.mode = Mode::Demvc;
    cfg.seed = 3;
    cfg
}

#[test]
fn artifacts_cover_the_run_and_checkpoints_reload() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_gaussian_multiview(15, 3, 3, &[5, 7], 77).unwrap();
    let cfg = small_config();
    let (state, report) = fit(&ds, &cfg).unwrap();
    write_run_artifacts(dir.path(), &state, &ds, &report, true).unwrap();

    // config snapshot parses back into the same configuration
    let snapshot = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let mut parsed = TrainConfig::desk_scale(0);
    for line in snapshot.lines() {
        let (k, v) = line.split_once('=').unwrap();
        parsed.set_key_value(k, v).unwrap();
    }
    assert_eq!(parsed, cfg);

    // per-view checkpoints reproduce the trained encoders bit for bit
    for v in 0..ds.n_views() {
        let (ae, adam) = load_checkpoint(&dir.path().join(format!("view{}.aecp", v + 1))).unwrap();
        assert_eq!(ae.checksum(), state.autoencoders[v].checksum());
        assert!(adam.is_some());
        let z_disk = ae.encode(ds.view(v)).unwrap();
        let z_live = state.autoencoders[v].encode(ds.view(v)).unwrap();
        assert_eq!(z_disk.checksum(), z_live.checksum());
    }

    // loss CSV: one row per iteration, 2 + 2V columns plus consensus
    let csv = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + state.iter_count);
    let cols = lines[0].split(',').count();
    assert_eq!(cols, 3 + 2 * ds.n_views());

    // turn log CSV: one row per turn
    let turns = std::fs::read_to_string(dir.path().join("turns.csv")).unwrap();
    assert_eq!(turns.lines().count(), 1 + state.turn_log.len());

    // embeddings dump holds one raw view per dataset view at embed_dim
    let emb = load_mvds(&dir.path().join("embeddings.mvds")).unwrap();
    assert_eq!(emb.n_views(), ds.n_views());
    assert_eq!(emb.n_samples(), ds.n_samples());
    assert_eq!(emb.view(0).cols(), cfg.embed_dim);
    let z_live = state.autoencoders[0].encode(ds.view(0)).unwrap();
    for (a, b) in emb.view(0).data().iter().zip(z_live.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn report_json_round_trips() {
    let ds = make_gaussian_multiview(12, 3, 3, &[6], 5).unwrap();
    let (_, report) = fit(&ds, &small_config()).unwrap();
    let text = report.to_json();
    let parsed = AssignmentReport::from_json(&text).unwrap();
    assert_eq!(parsed, report);
    // schema sanity: the documented keys are present
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "n_views",
        "n_samples",
        "n_clusters",
        "mode",
        "seed",
        "per_view_soft",
        "per_view_hard",
        "fused_hard",
        "consensus_rate",
        "metrics",
    ] {
        assert!(value.get(key).is_some(), "missing key {key}");
    }
}

#[test]
fn paper_scale_preset_carries_published_defaults() {
    let cfg = TrainConfig::paper_scale(10);
    assert_eq!(cfg.batch_size, 256);
    assert_eq!(cfg.batches_per_turn, 200);
    assert_eq!(cfg.total_finetune_iters, 20_000);
    assert_eq!(cfg.pretrain_epochs, 500);
    assert_eq!(cfg.gamma, 0.1);
    assert_eq!(cfg.hidden_dims, vec![500, 500, 2000]);
    assert_eq!(cfg.embed_dim, 10);
}
