//! Two-phase collaborative training pipeline.
//!
//! Phase one pretrains a per-view autoencoder on reconstruction alone and
//! initializes cluster centers (shared from the first referred view's
//! k-means, per-view, or per-view with index alignment, depending on mode).
//! Phase two rotates a referred view: each turn recomputes that view's
//! sharpened target distribution over the full dataset, freezes it, and runs
//! a fixed number of Adam steps on the joint loss
//!   L = sum_v L_r^v + gamma * sum_v KL(P_r || Q^v)
//! updating every view's autoencoder and cluster centers.

mod artifacts;
mod report;

pub use artifacts::write_run_artifacts;
pub use report::{AssignmentReport, MetricTriple, ReportMetrics};

use crate::autoencoder::{self, Autoencoder};
use crate::cluster::{
    init_shared_centers, kl_loss_counting, kmeans, target_distribution, ClusterHead,
    SoftAssignment, TargetDistribution,
};
use crate::data::MultiViewDataset;
use crate::error::{DemvcError, Result};
use crate::metrics;
use crate::rng;
use crate::tensor::{AdamState, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

/// Ablation modes: the full method, collaborative training with and without
/// the shared-center initialization, and the independent per-view baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full method: collaborative training plus shared-center initialization.
    Demvc,
    /// Collaborative training, shared centers at initialization.
    CooSetc,
    /// Collaborative training, each view keeps its own k-means centers
    /// (indices aligned to view 1 so the shared target stays coherent).
    Coo,
    /// Independent per-view training against each view's own target.
    IdecPerView,
}

impl Mode {
    /// Shared rotating target versus per-view targets.
    pub fn shares_target(self) -> bool {
        !matches!(self, Mode::IdecPerView)
    }

    /// Center-consistency initialization applies.
    pub fn shares_centers(self) -> bool {
        matches!(self, Mode::Demvc | Mode::CooSetc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Demvc => "demvc",
            Mode::CooSetc => "coo_setc",
            Mode::Coo => "coo",
            Mode::IdecPerView => "idec_per_view",
        }
    }

    pub const ALL: [Mode; 4] = [Mode::IdecPerView, Mode::Coo, Mode::CooSetc, Mode::Demvc];
}

impl FromStr for Mode {
    type Err = DemvcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demvc" => Ok(Mode::Demvc),
            "coo_setc" => Ok(Mode::CooSetc),
            "coo" => Ok(Mode::Coo),
            "idec_per_view" => Ok(Mode::IdecPerView),
            other => Err(DemvcError::Usage(format!(
                "unknown mode '{other}' (expected demvc, coo_setc, coo or idec_per_view)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training configuration. Desk-scale defaults keep CPU runs in minutes;
/// `paper_scale` switches to the published regime (batch 256, 200 batches
/// per referred turn, 20,000 iterations, 500 pretraining epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub batches_per_turn: usize,
    pub total_finetune_iters: usize,
    pub pretrain_epochs: usize,
    pub n_clusters: usize,
    /// 1-based index of the first referred view.
    pub first_referred_view: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Early stop once the fraction of samples with identical per-view hard
    /// labels reaches this value (checked once per turn). Set above 1 to
    /// disable.
    pub consensus_threshold: f64,
    /// Hidden layer widths of the fully connected encoder.
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub kmeans_max_iters: usize,
}

impl TrainConfig {
    pub fn desk_scale(n_clusters: usize) -> Self {
        TrainConfig {
            gamma: 0.1,
            batch_size: 64,
            batches_per_turn: 50,
            total_finetune_iters: 2000,
            pretrain_epochs: 100,
            n_clusters,
            first_referred_view: 1,
            mode: Mode::Demvc,
            seed: 0,
            consensus_threshold: 0.999,
            hidden_dims: vec![500, 500, 2000],
            embed_dim: 10,
            kmeans_max_iters: 300,
        }
    }

    pub fn paper_scale(n_clusters: usize) -> Self {
        TrainConfig {
            batch_size: 256,
            batches_per_turn: 200,
            total_finetune_iters: 20_000,
            pretrain_epochs: 500,
            ..Self::desk_scale(n_clusters)
        }
    }

    pub fn validate(&self, n_views: usize, n_samples: usize) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(DemvcError::Usage("gamma must be >= 0".into()));
        }
        if self.batch_size == 0 || self.batches_per_turn == 0 {
            return Err(DemvcError::Usage(
                "batch_size and batches_per_turn must be >= 1".into(),
            ));
        }
        if self.total_finetune_iters < self.batches_per_turn {
            return Err(DemvcError::Usage(
                "total_finetune_iters must be >= batches_per_turn".into(),
            ));
        }
        if self.n_clusters < 2 {
            return Err(DemvcError::Usage("n_clusters must be >= 2".into()));
        }
        if n_samples < self.n_clusters {
            return Err(DemvcError::Usage(format!(
                "dataset has {n_samples} samples for {} clusters",
                self.n_clusters
            )));
        }
        if self.first_referred_view == 0 || self.first_referred_view > n_views {
            return Err(DemvcError::Usage(format!(
                "first_referred_view {} outside 1..={n_views}",
                self.first_referred_view
            )));
        }
        if self.pretrain_epochs == 0 {
            return Err(DemvcError::Usage("pretrain_epochs must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(DemvcError::Usage("embed_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Flat key=value snapshot, one pair per line. The CLI config file format.
    pub fn to_key_values(&self) -> String {
        let hidden: Vec<String> = self.hidden_dims.iter().map(usize::to_string).collect();
        format!(
            "gamma={}\nbatch_size={}\nbatches_per_turn={}\ntotal_finetune_iters={}\npretrain_epochs={}\nn_clusters={}\nfirst_referred_view={}\nmode={}\nseed={}\nconsensus_threshold={}\nhidden_dims={}\nembed_dim={}\nkmeans_max_iters={}\n",
            self.gamma,
            self.batch_size,
            self.batches_per_turn,
            self.total_finetune_iters,
            self.pretrain_epochs,
            self.n_clusters,
            self.first_referred_view,
            self.mode,
            self.seed,
            self.consensus_threshold,
            hidden.join(","),
            self.embed_dim,
            self.kmeans_max_iters
        )
    }

    /// Applies one key=value assignment. Unknown keys and malformed values
    /// are usage errors.
    pub fn set_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| DemvcError::Usage(format!("invalid value '{value}' for key '{key}'")))
        }
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "batches_per_turn" => self.batches_per_turn = parse(key, value)?,
            "total_finetune_iters" => self.total_finetune_iters = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "n_clusters" => self.n_clusters = parse(key, value)?,
            "first_referred_view" => self.first_referred_view = parse(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "seed" => self.seed = parse(key, value)?,
            "consensus_threshold" => self.consensus_threshold = parse(key, value)?,
            "hidden_dims" => {
                let trimmed = value.trim();
                self.hidden_dims = if trimmed.is_empty() {
                    Vec::new()
                } else {
                    trimmed
                        .split(',')
                        .map(|v| parse::<usize>(key, v))
                        .collect::<Result<_>>()?
                };
            }
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(key, value)?,
            other => {
                return Err(DemvcError::Usage(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }
}

/// Per-iteration loss record: the joint loss, per-view reconstruction and
/// clustering components, and the consensus rate known at that iteration.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub total: f64,
    pub recon: Vec<f64>,
    pub cluster: Vec<f64>,
    pub consensus: f64,
}

/// One referred-view tenure.
#[derive(Debug, Clone)]
pub struct TurnRecord {
    /// 0-based referred view.
    pub referred: usize,
    pub start_iter: usize,
    pub steps: usize,
    /// Checksum of the frozen target before the first step of the turn.
    pub target_checksum_start: u64,
    /// Checksum of the same target after the last step of the turn.
    pub target_checksum_end: u64,
    /// Accumulated gradient L2 norm per view over the turn.
    pub grad_norms: Vec<f64>,
    pub consensus_after: f64,
}

/// Shared shuffled index stream: every view sees the same sample rows in a
/// step, so the frozen target rows line up across views.
#[derive(Debug, Clone)]
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        BatchStream {
            order: (0..n).collect(),
            pos: usize::MAX, // force a shuffle on first use
            rng,
        }
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let n = self.order.len();
        let take = batch.min(n);
        if self.pos > n.saturating_sub(take) {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        out
    }
}

/// Everything the fine-tuning phase mutates.
pub struct TrainState {
    pub autoencoders: Vec<Autoencoder>,
    pub heads: Vec<ClusterHead>,
    pub adam: Vec<AdamState>,
    /// 0-based view whose target the NEXT turn will share.
    pub current_referred: usize,
    pub iter_count: usize,
    /// Frozen P^r of the running turn (sharing modes).
    pub shared_target: Option<TargetDistribution>,
    /// Per-view frozen targets (idec_per_view mode).
    pub own_targets: Option<Vec<TargetDistribution>>,
    pub loss_history: Vec<IterRecord>,
    pub turn_log: Vec<TurnRecord>,
    pub pretrain_curves: Vec<Vec<f64>>,
    pub config: TrainConfig,
    /// Total q-clamp events observed inside KL evaluations.
    pub kl_clamp_events: u64,
    batch_stream: BatchStream,
    last_consensus: f64,
}

impl TrainState {
    pub fn n_views(&self) -> usize {
        self.autoencoders.len()
    }

    pub fn last_consensus(&self) -> f64 {
        self.last_consensus
    }
}

/// Full-dataset soft assignments of every view under the current parameters.
pub fn soft_assignments(
    state: &TrainState,
    dataset: &MultiViewDataset,
) -> Result<Vec<SoftAssignment>> {
    state
        .autoencoders
        .iter()
        .zip(&state.heads)
        .zip(dataset.views())
        .map(|((ae, head), view)| head.soft_assign(&ae.encode(view)?))
        .collect()
}

/// Hard labels per view: argmax of each soft assignment row, lowest index on
/// ties.
pub fn predict_per_view(state: &TrainState, dataset: &MultiViewDataset) -> Result<Vec<Vec<usize>>> {
    Ok(soft_assignments(state, dataset)?
        .iter()
        .map(SoftAssignment::hard_labels)
        .collect())
}

/// Fused prediction: argmax of the view-averaged soft assignments.
pub fn predict_fused(state: &TrainState, dataset: &MultiViewDataset) -> Result<Vec<usize>> {
    let soft = soft_assignments(state, dataset)?;
    Ok(fuse_soft(&soft).hard_labels())
}

pub(crate) fn fuse_soft(soft: &[SoftAssignment]) -> SoftAssignment {
    let first = soft[0].values();
    let (n, k) = (first.rows(), first.cols());
    let mut mean = Tensor::zeros(&[n, k]);
    let inv = 1.0 / soft.len() as f64;
    for q in soft {
        for (m, v) in mean.data_mut().iter_mut().zip(q.values().data()) {
            *m += v * inv;
        }
    }
    SoftAssignment::from_tensor(mean).expect("mean of row-stochastic matrices is row-stochastic")
}

/// Fraction of samples whose per-view hard labels all coincide.
pub fn consensus_rate(state: &TrainState, dataset: &MultiViewDataset) -> Result<f64> {
    let per_view = predict_per_view(state, dataset)?;
    Ok(consensus_of_labels(&per_view))
}

pub(crate) fn consensus_of_labels(per_view: &[Vec<usize>]) -> f64 {
    let n = per_view[0].len();
    let agree = (0..n)
        .filter(|&i| per_view.iter().all(|l| l[i] == per_view[0][i]))
        .count();
    agree as f64 / n as f64
}

/// Joint loss over the given batch rows under the current parameters:
/// (L, per-view reconstruction means, per-view KL sums). Pure: identical
/// inputs give identical values. Phase error before the first turn computes
/// a target.
pub fn total_loss(
    state: &TrainState,
    dataset: &MultiViewDataset,
    batch_indices: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let v = state.n_views();
    let mut recon = Vec::with_capacity(v);
    let mut cluster = Vec::with_capacity(v);
    for view in 0..v {
        let ae = &state.autoencoders[view];
        let head = &state.heads[view];
        let batch = dataset.view(view).gather_rows(batch_indices);
        let z = ae.encode(&batch)?;
        let xhat = ae.reconstruct(&batch)?;
        recon.push(autoencoder::mean_squared_norm(&batch, &xhat));
        let q = head.soft_assign(&z)?;
        let target = target_rows_for(state, view, batch_indices)?;
        let (kl, _) = kl_loss_counting(&target, &q)?;
        cluster.push(kl);
    }
    let total = recon.iter().sum::<f64>() + state.config.gamma * cluster.iter().sum::<f64>();
    Ok((total, recon, cluster))
}

fn target_rows_for(
    state: &TrainState,
    view: usize,
    batch_indices: &[usize],
) -> Result<TargetDistribution> {
    let full = if state.config.mode.shares_target() {
        state.shared_target.as_ref().ok_or_else(|| {
            DemvcError::Phase("no shared target yet: run_turn has not started".into())
        })?
    } else {
        &state.own_targets.as_ref().ok_or_else(|| {
            DemvcError::Phase("no per-view targets yet: run_turn has not started".into())
        })?[view]
    };
    Ok(full.gather_rows(batch_indices))
}

/// Executes one referred-view turn: freezes the target distribution(s)
/// computed over the full dataset, runs `batches_per_turn` Adam steps on the
/// joint loss for every view, then advances the referred view cyclically.
pub fn run_turn(state: &mut TrainState, dataset: &MultiViewDataset) -> Result<()> {
    let v = state.n_views();
    let referred = state.current_referred;
    let gamma = state.config.gamma;

    if state.config.mode.shares_target() {
        let ae = &state.autoencoders[referred];
        let head = &state.heads[referred];
        let q = head.soft_assign(&ae.encode(dataset.view(referred))?)?;
        state.shared_target = Some(target_distribution(&q));
        state.own_targets = None;
    } else {
        let mut targets = Vec::with_capacity(v);
        for view in 0..v {
            let ae = &state.autoencoders[view];
            let head = &state.heads[view];
            let q = head.soft_assign(&ae.encode(dataset.view(view))?)?;
            targets.push(target_distribution(&q));
        }
        state.own_targets = Some(targets);
        state.shared_target = None;
    }
    let checksum_start = target_checksum(state);

    let start_iter = state.iter_count;
    let steps = state.config.batches_per_turn;
    let mut grad_norms = vec![0.0f64; v];
    for _ in 0..steps {
        let indices = state.batch_stream.next_batch(state.config.batch_size);
        let mut recon_losses = Vec::with_capacity(v);
        let mut cluster_losses = Vec::with_capacity(v);
        for view in 0..v {
            let batch = dataset.view(view).gather_rows(&indices);
            let caches = state.autoencoders[view].forward_cached(&batch)?;
            let target = target_rows_for(state, view, &indices)?;
            let q = state.heads[view].soft_assign(&caches.embedding)?;
            let (kl, clamps) = kl_loss_counting(&target, &q)?;
            state.kl_clamp_events += clamps;
            recon_losses.push(autoencoder::mean_squared_norm(
                &batch,
                &caches.reconstruction,
            ));
            cluster_losses.push(kl);

            let grad_xhat = autoencoder::recon_grad(&batch, &caches.reconstruction);
            let (mut grad_z, mut grad_centers) =
                state.heads[view].kl_backward(&caches.embedding, &target)?;
            for g in grad_z.data_mut() {
                *g *= gamma;
            }
            for g in grad_centers.data_mut() {
                *g *= gamma;
            }
            let mut grads =
                state.autoencoders[view].backward(&caches, &grad_xhat, Some(&grad_z))?;
            grads.push(grad_centers);

            let norm_sq: f64 = grads
                .iter()
                .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
                .sum();
            grad_norms[view] += norm_sq.sqrt();

            let mut params = state.autoencoders[view].params_mut();
            params.push(state.heads[view].centers_mut());
            state.adam[view].step(&mut params, &grads)?;
        }
        let total = recon_losses.iter().sum::<f64>() + gamma * cluster_losses.iter().sum::<f64>();
        if !total.is_finite() {
            return Err(DemvcError::Evaluation(format!(
                "non-finite loss at iteration {}",
                state.iter_count
            )));
        }
        state.loss_history.push(IterRecord {
            iter: state.iter_count,
            total,
            recon: recon_losses,
            cluster: cluster_losses,
            consensus: state.last_consensus,
        });
        state.iter_count += 1;
    }

    let consensus = consensus_rate(state, dataset)?;
    state.last_consensus = consensus;
    state.turn_log.push(TurnRecord {
        referred,
        start_iter,
        steps,
        target_checksum_start: checksum_start,
        target_checksum_end: target_checksum(state),
        grad_norms,
        consensus_after: consensus,
    });
    state.current_referred = (referred + 1) % v;
    Ok(())
}

fn target_checksum(state: &TrainState) -> u64 {
    match (&state.shared_target, &state.own_targets) {
        (Some(t), _) => t.checksum(),
        (None, Some(ts)) => ts
            .iter()
            .fold(0u64, |acc, t| acc.rotate_left(1) ^ t.checksum()),
        (None, None) => 0,
    }
}

/// Runs the whole pipeline: per-view pretraining, center initialization per
/// mode, rotating fine-tuning with per-turn consensus early stop, and the
/// final assignment report.
pub fn fit(
    dataset: &MultiViewDataset,
    config: &TrainConfig,
) -> Result<(TrainState, AssignmentReport)> {
    let mut state = initialize(dataset, config)?;
    while state.iter_count < state.config.total_finetune_iters {
        run_turn(&mut state, dataset)?;
        if state.last_consensus >= state.config.consensus_threshold {
            break;
        }
    }
    let report = report::build_report(&state, dataset)?;
    Ok((state, report))
}

/// The initialization phase alone: pretrains every view's autoencoder and
/// sets up cluster centers per the configured mode, stopping right before
/// the first fine-tuning turn.
pub fn initialize(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<TrainState> {
    let v = dataset.n_views();
    let n = dataset.n_samples();
    config.validate(v, n)?;

    // phase one: independent pretraining. Every view draws its own copy of
    // the same seed-derived streams, so views with identical data evolve
    // identically (the pipeline is symmetric across views).
    let mut autoencoders = Vec::with_capacity(v);
    let mut pretrain_curves = Vec::with_capacity(v);
    for view in 0..v {
        let mut init_rng = rng::rng_for(config.seed, rng::streams::INIT);
        let mut ae = Autoencoder::new_affine(
            view,
            dataset.view(view).cols(),
            &config.hidden_dims,
            config.embed_dim,
            &mut init_rng,
        );
        let curve = ae.pretrain(
            dataset.view(view),
            config.pretrain_epochs,
            config.batch_size,
            rng::mix(config.seed, 0x5052_4500),
        )?;
        pretrain_curves.push(curve);
        autoencoders.push(ae);
    }

    // center initialization
    let referred0 = config.first_referred_view - 1;
    let heads = init_heads(dataset, &autoencoders, config, referred0)?;

    let adam = vec![AdamState::new(); v];
    let batch_stream = BatchStream::new(n, rng::rng_for(config.seed, rng::streams::FINETUNE));
    Ok(TrainState {
        autoencoders,
        heads,
        adam,
        current_referred: referred0,
        iter_count: 0,
        shared_target: None,
        own_targets: None,
        loss_history: Vec::new(),
        turn_log: Vec::new(),
        pretrain_curves,
        config: config.clone(),
        kl_clamp_events: 0,
        batch_stream,
        last_consensus: 0.0,
    })
}

/// Builds the final assignment report for a trained state.
pub fn build_report(state: &TrainState, dataset: &MultiViewDataset) -> Result<AssignmentReport> {
    report::build_report(state, dataset)
}

fn init_heads(
    dataset: &MultiViewDataset,
    autoencoders: &[Autoencoder],
    config: &TrainConfig,
    referred0: usize,
) -> Result<Vec<ClusterHead>> {
    let v = dataset.n_views();
    let k = config.n_clusters;
    // Per-view k-means draws a distinct stream: k-means++ samples row
    // indices, and a shared stream would seed every view's clusters from the
    // same objects, silently aligning cluster indices across views.
    let kmeans_seed = |view: usize| rng::mix(config.seed, 0x4b4d_0000 | ((view as u64) << 8));

    if config.mode.shares_centers() {
        // k-means in the first referred view's embedded space, copied to all
        let z = autoencoders[referred0].encode(dataset.view(referred0))?;
        let km = kmeans(&z, k, kmeans_seed(referred0), config.kmeans_max_iters)?;
        let mut heads = (0..v)
            .map(|_| ClusterHead::new(km.centers.clone()))
            .collect::<Result<Vec<_>>>()?;
        init_shared_centers(&mut heads, &km.centers)?;
        return Ok(heads);
    }

    // per-view k-means
    let mut results = Vec::with_capacity(v);
    for view in 0..v {
        let z = autoencoders[view].encode(dataset.view(view))?;
        results.push(kmeans(&z, k, kmeans_seed(view), config.kmeans_max_iters)?);
    }

    if config.mode == Mode::Coo {
        // align every view's cluster indices to view 1 by maximum-agreement
        // matching on the co-occurrence of initial hard labels; without this
        // the shared target's columns would refer to different clusters in
        // different views
        let reference = results[0].labels.clone();
        for res in results.iter_mut().skip(1) {
            let mut counts = vec![vec![0u64; k]; k];
            for (a, b) in res.labels.iter().zip(&reference) {
                counts[*a][*b] += 1;
            }
            let (_, row_to_col) = metrics::hungarian_max(&counts);
            let mut permuted = Tensor::zeros(&[k, res.centers.cols()]);
            for j in 0..k {
                permuted
                    .row_mut(row_to_col[j])
                    .copy_from_slice(res.centers.row(j));
            }
            res.centers = permuted;
        }
    }

    results
        .into_iter()
        .map(|r| ClusterHead::new(r.centers))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_multiview;

    fn tiny_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            batches_per_turn: 5,
            total_finetune_iters: 30,
            pretrain_epochs: 5,
            hidden_dims: vec![8],
            embed_dim: 4,
            consensus_threshold: 2.0, // disabled
            mode,
            ..TrainConfig::desk_scale(3)
        }
    }

    fn tiny_dataset(views: usize, seed: u64) -> MultiViewDataset {
        make_gaussian_multiview(12, 3, 3, &vec![6; views], seed).unwrap()
    }

    #[test]
    fn rotation_is_cyclic_over_three_views() {
        let ds = tiny_dataset(3, 1);
        let (state, _) = fit(&ds, &tiny_config(Mode::Demvc)).unwrap();
        let referred: Vec<usize> = state.turn_log.iter().map(|t| t.referred).collect();
        assert_eq!(referred, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(state.current_referred, 0);
        assert_eq!(state.iter_count, 30);
    }

    #[test]
    fn first_referred_view_offsets_the_cycle() {
        let ds = tiny_dataset(3, 2);
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.first_referred_view = 2;
        let (state, _) = fit(&ds, &cfg).unwrap();
        let referred: Vec<usize> = state.turn_log.iter().map(|t| t.referred).collect();
        assert_eq!(referred, vec![1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn target_is_frozen_within_each_turn() {
        let ds = tiny_dataset(2, 3);
        let (state, _) = fit(&ds, &tiny_config(Mode::Demvc)).unwrap();
        for turn in &state.turn_log {
            assert_eq!(turn.target_checksum_start, turn.target_checksum_end);
        }
    }

    #[test]
    fn every_view_receives_updates_every_turn() {
        let ds = tiny_dataset(3, 4);
        let (state, _) = fit(&ds, &tiny_config(Mode::Demvc)).unwrap();
        for turn in &state.turn_log {
            for (v, norm) in turn.grad_norms.iter().enumerate() {
                assert!(*norm > 0.0, "view {v} got no update in a turn");
            }
        }
    }

    #[test]
    fn total_loss_is_pure() {
        let ds = tiny_dataset(2, 5);
        let (state, _) = fit(&ds, &tiny_config(Mode::Demvc)).unwrap();
        let idx: Vec<usize> = (0..10).collect();
        let a = total_loss(&state, &ds, &idx).unwrap();
        let b = total_loss(&state, &ds, &idx).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn total_loss_before_any_turn_is_a_phase_error() {
        let ds = tiny_dataset(2, 6);
        let cfg = tiny_config(Mode::Demvc);
        // build a state by hand: run fit with zero turns is impossible, so
        // steal fit's initialization path via a 1-turn run and erase targets
        let (mut state, _) = fit(&ds, &cfg).unwrap();
        state.shared_target = None;
        state.own_targets = None;
        let err = total_loss(&state, &ds, &[0, 1]).unwrap_err();
        assert!(matches!(err, DemvcError::Phase(_)));
    }

    #[test]
    fn gamma_zero_reduces_to_reconstruction_only() {
        let ds = tiny_dataset(2, 7);
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.gamma = 0.0;
        let (state, _) = fit(&ds, &cfg).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let (total, recon, cluster) = total_loss(&state, &ds, &idx).unwrap();
        assert_eq!(total, recon.iter().sum::<f64>());
        assert!(cluster.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn fit_is_deterministic_in_the_seed() {
        let ds = tiny_dataset(2, 8);
        let cfg = tiny_config(Mode::Demvc);
        let (s1, r1) = fit(&ds, &cfg).unwrap();
        let (s2, r2) = fit(&ds, &cfg).unwrap();
        for (a, b) in s1.autoencoders.iter().zip(&s2.autoencoders) {
            assert_eq!(a.checksum(), b.checksum());
        }
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn identical_views_agree_perfectly() {
        let one = tiny_dataset(1, 9);
        let duplicated = MultiViewDataset::new(
            vec![one.view(0).clone(), one.view(0).clone()],
            one.labels().map(<[usize]>::to_vec),
            vec![None, None],
        )
        .unwrap();
        let (state, report) = fit(&duplicated, &tiny_config(Mode::Demvc)).unwrap();
        assert_eq!(report.consensus_rate, 1.0);
        assert_eq!(report.per_view_hard[0], report.per_view_hard[1]);
        assert_eq!(consensus_rate(&state, &duplicated).unwrap(), 1.0);
        // the report mirrors the prediction entry points
        assert_eq!(
            predict_fused(&state, &duplicated).unwrap(),
            report.fused_hard
        );
        assert_eq!(
            predict_per_view(&state, &duplicated).unwrap(),
            report.per_view_hard
        );
    }

    #[test]
    fn single_view_idec_degenerates_cleanly() {
        let ds = tiny_dataset(1, 10);
        let (state, report) = fit(&ds, &tiny_config(Mode::IdecPerView)).unwrap();
        assert_eq!(report.consensus_rate, 1.0);
        assert_eq!(report.fused_hard, report.per_view_hard[0]);
        assert!(state.own_targets.is_some());
        assert!(state.shared_target.is_none());
    }

    #[test]
    fn fused_prediction_matches_per_view_on_agreement() {
        let ds = tiny_dataset(2, 11);
        let (_, report) = fit(&ds, &tiny_config(Mode::Coo)).unwrap();
        for i in 0..ds.n_samples() {
            let first = report.per_view_hard[0][i];
            if report.per_view_hard.iter().all(|l| l[i] == first) {
                assert_eq!(report.fused_hard[i], first);
            }
        }
    }

    #[test]
    fn fused_prediction_is_view_order_invariant() {
        use crate::cluster::SoftAssignment;
        let q1 =
            SoftAssignment::from_tensor(Tensor::matrix(2, 2, vec![0.6, 0.4, 0.3, 0.7]).unwrap())
                .unwrap();
        let q2 =
            SoftAssignment::from_tensor(Tensor::matrix(2, 2, vec![0.1, 0.9, 0.8, 0.2]).unwrap())
                .unwrap();
        let a = fuse_soft(&[q1.clone(), q2.clone()]).hard_labels();
        let b = fuse_soft(&[q2, q1]).hard_labels();
        assert_eq!(a, b);
        // 0.6/0.1 -> mean [0.35, 0.65] -> label 1
        assert_eq!(a[0], 1);
    }

    #[test]
    fn consensus_counts_exact_agreement() {
        let labels = vec![vec![0, 1, 2, 1], vec![0, 1, 0, 1], vec![0, 1, 2, 1]];
        assert_eq!(consensus_of_labels(&labels), 0.75);
        assert_eq!(consensus_of_labels(&labels[..1]), 1.0);
    }

    #[test]
    fn early_stop_honors_the_consensus_threshold() {
        let one = tiny_dataset(1, 12);
        let duplicated = MultiViewDataset::new(
            vec![one.view(0).clone(), one.view(0).clone()],
            one.labels().map(<[usize]>::to_vec),
            vec![None, None],
        )
        .unwrap();
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.consensus_threshold = 0.999;
        let (state, _) = fit(&duplicated, &cfg).unwrap();
        // identical views agree after the very first turn
        assert_eq!(state.turn_log.len(), 1);
        assert!(state.iter_count < cfg.total_finetune_iters);
    }

    #[test]
    fn config_key_values_round_trip() {
        let mut cfg = TrainConfig::desk_scale(7);
        cfg.gamma = 0.25;
        cfg.hidden_dims = vec![32, 16];
        cfg.mode = Mode::Coo;
        let text = cfg.to_key_values();
        let mut parsed = TrainConfig::desk_scale(2);
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            parsed.set_key_value(k, v).unwrap();
        }
        assert_eq!(parsed, cfg);
        assert!(parsed.set_key_value("nonsense", "1").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ds = tiny_dataset(2, 13);
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.first_referred_view = 3;
        assert!(fit(&ds, &cfg).is_err());
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.n_clusters = ds.n_samples() + 1;
        assert!(fit(&ds, &cfg).is_err());
        let mut cfg = tiny_config(Mode::Demvc);
        cfg.total_finetune_iters = 2;
        assert!(fit(&ds, &cfg).is_err());
    }

    #[test]
    fn pretraining_ignores_other_views() {
        // two datasets differing only in view 1 pretrain identical view-0
        // autoencoders under the same seed
        let a = tiny_dataset(2, 14);
        let mut b = a.clone();
        for v in b.view_mut(1).data_mut() {
            *v = (*v * 0.5) as f32 as f64;
        }
        let cfg = tiny_config(Mode::IdecPerView);
        let (sa, _) = fit(&a, &cfg).unwrap();
        let (sb, _) = fit(&b, &cfg).unwrap();
        // compare freshly pretrained copies rather than fine-tuned ones,
        // rebuilt through the same seeds
        let mut rng_a = rng::rng_for(cfg.seed, rng::streams::INIT);
        let mut ae_a = Autoencoder::new_affine(
            0,
            a.view(0).cols(),
            &cfg.hidden_dims,
            cfg.embed_dim,
            &mut rng_a,
        );
        ae_a.pretrain(
            a.view(0),
            cfg.pretrain_epochs,
            cfg.batch_size,
            rng::mix(cfg.seed, 0x5052_4500),
        )
        .unwrap();
        let mut rng_b = rng::rng_for(cfg.seed, rng::streams::INIT);
        let mut ae_b = Autoencoder::new_affine(
            0,
            b.view(0).cols(),
            &cfg.hidden_dims,
            cfg.embed_dim,
            &mut rng_b,
        );
        ae_b.pretrain(
            b.view(0),
            cfg.pretrain_epochs,
            cfg.batch_size,
            rng::mix(cfg.seed, 0x5052_4500),
        )
        .unwrap();
        assert_eq!(ae_a.checksum(), ae_b.checksum());
        // and the full pipelines still produced the same pretrain curves for view 0
        assert_eq!(sa.pretrain_curves[0], sb.pretrain_curves[0]);
    }
}
