//! Mini-batch BPR training with Adam, per-epoch negative resampling, and
//! early stopping on validation Recall@20.
//!
//! One training run is a pure function of `(dataset, config)`: parameter
//! initialization, negative sampling, batch order, and every numeric kernel
//! are seeded and single-threaded, so identical runs produce bit-identical
//! checkpoints and reports.

use crate::data::InteractionDataset;
use crate::diffcore::{Tape, Var};
use crate::hypergraph::{build_views, normalized_laplacian, HypergraphView, SparseMatrix};
use crate::metrics::{evaluate, Split};
use crate::model::checkpoint::CheckpointPayload;
use crate::model::{
    fuse, het_encoder_forward, insert_params, lightgcn_adjacency, lightgcn_forward,
    wave_encoder_forward, Ablation, ChannelVars, LightGcnParams, WaveHdnnParams, WaveHdnnVars,
};
use crate::objectives::{
    bpr_loss, embedding_reg, infonce_cross_view, total_loss, ContrastiveNegatives, LossBreakdown,
    LossWeights,
};
use crate::spectral::{chebyshev_wavelet, exact_wavelet, WaveletOperator, DEFAULT_DENSE_LIMIT};
use crate::{derive_seed, Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Which model the pipeline trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    WaveHdnn,
    LightGcn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::WaveHdnn => "wavehdnn",
            ModelKind::LightGcn => "lightgcn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wavehdnn" => Ok(ModelKind::WaveHdnn),
            "lightgcn" => Ok(ModelKind::LightGcn),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Exact/Chebyshev selection for the wavelet operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletModeCfg {
    /// Exact when the side has at most [`DEFAULT_DENSE_LIMIT`] nodes,
    /// Chebyshev otherwise.
    Auto,
    Exact,
    Chebyshev,
}

impl std::str::FromStr for WaveletModeCfg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(WaveletModeCfg::Auto),
            "exact" => Ok(WaveletModeCfg::Exact),
            "chebyshev" => Ok(WaveletModeCfg::Chebyshev),
            other => Err(Error::Config(format!("unknown wavelet_mode `{other}`"))),
        }
    }
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub lambda_cl: f64,
    pub lambda_reg: f64,
    pub tau: f64,
    pub layers: usize,
    pub dim: usize,
    pub wavelet_scale: f64,
    pub chebyshev_order: usize,
    pub wavelet_mode: WaveletModeCfg,
    pub contrastive_negatives: ContrastiveNegatives,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::WaveHdnn,
            lr: 1e-3,
            batch_size: 1024,
            max_epochs: 300,
            patience: 10,
            eval_every: 1,
            lambda_cl: 0.1,
            lambda_reg: 1e-4,
            tau: 0.2,
            layers: 3,
            dim: 64,
            wavelet_scale: 1.0,
            chebyshev_order: 10,
            wavelet_mode: WaveletModeCfg::Auto,
            contrastive_negatives: ContrastiveNegatives::Batch,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("tau", self.tau),
            ("wavelet_scale_plus_one", self.wavelet_scale + 1.0),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.wavelet_scale < 0.0 {
            return Err(Error::Config("wavelet_scale must be non-negative".into()));
        }
        if self.lambda_cl < 0.0 || self.lambda_reg < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.chebyshev_order == 0 {
            return Err(Error::Config("chebyshev_order must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_cl: self.lambda_cl,
            lambda_reg: self.lambda_reg,
            tau: self.tau,
        }
    }
}

/// Adam moment estimates for a fixed, named tensor list.
#[derive(Debug, Clone)]
pub struct AdamState {
    names: Vec<String>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Mutable named-tensor access shared by both parameter sets.
pub trait ParamStore {
    fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>>;
}

impl ParamStore for WaveHdnnParams {
    fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        WaveHdnnParams::tensor_mut(self, name)
    }
}

impl ParamStore for LightGcnParams {
    fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        LightGcnParams::tensor_mut(self, name)
    }
}

impl AdamState {
    pub fn new(tensors: &[(String, &Array2<f64>)]) -> Self {
        AdamState {
            names: tensors.iter().map(|(n, _)| n.clone()).collect(),
            m: tensors.iter().map(|(_, t)| Array2::zeros(t.dim())).collect(),
            v: tensors.iter().map(|(_, t)| Array2::zeros(t.dim())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update applied in place. Gradients must be
/// finite and aligned with the state's tensor list.
pub fn adam_step(
    params: &mut dyn ParamStore,
    grads: &[(String, Array2<f64>)],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.names.len() {
        return Err(Error::ContractViolation(format!(
            "adam_step: {} gradients for {} tracked tensors",
            grads.len(),
            state.names.len()
        )));
    }
    for (k, (name, grad)) in grads.iter().enumerate() {
        if name != &state.names[k] {
            return Err(Error::ContractViolation(format!(
                "adam_step: gradient {k} is `{name}`, state expects `{}`",
                state.names[k]
            )));
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of tensor {name}")));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (k, (name, grad)) in grads.iter().enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        });
        ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        });
        let theta = params.tensor_mut(name).ok_or_else(|| {
            Error::ContractViolation(format!("adam_step: unknown tensor `{name}`"))
        })?;
        ndarray::Zip::from(theta).and(&*m).and(&*v).for_each(|t, &m, &v| {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *t -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

fn sample_negative<R: Rng>(rng: &mut R, train_items: &[usize], num_items: usize) -> Option<usize> {
    if train_items.len() >= num_items {
        return None;
    }
    for _ in 0..100 {
        let candidate = rng.random_range(0..num_items);
        if train_items.binary_search(&candidate).is_err() {
            return Some(candidate);
        }
    }
    // Dense user: enumerate the complement.
    let complement: Vec<usize> =
        (0..num_items).filter(|i| train_items.binary_search(i).is_err()).collect();
    Some(complement[rng.random_range(0..complement.len())])
}

/// One (user, positive, negative) triple per train interaction, negatives
/// uniform over the user's non-interacted items, order shuffled.
pub fn sample_epoch<R: Rng>(ds: &InteractionDataset, rng: &mut R) -> Vec<(usize, usize, usize)> {
    let mut triples = Vec::with_capacity(ds.train.len());
    let mut warned: BTreeSet<usize> = BTreeSet::new();
    for &(u, i) in &ds.train {
        match sample_negative(rng, &ds.train_items_of[u], ds.num_items) {
            Some(neg) => triples.push((u, i, neg)),
            None => {
                if warned.insert(u) {
                    log::warn!("user {u} interacts with every item; skipping their triples");
                }
            }
        }
    }
    use rand::seq::SliceRandom;
    triples.shuffle(rng);
    triples
}

/// Fixed per-run structures: incidence views, wavelet operators, and the
/// LightGCN adjacency, built once from the train split.
pub struct ModelContext {
    pub user_view: Option<HypergraphView>,
    pub item_view: Option<HypergraphView>,
    pub op_user: Option<Arc<WaveletOperator>>,
    pub op_item: Option<Arc<WaveletOperator>>,
    pub adjacency: Option<Arc<SparseMatrix>>,
}

fn build_operator(
    view: &HypergraphView,
    cfg: &TrainConfig,
) -> Result<Arc<WaveletOperator>> {
    let laplacian = normalized_laplacian(view)?;
    let op = match cfg.wavelet_mode {
        WaveletModeCfg::Exact => exact_wavelet(&laplacian, cfg.wavelet_scale)?,
        WaveletModeCfg::Chebyshev => {
            chebyshev_wavelet(&Arc::new(laplacian), cfg.wavelet_scale, cfg.chebyshev_order)?
        }
        WaveletModeCfg::Auto => {
            if view.num_nodes() <= DEFAULT_DENSE_LIMIT {
                exact_wavelet(&laplacian, cfg.wavelet_scale)?
            } else {
                chebyshev_wavelet(&Arc::new(laplacian), cfg.wavelet_scale, cfg.chebyshev_order)?
            }
        }
    };
    Ok(Arc::new(op))
}

/// Build the per-run context for the configured model and ablation.
pub fn build_context(ds: &InteractionDataset, cfg: &TrainConfig) -> Result<ModelContext> {
    match cfg.model {
        ModelKind::LightGcn => Ok(ModelContext {
            user_view: None,
            item_view: None,
            op_user: None,
            op_item: None,
            adjacency: Some(Arc::new(lightgcn_adjacency(ds)?)),
        }),
        ModelKind::WaveHdnn => {
            let (user_view, item_view) = build_views(ds)?;
            let (op_user, op_item) = if cfg.ablation.uses_wave() {
                (
                    Some(build_operator(&user_view, cfg)?),
                    Some(build_operator(&item_view, cfg)?),
                )
            } else {
                (None, None)
            };
            Ok(ModelContext {
                user_view: Some(user_view),
                item_view: Some(item_view),
                op_user,
                op_item,
                adjacency: None,
            })
        }
    }
}

/// Fused embeddings plus per-channel snapshots from one WaveHDNN forward.
pub struct WaveHdnnForward {
    pub e_u: Var,
    pub e_i: Var,
    pub het: Option<ChannelVars>,
    pub wave: Option<ChannelVars>,
}

/// Run the configured channels and fuse their finals (or pass through the
/// only active channel).
pub fn wavehdnn_forward(
    tape: &Tape,
    vars: &WaveHdnnVars,
    ctx: &ModelContext,
    cfg: &TrainConfig,
) -> Result<WaveHdnnForward> {
    let user_view = ctx
        .user_view
        .as_ref()
        .ok_or_else(|| Error::ContractViolation("context is missing the user view".into()))?;
    let het = if cfg.ablation.uses_het() {
        let hv = vars.het.as_ref().ok_or_else(|| {
            Error::ContractViolation("heterophily parameters absent from tape".into())
        })?;
        Some(het_encoder_forward(
            tape,
            hv,
            user_view,
            vars.user_embed,
            vars.item_embed,
            cfg.layers,
        )?)
    } else {
        None
    };
    let wave = if cfg.ablation.uses_wave() {
        let wv = vars.wave.as_ref().ok_or_else(|| {
            Error::ContractViolation("wavelet parameters absent from tape".into())
        })?;
        let item_view = ctx
            .item_view
            .as_ref()
            .ok_or_else(|| Error::ContractViolation("context is missing the item view".into()))?;
        let op_user = ctx.op_user.as_ref().expect("wave channel has operators");
        let op_item = ctx.op_item.as_ref().expect("wave channel has operators");
        Some(wave_encoder_forward(
            tape,
            wv,
            op_user,
            op_item,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            cfg.layers,
        )?)
    } else {
        None
    };

    let (e_u, e_i) = match (&het, &wave) {
        (Some(h), Some(w)) => fuse(tape, h, w)?,
        (Some(h), None) => (h.user_final, h.item_final),
        (None, Some(w)) => (w.user_final, w.item_final),
        (None, None) => {
            return Err(Error::Config(
                "ablation disabled both channels; nothing to train".into(),
            ))
        }
    };
    Ok(WaveHdnnForward { e_u, e_i, het, wave })
}

fn row_dot_scores(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let prod = tape.mul(a, b)?;
    let (_, d) = tape.shape(prod);
    let ones = tape.ones(d, 1);
    tape.matmul(prod, ones)
}

fn dedup_sorted(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let set: BTreeSet<usize> = ids.collect();
    set.into_iter().collect()
}

/// Assemble the complete WaveHDNN training objective for one batch of
/// (user, pos, neg) triples: BPR on fused scores, cross-view InfoNCE on
/// both entity types when both channels run, and embedding regularization.
pub fn wavehdnn_batch_loss(
    tape: &Tape,
    vars: &WaveHdnnVars,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    triples: &[(usize, usize, usize)],
) -> Result<(Var, LossBreakdown)> {
    let fwd = wavehdnn_forward(tape, vars, ctx, cfg)?;
    let users: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let pos: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let neg: Vec<usize> = triples.iter().map(|t| t.2).collect();

    let u_rows = tape.gather_rows(fwd.e_u, &users)?;
    let p_rows = tape.gather_rows(fwd.e_i, &pos)?;
    let n_rows = tape.gather_rows(fwd.e_i, &neg)?;
    let pos_scores = row_dot_scores(tape, u_rows, p_rows)?;
    let neg_scores = row_dot_scores(tape, u_rows, n_rows)?;
    let bpr = bpr_loss(tape, pos_scores, neg_scores)?;

    let contrastive = match (&fwd.het, &fwd.wave) {
        (Some(h), Some(w)) => {
            let batch_users = dedup_sorted(users.iter().copied());
            let batch_items = dedup_sorted(pos.iter().copied());
            let cl_u = infonce_cross_view(
                tape,
                &h.user_layers,
                &w.user_layers,
                &batch_users,
                cfg.tau,
                cfg.contrastive_negatives,
            )?;
            let cl_i = infonce_cross_view(
                tape,
                &h.item_layers,
                &w.item_layers,
                &batch_items,
                cfg.tau,
                cfg.contrastive_negatives,
            )?;
            Some((cl_u, cl_i))
        }
        _ => None,
    };

    let reg = embedding_reg(tape, vars.user_embed, vars.item_embed)?;
    total_loss(tape, bpr, contrastive, reg, cfg.weights())
}

/// BPR + regularization objective for the LightGCN baseline.
pub fn lightgcn_batch_loss(
    tape: &Tape,
    user_embed: Var,
    item_embed: Var,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    triples: &[(usize, usize, usize)],
) -> Result<(Var, LossBreakdown)> {
    let adjacency = ctx
        .adjacency
        .as_ref()
        .ok_or_else(|| Error::ContractViolation("context is missing the adjacency".into()))?;
    let (e_u, e_i) = lightgcn_forward(tape, adjacency, user_embed, item_embed, cfg.layers)?;
    let users: Vec<usize> = triples.iter().map(|t| t.0).collect();
    let pos: Vec<usize> = triples.iter().map(|t| t.1).collect();
    let neg: Vec<usize> = triples.iter().map(|t| t.2).collect();
    let u_rows = tape.gather_rows(e_u, &users)?;
    let p_rows = tape.gather_rows(e_i, &pos)?;
    let n_rows = tape.gather_rows(e_i, &neg)?;
    let pos_scores = row_dot_scores(tape, u_rows, p_rows)?;
    let neg_scores = row_dot_scores(tape, u_rows, n_rows)?;
    let bpr = bpr_loss(tape, pos_scores, neg_scores)?;
    let reg = embedding_reg(tape, user_embed, item_embed)?;
    total_loss(tape, bpr, None, reg, cfg.weights())
}

/// Inference-only forward to final embedding tables.
pub fn inference_embeddings(
    payload: &CheckpointPayload,
    ctx: &ModelContext,
    cfg: &TrainConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let tape = Tape::new();
    match payload {
        CheckpointPayload::WaveHdnn(params) => {
            let vars = insert_params(&tape, params, cfg.ablation, false);
            let fwd = wavehdnn_forward(&tape, &vars, ctx, cfg)?;
            Ok((tape.value(fwd.e_u), tape.value(fwd.e_i)))
        }
        CheckpointPayload::LightGcn(params) => {
            let xu = tape.leaf(params.user_embed.clone(), false);
            let xi = tape.leaf(params.item_embed.clone(), false);
            let adjacency = ctx
                .adjacency
                .as_ref()
                .ok_or_else(|| Error::ContractViolation("context is missing the adjacency".into()))?;
            let (e_u, e_i) = lightgcn_forward(&tape, adjacency, xu, xi, cfg.layers)?;
            Ok((tape.value(e_u), tape.value(e_i)))
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bpr: f64,
    pub cl_u: f64,
    pub cl_i: f64,
    pub reg: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_recall: Option<f64>,
    /// Epoch-mean L2 gradient norm per active tensor.
    pub grad_norms: BTreeMap<String, f64>,
}

/// Outcome of [`fit`].
pub struct FitResult {
    pub best: CheckpointPayload,
    pub log: Vec<EpochRecord>,
    pub best_val_recall: Option<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub aborted_non_finite: bool,
}

/// Largest K ≤ 20 every val-evaluated user can rank (train items are
/// masked); keeps early stopping meaningful on tiny fixtures.
fn early_stop_k(ds: &InteractionDataset) -> usize {
    let mut k = 20usize;
    let mut val_users: BTreeSet<usize> = BTreeSet::new();
    for &(u, _) in &ds.val {
        val_users.insert(u);
    }
    for &u in &val_users {
        let unmasked = ds.num_items - ds.train_items_of[u].len();
        k = k.min(unmasked);
    }
    k.max(1)
}

fn val_recall_now(
    payload: &CheckpointPayload,
    ctx: &ModelContext,
    cfg: &TrainConfig,
    ds: &InteractionDataset,
    k: usize,
) -> Result<Option<f64>> {
    if ds.val.is_empty() {
        return Ok(None);
    }
    let (e_u, e_i) = inference_embeddings(payload, ctx, cfg)?;
    let report = evaluate(&e_u, &e_i, ds, Split::Val, &[k], cfg.seed)?;
    Ok(report.get(&format!("recall@{k}")))
}

enum TrainState {
    Wave(WaveHdnnParams),
    Lgcn(LightGcnParams),
}

impl TrainState {
    fn payload(&self) -> CheckpointPayload {
        match self {
            TrainState::Wave(p) => CheckpointPayload::WaveHdnn(p.clone()),
            TrainState::Lgcn(p) => CheckpointPayload::LightGcn(p.clone()),
        }
    }

    fn store(&mut self) -> &mut dyn ParamStore {
        match self {
            TrainState::Wave(p) => p,
            TrainState::Lgcn(p) => p,
        }
    }
}

/// Train to convergence (or `max_epochs`), returning the best-validation
/// checkpoint and the per-epoch log. A non-finite loss or gradient aborts
/// the run and retains the last good checkpoint.
pub fn fit(ds: &InteractionDataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::ContractViolation("empty train split".into()));
    }
    let ctx = build_context(ds, cfg)?;
    let mut state = match cfg.model {
        ModelKind::WaveHdnn => TrainState::Wave(WaveHdnnParams::init(
            ds.num_users,
            ds.num_items,
            cfg.dim,
            cfg.layers,
            cfg.seed,
        )),
        ModelKind::LightGcn => TrainState::Lgcn(LightGcnParams::init(
            ds.num_users,
            ds.num_items,
            cfg.dim,
            cfg.layers,
            cfg.seed,
        )),
    };

    // Adam tracks exactly the tensors that reach the active loss.
    let mut adam = {
        let tensors: Vec<(String, &Array2<f64>)> = match &state {
            TrainState::Wave(p) => {
                let tape = Tape::new();
                let vars = insert_params(&tape, p, cfg.ablation, false);
                let names: Vec<String> = vars.registry.iter().map(|(n, _)| n.clone()).collect();
                let all = p.tensors();
                all.into_iter().filter(|(n, _)| names.contains(n)).collect()
            }
            TrainState::Lgcn(p) => p.tensors(),
        };
        AdamState::new(&tensors)
    };

    let k_eval = early_stop_k(ds);
    let mut best = state.payload();
    let mut best_val: Option<f64> = None;
    let mut patience_left = cfg.patience;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut aborted = false;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 0..cfg.max_epochs {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3, epoch as u64));
        let triples = sample_epoch(ds, &mut rng);
        if triples.is_empty() {
            return Err(Error::ContractViolation(
                "no trainable triples in this dataset".into(),
            ));
        }

        let mut sums = LossBreakdown {
            bpr: 0.0,
            contrastive_user: 0.0,
            contrastive_item: 0.0,
            reg: 0.0,
            total: 0.0,
            weights: cfg.weights(),
        };
        let mut norm_sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut batches = 0usize;
        let mut weight_total = 0usize;

        for batch in triples.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let step = (|| -> Result<(Vec<(String, Array2<f64>)>, LossBreakdown)> {
                match &state {
                    TrainState::Wave(p) => {
                        let vars = insert_params(&tape, p, cfg.ablation, true);
                        let (loss, breakdown) = wavehdnn_batch_loss(&tape, &vars, &ctx, cfg, batch)?;
                        tape.backward(loss)?;
                        let grads: Vec<(String, Array2<f64>)> = vars
                            .registry
                            .iter()
                            .map(|(n, v)| (n.clone(), tape.grad(*v).expect("leaf gradient")))
                            .collect();
                        Ok((grads, breakdown))
                    }
                    TrainState::Lgcn(p) => {
                        let xu = tape.leaf(p.user_embed.clone(), true);
                        let xi = tape.leaf(p.item_embed.clone(), true);
                        let (loss, breakdown) = lightgcn_batch_loss(&tape, xu, xi, &ctx, cfg, batch)?;
                        tape.backward(loss)?;
                        let grads = vec![
                            ("user_embed".to_string(), tape.grad(xu).expect("leaf gradient")),
                            ("item_embed".to_string(), tape.grad(xi).expect("leaf gradient")),
                        ];
                        Ok((grads, breakdown))
                    }
                }
            })();
            let (grads, breakdown) = match step {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    log::error!("aborting at epoch {epoch}: non-finite {what}");
                    aborted = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };

            match adam_step(state.store(), &grads, &mut adam, cfg.lr) {
                Ok(()) => {}
                Err(Error::NonFinite(what)) => {
                    log::error!("aborting at epoch {epoch}: non-finite {what}");
                    aborted = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }

            let w = batch.len();
            sums.bpr += breakdown.bpr * w as f64;
            sums.contrastive_user += breakdown.contrastive_user * w as f64;
            sums.contrastive_item += breakdown.contrastive_item * w as f64;
            sums.reg += breakdown.reg * w as f64;
            sums.total += breakdown.total * w as f64;
            weight_total += w;
            batches += 1;
            for (name, g) in &grads {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                *norm_sums.entry(name.clone()).or_insert(0.0) += norm;
            }
        }

        epochs_run = epoch + 1;
        let wt = weight_total.max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            bpr: sums.bpr / wt,
            cl_u: sums.contrastive_user / wt,
            cl_i: sums.contrastive_item / wt,
            reg: sums.reg / wt,
            total: sums.total / wt,
            val_recall: None,
            grad_norms: norm_sums
                .into_iter()
                .map(|(k, v)| (k, v / batches.max(1) as f64))
                .collect(),
        };

        if (epoch + 1) % cfg.eval_every == 0 {
            if let Some(recall) = val_recall_now(&state.payload(), &ctx, cfg, ds, k_eval)? {
                record.val_recall = Some(recall);
                let improved = best_val.map_or(true, |b| recall > b);
                if improved {
                    best_val = Some(recall);
                    best = state.payload();
                    patience_left = cfg.patience;
                } else {
                    patience_left -= 1;
                    if patience_left == 0 {
                        log.push(record);
                        stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
        log.push(record);
    }

    // Without validation signal (or when aborting before any evaluation)
    // the latest parameters are the checkpoint.
    if best_val.is_none() {
        best = state.payload();
    }
    Ok(FitResult {
        best,
        log,
        best_val_recall: best_val,
        epochs_run,
        stopped_early,
        aborted_non_finite: aborted,
    })
}
