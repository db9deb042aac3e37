//! WaveHDNN forward computation.
//!
//! Two channels over the same embedding tables:
//!
//! - the heterophily-aware collaborative encoder alternates
//!   `MLP → node→edge aggregation → LayerNorm → residual` item updates with
//!   the mirrored user updates on the user-side view, finishing with a
//!   residual MLP over the concatenation with layer-0 embeddings;
//! - the multi-scale structure encoder applies
//!   `Θ · diag(Λ) · Θ′ · X · W + X` per side with the wavelet pair built
//!   from each side's Laplacian.
//!
//! Channel fusion is an elementwise sum of the per-channel layer means.
//! A LightGCN baseline (symmetric bipartite propagation, layer averaging)
//! rides the same tape machinery.

pub mod checkpoint;

use crate::diffcore::{LinearMap, Tape, Var};
use crate::hypergraph::{HypergraphView, SparseMatrix};
use crate::spectral::{Direction, WaveletOperator};
use crate::{derive_seed, Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use std::sync::Arc;

/// LayerNorm epsilon used throughout the encoders.
pub const LN_EPS: f64 = 1e-5;

/// Which channel(s) to train and fuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Drop the heterophily-aware encoder (wavelet channel only).
    NoHet,
    /// Drop the multi-scale wavelet encoder (heterophily channel only).
    NoWave,
}

impl Ablation {
    pub fn uses_het(&self) -> bool {
        !matches!(self, Ablation::NoHet)
    }
    pub fn uses_wave(&self) -> bool {
        !matches!(self, Ablation::NoWave)
    }
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoHet => "no_het",
            Ablation::NoWave => "no_wave",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_het" => Ok(Ablation::NoHet),
            "no_wave" => Ok(Ablation::NoWave),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

/// Two-layer perceptron weights (hidden relu, identity output).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl Mlp {
    fn init<R: Rng>(in_dim: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut R| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
        };
        Mlp {
            w1: glorot(in_dim, hidden, rng),
            b1: Array2::zeros((1, hidden)),
            w2: glorot(hidden, out, rng),
            b2: Array2::zeros((1, out)),
        }
    }

    fn zeroed(in_dim: usize, hidden: usize, out: usize) -> Self {
        Mlp {
            w1: Array2::zeros((in_dim, hidden)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((hidden, out)),
            b2: Array2::zeros((1, out)),
        }
    }
}

/// Full trainable state of the WaveHDNN model.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveHdnnParams {
    pub user_embed: Array2<f64>,
    pub item_embed: Array2<f64>,
    pub mlp1: Mlp,
    pub mlp2: Mlp,
    /// 2d→d→d head applied to the concatenation with layer-0 embeddings.
    pub mlp_final: Mlp,
    /// Per-layer diagonal filters Λ_u, stored |U|×1.
    pub wave_filters_user: Vec<Array2<f64>>,
    /// Per-layer diagonal filters Λ_i, stored |I|×1.
    pub wave_filters_item: Vec<Array2<f64>>,
    /// Per-layer d×d feature transforms W.
    pub wave_transforms: Vec<Array2<f64>>,
    pub num_layers: usize,
    pub dim: usize,
}

fn embed_init(rows: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let half_width = 0.1 / (dim as f64).sqrt();
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(-half_width..half_width))
}

impl WaveHdnnParams {
    /// Seeded initialization: embeddings zero-mean uniform with half-width
    /// `0.1/√d`, MLPs Glorot-uniform with zero biases, Λ all-ones, W
    /// identity plus uniform noise of half-width 0.01.
    pub fn init(num_users: usize, num_items: usize, dim: usize, num_layers: usize, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
        let user_embed = embed_init(num_users, dim, &mut rng);
        let item_embed = embed_init(num_items, dim, &mut rng);
        let mlp1 = Mlp::init(dim, dim, dim, &mut rng);
        let mlp2 = Mlp::init(dim, dim, dim, &mut rng);
        let mlp_final = Mlp::init(2 * dim, dim, dim, &mut rng);
        let mut wave_transforms = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let mut w = Array2::from_shape_fn((dim, dim), |_| rng.random_range(-0.01..0.01));
            for i in 0..dim {
                w[(i, i)] += 1.0;
            }
            wave_transforms.push(w);
        }
        WaveHdnnParams {
            user_embed,
            item_embed,
            mlp1,
            mlp2,
            mlp_final,
            wave_filters_user: (0..num_layers).map(|_| Array2::ones((num_users, 1))).collect(),
            wave_filters_item: (0..num_layers).map(|_| Array2::ones((num_items, 1))).collect(),
            wave_transforms,
            num_layers,
            dim,
        }
    }

    /// All-zero trainable weights (embeddings kept, Λ = 1): reduces both
    /// encoders to identity maps. Test scaffolding for the residual
    /// pass-through contract.
    pub fn zero_weights(&mut self) {
        let d = self.dim;
        self.mlp1 = Mlp::zeroed(d, d, d);
        self.mlp2 = Mlp::zeroed(d, d, d);
        self.mlp_final = Mlp::zeroed(2 * d, d, d);
        for w in &mut self.wave_transforms {
            w.fill(0.0);
        }
        for f in &mut self.wave_filters_user {
            f.fill(1.0);
        }
        for f in &mut self.wave_filters_item {
            f.fill(1.0);
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_embed.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embed.nrows()
    }

    /// Named tensors in the canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("user_embed".into(), &self.user_embed),
            ("item_embed".into(), &self.item_embed),
        ];
        for (prefix, mlp) in [
            ("mlp1", &self.mlp1),
            ("mlp2", &self.mlp2),
            ("mlp_final", &self.mlp_final),
        ] {
            out.push((format!("{prefix}.w1"), &mlp.w1));
            out.push((format!("{prefix}.b1"), &mlp.b1));
            out.push((format!("{prefix}.w2"), &mlp.w2));
            out.push((format!("{prefix}.b2"), &mlp.b2));
        }
        for l in 0..self.num_layers {
            out.push((format!("wave_filter_user.{l}"), &self.wave_filters_user[l]));
            out.push((format!("wave_filter_item.{l}"), &self.wave_filters_item[l]));
            out.push((format!("wave_transform.{l}"), &self.wave_transforms[l]));
        }
        out
    }

    /// Mutable access to a tensor by canonical name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        let mlp_field = |mlp: &mut Mlp, field: &str| -> Option<*mut Array2<f64>> {
            match field {
                "w1" => Some(&mut mlp.w1 as *mut _),
                "b1" => Some(&mut mlp.b1 as *mut _),
                "w2" => Some(&mut mlp.w2 as *mut _),
                "b2" => Some(&mut mlp.b2 as *mut _),
                _ => None,
            }
        };
        let ptr: Option<*mut Array2<f64>> = match name {
            "user_embed" => Some(&mut self.user_embed as *mut _),
            "item_embed" => Some(&mut self.item_embed as *mut _),
            _ => {
                if let Some((prefix, rest)) = name.split_once('.') {
                    match prefix {
                        "mlp1" => mlp_field(&mut self.mlp1, rest),
                        "mlp2" => mlp_field(&mut self.mlp2, rest),
                        "mlp_final" => mlp_field(&mut self.mlp_final, rest),
                        "wave_filter_user" => rest
                            .parse::<usize>()
                            .ok()
                            .and_then(|l| self.wave_filters_user.get_mut(l))
                            .map(|a| a as *mut _),
                        "wave_filter_item" => rest
                            .parse::<usize>()
                            .ok()
                            .and_then(|l| self.wave_filters_item.get_mut(l))
                            .map(|a| a as *mut _),
                        "wave_transform" => rest
                            .parse::<usize>()
                            .ok()
                            .and_then(|l| self.wave_transforms.get_mut(l))
                            .map(|a| a as *mut _),
                        _ => None,
                    }
                } else {
                    None
                }
            }
        };
        // Single mutable borrow routed through a raw pointer to satisfy the
        // borrow checker across match arms.
        ptr.map(|p| unsafe { &mut *p })
    }
}

/// LightGCN trainable state: embedding tables only.
#[derive(Debug, Clone, PartialEq)]
pub struct LightGcnParams {
    pub user_embed: Array2<f64>,
    pub item_embed: Array2<f64>,
    pub num_layers: usize,
    pub dim: usize,
}

impl LightGcnParams {
    /// Same embedding initializer (and seed stream) as WaveHDNN for
    /// comparable starts.
    pub fn init(num_users: usize, num_items: usize, dim: usize, num_layers: usize, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
        LightGcnParams {
            user_embed: embed_init(num_users, dim, &mut rng),
            item_embed: embed_init(num_items, dim, &mut rng),
            num_layers,
            dim,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![
            ("user_embed".into(), &self.user_embed),
            ("item_embed".into(), &self.item_embed),
        ]
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        match name {
            "user_embed" => Some(&mut self.user_embed),
            "item_embed" => Some(&mut self.item_embed),
            _ => None,
        }
    }
}

/// Tape handles for one MLP.
#[derive(Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for the heterophily channel's MLPs.
#[derive(Clone, Copy)]
pub struct HetVars {
    pub mlp1: MlpVars,
    pub mlp2: MlpVars,
    pub mlp_final: MlpVars,
}

/// Tape handles for the wavelet channel's filters and transforms.
#[derive(Clone)]
pub struct WaveVars {
    pub filters_user: Vec<Var>,
    pub filters_item: Vec<Var>,
    pub transforms: Vec<Var>,
}

/// All parameter leaves inserted on a tape for one forward/backward pass.
pub struct WaveHdnnVars {
    pub user_embed: Var,
    pub item_embed: Var,
    pub het: Option<HetVars>,
    pub wave: Option<WaveVars>,
    /// Active tensors in canonical order, for gradient collection.
    pub registry: Vec<(String, Var)>,
}

/// Insert parameter leaves on `tape`, skipping channels disabled by the
/// ablation so their tensors never appear in gradients or logs.
pub fn insert_params(
    tape: &Tape,
    params: &WaveHdnnParams,
    ablation: Ablation,
    trainable: bool,
) -> WaveHdnnVars {
    let mut registry = Vec::new();
    let mut leaf = |name: String, value: &Array2<f64>| -> Var {
        let v = tape.leaf(value.clone(), trainable);
        registry.push((name, v));
        v
    };

    let user_embed = leaf("user_embed".into(), &params.user_embed);
    let item_embed = leaf("item_embed".into(), &params.item_embed);

    let het = if ablation.uses_het() {
        let mut mlp = |prefix: &str, m: &Mlp| MlpVars {
            w1: leaf(format!("{prefix}.w1"), &m.w1),
            b1: leaf(format!("{prefix}.b1"), &m.b1),
            w2: leaf(format!("{prefix}.w2"), &m.w2),
            b2: leaf(format!("{prefix}.b2"), &m.b2),
        };
        Some(HetVars {
            mlp1: mlp("mlp1", &params.mlp1),
            mlp2: mlp("mlp2", &params.mlp2),
            mlp_final: mlp("mlp_final", &params.mlp_final),
        })
    } else {
        None
    };

    let wave = if ablation.uses_wave() {
        let mut filters_user = Vec::new();
        let mut filters_item = Vec::new();
        let mut transforms = Vec::new();
        for l in 0..params.num_layers {
            filters_user.push(leaf(
                format!("wave_filter_user.{l}"),
                &params.wave_filters_user[l],
            ));
            filters_item.push(leaf(
                format!("wave_filter_item.{l}"),
                &params.wave_filters_item[l],
            ));
            transforms.push(leaf(
                format!("wave_transform.{l}"),
                &params.wave_transforms[l],
            ));
        }
        Some(WaveVars {
            filters_user,
            filters_item,
            transforms,
        })
    } else {
        None
    };

    WaveHdnnVars {
        user_embed,
        item_embed,
        het,
        wave,
        registry,
    }
}

impl WaveHdnnVars {
    /// Rebuild the handle structure from leaves laid out in the canonical
    /// insertion order (the order [`insert_params`] and
    /// [`WaveHdnnParams::tensors`] use). Lets gradient checkers hand back
    /// an ordered `Var` slice.
    pub fn from_ordered(vars: &[Var], num_layers: usize, ablation: Ablation) -> Result<WaveHdnnVars> {
        let expected =
            2 + if ablation.uses_het() { 12 } else { 0 }
                + if ablation.uses_wave() { 3 * num_layers } else { 0 };
        if vars.len() != expected {
            return Err(Error::ContractViolation(format!(
                "from_ordered: {} vars, expected {expected}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let user_embed = next();
        let item_embed = next();
        let het = ablation.uses_het().then(|| {
            let mut mlp = || MlpVars {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            };
            HetVars {
                mlp1: mlp(),
                mlp2: mlp(),
                mlp_final: mlp(),
            }
        });
        let wave = ablation.uses_wave().then(|| {
            let mut filters_user = Vec::with_capacity(num_layers);
            let mut filters_item = Vec::with_capacity(num_layers);
            let mut transforms = Vec::with_capacity(num_layers);
            for _ in 0..num_layers {
                filters_user.push(next());
                filters_item.push(next());
                transforms.push(next());
            }
            WaveVars {
                filters_user,
                filters_item,
                transforms,
            }
        });
        Ok(WaveHdnnVars {
            user_embed,
            item_embed,
            het,
            wave,
            registry: Vec::new(),
        })
    }
}

/// Which encoder produced a [`ChannelVars`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Heterophily,
    Wavelet,
}

/// Per-layer snapshots plus layer-mean finals for one channel.
pub struct ChannelVars {
    pub channel: Channel,
    /// L+1 snapshots, layer 0 = input embeddings.
    pub user_layers: Vec<Var>,
    pub item_layers: Vec<Var>,
    pub user_final: Var,
    pub item_final: Var,
}

/// Two-layer MLP forward: relu hidden, identity output.
pub fn mlp_forward(tape: &Tape, mlp: &MlpVars, x: Var) -> Result<Var> {
    let h = tape.matmul(x, mlp.w1)?;
    let h = tape.add_row_broadcast(h, mlp.b1)?;
    let h = tape.relu(h)?;
    let out = tape.matmul(h, mlp.w2)?;
    tape.add_row_broadcast(out, mlp.b2)
}

fn mean_of_vars(tape: &Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    tape.scale(acc, 1.0 / vars.len() as f64)
}

/// Heterophily-aware collaborative encoder on the user-side view (nodes =
/// users, hyperedges = items), producing both tables per layer.
///
/// Per layer: item update `X_i ← LN(D_e⁻¹ Hᵀ MLP₁(X_u)) + X_i`, then user
/// update `X_u ← LN(D_v⁻¹ H MLP₂(X_i)) + X_u`. The layer-L snapshot gets a
/// residual `mlp_final` refinement over the concatenation with layer 0.
pub fn het_encoder_forward(
    tape: &Tape,
    het: &HetVars,
    view: &HypergraphView,
    x_u: Var,
    x_i: Var,
    num_layers: usize,
) -> Result<ChannelVars> {
    let (num_users, _) = tape.shape(x_u);
    let (num_items, _) = tape.shape(x_i);
    let n2e = view.node_to_edge_map();
    let e2n = view.edge_to_node_map();

    let mut user_layers = vec![x_u];
    let mut item_layers = vec![x_i];
    let mut cur_u = x_u;
    let mut cur_i = x_i;
    for l in 0..num_layers {
        // Item (hyperedge) update.
        let ug = tape.gather_rows(cur_u, &view.node_ids)?;
        let mu = mlp_forward(tape, &het.mlp1, ug)?;
        let agg_e = tape.apply_linear(Arc::clone(&n2e) as Arc<dyn LinearMap>, mu)?;
        let ln_e = tape.row_layer_norm(agg_e, LN_EPS)?;
        let full_e = tape.scatter_add_rows(ln_e, &view.edge_ids, num_items)?;
        cur_i = tape.add(full_e, cur_i)?;

        // User (node) update from the freshly updated item table.
        let ig = tape.gather_rows(cur_i, &view.edge_ids)?;
        let mi = mlp_forward(tape, &het.mlp2, ig)?;
        let agg_n = tape.apply_linear(Arc::clone(&e2n) as Arc<dyn LinearMap>, mi)?;
        let ln_n = tape.row_layer_norm(agg_n, LN_EPS)?;
        let full_n = tape.scatter_add_rows(ln_n, &view.node_ids, num_users)?;
        cur_u = tape.add(full_n, cur_u)?;

        if l + 1 == num_layers {
            let cat_u = tape.concat_columns(cur_u, x_u)?;
            let upd_u = mlp_forward(tape, &het.mlp_final, cat_u)?;
            cur_u = tape.add(cur_u, upd_u)?;
            let cat_i = tape.concat_columns(cur_i, x_i)?;
            let upd_i = mlp_forward(tape, &het.mlp_final, cat_i)?;
            cur_i = tape.add(cur_i, upd_i)?;
        }
        user_layers.push(cur_u);
        item_layers.push(cur_i);
    }

    let user_final = mean_of_vars(tape, &user_layers)?;
    let item_final = mean_of_vars(tape, &item_layers)?;
    Ok(ChannelVars {
        channel: Channel::Heterophily,
        user_layers,
        item_layers,
        user_final,
        item_final,
    })
}

fn wave_side_layers(
    tape: &Tape,
    op: &Arc<WaveletOperator>,
    node_ids: &[usize],
    filters: &[Var],
    transforms: &[Var],
    x0: Var,
    num_layers: usize,
) -> Result<Vec<Var>> {
    let (full_rows, _) = tape.shape(x0);
    let forward_map = op.as_linear_map(Direction::Forward);
    let inverse_map = op.as_linear_map(Direction::Inverse);

    let mut layers = vec![x0];
    let mut cur = x0;
    for l in 0..num_layers {
        let xg = tape.gather_rows(cur, node_ids)?;
        let a = tape.apply_linear(Arc::clone(&inverse_map), xg)?;
        let lam = tape.gather_rows(filters[l], node_ids)?;
        let a = tape.scale_rows(a, lam)?;
        let a = tape.apply_linear(Arc::clone(&forward_map), a)?;
        let a = tape.matmul(a, transforms[l])?;
        let full = tape.scatter_add_rows(a, node_ids, full_rows)?;
        cur = tape.add(full, cur)?;
        layers.push(cur);
    }
    Ok(layers)
}

/// Multi-scale group-wise structure encoder: per side, per layer,
/// `X ← Θ · diag(Λ) · Θ′ · X · W + X` with Λ applied as row scaling between
/// the inverse and forward wavelet applications.
pub fn wave_encoder_forward(
    tape: &Tape,
    wave: &WaveVars,
    op_user: &Arc<WaveletOperator>,
    op_item: &Arc<WaveletOperator>,
    user_node_ids: &[usize],
    item_node_ids: &[usize],
    x_u: Var,
    x_i: Var,
    num_layers: usize,
) -> Result<ChannelVars> {
    let user_layers = wave_side_layers(
        tape,
        op_user,
        user_node_ids,
        &wave.filters_user,
        &wave.transforms,
        x_u,
        num_layers,
    )?;
    let item_layers = wave_side_layers(
        tape,
        op_item,
        item_node_ids,
        &wave.filters_item,
        &wave.transforms,
        x_i,
        num_layers,
    )?;
    let user_final = mean_of_vars(tape, &user_layers)?;
    let item_final = mean_of_vars(tape, &item_layers)?;
    Ok(ChannelVars {
        channel: Channel::Wavelet,
        user_layers,
        item_layers,
        user_final,
        item_final,
    })
}

/// Elementwise sum of the two channels' finals.
pub fn fuse(tape: &Tape, het: &ChannelVars, wave: &ChannelVars) -> Result<(Var, Var)> {
    let e_u = tape.add(het.user_final, wave.user_final)?;
    let e_i = tape.add(het.item_final, wave.item_final)?;
    Ok((e_u, e_i))
}

/// Preference scores for one user against every item: `E_u[user] · E_iᵀ`.
pub fn score_all(e_u: &Array2<f64>, e_i: &Array2<f64>, user: usize) -> Result<Vec<f64>> {
    if user >= e_u.nrows() {
        return Err(Error::ContractViolation(format!(
            "score_all: user {user} out of range ({} users)",
            e_u.nrows()
        )));
    }
    if e_u.ncols() != e_i.ncols() {
        return Err(Error::ShapeMismatch {
            op: "score_all",
            expected: format!("embedding dim {}", e_u.ncols()),
            got: format!("{}", e_i.ncols()),
        });
    }
    Ok(e_i.dot(&e_u.row(user)).to_vec())
}

/// Symmetrically normalized bipartite adjacency `D^{−1/2} A D^{−1/2}` over
/// the (|U|+|I|)-node graph induced by the train split. Zero-degree nodes
/// keep empty rows.
pub fn lightgcn_adjacency(ds: &crate::data::InteractionDataset) -> Result<SparseMatrix> {
    let n = ds.num_users + ds.num_items;
    let mut degree = vec![0usize; n];
    for &(u, i) in &ds.train {
        degree[u] += 1;
        degree[ds.num_users + i] += 1;
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(2 * ds.train.len());
    for &(u, i) in &ds.train {
        let (a, b) = (u, ds.num_users + i);
        let w = inv_sqrt[a] * inv_sqrt[b];
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// LightGCN propagation: `E^{(l+1)} = Â E^{(l)}`, final = mean of layers
/// 0..L, split back into user/item blocks.
pub fn lightgcn_forward(
    tape: &Tape,
    adjacency: &Arc<SparseMatrix>,
    x_u: Var,
    x_i: Var,
    num_layers: usize,
) -> Result<(Var, Var)> {
    let (num_users, _) = tape.shape(x_u);
    let (num_items, _) = tape.shape(x_i);
    let n = num_users + num_items;
    if adjacency.num_rows() != n {
        return Err(Error::ShapeMismatch {
            op: "lightgcn_forward",
            expected: format!("{n}x{n} adjacency"),
            got: format!("{}x{}", adjacency.num_rows(), adjacency.num_cols()),
        });
    }
    let user_ids: Vec<usize> = (0..num_users).collect();
    let item_ids: Vec<usize> = (num_users..n).collect();

    let su = tape.scatter_add_rows(x_u, &user_ids, n)?;
    let si = tape.scatter_add_rows(x_i, &item_ids, n)?;
    let mut cur = tape.add(su, si)?;
    let mut layers = vec![cur];
    for _ in 0..num_layers {
        cur = tape.apply_linear(Arc::clone(adjacency) as Arc<dyn LinearMap>, cur)?;
        layers.push(cur);
    }
    let final_e = mean_of_vars(tape, &layers)?;
    let e_u = tape.gather_rows(final_e, &user_ids)?;
    let e_i = tape.gather_rows(final_e, &item_ids)?;
    Ok((e_u, e_i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionDataset;
    use crate::hypergraph::build_views;
    use crate::spectral::{chebyshev_wavelet, exact_wavelet};
    use ndarray::array;

    fn toy_dataset() -> InteractionDataset {
        // 3 users, 2 items.
        InteractionDataset::from_splits(3, 2, vec![(0, 0), (0, 1), (1, 0), (2, 1)], vec![], vec![], 0)
    }

    fn build_ops(
        ds: &InteractionDataset,
        s: f64,
    ) -> (
        crate::hypergraph::HypergraphView,
        crate::hypergraph::HypergraphView,
        Arc<WaveletOperator>,
        Arc<WaveletOperator>,
    ) {
        let (user_view, item_view) = build_views(ds).unwrap();
        let lu = crate::hypergraph::normalized_laplacian(&user_view).unwrap();
        let li = crate::hypergraph::normalized_laplacian(&item_view).unwrap();
        let op_u = Arc::new(exact_wavelet(&lu, s).unwrap());
        let op_i = Arc::new(exact_wavelet(&li, s).unwrap());
        (user_view, item_view, op_u, op_i)
    }

    #[test]
    fn zero_layers_passes_inputs_through() {
        let ds = toy_dataset();
        let params = WaveHdnnParams::init(3, 2, 4, 0, 1);
        let (user_view, item_view, op_u, op_i) = build_ops(&ds, 1.0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, false);
        let het = het_encoder_forward(
            &tape,
            vars.het.as_ref().unwrap(),
            &user_view,
            vars.user_embed,
            vars.item_embed,
            0,
        )
        .unwrap();
        assert_eq!(tape.value(het.user_final), params.user_embed);
        assert_eq!(het.user_layers.len(), 1);
        let wave = wave_encoder_forward(
            &tape,
            vars.wave.as_ref().unwrap(),
            &op_u,
            &op_i,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            0,
        )
        .unwrap();
        assert_eq!(tape.value(wave.item_final), params.item_embed);
    }

    #[test]
    fn zero_weights_reduce_to_identity() {
        // With all trainable weights zeroed and Λ = 1, both encoders are
        // exact identity maps on the embeddings.
        let ds = toy_dataset();
        let mut params = WaveHdnnParams::init(3, 2, 4, 2, 3);
        params.zero_weights();
        let (user_view, item_view, op_u, op_i) = build_ops(&ds, 1.0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, false);
        let het = het_encoder_forward(
            &tape,
            vars.het.as_ref().unwrap(),
            &user_view,
            vars.user_embed,
            vars.item_embed,
            2,
        )
        .unwrap();
        for &layer in het.user_layers.iter().chain(&het.item_layers) {
            let v = tape.value(layer);
            let expected = if v.nrows() == 3 {
                &params.user_embed
            } else {
                &params.item_embed
            };
            assert_eq!(&v, expected);
        }
        // Finals are means of identical snapshots; the division rounds.
        let close = |a: &Array2<f64>, b: &Array2<f64>| {
            a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-15)
        };
        assert!(close(&tape.value(het.user_final), &params.user_embed));

        let wave = wave_encoder_forward(
            &tape,
            vars.wave.as_ref().unwrap(),
            &op_u,
            &op_i,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            2,
        )
        .unwrap();
        assert!(close(&tape.value(wave.user_final), &params.user_embed));
        assert!(close(&tape.value(wave.item_final), &params.item_embed));
    }

    #[test]
    fn het_layer_matches_straight_line_oracle() {
        // Hand-stepped evaluation of the two layer equations plus the final
        // refinement, written without any encoder machinery.
        let ds = toy_dataset();
        let params = WaveHdnnParams::init(3, 2, 4, 1, 0);
        let (user_view, _, _, _) = build_ops(&ds, 1.0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, false);
        let out = het_encoder_forward(
            &tape,
            vars.het.as_ref().unwrap(),
            &user_view,
            vars.user_embed,
            vars.item_embed,
            1,
        )
        .unwrap();

        // Oracle: straight-line ndarray arithmetic.
        let relu = |a: &Array2<f64>| a.mapv(|v| v.max(0.0));
        let mlp = |m: &Mlp, x: &Array2<f64>| -> Array2<f64> {
            let h = relu(&(x.dot(&m.w1) + &m.b1.row(0)));
            h.dot(&m.w2) + &m.b2.row(0)
        };
        let ln = |a: &Array2<f64>| -> Array2<f64> {
            let d = a.ncols() as f64;
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let mean = row.sum() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                row.mapv_inplace(|v| (v - mean) * inv);
            }
            out
        };
        let h = user_view.h.to_dense();
        let de = Array2::from_diag(&ndarray::Array1::from(
            user_view.edge_degrees.iter().map(|d| 1.0 / d).collect::<Vec<_>>(),
        ));
        let dv = Array2::from_diag(&ndarray::Array1::from(
            user_view.node_degrees.iter().map(|d| 1.0 / d).collect::<Vec<_>>(),
        ));
        let x_u0 = params.user_embed.clone();
        let x_i0 = params.item_embed.clone();
        let x_i1 = ln(&de.dot(&h.t().dot(&mlp(&params.mlp1, &x_u0)))) + &x_i0;
        let x_u1 = ln(&dv.dot(&h.dot(&mlp(&params.mlp2, &x_i1)))) + &x_u0;
        let cat_u = ndarray::concatenate(
            ndarray::Axis(1),
            &[x_u1.view(), x_u0.view()],
        )
        .unwrap();
        let final_u = &x_u1 + &mlp(&params.mlp_final, &cat_u);
        let cat_i = ndarray::concatenate(
            ndarray::Axis(1),
            &[x_i1.view(), x_i0.view()],
        )
        .unwrap();
        let final_i = &x_i1 + &mlp(&params.mlp_final, &cat_i);

        let got_u = tape.value(out.user_layers[1]);
        let got_i = tape.value(out.item_layers[1]);
        for (&a, &b) in got_u.iter().zip(final_u.iter()) {
            assert!((a - b).abs() < 1e-12, "user layer mismatch: {a} vs {b}");
        }
        for (&a, &b) in got_i.iter().zip(final_i.iter()) {
            assert!((a - b).abs() < 1e-12, "item layer mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn wave_layer_matches_two_node_hand_example() {
        // 2 nodes in 1 hyperedge at s = ln 2: Θ = [[.75,.25],[.25,.75]],
        // Θ′ = [[1.5,−.5],[−.5,1.5]]. With Λ = [2,1], W = I, X = I₂ the
        // layer output is Θ·diag(Λ)·Θ′ + I, worked out entrywise below.
        let ds = InteractionDataset::from_splits(2, 1, vec![(0, 0), (1, 0)], vec![], vec![], 0);
        let (user_view, item_view) = build_views(&ds).unwrap();
        let lu = crate::hypergraph::normalized_laplacian(&user_view).unwrap();
        let li = crate::hypergraph::normalized_laplacian(&item_view).unwrap();
        let op_u = Arc::new(exact_wavelet(&lu, std::f64::consts::LN_2).unwrap());
        let op_i = Arc::new(exact_wavelet(&li, std::f64::consts::LN_2).unwrap());

        let mut params = WaveHdnnParams::init(2, 1, 2, 1, 0);
        params.user_embed = Array2::eye(2);
        params.wave_filters_user[0] = array![[2.0], [1.0]];
        params.wave_transforms[0] = Array2::eye(2);

        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::NoHet, false);
        let out = wave_encoder_forward(
            &tape,
            vars.wave.as_ref().unwrap(),
            &op_u,
            &op_i,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            1,
        )
        .unwrap();
        let got = tape.value(out.user_layers[1]);
        let expected = array![[3.125, -0.375], [0.375, 1.875]];
        for (&a, &b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "got {got:?}");
        }
    }

    #[test]
    fn wave_identity_operator_doubles_with_identity_transform() {
        // s = 0 → Θ = Θ′ = I; Λ = 1, W = I → X^{(l+1)} = 2·X^{(l)}.
        let ds = toy_dataset();
        let mut params = WaveHdnnParams::init(3, 2, 3, 1, 0);
        for w in &mut params.wave_transforms {
            *w = Array2::eye(3);
        }
        let (user_view, item_view, op_u, op_i) = build_ops(&ds, 0.0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, false);
        let out = wave_encoder_forward(
            &tape,
            vars.wave.as_ref().unwrap(),
            &op_u,
            &op_i,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            1,
        )
        .unwrap();
        let got = tape.value(out.user_layers[1]);
        let expected = params.user_embed.mapv(|v| 2.0 * v);
        for (&a, &b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_is_elementwise_sum() {
        let ds = toy_dataset();
        let params = WaveHdnnParams::init(3, 2, 4, 1, 5);
        let (user_view, item_view, op_u, op_i) = build_ops(&ds, 1.0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, false);
        let het = het_encoder_forward(
            &tape,
            vars.het.as_ref().unwrap(),
            &user_view,
            vars.user_embed,
            vars.item_embed,
            1,
        )
        .unwrap();
        let wave = wave_encoder_forward(
            &tape,
            vars.wave.as_ref().unwrap(),
            &op_u,
            &op_i,
            &user_view.node_ids,
            &item_view.node_ids,
            vars.user_embed,
            vars.item_embed,
            1,
        )
        .unwrap();
        let (e_u, _) = fuse(&tape, &het, &wave).unwrap();
        let expected = tape.value(het.user_final) + tape.value(wave.user_final);
        assert_eq!(tape.value(e_u), expected);
    }

    #[test]
    fn score_all_is_a_dot_product() {
        let e_u = array![[2.0]];
        let e_i = array![[1.0], [3.0]];
        assert_eq!(score_all(&e_u, &e_i, 0).unwrap(), vec![2.0, 6.0]);
        assert!(score_all(&e_u, &e_i, 1).is_err());
        let zero = array![[0.0]];
        assert_eq!(score_all(&zero, &e_i, 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ranking_invariant_under_positive_rescaling() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let e_u = Array2::from_shape_fn((1, 6), |_| rng.random_range(-1.0..1.0));
        let e_i = Array2::from_shape_fn((30, 6), |_| rng.random_range(-1.0..1.0));
        let argmax = |scores: &[f64]| {
            scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let base = score_all(&e_u, &e_i, 0).unwrap();
        let scaled = score_all(&e_u.mapv(|v| 3.7 * v), &e_i, 0).unwrap();
        assert_eq!(argmax(&base), argmax(&scaled));
    }

    #[test]
    fn lightgcn_zero_layers_returns_embeddings() {
        let ds = toy_dataset();
        let params = LightGcnParams::init(3, 2, 4, 0, 2);
        let adj = Arc::new(lightgcn_adjacency(&ds).unwrap());
        let tape = Tape::new();
        let xu = tape.leaf(params.user_embed.clone(), false);
        let xi = tape.leaf(params.item_embed.clone(), false);
        let (e_u, e_i) = lightgcn_forward(&tape, &adj, xu, xi, 0).unwrap();
        assert_eq!(tape.value(e_u), params.user_embed);
        assert_eq!(tape.value(e_i), params.item_embed);
    }

    #[test]
    fn lightgcn_single_pair_swaps_embeddings() {
        // One user, one item: Â = [[0,1],[1,0]], so each layer swaps the two
        // embeddings with weight 1.
        let ds = InteractionDataset::from_splits(1, 1, vec![(0, 0)], vec![], vec![], 0);
        let adj = Arc::new(lightgcn_adjacency(&ds).unwrap());
        assert_eq!(adj.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        let tape = Tape::new();
        let xu = tape.leaf(array![[1.0, 2.0]], false);
        let xi = tape.leaf(array![[-3.0, 5.0]], false);
        let (e_u, e_i) = lightgcn_forward(&tape, &adj, xu, xi, 1).unwrap();
        // Mean of layer 0 and the swapped layer 1.
        assert_eq!(tape.value(e_u), array![[-1.0, 3.5]]);
        assert_eq!(tape.value(e_i), array![[-1.0, 3.5]]);
    }

    #[test]
    fn lightgcn_agrees_with_dense_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let ds = InteractionDataset::from_splits(
            4,
            4,
            vec![(0, 0), (0, 1), (1, 1), (2, 2), (3, 3), (3, 0)],
            vec![],
            vec![],
            0,
        );
        let adj = Arc::new(lightgcn_adjacency(&ds).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let xu = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let xi = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));

        let tape = Tape::new();
        let vu = tape.leaf(xu.clone(), false);
        let vi = tape.leaf(xi.clone(), false);
        let (e_u, e_i) = lightgcn_forward(&tape, &adj, vu, vi, 3).unwrap();

        // Dense oracle.
        let a = adj.to_dense();
        let mut e = Array2::zeros((8, 3));
        e.slice_mut(ndarray::s![..4, ..]).assign(&xu);
        e.slice_mut(ndarray::s![4.., ..]).assign(&xi);
        let mut sum = e.clone();
        let mut cur = e;
        for _ in 0..3 {
            cur = a.dot(&cur);
            sum += &cur;
        }
        let fin = sum.mapv(|v| v / 4.0);
        for (got, want) in tape.value(e_u).iter().zip(fin.slice(ndarray::s![..4, ..]).iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in tape.value(e_i).iter().zip(fin.slice(ndarray::s![4.., ..]).iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_consistency_of_encoders() {
        // Relabeling users permutes every user-indexed output identically.
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let ds = InteractionDataset::from_splits(
            5,
            4,
            vec![(0, 0), (0, 1), (1, 1), (2, 2), (3, 3), (3, 0), (4, 2), (4, 3)],
            vec![],
            vec![],
            0,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let ds_p = InteractionDataset::from_splits(
            5,
            4,
            ds.train.iter().map(|&(u, i)| (perm[u], i)).collect(),
            vec![],
            vec![],
            0,
        );

        let params = WaveHdnnParams::init(5, 4, 3, 2, 9);
        let mut params_p = params.clone();
        for u in 0..5 {
            params_p.user_embed.row_mut(perm[u]).assign(&params.user_embed.row(u));
            for l in 0..2 {
                params_p.wave_filters_user[l][(perm[u], 0)] = params.wave_filters_user[l][(u, 0)];
            }
        }

        let run = |ds: &InteractionDataset, params: &WaveHdnnParams| -> (Array2<f64>, Array2<f64>) {
            let (user_view, item_view) = build_views(ds).unwrap();
            let lu = crate::hypergraph::normalized_laplacian(&user_view).unwrap();
            let li = crate::hypergraph::normalized_laplacian(&item_view).unwrap();
            let op_u = Arc::new(chebyshev_wavelet(&Arc::new(lu), 1.0, 10).unwrap());
            let op_i = Arc::new(chebyshev_wavelet(&Arc::new(li), 1.0, 10).unwrap());
            let tape = Tape::new();
            let vars = insert_params(&tape, params, Ablation::Full, false);
            let het = het_encoder_forward(
                &tape,
                vars.het.as_ref().unwrap(),
                &user_view,
                vars.user_embed,
                vars.item_embed,
                2,
            )
            .unwrap();
            let wave = wave_encoder_forward(
                &tape,
                vars.wave.as_ref().unwrap(),
                &op_u,
                &op_i,
                &user_view.node_ids,
                &item_view.node_ids,
                vars.user_embed,
                vars.item_embed,
                2,
            )
            .unwrap();
            let (e_u, e_i) = fuse(&tape, &het, &wave).unwrap();
            (tape.value(e_u), tape.value(e_i))
        };

        let (e_u, e_i) = run(&ds, &params);
        let (e_u_p, e_i_p) = run(&ds_p, &params_p);
        for u in 0..5 {
            for j in 0..3 {
                let a = e_u[(u, j)];
                let b = e_u_p[(perm[u], j)];
                assert!((a - b).abs() < 1e-9, "user {u} dim {j}: {a} vs {b}");
            }
        }
        for (a, b) in e_i.iter().zip(e_i_p.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_registry_matches_canonical_order() {
        let params = WaveHdnnParams::init(3, 2, 4, 2, 0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, true);
        let names: Vec<String> = vars.registry.iter().map(|(n, _)| n.clone()).collect();
        let canonical: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, canonical);
        // Ablations drop the corresponding groups.
        let tape2 = Tape::new();
        let vars2 = insert_params(&tape2, &params, Ablation::NoWave, true);
        assert!(vars2
            .registry
            .iter()
            .all(|(n, _)| !n.starts_with("wave_")));
        let tape3 = Tape::new();
        let vars3 = insert_params(&tape3, &params, Ablation::NoHet, true);
        assert!(vars3.registry.iter().all(|(n, _)| !n.starts_with("mlp")));
    }

    #[test]
    fn from_ordered_matches_insert_layout() {
        let params = WaveHdnnParams::init(3, 2, 4, 2, 0);
        let tape = Tape::new();
        let vars = insert_params(&tape, &params, Ablation::Full, true);
        let ordered: Vec<Var> = vars.registry.iter().map(|(_, v)| *v).collect();
        let rebuilt = WaveHdnnVars::from_ordered(&ordered, 2, Ablation::Full).unwrap();
        assert_eq!(rebuilt.user_embed, vars.user_embed);
        assert_eq!(rebuilt.item_embed, vars.item_embed);
        assert_eq!(
            rebuilt.wave.as_ref().unwrap().transforms,
            vars.wave.as_ref().unwrap().transforms
        );
        assert_eq!(
            rebuilt.het.as_ref().unwrap().mlp_final.b2,
            vars.het.as_ref().unwrap().mlp_final.b2
        );
        assert!(WaveHdnnVars::from_ordered(&ordered[..5], 2, Ablation::Full).is_err());
    }

    #[test]
    fn tensor_mut_reaches_every_tensor() {
        let mut params = WaveHdnnParams::init(2, 2, 3, 2, 0);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for name in names {
            let t = params.tensor_mut(&name).expect("tensor accessible");
            t.fill(0.5);
        }
        for (_, t) in params.tensors() {
            assert!(t.iter().all(|&v| v == 0.5));
        }
    }
}
