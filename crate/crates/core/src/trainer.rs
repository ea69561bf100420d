//! Bilevel training.
//!
//! Each minibatch runs three phases, all evaluated at the current `Θ^t`:
//!
//! 1. `∇_Θ J_inner(Θ^t, β^t)` on the batch, fed to Adam for the embeddings
//!    (after Riemannian rescaling in hyperbolic space) and followed by projection.
//! 2. The proxy `Θ̃ = Θ^t − α∇_Θ J_inner(Θ^t, β^t)`, a plain gradient step.
//! 3. `∇_β J_outer(Θ̃(β))` on an independently drawn batch, fed to Adam for β.
//!
//! `β` enters `J_inner` only through `σ(β_v)·L_K(v)`, so the hypergradient is
//! `−α·σ′(β_v)·(n_v/B)·⟨∇_Θ L_K(v; Θ^t), ∇_Θ̃ J_outer(Θ̃)⟩` where `n_v` counts
//! occurrences of `v` as a positive item in the proxy batch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RegularizationMode, TrainingConfig};
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalTarget};
use crate::geometry::kernel;
use crate::model::{
    EmbeddingLookup, EmbeddingTable, GradSink, Gradients, ModelParameters, NeighborSet, Objective,
    Overlay, Regularization, Shape, Space, SparseGradients, Table, Triple,
};
use crate::scalar::{norm_sq, sigmoid, Scalar};

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// First/second-moment accumulators and a shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    slots: Vec<AdamState<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    /// One moment slot per entry of `sizes`.
    pub fn new(lr: T, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            slots: sizes
                .iter()
                .map(|&n| AdamState {
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                })
                .collect(),
        }
    }

    pub fn for_embeddings(lr: T, params: &ModelParameters<T>) -> Self {
        let sizes: Vec<usize> = Table::ALL
            .iter()
            .map(|&t| params.table(t).as_slice().len())
            .collect();
        Self::new(lr, &sizes)
    }

    pub fn for_beta(lr: T, n_items: usize) -> Self {
        Self::new(lr, &[n_items])
    }

    /// Advances the step counter; call once per optimizer step before [`Self::apply`].
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected Adam update of slot `slot`.
    pub fn apply(&mut self, slot: usize, params: &mut [T], grads: &[T]) {
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let s = &mut self.slots[slot];
        for i in 0..params.len() {
            let g = grads[i];
            s.m[i] = b1 * s.m[i] + (T::one() - b1) * g;
            s.v[i] = b2 * s.v[i] + (T::one() - b2) * g * g;
            let mhat = s.m[i] / c1;
            let vhat = s.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Loss of one batch, split by term. `kg` is the weighted KG contribution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss<T> {
    pub total: T,
    pub bpr: T,
    pub kg: T,
    pub decay: T,
    /// Number of `L_K` evaluations performed.
    pub kg_evaluations: usize,
}

/// Read-only pieces shared by every step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a, T> {
    pub neighbors: &'a NeighborSet,
    pub mode: Regularization<T>,
    pub weight_decay: T,
    /// Proxy step size α.
    pub proxy_lr: T,
}

impl<'a, T: Scalar> StepContext<'a, T> {
    pub fn from_config(cfg: &TrainingConfig, neighbors: &'a NeighborSet) -> Self {
        Self {
            neighbors,
            mode: cfg.regularization(),
            weight_decay: T::lit(cfg.weight_decay),
            proxy_lr: T::lit(cfg.proxy_step()),
        }
    }
}

fn objective<'a, T: Scalar>(params: &ModelParameters<T>, ctx: &StepContext<'a, T>) -> Objective<'a, T> {
    params.objective(ctx.neighbors)
}

fn empty_grads<T: Scalar>(shape: Shape) -> Gradients<T> {
    Gradients::for_params(&ModelParameters {
        curvature: T::one(),
        space: Space::Hyperbolic,
        aggregation: crate::model::Aggregation::Attention,
        n_items: shape.items,
        users: EmbeddingTable::zeros(shape.users, shape.dim),
        entities: EmbeddingTable::zeros(shape.entities, shape.dim),
        relations: EmbeddingTable::zeros(shape.relations, shape.dim),
        beta: Vec::new(),
    })
}

/// `J_inner` on a batch and its Euclidean gradient:
/// mean combined loss plus `λ·Σ‖θ‖²` over the rows the batch touches.
pub fn inner_gradient<T: Scalar, L: EmbeddingLookup<T>>(
    lookup: &L,
    shape: Shape,
    obj: &Objective<'_, T>,
    beta: &[T],
    batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<(BatchLoss<T>, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grads = empty_grads(shape);
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut loss = BatchLoss::<T>::default();
    for &t in batch {
        let (lr, lk) = obj.combined_grad(lookup, beta, t, ctx.mode, scale, &mut grads)?;
        if obj.kg_weight::<L>(beta, ctx.mode, t.pos).is_some() {
            loss.kg_evaluations += 1;
        }
        loss.bpr += lr * scale;
        loss.kg += lk * scale;
    }
    if ctx.weight_decay > T::zero() {
        let touched: Vec<(Table, usize)> = grads.touched_rows().collect();
        let two_l = T::lit(2.0) * ctx.weight_decay;
        let mut g = vec![T::zero(); shape.dim];
        for (table, id) in touched {
            let row = lookup.row(table, id);
            loss.decay += ctx.weight_decay * norm_sq(row);
            for (o, &x) in g.iter_mut().zip(row) {
                *o = two_l * x;
            }
            grads.accumulate(table, id, &g);
        }
    }
    loss.total = loss.bpr + loss.kg + loss.decay;
    if !grads.is_finite() || !loss.total.is_finite() {
        return Err(Error::NonFinite("inner gradient".into()));
    }
    Ok((loss, grads))
}

/// Applies one embedding update from a precomputed Euclidean gradient.
pub fn apply_inner_update<T: Scalar>(
    params: &mut ModelParameters<T>,
    opt: &mut OptimizerState<T>,
    mut grads: Gradients<T>,
) {
    let c = params.curvature;
    if params.space == Space::Hyperbolic {
        for table in Table::ALL {
            let rows = params.table(table).rows();
            for id in 0..rows {
                if !grads.is_touched(table, id) {
                    continue;
                }
                let s = kernel::riemannian_scale(params.table(table).row(id), c);
                for g in grads.table_mut(table).row_mut(id) {
                    *g *= s;
                }
            }
        }
    }
    opt.tick();
    for (slot, table) in Table::ALL.into_iter().enumerate() {
        opt.apply(slot, params.table_mut(table).as_mut_slice(), grads.table(table).as_slice());
    }
    params.project_all();
}

/// One optimizer step on the embeddings with β held fixed.
pub fn inner_step<T: Scalar>(
    params: &mut ModelParameters<T>,
    opt: &mut OptimizerState<T>,
    batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<BatchLoss<T>> {
    let obj = objective(params, ctx);
    let (loss, grads) = inner_gradient(params, params.shape(), &obj, &params.beta, batch, ctx)?;
    apply_inner_update(params, opt, grads);
    Ok(loss)
}

/// `Θ − α·g` on every touched row, projected; other rows are shared with `params`.
pub fn proxy_from_gradient<'p, T: Scalar>(
    params: &'p ModelParameters<T>,
    grads: &Gradients<T>,
    alpha: T,
) -> Overlay<'p, T> {
    let mut overlay = Overlay::new(params);
    let c = params.curvature;
    let touched: Vec<(Table, usize)> = grads.touched_rows().collect();
    for (table, id) in touched {
        let mut row: Vec<T> = params
            .row(table, id)
            .iter()
            .zip(grads.row(table, id))
            .map(|(&x, &g)| x - alpha * g)
            .collect();
        if params.space == Space::Hyperbolic {
            kernel::project(&mut row, c);
        }
        overlay.set(table, id, row);
    }
    overlay
}

/// The one-step proxy `Θ̃(β) = Θ − α∇_Θ J_inner(Θ, β)`. Stored parameters are untouched.
pub fn proxy_parameters<'p, T: Scalar>(
    params: &'p ModelParameters<T>,
    batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<Overlay<'p, T>> {
    let obj = objective(params, ctx);
    let (_, grads) = inner_gradient(params, params.shape(), &obj, &params.beta, batch, ctx)?;
    Ok(proxy_from_gradient(params, &grads, ctx.proxy_lr))
}

/// Mean BPR loss over a batch, the outer objective.
pub fn outer_objective<T: Scalar, L: EmbeddingLookup<T>>(
    lookup: &L,
    obj: &Objective<'_, T>,
    batch: &[Triple],
) -> Result<T> {
    let mut total = T::zero();
    for t in batch {
        total += obj.bpr_loss(lookup, t.user, t.pos, t.neg)?;
    }
    Ok(total / T::lit(batch.len() as f64))
}

/// `∂J_outer(Θ̃(β))/∂β` for every item, given the proxy built from `proxy_batch`.
pub fn hypergradient_with_proxy<T: Scalar>(
    params: &ModelParameters<T>,
    proxy: &Overlay<'_, T>,
    proxy_batch: &[Triple],
    outer_batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<Vec<T>> {
    let mut hg = vec![T::zero(); params.n_items];
    if ctx.mode != Regularization::Adaptive || ctx.proxy_lr == T::zero() {
        return Ok(hg);
    }
    if outer_batch.is_empty() || proxy_batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let obj = objective(params, ctx);
    let shape = params.shape();
    let mut g_outer = empty_grads(shape);
    let scale = T::one() / T::lit(outer_batch.len() as f64);
    for &t in outer_batch {
        obj.bpr_grad(proxy, t, scale, &mut g_outer)?;
    }
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for t in proxy_batch {
        if obj.neighbors.has_neighbors(t.pos) {
            *counts.entry(t.pos).or_default() += 1;
        }
    }
    let inv_b = T::one() / T::lit(proxy_batch.len() as f64);
    for (v, n) in counts {
        let mut g_kg = SparseGradients::new();
        obj.kg_grad(params, v, T::one(), &mut g_kg)?;
        let s = sigmoid(params.beta[v]);
        let dsig = s * (T::one() - s);
        hg[v] = -ctx.proxy_lr * dsig * T::lit(n as f64) * inv_b * g_kg.dot_dense(&g_outer);
    }
    if hg.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("hypergradient".into()));
    }
    Ok(hg)
}

/// `∂J_outer(Θ̃(β))/∂β`, building the proxy from `proxy_batch`.
pub fn hypergradient<T: Scalar>(
    params: &ModelParameters<T>,
    proxy_batch: &[Triple],
    outer_batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<Vec<T>> {
    let proxy = proxy_parameters(params, proxy_batch, ctx)?;
    hypergradient_with_proxy(params, &proxy, proxy_batch, outer_batch, ctx)
}

/// One optimizer step on β with the embeddings held fixed. Returns the hypergradient.
pub fn outer_step<T: Scalar>(
    params: &mut ModelParameters<T>,
    opt: &mut OptimizerState<T>,
    proxy_batch: &[Triple],
    outer_batch: &[Triple],
    ctx: &StepContext<'_, T>,
) -> Result<Vec<T>> {
    let hg = hypergradient(params, proxy_batch, outer_batch, ctx)?;
    apply_beta_update(params, opt, &hg);
    Ok(hg)
}

fn apply_beta_update<T: Scalar>(params: &mut ModelParameters<T>, opt: &mut OptimizerState<T>, hg: &[T]) {
    opt.tick();
    opt.apply(0, &mut params.beta, hg);
}

/// Uniform draw from the items outside the user's training set.
pub fn sample_negative<R: Rng + ?Sized>(rng: &mut R, user: usize, data: &InteractionDataset) -> Result<usize> {
    let seen = data
        .train
        .get(user)
        .ok_or(Error::UnknownId { kind: "user", id: user })?;
    let n = data.n_items;
    if seen.len() >= n {
        return Err(Error::Degenerate(format!("user {user} has interacted with every item")));
    }
    if seen.len() * 2 <= n {
        loop {
            let v = rng.gen_range(0..n);
            if seen.binary_search(&v).is_err() {
                return Ok(v);
            }
        }
    }
    // dense user: index into the complement
    let mut v = rng.gen_range(0..n - seen.len());
    for &s in seen {
        if s <= v {
            v += 1;
        } else {
            break;
        }
    }
    Ok(v)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub inner_loss: f64,
    pub mean_sigma_beta: f64,
    pub recall20: f64,
    pub ndcg20: f64,
    /// Mean weighted KG term per training example.
    pub kg_loss: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.inner_loss, self.mean_sigma_beta, self.recall20, self.ndcg20, self.kg_loss
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation NDCG@20, or the
    /// last epoch when no user has validation items.
    pub params: ModelParameters<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub kg_evaluations: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_triples<R: Rng>(
    rng: &mut R,
    pairs: &[(usize, usize)],
    data: &InteractionDataset,
    negatives: usize,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(pairs.len() * negatives);
    for &(user, pos) in pairs {
        for _ in 0..negatives {
            let neg = sample_negative(rng, user, data)?;
            out.push(Triple { user, pos, neg });
        }
    }
    Ok(out)
}

/// Table sizes and adjacency of the knowledge graph the model is trained with.
#[derive(Debug, Clone, Copy)]
pub struct GraphSizes<'a> {
    pub entities: usize,
    pub relations: usize,
    pub neighbors: &'a NeighborSet,
}

/// Runs the full bilevel procedure. `on_epoch` sees every record as it is produced.
pub fn train<T: Scalar>(
    data: &InteractionDataset,
    graph: GraphSizes<'_>,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let pairs = data.train_pairs();
    if pairs.is_empty() {
        return Err(Error::Degenerate("no training interactions".into()));
    }
    if graph.neighbors.n_items() != data.n_items {
        return Err(Error::InvalidInput("neighbor set does not match item count".into()));
    }
    graph.neighbors.validate(graph.relations, graph.entities)?;
    let shape = Shape {
        users: data.n_users,
        items: data.n_items,
        entities: graph.entities.max(data.n_items),
        relations: graph.relations,
        dim: cfg.dim,
    };
    let mut params = ModelParameters::<T>::init(
        shape,
        T::lit(cfg.curvature),
        cfg.space,
        cfg.aggregation,
        &mut rng_for(cfg.seed, 0),
    )?;
    let ctx = StepContext::from_config(cfg, graph.neighbors);
    let adaptive = cfg.mode == RegularizationMode::Adaptive;
    let mut opt_theta = OptimizerState::for_embeddings(T::lit(cfg.lr), &params);
    let mut opt_beta = OptimizerState::for_beta(T::lit(cfg.beta_lr), shape.items);
    let has_validation = data.validation.iter().any(|v| !v.is_empty());

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters<T>)> = None;
    let mut since_best = 0usize;
    let mut kg_evaluations = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, epoch as u64);
        let mut order = pairs.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut kg_sum = 0.0;
        let mut examples = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = sample_triples(&mut rng, chunk, data, cfg.negatives)?;
            let obj = params.objective(graph.neighbors);
            let (loss, grads) = inner_gradient(&params, shape, &obj, &params.beta, &batch, &ctx)?;
            kg_evaluations += loss.kg_evaluations;
            let hg = if adaptive {
                let outer_pairs: Vec<(usize, usize)> = (0..chunk.len())
                    .map(|_| pairs[rng.gen_range(0..pairs.len())])
                    .collect();
                let outer = sample_triples(&mut rng, &outer_pairs, data, cfg.negatives)?;
                let proxy = proxy_from_gradient(&params, &grads, ctx.proxy_lr);
                Some(hypergradient_with_proxy(&params, &proxy, &batch, &outer, &ctx)?)
            } else {
                None
            };
            apply_inner_update(&mut params, &mut opt_theta, grads);
            if let Some(hg) = hg {
                apply_beta_update(&mut params, &mut opt_beta, &hg);
            }
            let n = batch.len();
            loss_sum += loss.total.as_f64() * n as f64;
            kg_sum += loss.kg.as_f64() * n as f64;
            examples += n;
        }
        let mean_sigma_beta = if shape.items == 0 {
            0.0
        } else {
            params.beta.iter().map(|&b| sigmoid(b).as_f64()).sum::<f64>() / shape.items as f64
        };
        let (recall20, ndcg20) = if has_validation {
            let rep = evaluate(&params, data, &[20], EvalTarget::Validation)?;
            let m = rep.at(20).unwrap();
            (m.recall, m.ndcg)
        } else {
            (0.0, 0.0)
        };
        let rec = EpochRecord {
            epoch,
            inner_loss: loss_sum / examples as f64,
            mean_sigma_beta,
            recall20,
            ndcg20,
            kg_loss: kg_sum / examples as f64,
        };
        on_epoch(&rec);
        history.push(rec);
        if has_validation {
            let improved = best.as_ref().is_none_or(|b| ndcg20 > b.0);
            if improved {
                best = Some((ndcg20, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let last_epoch = history.last().map_or(0, |r| r.epoch);
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, last_epoch),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        kg_evaluations,
    })
}
