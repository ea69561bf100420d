//! Fixtures and oracle checks shared by the integration tests and the
//! acceptance harness.

#![allow(dead_code)]

use std::time::Instant;

use hyperrec::data::InteractionDataset;
use hyperrec::eval::{evaluate, fit_recall_at_k, EvalTarget};
use hyperrec::geometry::{
    ball_to_klein, einstein_midpoint, kernel, klein_to_ball, mobius_add, poincare_distance, BallPoint,
};
use hyperrec::model::{EmbeddingLookup, Gradients, ModelParameters, Objective, Shape, Table};
use hyperrec::trainer::{self, GraphSizes, StepContext};
use hyperrec::{Aggregation, NeighborSet, Regularization, RegularizationMode, Space, TrainingConfig, Triple};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction, radius uniform in `[0, max_frac/√c)`.
pub fn ball_point(rng: &mut ChaCha8Rng, d: usize, c: f64, max_frac: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = rng.gen_range(0.0..max_frac) / c.sqrt();
    v.iter_mut().for_each(|x| *x *= r / n);
    v
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Result of one acceptance check.
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

// ---------------------------------------------------------------- geometry

/// Gyrogroup identities, metric axioms, Klein round trip and midpoint
/// invariances on `samples` random draws for every `(c, d)` pair.
pub fn geometry_suite(samples: usize) -> Verdict {
    let start = Instant::now();
    let mut gyro: f64 = 0.0;
    let mut sym: f64 = 0.0;
    let mut tri_violations = 0usize;
    let mut zero_violations = 0usize;
    let mut klein: f64 = 0.0;
    let mut mid: f64 = 0.0;
    let mut outside = 0usize;
    for &c in &[0.5, 1.0, 2.0] {
        for &d in &[2usize, 8, 64] {
            let mut r = rng((c * 10.0) as u64 * 1000 + d as u64);
            for _ in 0..samples {
                let x = BallPoint::new(ball_point(&mut r, d, c, 0.95), c).unwrap();
                let y = BallPoint::new(ball_point(&mut r, d, c, 0.95), c).unwrap();
                let z = BallPoint::new(ball_point(&mut r, d, c, 0.95), c).unwrap();
                let o = BallPoint::origin(d);

                let a = mobius_add(&x, &o, c).unwrap();
                let b = mobius_add(&o, &x, c).unwrap();
                let inv = mobius_add(&x.neg(), &x, c).unwrap();
                gyro = gyro
                    .max(max_abs_diff(a.coords(), x.coords()))
                    .max(max_abs_diff(b.coords(), x.coords()))
                    .max(norm(inv.coords()));
                let s = mobius_add(&x, &y, c).unwrap();
                if c * norm(s.coords()).powi(2) >= 1.0 {
                    outside += 1;
                }

                let dxy = poincare_distance(&x, &y, c);
                let dyx = poincare_distance(&y, &x, c);
                sym = sym.max((dxy - dyx).abs());
                let dxz = poincare_distance(&x, &z, c);
                let dyz = poincare_distance(&y, &z, c);
                if dxz > dxy + dyz + 1e-9 {
                    tri_violations += 1;
                }
                if poincare_distance(&x, &x, c) != 0.0 || (x != y && dxy <= 0.0) {
                    zero_violations += 1;
                }

                let back = klein_to_ball(&ball_to_klein(&x, c).unwrap(), c).unwrap();
                klein = klein.max(max_abs_diff(back.coords(), x.coords()));

                let w: Vec<f64> = (0..3).map(|_| r.gen_range(0.1..2.0)).collect();
                let pts = [x.clone(), y.clone(), z.clone()];
                let m1 = einstein_midpoint(&pts, &w, c).unwrap();
                let scaled: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
                let m2 = einstein_midpoint(&pts, &scaled, c).unwrap();
                let single = einstein_midpoint(std::slice::from_ref(&x), &[w[0]], c).unwrap();
                let pair = einstein_midpoint(&[x.clone(), x.neg()], &[1.0, 1.0], c).unwrap();
                mid = mid
                    .max(max_abs_diff(m1.coords(), m2.coords()))
                    .max(max_abs_diff(single.coords(), x.coords()))
                    .max(norm(pair.coords()));
                if c * norm(m1.coords()).powi(2) >= 1.0 {
                    outside += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = gyro <= 1e-10
        && sym <= 1e-12
        && tri_violations == 0
        && zero_violations == 0
        && klein <= 1e-12
        && mid <= 1e-12
        && outside == 0
        && secs < 10.0;
    Verdict::new(
        pass,
        format!(
            "{} samples x 9 (c,d): gyro {gyro:.1e} (<=1e-10), symmetry {sym:.1e} (<=1e-12), triangle violations {tri_violations}, \
             identity violations {zero_violations}, klein {klein:.1e} (<=1e-12), midpoint {mid:.1e} (<=1e-12), \
             out-of-ball {outside}, {secs:.2}s (<10s)",
            samples
        ),
    )
}

// ---------------------------------------------------------------- gradients

/// A small random model: 2 users, 3 items, 6 further entities, 3 relations.
/// Item 0 has 1..=5 neighbors, item 1 has 1..=3.
pub struct GradInstance {
    pub params: ModelParameters<f64>,
    pub neighbors: NeighborSet,
    pub triple: Triple,
}

impl GradInstance {
    pub fn objective(&self) -> Objective<'_, f64> {
        self.params.objective(&self.neighbors)
    }
}

pub fn grad_instance(seed: u64, space: Space, aggregation: Aggregation) -> GradInstance {
    let mut r = rng(seed);
    let dim = r.gen_range(2..=8);
    let c = [0.5, 1.0, 2.0][r.gen_range(0..3)];
    let shape = Shape {
        users: 2,
        items: 3,
        entities: 9,
        relations: 3,
        dim,
    };
    let mut params = ModelParameters::init(shape, c, space, aggregation, &mut r).unwrap();
    for t in Table::ALL {
        for id in 0..params.table(t).rows() {
            let p = ball_point(&mut r, dim, c, 0.6);
            params.table_mut(t).row_mut(id).copy_from_slice(&p);
        }
    }
    for b in params.beta.iter_mut() {
        *b = r.gen_range(-2.0..2.0);
    }
    let mut pairs: Vec<(usize, usize)> = (0..3).flat_map(|rel| (3..9).map(move |t| (rel, t))).collect();
    pairs.shuffle(&mut r);
    let n0 = r.gen_range(1..=5);
    let n1 = r.gen_range(1..=3);
    let triples = pairs[..n0]
        .iter()
        .map(|&(rel, t)| (0, rel, t))
        .chain(pairs[n0..n0 + n1].iter().map(|&(rel, t)| (1, rel, t)));
    let neighbors = NeighborSet::from_triples(3, triples).unwrap();
    GradInstance {
        params,
        neighbors,
        triple: Triple { user: 0, pos: 0, neg: 1 },
    }
}

fn flatten(g: &Gradients<f64>) -> Vec<f64> {
    Table::ALL
        .iter()
        .flat_map(|&t| g.table(t).as_slice().to_vec())
        .collect()
}

/// Central differences of `f` with respect to every embedding coordinate.
pub fn fd_gradient(p: &ModelParameters<f64>, h: f64, f: impl Fn(&ModelParameters<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut q = p.clone();
    for t in Table::ALL {
        for i in 0..p.table(t).as_slice().len() {
            let x = p.table(t).as_slice()[i];
            q.table_mut(t).as_mut_slice()[i] = x + h;
            let fp = f(&q);
            q.table_mut(t).as_mut_slice()[i] = x - h;
            let fm = f(&q);
            q.table_mut(t).as_mut_slice()[i] = x;
            out.push((fp - fm) / (2.0 * h));
        }
    }
    out
}

pub const FD_STEP: f64 = 1e-6;

/// Worst relative error per differentiable quantity over `instances` draws.
pub struct GradientReport {
    pub distance: f64,
    pub attention: f64,
    pub neighborhood: f64,
    pub bpr: f64,
    pub kg: f64,
    pub combined: f64,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        [self.distance, self.attention, self.neighborhood, self.bpr, self.kg, self.combined]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn gradient_report(instances: u64, space: Space, aggregation: Aggregation) -> GradientReport {
    let mut rep = GradientReport {
        distance: 0.0,
        attention: 0.0,
        neighborhood: 0.0,
        bpr: 0.0,
        kg: 0.0,
        combined: 0.0,
    };
    let h = FD_STEP;
    for seed in 0..instances {
        let inst = grad_instance(seed, space, aggregation);
        let p = &inst.params;
        let obj = inst.objective();
        let nb = &inst.neighbors;

        // distance between two free points
        {
            let mut r = rng(10_000 + seed);
            let (c, d) = (p.curvature, p.dim());
            let x = ball_point(&mut r, d, c, 0.8);
            let y = ball_point(&mut r, d, c, 0.8);
            let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
            kernel::distance_vjp(&x, &y, c, 1.0, &mut gx, &mut gy);
            let mut fd = Vec::new();
            for which in 0..2 {
                for i in 0..d {
                    let (mut a, mut b) = (x.clone(), y.clone());
                    let (mut a2, mut b2) = (x.clone(), y.clone());
                    if which == 0 {
                        a[i] += h;
                        a2[i] -= h;
                    } else {
                        b[i] += h;
                        b2[i] -= h;
                    }
                    fd.push((kernel::distance(&a, &b, c) - kernel::distance(&a2, &b2, c)) / (2.0 * h));
                }
            }
            let an: Vec<f64> = gx.into_iter().chain(gy).collect();
            rep.distance = rep.distance.max(rel_err(&an, &fd));
        }

        // attention for every neighbor of item 0
        for &(rel, tail) in nb.of(0) {
            let mut g = Gradients::for_params(p);
            obj.attention_grad(p, 0, rel, tail, 1.0, &mut g).unwrap();
            let fd = fd_gradient(p, h, |q| obj.attention_score(q, 0, rel, tail).unwrap());
            rep.attention = rep.attention.max(rel_err(&flatten(&g), &fd));
        }

        // neighborhood representation against a random cotangent
        {
            let mut r = rng(20_000 + seed);
            let cot: Vec<f64> = (0..p.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut g = Gradients::for_params(p);
            obj.neighborhood_vjp(p, 0, &cot, &mut g).unwrap();
            let fd = fd_gradient(p, h, |q| {
                let n = obj.neighborhood_representation(q, 0).unwrap();
                n.iter().zip(&cot).map(|(a, b)| a * b).sum()
            });
            rep.neighborhood = rep.neighborhood.max(rel_err(&flatten(&g), &fd));
        }

        let t = inst.triple;
        {
            let mut g = Gradients::for_params(p);
            obj.bpr_grad(p, t, 1.0, &mut g).unwrap();
            let fd = fd_gradient(p, h, |q| obj.bpr_loss(q, t.user, t.pos, t.neg).unwrap());
            rep.bpr = rep.bpr.max(rel_err(&flatten(&g), &fd));
        }
        {
            let mut g = Gradients::for_params(p);
            obj.kg_grad(p, 0, 1.0, &mut g).unwrap();
            let fd = fd_gradient(p, h, |q| obj.kg_loss(q, 0).unwrap());
            rep.kg = rep.kg.max(rel_err(&flatten(&g), &fd));
        }
        for mode in [Regularization::Adaptive, Regularization::Fixed(0.3)] {
            let mut g = Gradients::for_params(p);
            obj.combined_grad(p, &p.beta, t, mode, 1.0, &mut g).unwrap();
            let fd = fd_gradient(p, h, |q| obj.combined_loss(q, &p.beta, t, mode).unwrap());
            rep.combined = rep.combined.max(rel_err(&flatten(&g), &fd));
        }
    }
    rep
}

// ---------------------------------------------------------------- hypergradient

/// 3 users, 5 items, 4 further entities, 2 relations, d = 4.
pub fn hyper_instance(seed: u64) -> (ModelParameters<f64>, NeighborSet) {
    let mut r = rng(seed);
    let shape = Shape {
        users: 3,
        items: 5,
        entities: 9,
        relations: 2,
        dim: 4,
    };
    let mut p = ModelParameters::init(shape, 1.0, Space::Hyperbolic, Aggregation::Attention, &mut r).unwrap();
    for t in Table::ALL {
        for id in 0..p.table(t).rows() {
            let v = ball_point(&mut r, 4, 1.0, 0.6);
            p.table_mut(t).row_mut(id).copy_from_slice(&v);
        }
    }
    for b in p.beta.iter_mut() {
        *b = r.gen_range(-1.0..1.0);
    }
    let nb = NeighborSet::from_triples(
        5,
        [(0, 0, 5), (0, 1, 6), (1, 0, 7), (1, 1, 5), (2, 1, 8), (2, 0, 6), (3, 0, 0), (4, 1, 7)],
    )
    .unwrap();
    (p, nb)
}

pub const HYPER_PROXY: [Triple; 4] = [
    Triple { user: 0, pos: 0, neg: 3 },
    Triple { user: 1, pos: 1, neg: 4 },
    Triple { user: 2, pos: 0, neg: 2 },
    Triple { user: 1, pos: 2, neg: 0 },
];
pub const HYPER_OUTER: [Triple; 3] = [
    Triple { user: 2, pos: 1, neg: 3 },
    Triple { user: 0, pos: 4, neg: 2 },
    Triple { user: 1, pos: 0, neg: 4 },
];

/// `J_outer(Θ̃(β))` evaluated from scratch.
pub fn composed_outer(p: &ModelParameters<f64>, proxy: &[Triple], outer: &[Triple], ctx: &StepContext<'_, f64>) -> f64 {
    let theta = trainer::proxy_parameters(p, proxy, ctx).unwrap();
    trainer::outer_objective(&theta, &p.objective(ctx.neighbors), outer).unwrap()
}

pub fn hyper_fd(p: &ModelParameters<f64>, item: usize, proxy: &[Triple], outer: &[Triple], ctx: &StepContext<'_, f64>) -> f64 {
    let h = 1e-5;
    let mut a = p.clone();
    a.beta[item] += h;
    let mut b = p.clone();
    b.beta[item] -= h;
    (composed_outer(&a, proxy, outer, ctx) - composed_outer(&b, proxy, outer, ctx)) / (2.0 * h)
}

pub fn hypergradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    let mut checked = 0;
    for seed in 0..5 {
        let (p, nb) = hyper_instance(seed);
        let ctx = StepContext {
            neighbors: &nb,
            mode: Regularization::Adaptive,
            weight_decay: 1e-3,
            proxy_lr: 0.5,
        };
        let mut q = p.clone();
        let mut opt = trainer::OptimizerState::for_beta(0.01, 5);
        let hg = trainer::outer_step(&mut q, &mut opt, &HYPER_PROXY, &HYPER_OUTER, &ctx).unwrap();
        for v in 0..5 {
            let fd = hyper_fd(&p, v, &HYPER_PROXY, &HYPER_OUTER, &ctx);
            let present = HYPER_PROXY.iter().any(|t| t.pos == v);
            if present {
                worst = worst.max((hg[v] - fd).abs() / hg[v].abs().max(fd.abs()));
                checked += 1;
            } else {
                zero_ok &= hg[v] == 0.0 && fd == 0.0 && q.beta[v] == p.beta[v];
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst < 1e-3 && zero_ok && secs < 30.0,
        format!("{checked} present items, max rel err {worst:.2e} (<1e-3); absent items exactly zero: {zero_ok}; {secs:.2}s (<30s)"),
    )
}

// ---------------------------------------------------------------- synthetic data

/// 50 users with 20 training items each, out of 100.
///
/// Items form 10 groups of 10 and each user trains on two random groups, so
/// a fit with a wide margin exists for a distance-ranked model (groups at the
/// vertices of a simplex, users at edge midpoints). Uniformly random sets do
/// not have one: users sharing an item are forced together, which caps
/// training AUC near 0.89 in any dimension.
pub fn overfit_dataset(seed: u64) -> InteractionDataset {
    let mut r = rng(seed);
    let groups: Vec<usize> = (0..10).collect();
    let train: Vec<Vec<usize>> = (0..50)
        .map(|_| {
            groups
                .choose_multiple(&mut r, 2)
                .flat_map(|&g| g * 10..(g + 1) * 10)
                .collect()
        })
        .collect();
    InteractionDataset::from_sets(100, train, vec![vec![]; 50], vec![vec![]; 50]).unwrap()
}

pub fn overfit_check() -> Verdict {
    let start = Instant::now();
    let data = overfit_dataset(4);
    let nb = NeighborSet::empty(100);
    let cfg = TrainingConfig {
        dim: 16,
        epochs: 300,
        batch_size: 250,
        lr: 0.02,
        weight_decay: 0.0,
        mode: RegularizationMode::Fixed,
        beta: 0.0,
        space: Space::Hyperbolic,
        seed: 4,
        ..TrainingConfig::default()
    };
    let g = GraphSizes {
        entities: 100,
        relations: 0,
        neighbors: &nb,
    };
    let mut reached = None;
    let out = trainer::train::<f64>(&data, g, &cfg, |_| {}).unwrap();
    let fit = fit_recall_at_k(&out.params, &data, 10).unwrap();
    if fit > 0.9 {
        reached = Some(out.history.len());
    }
    let capped = evaluate(&out.params, &data, &[10], EvalTarget::Train).unwrap().at(10).unwrap().recall;
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        reached.is_some() && secs < 300.0,
        format!(
            "training Recall@10 {fit:.4} (>0.9) after {} epochs; all-items Recall@10 {capped:.4} (ceiling 10/20 = 0.5); {secs:.1}s (<300s)",
            out.history.len()
        ),
    )
}

/// Items in clusters, users loyal to one cluster, and long-tail items whose
/// only link to their cluster is the knowledge graph.
///
/// Per cluster: 10 users, 12 head items, 6 tail items and one cluster entity.
/// Each user trains on `head_train` head items of its cluster. With
/// [`Held::Tail`] it is tested on 3 tail items of its cluster, otherwise on 3
/// of its remaining head items. Each tail item has a single training
/// interaction with a user from another cluster. Every item links to its
/// cluster entity through relation 0 and to `noise` random entities from a
/// shared pool through relation 1.
pub struct Clustered {
    pub data: InteractionDataset,
    pub neighbors: NeighborSet,
    pub entities: usize,
    pub relations: usize,
}

pub const CLUSTERS: usize = 5;
const USERS_PER: usize = 10;
const HEAD_PER: usize = 12;
const TAIL_PER: usize = 6;
const NOISE_POOL: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Held {
    Tail,
    Head,
}

pub fn clustered(seed: u64, noise: usize, held: Held, head_train: usize) -> Clustered {
    let mut r = rng(1_000 + seed);
    let n_users = CLUSTERS * USERS_PER;
    let n_head = CLUSTERS * HEAD_PER;
    let n_items = n_head + CLUSTERS * TAIL_PER;
    let head = |c: usize| (c * HEAD_PER..(c + 1) * HEAD_PER).collect::<Vec<_>>();
    let tail = |c: usize| (n_head + c * TAIL_PER..n_head + (c + 1) * TAIL_PER).collect::<Vec<_>>();
    let cluster_entity = |c: usize| n_items + c;
    let noise_entity = |k: usize| n_items + CLUSTERS + k;

    let mut train = vec![Vec::new(); n_users];
    let mut test = vec![Vec::new(); n_users];
    for c in 0..CLUSTERS {
        for u in c * USERS_PER..(c + 1) * USERS_PER {
            let mut h = head(c);
            h.shuffle(&mut r);
            train[u] = h[..head_train].to_vec();
            test[u] = match held {
                Held::Tail => tail(c).choose_multiple(&mut r, 3).copied().collect(),
                Held::Head => h[head_train..head_train + 3].to_vec(),
            };
        }
        for v in tail(c) {
            let other = (c + r.gen_range(1..CLUSTERS)) % CLUSTERS;
            let u = other * USERS_PER + r.gen_range(0..USERS_PER);
            train[u].push(v);
        }
    }
    let mut triples = Vec::new();
    for v in 0..n_items {
        let c = if v < n_head { v / HEAD_PER } else { (v - n_head) / TAIL_PER };
        triples.push((v, 0, cluster_entity(c)));
        let pool: Vec<usize> = (0..NOISE_POOL).collect();
        for &k in pool.choose_multiple(&mut r, noise) {
            triples.push((v, 1, noise_entity(k)));
        }
    }
    Clustered {
        data: InteractionDataset::from_sets(n_items, train, vec![vec![]; n_users], test).unwrap(),
        neighbors: NeighborSet::from_triples(n_items, triples).unwrap(),
        entities: n_items + CLUSTERS + NOISE_POOL,
        relations: 2,
    }
}

pub fn clustered_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        dim: 16,
        epochs: 60,
        batch_size: 64,
        lr: 0.02,
        beta_lr: 0.05,
        weight_decay: 1e-5,
        seed,
        patience: 0,
        ..TrainingConfig::default()
    }
}

/// Test NDCG@10 after training on `set` with `cfg`.
pub fn test_ndcg10(set: &Clustered, cfg: &TrainingConfig) -> f64 {
    let g = GraphSizes {
        entities: set.entities,
        relations: set.relations,
        neighbors: &set.neighbors,
    };
    let out = trainer::train::<f64>(&set.data, g, cfg, |_| {}).unwrap();
    evaluate(&out.params, &set.data, &[10], EvalTarget::Test { exclude_validation: true })
        .unwrap()
        .at(10)
        .unwrap()
        .ndcg
}

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn kg_transfer_check() -> Verdict {
    let start = Instant::now();
    let (mut adaptive, mut plain) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let set = clustered(seed, 0, Held::Tail, 8);
        let cfg = clustered_config(seed);
        adaptive.push(test_ndcg10(&set, &cfg));
        plain.push(test_ndcg10(
            &set,
            &TrainingConfig {
                mode: RegularizationMode::Fixed,
                beta: 0.0,
                ..cfg
            },
        ));
    }
    let (a, b) = (mean(&adaptive), mean(&plain));
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        a > b && secs < 600.0,
        format!("mean test NDCG@10 adaptive {a:.4} > no-KG {b:.4} over {} seeds; {secs:.1}s (<600s)", SEEDS.len()),
    )
}

pub fn attention_check() -> Verdict {
    let start = Instant::now();
    let (mut att, mut avg) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let set = clustered(seed, 4, Held::Head, 4);
        let cfg = clustered_config(seed);
        att.push(test_ndcg10(&set, &cfg));
        avg.push(test_ndcg10(
            &set,
            &TrainingConfig {
                aggregation: Aggregation::Average,
                ..cfg
            },
        ));
    }
    let (a, b) = (mean(&att), mean(&avg));
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        a >= b,
        format!("mean test NDCG@10 attention {a:.4} >= average {b:.4} over {} seeds; {secs:.1}s", SEEDS.len()),
    )
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- metrics

/// Three users and ten items on the positive x-axis at `0.05·(i + 1)`.
/// Users sit at 0, 0.5 and 0.25, so every ranking follows from
/// `|atanh(x_v) − atanh(x_u)|` along that geodesic.
pub fn metric_fixture() -> (ModelParameters<f64>, InteractionDataset) {
    let items: Vec<f64> = (0..10).flat_map(|i| [0.05 * (i + 1) as f64, 0.0]).collect();
    let users = vec![0.0, 0.0, 0.5, 0.0, 0.25, 0.0];
    let p = ModelParameters {
        curvature: 1.0,
        space: Space::Hyperbolic,
        aggregation: Aggregation::Attention,
        n_items: 10,
        users: hyperrec::model::EmbeddingTable::from_data(2, users).unwrap(),
        entities: hyperrec::model::EmbeddingTable::from_data(2, items).unwrap(),
        relations: hyperrec::model::EmbeddingTable::zeros(0, 2),
        beta: vec![0.0; 10],
    };
    let data = InteractionDataset::from_sets(
        10,
        vec![vec![0, 2], vec![9], vec![4]],
        vec![vec![], vec![7], vec![]],
        vec![vec![1, 5, 9], vec![6], vec![5, 0]],
    )
    .unwrap();
    (p, data)
}

/// Per-K `(recall, ndcg)` worked out by hand for [`metric_fixture`] with
/// validation items excluded.
///
/// user 0 order 1 3 4 5 6 ..., test {1, 5, 9}
/// user 1 order 8 6 5 ..., test {6}
/// user 2 order 3 5 2 6 1 ..., test {5, 0}
pub fn metric_fixture_expected(k: usize) -> (f64, f64) {
    let l = |i: f64| 1.0 / (i + 1.0).log2();
    match k {
        1 => ((1.0 / 3.0 + 0.0 + 0.0) / 3.0, (1.0 + 0.0 + 0.0) / 3.0),
        3 => (
            (1.0 / 3.0 + 1.0 + 0.5) / 3.0,
            (1.0 / (l(1.0) + l(2.0) + l(3.0)) + l(2.0) + l(2.0) / (l(1.0) + l(2.0))) / 3.0,
        ),
        5 => (
            (2.0 / 3.0 + 1.0 + 0.5) / 3.0,
            ((l(1.0) + l(4.0)) / (l(1.0) + l(2.0) + l(3.0)) + l(2.0) + l(2.0) / (l(1.0) + l(2.0))) / 3.0,
        ),
        _ => unreachable!(),
    }
}

pub fn metric_check() -> Verdict {
    let (p, data) = metric_fixture();
    let rep = evaluate(&p, &data, &[1, 3, 5], EvalTarget::Test { exclude_validation: true }).unwrap();
    let mut worst: f64 = 0.0;
    for k in [1, 3, 5] {
        let (r, n) = metric_fixture_expected(k);
        let m = rep.at(k).unwrap();
        worst = worst.max((m.recall - r).abs()).max((m.ndcg - n).abs());
    }
    let single = hyperrec::eval::ndcg_at_k(&[3, 7], &[7], 2);
    let canonical = (single - 2f64.log2() / 3f64.log2()).abs();
    Verdict::new(
        worst <= 1e-12 && canonical <= 1e-12,
        format!("fixture max error {worst:.1e}, single hit at rank 2 error {canonical:.1e} (<=1e-12)"),
    )
}

// ---------------------------------------------------------------- cli fixtures

/// Writes a small interaction and triple file pair into `dir`.
/// Original ids are offset so densification is exercised.
pub fn write_cli_fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut r = rng(77);
    let mut pairs = Vec::new();
    for u in 0..12u64 {
        let n = r.gen_range(4..9);
        for v in (0..20u64).collect::<Vec<_>>().choose_multiple(&mut r, n) {
            pairs.push((100 + u, 1000 + v));
        }
    }
    let mut triples = Vec::new();
    for v in 0..20u64 {
        triples.push((1000 + v, 0, 5000 + v % 4));
        triples.push((1000 + v, 1, 6000 + v % 3));
    }
    triples.push((5000, 2, 7000));
    triples.push((7000, 2, 7001));
    let inter = dir.join("interactions.tsv");
    let trip = dir.join("triples.tsv");
    hyperrec::data::write_interactions(&inter, &pairs).unwrap();
    hyperrec::data::write_triples(&trip, &triples).unwrap();
    (inter, trip)
}

pub const CLI_CONFIG: &str = "dim = 4\nepochs = 4\nbatch_size = 16\nlr = 0.05\npatience = 0\n";
