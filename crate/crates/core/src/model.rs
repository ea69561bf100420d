//! Learnable parameters and the losses built on them.
//!
//! Items share the entity table: item `v` is entity row `v` for
//! `v < n_items`. Every loss has a `*_grad` twin that returns the same value
//! and accumulates the exact gradient into a [`GradSink`].

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::scalar::{norm_sq, sigmoid, softplus, Scalar};

/// Distance and addition used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Hyperbolic,
    Euclidean,
}

/// How neighbor entities are pooled into the neighborhood representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Attention,
    Average,
}

/// Weight applied to the knowledge-graph loss of each positive item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization<T> {
    /// One global coefficient.
    Fixed(T),
    /// Per-item `σ(β_v)` read from the parameters.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    User,
    Entity,
    Relation,
}

impl Table {
    pub const ALL: [Table; 3] = [Table::User, Table::Entity, Table::Relation];

    fn kind(self) -> &'static str {
        match self {
            Table::User => "user",
            Table::Entity => "entity",
            Table::Relation => "relation",
        }
    }
}

/// Row-major `rows × dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_data(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "table of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[T] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [T] {
        &mut self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Read access to embedding rows; implemented by the stored parameters and
/// by lightweight overlays of them.
pub trait EmbeddingLookup<T: Scalar> {
    fn dim(&self) -> usize;
    fn n_items(&self) -> usize;
    fn table_len(&self, table: Table) -> usize;
    /// Panics on out-of-range ids; use [`EmbeddingLookup::get`] for checked access.
    fn row(&self, table: Table, id: usize) -> &[T];

    fn get(&self, table: Table, id: usize) -> Result<&[T]> {
        if id < self.table_len(table) {
            Ok(self.row(table, id))
        } else {
            Err(Error::UnknownId {
                kind: table.kind(),
                id,
            })
        }
    }

    fn item(&self, id: usize) -> Result<&[T]> {
        if id < self.n_items() {
            Ok(self.row(Table::Entity, id))
        } else {
            Err(Error::UnknownId { kind: "item", id })
        }
    }
}

/// All learnable state: user, entity (items first) and relation embeddings
/// plus one regularization logit per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub curvature: T,
    pub space: Space,
    pub aggregation: Aggregation,
    pub n_items: usize,
    pub users: EmbeddingTable<T>,
    pub entities: EmbeddingTable<T>,
    pub relations: EmbeddingTable<T>,
    pub beta: Vec<T>,
}

/// Table sizes for a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub users: usize,
    pub items: usize,
    pub entities: usize,
    pub relations: usize,
    pub dim: usize,
}

impl<T: Scalar> ModelParameters<T> {
    /// Near-origin uniform initialization in `[-0.01/√d, 0.01/√d]`, β = 0.
    pub fn init<R: Rng + ?Sized>(
        shape: Shape,
        curvature: T,
        space: Space,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        if shape.dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if shape.entities < shape.items {
            return Err(Error::InvalidInput(format!(
                "{} entities cannot hold {} items",
                shape.entities, shape.items
            )));
        }
        let bound = 0.01 / (shape.dim as f64).sqrt();
        let mut table = |rows: usize| {
            let data: Vec<T> = (0..rows * shape.dim)
                .map(|_| T::lit(rng.gen_range(-bound..=bound)))
                .collect();
            let mut t = EmbeddingTable {
                dim: shape.dim,
                data,
            };
            for r in 0..rows {
                kernel::project(t.row_mut(r), curvature);
            }
            t
        };
        let users = table(shape.users);
        let entities = table(shape.entities);
        let relations = table(shape.relations);
        Ok(Self {
            curvature,
            space,
            aggregation,
            n_items: shape.items,
            users,
            entities,
            relations,
            beta: vec![T::zero(); shape.items],
        })
    }

    pub fn shape(&self) -> Shape {
        Shape {
            users: self.users.rows(),
            items: self.n_items,
            entities: self.entities.rows(),
            relations: self.relations.rows(),
            dim: self.users.dim(),
        }
    }

    pub fn table(&self, table: Table) -> &EmbeddingTable<T> {
        match table {
            Table::User => &self.users,
            Table::Entity => &self.entities,
            Table::Relation => &self.relations,
        }
    }

    pub fn table_mut(&mut self, table: Table) -> &mut EmbeddingTable<T> {
        match table {
            Table::User => &mut self.users,
            Table::Entity => &mut self.entities,
            Table::Relation => &mut self.relations,
        }
    }

    /// `σ(β_v)` for item `v`.
    pub fn sigma_beta(&self, item: usize) -> T {
        sigmoid(self.beta[item])
    }

    /// Projects every row back inside the ball.
    pub fn project_all(&mut self) {
        let c = self.curvature;
        for t in Table::ALL {
            let table = self.table_mut(t);
            for r in 0..table.rows() {
                kernel::project(table.row_mut(r), c);
            }
        }
    }

    /// True when every row satisfies `c‖x‖² ≤ (1 − BALL_EPS)²`.
    pub fn all_in_ball(&self) -> bool {
        let bound = T::one() - T::lit(crate::scalar::BALL_EPS);
        Table::ALL.iter().all(|&t| {
            let table = self.table(t);
            (0..table.rows()).all(|r| self.curvature * norm_sq(table.row(r)) <= bound * bound)
        })
    }

    pub fn objective<'a>(&self, neighbors: &'a NeighborSet) -> Objective<'a, T> {
        Objective {
            curvature: self.curvature,
            space: self.space,
            aggregation: self.aggregation,
            neighbors,
        }
    }
}

impl<T: Scalar> EmbeddingLookup<T> for ModelParameters<T> {
    fn dim(&self) -> usize {
        self.users.dim()
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn table_len(&self, table: Table) -> usize {
        self.table(table).rows()
    }

    fn row(&self, table: Table, id: usize) -> &[T] {
        self.table(table).row(id)
    }
}

/// Parameters with a subset of rows replaced.
#[derive(Debug, Clone)]
pub struct Overlay<'a, T> {
    base: &'a ModelParameters<T>,
    rows: HashMap<(Table, usize), Vec<T>>,
}

impl<'a, T: Scalar> Overlay<'a, T> {
    pub fn new(base: &'a ModelParameters<T>) -> Self {
        Self {
            base,
            rows: HashMap::new(),
        }
    }

    pub fn set(&mut self, table: Table, id: usize, row: Vec<T>) {
        self.rows.insert((table, id), row);
    }

    pub fn base(&self) -> &'a ModelParameters<T> {
        self.base
    }

    /// Rows that differ from the base, in `(table, id)` order.
    pub fn replaced(&self) -> Vec<(Table, usize)> {
        let mut keys: Vec<_> = self.rows.keys().copied().collect();
        keys.sort();
        keys
    }

    /// Materializes the overlay into owned parameters.
    pub fn to_parameters(&self) -> ModelParameters<T> {
        let mut p = self.base.clone();
        for (&(t, id), row) in &self.rows {
            p.table_mut(t).row_mut(id).copy_from_slice(row);
        }
        p
    }
}

impl<T: Scalar> EmbeddingLookup<T> for Overlay<'_, T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn n_items(&self) -> usize {
        self.base.n_items
    }

    fn table_len(&self, table: Table) -> usize {
        self.base.table_len(table)
    }

    fn row(&self, table: Table, id: usize) -> &[T] {
        match self.rows.get(&(table, id)) {
            Some(r) => r,
            None => self.base.row(table, id),
        }
    }
}

/// Receives gradient contributions row by row.
pub trait GradSink<T> {
    fn accumulate(&mut self, table: Table, id: usize, grad: &[T]);
}

/// Dense gradient buffers shaped like the parameters, tracking touched rows.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tables: [EmbeddingTable<T>; 3],
    touched: [Vec<bool>; 3],
}

fn slot(table: Table) -> usize {
    match table {
        Table::User => 0,
        Table::Entity => 1,
        Table::Relation => 2,
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn for_params(params: &ModelParameters<T>) -> Self {
        let s = params.shape();
        Self {
            tables: [
                EmbeddingTable::zeros(s.users, s.dim),
                EmbeddingTable::zeros(s.entities, s.dim),
                EmbeddingTable::zeros(s.relations, s.dim),
            ],
            touched: [vec![false; s.users], vec![false; s.entities], vec![false; s.relations]],
        }
    }

    pub fn table(&self, table: Table) -> &EmbeddingTable<T> {
        &self.tables[slot(table)]
    }

    pub fn table_mut(&mut self, table: Table) -> &mut EmbeddingTable<T> {
        &mut self.tables[slot(table)]
    }

    pub fn row(&self, table: Table, id: usize) -> &[T] {
        self.tables[slot(table)].row(id)
    }

    pub fn is_touched(&self, table: Table, id: usize) -> bool {
        self.touched[slot(table)][id]
    }

    pub fn mark(&mut self, table: Table, id: usize) {
        self.touched[slot(table)][id] = true;
    }

    /// Touched rows in `(table, id)` order.
    pub fn touched_rows(&self) -> impl Iterator<Item = (Table, usize)> + '_ {
        Table::ALL.into_iter().flat_map(move |t| {
            self.touched[slot(t)]
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(move |(i, _)| (t, i))
        })
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tables.iter_mut() {
            for v in t.as_mut_slice() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tables
            .iter()
            .all(|t| t.as_slice().iter().all(|v| v.is_finite()))
    }

    pub fn clear(&mut self) {
        for t in self.tables.iter_mut() {
            for v in t.as_mut_slice() {
                *v = T::zero();
            }
        }
        for flags in self.touched.iter_mut() {
            flags.iter_mut().for_each(|f| *f = false);
        }
    }
}

impl<T: Scalar> GradSink<T> for Gradients<T> {
    fn accumulate(&mut self, table: Table, id: usize, grad: &[T]) {
        let s = slot(table);
        self.touched[s][id] = true;
        for (o, &g) in self.tables[s].row_mut(id).iter_mut().zip(grad) {
            *o += g;
        }
    }
}

/// Gradient over a handful of rows, kept in `(table, id)` order.
#[derive(Debug, Clone, Default)]
pub struct SparseGradients<T> {
    pub rows: BTreeMap<(Table, usize), Vec<T>>,
}

impl<T: Scalar> SparseGradients<T> {
    pub fn new() -> Self {
        Self {
            rows: BTreeMap::new(),
        }
    }

    /// `⟨self, dense⟩` over the rows present here.
    pub fn dot_dense(&self, dense: &Gradients<T>) -> T {
        self.rows.iter().fold(T::zero(), |acc, (&(t, id), g)| {
            acc + crate::scalar::dot(g, dense.row(t, id))
        })
    }
}

impl<T: Scalar> GradSink<T> for SparseGradients<T> {
    fn accumulate(&mut self, table: Table, id: usize, grad: &[T]) {
        let row = self
            .rows
            .entry((table, id))
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        for (o, &g) in row.iter_mut().zip(grad) {
            *o += g;
        }
    }
}

/// Adjacency `N_v`: sorted, deduplicated `(relation, tail)` pairs for each item.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborSet {
    lists: Vec<Vec<(usize, usize)>>,
}

impl NeighborSet {
    pub fn empty(n_items: usize) -> Self {
        Self {
            lists: vec![Vec::new(); n_items],
        }
    }

    /// Builds the adjacency from `(item, relation, tail)` triples.
    pub fn from_triples(n_items: usize, triples: impl IntoIterator<Item = (usize, usize, usize)>) -> Result<Self> {
        let mut lists = vec![Vec::new(); n_items];
        for (v, r, t) in triples {
            let list: &mut Vec<(usize, usize)> = lists
                .get_mut(v)
                .ok_or(Error::UnknownId { kind: "item", id: v })?;
            list.push((r, t));
        }
        for l in lists.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self { lists })
    }

    pub fn n_items(&self) -> usize {
        self.lists.len()
    }

    pub fn of(&self, item: usize) -> &[(usize, usize)] {
        self.lists.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_neighbors(&self, item: usize) -> bool {
        !self.of(item).is_empty()
    }

    /// Checks that every referenced id fits the given table sizes.
    pub fn validate(&self, relations: usize, entities: usize) -> Result<()> {
        for l in &self.lists {
            for &(r, t) in l {
                if r >= relations {
                    return Err(Error::UnknownId { kind: "relation", id: r });
                }
                if t >= entities {
                    return Err(Error::UnknownId { kind: "entity", id: t });
                }
            }
        }
        Ok(())
    }
}

/// A training example: user, positive item, negative item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// The model's losses, evaluated against any [`EmbeddingLookup`].
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a, T> {
    pub curvature: T,
    pub space: Space,
    pub aggregation: Aggregation,
    pub neighbors: &'a NeighborSet,
}

impl<T: Scalar> Objective<'_, T> {
    pub fn distance(&self, x: &[T], y: &[T]) -> T {
        space_distance(self.space, self.curvature, x, y)
    }

    fn distance_vjp(&self, x: &[T], y: &[T], g: T, gx: &mut [T], gy: &mut [T]) -> T {
        match self.space {
            Space::Hyperbolic => kernel::distance_vjp(x, y, self.curvature, g, gx, gy),
            Space::Euclidean => {
                let d = euclidean_distance(x, y);
                if d > T::zero() {
                    for i in 0..x.len() {
                        let v = g * (x[i] - y[i]) / d;
                        gx[i] += v;
                        gy[i] -= v;
                    }
                }
                d
            }
        }
    }

    fn translate(&self, x: &[T], r: &[T], out: &mut [T]) {
        match self.space {
            Space::Hyperbolic => kernel::mobius_add(x, r, self.curvature, out),
            Space::Euclidean => {
                for ((o, &a), &b) in out.iter_mut().zip(x).zip(r) {
                    *o = a + b;
                }
            }
        }
    }

    fn translate_vjp(&self, x: &[T], r: &[T], g: &[T], gx: &mut [T], gr: &mut [T]) {
        match self.space {
            Space::Hyperbolic => kernel::mobius_add_vjp(x, r, self.curvature, g, gx, gr),
            Space::Euclidean => {
                for i in 0..g.len() {
                    gx[i] += g[i];
                    gr[i] += g[i];
                }
            }
        }
    }

    fn pool(&self, points: &[&[T]], weights: &[T], out: &mut [T]) {
        match self.space {
            Space::Hyperbolic => kernel::einstein_midpoint(points, weights, self.curvature, out),
            Space::Euclidean => {
                let total: T = weights.iter().copied().sum();
                out.iter_mut().for_each(|o| *o = T::zero());
                for (p, &w) in points.iter().zip(weights) {
                    for (o, &x) in out.iter_mut().zip(p.iter()) {
                        *o += w / total * x;
                    }
                }
            }
        }
    }

    fn pool_vjp(
        &self,
        points: &[&[T]],
        weights: &[T],
        g: &[T],
        g_points: &mut [Vec<T>],
        g_weights: &mut [T],
    ) {
        match self.space {
            Space::Hyperbolic => kernel::einstein_midpoint_vjp(
                points,
                weights,
                self.curvature,
                g,
                g_points,
                g_weights,
            ),
            Space::Euclidean => {
                let mut mean = vec![T::zero(); g.len()];
                self.pool(points, weights, &mut mean);
                let total: T = weights.iter().copied().sum();
                for i in 0..points.len() {
                    let mut ga = T::zero();
                    for j in 0..g.len() {
                        g_points[i][j] += weights[i] / total * g[j];
                        ga += g[j] * (points[i][j] - mean[j]);
                    }
                    g_weights[i] += ga / total;
                }
            }
        }
    }

    pub fn preference_distance<L: EmbeddingLookup<T>>(&self, p: &L, user: usize, item: usize) -> Result<T> {
        Ok(self.distance(p.get(Table::User, user)?, p.item(item)?))
    }

    /// `−ln σ(d(u, v′) − d(u, v))`.
    pub fn bpr_loss<L: EmbeddingLookup<T>>(&self, p: &L, user: usize, pos: usize, neg: usize) -> Result<T> {
        let u = p.get(Table::User, user)?;
        let dp = self.distance(u, p.item(pos)?);
        let dn = self.distance(u, p.item(neg)?);
        Ok(softplus(dp - dn))
    }

    /// BPR loss with `scale · ∇` accumulated into `sink`.
    pub fn bpr_grad<L: EmbeddingLookup<T>, S: GradSink<T>>(
        &self,
        p: &L,
        t: Triple,
        scale: T,
        sink: &mut S,
    ) -> Result<T> {
        let u = p.get(Table::User, t.user)?;
        let v = p.item(t.pos)?;
        let vn = p.item(t.neg)?;
        let dim = u.len();
        let dp = self.distance(u, v);
        let dn = self.distance(u, vn);
        let loss = softplus(dp - dn);
        // ∂/∂dp = σ(dp − dn), ∂/∂dn = −σ(dp − dn)
        let s = sigmoid(dp - dn) * scale;
        let mut gu = vec![T::zero(); dim];
        let mut gv = vec![T::zero(); dim];
        let mut gn = vec![T::zero(); dim];
        self.distance_vjp(u, v, s, &mut gu, &mut gv);
        self.distance_vjp(u, vn, -s, &mut gu, &mut gn);
        sink.accumulate(Table::User, t.user, &gu);
        sink.accumulate(Table::Entity, t.pos, &gv);
        sink.accumulate(Table::Entity, t.neg, &gn);
        Ok(loss)
    }

    /// `exp(−d(v ⊕ r, t))`.
    pub fn attention_score<L: EmbeddingLookup<T>>(
        &self,
        p: &L,
        item: usize,
        relation: usize,
        tail: usize,
    ) -> Result<T> {
        let v = p.item(item)?;
        let r = p.get(Table::Relation, relation)?;
        let t = p.get(Table::Entity, tail)?;
        let mut s = vec![T::zero(); v.len()];
        self.translate(v, r, &mut s);
        Ok((-self.distance(&s, t)).exp())
    }

    /// Attention score with `scale · ∇` accumulated into `sink`.
    pub fn attention_grad<L: EmbeddingLookup<T>, S: GradSink<T>>(
        &self,
        p: &L,
        item: usize,
        relation: usize,
        tail: usize,
        scale: T,
        sink: &mut S,
    ) -> Result<T> {
        let v = p.item(item)?;
        let r = p.get(Table::Relation, relation)?;
        let t = p.get(Table::Entity, tail)?;
        let dim = v.len();
        let mut s = vec![T::zero(); dim];
        self.translate(v, r, &mut s);
        let w = (-self.distance(&s, t)).exp();
        let (mut gs, mut gt) = (vec![T::zero(); dim], vec![T::zero(); dim]);
        self.distance_vjp(&s, t, -w * scale, &mut gs, &mut gt);
        let (mut gv, mut gr) = (vec![T::zero(); dim], vec![T::zero(); dim]);
        self.translate_vjp(v, r, &gs, &mut gv, &mut gr);
        sink.accumulate(Table::Entity, item, &gv);
        sink.accumulate(Table::Relation, relation, &gr);
        sink.accumulate(Table::Entity, tail, &gt);
        Ok(w)
    }

    fn neighbor_rows<'p, L: EmbeddingLookup<T>>(
        &self,
        p: &'p L,
        item: usize,
    ) -> Result<(Vec<&'p [T]>, Vec<&'p [T]>)> {
        let list = self.neighbors.of(item);
        if list.is_empty() {
            return Err(Error::NoNeighbors(item));
        }
        let mut rels = Vec::with_capacity(list.len());
        let mut tails = Vec::with_capacity(list.len());
        for &(r, t) in list {
            rels.push(p.get(Table::Relation, r)?);
            tails.push(p.get(Table::Entity, t)?);
        }
        Ok((rels, tails))
    }

    /// Unnormalized pooling weights for each neighbor of `item`.
    fn raw_weights<L: EmbeddingLookup<T>>(&self, p: &L, item: usize) -> Result<Vec<T>> {
        let (rels, tails) = self.neighbor_rows(p, item)?;
        let v = p.item(item)?;
        Ok(match self.aggregation {
            Aggregation::Average => vec![T::one(); tails.len()],
            Aggregation::Attention => {
                let mut s = vec![T::zero(); v.len()];
                rels.iter()
                    .zip(&tails)
                    .map(|(r, t)| {
                        self.translate(v, r, &mut s);
                        (-self.distance(&s, t)).exp()
                    })
                    .collect()
            }
        })
    }

    /// Effective pooling weights, normalized to sum to one.
    ///
    /// In hyperbolic space these include the Lorentz factors of the tails.
    pub fn neighborhood_weights<L: EmbeddingLookup<T>>(&self, p: &L, item: usize) -> Result<Vec<T>> {
        let (_, tails) = self.neighbor_rows(p, item)?;
        let mut w = self.raw_weights(p, item)?;
        if self.space == Space::Hyperbolic {
            let c = self.curvature;
            let mut k = vec![T::zero(); p.dim()];
            for (wi, t) in w.iter_mut().zip(&tails) {
                kernel::to_klein(t, c, &mut k);
                *wi *= kernel::lorentz(&k, c);
            }
        }
        let total: T = w.iter().copied().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// `n_v`, the pooled representation of the item's KG neighbors.
    pub fn neighborhood_representation<L: EmbeddingLookup<T>>(&self, p: &L, item: usize) -> Result<Vec<T>> {
        let (_, tails) = self.neighbor_rows(p, item)?;
        let w = self.raw_weights(p, item)?;
        if w.iter().all(|x| *x == T::zero()) {
            return Err(Error::NonFinite(format!("attention weights underflowed for item {item}")));
        }
        let mut out = vec![T::zero(); p.dim()];
        self.pool(&tails, &w, &mut out);
        Ok(out)
    }

    /// `d(v, n_v)`.
    pub fn kg_loss<L: EmbeddingLookup<T>>(&self, p: &L, item: usize) -> Result<T> {
        let n = self.neighborhood_representation(p, item)?;
        Ok(self.distance(p.item(item)?, &n))
    }

    /// Accumulates `⟨g_out, ∂n_v/∂θ⟩` into `sink`.
    pub fn neighborhood_vjp<L: EmbeddingLookup<T>, S: GradSink<T>>(
        &self,
        p: &L,
        item: usize,
        g_out: &[T],
        sink: &mut S,
    ) -> Result<()> {
        let (rels, tails) = self.neighbor_rows(p, item)?;
        let v = p.item(item)?;
        let dim = v.len();
        let w = self.raw_weights(p, item)?;
        let mut g_tails = vec![vec![T::zero(); dim]; tails.len()];
        let mut g_w = vec![T::zero(); tails.len()];
        self.pool_vjp(&tails, &w, g_out, &mut g_tails, &mut g_w);
        let mut gv = vec![T::zero(); dim];
        if self.aggregation == Aggregation::Attention {
            let list = self.neighbors.of(item);
            let mut s = vec![T::zero(); dim];
            for i in 0..tails.len() {
                // w = exp(−d) ⇒ ∂w/∂d = −w
                let gd = -w[i] * g_w[i];
                if gd == T::zero() {
                    continue;
                }
                self.translate(v, rels[i], &mut s);
                let mut gs = vec![T::zero(); dim];
                self.distance_vjp(&s, tails[i], gd, &mut gs, &mut g_tails[i]);
                let mut gr = vec![T::zero(); dim];
                self.translate_vjp(v, rels[i], &gs, &mut gv, &mut gr);
                sink.accumulate(Table::Relation, list[i].0, &gr);
            }
        }
        sink.accumulate(Table::Entity, item, &gv);
        for (&(_, t), g) in self.neighbors.of(item).iter().zip(&g_tails) {
            sink.accumulate(Table::Entity, t, g);
        }
        Ok(())
    }

    /// KG loss with `scale · ∇` accumulated into `sink`, through the
    /// attention weights and the pooled representation.
    pub fn kg_grad<L: EmbeddingLookup<T>, S: GradSink<T>>(
        &self,
        p: &L,
        item: usize,
        scale: T,
        sink: &mut S,
    ) -> Result<T> {
        let n = self.neighborhood_representation(p, item)?;
        let v = p.item(item)?;
        let dim = v.len();
        let mut gv = vec![T::zero(); dim];
        let mut gn = vec![T::zero(); dim];
        let loss = self.distance_vjp(v, &n, scale, &mut gv, &mut gn);
        sink.accumulate(Table::Entity, item, &gv);
        self.neighborhood_vjp(p, item, &gn, sink)?;
        Ok(loss)
    }

    /// Weight on `L_K` for a positive item, `None` when the term is skipped.
    pub fn kg_weight<L: EmbeddingLookup<T>>(
        &self,
        beta: &[T],
        mode: Regularization<T>,
        item: usize,
    ) -> Option<T> {
        if !self.neighbors.has_neighbors(item) {
            return None;
        }
        match mode {
            Regularization::Fixed(b) if b == T::zero() => None,
            Regularization::Fixed(b) => Some(b),
            Regularization::Adaptive => Some(sigmoid(beta[item])),
        }
    }

    /// `L_R + w·L_K` with `w` from the regularization mode.
    pub fn combined_loss<L: EmbeddingLookup<T>>(
        &self,
        p: &L,
        beta: &[T],
        t: Triple,
        mode: Regularization<T>,
    ) -> Result<T> {
        let lr = self.bpr_loss(p, t.user, t.pos, t.neg)?;
        match self.kg_weight::<L>(beta, mode, t.pos) {
            Some(w) => Ok(lr + w * self.kg_loss(p, t.pos)?),
            None => Ok(lr),
        }
    }

    /// Combined loss and its scaled gradient. Returns `(L_R, w·L_K)`.
    pub fn combined_grad<L: EmbeddingLookup<T>, S: GradSink<T>>(
        &self,
        p: &L,
        beta: &[T],
        t: Triple,
        mode: Regularization<T>,
        scale: T,
        sink: &mut S,
    ) -> Result<(T, T)> {
        let lr = self.bpr_grad(p, t, scale, sink)?;
        let lk = match self.kg_weight::<L>(beta, mode, t.pos) {
            Some(w) => w * self.kg_grad(p, t.pos, scale * w, sink)?,
            None => T::zero(),
        };
        Ok((lr, lk))
    }
}

/// Preference distance in the given space.
pub fn space_distance<T: Scalar>(space: Space, c: T, x: &[T], y: &[T]) -> T {
    match space {
        Space::Hyperbolic => kernel::distance(x, y, c),
        Space::Euclidean => euclidean_distance(x, y),
    }
}

pub fn euclidean_distance<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
        .sqrt()
}
