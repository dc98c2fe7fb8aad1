//! The decayed two-mode network of past events.
//!
//! Each edge `(u, a)` carries the sum of `2^(-(t - t_e) / halflife)` over
//! past events `e` on the dyad. Values are stored lazily as
//! `(value, last_touch)` and only rewritten when an event hits the dyad.
//!
//! Pruning is exact: an edge disappears at the instant its decayed value
//! crosses `prune_epsilon`. Every live edge owns one entry in a min-heap
//! keyed by a lower bound on its crossing time. Touching an edge only moves
//! its crossing later, so the stale key is kept and the entry is re-queued
//! with the true crossing when it surfaces. Node aggregates (weighted
//! user out-sums and article in-sums) decay by the same factor; residuals
//! of pruned edges are subtracted at their crossing time, which makes the
//! state independent of how `advance` calls are split.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::ingest::{ArticleId, Event, Timestamp, UserId};

/// Thirty days.
pub const DEFAULT_HALFLIFE: f64 = 2_592_000.0;
pub const DEFAULT_PRUNE_EPSILON: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("halflife must be positive and finite, got {0}")]
    Halflife(f64),
    #[error("prune epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("time runs backwards: {to} < {from}")]
    Backwards { from: f64, to: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayConfig {
    halflife: f64,
    prune_epsilon: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            halflife: DEFAULT_HALFLIFE,
            prune_epsilon: DEFAULT_PRUNE_EPSILON,
        }
    }
}

impl DecayConfig {
    pub fn new(halflife: f64, prune_epsilon: f64) -> Result<Self, NetworkError> {
        if !(halflife > 0.0 && halflife.is_finite()) {
            return Err(NetworkError::Halflife(halflife));
        }
        if !(prune_epsilon > 0.0 && prune_epsilon < 1.0) {
            return Err(NetworkError::Epsilon(prune_epsilon));
        }
        Ok(DecayConfig {
            halflife,
            prune_epsilon,
        })
    }

    pub fn halflife(&self) -> f64 {
        self.halflife
    }

    pub fn prune_epsilon(&self) -> f64 {
        self.prune_epsilon
    }

    /// Multiplicative decay over `dt` seconds.
    #[inline]
    pub fn factor(&self, dt: f64) -> f64 {
        (-dt / self.halflife).exp2()
    }

    /// Time for `value` to decay down to the pruning threshold.
    #[inline]
    pub fn time_to_threshold(&self, value: f64) -> f64 {
        self.halflife * (value / self.prune_epsilon).log2()
    }
}

/// `value` carried from time `from` to time `to`.
pub fn decay_to(value: f64, from: f64, to: f64, cfg: &DecayConfig) -> Result<f64, NetworkError> {
    if to < from {
        return Err(NetworkError::Backwards { from, to });
    }
    Ok(value * cfg.factor(to - from))
}

pub(crate) type EdgeId = u32;

#[derive(Clone, Debug)]
struct Edge {
    user: u32,
    article: u32,
    value: f64,
    touched: Timestamp,
    crossing: f64,
    user_slot: u32,
    article_slot: u32,
}

/// Lazily decayed node aggregate.
#[derive(Clone, Copy, Debug, Default)]
struct Aggregate {
    value: f64,
    touched: f64,
}

impl Aggregate {
    #[inline]
    fn at(&self, t: f64, cfg: &DecayConfig) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.value * cfg.factor((t - self.touched).max(0.0))
        }
    }

    fn add(&mut self, t: f64, delta: f64, cfg: &DecayConfig) {
        self.value = self.at(t, cfg) + delta;
        self.touched = t;
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    crossing: f64,
    edge: EdgeId,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.crossing
            .total_cmp(&other.crossing)
            .then(self.edge.cmp(&other.edge))
    }
}

#[inline]
fn dyad_key(user: u32, article: u32) -> u64 {
    (u64::from(user) << 32) | u64::from(article)
}

/// Weighted bipartite network of past events with exact lazy decay.
#[derive(Clone, Debug)]
pub struct PastEventNetwork {
    cfg: DecayConfig,
    clock: Option<Timestamp>,
    edges: Vec<Edge>,
    free: Vec<EdgeId>,
    index: FxHashMap<u64, EdgeId>,
    user_edges: Vec<Vec<EdgeId>>,
    article_edges: Vec<Vec<EdgeId>>,
    user_out: Vec<Aggregate>,
    article_in: Vec<Aggregate>,
    queue: BinaryHeap<Reverse<Pending>>,
    pruned: u64,
}

impl PastEventNetwork {
    pub fn new(cfg: DecayConfig) -> Self {
        PastEventNetwork {
            cfg,
            clock: None,
            edges: Vec::new(),
            free: Vec::new(),
            index: FxHashMap::default(),
            user_edges: Vec::new(),
            article_edges: Vec::new(),
            user_out: Vec::new(),
            article_in: Vec::new(),
            queue: BinaryHeap::new(),
            pruned: 0,
        }
    }

    pub fn config(&self) -> &DecayConfig {
        &self.cfg
    }

    pub fn clock(&self) -> Option<Timestamp> {
        self.clock
    }

    /// Number of live (non-pruned) edges.
    pub fn n_edges(&self) -> usize {
        self.index.len()
    }

    /// Number of edges removed by pruning so far.
    pub fn n_pruned(&self) -> u64 {
        self.pruned
    }

    /// Moves the clock to `t`, removing every edge whose decayed value has
    /// fallen below the threshold at or before `t`.
    pub fn advance(&mut self, t: Timestamp) -> Result<(), NetworkError> {
        if let Some(clock) = self.clock {
            if t < clock {
                return Err(NetworkError::Backwards {
                    from: clock as f64,
                    to: t as f64,
                });
            }
        }
        self.clock = Some(t);
        let now = t as f64;
        while let Some(&Reverse(top)) = self.queue.peek() {
            if top.crossing > now {
                break;
            }
            self.queue.pop();
            let actual = self.edges[top.edge as usize].crossing;
            if actual > top.crossing {
                self.queue.push(Reverse(Pending {
                    crossing: actual,
                    edge: top.edge,
                }));
            } else {
                self.prune(top.edge);
            }
        }
        Ok(())
    }

    fn prune(&mut self, id: EdgeId) {
        let edge = self.edges[id as usize].clone();
        let at = edge.crossing;
        let residual = edge.value * self.cfg.factor(at - edge.touched as f64);

        let slot = edge.user_slot as usize;
        let list = &mut self.user_edges[edge.user as usize];
        list.swap_remove(slot);
        if let Some(&moved) = list.get(slot) {
            self.edges[moved as usize].user_slot = slot as u32;
        }
        let emptied_user = list.is_empty();

        let slot = edge.article_slot as usize;
        let list = &mut self.article_edges[edge.article as usize];
        list.swap_remove(slot);
        if let Some(&moved) = list.get(slot) {
            self.edges[moved as usize].article_slot = slot as u32;
        }
        let emptied_article = list.is_empty();

        let out = &mut self.user_out[edge.user as usize];
        if emptied_user {
            *out = Aggregate::default();
        } else {
            out.add(at, -residual, &self.cfg);
        }
        let inn = &mut self.article_in[edge.article as usize];
        if emptied_article {
            *inn = Aggregate::default();
        } else {
            inn.add(at, -residual, &self.cfg);
        }

        self.index.remove(&dyad_key(edge.user, edge.article));
        self.free.push(id);
        self.pruned += 1;
    }

    fn ensure_nodes(&mut self, user: usize, article: usize) {
        if self.user_edges.len() <= user {
            self.user_edges.resize_with(user + 1, Vec::new);
            self.user_out.resize(user + 1, Aggregate::default());
        }
        if self.article_edges.len() <= article {
            self.article_edges.resize_with(article + 1, Vec::new);
            self.article_in.resize(article + 1, Aggregate::default());
        }
    }

    /// Adds one unit of weight on the event's dyad, after advancing the
    /// clock to the event time.
    pub fn apply_event(&mut self, event: &Event) -> Result<(), NetworkError> {
        self.add_unit(event.user, event.article, event.time)
    }

    pub fn add_unit(
        &mut self,
        user: UserId,
        article: ArticleId,
        t: Timestamp,
    ) -> Result<(), NetworkError> {
        self.advance(t)?;
        let (u, a) = (user.0, article.0);
        self.ensure_nodes(u as usize, a as usize);
        let key = dyad_key(u, a);
        let now = t as f64;
        if let Some(&id) = self.index.get(&key) {
            let edge = &mut self.edges[id as usize];
            edge.value = edge.value * self.cfg.factor((t - edge.touched) as f64) + 1.0;
            edge.touched = t;
            edge.crossing = now + self.cfg.time_to_threshold(edge.value);
        } else {
            let user_slot = self.user_edges[u as usize].len() as u32;
            let article_slot = self.article_edges[a as usize].len() as u32;
            let edge = Edge {
                user: u,
                article: a,
                value: 1.0,
                touched: t,
                crossing: now + self.cfg.time_to_threshold(1.0),
                user_slot,
                article_slot,
            };
            let id = match self.free.pop() {
                Some(id) => {
                    self.edges[id as usize] = edge;
                    id
                }
                None => {
                    self.edges.push(edge);
                    (self.edges.len() - 1) as EdgeId
                }
            };
            self.index.insert(key, id);
            self.user_edges[u as usize].push(id);
            self.article_edges[a as usize].push(id);
            self.queue.push(Reverse(Pending {
                crossing: self.edges[id as usize].crossing,
                edge: id,
            }));
        }
        self.user_out[u as usize].add(now, 1.0, &self.cfg);
        self.article_in[a as usize].add(now, 1.0, &self.cfg);
        Ok(())
    }

    /// Advances to `t` and returns a read-only view of the network at `t`.
    pub fn view(&mut self, t: Timestamp) -> Result<NetworkView<'_>, NetworkError> {
        self.advance(t)?;
        Ok(NetworkView { net: self, t })
    }

    /// A view at the current clock, without mutating anything.
    pub fn view_at_clock(&self) -> Option<NetworkView<'_>> {
        self.clock.map(|t| NetworkView { net: self, t })
    }

    /// Debug dump of live edges: `user,article,value,last_touch`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut live: Vec<&Edge> = self
            .index
            .values()
            .map(|&id| &self.edges[id as usize])
            .collect();
        live.sort_by_key(|e| (e.user, e.article));
        writeln!(out, "user,article,value,last_touch")?;
        for e in live {
            writeln!(out, "{},{},{:e},{}", e.user, e.article, e.value, e.touched)?;
        }
        Ok(())
    }
}

/// The network frozen at time `t`. All queries are pure, so any number of
/// them can run in any order, or concurrently, with identical results.
#[derive(Clone, Copy)]
pub struct NetworkView<'a> {
    net: &'a PastEventNetwork,
    t: Timestamp,
}

impl<'a> NetworkView<'a> {
    pub fn time(&self) -> Timestamp {
        self.t
    }

    pub fn config(&self) -> &'a DecayConfig {
        &self.net.cfg
    }

    #[inline]
    pub(crate) fn edge_weight(&self, id: EdgeId) -> f64 {
        let e = &self.net.edges[id as usize];
        e.value * self.net.cfg.factor((self.t - e.touched) as f64)
    }

    #[inline]
    pub(crate) fn edge_user(&self, id: EdgeId) -> u32 {
        self.net.edges[id as usize].user
    }

    #[inline]
    pub(crate) fn edge_article(&self, id: EdgeId) -> u32 {
        self.net.edges[id as usize].article
    }

    #[inline]
    pub(crate) fn user_edges(&self, user: UserId) -> &'a [EdgeId] {
        self.net
            .user_edges
            .get(user.index())
            .map_or(&[], Vec::as_slice)
    }

    #[inline]
    pub(crate) fn article_edges(&self, article: ArticleId) -> &'a [EdgeId] {
        self.net
            .article_edges
            .get(article.index())
            .map_or(&[], Vec::as_slice)
    }

    /// Upper bound (exclusive) on edge ids, for dense per-edge scratch.
    pub(crate) fn edge_capacity(&self) -> usize {
        self.net.edges.len()
    }

    /// Decayed weight of dyad `(u, a)`; zero when absent or pruned.
    #[inline]
    pub fn weight(&self, user: UserId, article: ArticleId) -> f64 {
        match self.net.index.get(&dyad_key(user.0, article.0)) {
            Some(&id) => self.edge_weight(id),
            None => 0.0,
        }
    }

    /// Sum of decayed weights of all edges into `article`.
    pub fn weighted_in(&self, article: ArticleId) -> f64 {
        self.net
            .article_in
            .get(article.index())
            .map_or(0.0, |agg| agg.at(self.t as f64, &self.net.cfg))
    }

    /// Sum of decayed weights of all edges out of `user`.
    pub fn weighted_out(&self, user: UserId) -> f64 {
        self.net
            .user_out
            .get(user.index())
            .map_or(0.0, |agg| agg.at(self.t as f64, &self.net.cfg))
    }

    /// Number of live edges at `user`.
    pub fn user_degree(&self, user: UserId) -> usize {
        self.user_edges(user).len()
    }

    /// Number of live edges at `article`.
    pub fn article_degree(&self, article: ArticleId) -> usize {
        self.article_edges(article).len()
    }

    /// Articles adjacent to `user` with their current weights.
    pub fn user_neighbors(&self, user: UserId) -> impl Iterator<Item = (ArticleId, f64)> + 'a {
        let view = *self;
        self.user_edges(user)
            .iter()
            .map(move |&id| (ArticleId(view.edge_article(id)), view.edge_weight(id)))
    }

    /// Users adjacent to `article` with their current weights.
    pub fn article_neighbors(
        &self,
        article: ArticleId,
    ) -> impl Iterator<Item = (UserId, f64)> + 'a {
        let view = *self;
        self.article_edges(article)
            .iter()
            .map(move |&id| (UserId(view.edge_user(id)), view.edge_weight(id)))
    }
}
