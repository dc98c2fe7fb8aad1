//! Explanatory statistics of a dyad in the network of past events.
//!
//! Repetition, popularity, activity and four-cycle are `log(1 + x)` of the
//! raw decayed quantity (natural log); assortativity is the product of the
//! transformed popularity and activity.

use std::fmt;

use crate::ingest::{ArticleId, UserId};
use crate::network::NetworkView;

pub const NUM_STATS: usize = 5;

pub const STAT_NAMES: [&str; NUM_STATS] = [
    "repetition",
    "popularity",
    "activity",
    "four_cycle",
    "assortativity",
];

/// Short labels used in summary tables.
pub const STAT_ABBREVIATIONS: [&str; NUM_STATS] = ["rep", "pop", "act", "4cy", "asr"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StatVector {
    pub repetition: f64,
    pub popularity: f64,
    pub activity: f64,
    pub four_cycle: f64,
    pub assortativity: f64,
}

impl StatVector {
    /// Builds the vector from raw (untransformed) weights.
    pub fn from_raw(repetition: f64, popularity: f64, activity: f64, four_cycle: f64) -> Self {
        let popularity = popularity.ln_1p();
        let activity = activity.ln_1p();
        StatVector {
            repetition: repetition.ln_1p(),
            popularity,
            activity,
            four_cycle: four_cycle.ln_1p(),
            assortativity: popularity * activity,
        }
    }

    pub fn to_array(&self) -> [f64; NUM_STATS] {
        [
            self.repetition,
            self.popularity,
            self.activity,
            self.four_cycle,
            self.assortativity,
        ]
    }

    pub fn from_array(v: [f64; NUM_STATS]) -> Self {
        StatVector {
            repetition: v[0],
            popularity: v[1],
            activity: v[2],
            four_cycle: v[3],
            assortativity: v[4],
        }
    }
}

impl fmt::Display for StatVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_array();
        write!(
            f,
            "rep={} pop={} act={} 4cy={} asr={}",
            v[0], v[1], v[2], v[3], v[4]
        )
    }
}

pub fn repetition(view: &NetworkView<'_>, user: UserId, article: ArticleId) -> f64 {
    view.weight(user, article).ln_1p()
}

pub fn popularity(view: &NetworkView<'_>, _user: UserId, article: ArticleId) -> f64 {
    view.weighted_in(article).ln_1p()
}

pub fn activity(view: &NetworkView<'_>, user: UserId, _article: ArticleId) -> f64 {
    view.weighted_out(user).ln_1p()
}

pub fn assortativity(view: &NetworkView<'_>, user: UserId, article: ArticleId) -> f64 {
    popularity(view, user, article) * activity(view, user, article)
}

pub fn four_cycle(view: &NetworkView<'_>, user: UserId, article: ArticleId) -> f64 {
    let strategy = choose_strategy(view, user, article, DEFAULT_FOUR_CYCLE_CUTOFF);
    four_cycle_raw(view, user, article, strategy).ln_1p()
}

/// All five statistics of `(user, article)`.
pub fn stat_vector(view: &NetworkView<'_>, user: UserId, article: ArticleId) -> StatVector {
    StatEvaluator::default().stat_vector(view, user, article)
}

/// Below this value of `d(u) * d(a)` the direct pair enumeration is used
/// without looking at two-path sizes.
pub const DEFAULT_FOUR_CYCLE_CUTOFF: f64 = 1.0e6;

/// How the three-paths `u - a' - u' - a` are enumerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FourCycleStrategy {
    /// All pairs `a' in N(u)`, `u' in N(a)`, looking up `w(u', a')`.
    /// Cost `d(u) * d(a)`.
    Pairs,
    /// Walk `a' in N(u)` then `u' in N(a')`, looking up `w(u', a)`.
    /// Cost `sum d(a')`.
    FromUser,
    /// Walk `u' in N(a)` then `a' in N(u')`, looking up `w(u, a')`.
    /// Cost `sum d(u')`.
    FromArticle,
}

/// Picks the cheapest enumeration. Pairs wins whenever its cost is under
/// `cutoff`; otherwise the two two-path sums are measured exactly.
pub fn choose_strategy(
    view: &NetworkView<'_>,
    user: UserId,
    article: ArticleId,
    cutoff: f64,
) -> FourCycleStrategy {
    let pairs = view.user_degree(user) as f64 * view.article_degree(article) as f64;
    if pairs <= cutoff {
        return FourCycleStrategy::Pairs;
    }
    let from_user: f64 = view
        .user_neighbors(user)
        .map(|(a, _)| view.article_degree(a) as f64)
        .sum();
    let from_article: f64 = view
        .article_neighbors(article)
        .map(|(u, _)| view.user_degree(u) as f64)
        .sum();
    if pairs <= from_user && pairs <= from_article {
        FourCycleStrategy::Pairs
    } else if from_user <= from_article {
        FourCycleStrategy::FromUser
    } else {
        FourCycleStrategy::FromArticle
    }
}

/// Untransformed four-cycle value
/// `sum_{u' != u, a' != a} min(w(u,a'), w(u',a'), w(u',a))`.
pub fn four_cycle_raw(
    view: &NetworkView<'_>,
    user: UserId,
    article: ArticleId,
    strategy: FourCycleStrategy,
) -> f64 {
    let mut total = 0.0;
    match strategy {
        FourCycleStrategy::Pairs => {
            let by_article: Vec<(UserId, f64)> = view
                .article_neighbors(article)
                .filter(|&(u, _)| u != user)
                .collect();
            if by_article.is_empty() {
                return 0.0;
            }
            for (a2, w_ua2) in view.user_neighbors(user) {
                if a2 == article {
                    continue;
                }
                for &(u2, w_u2a) in &by_article {
                    let w_u2a2 = view.weight(u2, a2);
                    if w_u2a2 > 0.0 {
                        total += w_ua2.min(w_u2a2).min(w_u2a);
                    }
                }
            }
        }
        FourCycleStrategy::FromUser => {
            for (a2, w_ua2) in view.user_neighbors(user) {
                if a2 == article {
                    continue;
                }
                for (u2, w_u2a2) in view.article_neighbors(a2) {
                    if u2 == user {
                        continue;
                    }
                    let w_u2a = view.weight(u2, article);
                    if w_u2a > 0.0 {
                        total += w_ua2.min(w_u2a2).min(w_u2a);
                    }
                }
            }
        }
        FourCycleStrategy::FromArticle => {
            for (u2, w_u2a) in view.article_neighbors(article) {
                if u2 == user {
                    continue;
                }
                for (a2, w_u2a2) in view.user_neighbors(u2) {
                    if a2 == article {
                        continue;
                    }
                    let w_ua2 = view.weight(user, a2);
                    if w_ua2 > 0.0 {
                        total += w_ua2.min(w_u2a2).min(w_u2a);
                    }
                }
            }
        }
    }
    total
}

/// Evaluates statistic vectors of single dyads.
#[derive(Clone, Copy, Debug)]
pub struct StatEvaluator {
    cutoff: f64,
}

impl Default for StatEvaluator {
    fn default() -> Self {
        Self::new(DEFAULT_FOUR_CYCLE_CUTOFF)
    }
}

impl StatEvaluator {
    pub fn new(cutoff: f64) -> Self {
        StatEvaluator { cutoff }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn stat_vector(
        &self,
        view: &NetworkView<'_>,
        user: UserId,
        article: ArticleId,
    ) -> StatVector {
        let strategy = choose_strategy(view, user, article, self.cutoff);
        StatVector::from_raw(
            view.weight(user, article),
            view.weighted_in(article),
            view.weighted_out(user),
            four_cycle_raw(view, user, article, strategy),
        )
    }
}

/// Whole rows of the risk set `0..n_users x 0..n_articles` at one view.
///
/// Decayed edge weights and the popularity column are computed once; each
/// user row then costs one expansion of the three-paths leaving the user,
/// `sum_{a' in N(u)} sum_{u' in N(a')} d(u')`, instead of one four-cycle
/// evaluation per dyad.
pub struct RiskSetRows<'v> {
    view: NetworkView<'v>,
    popularity: Vec<f64>,
    edge_weights: Vec<f64>,
    raw_four_cycle: Vec<f64>,
    repetition: Vec<f64>,
}

impl<'v> RiskSetRows<'v> {
    pub fn new(view: NetworkView<'v>, n_articles: usize) -> Self {
        let popularity = (0..n_articles)
            .map(|a| view.weighted_in(ArticleId(a as u32)).ln_1p())
            .collect();
        // Slots of pruned edges get stale values but are never reached
        // through an adjacency list.
        let edge_weights = (0..view.edge_capacity())
            .map(|id| view.edge_weight(id as u32))
            .collect();
        RiskSetRows {
            view,
            popularity,
            edge_weights,
            raw_four_cycle: vec![0.0; n_articles],
            repetition: vec![0.0; n_articles],
        }
    }

    pub fn n_articles(&self) -> usize {
        self.popularity.len()
    }

    /// Transformed popularity of each article.
    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    /// Statistics of every dyad `(user, a)`, `a in 0..n_articles`.
    pub fn user_row(&mut self, user: UserId, out: &mut Vec<StatVector>) {
        let view = self.view;
        if view.user_degree(user) == 0 {
            self.isolated_row(out);
            return;
        }
        let n_articles = self.popularity.len();
        self.raw_four_cycle.iter_mut().for_each(|x| *x = 0.0);
        self.repetition.iter_mut().for_each(|x| *x = 0.0);

        let weights = &self.edge_weights;
        for &e1 in view.user_edges(user) {
            let a2 = view.edge_article(e1);
            let w1 = weights[e1 as usize];
            if (a2 as usize) < n_articles {
                self.repetition[a2 as usize] = w1;
            }
            for &e2 in view.article_edges(ArticleId(a2)) {
                let u2 = view.edge_user(e2);
                if u2 == user.0 {
                    continue;
                }
                let m12 = w1.min(weights[e2 as usize]);
                for &e3 in view.user_edges(UserId(u2)) {
                    let a = view.edge_article(e3);
                    if a == a2 || a as usize >= n_articles {
                        continue;
                    }
                    self.raw_four_cycle[a as usize] += m12.min(weights[e3 as usize]);
                }
            }
        }

        let act = view.weighted_out(user).ln_1p();
        out.clear();
        out.extend(
            self.popularity
                .iter()
                .enumerate()
                .map(|(a, &pop)| StatVector {
                    repetition: self.repetition[a].ln_1p(),
                    popularity: pop,
                    activity: act,
                    four_cycle: self.raw_four_cycle[a].ln_1p(),
                    assortativity: pop * act,
                }),
        );
    }

    /// Row shared by all users without live edges: only popularity is
    /// non-zero.
    pub fn isolated_row(&self, out: &mut Vec<StatVector>) {
        out.clear();
        out.extend(self.popularity.iter().map(|&pop| StatVector {
            popularity: pop,
            ..StatVector::default()
        }));
    }

    /// All rows `0..n_users`, row-major by user.
    pub fn fill(&mut self, n_users: usize, out: &mut Vec<StatVector>) {
        let mut row = Vec::with_capacity(self.n_articles());
        out.clear();
        out.reserve(n_users * self.n_articles());
        for u in 0..n_users {
            self.user_row(UserId(u as u32), &mut row);
            out.extend_from_slice(&row);
        }
    }
}
