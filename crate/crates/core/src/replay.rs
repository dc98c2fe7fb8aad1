//! One ordered pass over the event stream that turns sampled events into
//! strata of observations.
//!
//! Every event updates the network; events in a sample additionally get
//! their case and control statistics evaluated just before their own update.
//! Any number of sample configurations share one pass.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::estimator::{Design, Stratum};
use crate::fmt::g17;
use crate::ingest::{ArticleId, Event, IngestError, NodeUniverse, Timestamp, UserId};
use crate::network::{DecayConfig, NetworkError, PastEventNetwork};
use crate::sampler::{sample_controls, DrawStatus, SampleConfig, RNG_ALGORITHM};
use crate::stats::{RiskSetRows, StatEvaluator, StatVector, NUM_STATS, STAT_NAMES};

/// Which dyads can receive an event at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskSet {
    /// Users and articles whose first event is at or before `t`, including
    /// later events with the same timestamp.
    Observed,
    /// A fixed population present from the start.
    Closed { n_users: usize, n_articles: usize },
}

impl RiskSet {
    /// The closed population made of every node in `universe`.
    pub fn closed(universe: &NodeUniverse) -> Self {
        RiskSet::Closed {
            n_users: universe.n_users(),
            n_articles: universe.n_articles(),
        }
    }

    fn label(&self) -> String {
        match self {
            RiskSet::Observed => "observed".into(),
            RiskSet::Closed {
                n_users,
                n_articles,
            } => format!("closed:{n_users}x{n_articles}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReplayConfig {
    pub decay: DecayConfig,
    pub risk_set: RiskSet,
    pub four_cycle_cutoff: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            decay: DecayConfig::default(),
            risk_set: RiskSet::Observed,
            four_cycle_cutoff: crate::stats::DEFAULT_FOUR_CYCLE_CUTOFF,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("event {seq} involves a node outside the closed population")]
    OutsidePopulation { seq: u64 },
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("stratum {stratum}: {cases} cases (expected exactly one)")]
    Cases { stratum: u64, cases: usize },
}

/// Strata of observations: one case row followed by its control rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationTable {
    /// `key=value` pairs echoed in the header.
    pub meta: Vec<(String, String)>,
    strata: Vec<Stratum>,
    /// Stratum ids; the event's position in the input.
    ids: Vec<u64>,
    times: Vec<Timestamp>,
    users: Vec<u32>,
    articles: Vec<u32>,
    /// Row-major, `NUM_STATS` per row.
    stats: Vec<f64>,
    /// Sampled events whose risk set held only the case.
    pub degenerate: usize,
    /// Strata with fewer than `m` controls.
    pub clamped: usize,
}

pub const TABLE_COLUMNS: [&str; 10] = [
    "stratum",
    "is_case",
    "user",
    "article",
    "repetition",
    "popularity",
    "activity",
    "four_cycle",
    "assortativity",
    "time",
];

impl ObservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn for_config(sample: &SampleConfig, cfg: &ReplayConfig) -> Self {
        let meta = [
            ("seed", sample.seed().to_string()),
            ("p", g17(sample.p())),
            ("m", sample.m().to_string()),
            ("halflife", g17(cfg.decay.halflife())),
            ("epsilon", g17(cfg.decay.prune_epsilon())),
            ("rng", RNG_ALGORITHM.to_string()),
            ("risk_set", cfg.risk_set.label()),
        ];
        ObservationTable {
            meta: meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            ..Self::default()
        }
    }

    /// Appends a stratum. The case is the first row.
    pub fn push_stratum(
        &mut self,
        id: u64,
        time: Timestamp,
        rows: impl IntoIterator<Item = (UserId, ArticleId, StatVector)>,
    ) {
        let start = self.users.len();
        for (u, a, s) in rows {
            self.users.push(u.0);
            self.articles.push(a.0);
            self.stats.extend_from_slice(&s.to_array());
        }
        let len = self.users.len() - start;
        assert!(len > 0, "empty stratum");
        self.strata.push(Stratum {
            start,
            len,
            case: start,
        });
        self.ids.push(id);
        self.times.push(time);
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn n_rows(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn stratum_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn stratum_times(&self) -> &[Timestamp] {
        &self.times
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    pub fn row_stats(&self, row: usize) -> StatVector {
        let mut v = [0.0; NUM_STATS];
        v.copy_from_slice(&self.stats[row * NUM_STATS..(row + 1) * NUM_STATS]);
        StatVector::from_array(v)
    }

    pub fn row_dyad(&self, row: usize) -> (UserId, ArticleId) {
        (UserId(self.users[row]), ArticleId(self.articles[row]))
    }

    /// Case flag of every row.
    pub fn case_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_rows()];
        for s in &self.strata {
            flags[s.case] = true;
        }
        flags
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn design(&self) -> Design<'_> {
        Design::new(NUM_STATS, &self.stats, &self.strata).expect("table strata are consistent")
    }

    /// Writes `# key=value` header lines, the column header and one line
    /// per observation. Node names come from `universe` when given.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        universe: Option<&NodeUniverse>,
    ) -> io::Result<()> {
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "# strata={}", self.n_strata())?;
        writeln!(out, "# degenerate={}", self.degenerate)?;
        writeln!(out, "# clamped={}", self.clamped)?;
        writeln!(out, "{}", TABLE_COLUMNS.join(","))?;
        let user = |i: u32| match universe {
            Some(u) if (i as usize) < u.n_users() => u.user_name(UserId(i)).to_string(),
            _ => format!("#{i}"),
        };
        let article = |i: u32| match universe {
            Some(u) if (i as usize) < u.n_articles() => u.article_name(ArticleId(i)).to_string(),
            _ => format!("#{i}"),
        };
        for (s, (&id, &time)) in self.strata.iter().zip(self.ids.iter().zip(&self.times)) {
            for row in s.rows() {
                write!(
                    out,
                    "{id},{},{},{}",
                    (row == s.case) as u8,
                    user(self.users[row]),
                    article(self.articles[row])
                )?;
                for x in &self.stats[row * NUM_STATS..(row + 1) * NUM_STATS] {
                    write!(out, ",{}", g17(*x))?;
                }
                writeln!(out, ",{time}")?;
            }
        }
        out.flush()
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Node
    /// names are interned into the returned universe; rows of a stratum
    /// must be contiguous.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(Self, NodeUniverse), TableError> {
        let mut table = ObservationTable::new();
        let mut universe = NodeUniverse::new();
        let mut current: Option<(u64, usize, Option<usize>)> = None;
        let mut seen_header = false;

        let finish =
            |table: &mut Self, current: Option<(u64, usize, Option<usize>)>, cases: usize| {
                if let Some((id, start, case)) = current {
                    match case {
                        Some(case) if cases == 1 => {
                            table.strata.push(Stratum {
                                start,
                                len: table.users.len() - start,
                                case,
                            });
                            Ok(())
                        }
                        _ => Err(TableError::Cases { stratum: id, cases }),
                    }
                } else {
                    Ok(())
                }
            };
        let mut cases = 0;

        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let bad = |reason: String| TableError::Malformed {
                line: lineno,
                reason,
            };
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    match k {
                        "strata" => {}
                        "degenerate" => table.degenerate = v.parse().map_err(|_| bad(v.into()))?,
                        "clamped" => table.clamped = v.parse().map_err(|_| bad(v.into()))?,
                        _ => table.meta.push((k.to_string(), v.to_string())),
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                if line.trim() != TABLE_COLUMNS.join(",") {
                    return Err(bad("expected column header".into()));
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != TABLE_COLUMNS.len() {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    TABLE_COLUMNS.len(),
                    fields.len()
                )));
            }
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad stratum id {:?}", fields[0])))?;
            let is_case = match fields[1] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("bad case flag {other:?}"))),
            };
            let time: Timestamp = fields[9]
                .parse()
                .map_err(|_| bad(format!("bad time {:?}", fields[9])))?;
            let mut stats = [0.0; NUM_STATS];
            for (j, x) in stats.iter_mut().enumerate() {
                let f = fields[4 + j];
                *x = f
                    .parse()
                    .map_err(|_| bad(format!("bad {} value {f:?}", STAT_NAMES[j])))?;
            }
            if current.map(|c| c.0) != Some(id) {
                finish(&mut table, current, cases)?;
                current = Some((id, table.users.len(), None));
                cases = 0;
                table.ids.push(id);
                table.times.push(time);
            }
            let row = table.users.len();
            if is_case {
                cases += 1;
                if let Some(c) = current.as_mut() {
                    c.2 = Some(row);
                }
            }
            let seq = row as u64;
            table.users.push(
                universe
                    .intern_user(fields[2], seq)
                    .map_err(|e| bad(e.to_string()))?
                    .0,
            );
            table.articles.push(
                universe
                    .intern_article(fields[3], seq)
                    .map_err(|e| bad(e.to_string()))?
                    .0,
            );
            table.stats.extend_from_slice(&stats);
        }
        finish(&mut table, current, cases)?;
        Ok((table, universe))
    }
}

/// Incremental replay, fed one timestamp group at a time.
pub struct Replayer {
    net: PastEventNetwork,
    configs: Vec<SampleConfig>,
    tables: Vec<ObservationTable>,
    cfg: ReplayConfig,
    evaluator: StatEvaluator,
    n_users: usize,
    n_articles: usize,
    full_rows: Vec<StatVector>,
    active: Vec<usize>,
}

impl Replayer {
    pub fn new(configs: &[SampleConfig], cfg: &ReplayConfig) -> Self {
        let (n_users, n_articles) = match cfg.risk_set {
            RiskSet::Observed => (0, 0),
            RiskSet::Closed {
                n_users,
                n_articles,
            } => (n_users, n_articles),
        };
        Replayer {
            net: PastEventNetwork::new(cfg.decay),
            configs: configs.to_vec(),
            tables: configs
                .iter()
                .map(|s| ObservationTable::for_config(s, cfg))
                .collect(),
            cfg: *cfg,
            evaluator: StatEvaluator::new(cfg.four_cycle_cutoff),
            n_users,
            n_articles,
            full_rows: Vec::new(),
            active: Vec::new(),
        }
    }

    pub fn network(&self) -> &PastEventNetwork {
        &self.net
    }

    /// Processes all events sharing one timestamp, in order.
    pub fn process_group(&mut self, group: &[Event]) -> Result<(), ReplayError> {
        match self.cfg.risk_set {
            RiskSet::Observed => {
                for e in group {
                    self.n_users = self.n_users.max(e.user.index() + 1);
                    self.n_articles = self.n_articles.max(e.article.index() + 1);
                }
            }
            RiskSet::Closed { .. } => {
                if let Some(e) = group.iter().find(|e| {
                    e.user.index() >= self.n_users || e.article.index() >= self.n_articles
                }) {
                    return Err(ReplayError::OutsidePopulation { seq: e.seq });
                }
            }
        }
        for e in group {
            self.process_event(e)?;
        }
        Ok(())
    }

    fn process_event(&mut self, e: &Event) -> Result<(), ReplayError> {
        self.active.clear();
        self.active
            .extend((0..self.configs.len()).filter(|&i| self.configs[i].includes(e.seq)));
        if self.active.is_empty() {
            self.net.apply_event(e)?;
            return Ok(());
        }
        let view = self.net.view(e.time)?;
        let (n_users, n_articles) = (self.n_users, self.n_articles);
        let case = (e.user, e.article);
        let mut have_rows = false;
        let mut case_stats = None;

        for &i in &self.active {
            let sample = &self.configs[i];
            let mut rng = sample.control_rng(e.seq);
            let draw = sample_controls(n_users, n_articles, case, sample.m(), &mut rng);
            let table = &mut self.tables[i];
            match draw.status {
                DrawStatus::Degenerate => {
                    table.degenerate += 1;
                    continue;
                }
                DrawStatus::Clamped => table.clamped += 1,
                _ => {}
            }
            if draw.covers_risk_set() {
                if !have_rows {
                    RiskSetRows::new(view, n_articles).fill(n_users, &mut self.full_rows);
                    have_rows = true;
                }
                let rows = &self.full_rows;
                let at = |(u, a): (UserId, ArticleId)| rows[u.index() * n_articles + a.index()];
                table.push_stratum(
                    e.seq,
                    e.time,
                    std::iter::once(case)
                        .chain(draw.controls.iter().copied())
                        .map(|d| (d.0, d.1, at(d))),
                );
            } else {
                let evaluator = self.evaluator;
                let case_row =
                    *case_stats.get_or_insert_with(|| evaluator.stat_vector(&view, case.0, case.1));
                table.push_stratum(
                    e.seq,
                    e.time,
                    std::iter::once((case.0, case.1, case_row)).chain(
                        draw.controls
                            .iter()
                            .map(|&(u, a)| (u, a, evaluator.stat_vector(&view, u, a))),
                    ),
                );
            }
        }
        self.net.apply_event(e)?;
        Ok(())
    }

    pub fn finish(self) -> Vec<ObservationTable> {
        self.tables
    }
}

/// Replays an in-memory ordered stream; one table per sample configuration,
/// in the order given.
pub fn replay(
    events: &[Event],
    configs: &[SampleConfig],
    cfg: &ReplayConfig,
) -> Result<Vec<ObservationTable>, ReplayError> {
    let mut replayer = Replayer::new(configs, cfg);
    for group in events.chunk_by(|a, b| a.time == b.time) {
        replayer.process_group(group)?;
    }
    Ok(replayer.finish())
}

/// Replays a stream read lazily, holding one timestamp group at a time.
pub fn replay_stream<I>(
    events: I,
    configs: &[SampleConfig],
    cfg: &ReplayConfig,
) -> Result<Vec<ObservationTable>, ReplayError>
where
    I: IntoIterator<Item = Result<Event, IngestError>>,
{
    let mut replayer = Replayer::new(configs, cfg);
    let mut group: Vec<Event> = Vec::new();
    for e in events {
        let e = e?;
        if group.last().is_some_and(|g| g.time != e.time) {
            replayer.process_group(&group)?;
            group.clear();
        }
        group.push(e);
    }
    if !group.is_empty() {
        replayer.process_group(&group)?;
    }
    Ok(replayer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::loglik;
    use crate::ingest::{read_events, EventFormat};

    fn log(text: &str) -> crate::ingest::EventLog {
        read_events(text.as_bytes(), &EventFormat::default()).unwrap()
    }

    fn cfg(halflife: f64) -> ReplayConfig {
        ReplayConfig {
            decay: DecayConfig::new(halflife, 0.01).unwrap(),
            ..ReplayConfig::default()
        }
    }

    #[test]
    fn case_sees_only_earlier_events() {
        let log = log("u1,a1,0\nu1,a1,100\n");
        let sample = SampleConfig::new(1.0, 1, 3).unwrap();
        let tables = replay(&log.events, &[sample], &cfg(100.0)).unwrap();
        let t = &tables[0];
        // Both events are alone in their risk set.
        assert_eq!(t.degenerate, 2);
        assert_eq!(t.n_strata(), 0);

        let log = log_with_second_user();
        let tables = replay(&log.events, &[sample], &cfg(100.0)).unwrap();
        let t = &tables[0];
        // u2 enters at the first timestamp, so event 0 has a control.
        assert_eq!(t.stratum_ids(), &[0, 1, 2]);
        assert_eq!(t.degenerate, 0);
        let s = t.strata()[2];
        let case = t.row_stats(s.case);
        assert!((case.repetition - 1.5f64.ln()).abs() < 1e-15);
        assert!((case.activity - 1.5f64.ln()).abs() < 1e-15);
    }

    fn log_with_second_user() -> crate::ingest::EventLog {
        log("u1,a1,0\nu2,a1,0\nu1,a1,100\n")
    }

    #[test]
    fn same_second_nodes_are_in_the_risk_set() {
        let log = log("u1,a1,5\nu2,a2,5\n");
        let sample = SampleConfig::new(1.0, 10, 1).unwrap();
        let tables = replay(&log.events, &[sample], &ReplayConfig::default()).unwrap();
        let t = &tables[0];
        assert_eq!(t.n_strata(), 2);
        assert_eq!(t.strata()[0].len, 4);
        assert_eq!(t.clamped, 2);
    }

    #[test]
    fn exhaustive_sample_equals_full_likelihood() {
        let log = log(
            "u1,a1,0\nu2,a2,10\nu3,a3,20\nu1,a2,30\nu2,a1,40\nu3,a1,50\nu1,a1,60\nu2,a3,70\nu3,a2,80\n",
        );
        let exhaustive = SampleConfig::new(1.0, 8, 9).unwrap();
        let closed = ReplayConfig {
            risk_set: RiskSet::closed(&log.universe),
            ..cfg(40.0)
        };
        let tables = replay(&log.events, &[exhaustive], &closed).unwrap();
        let t = &tables[0];
        assert_eq!(t.n_strata(), 9);
        assert!(t.strata().iter().all(|s| s.len == 9));

        // Full likelihood evaluated directly from the network.
        let theta = [0.3, -0.2, 0.5, 0.1, 0.05];
        let mut net = PastEventNetwork::new(closed.decay);
        let mut expected = 0.0;
        for e in &log.events {
            let view = net.view(e.time).unwrap();
            let eta = |u: u32, a: u32| {
                let s = crate::stats::stat_vector(&view, UserId(u), ArticleId(a)).to_array();
                s.iter().zip(&theta).map(|(x, t)| x * t).sum::<f64>()
            };
            let denom: f64 = (0..3)
                .flat_map(|u| (0..3).map(move |a| (u, a)))
                .map(|(u, a)| eta(u, a).exp())
                .sum();
            expected += eta(e.user.0, e.article.0) - denom.ln();
            net.apply_event(e).unwrap();
        }
        assert!((loglik(&t.design(), &theta) - expected).abs() < 1e-12);
    }

    #[test]
    fn dropping_an_event_from_the_sample_changes_no_other_stratum() {
        let text: String = (0..60)
            .map(|i| format!("u{},a{},{}\n", i % 7, (i * 3) % 5, i * 10))
            .collect();
        let log = log(&text);
        let all = SampleConfig::new(1.0, 4, 11).unwrap();
        let half = SampleConfig::new(0.5, 4, 11).unwrap();
        let tables = replay(&log.events, &[all, half], &cfg(200.0)).unwrap();
        let (full, part) = (&tables[0], &tables[1]);
        assert!(part.n_strata() < full.n_strata());
        for (k, id) in part.stratum_ids().iter().enumerate() {
            let j = full.stratum_ids().iter().position(|x| x == id).unwrap();
            let (a, b) = (part.strata()[k], full.strata()[j]);
            assert_eq!(a.len, b.len);
            for (ra, rb) in a.rows().zip(b.rows()) {
                assert_eq!(part.row_dyad(ra), full.row_dyad(rb));
                assert_eq!(part.row_stats(ra), full.row_stats(rb));
            }
        }
    }

    #[test]
    fn streaming_matches_in_memory() {
        let text: String = (0..80)
            .map(|i| format!("u{},a{},{}\n", (i * 5) % 9, (i * 7) % 6, i / 3))
            .collect();
        let log = log(&text);
        let configs = [
            SampleConfig::new(0.7, 3, 5).unwrap(),
            SampleConfig::new(1.0, 50, 6).unwrap(),
        ];
        let a = replay(&log.events, &configs, &cfg(20.0)).unwrap();
        let reader = crate::ingest::EventReader::new(text.as_bytes(), &EventFormat::default());
        let b = replay_stream(reader, &configs, &cfg(20.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let log = log_with_second_user();
        let sample = SampleConfig::new(1.0, 1, 3).unwrap();
        let tables = replay(&log.events, &[sample], &cfg(100.0)).unwrap();
        let mut buf = Vec::new();
        tables[0].write_csv(&mut buf, Some(&log.universe)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("# rng=chacha8"));
        assert!(text.contains("# halflife=100"));
        assert!(text.contains(&TABLE_COLUMNS.join(",")));
        let (back, universe) = ObservationTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.stats(), tables[0].stats());
        assert_eq!(back.strata(), tables[0].strata());
        assert_eq!(back.stratum_ids(), tables[0].stratum_ids());
        assert_eq!(back.meta("p"), Some("1"));
        assert_eq!(back.degenerate, tables[0].degenerate);
        assert!(universe.user("u2").is_some());
    }

    #[test]
    fn read_rejects_bad_case_counts() {
        let header = TABLE_COLUMNS.join(",");
        let two = format!("{header}\n0,1,u,a,0,0,0,0,0,1\n0,1,v,a,0,0,0,0,0,1\n");
        assert!(matches!(
            ObservationTable::read_csv(two.as_bytes()),
            Err(TableError::Cases { cases: 2, .. })
        ));
        let none = format!("{header}\n0,0,u,a,0,0,0,0,0,1\n0,0,v,a,0,0,0,0,0,1\n");
        assert!(matches!(
            ObservationTable::read_csv(none.as_bytes()),
            Err(TableError::Cases { cases: 0, .. })
        ));
        let short = format!("{header}\n0,1,u,a,0,0\n");
        assert!(matches!(
            ObservationTable::read_csv(short.as_bytes()),
            Err(TableError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn closed_population_rejects_outsiders() {
        let log = log("u1,a1,0\nu2,a1,1\n");
        let closed = ReplayConfig {
            risk_set: RiskSet::Closed {
                n_users: 1,
                n_articles: 1,
            },
            ..ReplayConfig::default()
        };
        let sample = SampleConfig::new(1.0, 1, 0).unwrap();
        assert!(matches!(
            replay(&log.events, &[sample], &closed),
            Err(ReplayError::OutsidePopulation { seq: 1 })
        ));
    }
}
