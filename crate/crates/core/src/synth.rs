//! Seeded synthetic two-team game corpus with one-line headlines.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Example, RecordTable};
use crate::train::rng_for;
use crate::{Error, Result};

pub const TEAMS: &[&str] = &[
    "Hawks", "Heat", "Suns", "Jazz", "Celtics", "Lakers", "Bulls", "Knicks", "Nets", "Magic",
    "Bucks", "Pistons", "Pacers", "Raptors", "Wizards", "Hornets", "Cavaliers", "Spurs",
    "Rockets", "Mavericks", "Grizzlies", "Pelicans", "Thunder", "Nuggets", "Timberwolves",
    "Kings", "Clippers", "Warriors",
];

/// Verb for a winning margin: tighter games get softer verbs.
pub fn verb_for_gap(gap: u32) -> &'static str {
    match gap {
        0..=4 => "edges",
        5..=9 => "holds off",
        10..=19 => "tops",
        _ => "routs",
    }
}

/// Which `(winner points, loser points)` pairs a corpus may use.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ScoreFilter {
    #[default]
    Any,
    Exclude(BTreeSet<(u32, u32)>),
    Only(BTreeSet<(u32, u32)>),
}

impl ScoreFilter {
    fn allows(&self, pair: (u32, u32)) -> bool {
        match self {
            ScoreFilter::Any => true,
            ScoreFilter::Exclude(s) => !s.contains(&pair),
            ScoreFilter::Only(s) => s.contains(&pair),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub min_points: u32,
    pub max_points: u32,
    /// Adds a Rebound column the headline never mentions.
    pub rebounds: bool,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 64,
            seed: 7,
            min_points: 80,
            max_points: 125,
            rebounds: true,
            id_prefix: "synth".into(),
        }
    }
}

/// All ordered `(winner, loser)` pairs in the score range, winner strictly
/// ahead.
pub fn score_pairs(min_points: u32, max_points: u32) -> Vec<(u32, u32)> {
    let mut v = Vec::new();
    for w in min_points..=max_points {
        for l in min_points..w {
            v.push((w, l));
        }
    }
    v
}

/// A seeded random subset of score pairs to hold out of training.
pub fn holdout_pairs(cfg: &SynthConfig, count: usize, seed: u64) -> Result<BTreeSet<(u32, u32)>> {
    let mut pairs = score_pairs(cfg.min_points, cfg.max_points);
    if count > pairs.len() {
        return Err(Error::Config(format!(
            "cannot hold out {count} of {} score pairs",
            pairs.len()
        )));
    }
    pairs.shuffle(&mut rng_for(seed, 2));
    Ok(pairs.into_iter().take(count).collect())
}

pub fn generate(cfg: &SynthConfig, filter: &ScoreFilter) -> Result<Vec<Example>> {
    if cfg.min_points >= cfg.max_points {
        return Err(Error::Config("min_points must be below max_points".into()));
    }
    let pairs: Vec<(u32, u32)> = score_pairs(cfg.min_points, cfg.max_points)
        .into_iter()
        .filter(|&p| filter.allows(p))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Config("score filter leaves no pairs".into()));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let teams: Vec<&str> = TEAMS.choose_multiple(&mut rng, 2).copied().collect();
        let (wp, lp) = *pairs.choose(&mut rng).expect("non-empty");
        let winner_row = rng.random_range(1..=2usize);
        let points = if winner_row == 1 { [wp, lp] } else { [lp, wp] };
        let mut rows = Vec::new();
        for r in 0..2 {
            let mut row = vec![
                ("Team".to_string(), teams[r].to_string()),
                ("Points".to_string(), points[r].to_string()),
            ];
            if cfg.rebounds {
                row.push(("Rebound".into(), rng.random_range(30..=55u32).to_string()));
            }
            rows.push(row);
        }
        let table = RecordTable::from_rows(&rows)?;
        let (w, l) = (teams[winner_row - 1], teams[2 - winner_row]);
        let text = format!("{w} {} the {l} with {wp} - {lp}", verb_for_gap(wp - lp));
        out.push(Example::new(format!("{}-{i:05}", cfg.id_prefix), table, tokenize(&text))?);
    }
    Ok(out)
}
