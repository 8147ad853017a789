//! Phase classification of trained runs and `(α, ξ)` phase diagrams.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::TrainHistory;

/// Variants are declared in majority-vote tie order, least severe first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    Confusion,
    Forgetting,
    Memorization,
    Coexistence,
    PartialInversion,
    FullInversion,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 6] = [
        PhaseLabel::Confusion,
        PhaseLabel::Forgetting,
        PhaseLabel::Memorization,
        PhaseLabel::Coexistence,
        PhaseLabel::PartialInversion,
        PhaseLabel::FullInversion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhaseLabel::Confusion => "confusion",
            PhaseLabel::Forgetting => "forgetting",
            PhaseLabel::Memorization => "memorization",
            PhaseLabel::Coexistence => "coexistence",
            PhaseLabel::PartialInversion => "partial_inversion",
            PhaseLabel::FullInversion => "full_inversion",
        }
    }

    /// One-letter code for text grids.
    pub fn glyph(self) -> char {
        match self {
            PhaseLabel::Confusion => 'X',
            PhaseLabel::Forgetting => 'F',
            PhaseLabel::Memorization => 'M',
            PhaseLabel::Coexistence => 'C',
            PhaseLabel::PartialInversion => 'P',
            PhaseLabel::FullInversion => 'I',
        }
    }

    pub fn is_inversion(self) -> bool {
        matches!(self, PhaseLabel::PartialInversion | PhaseLabel::FullInversion)
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhaseLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PhaseLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown phase label {s:?}")))
    }
}

/// Classification thresholds. `slack` is the 1.05 in the `1.05 − ξ` band edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            high: 0.90,
            slack: 1.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub label: PhaseLabel,
    /// `slack − ξ ≥ high`: the partial-inversion band is empty, so every
    /// high-test, low-train run reads as full inversion.
    pub degenerate_band: bool,
}

/// Band edges are compared with a 1e-12 allowance so `1.05 − 0.35` behaves
/// as 0.70 rather than 0.7000000000000001.
const EDGE_EPS: f64 = 1e-12;

pub fn classify_with(train: f64, test: f64, xi: f64, max_hist_test: f64, th: &Thresholds) -> Classification {
    let lower = th.slack - xi;
    let degenerate_band = lower >= th.high - EDGE_EPS;
    let label = if test >= th.high {
        if train >= th.high {
            PhaseLabel::Coexistence
        } else if train >= lower - EDGE_EPS {
            PhaseLabel::PartialInversion
        } else {
            PhaseLabel::FullInversion
        }
    } else if train >= th.high {
        PhaseLabel::Memorization
    } else if max_hist_test.max(test) >= th.high {
        PhaseLabel::Forgetting
    } else {
        PhaseLabel::Confusion
    };
    Classification { label, degenerate_band }
}

/// Classifies final accuracies; `max_hist_test` is the best test accuracy
/// seen during training and separates Forgetting from Confusion.
pub fn classify(train: f64, test: f64, xi: f64, max_hist_test: f64) -> PhaseLabel {
    classify_with(train, test, xi, max_hist_test, &Thresholds::default()).label
}

/// Classifies from the last row of a history.
pub fn classify_history(history: &TrainHistory, xi: f64) -> Result<Classification> {
    let last = history
        .last()
        .ok_or_else(|| Error::Data("cannot classify an empty history".into()))?;
    Ok(classify_with(
        last.train_acc,
        last.test_acc,
        xi,
        history.max_test_acc(),
        &Thresholds::default(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub alpha: f64,
    pub xi: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub max_hist_test_acc: f64,
    pub label: PhaseLabel,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: PhaseLabel,
    pub votes: BTreeMap<PhaseLabel, usize>,
}

impl Cell {
    pub fn total(&self) -> usize {
        self.votes.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDiagram {
    pub alphas: Vec<f64>,
    pub xis: Vec<f64>,
    /// `cells[i][j]` for `alphas[i]`, `xis[j]`; `None` marks a gap.
    pub cells: Vec<Vec<Option<Cell>>>,
}

const GRID_EPS: f64 = 1e-9;

fn grid_index(grid: &[f64], x: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - x).abs() < GRID_EPS)
}

/// Majority vote per cell; ties go to the most severe label in
/// [`PhaseLabel`] declaration order. Points off the grid are ignored.
pub fn assemble_diagram(points: &[PhasePoint], alphas: &[f64], xis: &[f64]) -> PhaseDiagram {
    let mut votes = vec![vec![BTreeMap::<PhaseLabel, usize>::new(); xis.len()]; alphas.len()];
    for pt in points {
        if let (Some(i), Some(j)) = (grid_index(alphas, pt.alpha), grid_index(xis, pt.xi)) {
            *votes[i][j].entry(pt.label).or_insert(0) += 1;
        }
    }
    let cells = votes
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| {
                    let (&label, _) = v.iter().max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))?;
                    Some(Cell { label, votes: v })
                })
                .collect()
        })
        .collect();
    PhaseDiagram {
        alphas: alphas.to_vec(),
        xis: xis.to_vec(),
        cells,
    }
}

impl PhaseDiagram {
    pub fn get(&self, alpha: f64, xi: f64) -> Option<&Cell> {
        let i = grid_index(&self.alphas, alpha)?;
        let j = grid_index(&self.xis, xi)?;
        self.cells[i][j].as_ref()
    }

    pub fn gaps(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// CSV `alpha,xi,label,votes`. Gaps have label `gap` and empty votes;
    /// votes read `label:count` joined by `;`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["alpha", "xi", "label", "votes"])?;
        for (i, &a) in self.alphas.iter().enumerate() {
            for (j, &x) in self.xis.iter().enumerate() {
                let (label, votes) = match &self.cells[i][j] {
                    None => ("gap".to_string(), String::new()),
                    Some(c) => (
                        c.label.to_string(),
                        c.votes
                            .iter()
                            .map(|(l, n)| format!("{l}:{n}"))
                            .collect::<Vec<_>>()
                            .join(";"),
                    ),
                };
                out.write_record([a.to_string(), x.to_string(), label, votes])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Text grid: one row per ξ (largest on top), one column per α.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for (j, &x) in self.xis.iter().enumerate().rev() {
            s.push_str(&format!("xi={x:<5.2} "));
            for i in 0..self.alphas.len() {
                s.push(self.cells[i][j].as_ref().map_or('.', |c| c.label.glyph()));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "alpha: {}\n",
            self.alphas
                .iter()
                .map(|a| format!("{a:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        s.push_str("legend: C coexistence, P partial inversion, I full inversion, M memorization, F forgetting, X confusion, . gap\n");
        s
    }
}

/// `n` evenly spaced values from `a` to `b` inclusive, rounded to 1e-12.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                let x = a + (b - a) * i as f64 / (n - 1) as f64;
                (x * 1e12).round() / 1e12
            })
            .collect(),
    }
}
