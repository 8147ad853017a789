//! Modular arithmetic example tables, train/test splits and symmetric label
//! corruption.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Mul,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Add => "add",
            Op::Mul => "mul",
        })
    }
}

impl FromStr for Op {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Op::Add),
            "mul" => Ok(Op::Mul),
            _ => Err(Error::Config(format!("unknown op {s:?} (expected add|mul)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub op: Op,
    pub p: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec { op: Op::Add, p: 97 }
    }
}

impl TaskSpec {
    pub fn new(op: Op, p: usize) -> Result<Self> {
        let t = TaskSpec { op, p };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("modulus p must be >= 2, got {}", self.p)));
        }
        Ok(())
    }

    pub fn label(&self, m: usize, n: usize) -> usize {
        match self.op {
            Op::Add => (m + n) % self.p,
            Op::Mul => (m * n) % self.p,
        }
    }
}

/// All `p²` ordered pairs with their true and assigned labels.
///
/// Row `i` holds the pair `(i / p, i % p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleTable {
    pub task: TaskSpec,
    pub pairs: Vec<(usize, usize)>,
    pub true_labels: Vec<usize>,
    pub assigned_labels: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub in_train: Vec<bool>,
    pub alpha: f64,
    pub xi: f64,
}

/// Disjoint index lists over an [`ExampleTable`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Subsets {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_corrupted: Vec<usize>,
    pub train_clean: Vec<usize>,
}

/// Number of training examples for a data fraction: `α·p²` rounded half to even.
pub fn train_count(alpha: f64, p: usize) -> usize {
    (alpha * (p * p) as f64).round_ties_even() as usize
}

pub fn generate_table(task: TaskSpec) -> Result<ExampleTable> {
    task.validate()?;
    let p = task.p;
    let pairs: Vec<(usize, usize)> = (0..p * p).map(|i| (i / p, i % p)).collect();
    let true_labels: Vec<usize> = pairs.iter().map(|&(m, n)| task.label(m, n)).collect();
    Ok(ExampleTable {
        task,
        assigned_labels: true_labels.clone(),
        true_labels,
        corrupted: vec![false; p * p],
        in_train: vec![false; p * p],
        pairs,
        alpha: 0.0,
        xi: 0.0,
    })
}

impl ExampleTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn p(&self) -> usize {
        self.task.p
    }

    /// Marks a uniformly random subset of `round(α·p²)` examples as training
    /// data. Any previous split or corruption is discarded.
    pub fn split(&self, alpha: f64, rng: &mut Rng) -> Result<ExampleTable> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let total = self.len();
        let n_train = train_count(alpha, self.p());
        let mut order: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut order);
        let mut in_train = vec![false; total];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        Ok(ExampleTable {
            task: self.task,
            pairs: self.pairs.clone(),
            true_labels: self.true_labels.clone(),
            assigned_labels: self.true_labels.clone(),
            corrupted: vec![false; total],
            in_train,
            alpha,
            xi: 0.0,
        })
    }

    /// Picks `round(ξ·|train|)` training examples without replacement and
    /// redraws each label uniformly from `[0, p)`. A redraw may land on the
    /// true label; such examples are not flagged as corrupted.
    pub fn corrupt(&self, xi: f64, rng: &mut Rng) -> Result<ExampleTable> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Config(format!("xi must lie in [0, 1], got {xi}")));
        }
        if !self.in_train.iter().any(|&t| t) {
            return Err(Error::Config("corrupt() requires a split table".into()));
        }
        let mut out = self.clone();
        out.assigned_labels = self.true_labels.clone();
        out.corrupted = vec![false; self.len()];
        out.xi = xi;

        let mut train: Vec<usize> = (0..self.len()).filter(|&i| self.in_train[i]).collect();
        let n_sel = (xi * train.len() as f64).round_ties_even() as usize;
        rng.shuffle(&mut train);
        let p = self.p();
        for &i in &train[..n_sel] {
            let label = rng.below(p);
            out.assigned_labels[i] = label;
            out.corrupted[i] = label != self.true_labels[i];
        }
        Ok(out)
    }

    pub fn subsets(&self) -> Subsets {
        let mut s = Subsets::default();
        for i in 0..self.len() {
            if self.in_train[i] {
                s.train.push(i);
                if self.corrupted[i] {
                    s.train_corrupted.push(i);
                } else {
                    s.train_clean.push(i);
                }
            } else {
                s.test.push(i);
            }
        }
        s
    }

    pub fn pairs_at(&self, idx: &[usize]) -> Vec<(usize, usize)> {
        idx.iter().map(|&i| self.pairs[i]).collect()
    }

    pub fn assigned_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.assigned_labels[i]).collect()
    }

    pub fn true_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.true_labels[i]).collect()
    }

    /// Writes the table as text: a `# task=… p=… alpha=… xi=…` line, a header
    /// `m,n,true,assigned,corrupted,in_train`, then one record per example
    /// with booleans as `0`/`1`.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# task={} p={} alpha={} xi={}",
            self.task.op, self.task.p, self.alpha, self.xi
        )?;
        writeln!(w, "m,n,true,assigned,corrupted,in_train")?;
        for i in 0..self.len() {
            let (m, n) = self.pairs[i];
            writeln!(
                w,
                "{m},{n},{},{},{},{}",
                self.true_labels[i],
                self.assigned_labels[i],
                u8::from(self.corrupted[i]),
                u8::from(self.in_train[i])
            )?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<ExampleTable> {
        let mut lines = r.lines();
        let meta = lines.next().ok_or_else(|| Error::Format("empty table file".into()))??;
        let meta = meta
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("missing metadata line".into()))?;
        let (mut op, mut p, mut alpha, mut xi) = (None, None, 0.0, 0.0);
        for kv in meta.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata item {kv:?}")))?;
            match k {
                "task" => op = Some(v.parse::<Op>()?),
                "p" => p = Some(parse_num::<usize>(v)?),
                "alpha" => alpha = parse_num::<f64>(v)?,
                "xi" => xi = parse_num::<f64>(v)?,
                _ => return Err(Error::Format(format!("unknown metadata key {k:?}"))),
            }
        }
        let task = TaskSpec::new(
            op.ok_or_else(|| Error::Format("metadata lacks task".into()))?,
            p.ok_or_else(|| Error::Format("metadata lacks p".into()))?,
        )?;
        let header = lines.next().ok_or_else(|| Error::Format("missing header".into()))??;
        if header.trim() != "m,n,true,assigned,corrupted,in_train" {
            return Err(Error::Format(format!("unexpected header {header:?}")));
        }
        let mut t = generate_table(task)?;
        t.alpha = alpha;
        t.xi = xi;
        let mut seen = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("bad record {line:?}")));
            }
            let m: usize = parse_num(f[0])?;
            let n: usize = parse_num(f[1])?;
            if m >= task.p || n >= task.p {
                return Err(Error::Format(format!("pair out of range in {line:?}")));
            }
            let i = m * task.p + n;
            let truth: usize = parse_num(f[2])?;
            if truth != t.true_labels[i] {
                return Err(Error::Format(format!("wrong true label in {line:?}")));
            }
            let assigned: usize = parse_num(f[3])?;
            if assigned >= task.p {
                return Err(Error::Format(format!("label out of range in {line:?}")));
            }
            t.assigned_labels[i] = assigned;
            t.corrupted[i] = parse_flag(f[4])?;
            t.in_train[i] = parse_flag(f[5])?;
            seen += 1;
        }
        if seen != t.len() {
            return Err(Error::Format(format!("expected {} records, got {seen}", t.len())));
        }
        Ok(t)
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {s:?}")))
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!("bad flag {s:?}"))),
    }
}

/// `|labels| × p` matrix with a single 1 per row.
pub fn one_hot(labels: &[usize], p: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), p);
    for (i, &l) in labels.iter().enumerate() {
        if l >= p {
            return Err(Error::Data(format!("label {l} out of range for p={p}")));
        }
        m.set(i, l, 1.0);
    }
    Ok(m)
}
