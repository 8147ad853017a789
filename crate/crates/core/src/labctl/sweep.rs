use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{cmd_train, RunConfig, RunRecord, RECORD_FILE};
use crate::error::{Error, Result};
use crate::numkit::hash64;
use crate::phases::{assemble_diagram, linspace, PhaseDiagram, PhasePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub xis: Vec<f64>,
    pub seeds_per_cell: usize,
    pub base_seed: u64,
    /// 0 means available cores minus one (at least one).
    pub workers: usize,
    pub base: RunConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            alphas: linspace(0.1, 0.9, 17),
            xis: linspace(0.0, 0.9, 19),
            seeds_per_cell: 1,
            base_seed: 0,
            workers: 0,
            base: RunConfig::default(),
        }
    }
}

/// Cell seed: `hash64([base_seed, alpha_index, xi_index, seed_index])`.
pub fn cell_seed(base_seed: u64, ai: usize, xi: usize, si: usize) -> u64 {
    hash64(&[base_seed, ai as u64, xi as u64, si as u64])
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .saturating_sub(1)
        .max(1)
}

/// Parses `a,b,c` or `start:stop:count`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad grid {s:?} (expected a,b,c or start:stop:count)"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            Ok(linspace(a, b, n))
        }
        [_] => s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellId {
    pub ai: usize,
    pub xi: usize,
    pub si: usize,
}

impl CellId {
    pub fn dir_name(&self) -> String {
        format!("cell_a{:02}_x{:02}_s{}", self.ai, self.xi, self.si)
    }
}

impl SweepSpec {
    pub fn from_toml(s: &str) -> Result<SweepSpec> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.xis.is_empty() || self.seeds_per_cell == 0 {
            return Err(Error::Config(
                "sweep needs at least one alpha, one xi and one seed".into(),
            ));
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            for (j, &x) in self.xis.iter().enumerate() {
                self.cell_config(CellId { ai: i, xi: j, si: 0 })
                    .validate()
                    .map_err(|e| Error::Config(format!("cell alpha={a} xi={x}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellId> {
        let mut v = Vec::new();
        for ai in 0..self.alphas.len() {
            for xi in 0..self.xis.len() {
                for si in 0..self.seeds_per_cell {
                    v.push(CellId { ai, xi, si });
                }
            }
        }
        v
    }

    pub fn cell_config(&self, id: CellId) -> RunConfig {
        let mut c = self.base.clone();
        c.alpha = self.alphas[id.ai];
        c.xi = self.xis[id.xi];
        c.set_all_seeds(cell_seed(self.base_seed, id.ai, id.xi, id.si));
        c
    }

    fn worker_count(&self) -> usize {
        if self.workers == 0 {
            default_workers()
        } else {
            self.workers
        }
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<(CellId, RunRecord)>,
    pub failures: Vec<(CellId, String)>,
    /// Cells found complete on disk and not recomputed.
    pub resumed: usize,
    pub diagram: PhaseDiagram,
}

impl SweepOutcome {
    pub fn points(&self, spec: &SweepSpec) -> Vec<PhasePoint> {
        self.records
            .iter()
            .map(|(id, r)| PhasePoint {
                alpha: spec.alphas[id.ai],
                xi: spec.xis[id.xi],
                final_train_acc: r.final_train_acc,
                final_test_acc: r.final_test_acc,
                max_hist_test_acc: r.max_test_acc,
                label: r.phase,
                seed: r.config.seed_init,
            })
            .collect()
    }
}

fn run_cell(spec: &SweepSpec, id: CellId, out: &Path) -> std::result::Result<(RunRecord, bool), String> {
    let dir = out.join(id.dir_name());
    let cfg = spec.cell_config(id);
    if dir.join(RECORD_FILE).exists() {
        let rec = RunRecord::load(&dir).map_err(|e| e.to_string())?;
        if rec.config != cfg {
            return Err(format!("{} holds a record for a different config", dir.display()));
        }
        return Ok((rec, true));
    }
    cmd_train(&cfg, &dir, false)
        .map(|r| (r, false))
        .map_err(|e| e.to_string())
}

/// Runs every cell under `out`, skipping cells whose record already exists,
/// then writes `sweep.toml`, `points.csv`, `diagram.csv` and `diagram.txt`.
/// A failing cell is reported in the outcome and left as a gap.
pub fn cmd_sweep(spec: &SweepSpec, out: &Path, progress: &(dyn Fn(CellId, &str) + Sync)) -> Result<SweepOutcome> {
    spec.validate()?;
    fs::create_dir_all(out)?;
    // The worker count does not affect results, so it is ignored when
    // matching a resumed sweep against its stored spec.
    let spec_path = out.join("sweep.toml");
    let stored = SweepSpec {
        workers: 0,
        ..spec.clone()
    };
    if spec_path.exists() {
        let old = SweepSpec::from_toml(&fs::read_to_string(&spec_path)?)?;
        if old != stored {
            return Err(Error::Config(format!(
                "{} was written for a different sweep spec",
                spec_path.display()
            )));
        }
    } else {
        fs::write(&spec_path, stored.to_toml()?)?;
    }

    let cells = spec.cells();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|s| {
        for _ in 0..spec.worker_count().min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&id) = cells.get(i) else { break };
                let r = run_cell(spec, id, out);
                let msg = match &r {
                    Ok((rec, true)) => format!("resumed {}", rec.phase),
                    Ok((rec, false)) => format!("done {}", rec.phase),
                    Err(e) => format!("failed: {e}"),
                };
                progress(id, &msg);
                results.lock().unwrap().push((id, r));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(id, _)| *id);
    let mut outcome = SweepOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        resumed: 0,
        diagram: PhaseDiagram {
            alphas: Vec::new(),
            xis: Vec::new(),
            cells: Vec::new(),
        },
    };
    for (id, r) in results {
        match r {
            Ok((rec, resumed)) => {
                outcome.resumed += resumed as usize;
                outcome.records.push((id, rec));
            }
            Err(e) => outcome.failures.push((id, e)),
        }
    }
    let points = outcome.points(spec);
    outcome.diagram = assemble_diagram(&points, &spec.alphas, &spec.xis);
    write_points(&points, &out.join("points.csv"))?;
    outcome.diagram.write_csv(fs::File::create(out.join("diagram.csv"))?)?;
    fs::write(out.join("diagram.txt"), outcome.diagram.render_text())?;
    Ok(outcome)
}

fn write_points(points: &[PhasePoint], path: &PathBuf) -> Result<()> {
    let mut w = csv::Writer::from_writer(fs::File::create(path)?);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
