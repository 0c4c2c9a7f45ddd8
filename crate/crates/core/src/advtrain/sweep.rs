use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_generator, DecodeMode, StopAt, TrainConfig, TrainError, Trainer};
use crate::metrics::MetricId;
use crate::rng::derive_seed;
use crate::textdata::Example;

/// Variable-controlling grid: each family varies one setting and keeps the
/// rest at the base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub metrics: Vec<MetricId>,
    /// `(g_steps, d_steps)` pairs.
    pub steps: Vec<(usize, usize)>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        default_grid()
    }
}

pub fn default_grid() -> SweepGrid {
    SweepGrid {
        lambdas: vec![0.0, 0.3, 0.5, 0.7, 1.0],
        metrics: vec![MetricId::Cider, MetricId::CiderD, MetricId::Bleu4, MetricId::RougeL],
        steps: vec![(1, 5), (1, 1), (5, 1), (10, 1)],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub family: String,
    /// Identity of the cell; its seed is derived from this.
    pub key: String,
    pub config: TrainConfig,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty() && self.metrics.is_empty() && self.steps.is_empty()
    }

    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<SweepCell>, TrainError> {
        if self.is_empty() {
            return Err(TrainError::config("grid", "sweep grid has no cells"));
        }
        let mut cells = Vec::new();
        let mut push = |family: &str, key: String, mut config: TrainConfig| {
            config.seed = derive_seed(base.seed, &key);
            cells.push(SweepCell { family: family.into(), key, config });
        };
        for &lambda in &self.lambdas {
            push("lambda", format!("lambda={lambda}"), TrainConfig { lambda, ..base.clone() });
        }
        for &metric_q in &self.metrics {
            push("metric", format!("metric_q={metric_q}"), TrainConfig { metric_q, ..base.clone() });
        }
        for &(g_steps, d_steps) in &self.steps {
            push("steps", format!("steps={g_steps}x{d_steps}"), TrainConfig { g_steps, d_steps, ..base.clone() });
        }
        let mut keys: Vec<&str> = cells.iter().map(|c| c.key.as_str()).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(TrainError::config("grid", format!("duplicate cell {}", w[0])));
        }
        for c in &cells {
            c.config.validate()?;
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub family: String,
    pub key: String,
    pub lambda: f64,
    pub metric_q: MetricId,
    pub g_steps: usize,
    pub d_steps: usize,
    /// `ok`, or `error: <message>`.
    pub status: String,
    pub scores: BTreeMap<MetricId, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub metrics: Vec<MetricId>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| r.status == "ok").count()
    }
}

fn run_cell(cell: &SweepCell, vocab_size: usize, train: &[Example], val: &[Example]) -> Result<BTreeMap<MetricId, f64>, TrainError> {
    let mut trainer = Trainer::new(cell.config.clone(), vocab_size, train.to_vec(), val.to_vec())?;
    trainer.run(StopAt::End, &mut |_| Ok(()))?;
    let (_, scores) = evaluate_generator(
        &trainer.gen,
        val,
        &MetricId::ALL,
        DecodeMode::Beam(cell.config.eval_beam),
        trainer.val_idf(),
    )?;
    Ok(scores)
}

/// Trains and evaluates every cell on up to `threads` workers. A failing
/// cell becomes an error row; the others still run.
pub fn run_sweep(
    train: &[Example],
    val: &[Example],
    vocab_size: usize,
    base: &TrainConfig,
    grid: &SweepGrid,
    threads: usize,
) -> Result<SweepResult, TrainError> {
    let cells = grid.cells(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| TrainError::config("threads", e.to_string()))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let (status, scores) = match run_cell(cell, vocab_size, train, val) {
                    Ok(s) => ("ok".to_string(), s),
                    Err(e) => {
                        log::warn!("sweep cell {} failed: {e}", cell.key);
                        (format!("error: {e}"), BTreeMap::new())
                    }
                };
                SweepRow {
                    family: cell.family.clone(),
                    key: cell.key.clone(),
                    lambda: cell.config.lambda,
                    metric_q: cell.config.metric_q,
                    g_steps: cell.config.g_steps,
                    d_steps: cell.config.d_steps,
                    status,
                    scores,
                }
            })
            .collect()
    });
    Ok(SweepResult { metrics: MetricId::ALL.to_vec(), rows })
}

const FIXED_COLUMNS: [&str; 7] = ["family", "key", "lambda", "metric_q", "g_steps", "d_steps", "status"];

pub fn write_sweep_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> =
        FIXED_COLUMNS.iter().map(|s| s.to_string()).chain(result.metrics.iter().map(|m| m.name().to_string())).collect();
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![
            r.family.clone(),
            r.key.clone(),
            r.lambda.to_string(),
            r.metric_q.name().to_string(),
            r.g_steps.to_string(),
            r.d_steps.to_string(),
            r.status.clone(),
        ];
        rec.extend(result.metrics.iter().map(|m| r.scores.get(m).map(f64::to_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_sweep_csv<R: Read>(input: R) -> Result<SweepResult, String> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().take(FIXED_COLUMNS.len()).ne(FIXED_COLUMNS.iter().copied()) {
        return Err("unexpected sweep CSV header".into());
    }
    let metrics: Vec<MetricId> = header
        .iter()
        .skip(FIXED_COLUMNS.len())
        .map(|h| h.parse::<MetricId>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| rec[i].parse::<usize>().map_err(|e| format!("column {}: {e}", FIXED_COLUMNS[i]));
        let mut scores = BTreeMap::new();
        for (k, m) in metrics.iter().enumerate() {
            let cell = &rec[FIXED_COLUMNS.len() + k];
            if !cell.is_empty() {
                scores.insert(*m, cell.parse::<f64>().map_err(|e| format!("column {m}: {e}"))?);
            }
        }
        rows.push(SweepRow {
            family: rec[0].to_string(),
            key: rec[1].to_string(),
            lambda: rec[2].parse().map_err(|e| format!("column lambda: {e}"))?,
            metric_q: rec[3].parse().map_err(|e: crate::metrics::MetricError| e.to_string())?,
            g_steps: num(4)?,
            d_steps: num(5)?,
            status: rec[6].to_string(),
            scores,
        });
    }
    Ok(SweepResult { metrics, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_thirteen_cells() {
        let cells = default_grid().cells(&TrainConfig::default()).unwrap();
        assert_eq!(cells.len(), 13);
        let count = |f: &str| cells.iter().filter(|c| c.family == f).count();
        assert_eq!((count("lambda"), count("metric"), count("steps")), (5, 4, 4));
    }

    #[test]
    fn cell_seed_depends_on_key_only() {
        let g = default_grid();
        let mut rev = g.clone();
        rev.lambdas.reverse();
        rev.steps.reverse();
        let a = g.cells(&TrainConfig::default()).unwrap();
        let b = rev.cells(&TrainConfig::default()).unwrap();
        for c in &a {
            let twin = b.iter().find(|x| x.key == c.key).unwrap();
            assert_eq!(twin.config, c.config);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        let g = SweepGrid { lambdas: vec![], metrics: vec![], steps: vec![] };
        assert!(g.cells(&TrainConfig::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut scores = BTreeMap::new();
        scores.insert(MetricId::CiderD, 0.1 + 0.2);
        scores.insert(MetricId::Bleu4, 1.0 / 3.0);
        let result = SweepResult {
            metrics: MetricId::ALL.to_vec(),
            rows: vec![
                SweepRow {
                    family: "lambda".into(),
                    key: "lambda=0.3".into(),
                    lambda: 0.3,
                    metric_q: MetricId::CiderD,
                    g_steps: 1,
                    d_steps: 1,
                    status: "ok".into(),
                    scores,
                },
                SweepRow {
                    family: "steps".into(),
                    key: "steps=10x1".into(),
                    lambda: 0.3,
                    metric_q: MetricId::CiderD,
                    g_steps: 10,
                    d_steps: 1,
                    status: "error: invalid value for batch, \"x\"".into(),
                    scores: BTreeMap::new(),
                },
            ],
        };
        let mut buf = Vec::new();
        write_sweep_csv(&result, &mut buf).unwrap();
        assert_eq!(parse_sweep_csv(buf.as_slice()).unwrap(), result);
    }
}
