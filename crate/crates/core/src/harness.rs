//! Experiment drivers: attack sweeps over the two-block generator, leakage
//! tables, and defended-versus-control comparisons. Tabular output is CSV with
//! fixed headers; single reports are JSON.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_link, attack_node, AttackReport, AttackerConfig, SplitSpec};
use crate::defense::{train, DefenseConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::graph::{normalize, propagate, structural_bias, LabeledGraph, NormalizationKind};
use crate::leakage::{bias_threshold, closed_form_pl, closed_form_pl_prime, empirical_leakage};
use crate::synth::{expected_bias, generate, GeneratorParams};

pub const DEFAULT_PQ_PAIRS: [(f64, f64); 6] = [
    (0.08, 0.02),
    (0.07, 0.03),
    (0.065, 0.035),
    (0.06, 0.04),
    (0.055, 0.045),
    (0.05, 0.05),
];

pub const DEFAULT_MUS: [f64; 6] = [0.0, 0.15, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub pq_pairs: Vec<(f64, f64)>,
    pub mus: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed_base: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            pq_pairs: DEFAULT_PQ_PAIRS.to_vec(),
            mus: DEFAULT_MUS.to_vec(),
            n: 1000,
            k: 4,
            trials: 5,
            seed_base: 0,
        }
    }
}

/// One `(p, q, μ)` combination of a grid, in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub p: f64,
    pub q: f64,
    pub mu: f64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.pq_pairs.is_empty() || self.mus.is_empty() {
            return Err(Error::invalid("grid needs at least one (p, q) pair and one mu"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        for &(p, q) in &self.pq_pairs {
            GeneratorParams::new(self.n, p, q, self.k, 0.0, 0).validate()?;
        }
        for &mu in &self.mus {
            GeneratorParams::new(self.n, 0.0, 0.0, self.k, mu, 0).validate()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.pq_pairs.len() * self.mus.len());
        for &(p, q) in &self.pq_pairs {
            for &mu in &self.mus {
                out.push(Cell {
                    index: out.len(),
                    p,
                    q,
                    mu,
                });
            }
        }
        out
    }

    /// Seed of trial `trial` in `cell`; independent of thread scheduling.
    pub fn seed(&self, cell: &Cell, trial: usize) -> u64 {
        self.seed_base.wrapping_add((cell.index * self.trials + trial) as u64)
    }

    pub fn params(&self, cell: &Cell, trial: usize) -> GeneratorParams {
        GeneratorParams::new(self.n, cell.p, cell.q, self.k, cell.mu, self.seed(cell, trial))
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub q: f64,
    pub mu: f64,
    pub expected_bias: f64,
    /// NaN on an edgeless graph.
    pub empirical_bias: f64,
    pub pl: f64,
    pub pl_prime: f64,
    pub node_accuracy: f64,
    pub node_f1: f64,
    pub link_accuracy: f64,
    pub link_f1: f64,
}

fn simulate_one(grid: &SweepGrid, cell: &Cell, trial: usize, attacker: &AttackerConfig) -> Result<ExperimentRecord> {
    let params = grid.params(cell, trial);
    let g = generate(&params)?;
    let op = normalize(&g, NormalizationKind::SymmetricSelfLoop);
    let z = propagate(&op, g.features().view())?;
    let split = SplitSpec::with_seed(params.seed);
    let node = attack_node(z.view(), g.sensitive_labels(), &split, attacker)?;
    let link = attack_link(z.view(), &g, &split, attacker)?;
    let empirical_bias = match structural_bias(&g, g.sensitive_labels(), None) {
        Ok(b) => b,
        Err(Error::EdgelessGraph) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(ExperimentRecord {
        cell: cell.index,
        trial,
        seed: params.seed,
        n: params.n,
        k: params.k,
        p: params.p,
        q: params.q,
        mu: params.mu_feature,
        expected_bias: expected_bias(&params)?,
        empirical_bias,
        pl: closed_form_pl(params.k, params.mu_feature),
        pl_prime: closed_form_pl_prime(&params)?,
        node_accuracy: node.accuracy,
        node_f1: node.f1,
        link_accuracy: link.accuracy,
        link_f1: link.f1,
    })
}

/// Attack sweep: per cell and trial, generate a graph, propagate its features
/// once with the symmetric operator and attack the result. Records come back
/// sorted by `(cell, trial)` whatever the thread count.
pub fn simulate(grid: &SweepGrid, attacker: &AttackerConfig, threads: Option<usize>) -> Result<Vec<ExperimentRecord>> {
    grid.validate()?;
    let jobs: Vec<(Cell, usize)> = grid
        .cells()
        .into_iter()
        .flat_map(|c| (0..grid.trials).map(move |t| (c, t)))
        .collect();
    let mut records = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(c, t)| simulate_one(grid, c, *t, attacker))
            .collect::<Result<Vec<_>>>()
    })?;
    records.sort_by_key(|r| (r.cell, r.trial));
    Ok(records)
}

pub fn write_records<W: Write, T: Serialize>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// [`simulate`] followed by CSV output.
pub fn run_simulation<W: Write>(
    grid: &SweepGrid,
    attacker: &AttackerConfig,
    threads: Option<usize>,
    out: W,
) -> Result<Vec<ExperimentRecord>> {
    let records = simulate(grid, attacker, threads)?;
    write_records(&records, out)?;
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub q: f64,
    pub mu: f64,
    pub seed: u64,
    pub bias: f64,
    pub threshold: f64,
    pub pl: f64,
    pub pl_prime: f64,
    pub delta_pl: f64,
    pub amplified: bool,
    /// `sign(ΔPL)` agrees with `sign(bias − threshold)`; vacuous at `μ = 0`
    /// where `ΔPL = 0`.
    pub closed_form_consistent: bool,
    /// Bhattacharyya distance of the raw features, when measured.
    pub empirical_pre: Option<f64>,
    /// Same after one symmetric propagation.
    pub empirical_post: Option<f64>,
    pub empirical_amplified: Option<bool>,
    /// Empirical and closed-form amplification disagree.
    pub disagreement: bool,
}

pub fn leakage_row(params: &GeneratorParams, empirical: bool) -> Result<LeakageRow> {
    params.validate()?;
    let pl = closed_form_pl(params.k, params.mu_feature);
    let pl_prime = closed_form_pl_prime(params)?;
    let bias = expected_bias(params)?;
    let threshold = bias_threshold(params.n, params.p, params.q)?;
    let delta_pl = pl_prime - pl;
    let amplified = delta_pl > 0.0;
    let measured = if empirical {
        let g = generate(params)?;
        let z = propagate(
            &normalize(&g, NormalizationKind::SymmetricSelfLoop),
            g.features().view(),
        )?;
        Some((
            empirical_leakage(g.features().view(), g.sensitive_labels())?,
            empirical_leakage(z.view(), g.sensitive_labels())?,
        ))
    } else {
        None
    };
    let empirical_amplified = measured.map(|(pre, post)| post > pre);
    Ok(LeakageRow {
        n: params.n,
        k: params.k,
        p: params.p,
        q: params.q,
        mu: params.mu_feature,
        seed: params.seed,
        bias,
        threshold,
        pl,
        pl_prime,
        delta_pl,
        amplified,
        closed_form_consistent: params.mu_feature == 0.0 || (bias > threshold) == amplified,
        empirical_pre: measured.map(|m| m.0),
        empirical_post: measured.map(|m| m.1),
        empirical_amplified,
        disagreement: empirical_amplified.is_some_and(|e| e != amplified),
    })
}

/// One row per grid cell (first trial's seed).
pub fn leakage_table(grid: &SweepGrid, empirical: bool, threads: Option<usize>) -> Result<Vec<LeakageRow>> {
    grid.validate()?;
    let cells = grid.cells();
    pool(threads)?.install(|| {
        cells
            .par_iter()
            .map(|c| leakage_row(&grid.params(c, 0), empirical))
            .collect::<Result<Vec<_>>>()
    })
}

pub fn run_leakage_table<W: Write>(
    grid: &SweepGrid,
    empirical: bool,
    threads: Option<usize>,
    out: W,
) -> Result<Vec<LeakageRow>> {
    let rows = leakage_table(grid, empirical, threads)?;
    write_records(&rows, out)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// MLP probe on the utility labels with the node-attack split.
    pub utility: AttackReport,
    /// The trained utility head on its held-out nodes.
    pub utility_head_accuracy: f64,
    pub node: AttackReport,
    pub link: AttackReport,
    pub final_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseComparison {
    pub seed: u64,
    pub config: DefenseConfig,
    pub control: ModelReport,
    pub defended: ModelReport,
    /// Weighted structural bias of the defended propagation matrix per epoch.
    pub bias_trajectory: Vec<f64>,
}

pub fn evaluate_embeddings(
    graph: &LabeledGraph,
    outcome: &TrainOutcome,
    split: &SplitSpec,
    attacker: &AttackerConfig,
) -> Result<ModelReport> {
    let z = outcome.embeddings.view();
    let utility = graph
        .utility_labels()
        .ok_or_else(|| Error::invalid("evaluation needs utility labels"))?;
    let last = outcome
        .history
        .last()
        .ok_or_else(|| Error::invalid("evaluation needs at least one epoch"))?;
    Ok(ModelReport {
        utility: attack_node(z, utility, split, attacker)?,
        utility_head_accuracy: last.utility_test_accuracy,
        node: attack_node(z, graph.sensitive_labels(), split, attacker)?,
        link: attack_link(z, graph, split, attacker)?,
        final_bias: last.adjacency_bias,
    })
}

/// Trains the undefended control and the full defense with the same seed and
/// attacks both.
pub fn run_defense_experiment(
    graph: &LabeledGraph,
    config: &DefenseConfig,
    attacker: &AttackerConfig,
) -> Result<DefenseComparison> {
    let split = SplitSpec::with_seed(config.seed);
    let control = train(graph, &config.undefended())?;
    let defended = train(graph, config)?;
    Ok(DefenseComparison {
        seed: config.seed,
        config: config.clone(),
        control: evaluate_embeddings(graph, &control, &split, attacker)?,
        defended: evaluate_embeddings(graph, &defended, &split, attacker)?,
        bias_trajectory: defended.history.records.iter().map(|r| r.adjacency_bias).collect(),
    })
}

/// The generator settings of the standard defense fixture.
pub fn defense_fixture(seed: u64) -> GeneratorParams {
    GeneratorParams::new(1000, 0.08, 0.02, 4, 0.5, seed)
        .with_utility(4, 0.5)
        .with_utility_homophily(0.3)
}
