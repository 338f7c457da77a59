use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::alm::{head_loss, link_loss, sample_link_pairs, LinkPairs};
use super::dsd::{dsd_embedding_gradient, dsd_embedding_gradient_sampled, dsd_step, DsdLossBreakdown};
use super::sio::{new_critic, sio_critic_update, sio_encoder_loss, sio_estimate};
use super::DefenseConfig;
use crate::encoder::{GcnEncoder, Propagation};
use crate::error::{Error, Result};
use crate::graph::{learned_structural_bias, normalize, LabeledGraph, SparseMatrix};
use crate::nn::{argmax, Activation, Mlp, OptimState};

const SPLIT_STREAM: u64 = 0x7531_0001;
const SAMPLE_STREAM: u64 = 0x7531_0002;

/// Propagation matrix during training. It stays sparse until the first
/// structure update.
#[derive(Debug, Clone, PartialEq)]
pub enum Adjacency {
    Sparse(SparseMatrix),
    Dense(Array2<f64>),
}

impl Adjacency {
    pub fn propagation(&self) -> Propagation<'_> {
        match self {
            Adjacency::Sparse(m) => Propagation::Sparse(m),
            Adjacency::Dense(m) => Propagation::Dense(m.view()),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Adjacency::Sparse(m) => m.to_dense(),
            Adjacency::Dense(m) => m.clone(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.propagation().dim().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub utility_loss: f64,
    pub privacy_loss: f64,
    pub priv_attr_loss: f64,
    pub link_loss: f64,
    /// Critic group gap; 0 when no critic is trained.
    pub sio_estimate: f64,
    pub dsd: DsdLossBreakdown,
    /// Weighted structural bias of the current propagation matrix.
    pub adjacency_bias: f64,
    pub utility_test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: [&str; 16] = [
    "epoch",
    "utility_loss",
    "privacy_loss",
    "priv_attr_loss",
    "link_loss",
    "sio_estimate",
    "s_intra_s",
    "s_inter_s",
    "s_intra_u",
    "s_inter_u",
    "l_adj_s",
    "l_adj_u",
    "l_dsd",
    "adjacency_bias",
    "utility_test_accuracy",
    "alpha",
];

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// One row per epoch; `alpha` is repeated so each row can be re-checked
    /// on its own.
    pub fn write_csv<W: Write>(&self, alpha: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HISTORY_HEADER)?;
        for r in &self.records {
            let d = r.dsd;
            let mut row = vec![r.epoch.to_string()];
            row.extend(
                [
                    r.utility_loss,
                    r.privacy_loss,
                    r.priv_attr_loss,
                    r.link_loss,
                    r.sio_estimate,
                    d.s_intra_s,
                    d.s_inter_s,
                    d.s_intra_u,
                    d.s_inter_u,
                    d.l_adj_s,
                    d.l_adj_u,
                    d.l_dsd,
                    r.adjacency_bias,
                    r.utility_test_accuracy,
                    alpha,
                ]
                .iter()
                .map(f64::to_string),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, alpha: f64, path: &Path) -> Result<()> {
        self.write_csv(alpha, std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: GcnEncoder,
    pub utility_head: Mlp,
    pub adversary: Mlp,
    pub critic: Mlp,
    pub adjacency: Adjacency,
    /// Embeddings from the untrained encoder on the initial propagation matrix.
    pub initial_embeddings: Array2<f64>,
    pub embeddings: Array2<f64>,
    pub history: TrainHistory,
    pub utility_train_nodes: Vec<usize>,
    pub utility_test_nodes: Vec<usize>,
}

struct Setup<'a> {
    x: ArrayView2<'a, f64>,
    sensitive: &'a [usize],
    utility: &'a [usize],
    train_nodes: Vec<usize>,
    test_nodes: Vec<usize>,
    encoder: GcnEncoder,
    utility_head: Mlp,
    init_rng: ChaCha8Rng,
}

fn setup<'a>(graph: &'a LabeledGraph, cfg: &DefenseConfig) -> Result<Setup<'a>> {
    cfg.validate()?;
    let utility = graph
        .utility_labels()
        .ok_or_else(|| Error::invalid("training needs utility labels"))?;
    let n = graph.node_count();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let n_train = ((n as f64) * cfg.utility_train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid("utility split leaves an empty side"));
    }
    let mut train_nodes = order[..n_train].to_vec();
    let mut test_nodes = order[n_train..].to_vec();
    train_nodes.sort_unstable();
    test_nodes.sort_unstable();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = GcnEncoder::random(graph.feature_dim(), cfg.embedding_dim, cfg.activation, &mut init_rng)?;
    let classes = graph.utility_classes().unwrap_or(0).max(2);
    let utility_head = Mlp::new(
        &[cfg.embedding_dim, cfg.head_hidden, classes],
        &[Activation::Relu, Activation::Identity],
        &mut init_rng,
    )?;
    Ok(Setup {
        x: graph.features().view(),
        sensitive: graph.sensitive_labels(),
        utility,
        train_nodes,
        test_nodes,
        encoder,
        utility_head,
        init_rng,
    })
}

fn accuracy(head: &Mlp, z: ArrayView2<'_, f64>, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    let logits = head.predict(z.select(ndarray::Axis(0), nodes).view())?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(nodes)
        .filter(|(row, &v)| argmax(*row) == labels[v])
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

fn guard(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            what: what.to_string(),
        })
    }
}

fn guard_matrix(epoch: usize, what: &str, m: ArrayView2<'_, f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            what: what.to_string(),
        })
    }
}

/// Utility-only GCN training: encoder and head descend the summed utility
/// cross-entropy on the training nodes with the fixed initial propagation
/// matrix. Returns the encoder, head and final embeddings.
pub fn train_plain_gcn(graph: &LabeledGraph, cfg: &DefenseConfig) -> Result<(GcnEncoder, Mlp, Array2<f64>)> {
    let Setup {
        x,
        utility,
        train_nodes,
        mut encoder,
        mut utility_head,
        ..
    } = setup(graph, cfg)?;
    let op = normalize(graph, cfg.normalization).matrix;
    let adj = Propagation::Sparse(&op);
    let opt = OptimState::new(cfg.eta_encoder);
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.encoder_steps {
            let cache = encoder.encode(adj, x)?;
            let (loss, head_grads, dz) = head_loss(&utility_head, cache.output().view(), utility, Some(&train_nodes))?;
            guard(epoch, "utility loss", loss)?;
            let wg = encoder.weight_gradient(&cache, dz.view())?;
            encoder.step(wg.view(), cfg.eta_encoder)?;
            utility_head.sgd_step(&head_grads, &opt)?;
        }
    }
    let z = encoder.encode(adj, x)?.into_output();
    Ok((encoder, utility_head, z))
}

/// Alternating training. Each epoch runs, in order: critic ascent with
/// clipping, adversary descent, encoder and utility head descent on
/// `L_utility + w·L_SIO − λ·L_privacy`, and projected structure steps on
/// `L_DSD`; then records the epoch.
pub fn train(graph: &LabeledGraph, cfg: &DefenseConfig) -> Result<TrainOutcome> {
    let Setup {
        x,
        sensitive,
        utility,
        train_nodes,
        test_nodes,
        mut encoder,
        mut utility_head,
        mut init_rng,
    } = setup(graph, cfg)?;
    let n = graph.node_count();
    let mut critic = new_critic(cfg.embedding_dim, cfg.critic_hidden, cfg.clip_bound, &mut init_rng)?;
    let mut adversary = Mlp::new(
        &[cfg.embedding_dim, cfg.head_hidden, graph.sensitive_classes().max(2)],
        &[Activation::Relu, Activation::Identity],
        &mut init_rng,
    )?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLE_STREAM);
    let edges = graph.edges();

    let mut adjacency = Adjacency::Sparse(normalize(graph, cfg.normalization).matrix);
    let mut bias = learned_structural_bias(adjacency.to_dense().view(), sensitive).unwrap_or(0.0);
    let initial_embeddings = encoder.encode(adjacency.propagation(), x)?.into_output();

    let head_opt = OptimState::new(cfg.eta_encoder);
    let adv_opt = OptimState::new(cfg.eta_adversary);
    let use_sio = cfg.critic_steps > 0;
    let use_privacy = cfg.lambda_ > 0.0;
    let dense_structure = n <= cfg.dense_limit;
    let link_positives = cfg.link_pairs.unwrap_or(n).div_ceil(2);
    let adv_scale = 1.0 / n as f64;
    // the critic gap is a difference of means; scale it to a sum over nodes
    let sio_scale = cfg.sio_weight * n as f64;

    let mut history = TrainHistory::default();
    let mut z = initial_embeddings.clone();
    for epoch in 0..cfg.epochs {
        let links: LinkPairs = sample_link_pairs(n, &edges, Some(link_positives), &mut sample_rng)?;

        for _ in 0..cfg.critic_steps {
            let v = sio_critic_update(&mut critic, z.view(), sensitive, cfg.eta_critic, cfg.clip_bound)?;
            guard(epoch, "critic estimate", v)?;
        }

        for _ in 0..cfg.adversary_steps {
            let (v, mut grads, _) = head_loss(&adversary, z.view(), sensitive, None)?;
            guard(epoch, "adversary loss", v)?;
            grads.scale(adv_scale);
            adversary.sgd_step(&grads, &adv_opt)?;
        }

        for _ in 0..cfg.encoder_steps {
            let cache = encoder.encode(adjacency.propagation(), x)?;
            let zc = cache.output().view();
            let (loss, head_grads, mut dz) = head_loss(&utility_head, zc, utility, Some(&train_nodes))?;
            guard(epoch, "utility loss", loss)?;
            if use_sio {
                let (_, g) = sio_encoder_loss(&critic, zc, sensitive)?;
                dz.scaled_add(sio_scale, &g);
            }
            if use_privacy {
                let (_, _, attr) = head_loss(&adversary, zc, sensitive, None)?;
                let (_, link) = link_loss(zc, &links)?;
                dz.scaled_add(-cfg.lambda_, &attr);
                dz.scaled_add(-cfg.lambda_ * cfg.mu_link, &link);
            }
            let wg = encoder.weight_gradient(&cache, dz.view())?;
            guard_matrix(epoch, "encoder gradient", wg.view())?;
            encoder.step(wg.view(), cfg.eta_encoder)?;
            utility_head.sgd_step(&head_grads, &head_opt)?;
        }

        for _ in 0..cfg.adjacency_steps {
            let cache = encoder.encode(adjacency.propagation(), x)?;
            let zc = cache.output().view();
            let (_, dz) = if dense_structure {
                dsd_embedding_gradient(zc, sensitive, Some(utility), cfg.alpha)?
            } else {
                dsd_embedding_gradient_sampled(
                    zc,
                    sensitive,
                    Some(utility),
                    cfg.alpha,
                    cfg.sample_pairs,
                    &mut sample_rng,
                )?
            };
            let mut ga = encoder.adjacency_gradient(&cache, dz.view())?;
            guard_matrix(epoch, "adjacency gradient", ga.view())?;
            if let Some(target) = cfg.adjacency_grad_norm {
                let norm = ga.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > target {
                    ga *= target / norm;
                }
            }
            let current = match &adjacency {
                Adjacency::Sparse(m) => m.to_dense(),
                Adjacency::Dense(m) => m.clone(),
            };
            adjacency = Adjacency::Dense(dsd_step(current.view(), ga.view(), cfg.eta_adjacency)?);
        }
        if cfg.adjacency_steps > 0 {
            if let Adjacency::Dense(m) = &adjacency {
                bias = learned_structural_bias(m.view(), sensitive).unwrap_or(0.0);
            }
        }

        z = encoder.encode(adjacency.propagation(), x)?.into_output();
        guard_matrix(epoch, "embeddings", z.view())?;
        let (utility_loss, _, _) = head_loss(&utility_head, z.view(), utility, Some(&train_nodes))?;
        let (priv_attr, _, _) = head_loss(&adversary, z.view(), sensitive, None)?;
        let (link, _) = link_loss(z.view(), &links)?;
        let sio = if use_sio {
            sio_estimate(&critic, z.view(), sensitive)?
        } else {
            0.0
        };
        let (dsd, _) = if dense_structure {
            dsd_embedding_gradient(z.view(), sensitive, Some(utility), cfg.alpha)?
        } else {
            dsd_embedding_gradient_sampled(
                z.view(),
                sensitive,
                Some(utility),
                cfg.alpha,
                cfg.sample_pairs,
                &mut sample_rng,
            )?
        };
        let record = EpochRecord {
            epoch,
            utility_loss,
            privacy_loss: priv_attr + cfg.mu_link * link,
            priv_attr_loss: priv_attr,
            link_loss: link,
            sio_estimate: sio,
            dsd,
            adjacency_bias: bias,
            utility_test_accuracy: accuracy(&utility_head, z.view(), utility, &test_nodes)?,
        };
        for (what, v) in [
            ("utility loss", record.utility_loss),
            ("privacy loss", record.privacy_loss),
            ("critic estimate", record.sio_estimate),
            ("structure loss", record.dsd.l_dsd),
        ] {
            guard(epoch, what, v)?;
        }
        log::debug!(
            "epoch {epoch}: utility {:.4} privacy {:.4} sio {:.4} bias {:.4} acc {:.3}",
            record.utility_loss,
            record.privacy_loss,
            record.sio_estimate,
            record.adjacency_bias,
            record.utility_test_accuracy
        );
        history.records.push(record);
    }

    Ok(TrainOutcome {
        encoder,
        utility_head,
        adversary,
        critic,
        adjacency,
        initial_embeddings,
        embeddings: z,
        history,
        utility_train_nodes: train_nodes,
        utility_test_nodes: test_nodes,
    })
}
