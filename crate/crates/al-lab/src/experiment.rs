//! Pool management and the full training/acquisition loop: warm training,
//! periodic scoring of the unlabelled pool (optionally accumulated into
//! score histories), top-b acquisition, and label assignment through the
//! configured questioning strategy.

use rand::seq::SliceRandom;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::acquisition::{
    balc_jsd, balc_kld, bald, pred_entropy, rank_and_select, var_ratio, AcquisitionFn, ScoreHistory,
};
use crate::config::ExperimentConfig;
use crate::data::{generate_blobs, read_csv_path, split, Dataset};
use crate::error::{Error, Result};
use crate::mc::{mc_outputs, McMode, OutputMatrix, PerturbationSpec};
use crate::metrics::macro_auc;
use crate::nn::{argmax_lowest, train_step, Adam, Network, NetworkConfig, TrainBatch};
use crate::oracle::{
    entropy_response_ask, epsilon_schedule, oracle_label, NnRef, Strategy,
};
use crate::parallel::ordered_map;
use crate::rng::{instance_stream, stream};
use crate::selective::{decide, fit_error_gaussians, pseudo_label, chernoff_bound, SelectorState, Verdict};

/// Labelled/unlabelled pools as the learner sees them. Ground-truth labels
/// for the unlabelled side live only in [`OracleSim`].
#[derive(Debug, Clone)]
pub struct Pool {
    pub features: BTreeMap<u64, Vec<f64>>,
    pub labelled: BTreeMap<u64, usize>,
    pub unlabelled: BTreeSet<u64>,
}

impl Pool {
    pub fn total(&self) -> usize {
        self.labelled.len() + self.unlabelled.len()
    }

    fn acquire(&mut self, id: u64, label: usize) -> Result<()> {
        if !self.unlabelled.remove(&id) {
            return Err(Error::InvalidBatch(format!("id {id} is not in the unlabelled pool")));
        }
        self.labelled.insert(id, label);
        Ok(())
    }
}

/// Holds the hidden ground truth; the learner only sees labels through
/// [`label_acquired`].
pub struct OracleSim {
    truth: BTreeMap<u64, usize>,
}

impl OracleSim {
    pub fn new(truth: BTreeMap<u64, usize>) -> Self {
        OracleSim { truth }
    }

    fn truth_of(&self, id: u64) -> usize {
        self.truth[&id]
    }
}

/// One JSONL record per epoch.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub class_loss: f64,
    pub selection_loss: f64,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub labelled: usize,
    pub unlabelled: usize,
    pub ask_rate: Option<f64>,
    pub mu0: Option<f64>,
    pub var0: Option<f64>,
    pub mu1: Option<f64>,
    pub var1: Option<f64>,
    pub d_h: f64,
    pub chernoff_beta: Option<f64>,
    pub chernoff_bound: Option<f64>,
    pub acquisition_function: String,
    pub mode: String,
    pub strategy: String,
    pub noise: String,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcquisitionAudit {
    pub id: u64,
    pub verdict: Verdict,
    pub t: f64,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_val_auc: Option<f64>,
    pub final_test_auc: Option<f64>,
    pub records: Vec<EpochRecord>,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.data.kind.as_str() {
        "blobs" => generate_blobs(
            cfg.data.classes,
            cfg.data.per_class,
            cfg.data.separation,
            cfg.data.dim,
            cfg.data.group_size,
            &mut stream(cfg.seed, "blobs"),
        ),
        "csv" => read_csv_path(cfg.data.path.as_ref().expect("validated")),
        other => Err(Error::Config(format!("unknown data.kind '{other}'"))),
    }
}

fn score_of(
    function: AcquisitionFn,
    g: &OutputMatrix,
    gp: Option<&OutputMatrix>,
    ridge: f64,
) -> Result<f64> {
    match function {
        AcquisitionFn::VarRatio => Ok(var_ratio(g)),
        AcquisitionFn::Entropy => Ok(pred_entropy(g)),
        AcquisitionFn::Bald => Ok(bald(g)),
        AcquisitionFn::BalcKld => {
            balc_kld(g, gp.ok_or_else(|| Error::InvalidBatch("missing G'".into()))?, ridge)
        }
        AcquisitionFn::BalcJsd => {
            balc_jsd(g, gp.ok_or_else(|| Error::InvalidBatch("missing G'".into()))?)
        }
    }
}

/// Score every unlabelled instance at this epoch. Instances fan out in
/// parallel over an immutable network snapshot; each draws from its own
/// counter-derived stream, so the result is independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn score_pool(
    net: &Network,
    pool: &Pool,
    function: AcquisitionFn,
    mode: McMode,
    samples: usize,
    spec: &PerturbationSpec,
    ridge: f64,
    seed: u64,
    epoch: u64,
) -> Result<BTreeMap<u64, f64>> {
    let ids: Vec<u64> = pool.unlabelled.iter().copied().collect();
    let scored: Vec<Result<(u64, f64)>> = ordered_map(&ids, |&id| {
        let mut rng = instance_stream(seed, "score", epoch, id);
        let x = &pool.features[&id];
        let (g, gp) = mc_outputs(net, x, mode, samples, spec, &mut rng)?;
        Ok((id, score_of(function, &g, gp.as_ref(), ridge)?))
    });
    scored.into_iter().collect()
}

/// Assign labels to the acquired instances through the questioning
/// strategy; returns the labels used for training plus an audit trail.
#[allow(clippy::too_many_arguments)]
pub fn label_acquired(
    ids: &[u64],
    cfg: &ExperimentConfig,
    net: &Network,
    pool: &Pool,
    state: &SelectorState,
    oracle: &OracleSim,
    spec: &PerturbationSpec,
    epoch: u64,
) -> Result<Vec<AcquisitionAudit>> {
    let classes = net.classes();
    // immutable snapshot of the labelled reference set for NN noise
    let nn_refs: Vec<NnRef> = pool
        .labelled
        .iter()
        .map(|(&id, &label)| {
            let embedding = if cfg.oracle.nn_raw_features {
                Ok(pool.features[&id].clone())
            } else {
                net.representation(&pool.features[&id])
            }?;
            Ok(NnRef { id, label, embedding })
        })
        .collect::<Result<_>>()?;

    let mut audits = Vec::with_capacity(ids.len());
    for &id in ids {
        let x = &pool.features[&id];
        let mut label_rng = instance_stream(cfg.seed, "label", epoch, id);
        let (g, _) = mc_outputs(net, x, cfg.acquisition.mode, cfg.acquisition.samples, spec, &mut label_rng)?;
        let t = net.selector_forward(x)?;
        let ask = match cfg.oracle.strategy {
            Strategy::NoOracle => false,
            Strategy::FullOracle => true,
            Strategy::EpsilonGreedy => {
                let eps = epsilon_schedule(epoch, cfg.oracle.k, cfg.acquisition.stride);
                use rand::Rng;
                instance_stream(cfg.seed, "epsilon", epoch, id).gen::<f64>() < eps
            }
            Strategy::EntropyResponse => entropy_response_ask(&g, cfg.oracle.w),
            Strategy::Soqal => decide(t, state, cfg.oracle.s).verdict == Verdict::AskOracle,
        };
        let label = if ask {
            let embedded = if cfg.oracle.nn_raw_features {
                x.clone()
            } else {
                net.representation(x)?
            };
            let mut noise_rng = instance_stream(cfg.seed, "noise", epoch, id);
            oracle_label(oracle.truth_of(id), classes, &cfg.oracle, &embedded, &nn_refs, &mut noise_rng)?
        } else {
            pseudo_label(&g)
        };
        audits.push(AcquisitionAudit {
            id,
            verdict: if ask { Verdict::AskOracle } else { Verdict::PseudoLabel },
            t,
            label,
        });
    }
    Ok(audits)
}

fn eval_auc(net: &Network, ds: &Dataset, ids: &[u64]) -> Option<f64> {
    let rows: BTreeMap<u64, &crate::data::Row> = ds.rows.iter().map(|r| (r.id, r)).collect();
    let mut scores = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &id in ids {
        let r = rows[&id];
        scores.push(net.forward_with_masks(&r.features, None).ok()?);
        labels.push(r.label);
    }
    macro_auc(&scores, &labels).ok()
}

/// Run one experiment end to end, writing one JSONL record per epoch.
pub fn run_experiment(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<RunSummary> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let parts = split(&ds, cfg.data.labelled_fraction, &mut stream(cfg.seed, "split"))?;

    let sigma = if cfg.acquisition.sigma_absolute {
        cfg.acquisition.sigma
    } else {
        cfg.acquisition.sigma * ds.feature_std()
    };
    let spec = PerturbationSpec::new(sigma)?;

    let rows: BTreeMap<u64, &crate::data::Row> = ds.rows.iter().map(|r| (r.id, r)).collect();
    let pool_ids: Vec<u64> = parts.labelled.iter().chain(&parts.unlabelled).copied().collect();
    let mut pool = Pool {
        features: pool_ids.iter().map(|&id| (id, rows[&id].features.clone())).collect(),
        labelled: parts.labelled.iter().map(|&id| (id, rows[&id].label)).collect(),
        unlabelled: parts.unlabelled.iter().copied().collect(),
    };
    let oracle = OracleSim::new(pool_ids.iter().map(|&id| (id, rows[&id].label)).collect());

    let net_cfg = NetworkConfig {
        input_dim: ds.dim,
        hidden: cfg.net.hidden.clone(),
        classes: ds.classes,
        dropout: cfg.net.dropout,
    };
    let mut net = Network::new(&net_cfg, &mut stream(cfg.seed, "net-init"))?;
    let mut opt = Adam::new(cfg.learning_rate, net.n_params());
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let mut shuffle_rng = stream(cfg.seed, "shuffle");

    let mut histories: BTreeMap<u64, ScoreHistory> = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 1..=cfg.epochs {
        // training pass over the labelled pool
        let mut ids: Vec<u64> = pool.labelled.keys().copied().collect();
        ids.shuffle(&mut shuffle_rng);
        let mut class_loss = 0.0;
        let mut sel_loss = 0.0;
        for chunk in ids.chunks(cfg.batch_size) {
            let batch = TrainBatch::new(
                chunk.iter().map(|id| pool.features[id].clone()).collect(),
                chunk.iter().map(|id| pool.labelled[id]).collect(),
                ds.classes,
            )?;
            let (cl, sl) = train_step(&mut net, &batch, &mut opt, &mut dropout_rng)?;
            class_loss += cl;
            sel_loss += sl;
        }
        let n_lab = pool.labelled.len() as f64;
        class_loss /= n_lab;
        sel_loss /= n_lab;

        // selector snapshot over the full labelled set, dropout off
        let tvals: Vec<(f64, u8)> = pool
            .labelled
            .iter()
            .map(|(id, &label)| {
                let x = &pool.features[id];
                let p = net.forward_with_masks(x, None)?;
                let e = u8::from(argmax_lowest(&p) != label);
                Ok((net.selector_forward(x)?, e))
            })
            .collect::<Result<_>>()?;
        let state = fit_error_gaussians(&tvals, epoch);
        let chernoff = if state.usable {
            let n1 = tvals.iter().filter(|&&(_, e)| e == 1).count() as f64;
            let p1 = n1 / tvals.len() as f64;
            chernoff_bound(&state.fit0.unwrap(), &state.fit1.unwrap(), (1.0 - p1, p1)).ok()
        } else {
            None
        };

        // periodic scoring for tracked acquisition
        let tracking = cfg.acquisition.tracking;
        if tracking && epoch % cfg.acquisition.dt == 0 && !pool.unlabelled.is_empty() {
            let scores = score_pool(
                &net,
                &pool,
                cfg.acquisition.function,
                cfg.acquisition.mode,
                cfg.acquisition.samples,
                &spec,
                cfg.acquisition.ridge,
                cfg.seed,
                epoch,
            )?;
            for (id, s) in scores {
                histories
                    .entry(id)
                    .or_insert_with(|| ScoreHistory::new(id, cfg.acquisition.dt))
                    .push(epoch, s)?;
            }
        }

        // acquisition
        let mut ask_rate = None;
        if epoch % cfg.acquisition.stride == 0 && !pool.unlabelled.is_empty() {
            let final_scores: BTreeMap<u64, f64> = if tracking {
                pool.unlabelled
                    .iter()
                    .map(|&id| (id, histories.get(&id).map_or(0.0, ScoreHistory::autaf)))
                    .collect()
            } else {
                score_pool(
                    &net,
                    &pool,
                    cfg.acquisition.function,
                    cfg.acquisition.mode,
                    cfg.acquisition.samples,
                    &spec,
                    cfg.acquisition.ridge,
                    cfg.seed,
                    epoch,
                )?
            };
            let selected = rank_and_select(&final_scores, cfg.acquisition.fraction)?;
            if !selected.is_empty() {
                let before = pool.total();
                let audits =
                    label_acquired(&selected, cfg, &net, &pool, &state, &oracle, &spec, epoch)?;
                let asks = audits.iter().filter(|a| a.verdict == Verdict::AskOracle).count();
                for a in &audits {
                    pool.acquire(a.id, a.label)?;
                }
                debug_assert_eq!(pool.total(), before);
                ask_rate = Some(asks as f64 / audits.len() as f64);
            }
            if !cfg.acquisition.full_history {
                histories.clear();
            }
        }

        let record = EpochRecord {
            epoch,
            class_loss,
            selection_loss: sel_loss,
            val_auc: eval_auc(&net, &ds, &parts.val),
            test_auc: eval_auc(&net, &ds, &parts.test),
            labelled: pool.labelled.len(),
            unlabelled: pool.unlabelled.len(),
            ask_rate,
            mu0: state.fit0.map(|f| f.mean),
            var0: state.fit0.map(|f| f.var),
            mu1: state.fit1.map(|f| f.mean),
            var1: state.fit1.map(|f| f.var),
            d_h: state.d_h,
            chernoff_beta: chernoff.map(|c| c.beta),
            chernoff_bound: chernoff.map(|c| c.bound),
            acquisition_function: cfg.acquisition.function.to_string(),
            mode: cfg.acquisition.mode.to_string(),
            strategy: cfg.oracle.strategy.to_string(),
            noise: format!("{:?}", cfg.oracle.noise).to_lowercase(),
            gamma: cfg.oracle.gamma,
            seed: cfg.seed,
        };
        serde_json::to_writer(&mut *out, &record).map_err(|e| Error::Numeric(e.to_string()))?;
        out.write_all(b"\n")?;
        records.push(record);
    }

    Ok(RunSummary {
        final_val_auc: records.last().and_then(|r| r.val_auc),
        final_test_auc: records.last().and_then(|r| r.test_auc),
        records,
    })
}
