//! Round orchestration for every sampling strategy.
//!
//! Stratified strategies need a compressed update from every client to stratify, but only
//! sampled clients train in a round. A one-off warm-up pass before round 1 has every client
//! run one local epoch from the initial model purely to produce a compressed update; from
//! then on a client's stored update is refreshed only when it participates.
//!
//! Client updates are aggregated as parameter deltas and added to the global model.

use alloc::vec::Vec;

use crate::compress::{
    compress_update, compressed_norm, restore, CompressedGradient, SketchConfig,
};
use crate::data::{partition, Partition, PartitionRecipe};
use crate::data_sampling::{client_update, DataSamplePlan};
use crate::model::{
    evaluate, local_train, Example, LocalDataset, ModelSpec, ParamVector, TrainConfig,
};
use crate::privacy::{estimate_total, privatize_size, PrivacyConfig};
use crate::rng::{rng_stream, Domain, MAX_ROUND};
use crate::sampling::{
    aggregate, importance_probs, neyman_allocate, sample_clients, stratum_std, uniform_plan,
    AggregationMode, RoundPlan,
};
use crate::stratify::stratify;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StrategyKind {
    /// `m` of `N` clients uniformly without replacement, plain mean, full local data.
    Uniform,
    /// Stratified, norm-importance client sampling; clients train on all their data.
    Fedsts,
    /// Fedsts plus data-level sampling sized by the true participating total.
    Fedstas,
    /// Fedstas with the participating total estimated from privatized size reports.
    FedstasDp,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Fedsts => "fedsts",
            StrategyKind::Fedstas => "fedstas",
            StrategyKind::FedstasDp => "fedstas-dp",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "uniform" => StrategyKind::Uniform,
            "fedsts" => StrategyKind::Fedsts,
            "fedstas" => StrategyKind::Fedstas,
            "fedstas-dp" => StrategyKind::FedstasDp,
            _ => return None,
        })
    }

    pub fn is_stratified(self) -> bool {
        !matches!(self, StrategyKind::Uniform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Strategy {
    pub kind: StrategyKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub aggregation: AggregationMode,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Strategy {
            kind,
            aggregation: AggregationMode::default(),
        }
    }
}

/// How many examples the data-level sampler asks for each round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DataBudget {
    /// `ceil(q * true total of the participants)`.
    Ratio(f64),
    /// A fixed count.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub num_strata: usize,
    pub rounds: usize,
    pub data_budget: DataBudget,
    pub train: TrainConfig,
    pub sketch: SketchConfig,
    pub privacy: Option<PrivacyConfig>,
    pub partition: PartitionRecipe,
    pub model: ModelSpec,
    pub master_seed: u64,
    pub stratify_max_iter: usize,
}

impl ExperimentConfig {
    pub fn validate(&self, strategy: &Strategy) -> Result<()> {
        let n = self.num_clients;
        if n == 0 || self.clients_per_round == 0 {
            return Err(Error::config(
                "num_clients and clients_per_round must be positive",
            ));
        }
        if self.clients_per_round > n {
            return Err(Error::config("clients_per_round exceeds num_clients"));
        }
        if self.partition.num_clients != n {
            return Err(Error::config("partition recipe and num_clients disagree"));
        }
        if self.rounds > MAX_ROUND {
            return Err(Error::config("too many rounds"));
        }
        self.train.validate()?;
        self.model.validate()?;
        if strategy.kind.is_stratified() {
            if self.num_strata == 0 || self.num_strata > n {
                return Err(Error::config("num_strata must lie in 1..=num_clients"));
            }
            if self.num_strata > self.clients_per_round {
                return Err(Error::config(
                    "num_strata exceeds clients_per_round; every non-empty stratum needs a client",
                ));
            }
            self.sketch.validate()?;
            if self.stratify_max_iter == 0 {
                return Err(Error::config("stratify_max_iter must be positive"));
            }
        }
        match self.data_budget {
            DataBudget::Ratio(q) if !(q > 0.0 && q <= 1.0) => {
                return Err(Error::config("sampling ratio must lie in (0, 1]"))
            }
            DataBudget::Fixed(0) => return Err(Error::config("data budget must be positive")),
            _ => {}
        }
        match (&self.privacy, strategy.kind) {
            (None, StrategyKind::FedstasDp) => {
                return Err(Error::config("fedstas-dp needs a privacy configuration"))
            }
            (Some(p), _) => p.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Per-round metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    /// Mean loss of the new global model over all training examples.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// Client ids in draw order (repeats possible for stratified strategies).
    pub selected_client_ids: Vec<usize>,
    /// `m_h` per stratum (one entry for the uniform strategy).
    pub allocation: Vec<usize>,
    /// Privatized participating total, when size reports were used.
    pub ntilde: Option<f64>,
    pub data_budget: Option<usize>,
    pub examples_used: usize,
    /// Participants that were on stale compressed updates when stratified.
    pub stale_updates: usize,
    /// Filled in by callers that have a clock.
    pub wall_time_ms: Option<u64>,
}

impl MetricsRecord {
    pub fn distinct_selected(&self) -> usize {
        let mut ids = self.selected_client_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Simulation state: the global model plus every client's latest compressed update.
pub struct Simulation<'a> {
    cfg: ExperimentConfig,
    strategy: Strategy,
    train: &'a [Example],
    test: &'a [Example],
    partition: Partition,
    clients: Vec<LocalDataset<'a>>,
    params: ParamVector,
    compressed: Vec<Option<CompressedGradient>>,
    restored: Vec<Vec<f64>>,
    norms: Vec<f64>,
    round: usize,
    size_reports: usize,
}

impl<'a> Simulation<'a> {
    /// Partitions the data, initializes the model, and for stratified strategies runs the
    /// warm-up pass that seeds every client's compressed update.
    pub fn new(
        cfg: ExperimentConfig,
        strategy: Strategy,
        train: &'a [Example],
        test: &'a [Example],
    ) -> Result<Self> {
        cfg.validate(&strategy)?;
        if test.is_empty() {
            return Err(Error::Empty("test set"));
        }
        let partition = partition(train, &cfg.partition)?;
        let clients = partition.client_datasets(train);
        let params = cfg
            .model
            .init_params(&mut rng_stream(cfg.master_seed, Domain::Init, 0, 0));
        let n = cfg.num_clients;
        let mut sim = Simulation {
            cfg,
            strategy,
            train,
            test,
            partition,
            clients,
            params,
            compressed: alloc::vec![None; n],
            restored: alloc::vec![Vec::new(); n],
            norms: alloc::vec![0.0; n],
            round: 0,
            size_reports: 0,
        };
        if strategy.kind.is_stratified() {
            sim.warm_up()?;
        }
        Ok(sim)
    }

    fn warm_up(&mut self) -> Result<()> {
        let one_epoch = TrainConfig {
            epochs: 1,
            ..self.cfg.train
        };
        for k in 0..self.cfg.num_clients {
            let mut rng = rng_stream(self.cfg.master_seed, Domain::LocalTrain, 0, k as u32);
            let trained = local_train(
                &self.cfg.model,
                &self.params,
                &self.clients[k].examples,
                &one_epoch,
                &mut rng,
            )
            .map_err(|e| e.in_round(0, Some(k)))?;
            let cg = compress_update(trained.sub(&self.params).as_slice(), &self.cfg.sketch)
                .map_err(|e| e.in_round(0, Some(k)))?;
            self.store(k, cg);
        }
        Ok(())
    }

    fn store(&mut self, client: usize, cg: CompressedGradient) {
        self.restored[client] = restore(&cg);
        self.norms[client] = compressed_norm(&cg);
        self.compressed[client] = Some(cg);
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Index of the last completed round (0 before any round).
    pub fn round(&self) -> usize {
        self.round
    }

    /// Number of privatized size reports released so far.
    pub fn size_reports(&self) -> usize {
        self.size_reports
    }

    /// Latest compressed update per client.
    pub fn compressed_updates(&self) -> &[Option<CompressedGradient>] {
        &self.compressed
    }

    /// Selection plan for round `round` without running it.
    pub fn plan_round(&self, round: usize) -> Result<RoundPlan> {
        let seed = self.cfg.master_seed;
        if !self.strategy.kind.is_stratified() {
            return uniform_plan(
                self.cfg.num_clients,
                self.cfg.clients_per_round,
                &mut rng_stream(seed, Domain::ClientSample, round, 0),
            );
        }
        let strat = stratify(
            &self.restored,
            self.cfg.num_strata,
            &mut rng_stream(seed, Domain::Stratify, round, 0),
            self.cfg.stratify_max_iter,
        )?;
        let members = strat.members();
        let norms: Vec<Vec<f64>> = members
            .iter()
            .map(|m| m.iter().map(|&k| self.norms[k]).collect())
            .collect();
        let alloc_ = neyman_allocate(
            &strat.stratum_sizes,
            &stratum_std(&norms),
            self.cfg.clients_per_round,
        )?;
        let probs = norms
            .iter()
            .map(|n| importance_probs(n))
            .collect::<Result<Vec<_>>>()?;
        sample_clients(
            &members,
            &alloc_,
            &probs,
            self.strategy.aggregation,
            &mut rng_stream(seed, Domain::ClientSample, round, 0),
        )
    }

    /// Runs the next round and returns its metrics.
    pub fn run_round(&mut self) -> Result<MetricsRecord> {
        let round = self.round + 1;
        if round > MAX_ROUND {
            return Err(Error::config("round index exceeds the stream id range"));
        }
        let seed = self.cfg.master_seed;
        let plan = self
            .plan_round(round)
            .map_err(|e| e.in_round(round, None))?;
        let participants = plan.participants();
        let true_total: usize = participants.iter().map(|&k| self.clients[k].len()).sum();

        let (sample_plan, ntilde, budget) = match self.strategy.kind {
            StrategyKind::Uniform | StrategyKind::Fedsts => {
                (DataSamplePlan::everything(true_total), None, None)
            }
            StrategyKind::Fedstas | StrategyKind::FedstasDp => {
                let budget = match self.cfg.data_budget {
                    DataBudget::Ratio(q) => libm::ceil(q * true_total as f64) as usize,
                    DataBudget::Fixed(b) => b,
                };
                let estimate = if self.strategy.kind == StrategyKind::FedstasDp {
                    let privacy = self.cfg.privacy.as_ref().expect("validated");
                    let reports: Vec<u64> = participants
                        .iter()
                        .map(|&k| {
                            let mut rng = rng_stream(seed, Domain::Privacy, round, k as u32);
                            privatize_size(self.clients[k].len() as u64, privacy, &mut rng)
                        })
                        .collect();
                    self.size_reports += reports.len();
                    Some(estimate_total(&reports, privacy))
                } else {
                    None
                };
                let total = estimate.unwrap_or(true_total as f64);
                let plan = DataSamplePlan::new(budget.max(1), total, participants.len())
                    .map_err(|e| e.in_round(round, None))?;
                (plan, estimate, Some(budget.max(1)))
            }
        };

        let mut updates = Vec::with_capacity(participants.len());
        let mut examples_used = 0;
        for &k in &participants {
            let out = client_update(
                &self.cfg.model,
                &self.clients[k],
                &self.params,
                &sample_plan,
                &self.cfg.train,
                &self.cfg.sketch,
                &mut rng_stream(seed, Domain::DataSample, round, k as u32),
                &mut rng_stream(seed, Domain::LocalTrain, round, k as u32),
            )
            .map_err(|e| e.in_round(round, Some(k)))?;
            examples_used += out.examples_used;
            updates.push(out);
        }

        let by_draw: Vec<&ParamVector> = plan
            .selected
            .iter()
            .map(|s| {
                let i = participants
                    .binary_search(&s.client_id)
                    .expect("participant");
                &updates[i].delta
            })
            .collect();
        let mode = if self.strategy.kind.is_stratified() {
            self.strategy.aggregation
        } else {
            AggregationMode::Plain
        };
        let step = aggregate(&by_draw, &plan, mode).map_err(|e| e.in_round(round, None))?;
        self.params.axpy(1.0, &step);
        if !self.params.is_finite() {
            return Err(Error::Numerical(alloc::string::String::from(
                "global model became non-finite",
            ))
            .in_round(round, None));
        }

        let stale = if self.strategy.kind.is_stratified() {
            self.cfg.num_clients - participants.len()
        } else {
            0
        };
        if self.strategy.kind.is_stratified() {
            for out in updates {
                self.store(out.client_id, out.compressed);
            }
        }

        let (train_loss, _) = evaluate(&self.cfg.model, &self.params, self.train)
            .map_err(|e| e.in_round(round, None))?;
        let (test_loss, test_accuracy) = evaluate(&self.cfg.model, &self.params, self.test)
            .map_err(|e| e.in_round(round, None))?;
        self.round = round;
        Ok(MetricsRecord {
            round,
            train_loss,
            test_loss,
            test_accuracy,
            selected_client_ids: plan.selected.iter().map(|s| s.client_id).collect(),
            allocation: plan.allocation.per_stratum.clone(),
            ntilde,
            data_budget: budget,
            examples_used,
            stale_updates: stale,
            wall_time_ms: None,
        })
    }
}

/// Runs `cfg.rounds` rounds and returns one record per round.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    train: &[Example],
    test: &[Example],
) -> Result<Vec<MetricsRecord>> {
    let mut sim = Simulation::new(cfg.clone(), strategy, train, test)?;
    (0..cfg.rounds).map(|_| sim.run_round()).collect()
}
