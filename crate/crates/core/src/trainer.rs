//! The alternating critic/generator training loop over sampled category pairs.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{auc, EvalOptions};
use crate::losses::{
    breakdown_for, record_critic_objective, record_generator_objective, Alignment, AnchorNorm, GeneratorInputs,
    LossBreakdown, LossWeights, OrthoForm,
};
use crate::model::{feature_matrix, init_model, Critic, GeneratorBank, GeneratorInit};
use crate::numcore::{Matrix, RmsPropConfig, RmsPropState, Tape};
use crate::transport::{cost_matrix, median_cost, sinkhorn_costs, Ground};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSampling {
    /// Every unordered category pair equally likely.
    #[default]
    Uniform,
    /// Pairs weighted by the product of their item counts.
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStop {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window: 200, rel_tol: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Requested style dimension; clamped to the feature dimension.
    pub style_dim: usize,
    pub lambda: f64,
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_bound: f64,
    pub n_critic: usize,
    pub max_iterations: usize,
    /// Test AUC is recorded every `eval_every` iterations; 0 disables it.
    pub eval_every: usize,
    pub seed: u64,
    pub shared_generator: bool,
    pub adversarial: bool,
    pub anchor_enabled: bool,
    pub ortho_enabled: bool,
    /// With `adversarial` off, align the batches with an entropic transport
    /// cost instead of the critic.
    pub ot_alignment: bool,
    pub critic_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub generator_init: GeneratorInit,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub ortho_form: OrthoForm,
    pub anchor_norm: AnchorNorm,
    /// Use every available anchor of the sampled category pair instead of a batch.
    pub anchor_full_set: bool,
    pub pair_sampling: PairSampling,
    /// Sinkhorn regularisation as a multiple of the median batch cost.
    pub sinkhorn_reg: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub early_stop: Option<EarlyStop>,
    /// Negative sampling used for checkpoint AUC.
    pub eval: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            style_dim: 128,
            lambda: 0.01,
            eta: 0.1,
            learning_rate: 1e-3,
            batch_size: 30,
            clip_bound: 0.01,
            n_critic: 5,
            max_iterations: 20_000,
            eval_every: 500,
            seed: 0,
            shared_generator: false,
            adversarial: true,
            anchor_enabled: true,
            ortho_enabled: true,
            ot_alignment: true,
            critic_hidden: vec![128, 128],
            leaky_slope: 0.2,
            generator_init: GeneratorInit::Uniform,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-8,
            ortho_form: OrthoForm::Squared,
            anchor_norm: AnchorNorm::Mean,
            anchor_full_set: false,
            pair_sampling: PairSampling::Uniform,
            sinkhorn_reg: 0.05,
            sinkhorn_max_iter: 2000,
            sinkhorn_tol: 1e-6,
            early_stop: None,
            eval: EvalOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn effective_style_dim(&self, feature_dim: usize) -> usize {
        self.style_dim.min(feature_dim)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            eta: if self.anchor_enabled { self.eta } else { 0.0 },
            lambda: if self.ortho_enabled { self.lambda } else { 0.0 },
            ortho_form: self.ortho_form,
            anchor_norm: self.anchor_norm,
        }
    }

    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig { learning_rate: self.learning_rate, rho: self.rmsprop_rho, epsilon: self.rmsprop_epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        let non_negative = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be non-negative and finite, got {v}")))
            }
        };
        if self.style_dim == 0 {
            return Err(Error::invalid("style_dim", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.n_critic == 0 {
            return Err(Error::invalid("n_critic", "must be at least 1"));
        }
        if self.critic_hidden.contains(&0) {
            return Err(Error::invalid("critic_hidden", "layer widths must be positive"));
        }
        positive("learning_rate", self.learning_rate)?;
        positive("clip_bound", self.clip_bound)?;
        positive("rmsprop_epsilon", self.rmsprop_epsilon)?;
        positive("sinkhorn_reg", self.sinkhorn_reg)?;
        positive("sinkhorn_tol", self.sinkhorn_tol)?;
        non_negative("lambda", self.lambda)?;
        non_negative("eta", self.eta)?;
        if !(0.0..1.0).contains(&self.rmsprop_rho) {
            return Err(Error::invalid("rmsprop_rho", format!("must lie in [0, 1), got {}", self.rmsprop_rho)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::invalid("leaky_slope", "must be finite"));
        }
        if let Some(es) = &self.early_stop {
            if es.window == 0 {
                return Err(Error::invalid("early_stop.window", "must be positive"));
            }
            positive("early_stop.rel_tol", es.rel_tol)?;
        }
        Ok(())
    }
}

/// One sampled training step: a category pair, item batches and anchors.
/// Anchors are `(item in c_i, item in c_j)` index pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub c_i: String,
    pub c_j: String,
    pub batch_i: Vec<usize>,
    pub batch_j: Vec<usize>,
    pub anchors: Vec<(usize, usize)>,
}

/// Precomputed category-pair index over a dataset's training pairs.
#[derive(Clone, Debug)]
pub struct Sampler {
    categories: Vec<String>,
    pairs: Vec<(usize, usize)>,
    cumulative: Vec<f64>,
    anchors: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

impl Sampler {
    pub fn new(ds: &Dataset, mode: PairSampling) -> Result<Self> {
        let categories = ds.categories();
        if categories.len() < 2 {
            return Err(Error::invalid("categories", format!("need at least 2 categories, have {}", categories.len())));
        }
        let mut pairs = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for i in 0..categories.len() {
            for j in i + 1..categories.len() {
                pairs.push((i, j));
                acc += match mode {
                    PairSampling::Uniform => 1.0,
                    PairSampling::Frequency => {
                        (ds.category_items(&categories[i]).len() * ds.category_items(&categories[j]).len()) as f64
                    }
                };
                cumulative.push(acc);
            }
        }
        let pos = |c: &str| categories.binary_search_by(|x| x.as_str().cmp(c)).expect("known category");
        let mut anchors: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for p in ds.train_pairs() {
            let (ca, cb) = (pos(&ds.item(p.a).category), pos(&ds.item(p.b).category));
            let entry = if ca < cb { ((ca, cb), (p.a, p.b)) } else { ((cb, ca), (p.b, p.a)) };
            anchors.entry(entry.0).or_default().push(entry.1);
        }
        Ok(Self { categories, pairs, cumulative, anchors })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Draws `(c_i, c_j)` with `c_i < c_j`, then `m` items from each with
    /// replacement and up to `m` distinct anchors (all of them when `full_set`).
    pub fn sample(&self, ds: &Dataset, rng: &mut impl Rng, m: usize, full_set: bool) -> Sample {
        let total = *self.cumulative.last().expect("at least one pair");
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.pairs.len() - 1);
        let (i, j) = self.pairs[k];
        let (ci, cj) = (&self.categories[i], &self.categories[j]);
        let pool_i = ds.category_items(ci);
        let pool_j = ds.category_items(cj);
        let batch_i = (0..m).map(|_| pool_i[rng.random_range(0..pool_i.len())]).collect();
        let batch_j = (0..m).map(|_| pool_j[rng.random_range(0..pool_j.len())]).collect();
        let anchors = match self.anchors.get(&(i, j)) {
            Some(av) if full_set => av.clone(),
            Some(av) => av.choose_multiple(rng, m.min(av.len())).copied().collect(),
            None => Vec::new(),
        };
        Sample { c_i: ci.clone(), c_j: cj.clone(), batch_i, batch_j, anchors }
    }
}

/// One draw from a fresh [`Sampler`] with uniform pair sampling.
pub fn sample_step(ds: &Dataset, rng: &mut impl Rng, m: usize) -> Result<Sample> {
    Ok(Sampler::new(ds, PairSampling::Uniform)?.sample(ds, rng, m, false))
}

/// RMSProp state for every critic weight and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticOptState {
    pub layers: Vec<(RmsPropState, RmsPropState)>,
}

impl CriticOptState {
    pub fn new(critic: &Critic, config: RmsPropConfig) -> Self {
        let layers = critic
            .layers
            .iter()
            .map(|l| (RmsPropState::new(config, l.weight.shape()), RmsPropState::new(config, l.bias.shape())))
            .collect();
        Self { layers }
    }
}

fn ensure_finite(grads: &[&Matrix], what: &str) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { context: format!("{what} gradient (parameter {i})") });
    }
    Ok(())
}

/// One ascent step of the critic objective on projected batches, then weight clipping.
pub fn critic_step(si: &Matrix, sj: &Matrix, critic: &mut Critic, state: &mut CriticOptState) -> Result<()> {
    let mut tape = Tape::new();
    let vars = critic.attach(&mut tape, true);
    let (vi, vj) = (tape.constant(si.clone()), tape.constant(sj.clone()));
    let obj = record_critic_objective(&mut tape, critic, &vars, vi, vj)?;
    let loss = tape.scale(obj, -1.0);
    let mut grads = tape.backward(loss)?;
    let mut taken = Vec::with_capacity(vars.layers.len());
    for (l, &(w, b)) in critic.layers.iter().zip(&vars.layers) {
        let gw = grads.take(w).unwrap_or_else(|| Matrix::zeros(l.weight.rows(), l.weight.cols()));
        let gb = grads.take(b).unwrap_or_else(|| Matrix::zeros(1, l.bias.cols()));
        taken.push((gw, gb));
    }
    let all: Vec<&Matrix> = taken.iter().flat_map(|(a, b)| [a, b]).collect();
    ensure_finite(&all, "critic")?;
    for ((layer, (sw, sb)), (gw, gb)) in critic.layers.iter_mut().zip(&mut state.layers).zip(&taken) {
        sw.step(&mut layer.weight, gw)?;
        sb.step(&mut layer.bias, gb)?;
    }
    critic.clip()
}

/// One descent step of the generator objective on `G_{c_i}` and `G_{c_j}`
/// (bank slots `slots`); no other matrix is touched.
pub fn generator_step(
    bank: &mut GeneratorBank,
    slots: (usize, usize),
    inputs: &GeneratorInputs<'_>,
    alignment: Alignment<'_>,
    weights: &LossWeights,
    states: &mut [RmsPropState],
) -> Result<()> {
    let (si, sj) = slots;
    let mut tape = Tape::new();
    let gi = tape.param(bank.matrix_at(si).clone());
    let gj = if si == sj { gi } else { tape.param(bank.matrix_at(sj).clone()) };
    let terms = record_generator_objective(&mut tape, gi, gj, inputs, alignment, weights)?;
    let grads = tape.backward(terms.total)?;
    let shape = bank.matrix_at(si).shape();
    let grad_i = grads.get_or_zeros(gi, shape);
    let grad_j = grads.get_or_zeros(gj, shape);
    ensure_finite(&[&grad_i, &grad_j], "generator")?;
    states[si].step(bank.matrix_at_mut(si), &grad_i)?;
    if sj != si {
        states[sj].step(bank.matrix_at_mut(sj), &grad_j)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSettings {
    /// Multiple of the median squared distance between the batches.
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

/// Entropic plan between two projected batches under squared Euclidean cost.
/// `None` when Sinkhorn fails to converge.
pub fn transport_plan(si: &Matrix, sj: &Matrix, s: &SinkhornSettings) -> Result<Option<Matrix>> {
    let cost = cost_matrix(si, sj, Ground::SquaredEuclidean)?;
    let med = median_cost(&cost);
    if med <= 0.0 {
        // degenerate batches: every coupling costs the same
        let (n, m) = cost.shape();
        return Ok(Some(Matrix::filled(n, m, 1.0 / (n * m) as f64)));
    }
    let r = sinkhorn_costs(&cost, s.reg * med, s.max_iter, s.tol)?;
    Ok(r.converged.then_some(r.plan.gamma))
}

/// Generator step with the adversarial term replaced by the entropic OT cost
/// between projected batches, differentiated with the plan held fixed.
/// Returns `false` when the step was skipped because Sinkhorn did not converge.
pub fn sinkhorn_generator_step(
    bank: &mut GeneratorBank,
    slots: (usize, usize),
    inputs: &GeneratorInputs<'_>,
    weights: &LossWeights,
    states: &mut [RmsPropState],
    settings: &SinkhornSettings,
) -> Result<bool> {
    let si = inputs.xi.matmul_t(bank.matrix_at(slots.0))?;
    let sj = inputs.xj.matmul_t(bank.matrix_at(slots.1))?;
    let Some(plan) = transport_plan(&si, &sj, settings)? else {
        log::warn!("sinkhorn did not converge; generator step skipped");
        return Ok(false);
    };
    generator_step(bank, slots, inputs, Alignment::Transport(&plan), weights, states)?;
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cat_i: String,
    pub cat_j: String,
    pub losses: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: usize,
    pub auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub critic_updates: usize,
    pub generator_updates: usize,
    pub skipped_generator_steps: usize,
    pub stopped_early_at: Option<usize>,
}

impl TrainTrace {
    /// `iter,cat_i,cat_j,w_estimate,adv,anchor,ortho,total`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["iter", "cat_i", "cat_j", "w_estimate", "adv", "anchor", "ortho", "total"])?;
        for r in &self.records {
            let l = &r.losses;
            w.write_record([
                r.iteration.to_string(),
                r.cat_i.clone(),
                r.cat_j.clone(),
                l.wasserstein_estimate.to_string(),
                l.adversarial_term.to_string(),
                l.anchor_term.to_string(),
                l.ortho_term.to_string(),
                l.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("writing trace", e))?;
        Ok(())
    }

    /// `iter,auc`
    pub fn write_checkpoints_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["iter", "auc"])?;
        for c in &self.checkpoints {
            w.write_record([c.iteration.to_string(), c.auc.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("writing checkpoints", e))?;
        Ok(())
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.auc)
    }
}

/// Training state that can be advanced one iteration at a time.
pub struct Trainer<'a> {
    ds: &'a Dataset,
    config: TrainConfig,
    sampler: Sampler,
    rng: ChaCha8Rng,
    bank: GeneratorBank,
    critic: Critic,
    gen_states: Vec<RmsPropState>,
    critic_state: CriticOptState,
    iteration: usize,
    trace: TrainTrace,
}

struct Batches {
    xi: Matrix,
    xj: Matrix,
    ax: Matrix,
    ay: Matrix,
}

impl Batches {
    fn inputs(&self) -> GeneratorInputs<'_> {
        GeneratorInputs { xi: &self.xi, xj: &self.xj, anchor_x: &self.ax, anchor_y: &self.ay }
    }
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sampler = Sampler::new(ds, config.pair_sampling)?;
        let (bank, critic) = init_model(&config, sampler.categories(), ds.feature_dim(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let gen_states = (0..bank.slots())
            .map(|s| RmsPropState::new(config.rmsprop(), bank.matrix_at(s).shape()))
            .collect();
        let critic_state = CriticOptState::new(&critic, config.rmsprop());
        Ok(Self {
            ds,
            config,
            sampler,
            rng,
            bank,
            critic,
            gen_states,
            critic_state,
            iteration: 0,
            trace: TrainTrace::default(),
        })
    }

    pub fn bank(&self) -> &GeneratorBank {
        &self.bank
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn sinkhorn_settings(&self) -> SinkhornSettings {
        SinkhornSettings {
            reg: self.config.sinkhorn_reg,
            max_iter: self.config.sinkhorn_max_iter,
            tol: self.config.sinkhorn_tol,
        }
    }

    fn batches(&self, s: &Sample) -> Result<Batches> {
        let f = self.ds.feature_dim();
        let items = |idx: &mut dyn Iterator<Item = usize>| idx.map(|i| self.ds.item(i)).collect::<Vec<_>>();
        Ok(Batches {
            xi: feature_matrix(&items(&mut s.batch_i.iter().copied()), f)?,
            xj: feature_matrix(&items(&mut s.batch_j.iter().copied()), f)?,
            ax: feature_matrix(&items(&mut s.anchors.iter().map(|a| a.0)), f)?,
            ay: feature_matrix(&items(&mut s.anchors.iter().map(|a| a.1)), f)?,
        })
    }

    /// Runs one iteration and returns its trace record.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        self.iteration += 1;
        let t = self.iteration;
        let sample = self.sampler.sample(self.ds, &mut self.rng, self.config.batch_size, self.config.anchor_full_set);
        let b = self.batches(&sample)?;
        let slots = (self.bank.slot(&sample.c_i)?, self.bank.slot(&sample.c_j)?);
        let weights = self.config.weights();

        if t % self.config.n_critic == 0 {
            let done = if self.config.adversarial {
                let critic = &self.critic;
                generator_step(&mut self.bank, slots, &b.inputs(), Alignment::Critic(critic), &weights, &mut self.gen_states)?;
                true
            } else if self.config.ot_alignment {
                let settings = self.sinkhorn_settings();
                sinkhorn_generator_step(&mut self.bank, slots, &b.inputs(), &weights, &mut self.gen_states, &settings)?
            } else {
                generator_step(&mut self.bank, slots, &b.inputs(), Alignment::Off, &weights, &mut self.gen_states)?;
                true
            };
            if done {
                self.trace.generator_updates += 1;
            } else {
                self.trace.skipped_generator_steps += 1;
            }
        }

        let si = b.xi.matmul_t(self.bank.matrix_at(slots.0))?;
        let sj = b.xj.matmul_t(self.bank.matrix_at(slots.1))?;
        critic_step(&si, &sj, &mut self.critic, &mut self.critic_state)?;
        self.trace.critic_updates += 1;
        if self.critic.max_abs_weight() > self.config.clip_bound {
            return Err(Error::invalid("critic", format!("weights exceed the clip bound at iteration {t}")));
        }

        let plan;
        let alignment = if self.config.adversarial {
            Alignment::Critic(&self.critic)
        } else if self.config.ot_alignment {
            let s = self.sinkhorn_settings();
            let cost = cost_matrix(&si, &sj, Ground::SquaredEuclidean)?;
            let med = median_cost(&cost);
            plan = if med > 0.0 {
                sinkhorn_costs(&cost, s.reg * med, s.max_iter, s.tol)?.plan.gamma
            } else {
                Matrix::filled(si.rows(), sj.rows(), 1.0 / (si.rows() * sj.rows()) as f64)
            };
            Alignment::Transport(&plan)
        } else {
            Alignment::Off
        };
        let losses = breakdown_for(
            self.bank.matrix_at(slots.0),
            self.bank.matrix_at(slots.1),
            slots.0 == slots.1,
            &b.inputs(),
            &self.critic,
            alignment,
            &weights,
        )?;
        self.trace.records.push(IterationRecord { iteration: t, cat_i: sample.c_i, cat_j: sample.c_j, losses });

        if self.config.eval_every > 0 && t % self.config.eval_every == 0 && !self.ds.test_pairs().is_empty() {
            let (report, _) = auc(&self.bank, self.ds, self.ds.test_pairs(), &self.config.eval)?;
            log::info!("iter {t}: test auc {:.4}, w {:.6}", report.auc, losses.wasserstein_estimate);
            self.trace.checkpoints.push(CheckpointRecord { iteration: t, auc: report.auc });
        }
        Ok(self.trace.records.last().expect("just pushed"))
    }

    fn should_stop(&self) -> bool {
        let Some(es) = self.config.early_stop else { return false };
        let t = self.iteration;
        if t < 2 * es.window || t % es.window != 0 {
            return false;
        }
        let r = &self.trace.records;
        let mean = |s: &[crate::trainer::IterationRecord]| {
            s.iter().map(|x| x.losses.wasserstein_estimate.abs()).sum::<f64>() / s.len() as f64
        };
        let last = mean(&r[r.len() - es.window..]);
        let prev = mean(&r[r.len() - 2 * es.window..r.len() - es.window]);
        (last - prev).abs() <= es.rel_tol * prev.abs().max(f64::MIN_POSITIVE)
    }

    /// Steps once unless training is over. Returns whether another step is due.
    pub fn advance(&mut self) -> Result<bool> {
        if self.iteration >= self.config.max_iterations || self.trace.stopped_early_at.is_some() {
            return Ok(false);
        }
        self.step()?;
        if self.should_stop() {
            self.trace.stopped_early_at = Some(self.iteration);
            log::info!("early stop at iteration {}", self.iteration);
            return Ok(false);
        }
        Ok(self.iteration < self.config.max_iterations)
    }

    /// Iterates until `max_iterations` or the early-stop test fires.
    pub fn run(&mut self) -> Result<()> {
        while self.advance()? {}
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome { bank: self.bank, critic: self.critic, trace: self.trace }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub bank: GeneratorBank,
    pub critic: Critic,
    pub trace: TrainTrace,
}

/// Full training run; deterministic for a fixed config and dataset.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(ds, config.clone())?;
    trainer.run()?;
    Ok(trainer.into_outcome())
}
