//! Toy local trainer: a softmax classifier from hashed episode features to
//! action kinds, trained with plain minibatch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionDomain, ActionKind, Direction, ParamShape, UnifiedAction};
use crate::episodes::{Episode, Os, Platform, Source, SourceTag, Step, NA};
use crate::fl::{AlgoHooks, ClientUpdate, LocalTrainer, ParamVector};
use crate::partition::{Axis, ClientId};
use crate::seed::{derive_rng, fnv1a};

/// Number of output classes.
pub const NUM_CLASSES: usize = ActionKind::COUNT;
pub const DEFAULT_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("empty training sample")]
    EmptyShard,
    #[error("parameter length {0} is not a multiple of {NUM_CLASSES}")]
    BadDim(usize),
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub features: Vec<f64>,
    pub label: usize,
}

fn gaussian_vec(key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tokens(instruction: &str) -> impl Iterator<Item = String> + '_ {
    instruction
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

const TAG_FIELDS: usize = 5;
const MAX_STEP_BUCKET: usize = 9;

/// Feature map shared by all steps of an episode, before the step term.
fn episode_base(instruction: &str, tag: &SourceTag, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let toks: Vec<String> = tokens(instruction).collect();
    if !toks.is_empty() {
        let w = 1.0 / (toks.len() as f64).sqrt();
        for t in &toks {
            add_scaled(&mut acc, w, &gaussian_vec(&format!("tok:{t}"), dim));
        }
    }
    let fields = [
        format!("source:{}", tag.source.name()),
        format!("platform:{}", tag.platform.name()),
        format!("os:{}", tag.os.name()),
        format!("device:{}", tag.device),
        format!("app:{}", tag.app_category),
    ];
    for f in &fields {
        add_scaled(&mut acc, 1.0, &gaussian_vec(f, dim));
    }
    acc
}

fn add_scaled(acc: &mut [f64], w: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
}

fn with_step(base: &[f64], step_index: usize, dim: usize) -> Vec<f64> {
    let step = gaussian_vec(&format!("step:{}", step_index.min(MAX_STEP_BUCKET)), dim);
    let norm = 1.0 / ((TAG_FIELDS + 2) as f64).sqrt();
    base.iter().zip(&step).map(|(b, s)| (b + s) * norm).collect()
}

/// Features of one step: instruction tokens, step position and tag fields,
/// each hashed to a fixed Gaussian direction.
pub fn featurize_step(instruction: &str, tag: &SourceTag, step_index: usize, dim: usize) -> Vec<f64> {
    with_step(&episode_base(instruction, tag, dim), step_index, dim)
}

/// One `(features, action kind index)` pair per step.
pub fn featurize(ep: &Episode, dim: usize) -> Vec<Pair> {
    let base = episode_base(&ep.instruction, &ep.tag, dim);
    ep.steps
        .iter()
        .map(|s| Pair { features: with_step(&base, s.index, dim), label: s.action.kind.index() })
        .collect()
}

/// Row-major `C × (D+1)` weights with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub feature_dim: usize,
    pub params: ParamVector,
}

impl ToyModel {
    pub fn param_count(feature_dim: usize) -> usize {
        NUM_CLASSES * (feature_dim + 1)
    }

    pub fn zeros(feature_dim: usize) -> Self {
        ToyModel { feature_dim, params: ParamVector::zeros(Self::param_count(feature_dim)) }
    }

    pub fn from_params(params: ParamVector) -> Result<Self, TrainError> {
        let n = params.dim();
        if n == 0 || n % NUM_CLASSES != 0 {
            return Err(TrainError::BadDim(n));
        }
        Ok(ToyModel { feature_dim: n / NUM_CLASSES - 1, params })
    }

    pub fn logits(&self, x: &[f64]) -> [f64; NUM_CLASSES] {
        logits(self.params.as_slice(), self.feature_dim, x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Fraction of pairs whose label is the arg-max class.
    pub fn accuracy(&self, pairs: &[Pair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        pairs.iter().filter(|p| self.predict(&p.features) == p.label).count() as f64 / pairs.len() as f64
    }
}

fn logits(w: &[f64], d: usize, x: &[f64]) -> [f64; NUM_CLASSES] {
    let mut z = [0.0; NUM_CLASSES];
    for (k, zk) in z.iter_mut().enumerate() {
        let row = &w[k * (d + 1)..(k + 1) * (d + 1)];
        *zk = row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    z
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over the batch, plus `(μ/2)·‖w − anchor‖²` when a
/// proximal term is given, and its gradient.
pub fn loss_and_grad(model: &ToyModel, batch: &[Pair], prox: Option<(f64, &ParamVector)>) -> (f64, ParamVector) {
    let d = model.feature_dim;
    let w = model.params.as_slice();
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len().max(1) as f64;
    for pair in batch {
        let z = logits(w, d, &pair.features);
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        loss += (lse - z[pair.label]) * inv;
        for k in 0..NUM_CLASSES {
            let p = (z[k] - lse).exp();
            let g = (p - f64::from(u8::from(k == pair.label))) * inv;
            let row = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
            for (gi, xi) in row[..d].iter_mut().zip(&pair.features) {
                *gi += g * xi;
            }
            row[d] += g;
        }
    }
    if let Some((mu, anchor)) = prox {
        for ((gi, wi), ai) in grad.iter_mut().zip(w).zip(anchor.as_slice()) {
            let diff = wi - ai;
            loss += 0.5 * mu * diff * diff;
            *gi += mu * diff;
        }
    }
    (loss, ParamVector::from_vec(grad).unwrap_or_else(|_| ParamVector::zeros(w.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub hooks: AlgoHooks,
    /// Seeds the per-epoch minibatch order.
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { local_epochs: 1, batch_size: 4, client_lr: 5e-5, hooks: AlgoHooks::default(), seed: 0 }
    }
}

/// SGD from `global` over the featurized sample. Returns the model delta,
/// the pair count, and under SCAFFOLD the change of the client variate.
pub fn local_train(global: &ParamVector, sample: &[&Episode], spec: &TrainSpec) -> Result<ClientUpdate, TrainError> {
    if spec.local_epochs == 0 || spec.batch_size == 0 || !(spec.client_lr >= 0.0) {
        return Err(TrainError::InvalidSpec("epochs and batch size must be positive, lr non-negative".into()));
    }
    let mut model = ToyModel::from_params(global.clone())?;
    let pairs: Vec<Pair> = sample.iter().flat_map(|e| featurize(e, model.feature_dim)).collect();
    if pairs.is_empty() {
        return Err(TrainError::EmptyShard);
    }
    let correction = spec.hooks.scaffold.as_ref().map(|s| {
        let mut c = s.c.clone();
        c.axpy(-1.0, &s.c_i);
        c
    });
    let prox = spec.hooks.prox_mu.map(|mu| (mu, global));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut steps = 0usize;
    for epoch in 0..spec.local_epochs {
        order.shuffle(&mut derive_rng(spec.seed, "local/epoch", &[epoch as u64]));
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (_, mut g) = loss_and_grad(&model, &batch, prox);
            if let Some(corr) = &correction {
                g.axpy(1.0, corr);
            }
            model.params.axpy(-spec.client_lr, &g);
            steps += 1;
        }
    }
    let mut delta = model.params;
    delta.axpy(-1.0, global);
    let control_delta = spec.hooks.scaffold.as_ref().map(|s| {
        // c_i⁺ − c_i = −c + (x − y)/(K·η_l)
        let k_lr = steps as f64 * spec.client_lr;
        let mut cd = s.c.scaled(-1.0);
        if k_lr > 0.0 {
            cd.axpy(-1.0 / k_lr, &delta);
        }
        cd
    });
    Ok(ClientUpdate { client_id: 0, delta, num_samples: pairs.len(), control_delta })
}

/// [`LocalTrainer`] backed by [`local_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainer {
    pub feature_dim: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
}

impl LocalTrainer for ToyTrainer {
    fn dim(&self) -> usize {
        ToyModel::param_count(self.feature_dim)
    }

    fn train(
        &self,
        client_id: ClientId,
        global: &ParamVector,
        sample: &[&Episode],
        hooks: &AlgoHooks,
        seed: u64,
    ) -> Result<ClientUpdate, TrainError> {
        let spec = TrainSpec {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            client_lr: self.client_lr,
            hooks: hooks.clone(),
            seed,
        };
        let mut update = local_train(global, sample, &spec)?;
        update.client_id = client_id;
        Ok(update)
    }
}

fn default_axis() -> Axis {
    Axis::Platform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_values: usize,
    pub episodes_per_value: usize,
    pub feature_dim: usize,
    pub label_noise: f64,
    pub separation: f64,
    pub seed: u64,
    /// Tag field that carries the value.
    #[serde(default = "default_axis")]
    pub axis: Axis,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.num_values == 0 || self.feature_dim == 0 {
            return bad("num_values and feature_dim must be positive".into());
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation {} must be a finite non-negative number", self.separation));
        }
        let cap = match self.axis {
            Axis::Platform => 3,
            Axis::Os => 4,
            Axis::Source => return bad("synthetic episodes always carry source SYNTH".into()),
            Axis::Device | Axis::AppCategory => usize::MAX,
        };
        if self.num_values > cap {
            return bad(format!("{} supports at most {cap} values", self.axis));
        }
        Ok(())
    }

    /// Tag of every episode generated for value `v`.
    pub fn tag_for(&self, v: usize) -> SourceTag {
        let mut tag = SourceTag {
            source: Source::Synth,
            platform: Platform::Mobile,
            os: Os::Na,
            device: NA.into(),
            app_category: NA.into(),
        };
        match self.axis {
            Axis::Platform => tag.platform = Platform::ALL[v],
            Axis::Os => tag.os = [Os::Android, Os::Ubuntu, Os::Macos, Os::Windows][v],
            Axis::Device => tag.device = format!("DEV{v}"),
            Axis::AppCategory => tag.app_category = format!("CAT{v}"),
            Axis::Source => {}
        }
        tag
    }
}

const SHARED_VOCAB: usize = 60;
const VALUE_VOCAB: usize = 60;

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// The labelling model for value `v`: `T₀ + separation·R_v`.
pub fn teacher(spec: &SynthSpec, v: usize) -> ToyModel {
    let n = ToyModel::param_count(spec.feature_dim);
    let mut t = gaussian_matrix(&mut derive_rng(spec.seed, "synth/teacher", &[0]), n);
    let r = gaussian_matrix(&mut derive_rng(spec.seed, "synth/teacher", &[v as u64 + 1]), n);
    add_scaled(&mut t, spec.separation, &r);
    ToyModel { feature_dim: spec.feature_dim, params: ParamVector::from_vec(t).expect("finite") }
}

/// Kinds a value's teacher may emit. On the platform axis mobile values
/// use the basic and mobile blocks, web and desktop values the basic and
/// web/desktop blocks; other axes allow every kind.
pub fn allowed_kinds(spec: &SynthSpec, v: usize) -> Vec<ActionKind> {
    let tag = spec.tag_for(v);
    ActionKind::ALL
        .into_iter()
        .filter(|k| match (spec.axis, k.domain()) {
            (Axis::Platform, ActionDomain::Mobile) => tag.platform == Platform::Mobile,
            (Axis::Platform, ActionDomain::WebDesktop) => tag.platform != Platform::Mobile,
            _ => true,
        })
        .collect()
}

/// Arg-max of the teacher logits over `allowed`, skipping terminal kinds
/// unless `last`.
pub fn teacher_label(model: &ToyModel, x: &[f64], allowed: &[ActionKind], last: bool) -> usize {
    let z = model.logits(x);
    let mut best: Option<ActionKind> = None;
    for &k in allowed {
        if k.is_terminal() && !last {
            continue;
        }
        if best.is_none_or(|b| z[k.index()] > z[b.index()]) {
            best = Some(k);
        }
    }
    best.map_or(0, ActionKind::index)
}

fn synth_action(kind: ActionKind, rng: &mut ChaCha8Rng) -> UnifiedAction {
    match kind.shape() {
        ParamShape::None => UnifiedAction::bare(kind),
        ParamShape::Point => UnifiedAction::at(kind, rng.random_range(0..=1000), rng.random_range(0..=1000)),
        ParamShape::Direction => {
            let dirs = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];
            UnifiedAction::scroll(dirs[rng.random_range(0..4)])
        }
        ParamShape::Text => UnifiedAction::with_text(
            kind,
            match kind {
                ActionKind::Hotkey => "CTRL+C".to_string(),
                ActionKind::OpenApp => format!("app{}", rng.random_range(0..20)),
                _ => format!("text{}", rng.random_range(0..100)),
            },
        ),
    }
}

/// Generates `num_values · episodes_per_value` episodes. Value `v` draws
/// instruction tokens from its own vocabulary with probability `s/(s+1)`
/// and is labelled by [`teacher`]`(spec, v)`.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Vec<Episode>, SynthError> {
    spec.validate()?;
    let d = spec.feature_dim;
    let p_own = spec.separation / (spec.separation + 1.0);
    let mut out = Vec::with_capacity(spec.num_values * spec.episodes_per_value);
    for v in 0..spec.num_values {
        let model = teacher(spec, v);
        let tag = spec.tag_for(v);
        let allowed = allowed_kinds(spec, v);
        for e in 0..spec.episodes_per_value {
            let mut rng = derive_rng(spec.seed, "synth/episode", &[v as u64, e as u64]);
            let n_tok = rng.random_range(6..=10);
            let words: Vec<String> = (0..n_tok)
                .map(|_| {
                    if rng.random_bool(p_own) {
                        format!("v{v}w{}", rng.random_range(0..VALUE_VOCAB))
                    } else {
                        format!("w{}", rng.random_range(0..SHARED_VOCAB))
                    }
                })
                .collect();
            let instruction = words.join(" ");
            let len = rng.random_range(1..=4usize);
            let base = episode_base(&instruction, &tag, d);
            let (w, h) = if tag.platform == Platform::Mobile { (1080, 1920) } else { (1920, 1080) };
            let episode_id = format!("synth-{v}-{e:05}");
            let steps = (0..len)
                .map(|i| {
                    let last = i + 1 == len;
                    let x = with_step(&base, i, d);
                    let mut label = teacher_label(&model, &x, &allowed, last);
                    if rng.random_bool(spec.label_noise) {
                        let choices: Vec<ActionKind> =
                            allowed.iter().copied().filter(|k| last || !k.is_terminal()).collect();
                        label = choices[rng.random_range(0..choices.len())].index();
                    }
                    let kind = ActionKind::from_index(label).expect("valid class");
                    Step {
                        index: i,
                        image_ref: format!("synth/{episode_id}/{i}.png"),
                        screen_w: w,
                        screen_h: h,
                        action: synth_action(kind, &mut rng),
                    }
                })
                .collect();
            out.push(Episode { episode_id, instruction, tag: tag.clone(), steps });
        }
    }
    Ok(out)
}
