//! Step-level scoring of predicted action strings: type accuracy,
//! grounding accuracy and success rate, grouped by source and platform.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{chord_key, parse_action, ActionKind, ParamShape, Point, UnifiedAction, COORD_MAX};
use crate::episodes::{Episode, NA};
use crate::local_train::{featurize_step, ToyModel};

/// Fraction of the screen diagonal within which a click counts as a hit.
pub const GROUNDING_RATIO: f64 = 0.14;
/// Similarity a text payload must exceed to count as correct.
pub const SIMILARITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub episode_id: String,
    pub step_index: usize,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction for unknown step {episode_id}#{step_index}")]
    DanglingPrediction { episode_id: String, step_index: usize },
    #[error("two predictions for {episode_id}#{step_index}")]
    DuplicatePrediction { episode_id: String, step_index: usize },
}

/// Whether the first token of `predicted` is the gold kind's name.
pub fn type_match(predicted: &str, gold: &UnifiedAction) -> bool {
    predicted.split_whitespace().next() == Some(gold.kind.name())
}

/// Euclidean distance within `0.14·√(W² + H²)`, boundary included.
pub fn grounding_hit(pred: (f64, f64), gold: (f64, f64), space: (f64, f64)) -> bool {
    let dist = (pred.0 - gold.0).hypot(pred.1 - gold.1);
    dist <= GROUNDING_RATIO * space.0.hypot(space.1)
}

fn multiset_f1<T: Eq + std::hash::Hash>(a: Vec<T>, b: Vec<T>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (na, nb) = (a.len(), b.len());
    let mut counts: HashMap<T, usize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut overlap = 0usize;
    for x in b {
        if let Some(c) = counts.get_mut(&x) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    2.0 * overlap as f64 / (na + nb) as f64
}

/// `max(token F1, character F1)`, case-insensitive, whitespace ignored
/// at the character level.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    let (ea, eb) = (a.trim().is_empty(), b.trim().is_empty());
    if ea && eb {
        return 1.0;
    }
    if ea || eb {
        return 0.0;
    }
    let tok = multiset_f1(a.split_whitespace().collect(), b.split_whitespace().collect());
    let chr = multiset_f1(
        a.chars().filter(|c| !c.is_whitespace()).collect(),
        b.chars().filter(|c| !c.is_whitespace()).collect(),
    );
    tok.max(chr)
}

/// Coordinate frame used for grounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpacePolicy {
    /// Both points compared in the normalized frame of the given size.
    Fixed { width: f64, height: f64 },
    /// Both points mapped back to the step's native pixel size.
    PerStep,
}

impl Default for SpacePolicy {
    fn default() -> Self {
        SpacePolicy::Fixed { width: COORD_MAX as f64, height: COORD_MAX as f64 }
    }
}

fn frame(policy: SpacePolicy, screen: (u32, u32), p: Point) -> ((f64, f64), (f64, f64)) {
    match policy {
        SpacePolicy::Fixed { width, height } => ((p.x as f64, p.y as f64), (width, height)),
        SpacePolicy::PerStep => {
            let (w, h) = (f64::from(screen.0), f64::from(screen.1));
            let scale = COORD_MAX as f64;
            ((p.x as f64 * w / scale, p.y as f64 * h / scale), (w, h))
        }
    }
}

/// Scores of one predicted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepScore {
    pub type_ok: bool,
    /// `Some` only for coordinate gold actions.
    pub ground_hit: Option<bool>,
    pub success: bool,
}

/// Type, grounding and success of one prediction against one gold step.
pub fn score_step(predicted: &str, gold: &UnifiedAction, screen: (u32, u32), policy: SpacePolicy) -> StepScore {
    let type_ok = type_match(predicted, gold);
    let shape = gold.kind.shape();
    let parsed = if type_ok { parse_action(predicted).ok() } else { None };
    let ground_hit = (shape == ParamShape::Point).then(|| {
        match (parsed.as_ref().and_then(|a| a.point), gold.point) {
            (Some(p), Some(g)) => {
                let (pp, space) = frame(policy, screen, p);
                let (gp, _) = frame(policy, screen, g);
                grounding_hit(pp, gp, space)
            }
            _ => false,
        }
    });
    let success = type_ok
        && match shape {
            ParamShape::None => true,
            ParamShape::Point => ground_hit == Some(true),
            ParamShape::Direction => {
                parsed.as_ref().and_then(|a| a.direction).is_some_and(|d| Some(d) == gold.direction)
            }
            ParamShape::Text => {
                let pt = parsed.as_ref().and_then(|a| a.text.as_deref());
                let gt = gold.text.as_deref().unwrap_or("");
                match (gold.kind, pt) {
                    (_, None) => false,
                    (ActionKind::Hotkey, Some(t)) => chord_key(t) == chord_key(gt),
                    (_, Some(t)) => similarity(t, gt) > SIMILARITY_THRESHOLD,
                }
            }
        };
    StepScore { type_ok, ground_hit, success }
}

/// Whether the prediction fully matches the gold step.
pub fn step_success(predicted: &str, gold: &UnifiedAction, space: (f64, f64)) -> bool {
    let policy = SpacePolicy::Fixed { width: space.0, height: space.1 };
    score_step(predicted, gold, (1, 1), policy).success
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub n_steps: usize,
    pub n_type: usize,
    pub n_ground_steps: usize,
    pub n_ground_hits: usize,
    pub n_success: usize,
}

impl Tally {
    fn add(&mut self, s: StepScore) {
        self.n_steps += 1;
        self.n_type += usize::from(s.type_ok);
        self.n_success += usize::from(s.success);
        if let Some(hit) = s.ground_hit {
            self.n_ground_steps += 1;
            self.n_ground_hits += usize::from(hit);
        }
    }

    pub fn merge(&mut self, o: &Tally) {
        self.n_steps += o.n_steps;
        self.n_type += o.n_type;
        self.n_ground_steps += o.n_ground_steps;
        self.n_ground_hits += o.n_ground_hits;
        self.n_success += o.n_success;
    }

    pub fn scores(&self) -> GroupScores {
        let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        GroupScores {
            type_acc: rate(self.n_type, self.n_steps),
            ground_acc: (self.n_ground_steps > 0).then(|| rate(self.n_ground_hits, self.n_ground_steps)),
            sr: rate(self.n_success, self.n_steps),
            n_steps: self.n_steps,
            n_ground_steps: self.n_ground_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub type_acc: f64,
    /// `None` when the group has no coordinate gold steps.
    pub ground_acc: Option<f64>,
    pub sr: f64,
    pub n_steps: usize,
    pub n_ground_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: BTreeMap<String, GroupScores>,
}

pub const ALL_GROUP: &str = "ALL";

/// Scores every gold step; steps without a prediction fail at every tier.
pub fn evaluate(
    predictions: &[PredictionRecord],
    gold: &[Episode],
    policy: SpacePolicy,
) -> Result<EvalReport, EvalError> {
    let mut by_step: HashMap<(&str, usize), &str> = HashMap::new();
    let known: HashSet<(&str, usize)> =
        gold.iter().flat_map(|e| e.steps.iter().map(move |s| (e.episode_id.as_str(), s.index))).collect();
    for p in predictions {
        let key = (p.episode_id.as_str(), p.step_index);
        if !known.contains(&key) {
            return Err(EvalError::DanglingPrediction { episode_id: p.episode_id.clone(), step_index: p.step_index });
        }
        if by_step.insert(key, p.predicted.as_str()).is_some() {
            return Err(EvalError::DuplicatePrediction { episode_id: p.episode_id.clone(), step_index: p.step_index });
        }
    }
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for ep in gold {
        let keys = [
            format!("source={}", ep.tag.source.name()),
            format!("platform={}", ep.tag.platform.name()),
            ALL_GROUP.to_string(),
        ];
        for step in &ep.steps {
            let predicted = by_step.get(&(ep.episode_id.as_str(), step.index)).copied().unwrap_or("");
            let s = score_step(predicted, &step.action, (step.screen_w, step.screen_h), policy);
            for k in &keys {
                tallies.entry(k.clone()).or_default().add(s);
            }
        }
    }
    Ok(EvalReport { groups: tallies.into_iter().map(|(k, t)| (k, t.scores())).collect() })
}

impl EvalReport {
    pub fn all(&self) -> Option<&GroupScores> {
        self.groups.get(ALL_GROUP)
    }

    /// Flat `(group, metric, value, n)` rows; undefined values print as `NA`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["group", "metric", "value", "n"])?;
        for (g, s) in &self.groups {
            let rows = [
                ("type_acc", Some(s.type_acc), s.n_steps),
                ("ground_acc", s.ground_acc, s.n_ground_steps),
                ("sr", Some(s.sr), s.n_steps),
            ];
            for (metric, value, n) in rows {
                let v = value.map_or_else(|| NA.to_string(), |v| format!("{v:.6}"));
                out.write_record([g.as_str(), metric, &v, &n.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Fills the attribute slot of a predicted kind with a fixed placeholder,
/// since the toy model predicts kinds only.
pub fn placeholder_action(kind: ActionKind) -> UnifiedAction {
    match kind.shape() {
        ParamShape::None => UnifiedAction::bare(kind),
        ParamShape::Point => UnifiedAction::at(kind, COORD_MAX / 2, COORD_MAX / 2),
        ParamShape::Direction => UnifiedAction::scroll(crate::action::Direction::Down),
        ParamShape::Text => UnifiedAction::with_text(kind, if kind == ActionKind::Hotkey { "ENTER" } else { "" }),
    }
}

/// One prediction per gold step from a toy model.
pub fn toy_predictions(model: &ToyModel, episodes: &[Episode]) -> Vec<PredictionRecord> {
    let d = model.feature_dim;
    episodes
        .iter()
        .flat_map(|ep| {
            ep.steps.iter().map(move |s| {
                let x = featurize_step(&ep.instruction, &ep.tag, s.index, d);
                let kind = ActionKind::from_index(model.predict(&x)).expect("class index in range");
                PredictionRecord {
                    episode_id: ep.episode_id.clone(),
                    step_index: s.index,
                    predicted: placeholder_action(kind).to_string(),
                }
            })
        })
        .collect()
}
