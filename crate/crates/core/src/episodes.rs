//! Episode data model, JSONL ingestion, cleaning and held-out test carving.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionError, ActionKind, ParamFault, UnifiedAction};
use crate::seed::derive_rng;

/// Default number of held-out episodes per source.
pub const DEFAULT_TEST_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "AitW")]
    AitW,
    #[serde(rename = "GO")]
    Go,
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "GA-W")]
    GaW,
    #[serde(rename = "M2W")]
    M2w,
    #[serde(rename = "OA-W")]
    OaW,
    #[serde(rename = "OA-Mac")]
    OaMac,
    #[serde(rename = "OA-Win")]
    OaWin,
    #[serde(rename = "AS")]
    As,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl Source {
    pub const ALL: [Source; 11] = [
        Source::Ac,
        Source::AitW,
        Source::Go,
        Source::Ga,
        Source::GaW,
        Source::M2w,
        Source::OaW,
        Source::OaMac,
        Source::OaWin,
        Source::As,
        Source::Synth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Ac => "AC",
            Source::AitW => "AitW",
            Source::Go => "GO",
            Source::Ga => "GA",
            Source::GaW => "GA-W",
            Source::M2w => "M2W",
            Source::OaW => "OA-W",
            Source::OaMac => "OA-Mac",
            Source::OaWin => "OA-Win",
            Source::As => "AS",
            Source::Synth => "SYNTH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|src| src.name() == s)
    }

    /// Platforms a source can legitimately be tagged with.
    pub fn allows_platform(self, platform: Platform) -> bool {
        use Platform::*;
        match self {
            Source::Ac | Source::AitW | Source::Go => platform == Mobile,
            Source::Ga => matches!(platform, Web | Mobile),
            Source::GaW | Source::M2w | Source::OaW => platform == Web,
            Source::OaMac | Source::OaWin | Source::As => platform == Desktop,
            Source::Synth => true,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Platform {
    Mobile,
    Web,
    Desktop,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Mobile, Platform::Web, Platform::Desktop];

    pub fn name(self) -> &'static str {
        match self {
            Platform::Mobile => "MOBILE",
            Platform::Web => "WEB",
            Platform::Desktop => "DESKTOP",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Os {
    Android,
    Ubuntu,
    Macos,
    Windows,
    Na,
}

impl Os {
    pub fn name(self) -> &'static str {
        match self {
            Os::Android => "ANDROID",
            Os::Ubuntu => "UBUNTU",
            Os::Macos => "MACOS",
            Os::Windows => "WINDOWS",
            Os::Na => "NA",
        }
    }
}

impl fmt::Display for Os {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Marker for an undefined free-form tag field.
pub const NA: &str = "NA";

fn na() -> String {
    NA.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceTag {
    pub source: Source,
    pub platform: Platform,
    #[serde(default = "os_na")]
    pub os: Os,
    #[serde(default = "na")]
    pub device: String,
    #[serde(default = "na")]
    pub app_category: String,
}

fn os_na() -> Os {
    Os::Na
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub image_ref: String,
    pub screen_w: u32,
    pub screen_h: u32,
    pub action: UnifiedAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub instruction: String,
    pub tag: SourceTag,
    pub steps: Vec<Step>,
}

/// Closed set of reasons an episode (or a step) is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    EmptyInstruction,
    NoSteps,
    IndexGap,
    BadScreenSize,
    TerminalNotLast,
    PlatformMismatch,
    DuplicateId,
    MissingImage,
    ParameterOutOfRange,
    MalformedParameters,
    EmptyAfterCleaning,
    RedundantStep,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Malformed => "malformed record",
            RejectReason::EmptyInstruction => "empty instruction",
            RejectReason::NoSteps => "no steps",
            RejectReason::IndexGap => "step indices not contiguous",
            RejectReason::BadScreenSize => "non-positive screen size",
            RejectReason::TerminalNotLast => "terminal action not last",
            RejectReason::PlatformMismatch => "platform inconsistent with source",
            RejectReason::DuplicateId => "duplicate episode id",
            RejectReason::MissingImage => "missing image",
            RejectReason::ParameterOutOfRange => "parameter out of range",
            RejectReason::MalformedParameters => "malformed action parameters",
            RejectReason::EmptyAfterCleaning => "no steps left after cleaning",
            RejectReason::RedundantStep => "redundant repeated action",
        })
    }
}

impl Episode {
    /// Structural invariants checked at load time. Action parameter ranges
    /// are left to [`clean`].
    pub fn check_structure(&self) -> Result<(), RejectReason> {
        if self.instruction.trim().is_empty() {
            return Err(RejectReason::EmptyInstruction);
        }
        if self.steps.is_empty() {
            return Err(RejectReason::NoSteps);
        }
        if !self.tag.source.allows_platform(self.tag.platform) {
            return Err(RejectReason::PlatformMismatch);
        }
        let last = self.steps.len() - 1;
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i {
                return Err(RejectReason::IndexGap);
            }
            if step.screen_w == 0 || step.screen_h == 0 {
                return Err(RejectReason::BadScreenSize);
            }
            if step.action.kind.is_terminal() && i != last {
                return Err(RejectReason::TerminalNotLast);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One rejected record. Records that fail to parse carry only a line
/// number; all others carry their episode id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_index: Option<usize>,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Rejection {
    fn episode(id: &str, reason: RejectReason) -> Self {
        Rejection {
            episode_id: Some(id.to_string()),
            file: None,
            line: None,
            step_index: None,
            reason,
            detail: String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no valid episodes under {0}")]
    EmptyCorpus(PathBuf),
    #[error("need {need} episodes, have {have}")]
    InsufficientEpisodes { need: usize, have: usize },
    #[error("test carving expects a single source, found {0:?}")]
    MixedSources(Vec<Source>),
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub episodes: Vec<Episode>,
    pub rejections: Vec<Rejection>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EpisodeError + '_ {
    move |source| EpisodeError::Io { path: path.to_path_buf(), source }
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, EpisodeError> {
    let meta = std::fs::metadata(path).map_err(io_err(path))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err(path))? {
        let p = entry.map_err(io_err(path))?.path();
        if p.extension().is_some_and(|e| e == "jsonl") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every episode from a JSONL file, or from all `*.jsonl` files of a
/// directory in name order. Bad lines are reported, not fatal.
pub fn load_episodes(path: &Path) -> Result<LoadOutcome, EpisodeError> {
    let mut out = LoadOutcome::default();
    let mut seen = HashSet::new();
    for file in corpus_files(path)? {
        let reader = BufReader::new(File::open(&file).map_err(io_err(&file))?);
        let file_name = file.display().to_string();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(&file))?;
            if line.trim().is_empty() {
                continue;
            }
            let reject = |episode_id: Option<String>, reason, detail: String| Rejection {
                episode_id,
                file: Some(file_name.clone()),
                line: Some(i + 1),
                step_index: None,
                reason,
                detail,
            };
            let ep: Episode = match serde_json::from_str(&line) {
                Ok(ep) => ep,
                Err(e) => {
                    out.rejections.push(reject(None, RejectReason::Malformed, e.to_string()));
                    continue;
                }
            };
            if let Err(reason) = ep.check_structure() {
                out.rejections.push(reject(Some(ep.episode_id), reason, String::new()));
                continue;
            }
            if !seen.insert(ep.episode_id.clone()) {
                out.rejections.push(reject(Some(ep.episode_id), RejectReason::DuplicateId, String::new()));
                continue;
            }
            out.episodes.push(ep);
        }
    }
    if out.episodes.is_empty() {
        return Err(EpisodeError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(out)
}

/// Writes one JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<(), EpisodeError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_jsonl(io::BufWriter::new(f), episodes).map_err(io_err(path))
}

/// Decides whether a screenshot reference can be resolved.
pub trait ImageResolver {
    fn exists(&self, image_ref: &str) -> bool;
}

/// Treats every reference as present.
pub struct AssumePresent;

impl ImageResolver for AssumePresent {
    fn exists(&self, _image_ref: &str) -> bool {
        true
    }
}

/// Resolves references as files; relative paths are joined to `root`.
pub struct FsResolver {
    pub root: PathBuf,
}

impl ImageResolver for FsResolver {
    fn exists(&self, image_ref: &str) -> bool {
        let p = Path::new(image_ref);
        if p.is_absolute() {
            p.is_file()
        } else {
            self.root.join(p).is_file()
        }
    }
}

/// Resolves references against a fixed manifest of known images.
pub struct KnownImages(pub HashSet<String>);

impl ImageResolver for KnownImages {
    fn exists(&self, image_ref: &str) -> bool {
        self.0.contains(image_ref)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CleanOutcome {
    pub kept: Vec<Episode>,
    pub rejected: Vec<Rejection>,
    /// Steps dropped from kept episodes, one entry per dropped step.
    pub collapsed: Vec<Rejection>,
}

fn action_reason(err: &ActionError) -> RejectReason {
    match err {
        ActionError::MalformedParameters { fault: ParamFault::OutOfRange { .. }, .. } => {
            RejectReason::ParameterOutOfRange
        }
        _ => RejectReason::MalformedParameters,
    }
}

/// Drops episodes with unresolvable screenshots or invalid action
/// parameters, and collapses runs of identical adjacent actions down to
/// their first step.
pub fn clean(episodes: Vec<Episode>, images: &dyn ImageResolver) -> CleanOutcome {
    let mut out = CleanOutcome::default();
    'episodes: for mut ep in episodes {
        if let Err(reason) = ep.check_structure() {
            out.rejected.push(Rejection::episode(&ep.episode_id, reason));
            continue;
        }
        for step in &ep.steps {
            if !images.exists(&step.image_ref) {
                let mut r = Rejection::episode(&ep.episode_id, RejectReason::MissingImage);
                r.step_index = Some(step.index);
                r.detail = step.image_ref.clone();
                out.rejected.push(r);
                continue 'episodes;
            }
            if let Err(e) = step.action.validate() {
                let mut r = Rejection::episode(&ep.episode_id, action_reason(&e));
                r.step_index = Some(step.index);
                r.detail = e.to_string();
                out.rejected.push(r);
                continue 'episodes;
            }
        }
        let original = std::mem::take(&mut ep.steps);
        for step in original {
            if ep.steps.last().is_some_and(|prev: &Step| prev.action == step.action) {
                let mut r = Rejection::episode(&ep.episode_id, RejectReason::RedundantStep);
                r.step_index = Some(step.index);
                out.collapsed.push(r);
                continue;
            }
            ep.steps.push(step);
        }
        if ep.steps.is_empty() {
            out.rejected.push(Rejection::episode(&ep.episode_id, RejectReason::EmptyAfterCleaning));
            continue;
        }
        for (i, step) in ep.steps.iter_mut().enumerate() {
            step.index = i;
        }
        out.kept.push(ep);
    }
    out
}

/// Splits `n` test episodes off a single-source pool, stratified over the
/// quartiles of trajectory length. Both halves keep input order.
pub fn sample_test_set(
    episodes: Vec<Episode>,
    n: usize,
    seed: u64,
) -> Result<(Vec<Episode>, Vec<Episode>), EpisodeError> {
    let mut sources: Vec<Source> = episodes.iter().map(|e| e.tag.source).collect();
    sources.sort();
    sources.dedup();
    if sources.len() > 1 {
        return Err(EpisodeError::MixedSources(sources));
    }
    stratified_split(episodes, n, seed, "test-split")
}

/// Carves `n` test episodes from every group produced by `key`, each group
/// sampled as in [`sample_test_set`]. Groups are visited in key order.
pub fn carve_test_sets<K: Ord + fmt::Display>(
    episodes: Vec<Episode>,
    key: impl Fn(&Episode) -> K,
    n: usize,
    seed: u64,
) -> Result<(Vec<Episode>, Vec<Episode>), EpisodeError> {
    let mut groups: BTreeMap<K, Vec<Episode>> = BTreeMap::new();
    for ep in episodes {
        groups.entry(key(&ep)).or_default().push(ep);
    }
    let (mut test, mut train) = (Vec::new(), Vec::new());
    for (k, group) in groups {
        let (t, r) = stratified_split(group, n, seed, &format!("test-split/{k}"))?;
        test.extend(t);
        train.extend(r);
    }
    Ok((test, train))
}

fn stratified_split(
    episodes: Vec<Episode>,
    n: usize,
    seed: u64,
    label: &str,
) -> Result<(Vec<Episode>, Vec<Episode>), EpisodeError> {
    let total = episodes.len();
    if n > total {
        return Err(EpisodeError::InsufficientEpisodes { need: n, have: total });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        (episodes[a].len(), &episodes[a].episode_id).cmp(&(episodes[b].len(), &episodes[b].episode_id))
    });
    let mut strata: [Vec<usize>; 4] = Default::default();
    for (rank, idx) in order.into_iter().enumerate() {
        strata[rank * 4 / total.max(1)].push(idx);
    }

    // Largest-remainder allocation of n over the strata.
    let mut quota: Vec<usize> = strata.iter().map(|s| n * s.len() / total.max(1)).collect();
    let mut remainders: Vec<(usize, usize)> =
        strata.iter().enumerate().map(|(b, s)| (n * s.len() % total.max(1), b)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - quota.iter().sum::<usize>();
    for &(_, b) in remainders.iter().take(short) {
        quota[b] += 1;
    }

    let mut chosen = vec![false; total];
    for (b, stratum) in strata.iter_mut().enumerate() {
        let mut rng = derive_rng(seed, label, &[b as u64]);
        stratum.shuffle(&mut rng);
        for &idx in stratum.iter().take(quota[b]) {
            chosen[idx] = true;
        }
    }
    let (mut test, mut train) = (Vec::with_capacity(n), Vec::with_capacity(total - n));
    for (ep, pick) in episodes.into_iter().zip(chosen) {
        if pick {
            test.push(ep);
        } else {
            train.push(ep);
        }
    }
    Ok((test, train))
}

/// Steps whose gold action is a terminal kind; handy for label statistics.
pub fn terminal_steps(episodes: &[Episode]) -> usize {
    episodes
        .iter()
        .flat_map(|e| e.steps.iter())
        .filter(|s| matches!(s.action.kind, ActionKind::Complete | ActionKind::Impossible))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ActionKind, Direction};

    fn step(i: usize, action: UnifiedAction) -> Step {
        Step { index: i, image_ref: format!("img/{i}.png"), screen_w: 1080, screen_h: 1920, action }
    }

    fn episode(id: &str, actions: Vec<UnifiedAction>) -> Episode {
        Episode {
            episode_id: id.to_string(),
            instruction: "open the settings".into(),
            tag: SourceTag {
                source: Source::Ac,
                platform: Platform::Mobile,
                os: Os::Android,
                device: NA.into(),
                app_category: "Tools".into(),
            },
            steps: actions.into_iter().enumerate().map(|(i, a)| step(i, a)).collect(),
        }
    }

    fn click(x: i64, y: i64) -> UnifiedAction {
        UnifiedAction::at(ActionKind::Click, x, y)
    }

    #[test]
    fn structure_checks() {
        let ok = episode("a", vec![click(1, 1), UnifiedAction::bare(ActionKind::Complete)]);
        assert_eq!(ok.check_structure(), Ok(()));
        let bad = episode("b", vec![click(1, 1), UnifiedAction::bare(ActionKind::Complete), click(2, 2)]);
        assert_eq!(bad.check_structure(), Err(RejectReason::TerminalNotLast));
        assert_eq!(RejectReason::TerminalNotLast.to_string(), "terminal action not last");
        let mut gap = ok.clone();
        gap.steps[1].index = 2;
        assert_eq!(gap.check_structure(), Err(RejectReason::IndexGap));
        let mut web = ok.clone();
        web.tag.platform = Platform::Web;
        assert_eq!(web.check_structure(), Err(RejectReason::PlatformMismatch));
        assert_eq!(episode("e", vec![]).check_structure(), Err(RejectReason::NoSteps));
    }

    #[test]
    fn clean_rejects_missing_images() {
        let ep = episode("a", vec![click(1, 1), click(5, 5)]);
        let known = KnownImages(["img/0.png".to_string()].into_iter().collect());
        let out = clean(vec![ep], &known);
        assert!(out.kept.is_empty());
        assert_eq!(out.rejected[0].reason, RejectReason::MissingImage);
        assert_eq!(out.rejected[0].reason.to_string(), "missing image");
        assert_eq!(out.rejected[0].step_index, Some(1));
    }

    #[test]
    fn clean_rejects_out_of_range_points() {
        let out = clean(vec![episode("a", vec![click(1200, 50)])], &AssumePresent);
        assert!(out.kept.is_empty());
        assert_eq!(out.rejected[0].reason, RejectReason::ParameterOutOfRange);
        assert_eq!(out.rejected[0].reason.to_string(), "parameter out of range");
        let mut typ = UnifiedAction::bare(ActionKind::Type);
        typ.point = None;
        let out = clean(vec![episode("b", vec![typ])], &AssumePresent);
        assert_eq!(out.rejected[0].reason, RejectReason::MalformedParameters);
    }

    #[test]
    fn clean_collapses_adjacent_repeats() {
        let down = UnifiedAction::scroll(Direction::Down);
        let ep = episode("a", vec![click(1, 1), down.clone(), down.clone(), down.clone(), click(1, 1)]);
        let out = clean(vec![ep], &AssumePresent);
        let kept = &out.kept[0];
        let kinds: Vec<_> = kept.steps.iter().map(|s| s.action.clone()).collect();
        // Run-length dedup of adjacent identical (kind, params) pairs.
        assert_eq!(kinds, vec![click(1, 1), down, click(1, 1)]);
        assert_eq!(kept.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(kept.steps[1].image_ref, "img/1.png");
        assert_eq!(out.collapsed.len(), 2);
        assert_eq!(kept.check_structure(), Ok(()));
    }

    #[test]
    fn test_split_boundaries() {
        let eps: Vec<Episode> = (0..20)
            .map(|i| episode(&format!("e{i:02}"), (0..(i % 5 + 1)).map(|j| click(j, j)).collect()))
            .collect();
        let (test, train) = sample_test_set(eps.clone(), 20, 1).unwrap();
        assert_eq!(test.len(), 20);
        assert!(train.is_empty());
        let (test, train) = sample_test_set(eps.clone(), 0, 1).unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), 20);
        assert!(matches!(
            sample_test_set(eps.clone(), 21, 1),
            Err(EpisodeError::InsufficientEpisodes { need: 21, have: 20 })
        ));
        let mut mixed = eps;
        mixed[0].tag.source = Source::Go;
        assert!(matches!(sample_test_set(mixed, 2, 1), Err(EpisodeError::MixedSources(_))));
    }

    #[test]
    fn test_split_covers_length_quartiles() {
        let eps: Vec<Episode> = (0..400)
            .map(|i| episode(&format!("e{i:03}"), (0..(i / 100 + 1)).map(|j| click(j as i64, 0)).collect()))
            .collect();
        let (test, _) = sample_test_set(eps, 100, 3).unwrap();
        for len in 1..=4 {
            assert_eq!(test.iter().filter(|e| e.len() == len).count(), 25);
        }
    }
}
