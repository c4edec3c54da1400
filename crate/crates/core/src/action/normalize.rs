//! Mapping of source-specific raw actions into the unified space.
//!
//! Rules come from a versioned plain-text table (see
//! `data/action_map.v1.txt`), one rule per line:
//! `source native_name canonical_kind transform`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{canonical_hotkey, ActionKind, Direction, ParamShape, Point, UnifiedAction, COORD_MAX};
use crate::episodes::Source;

static DEFAULT_MAP: &str = include_str!("../../data/action_map.v1.txt");
const SUPPORTED_VERSION: u32 = 1;

/// A native action record as found in a source dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub name: String,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    /// `[x1, y1, x2, y2]` in native pixels.
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub direction: Option<String>,
    #[serde(default)]
    pub key: Option<String>,
    /// Native screen size in pixels, needed by the pixel transforms.
    #[serde(default)]
    pub screen_w: u32,
    #[serde(default)]
    pub screen_h: u32,
}

impl RawAction {
    pub fn named(name: &str) -> Self {
        RawAction { name: name.to_string(), ..Default::default() }
    }

    pub fn at_px(name: &str, x: f64, y: f64, screen_w: u32, screen_h: u32) -> Self {
        RawAction { x: Some(x), y: Some(y), screen_w, screen_h, ..Self::named(name) }
    }

    pub fn with_text(name: &str, text: &str) -> Self {
        RawAction { text: Some(text.to_string()), ..Self::named(name) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    None,
    PointPx,
    PointUnit,
    PointNorm,
    BboxPx,
    Text,
    Direction,
    Key,
    KeyEnter,
    CopyCompound,
}

impl Transform {
    fn parse(id: &str) -> Option<Self> {
        Some(match id {
            "none" => Transform::None,
            "point_px" => Transform::PointPx,
            "point_unit" => Transform::PointUnit,
            "point_norm" => Transform::PointNorm,
            "bbox_px" => Transform::BboxPx,
            "text" => Transform::Text,
            "direction" => Transform::Direction,
            "key" => Transform::Key,
            "key_enter" => Transform::KeyEnter,
            "copy_compound" => Transform::CopyCompound,
            _ => return None,
        })
    }

    fn produces(self) -> ParamShape {
        match self {
            Transform::None => ParamShape::None,
            Transform::PointPx | Transform::PointUnit | Transform::PointNorm | Transform::BboxPx => {
                ParamShape::Point
            }
            Transform::Direction => ParamShape::Direction,
            Transform::Text | Transform::Key | Transform::KeyEnter | Transform::CopyCompound => {
                ParamShape::Text
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizeError {
    #[error("no mapping rule for native action {name:?} from {dataset}")]
    UnmappableAction { dataset: String, name: String },
    #[error("native action {name:?} lacks {param}")]
    MissingParameter { name: String, param: &'static str },
    #[error("{name:?} must be followed by a copy record")]
    DanglingCompound { name: String },
    #[error("mapping file line {line}: {detail}")]
    BadMappingFile { line: usize, detail: String },
    #[error("reading mapping file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rule {
    kind: ActionKind,
    transform: Transform,
}

/// A parsed mapping table. Lookup prefers a source-specific rule and falls
/// back to the `*` rules.
#[derive(Debug, Clone, Default)]
pub struct ActionMapper {
    specific: HashMap<(Source, String), Rule>,
    wildcard: HashMap<String, Rule>,
}

impl ActionMapper {
    /// The mapping table shipped with the crate.
    pub fn builtin() -> &'static ActionMapper {
        static MAPPER: OnceLock<ActionMapper> = OnceLock::new();
        MAPPER.get_or_init(|| ActionMapper::parse(DEFAULT_MAP).expect("built-in action map parses"))
    }

    pub fn load(path: &Path) -> Result<Self, NormalizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NormalizeError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, NormalizeError> {
        let mut mapper = ActionMapper::default();
        let mut saw_version = false;
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |detail: String| NormalizeError::BadMappingFile { line: line_no, detail };
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if !saw_version {
                match cols.as_slice() {
                    ["version", v] if v.parse::<u32>() == Ok(SUPPORTED_VERSION) => {
                        saw_version = true;
                        continue;
                    }
                    _ => return Err(bad(format!("expected `version {SUPPORTED_VERSION}` header"))),
                }
            }
            let [source, native, kind, transform] = cols.as_slice() else {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            };
            let kind = ActionKind::from_name(kind).ok_or_else(|| bad(format!("unknown kind {kind}")))?;
            let transform =
                Transform::parse(transform).ok_or_else(|| bad(format!("unknown transform {transform}")))?;
            if transform.produces() != kind.shape() {
                return Err(bad(format!("transform does not fit the attributes of {kind}")));
            }
            let rule = Rule { kind, transform };
            let native = native.to_ascii_lowercase();
            let dup = if *source == "*" {
                mapper.wildcard.insert(native, rule).is_some()
            } else {
                let src = Source::parse(source).ok_or_else(|| bad(format!("unknown source {source}")))?;
                mapper.specific.insert((src, native), rule).is_some()
            };
            if dup {
                return Err(bad("duplicate rule".to_string()));
            }
        }
        if !saw_version {
            return Err(NormalizeError::BadMappingFile { line: 0, detail: "empty mapping file".into() });
        }
        Ok(mapper)
    }

    fn rule(&self, source: Source, name: &str) -> Result<Rule, NormalizeError> {
        let key = name.to_ascii_lowercase();
        self.specific
            .get(&(source, key.clone()))
            .or_else(|| self.wildcard.get(&key))
            .copied()
            .ok_or_else(|| NormalizeError::UnmappableAction {
                dataset: source.name().to_string(),
                name: name.to_string(),
            })
    }

    /// Normalizes one self-contained raw record. Compound starters such as
    /// `select_from_to` need their follower and are rejected here; use
    /// [`ActionMapper::normalize_sequence`] for those.
    pub fn normalize(&self, source: Source, raw: &RawAction) -> Result<UnifiedAction, NormalizeError> {
        let rule = self.rule(source, &raw.name)?;
        if rule.transform == Transform::CopyCompound {
            return Err(NormalizeError::DanglingCompound { name: raw.name.clone() });
        }
        apply(rule, raw)
    }

    /// Normalizes a trajectory of raw records, collapsing compound
    /// sequences (`select_from_to` then `copy`) into a single action.
    pub fn normalize_sequence(
        &self,
        source: Source,
        raws: &[RawAction],
    ) -> Result<Vec<UnifiedAction>, NormalizeError> {
        let mut out = Vec::with_capacity(raws.len());
        let mut i = 0;
        while i < raws.len() {
            let raw = &raws[i];
            let rule = self.rule(source, &raw.name)?;
            if rule.transform == Transform::CopyCompound {
                let follower = raws
                    .get(i + 1)
                    .filter(|r| r.name.eq_ignore_ascii_case("copy"))
                    .ok_or_else(|| NormalizeError::DanglingCompound { name: raw.name.clone() })?;
                let text = follower
                    .text
                    .clone()
                    .or_else(|| raw.text.clone())
                    .ok_or(NormalizeError::MissingParameter { name: raw.name.clone(), param: "text" })?;
                out.push(UnifiedAction::with_text(rule.kind, text));
                i += 2;
            } else {
                out.push(apply(rule, raw)?);
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Normalizes one raw record with the built-in mapping table.
pub fn normalize_raw_action(raw: &RawAction, source: Source) -> Result<UnifiedAction, NormalizeError> {
    ActionMapper::builtin().normalize(source, raw)
}

fn scale(v: f64, extent: f64) -> i64 {
    let scaled = (v / extent * COORD_MAX as f64).round();
    (scaled.clamp(0.0, COORD_MAX as f64)) as i64
}

fn apply(rule: Rule, raw: &RawAction) -> Result<UnifiedAction, NormalizeError> {
    let missing = |param| NormalizeError::MissingParameter { name: raw.name.clone(), param };
    let xy = || Ok::<_, NormalizeError>((raw.x.ok_or(missing("x"))?, raw.y.ok_or(missing("y"))?));
    let screen = || {
        if raw.screen_w == 0 || raw.screen_h == 0 {
            Err(missing("screen size"))
        } else {
            Ok((f64::from(raw.screen_w), f64::from(raw.screen_h)))
        }
    };
    let with_point = |p: Point| UnifiedAction { point: Some(p), ..UnifiedAction::bare(rule.kind) };

    Ok(match rule.transform {
        Transform::None => UnifiedAction::bare(rule.kind),
        Transform::PointPx => {
            let (x, y) = xy()?;
            let (w, h) = screen()?;
            with_point(Point::new(scale(x, w), scale(y, h)))
        }
        Transform::PointUnit => {
            let (x, y) = xy()?;
            with_point(Point::new(scale(x, 1.0), scale(y, 1.0)))
        }
        Transform::PointNorm => {
            let (x, y) = xy()?;
            with_point(Point::new(scale(x, COORD_MAX as f64), scale(y, COORD_MAX as f64)))
        }
        Transform::BboxPx => {
            let [x1, y1, x2, y2] = raw.bbox.ok_or(missing("bbox"))?;
            let (w, h) = screen()?;
            with_point(Point::new(scale((x1 + x2) / 2.0, w), scale((y1 + y2) / 2.0, h)))
        }
        Transform::Text => UnifiedAction::with_text(rule.kind, raw.text.clone().ok_or(missing("text"))?),
        Transform::Direction => {
            let d = raw.direction.as_deref().ok_or(missing("direction"))?;
            let dir = Direction::parse(d).ok_or(missing("a recognised direction"))?;
            UnifiedAction::scroll(dir)
        }
        Transform::Key => {
            let keys = raw.key.as_deref().or(raw.text.as_deref()).ok_or(missing("key"))?;
            UnifiedAction::with_text(rule.kind, canonical_hotkey(keys))
        }
        Transform::KeyEnter => UnifiedAction::with_text(rule.kind, "ENTER"),
        Transform::CopyCompound => unreachable!("compound rules are expanded by the caller"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_then_copy_collapses() {
        let raws = vec![RawAction::named("select_from_to"), RawAction::with_text("copy", "Wednesday")];
        let out = ActionMapper::builtin().normalize_sequence(Source::OaW, &raws).unwrap();
        assert_eq!(out, vec![UnifiedAction::with_text(ActionKind::Copy, "Wednesday")]);
    }

    #[test]
    fn dangling_select_is_rejected() {
        let raws = vec![RawAction::named("select_from_to"), RawAction::named("wait")];
        let err = ActionMapper::builtin().normalize_sequence(Source::OaW, &raws).unwrap_err();
        assert!(matches!(err, NormalizeError::DanglingCompound { .. }));
    }

    #[test]
    fn enter_and_button_presses_become_hotkeys() {
        assert_eq!(
            normalize_raw_action(&RawAction::named("press_enter"), Source::Ac).unwrap(),
            UnifiedAction::with_text(ActionKind::Hotkey, "ENTER")
        );
        let button = RawAction { key: Some("esc".into()), ..RawAction::named("press_button") };
        assert_eq!(
            normalize_raw_action(&button, Source::Go).unwrap(),
            UnifiedAction::with_text(ActionKind::Hotkey, "ESC")
        );
    }

    #[test]
    fn pixel_click_scales_to_normalized_space() {
        let raw = RawAction::at_px("click", 540.0, 960.0, 1080, 1920);
        let a = normalize_raw_action(&raw, Source::Ac).unwrap();
        // round(1000 * 540 / 1080), round(1000 * 960 / 1920)
        assert_eq!(a, UnifiedAction::at(ActionKind::Click, 500, 500));
        let off_screen = RawAction::at_px("click", 2000.0, -4.0, 1080, 1920);
        assert_eq!(normalize_raw_action(&off_screen, Source::Ac).unwrap().point, Some(Point::new(1000, 0)));
    }

    #[test]
    fn bbox_uses_centre() {
        let raw = RawAction { bbox: Some([100.0, 100.0, 300.0, 200.0]), screen_w: 1000, screen_h: 500, ..RawAction::named("click") };
        let a = normalize_raw_action(&raw, Source::M2w).unwrap();
        assert_eq!(a.point, Some(Point::new(200, 300)));
    }

    #[test]
    fn source_specific_rules_win_and_unknowns_fail() {
        let tap = RawAction { x: Some(0.25), y: Some(0.75), ..RawAction::named("tap") };
        assert_eq!(
            normalize_raw_action(&tap, Source::AitW).unwrap(),
            UnifiedAction::at(ActionKind::Click, 250, 750)
        );
        let err = normalize_raw_action(&RawAction::named("teleport"), Source::Ac).unwrap_err();
        assert!(matches!(err, NormalizeError::UnmappableAction { .. }));
        let err = normalize_raw_action(&RawAction::named("click"), Source::Ac).unwrap_err();
        assert!(matches!(err, NormalizeError::MissingParameter { .. }));
    }

    #[test]
    fn mapping_file_validation() {
        assert!(ActionMapper::parse("AC click CLICK point_px").is_err());
        assert!(ActionMapper::parse("version 2\n").is_err());
        assert!(ActionMapper::parse("version 1\nAC click TYPE point_px").is_err());
        assert!(ActionMapper::parse("version 1\nAC click CLICK warp").is_err());
        assert!(ActionMapper::parse("version 1\nXX click CLICK point_px").is_err());
        let m = ActionMapper::parse("version 1 # header\n* poke CLICK point_norm\n").unwrap();
        let raw = RawAction { x: Some(12.4), y: Some(999.6), ..RawAction::named("POKE") };
        assert_eq!(m.normalize(Source::Go, &raw).unwrap(), UnifiedAction::at(ActionKind::Click, 12, 1000));
    }

    #[test]
    fn every_builtin_rule_yields_valid_actions() {
        let m = ActionMapper::builtin();
        let raw = RawAction {
            name: String::new(),
            x: Some(10.0),
            y: Some(20.0),
            bbox: Some([0.0, 0.0, 10.0, 10.0]),
            text: Some("hello".into()),
            direction: Some("down".into()),
            key: Some("ctrl+c".into()),
            screen_w: 100,
            screen_h: 100,
        };
        for ((src, name), _) in m.specific.iter() {
            let r = RawAction { name: name.clone(), ..raw.clone() };
            let a = m.normalize(*src, &r).unwrap();
            assert!(a.is_valid(), "{src:?} {name}");
        }
    }
}
