//! Unified GUI action space.
//!
//! Seventeen canonical action kinds shared by mobile, web and desktop data,
//! grouped into a basic block and two platform-specific blocks. Coordinates
//! live in a normalized integer space of `[0, 1000]` on each axis.

mod normalize;
mod prompt;
mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize_raw_action, ActionMapper, NormalizeError, RawAction, Transform};
pub use prompt::{prompt_parts, render_system_prompt};
pub use wire::{parse_action, serialize_action};

/// Upper bound of the normalized coordinate space on both axes.
pub const COORD_MAX: i64 = 1000;

/// The 17 canonical action kinds, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    Complete,
    Impossible,
    Wait,
    LongPress,
    OpenApp,
    NavigateBack,
    NavigateHome,
    PressRecent,
    PressEnter,
    DoubleClick,
    RightClick,
    #[serde(rename = "MOVETO")]
    MoveTo,
    Hotkey,
    Copy,
}

/// Which attribute an action kind carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamShape {
    None,
    Point,
    Text,
    Direction,
}

impl ActionKind {
    pub const ALL: [ActionKind; 17] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::Complete,
        ActionKind::Impossible,
        ActionKind::Wait,
        ActionKind::LongPress,
        ActionKind::OpenApp,
        ActionKind::NavigateBack,
        ActionKind::NavigateHome,
        ActionKind::PressRecent,
        ActionKind::PressEnter,
        ActionKind::DoubleClick,
        ActionKind::RightClick,
        ActionKind::MoveTo,
        ActionKind::Hotkey,
        ActionKind::Copy,
    ];

    pub const COUNT: usize = 17;

    /// Zero-based position in table order; used as the class label.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Canonical upper-case token used in the wire format.
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "CLICK",
            ActionKind::Type => "TYPE",
            ActionKind::Scroll => "SCROLL",
            ActionKind::Complete => "COMPLETE",
            ActionKind::Impossible => "IMPOSSIBLE",
            ActionKind::Wait => "WAIT",
            ActionKind::LongPress => "LONG_PRESS",
            ActionKind::OpenApp => "OPEN_APP",
            ActionKind::NavigateBack => "NAVIGATE_BACK",
            ActionKind::NavigateHome => "NAVIGATE_HOME",
            ActionKind::PressRecent => "PRESS_RECENT",
            ActionKind::PressEnter => "PRESS_ENTER",
            ActionKind::DoubleClick => "DOUBLE_CLICK",
            ActionKind::RightClick => "RIGHT_CLICK",
            ActionKind::MoveTo => "MOVETO",
            ActionKind::Hotkey => "HOTKEY",
            ActionKind::Copy => "COPY",
        }
    }

    /// Case-sensitive lookup of the canonical token.
    pub fn from_name(token: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == token)
    }

    pub fn shape(self) -> ParamShape {
        match self {
            ActionKind::Click
            | ActionKind::LongPress
            | ActionKind::DoubleClick
            | ActionKind::RightClick
            | ActionKind::MoveTo => ParamShape::Point,
            ActionKind::Type | ActionKind::OpenApp | ActionKind::Hotkey | ActionKind::Copy => {
                ParamShape::Text
            }
            ActionKind::Scroll => ParamShape::Direction,
            _ => ParamShape::None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ActionKind::Complete | ActionKind::Impossible)
    }

    pub fn domain(self) -> ActionDomain {
        action_domain(self)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three blocks of the action table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionDomain {
    Basic,
    Mobile,
    WebDesktop,
}

/// Basic for table rows 1-6, mobile for 7-12, web & desktop for 13-17.
pub fn action_domain(kind: ActionKind) -> ActionDomain {
    match kind.index() {
        0..=5 => ActionDomain::Basic,
        6..=11 => ActionDomain::Mobile,
        _ => ActionDomain::WebDesktop,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Left => "LEFT",
            Direction::Right => "RIGHT",
        }
    }

    /// Case-insensitive, whitespace-trimmed.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UP" => Some(Direction::Up),
            "DOWN" => Some(Direction::Down),
            "LEFT" => Some(Direction::Left),
            "RIGHT" => Some(Direction::Right),
            _ => None,
        }
    }
}

/// A screen coordinate in normalized units. Stored wide so that
/// out-of-range values in raw data survive loading and can be rejected
/// by cleaning with a precise reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }

    pub fn in_range(&self) -> bool {
        (0..=COORD_MAX).contains(&self.x) && (0..=COORD_MAX).contains(&self.y)
    }
}

impl From<[i64; 2]> for Point {
    fn from(v: [i64; 2]) -> Self {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Why an action's attributes are unacceptable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamFault {
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("unexpected {0}")]
    Unexpected(&'static str),
    #[error("coordinate is not an integer: {0:?}")]
    NotInteger(String),
    #[error("coordinate ({x}, {y}) outside [0, 1000]")]
    OutOfRange { x: i64, y: i64 },
    #[error("bad syntax: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("empty action string")]
    EmptyInput,
    #[error("unknown action kind {0:?}")]
    UnknownActionKind(String),
    #[error("malformed parameters for {kind}: {fault}")]
    MalformedParameters { kind: ActionKind, fault: ParamFault },
}

/// One action in the unified space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnifiedAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl UnifiedAction {
    /// A parameterless action. Callers are expected to pick a kind whose
    /// shape is [`ParamShape::None`]; [`UnifiedAction::validate`] catches misuse.
    pub fn bare(kind: ActionKind) -> Self {
        UnifiedAction { kind, point: None, text: None, direction: None }
    }

    pub fn at(kind: ActionKind, x: i64, y: i64) -> Self {
        UnifiedAction { point: Some(Point::new(x, y)), ..Self::bare(kind) }
    }

    pub fn with_text(kind: ActionKind, text: impl Into<String>) -> Self {
        UnifiedAction { text: Some(text.into()), ..Self::bare(kind) }
    }

    pub fn scroll(direction: Direction) -> Self {
        UnifiedAction { direction: Some(direction), ..Self::bare(ActionKind::Scroll) }
    }

    /// Checks presence/absence of every attribute against the kind and the
    /// coordinate range.
    pub fn validate(&self) -> Result<(), ActionError> {
        let fault = |fault| ActionError::MalformedParameters { kind: self.kind, fault };
        let shape = self.kind.shape();
        match (shape == ParamShape::Point, self.point) {
            (true, None) => return Err(fault(ParamFault::Missing("point"))),
            (false, Some(_)) => return Err(fault(ParamFault::Unexpected("point"))),
            (true, Some(p)) if !p.in_range() => {
                return Err(fault(ParamFault::OutOfRange { x: p.x, y: p.y }))
            }
            _ => {}
        }
        match (shape == ParamShape::Text, &self.text) {
            (true, None) => return Err(fault(ParamFault::Missing("text"))),
            (false, Some(_)) => return Err(fault(ParamFault::Unexpected("text"))),
            _ => {}
        }
        match (shape == ParamShape::Direction, self.direction) {
            (true, None) => Err(fault(ParamFault::Missing("direction"))),
            (false, Some(_)) => Err(fault(ParamFault::Unexpected("direction"))),
            _ => Ok(()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// The form presented to models: enter presses become `HOTKEY [ENTER]`,
    /// since the prompt grammar has no separate enter action.
    pub fn to_prompt_form(&self) -> UnifiedAction {
        match self.kind {
            ActionKind::PressEnter => UnifiedAction::with_text(ActionKind::Hotkey, "ENTER"),
            _ => self.clone(),
        }
    }
}

impl fmt::Display for UnifiedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

/// Canonical storage form of a key chord: upper case, `+`-separated, order kept.
pub fn canonical_hotkey(keys: &str) -> String {
    keys.split('+')
        .map(|k| k.trim().to_uppercase())
        .filter(|k| !k.is_empty())
        .collect::<Vec<_>>()
        .join("+")
}

/// Order-insensitive comparison key for a chord: `ALT+CTRL` and `ctrl + alt`
/// yield the same key.
pub fn chord_key(keys: &str) -> Vec<String> {
    let mut parts: Vec<String> = keys
        .split('+')
        .map(|k| k.trim().to_uppercase())
        .filter(|k| !k.is_empty())
        .collect();
    parts.sort();
    parts
}
