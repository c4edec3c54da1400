//! The single-line action grammar used in prompts and model outputs:
//! `KIND <point>[[x, y]]</point>`, `KIND [payload]`, or a bare `KIND`.

use super::{ActionError, ActionKind, Direction, ParamFault, ParamShape, Point, UnifiedAction};

/// Renders the canonical single-line form of a valid action.
pub fn serialize_action(action: &UnifiedAction) -> String {
    let kind = action.kind.name();
    match action.kind.shape() {
        ParamShape::None => kind.to_string(),
        ParamShape::Point => {
            let p = action.point.unwrap_or(Point::new(0, 0));
            format!("{kind} <point>[[{}, {}]]</point>", p.x, p.y)
        }
        ParamShape::Text => format!("{kind} [{}]", action.text.as_deref().unwrap_or("")),
        ParamShape::Direction => {
            format!("{kind} [{}]", action.direction.map(Direction::name).unwrap_or(""))
        }
    }
}

/// Parses one action string. The kind token is matched case-sensitively.
pub fn parse_action(input: &str) -> Result<UnifiedAction, ActionError> {
    let s = input.trim();
    if s.is_empty() {
        return Err(ActionError::EmptyInput);
    }
    let (head, rest) = match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    };
    let kind = ActionKind::from_name(head)
        .ok_or_else(|| ActionError::UnknownActionKind(head.to_string()))?;
    let malformed = |fault| ActionError::MalformedParameters { kind, fault };

    match kind.shape() {
        ParamShape::None => {
            if rest.is_empty() {
                Ok(UnifiedAction::bare(kind))
            } else {
                Err(malformed(ParamFault::Unexpected("attribute")))
            }
        }
        ParamShape::Point => {
            let point = parse_point(rest).map_err(malformed)?;
            Ok(UnifiedAction { point: Some(point), ..UnifiedAction::bare(kind) })
        }
        ParamShape::Text => {
            let text = bracketed(rest).map_err(malformed)?;
            Ok(UnifiedAction::with_text(kind, text))
        }
        ParamShape::Direction => {
            let raw = bracketed(rest).map_err(malformed)?;
            let dir = Direction::parse(raw)
                .ok_or_else(|| malformed(ParamFault::Syntax(format!("bad direction {raw:?}"))))?;
            Ok(UnifiedAction { direction: Some(dir), ..UnifiedAction::bare(kind) })
        }
    }
}

fn bracketed(rest: &str) -> Result<&str, ParamFault> {
    if rest.is_empty() {
        return Err(ParamFault::Missing("bracketed payload"));
    }
    rest.strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| ParamFault::Syntax(format!("expected [payload], got {rest:?}")))
}

fn parse_point(rest: &str) -> Result<Point, ParamFault> {
    if rest.is_empty() {
        return Err(ParamFault::Missing("point"));
    }
    let syntax = || ParamFault::Syntax(format!("expected <point>[[x, y]]</point>, got {rest:?}"));
    let inner = rest
        .strip_prefix("<point>")
        .and_then(|r| r.strip_suffix("</point>"))
        .ok_or_else(syntax)?
        .trim();
    let inner = inner
        .strip_prefix("[[")
        .and_then(|r| r.strip_suffix("]]"))
        .ok_or_else(syntax)?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(syntax());
    }
    let coord = |s: &str| s.parse::<i64>().map_err(|_| ParamFault::NotInteger(s.to_string()));
    let point = Point::new(coord(parts[0])?, coord(parts[1])?);
    if !point.in_range() {
        return Err(ParamFault::OutOfRange { x: point.x, y: point.y });
    }
    Ok(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prompt_examples_parse() {
        assert_eq!(
            parse_action("CLICK <point>[[101, 872]]</point>").unwrap(),
            UnifiedAction::at(ActionKind::Click, 101, 872)
        );
        assert_eq!(
            parse_action("TYPE [Shanghai shopping mall]").unwrap(),
            UnifiedAction::with_text(ActionKind::Type, "Shanghai shopping mall")
        );
        assert_eq!(
            parse_action("HOTKEY [CTRL+ALT]").unwrap(),
            UnifiedAction::with_text(ActionKind::Hotkey, "CTRL+ALT")
        );
        assert_eq!(parse_action("COMPLETE").unwrap(), UnifiedAction::bare(ActionKind::Complete));
        assert_eq!(
            parse_action("  SCROLL [up]\n").unwrap(),
            UnifiedAction::scroll(Direction::Up)
        );
    }

    #[test]
    fn serializer_matches_prompt_format() {
        assert_eq!(serialize_action(&UnifiedAction::scroll(Direction::Up)), "SCROLL [UP]");
        assert_eq!(serialize_action(&UnifiedAction::bare(ActionKind::Wait)), "WAIT");
        assert_eq!(
            serialize_action(&UnifiedAction::at(ActionKind::LongPress, 272, 341)),
            "LONG_PRESS <point>[[272, 341]]</point>"
        );
        assert_eq!(
            serialize_action(&UnifiedAction::with_text(ActionKind::Copy, "Wednesday")),
            "COPY [Wednesday]"
        );
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_action("   "), Err(ActionError::EmptyInput));
        assert_eq!(parse_action("TAP [[5,5]]"), Err(ActionError::UnknownActionKind("TAP".into())));
        assert_eq!(parse_action("click <point>[[1, 2]]</point>"), Err(ActionError::UnknownActionKind("click".into())));
        let malformed = |s: &str| matches!(parse_action(s), Err(ActionError::MalformedParameters { .. }));
        assert!(malformed("CLICK"));
        assert!(malformed("CLICK <point>[[1.5, 2]]</point>"));
        assert!(malformed("CLICK <point>[[1, 2, 3]]</point>"));
        assert!(malformed("CLICK <point>[[1001, 2]]</point>"));
        assert!(malformed("CLICK <point>[[-1, 2]]</point>"));
        assert!(malformed("CLICK [[1, 2]]"));
        assert!(malformed("COMPLETE [now]"));
        assert!(malformed("TYPE hello"));
        assert!(malformed("SCROLL [SIDEWAYS]"));
        assert_eq!(
            parse_action("CLICK <point>[[1200, 50]]</point>"),
            Err(ActionError::MalformedParameters {
                kind: ActionKind::Click,
                fault: ParamFault::OutOfRange { x: 1200, y: 50 }
            })
        );
    }

    #[test]
    fn payload_may_contain_brackets() {
        let a = UnifiedAction::with_text(ActionKind::Type, "a [b] ]");
        assert_eq!(parse_action(&serialize_action(&a)).unwrap(), a);
    }

    pub(crate) fn arb_action() -> impl Strategy<Value = UnifiedAction> {
        let kind = prop::sample::select(ActionKind::ALL.to_vec());
        let dir = prop::sample::select(vec![Direction::Up, Direction::Down, Direction::Left, Direction::Right]);
        (kind, 0i64..=1000, 0i64..=1000, any::<String>(), dir).prop_map(|(kind, x, y, text, dir)| {
            match kind.shape() {
                ParamShape::None => UnifiedAction::bare(kind),
                ParamShape::Point => UnifiedAction::at(kind, x, y),
                ParamShape::Text => UnifiedAction::with_text(kind, text),
                ParamShape::Direction => UnifiedAction::scroll(dir),
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip(a in arb_action()) {
            prop_assert!(a.is_valid());
            prop_assert_eq!(parse_action(&serialize_action(&a)).unwrap(), a);
        }
    }
}
