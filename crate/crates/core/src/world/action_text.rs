//! Parser for the textual action syntax produced by `Action`'s `Display` impl.
//!
//! ```text
//! click(start_box='(0.5,0.25)')   long_press(start_box='(x,y)')
//! type(content='text')            scroll(direction='down')
//! open_app(app_name='Clock')      press_home()  press_back()  wait()
//! finished(content='summary')
//! ```

use super::types::{Action, ActionKind, Direction, Point};
use super::WorldError;

fn malformed(text: &str, why: &str) -> WorldError {
    WorldError::MalformedAction(format!("cannot parse '{text}': {why}"))
}

/// Reads a single-quoted string starting at `s`, returning (value, rest).
fn quoted(s: &str) -> Option<(String, &str)> {
    let s = s.strip_prefix('\'')?;
    let mut out = String::new();
    let mut chars = s.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => {
                let (_, next) = chars.next()?;
                out.push(next);
            }
            '\'' => return Some((out, &s[i + 1..])),
            _ => out.push(c),
        }
    }
    None
}

pub fn parse_action(text: &str) -> Result<Action, WorldError> {
    let t = text.trim();
    let open = t.find('(').ok_or_else(|| malformed(t, "missing '('"))?;
    if !t.ends_with(')') {
        return Err(malformed(t, "missing ')'"));
    }
    let name = &t[..open];
    let inner = t[open + 1..t.len() - 1].trim();

    let arg = |key: &str| -> Result<String, WorldError> {
        let rest = inner
            .strip_prefix(key)
            .and_then(|r| r.trim_start().strip_prefix('='))
            .ok_or_else(|| malformed(t, &format!("expected argument '{key}'")))?;
        let (value, tail) = quoted(rest.trim_start()).ok_or_else(|| malformed(t, "unterminated string"))?;
        if !tail.trim().is_empty() {
            return Err(malformed(t, "trailing input"));
        }
        Ok(value)
    };
    let no_args = || {
        if inner.is_empty() {
            Ok(())
        } else {
            Err(malformed(t, "takes no arguments"))
        }
    };

    let action = match name {
        "click" | "long_press" => {
            let b = arg("start_box")?;
            let b = b
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| malformed(t, "start_box must be '(x,y)'"))?;
            let (xs, ys) = b.split_once(',').ok_or_else(|| malformed(t, "start_box needs two coordinates"))?;
            let x: f64 = xs.trim().parse().map_err(|_| malformed(t, "bad x coordinate"))?;
            let y: f64 = ys.trim().parse().map_err(|_| malformed(t, "bad y coordinate"))?;
            let mut a = Action::click_at(Point { x, y });
            if name == "long_press" {
                a.kind = ActionKind::LongPress;
            }
            a
        }
        "type" => Action::type_text(arg("content")?),
        "finished" => Action::finished(arg("content")?),
        "scroll" => {
            let d = arg("direction")?;
            Action::scroll(Direction::from_name(&d).ok_or_else(|| malformed(t, "unknown direction"))?)
        }
        "open_app" => Action::open_app(arg("app_name")?),
        "press_home" => {
            no_args()?;
            Action::press_home()
        }
        "press_back" => {
            no_args()?;
            Action::press_back()
        }
        "wait" => {
            no_args()?;
            Action::wait()
        }
        _ => return Err(malformed(t, "unknown action name")),
    };
    action.validate()?;
    Ok(action)
}
