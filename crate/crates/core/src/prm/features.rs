//! Fixed-dimension encoding of (task, state, action) in [0,1].
//!
//! Layout: a task block, a state block, then an action block starting at
//! `ACTION_OFFSET`. State-only features (used by the value model) are the
//! same vector with the action block zeroed.

use crate::world::{
    Action, ActionKind, App, Direction, GuiState, ObstacleKind, Screen, SettingKey, TaskSpec, Template, Widget,
    WidgetKind,
};

pub const FEATURIZER_VERSION: &str = "feat-v1";

/// Static widget labels the featurizer knows by name. Anything else (contact
/// names, alarm times, note titles) falls in a shared bucket.
pub const LABEL_VOCAB: [&str; 34] = [
    "Contacts",
    "Clock",
    "Settings",
    "Notes",
    "Search",
    "Add contact",
    "Name",
    "Phone",
    "Time",
    "Label",
    "Title",
    "Body",
    "Save",
    "Cancel",
    "Call",
    "Delete",
    "Alarm",
    "Timer",
    "Stopwatch",
    "Start",
    "Add alarm",
    "Network & internet",
    "Connected devices",
    "Display",
    "Wi-Fi",
    "Airplane mode",
    "Bluetooth",
    "Dark theme",
    "New note",
    "Allow",
    "Deny",
    "Later",
    "Update",
    "Set default",
];

const TASK_DIM: usize = 5 + 4 + 1 + 1 + 1;
const STATE_DIM: usize = 5 + 14 + 3 + 1 + 1 + 3 + 2 * 3 + 2 + 6 + 1;
const LABELS: usize = LABEL_VOCAB.len() + 1;
const CLICK_DIM: usize = 1 + 4 + LABELS + 1 + 1 + 1 + 1 + 1 + 2;
const TYPE_DIM: usize = 5;
const ACTION_DIM: usize = 9 + CLICK_DIM + TYPE_DIM + 4 + 7;

pub const ACTION_OFFSET: usize = TASK_DIM + STATE_DIM;
pub const FEATURE_DIM: usize = ACTION_OFFSET + ACTION_DIM;

struct Writer<'a> {
    out: &'a mut Vec<f64>,
}

impl Writer<'_> {
    fn flag(&mut self, b: bool) {
        self.out.push(if b { 1.0 } else { 0.0 });
    }

    fn value(&mut self, v: f64) {
        self.out.push(v.clamp(0.0, 1.0));
    }

    fn one_hot(&mut self, index: Option<usize>, n: usize) {
        for i in 0..n {
            self.flag(index == Some(i));
        }
    }
}

fn label_index(label: &str) -> usize {
    LABEL_VOCAB
        .iter()
        .position(|l| *l == label)
        .unwrap_or(LABELS - 1)
}

/// Whether the goal predicate already holds, judged from the visible data.
pub fn goal_met(task: &TaskSpec, state: &GuiState) -> bool {
    let data = &state.data;
    let p = |k: &str| task.param(k).unwrap_or_default();
    let keyed = |map: &std::collections::BTreeMap<String, String>, key: &str, opt: &str| match map.get(p(key)) {
        Some(v) => task.param(opt).is_none_or(|want| v == want),
        None => false,
    };
    match task.template {
        Template::AddContact => keyed(&data.contacts, "name", "phone"),
        Template::SetAlarm => keyed(&data.alarms, "time", "label"),
        Template::WriteNote => data.notes.get(p("title")).is_some_and(|b| b == p("body")),
        Template::ToggleSetting => match (task.setting(), task.desired_toggle()) {
            (Some(k), Some(v)) => data.settings.get(k) == v,
            _ => false,
        },
        Template::DeleteContact => !data.contacts.contains_key(p("name")),
    }
}

/// The goal's primary key exists but with the wrong secondary value.
fn entry_conflicts(task: &TaskSpec, state: &GuiState) -> bool {
    let data = &state.data;
    let check = |map: &std::collections::BTreeMap<String, String>, key: &str, opt: &str| {
        match (task.param(key).and_then(|k| map.get(k)), task.param(opt)) {
            (Some(v), Some(want)) => v != want,
            _ => false,
        }
    };
    match task.template {
        Template::AddContact => check(&data.contacts, "name", "phone"),
        Template::SetAlarm => check(&data.alarms, "time", "label"),
        Template::WriteNote => check(&data.notes, "title", "body"),
        _ => false,
    }
}

fn push_task(w: &mut Writer, task: &TaskSpec, state: &GuiState) {
    w.one_hot(Some(task.template.index()), 5);
    w.one_hot(task.setting().map(SettingKey::index), 4);
    w.flag(task.desired_toggle() == Some(true));
    w.flag(goal_met(task, state));
    w.flag(entry_conflicts(task, state));
}

fn push_state(w: &mut Writer, task: &TaskSpec, state: &GuiState) {
    w.one_hot(Some(state.app.index()), 5);
    w.one_hot(Some(state.screen.index()), 14);
    w.one_hot(state.obstacle.map(ObstacleKind::index), 3);
    w.flag(state.obstacle.is_some());
    w.value(state.step_count as f64 / task.max_steps.max(1) as f64);

    let fields = state.screen.text_fields();
    let focus_slot = state.focus.as_deref().and_then(|f| fields.iter().position(|x| *x == f));
    w.one_hot(Some(focus_slot.map_or(0, |s| s + 1)), 3);
    for slot in 0..2 {
        let field = fields.get(slot).copied();
        let buf = field.and_then(|f| state.text_buffers.get(f)).map(String::as_str).unwrap_or("");
        let target = field.and_then(|f| task.param(f));
        w.flag(field.is_some() && buf.is_empty());
        w.flag(target.is_some_and(|t| t == buf));
        w.flag(!buf.is_empty() && target != Some(buf));
    }
    for slot in 0..2 {
        w.flag(fields.get(slot).is_some_and(|f| task.param(f).is_some()));
    }

    // contact list position of the task's contact, if any
    let on_list = state.screen == Screen::ContactList;
    let rows: Vec<&Widget> = state.widgets.iter().filter(|x| x.kind == WidgetKind::ListItem && x.enabled).collect();
    let total = state.data.contacts.len();
    let shown = rows.len();
    let scroll = state.scroll as usize;
    let target_pos = task.param("name").and_then(|n| state.data.contacts.keys().position(|k| k == n));
    w.value(if on_list && total > 0 { scroll as f64 / total as f64 } else { 0.0 });
    w.flag(on_list && scroll + shown < total);
    w.flag(on_list && scroll > 0);
    w.flag(on_list && target_pos.is_some_and(|p| p >= scroll && p < scroll + shown));
    w.flag(on_list && target_pos.is_some_and(|p| p < scroll));
    w.flag(on_list && target_pos.is_some_and(|p| p >= scroll + shown));

    w.flag(state.selected.is_some() && state.selected.as_deref() == task.param("name"));
}

fn push_action(w: &mut Writer, task: &TaskSpec, state: &GuiState, action: &Action) {
    w.one_hot(Some(action.kind.index()), 9);

    // pointer target
    let hit = match action.kind {
        ActionKind::Click | ActionKind::LongPress => action.point.and_then(|p| state.hit_test(p)),
        _ => None,
    };
    let pointer = matches!(action.kind, ActionKind::Click | ActionKind::LongPress);
    w.flag(pointer && hit.is_none());
    w.one_hot(hit.map(|h| h.kind.index()), 4);
    w.one_hot(hit.map(|h| label_index(&h.label)), LABELS);
    w.flag(hit.is_some_and(|h| task.params.values().any(|v| *v == h.label)));
    let field = hit.and_then(|h| h.id.strip_prefix("editor.")).filter(|f| state.screen.text_fields().contains(f));
    w.flag(field.is_some() && field == state.focus.as_deref());
    w.flag(field.is_some_and(|f| {
        let buf = state.text_buffers.get(f).map(String::as_str).unwrap_or("");
        task.param(f).map_or(buf.is_empty(), |t| t == buf)
    }));
    let toggle = hit.and_then(|h| h.id.strip_prefix("toggle.")).and_then(SettingKey::from_key);
    w.flag(toggle.is_some() && toggle == task.setting());
    w.flag(hit.is_some_and(|h| h.checked.is_some() && h.checked == task.desired_toggle()));
    match (pointer, action.point) {
        (true, Some(p)) => {
            w.value(p.x);
            w.value(p.y);
        }
        _ => {
            w.value(0.0);
            w.value(0.0);
        }
    }

    // typed text
    let typed = action.content.as_deref().filter(|_| action.kind == ActionKind::Type);
    let slots = task.template.text_params();
    let focused_target = state.focus.as_deref().and_then(|f| task.param(f));
    w.flag(typed.is_some() && typed == focused_target);
    for slot in 0..2 {
        w.flag(typed.is_some() && typed == slots.get(slot).and_then(|k| task.param(k)));
    }
    w.flag(typed.is_some_and(|t| !task.text_values().contains(&t)));
    w.flag(typed.is_some() && typed == state.focus.as_deref().and_then(|f| state.text_buffers.get(f)).map(String::as_str));

    // scroll
    let dir = action.direction.filter(|_| action.kind == ActionKind::Scroll);
    w.one_hot(dir.map(Direction::index), 4);

    // open app
    let app = if action.kind == ActionKind::OpenApp {
        action.app_name.as_deref().and_then(App::from_name)
    } else {
        None
    };
    w.one_hot(app.map(App::index), 5);
    w.flag(app.is_some() && app == Some(task.template.target_app()));
    w.flag(app.is_some() && app == Some(state.app));
}

/// Encodes (task, state, action) into a `FEATURE_DIM` vector.
pub fn featurize(task: &TaskSpec, state: &GuiState, action: &Action) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let mut w = Writer { out: &mut out };
    push_task(&mut w, task, state);
    push_state(&mut w, task, state);
    debug_assert_eq!(w.out.len(), ACTION_OFFSET);
    push_action(&mut w, task, state, action);
    debug_assert_eq!(out.len(), FEATURE_DIM);
    out
}

/// Task and state features with the action block zeroed.
pub fn state_features(task: &TaskSpec, state: &GuiState) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let mut w = Writer { out: &mut out };
    push_task(&mut w, task, state);
    push_state(&mut w, task, state);
    out.resize(FEATURE_DIM, 0.0);
    out
}
