//! Screen rendering, the pure transition function, and `WorldInstance`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixture::Fixture;
use super::types::*;
use super::WorldError;

fn widget(id: impl Into<String>, kind: WidgetKind, label: impl Into<String>, r: (f64, f64, f64, f64)) -> Widget {
    Widget {
        id: id.into(),
        kind,
        label: label.into(),
        bounds: Rect::new(r.0, r.1, r.2, r.3),
        enabled: true,
        checked: None,
    }
}

fn button(id: &str, label: &str, r: (f64, f64, f64, f64)) -> Widget {
    widget(id, WidgetKind::Button, label, r)
}

fn row(i: usize) -> (f64, f64, f64, f64) {
    let y0 = 0.15 + i as f64 * 0.12;
    (0.05, y0, 0.95, y0 + 0.10)
}

const SAVE: (f64, f64, f64, f64) = (0.55, 0.85, 0.95, 0.95);
const CANCEL: (f64, f64, f64, f64) = (0.05, 0.85, 0.45, 0.95);

fn editor_widgets(screen: Screen) -> Vec<Widget> {
    let labels: [&str; 2] = match screen {
        Screen::ContactEditor => ["Name", "Phone"],
        Screen::AlarmEditor => ["Time", "Label"],
        _ => ["Title", "Body"],
    };
    let mut ws: Vec<Widget> = screen
        .text_fields()
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (field, label))| {
            let y0 = 0.15 + i as f64 * 0.15;
            widget(format!("editor.{field}"), WidgetKind::TextField, label, (0.05, y0, 0.95, y0 + 0.10))
        })
        .collect();
    ws.push(button("editor.save", "Save", SAVE));
    ws.push(button("editor.cancel", "Cancel", CANCEL));
    ws
}

fn clock_tabs() -> Vec<Widget> {
    vec![
        button("clock.tab.alarm", "Alarm", (0.0, 0.02, 0.33, 0.10)),
        button("clock.tab.timer", "Timer", (0.34, 0.02, 0.66, 0.10)),
        button("clock.tab.stopwatch", "Stopwatch", (0.67, 0.02, 1.0, 0.10)),
    ]
}

fn toggle(key: SettingKey, i: usize, data: &DeviceData) -> Widget {
    let mut w = widget(format!("toggle.{}", key.key()), WidgetKind::Toggle, key.label(), row(i));
    w.checked = Some(data.settings.get(key));
    w
}

/// Dialog buttons: (id, label, bounds). The correct dismissal's side varies by kind.
fn dialog_widgets(kind: ObstacleKind) -> Vec<Widget> {
    let (good, bad) = kind.buttons();
    let left = (0.10, 0.55, 0.45, 0.65);
    let right = (0.55, 0.55, 0.90, 0.65);
    let (good_r, bad_r) = match kind {
        ObstacleKind::PermissionDialog => (right, left),
        ObstacleKind::UpdatePrompt | ObstacleKind::DefaultAppPrompt => (left, right),
    };
    vec![button("dialog.dismiss", good, good_r), button("dialog.confirm", bad, bad_r)]
}

/// Widgets of the underlying screen, ignoring any obstacle.
fn screen_widgets(fixture: &Fixture, core: &UiCore) -> Vec<Widget> {
    let data = &core.data;
    match core.screen {
        Screen::Launcher => fixture
            .installed_apps
            .iter()
            .filter(|a| **a != App::Home)
            .map(|a| {
                let x0 = 0.04 + (a.index() - 1) as f64 * 0.24;
                button(&format!("launcher.{}", a.name().to_lowercase()), a.name(), (x0, 0.75, x0 + 0.20, 0.85))
            })
            .collect(),
        Screen::ContactList => {
            let mut ws = vec![
                button("contacts.search", "Search", (0.05, 0.02, 0.30, 0.10)),
                button("contacts.add", "Add contact", (0.70, 0.02, 0.95, 0.10)),
            ];
            let start = core.scroll as usize;
            for (i, name) in data.contacts.keys().skip(start).take(fixture.contact_page_size).enumerate() {
                ws.push(widget(format!("contacts.item.{name}"), WidgetKind::ListItem, name.clone(), row(i)));
            }
            ws
        }
        Screen::ContactEditor | Screen::AlarmEditor | Screen::NoteEditor => editor_widgets(core.screen),
        Screen::ContactDetail => vec![
            button("detail.call", "Call", (0.05, 0.40, 0.45, 0.50)),
            button("detail.delete", "Delete", (0.55, 0.40, 0.95, 0.50)),
        ],
        Screen::ContactConfirmDelete => vec![
            button("confirm.cancel", "Cancel", (0.10, 0.55, 0.45, 0.65)),
            button("confirm.delete", "Delete", (0.55, 0.55, 0.90, 0.65)),
        ],
        Screen::ClockTimer => {
            let mut ws = clock_tabs();
            ws.push(button("timer.start", "Start", (0.35, 0.60, 0.65, 0.70)));
            ws
        }
        Screen::ClockAlarms => {
            let mut ws = clock_tabs();
            for (i, time) in data.alarms.keys().take(5).enumerate() {
                ws.push(widget(format!("alarms.item.{time}"), WidgetKind::ListItem, time.clone(), row(i)));
            }
            ws.push(button("alarms.add", "Add alarm", (0.30, 0.85, 0.70, 0.95)));
            ws
        }
        Screen::SettingsMain => vec![
            widget("settings.network", WidgetKind::ListItem, "Network & internet", row(0)),
            widget("settings.devices", WidgetKind::ListItem, "Connected devices", row(1)),
            widget("settings.display", WidgetKind::ListItem, "Display", row(2)),
        ],
        Screen::SettingsNetwork => vec![toggle(SettingKey::Wifi, 0, data), toggle(SettingKey::AirplaneMode, 1, data)],
        Screen::SettingsDevices => vec![toggle(SettingKey::Bluetooth, 0, data)],
        Screen::SettingsDisplay => vec![toggle(SettingKey::DarkTheme, 0, data)],
        Screen::NoteList => {
            let mut ws = vec![button("notes.new", "New note", (0.70, 0.02, 0.95, 0.10))];
            for (i, title) in data.notes.keys().take(5).enumerate() {
                ws.push(widget(format!("notes.item.{title}"), WidgetKind::ListItem, title.clone(), row(i)));
            }
            ws
        }
    }
}

/// Renders the widget list for a core state. Dialog buttons come first; while a
/// dialog is up every other widget is disabled.
pub fn render(fixture: &Fixture, core: &UiCore) -> Vec<Widget> {
    let mut ws = screen_widgets(fixture, core);
    if let Some(kind) = core.obstacle {
        for w in &mut ws {
            w.enabled = false;
        }
        let mut dialog = dialog_widgets(kind);
        dialog.append(&mut ws);
        ws = dialog;
    }
    ws
}

pub fn to_state(fixture: &Fixture, core: UiCore, step_count: u32) -> GuiState {
    let widgets = render(fixture, &core);
    GuiState {
        app: core.screen.app(),
        screen: core.screen,
        widgets,
        text_buffers: core.text_buffers,
        focus: core.focus,
        selected: core.selected,
        scroll: core.scroll,
        obstacle: core.obstacle,
        data: core.data,
        step_count,
    }
}

fn go_to(core: &mut UiCore, screen: Screen) {
    core.screen = screen;
    core.text_buffers.clear();
    core.focus = None;
    core.scroll = 0;
    if !matches!(screen, Screen::ContactDetail | Screen::ContactConfirmDelete) {
        core.selected = None;
    }
}

fn parent(screen: Screen) -> Screen {
    match screen {
        Screen::Launcher
        | Screen::ContactList
        | Screen::ClockTimer
        | Screen::ClockAlarms
        | Screen::SettingsMain
        | Screen::NoteList => Screen::Launcher,
        Screen::ContactEditor | Screen::ContactDetail => Screen::ContactList,
        Screen::ContactConfirmDelete => Screen::ContactDetail,
        Screen::AlarmEditor => Screen::ClockAlarms,
        Screen::SettingsNetwork | Screen::SettingsDevices | Screen::SettingsDisplay => Screen::SettingsMain,
        Screen::NoteEditor => Screen::NoteList,
    }
}

fn max_scroll(fixture: &Fixture, core: &UiCore) -> u32 {
    core.data.contacts.len().saturating_sub(fixture.contact_page_size) as u32
}

fn click_widget(fixture: &Fixture, core: &mut UiCore, id: &str) {
    if let Some(app) = id.strip_prefix("launcher.") {
        if let Some(app) = App::from_name(app).filter(|a| fixture.is_installed(*a)) {
            go_to(core, app.root_screen());
        }
        return;
    }
    if let Some(name) = id.strip_prefix("contacts.item.") {
        let name = name.to_string();
        go_to(core, Screen::ContactDetail);
        core.selected = Some(name);
        return;
    }
    if let Some(field) = id.strip_prefix("editor.") {
        match field {
            "save" => save_editor(core),
            "cancel" => go_to(core, parent(core.screen)),
            f => core.focus = Some(f.to_string()),
        }
        return;
    }
    if let Some(key) = id.strip_prefix("toggle.") {
        if let Some(k) = SettingKey::from_key(key) {
            let v = core.data.settings.get(k);
            core.data.settings.set(k, !v);
        }
        return;
    }
    match id {
        "contacts.add" => go_to(core, Screen::ContactEditor),
        "detail.delete" => core.screen = Screen::ContactConfirmDelete,
        "confirm.cancel" => core.screen = Screen::ContactDetail,
        "confirm.delete" => {
            if let Some(name) = core.selected.take() {
                core.data.contacts.remove(&name);
            }
            go_to(core, Screen::ContactList);
        }
        "clock.tab.alarm" => go_to(core, Screen::ClockAlarms),
        "clock.tab.timer" => go_to(core, Screen::ClockTimer),
        "alarms.add" => go_to(core, Screen::AlarmEditor),
        "settings.network" => go_to(core, Screen::SettingsNetwork),
        "settings.devices" => go_to(core, Screen::SettingsDevices),
        "settings.display" => go_to(core, Screen::SettingsDisplay),
        "notes.new" => go_to(core, Screen::NoteEditor),
        // search, call, stopwatch, timer start and list rows without a detail view
        _ => {}
    }
}

fn save_editor(core: &mut UiCore) {
    let fields = core.screen.text_fields();
    let key = core.text_buffers.get(fields[0]).cloned().unwrap_or_default();
    if key.is_empty() {
        return;
    }
    let value = core.text_buffers.get(fields[1]).cloned().unwrap_or_default();
    match core.screen {
        Screen::ContactEditor => core.data.contacts.insert(key, value),
        Screen::AlarmEditor => core.data.alarms.insert(key, value),
        Screen::NoteEditor => core.data.notes.insert(key, value),
        _ => return,
    };
    go_to(core, parent(core.screen));
}

/// Deterministic transition, excluding exogenous obstacle spawns.
pub fn apply(fixture: &Fixture, core: &UiCore, action: &Action) -> UiCore {
    let mut next = core.clone();
    if let Some(kind) = core.obstacle {
        if action.kind == ActionKind::Click {
            let p = action.point.expect("validated click");
            let hit = dialog_widgets(kind).into_iter().find(|w| w.bounds.contains(p));
            match hit.as_ref().map(|w| w.id.as_str()) {
                Some("dialog.dismiss") => next.obstacle = None,
                Some("dialog.confirm") => {
                    next.obstacle = None;
                    go_to(&mut next, Screen::Launcher);
                }
                _ => {}
            }
        }
        return next;
    }
    match action.kind {
        ActionKind::Click => {
            let p = action.point.expect("validated click");
            let widgets = screen_widgets(fixture, core);
            if let Some(w) = widgets.iter().find(|w| w.enabled && w.bounds.contains(p)) {
                click_widget(fixture, &mut next, &w.id);
            }
        }
        ActionKind::Type => {
            if let Some(f) = core.focus.as_deref() {
                if core.screen.text_fields().contains(&f) {
                    next.text_buffers.insert(f.to_string(), action.content.clone().unwrap_or_default());
                }
            }
        }
        ActionKind::Scroll => {
            if core.screen == Screen::ContactList {
                let max = max_scroll(fixture, core);
                match action.direction {
                    Some(Direction::Down) => next.scroll = (core.scroll + 2).min(max),
                    Some(Direction::Up) => next.scroll = core.scroll.saturating_sub(2),
                    _ => {}
                }
            }
        }
        ActionKind::OpenApp => {
            let app = action.app_name.as_deref().and_then(App::from_name);
            if let Some(app) = app.filter(|a| *a != App::Home && fixture.is_installed(*a)) {
                go_to(&mut next, app.root_screen());
            }
        }
        ActionKind::PressHome => go_to(&mut next, Screen::Launcher),
        ActionKind::PressBack => {
            let keep = core.selected.clone();
            go_to(&mut next, parent(core.screen));
            if next.screen == Screen::ContactDetail {
                next.selected = keep;
            }
        }
        ActionKind::LongPress | ActionKind::Wait | ActionKind::Finished => {}
    }
    next
}

/// Task predicate over persistent data only.
pub fn is_success(fixture: &Fixture, task: &TaskSpec, data: &DeviceData) -> bool {
    let p = |k: &str| task.param(k).unwrap_or_default();
    let with_optional = |map: &std::collections::BTreeMap<String, String>, key: &str, opt: &str| {
        match (map.get(p(key)), task.param(opt)) {
            (Some(v), Some(want)) => v == want,
            (Some(_), None) => true,
            (None, _) => false,
        }
    };
    match task.template {
        Template::AddContact => with_optional(&data.contacts, "name", "phone"),
        Template::SetAlarm => with_optional(&data.alarms, "time", "label"),
        Template::WriteNote => data.notes.get(p("title")).is_some_and(|b| b == p("body")),
        Template::ToggleSetting => match (task.setting(), task.desired_toggle()) {
            (Some(k), Some(v)) => data.settings.get(k) == v,
            _ => false,
        },
        Template::DeleteContact => {
            let target = p("name");
            !data.contacts.contains_key(target)
                && fixture
                    .initial
                    .contacts
                    .keys()
                    .filter(|n| n.as_str() != target)
                    .all(|n| data.contacts.contains_key(n))
        }
    }
}

/// Sound pruning: true only when no action sequence can reach success.
pub fn is_dead_end(fixture: &Fixture, task: &TaskSpec, data: &DeviceData) -> bool {
    if is_success(fixture, task, data) {
        return false;
    }
    if !fixture.is_installed(task.template.target_app()) {
        return true;
    }
    if task.template == Template::DeleteContact {
        // removed fixture contacts cannot be re-typed: only task values are typeable
        let target = task.param("name").unwrap_or_default();
        let typeable = task.text_values();
        return fixture
            .initial
            .contacts
            .keys()
            .any(|n| n != target && !data.contacts.contains_key(n) && !typeable.contains(&n.as_str()));
    }
    false
}

fn push_unique(out: &mut Vec<Action>, a: Action) {
    if !out.contains(&a) {
        out.push(a);
    }
}

/// The policy's discrete candidate set for a state, in deterministic order.
pub fn enumerate_actions(fixture: &Fixture, state: &GuiState, task: &TaskSpec) -> Vec<Action> {
    candidate_actions(fixture, task, state.screen, state.obstacle, &state.widgets)
}

pub(crate) fn candidate_actions(
    fixture: &Fixture,
    task: &TaskSpec,
    screen: Screen,
    obstacle: Option<ObstacleKind>,
    widgets: &[Widget],
) -> Vec<Action> {
    let mut out = Vec::with_capacity(24);
    for w in widgets.iter().filter(|w| w.enabled) {
        push_unique(&mut out, Action::click_at(w.bounds.center()));
    }
    if obstacle.is_some() {
        out.push(Action::press_back());
        out.push(Action::wait());
        return out;
    }
    if !screen.text_fields().is_empty() {
        for v in task.text_values() {
            push_unique(&mut out, Action::type_text(v));
        }
        push_unique(&mut out, Action::type_text(task.distractor()));
    }
    for d in Direction::ALL {
        out.push(Action::scroll(d));
    }
    for app in &fixture.installed_apps {
        out.push(Action::open_app(app.name()));
    }
    out.push(Action::press_home());
    out.push(Action::press_back());
    out.push(Action::wait());
    out.push(Action::finished("done"));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: GuiState,
    pub terminated: bool,
}

/// One seeded episode of the simulated device.
#[derive(Clone, Debug)]
pub struct WorldInstance {
    pub task: TaskSpec,
    pub fixture: Arc<Fixture>,
    pub state: GuiState,
    pub rng_seed: u64,
    pub obstacle_prob: f64,
    pub done: bool,
    rng: ChaCha8Rng,
}

impl WorldInstance {
    pub fn new(fixture: Arc<Fixture>, task: TaskSpec, seed: u64, obstacle_prob: f64) -> Result<Self, WorldError> {
        fixture.check_task(&task)?;
        if !(0.0..=1.0).contains(&obstacle_prob) {
            return Err(WorldError::InvalidTask(format!("obstacle_prob {obstacle_prob} outside [0,1]")));
        }
        let state = to_state(&fixture, UiCore::home(fixture.initial.clone()), 0);
        Ok(Self {
            task,
            fixture,
            state,
            rng_seed: seed,
            obstacle_prob,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, WorldError> {
        if self.done {
            return Err(WorldError::SessionDone);
        }
        action.validate()?;
        let mut core = apply(&self.fixture, &self.state.core(), action);
        let step_count = self.state.step_count + 1;
        let terminated = action.kind == ActionKind::Finished || step_count >= self.task.max_steps;
        // two draws per step keep the stream aligned regardless of outcome
        let spawn: f64 = self.rng.gen();
        let kind = ObstacleKind::ALL[self.rng.gen_range(0..ObstacleKind::ALL.len())];
        if !terminated && core.obstacle.is_none() && spawn < self.obstacle_prob {
            core.obstacle = Some(kind);
        }
        self.state = to_state(&self.fixture, core, step_count);
        self.done = terminated;
        Ok(StepOutcome { state: self.state.clone(), terminated })
    }

    pub fn check_success(&self) -> bool {
        is_success(&self.fixture, &self.task, &self.state.data)
    }

    pub fn enumerate_actions(&self) -> Vec<Action> {
        enumerate_actions(&self.fixture, &self.state, &self.task)
    }
}
