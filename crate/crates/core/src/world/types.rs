//! Domain types for the simulated GUI world.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Default episode length cap.
pub const DEFAULT_MAX_STEPS: u32 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum App {
    Home,
    Contacts,
    Clock,
    Settings,
    Notes,
}

impl App {
    pub const ALL: [App; 5] = [App::Home, App::Contacts, App::Clock, App::Settings, App::Notes];

    pub fn name(self) -> &'static str {
        match self {
            App::Home => "Home",
            App::Contacts => "Contacts",
            App::Clock => "Clock",
            App::Settings => "Settings",
            App::Notes => "Notes",
        }
    }

    /// Case-insensitive lookup by display name.
    pub fn from_name(name: &str) -> Option<App> {
        App::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(name.trim()))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Screen shown when the app is launched.
    pub fn root_screen(self) -> Screen {
        match self {
            App::Home => Screen::Launcher,
            App::Contacts => Screen::ContactList,
            App::Clock => Screen::ClockTimer,
            App::Settings => Screen::SettingsMain,
            App::Notes => Screen::NoteList,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Screen {
    Launcher,
    ContactList,
    ContactEditor,
    ContactDetail,
    ContactConfirmDelete,
    ClockTimer,
    ClockAlarms,
    AlarmEditor,
    SettingsMain,
    SettingsNetwork,
    SettingsDevices,
    SettingsDisplay,
    NoteList,
    NoteEditor,
}

impl Screen {
    pub const ALL: [Screen; 14] = [
        Screen::Launcher,
        Screen::ContactList,
        Screen::ContactEditor,
        Screen::ContactDetail,
        Screen::ContactConfirmDelete,
        Screen::ClockTimer,
        Screen::ClockAlarms,
        Screen::AlarmEditor,
        Screen::SettingsMain,
        Screen::SettingsNetwork,
        Screen::SettingsDevices,
        Screen::SettingsDisplay,
        Screen::NoteList,
        Screen::NoteEditor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn app(self) -> App {
        match self {
            Screen::Launcher => App::Home,
            Screen::ContactList
            | Screen::ContactEditor
            | Screen::ContactDetail
            | Screen::ContactConfirmDelete => App::Contacts,
            Screen::ClockTimer | Screen::ClockAlarms | Screen::AlarmEditor => App::Clock,
            Screen::SettingsMain
            | Screen::SettingsNetwork
            | Screen::SettingsDevices
            | Screen::SettingsDisplay => App::Settings,
            Screen::NoteList | Screen::NoteEditor => App::Notes,
        }
    }

    /// Text-field ids of editor screens, in layout order.
    pub fn text_fields(self) -> &'static [&'static str] {
        match self {
            Screen::ContactEditor => &["name", "phone"],
            Screen::AlarmEditor => &["time", "label"],
            Screen::NoteEditor => &["title", "body"],
            _ => &[],
        }
    }
}

/// Modal dialogs that interrupt the agent. Each has exactly one correct dismissal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObstacleKind {
    PermissionDialog,
    UpdatePrompt,
    DefaultAppPrompt,
}

impl ObstacleKind {
    pub const ALL: [ObstacleKind; 3] = [
        ObstacleKind::PermissionDialog,
        ObstacleKind::UpdatePrompt,
        ObstacleKind::DefaultAppPrompt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// (correct dismissal label, harmful confirm label)
    pub fn buttons(self) -> (&'static str, &'static str) {
        match self {
            ObstacleKind::PermissionDialog => ("Allow", "Deny"),
            ObstacleKind::UpdatePrompt => ("Later", "Update"),
            ObstacleKind::DefaultAppPrompt => ("Cancel", "Set default"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WidgetKind {
    Button,
    TextField,
    Toggle,
    ListItem,
}

impl WidgetKind {
    pub const ALL: [WidgetKind; 4] = [
        WidgetKind::Button,
        WidgetKind::TextField,
        WidgetKind::Toggle,
        WidgetKind::ListItem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Axis-aligned rectangle in normalized screen coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.x1)
            && in_unit(self.y0)
            && in_unit(self.y1)
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn center(&self) -> Point {
        Point {
            x: (self.x0 + self.x1) / 2.0,
            y: (self.y0 + self.y1) / 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    pub kind: WidgetKind,
    pub label: String,
    pub bounds: Rect,
    pub enabled: bool,
    /// Switch position for toggles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingKey {
    Wifi,
    Bluetooth,
    AirplaneMode,
    DarkTheme,
}

impl SettingKey {
    pub const ALL: [SettingKey; 4] = [
        SettingKey::Wifi,
        SettingKey::Bluetooth,
        SettingKey::AirplaneMode,
        SettingKey::DarkTheme,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SettingKey::Wifi => "wifi",
            SettingKey::Bluetooth => "bluetooth",
            SettingKey::AirplaneMode => "airplane_mode",
            SettingKey::DarkTheme => "dark_theme",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SettingKey::Wifi => "Wi-Fi",
            SettingKey::Bluetooth => "Bluetooth",
            SettingKey::AirplaneMode => "Airplane mode",
            SettingKey::DarkTheme => "Dark theme",
        }
    }

    pub fn from_key(key: &str) -> Option<SettingKey> {
        SettingKey::ALL.into_iter().find(|s| s.key() == key.trim())
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Settings sub-page hosting the toggle.
    pub fn page(self) -> Screen {
        match self {
            SettingKey::Wifi | SettingKey::AirplaneMode => Screen::SettingsNetwork,
            SettingKey::Bluetooth => Screen::SettingsDevices,
            SettingKey::DarkTheme => Screen::SettingsDisplay,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Settings {
    pub wifi: bool,
    pub bluetooth: bool,
    pub airplane_mode: bool,
    pub dark_theme: bool,
}

impl Settings {
    pub fn get(&self, key: SettingKey) -> bool {
        match key {
            SettingKey::Wifi => self.wifi,
            SettingKey::Bluetooth => self.bluetooth,
            SettingKey::AirplaneMode => self.airplane_mode,
            SettingKey::DarkTheme => self.dark_theme,
        }
    }

    pub fn set(&mut self, key: SettingKey, value: bool) {
        match key {
            SettingKey::Wifi => self.wifi = value,
            SettingKey::Bluetooth => self.bluetooth = value,
            SettingKey::AirplaneMode => self.airplane_mode = value,
            SettingKey::DarkTheme => self.dark_theme = value,
        }
    }
}

/// Persistent per-device application data.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceData {
    /// name -> phone
    pub contacts: BTreeMap<String, String>,
    /// time -> label
    pub alarms: BTreeMap<String, String>,
    /// title -> body
    pub notes: BTreeMap<String, String>,
    pub settings: Settings,
}

/// Everything that determines the future of an episode except the step counter.
/// Widgets are a pure rendering of this core.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UiCore {
    pub screen: Screen,
    pub text_buffers: BTreeMap<String, String>,
    pub focus: Option<String>,
    pub selected: Option<String>,
    pub scroll: u32,
    pub obstacle: Option<ObstacleKind>,
    pub data: DeviceData,
}

impl UiCore {
    pub fn home(data: DeviceData) -> Self {
        Self {
            screen: Screen::Launcher,
            text_buffers: BTreeMap::new(),
            focus: None,
            selected: None,
            scroll: 0,
            obstacle: None,
            data,
        }
    }

    pub fn app(&self) -> App {
        self.screen.app()
    }
}

/// Full observable environment state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuiState {
    pub app: App,
    pub screen: Screen,
    pub widgets: Vec<Widget>,
    pub text_buffers: BTreeMap<String, String>,
    pub focus: Option<String>,
    pub selected: Option<String>,
    pub scroll: u32,
    pub obstacle: Option<ObstacleKind>,
    pub data: DeviceData,
    pub step_count: u32,
}

impl GuiState {
    pub fn core(&self) -> UiCore {
        UiCore {
            screen: self.screen,
            text_buffers: self.text_buffers.clone(),
            focus: self.focus.clone(),
            selected: self.selected.clone(),
            scroll: self.scroll,
            obstacle: self.obstacle,
            data: self.data.clone(),
        }
    }

    /// Canonical byte-stable encoding (compact JSON with ordered maps).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("GuiState serialization is infallible")
    }

    pub fn widget(&self, id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == id)
    }

    /// First enabled widget whose bounds contain `p`.
    pub fn hit_test(&self, p: Point) -> Option<&Widget> {
        self.widgets
            .iter()
            .find(|w| w.enabled && w.bounds.contains(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Template {
    AddContact,
    DeleteContact,
    SetAlarm,
    ToggleSetting,
    WriteNote,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::AddContact,
        Template::DeleteContact,
        Template::SetAlarm,
        Template::ToggleSetting,
        Template::WriteNote,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::AddContact => "AddContact",
            Template::DeleteContact => "DeleteContact",
            Template::SetAlarm => "SetAlarm",
            Template::ToggleSetting => "ToggleSetting",
            Template::WriteNote => "WriteNote",
        }
    }

    pub fn from_name(name: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == name.trim())
    }

    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            Template::AddContact => &["name"],
            Template::DeleteContact => &["name"],
            Template::SetAlarm => &["time"],
            Template::ToggleSetting => &["setting", "value"],
            Template::WriteNote => &["title", "body"],
        }
    }

    /// Params whose values the agent may have to type, in editor field order.
    pub fn text_params(self) -> &'static [&'static str] {
        match self {
            Template::AddContact => &["name", "phone"],
            Template::SetAlarm => &["time", "label"],
            Template::WriteNote => &["title", "body"],
            Template::DeleteContact | Template::ToggleSetting => &[],
        }
    }

    pub fn target_app(self) -> App {
        match self {
            Template::AddContact | Template::DeleteContact => App::Contacts,
            Template::SetAlarm => App::Clock,
            Template::ToggleSetting => App::Settings,
            Template::WriteNote => App::Notes,
        }
    }

    fn distractors(self) -> &'static [&'static str] {
        match self {
            Template::AddContact => &["Sam Rivera", "Chris Wong", "Pat Kim"],
            Template::DeleteContact => &["Unknown caller"],
            Template::SetAlarm => &["09:45", "13:15", "22:00"],
            Template::ToggleSetting => &["on and off"],
            Template::WriteNote => &["Reminder", "Todo later"],
        }
    }
}

/// A parameterized goal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub template: Template,
    pub params: BTreeMap<String, String>,
    pub max_steps: u32,
}

impl TaskSpec {
    /// Builds a task with a generated instruction and validates it.
    pub fn new<I, K, V>(task_id: &str, template: Template, params: I) -> Result<Self, WorldError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let params: BTreeMap<String, String> = params
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .collect();
        let mut task = TaskSpec {
            task_id: task_id.to_string(),
            instruction: String::new(),
            template,
            params,
            max_steps: DEFAULT_MAX_STEPS,
        };
        task.validate()?;
        task.instruction = task.render_instruction();
        Ok(task)
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for key in self.template.required_params() {
            match self.params.get(*key) {
                Some(v) if !v.trim().is_empty() => {}
                _ => {
                    return Err(WorldError::MissingParam {
                        template: self.template.name(),
                        param: (*key).to_string(),
                    })
                }
            }
        }
        if self.max_steps == 0 {
            return Err(WorldError::InvalidTask("max_steps must be >= 1".into()));
        }
        if self.template == Template::ToggleSetting {
            let setting = self.param("setting").unwrap_or_default();
            if SettingKey::from_key(setting).is_none() {
                return Err(WorldError::InvalidTask(format!("unknown setting '{setting}'")));
            }
            if self.desired_toggle().is_none() {
                return Err(WorldError::InvalidTask(
                    "toggle value must be 'on' or 'off'".into(),
                ));
            }
        }
        Ok(())
    }

    fn render_instruction(&self) -> String {
        let p = |k: &str| self.param(k).unwrap_or_default();
        match self.template {
            Template::AddContact => match self.param("phone") {
                Some(phone) => format!("Add a contact named {} with phone number {}", p("name"), phone),
                None => format!("Add a contact named {}", p("name")),
            },
            Template::DeleteContact => format!("Delete the contact {}", p("name")),
            Template::SetAlarm => match self.param("label") {
                Some(label) => format!("Set an alarm for {} labeled {}", p("time"), label),
                None => format!("Set an alarm for {}", p("time")),
            },
            Template::ToggleSetting => {
                let label = SettingKey::from_key(p("setting")).map_or("?", |s| s.label());
                format!("Turn {} {}", label, p("value"))
            }
            Template::WriteNote => format!("Write a note titled {} saying {}", p("title"), p("body")),
        }
    }

    /// Values the agent may type for this task, in slot order.
    pub fn text_values(&self) -> Vec<&str> {
        self.template
            .text_params()
            .iter()
            .filter_map(|k| self.param(k))
            .collect()
    }

    /// A plausible but wrong text value, fixed per task.
    pub fn distractor(&self) -> &'static str {
        let pool = self.template.distractors();
        let start = (fnv1a(self.task_id.as_bytes()) % pool.len() as u64) as usize;
        let values = self.text_values();
        (0..pool.len())
            .map(|i| pool[(start + i) % pool.len()])
            .find(|d| !values.contains(d))
            .unwrap_or("zzz")
    }

    pub fn setting(&self) -> Option<SettingKey> {
        self.param("setting").and_then(SettingKey::from_key)
    }

    pub fn desired_toggle(&self) -> Option<bool> {
        match self.param("value").map(str::trim) {
            Some("on") => Some(true),
            Some("off") => Some(false),
            _ => None,
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.name() == s.trim())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Click,
    LongPress,
    Type,
    Scroll,
    OpenApp,
    PressHome,
    PressBack,
    Wait,
    Finished,
}

impl ActionKind {
    pub const ALL: [ActionKind; 9] = [
        ActionKind::Click,
        ActionKind::LongPress,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::OpenApp,
        ActionKind::PressHome,
        ActionKind::PressBack,
        ActionKind::Wait,
        ActionKind::Finished,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn takes_text(self) -> bool {
        matches!(self, ActionKind::Type | ActionKind::Finished)
    }
}

/// One agent action with exactly the arguments its kind requires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_name: Option<String>,
}

// Points are validated finite, so bitwise equality is a total equivalence.
impl Eq for Action {}

impl Hash for Action {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state);
        if let Some(p) = self.point {
            p.x.to_bits().hash(state);
            p.y.to_bits().hash(state);
        }
        self.content.hash(state);
        self.direction.hash(state);
        self.app_name.hash(state);
    }
}

impl Action {
    fn bare(kind: ActionKind) -> Self {
        Self {
            kind,
            point: None,
            content: None,
            direction: None,
            app_name: None,
        }
    }

    pub fn click(x: f64, y: f64) -> Self {
        Self {
            point: Some(Point { x, y }),
            ..Self::bare(ActionKind::Click)
        }
    }

    pub fn click_at(p: Point) -> Self {
        Self::click(p.x, p.y)
    }

    pub fn long_press(x: f64, y: f64) -> Self {
        Self {
            point: Some(Point { x, y }),
            ..Self::bare(ActionKind::LongPress)
        }
    }

    pub fn type_text(content: impl Into<String>) -> Self {
        Self {
            content: Some(content.into()),
            ..Self::bare(ActionKind::Type)
        }
    }

    pub fn scroll(direction: Direction) -> Self {
        Self {
            direction: Some(direction),
            ..Self::bare(ActionKind::Scroll)
        }
    }

    pub fn open_app(name: impl Into<String>) -> Self {
        Self {
            app_name: Some(name.into()),
            ..Self::bare(ActionKind::OpenApp)
        }
    }

    pub fn press_home() -> Self {
        Self::bare(ActionKind::PressHome)
    }

    pub fn press_back() -> Self {
        Self::bare(ActionKind::PressBack)
    }

    pub fn wait() -> Self {
        Self::bare(ActionKind::Wait)
    }

    pub fn finished(content: impl Into<String>) -> Self {
        Self {
            content: Some(content.into()),
            ..Self::bare(ActionKind::Finished)
        }
    }

    /// Checks that exactly the arguments required by `kind` are present.
    pub fn validate(&self) -> Result<(), WorldError> {
        let needs_point = matches!(self.kind, ActionKind::Click | ActionKind::LongPress);
        let needs_content = self.kind.takes_text();
        let needs_dir = self.kind == ActionKind::Scroll;
        let needs_app = self.kind == ActionKind::OpenApp;
        let fail = |msg: &str| Err(WorldError::MalformedAction(format!("{:?}: {msg}", self.kind)));
        if needs_point != self.point.is_some() {
            return fail("point argument mismatch");
        }
        if needs_content != self.content.is_some() {
            return fail("content argument mismatch");
        }
        if needs_dir != self.direction.is_some() {
            return fail("direction argument mismatch");
        }
        if needs_app != self.app_name.is_some() {
            return fail("app_name argument mismatch");
        }
        if let Some(p) = self.point {
            if !(p.x.is_finite() && p.y.is_finite()) || !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return fail("point outside the unit square");
            }
        }
        Ok(())
    }
}

impl fmt::Display for Action {
    /// Renders the textual action syntax, e.g. `click(start_box='(0.5,0.25)')`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('\'', "\\'");
        match self.kind {
            ActionKind::Click | ActionKind::LongPress => {
                let name = if self.kind == ActionKind::Click { "click" } else { "long_press" };
                match self.point {
                    Some(p) => write!(f, "{name}(start_box='({},{})')", p.x, p.y),
                    None => write!(f, "{name}()"),
                }
            }
            ActionKind::Type => write!(f, "type(content='{}')", esc(self.content.as_deref().unwrap_or(""))),
            ActionKind::Finished => {
                write!(f, "finished(content='{}')", esc(self.content.as_deref().unwrap_or("")))
            }
            ActionKind::Scroll => write!(
                f,
                "scroll(direction='{}')",
                self.direction.map_or("", |d| d.name())
            ),
            ActionKind::OpenApp => write!(f, "open_app(app_name='{}')", esc(self.app_name.as_deref().unwrap_or(""))),
            ActionKind::PressHome => write!(f, "press_home()"),
            ActionKind::PressBack => write!(f, "press_back()"),
            ActionKind::Wait => write!(f, "wait()"),
        }
    }
}
