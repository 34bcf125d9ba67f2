//! Fixture definitions and the key-value text config they load from.
//!
//! Schema (one `key = value` per line, `#` starts a comment):
//!
//! | key                 | value                                        | repeatable |
//! |---------------------|----------------------------------------------|------------|
//! | `fixture_version`   | opaque version id (required)                 | no         |
//! | `installed_apps`    | comma list of Contacts, Clock, Settings, Notes | no       |
//! | `contact_page_size` | visible rows in the contact list (>= 1)      | no         |
//! | `contact`           | `Name \| phone`                              | yes        |
//! | `alarm`             | `HH:MM \| label`                             | yes        |
//! | `note`              | `Title \| body`                              | yes        |
//! | `setting.<key>`     | `on` / `off`; key in wifi, bluetooth, airplane_mode, dark_theme | no |
//! | `task`              | `id \| Template \| k=v \| k=v ...`           | yes        |
//! | `max_steps`         | default step cap for tasks in this file      | no         |

use std::collections::BTreeMap;
use std::path::Path;

use super::types::{App, DeviceData, SettingKey, TaskSpec, Template, DEFAULT_MAX_STEPS};
use super::WorldError;

pub const DEFAULT_FIXTURE_VERSION: &str = "minigui-v1";

pub const DEFAULT_FIXTURE_TEXT: &str = "\
# MiniGUI default fixture
fixture_version = minigui-v1
installed_apps = Contacts, Clock, Settings, Notes
contact_page_size = 4
contact = Alice Park | 555-0101
contact = Bob Stone | 555-0102
contact = Carol White | 555-0103
contact = David Chen | 555-0104
contact = Emma Brown | 555-0105
contact = Frank Moore | 555-0106
contact = Grace Hall | 555-0107
contact = Henry Ford | 555-0108
alarm = 06:30 | Gym
note = Groceries | milk and eggs
setting.wifi = off
setting.bluetooth = on
setting.airplane_mode = off
setting.dark_theme = off
";

/// The standard task bank, in the same config syntax (append to a fixture).
pub const DEFAULT_TASK_BANK: &str = "\
task = add-01 | AddContact | name=John
task = add-02 | AddContact | name=Maria Lopez | phone=555-0142
task = add-03 | AddContact | name=Ken Adams
task = add-04 | AddContact | name=Lucy Gray | phone=555-0177
task = add-05 | AddContact | name=Omar Diaz | phone=555-0190
task = add-06 | AddContact | name=Nina Patel
task = add-07 | AddContact | name=Ivan Petrov | phone=555-0123
task = add-08 | AddContact | name=Zoe Clark
task = del-01 | DeleteContact | name=Bob Stone
task = del-02 | DeleteContact | name=Henry Ford
task = del-03 | DeleteContact | name=Emma Brown
task = del-04 | DeleteContact | name=Alice Park
task = del-05 | DeleteContact | name=Grace Hall
task = del-06 | DeleteContact | name=David Chen
task = del-07 | DeleteContact | name=Frank Moore
task = del-08 | DeleteContact | name=Carol White
task = alarm-01 | SetAlarm | time=07:00
task = alarm-02 | SetAlarm | time=07:30 | label=Work
task = alarm-03 | SetAlarm | time=05:45 | label=Run
task = alarm-04 | SetAlarm | time=08:15
task = alarm-05 | SetAlarm | time=21:00 | label=Meds
task = alarm-06 | SetAlarm | time=06:00
task = alarm-07 | SetAlarm | time=10:30 | label=Call mom
task = alarm-08 | SetAlarm | time=23:15
task = toggle-01 | ToggleSetting | setting=wifi | value=on
task = toggle-02 | ToggleSetting | setting=bluetooth | value=off
task = toggle-03 | ToggleSetting | setting=airplane_mode | value=on
task = toggle-04 | ToggleSetting | setting=dark_theme | value=on
task = note-01 | WriteNote | title=Shopping | body=bread and jam
task = note-02 | WriteNote | title=Ideas | body=build a boat
task = note-03 | WriteNote | title=Trip | body=pack the tent
task = note-04 | WriteNote | title=Books | body=read Dune
task = note-05 | WriteNote | title=Gifts | body=socks for Dad
task = note-06 | WriteNote | title=Garden | body=water the roses
task = note-07 | WriteNote | title=Work | body=send the report
task = note-08 | WriteNote | title=Recipes | body=lemon cake
";

/// Static description of the simulated device.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub version: String,
    pub installed_apps: Vec<App>,
    pub contact_page_size: usize,
    pub initial: DeviceData,
}

impl Default for Fixture {
    fn default() -> Self {
        FixtureConfig::parse(DEFAULT_FIXTURE_TEXT)
            .expect("built-in fixture parses")
            .fixture
    }
}

impl Fixture {
    pub fn is_installed(&self, app: App) -> bool {
        app == App::Home || self.installed_apps.contains(&app)
    }

    /// Checks that a task is meaningful on this fixture (beyond `TaskSpec::validate`).
    pub fn check_task(&self, task: &TaskSpec) -> Result<(), WorldError> {
        task.validate()?;
        if task.template == Template::DeleteContact {
            let name = task.param("name").unwrap_or_default();
            if !self.initial.contacts.contains_key(name) {
                return Err(WorldError::InvalidTask(format!(
                    "DeleteContact target '{name}' is not a fixture contact"
                )));
            }
        }
        Ok(())
    }

    pub fn without_app(&self, app: App) -> Fixture {
        let mut f = self.clone();
        f.installed_apps.retain(|a| *a != app);
        f
    }
}

/// A fixture plus an optional task bank, as loaded from a config file.
#[derive(Clone, Debug)]
pub struct FixtureConfig {
    pub fixture: Fixture,
    pub tasks: Vec<TaskSpec>,
}

impl Default for FixtureConfig {
    /// Default fixture with the standard task bank.
    fn default() -> Self {
        Self::parse(&format!("{DEFAULT_FIXTURE_TEXT}{DEFAULT_TASK_BANK}")).expect("built-in task bank parses")
    }
}

fn pair(line_no: usize, v: &str) -> Result<(String, String), WorldError> {
    let (a, b) = v
        .split_once('|')
        .ok_or_else(|| WorldError::Config { line: line_no, message: "expected 'a | b'".into() })?;
    Ok((a.trim().to_string(), b.trim().to_string()))
}

fn on_off(line_no: usize, v: &str) -> Result<bool, WorldError> {
    match v.trim() {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(WorldError::Config { line: line_no, message: format!("expected on/off, got '{other}'") }),
    }
}

impl FixtureConfig {
    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Config { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut version = None;
        let mut installed = vec![App::Contacts, App::Clock, App::Settings, App::Notes];
        let mut page = 4usize;
        let mut data = DeviceData::default();
        let mut raw_tasks = Vec::new();
        let mut max_steps = DEFAULT_MAX_STEPS;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| WorldError::Config { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            match key {
                "fixture_version" => version = Some(value.to_string()),
                "installed_apps" => {
                    installed = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            App::from_name(s)
                                .filter(|a| *a != App::Home)
                                .ok_or_else(|| err(format!("unknown app '{}'", s.trim())))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "contact_page_size" => {
                    page = value.parse().ok().filter(|p| *p >= 1).ok_or_else(|| err("page size must be >= 1".into()))?;
                }
                "max_steps" => {
                    max_steps = value.parse().ok().filter(|p| *p >= 1).ok_or_else(|| err("max_steps must be >= 1".into()))?;
                }
                "contact" => {
                    let (n, p) = pair(line_no, value)?;
                    data.contacts.insert(n, p);
                }
                "alarm" => {
                    let (t, l) = pair(line_no, value)?;
                    data.alarms.insert(t, l);
                }
                "note" => {
                    let (t, b) = pair(line_no, value)?;
                    data.notes.insert(t, b);
                }
                "task" => raw_tasks.push((line_no, value.to_string())),
                _ if key.starts_with("setting.") => {
                    let sk = SettingKey::from_key(&key["setting.".len()..])
                        .ok_or_else(|| err(format!("unknown setting '{key}'")))?;
                    data.settings.set(sk, on_off(line_no, value)?);
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }

        let fixture = Fixture {
            version: version.ok_or(WorldError::Config { line: 0, message: "missing fixture_version".into() })?,
            installed_apps: installed,
            contact_page_size: page,
            initial: data,
        };
        let mut tasks = Vec::with_capacity(raw_tasks.len());
        for (line_no, value) in raw_tasks {
            let mut task = parse_task_line(line_no, &value)?;
            task.max_steps = max_steps;
            fixture.check_task(&task).map_err(|e| WorldError::Config { line: line_no, message: e.to_string() })?;
            tasks.push(task);
        }
        Ok(Self { fixture, tasks })
    }
}

fn parse_task_line(line_no: usize, value: &str) -> Result<TaskSpec, WorldError> {
    let err = |message: String| WorldError::Config { line: line_no, message };
    let mut parts = value.split('|').map(str::trim);
    let id = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| err("task needs an id".into()))?;
    let tname = parts.next().ok_or_else(|| err("task needs a template".into()))?;
    let template = Template::from_name(tname).ok_or_else(|| err(format!("unknown template '{tname}'")))?;
    let mut params = BTreeMap::new();
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad param '{kv}'")))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    TaskSpec::new(id, template, params).map_err(|e| err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixture_parses() {
        let f = Fixture::default();
        assert_eq!(f.version, DEFAULT_FIXTURE_VERSION);
        assert_eq!(f.initial.contacts.len(), 8);
        assert!(f.initial.settings.bluetooth);
        assert!(!f.initial.settings.wifi);
    }

    #[test]
    fn tasks_load_with_validation() {
        let text = format!(
            "{DEFAULT_FIXTURE_TEXT}task = t1 | AddContact | name=John | phone=555\ntask = t2 | ToggleSetting | setting=wifi | value=on\n"
        );
        let cfg = FixtureConfig::parse(&text).unwrap();
        assert_eq!(cfg.tasks.len(), 2);
        assert_eq!(cfg.tasks[0].instruction, "Add a contact named John with phone number 555");

        let bad = format!("{DEFAULT_FIXTURE_TEXT}task = t3 | WriteNote | title=x\n");
        let e = FixtureConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("body"), "{e}");

        let bad = format!("{DEFAULT_FIXTURE_TEXT}task = t4 | DeleteContact | name=Nobody\n");
        assert!(FixtureConfig::parse(&bad).is_err());
    }

    #[test]
    fn reports_line_numbers() {
        let e = FixtureConfig::parse("fixture_version = x\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, WorldError::Config { line: 2, .. }));
    }
}
