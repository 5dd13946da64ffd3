//! Layered settings: built-in defaults, then the `--config` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const COMMANDS: [&str; 6] = ["gen-data", "cluster", "train", "bench", "mbrl", "report"];

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 2.
    Usage(String),
    /// Anything that goes wrong after the inputs validated. Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

/// Rejected arguments are usage errors; everything else is a runtime failure.
impl From<dyndecomp::Error> for CliError {
    fn from(e: dyndecomp::Error) -> Self {
        use dyndecomp::Error as E;
        match e {
            E::InvalidArgument(_) | E::Partition { .. } | E::Parse { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reclassify a failure as a usage error.
pub fn usage<T, E: fmt::Display>(r: std::result::Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

/// Flag values collected as `(dotted.path, value)` pairs.
#[derive(Default)]
pub struct Flags(Vec<(String, Value)>);

impl Flags {
    pub fn put<T: Serialize>(&mut self, key: impl Into<String>, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key.into(), serde_json::to_value(v).expect("flag values serialize")));
        }
        self
    }
}

/// The section of a config file that applies to `command`. A file whose
/// top level names any subcommand is read as per-command sections.
pub fn load_section(path: Option<&Path>, command: &str) -> CliResult<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = usage(std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())))?;
    let file: Value = usage(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display())))?;
    let Value::Object(obj) = file else {
        return Err(CliError::Usage(format!("{}: top level must be an object", path.display())));
    };
    if obj.keys().any(|k| COMMANDS.contains(&k.as_str())) {
        return Ok(obj.get(command).cloned().unwrap_or_else(|| Value::Object(Map::new())));
    }
    Ok(Value::Object(obj))
}

fn merge(base: &mut Value, over: Value, at: &str) -> CliResult<()> {
    let Value::Object(over) = over else {
        *base = over;
        return Ok(());
    };
    let Value::Object(base) = base else {
        return Err(CliError::Usage(format!("config key `{at}` is not a section")));
    };
    for (k, v) in over {
        let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
        match base.get_mut(&k) {
            Some(slot @ Value::Object(_)) => merge(slot, v, &path)?,
            Some(slot) => *slot = v,
            None => return Err(CliError::Usage(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

fn set(root: &mut Value, dotted: &str, value: Value) {
    let mut node = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        node = &mut node[*p];
    }
    node[parts[parts.len() - 1]] = value;
}

/// Defaults, overridden by the file section, overridden by flags.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(section: Value, flags: Flags) -> CliResult<T> {
    let mut v = serde_json::to_value(T::default())?;
    merge(&mut v, section, "")?;
    for (k, x) in flags.0 {
        set(&mut v, &k, x);
    }
    usage(serde_json::from_value(v).map_err(|e| format!("invalid configuration: {e}")))
}

/// One emitted file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FileEntry {
    pub fn new(path: &str, kind: &str) -> Self {
        Self {
            path: path.into(),
            kind: kind.into(),
            label: None,
            seed: None,
        }
    }

    pub fn run(path: String, kind: &str, label: &str, seed: u64) -> Self {
        Self {
            path,
            kind: kind.into(),
            label: Some(label.into()),
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub results: Value,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> CliResult<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config)?,
            files: Vec::new(),
            results: Value::Null,
        })
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join("manifest.json");
        let text = usage(std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display())))?;
        usage(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display())))
    }
}

pub fn out_dir(out: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = out
        .clone()
        .ok_or_else(|| CliError::Usage("an output directory is required (--out)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
