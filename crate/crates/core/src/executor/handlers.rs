//! Native handlers served by the builtin-test runtime host.

use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use serde_json::{Map, Value};

use crate::grid::{self, GridImage};
use crate::invocation::{strip_data_prefix, Output, DATA_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinHandler {
    /// Returns the parameters object as JSON.
    Echo,
    /// Sleeps for `ms` milliseconds.
    SleepMs,
    /// Returns how many times this host has run it.
    Counter,
    /// Always fails with `message`.
    Raise,
    MockFlag,
    MockCalibrate,
    MockTclean,
    MockWsclean,
    /// Blurs `file` and returns the grid itself.
    MockBlur,
}

impl BuiltinHandler {
    pub const ALL: [BuiltinHandler; 9] = [
        BuiltinHandler::Echo,
        BuiltinHandler::SleepMs,
        BuiltinHandler::Counter,
        BuiltinHandler::Raise,
        BuiltinHandler::MockFlag,
        BuiltinHandler::MockCalibrate,
        BuiltinHandler::MockTclean,
        BuiltinHandler::MockWsclean,
        BuiltinHandler::MockBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinHandler::Echo => "echo",
            BuiltinHandler::SleepMs => "sleep-ms",
            BuiltinHandler::Counter => "counter",
            BuiltinHandler::Raise => "raise",
            BuiltinHandler::MockFlag => "mock-flag",
            BuiltinHandler::MockCalibrate => "mock-calibrate",
            BuiltinHandler::MockTclean => "mock-tclean",
            BuiltinHandler::MockWsclean => "mock-wsclean",
            BuiltinHandler::MockBlur => "mock-blur",
        }
    }

    /// Maps a code path to a handler by its file stem, so `tclean.py`,
    /// `builtin:mock-tclean` and `mock-tclean` all name the mock tclean.
    pub fn resolve(code_path: &str) -> Option<Self> {
        let path = code_path.strip_prefix("builtin:").unwrap_or(code_path);
        let stem = Path::new(path).file_stem()?.to_str()?;
        BuiltinHandler::ALL.into_iter().find(|h| {
            let name = h.name();
            name == stem || name.strip_prefix("mock-") == Some(stem)
        })
    }
}

/// Per-host mutable state. Lost whenever the host terminates.
#[derive(Debug)]
pub struct HostContext {
    pub data_root: PathBuf,
    pub counter: u64,
}

impl HostContext {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        HostContext {
            data_root: data_root.into(),
            counter: 0,
        }
    }
}

type HandlerResult = Result<Output, String>;

fn param_str<'a>(params: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match params.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s),
        Some(_) => Err(format!("parameter `{key}` must be a non-empty string")),
        None => Err(format!("missing parameter `{key}`")),
    }
}

fn param_f64(params: &Map<String, Value>, key: &str) -> Result<f64, String> {
    let v = params
        .get(key)
        .ok_or_else(|| format!("missing parameter `{key}`"))?;
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite())
        .ok_or_else(|| format!("parameter `{key}` must be a finite number"))
}

/// Relative path inside the data root named by a parameter value, with any
/// `/data/` prefix removed. Rejects anything that could leave the root.
pub fn data_relative(value: &str) -> Result<PathBuf, String> {
    let rel = strip_data_prefix(value);
    let path = Path::new(rel);
    if rel.is_empty() || path.is_absolute() {
        return Err(format!("`{value}` is not a path under {DATA_PREFIX}"));
    }
    for component in path.components() {
        if !matches!(component, Component::Normal(_) | Component::CurDir) {
            return Err(format!("`{value}` escapes the data root"));
        }
    }
    Ok(path.to_path_buf())
}

/// `dir/obs1.ms` + `-flagged` → `dir/obs1-flagged`.
pub fn derived_name(rel: &Path, suffix: &str) -> PathBuf {
    let stem = rel
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    rel.with_file_name(format!("{stem}{suffix}"))
}

pub fn published(rel: &Path) -> String {
    let parts: Vec<_> = rel
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy()),
            _ => None,
        })
        .collect();
    format!("{DATA_PREFIX}{}", parts.join("/"))
}

fn read_grid(root: &Path, rel: &Path) -> Result<GridImage, String> {
    let full = root.join(rel);
    let text = std::fs::read_to_string(&full).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => format!("file not found: {}", published(rel)),
        _ => format!("cannot read {}: {e}", published(rel)),
    })?;
    GridImage::parse(&text).map_err(|e| format!("{}: {e}", published(rel)))
}

fn write_file(root: &Path, rel: &Path, bytes: &[u8]) -> Result<(), String> {
    let full = root.join(rel);
    if let Some(parent) = full.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
    }
    std::fs::write(&full, bytes).map_err(|e| format!("cannot write {}: {e}", published(rel)))
}

fn transform(
    ctx: &HostContext,
    params: &Map<String, Value>,
    suffix: &str,
    op: impl FnOnce(&GridImage) -> GridImage,
) -> HandlerResult {
    let input = data_relative(param_str(params, "Input-MS")?)?;
    let grid = read_grid(&ctx.data_root, &input)?;
    let out = derived_name(&input, suffix);
    write_file(&ctx.data_root, &out, op(&grid).to_text().as_bytes())?;
    Ok(Output::text(published(&out)))
}

impl BuiltinHandler {
    pub async fn run(self, ctx: &mut HostContext, params: &Map<String, Value>) -> HandlerResult {
        match self {
            BuiltinHandler::Echo => Ok(Output::Binary {
                content_type: "application/json".to_string(),
                bytes: serde_json::to_vec(params).expect("json object serializes"),
            }),
            BuiltinHandler::SleepMs => {
                let ms = param_f64(params, "ms")?;
                if ms < 0.0 {
                    return Err("parameter `ms` must be non-negative".to_string());
                }
                tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0)).await;
                Ok(Output::text(format!("slept {ms} ms")))
            }
            BuiltinHandler::Counter => {
                ctx.counter += 1;
                Ok(Output::text(ctx.counter.to_string()))
            }
            BuiltinHandler::Raise => {
                let message = params
                    .get("message")
                    .and_then(Value::as_str)
                    .unwrap_or("handler raised");
                Err(message.to_string())
            }
            BuiltinHandler::MockFlag => {
                let threshold = param_f64(params, "threshold")?;
                transform(ctx, params, "-flagged", |g| grid::flag(g, threshold))
            }
            BuiltinHandler::MockCalibrate => {
                let gain = param_f64(params, "gain")?;
                transform(ctx, params, "-cal", |g| grid::calibrate(g, gain))
            }
            BuiltinHandler::MockTclean => {
                let input = data_relative(param_str(params, "Input-MS")?)?;
                let output = data_relative(param_str(params, "Output-MS")?)?;
                let grid = read_grid(&ctx.data_root, &input)?;
                let image = grid::gaussian_blur(&grid);
                write_file(&ctx.data_root, &output, image.to_text().as_bytes())?;
                Ok(Output::text(published(&output)))
            }
            BuiltinHandler::MockWsclean => {
                let input = data_relative(param_str(params, "Input-MS")?)?;
                let bytes = std::fs::read(ctx.data_root.join(&input))
                    .map_err(|_| format!("file not found: {}", published(&input)))?;
                let out = derived_name(&input, "-image.fits");
                write_file(&ctx.data_root, &out, &bytes)?;
                Ok(Output::text(published(&out)))
            }
            BuiltinHandler::MockBlur => {
                let input = data_relative(param_str(params, "file")?)?;
                let grid = read_grid(&ctx.data_root, &input)?;
                let text = grid::gaussian_blur(&grid).to_text();
                write_file(&ctx.data_root, &derived_name(&input, "-blur"), text.as_bytes())?;
                Ok(Output::Binary {
                    content_type: grid::CONTENT_TYPE.to_string(),
                    bytes: text.into_bytes(),
                })
            }
        }
    }
}
