//! Linear pipelines of catalog functions. Step parameters are JSON whose
//! strings may carry `${input.<key>}`, `${prev.output}` or
//! `${steps.<name>.output}` placeholders, resolved just before the step is
//! dispatched.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::catalog::Catalog;
use crate::invocation::InvocationResult;
use crate::planner::PlacementDecision;
use crate::platform::Platform;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("cannot read workflow {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid workflow: {0}")]
    Validation(String),
    #[error("step `{step}`: {reason}")]
    Substitution { step: String, reason: String },
    #[error("step `{step}` failed: {}", describe(.result))]
    StepFailed {
        step: String,
        result: Box<InvocationResult>,
    },
}

fn describe(result: &InvocationResult) -> String {
    result
        .error
        .clone()
        .unwrap_or_else(|| format!("{:?}", result.status))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowStep {
    pub step_name: String,
    pub function_name: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub name: String,
    #[serde(default)]
    pub steps: Vec<WorkflowStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placeholder {
    Input(String),
    PrevOutput,
    StepOutput(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Placeholder(Placeholder),
}

/// Splits a string into literal text and placeholders. A `$` not followed
/// by `{` is literal.
pub fn parse_template(s: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut rest = s;
    while let Some(at) = rest.find("${") {
        literal.push_str(&rest[..at]);
        let body_start = at + 2;
        let Some(len) = rest[body_start..].find('}') else {
            return Err(format!("unterminated placeholder in `{s}`"));
        };
        let body = &rest[body_start..body_start + len];
        let placeholder = parse_placeholder(body)
            .ok_or_else(|| format!("bad placeholder `${{{body}}}`"))?;
        if !literal.is_empty() {
            out.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        out.push(Segment::Placeholder(placeholder));
        rest = &rest[body_start + len + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        out.push(Segment::Literal(literal));
    }
    Ok(out)
}

fn parse_placeholder(body: &str) -> Option<Placeholder> {
    let ident = |s: &str| !s.is_empty() && !s.contains(['$', '{']);
    if body == "prev.output" {
        return Some(Placeholder::PrevOutput);
    }
    if let Some(key) = body.strip_prefix("input.") {
        return ident(key).then(|| Placeholder::Input(key.to_string()));
    }
    let name = body.strip_prefix("steps.")?.strip_suffix(".output")?;
    ident(name).then(|| Placeholder::StepOutput(name.to_string()))
}

fn for_each_string<'a>(value: &'a Value, f: &mut dyn FnMut(&'a str) -> Result<(), String>) -> Result<(), String> {
    match value {
        Value::String(s) => f(s),
        Value::Array(items) => items.iter().try_for_each(|v| for_each_string(v, f)),
        Value::Object(map) => map.values().try_for_each(|v| for_each_string(v, f)),
        _ => Ok(()),
    }
}

impl WorkflowSpec {
    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        let spec: WorkflowSpec =
            serde_json::from_str(text).map_err(|e| WorkflowError::Validation(e.to_string()))?;
        spec.validate_structure()?;
        Ok(spec)
    }

    /// Checks step names and that every placeholder is well formed and
    /// refers only to earlier steps.
    pub fn validate_structure(&self) -> Result<(), WorkflowError> {
        let invalid = |m: String| Err(WorkflowError::Validation(m));
        let mut earlier: HashSet<&str> = HashSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.step_name.is_empty() {
                return invalid(format!("step {} has an empty step_name", i + 1));
            }
            if step.function_name.is_empty() {
                return invalid(format!("step `{}` has an empty function_name", step.step_name));
            }
            let mut check = |s: &str| -> Result<(), String> {
                for seg in parse_template(s)? {
                    match seg {
                        Segment::Placeholder(Placeholder::PrevOutput) if i == 0 => {
                            return Err("`${prev.output}` in the first step".into());
                        }
                        Segment::Placeholder(Placeholder::StepOutput(name))
                            if !earlier.contains(name.as_str()) =>
                        {
                            return Err(if self.steps.iter().any(|s| s.step_name == name) {
                                format!("`${{steps.{name}.output}}` refers to a step that has not run yet")
                            } else {
                                format!("`${{steps.{name}.output}}` refers to an unknown step")
                            });
                        }
                        _ => {}
                    }
                }
                Ok(())
            };
            for value in step.parameters.values() {
                if let Err(reason) = for_each_string(value, &mut check) {
                    return invalid(format!("step `{}`: {reason}", step.step_name));
                }
            }
            if !earlier.insert(&step.step_name) {
                return invalid(format!("duplicate step name `{}`", step.step_name));
            }
        }
        Ok(())
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), WorkflowError> {
        self.validate_structure()?;
        for step in &self.steps {
            if catalog.get_function(&step.function_name).is_err() {
                return Err(WorkflowError::Validation(format!(
                    "step `{}` uses unknown function `{}`",
                    step.step_name, step.function_name
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_workflow(path: &Path, catalog: &Catalog) -> Result<WorkflowSpec, WorkflowError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkflowError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = WorkflowSpec::from_json(&text)?;
    spec.validate(catalog)?;
    Ok(spec)
}

struct Bindings<'a> {
    inputs: &'a Map<String, Value>,
    prev: Option<&'a str>,
    steps: &'a BTreeMap<String, String>,
}

impl Bindings<'_> {
    fn lookup(&self, p: &Placeholder) -> Result<String, String> {
        let value = match p {
            Placeholder::Input(key) => match self.inputs.get(key) {
                Some(Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => return Err(format!("missing workflow input `{key}`")),
            },
            Placeholder::PrevOutput => self
                .prev
                .ok_or("no previous output")?
                .to_string(),
            Placeholder::StepOutput(name) => self
                .steps
                .get(name)
                .ok_or_else(|| format!("no output recorded for step `{name}`"))?
                .clone(),
        };
        if value.contains("${") {
            return Err(format!("substituted value `{value}` itself contains a placeholder"));
        }
        Ok(value)
    }

    fn substitute(&self, value: &Value) -> Result<Value, String> {
        Ok(match value {
            Value::String(s) => {
                let mut out = String::new();
                for seg in parse_template(s)? {
                    match seg {
                        Segment::Literal(l) => out.push_str(&l),
                        Segment::Placeholder(p) => out.push_str(&self.lookup(&p)?),
                    }
                }
                Value::String(out)
            }
            Value::Array(items) => Value::Array(
                items.iter().map(|v| self.substitute(v)).collect::<Result<_, _>>()?,
            ),
            Value::Object(map) => Value::Object(
                map.iter()
                    .map(|(k, v)| Ok((k.clone(), self.substitute(v)?)))
                    .collect::<Result<_, String>>()?,
            ),
            other => other.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step_name: String,
    pub function_name: String,
    pub node_id: String,
    pub parameters: Map<String, Value>,
    pub placement: PlacementDecision,
    pub result: InvocationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum WorkflowStatus {
    Completed,
    AbortedAt { step_name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowResult {
    pub workflow: String,
    pub steps: Vec<StepRecord>,
    pub final_output: Option<String>,
    pub status: WorkflowStatus,
    /// The result of the step that aborted the run, if any.
    pub failure: Option<InvocationResult>,
}

impl WorkflowResult {
    pub fn is_completed(&self) -> bool {
        self.status == WorkflowStatus::Completed
    }

    /// Converts an aborted run into [`WorkflowError::StepFailed`].
    pub fn into_result(self) -> Result<WorkflowResult, WorkflowError> {
        match (&self.status, &self.failure) {
            (WorkflowStatus::AbortedAt { step_name, .. }, Some(result)) => {
                Err(WorkflowError::StepFailed {
                    step: step_name.clone(),
                    result: Box::new(result.clone()),
                })
            }
            _ => Ok(self),
        }
    }
}

/// Runs the steps in order through the platform. A failing step stops the
/// run; the result then holds the records of the steps that completed.
pub async fn run_workflow(
    platform: &Platform,
    spec: &WorkflowSpec,
    inputs: &Map<String, Value>,
) -> Result<WorkflowResult, WorkflowError> {
    spec.validate(platform.catalog())?;
    let mut records: Vec<StepRecord> = Vec::new();
    let mut outputs: BTreeMap<String, String> = BTreeMap::new();
    let mut prev: Option<String> = None;

    let aborted = |records, step: &str, reason: String, failure| WorkflowResult {
        workflow: spec.name.clone(),
        steps: records,
        final_output: None,
        status: WorkflowStatus::AbortedAt {
            step_name: step.to_string(),
            reason,
        },
        failure,
    };

    for step in &spec.steps {
        let bindings = Bindings {
            inputs,
            prev: prev.as_deref(),
            steps: &outputs,
        };
        let parameters = match bindings.substitute(&Value::Object(step.parameters.clone())) {
            Ok(Value::Object(m)) => m,
            Ok(_) => unreachable!("objects substitute to objects"),
            Err(reason) => {
                return Err(WorkflowError::Substitution {
                    step: step.step_name.clone(),
                    reason,
                })
            }
        };
        let dispatch = match platform.invoke_by_name(&step.function_name, parameters.clone()).await {
            Ok(d) => d,
            Err(e) => return Ok(aborted(records, &step.step_name, e.to_string(), None)),
        };
        let result = dispatch.result;
        if !result.is_ok() {
            let reason = describe(&result);
            return Ok(aborted(records, &step.step_name, reason, Some(result)));
        }
        let Some(text) = result.output.as_ref().and_then(|o| o.as_str()).map(str::to_owned) else {
            let reason = "output is not UTF-8 text and cannot be chained".to_string();
            return Ok(aborted(records, &step.step_name, reason, Some(result)));
        };
        tracing::info!(workflow = %spec.name, step = %step.step_name, node = %result.node_id, "step completed");
        records.push(StepRecord {
            step_name: step.step_name.clone(),
            function_name: step.function_name.clone(),
            node_id: result.node_id.clone(),
            parameters,
            placement: dispatch.placement,
            result,
        });
        outputs.insert(step.step_name.clone(), text.clone());
        prev = Some(text);
    }

    Ok(WorkflowResult {
        workflow: spec.name.clone(),
        steps: records,
        final_output: prev,
        status: WorkflowStatus::Completed,
        failure: None,
    })
}
