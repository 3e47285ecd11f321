//! Hypothetical tool generation.
//!
//! An LLM is prompted to invent `Thought / Tool Name / Tool Description` blocks
//! for a query. In train mode it must produce exactly one block per gold tool;
//! at test time any positive count is accepted. A reply whose three field counts
//! disagree is a parse failure, and such queries are searched with the bare
//! question instead.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmProvider, Purpose};

pub const TRAIN_TEMPLATE: &str = include_str!("../prompts/train.txt");
pub const TEST_TEMPLATE: &str = include_str!("../prompts/test.txt");
pub const INFERIOR_TEMPLATE: &str = include_str!("../prompts/inferior.txt");

pub const DEFAULT_TRAIN_RETRIES: u32 = 2;
pub const DEFAULT_TEST_RETRIES: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypotheticalTool {
    pub thought: String,
    pub name: String,
    pub description: String,
}

impl HypotheticalTool {
    /// `Thoughts:{thought} Tool Name:{name} Tool Description:{description}`
    pub fn tnd_text(&self) -> String {
        format!(
            "Thoughts:{} Tool Name:{} Tool Description:{}",
            self.thought, self.name, self.description
        )
    }

    /// `Question:{question} ` followed by the TND rendering.
    pub fn qtnd_text(&self, question: &str) -> String {
        format!("Question:{} {}", question, self.tnd_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Train { n_required: usize },
    Test,
    /// Deliberately weak prompt without guidance or examples.
    Inferior,
}

impl GenerationMode {
    pub fn purpose(self) -> Purpose {
        match self {
            GenerationMode::Train { .. } => Purpose::Train,
            GenerationMode::Test => Purpose::Test,
            GenerationMode::Inferior => Purpose::Inferior,
        }
    }

    pub fn default_retries(self) -> u32 {
        match self {
            GenerationMode::Train { .. } => DEFAULT_TRAIN_RETRIES,
            _ => DEFAULT_TEST_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    CountMismatch,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RecordRepr", into = "RecordRepr")]
pub struct GenerationRecord {
    pub query_id: String,
    pub mode: GenerationMode,
    pub status: GenerationStatus,
    pub tools: Vec<HypotheticalTool>,
    pub raw_text: String,
}

impl GenerationRecord {
    pub fn is_ok(&self) -> bool {
        self.status == GenerationStatus::Ok
    }
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    query_id: String,
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_required: Option<usize>,
    status: GenerationStatus,
    tools: Vec<HypotheticalTool>,
    raw_text: String,
}

impl From<GenerationRecord> for RecordRepr {
    fn from(r: GenerationRecord) -> Self {
        let (mode, n_required) = match r.mode {
            GenerationMode::Train { n_required } => ("train", Some(n_required)),
            GenerationMode::Test => ("test", None),
            GenerationMode::Inferior => ("inferior", None),
        };
        RecordRepr {
            query_id: r.query_id,
            mode: mode.into(),
            n_required,
            status: r.status,
            tools: r.tools,
            raw_text: r.raw_text,
        }
    }
}

impl From<RecordRepr> for GenerationRecord {
    fn from(r: RecordRepr) -> Self {
        let mode = match r.mode.as_str() {
            "train" => GenerationMode::Train {
                n_required: r.n_required.unwrap_or(r.tools.len()),
            },
            "inferior" => GenerationMode::Inferior,
            _ => GenerationMode::Test,
        };
        GenerationRecord {
            query_id: r.query_id,
            mode,
            status: r.status,
            tools: r.tools,
            raw_text: r.raw_text,
        }
    }
}

/// Single-pass `{key}` substitution; values are never re-scanned.
pub(crate) fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = vars.iter().find(|(k, _)| {
            tail.len() > k.len() + 1 && tail[1..].starts_with(k) && tail[1 + k.len()..].starts_with('}')
        });
        match hit {
            Some((k, v)) => {
                out.push_str(v);
                rest = &tail[k.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_prompt(query: &Query, mode: GenerationMode) -> String {
    match mode {
        GenerationMode::Train { n_required } => fill_template(
            TRAIN_TEMPLATE,
            &[("query", &query.text), ("n", &n_required.to_string())],
        ),
        GenerationMode::Test => fill_template(TEST_TEMPLATE, &[("query", &query.text)]),
        GenerationMode::Inferior => fill_template(INFERIOR_TEMPLATE, &[("query", &query.text)]),
    }
}

/// Field counts of a reply that could not be turned into tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub thoughts: usize,
    pub names: usize,
    pub descriptions: usize,
    /// Name or description fields present but blank.
    pub empty_fields: usize,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unbalanced fields: {} thoughts, {} names, {} descriptions ({} empty)",
            self.thoughts, self.names, self.descriptions, self.empty_fields
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Thought,
    Name,
    Description,
}

fn strip_list_marker(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['-', '+', '#', '>', '•']).trim_start();
        // "1." / "2)" numbering
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        if s == before {
            return s;
        }
    }
}

fn classify(line: &str) -> Option<(Field, String)> {
    let s = strip_list_marker(line);
    let colon = s.find(':')?;
    let label: String = s[..colon]
        .chars()
        .filter(|c| *c != '*' && *c != '`')
        .collect::<String>()
        .trim()
        .to_lowercase();
    let field = match label.as_str() {
        "thought" | "thoughts" => Field::Thought,
        "tool name" => Field::Name,
        "tool description" => Field::Description,
        _ => return None,
    };
    let value = s[colon + 1..].trim_start_matches(['*', '`']).trim();
    Some((field, value.to_string()))
}

/// Extracts `Thought:` / `Tool Name:` / `Tool Description:` blocks.
///
/// Labels are case-insensitive at line starts, may carry list markers or
/// markdown emphasis, and code-fence lines are ignored. A field continues onto
/// following non-blank lines until the next label or a blank line.
pub fn parse_generation(raw_text: &str) -> std::result::Result<Vec<HypotheticalTool>, ParseFailure> {
    let mut fields: Vec<(Field, String)> = Vec::new();
    let mut open = false;
    for line in raw_text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if line.trim().is_empty() {
            open = false;
            continue;
        }
        if let Some(hit) = classify(line) {
            fields.push(hit);
            open = true;
        } else if open {
            let (_, value) = fields.last_mut().expect("open implies a field");
            if !value.is_empty() {
                value.push(' ');
            }
            value.push_str(line.trim());
        }
    }

    let pick = |f: Field| -> Vec<String> {
        fields
            .iter()
            .filter(|(k, _)| *k == f)
            .map(|(_, v)| v.trim().to_string())
            .collect()
    };
    let (thoughts, names, descriptions) = (pick(Field::Thought), pick(Field::Name), pick(Field::Description));
    let empty_fields = names.iter().chain(&descriptions).filter(|v| v.is_empty()).count();
    let balanced = thoughts.len() == names.len() && names.len() == descriptions.len();
    if !balanced || names.is_empty() || empty_fields > 0 {
        return Err(ParseFailure {
            thoughts: thoughts.len(),
            names: names.len(),
            descriptions: descriptions.len(),
            empty_fields,
        });
    }
    Ok(thoughts
        .into_iter()
        .zip(names)
        .zip(descriptions)
        .map(|((thought, name), description)| HypotheticalTool {
            thought,
            name,
            description,
        })
        .collect())
}

/// Calls the provider up to `1 + retries` times.
///
/// Train mode succeeds only with exactly `n_required` tools; otherwise the
/// last attempt's outcome is recorded as `count_mismatch` or `parse_failure`.
/// Test and inferior modes accept any parseable reply. Transport errors are
/// returned only if every attempt failed to reach the provider.
pub fn generate(
    query: &Query,
    provider: &dyn LlmProvider,
    mode: GenerationMode,
    retries: u32,
) -> Result<GenerationRecord> {
    let prompt = render_prompt(query, mode);
    let mut outcome: Option<(GenerationStatus, Vec<HypotheticalTool>, String)> = None;
    let mut transport_err: Option<Error> = None;

    for attempt in 0..=retries {
        let request = CompletionRequest {
            query_id: &query.id,
            purpose: mode.purpose(),
            prompt: &prompt,
            attempt,
        };
        let raw = match provider.complete(&request) {
            Ok(raw) => raw,
            Err(e) => {
                transport_err = Some(e);
                continue;
            }
        };
        let parsed = parse_generation(&raw).and_then(|tools| {
            let blank_thought = tools.iter().any(|t| t.thought.is_empty());
            if blank_thought && mode != GenerationMode::Inferior {
                Err(ParseFailure {
                    thoughts: tools.len(),
                    names: tools.len(),
                    descriptions: tools.len(),
                    empty_fields: 0,
                })
            } else {
                Ok(tools)
            }
        });
        match (parsed, mode) {
            (Ok(tools), GenerationMode::Train { n_required }) if tools.len() != n_required => {
                outcome = Some((GenerationStatus::CountMismatch, tools, raw));
            }
            (Ok(tools), _) => {
                return Ok(GenerationRecord {
                    query_id: query.id.clone(),
                    mode,
                    status: GenerationStatus::Ok,
                    tools,
                    raw_text: raw,
                });
            }
            (Err(_), _) => outcome = Some((GenerationStatus::ParseFailure, Vec::new(), raw)),
        }
    }

    match outcome {
        Some((status, tools, raw_text)) => Ok(GenerationRecord {
            query_id: query.id.clone(),
            mode,
            status,
            tools,
            raw_text,
        }),
        None => Err(transport_err.expect("at least one attempt was made")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchStyle {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "TND")]
    Tnd,
    #[serde(rename = "QTND")]
    Qtnd,
}

impl fmt::Display for SearchStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchStyle::Q => "Q",
            SearchStyle::Tnd => "TND",
            SearchStyle::Qtnd => "QTND",
        })
    }
}

impl std::str::FromStr for SearchStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "Q" => Ok(SearchStyle::Q),
            "TND" => Ok(SearchStyle::Tnd),
            "QTND" => Ok(SearchStyle::Qtnd),
            _ => Err(Error::Config(format!("unknown search style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    Hypothetical,
    FallbackQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchVector {
    pub query_id: String,
    pub style: SearchStyle,
    pub text: String,
    pub source: VectorSource,
}

impl SearchVector {
    pub fn question(query: &Query) -> Self {
        SearchVector {
            query_id: query.id.clone(),
            style: SearchStyle::Q,
            text: query.text.clone(),
            source: VectorSource::FallbackQuestion,
        }
    }
}

/// One vector per hypothetical tool, or the bare question when the record is
/// missing, not ok, or `style` is `Q`. Never empty.
pub fn build_search_vectors(
    query: &Query,
    record: Option<&GenerationRecord>,
    style: SearchStyle,
) -> Vec<SearchVector> {
    let usable = record.filter(|r| r.is_ok() && !r.tools.is_empty());
    match (style, usable) {
        (SearchStyle::Q, _) | (_, None) => vec![SearchVector::question(query)],
        (style, Some(record)) => record
            .tools
            .iter()
            .map(|ht| SearchVector {
                query_id: query.id.clone(),
                style,
                text: match style {
                    SearchStyle::Qtnd => ht.qtnd_text(&query.text),
                    _ => ht.tnd_text(),
                },
                source: VectorSource::Hypothetical,
            })
            .collect(),
    }
}
