//! Regenerates the shipped fixture sets.
//!
//! ```text
//! cargo run --example make_fixtures -- fixtures
//! ```
//!
//! `synthetic/` is a separable 64-tool corpus (16 objects x 4 actions) whose
//! queries only use synonyms of the tool vocabulary. `noisy/` is a small
//! corpus seeded with counted defects, described by `manifest.json`.

use std::path::{Path, PathBuf};

use hypotool::corpus::{Query, Split, Tool};
use hypotool::jsonl;
use hypotool::llm::{MockFixture, MockResponse, Purpose};
use serde_json::json;

const OBJECTS: [(&str, &str, &str); 16] = [
    ("weather", "climate", "forecast"),
    ("invoice", "bill", "billing"),
    ("playlist", "mixtape", "music"),
    ("ticket", "pass", "event"),
    ("photo", "snapshot", "gallery"),
    ("contact", "acquaintance", "addressbook"),
    ("recipe", "dish", "cookbook"),
    ("flight", "airfare", "airline"),
    ("parcel", "shipment", "courier"),
    ("stock", "equity", "exchange"),
    ("calendar", "agenda", "planner"),
    ("email", "letter", "mailbox"),
    ("document", "paperwork", "archive"),
    ("vehicle", "automobile", "garage"),
    ("account", "profile", "identity"),
    ("translation", "interpretation", "language"),
];

const ACTIONS: [(&str, &str); 4] = [
    ("fetch", "obtain"),
    ("create", "generate"),
    ("update", "modify"),
    ("delete", "erase"),
];

const TAILS: [&str; 4] = ["for me", "right now", "as soon as possible", "today"];

fn tool_id(o: usize, a: usize) -> String {
    format!("t{o:02}{a}")
}

fn split_of(o: usize) -> Split {
    match o {
        0..=5 => Split::Web,
        6..=10 => Split::Code,
        _ => Split::Customized,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn synthetic_tools() -> Vec<Tool> {
    let mut tools = Vec::new();
    for (o, (obj, _, ctx)) in OBJECTS.iter().enumerate() {
        for (a, (act, _)) in ACTIONS.iter().enumerate() {
            tools.push(Tool {
                id: tool_id(o, a),
                name: format!("{act}_{obj}"),
                description: format!("{} a {obj} entry in the {ctx} registry.", capitalize(act)),
                split: split_of(o),
            });
        }
    }
    tools
}

/// Same-object siblings plus the same action on the next objects.
fn negatives(golds: &[(usize, usize)]) -> Vec<String> {
    let mut out = Vec::new();
    for &(o, a) in golds {
        for b in 0..4 {
            out.push(tool_id(o, b));
        }
        for step in 1..=3 {
            out.push(tool_id((o + step) % 16, a));
        }
    }
    let gold: Vec<String> = golds.iter().map(|&(o, a)| tool_id(o, a)).collect();
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|id| !gold.contains(id) && seen.insert(id.clone()));
    out
}

fn query_text(golds: &[(usize, usize)], tail: usize) -> String {
    let (o, a) = golds[0];
    let mut text = format!("Please {} my {}", ACTIONS[a].1, OBJECTS[o].1);
    if let Some(&(o2, a2)) = golds.get(1) {
        text.push_str(&format!(" and then {} the {}", ACTIONS[a2].1, OBJECTS[o2].1));
    }
    text.push(' ');
    text.push_str(TAILS[tail % TAILS.len()]);
    text
}

fn sharp_block(o: usize, a: usize) -> String {
    let (obj, _, ctx) = OBJECTS[o];
    let act = ACTIONS[a].0;
    format!(
        "Thought: This step needs to {act} a {obj}.\nTool Name: {act}_{obj}\nTool Description: Can {act} any {obj} entry kept in a {ctx} registry."
    )
}

fn vague_block() -> String {
    "Thought: This handles part of the request.\nTool Name: request_helper\nTool Description: Handles the requested item for the user.".into()
}

fn generation(golds: &[(usize, usize)], sharp: impl Fn(usize) -> bool) -> String {
    let blocks: Vec<String> = golds
        .iter()
        .enumerate()
        .map(|(i, &(o, a))| if sharp(i) { sharp_block(o, a) } else { vague_block() })
        .collect();
    format!("```\n{}\n```", blocks.join("\n\n"))
}

fn synthetic_queries(
    prefix: &str,
    gold_for: impl Fn(usize) -> Vec<(usize, usize)>,
    purpose: Purpose,
    sharp: impl Fn(usize, usize) -> bool,
    fixtures: &mut Vec<MockFixture>,
) -> Vec<Query> {
    (0..32)
        .map(|i| {
            let golds = gold_for(i);
            let id = format!("{prefix}{i:02}");
            fixtures.push(MockFixture {
                query_id: id.clone(),
                purpose,
                responses: vec![MockResponse::Text(generation(&golds, |g| sharp(i, g)))],
            });
            Query {
                id,
                text: query_text(&golds, i),
                gold_tool_ids: golds.iter().map(|&(o, a)| tool_id(o, a)).collect(),
                negative_tool_ids: negatives(&golds),
                split: split_of(golds[0].0),
            }
        })
        .collect()
}

const SYNTHETIC_CONFIG: &str = r#"seed = 7
workers = 4

[paths]
tools = "tools.jsonl"
queries = "queries.jsonl"
train_queries = "train_queries.jsonl"
output_dir = "out"

[llm]
kind = "mock"
fixtures = "llm_mock.jsonl"

[embedding]
kind = "deterministic"
dim = 128
granularity = "tokens"

[retrieval]
retriever = "dense"
style = "QTND"
fusion = "rrf"
adapter = "trained"
k = 10

[training]
alignment = "hungarian"
anchor_style = "QTND"
learning_rate = 0.2
epochs = 8
batch_size = 4
k_negatives = 7
temperature = 0.1
"#;

fn write_synthetic(dir: &Path) {
    let mut fixtures = Vec::new();
    let train = synthetic_queries(
        "tr",
        |i| {
            if i < 16 {
                vec![(i, i % 4)]
            } else {
                let j = i - 16;
                vec![(j, (j + 1) % 4), ((j + 5) % 16, (j + 2) % 4)]
            }
        },
        Purpose::Train,
        |i, g| (i + g) % 2 == 0,
        &mut fixtures,
    );
    let test = synthetic_queries(
        "te",
        |i| {
            if i < 16 {
                vec![(i, (i + 2) % 4)]
            } else {
                let j = i - 16;
                vec![(j, (j + 3) % 4), ((j + 9) % 16, j % 4)]
            }
        },
        Purpose::Test,
        |i, g| (i + g) % 5 < 3,
        &mut fixtures,
    );
    std::fs::create_dir_all(dir).unwrap();
    jsonl::write(&dir.join("tools.jsonl"), &synthetic_tools()).unwrap();
    jsonl::write(&dir.join("train_queries.jsonl"), &train).unwrap();
    jsonl::write(&dir.join("queries.jsonl"), &test).unwrap();
    jsonl::write(&dir.join("llm_mock.jsonl"), &fixtures).unwrap();
    std::fs::write(dir.join("config.toml"), SYNTHETIC_CONFIG).unwrap();
}

// noisy set

const NOISY_TOPICS: [(&str, &str, Split); 12] = [
    ("currency_converter", "Convert an amount between two currencies using daily exchange rates.", Split::Web),
    ("news_headlines", "Return the latest news headlines for a country or topic.", Split::Web),
    ("hotel_search", "Search hotels in a city by check-in date and guest count.", Split::Web),
    ("movie_showtimes", "List cinema showtimes for a movie near a location.", Split::Web),
    ("regex_tester", "Test a regular expression against sample strings and report matches.", Split::Code),
    ("json_formatter", "Pretty-print and validate a JSON document.", Split::Code),
    ("git_blame", "Show which commit last changed each line of a source file.", Split::Code),
    ("unit_test_runner", "Run the unit tests of a project and summarize failures.", Split::Code),
    ("meeting_scheduler", "Find a meeting slot that suits every attendee calendar.", Split::Customized),
    ("expense_report", "Compile receipts into an expense report for approval.", Split::Customized),
    ("leave_request", "Submit a vacation leave request to a manager.", Split::Customized),
    ("inventory_lookup", "Look up stock levels of a product in the warehouse.", Split::Customized),
];

fn noisy_tools() -> Vec<Tool> {
    let mut tools: Vec<Tool> = NOISY_TOPICS
        .iter()
        .enumerate()
        .flat_map(|(i, &(name, desc, split))| {
            [
                Tool {
                    id: format!("n{i:02}a"),
                    name: name.into(),
                    description: desc.into(),
                    split,
                },
                Tool {
                    id: format!("n{i:02}b"),
                    name: format!("{name}_batch"),
                    description: format!("Batch variant: {}", desc.to_lowercase()),
                    split,
                },
            ]
        })
        .collect();
    tools.push(Tool {
        id: "bad_empty".into(),
        name: "broken_lookup".into(),
        description: String::new(),
        split: Split::Web,
    });
    tools.push(Tool {
        id: "bad_space".into(),
        name: "blank_formatter".into(),
        description: "   ".into(),
        split: Split::Code,
    });
    tools.push(Tool {
        id: "bad_name".into(),
        name: " ".into(),
        description: "Tool with no usable name.".into(),
        split: Split::Other,
    });
    tools
}

const NOISY_QUESTIONS: [(&str, &[usize]); 20] = [
    ("How many euros is 250 US dollars today?", &[0]),
    ("What are the top news stories in Japan?", &[1]),
    ("Find me a hotel in Lisbon for two guests next Friday.", &[2]),
    ("When is the new space movie playing near Main Street?", &[3]),
    ("Does my pattern match these phone numbers?", &[4]),
    ("Clean up this JSON blob and tell me if it is valid.", &[5]),
    ("Who changed line 40 of parser.rs last?", &[6]),
    ("Run the tests and tell me which ones fail.", &[7]),
    ("Set up a call with Ana, Raj and Mei this week.", &[8]),
    ("Turn these taxi receipts into a report for my boss.", &[9]),
    ("I want to take next Monday off.", &[10]),
    ("Do we still have blue mugs in the warehouse?", &[11]),
    ("Convert 90 pounds to yen and give me today's headlines.", &[0, 1]),
    ("Book a hotel in Rome and check what is showing at the cinema there.", &[2, 3]),
    ("Validate this JSON and run my regex on each field.", &[5, 4]),
    ("Find who broke the build and rerun the tests.", &[6, 7]),
    ("Schedule a review meeting and file my expenses.", &[8, 9]),
    ("Request leave and check stock of laptops before I go.", &[10, 11]),
    ("Give me exchange rates plus the business news.", &[0, 1]),
    ("Which tests fail and who touched those files?", &[7, 6]),
];

fn noisy_block(topic: usize) -> String {
    let (name, desc, _) = NOISY_TOPICS[topic];
    format!("Thought: The request needs {}.\nTool Name: {name}\nTool Description: {desc}", name.replace('_', " "))
}

fn noisy_ok(topics: &[usize]) -> String {
    let blocks: Vec<String> = topics.iter().map(|&t| noisy_block(t)).collect();
    format!("```\n{}\n```", blocks.join("\n\n"))
}

fn nq(id: &str, text: &str, gold: &[&str], neg: &[&str], split: Split) -> Query {
    Query {
        id: id.into(),
        text: text.into(),
        gold_tool_ids: gold.iter().map(|s| s.to_string()).collect(),
        negative_tool_ids: neg.iter().map(|s| s.to_string()).collect(),
        split,
    }
}

/// Query indices whose test-time output is malformed and must fall back.
const MALFORMED: [usize; 3] = [3, 9, 15];

const NOISY_CONFIG: &str = r#"seed = 11
workers = 3

[paths]
tools = "tools.jsonl"
queries = "queries.jsonl"
train_queries = "train_queries.jsonl"
output_dir = "out"

[llm]
kind = "mock"
fixtures = "llm_mock.jsonl"

[embedding]
kind = "deterministic"
dim = 64
granularity = "tokens"

[retrieval]
retriever = "dense"
style = "QTND"
fusion = "rrf"
adapter = "trained"
k = 10

[training]
alignment = "hungarian"
anchor_style = "QTND"
retries = 2
learning_rate = 0.05
epochs = 2
batch_size = 2
k_negatives = 3
"#;

fn write_noisy(dir: &Path) {
    let mut queries = Vec::new();
    let mut fixtures = Vec::new();
    for (i, &(text, topics)) in NOISY_QUESTIONS.iter().enumerate() {
        let id = format!("q{i:02}");
        let gold: Vec<String> = topics.iter().map(|t| format!("n{t:02}a")).collect();
        let mut neg: Vec<String> = topics.iter().map(|t| format!("n{t:02}b")).collect();
        neg.push(format!("n{:02}a", (topics[0] + 4) % 12));
        // q05 lists its own gold as a negative; the overlap is pruned, the query kept.
        if i == 5 {
            neg.push(gold[0].clone());
        }
        queries.push(Query {
            id: id.clone(),
            text: text.into(),
            gold_tool_ids: gold,
            negative_tool_ids: neg,
            split: NOISY_TOPICS[topics[0]].2,
        });
        let response = match MALFORMED.iter().position(|&m| m == i) {
            Some(0) => "I think a search tool would help here, but I am not sure which.".to_string(),
            Some(1) => format!(
                "{}\nThought: A second step is also needed.\nTool Name: helper",
                noisy_block(topics[0])
            ),
            Some(_) => "```\nThought:\nTool Name:\nTool Description:\n```".to_string(),
            None => noisy_ok(topics),
        };
        fixtures.push(MockFixture {
            query_id: id,
            purpose: Purpose::Test,
            responses: vec![MockResponse::Text(response)],
        });
    }
    // Defects: each removed query is listed with the reasons it trips.
    queries.push(nq("x_dangling_empty", "Look up a thing with the broken tool.", &["bad_empty"], &["n00b"], Split::Web));
    queries.push(nq("x_dangling_missing", "Use a tool nobody shipped.", &["ghost_tool"], &["n01b"], Split::Web));
    queries.push(nq("x_no_negatives", "Convert dollars with no negatives listed.", &["n00a"], &[], Split::Web));
    queries.push(nq("x_overlap", "Headlines where the only negative is the gold.", &["n01a"], &["n01a"], Split::Web));
    queries.push(nq("x_duplicate", NOISY_QUESTIONS[0].0, &["n00a"], &["n00b"], Split::Web));
    queries.push(nq("x_empty_text", "  ", &["n02a"], &["n02b"], Split::Web));
    queries.push(nq("x_two_rules", "Blank formatter with nothing to contrast.", &["bad_space"], &[], Split::Code));

    let train = vec![
        nq("tr0", "Change 40 francs into dollars.", &["n00a"], &["n00b", "n04a"], Split::Web),
        nq("tr1", "Show today's headlines and convert 5 euros to pounds.", &["n01a", "n00a"], &["n01b", "n00b"], Split::Web),
        nq("tr2", "Which lines in main.rs did Bob change?", &["n06a"], &["n06b", "n10a"], Split::Code),
        nq("tr3", "Book a room in Oslo and find movie times.", &["n02a", "n03a"], &["n02b", "n03b"], Split::Web),
    ];
    let train_responses = [
        vec![MockResponse::Text(noisy_ok(&[0]))],
        vec![
            MockResponse::Failure {
                error: "connection reset".into(),
            },
            MockResponse::Text(noisy_ok(&[1, 0])),
        ],
        vec![MockResponse::Text(noisy_ok(&[6]))],
        // Always one tool short of the two required.
        vec![MockResponse::Text(noisy_ok(&[2]))],
    ];
    for (q, responses) in train.iter().zip(train_responses) {
        fixtures.push(MockFixture {
            query_id: q.id.clone(),
            purpose: Purpose::Train,
            responses,
        });
    }

    let manifest = json!({
        "tools_total": 27,
        "queries_total": 27,
        "tools_removed": 3,
        "queries_removed": 7,
        "negatives_pruned": 1,
        "reasons": {
            "empty_description": 2,
            "empty_name": 1,
            "dangling_reference": 3,
            "no_negatives": 2,
            "overlap_no_negatives": 1,
            "duplicate_query": 1,
            "empty_text": 1
        },
        "surviving_queries": 20,
        "fallback_queries": MALFORMED.iter().map(|i| format!("q{i:02}")).collect::<Vec<_>>(),
        "train_queries": 4,
        "train_dropped": ["tr3"]
    });

    std::fs::create_dir_all(dir).unwrap();
    jsonl::write(&dir.join("tools.jsonl"), &noisy_tools()).unwrap();
    jsonl::write(&dir.join("queries.jsonl"), &queries).unwrap();
    jsonl::write(&dir.join("train_queries.jsonl"), &train).unwrap();
    jsonl::write(&dir.join("llm_mock.jsonl"), &fixtures).unwrap();
    jsonl::write_json(&dir.join("manifest.json"), &manifest).unwrap();
    std::fs::write(dir.join("config.toml"), NOISY_CONFIG).unwrap();
}

fn main() {
    let root: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());
    write_synthetic(&root.join("synthetic"));
    write_noisy(&root.join("noisy"));
    // greedy takes 0.9 first and is left with 0.1; the optimum pairs the 0.8s
    jsonl::write_json(&root.join("conflict_similarity.json"), &[[0.9, 0.8], [0.8, 0.1]]).unwrap();
    println!("wrote {}", root.display());
}
