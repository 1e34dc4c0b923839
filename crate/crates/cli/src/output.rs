//! Output emission: a JSON envelope (the canonical machine format) or
//! CSV with a `#`-comment preamble. Field and column orders are fixed,
//! so identical invocations produce byte-identical output.

use serde::Serialize;
use serde_json::{json, Value};

use rematch_core::Instance64;

pub const TOOL_NAME: &str = "rematch";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceMeta {
    pub path: String,
    pub hash: String,
    pub n: usize,
    pub horizon: usize,
    pub p_min: f64,
    pub geometric_only: bool,
}

impl InstanceMeta {
    pub fn new(path: &str, instance: &Instance64) -> Self {
        Self {
            path: path.to_string(),
            hash: format!("{:016x}", instance.stable_hash()),
            n: instance.n(),
            horizon: instance.horizon(),
            p_min: instance.p_min(),
            geometric_only: instance.is_geometric_only(),
        }
    }
}

/// Prints the canonical JSON envelope.
pub fn emit_json(
    command: &str,
    seed: u64,
    config: Value,
    instance: Option<&InstanceMeta>,
    results: Value,
) {
    let envelope = json!({
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "instance": instance,
        "results": results,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&envelope).expect("envelope serializes")
    );
}

/// A CSV document: comment preamble, fixed header, rows.
pub struct CsvDoc {
    comments: Vec<String>,
    header: &'static str,
    rows: Vec<String>,
}

impl CsvDoc {
    pub fn new(
        command: &str,
        seed: u64,
        config: &Value,
        instance: Option<&InstanceMeta>,
        header: &'static str,
    ) -> Self {
        let mut comments = vec![
            format!("# tool={TOOL_NAME} version={TOOL_VERSION} command={command} seed={seed}"),
            format!("# config={config}"),
            "# resource indices in reports are 1-based; instance files are 0-based".to_string(),
        ];
        if let Some(meta) = instance {
            comments.push(format!(
                "# instance path={} hash={} n={} T={} p_min={} geometric_only={}",
                meta.path, meta.hash, meta.n, meta.horizon, meta.p_min, meta.geometric_only
            ));
        }
        Self {
            comments,
            header,
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: String) {
        self.comments.push(format!("# {line}"));
    }

    pub fn row(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn emit(self) {
        for c in &self.comments {
            println!("{c}");
        }
        println!("{}", self.header);
        for r in &self.rows {
            println!("{r}");
        }
    }
}

/// Shortest-roundtrip float rendering (matches JSON output).
pub fn fmt_f64(x: f64) -> String {
    let mut s = format!("{x}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

pub fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}
