use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use probekit::report::{render, Report, ReportFormat};
use serde::Serialize;
use serde_json::Value;

/// Where a subcommand writes and how it talks to the console.
pub struct Out {
    pub dir: PathBuf,
    pub json: bool,
    command: &'static str,
    argv: Vec<String>,
    inputs: BTreeMap<String, Value>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct RunProvenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    inputs: &'a BTreeMap<String, Value>,
    seeds: &'a BTreeMap<String, u64>,
    outputs: &'a [String],
}

impl Out {
    pub fn new(dir: PathBuf, json: bool, command: &'static str, argv: Vec<String>) -> Result<Self> {
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir,
            json,
            command,
            argv,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, name: &str, value: impl Into<Value>) {
        self.inputs.insert(name.into(), value.into());
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&mut self, file: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.record_output(&path);
        Ok(path)
    }

    pub fn report(&mut self, stem: &str, report: &Report, formats: &[ReportFormat]) -> Result<()> {
        for &f in formats {
            let body = render(report, f)?;
            self.write(&format!("{stem}.{}", f.extension()), &body)?;
        }
        Ok(())
    }

    /// Writes `<stem>.provenance.json` and prints the summary.
    pub fn finish(
        mut self,
        stem: &str,
        summary: Value,
        human: &str,
        human_to_stderr: bool,
    ) -> Result<()> {
        let prov_path = self.path(&format!("{stem}.provenance.json"));
        self.outputs.sort();
        let prov = RunProvenance {
            tool: "probekit",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: &self.argv,
            inputs: &self.inputs,
            seeds: &self.seeds,
            outputs: &self.outputs,
        };
        let mut body = serde_json::to_string_pretty(&prov)?;
        body.push('\n');
        fs::write(&prov_path, body).with_context(|| format!("writing {}", prov_path.display()))?;
        if self.json {
            println!("{}", serde_json::to_string_pretty(&summary)?);
        } else if human_to_stderr {
            eprint!("{human}");
        } else {
            print!("{human}");
        }
        Ok(())
    }
}

pub fn read_provenance_input(prov: &Path, key: &str) -> Option<String> {
    let text = fs::read_to_string(prov).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v.get("inputs")?.get(key)?.as_str().map(str::to_string)
}
