#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};

use cerhv::detector::{rank_scores, write_score_report, SampleScore};
use cerhv::metrics::{cer, Transcript};
use cerhv::pipeline::{synth_dataset, SynthConfig};
use serde_json::Value;

/// Small synthetic manifest on disk plus a score report whose CERs are
/// produced by dropping a deterministic number of trailing characters.
pub struct Fixture {
    pub manifest: PathBuf,
    pub scores: PathBuf,
    pub flagged: usize,
}

pub fn fixture(dir: &Path, count: usize, tau: f64) -> Fixture {
    let data = synth_dataset(&SynthConfig {
        count,
        ..SynthConfig::default()
    })
    .unwrap();
    let manifest = data.write(&dir.join("data")).unwrap();
    let scores: Vec<SampleScore> = data
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let chars = e.text.codepoints();
            let drop = (i * 7 % 5).min(chars.len());
            let prediction = Transcript::new(chars[..chars.len() - drop].iter().collect::<String>());
            SampleScore {
                sample_id: e.id.clone(),
                cer: cer(&prediction, &e.text),
                prediction,
                rank: 0,
            }
        })
        .collect();
    let scores = rank_scores(scores);
    let flagged = scores.iter().filter(|s| s.cer.value() > tau).count();
    let path = dir.join("scores.jsonl");
    std::fs::write(&path, write_score_report(&scores, tau)).unwrap();
    Fixture {
        manifest,
        scores: path,
        flagged,
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut r = agent.get(url).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn post(agent: &ureq::Agent, url: &str, body: &Value) -> (u16, Value) {
    let mut r = agent.post(url).send_json(body).unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn post_raw(agent: &ureq::Agent, url: &str, body: &str) -> (u16, Value) {
    let mut r = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body.as_bytes())
        .unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

/// A `cerhv review-serve` child process and the JSON lines it printed
/// before it started listening.
pub struct Server {
    pub child: Child,
    pub base: String,
    pub startup: Vec<Value>,
    _stdout: BufReader<ChildStdout>,
}

pub fn spawn_review_server(bin: &str, root: &Path, session: Option<(&Path, &Path)>) -> Server {
    let mut cmd = Command::new(bin);
    cmd.args(["review-serve", "--port", "0", "--root"]).arg(root);
    if let Some((manifest, scores)) = session {
        cmd.arg("--manifest").arg(manifest).arg("--scores").arg(scores);
    }
    let mut child = cmd
        .env("CERHV_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut startup = Vec::new();
    loop {
        let mut line = String::new();
        assert!(stdout.read_line(&mut line).unwrap() > 0, "server exited before listening");
        let v: Value = serde_json::from_str(line.trim()).unwrap();
        if let Some(url) = v.get("listening").and_then(Value::as_str) {
            return Server {
                child,
                base: url.to_string(),
                startup,
                _stdout: stdout,
            };
        }
        startup.push(v);
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Sample ids of a `samples` listing, in server order.
pub fn ids(listing: &Value) -> Vec<String> {
    listing["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["sample_id"].as_str().unwrap().to_string())
        .collect()
}
