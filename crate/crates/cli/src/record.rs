//! Topic recording to CSV.
//!
//! Rows follow the stamps of the first topic. Every other topic contributes the sample
//! nearest in stamp, if one lies within that topic's publish period; otherwise its cells
//! are left empty.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use urstack::services::{LineClient, TOPICS};

use crate::{resolve, CliError, RecordArgs, DEFAULT_STATE_PORT};

const STAMP_EPS: f64 = 1e-9;

/// Formats a value for CSV; negative zero is written as 0.
fn cell(v: &f64) -> String {
    if *v == 0.0 { 0.0f64.to_string() } else { v.to_string() }
}

/// CSV columns contributed by `topic`, or None if it is not a state topic.
pub fn topic_columns(topic: &str) -> Option<Vec<String>> {
    let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    match topic {
        "wrench" => Some(owned(&["fx", "fy", "fz", "tx", "ty", "tz"])),
        "joint_states" => Some([names("q", 6), names("qd", 6)].concat()),
        "tcp_pose" => Some(owned(&["x", "y", "z", "rx", "ry", "rz"])),
        "io_state" => Some(owned(&["digital_in", "digital_out"])),
        _ => None,
    }
}

/// Scalar values of a topic message body, in [`topic_columns`] order.
pub fn flatten(topic: &str, body: &Value) -> Option<Vec<f64>> {
    let array = |v: &Value| -> Option<Vec<f64>> { v.as_array()?.iter().map(Value::as_f64).collect() };
    let values = match topic {
        "wrench" => [array(&body["force"])?, array(&body["torque"])?].concat(),
        "joint_states" => {
            let mut q = array(&body["position"])?;
            let mut qd = array(&body["velocity"])?;
            q.resize(6, 0.0);
            qd.resize(6, 0.0);
            [q, qd].concat()
        }
        "tcp_pose" => [array(&body["position"])?, array(&body["rotation"])?].concat(),
        "io_state" => vec![body["digital_in"].as_f64()?, body["digital_out"].as_f64()?],
        _ => return None,
    };
    (values.len() == topic_columns(topic)?.len()).then_some(values)
}

/// Samples of several topics, merged into rows on write.
pub struct Trace {
    topics: Vec<String>,
    samples: Vec<Vec<(f64, Vec<f64>)>>,
}

impl Trace {
    pub fn new(topics: &[String]) -> Trace {
        Trace {
            topics: topics.to_vec(),
            samples: vec![Vec::new(); topics.len()],
        }
    }

    /// Adds a message; ignores topics not part of the trace and malformed bodies.
    pub fn push(&mut self, topic: &str, stamp: f64, body: &Value) {
        if let Some(i) = self.topics.iter().position(|t| t == topic) {
            if let Some(values) = flatten(topic, body) {
                self.samples[i].push((stamp, values));
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Stamp of the first row.
    pub fn first_stamp(&self) -> Option<f64> {
        self.samples.first()?.first().map(|s| s.0)
    }

    /// Shortest positive stamp spacing of topic `i`.
    fn period(&self, i: usize) -> f64 {
        let mut stamps: Vec<f64> = self.samples[i].iter().map(|s| s.0).collect();
        stamps.sort_by(f64::total_cmp);
        stamps
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > STAMP_EPS)
            .fold(f64::INFINITY, f64::min)
    }

    fn nearest(&self, i: usize, stamp: f64, period: f64) -> Option<&[f64]> {
        let tolerance = if period.is_finite() { period } else { 0.0 } + STAMP_EPS;
        self.samples[i]
            .iter()
            .min_by(|a, b| (a.0 - stamp).abs().total_cmp(&(b.0 - stamp).abs()))
            .filter(|s| (s.0 - stamp).abs() <= tolerance)
            .map(|s| s.1.as_slice())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Failed(format!("cannot write CSV: {e}"));
        writeln!(
            out,
            "# rows follow {} stamps; other topics merged on the nearest stamp within one publish period",
            self.topics.first().map_or("", String::as_str)
        )
        .map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CliError::Failed(format!("cannot write CSV: {e}"));
        let mut header = vec!["stamp".to_string()];
        for t in &self.topics {
            header.extend(topic_columns(t).unwrap_or_default());
        }
        w.write_record(&header).map_err(csv_err)?;
        let periods: Vec<f64> = (0..self.topics.len()).map(|i| self.period(i)).collect();
        let mut primary = self.samples.first().cloned().unwrap_or_default();
        primary.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (stamp, values) in &primary {
            let mut record = vec![stamp.to_string()];
            record.extend(values.iter().map(cell));
            for (i, topic) in self.topics.iter().enumerate().skip(1) {
                let width = topic_columns(topic).map_or(0, |c| c.len());
                match self.nearest(i, *stamp, periods[i]) {
                    Some(v) => record.extend(v.iter().map(cell)),
                    None => record.extend(std::iter::repeat(String::new()).take(width)),
                }
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let file = File::create(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        self.write_csv(BufWriter::new(file))
    }
}

/// Validates topic names (a leading `/` is accepted) and rejects duplicates.
pub fn parse_topics(topics: &[String]) -> Result<Vec<String>, CliError> {
    let mut out: Vec<String> = Vec::new();
    for t in topics {
        let t = t.trim().trim_start_matches('/');
        if !TOPICS.contains(&t) {
            return Err(CliError::Config(format!(
                "unknown topic '{t}' (available: {})",
                TOPICS.join(", ")
            )));
        }
        if out.iter().any(|o| o == t) {
            return Err(CliError::Config(format!("topic '{t}' listed twice")));
        }
        out.push(t.to_string());
    }
    Ok(out)
}

pub fn run(a: RecordArgs) -> Result<(), CliError> {
    let topics = parse_topics(&a.topics)?;
    if !(a.duration > 0.0) {
        return Err(CliError::Config("--duration must be positive".into()));
    }
    let server = resolve(&a.server, DEFAULT_STATE_PORT)?;
    let mut client = LineClient::connect(server).map_err(|e| CliError::Transport(format!("{server}: {e}")))?;
    for t in &topics {
        client.send(&json!({ "subscribe": t })).map_err(CliError::from)?;
    }

    // A reader thread keeps partial lines intact while the main loop enforces the wall limit.
    let (tx, rx) = channel();
    std::thread::spawn(move || loop {
        let m = client.recv();
        let done = m.is_err();
        if tx.send(m).is_err() || done {
            break;
        }
    });
    let deadline = Instant::now() + Duration::from_secs_f64(a.timeout.unwrap_or(a.duration + 30.0));
    let mut trace = Trace::new(&topics);
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        let m = match rx.recv_timeout(left) {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => {
                if trace.rows() == 0 {
                    return Err(CliError::Transport(e.to_string()));
                }
                log::warn!("stream ended early: {e}");
                break;
            }
            Err(RecvTimeoutError::Timeout) => {
                log::warn!("wall-clock limit reached after {} rows", trace.rows());
                break;
            }
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if m.get("event").is_some() {
            log::warn!("state receiver stopped: {}", m["reason"]);
            break;
        }
        if let Some(e) = m.get("error") {
            return Err(CliError::Failed(e.as_str().unwrap_or_default().to_string()));
        }
        let (Some(topic), Some(stamp)) = (m["topic"].as_str(), m["stamp"].as_f64()) else {
            continue;
        };
        if topic == topics[0] {
            if let Some(first) = trace.first_stamp() {
                if stamp >= first + a.duration - STAMP_EPS {
                    break;
                }
            }
        }
        trace.push(topic, stamp, &m["body"]);
    }
    if trace.rows() == 0 {
        return Err(CliError::Failed("no data received".into()));
    }
    trace.save(&a.csv)?;
    println!("record: {} rows -> {}", trace.rows(), a.csv.display());
    Ok(())
}
