//! Checkpoint files, the metrics log and CSV exports.
//!
//! Layouts are described byte for byte in the guide's formats chapter.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer, MAGIC_LEN};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamState, ParamStore, SliceInfo};
use crate::rng::GeneratorState;

const CKPT_MAGIC: &[u8; MAGIC_LEN] = b"TWOSTAGECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainerKind {
    Ppo,
    Bc,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Ppo => "ppo",
            TrainerKind::Bc => "bc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ppo" => Some(TrainerKind::Ppo),
            "bc" => Some(TrainerKind::Bc),
            _ => None,
        }
    }
}

/// Position of the behaviour-cloning pair sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerState {
    pub epoch: u64,
    pub cursor: u64,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run_id: String,
    pub kind: TrainerKind,
    pub step: u64,
    pub env_hash: u64,
    pub params: ParamStore,
    pub adam: AdamState,
    pub generator: GeneratorState,
    pub sampler: SamplerState,
    /// Latest evaluation `(train, test)` success rates, if any.
    pub rates: Option<(f64, f64)>,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.run_id.contains(['\n', '\r']) {
        return Err(invalid("run id may not contain line breaks"));
    }
    let n = ckpt.params.len();
    if ckpt.adam.m.len() != n || ckpt.adam.v.len() != n {
        return Err(invalid("optimizer moments do not match the parameter count"));
    }
    let mut meta = String::new();
    let a = &ckpt.adam;
    let g = &ckpt.generator;
    let _ = writeln!(meta, "run_id={}", ckpt.run_id);
    let _ = writeln!(meta, "kind={}", ckpt.kind.name());
    let _ = writeln!(meta, "step={}", ckpt.step);
    let _ = writeln!(meta, "env_hash={:016x}", ckpt.env_hash);
    let _ = writeln!(meta, "gen.seed={}", g.seed);
    let _ = writeln!(meta, "gen.stream={}", g.stream);
    let _ = writeln!(meta, "gen.word_pos={}", g.word_pos);
    let _ = writeln!(meta, "adam.t={}", a.t);
    let _ = writeln!(meta, "adam.lr={}", hex(a.lr));
    let _ = writeln!(meta, "adam.beta1={}", hex(a.beta1));
    let _ = writeln!(meta, "adam.beta2={}", hex(a.beta2));
    let _ = writeln!(meta, "adam.eps={}", hex(a.eps));
    let _ = writeln!(meta, "sampler.epoch={}", ckpt.sampler.epoch);
    let _ = writeln!(meta, "sampler.cursor={}", ckpt.sampler.cursor);
    match ckpt.rates {
        Some((tr, te)) => {
            let _ = writeln!(meta, "rates={},{}", hex(tr), hex(te));
        }
        None => {
            let _ = writeln!(meta, "rates=none");
        }
    }
    let _ = writeln!(meta, "params.len={n}");
    for s in ckpt.params.slices() {
        if s.name.contains([',', '\n', '\r']) {
            return Err(invalid(format!("slice name '{}' cannot be stored", s.name)));
        }
        let _ = writeln!(meta, "slice={},{},{},{}", s.name, s.offset, s.rows, s.cols);
    }
    let mut w = Writer::header(CKPT_MAGIC, CHECKPOINT_VERSION);
    w.bytes(meta.as_bytes());
    w.f64s(ckpt.params.values());
    w.f64s(&a.m);
    w.f64s(&a.v);
    // Write-then-rename so a crash never leaves a half-written checkpoint
    // under the final name.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, w.finish())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

fn parse_hex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|_| corrupt(format!("bad hex real '{s}'")))
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| corrupt(format!("bad value for {key}: '{s}'")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = match std::fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let mut r = Reader::open(&data, CKPT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let meta = std::str::from_utf8(r.bytes()?).map_err(|_| corrupt("metadata is not UTF-8"))?;
    let mut fields = std::collections::HashMap::new();
    let mut slices = Vec::new();
    for line in meta.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("bad metadata line '{line}'")))?;
        if k == "slice" {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != 4 {
                return Err(corrupt(format!("bad slice entry '{v}'")));
            }
            slices.push(SliceInfo {
                name: parts[0].to_string(),
                offset: parse_num("slice offset", parts[1])?,
                rows: parse_num("slice rows", parts[2])?,
                cols: parse_num("slice cols", parts[3])?,
            });
        } else if fields.insert(k, v).is_some() {
            return Err(corrupt(format!("duplicate metadata key '{k}'")));
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| corrupt(format!("missing metadata key '{k}'")));
    let kind = TrainerKind::parse(get("kind")?).ok_or_else(|| corrupt("unknown trainer kind"))?;
    let n: usize = parse_num("params.len", get("params.len")?)?;
    let rates = match get("rates")? {
        "none" => None,
        s => {
            let (a, b) = s.split_once(',').ok_or_else(|| corrupt("bad rates"))?;
            Some((parse_hex(a)?, parse_hex(b)?))
        }
    };
    let values = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    r.expect_end()?;
    let params = ParamStore::from_parts(values, slices).map_err(|e| corrupt(format!("slice directory: {e}")))?;
    let adam = AdamState {
        m,
        v,
        t: parse_num("adam.t", get("adam.t")?)?,
        lr: parse_hex(get("adam.lr")?)?,
        beta1: parse_hex(get("adam.beta1")?)?,
        beta2: parse_hex(get("adam.beta2")?)?,
        eps: parse_hex(get("adam.eps")?)?,
    };
    Ok(Checkpoint {
        run_id: get("run_id")?.to_string(),
        kind,
        step: parse_num("step", get("step")?)?,
        env_hash: u64::from_str_radix(get("env_hash")?, 16).map_err(|_| corrupt("bad env_hash"))?,
        params,
        adam,
        generator: GeneratorState {
            seed: parse_num("gen.seed", get("gen.seed")?)?,
            stream: parse_num("gen.stream", get("gen.stream")?)?,
            word_pos: parse_num("gen.word_pos", get("gen.word_pos")?)?,
        },
        sampler: SamplerState {
            epoch: parse_num("sampler.epoch", get("sampler.epoch")?)?,
            cursor: parse_num("sampler.cursor", get("sampler.cursor")?)?,
        },
        rates,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_success: f64,
    pub test_success: f64,
    pub stage: u8,
    /// Seconds since the Unix epoch when the record was written.
    pub wall_clock: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        for r in [self.train_success, self.test_success] {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid(format!("success rate {r} outside [0, 1]")));
            }
        }
        if !(1..=2).contains(&self.stage) {
            return Err(invalid(format!("stage {} is neither 1 nor 2", self.stage)));
        }
        Ok(())
    }

    /// The record without its timestamp, for determinism comparisons.
    pub fn key(&self) -> (u64, u64, u64, u8) {
        (self.step, self.train_success.to_bits(), self.test_success.to_bits(), self.stage)
    }
}

pub fn now_seconds() -> f64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Appends one JSON line. A torn final line left by a crash is cut off
/// first; a step lower than the last logged one is refused.
pub fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<()> {
    record.validate()?;
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
    let len = file.metadata()?.len();
    if len > 0 {
        let (keep, last) = last_complete_line(&mut file, len)?;
        if keep < len {
            file.set_len(keep)?;
        }
        if let Some(line) = last {
            let prev: MetricsRecord = serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?;
            if record.step < prev.step {
                return Err(Error::Ordering { last: prev.step, step: record.step });
            }
        }
    }
    let mut line = serde_json::to_string(record).map_err(|e| Error::Parse(e.to_string()))?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    Ok(())
}

/// Length up to and including the last newline, and the line before it.
fn last_complete_line(file: &mut File, len: u64) -> Result<(u64, Option<String>)> {
    let mut window = 4096u64;
    loop {
        let start = len.saturating_sub(window);
        file.seek(SeekFrom::Start(start))?;
        let mut tail = Vec::new();
        file.take(len - start).read_to_end(&mut tail)?;
        let Some(end) = tail.iter().rposition(|&b| b == b'\n') else {
            if start == 0 {
                return Ok((0, None));
            }
            window *= 2;
            continue;
        };
        let begin = tail[..end].iter().rposition(|&b| b == b'\n').map(|i| i + 1);
        match begin {
            Some(b) => {
                let line = String::from_utf8_lossy(&tail[b..end]).into_owned();
                return Ok((start + end as u64 + 1, Some(line)));
            }
            None if start == 0 => {
                let line = String::from_utf8_lossy(&tail[..end]).into_owned();
                return Ok((end as u64 + 1, Some(line)));
            }
            None => window *= 2,
        }
    }
}

/// Every complete line of a metrics log; a torn trailing line is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}

/// One evaluation as it appears in a trend line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrendPoint {
    pub step: u64,
    pub train_success: f64,
    pub test_success: f64,
    pub stage: u8,
}

pub const TRENDLINE_HEADER: &str = "step,train_success,test_success,stage";
pub const TABLE_HEADER: &str = "row,alpha,beta,batch,samples,train_success,test_success,seed,stage2_steps";

pub fn export_trendline(history: &[TrendPoint], path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(invalid("nothing to export"));
    }
    let mut out = String::from(TRENDLINE_HEADER);
    out.push('\n');
    for p in history {
        let _ = writeln!(out, "{},{},{},{}", p.step, p.train_success, p.test_success, p.stage);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One row of the results table. `outcome` is `Err(message)` for a row
/// whose run failed.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub row: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch: usize,
    pub samples: usize,
    pub seed: u64,
    pub stage2_steps: u64,
    pub outcome: std::result::Result<(f64, f64), String>,
}

/// Failed rows carry `failed` in both success columns.
pub fn export_table(rows: &[TableRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(invalid("nothing to export"));
    }
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let (tr, te) = match &r.outcome {
            Ok((tr, te)) => (tr.to_string(), te.to_string()),
            Err(_) => ("failed".to_string(), "failed".to_string()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.row, r.alpha, r.beta, r.batch, r.samples, tr, te, r.seed, r.stage2_steps
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
