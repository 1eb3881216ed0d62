//! Script corpus ingestion, command extraction, labeled datasets and
//! stratified splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::risk::RiskClass;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("class {0} has {1} samples; at least {2} are needed")]
    ClassTooSmall(RiskClass, usize, usize),
    #[error("ratios must sum to 1 (got {0})")]
    BadRatios(f64),
    #[error("dataset file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot generate {n} commands: at least {min} are needed to realize every class")]
    TooSmall { n: usize, min: usize },
    #[error("command {0:?} contains a line break")]
    Multiline(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Provenance {
    Template(String),
    File(PathBuf),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledCommand {
    pub command: String,
    pub label: RiskClass,
    pub provenance: Provenance,
}

impl LabeledCommand {
    pub fn new(command: impl Into<String>, label: RiskClass) -> LabeledCommand {
        LabeledCommand { command: command.into(), label, provenance: Provenance::Unknown }
    }
}

/// Per-class sample counts in `RiskClass` index order.
pub fn class_counts(data: &[LabeledCommand]) -> [usize; 3] {
    let mut counts = [0; 3];
    for d in data {
        counts[d.label.index()] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct ScriptFile {
    pub origin: PathBuf,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct SkippedFile {
    pub origin: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub scripts: Vec<ScriptFile>,
    pub skipped: Vec<SkippedFile>,
}

impl Corpus {
    /// One origin path per line, in collection order.
    pub fn manifest(&self) -> String {
        self.scripts.iter().map(|s| format!("{}\n", s.origin.display())).collect()
    }
}

fn is_bash_file(path: &Path, text: &[u8]) -> bool {
    path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".sh")) || text.starts_with(b"#!")
}

/// Walk `root` in lexicographic order and keep every file that ends in `.sh`
/// or whose first line starts with a shebang. Unreadable entries are recorded
/// in `Corpus::skipped` rather than aborting the walk.
pub fn collect_bash_files(root: &Path) -> Result<Corpus, DatasetError> {
    fs::metadata(root).map_err(|source| DatasetError::Io { path: root.to_path_buf(), source })?;
    let mut corpus = Corpus::default();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let origin = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
                log::warn!("skipping {}: {e}", origin.display());
                corpus.skipped.push(SkippedFile { origin, reason: e.to_string() });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        match fs::read(path) {
            Ok(bytes) => {
                if is_bash_file(path, &bytes) {
                    corpus.scripts.push(ScriptFile {
                        origin: path.to_path_buf(),
                        text: String::from_utf8_lossy(&bytes).into_owned(),
                    });
                }
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                corpus.skipped.push(SkippedFile { origin: path.to_path_buf(), reason: e.to_string() });
            }
        }
    }
    Ok(corpus)
}

/// Split a script into logical commands.
///
/// Backslash-continued lines are joined (the backslash is dropped), blank
/// lines and full-line comments (including the shebang) are dropped. No
/// further shell parsing is attempted.
pub fn extract_commands(script: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for line in script.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(head) = line.strip_suffix('\\') {
            pending.push_str(head);
            continue;
        }
        pending.push_str(line);
        push_command(&mut out, &pending);
        pending.clear();
    }
    push_command(&mut out, &pending);
    out
}

fn push_command(out: &mut Vec<String>, logical: &str) {
    let cmd = logical.trim();
    if cmd.is_empty() || cmd.starts_with('#') {
        return;
    }
    out.push(cmd.to_string());
}

/// Split proportions for train/dev/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.7, 0.2, 0.1])
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<LabeledCommand>,
    pub dev: Vec<LabeledCommand>,
    pub test: Vec<LabeledCommand>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Distribute `n` items over `weights` by largest remainder. Ties in the
/// remainder go to the lower index.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Shuffle each class with a seeded generator and cut it proportionally, so
/// every split holds each class within one sample of its exact share.
pub fn stratified_split(data: &[LabeledCommand], ratios: SplitRatios, seed: u64) -> Result<DatasetSplits, DatasetError> {
    let sum: f64 = ratios.0.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || ratios.0.iter().any(|&r| r < 0.0) {
        return Err(DatasetError::BadRatios(sum));
    }
    let mut by_class: BTreeMap<RiskClass, Vec<LabeledCommand>> = BTreeMap::new();
    for d in data {
        by_class.entry(d.label).or_default().push(d.clone());
    }
    for (&class, members) in &by_class {
        if members.len() < 3 {
            return Err(DatasetError::ClassTooSmall(class, members.len(), 3));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<LabeledCommand>; 3] = Default::default();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &ratios.0);
        let mut rest = members.into_iter();
        for (part, n) in parts.iter_mut().zip(counts) {
            part.extend(rest.by_ref().take(n));
        }
    }
    for part in parts.iter_mut() {
        part.shuffle(&mut rng);
    }
    let [train, dev, test] = parts;
    Ok(DatasetSplits { train, dev, test, ratios, seed })
}

/// Header metadata of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl fmt::Display for DatasetHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.ratios;
        write!(f, "dataset v1 seed={} ratios={a},{b},{c}", self.seed)
    }
}

pub fn write_dataset(header: &DatasetHeader, data: &[LabeledCommand]) -> Result<String, DatasetError> {
    let mut out = format!("{header}\n");
    for d in data {
        if d.command.contains(['\n', '\r']) {
            return Err(DatasetError::Multiline(d.command.clone()));
        }
        out.push_str(d.label.as_str());
        out.push('\t');
        out.push_str(&d.command);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_dataset(text: &str) -> Result<(DatasetHeader, Vec<LabeledCommand>), DatasetError> {
    let perr = |line: usize, message: String| DatasetError::Parse { line, message };
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let rest = head.strip_prefix("dataset v1").ok_or_else(|| perr(1, "expected `dataset v1` header".into()))?;
    let mut seed = None;
    let mut ratios = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("seed", v)) => seed = Some(v.parse().map_err(|_| perr(1, format!("bad seed `{v}`")))?),
            Some(("ratios", v)) => {
                let parsed: Result<Vec<f64>, _> = v.split(',').map(str::parse).collect();
                match parsed.as_deref() {
                    Ok([a, b, c]) => ratios = Some([*a, *b, *c]),
                    _ => return Err(perr(1, format!("bad ratios `{v}`"))),
                }
            }
            _ => return Err(perr(1, format!("unknown header field `{field}`"))),
        }
    }
    let header = DatasetHeader {
        seed: seed.ok_or_else(|| perr(1, "missing seed".into()))?,
        ratios: ratios.ok_or_else(|| perr(1, "missing ratios".into()))?,
    };
    let mut data = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (label, command) = line.split_once('\t').ok_or_else(|| perr(i + 1, "expected `<label>\\t<command>`".into()))?;
        let label: RiskClass = label.parse().map_err(|e| perr(i + 1, format!("{e}")))?;
        if command.trim().is_empty() {
            return Err(perr(i + 1, "empty command".into()));
        }
        data.push(LabeledCommand::new(command, label));
    }
    Ok((header, data))
}
