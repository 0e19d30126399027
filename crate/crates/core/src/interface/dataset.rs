use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One passage, question, and N candidate answers with the gold index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiChoiceExample {
    pub id: String,
    pub passage: String,
    /// May be empty (story completion); the model substitutes a placeholder.
    pub question: String,
    pub candidates: Vec<String>,
    pub gold: usize,
}

impl MultiChoiceExample {
    pub fn validate(&self) -> Result<()> {
        let reject = |reason: String| {
            Err(Error::InvalidExample {
                id: self.id.clone(),
                reason,
            })
        };
        if self.candidates.len() < 2 {
            return reject(format!(
                "{} candidates, need at least 2",
                self.candidates.len()
            ));
        }
        if self.gold >= self.candidates.len() {
            return reject(format!(
                "gold {} out of range for {} candidates",
                self.gold,
                self.candidates.len()
            ));
        }
        if self.passage.trim().is_empty() {
            return reject("empty passage".into());
        }
        if let Some(i) = self.candidates.iter().position(|c| c.trim().is_empty()) {
            return reject(format!("candidate {i} is empty"));
        }
        Ok(())
    }
}

/// Line-level failure while reading a JSONL file (1-based line number).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct JsonlRead {
    pub examples: Vec<MultiChoiceExample>,
    pub rejected: Vec<LineError>,
}

/// Reads one example object per line. Blank lines are ignored; bad lines
/// are logged, recorded, and skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<JsonlRead> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = JsonlRead::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<MultiChoiceExample>(&line)
            .map_err(|e| e.to_string())
            .and_then(|ex| ex.validate().map(|_| ex).map_err(|e| e.to_string()));
        match parsed {
            Ok(ex) => out.examples.push(ex),
            Err(reason) => {
                warn!("{}:{}: skipping line: {reason}", path.display(), i + 1);
                out.rejected.push(LineError {
                    line: i + 1,
                    reason,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[MultiChoiceExample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("example serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One RACE passage file as published: parallel question/option/answer lists.
#[derive(Debug, Deserialize)]
struct RaceFile {
    article: String,
    questions: Vec<String>,
    options: Vec<Vec<String>>,
    answers: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct RaceCorpus {
    pub examples: Vec<MultiChoiceExample>,
    /// Example counts keyed by subset (`RACE-M`, `RACE-H`, or `other`).
    pub subset_counts: BTreeMap<String, usize>,
    pub skipped_files: Vec<(PathBuf, String)>,
    pub rejected_examples: Vec<(String, String)>,
}

pub const RACE_OPTIONS: usize = 4;

/// Maps `A`..`D` to 0..3.
pub fn answer_index(letter: &str) -> Option<usize> {
    match letter.trim() {
        "A" => Some(0),
        "B" => Some(1),
        "C" => Some(2),
        "D" => Some(3),
        _ => None,
    }
}

fn subset_of(rel: &Path) -> &'static str {
    for comp in rel.components() {
        match comp.as_os_str().to_str() {
            Some("middle") => return "RACE-M",
            Some("high") => return "RACE-H",
            _ => {}
        }
    }
    "other"
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "txt" || x == "json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads every `*.txt` / `*.json` file below `path`, ordered by relative
/// path, one example per question. Example ids are `<relative path>#<n>`.
pub fn read_race_dir(path: impl AsRef<Path>) -> Result<RaceCorpus> {
    let root = path.as_ref();
    if !root.is_dir() {
        return Err(Error::Format {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();

    let mut corpus = RaceCorpus::default();
    for file in files {
        let rel = file.strip_prefix(root).unwrap_or(&file).to_path_buf();
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let parsed: RaceFile = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                warn!("skipping {}: {e}", file.display());
                corpus.skipped_files.push((file, e.to_string()));
                continue;
            }
        };
        let n = parsed.questions.len();
        if parsed.options.len() != n || parsed.answers.len() != n {
            let reason = format!(
                "{} questions, {} option lists, {} answers",
                n,
                parsed.options.len(),
                parsed.answers.len()
            );
            warn!("skipping {}: {reason}", file.display());
            corpus.skipped_files.push((file, reason));
            continue;
        }
        let stem = rel.with_extension("").to_string_lossy().replace('\\', "/");
        let subset = subset_of(&rel);
        for (qi, ((question, options), answer)) in parsed
            .questions
            .into_iter()
            .zip(parsed.options)
            .zip(parsed.answers)
            .enumerate()
        {
            let id = format!("{stem}#{qi}");
            let gold = match answer_index(&answer) {
                Some(g) => g,
                None => {
                    warn!("rejecting {id}: answer `{answer}` is not one of A-D");
                    corpus
                        .rejected_examples
                        .push((id, format!("answer `{answer}` is not one of A-D")));
                    continue;
                }
            };
            if options.len() != RACE_OPTIONS {
                warn!("rejecting {id}: {} options", options.len());
                corpus.rejected_examples.push((
                    id,
                    format!("{} options, expected {RACE_OPTIONS}", options.len()),
                ));
                continue;
            }
            let ex = MultiChoiceExample {
                id: id.clone(),
                passage: parsed.article.clone(),
                question,
                candidates: options,
                gold,
            };
            if let Err(e) = ex.validate() {
                warn!("rejecting {id}: {e}");
                corpus.rejected_examples.push((id, e.to_string()));
                continue;
            }
            *corpus.subset_counts.entry(subset.to_string()).or_default() += 1;
            corpus.examples.push(ex);
        }
    }
    Ok(corpus)
}
