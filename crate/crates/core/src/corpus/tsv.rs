use std::fs;
use std::path::Path;

use super::{Dataset, Pair};
use crate::error::{Error, Result};

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses `source<TAB>target` lines. Blank lines are skipped; `origin` names the
/// input in error messages.
pub fn parse_tsv(text: &str, origin: &str) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| Error::Parse {
            path: origin.into(),
            line: i + 1,
            message: message.to_string(),
        };
        let (source, target) = line.split_once('\t').ok_or_else(|| parse_err("expected `source<TAB>target`, found no tab"))?;
        if target.contains('\t') {
            return Err(parse_err("more than one tab"));
        }
        pairs.push(Pair {
            source: tokenize(source),
            target: tokenize(target),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Empty("corpus file"));
    }
    Ok(pairs)
}

/// Reads a TSV corpus and partitions it with `split_seed`.
pub fn load_tsv(path: &Path, split_seed: u64) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let pairs = parse_tsv(&text, &path.display().to_string())?;
    Ok(Dataset::new(pairs, split_seed))
}

/// Writes pairs as space-joined tokens, one pair per line.
pub fn write_tsv(pairs: &[Pair], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.source.join(" "));
        out.push('\t');
        out.push_str(&p.target.join(" "));
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}
