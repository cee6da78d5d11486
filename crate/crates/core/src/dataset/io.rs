//! JSON-lines persistence for contrast pairs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::sample::ContrastPair;
use crate::error::{Error, Result};

pub fn write_pairs_jsonl(path: &Path, pairs: &[ContrastPair]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<ContrastPair>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusConfig};
    use crate::model::SymbolTokenizer;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/pairs.jsonl");
        let tok = SymbolTokenizer::corpus_default();
        let c = generate_corpus(&CorpusConfig { limit: Some(12), ..Default::default() }, &tok).unwrap();
        write_pairs_jsonl(&path, &c.pairs).unwrap();
        assert_eq!(read_pairs_jsonl(&path).unwrap(), c.pairs);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "\n{not json}\n").unwrap();
        let err = read_pairs_jsonl(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
