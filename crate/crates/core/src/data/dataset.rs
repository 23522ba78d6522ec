//! JSONL structure datasets, one protein per line:
//!
//! ```text
//! {"id": "...", "chains": [{"chain_id": "A", "seq": "ACD...",
//!   "coords": {"N": [[x,y,z],...], "CA": [...], "C": [...], "O": [...] | null}}]}
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::structure::{BackboneStructure, Chain, ResidueAtoms, SequenceState, Vec3};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    id: String,
    chains: Vec<ChainJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainJson {
    chain_id: String,
    #[serde(default)]
    seq: Option<String>,
    coords: CoordsJson,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct CoordsJson {
    N: Vec<Vec<f64>>,
    CA: Vec<Vec<f64>>,
    C: Vec<Vec<f64>>,
    #[serde(default)]
    O: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub records: usize,
    /// Residue letters outside the 20 canonical amino acids (mapped to UNK).
    pub unknown_residues: usize,
}

#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub records: Vec<(BackboneStructure, SequenceState)>,
    pub stats: ParseStats,
}

impl ParsedDataset {
    pub fn structures(&self) -> Vec<BackboneStructure> {
        self.records.iter().map(|(s, _)| s.clone()).collect()
    }
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<ParsedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_lines(&text, path)
}

pub fn parse_dataset_str(text: &str) -> Result<ParsedDataset> {
    parse_lines(text, Path::new("<memory>"))
}

fn parse_lines(text: &str, path: &Path) -> Result<ParsedDataset> {
    let mut stats = ParseStats::default();
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: PathBuf::from(path),
            line: lineno + 1,
            message,
        };
        let rec: RecordJson = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let (structure, unknown) = convert(rec).map_err(err)?;
        structure.validate().map_err(|e| err(e.to_string()))?;
        stats.unknown_residues += unknown;
        stats.records += 1;
        let state = match &structure.native {
            Some(native) => SequenceState::fully_observed(native.clone()),
            None => SequenceState::fully_masked(structure.len()),
        };
        records.push((structure, state));
    }
    if stats.unknown_residues > 0 {
        log::warn!(
            "{}: {} unknown residue letters mapped to UNK",
            path.display(),
            stats.unknown_residues
        );
    }
    Ok(ParsedDataset { records, stats })
}

fn to_vec3(rows: &[Vec<f64>], atom: &str, chain: &str) -> std::result::Result<Vec<Vec3>, String> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            &[x, y, z] => Ok([x, y, z]),
            _ => Err(format!(
                "chain `{chain}` atom {atom} residue {i}: expected 3 coordinates, got {}",
                r.len()
            )),
        })
        .collect()
}

fn convert(rec: RecordJson) -> std::result::Result<(BackboneStructure, usize), String> {
    let mut chains = Vec::with_capacity(rec.chains.len());
    let mut native = Vec::new();
    let mut with_seq = 0;
    let mut unknown = 0;
    for ch in &rec.chains {
        let n = to_vec3(&ch.coords.N, "N", &ch.chain_id)?;
        let ca = to_vec3(&ch.coords.CA, "CA", &ch.chain_id)?;
        let c = to_vec3(&ch.coords.C, "C", &ch.chain_id)?;
        let o = ch
            .coords
            .O
            .as_ref()
            .map(|o| to_vec3(o, "O", &ch.chain_id))
            .transpose()?;
        let len = ca.len();
        if n.len() != len || c.len() != len || o.as_ref().is_some_and(|o| o.len() != len) {
            return Err(format!(
                "chain `{}`: atom arrays have different lengths",
                ch.chain_id
            ));
        }
        let residues = (0..len)
            .map(|i| ResidueAtoms {
                n: n[i],
                ca: ca[i],
                c: c[i],
                o: o.as_ref().map(|o| o[i]),
            })
            .collect();
        if let Some(seq) = ch.seq.as_deref().filter(|s| !s.is_empty()) {
            let (tokens, unk) = Vocabulary::tokenize(seq);
            if tokens.len() != len {
                return Err(format!(
                    "chain `{}`: sequence length {} does not match {} residues",
                    ch.chain_id,
                    tokens.len(),
                    len
                ));
            }
            unknown += unk;
            native.extend(tokens);
            with_seq += 1;
        }
        chains.push(Chain {
            id: ch.chain_id.clone(),
            residues,
        });
    }
    if with_seq != 0 && with_seq != chains.len() {
        return Err("either every chain or no chain must carry a sequence".into());
    }
    let native = (with_seq > 0).then_some(native);
    Ok((
        BackboneStructure {
            id: rec.id,
            chains,
            native,
        },
        unknown,
    ))
}

fn to_record(s: &BackboneStructure) -> RecordJson {
    let mut offset = 0;
    let chains = s
        .chains
        .iter()
        .map(|ch| {
            let len = ch.residues.len();
            let seq = s
                .native
                .as_ref()
                .map(|n| Vocabulary::detokenize(&n[offset..offset + len]));
            offset += len;
            let has_o = ch.residues.iter().all(|r| r.o.is_some());
            CoordsJson {
                N: ch.residues.iter().map(|r| r.n.to_vec()).collect(),
                CA: ch.residues.iter().map(|r| r.ca.to_vec()).collect(),
                C: ch.residues.iter().map(|r| r.c.to_vec()).collect(),
                O: has_o.then(|| ch.residues.iter().map(|r| r.o.unwrap().to_vec()).collect()),
            }
            .into_chain(ch.id.clone(), seq)
        })
        .collect();
    RecordJson {
        id: s.id.clone(),
        chains,
    }
}

impl CoordsJson {
    fn into_chain(self, chain_id: String, seq: Option<String>) -> ChainJson {
        ChainJson {
            chain_id,
            seq,
            coords: self,
        }
    }
}

pub fn write_dataset(path: impl AsRef<Path>, structures: &[BackboneStructure]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for s in structures {
        serde_json::to_writer(&mut out, &to_record(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UNK;

    fn chain_json(id: &str, seq: &str, start: f64) -> String {
        let n = seq.len();
        let pts = |dx: f64, dy: f64| {
            (0..n)
                .map(|i| format!("[{},{},0.0]", start + 3.8 * i as f64 + dx, dy))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            r#"{{"chain_id":"{id}","seq":"{seq}","coords":{{"N":[{}],"CA":[{}],"C":[{}],"O":null}}}}"#,
            pts(-1.0, 0.5),
            pts(0.0, 0.0),
            pts(1.0, 0.5)
        )
    }

    #[test]
    fn single_record() {
        let line = format!(
            r#"{{"id":"p1","chains":[{}]}}"#,
            chain_json("A", "ACD", 0.0)
        );
        let ds = parse_dataset_str(&line).unwrap();
        assert_eq!(ds.records.len(), 1);
        let (_, state) = &ds.records[0];
        assert_eq!(state.tokens, vec![0, 1, 2]);
        assert!(state.observed.iter().all(|&o| o));
    }

    #[test]
    fn unknown_letter_counts_warning() {
        let line = format!(
            r#"{{"id":"p1","chains":[{}]}}"#,
            chain_json("A", "ABD", 0.0)
        );
        let ds = parse_dataset_str(&line).unwrap();
        assert_eq!(ds.records[0].1.tokens[1], UNK);
        assert_eq!(ds.stats.unknown_residues, 1);
    }

    /// Independent reading of the fixture: count residues per chain by hand
    /// and mark the chain boundary.
    #[test]
    fn two_chains_insert_break() {
        let line = format!(
            r#"{{"id":"p2","chains":[{},{}]}}"#,
            chain_json("A", "ACDE", 0.0),
            chain_json("B", "FGH", 100.0)
        );
        let ds = parse_dataset_str(&line).unwrap();
        let (s, state) = &ds.records[0];

        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let lens: Vec<usize> = v["chains"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["seq"].as_str().unwrap().len())
            .collect();
        let total: usize = lens.iter().sum();
        let mut expected_breaks = vec![false; total];
        let mut acc = 0;
        for l in &lens {
            acc += l;
            expected_breaks[acc - 1] = true;
        }

        assert_eq!(state.len(), 7);
        assert_eq!(s.len(), total);
        assert_eq!(s.chain_breaks(), expected_breaks);
        assert!(s.chain_breaks()[3]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = format!(
            r#"{{"id":"p1","chains":[{}]}}"#,
            chain_json("A", "ACD", 0.0)
        );
        let text = format!("{good}\n{{not json\n");
        match parse_dataset_str(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_coordinate_arity() {
        let line = r#"{"id":"p","chains":[{"chain_id":"A","seq":"A","coords":{"N":[[0,0]],"CA":[[1,0,0]],"C":[[2,0,0]],"O":null}}]}"#;
        match parse_dataset_str(line) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("expected 3 coordinates"), "{message}");
            }
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn write_then_parse_round_trips() {
        let line = format!(
            r#"{{"id":"p2","chains":[{},{}]}}"#,
            chain_json("A", "ACDE", 0.0),
            chain_json("B", "FGH", 100.0)
        );
        let ds = parse_dataset_str(&line).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_dataset(&path, &ds.structures()).unwrap();
        let again = parse_dataset(&path).unwrap();
        assert_eq!(again.structures(), ds.structures());
    }
}
