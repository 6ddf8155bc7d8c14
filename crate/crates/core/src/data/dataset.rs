use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::{encode, preprocess, Vocabulary};

/// Raw labelled document, one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub codes: BTreeSet<String>,
}

/// Encoded document: token ids plus multi-hot labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub labels: Vec<bool>,
}

impl LabeledExample {
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
    }
}

/// Ordered set of label codes; position = label index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() || c.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid label code {c:?}")));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate label code {c}")));
            }
        }
        Ok(LabelSpace { codes, index })
    }

    /// Sorted union of all codes in `docs`.
    pub fn from_documents(docs: &[Document]) -> Self {
        let codes: BTreeSet<&String> = docs.iter().flat_map(|d| &d.codes).collect();
        LabelSpace::new(codes.into_iter().cloned().collect()).expect("codes come from a set")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn index(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn multi_hot(&self, codes: &BTreeSet<String>) -> Result<Vec<bool>> {
        let mut out = vec![false; self.len()];
        for c in codes {
            let i = self
                .index(c)
                .ok_or_else(|| Error::Config(format!("code {c} is not in the label space")))?;
            out[i] = true;
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.codes {
            writeln!(out, "{c}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let codes = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        LabelSpace::new(codes).map_err(|e| Error::parse("label file", e.to_string()))
    }
}

/// Outcome of encoding a document: the example and whether truncation happened.
pub fn encode_document(
    doc: &Document,
    vocab: &Vocabulary,
    labels: &LabelSpace,
    max_len: usize,
) -> Result<(LabeledExample, bool)> {
    let all = preprocess(&doc.text, usize::MAX);
    let truncated = all.len() > max_len;
    let tokens = &all[..all.len().min(max_len)];
    Ok((
        LabeledExample {
            id: doc.id.clone(),
            token_ids: encode(tokens, vocab),
            labels: labels.multi_hot(&doc.codes)?,
        },
        truncated,
    ))
}

/// Encodes every document; also returns how many were truncated.
pub fn encode_split(
    docs: &[Document],
    vocab: &Vocabulary,
    labels: &LabelSpace,
    max_len: usize,
) -> Result<(Vec<LabeledExample>, usize)> {
    let mut truncated = 0;
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let (ex, cut) = encode_document(d, vocab, labels, max_len)?;
        truncated += usize::from(cut);
        out.push(ex);
    }
    Ok((out, truncated))
}

pub fn read_documents<R: BufRead>(input: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::parse(
                format!("line {}", i + 1),
                format!("duplicate document id {}", doc.id),
            ));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_documents<W: Write>(mut out: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a line-delimited dataset file.
pub fn load_dataset(path: &Path) -> Result<Vec<Document>> {
    read_documents(BufReader::new(File::open(path)?))
}

pub fn save_dataset(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_documents(&mut out, docs)?;
    out.flush()?;
    Ok(())
}
