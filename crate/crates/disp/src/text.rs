//! Tokenization, dataset and embedding-corpus I/O, and the shared
//! document/perturbation data model used by every other module.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors raised by loaders and by data-model constructors.
#[derive(Debug, Error)]
pub enum TextError {
    #[error("token must be non-empty")]
    EmptyToken,
    #[error("token {0:?} contains whitespace")]
    TokenWithWhitespace(String),
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: expected {expected} embedding values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: non-finite embedding value {value:?}")]
    NonFiniteValue { line: usize, value: String },
    #[error("header declared {declared} rows, file holds {found}")]
    RowCountMismatch { declared: usize, found: usize },
    #[error("line {line}: missing tab separator between label and text")]
    MissingSeparator { line: usize },
    #[error("line {line}: invalid label {value:?}")]
    InvalidLabel { line: usize, value: String },
    #[error("line {line}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("line {line}: document is empty after tokenization")]
    EmptyDocument { line: usize },
    #[error("dataset must declare at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A single surface token: non-empty, free of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self, TextError> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(TextError::EmptyToken);
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(TextError::TokenWithWhitespace(surface));
        }
        Ok(Token(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Number of Unicode scalar values in the surface.
    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }

    /// True when every character is alphabetic (attack-eligible shape).
    pub fn is_alphabetic(&self) -> bool {
        self.0.chars().all(char::is_alphabetic)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Token {
    type Error = TextError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(value: Token) -> Self {
        value.0
    }
}

/// The five supported attack operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Insertion,
    Deletion,
    Swap,
    Random,
    Embed,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Insertion,
        AttackKind::Deletion,
        AttackKind::Swap,
        AttackKind::Random,
        AttackKind::Embed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Insertion => "insertion",
            AttackKind::Deletion => "deletion",
            AttackKind::Swap => "swap",
            AttackKind::Random => "random",
            AttackKind::Embed => "embed",
        }
    }

    /// Word-level attacks replace the whole token with a corpus token.
    pub fn is_word_level(&self) -> bool {
        matches!(self, AttackKind::Random | AttackKind::Embed)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled token sequence; the unit of attack, defense, and classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub tokens: Vec<Token>,
}

impl Document {
    pub fn new(id: impl Into<String>, label: usize, tokens: Vec<Token>) -> Self {
        assert!(!tokens.is_empty(), "documents hold at least one token");
        Document {
            id: id.into(),
            label,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surfaces joined by single spaces.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(t.as_str());
        }
        out
    }
}

/// Ground truth for one applied perturbation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub doc_id: String,
    pub position: usize,
    pub kind: AttackKind,
    pub original: Token,
    pub replacement: Token,
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A set of labeled documents with a declared class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub num_classes: usize,
    pub split: Split,
}

/// n distinct tokens with k-dimensional vectors; the recovery search space.
#[derive(Debug, Clone)]
pub struct EmbeddingCorpus {
    tokens: Vec<Token>,
    index: HashMap<String, usize>,
    values: Vec<f32>,
    k: usize,
}

impl EmbeddingCorpus {
    /// Build a corpus from rows. Rejects duplicates, non-finite values, and
    /// rows of the wrong width.
    pub fn new(tokens: Vec<Token>, values: Vec<f32>, k: usize) -> Result<Self, TextError> {
        assert_eq!(values.len(), tokens.len() * k, "vector buffer shape");
        let mut index = HashMap::with_capacity(tokens.len());
        for (row, token) in tokens.iter().enumerate() {
            if index.insert(token.as_str().to_owned(), row).is_some() {
                return Err(TextError::DuplicateToken {
                    line: row + 2,
                    token: token.as_str().to_owned(),
                });
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(TextError::NonFiniteValue {
                line: bad / k + 2,
                value: values[bad].to_string(),
            });
        }
        Ok(EmbeddingCorpus {
            tokens,
            index,
            values,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn token(&self, row: usize) -> &Token {
        &self.tokens[row]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.values[row * self.k..(row + 1) * self.k]
    }

    /// Row of the stored token equal to the query, if any.
    pub fn lookup(&self, surface: &str) -> Option<usize> {
        self.index.get(surface).copied()
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.index.contains_key(token.as_str())
    }

    /// SHA-256 over a canonical encoding of (n, k, tokens, vectors); used to
    /// pair serialized indexes with the corpus they were built from.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"disp-corpus-v1");
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.k as u64).to_le_bytes());
        for (row, token) in self.tokens.iter().enumerate() {
            hasher.update(token.as_str().as_bytes());
            hasher.update([0u8]);
            for v in self.vector(row) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Lowercase, whitespace-split, with leading/trailing punctuation detached
/// into single-character tokens. Interior punctuation is preserved.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && !chars[start].is_alphanumeric() {
            start += 1;
        }
        while end > start && !chars[end - 1].is_alphanumeric() {
            end -= 1;
        }
        for &c in &chars[..start] {
            out.push(Token(c.to_string()));
        }
        if start < end {
            out.push(Token(chars[start..end].iter().collect()));
        }
        for &c in &chars[end..] {
            out.push(Token(c.to_string()));
        }
    }
    out
}

/// Parse a text embedding file: header line `n k`, then `n` lines of
/// `token v_1 ... v_k`.
pub fn load_embedding_corpus(path: impl AsRef<Path>) -> Result<EmbeddingCorpus, TextError> {
    parse_embedding_corpus(&fs::read_to_string(path)?)
}

pub fn parse_embedding_corpus(contents: &str) -> Result<EmbeddingCorpus, TextError> {
    let mut lines = contents.lines().enumerate();
    let (_, header) = lines.next().ok_or(TextError::MalformedHeader {
        line: 1,
        reason: "empty file".into(),
    })?;
    let mut parts = header.split_whitespace();
    let n: usize = parse_header_field(parts.next(), 1)?;
    let k: usize = parse_header_field(parts.next(), 1)?;
    if parts.next().is_some() {
        return Err(TextError::MalformedHeader {
            line: 1,
            reason: "expected exactly two integers".into(),
        });
    }
    if k == 0 {
        return Err(TextError::MalformedHeader {
            line: 1,
            reason: "embedding dimension must be positive".into(),
        });
    }

    let mut tokens = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * k);
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(n);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let surface = fields.next().expect("non-blank line has a first field");
        let token = Token::new(surface)?;
        if seen.insert(surface.to_owned(), line_no).is_some() {
            return Err(TextError::DuplicateToken {
                line: line_no,
                token: surface.to_owned(),
            });
        }
        let mut row = Vec::with_capacity(k);
        for field in fields {
            let v: f32 = field.parse().map_err(|_| TextError::NonFiniteValue {
                line: line_no,
                value: field.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(TextError::NonFiniteValue {
                    line: line_no,
                    value: field.to_owned(),
                });
            }
            row.push(v);
        }
        if row.len() != k {
            return Err(TextError::DimensionMismatch {
                line: line_no,
                expected: k,
                found: row.len(),
            });
        }
        tokens.push(token);
        values.extend_from_slice(&row);
    }
    if tokens.len() != n {
        return Err(TextError::RowCountMismatch {
            declared: n,
            found: tokens.len(),
        });
    }
    EmbeddingCorpus::new(tokens, values, k)
}

fn parse_header_field(field: Option<&str>, line: usize) -> Result<usize, TextError> {
    field
        .ok_or_else(|| TextError::MalformedHeader {
            line,
            reason: "expected two integers".into(),
        })?
        .parse()
        .map_err(|_| TextError::MalformedHeader {
            line,
            reason: format!("non-integer field {:?}", field.unwrap_or("")),
        })
}

/// Write a corpus in the same text layout `load_embedding_corpus` reads.
/// Float formatting round-trips bit-exactly.
pub fn save_embedding_corpus(
    corpus: &EmbeddingCorpus,
    path: impl AsRef<Path>,
) -> Result<(), TextError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{} {}", corpus.n(), corpus.k())?;
    for row in 0..corpus.n() {
        write!(out, "{}", corpus.token(row))?;
        for v in corpus.vector(row) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a TSV dataset: one `label<TAB>text` record per line. Document ids
/// are assigned from zero-based line order.
pub fn load_dataset(
    path: impl AsRef<Path>,
    num_classes: usize,
    split: Split,
) -> Result<Dataset, TextError> {
    parse_dataset(&fs::read_to_string(path)?, num_classes, split)
}

pub fn parse_dataset(contents: &str, num_classes: usize, split: Split) -> Result<Dataset, TextError> {
    if num_classes < 2 {
        return Err(TextError::TooFewClasses(num_classes));
    }
    let mut documents = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (label_str, body) = line
            .split_once('\t')
            .ok_or(TextError::MissingSeparator { line: line_no })?;
        let label: usize = label_str.trim().parse().map_err(|_| TextError::InvalidLabel {
            line: line_no,
            value: label_str.to_owned(),
        })?;
        if label >= num_classes {
            return Err(TextError::LabelOutOfRange {
                line: line_no,
                label,
                num_classes,
            });
        }
        let tokens = tokenize(body);
        if tokens.is_empty() {
            return Err(TextError::EmptyDocument { line: line_no });
        }
        documents.push(Document::new(format!("doc-{idx:06}"), label, tokens));
    }
    Ok(Dataset {
        documents,
        num_classes,
        split,
    })
}

/// Write documents as `label<TAB>text`, one per line, in order.
pub fn save_dataset(documents: &[Document], path: impl AsRef<Path>) -> Result<(), TextError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for doc in documents {
        writeln!(out, "{}\t{}", doc.label, doc.text())?;
    }
    out.flush()?;
    Ok(())
}

/// Token-to-id mapping shared by all encoders: three reserved ids followed by
/// the embedding-corpus tokens in row order. Out-of-vocabulary surfaces map
/// to [UNK]; attacks create such surfaces by design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const MASK: usize = 2;

    pub fn from_corpus(corpus: &EmbeddingCorpus) -> Self {
        Self::from_surfaces(corpus.tokens().iter().map(|t| t.as_str()))
    }

    pub fn from_surfaces<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> Self {
        let mut id_to_token = vec!["[PAD]".to_owned(), "[UNK]".to_owned(), "[MASK]".to_owned()];
        let mut token_to_id = HashMap::new();
        for (i, s) in id_to_token.iter().enumerate() {
            token_to_id.insert(s.clone(), i);
        }
        for surface in surfaces {
            if !token_to_id.contains_key(surface) {
                token_to_id.insert(surface.to_owned(), id_to_token.len());
                id_to_token.push(surface.to_owned());
            }
        }
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Vocabulary id for a surface; unknown surfaces yield [UNK].
    pub fn id(&self, surface: &str) -> usize {
        self.token_to_id.get(surface).copied().unwrap_or(Self::UNK)
    }

    pub fn surface(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn ids_for(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_str())).collect()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.id_to_token
    }
}
