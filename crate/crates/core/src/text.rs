//! Text normalization and a greedy longest-match subword tokenizer.
//!
//! The vocabulary is trained by iterative pair merging; non-initial pieces
//! carry the `##` continuation prefix.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];
const CONTINUATION: &str = "##";

/// Splits text into normalized words: NFC, lowercase, whitespace collapsed,
/// and every non-alphanumeric symbol isolated as a one-character word.
pub fn normalize_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.nfc().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.push(c);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Normalized text rejoined with single spaces.
pub fn normalize(text: &str) -> String {
    normalize_words(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. The first four entries
    /// must be the reserved tokens and no token may repeat.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(Error::BadFormat(
                "vocabulary must start with [PAD], [UNK], [CLS], [SEP]".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::BadFormat(format!("invalid token at line {}", id + 1)));
            }
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::BadFormat(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for tok in &self.tokens {
            writeln!(out, "{tok}").expect("write to vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(raw.lines().map(str::to_owned).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub surface: String,
}

fn split_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            }
        })
        .collect()
}

fn merged(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b))
}

/// Trains a vocabulary of at most `target_size` entries by repeatedly merging
/// the most frequent adjacent symbol pair (ties broken lexicographically).
pub fn train_vocab<I, S>(texts: I, target_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if target_size < RESERVED.len() + 1 {
        return Err(Error::InvalidConfig(format!(
            "vocab target_size must be >= 5, got {target_size}"
        )));
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        for w in normalize_words(text.as_ref()) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (split_symbols(&w), c))
        .collect();

    let mut symbol_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for (syms, c) in &words {
        for s in syms {
            *symbol_counts.entry(s.as_str()).or_default() += c;
        }
    }
    let mut alphabet: Vec<(&str, u64)> = symbol_counts.into_iter().collect();
    alphabet.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    alphabet.truncate(target_size - RESERVED.len());

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|(s, _)| s.to_string()));
    let mut known: HashMap<String, ()> = tokens.iter().map(|t| (t.clone(), ())).collect();

    while tokens.len() < target_size {
        let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for pair in syms.windows(2) {
                if known.contains_key(&pair[0]) && known.contains_key(&pair[1]) {
                    *pair_counts.entry((&pair[0], &pair[1])).or_default() += c;
                }
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let Some(((a, b), _)) = pair_counts
            .iter()
            .fold(None::<(&(&str, &str), u64)>, |best, (k, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((k, v)),
            })
        else {
            break;
        };
        let (a, b) = (a.to_string(), b.to_string());
        let new_tok = merged(&a, &b);
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = new_tok.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(new_tok.clone(), ()).is_none() {
            tokens.push(new_tok);
        }
    }
    Vocabulary::from_tokens(tokens)
}

/// Greedy longest-match tokenization. Characters with no matching piece emit
/// `[UNK]` one at a time. Output never contains `[CLS]`/`[SEP]`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let words = normalize_words(text);
    let mut ids = Vec::new();
    let mut piece = String::new();
    for word in &words {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.extend(&chars[start..end]);
                if let Some(id) = vocab.id(&piece) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    ids.push(UNK_ID);
                    start += 1;
                }
            }
        }
    }
    TokenSequence {
        ids,
        surface: words.join(" "),
    }
}

/// Inverse of `tokenize` for sequences without `[UNK]`.
pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab.token(id).unwrap_or(UNK);
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}
