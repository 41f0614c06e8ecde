//! Behavior logs to binary feature vectors.
//!
//! A log is treated as plain text: its unigrams are the maximal runs of bytes
//! between whitespace (space, tab, CR, LF), kept verbatim including quotes and
//! punctuation. The dictionary keeps the `top_n` unigrams by document
//! frequency after discarding those that occur in every document, and each
//! log becomes a presence vector over that dictionary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StageRng, CORPUS_STREAM, SPLIT_STREAM};

const DICT_MAGIC: &str = "sigforge-dict";
const DICT_VERSION: &str = "v1";
const NO_LABEL: &str = "-";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub sample_id: String,
    pub text: String,
    pub label: Option<String>,
}

impl Document {
    pub fn new(sample_id: impl Into<String>, text: impl Into<String>, label: Option<String>) -> Self {
        Document {
            sample_id: sample_id.into(),
            text: text.into(),
            label,
        }
    }

    /// Decodes raw log bytes, replacing invalid UTF-8 sequences.
    pub fn from_bytes(sample_id: impl Into<String>, bytes: &[u8], label: Option<String>) -> Self {
        Document::new(sample_id, String::from_utf8_lossy(bytes).into_owned(), label)
    }
}

fn is_token_boundary(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\n')
}

/// Set of distinct unigrams in `text`.
///
/// ```
/// let tokens = sigforge::corpus::tokenize(r#""api": "CreateFileW""#);
/// assert_eq!(tokens.into_iter().collect::<Vec<_>>(), [r#""CreateFileW""#, r#""api":"#]);
/// ```
pub fn tokenize(text: &str) -> BTreeSet<&str> {
    text.split(is_token_boundary).filter(|t| !t.is_empty()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DictEntry {
    pub unigram: String,
    pub doc_frequency: usize,
}

/// Ordered unigram vocabulary; entry `i` defines bit `i` of every feature vector.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    entries: Vec<DictEntry>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    /// Builds a dictionary from entries already in index order.
    pub fn from_entries(entries: Vec<DictEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.unigram.is_empty() || e.unigram.contains(is_token_boundary) {
                return Err(Error::format("dictionary", format!("invalid unigram at entry {i}")));
            }
            if index.insert(e.unigram.clone(), i).is_some() {
                return Err(Error::format("dictionary", format!("duplicate unigram `{}`", e.unigram)));
            }
        }
        Ok(Dictionary { entries, index })
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, unigram: &str) -> Option<usize> {
        self.index.get(unigram).copied()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{DICT_MAGIC} {DICT_VERSION} {}", self.entries.len())?;
        for e in &self.entries {
            writeln!(w, "{}\t{}", e.unigram, e.doc_frequency)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::format("dictionary", e.to_string()))?,
            None => return Err(Error::format("dictionary", "missing header")),
        };
        let mut parts = header.split(' ');
        let count = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(DICT_MAGIC), Some(DICT_VERSION), Some(n), None) => n
                .parse::<usize>()
                .map_err(|_| Error::format("dictionary", format!("bad entry count `{n}`")))?,
            _ => return Err(Error::format("dictionary", format!("bad header `{header}`"))),
        };
        let mut entries = Vec::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format("dictionary", e.to_string()))?;
            let (unigram, df) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("dictionary", format!("line {} lacks a tab", lineno + 2)))?;
            let doc_frequency = df
                .parse()
                .map_err(|_| Error::format("dictionary", format!("bad frequency on line {}", lineno + 2)))?;
            entries.push(DictEntry {
                unigram: unigram.to_owned(),
                doc_frequency,
            });
        }
        if entries.len() != count {
            return Err(Error::format(
                "dictionary",
                format!("header announces {count} entries, found {}", entries.len()),
            ));
        }
        Dictionary::from_entries(entries)
    }
}

/// Document-frequency dictionary over `corpus`, capped at `top_n` entries.
///
/// Unigrams present in every document are dropped before the cut. Order is
/// frequency descending, then byte order ascending.
pub fn build_dictionary(corpus: &[Document], top_n: usize) -> Result<Dictionary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if top_n == 0 {
        return Err(Error::InvalidSpec("top_n must be at least 1".into()));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for token in tokenize(&doc.text) {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    let n_docs = corpus.len();
    let mut ranked: Vec<(&str, usize)> = df.into_iter().filter(|&(_, n)| n < n_docs).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(top_n);
    let entries = ranked
        .into_iter()
        .map(|(u, n)| DictEntry {
            unigram: u.to_owned(),
            doc_frequency: n,
        })
        .collect();
    Dictionary::from_entries(entries)
}

/// Presence vector of one sample over a dictionary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureVector {
    pub sample_id: String,
    pub bits: Vec<bool>,
    pub label: Option<String>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

pub fn encode(doc: &Document, dict: &Dictionary) -> FeatureVector {
    let mut bits = vec![false; dict.len()];
    for token in tokenize(&doc.text) {
        if let Some(i) = dict.position(token) {
            bits[i] = true;
        }
    }
    FeatureVector {
        sample_id: doc.sample_id.clone(),
        bits,
        label: doc.label.clone(),
    }
}

fn check_field(what: &'static str, value: &str) -> std::io::Result<()> {
    if value.is_empty() || value.contains(is_token_boundary) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("{what} `{value}` is empty or contains whitespace"),
        ));
    }
    Ok(())
}

fn check_label(label: &str) -> std::io::Result<()> {
    check_field("label", label)?;
    if label == NO_LABEL {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "`-` is reserved for unlabeled samples",
        ));
    }
    Ok(())
}

/// Writes one `<sample_id>\t<label-or-dash>\t<set indices>` line per vector.
pub fn write_features<W: Write>(mut w: W, vectors: &[FeatureVector]) -> std::io::Result<()> {
    for v in vectors {
        check_field("sample id", &v.sample_id)?;
        let label = match &v.label {
            Some(l) => {
                check_label(l)?;
                l.as_str()
            }
            None => NO_LABEL,
        };
        write!(w, "{}\t{}\t", v.sample_id, label)?;
        for (n, i) in v.set_indices().enumerate() {
            if n > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{i}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a feature file; `width` is the dictionary size.
pub fn read_features<R: BufRead>(r: R, width: usize) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::format("feature file", e.to_string()))?;
        let bad = |detail: &str| Error::format("feature file", format!("line {}: {detail}", lineno + 1));
        let mut fields = line.splitn(3, '\t');
        let (id, label, indices) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(label), Some(indices)) if !id.is_empty() => (id, label, indices),
            _ => return Err(bad("expected three tab-separated fields")),
        };
        let mut bits = vec![false; width];
        let mut prev: Option<usize> = None;
        for tok in indices.split(' ').filter(|t| !t.is_empty()) {
            let i: usize = tok.parse().map_err(|_| bad("bad index"))?;
            if i >= width {
                return Err(bad("index beyond dictionary width"));
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(bad("indices not strictly ascending"));
            }
            bits[i] = true;
            prev = Some(i);
        }
        out.push(FeatureVector {
            sample_id: id.to_owned(),
            bits,
            label: (label != NO_LABEL).then(|| label.to_owned()),
        });
    }
    Ok(out)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[(String, String)]) -> std::io::Result<()> {
    for (id, label) in labels {
        check_field("sample id", id)?;
        check_label(label)?;
        writeln!(w, "{id}\t{label}")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::format("labels file", e.to_string()))?;
        match line.split_once('\t') {
            Some((id, label)) if !id.is_empty() && !label.is_empty() => {
                out.push((id.to_owned(), label.to_owned()))
            }
            _ => {
                return Err(Error::format(
                    "labels file",
                    format!("line {}: expected `<sample_id>\\t<label>`", lineno + 1),
                ))
            }
        }
    }
    Ok(out)
}

/// Shape of a synthetic behavior-log corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_families: usize,
    pub variants_per_family: usize,
    pub base_tokens_per_family: usize,
    pub shared_token_pool: usize,
    pub perturbation_rate: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_families: 6,
            variants_per_family: 300,
            base_tokens_per_family: 400,
            shared_token_pool: 300,
            perturbation_rate: 0.1,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_families", self.n_families),
            ("variants_per_family", self.variants_per_family),
            ("base_tokens_per_family", self.base_tokens_per_family),
            ("shared_token_pool", self.shared_token_pool),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.perturbation_rate) {
            return Err(Error::InvalidSpec(format!(
                "perturbation_rate {} outside [0, 1]",
                self.perturbation_rate
            )));
        }
        Ok(())
    }

    pub fn label(&self, family: usize) -> String {
        let width = digits(self.n_families.saturating_sub(1)).max(2);
        format!("fam{family:0width$}")
    }

    pub fn sample_id(&self, family: usize, variant: usize) -> String {
        let width = digits(self.variants_per_family.saturating_sub(1)).max(4);
        format!("{}_{variant:0width$}", self.label(family))
    }
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

/// Fraction of each family's base behavior drawn from the shared pool.
pub const SHARED_FRACTION: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    /// The unigram of each family's base token, per family.
    pub family_bases: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct LogToken {
    key: &'static str,
    value: String,
}

impl LogToken {
    fn unigram(&self) -> String {
        format!("\"{}\",", self.value)
    }
}

const VERBS: &[&str] = &[
    "Create", "Open", "Query", "Set", "Delete", "Read", "Write", "Map", "Load", "Enum", "Close",
    "Connect", "Inject", "Resume", "Terminate",
];
const NOUNS: &[&str] = &[
    "File", "Key", "Value", "Process", "Thread", "Section", "Mutant", "Service", "Socket", "Library",
    "Token", "Pipe", "Window", "Hook", "Event",
];
const WORDS: &[&str] = &[
    "svchost", "update", "cache", "config", "driver", "loader", "payload", "setup", "temp", "agent",
    "helper", "runtime",
];

fn hex_suffix(rng: &mut StageRng, len: usize) -> String {
    const HEX: &[u8] = b"0123456789abcdef";
    (0..len).map(|_| HEX[rng.random_range(0..16)] as char).collect()
}

fn behavior_value(rng: &mut StageRng, key: &'static str, suffix_len: usize) -> String {
    let word = WORDS.choose(rng).copied().unwrap_or("x");
    let tag = hex_suffix(rng, suffix_len);
    match key {
        "api" => {
            let verb = VERBS.choose(rng).copied().unwrap_or("Do");
            let noun = NOUNS.choose(rng).copied().unwrap_or("It");
            format!("Nt{verb}{noun}_{tag}")
        }
        "file" => format!("C:\\Users\\victim\\AppData\\{word}_{tag}.tmp"),
        "regkey" => format!("HKLM\\Software\\{word}\\{tag}"),
        "mutex" => format!("Global\\{word}-{tag}"),
        "url" => format!("http://{tag}.{word}.example/gate.php"),
        _ => format!("{word}_{tag}.dll"),
    }
}

const BEHAVIOR_KEYS: &[&str] = &["api", "api", "api", "file", "regkey", "mutex", "url", "dll"];
const BASE_SUFFIX: usize = 6;
const NOISE_SUFFIX: usize = 10;

fn fresh_base_token(rng: &mut StageRng, used: &mut HashSet<String>) -> LogToken {
    loop {
        let key = BEHAVIOR_KEYS.choose(rng).copied().unwrap_or("api");
        let value = behavior_value(rng, key, BASE_SUFFIX);
        if used.insert(value.clone()) {
            return LogToken { key, value };
        }
    }
}

// Noise values carry a longer tag than base values, so they never coincide
// with any base token.
fn noise_token(rng: &mut StageRng) -> LogToken {
    if rng.random_bool(0.5) {
        LogToken {
            key: "handle",
            value: format!("0x{}", hex_suffix(rng, NOISE_SUFFIX)),
        }
    } else {
        let key = BEHAVIOR_KEYS.choose(rng).copied().unwrap_or("api");
        LogToken {
            key,
            value: behavior_value(rng, key, NOISE_SUFFIX),
        }
    }
}

fn render(tokens: &[LogToken]) -> String {
    let mut text = String::with_capacity(tokens.len() * 40 + 32);
    text.push_str("{\n  \"behavior\": [\n");
    for t in tokens {
        text.push_str("    \"");
        text.push_str(t.key);
        text.push_str("\": \"");
        text.push_str(&t.value);
        text.push_str("\",\n");
    }
    text.push_str("  ]\n}\n");
    text
}

/// Generates labeled pseudo sandbox logs: a base behavior per family, with
/// every variant deleting or substituting each base token with probability
/// `perturbation_rate` and appending unrelated noise tokens at the same rate.
pub fn generate_synthetic_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, CORPUS_STREAM);
    let mut used = HashSet::new();
    let shared: Vec<LogToken> = (0..spec.shared_token_pool)
        .map(|_| fresh_base_token(&mut rng, &mut used))
        .collect();
    let n_shared = ((spec.base_tokens_per_family as f64 * SHARED_FRACTION).round() as usize)
        .min(spec.shared_token_pool)
        .min(spec.base_tokens_per_family);

    let p = spec.perturbation_rate;
    let mut documents = Vec::with_capacity(spec.n_families * spec.variants_per_family);
    let mut family_bases = Vec::with_capacity(spec.n_families);
    for family in 0..spec.n_families {
        let mut base: Vec<LogToken> = shared.choose_multiple(&mut rng, n_shared).cloned().collect();
        for _ in n_shared..spec.base_tokens_per_family {
            base.push(fresh_base_token(&mut rng, &mut used));
        }
        base.shuffle(&mut rng);
        family_bases.push(base.iter().map(LogToken::unigram).collect());

        let label = spec.label(family);
        for variant in 0..spec.variants_per_family {
            let mut tokens = Vec::with_capacity(base.len() + base.len() / 4);
            for t in &base {
                if rng.random::<f64>() < p {
                    if rng.random_bool(0.5) {
                        let key = t.key;
                        tokens.push(LogToken {
                            key,
                            value: behavior_value(&mut rng, key, NOISE_SUFFIX),
                        });
                    }
                } else {
                    tokens.push(t.clone());
                }
            }
            for _ in 0..base.len() {
                if rng.random::<f64>() < p {
                    tokens.push(noise_token(&mut rng));
                }
            }
            documents.push(Document::new(
                spec.sample_id(family, variant),
                render(&tokens),
                Some(label.clone()),
            ));
        }
    }
    Ok(SyntheticCorpus {
        documents,
        family_bases,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_per_class: 200,
            test_per_class: 100,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split over positions of `labels`.
///
/// Each class (in sorted label order) is shuffled with the split stream and
/// cut into `train_per_class` then `test_per_class` members. Both index lists
/// come back ascending.
pub fn split_indices<S: AsRef<str>>(labels: &[S], spec: &SplitSpec) -> Result<SplitIndices> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    let needed = spec.train_per_class + spec.test_per_class;
    let mut rng = stream_rng(spec.seed, SPLIT_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class {
        if members.len() < needed {
            return Err(Error::InsufficientSamples {
                class: class.to_owned(),
                needed,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..spec.train_per_class]);
        test.extend_from_slice(&members[spec.train_per_class..needed]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split_dataset(
    vectors: &[FeatureVector],
    spec: &SplitSpec,
) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
    let labels = vectors
        .iter()
        .map(|v| v.label.as_deref().ok_or_else(|| Error::Unlabeled(v.sample_id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let split = split_indices(&labels, spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| vectors[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.test)))
}
