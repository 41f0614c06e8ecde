//! Staged pipeline over an artifacts directory.
//!
//! Every stage reads the artifacts named by its predecessors' manifests,
//! checks their SHA-256, writes its own outputs and then its manifest under
//! `manifests/<stage>.json`.

pub mod artifacts;
pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::classify::{
    evaluate, fine_tune_with_progress, knn_classify, predict, read_predictions, train_linear_svm, write_predictions,
    LabeledVectorSet, PredictionRow,
};
use crate::corpus::{
    build_dictionary, encode, generate_synthetic_corpus, read_features, read_labels, split_dataset, split_indices,
    write_features, write_labels, Dictionary, Document, FeatureVector,
};
use crate::dbn::{read_signatures, sign_corpus, train_dbn_with_progress, write_signatures, DbnModel, Signature};
use crate::embed::{export_scatter, tsne_embed};
use crate::error::{Error, Result};

pub use artifacts::{RunLock, RunManifest, StageManifest, StageTiming};
pub use config::PipelineConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CORPUS: &str = "corpus";
pub const LABELS_FILE: &str = "labels.tsv";
pub const DICTIONARY: &str = "dictionary.txt";
pub const FEATURES: &str = "features.tsv";
pub const TRAIN_FEATURES: &str = "train.tsv";
pub const TEST_FEATURES: &str = "test.tsv";
pub const MODEL: &str = "model.dbn";
pub const TRAIN_LOG: &str = "train_log.txt";
pub const SIGNATURES: &str = "signatures.csv";
pub const PREDICTIONS_KNN: &str = "predictions_knn.csv";
pub const PREDICTIONS_SVM: &str = "predictions_svm.csv";
pub const PREDICTIONS_FINETUNE: &str = "predictions_finetune.csv";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const EMBEDDING_SVG: &str = "embedding.svg";
pub const EMBEDDING_KL: &str = "embedding_kl.txt";
pub const REPORT: &str = "report.txt";
pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Dict,
    Encode,
    Split,
    Train,
    Sign,
    Classify,
    Embed,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Gen,
        Stage::Dict,
        Stage::Encode,
        Stage::Split,
        Stage::Train,
        Stage::Sign,
        Stage::Classify,
        Stage::Embed,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Dict => "dict",
            Stage::Encode => "encode",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Sign => "sign",
            Stage::Classify => "classify",
            Stage::Embed => "embed",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// `(producing stage, artifact)` pairs this stage reads.
    pub fn inputs(self) -> &'static [(Stage, &'static str)] {
        match self {
            Stage::Gen => &[],
            Stage::Dict => &[(Stage::Gen, CORPUS)],
            Stage::Encode => &[(Stage::Gen, CORPUS), (Stage::Dict, DICTIONARY)],
            Stage::Split => &[(Stage::Encode, FEATURES)],
            Stage::Train => &[(Stage::Dict, DICTIONARY), (Stage::Split, TRAIN_FEATURES)],
            Stage::Sign => &[(Stage::Train, MODEL), (Stage::Encode, FEATURES)],
            Stage::Classify => &[
                (Stage::Train, MODEL),
                (Stage::Sign, SIGNATURES),
                (Stage::Split, TRAIN_FEATURES),
                (Stage::Split, TEST_FEATURES),
            ],
            Stage::Embed => &[(Stage::Sign, SIGNATURES)],
            Stage::Report => &[
                (Stage::Classify, PREDICTIONS_KNN),
                (Stage::Classify, PREDICTIONS_SVM),
                (Stage::Classify, PREDICTIONS_FINETUNE),
            ],
        }
    }
}

pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut stages = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Stage::from_name(s).ok_or_else(|| Error::Config(format!("unknown stage `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if stages.is_empty() {
        return Err(Error::Config("empty stage list".into()));
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

/// An opened artifacts directory with its effective configuration.
pub struct Workspace {
    pub config: PipelineConfig,
    dir: PathBuf,
    config_sha256: String,
}

impl Workspace {
    /// Validates paths and creates the artifacts directory; runs nothing.
    pub fn open(config: PipelineConfig, stages: &[Stage]) -> Result<Self> {
        config.validate()?;
        if let Some(corpus) = &config.corpus_dir {
            if !stages.contains(&Stage::Gen) && !corpus.is_dir() {
                return Err(Error::Config(format!("corpus directory {} does not exist", corpus.display())));
            }
        }
        let dir = config.artifacts_dir.clone();
        if dir.exists() && !dir.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", dir.display())));
        }
        for sub in [dir.clone(), dir.join("manifests")] {
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        }
        let config_sha256 = artifacts::sha256_hex(config.snapshot().as_bytes());
        Ok(Workspace {
            config,
            dir,
            config_sha256,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        if artifact == CORPUS {
            self.config.corpus_path()
        } else {
            self.dir.join(artifact)
        }
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.dir.join("manifests").join(format!("{}.json", stage.name()))
    }

    fn external_corpus(&self) -> bool {
        self.config.corpus_dir.is_some()
    }

    /// Digest of an artifact: the file hash, or for the corpus a hash over
    /// the labels file and every log it lists.
    pub fn digest(&self, artifact: &str) -> Result<String> {
        if artifact != CORPUS {
            return artifacts::sha256_file(&self.path(artifact));
        }
        let dir = self.path(CORPUS);
        let labels_path = dir.join(LABELS_FILE);
        let mut listing = format!("{LABELS_FILE}\t{}\n", artifacts::sha256_file(&labels_path)?);
        for (id, _) in read_labels_file(&labels_path)? {
            let name = format!("{id}.log");
            let _ = writeln!(listing, "{name}\t{}", artifacts::sha256_file(&dir.join(&name))?);
        }
        Ok(artifacts::sha256_hex(listing.as_bytes()))
    }

    fn verify_input(&self, producer: Stage, artifact: &str) -> Result<String> {
        let path = self.path(artifact);
        let missing = || Error::MissingArtifact {
            stage: producer.name().into(),
            path: path.clone(),
        };
        if artifact == CORPUS && self.external_corpus() {
            if !path.join(LABELS_FILE).is_file() {
                return Err(missing());
            }
            return self.digest(artifact);
        }
        let manifest_path = self.manifest_path(producer);
        if !manifest_path.is_file() {
            return Err(missing());
        }
        let manifest = StageManifest::read(&manifest_path)?;
        let recorded = manifest.outputs.get(artifact).ok_or_else(missing)?;
        let present = if artifact == CORPUS {
            path.join(LABELS_FILE).is_file()
        } else {
            path.is_file()
        };
        if !present {
            return Err(missing());
        }
        let actual = match self.digest(artifact) {
            Ok(d) => d,
            Err(Error::Io { .. }) => return Err(missing()),
            Err(e) => return Err(e),
        };
        if &actual != recorded {
            return Err(Error::ChecksumMismatch {
                stage: producer.name().into(),
                path,
            });
        }
        Ok(actual)
    }

    /// Runs one stage after checking its inputs; the lock must be held.
    pub fn run_stage(&self, stage: Stage) -> Result<StageManifest> {
        let mut inputs = BTreeMap::new();
        for &(producer, artifact) in stage.inputs() {
            inputs.insert(artifact.to_owned(), self.verify_input(producer, artifact)?);
        }
        let start = Instant::now();
        let produced = match stage {
            Stage::Gen => self.gen()?,
            Stage::Dict => self.dict()?,
            Stage::Encode => self.encode()?,
            Stage::Split => self.split()?,
            Stage::Train => self.train()?,
            Stage::Sign => self.sign()?,
            Stage::Classify => self.classify()?,
            Stage::Embed => self.embed()?,
            Stage::Report => self.report()?,
        };
        let mut outputs = BTreeMap::new();
        for artifact in produced {
            outputs.insert(artifact.to_owned(), self.digest(artifact)?);
        }
        let manifest = StageManifest {
            stage: stage.name().into(),
            tool_version: TOOL_VERSION.into(),
            config_sha256: self.config_sha256.clone(),
            inputs,
            outputs,
            seconds: start.elapsed().as_secs_f64(),
        };
        manifest.write(&self.manifest_path(stage))?;
        eprintln!("stage={} seconds={:.2}", stage.name(), manifest.seconds);
        Ok(manifest)
    }

    fn create(&self, artifact: &str) -> Result<BufWriter<File>> {
        let path = self.path(artifact);
        File::create(&path).map(BufWriter::new).map_err(|e| Error::io(&path, e))
    }

    fn open_reader(&self, artifact: &str) -> Result<BufReader<File>> {
        let path = self.path(artifact);
        File::open(&path).map(BufReader::new).map_err(|e| Error::io(&path, e))
    }

    fn write_with(&self, artifact: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.path(artifact);
        let mut w = self.create(artifact)?;
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    }

    fn load_corpus(&self) -> Result<Vec<Document>> {
        let dir = self.path(CORPUS);
        let mut labels = read_labels_file(&dir.join(LABELS_FILE))?;
        labels.sort();
        labels
            .into_iter()
            .map(|(id, label)| {
                let path = dir.join(format!("{id}.log"));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(Document::from_bytes(id, &bytes, Some(label)))
            })
            .collect()
    }

    fn load_dictionary(&self) -> Result<Dictionary> {
        Dictionary::read_from(self.open_reader(DICTIONARY)?)
    }

    fn load_features(&self, artifact: &str, width: usize) -> Result<Vec<FeatureVector>> {
        read_features(self.open_reader(artifact)?, width)
    }

    fn load_model(&self) -> Result<DbnModel> {
        let path = self.path(MODEL);
        DbnModel::from_bytes(&fs::read(&path).map_err(|e| Error::io(&path, e))?)
    }

    fn gen(&self) -> Result<Vec<&'static str>> {
        let corpus = generate_synthetic_corpus(&self.config.corpus)?;
        let dir = self.path(CORPUS);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut labels = Vec::with_capacity(corpus.documents.len());
        for doc in &corpus.documents {
            let path = dir.join(format!("{}.log", doc.sample_id));
            fs::write(&path, doc.text.as_bytes()).map_err(|e| Error::io(&path, e))?;
            labels.push((doc.sample_id.clone(), doc.label.clone().expect("synthetic documents are labeled")));
        }
        let labels_path = dir.join(LABELS_FILE);
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).map_err(|e| Error::io(&labels_path, e))?;
        artifacts::write_atomic(&labels_path, &buf)?;
        eprintln!("stage=gen documents={}", corpus.documents.len());
        Ok(vec![CORPUS])
    }

    fn dict(&self) -> Result<Vec<&'static str>> {
        let docs = self.load_corpus()?;
        let labels: Vec<&str> = docs.iter().map(|d| d.label.as_deref().unwrap_or_default()).collect();
        let split = split_indices(&labels, &self.config.split)?;
        let train: Vec<Document> = split.train.iter().map(|&i| docs[i].clone()).collect();
        let dict = build_dictionary(&train, self.config.top_n)?;
        self.write_with(DICTIONARY, |w| dict.write_to(w))?;
        eprintln!("stage=dict training_documents={} entries={}", train.len(), dict.len());
        Ok(vec![DICTIONARY])
    }

    fn encode(&self) -> Result<Vec<&'static str>> {
        let dict = self.load_dictionary()?;
        let features: Vec<FeatureVector> = self.load_corpus()?.iter().map(|d| encode(d, &dict)).collect();
        self.write_with(FEATURES, |w| write_features(w, &features))?;
        eprintln!("stage=encode vectors={} width={}", features.len(), dict.len());
        Ok(vec![FEATURES])
    }

    fn split(&self) -> Result<Vec<&'static str>> {
        let width = self.load_dictionary()?.len();
        let features = self.load_features(FEATURES, width)?;
        let (train, test) = split_dataset(&features, &self.config.split)?;
        self.write_with(TRAIN_FEATURES, |w| write_features(w, &train))?;
        self.write_with(TEST_FEATURES, |w| write_features(w, &test))?;
        eprintln!("stage=split train={} test={}", train.len(), test.len());
        Ok(vec![TRAIN_FEATURES, TEST_FEATURES])
    }

    fn train(&self) -> Result<Vec<&'static str>> {
        let dict = self.load_dictionary()?;
        let arch = &self.config.arch;
        if arch.input_width() != dict.len() {
            return Err(Error::Config(format!(
                "arch.layers starts at {} but the dictionary has {} entries",
                arch.input_width(),
                dict.len()
            )));
        }
        let train = self.load_features(TRAIN_FEATURES, dict.len())?;
        let mut log = String::new();
        let (mut model, records) = train_dbn_with_progress(&train, arch, &self.config.train, &mut |e| {
            eprintln!("stage=train layer={} epoch={} loss={:.6}", e.layer, e.epoch, e.loss);
            let _ = writeln!(log, "layer={} epoch={} loss={:.10e}", e.layer, e.epoch, e.loss);
        })?;
        for (k, r) in records.iter().enumerate() {
            let _ = writeln!(
                log,
                "layer={k} train_loss_initial={:.10e} train_loss_final={:.10e}",
                r.initial_train_loss, r.final_train_loss
            );
        }
        if let Some(p) = model.provenance.as_mut() {
            p.dictionary_sha256 = Some(self.digest(DICTIONARY)?);
        }
        artifacts::write_atomic(&self.path(MODEL), &model.to_bytes())?;
        artifacts::write_atomic(&self.path(TRAIN_LOG), log.as_bytes())?;
        Ok(vec![MODEL, TRAIN_LOG])
    }

    fn sign(&self) -> Result<Vec<&'static str>> {
        let model = self.load_model()?;
        let features = self.load_features(FEATURES, model.input_width())?;
        let signatures = sign_corpus(&model, &features)?;
        self.write_with(SIGNATURES, |w| write_signatures(w, &signatures))?;
        eprintln!("stage=sign signatures={} width={}", signatures.len(), model.signature_width());
        Ok(vec![SIGNATURES])
    }

    fn classify(&self) -> Result<Vec<&'static str>> {
        let model = self.load_model()?;
        let train = self.load_features(TRAIN_FEATURES, model.input_width())?;
        let test = self.load_features(TEST_FEATURES, model.input_width())?;
        let signatures = read_signatures(self.open_reader(SIGNATURES)?)?;
        let by_id: HashMap<&str, &Signature> = signatures.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        let lookup = |set: &[FeatureVector]| {
            set.iter()
                .map(|f| {
                    by_id.get(f.sample_id.as_str()).map(|&s| s.clone()).ok_or_else(|| {
                        Error::format("signatures", format!("no signature for sample `{}`", f.sample_id))
                    })
                })
                .collect::<Result<Vec<Signature>>>()
        };
        let train_sigs = lookup(&train)?;
        let test_sigs = lookup(&test)?;
        let truth: Vec<String> = test
            .iter()
            .map(|f| f.label.clone().ok_or_else(|| Error::Unlabeled(f.sample_id.clone())))
            .collect::<Result<_>>()?;
        let rows = |predicted: Vec<String>| -> Vec<PredictionRow> {
            test.iter()
                .zip(predicted)
                .zip(&truth)
                .map(|((f, predicted), truth)| PredictionRow {
                    sample_id: f.sample_id.clone(),
                    predicted,
                    truth: truth.clone(),
                })
                .collect()
        };

        let sig_set = LabeledVectorSet::from_signatures(&train_sigs)?;
        let knn = test_sigs
            .iter()
            .map(|s| knn_classify(&sig_set, &s.values, self.config.knn_k).map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let knn_rows = rows(knn);
        self.write_with(PREDICTIONS_KNN, |w| write_predictions(w, &knn_rows))?;

        let svm = train_linear_svm(&sig_set, &self.config.svm)?;
        let svm_pred = test_sigs
            .iter()
            .map(|s| svm.predict(&s.values).map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let svm_rows = rows(svm_pred);
        self.write_with(PREDICTIONS_SVM, |w| write_predictions(w, &svm_rows))?;

        let feature_set = LabeledVectorSet::from_features(&train)?;
        let net = fine_tune_with_progress(&model, &feature_set, &self.config.finetune, &mut |epoch, loss| {
            eprintln!("stage=finetune epoch={epoch} loss={loss:.6}");
        })?;
        let ft = test
            .iter()
            .map(|f| predict(&net, f).map(|p| p.class))
            .collect::<Result<Vec<_>>>()?;
        let ft_rows = rows(ft);
        self.write_with(PREDICTIONS_FINETUNE, |w| write_predictions(w, &ft_rows))?;
        Ok(vec![PREDICTIONS_KNN, PREDICTIONS_SVM, PREDICTIONS_FINETUNE])
    }

    fn embed(&self) -> Result<Vec<&'static str>> {
        let signatures = read_signatures(self.open_reader(SIGNATURES)?)?;
        let run = tsne_embed(&signatures, &self.config.tsne)?;
        for (it, kl) in &run.kl_trace {
            eprintln!("stage=embed iteration={it} kl={kl:.6}");
        }
        export_scatter(&run.embedding, &self.path(EMBEDDING_CSV), &self.path(EMBEDDING_SVG))?;
        let kl = format!("initial_kl={:.10e}\nfinal_kl={:.10e}\n", run.initial_kl, run.final_kl);
        artifacts::write_atomic(&self.path(EMBEDDING_KL), kl.as_bytes())?;
        Ok(vec![EMBEDDING_CSV, EMBEDDING_SVG, EMBEDDING_KL])
    }

    fn report(&self) -> Result<Vec<&'static str>> {
        let mut text = String::new();
        for (name, artifact) in [
            ("knn", PREDICTIONS_KNN),
            ("svm", PREDICTIONS_SVM),
            ("finetune", PREDICTIONS_FINETUNE),
        ] {
            let rows = read_predictions(self.open_reader(artifact)?)?;
            let predicted: Vec<&str> = rows.iter().map(|r| r.predicted.as_str()).collect();
            let truth: Vec<&str> = rows.iter().map(|r| r.truth.as_str()).collect();
            let report = evaluate(&predicted, &truth)?;
            if !text.is_empty() {
                text.push('\n');
            }
            let _ = writeln!(text, "[{name}]");
            text.push_str(&report.render());
            eprintln!("stage=report classifier={name} accuracy={:.4}", report.accuracy);
        }
        artifacts::write_atomic(&self.path(REPORT), text.as_bytes())?;
        Ok(vec![REPORT])
    }

    /// Runs `stages` in pipeline order and writes the run manifest.
    pub fn run_pipeline(&self, stages: &[Stage]) -> Result<RunManifest> {
        let mut ordered = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        let mut timings = Vec::new();
        let mut produced = BTreeMap::new();
        let mut inputs = BTreeMap::new();
        for &stage in &ordered {
            let m = self.run_stage(stage)?;
            timings.push(StageTiming {
                stage: m.stage.clone(),
                seconds: m.seconds,
            });
            produced.extend(m.outputs);
            if stage == Stage::Dict && self.external_corpus() {
                inputs.extend(m.inputs.into_iter().filter(|(k, _)| k == CORPUS));
            }
        }
        let manifest = RunManifest {
            tool_version: TOOL_VERSION.into(),
            config: self.config.snapshot(),
            config_sha256: self.config_sha256.clone(),
            inputs,
            artifacts: produced,
            stages: timings,
        };
        manifest.write(&self.dir.join(RUN_MANIFEST))?;
        Ok(manifest)
    }
}

fn read_labels_file(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(BufReader::new(f))
}

#[derive(Debug, Parser)]
#[command(name = "sigforge", version, about = "Malware signature generation with stacked denoising autoencoders")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic sandbox-log corpus.
    Gen,
    /// Build the unigram dictionary from the training split.
    Dict,
    /// Encode every log as a presence bit vector.
    Encode,
    /// Write the stratified train and test feature files.
    Split,
    /// Train the deep belief network layer by layer.
    Train,
    /// Compute signatures for every sample.
    Sign,
    /// Run kNN, linear SVM and the fine-tuned network on the test split.
    Classify,
    /// Embed signatures in 2-D with t-SNE.
    Embed,
    /// Write the evaluation report.
    Report,
    /// Run several stages in order.
    Pipeline {
        /// Comma-separated stage names; all stages when omitted.
        #[arg(long)]
        stages: Option<String>,
    },
}

impl Command {
    fn stages(&self) -> Result<Vec<Stage>> {
        Ok(match self {
            Command::Gen => vec![Stage::Gen],
            Command::Dict => vec![Stage::Dict],
            Command::Encode => vec![Stage::Encode],
            Command::Split => vec![Stage::Split],
            Command::Train => vec![Stage::Train],
            Command::Sign => vec![Stage::Sign],
            Command::Classify => vec![Stage::Classify],
            Command::Embed => vec![Stage::Embed],
            Command::Report => vec![Stage::Report],
            Command::Pipeline { stages: None } => Stage::ALL.to_vec(),
            Command::Pipeline { stages: Some(list) } => parse_stages(list)?,
        })
    }
}

pub fn run(args: &Args) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::parse("")?,
    };
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    let stages = args.command.stages()?;
    let ws = Workspace::open(config, &stages)?;
    let _lock = RunLock::acquire(ws.dir())?;
    match args.command {
        Command::Pipeline { .. } => ws.run_pipeline(&stages).map(drop),
        _ => ws.run_stage(stages[0]).map(drop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_name(s.name()), Some(s));
        }
        assert_eq!(parse_stages("sign, train,sign").unwrap(), vec![Stage::Train, Stage::Sign]);
        assert!(matches!(parse_stages("train,fly"), Err(Error::Config(_))));
        assert!(matches!(parse_stages(""), Err(Error::Config(_))));
    }

    #[test]
    fn every_input_comes_from_an_earlier_stage() {
        for s in Stage::ALL {
            for &(producer, _) in s.inputs() {
                assert!(producer < s);
            }
        }
    }
}
