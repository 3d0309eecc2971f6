use std::fs;

use super::*;
use crate::corpus::{Floor, RawUtterance};
use crate::models::ModelConfig;
use crate::synthetic::{generate, SyntheticSpec};

fn raw(id: &str, texts: &[&str]) -> RawSession {
    RawSession {
        session_id: id.into(),
        utterances: texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawUtterance { floor: if i % 2 == 0 { Floor::A } else { Floor::B }, text: t.to_string() })
            .collect(),
    }
}

/// Twelve records: one loses its only second utterance to normalization,
/// one repeats an earlier session, the other ten survive.
fn hand_corpus() -> Vec<RawSession> {
    vec![
        raw("s01", &["Hi there.", "Hello!", "How are you?"]),
        raw("s02", &["What's up?", "Not much."]),
        raw("s03", &["Hi there.", "Hello!"]),
        raw("s04", &["Do you cook?", "Sometimes.", "What do you make?", "Pasta, mostly."]),
        raw("s05", &["Nice day.", "   "]),
        raw("s06", &["Where to?", "The station."]),
        raw("s07", &["Any plans?", "Maybe a movie.", "Which one?"]),
        raw("s08", &["Coffee?", "Yes please."]),
        raw("s09", &["I lost my keys.", "Check the car."]),
        raw("s10", &["Is it late?", "Almost midnight."]),
        raw("s11", &["Did you call?", "Not yet."]),
        raw("s12", &["Ready?", "Almost.", "Hurry up!"]),
    ]
}

fn tiny_model() -> ModelConfig {
    ModelConfig { dropout: 0.0, max_decode_len: 8, ..ModelConfig::default().with_sizes(8, 6, 3, 2) }
}

fn experiment(dir: &Path, sessions: &[RawSession]) -> ExperimentConfig {
    let raw = dir.join("corpus.jsonl");
    write_raw_corpus(&raw, sessions).unwrap();
    let mut cfg = ExperimentConfig { seed: 3, out: dir.join("exp"), model: tiny_model(), ..Default::default() };
    cfg.corpus.raw = Some(raw);
    cfg.eval.embedding_dim = 4;
    cfg.schedule.max_epochs = Some(2);
    cfg.schedule.batch_size = 4;
    cfg
}

fn synthetic_experiment(dir: &Path, sessions: usize) -> ExperimentConfig {
    let corpus = generate(&SyntheticSpec { sessions, ..SyntheticSpec::default() });
    let mut cfg = experiment(dir, &corpus.sessions);
    let script = dir.join("script.json");
    fs::write(&script, serde_json::to_string(&corpus.script).unwrap()).unwrap();
    cfg.teacher.scripted = Some(ScriptedTeacherBlock { script });
    cfg
}

fn manifest(cfg: &ExperimentConfig) -> Value {
    serde_json::from_str(&fs::read_to_string(Layout::new(&cfg.out).manifest()).unwrap()).unwrap()
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(matches!(ExperimentConfig::from_toml("[train]\nmode = \"gt\"\nepochs = 3"), Err(Error::Config(_))));
    let partial =
        ExperimentConfig::from_toml("seed = 9\n[model]\nhidden_size = 16\n[model.prior]\nfamily = \"lgm\"\nK = 4")
            .unwrap();
    assert_eq!(partial.seed, 9);
    assert_eq!(partial.model.hidden_size, 16);
    assert_eq!(partial.model.prior, crate::models::PriorSpec::lgm(4));
    assert_eq!(partial.model.num_layers, 1);
}

#[test]
fn relative_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "out = \"run\"\n[corpus]\nraw = \"c.jsonl\"\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.out, dir.path().join("run"));
    assert_eq!(cfg.corpus.raw, Some(dir.path().join("c.jsonl")));
    assert!(matches!(ExperimentConfig::load(&dir.path().join("missing.toml")), Err(Error::Config(_))));
}

#[test]
fn bundled_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.train.mode, TrainMode::Hyp);
    assert_eq!(cfg.model.prior, crate::models::PriorSpec::lgm(5));
    assert!(cfg.teacher.scripted.unwrap().script.ends_with("runs/synthetic-data/script.json"));
}

#[test]
fn flags_override_the_file() {
    let mut cfg = ExperimentConfig::default();
    let o = Overrides {
        seed: Some(11),
        n_refs: Some(3),
        mode: Some(TrainMode::Mixed),
        prior: Some(PriorFamily::Gmm),
        k: Some(7),
        ..Default::default()
    };
    cfg.apply(&o).unwrap();
    assert_eq!((cfg.seed, cfg.teacher.n, cfg.train.mode), (11, 3, TrainMode::Mixed));
    assert_eq!(cfg.model.prior, crate::models::PriorSpec::gmm(7));
    cfg.apply(&Overrides { prior: Some(PriorFamily::Unimodal), ..Default::default() }).unwrap();
    assert_eq!(cfg.model.prior, crate::models::PriorSpec::UNIMODAL);
    assert!(cfg.apply(&Overrides { n_refs: Some(0), ..Default::default() }).is_err());
}

#[test]
fn exit_codes_by_error_kind() {
    assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
    assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
    assert_eq!(exit_code(&Error::VocabMismatch("x".into())), EXIT_DATA);
    assert_eq!(exit_code(&Error::Teacher("x".into())), EXIT_RUNTIME);
}

#[test]
fn preprocess_counts_match_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment(dir.path(), &hand_corpus());
    let s = cmd_preprocess(&cfg).unwrap();
    assert_eq!(s.raw_sessions, 12);
    assert_eq!(s.short_sessions, 1);
    assert_eq!(s.duplicate_sessions, 1);
    assert_eq!(s.sessions, [8, 1, 1]);
    // 10 kept sessions with 3,2,4,2,3,2,2,2,2,3 utterances give 15 pairs.
    assert_eq!(s.pairs.iter().sum::<usize>(), 15);
    let m = manifest(&cfg);
    assert_eq!(m["preprocess"]["sessions"]["train"], 8);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["corpus"]["history"], 5);
}

#[test]
fn preprocess_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment(dir.path(), &hand_corpus());
    let l = Layout::new(&cfg.out);
    let files = [l.split("train"), l.split("valid"), l.split("test"), l.vocab(), l.embeddings(), l.manifest()];
    cmd_preprocess(&cfg).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    cmd_preprocess(&cfg).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn preprocess_rejects_empty_and_malformed_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = experiment(dir.path(), &[]);
    let err = cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);

    let raw = cfg.corpus.raw.clone().unwrap();
    fs::write(&raw, "{\"session_id\": \"a\", \"utterances\": []}\n{\"session\": 1}\nnot json\n").unwrap();
    let err = cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_DATA);
    let report = fs::read_to_string(Layout::new(&cfg.out).record_errors()).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.contains("\"line\":2") && report.contains("\"line\":3"));

    let mut missing = cfg.clone();
    missing.corpus.raw = None;
    assert_eq!(exit_code(&cmd_preprocess(&missing).unwrap_err()), EXIT_USAGE);
}

#[test]
fn gen_hyps_writes_n_rows_per_pair_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_experiment(dir.path(), 14);
    let pairs = cmd_preprocess(&cfg).unwrap().pairs[0];
    let s = cmd_generate_hypotheses(&cfg).unwrap();
    assert_eq!((s.examples, s.hypothesis_rows, s.skipped_pairs), (pairs, 5 * pairs, 0));
    let l = Layout::new(&cfg.out);
    let first = fs::read(l.hyps()).unwrap();
    cmd_generate_hypotheses(&cfg).unwrap();
    assert_eq!(fs::read(l.hyps()).unwrap(), first);
    let m = manifest(&cfg);
    assert_eq!(m["gen_hyps"]["n"], 5);
    assert_eq!(m["gen_hyps"]["teacher"], "scripted");
    assert_eq!(m["gen_hyps"]["top_p"], 0.95);

    let mut unknown = cfg.clone();
    unknown.teacher.name = "gpt".into();
    assert_eq!(exit_code(&cmd_generate_hypotheses(&unknown).unwrap_err()), EXIT_USAGE);
    let mut missing = cfg.clone();
    missing.teacher.scripted = Some(ScriptedTeacherBlock { script: dir.path().join("nope.json") });
    assert_eq!(exit_code(&cmd_generate_hypotheses(&missing).unwrap_err()), EXIT_DATA);
}

#[test]
fn reference_selection_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_experiment(dir.path(), 14);
    cfg.teacher.n = 3;
    cfg.teacher.include_gt = true;
    cmd_preprocess(&cfg).unwrap();
    cmd_generate_hypotheses(&cfg).unwrap();
    let records = read_multiref(&Layout::new(&cfg.out).hyps()).unwrap();
    let one = select_references(&records, 1, false).unwrap();
    assert!(one.iter().all(|e| e.references.len() == 1 && e.references[0].source == RefSource::Hypothesis));
    assert_eq!(one[0].references[0].utterance, records[0].references[0].utterance);
    let mixed = select_references(&records, 3, true).unwrap();
    assert!(mixed.iter().all(|e| e.references.len() == 4 && (e.total_weight() - 1.0).abs() < 1e-12));
    assert!(select_references(&records, 4, false).is_err());
    let hyp_only = select_references(&records, 2, false).unwrap();
    assert!(select_references(&hyp_only, 2, true).is_err());
}

#[test]
fn train_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_experiment(dir.path(), 30);
    cfg.teacher.n = 2;
    let train_pairs = cmd_preprocess(&cfg).unwrap().pairs[0];
    let per_epoch = train_pairs.div_ceil(4) as u64;
    cmd_generate_hypotheses(&cfg).unwrap();
    let l = Layout::new(&cfg.out);

    cfg.train.mode = TrainMode::Hyp;
    let hyp = cmd_train(&cfg, false).unwrap();
    assert_eq!(hyp.instances, 2 * train_pairs);
    assert_eq!(hyp.epochs, 2);

    cfg.train.mode = TrainMode::Gt;
    let first = cmd_train(&cfg, false).unwrap();
    assert_eq!(first.instances, train_pairs);
    assert_eq!(first.steps, 2 * per_epoch);
    assert!(l.best().exists() && l.last().exists());
    cfg.schedule.max_epochs = Some(3);
    let resumed = cmd_train(&cfg, true).unwrap();
    assert_eq!((resumed.epochs, resumed.steps), (3, 3 * per_epoch));
    assert_eq!(fs::read_to_string(l.train_log()).unwrap().lines().count(), 3);

    let a = cmd_evaluate(&cfg, None, false).unwrap();
    let json_a = fs::read(l.reports().join("metrics.json")).unwrap();
    let b = cmd_evaluate(&cfg, None, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(fs::read(l.reports().join("metrics.json")).unwrap(), json_a);
    assert!(a.scores.emb_greedy.is_some());
    let value: Value = serde_json::from_slice(&json_a).unwrap();
    for key in
        ["perplexity", "bleu2", "emb_extrema", "emb_average", "emb_greedy", "distinct_1", "distinct_2", "per_variable"]
    {
        assert!(value["report"].get(key).is_some(), "{key}");
    }
    assert_eq!(value["seed"], 3);

    let err = cmd_analyze_latents(&cfg, None).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);

    let mut no_table = cfg.clone();
    no_table.eval.embeddings = Some(dir.path().join("absent.txt"));
    assert_eq!(exit_code(&cmd_evaluate(&no_table, None, false).unwrap_err()), EXIT_DATA);
    no_table.eval.similarity = false;
    assert!(cmd_evaluate(&no_table, None, false).unwrap().scores.emb_greedy.is_none());
}

#[test]
fn train_rejects_a_vocabulary_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_experiment(dir.path(), 14);
    cmd_preprocess(&cfg).unwrap();
    cfg.model.vocab_size = 3;
    assert_eq!(exit_code(&cmd_train(&cfg, false).unwrap_err()), EXIT_DATA);
}

#[test]
fn latent_analysis_emits_one_row_per_component() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_experiment(dir.path(), 14);
    cfg.model.prior = crate::models::PriorSpec::lgm(3);
    cfg.schedule.max_epochs = Some(1);
    cmd_preprocess(&cfg).unwrap();
    cmd_train(&cfg, false).unwrap();
    let report = cmd_analyze_latents(&cfg, None).unwrap();
    assert_eq!(report.per_variable.len(), 3);
    let pi: f64 = report.per_variable.iter().map(|r| r.avg_pi).sum();
    assert!((pi - 1.0).abs() < 1e-6);
    let table = fs::read_to_string(Layout::new(&cfg.out).reports().join("latents.txt")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 + 1);
}
