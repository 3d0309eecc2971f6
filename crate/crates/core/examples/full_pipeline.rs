//! The command pipeline end to end in a scratch directory: preprocess,
//! gen-hyps, train, evaluate and analyze-latents, driven through the same
//! functions as the `multiref` binary.
//!
//! cargo run --release --example full_pipeline -- [out_dir]

use std::path::PathBuf;

use multiref::cli::{
    cmd_analyze_latents, cmd_evaluate, cmd_generate_hypotheses, cmd_preprocess, cmd_train, write_raw_corpus,
    ExperimentConfig, ScriptedTeacherBlock, TrainMode,
};
use multiref::models::{ModelConfig, PriorSpec};
use multiref::synthetic::{generate, SyntheticSpec};

fn main() -> multiref::Result<()> {
    let root =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("multiref-pipeline"));
    std::fs::create_dir_all(&root)?;

    let corpus = generate(&SyntheticSpec { sessions: 400, seed: 9, ..SyntheticSpec::default() });
    let raw = root.join("corpus.jsonl");
    write_raw_corpus(&raw, &corpus.sessions)?;
    let script = root.join("script.json");
    std::fs::write(&script, serde_json::to_string_pretty(&corpus.script)?)?;

    let mut cfg = ExperimentConfig { seed: 9, out: root.join("exp"), ..Default::default() };
    cfg.corpus.raw = Some(raw);
    cfg.teacher.scripted = Some(ScriptedTeacherBlock { script });
    cfg.teacher.n = 5;
    cfg.train.mode = TrainMode::Hyp;
    cfg.model = ModelConfig {
        max_decode_len: 20,
        ..ModelConfig::default().with_sizes(48, 24, 12, 8).with_prior(PriorSpec::lgm(3))
    };
    cfg.schedule.initial_lr = 0.005;
    cfg.schedule.kl_anneal_steps = 300;
    cfg.eval.embedding_dim = 16;
    std::fs::write(root.join("config.toml"), cfg.to_toml()?)?;

    println!("preprocess: {:?}", cmd_preprocess(&cfg)?);
    println!("gen-hyps:   {:?}", cmd_generate_hypotheses(&cfg)?);
    println!("train:      {:?}", cmd_train(&cfg, false)?);
    print!("{}", cmd_evaluate(&cfg, None, false)?.to_table());
    print!("{}", cmd_analyze_latents(&cfg, None)?.to_table());
    println!("outputs under {}", cfg.out.display());
    Ok(())
}
