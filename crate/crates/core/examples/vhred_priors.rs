//! VHRED with unimodal, Gaussian-mixture and linear-Gaussian priors trained
//! on five teacher hypotheses per context.
//!
//! cargo run --release --example vhred_priors -- [seed] [K]

use std::time::Instant;

use multiref::corpus::SplitRatios;
use multiref::eval::{evaluate, EvalOptions, EvalSet};
use multiref::models::{DialogueModel, EncodedPair, ModelConfig, PriorSpec};
use multiref::synthetic::{prepare, SyntheticSpec};
use multiref::teacher::{build_multiref_dataset, epoch_budget, DataSetting, HypothesisSettings, ScriptedTeacher};
use multiref::training::{fit, replicate_references, FitOptions, TrainSchedule};

fn main() -> multiref::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let data = prepare(&SyntheticSpec {
        sessions: 600,
        seed,
        split: SplitRatios { train: 0.4, valid: 0.1, test: 0.5 },
        ..SyntheticSpec::default()
    })?;
    let teacher = ScriptedTeacher::new("scripted", data.vocab.clone(), &data.script)?;
    let examples = build_multiref_dataset(&data.train, &teacher, &HypothesisSettings::new(5, false, seed))?;
    let instances = replicate_references(&examples, &data.vocab);
    let valid: Vec<EncodedPair> = data.valid.iter().map(|p| EncodedPair::encode(&data.vocab, p)).collect();
    let test = EvalSet::new(&data.test, &data.vocab)?;
    let schedule = TrainSchedule {
        initial_lr: 0.005,
        kl_anneal_steps: 300,
        max_epochs: Some(epoch_budget(DataSetting::hypotheses(5))?.max_epochs),
        ..TrainSchedule::default()
    };

    for (name, prior) in [("unimodal", PriorSpec::UNIMODAL), ("gmm", PriorSpec::gmm(k)), ("lgm", PriorSpec::lgm(k))] {
        let start = Instant::now();
        let config = ModelConfig::hred(data.vocab.len()).with_sizes(64, 32, 16, 8).with_prior(prior);
        let model = DialogueModel::new(ModelConfig { dropout: 0.0, max_decode_len: 20, ..config }, seed)?;
        let outcome = fit(&model, &instances, &valid, &schedule, seed, FitOptions::default())?;
        let report = evaluate(&model, &test, &data.vocab, &EvalOptions::default())?;
        println!(
            "{name:<9} best val {:.3}, ppl {:.3}, bleu2 {:.2}, distinct-2 {} ({:.1}s)",
            outcome.best_val,
            report.perplexity,
            report.scores.bleu2,
            report.scores.distinct_2,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
