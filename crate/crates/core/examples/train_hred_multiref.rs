//! Trains HRED on the synthetic one-to-many corpus with one and with five
//! teacher hypotheses per context, then compares test perplexity and BLEU-2.
//!
//! cargo run --example train_hred_multiref -- [seed]

use std::time::Instant;

use multiref::corpus::SplitRatios;
use multiref::eval::{evaluate, EvalOptions, EvalSet};
use multiref::models::{DialogueModel, EncodedPair, ModelConfig};
use multiref::synthetic::{prepare, SyntheticSpec};
use multiref::teacher::{build_multiref_dataset, epoch_budget, DataSetting, HypothesisSettings, ScriptedTeacher};
use multiref::training::{fit, replicate_references, FitOptions, TrainSchedule};

fn main() -> multiref::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = prepare(&SyntheticSpec {
        sessions: 600,
        seed,
        split: SplitRatios { train: 0.4, valid: 0.1, test: 0.5 },
        ..SyntheticSpec::default()
    })?;
    let teacher = ScriptedTeacher::new("script", data.vocab.clone(), &data.script)?;
    let valid: Vec<EncodedPair> = data.valid.iter().map(|p| EncodedPair::encode(&data.vocab, p)).collect();
    let test = EvalSet::new(&data.test, &data.vocab)?;
    println!(
        "train {} valid {} test {} pairs, vocabulary {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.vocab.len()
    );

    for n in [1, 5] {
        let start = Instant::now();
        let examples = build_multiref_dataset(&data.train, &teacher, &HypothesisSettings::new(n, false, seed))?;
        let instances = replicate_references(&examples, &data.vocab);
        let schedule = TrainSchedule {
            initial_lr: 0.005,
            max_epochs: Some(epoch_budget(DataSetting::hypotheses(n))?.max_epochs),
            ..TrainSchedule::default()
        };
        let config = ModelConfig::hred(data.vocab.len()).with_sizes(64, 32, 16, 8);
        let model = DialogueModel::new(ModelConfig { dropout: 0.0, max_decode_len: 20, ..config }, seed)?;
        let outcome = fit(&model, &instances, &valid, &schedule, seed, FitOptions::default())?;
        let report = evaluate(&model, &test, &data.vocab, &EvalOptions::default())?;
        println!(
            "N={n}: {} instances, {} steps, ppl {:.3}, bleu2 {:.2} ({:.1}s)",
            instances.len(),
            outcome.state.step,
            report.perplexity,
            report.scores.bleu2,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
