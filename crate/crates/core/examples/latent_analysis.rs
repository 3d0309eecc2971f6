//! Latent-variable analysis of an LGM VHRED: average selection probability
//! of each component and the responses generated when one component is
//! forced.
//!
//! cargo run --release --example latent_analysis -- [K]

use multiref::eval::{avg_selection_prob, per_variable_report, EvalOptions, EvalSet};
use multiref::models::{DecodeMode, DialogueModel, EncodedPair, ModelConfig, PriorSpec};
use multiref::synthetic::{prepare, SyntheticSpec};
use multiref::teacher::{build_multiref_dataset, HypothesisSettings, ScriptedTeacher};
use multiref::training::{fit, replicate_references, FitOptions, TrainSchedule};

fn main() -> multiref::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let data = prepare(&SyntheticSpec { sessions: 600, seed: 4, ..SyntheticSpec::default() })?;
    let teacher = ScriptedTeacher::new("scripted", data.vocab.clone(), &data.script)?;
    let examples = build_multiref_dataset(&data.train, &teacher, &HypothesisSettings::new(5, false, 4))?;
    let instances = replicate_references(&examples, &data.vocab);
    let valid: Vec<EncodedPair> = data.valid.iter().map(|p| EncodedPair::encode(&data.vocab, p)).collect();

    let config = ModelConfig::hred(data.vocab.len()).with_sizes(48, 24, 12, 8).with_prior(PriorSpec::lgm(k));
    let model = DialogueModel::new(ModelConfig { dropout: 0.0, max_decode_len: 20, ..config }, 4)?;
    let schedule =
        TrainSchedule { initial_lr: 0.005, kl_anneal_steps: 300, max_epochs: Some(20), ..TrainSchedule::default() };
    fit(&model, &instances, &valid, &schedule, 4, FitOptions::default())?;

    let test = EvalSet::new(&data.test, &data.vocab)?;
    let pi = avg_selection_prob(&model, &test.contexts, 30)?;
    println!("average selection probability: {:.3?}", pi);
    for row in per_variable_report(&model, &test, &data.vocab, &EvalOptions::default())? {
        println!(
            "  k={} avg pi {:.3} ppl {:.3} bleu2 {:.2} distinct-2 {}",
            row.k, row.avg_pi, row.perplexity, row.scores.bleu2, row.scores.distinct_2
        );
    }

    println!("\ncontext: {}", test.context_text[0].join(" | "));
    for j in 0..k {
        let g = model.generate_with_variable(&test.contexts[0], j, DecodeMode::Greedy, 0)?;
        println!("  z{j}: {}", data.vocab.decode(&g.ids).join(" "));
    }
    Ok(())
}
