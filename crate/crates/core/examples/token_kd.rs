//! Token-level distillation: the student matches the teacher's full
//! next-token distribution at every position of the ground-truth response,
//! compared with plain maximum likelihood on the same pairs.
//!
//! cargo run --release --example token_kd

use multiref::eval::{evaluate, EvalOptions, EvalSet};
use multiref::models::{DialogueModel, EncodedPair, ModelConfig};
use multiref::synthetic::{prepare, SyntheticSpec};
use multiref::teacher::{MultiRefExample, ScriptedTeacher};
use multiref::training::{distillation_instances, fit, FitOptions, TrainInstance, TrainSchedule};

fn main() -> multiref::Result<()> {
    let data = prepare(&SyntheticSpec { sessions: 600, seed: 2, ..SyntheticSpec::default() })?;
    let teacher = ScriptedTeacher::new("scripted", data.vocab.clone(), &data.script)?;
    let gt: Vec<MultiRefExample> = data.train.iter().map(MultiRefExample::ground_truth).collect();
    let valid: Vec<EncodedPair> = data.valid.iter().map(|p| EncodedPair::encode(&data.vocab, p)).collect();
    let test = EvalSet::new(&data.test, &data.vocab)?;
    let schedule = TrainSchedule { initial_lr: 0.005, max_epochs: Some(40), ..TrainSchedule::default() };

    let kd = distillation_instances(&gt, &teacher, &data.vocab)?;
    let first = &kd[0].soft_targets.as_ref().unwrap()[0];
    println!("first target position keeps {} teacher tokens", first.len());
    let hard: Vec<TrainInstance> =
        data.train.iter().map(|p| TrainInstance::hard(EncodedPair::encode(&data.vocab, p))).collect();

    for (name, instances) in [("mle", hard), ("token-kd", kd)] {
        let config = ModelConfig::hred(data.vocab.len()).with_sizes(48, 24, 12, 8);
        let model = DialogueModel::new(ModelConfig { dropout: 0.0, max_decode_len: 20, ..config }, 2)?;
        fit(&model, &instances, &valid, &schedule, 2, FitOptions::default())?;
        let report = evaluate(&model, &test, &data.vocab, &EvalOptions::default())?;
        println!("{name:<8} ppl {:.3} bleu2 {:.2}", report.perplexity, report.scores.bleu2);
    }
    Ok(())
}
