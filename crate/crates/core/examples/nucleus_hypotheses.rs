//! Top-p filtering and teacher hypothesis generation: each training context
//! gets N responses sampled from a scripted teacher.
//!
//! cargo run --example nucleus_hypotheses -- [n] [top_p]

use multiref::synthetic::{prepare, SyntheticSpec};
use multiref::teacher::{build_multiref_dataset, nucleus_filter, HypothesisSettings, ScriptedTeacher};

fn main() -> multiref::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let top_p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.95);

    let dist = [0.4, 0.25, 0.15, 0.1, 0.06, 0.04];
    for p in [0.5, 0.9, 1.0] {
        let kept = nucleus_filter(&dist, p)?;
        println!("top-p {p}: {:?}", kept.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }

    let data = prepare(&SyntheticSpec { sessions: 600, seed: 1, ..SyntheticSpec::default() })?;
    let teacher = ScriptedTeacher::new("scripted", data.vocab.clone(), &data.script)?;
    let settings = HypothesisSettings { top_p, ..HypothesisSettings::new(n, false, 1) };
    let examples = build_multiref_dataset(&data.train, &teacher, &settings)?;
    println!("\n{} contexts, {n} hypotheses each (top-p {top_p})", examples.len());
    for e in examples.iter().take(3) {
        println!("context: {}", e.context.iter().map(|u| u.text()).collect::<Vec<_>>().join(" | "));
        for r in &e.references {
            println!("  {:.2} {}", r.weight, r.utterance.text());
        }
    }
    Ok(())
}
