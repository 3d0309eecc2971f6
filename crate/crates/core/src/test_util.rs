use candle_core::{DType, Tensor};

use crate::corpus::{Floor, Vocabulary};
use crate::models::{DialogueModel, EncodedPair, EncodedUtterance, ModelConfig, PriorSpec};

pub fn toy_vocab() -> Vocabulary {
    let words = ["hi", "hello", "how", "are", "you", "fine", "good", "thanks", ".", "?", "bye", "see"];
    Vocabulary::from_counts(words.iter().map(|w| (w.to_string(), 1))).unwrap()
}

pub fn tiny_config(vocab_size: usize, prior: PriorSpec) -> ModelConfig {
    let mut c = ModelConfig::hred(vocab_size).with_prior(prior).with_sizes(8, 6, 3, 2);
    c.dropout = 0.0;
    c.max_decode_len = 6;
    c
}

pub fn tiny_model(prior: PriorSpec, seed: u64) -> DialogueModel {
    DialogueModel::with_dtype(tiny_config(toy_vocab().len(), prior), seed, DType::F64).unwrap()
}

pub fn utt(vocab: &Vocabulary, text: &str, floor: Floor) -> EncodedUtterance {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    EncodedUtterance { ids: vocab.encode(&tokens), floor }
}

pub fn pair(vocab: &Vocabulary, context: &[&str], response: &str) -> EncodedPair {
    let ctx =
        context.iter().enumerate().map(|(i, t)| utt(vocab, t, if i % 2 == 0 { Floor::A } else { Floor::B })).collect();
    let tokens: Vec<String> = response.split_whitespace().map(str::to_string).collect();
    EncodedPair { context: ctx, response: vocab.encode(&tokens) }
}

pub fn toy_pairs(vocab: &Vocabulary) -> Vec<EncodedPair> {
    vec![
        pair(vocab, &["hi"], "hello ."),
        pair(vocab, &["hi", "hello ."], "how are you ?"),
        pair(vocab, &["how are you ?"], "fine thanks ."),
        pair(vocab, &["how are you ?", "good ."], "bye"),
        pair(vocab, &["bye"], "see you ."),
    ]
}

/// Zeroes the output layer, making every decoder step uniform.
pub fn make_uniform(model: &DialogueModel) {
    for name in ["output.weight", "output.bias"] {
        let var = model.params().get(name).unwrap();
        var.set(&Tensor::zeros(var.shape(), var.dtype(), var.device()).unwrap()).unwrap();
    }
}
