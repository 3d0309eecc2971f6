use crate::corpus::{TokenId, Utterance, Vocabulary};
use crate::error::Result;
use crate::models::{encode_context, DialogueModel};
use crate::teacher::Teacher;

/// Uses a trained student-architecture model as the teacher. Variational
/// models condition on the prior mean.
pub struct ModelTeacher {
    name: String,
    model: DialogueModel,
    vocab: Vocabulary,
}

impl ModelTeacher {
    pub fn new(name: impl Into<String>, model: DialogueModel, vocab: Vocabulary) -> Self {
        Self { name: name.into(), model, vocab }
    }

    pub fn model(&self) -> &DialogueModel {
        &self.model
    }
}

impl Teacher for ModelTeacher {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, context: &[Utterance], prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.model.next_token_probs(&encode_context(&self.vocab, context), None, prefix)
    }
}
