//! Whitespace word vocabulary for instructions.

use std::collections::BTreeMap;

use super::ModelError;
use crate::sim::tasks_vocabulary;

#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    /// Every word the simulator's task instructions can emit.
    pub fn default_tasks() -> Self {
        Self::new(tasks_vocabulary())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            match self.index.get(word) {
                Some(&id) => ids.push(id),
                None => return Err(ModelError::UnknownWord(word.to_string())),
            }
        }
        if ids.is_empty() {
            return Err(ModelError::EmptyInstruction);
        }
        Ok(ids)
    }
}
