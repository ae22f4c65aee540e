use std::collections::HashMap;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// Token ↔ id map for one field. Ids start at 2; 0 is padding, 1 unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldVocab {
    pub name: String,
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl FieldVocab {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Returns the id of `token`, assigning the next free id if new.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() + RESERVED;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or [`UNK_ID`] when unseen.
    pub fn encode(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        id.checked_sub(RESERVED)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Number of embedding rows needed, including the reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED
    }
}

/// Vocabularies for the categorical fields and the behavior/candidate fields.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub categorical: Vec<FieldVocab>,
    pub sequence: Vec<FieldVocab>,
}

impl Vocabulary {
    pub fn categorical_sizes(&self) -> Vec<usize> {
        self.categorical.iter().map(FieldVocab::size).collect()
    }

    pub fn sequence_sizes(&self) -> Vec<usize> {
        self.sequence.iter().map(FieldVocab::size).collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.categorical.iter().map(|f| f.name.clone()).collect()
    }

    pub fn sequence_names(&self) -> Vec<String> {
        self.sequence.iter().map(|f| f.name.clone()).collect()
    }
}
