//! Closed-vocabulary instruction tokenizer and embedding lookup.

use std::collections::HashMap;

use mixedit_tensor::{Element, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
}

/// Lowercased words with punctuation stripped; empty words dropped.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl Vocab {
    /// Builds a vocabulary from every word appearing in `texts`. Word ids
    /// follow sorted order after the two reserved ids, so the sorted word
    /// list alone reconstructs the vocabulary.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, max_len: usize) -> Result<Self> {
        let mut words: Vec<String> = texts.into_iter().flat_map(normalize).collect();
        words.sort();
        words.dedup();
        Self::from_sorted_words(words, max_len)
    }

    pub fn from_sorted_words(words: Vec<String>, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("instruction max_len must be positive".into()));
        }
        if words.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("vocabulary words must be sorted and unique".into()));
        }
        if let Some(bad) = words.iter().find(|w| normalize(w) != [w.to_string()]) {
            return Err(Error::Config(format!("invalid vocabulary word {bad:?}")));
        }
        let tokens: Vec<String> = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()].into_iter().chain(words).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, index, max_len })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Regular words in id order (reserved tokens excluded).
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Exactly `max_len` ids: known words, `UNK` for unknown ones, then `PAD`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = normalize(text)
            .iter()
            .take(self.max_len)
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect();
        ids.resize(self.max_len, PAD);
        ids
    }

    /// Space-joined words for the non-PAD ids.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != PAD)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Number of ids before the first PAD.
pub fn valid_len(ids: &[usize]) -> usize {
    ids.iter().position(|&i| i == PAD).unwrap_or(ids.len())
}

/// Embedded instruction `z_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionEmbedding {
    /// `max_len x d_text`.
    pub z: Tensor<f32>,
    pub valid_len: usize,
}

fn check_embed_shapes(ids: &[usize], table: &[usize], positional: &[usize]) -> Result<()> {
    if table.len() != 2 || positional.len() != 2 || table[1] != positional[1] {
        return Err(Error::Model(format!(
            "embedding tables {table:?} and {positional:?} must be 2-d with equal width"
        )));
    }
    if ids.len() > positional[0] {
        return Err(Error::Model(format!(
            "{} instruction ids but only {} positions",
            ids.len(),
            positional[0]
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= table[0]) {
        return Err(Error::Model(format!("token id {bad} outside vocabulary of {}", table[0])));
    }
    Ok(())
}

/// `z_c[i] = table[ids[i]] + positional[i]`.
pub fn embed(ids: &[usize], table: &Tensor<f32>, positional: &Tensor<f32>) -> Result<InstructionEmbedding> {
    check_embed_shapes(ids, table.shape(), positional.shape())?;
    let d = table.shape()[1];
    let mut z = Vec::with_capacity(ids.len() * d);
    for (i, &id) in ids.iter().enumerate() {
        let row = &table.data()[id * d..(id + 1) * d];
        let pos = &positional.data()[i * d..(i + 1) * d];
        z.extend(row.iter().zip(pos).map(|(a, b)| a + b));
    }
    Ok(InstructionEmbedding {
        z: Tensor::new(&[ids.len(), d], z)?,
        valid_len: valid_len(ids),
    })
}

/// Differentiable form of [`embed`].
pub fn embed_var<'t, E: Element>(ids: &[usize], table: Var<'t, E>, positional: Var<'t, E>) -> Result<Var<'t, E>> {
    check_embed_shapes(ids, &table.shape(), &positional.shape())?;
    let rows = table.gather(ids)?;
    let pos = positional.narrow(0, 0, ids.len())?;
    Ok(rows.add(pos)?)
}

/// Convenience for tests: embeds on a throwaway tape.
pub fn embed_on_tape<E: Element>(ids: &[usize], table: &Tensor<E>, positional: &Tensor<E>) -> Result<Tensor<E>> {
    let tape = Tape::new();
    let v = embed_var(ids, tape.constant(table.clone()), tape.constant(positional.clone()))?;
    Ok((*v.value()).clone())
}
