//! Token vocabulary with fixed special ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Sorted token list behind four reserved specials. Lookup of an unknown
/// token maps to UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn build<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: Vec<String> = items.into_iter().map(|s| s.as_ref().to_string()).collect();
        set.sort_unstable();
        set.dedup();
        if let Some(bad) = set.iter().find(|t| SPECIALS.contains(&t.as_str())) {
            return Err(Error::Invalid(format!("token {bad:?} collides with a reserved special")));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(set);
        Ok(Vocab { tokens })
    }

    /// Rebuilds from a full token list (checkpoint load path). The first four
    /// entries must be the specials in order.
    pub fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()] != SPECIALS.map(String::from)
        {
            return Err(Error::Invalid("vocabulary list must start with the four specials".into()));
        }
        Ok(Vocab { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map_or(UNK, |i| i as u32)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn full_list(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
