//! Loadable memory images and the `.bvi` text format.
//!
//! ```text
//! entry 512
//! result 16
//! symbol err_cell 16
//! 16 0
//! 17 134217728
//! ```
//!
//! Header lines (`entry`, `result`, `symbol`) may appear anywhere; every
//! other non-empty line is an `addr word` pair in decimal.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryImage {
    words: BTreeMap<u32, u32>,
    pub entry_tcb: Option<u32>,
    /// Cells reported after a run, in declaration order.
    pub results: Vec<u32>,
    /// Label addresses, kept for hosts that need to find data by name.
    pub symbols: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: address {addr} appears twice")]
    DuplicateAddress { line: usize, addr: u32 },
}

impl MemoryImage {
    pub fn new() -> MemoryImage {
        MemoryImage::default()
    }

    /// Sets the word at `addr`, returning the previous one if there was one.
    pub fn insert(&mut self, addr: u32, word: u32) -> Option<u32> {
        self.words.insert(addr, word)
    }

    pub fn get(&self, addr: u32) -> Option<u32> {
        self.words.get(&addr).copied()
    }

    pub fn words(&self) -> &BTreeMap<u32, u32> {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// Highest occupied address plus one.
    pub fn extent(&self) -> u32 {
        self.words.keys().next_back().map_or(0, |a| a + 1)
    }

    pub fn to_bvi(&self) -> String {
        let mut out = String::new();
        if let Some(e) = self.entry_tcb {
            writeln!(out, "entry {e}").unwrap();
        }
        for r in &self.results {
            writeln!(out, "result {r}").unwrap();
        }
        for (name, addr) in &self.symbols {
            writeln!(out, "symbol {name} {addr}").unwrap();
        }
        for (addr, word) in &self.words {
            writeln!(out, "{addr} {word}").unwrap();
        }
        out
    }

    pub fn from_bvi(text: &str) -> Result<MemoryImage, ImageError> {
        let mut image = MemoryImage::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: &str| ImageError::Syntax { line, message: message.to_string() };
            let fields: Vec<&str> = raw.split_whitespace().collect();
            let num = |s: &str| s.parse::<u32>().map_err(|_| err(&format!("bad number `{s}`")));
            match fields.as_slice() {
                [] => {}
                ["entry", a] => image.entry_tcb = Some(num(a)?),
                ["result", a] => image.results.push(num(a)?),
                ["symbol", name, a] => {
                    image.symbols.insert(name.to_string(), num(a)?);
                }
                [a, w] => {
                    let addr = num(a)?;
                    if image.insert(addr, num(w)?).is_some() {
                        return Err(ImageError::DuplicateAddress { line, addr });
                    }
                }
                _ => return Err(err(&format!("unrecognised line `{raw}`"))),
            }
        }
        Ok(image)
    }
}
