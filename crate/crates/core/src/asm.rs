//! Two-pass assembler and disassembler for the `.bva` text format.
//!
//! ```text
//! ; comment
//! .equ LIMIT 100        ; named constant
//! .org 1024             ; place following words at 1024
//! start:                ; label = current address
//!     PUSH counter      ; absolute value of a label
//!     JZ done           ; JUMP/JZ/CALL labels become ip-relative offsets
//!     JUMP start
//! done: HALT
//! counter: .word 0
//! stack: .space 64      ; reserve addresses without emitting words
//! .entry root_tcb       ; root thread control block
//! .result counter       ; cell printed after a run
//! ```
//!
//! Relative offsets are measured from the instruction pointer after fetch,
//! so a self-loop is `JUMP -1`. Numeric operands are always taken
//! literally. The thread states are predefined as `RUNNABLE`, `BLOCKED`,
//! `PRIORITISED` and `FINISHED`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::image::MemoryImage;
use crate::isa::{self, decode_instruction, encode_instruction, InstructionWord, Opcode};
use crate::vm::ThreadState;

/// Labels must be usable as PUSH operands.
const MAX_ADDRESS: i64 = isa::OPERAND_MAX as i64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("undefined symbol `{0}`")]
    UndefinedSymbol(String),
    #[error("operand {0} out of range")]
    OperandOutOfRange(i64),
    #[error("address {0} is already occupied (overlapping regions)")]
    Overlap(u32),
    #[error("address {0} out of range")]
    AddressOutOfRange(i64),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("`{0}` needs an operand")]
    MissingOperand(String),
    #[error("`{0}` takes no operand")]
    UnexpectedOperand(String),
    #[error("{0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}:{line}: {kind}")]
pub struct AsmError {
    pub file: String,
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Expr {
    Num(i64),
    Sym(String, i64),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Sym(s, 0) => f.write_str(s),
            Expr::Sym(s, k) => write!(f, "{s}{k:+}"),
        }
    }
}

#[derive(Debug, Clone)]
enum Stmt {
    Instr(Opcode, Option<Expr>),
    Word(Expr),
    Org(Expr),
    Space(Expr),
    Entry(Expr),
    Result(Expr),
    Equ(String, Expr),
}

struct Line {
    file: usize,
    number: usize,
    labels: Vec<String>,
    stmt: Option<Stmt>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SymKind {
    Label,
    Constant,
}

struct Assembler<'a> {
    files: Vec<&'a str>,
    symbols: HashMap<String, (i64, SymKind)>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_number(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -value } else { value })
}

fn parse_expr(text: &str) -> Result<Expr, AsmErrorKind> {
    let text: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(n) = parse_number(&text) {
        return Ok(Expr::Num(n));
    }
    let split = text.find(['+', '-']).unwrap_or(text.len());
    let (name, rest) = text.split_at(split);
    if !is_ident(name) {
        return Err(AsmErrorKind::Syntax(format!("bad operand `{text}`")));
    }
    let offset = if rest.is_empty() {
        0
    } else {
        parse_number(rest).ok_or_else(|| AsmErrorKind::Syntax(format!("bad operand `{text}`")))?
    };
    Ok(Expr::Sym(name.to_string(), offset))
}

fn parse_line(text: &str) -> Result<(Vec<String>, Option<Stmt>), AsmErrorKind> {
    let code = text.split(';').next().unwrap_or("");
    let mut rest = code.trim();
    let mut labels = Vec::new();
    while let Some(colon) = rest.find(':') {
        let name = rest[..colon].trim();
        if !is_ident(name) || name.starts_with('.') {
            return Err(AsmErrorKind::Syntax(format!("bad label `{name}`")));
        }
        labels.push(name.to_string());
        rest = rest[colon + 1..].trim();
    }
    if rest.is_empty() {
        return Ok((labels, None));
    }
    let (head, tail) = match rest.find(char::is_whitespace) {
        Some(i) => (&rest[..i], rest[i..].trim()),
        None => (rest, ""),
    };
    let operand = || -> Result<Expr, AsmErrorKind> {
        if tail.is_empty() {
            Err(AsmErrorKind::MissingOperand(head.to_string()))
        } else {
            parse_expr(tail)
        }
    };
    let stmt = if head.starts_with('.') {
        match head.to_ascii_lowercase().as_str() {
            ".word" => Stmt::Word(operand()?),
            ".org" => Stmt::Org(operand()?),
            ".space" => Stmt::Space(operand()?),
            ".entry" => Stmt::Entry(operand()?),
            ".result" => Stmt::Result(operand()?),
            ".equ" => {
                let (name, value) = match tail.find(char::is_whitespace) {
                    Some(i) => (&tail[..i], tail[i..].trim()),
                    None => return Err(AsmErrorKind::MissingOperand(head.to_string())),
                };
                if !is_ident(name) || name.starts_with('.') {
                    return Err(AsmErrorKind::Syntax(format!("bad constant name `{name}`")));
                }
                Stmt::Equ(name.to_string(), parse_expr(value)?)
            }
            _ => return Err(AsmErrorKind::UnknownDirective(head.to_string())),
        }
    } else {
        let op = Opcode::from_mnemonic(head).ok_or_else(|| AsmErrorKind::UnknownMnemonic(head.to_string()))?;
        match (op.takes_operand(), tail.is_empty()) {
            (true, true) => return Err(AsmErrorKind::MissingOperand(head.to_string())),
            (false, false) => return Err(AsmErrorKind::UnexpectedOperand(head.to_string())),
            (true, false) => Stmt::Instr(op, Some(parse_expr(tail)?)),
            (false, true) => Stmt::Instr(op, None),
        }
    };
    Ok((labels, Some(stmt)))
}

impl<'a> Assembler<'a> {
    fn new() -> Self {
        let symbols = ThreadState::ALL
            .iter()
            .map(|s| (s.name().to_string(), (s.code() as i64, SymKind::Constant)))
            .collect();
        Assembler { files: Vec::new(), symbols }
    }

    fn error(&self, line: &Line, kind: AsmErrorKind) -> AsmError {
        AsmError { file: self.files[line.file].to_string(), line: line.number, kind }
    }

    fn define(&mut self, name: &str, value: i64, kind: SymKind) -> Result<(), AsmErrorKind> {
        if self.symbols.contains_key(name) {
            return Err(AsmErrorKind::DuplicateSymbol(name.to_string()));
        }
        self.symbols.insert(name.to_string(), (value, kind));
        Ok(())
    }

    /// Value of an expression and whether it names an address.
    fn eval(&self, expr: &Expr) -> Result<(i64, bool), AsmErrorKind> {
        match expr {
            Expr::Num(n) => Ok((*n, false)),
            Expr::Sym(name, k) => match self.symbols.get(name) {
                Some(&(v, kind)) => Ok((v + k, kind == SymKind::Label)),
                None => Err(AsmErrorKind::UndefinedSymbol(name.to_string())),
            },
        }
    }

    fn eval_address(&self, expr: &Expr) -> Result<u32, AsmErrorKind> {
        let (v, _) = self.eval(expr)?;
        if !(0..=MAX_ADDRESS).contains(&v) {
            return Err(AsmErrorKind::AddressOutOfRange(v));
        }
        Ok(v as u32)
    }

    fn run(mut self, sources: &[(&'a str, &'a str)]) -> Result<MemoryImage, AsmError> {
        let mut lines = Vec::new();
        for (file, (name, text)) in sources.iter().enumerate() {
            self.files.push(name);
            for (idx, raw) in text.lines().enumerate() {
                let number = idx + 1;
                let (labels, stmt) = parse_line(raw)
                    .map_err(|kind| AsmError { file: name.to_string(), line: number, kind })?;
                lines.push(Line { file, number, labels, stmt });
            }
        }

        // pass 1: addresses of labels and constants, overlap detection
        let mut claimed: BTreeMap<u32, ()> = BTreeMap::new();
        let mut loc: i64 = 0;
        let mut placed = Vec::with_capacity(lines.len());
        for line in &lines {
            for label in &line.labels {
                self.define(label, loc, SymKind::Label).map_err(|k| self.error(line, k))?;
            }
            let mut claim = |n: i64, loc: i64| -> Result<(), AsmErrorKind> {
                for a in loc..loc + n {
                    if a > MAX_ADDRESS {
                        return Err(AsmErrorKind::AddressOutOfRange(a));
                    }
                    if claimed.insert(a as u32, ()).is_some() {
                        return Err(AsmErrorKind::Overlap(a as u32));
                    }
                }
                Ok(())
            };
            placed.push(loc);
            match &line.stmt {
                Some(Stmt::Instr(..) | Stmt::Word(_)) => {
                    claim(1, loc).map_err(|k| self.error(line, k))?;
                    loc += 1;
                }
                Some(Stmt::Space(e)) => {
                    let n = self.eval(e).map_err(|k| self.error(line, k))?.0;
                    if n < 0 {
                        return Err(self.error(line, AsmErrorKind::Syntax(format!("negative .space {n}"))));
                    }
                    claim(n, loc).map_err(|k| self.error(line, k))?;
                    loc += n;
                }
                Some(Stmt::Org(e)) => {
                    loc = self.eval_address(e).map_err(|k| self.error(line, k))? as i64;
                }
                Some(Stmt::Equ(name, e)) => {
                    let v = self.eval(e).map_err(|k| self.error(line, k))?.0;
                    self.define(name, v, SymKind::Constant).map_err(|k| self.error(line, k))?;
                }
                Some(Stmt::Entry(_) | Stmt::Result(_)) | None => {}
            }
        }

        // pass 2: emit words
        let mut image = MemoryImage::new();
        for (line, &addr) in lines.iter().zip(&placed) {
            let err = |k| self.error(line, k);
            match &line.stmt {
                Some(Stmt::Instr(op, expr)) => {
                    let operand = match expr {
                        None => 0,
                        Some(e) => {
                            let (v, is_addr) = self.eval(e).map_err(err)?;
                            if op.is_relative() && is_addr {
                                v - (addr + 1)
                            } else {
                                v
                            }
                        }
                    };
                    let word = encode_instruction(*op, operand)
                        .map_err(|_| err(AsmErrorKind::OperandOutOfRange(operand)))?;
                    image.insert(addr as u32, word.raw());
                }
                Some(Stmt::Word(e)) => {
                    let v = self.eval(e).map_err(err)?.0;
                    if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                        return Err(err(AsmErrorKind::OperandOutOfRange(v)));
                    }
                    image.insert(addr as u32, v as u32);
                }
                Some(Stmt::Entry(e)) => image.entry_tcb = Some(self.eval_address(e).map_err(err)?),
                Some(Stmt::Result(e)) => image.results.push(self.eval_address(e).map_err(err)?),
                _ => {}
            }
        }
        image.symbols = self
            .symbols
            .iter()
            .filter(|(_, (_, kind))| *kind == SymKind::Label)
            .map(|(name, (v, _))| (name.clone(), *v as u32))
            .collect();
        Ok(image)
    }
}

pub fn assemble(source: &str) -> Result<MemoryImage, AsmError> {
    assemble_sources(&[("<input>", source)])
}

/// Assembles several sources as one program sharing a single symbol table,
/// in the order given.
pub fn assemble_sources(sources: &[(&str, &str)]) -> Result<MemoryImage, AsmError> {
    Assembler::new().run(sources)
}

/// Renders a word as an instruction line, or `None` when it has no
/// instruction spelling that assembles back to the same word.
pub fn instruction_text(word: u32) -> Option<String> {
    let (op, k) = decode_instruction(InstructionWord(word)).ok()?;
    match (op.takes_operand(), k) {
        (false, 0) => Some(op.mnemonic().to_string()),
        (false, _) => None,
        (true, k) => Some(format!("{} {k}", op.mnemonic())),
    }
}

/// Lists an image as assembly source; assembling the listing reproduces
/// the image exactly.
pub fn disassemble(image: &MemoryImage) -> String {
    let mut out = String::new();
    if let Some(e) = image.entry_tcb {
        writeln!(out, ".entry {e}").unwrap();
    }
    for r in &image.results {
        writeln!(out, ".result {r}").unwrap();
    }

    let mut labels: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &addr) in &image.symbols {
        labels.entry(addr).or_default().push(name);
    }
    let mut addrs: Vec<u32> = image.words().keys().chain(labels.keys()).copied().collect();
    addrs.sort_unstable();
    addrs.dedup();

    let mut loc: u32 = 0;
    for addr in addrs {
        if addr != loc {
            writeln!(out, ".org {addr}").unwrap();
            loc = addr;
        }
        for name in labels.get(&addr).into_iter().flatten() {
            writeln!(out, "{name}:").unwrap();
        }
        let Some(word) = image.get(addr) else { continue };
        match instruction_text(word) {
            Some(text) => {
                let (op, k) = decode_instruction(InstructionWord(word)).unwrap();
                if op.is_relative() {
                    let target = addr as i64 + 1 + k as i64;
                    writeln!(out, "    {text:<16}; -> {target}").unwrap();
                } else {
                    writeln!(out, "    {text}").unwrap();
                }
            }
            None => writeln!(out, "    .word {word:<14}; {word:#010x} not an instruction").unwrap(),
        }
        loc = addr + 1;
    }
    out
}
