//! Instruction set and the packed instruction word.
//!
//! A word is 32 bits: the top 6 bits hold the opcode, the low 26 bits a
//! two's complement operand (a literal, a relative jump offset, or a state
//! code depending on the opcode).

use std::fmt;

use thiserror::Error;

pub const OPCODE_BITS: u32 = 6;
pub const OPERAND_BITS: u32 = 26;
pub const OPERAND_MASK: u32 = (1 << OPERAND_BITS) - 1;
pub const OPERAND_MIN: i32 = -(1 << (OPERAND_BITS - 1));
pub const OPERAND_MAX: i32 = (1 << (OPERAND_BITS - 1)) - 1;

macro_rules! opcodes {
    ($($name:ident = $code:literal, $mnemonic:literal, $operand:literal;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Opcode {
            $($name = $code,)*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$name,)*];

            pub fn from_code(code: u8) -> Option<Opcode> {
                match code {
                    $($code => Some(Opcode::$name),)*
                    _ => None,
                }
            }

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$name => $mnemonic,)*
                }
            }

            /// Case-insensitive lookup by mnemonic.
            pub fn from_mnemonic(text: &str) -> Option<Opcode> {
                $(if text.eq_ignore_ascii_case($mnemonic) { return Some(Opcode::$name); })*
                None
            }

            /// Whether the instruction reads its immediate operand.
            pub fn takes_operand(self) -> bool {
                match self {
                    $(Opcode::$name => $operand,)*
                }
            }
        }
    };
}

opcodes! {
    Noop = 0, "NOOP", false;
    Halt = 1, "HALT", false;
    Push = 2, "PUSH", true;
    Drop = 3, "DROP", false;
    Dup = 4, "DUP", false;
    Swap = 5, "SWAP", false;
    Over = 6, "OVER", false;
    Add = 7, "ADD", false;
    Sub = 8, "SUB", false;
    Mul = 9, "MUL", false;
    DivMod = 10, "DIVMOD", false;
    Lt = 11, "LT", false;
    Eq = 12, "EQ", false;
    Not = 13, "NOT", false;
    Load = 14, "LOAD", false;
    Store = 15, "STORE", false;
    Jump = 16, "JUMP", true;
    Jz = 17, "JZ", true;
    Call = 18, "CALL", true;
    Ret = 19, "RET", false;
    Bounded = 20, "BOUNDED", false;
    SetState = 21, "SETSTATE", true;
    GetState = 22, "GETSTATE", false;
    Current = 23, "CURRENT", false;
    Ticks = 24, "TICKS", false;
}

impl Opcode {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Operand is an offset relative to the instruction pointer after fetch.
    pub fn is_relative(self) -> bool {
        matches!(self, Opcode::Jump | Opcode::Jz | Opcode::Call)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InstructionWord(pub u32);

impl InstructionWord {
    pub fn raw(self) -> u32 {
        self.0
    }
}

impl fmt::Display for InstructionWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("operand {value} does not fit in {OPERAND_BITS} signed bits")]
    OperandOutOfRange { value: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("illegal instruction {:#010x}", .raw)]
    IllegalInstruction { raw: u32 },
}

pub fn operand_in_range(value: i64) -> bool {
    (OPERAND_MIN as i64..=OPERAND_MAX as i64).contains(&value)
}

pub fn encode_instruction(opcode: Opcode, operand: i64) -> Result<InstructionWord, EncodeError> {
    if !operand_in_range(operand) {
        return Err(EncodeError::OperandOutOfRange { value: operand });
    }
    let raw = ((opcode.code() as u32) << OPERAND_BITS) | (operand as u32 & OPERAND_MASK);
    Ok(InstructionWord(raw))
}

pub fn decode_instruction(word: InstructionWord) -> Result<(Opcode, i32), DecodeError> {
    let code = (word.0 >> OPERAND_BITS) as u8;
    let opcode = Opcode::from_code(code).ok_or(DecodeError::IllegalInstruction { raw: word.0 })?;
    // sign-extend the low 26 bits
    let operand = ((word.0 << OPCODE_BITS) as i32) >> OPCODE_BITS;
    Ok((opcode, operand))
}
