//! A bytecode VM whose only concurrency support is bounded execution of a
//! thread plus an atomic per-thread state flag. Thread creation, run
//! queues, schedulers and semaphores are ordinary VM programs (see
//! [`stdlib`]), so one VM binary supports many concurrency models.

pub mod asm;
pub mod cli;
pub mod image;
pub mod isa;
pub mod native;
pub mod stdlib;
pub mod trace;
pub mod vm;

pub use asm::{assemble, assemble_sources, disassemble, AsmError};
pub use image::MemoryImage;
pub use isa::{decode_instruction, encode_instruction, InstructionWord, Opcode};
pub use trace::TraceEntry;
pub use vm::{RootExit, RootOutcome, ThreadState, Trap, TrapKind, Vm, VmConfig, VmError};
