//! VM memory, registers, single-step dispatch, context switching and the
//! bounded inner interpreter.
//!
//! The VM knows nothing about schedulers, queues or semaphores. Its only
//! concurrency support is `bounded` (run a thread for at most N
//! instructions unless it is PRIORITISED) and the per-thread state flag,
//! which programs set with SETSTATE or a plain STORE into their TCB.

use std::fmt;

use thiserror::Error;

use crate::image::MemoryImage;
use crate::isa::{decode_instruction, InstructionWord, Opcode};
use crate::trace::TraceEntry;

/// Word offsets of the thread control block fields.
pub mod tcb {
    pub const STATE: u32 = 0;
    pub const IP: u32 = 1;
    pub const SP: u32 = 2;
    pub const STACK_BASE: u32 = 3;
    pub const STACK_LIMIT: u32 = 4;
    /// Words the VM itself reads. Programs may keep extra fields after these.
    pub const WORDS: u32 = 5;
}

pub const DEFAULT_CAPACITY: usize = 65536;
pub const DEFAULT_MAX_NESTING: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i32)]
pub enum ThreadState {
    Runnable = 0,
    Blocked = 1,
    Prioritised = 2,
    Finished = 3,
}

impl ThreadState {
    pub const ALL: [ThreadState; 4] = [
        ThreadState::Runnable,
        ThreadState::Blocked,
        ThreadState::Prioritised,
        ThreadState::Finished,
    ];

    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn from_code(code: i64) -> Option<ThreadState> {
        match code {
            0 => Some(ThreadState::Runnable),
            1 => Some(ThreadState::Blocked),
            2 => Some(ThreadState::Prioritised),
            3 => Some(ThreadState::Finished),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThreadState::Runnable => "RUNNABLE",
            ThreadState::Blocked => "BLOCKED",
            ThreadState::Prioritised => "PRIORITISED",
            ThreadState::Finished => "FINISHED",
        }
    }
}

impl fmt::Display for ThreadState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrapKind {
    #[error("illegal instruction {raw:#010x}")]
    IllegalInstruction { raw: u32 },
    #[error("stack overflow")]
    StackOverflow,
    #[error("stack underflow")]
    StackUnderflow,
    #[error("memory access out of bounds at {addr}")]
    MemoryOutOfBounds { addr: i64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid thread state {value}")]
    InvalidState { value: i64 },
    #[error("thread {tcb} is {state} and cannot be run")]
    NotSchedulable { tcb: u32, state: ThreadState },
    #[error("negative bound {bound}")]
    NegativeBound { bound: i32 },
    #[error("bounded runs nested deeper than {limit} (runaway scheduler recursion)")]
    NestingTooDeep { limit: usize },
    #[error("thread control block at {tcb} has inconsistent stack fields")]
    CorruptTcb { tcb: u32 },
    #[error("no active thread")]
    NoActiveThread,
}

/// A fault that halts the VM, located by tick, thread and instruction
/// address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trap {
    pub tick: u64,
    pub tcb: Option<u32>,
    pub ip: u32,
    pub kind: TrapKind,
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trap at tick {} (tcb ", self.tick)?;
        match self.tcb {
            Some(t) => write!(f, "{t}")?,
            None => f.write_str("none")?,
        }
        write!(f, ", ip {}): {}", self.ip, self.kind)
    }
}

impl std::error::Error for Trap {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error(transparent)]
    Trap(#[from] Trap),
    #[error("tick limit of {limit} instructions reached")]
    TickLimit { limit: u64 },
    #[error("root slice must be positive")]
    ZeroSlice,
    #[error("image word at {addr} lies outside memory of {capacity} words")]
    ImageOutOfBounds { addr: u32, capacity: usize },
}

#[derive(Debug, Clone)]
pub struct VmConfig {
    pub capacity: usize,
    pub max_nesting: usize,
    /// Total instructions the VM may execute before failing with
    /// [`VmError::TickLimit`].
    pub max_ticks: Option<u64>,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig { capacity: DEFAULT_CAPACITY, max_nesting: DEFAULT_MAX_NESTING, max_ticks: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Registers {
    pub current: Option<u32>,
    pub ip: u32,
    pub sp: u32,
    pub stack_base: u32,
    pub stack_limit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootOutcome {
    Finished,
    /// The root thread itself came back BLOCKED.
    Deadlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RootExit {
    pub outcome: RootOutcome,
    pub ticks: u64,
}

#[derive(Clone)]
pub struct Vm {
    mem: Vec<u32>,
    regs: Registers,
    ticks: u64,
    depth: usize,
    config: VmConfig,
    trace: Option<Vec<TraceEntry>>,
}

/// Where a fault happened, captured before the instruction runs.
#[derive(Clone, Copy)]
struct At {
    tick: u64,
    tcb: Option<u32>,
    ip: u32,
}

impl At {
    fn trap(self, kind: TrapKind) -> VmError {
        VmError::Trap(Trap { tick: self.tick, tcb: self.tcb, ip: self.ip, kind })
    }
}

impl Vm {
    pub fn new(config: VmConfig) -> Vm {
        Vm {
            mem: vec![0; config.capacity],
            regs: Registers::default(),
            ticks: 0,
            depth: 0,
            config,
            trace: None,
        }
    }

    pub fn with_capacity(capacity: usize) -> Vm {
        Vm::new(VmConfig { capacity, ..VmConfig::default() })
    }

    pub fn capacity(&self) -> usize {
        self.mem.len()
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn set_max_ticks(&mut self, limit: Option<u64>) {
        self.config.max_ticks = limit;
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn registers(&self) -> Registers {
        self.regs
    }

    pub fn current(&self) -> Option<u32> {
        self.regs.current
    }

    pub fn enable_tracing(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn read(&self, addr: u32) -> Option<u32> {
        self.mem.get(addr as usize).copied()
    }

    pub fn read_i32(&self, addr: u32) -> Option<i32> {
        self.read(addr).map(|w| w as i32)
    }

    pub fn write(&mut self, addr: u32, value: u32) -> Option<()> {
        let slot = self.mem.get_mut(addr as usize)?;
        *slot = value;
        Some(())
    }

    pub fn write_i32(&mut self, addr: u32, value: i32) -> Option<()> {
        self.write(addr, value as u32)
    }

    pub fn load_image(&mut self, image: &MemoryImage) -> Result<(), VmError> {
        for (&addr, &word) in image.words() {
            if self.write(addr, word).is_none() {
                return Err(VmError::ImageOutOfBounds { addr, capacity: self.capacity() });
            }
        }
        Ok(())
    }

    /// Writes a fresh RUNNABLE thread control block at `at` with an empty
    /// stack spanning `[stack_base, stack_limit)`.
    pub fn init_tcb(&mut self, at: u32, entry: u32, stack_base: u32, stack_limit: u32) -> Option<()> {
        self.write_i32(at + tcb::STATE, ThreadState::Runnable.code())?;
        self.write(at + tcb::IP, entry)?;
        self.write(at + tcb::SP, stack_base)?;
        self.write(at + tcb::STACK_BASE, stack_base)?;
        self.write(at + tcb::STACK_LIMIT, stack_limit)
    }

    /// The state word of the thread at `tcb`, if it holds a valid code.
    pub fn thread_state(&self, tcb: u32) -> Option<ThreadState> {
        ThreadState::from_code(self.read_i32(tcb)? as i64)
    }

    /// Stack contents of an inactive thread, bottom first.
    pub fn thread_stack(&self, at: u32) -> Option<Vec<i32>> {
        let sp = self.read(at + tcb::SP)? as usize;
        let base = self.read(at + tcb::STACK_BASE)? as usize;
        let words = self.mem.get(base..sp)?;
        Some(words.iter().map(|&w| w as i32).collect())
    }

    fn here(&self) -> At {
        At { tick: self.ticks, tcb: self.regs.current, ip: self.regs.ip }
    }

    fn check_tcb_range(&self, at: i64) -> Result<u32, TrapKind> {
        if at < 0 || at + tcb::WORDS as i64 > self.mem.len() as i64 {
            return Err(TrapKind::MemoryOutOfBounds { addr: at });
        }
        Ok(at as u32)
    }

    /// Saves the active thread's ip and sp into its TCB and loads the
    /// registers of `thread`. `None` leaves no thread active. Returns the
    /// previously active thread.
    pub fn activate(&mut self, thread: Option<u32>) -> Result<Option<u32>, VmError> {
        let at = self.here();
        let prev = self.regs.current;
        if let Some(t) = thread {
            self.check_tcb_range(t as i64).map_err(|k| at.trap(k))?;
        }
        if let Some(p) = prev {
            self.mem[(p + tcb::IP) as usize] = self.regs.ip;
            self.mem[(p + tcb::SP) as usize] = self.regs.sp;
        }
        match thread {
            None => self.regs = Registers::default(),
            Some(t) => {
                let field = |f: u32| self.mem[(t + f) as usize];
                let regs = Registers {
                    current: Some(t),
                    ip: field(tcb::IP),
                    sp: field(tcb::SP),
                    stack_base: field(tcb::STACK_BASE),
                    stack_limit: field(tcb::STACK_LIMIT),
                };
                if !(regs.stack_base <= regs.sp
                    && regs.sp <= regs.stack_limit
                    && regs.stack_limit as usize <= self.mem.len())
                {
                    return Err(at.trap(TrapKind::CorruptTcb { tcb: t }));
                }
                self.regs = regs;
            }
        }
        Ok(prev)
    }

    /// Writes the active thread's state flag.
    pub fn set_thread_state(&mut self, state: ThreadState) -> Result<(), VmError> {
        let at = self.here();
        let t = self.regs.current.ok_or_else(|| at.trap(TrapKind::NoActiveThread))?;
        self.mem[(t + tcb::STATE) as usize] = state.code() as u32;
        Ok(())
    }

    fn current_state(&self) -> Result<ThreadState, VmError> {
        let at = self.here();
        let t = self.regs.current.ok_or_else(|| at.trap(TrapKind::NoActiveThread))?;
        let raw = self.mem[(t + tcb::STATE) as usize] as i32 as i64;
        ThreadState::from_code(raw).ok_or_else(|| at.trap(TrapKind::InvalidState { value: raw }))
    }

    /// Runs `thread` for at most `bound` instructions.
    ///
    /// The thread is marked RUNNABLE on entry. Each loop iteration reads its
    /// state flag: PRIORITISED keeps running without consuming the bound,
    /// RUNNABLE consumes one unit of the bound (stopping once it is spent),
    /// and BLOCKED or FINISHED stop immediately. The previously active
    /// thread is restored and the final state returned.
    pub fn bounded(&mut self, bound: u64, thread: u32) -> Result<ThreadState, VmError> {
        let at = self.here();
        if self.depth >= self.config.max_nesting {
            return Err(at.trap(TrapKind::NestingTooDeep { limit: self.config.max_nesting }));
        }
        let t = self.check_tcb_range(thread as i64).map_err(|k| at.trap(k))?;
        let raw = self.mem[t as usize] as i32 as i64;
        match ThreadState::from_code(raw) {
            Some(ThreadState::Runnable | ThreadState::Prioritised) => {}
            Some(state) => return Err(at.trap(TrapKind::NotSchedulable { tcb: t, state })),
            None => return Err(at.trap(TrapKind::InvalidState { value: raw })),
        }

        let prev = self.activate(Some(t))?;
        self.depth += 1;
        self.mem[(t + tcb::STATE) as usize] = ThreadState::Runnable.code() as u32;
        let result = self.run_quantum(bound);
        self.depth -= 1;
        let state = result?;
        self.activate(prev)?;
        Ok(state)
    }

    fn run_quantum(&mut self, bound: u64) -> Result<ThreadState, VmError> {
        let mut n = bound;
        loop {
            let state = self.current_state()?;
            let go = match state {
                ThreadState::Prioritised => true,
                ThreadState::Runnable if n > 0 => {
                    n -= 1;
                    true
                }
                _ => false,
            };
            if !go {
                return Ok(state);
            }
            self.step()?;
        }
    }

    /// Host entry point: repeatedly gives the root thread `slice`
    /// instructions until it finishes or blocks.
    pub fn run_root(&mut self, root: u32, slice: u64) -> Result<RootExit, VmError> {
        if slice == 0 {
            return Err(VmError::ZeroSlice);
        }
        loop {
            let outcome = match self.bounded(slice, root)? {
                ThreadState::Finished => RootOutcome::Finished,
                ThreadState::Blocked => RootOutcome::Deadlock,
                ThreadState::Runnable | ThreadState::Prioritised => continue,
            };
            return Ok(RootExit { outcome, ticks: self.ticks });
        }
    }

    #[inline]
    fn push(&mut self, value: i32) -> Result<(), TrapKind> {
        if self.regs.sp >= self.regs.stack_limit {
            return Err(TrapKind::StackOverflow);
        }
        self.mem[self.regs.sp as usize] = value as u32;
        self.regs.sp += 1;
        Ok(())
    }

    #[inline]
    fn pop(&mut self) -> Result<i32, TrapKind> {
        if self.regs.sp <= self.regs.stack_base {
            return Err(TrapKind::StackUnderflow);
        }
        self.regs.sp -= 1;
        Ok(self.mem[self.regs.sp as usize] as i32)
    }

    #[inline]
    fn peek(&self, depth: u32) -> Result<i32, TrapKind> {
        if self.regs.sp < self.regs.stack_base + depth + 1 {
            return Err(TrapKind::StackUnderflow);
        }
        Ok(self.mem[(self.regs.sp - depth - 1) as usize] as i32)
    }

    fn addr(&self, value: i64) -> Result<usize, TrapKind> {
        if value < 0 || value >= self.mem.len() as i64 {
            return Err(TrapKind::MemoryOutOfBounds { addr: value });
        }
        Ok(value as usize)
    }

    fn jump(&mut self, offset: i32) -> Result<(), TrapKind> {
        let target = self.regs.ip as i64 + offset as i64;
        self.regs.ip = self.addr(target)? as u32;
        Ok(())
    }

    /// Fetches, decodes and executes one instruction of the active thread.
    pub fn step(&mut self) -> Result<(), VmError> {
        let ip = self.regs.ip;
        let mut at = At { tick: self.ticks + 1, tcb: self.regs.current, ip };
        let Some(tcb_addr) = self.regs.current else {
            return Err(at.trap(TrapKind::NoActiveThread));
        };
        if let Some(limit) = self.config.max_ticks {
            if self.ticks >= limit {
                return Err(VmError::TickLimit { limit });
            }
        }
        let raw = *self
            .mem
            .get(ip as usize)
            .ok_or_else(|| at.trap(TrapKind::MemoryOutOfBounds { addr: ip as i64 }))?;
        let (op, operand) = decode_instruction(InstructionWord(raw))
            .map_err(|_| at.trap(TrapKind::IllegalInstruction { raw }))?;
        self.ticks += 1;
        self.regs.ip = ip + 1;
        if let Some(trace) = self.trace.as_mut() {
            let tos = (self.regs.sp > self.regs.stack_base)
                .then(|| self.mem[(self.regs.sp - 1) as usize] as i32);
            trace.push(TraceEntry { tick: self.ticks, tcb: tcb_addr, ip, opcode: op, operand, tos });
        }
        at.tick = self.ticks;
        self.execute(op, operand, tcb_addr).map_err(|e| match e {
            Fault::Trap(kind) => at.trap(kind),
            Fault::Vm(err) => err,
        })
    }

    fn execute(&mut self, op: Opcode, operand: i32, current: u32) -> Result<(), Fault> {
        match op {
            Opcode::Noop => {}
            Opcode::Halt => {
                self.mem[(current + tcb::STATE) as usize] = ThreadState::Finished.code() as u32;
            }
            Opcode::Push => self.push(operand)?,
            Opcode::Drop => {
                self.pop()?;
            }
            Opcode::Dup => {
                let a = self.peek(0)?;
                self.push(a)?;
            }
            Opcode::Swap => {
                let b = self.pop()?;
                let a = self.pop()?;
                self.push(b)?;
                self.push(a)?;
            }
            Opcode::Over => {
                let a = self.peek(1)?;
                self.push(a)?;
            }
            Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Lt | Opcode::Eq => {
                let b = self.pop()?;
                let a = self.pop()?;
                let r = match op {
                    Opcode::Add => a.wrapping_add(b),
                    Opcode::Sub => a.wrapping_sub(b),
                    Opcode::Mul => a.wrapping_mul(b),
                    Opcode::Lt => (a < b) as i32,
                    _ => (a == b) as i32,
                };
                self.push(r)?;
            }
            Opcode::DivMod => {
                let b = self.pop()?;
                let a = self.pop()?;
                if b == 0 {
                    return Err(TrapKind::DivisionByZero.into());
                }
                self.push(a.wrapping_div(b))?;
                self.push(a.wrapping_rem(b))?;
            }
            Opcode::Not => {
                let a = self.pop()?;
                self.push((a == 0) as i32)?;
            }
            Opcode::Load => {
                let a = self.pop()?;
                let addr = self.addr(a as i64)?;
                self.push(self.mem[addr] as i32)?;
            }
            Opcode::Store => {
                let a = self.pop()?;
                let v = self.pop()?;
                let addr = self.addr(a as i64)?;
                self.mem[addr] = v as u32;
            }
            Opcode::Jump => self.jump(operand)?,
            Opcode::Jz => {
                if self.pop()? == 0 {
                    self.jump(operand)?;
                }
            }
            Opcode::Call => {
                self.push(self.regs.ip as i32)?;
                self.jump(operand)?;
            }
            Opcode::Ret => {
                let target = self.pop()?;
                self.regs.ip = self.addr(target as i64)? as u32;
            }
            Opcode::Bounded => {
                let thread = self.pop()?;
                let bound = self.pop()?;
                if bound < 0 {
                    return Err(TrapKind::NegativeBound { bound }.into());
                }
                let t = self.check_tcb_range(thread as i64)?;
                let state = self.bounded(bound as u64, t).map_err(Fault::Vm)?;
                self.push(state.code())?;
            }
            Opcode::SetState => {
                let state = ThreadState::from_code(operand as i64)
                    .ok_or(TrapKind::InvalidState { value: operand as i64 })?;
                self.mem[(current + tcb::STATE) as usize] = state.code() as u32;
            }
            Opcode::GetState => {
                let s = self.mem[(current + tcb::STATE) as usize] as i32;
                self.push(s)?;
            }
            Opcode::Current => self.push(current as i32)?,
            Opcode::Ticks => self.push(self.ticks as i32)?,
        }
        Ok(())
    }
}

enum Fault {
    Trap(TrapKind),
    Vm(VmError),
}

impl From<TrapKind> for Fault {
    fn from(kind: TrapKind) -> Self {
        Fault::Trap(kind)
    }
}
