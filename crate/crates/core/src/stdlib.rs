//! The target-language concurrency library, shipped as `.bva` sources.
//!
//! A runnable program is the concatenation of the library routines
//! (`queue.bva`, `spawn.bva`, `sem.bva`), exactly one scheduler
//! (`rr_sched.bva` or `prio_sched.bva`) and one workload that defines
//! `setup`. Every file places itself with `.org`, so workload code and data
//! land at the same addresses whichever scheduler is linked:
//!
//! | range       | contents                                      |
//! |-------------|-----------------------------------------------|
//! | 16..160     | error cell, queue routines                    |
//! | 160..384    | spawn, live-thread count, TCB pool            |
//! | 384..512    | semaphores                                    |
//! | 512..768    | scheduler code, root TCB, quantum cell        |
//! | 768..1024   | run queues, root stack                        |
//! | 1024..      | workload code; data from 2048                 |

use std::fmt;
use std::str::FromStr;

use crate::asm::{assemble_sources, AsmError};
use crate::image::MemoryImage;

pub const QUEUE: &str = include_str!("../stdlib/queue.bva");
pub const SPAWN: &str = include_str!("../stdlib/spawn.bva");
pub const SEM: &str = include_str!("../stdlib/sem.bva");
pub const RR_SCHED: &str = include_str!("../stdlib/rr_sched.bva");
pub const PRIO_SCHED: &str = include_str!("../stdlib/prio_sched.bva");
pub const COUNTERS: &str = include_str!("../stdlib/counters.bva");
pub const MUTEX_DEMO: &str = include_str!("../stdlib/mutex_demo.bva");
pub const PRODCONS: &str = include_str!("../stdlib/prodcons.bva");

/// Every shipped source with its file name.
pub const ALL_SOURCES: [(&str, &str); 8] = [
    ("queue.bva", QUEUE),
    ("spawn.bva", SPAWN),
    ("sem.bva", SEM),
    ("rr_sched.bva", RR_SCHED),
    ("prio_sched.bva", PRIO_SCHED),
    ("counters.bva", COUNTERS),
    ("mutex_demo.bva", MUTEX_DEMO),
    ("prodcons.bva", PRODCONS),
];

pub const LIBRARY: [(&str, &str); 3] = [("queue.bva", QUEUE), ("spawn.bva", SPAWN), ("sem.bva", SEM)];

/// Extra TCB word holding the thread's home run queue.
pub const TCB_HOME: u32 = 5;
pub const TCB_SIZE: u32 = 6;

/// Queue record field offsets.
pub mod queue {
    pub const HEAD: u32 = 0;
    pub const TAIL: u32 = 1;
    pub const COUNT: u32 = 2;
    pub const CAP: u32 = 3;
    pub const RING: u32 = 4;
}

/// Semaphore record: counter followed by a queue record.
pub const SEM_QUEUE: u32 = 1;

pub const ERR_QUEUE_FULL: i32 = 1;
pub const ERR_POOL_EXHAUSTED: i32 = 2;
pub const ERR_SEM_BREACH: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheduler {
    RoundRobin,
    Priority,
}

impl Scheduler {
    pub fn source(self) -> (&'static str, &'static str) {
        match self {
            Scheduler::RoundRobin => ("rr_sched.bva", RR_SCHED),
            Scheduler::Priority => ("prio_sched.bva", PRIO_SCHED),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    Counters,
    Mutex,
    ProdCons,
}

impl Workload {
    pub const ALL: [Workload; 3] = [Workload::Counters, Workload::Mutex, Workload::ProdCons];

    pub fn source(self) -> (&'static str, &'static str) {
        match self {
            Workload::Counters => ("counters.bva", COUNTERS),
            Workload::Mutex => ("mutex_demo.bva", MUTEX_DEMO),
            Workload::ProdCons => ("prodcons.bva", PRODCONS),
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.source().0.trim_end_matches(".bva"))
    }
}

impl FromStr for Scheduler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" | "round-robin" => Ok(Scheduler::RoundRobin),
            "prio" | "priority" => Ok(Scheduler::Priority),
            _ => Err(format!("unknown scheduler `{s}`")),
        }
    }
}

/// Library, scheduler and workload sources in link order.
pub fn program_sources<'a>(scheduler: Scheduler, workload: (&'a str, &'a str)) -> Vec<(&'a str, &'a str)> {
    let mut sources = LIBRARY.to_vec();
    sources.push(scheduler.source());
    sources.push(workload);
    sources
}

pub fn build(scheduler: Scheduler, workload: Workload) -> Result<MemoryImage, AsmError> {
    build_with(scheduler, workload.source())
}

/// Links a caller-supplied workload (which must define `setup`).
pub fn build_with(scheduler: Scheduler, workload: (&str, &str)) -> Result<MemoryImage, AsmError> {
    assemble_sources(&program_sources(scheduler, workload))
}
