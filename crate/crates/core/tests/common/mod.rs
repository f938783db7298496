#![allow(dead_code)]

use std::fmt::Write as _;

use bvm::native::{self, SchedulerLayout};
use bvm::stdlib::{self, Scheduler, Workload, TCB_SIZE};
use bvm::trace::{self, TraceEntry};
use bvm::{MemoryImage, RootExit, Vm, VmError};
use rand::Rng;

pub const MAX_TICKS: u64 = 10_000_000;

pub struct Run {
    pub vm: Vm,
    pub image: MemoryImage,
    pub exit: Result<RootExit, VmError>,
    pub trace: Vec<TraceEntry>,
}

impl Run {
    pub fn sym(&self, name: &str) -> u32 {
        sym(&self.image, name)
    }

    pub fn cell(&self, name: &str) -> i32 {
        self.vm.read_i32(self.sym(name)).unwrap()
    }

    pub fn root(&self) -> u32 {
        self.image.entry_tcb.unwrap()
    }

    pub fn workers(&self) -> Vec<TraceEntry> {
        trace::workers_view(&self.trace, self.root())
    }

    pub fn exit(&self) -> RootExit {
        self.exit.clone().unwrap()
    }
}

pub fn sym(image: &MemoryImage, name: &str) -> u32 {
    image.symbol(name).unwrap_or_else(|| panic!("no symbol {name}"))
}

/// Address `spawn` hands out for the `n`th thread created.
pub fn pool_tcb(image: &MemoryImage, n: u32) -> u32 {
    sym(image, "tcb_pool") + n * TCB_SIZE
}

pub fn load(image: &MemoryImage, pokes: &[(&str, i32)]) -> Vm {
    let mut vm = Vm::with_capacity(65536);
    vm.set_max_ticks(Some(MAX_TICKS));
    vm.load_image(image).unwrap();
    for &(name, value) in pokes {
        vm.write_i32(sym(image, name), value).unwrap();
    }
    vm.enable_tracing();
    vm
}

pub fn run_target(image: &MemoryImage, pokes: &[(&str, i32)]) -> Run {
    let mut vm = load(image, pokes);
    let exit = vm.run_root(image.entry_tcb.unwrap(), 100_000);
    let trace = vm.take_trace();
    Run { vm, image: image.clone(), exit, trace }
}

pub fn run_native(image: &MemoryImage, pokes: &[(&str, i32)]) -> Run {
    let mut vm = load(image, pokes);
    let layout = SchedulerLayout::from_image(image).unwrap();
    let exit = native::run(&mut vm, &layout).map_err(|e| match e {
        native::NativeError::Vm(v) => v,
        other => panic!("{other}"),
    });
    let trace = vm.take_trace();
    Run { vm, image: image.clone(), exit, trace }
}

pub fn build(scheduler: Scheduler, workload: Workload) -> MemoryImage {
    stdlib::build(scheduler, workload).unwrap()
}

pub fn build_text(scheduler: Scheduler, text: &str) -> MemoryImage {
    stdlib::build_with(scheduler, ("test.bva", text)).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

/// Workload source whose `setup` spawns each `(entry, queue)` pair with
/// its own 32-word stack `stack_<i>`, followed by `body` and `data`.
pub fn workload(threads: &[(&str, &str)], body: &str, data: &str) -> String {
    let mut s = String::from(".org 1024\nsetup:\n");
    for (i, (entry, queue)) in threads.iter().enumerate() {
        writeln!(s, "    PUSH {entry}\n    PUSH stack_{i}\n    PUSH 32\n    PUSH {queue}\n    CALL spawn\n    DROP").unwrap();
    }
    s.push_str("    RET\n");
    s.push_str(body);
    s.push_str("\n.org 2048\n");
    s.push_str(data);
    s.push('\n');
    for i in 0..threads.len() {
        writeln!(s, "stack_{i}: .space 32").unwrap();
    }
    s
}

/// Straight-line stack arithmetic touching only the thread's own stack
/// and its private cell, ending in HALT. Stack depth stays below 12.
pub fn random_arith_program(rng: &mut impl Rng, private_cell: &str, len: usize) -> String {
    let mut out = String::new();
    let mut depth = 0usize;
    for _ in 0..len {
        let choice = rng.gen_range(0..12);
        let line = match choice {
            0 | 1 if depth < 10 => {
                depth += 1;
                format!("PUSH {}", rng.gen_range(-1000..1000))
            }
            2 if (1..10).contains(&depth) => {
                depth += 1;
                "DUP".to_string()
            }
            3 if (2..10).contains(&depth) => {
                depth += 1;
                "OVER".to_string()
            }
            4 if depth >= 2 => "SWAP".to_string(),
            5 if depth >= 1 => {
                depth -= 1;
                "DROP".to_string()
            }
            6 if depth >= 2 => {
                depth -= 1;
                ["ADD", "SUB", "MUL", "LT", "EQ"][rng.gen_range(0..5)].to_string()
            }
            7 if depth >= 1 => "NOT".to_string(),
            8 if (1..9).contains(&depth) => {
                depth += 1;
                let d = rng.gen_range(1..50) * if rng.gen_bool(0.5) { 1 } else { -1 };
                format!("PUSH {d}\nDIVMOD")
            }
            9 if depth >= 1 => {
                depth -= 1;
                format!("PUSH {private_cell}\nSTORE")
            }
            10 if depth < 10 => {
                depth += 1;
                format!("PUSH {private_cell}\nLOAD")
            }
            _ => "NOOP".to_string(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("HALT\n");
    out
}

/// A workload of `threads` threads spread over the three run queues,
/// each running a random script of busy work and waits/signals on three
/// semaphores with random initial counts.
pub fn random_sync_workload(rng: &mut impl Rng, threads: usize) -> String {
    let queues = ["runq_hi", "runq", "runq_lo"];
    let entries: Vec<String> = (0..threads).map(|i| format!("th_{i}")).collect();
    let pairs: Vec<(&str, &str)> =
        entries.iter().map(|e| (e.as_str(), queues[rng.gen_range(0..3)])).collect();
    let mut body = String::new();
    for e in &entries {
        writeln!(body, "{e}:").unwrap();
        for _ in 0..rng.gen_range(2..8) {
            match rng.gen_range(0..4) {
                0 | 1 => {
                    for _ in 0..rng.gen_range(1..15) {
                        body.push_str("    NOOP\n");
                    }
                }
                2 => writeln!(body, "    PUSH sem_{}\n    CALL sem_wait", rng.gen_range(0..3)).unwrap(),
                _ => writeln!(body, "    PUSH sem_{}\n    CALL sem_signal", rng.gen_range(0..3)).unwrap(),
            }
        }
        body.push_str("    HALT\n");
    }
    let mut data = String::new();
    for j in 0..3 {
        writeln!(data, "sem_{j}:\n    .word {}\n    .word 0\n    .word 0\n    .word 0\n    .word 16\n    .space 16", rng.gen_range(0..3))
            .unwrap();
    }
    workload(&pairs, &body, &data)
}

/// Owner-tracking scan: between a thread reaching `enter` and reaching
/// `exit`, no other thread executes an instruction in `[enter, exit]`.
pub fn critical_sections_exclusive(entries: &[TraceEntry], enter: u32, exit: u32) -> Result<usize, String> {
    let mut owner: Option<u32> = None;
    let mut sections = 0;
    for e in entries {
        if e.ip < enter || e.ip > exit {
            continue;
        }
        if e.ip == enter {
            if let Some(o) = owner {
                return Err(format!("tick {}: thread {} entered while {} inside", e.tick, e.tcb, o));
            }
            owner = Some(e.tcb);
            sections += 1;
        } else if owner != Some(e.tcb) {
            return Err(format!("tick {}: thread {} in section owned by {:?}", e.tick, e.tcb, owner));
        }
        if e.ip == exit {
            owner = None;
        }
    }
    Ok(sections)
}
