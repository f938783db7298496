//! Host-side reference scheduler.
//!
//! Re-implements the policy of `rr_sched.bva` / `prio_sched.bva` in Rust,
//! driving the same in-memory run queues through [`Vm::bounded`] from
//! outside the VM. Worker threads see exactly the interleaving the
//! target-language scheduler would give them, so the worker view of the
//! two traces must match line for line.

use thiserror::Error;

use crate::image::MemoryImage;
use crate::stdlib::{queue, ERR_QUEUE_FULL};
use crate::vm::{tcb, RootExit, RootOutcome, ThreadState, Vm, VmError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NativeError {
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("image has no `{0}` symbol")]
    MissingSymbol(&'static str),
    #[error("image has no entry thread")]
    NoEntry,
    #[error("root thread became {0} before reaching the scheduler loop")]
    SetupEnded(ThreadState),
}

/// Addresses the native scheduler needs, found through image symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerLayout {
    pub root: u32,
    /// First instruction after `setup` returns.
    pub sched_start: u32,
    /// Run queues, highest priority first.
    pub queues: Vec<u32>,
    pub quantum_cell: u32,
    pub live_cell: u32,
    pub err_cell: u32,
}

impl SchedulerLayout {
    pub fn from_image(image: &MemoryImage) -> Result<SchedulerLayout, NativeError> {
        let sym = |name: &'static str| image.symbol(name).ok_or(NativeError::MissingSymbol(name));
        let table = sym("sched_queues")?;
        let queues = (table..)
            .map(|a| image.get(a).unwrap_or(0))
            .take_while(|&q| q != 0)
            .collect();
        Ok(SchedulerLayout {
            root: image.entry_tcb.ok_or(NativeError::NoEntry)?,
            sched_start: sym("sched_start")?,
            queues,
            quantum_cell: sym("quantum")?,
            live_cell: sym("live_threads")?,
            err_cell: sym("err_cell")?,
        })
    }
}

/// One scheduling decision, reported to the observer after the task's
/// quantum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub task: u32,
    pub queue: u32,
    pub state: ThreadState,
}

fn word(vm: &Vm, addr: u32) -> u32 {
    vm.read(addr).unwrap_or(0)
}

fn host_dequeue(vm: &mut Vm, q: u32) -> Option<u32> {
    let count = word(vm, q + queue::COUNT);
    if count == 0 {
        return None;
    }
    let head = word(vm, q + queue::HEAD);
    let cap = word(vm, q + queue::CAP).max(1);
    let task = word(vm, q + queue::RING + head);
    vm.write(q + queue::HEAD, (head + 1) % cap);
    vm.write(q + queue::COUNT, count - 1);
    Some(task)
}

fn host_enqueue(vm: &mut Vm, q: u32, task: u32) -> bool {
    let count = word(vm, q + queue::COUNT);
    let cap = word(vm, q + queue::CAP);
    if count >= cap {
        return false;
    }
    let tail = word(vm, q + queue::TAIL);
    vm.write(q + queue::RING + tail, task);
    vm.write(q + queue::TAIL, (tail + 1) % cap);
    vm.write(q + queue::COUNT, count + 1);
    true
}

/// Runs the root thread through `setup`, then schedules the spawned
/// threads natively until the queues drain.
pub fn run(vm: &mut Vm, layout: &SchedulerLayout) -> Result<RootExit, NativeError> {
    run_observed(vm, layout, |_, _| {})
}

pub fn run_observed(
    vm: &mut Vm,
    layout: &SchedulerLayout,
    mut observe: impl FnMut(&Vm, Dispatch),
) -> Result<RootExit, NativeError> {
    while word(vm, layout.root + tcb::IP) != layout.sched_start {
        match vm.bounded(1, layout.root)? {
            ThreadState::Runnable => {}
            other => return Err(NativeError::SetupEnded(other)),
        }
    }

    let finished = |vm: &Vm| RootExit { outcome: RootOutcome::Finished, ticks: vm.ticks() };
    loop {
        if word(vm, layout.err_cell) != 0 {
            return Ok(finished(vm));
        }
        let next = layout.queues.iter().find_map(|&q| host_dequeue(vm, q).map(|t| (q, t)));
        let Some((origin, task)) = next else {
            if word(vm, layout.live_cell) == 0 {
                return Ok(finished(vm));
            }
            return Ok(RootExit { outcome: RootOutcome::Deadlock, ticks: vm.ticks() });
        };
        let quantum = word(vm, layout.quantum_cell) as i32;
        if quantum < 0 {
            return Err(VmError::Trap(crate::vm::Trap {
                tick: vm.ticks(),
                tcb: None,
                ip: 0,
                kind: crate::vm::TrapKind::NegativeBound { bound: quantum },
            })
            .into());
        }
        let state = vm.bounded(quantum as u64, task)?;
        observe(vm, Dispatch { task, queue: origin, state });
        match state {
            ThreadState::Runnable => {
                if !host_enqueue(vm, origin, task) {
                    vm.write_i32(layout.err_cell, ERR_QUEUE_FULL);
                }
            }
            ThreadState::Finished => {
                let live = word(vm, layout.live_cell);
                vm.write(layout.live_cell, live.wrapping_sub(1));
            }
            ThreadState::Blocked | ThreadState::Prioritised => {}
        }
    }
}
