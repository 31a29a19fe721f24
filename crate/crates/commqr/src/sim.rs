//! Per-processor clocks for the simulated parallel executors, and the
//! report type shared by every executor.

use serde::Serialize;

use crate::householder::FlopCounter;
use crate::machine::MachineModel;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransferCounters {
    pub messages: u64,
    pub words: u64,
}

impl TransferCounters {
    pub fn add(&mut self, words: u64) {
        self.messages += 1;
        self.words += words;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    pub flops: FlopCounter,
    pub comm: TransferCounters,
    pub critical_path_time: f64,
    pub latency_time: f64,
    pub bandwidth_time: f64,
    pub compute_time: f64,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    schema_version: u32,
    messages: u64,
    words: u64,
    multiplies: u64,
    adds: u64,
    divides: u64,
    latency_time: f64,
    bandwidth_time: f64,
    compute_time: f64,
    total_time: f64,
    notes: &'a [String],
}

impl CostReport {
    /// Report for a sequential run: every transfer and flop is on the path.
    pub fn sequential(flops: FlopCounter, comm: TransferCounters, machine: &MachineModel) -> Self {
        let latency_time = machine.alpha * comm.messages as f64;
        let bandwidth_time = machine.beta * comm.words as f64;
        let compute_time = compute_seconds(&flops, machine);
        CostReport {
            flops,
            comm,
            critical_path_time: latency_time + bandwidth_time + compute_time,
            latency_time,
            bandwidth_time,
            compute_time,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ReportJson {
            schema_version: REPORT_SCHEMA_VERSION,
            messages: self.comm.messages,
            words: self.comm.words,
            multiplies: self.flops.multiplies,
            adds: self.flops.adds,
            divides: self.flops.divides,
            latency_time: self.latency_time,
            bandwidth_time: self.bandwidth_time,
            compute_time: self.compute_time,
            total_time: self.critical_path_time,
            notes: &self.notes,
        })
        .expect("report serializes")
    }
}

fn compute_seconds(fc: &FlopCounter, m: &MachineModel) -> f64 {
    m.gamma * fc.flops() as f64 + m.gamma_d * fc.divides as f64
}

/// Work accumulated along the chain that currently bounds one clock.
#[derive(Clone, Debug, Default)]
struct Path {
    latency: f64,
    bandwidth: f64,
    compute: f64,
    comm: TransferCounters,
    flops: FlopCounter,
}

impl Path {
    fn time(&self) -> f64 {
        self.latency + self.bandwidth + self.compute
    }

    fn later_than(&self, other: &Path) -> bool {
        let (a, b) = (self.time(), other.time());
        a > b || (a == b && self.comm.messages > other.comm.messages)
    }
}

/// Deterministic α-β-γ clocks for `P` virtual processors.
pub struct Simulator<'m> {
    machine: &'m MachineModel,
    paths: Vec<Path>,
    total: TransferCounters,
    total_flops: FlopCounter,
}

impl<'m> Simulator<'m> {
    pub fn new(machine: &'m MachineModel, procs: usize) -> Self {
        Simulator {
            machine,
            paths: vec![Path::default(); procs],
            total: TransferCounters::default(),
            total_flops: FlopCounter::default(),
        }
    }

    pub fn compute(&mut self, p: usize, fc: &FlopCounter) {
        let path = &mut self.paths[p];
        path.compute += compute_seconds(fc, self.machine);
        path.flops.merge(fc);
        self.total_flops.merge(fc);
    }

    fn join(&self, procs: &[usize]) -> Path {
        let mut best = self.paths[procs[0]].clone();
        for &p in &procs[1..] {
            if self.paths[p].later_than(&best) {
                best = self.paths[p].clone();
            }
        }
        best
    }

    fn charge(&self, path: &mut Path, hops: u64, words: u64) {
        path.latency += self.machine.alpha * hops as f64;
        path.bandwidth += self.machine.beta * (hops * words) as f64;
        path.comm.messages += hops;
        path.comm.words += hops * words;
    }

    /// Point-to-point message: both clocks synchronize to their max, then
    /// both advance by `α + β·words`.
    pub fn send(&mut self, from: usize, to: usize, words: u64) {
        if from == to {
            return;
        }
        let mut path = self.join(&[from, to]);
        self.charge(&mut path, 1, words);
        self.paths[from] = path.clone();
        self.paths[to] = path;
        self.total.add(words);
    }

    /// Tree collective among `procs` charged `hops` messages of `words`
    /// each on every participant's path.
    pub fn collective(&mut self, procs: &[usize], hops: u64, words: u64) {
        if procs.len() < 2 || hops == 0 {
            return;
        }
        let mut path = self.join(procs);
        self.charge(&mut path, hops, words);
        for &p in procs {
            self.paths[p] = path.clone();
        }
        self.total.messages += hops * (procs.len() as u64 - 1);
        self.total.words += hops * words * (procs.len() as u64 - 1);
    }

    /// Advance every clock to the latest one without sending anything.
    pub fn barrier(&mut self) {
        let all: Vec<usize> = (0..self.paths.len()).collect();
        let path = self.join(&all);
        for p in &mut self.paths {
            *p = path.clone();
        }
    }

    /// Messages actually sent, over all processors.
    pub fn total_traffic(&self) -> TransferCounters {
        self.total
    }

    pub fn total_flops(&self) -> FlopCounter {
        self.total_flops
    }

    /// Counters along the chain ending at the latest clock.
    pub fn report(&self) -> CostReport {
        let all: Vec<usize> = (0..self.paths.len()).collect();
        let path = self.join(&all);
        CostReport {
            flops: path.flops,
            comm: path.comm,
            critical_path_time: path.time(),
            latency_time: path.latency,
            bandwidth_time: path.bandwidth,
            compute_time: path.compute,
            notes: Vec::new(),
        }
    }
}
