use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::buffer::{bin_of, Binning, BufferElement, LengthAwareBuffer, PushOutcome};
use super::cluster::{accuracy_at, allocate_students, service_time, Allocation, ClusterConfig, ServingMode, SimPerf};
use super::controller::{controller_tick, ControllerAction, ControllerView};
use super::metrics::{RequestRecord, SimMetrics};
use super::workload::{generate_workload, Request, WorkloadKind};
use super::SimError;

#[derive(Debug)]
enum Event {
    Arrival(usize),
    Completion(InFlight),
    Tick,
    QueueTimeout,
}

#[derive(Debug)]
struct InFlight {
    node: usize,
    epoch: u64,
    group: usize,
    gpus: Vec<usize>,
    element: BufferElement,
    dispatch_ms: f64,
    students: usize,
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    /// Reversed so the max-heap pops the earliest time, then the earliest insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: f64, event: Event) {
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }
}

struct Node {
    k: usize,
    alloc: Allocation,
    epoch: u64,
    busy: Vec<bool>,
    /// Students running per GPU, across epochs.
    occupancy: Vec<usize>,
    buffer: LengthAwareBuffer,
    /// Waiting-queue mode only.
    queue: VecDeque<Request>,
    /// Requests refused by a full buffer, in arrival order.
    pending: VecDeque<Request>,
    empty_since: Option<f64>,
    armed_timeout: Option<f64>,
}

impl Node {
    fn idle_groups(&self) -> usize {
        self.busy.iter().filter(|b| !**b).count()
    }

    fn has_work(&self) -> bool {
        !self.buffer.is_empty() || !self.queue.is_empty() || !self.pending.is_empty()
    }

    fn rebuild(&mut self, k: usize, cfg: &ClusterConfig) -> Result<(), SimError> {
        self.k = k;
        self.alloc = allocate_students(k, cfg.gpus_per_node, cfg.replicas_per_gpu)?;
        self.epoch += 1;
        self.busy = vec![false; self.alloc.group_count()];
        self.buffer.set_capacity(self.alloc.group_count())
    }

    /// Lowest-index idle group whose GPUs all have a free slot for it.
    fn available_group(&self, replicas: usize) -> Option<usize> {
        (0..self.alloc.group_count()).find(|&j| {
            !self.busy[j]
                && self.alloc.groups[j].iter().all(|&g| {
                    let mine = self.alloc.groups[j].iter().filter(|&&h| h == g).count();
                    self.occupancy[g] + mine <= replicas
                })
        })
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct SimResult {
    pub metrics: SimMetrics,
    /// Completed requests in completion order.
    pub records: Vec<RequestRecord>,
    /// Longest time any element spent in a buffer or waiting queue.
    pub max_buffer_wait_ms: f64,
    pub total_gpus: usize,
}

struct Sim<'a> {
    cfg: &'a ClusterConfig,
    perf: &'a SimPerf,
    binning: Binning,
    requests: &'a [Request],
    nodes: Vec<Node>,
    events: Queue,
    records: Vec<RequestRecord>,
    arrived: usize,
    in_flight: usize,
    rejected: usize,
    max_wait: f64,
    timeline: Vec<(f64, usize)>,
    accuracy: Vec<(f64, f64)>,
}

impl Sim<'_> {
    fn record_k(&mut self, now: f64) {
        let k = self.nodes.iter().map(|n| n.k).min().expect("at least one node");
        if self.timeline.last().is_some_and(|&(_, last)| last == k) {
            return;
        }
        self.timeline.push((now, k));
        if let Some(a) = accuracy_at(self.cfg.controller.accuracy_table.as_ref(), k) {
            self.accuracy.push((now, a));
        }
    }

    fn enqueue(&mut self, ni: usize, req: Request, now: f64) -> Result<(), SimError> {
        let node = &mut self.nodes[ni];
        match self.cfg.serving {
            ServingMode::WaitingQueue { .. } => node.queue.push_back(req),
            ServingMode::LengthAware => {
                if !node.pending.is_empty() {
                    node.pending.push_back(req);
                } else if let PushOutcome::Rejected(r) = node.buffer.push(req, now)? {
                    self.rejected += 1;
                    node.pending.push_back(r);
                }
            }
        }
        Ok(())
    }

    /// Moves refused requests into the buffer while it accepts them.
    fn retry_pending(&mut self, ni: usize, now: f64) -> Result<(), SimError> {
        let node = &mut self.nodes[ni];
        while let Some(req) = node.pending.pop_front() {
            if let PushOutcome::Rejected(r) = node.buffer.push(req, now)? {
                self.rejected += 1;
                node.pending.push_front(r);
                break;
            }
        }
        Ok(())
    }

    /// Next batch from the waiting queue, if one is due.
    fn take_batch(&mut self, ni: usize, now: f64) -> Result<Option<BufferElement>, SimError> {
        let ServingMode::WaitingQueue { max_batch, timeout_ms } = self.cfg.serving else {
            return Ok(None);
        };
        let node = &mut self.nodes[ni];
        let Some(oldest) = node.queue.front().map(|r| r.arrival_ms) else {
            return Ok(None);
        };
        if node.queue.len() < max_batch && now < oldest + timeout_ms {
            return Ok(None);
        }
        let n = max_batch.min(node.queue.len());
        let requests: Vec<Request> = node.queue.drain(..n).collect();
        let mut bin = 0;
        for r in &requests {
            bin = bin.max(bin_of(r.length_tokens, &self.binning)?);
        }
        Ok(Some(BufferElement {
            bin,
            padded_len: self.binning.padded_len(bin),
            requests,
            created_ms: oldest,
        }))
    }

    fn dispatch(&mut self, ni: usize, now: f64) -> Result<(), SimError> {
        loop {
            let replicas = self.cfg.replicas_per_gpu;
            let Some(j) = self.nodes[ni].available_group(replicas) else {
                break;
            };
            let element = match self.cfg.serving {
                ServingMode::LengthAware => {
                    if self.nodes[ni].buffer.is_empty() {
                        break;
                    }
                    let el = self.nodes[ni].buffer.pop()?;
                    self.retry_pending(ni, now)?;
                    el
                }
                ServingMode::WaitingQueue { .. } => match self.take_batch(ni, now)? {
                    Some(el) => el,
                    None => break,
                },
            };
            self.max_wait = self.max_wait.max(now - element.created_ms);
            let node = &mut self.nodes[ni];
            let gpus = node.alloc.groups[j].clone();
            for &g in &gpus {
                node.occupancy[g] += 1;
            }
            node.busy[j] = true;
            let occupancy = gpus.iter().map(|&g| node.occupancy[g]).max().expect("group has students");
            let spans = gpus.iter().any(|&g| g != gpus[0]);
            let service = service_time(&element, node.k, occupancy, spans, &self.cfg.student, self.perf)?;
            let flight = InFlight {
                node: ni,
                epoch: node.epoch,
                group: j,
                gpus,
                element,
                dispatch_ms: now,
                students: node.k,
            };
            self.in_flight += 1;
            self.events.push(now + service, Event::Completion(flight));
        }
        // A batch that is not yet due needs a wake-up at its deadline.
        if let ServingMode::WaitingQueue { timeout_ms, .. } = self.cfg.serving {
            let node = &mut self.nodes[ni];
            if let Some(oldest) = node.queue.front().map(|r| r.arrival_ms) {
                let due = oldest + timeout_ms;
                if due > now && node.armed_timeout != Some(due) {
                    node.armed_timeout = Some(due);
                    self.events.push(due, Event::QueueTimeout);
                }
            }
        }
        Ok(())
    }

    fn complete(&mut self, f: InFlight, now: f64) {
        let node = &mut self.nodes[f.node];
        for &g in &f.gpus {
            node.occupancy[g] -= 1;
        }
        if f.epoch == node.epoch {
            node.busy[f.group] = false;
        }
        self.in_flight -= 1;
        for r in &f.element.requests {
            self.records.push(RequestRecord {
                id: r.id,
                node: f.node,
                arrival_ms: r.arrival_ms,
                enqueue_ms: f.element.created_ms,
                dispatch_ms: f.dispatch_ms,
                completion_ms: now,
                students: f.students,
                batch: f.element.len(),
                padded_len: f.element.padded_len,
            });
        }
    }

    fn settle(&mut self, ni: usize, now: f64) -> Result<(), SimError> {
        self.retry_pending(ni, now)?;
        self.dispatch(ni, now)?;
        if self.cfg.serving != ServingMode::LengthAware {
            return Ok(());
        }
        {
            let node = &mut self.nodes[ni];
            if node.buffer.is_empty() && node.pending.is_empty() {
                node.empty_since.get_or_insert(now);
            } else {
                node.empty_since = None;
            }
        }
        let node = &self.nodes[ni];
        let idle = node.idle_groups();
        let view = ControllerView {
            k: node.k,
            buffer_len: node.buffer.len(),
            buffer_capacity: node.buffer.capacity(),
            empty_since_ms: node.empty_since,
            idle_groups: idle,
            occupied_groups: node.alloc.group_count() - idle,
        };
        let k = match controller_tick(&self.cfg.controller, &view, now) {
            ControllerAction::Hold => return Ok(()),
            ControllerAction::DropOne => node.k - 1,
            ControllerAction::AddOne => node.k + 1,
        };
        self.nodes[ni].rebuild(k, self.cfg)?;
        if self.nodes[ni].buffer.is_empty() {
            self.nodes[ni].empty_since = Some(now);
        }
        self.record_k(now);
        self.retry_pending(ni, now)?;
        self.dispatch(ni, now)
    }

    fn idle(&self) -> bool {
        self.arrived == self.requests.len() && self.in_flight == 0 && self.nodes.iter().all(|n| !n.has_work())
    }

    fn run(mut self) -> Result<SimResult, SimError> {
        for (i, r) in self.requests.iter().enumerate() {
            self.events.push(r.arrival_ms, Event::Arrival(i));
        }
        let heartbeat = self.cfg.controller.heartbeat_ms;
        if !self.requests.is_empty() {
            self.events.push(heartbeat, Event::Tick);
        }
        self.record_k(0.0);
        while let Some(Scheduled { time: now, event, .. }) = self.events.heap.pop() {
            match event {
                Event::Arrival(i) => {
                    let node = i % self.nodes.len();
                    self.arrived += 1;
                    self.enqueue(node, self.requests[i], now)?;
                }
                Event::Completion(f) => self.complete(f, now),
                Event::Tick => {
                    if !self.idle() {
                        self.events.push(now + heartbeat, Event::Tick);
                    }
                }
                Event::QueueTimeout => {}
            }
            for ni in 0..self.nodes.len() {
                self.settle(ni, now)?;
            }
        }
        debug_assert!(self.idle());
        let total_gpus = self.cfg.nodes * self.cfg.gpus_per_node;
        let metrics = SimMetrics::from_records(
            &self.records,
            self.requests.len(),
            self.rejected,
            total_gpus,
            self.timeline,
            self.accuracy,
        );
        Ok(SimResult {
            metrics,
            records: self.records,
            max_buffer_wait_ms: self.max_wait,
            total_gpus,
        })
    }
}

/// Serves a fixed, arrival-sorted request list.
pub fn simulate_requests(cfg: &ClusterConfig, requests: &[Request], perf: &SimPerf) -> Result<SimResult, SimError> {
    cfg.validate()?;
    perf.model()?;
    if requests.windows(2).any(|w| w[1].arrival_ms < w[0].arrival_ms) {
        return Err(SimError::Config("requests must be sorted by arrival".into()));
    }
    let binning = cfg.binning();
    for r in requests {
        bin_of(r.length_tokens, &binning)?;
    }
    let nodes = (0..cfg.nodes)
        .map(|_| {
            let alloc = allocate_students(cfg.group_size, cfg.gpus_per_node, cfg.replicas_per_gpu)?;
            Ok(Node {
                k: cfg.group_size,
                epoch: 0,
                busy: vec![false; alloc.group_count()],
                occupancy: vec![0; cfg.gpus_per_node],
                buffer: LengthAwareBuffer::new(binning, alloc.group_count(), cfg.max_merge)?,
                alloc,
                queue: VecDeque::new(),
                pending: VecDeque::new(),
                empty_since: None,
                armed_timeout: None,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Sim {
        cfg,
        perf,
        binning,
        requests,
        nodes,
        events: Queue::default(),
        records: Vec::with_capacity(requests.len()),
        arrived: 0,
        in_flight: 0,
        rejected: 0,
        max_wait: 0.0,
        timeline: Vec::new(),
        accuracy: Vec::new(),
    }
    .run()
}

/// Generates the workload for `seed`, then serves it.
pub fn run_simulation(
    cfg: &ClusterConfig,
    workload: &WorkloadKind,
    perf: &SimPerf,
    seed: u64,
) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let requests = generate_workload(workload, cfg.max_len, seed)?;
    simulate_requests(cfg, &requests, perf)
}
