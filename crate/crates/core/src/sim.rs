//! Discrete-event simulation of the proxy ring.
//!
//! Events are popped in `(time, sequence)` order. A stream's completion event
//! carries the generation of its progress record; reclamation bumps the
//! generation and schedules a new completion, so stale events are skipped.
//!
//! The workload generator draws from its own ChaCha stream, separate from the
//! one that builds the catalog and placement. Two runs with the same seed
//! therefore see the same arrivals regardless of how requests were routed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::agent::{agent_tour, audit_log, schedule_next_tour};
use crate::config::{ConfigError, SimConfig};
use crate::engine::{AllocId, LEDGER_HEADER};
use crate::metrics::{
    instant_utilization, snapshot, time_avg_utilization, ArrivalRecord, CompletionRecord, MetricsBundle, UtilPoint,
};
use crate::model::{Catalog, PopularityTier, UserClass, VideoId};
use crate::topology::{TopologyConfig, World};

const CATALOG_STREAM: u64 = 0;
const WORKLOAD_STREAM: u64 = 1;

/// One generated request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub interarrival: f64,
    pub proxy: usize,
    pub video: VideoId,
    pub class: UserClass,
}

/// Poisson request source: tier by tier share, video uniform in the tier,
/// proxy uniform over the ring, class by class share.
#[derive(Debug, Clone)]
pub struct Workload {
    interarrival: Option<Exp<f64>>,
    proxies: usize,
    tier_members: [Vec<VideoId>; 3],
    tier_pick: WeightedIndex<f64>,
    class_pick: WeightedIndex<f64>,
}

impl Workload {
    /// Tier membership is frozen from `catalog` as given.
    pub fn new(cfg: &SimConfig, catalog: &Catalog) -> Self {
        let interarrival = (cfg.total_arrival_rate > 0.0)
            .then(|| Exp::new(cfg.total_arrival_rate).expect("rate checked positive"));
        Workload {
            interarrival,
            proxies: cfg.proxies,
            tier_members: PopularityTier::ALL.map(|t| catalog.tier_members(t)),
            tier_pick: WeightedIndex::new(cfg.tier_mix).expect("tier mix validated"),
            class_pick: WeightedIndex::new(cfg.class_mix).expect("class mix validated"),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.interarrival.is_none()
    }

    /// Next request; `None` when the arrival rate is zero.
    pub fn generate_arrival<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Arrival> {
        let gap = self.interarrival.as_ref()?.sample(rng);
        let proxy = rng.gen_range(0..self.proxies);
        let members = &self.tier_members[self.tier_pick.sample(rng)];
        let video = members[rng.gen_range(0..members.len())];
        let class = UserClass::from_index(self.class_pick.sample(rng)).expect("three classes");
        Some(Arrival {
            interarrival: gap,
            proxy,
            video,
            class,
        })
    }
}

/// Transfer state of one admitted stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamProgress {
    pub alloc: AllocId,
    pub link: usize,
    pub dest: usize,
    pub source_proxy: Option<usize>,
    pub video: VideoId,
    pub class: UserClass,
    pub start_time: f64,
    pub size: f64,
    pub bytes_remaining: f64,
    pub delivered: f64,
    pub last_rate_change: f64,
    pub current_rate: u32,
    pub min_rate: u32,
    pub max_rate: u32,
    pub generation: u64,
}

impl StreamProgress {
    fn advance(&mut self, now: f64) {
        let moved = f64::from(self.current_rate) * (now - self.last_rate_change);
        self.bytes_remaining = (self.bytes_remaining - moved).max(0.0);
        self.delivered += moved;
        self.last_rate_change = now;
    }

    pub fn completion_time(&self) -> f64 {
        self.last_rate_change + self.bytes_remaining / f64::from(self.current_rate)
    }

    /// Settles the bytes moved at the old rate and returns the completion
    /// time at `new_rate`. An unchanged rate keeps the old completion time.
    pub fn on_rate_change(&mut self, now: f64, new_rate: u32) -> f64 {
        assert!(
            (self.min_rate..=self.max_rate).contains(&new_rate),
            "{}: rate {new_rate} outside [{}, {}]",
            self.alloc,
            self.min_rate,
            self.max_rate
        );
        if new_rate == self.current_rate {
            return self.completion_time();
        }
        self.advance(now);
        self.current_rate = new_rate;
        self.generation += 1;
        self.completion_time()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    Arrival(Arrival),
    Completion { alloc: AllocId, generation: u64 },
    AgentTour,
    Sample,
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

/// Builds the catalog and seeded world for `cfg` without running it.
pub fn build_world(cfg: &SimConfig) -> Result<World, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CATALOG_STREAM);
    let (lo, hi) = cfg.video_size_range;
    let catalog = Catalog::generate(cfg.nov, lo..=hi, cfg.tier_mix, cfg.total_arrival_rate, &mut rng)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut world = World::new(
        catalog,
        &TopologyConfig {
            proxies: cfg.proxies,
            link_capacity: cfg.link_capacity,
            cache_capacity: cfg.cache_capacity,
            profits: cfg.profits,
            psg_enabled: cfg.psg_enabled,
        },
    );
    world.place_initial(cfg.initial_placement, &mut rng);
    Ok(world)
}

/// The workload random stream for `cfg.seed`.
pub fn workload_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(WORKLOAD_STREAM);
    rng
}

/// Options that do not change simulated behaviour.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the full per-link operation ledger as CSV in the bundle.
    pub keep_ledger: bool,
}

/// Runs one simulation to the horizon.
pub fn run(cfg: &SimConfig) -> Result<MetricsBundle, ConfigError> {
    run_with(cfg, RunOptions::default())
}

/// Same workload as [`run`], with every remote fetch going to the central server.
pub fn baseline_no_psg(cfg: &SimConfig) -> Result<MetricsBundle, ConfigError> {
    run(&cfg.without_psg())
}

pub fn run_with(cfg: &SimConfig, opts: RunOptions) -> Result<MetricsBundle, ConfigError> {
    let world = build_world(cfg)?;
    Ok(Simulation::new(cfg.clone(), world).run(opts))
}

/// A scripted request for [`run_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceArrival {
    pub time: f64,
    pub proxy: usize,
    pub video: VideoId,
    pub class: UserClass,
}

enum ArrivalSource {
    Generated { workload: Workload, rng: ChaCha8Rng },
    Trace(std::vec::IntoIter<TraceArrival>),
}

/// Runs `cfg` with a fixed list of requests instead of generated ones.
/// Requests must be sorted by time and name valid proxies and videos.
pub fn run_trace(cfg: &SimConfig, trace: Vec<TraceArrival>) -> Result<MetricsBundle, ConfigError> {
    let world = build_world(cfg)?;
    let nov = world.catalog().len();
    for (i, t) in trace.iter().enumerate() {
        if t.proxy >= cfg.proxies || t.video.index() >= nov || !(t.time >= 0.0) {
            return Err(ConfigError::Invalid(format!("trace entry {i} is out of range")));
        }
        if i > 0 && trace[i - 1].time > t.time {
            return Err(ConfigError::Invalid(format!("trace entry {i} goes back in time")));
        }
    }
    let mut sim = Simulation::new(cfg.clone(), world);
    sim.source = ArrivalSource::Trace(trace.into_iter());
    Ok(sim.run(RunOptions::default()))
}

struct Simulation {
    cfg: SimConfig,
    world: World,
    source: ArrivalSource,
    queue: EventQueue,
    streams: BTreeMap<AllocId, StreamProgress>,
    bundle: MetricsBundle,
    tours: Vec<crate::agent::AgentTourReport>,
    now: f64,
}

impl Simulation {
    fn new(cfg: SimConfig, world: World) -> Self {
        let workload = Workload::new(&cfg, world.catalog());
        let bundle = MetricsBundle::empty(cfg.psg_enabled, cfg.seed, cfg.horizon);
        Simulation {
            source: ArrivalSource::Generated {
                workload,
                rng: workload_rng(cfg.seed),
            },
            cfg,
            world,
            queue: EventQueue::default(),
            streams: BTreeMap::new(),
            bundle,
            tours: Vec::new(),
            now: 0.0,
        }
    }

    fn schedule_arrival(&mut self) {
        let next = match &mut self.source {
            ArrivalSource::Generated { workload, rng } => workload
                .generate_arrival(rng)
                .map(|a| (self.now + a.interarrival, a)),
            ArrivalSource::Trace(it) => it.next().map(|t| {
                let a = Arrival {
                    interarrival: t.time - self.now,
                    proxy: t.proxy,
                    video: t.video,
                    class: t.class,
                };
                (t.time, a)
            }),
        };
        if let Some((t, a)) = next {
            if t <= self.cfg.horizon {
                self.queue.push(t, EventKind::Arrival(a));
            }
        }
    }

    fn run(mut self, opts: RunOptions) -> MetricsBundle {
        self.bundle.placement_start = self.world.placement_dump(0.0);
        self.schedule_arrival();
        let first_tour = schedule_next_tour(0.0, self.cfg.agent_period).expect("period validated");
        if first_tour <= self.cfg.horizon {
            self.queue.push(first_tour, EventKind::AgentTour);
        }
        if self.cfg.sample_period <= self.cfg.horizon {
            self.queue.push(self.cfg.sample_period, EventKind::Sample);
        }

        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.horizon {
                break;
            }
            assert!(ev.time >= self.now, "event at {} before current time {}", ev.time, self.now);
            self.now = ev.time;
            let touched = match ev.kind {
                EventKind::Arrival(a) => self.on_arrival(a),
                EventKind::Completion { alloc, generation } => self.on_completion(alloc, generation),
                EventKind::AgentTour => {
                    self.on_agent_tour();
                    None
                }
                EventKind::Sample => {
                    self.on_sample();
                    None
                }
            };
            self.check_links(touched);
        }

        self.finish(opts)
    }

    fn check_links(&mut self, touched: Option<usize>) {
        let violations = if self.cfg.check_invariants {
            self.world.links.iter().filter(|l| l.check_invariants().is_err()).count()
        } else {
            touched.map_or(0, |i| usize::from(self.world.links[i].check_invariants().is_err()))
        };
        self.bundle.invariant_violations += violations as u64;
    }

    fn on_arrival(&mut self, a: Arrival) -> Option<usize> {
        self.bundle.arrivals.push(ArrivalRecord {
            time: self.now,
            proxy: a.proxy,
            video: a.video.0,
            class: a.class,
        });
        let decision = self.world.handle_request(a.proxy, a.video, a.class, self.now);
        self.bundle.counters.record(decision.source);
        self.schedule_arrival();

        let (admission, link) = match (decision.admission, decision.link) {
            (Some(adm), Some(link)) => (adm, link),
            _ => return None,
        };
        for &(victim, _) in &admission.victims {
            let new_rate = self.world.links[link]
                .allocation(victim)
                .expect("victim is live")
                .rate;
            let p = self.streams.get_mut(&victim).expect("victim has progress");
            let done = p.on_rate_change(self.now, new_rate);
            let generation = p.generation;
            self.queue.push(done, EventKind::Completion { alloc: victim, generation });
        }
        let meta = self.world.catalog().video(a.video);
        let size = f64::from(meta.size);
        let progress = StreamProgress {
            alloc: admission.id,
            link,
            dest: a.proxy,
            source_proxy: decision.source_proxy,
            video: a.video,
            class: a.class,
            start_time: self.now,
            size,
            bytes_remaining: size,
            delivered: 0.0,
            last_rate_change: self.now,
            current_rate: admission.rate,
            min_rate: meta.min_rate(a.class),
            max_rate: meta.max_rate(a.class),
            generation: 0,
        };
        self.queue.push(
            progress.completion_time(),
            EventKind::Completion {
                alloc: admission.id,
                generation: 0,
            },
        );
        self.streams.insert(admission.id, progress);
        Some(link)
    }

    fn on_completion(&mut self, alloc: AllocId, generation: u64) -> Option<usize> {
        match self.streams.get(&alloc) {
            Some(p) if p.generation == generation => {}
            _ => return None,
        }
        let mut p = self.streams.remove(&alloc).expect("checked above");
        p.advance(self.now);
        let err = (p.delivered - p.size).abs() / p.size;
        self.bundle.max_byte_error = self.bundle.max_byte_error.max(err);
        self.bundle.counters.completed += 1;
        self.bundle.completions.push(CompletionRecord {
            alloc,
            video: p.video,
            class: p.class,
            link: self.world.links[p.link].kind(),
            start: p.start_time,
            end: self.now,
            size: p.size,
            delivered: p.delivered,
            rate_changes: p.generation,
        });

        self.world.links[p.link]
            .release(alloc, self.now)
            .expect("completing stream holds an allocation");
        for ps in std::iter::once(p.dest).chain(p.source_proxy) {
            let cache = &mut self.world.proxies[ps].cache;
            cache.unpin(p.video);
            cache.reconcile();
        }
        Some(p.link)
    }

    fn on_agent_tour(&mut self) {
        self.tours.push(agent_tour(&mut self.world, self.now));
        let next = schedule_next_tour(self.now, self.cfg.agent_period).expect("period validated");
        if next <= self.cfg.horizon {
            self.queue.push(next, EventKind::AgentTour);
        }
    }

    fn on_sample(&mut self) {
        let points = snapshot(&self.world, self.now);
        for (k, row) in points.into_iter().enumerate() {
            for (c, p) in row.into_iter().enumerate() {
                self.bundle.series[k][c].push(p);
            }
        }
        for (k, f) in instant_utilization(&self.world).into_iter().enumerate() {
            self.bundle.utilization[k].push(UtilPoint { time: self.now, fraction: f });
        }
        let next = self.now + self.cfg.sample_period;
        if next <= self.cfg.horizon {
            self.queue.push(next, EventKind::Sample);
        }
    }

    fn finish(mut self, opts: RunOptions) -> MetricsBundle {
        let horizon = self.cfg.horizon;
        self.bundle.counters.in_flight_at_horizon = self.streams.len() as u64;

        let mut util_sum = [0.0; 3];
        let mut util_n = [0usize; 3];
        for link in &self.world.links {
            let k = link.kind().index();
            util_sum[k] += time_avg_utilization(link.ledger(), link.capacity(), horizon);
            util_n[k] += 1;
        }
        self.bundle.time_avg_utilization = std::array::from_fn(|k| util_sum[k] / util_n[k].max(1) as f64);

        self.bundle.agent_tours = self.tours.len();
        self.bundle.agent_audit = audit_log(&self.tours);
        self.bundle.placement_end = self.world.placement_dump(horizon);
        if opts.keep_ledger {
            self.bundle.ledger_csv = Some(ledger_csv(&self.world));
        }
        self.bundle
    }
}

/// Every link's ledger as CSV, link by link.
pub fn ledger_csv(world: &World) -> String {
    let mut out = format!("{LEDGER_HEADER}\n");
    for (i, link) in world.links.iter().enumerate() {
        let label = World::link_label(i);
        for e in link.ledger() {
            out.push_str(&e.csv_row(&label));
            out.push('\n');
        }
    }
    out
}
