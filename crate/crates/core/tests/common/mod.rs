//! Shared test helpers: random link states and a unit-step admission oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use vodsim::engine::{AdmitLevel, AllocId, Allocation, BaOutcome, Link, LinkKind, StreamRequest};
use vodsim::model::{UserClass, VideoId};

/// A link state, a pending request, and per-video weights.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub capacity: u32,
    pub allocations: Vec<Allocation>,
    pub request: StreamRequest,
    pub weights: BTreeMap<VideoId, u64>,
}

impl Scenario {
    pub fn weight(&self, video: VideoId) -> u64 {
        self.weights.get(&video).copied().unwrap_or(0)
    }

    pub fn link(&self) -> Link {
        Link::with_allocations(LinkKind::PsCms, self.capacity, self.allocations.clone()).unwrap()
    }
}

fn random_class<R: Rng>(rng: &mut R) -> UserClass {
    UserClass::from_index(rng.gen_range(0..3)).unwrap()
}

fn random_bounds<R: Rng>(rng: &mut R, class: UserClass) -> (u32, u32) {
    let (min_r, max_r) = class.rate_ranges();
    (rng.gen_range(min_r), rng.gen_range(max_r))
}

/// Up to six allocations on a small link, rates anywhere within bounds.
/// Few videos and weights so ties are common.
pub fn random_scenario<R: Rng>(rng: &mut R) -> Scenario {
    let capacity = rng.gen_range(20..=140);
    let n = rng.gen_range(0..=6);
    let mut allocations = Vec::new();
    let mut used = 0;
    for i in 0..n {
        let class = random_class(rng);
        let (min, max) = random_bounds(rng, class);
        if used + min > capacity {
            continue;
        }
        let rate = rng.gen_range(min..=max.min(capacity - used));
        used += rate;
        allocations.push(Allocation {
            id: AllocId(i as u64 * 3 + rng.gen_range(0..3)),
            video: VideoId(rng.gen_range(0..4)),
            class,
            rate,
            min_rate: min,
            max_rate: max,
            size: 1000,
            start_time: 0.0,
        });
    }
    let class = random_class(rng);
    let (min, max) = random_bounds(rng, class);
    let request = StreamRequest {
        video: VideoId(rng.gen_range(0..6)),
        class,
        min_rate: min,
        max_rate: max,
        size: 1000,
    };
    let weights = (0..6).map(|v| (VideoId(v), rng.gen_range(0..4))).collect();
    Scenario {
        capacity,
        allocations,
        request,
        weights,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleOutcome {
    Admitted {
        level: AdmitLevel,
        rate: u32,
        taken: BTreeMap<AllocId, u32>,
    },
    Rejected,
}

/// Admission rule followed literally: maximum if free, else minimum if
/// free, else take excess one MB/s at a time from whichever same-class
/// stream is currently lowest in (weight, video, id) and still above its
/// minimum, until the minimum fits or nothing is left.
pub fn oracle_ba(s: &Scenario) -> OracleOutcome {
    let used: u32 = s.allocations.iter().map(|a| a.rate).sum();
    let mut free = s.capacity - used;
    let req = &s.request;
    if free >= req.max_rate {
        return OracleOutcome::Admitted {
            level: AdmitLevel::Max,
            rate: req.max_rate,
            taken: BTreeMap::new(),
        };
    }
    if free >= req.min_rate {
        return OracleOutcome::Admitted {
            level: AdmitLevel::Min,
            rate: req.min_rate,
            taken: BTreeMap::new(),
        };
    }
    let mut rates: Vec<u32> = s.allocations.iter().map(|a| a.rate).collect();
    let mut taken = BTreeMap::new();
    while free < req.min_rate {
        let mut bottom: Option<usize> = None;
        for (i, a) in s.allocations.iter().enumerate() {
            if a.class != req.class || rates[i] <= a.min_rate {
                continue;
            }
            let key = (s.weight(a.video), a.video, a.id);
            let better = match bottom {
                None => true,
                Some(b) => {
                    let bk = (s.weight(s.allocations[b].video), s.allocations[b].video, s.allocations[b].id);
                    key < bk
                }
            };
            if better {
                bottom = Some(i);
            }
        }
        let Some(b) = bottom else {
            return OracleOutcome::Rejected;
        };
        rates[b] -= 1;
        free += 1;
        *taken.entry(s.allocations[b].id).or_insert(0) += 1;
    }
    OracleOutcome::Admitted {
        level: AdmitLevel::Reclaimed,
        rate: req.min_rate,
        taken,
    }
}

/// Runs the engine on `s` and maps its outcome into oracle terms.
pub fn engine_ba(s: &Scenario) -> (OracleOutcome, Link) {
    let mut link = s.link();
    let out = link.ba_allocate(&s.request, AllocId(10_000), 0.0, |v, _| s.weight(v));
    let mapped = match out {
        BaOutcome::Rejected => OracleOutcome::Rejected,
        BaOutcome::Admitted(a) => OracleOutcome::Admitted {
            level: a.level,
            rate: a.rate,
            taken: a.victims.into_iter().collect(),
        },
    };
    (mapped, link)
}
