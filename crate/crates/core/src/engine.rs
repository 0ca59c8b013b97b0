//! Per-link bandwidth allocation.
//!
//! A [`Link`] admits a new stream at its class maximum if that fits, else at
//! its class minimum. When even the minimum does not fit, the link takes the
//! excess above minimum from live streams of the same class, lowest weight
//! first, until the minimum is covered. If the excess is not enough nothing is
//! touched and the request is rejected.
//!
//! Rates are whole MB/s so conservation checks are exact.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{UserClass, VideoId, VideoMeta};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("double release of {0}")]
    DoubleRelease(AllocId),
    #[error("rate {rate} for {id} outside [{min}, {max}]")]
    RateOutOfBounds {
        id: AllocId,
        rate: u32,
        min: u32,
        max: u32,
    },
    #[error("link carries {used} MB/s over capacity {capacity}")]
    OverCapacity { used: u64, capacity: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKind {
    PsLps,
    PsRps,
    PsCms,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::PsLps, LinkKind::PsRps, LinkKind::PsCms];

    pub fn index(self) -> usize {
        match self {
            LinkKind::PsLps => 0,
            LinkKind::PsRps => 1,
            LinkKind::PsCms => 2,
        }
    }

    /// Lower-case label used in file names (`ps_lps`, ...).
    pub fn label(self) -> &'static str {
        match self {
            LinkKind::PsLps => "ps_lps",
            LinkKind::PsRps => "ps_rps",
            LinkKind::PsCms => "ps_cms",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AllocId(pub u64);

impl fmt::Display for AllocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alloc#{}", self.0)
    }
}

/// What a request asks of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamRequest {
    pub video: VideoId,
    pub class: UserClass,
    pub min_rate: u32,
    pub max_rate: u32,
    /// Transfer size in MB.
    pub size: u32,
}

impl StreamRequest {
    pub fn for_video(video: &VideoMeta, class: UserClass) -> Self {
        StreamRequest {
            video: video.id,
            class,
            min_rate: video.min_rate(class),
            max_rate: video.max_rate(class),
            size: video.size,
        }
    }
}

/// One live stream on a link.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub id: AllocId,
    pub video: VideoId,
    pub class: UserClass,
    pub rate: u32,
    pub min_rate: u32,
    pub max_rate: u32,
    pub size: u32,
    pub start_time: f64,
}

impl Allocation {
    /// Bandwidth above the guaranteed minimum.
    pub fn excess(&self) -> u32 {
        self.rate - self.min_rate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReclaimPlan {
    /// `(victim, amount taken)` in the order the victims are tapped.
    pub victims: Vec<(AllocId, u32)>,
    pub total_reclaimed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitLevel {
    Max,
    Min,
    Reclaimed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admission {
    pub id: AllocId,
    pub level: AdmitLevel,
    pub rate: u32,
    /// Streams whose rate was cut, with the amount taken from each.
    pub victims: Vec<(AllocId, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaOutcome {
    Admitted(Admission),
    Rejected,
}

impl BaOutcome {
    pub fn admission(&self) -> Option<&Admission> {
        match self {
            BaOutcome::Admitted(a) => Some(a),
            BaOutcome::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerOp {
    Allocate,
    Reclaim,
    Release,
}

impl LedgerOp {
    fn label(self) -> &'static str {
        match self {
            LedgerOp::Allocate => "allocate",
            LedgerOp::Reclaim => "reclaim",
            LedgerOp::Release => "release",
        }
    }
}

/// One rate change on a link. `link_total` is the sum of rates after the op.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub time: f64,
    pub op: LedgerOp,
    pub alloc: AllocId,
    pub video: VideoId,
    pub class: UserClass,
    pub delta: i64,
    pub rate: u32,
    pub link_total: u32,
}

pub const LEDGER_HEADER: &str = "time,link,op,alloc_id,video,class,delta,rate,link_total";

impl LedgerEntry {
    pub fn csv_row(&self, link: &str) -> String {
        format!(
            "{:.6},{},{},{},{},{},{},{},{}",
            self.time,
            link,
            self.op.label(),
            self.alloc.0,
            self.video.0,
            self.class.number(),
            self.delta,
            self.rate,
            self.link_total
        )
    }
}

/// A capacity-bounded channel between a proxy and one of its sources.
#[derive(Debug, Clone)]
pub struct Link {
    kind: LinkKind,
    capacity: u32,
    used: u32,
    allocations: BTreeMap<AllocId, Allocation>,
    ledger: Vec<LedgerEntry>,
}

impl Link {
    pub fn new(kind: LinkKind, capacity: u32) -> Self {
        Link {
            kind,
            capacity,
            used: 0,
            allocations: BTreeMap::new(),
            ledger: Vec::new(),
        }
    }

    /// Restores a link holding `allocations`, checking capacity and rate bounds.
    /// The ledger starts empty.
    pub fn with_allocations(
        kind: LinkKind,
        capacity: u32,
        allocations: impl IntoIterator<Item = Allocation>,
    ) -> Result<Self, LinkError> {
        let allocations: BTreeMap<AllocId, Allocation> = allocations.into_iter().map(|a| (a.id, a)).collect();
        let used: u64 = allocations.values().map(|a| u64::from(a.rate)).sum();
        if used > u64::from(capacity) {
            return Err(LinkError::OverCapacity { used, capacity });
        }
        let link = Link {
            kind,
            capacity,
            used: used as u32,
            allocations,
            ledger: Vec::new(),
        };
        link.check_invariants()?;
        Ok(link)
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn used(&self) -> u32 {
        self.used
    }

    pub fn free_bandwidth(&self) -> u32 {
        self.capacity - self.used
    }

    pub fn allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.allocations.values()
    }

    pub fn allocation(&self, id: AllocId) -> Option<&Allocation> {
        self.allocations.get(&id)
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Plans how to free `needed` MB/s for a new `class` stream, counting the
    /// link's current free bandwidth first and then taking excess from
    /// same-class streams in ascending (weight, video, alloc id) order.
    /// Returns `None` when free plus total excess falls short. Pure.
    pub fn plan_reclaim<W>(&self, class: UserClass, needed: u32, weight_of: W) -> Option<ReclaimPlan>
    where
        W: Fn(VideoId, UserClass) -> u64,
    {
        let mut shortfall = needed.saturating_sub(self.free_bandwidth());
        let mut candidates: Vec<&Allocation> = self
            .allocations
            .values()
            .filter(|a| a.class == class && a.excess() > 0)
            .collect();
        let total_excess: u64 = candidates.iter().map(|a| u64::from(a.excess())).sum();
        if total_excess < u64::from(shortfall) {
            return None;
        }
        candidates.sort_by_key(|a| (weight_of(a.video, a.class), a.video, a.id));

        let mut plan = ReclaimPlan::default();
        for victim in candidates {
            if shortfall == 0 {
                break;
            }
            let take = victim.excess().min(shortfall);
            plan.victims.push((victim.id, take));
            plan.total_reclaimed += take;
            shortfall -= take;
        }
        Some(plan)
    }

    /// Admits `req` as allocation `id`, or rejects it leaving the link
    /// untouched.
    pub fn ba_allocate<W>(&mut self, req: &StreamRequest, id: AllocId, now: f64, weight_of: W) -> BaOutcome
    where
        W: Fn(VideoId, UserClass) -> u64,
    {
        assert!(
            0 < req.min_rate && req.min_rate <= req.max_rate,
            "bad rate bounds for {}",
            req.video
        );
        let free = self.free_bandwidth();
        let (level, rate, plan) = if free >= req.max_rate {
            (AdmitLevel::Max, req.max_rate, ReclaimPlan::default())
        } else if free >= req.min_rate {
            (AdmitLevel::Min, req.min_rate, ReclaimPlan::default())
        } else {
            match self.plan_reclaim(req.class, req.min_rate, &weight_of) {
                Some(plan) => (AdmitLevel::Reclaimed, req.min_rate, plan),
                None => return BaOutcome::Rejected,
            }
        };

        for &(victim, take) in &plan.victims {
            let a = self
                .allocations
                .get_mut(&victim)
                .expect("reclaim plan names a live allocation");
            a.rate -= take;
            assert!(a.rate >= a.min_rate, "reclaim cut {} below its minimum", a.id);
            self.used -= take;
            self.ledger.push(LedgerEntry {
                time: now,
                op: LedgerOp::Reclaim,
                alloc: a.id,
                video: a.video,
                class: a.class,
                delta: -i64::from(take),
                rate: a.rate,
                link_total: self.used,
            });
        }

        self.used += rate;
        assert!(self.used <= self.capacity, "admission overflowed link capacity");
        let prev = self.allocations.insert(
            id,
            Allocation {
                id,
                video: req.video,
                class: req.class,
                rate,
                min_rate: req.min_rate,
                max_rate: req.max_rate,
                size: req.size,
                start_time: now,
            },
        );
        assert!(prev.is_none(), "duplicate allocation id {id}");
        self.ledger.push(LedgerEntry {
            time: now,
            op: LedgerOp::Allocate,
            alloc: id,
            video: req.video,
            class: req.class,
            delta: i64::from(rate),
            rate,
            link_total: self.used,
        });

        BaOutcome::Admitted(Admission {
            id,
            level,
            rate,
            victims: plan.victims,
        })
    }

    /// Removes a finished stream and returns the bandwidth it held.
    pub fn release(&mut self, id: AllocId, now: f64) -> Result<u32, LinkError> {
        let a = self.allocations.remove(&id).ok_or(LinkError::DoubleRelease(id))?;
        self.used -= a.rate;
        self.ledger.push(LedgerEntry {
            time: now,
            op: LedgerOp::Release,
            alloc: id,
            video: a.video,
            class: a.class,
            delta: -i64::from(a.rate),
            rate: 0,
            link_total: self.used,
        });
        Ok(a.rate)
    }

    /// Recomputes capacity and rate bounds from scratch.
    pub fn check_invariants(&self) -> Result<(), LinkError> {
        let sum: u64 = self.allocations.values().map(|a| u64::from(a.rate)).sum();
        if sum > u64::from(self.capacity) || sum != u64::from(self.used) {
            return Err(LinkError::OverCapacity {
                used: sum,
                capacity: self.capacity,
            });
        }
        for a in self.allocations.values() {
            if a.rate < a.min_rate || a.rate > a.max_rate {
                return Err(LinkError::RateOutOfBounds {
                    id: a.id,
                    rate: a.rate,
                    min: a.min_rate,
                    max: a.max_rate,
                });
            }
        }
        Ok(())
    }
}
