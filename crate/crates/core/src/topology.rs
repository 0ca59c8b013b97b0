//! Proxy ring, proxy caches, and per-request routing.
//!
//! Each proxy owns three directed links: from its left neighbour, from its
//! right neighbour, and from the central server. A request that misses the
//! local cache is fetched over one of them and the video is then cached at
//! the proxy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::{AllocId, Admission, BaOutcome, Link, LinkKind, StreamRequest};
use crate::model::{
    Catalog, DemandProfile, PopularityTier, Profits, UserClass, VideoId, WeightProfile,
};

#[derive(Debug, Clone, Copy, Default)]
struct CacheEntry {
    last_use: u64,
    pins: u32,
}

/// Video cache of one proxy, LRU over entries that carry no live stream.
///
/// When every entry is pinned by a live stream an insert still succeeds and
/// the cache runs one or more slots over capacity until [`reconcile`] finds
/// idle entries to drop.
///
/// [`reconcile`]: ProxyCache::reconcile
#[derive(Debug, Clone)]
pub struct ProxyCache {
    capacity: usize,
    clock: u64,
    entries: BTreeMap<VideoId, CacheEntry>,
}

impl ProxyCache {
    pub fn new(capacity: usize) -> Self {
        ProxyCache {
            capacity,
            clock: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, video: VideoId) -> bool {
        self.entries.contains_key(&video)
    }

    pub fn videos(&self) -> impl Iterator<Item = VideoId> + '_ {
        self.entries.keys().copied()
    }

    pub fn pins(&self, video: VideoId) -> u32 {
        self.entries.get(&video).map_or(0, |e| e.pins)
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Marks `video` as just requested.
    pub fn touch(&mut self, video: VideoId) {
        let now = self.tick();
        if let Some(e) = self.entries.get_mut(&video) {
            e.last_use = now;
        }
    }

    fn idle_lru(&self) -> Option<VideoId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.pins == 0)
            .min_by_key(|(id, e)| (e.last_use, **id))
            .map(|(id, _)| *id)
    }

    /// Inserts `video` as most recently used, evicting the least recently
    /// used idle entry if the cache is full.
    pub fn insert(&mut self, video: VideoId) -> Option<VideoId> {
        debug_assert!(!self.contains(video));
        let evicted = if self.entries.len() >= self.capacity {
            self.idle_lru()
        } else {
            None
        };
        if let Some(old) = evicted {
            self.entries.remove(&old);
        }
        let now = self.tick();
        self.entries.insert(video, CacheEntry { last_use: now, pins: 0 });
        evicted
    }

    pub fn pin(&mut self, video: VideoId) {
        if let Some(e) = self.entries.get_mut(&video) {
            e.pins += 1;
        }
    }

    pub fn unpin(&mut self, video: VideoId) {
        if let Some(e) = self.entries.get_mut(&video) {
            e.pins = e.pins.saturating_sub(1);
        }
    }

    /// Drops idle LRU entries while over capacity.
    pub fn reconcile(&mut self) -> Vec<VideoId> {
        let mut dropped = Vec::new();
        while self.entries.len() > self.capacity {
            match self.idle_lru() {
                Some(old) => {
                    self.entries.remove(&old);
                    dropped.push(old);
                }
                None => break,
            }
        }
        dropped
    }
}

#[derive(Debug, Clone)]
pub struct ProxyServer {
    pub id: usize,
    pub cache: ProxyCache,
    pub local_counts: DemandProfile,
    /// Last table written by the profile agent.
    pub global_weights: WeightProfile,
}

impl ProxyServer {
    /// Weight used for reclamation ordering at this proxy: the agent's table,
    /// overridden by the local count when the local cell is larger.
    pub fn weight(&self, video: VideoId, class: UserClass, profits: &Profits) -> u64 {
        let local = self.local_counts.count(video, class) * profits.of(class);
        self.global_weights.weight(video, class).max(local)
    }
}

#[derive(Debug, Clone)]
pub struct CentralServer {
    pub catalog: Catalog,
    pub global_counts: DemandProfile,
}

/// Where a requested video can be found, checked at the proxy first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    AtPs,
    LpsOnly,
    RpsOnly,
    Both,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RouteSource {
    LocalHit,
    FromLps,
    FromRps,
    FromCms,
    Rejected,
}

impl RouteSource {
    fn link_kind(self) -> Option<LinkKind> {
        match self {
            RouteSource::FromLps => Some(LinkKind::PsLps),
            RouteSource::FromRps => Some(LinkKind::PsRps),
            RouteSource::FromCms => Some(LinkKind::PsCms),
            RouteSource::LocalHit | RouteSource::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDecision {
    pub source: RouteSource,
    /// Present exactly for the three remote sources.
    pub admission: Option<Admission>,
    /// Index into [`World::links`] of the link that carries the stream.
    pub link: Option<usize>,
    /// Proxy that serves the video, for neighbour fetches.
    pub source_proxy: Option<usize>,
    pub evicted: Option<VideoId>,
}

impl RouteDecision {
    fn without_stream(source: RouteSource) -> Self {
        RouteDecision {
            source,
            admission: None,
            link: None,
            source_proxy: None,
            evicted: None,
        }
    }
}

/// Parameters for [`World::new`].
#[derive(Debug, Clone)]
pub struct TopologyConfig {
    pub proxies: usize,
    pub link_capacity: u32,
    pub cache_capacity: usize,
    pub profits: Profits,
    pub psg_enabled: bool,
}

/// The central server, the proxy ring and every link.
#[derive(Debug, Clone)]
pub struct World {
    pub cms: CentralServer,
    pub proxies: Vec<ProxyServer>,
    pub links: Vec<Link>,
    pub profits: Profits,
    pub psg_enabled: bool,
    next_alloc: u64,
}

impl World {
    pub fn new(catalog: Catalog, cfg: &TopologyConfig) -> Self {
        assert!(cfg.proxies >= 1, "need at least one proxy");
        let nov = catalog.len();
        let proxies = (0..cfg.proxies)
            .map(|id| ProxyServer {
                id,
                cache: ProxyCache::new(cfg.cache_capacity),
                local_counts: DemandProfile::new(nov),
                global_weights: WeightProfile::new(nov),
            })
            .collect();
        let links = (0..cfg.proxies)
            .flat_map(|_| LinkKind::ALL.map(|k| Link::new(k, cfg.link_capacity)))
            .collect();
        World {
            cms: CentralServer {
                catalog,
                global_counts: DemandProfile::new(nov),
            },
            proxies,
            links,
            profits: cfg.profits,
            psg_enabled: cfg.psg_enabled,
            next_alloc: 0,
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.cms.catalog
    }

    pub fn proxy_count(&self) -> usize {
        self.proxies.len()
    }

    pub fn left_of(&self, ps: usize) -> usize {
        (ps + self.proxies.len() - 1) % self.proxies.len()
    }

    pub fn right_of(&self, ps: usize) -> usize {
        (ps + 1) % self.proxies.len()
    }

    pub fn link_index(ps: usize, kind: LinkKind) -> usize {
        ps * LinkKind::ALL.len() + kind.index()
    }

    pub fn link(&self, ps: usize, kind: LinkKind) -> &Link {
        &self.links[Self::link_index(ps, kind)]
    }

    /// `ps0_lps`, `ps3_cms`, ...
    pub fn link_label(index: usize) -> String {
        let ps = index / LinkKind::ALL.len();
        let kind = LinkKind::ALL[index % LinkKind::ALL.len()];
        format!("ps{ps}_{}", kind.label().trim_start_matches("ps_"))
    }

    /// Seeds every proxy cache with `per_tier[t]` videos of each tier. Each
    /// tier is dealt out from a shuffled deck, reshuffled whenever it runs
    /// out, so copies are spread as evenly as the counts allow.
    pub fn place_initial<R: Rng + ?Sized>(&mut self, per_tier: [usize; 3], rng: &mut R) {
        for tier in PopularityTier::ALL {
            let members = self.cms.catalog.tier_members(tier);
            let want = per_tier[tier.index()].min(members.len());
            let mut deck: Vec<VideoId> = Vec::new();
            for proxy in &mut self.proxies {
                let mut taken = 0;
                let mut skipped = Vec::new();
                while taken < want {
                    if deck.is_empty() {
                        deck = members.clone();
                        deck.shuffle(rng);
                    }
                    let v = deck.pop().expect("deck refilled");
                    if proxy.cache.contains(v) {
                        skipped.push(v);
                        continue;
                    }
                    proxy.cache.insert(v);
                    taken += 1;
                }
                deck.extend(skipped.into_iter().rev());
            }
        }
    }

    pub fn locate(&self, video: VideoId, ps: usize) -> Placement {
        if self.proxies[ps].cache.contains(video) {
            return Placement::AtPs;
        }
        if !self.psg_enabled {
            return Placement::Neither;
        }
        let in_left = self.proxies[self.left_of(ps)].cache.contains(video);
        let in_right = self.proxies[self.right_of(ps)].cache.contains(video);
        match (in_left, in_right) {
            (true, true) => Placement::Both,
            (true, false) => Placement::LpsOnly,
            (false, true) => Placement::RpsOnly,
            (false, false) => Placement::Neither,
        }
    }

    /// Entry point for one request at proxy `ps`.
    pub fn handle_request(&mut self, ps: usize, video: VideoId, class: UserClass, now: f64) -> RouteDecision {
        self.proxies[ps].local_counts.record_request(video, class);
        if self.proxies[ps].cache.contains(video) {
            self.proxies[ps].cache.touch(video);
            return RouteDecision::without_stream(RouteSource::LocalHit);
        }
        let mut decision = self.dynamic_band(ps, video, class, now);
        if decision.source != RouteSource::Rejected {
            decision.evicted = self.cache_insert(ps, video);
            self.proxies[ps].cache.pin(video);
            if let Some(src) = decision.source_proxy {
                self.proxies[src].cache.pin(video);
            }
        }
        decision
    }

    /// Chooses a link for a video that is not cached at `ps` and runs the
    /// admission on it, falling back to the central server link.
    pub fn dynamic_band(&mut self, ps: usize, video: VideoId, class: UserClass, now: f64) -> RouteDecision {
        let neighbour = match self.locate(video, ps) {
            Placement::AtPs => panic!("dynamic_band called for a video cached at ps{ps}"),
            Placement::LpsOnly => Some(RouteSource::FromLps),
            Placement::RpsOnly => Some(RouteSource::FromRps),
            Placement::Both => {
                let left = self.link(ps, LinkKind::PsLps).free_bandwidth();
                let right = self.link(ps, LinkKind::PsRps).free_bandwidth();
                if left > right {
                    Some(RouteSource::FromLps)
                } else {
                    Some(RouteSource::FromRps)
                }
            }
            Placement::Neither => None,
        };
        if let Some(source) = neighbour {
            if let Some(d) = self.try_link(ps, source, video, class, now) {
                return d;
            }
        }
        self.try_link(ps, RouteSource::FromCms, video, class, now)
            .unwrap_or_else(|| RouteDecision::without_stream(RouteSource::Rejected))
    }

    fn try_link(
        &mut self,
        ps: usize,
        source: RouteSource,
        video: VideoId,
        class: UserClass,
        now: f64,
    ) -> Option<RouteDecision> {
        let kind = source.link_kind().expect("remote source");
        let link_idx = Self::link_index(ps, kind);
        let req = StreamRequest::for_video(self.cms.catalog.video(video), class);
        let id = AllocId(self.next_alloc);
        let proxy = &self.proxies[ps];
        let profits = self.profits;
        let outcome = self.links[link_idx].ba_allocate(&req, id, now, |v, c| proxy.weight(v, c, &profits));
        match outcome {
            BaOutcome::Rejected => None,
            BaOutcome::Admitted(admission) => {
                self.next_alloc += 1;
                let source_proxy = match source {
                    RouteSource::FromLps => Some(self.left_of(ps)),
                    RouteSource::FromRps => Some(self.right_of(ps)),
                    _ => None,
                };
                Some(RouteDecision {
                    source,
                    admission: Some(admission),
                    link: Some(link_idx),
                    source_proxy,
                    evicted: None,
                })
            }
        }
    }

    /// Stores a freshly fetched video at `ps`.
    pub fn cache_insert(&mut self, ps: usize, video: VideoId) -> Option<VideoId> {
        self.proxies[ps].cache.insert(video)
    }

    /// Text dump of every proxy's cache with its tier census.
    pub fn placement_dump(&self, now: f64) -> String {
        let mut out = format!("time={now:.6}\n");
        for p in &self.proxies {
            let mut census = [0usize; 3];
            let mut ids = Vec::with_capacity(p.cache.len());
            for v in p.cache.videos() {
                census[self.cms.catalog.video(v).tier.index()] += 1;
                ids.push(v.0.to_string());
            }
            let _ = writeln!(
                out,
                "proxy={} lps={} rps={} size={} most={} secondary={} least={} videos={}",
                p.id,
                self.left_of(p.id),
                self.right_of(p.id),
                p.cache.len(),
                census[0],
                census[1],
                census[2],
                ids.join(",")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VideoMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_catalog(nov: u32) -> Catalog {
        let videos = (0..nov)
            .map(|i| VideoMeta {
                id: VideoId(i),
                size: 1000,
                tier: PopularityTier::for_rank(i as usize, nov as usize),
                min_bw: [8, 6, 4],
                max_bw: [24, 18, 12],
                arrival_rate: 1.0,
            })
            .collect();
        Catalog::from_videos(videos).unwrap()
    }

    fn world(capacity: u32, psg: bool) -> World {
        World::new(
            small_catalog(16),
            &TopologyConfig {
                proxies: 4,
                link_capacity: capacity,
                cache_capacity: 4,
                profits: Profits::default(),
                psg_enabled: psg,
            },
        )
    }

    #[test]
    fn ring_neighbours_are_consistent() {
        let w = world(300, true);
        for i in 0..4 {
            assert_eq!(w.right_of(w.left_of(i)), i);
            assert_eq!(w.left_of(w.right_of(i)), i);
        }
        assert_eq!(w.left_of(0), 3);
        assert_eq!(World::link_label(World::link_index(3, LinkKind::PsCms)), "ps3_cms");
    }

    #[test]
    fn locate_cases() {
        let mut w = world(300, true);
        let v = VideoId(5);
        assert_eq!(w.locate(v, 1), Placement::Neither);
        w.proxies[0].cache.insert(v);
        w.proxies[2].cache.insert(v);
        assert_eq!(w.locate(v, 1), Placement::Both);
        w.proxies[1].cache.insert(v);
        assert_eq!(w.locate(v, 1), Placement::AtPs);
        assert_eq!(w.locate(v, 3), Placement::Both);
        assert_eq!(w.locate(v, 0), Placement::AtPs);
        assert_eq!(w.locate(VideoId(9), 0), Placement::Neither);
        let mut w = world(300, true);
        w.proxies[2].cache.insert(v);
        assert_eq!(w.locate(v, 1), Placement::RpsOnly);
        assert_eq!(w.locate(v, 3), Placement::LpsOnly);
    }

    #[test]
    fn local_hit_touches_no_link() {
        let mut w = world(300, true);
        w.proxies[0].cache.insert(VideoId(1));
        let d = w.handle_request(0, VideoId(1), UserClass::Class1, 0.0);
        assert_eq!(d.source, RouteSource::LocalHit);
        assert!(d.admission.is_none());
        assert!(w.links.iter().all(|l| l.is_empty() && l.ledger().is_empty()));
        assert_eq!(w.proxies[0].local_counts.count(VideoId(1), UserClass::Class1), 1);
    }

    #[test]
    fn fetch_from_left_at_max_and_cache() {
        let mut w = world(300, true);
        w.proxies[3].cache.insert(VideoId(2));
        let d = w.handle_request(0, VideoId(2), UserClass::Class1, 0.0);
        assert_eq!(d.source, RouteSource::FromLps);
        assert_eq!(d.source_proxy, Some(3));
        assert_eq!(d.admission.as_ref().unwrap().rate, 24);
        assert!(w.proxies[0].cache.contains(VideoId(2)));
        assert_eq!(w.proxies[0].cache.pins(VideoId(2)), 1);
        assert_eq!(w.proxies[3].cache.pins(VideoId(2)), 1);
    }

    #[test]
    fn both_neighbours_prefers_freer_link_and_ties_go_right() {
        let mut w = world(300, true);
        let v = VideoId(7);
        w.proxies[3].cache.insert(v);
        w.proxies[1].cache.insert(v);
        // Load the right link so left is strictly freer.
        let filler = StreamRequest {
            video: VideoId(0),
            class: UserClass::Class3,
            min_rate: 250,
            max_rate: 250,
            size: 1,
        };
        w.links[World::link_index(0, LinkKind::PsRps)].ba_allocate(&filler, AllocId(900), 0.0, |_, _| 0);
        let d = w.dynamic_band(0, v, UserClass::Class2, 0.0);
        assert_eq!(d.source, RouteSource::FromLps);

        let mut w = world(300, true);
        w.proxies[3].cache.insert(v);
        w.proxies[1].cache.insert(v);
        let d = w.dynamic_band(0, v, UserClass::Class2, 0.0);
        assert_eq!(d.source, RouteSource::FromRps);
    }

    #[test]
    fn neighbour_failure_falls_back_to_cms_at_min() {
        let mut w = world(30, true);
        let v = VideoId(3);
        w.proxies[3].cache.insert(v);
        let block = StreamRequest {
            video: VideoId(0),
            class: UserClass::Class3,
            min_rate: 30,
            max_rate: 30,
            size: 1,
        };
        w.links[World::link_index(0, LinkKind::PsLps)].ba_allocate(&block, AllocId(900), 0.0, |_, _| 0);
        let part = StreamRequest { min_rate: 20, max_rate: 20, ..block };
        w.links[World::link_index(0, LinkKind::PsCms)].ba_allocate(&part, AllocId(901), 0.0, |_, _| 0);
        let d = w.dynamic_band(0, v, UserClass::Class1, 0.0);
        assert_eq!(d.source, RouteSource::FromCms);
        assert_eq!(d.admission.unwrap().rate, 8);
    }

    #[test]
    fn saturated_cms_rejects() {
        let mut w = world(30, true);
        let block = StreamRequest {
            video: VideoId(0),
            class: UserClass::Class3,
            min_rate: 30,
            max_rate: 30,
            size: 1,
        };
        w.links[World::link_index(0, LinkKind::PsCms)].ba_allocate(&block, AllocId(900), 0.0, |_, _| 0);
        let d = w.handle_request(0, VideoId(4), UserClass::Class1, 0.0);
        assert_eq!(d.source, RouteSource::Rejected);
        assert!(d.admission.is_none());
        assert!(!w.proxies[0].cache.contains(VideoId(4)));
    }

    #[test]
    fn no_psg_skips_neighbours() {
        let mut w = world(300, false);
        w.proxies[3].cache.insert(VideoId(2));
        w.proxies[1].cache.insert(VideoId(2));
        let d = w.handle_request(0, VideoId(2), UserClass::Class1, 0.0);
        assert_eq!(d.source, RouteSource::FromCms);
    }

    #[test]
    fn cache_evicts_idle_lru() {
        let mut c = ProxyCache::new(2);
        assert_eq!(c.insert(VideoId(1)), None);
        assert_eq!(c.insert(VideoId(2)), None);
        c.touch(VideoId(1));
        assert_eq!(c.insert(VideoId(3)), Some(VideoId(2)));
        assert!(c.contains(VideoId(1)) && c.contains(VideoId(3)));
    }

    #[test]
    fn cache_overshoots_when_all_pinned() {
        let mut c = ProxyCache::new(2);
        c.insert(VideoId(1));
        c.insert(VideoId(2));
        c.pin(VideoId(1));
        c.pin(VideoId(2));
        assert_eq!(c.insert(VideoId(3)), None);
        assert_eq!(c.len(), 3);
        c.pin(VideoId(3));
        assert!(c.reconcile().is_empty());
        c.unpin(VideoId(2));
        assert_eq!(c.reconcile(), vec![VideoId(2)]);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn initial_placement_census() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cat = Catalog::generate(480, 700..=2100, [0.5, 0.35, 0.15], 1.0, &mut rng).unwrap();
        let mut w = World::new(
            cat,
            &TopologyConfig {
                proxies: 6,
                link_capacity: 300,
                cache_capacity: 160,
                profits: Profits::default(),
                psg_enabled: true,
            },
        );
        w.place_initial([40, 40, 80], &mut rng);
        let dump = w.placement_dump(0.0);
        for line in dump.lines().skip(1) {
            assert!(line.contains("size=160 most=40 secondary=40 least=80"), "{line}");
        }
        // 240 most-popular slots over 120 videos: every video exactly twice.
        let mut copies = vec![0; 480];
        for p in &w.proxies {
            for v in p.cache.videos() {
                copies[v.index()] += 1;
            }
        }
        assert!(copies.iter().all(|&c| c == 2));
    }
}
