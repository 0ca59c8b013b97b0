//! Catalog, user classes, demand counts and the weights derived from them.
//!
//! Everything here is plain data. Weights are integers (`k * profit`) so that
//! weight ordering never depends on floating point rounding.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Errors raised while building or querying the model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degenerate catalog: arrival rates sum to zero")]
    DegenerateCatalog,
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("negative or non-finite arrival rate {rate} for video {video}")]
    BadRate { video: VideoId, rate: f64 },
    #[error("unknown video {0}")]
    UnknownVideo(VideoId),
    #[error("number of videos {0} is not a positive multiple of 4")]
    BadVideoCount(usize),
    #[error("profit for {0} must be positive")]
    NonPositiveProfit(UserClass),
    #[error("catalog line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Index of a video in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VideoId(pub u32);

impl VideoId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Service class of a request. `Class1` is the highest paying class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UserClass {
    Class1,
    Class2,
    Class3,
}

impl UserClass {
    pub const ALL: [UserClass; 3] = [UserClass::Class1, UserClass::Class2, UserClass::Class3];

    pub fn index(self) -> usize {
        match self {
            UserClass::Class1 => 0,
            UserClass::Class2 => 1,
            UserClass::Class3 => 2,
        }
    }

    /// 1-based class number as used in report file names.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn from_index(i: usize) -> Option<UserClass> {
        UserClass::ALL.get(i).copied()
    }

    /// Inclusive ranges `(min, max)` from which a video's per-class minimum
    /// and maximum stream rates are drawn, in MB/s.
    pub fn rate_ranges(self) -> (RangeInclusive<u32>, RangeInclusive<u32>) {
        match self {
            UserClass::Class1 => (8..=11, 24..=29),
            UserClass::Class2 => (6..=8, 18..=23),
            UserClass::Class3 => (4..=6, 12..=17),
        }
    }
}

impl fmt::Display for UserClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class{}", self.number())
    }
}

/// Per-class profit `p_j`. Strictly positive integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profits([u64; 3]);

impl Profits {
    pub fn new(p: [u64; 3]) -> Result<Self, ModelError> {
        for class in UserClass::ALL {
            if p[class.index()] == 0 {
                return Err(ModelError::NonPositiveProfit(class));
            }
        }
        Ok(Profits(p))
    }

    pub fn of(&self, class: UserClass) -> u64 {
        self.0[class.index()]
    }

    pub fn as_array(&self) -> [u64; 3] {
        self.0
    }
}

impl Default for Profits {
    fn default() -> Self {
        Profits([3, 2, 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PopularityTier {
    MostPopular,
    SecondaryPopular,
    LeastPopular,
}

impl PopularityTier {
    pub const ALL: [PopularityTier; 3] = [
        PopularityTier::MostPopular,
        PopularityTier::SecondaryPopular,
        PopularityTier::LeastPopular,
    ];

    pub fn index(self) -> usize {
        match self {
            PopularityTier::MostPopular => 0,
            PopularityTier::SecondaryPopular => 1,
            PopularityTier::LeastPopular => 2,
        }
    }

    /// Number of videos in this tier for a catalog of `nov` videos.
    pub fn census(self, nov: usize) -> usize {
        match self {
            PopularityTier::MostPopular | PopularityTier::SecondaryPopular => nov / 4,
            PopularityTier::LeastPopular => nov / 2,
        }
    }

    /// Tier of the video at position `rank` in a popularity ranking.
    pub fn for_rank(rank: usize, nov: usize) -> PopularityTier {
        if rank < nov / 4 {
            PopularityTier::MostPopular
        } else if rank < nov / 2 {
            PopularityTier::SecondaryPopular
        } else {
            PopularityTier::LeastPopular
        }
    }

    fn label(self) -> &'static str {
        match self {
            PopularityTier::MostPopular => "most",
            PopularityTier::SecondaryPopular => "secondary",
            PopularityTier::LeastPopular => "least",
        }
    }
}

impl fmt::Display for PopularityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PopularityTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PopularityTier::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("unknown tier `{s}`"))
    }
}

/// Static description of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub id: VideoId,
    /// Size in MB.
    pub size: u32,
    pub tier: PopularityTier,
    /// Minimum stream rate per class, MB/s.
    pub min_bw: [u32; 3],
    /// Maximum stream rate per class, MB/s.
    pub max_bw: [u32; 3],
    /// Mean request rate, requests/s.
    pub arrival_rate: f64,
}

impl VideoMeta {
    pub fn min_rate(&self, class: UserClass) -> u32 {
        self.min_bw[class.index()]
    }

    pub fn max_rate(&self, class: UserClass) -> u32 {
        self.max_bw[class.index()]
    }
}

/// The full set of videos held by the central server.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    videos: Vec<VideoMeta>,
}

impl Catalog {
    /// Wraps a list of videos whose ids must equal their positions.
    pub fn from_videos(videos: Vec<VideoMeta>) -> Result<Self, ModelError> {
        for (i, v) in videos.iter().enumerate() {
            if v.id.index() != i {
                return Err(ModelError::Parse {
                    line: i + 1,
                    msg: format!("video id {} out of order (expected {i})", v.id.0),
                });
            }
        }
        Ok(Catalog { videos })
    }

    /// Draws a catalog of `nov` videos. The first quarter of ids start as most
    /// popular, the second quarter as secondary, the rest as least popular.
    /// Per-video arrival rates split `total_rate` by tier share, uniformly
    /// within each tier.
    pub fn generate<R: Rng + ?Sized>(
        nov: usize,
        size_range: RangeInclusive<u32>,
        tier_mix: [f64; 3],
        total_rate: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if nov == 0 || !nov.is_multiple_of(4) {
            return Err(ModelError::BadVideoCount(nov));
        }
        let videos = (0..nov)
            .map(|i| {
                let tier = PopularityTier::for_rank(i, nov);
                let size = rng.gen_range(size_range.clone());
                let mut min_bw = [0; 3];
                let mut max_bw = [0; 3];
                for class in UserClass::ALL {
                    let (min_r, max_r) = class.rate_ranges();
                    min_bw[class.index()] = rng.gen_range(min_r);
                    max_bw[class.index()] = rng.gen_range(max_r);
                }
                let share = tier_mix[tier.index()];
                VideoMeta {
                    id: VideoId(i as u32),
                    size,
                    tier,
                    min_bw,
                    max_bw,
                    arrival_rate: total_rate * share / tier.census(nov) as f64,
                }
            })
            .collect();
        Ok(Catalog { videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn videos(&self) -> &[VideoMeta] {
        &self.videos
    }

    pub fn get(&self, id: VideoId) -> Option<&VideoMeta> {
        self.videos.get(id.index())
    }

    pub fn video(&self, id: VideoId) -> &VideoMeta {
        &self.videos[id.index()]
    }

    /// Video ids currently in `tier`, ascending.
    pub fn tier_members(&self, tier: PopularityTier) -> Vec<VideoId> {
        self.videos.iter().filter(|v| v.tier == tier).map(|v| v.id).collect()
    }

    /// Overwrites every video's tier; returns how many changed.
    pub fn set_tiers(&mut self, tiers: &[PopularityTier]) -> usize {
        let mut changed = 0;
        for (v, &t) in self.videos.iter_mut().zip(tiers) {
            if v.tier != t {
                v.tier = t;
                changed += 1;
            }
        }
        changed
    }

    /// Tab-separated text, one video per row after a header row.
    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "id\tsize_mb\ttier\tmin1\tmax1\tmin2\tmax2\tmin3\tmax3\tarrival_rate\n",
        );
        for v in &self.videos {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:?}\n",
                v.id.0,
                v.size,
                v.tier,
                v.min_bw[0],
                v.max_bw[0],
                v.min_bw[1],
                v.max_bw[1],
                v.min_bw[2],
                v.max_bw[2],
                v.arrival_rate
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut videos = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| ModelError::Parse { line: line_no, msg };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 10 {
                return Err(err(format!("expected 10 columns, found {}", cols.len())));
            }
            let int = |s: &str| s.parse::<u32>().map_err(|e| err(format!("`{s}`: {e}")));
            let id = int(cols[0])?;
            let size = int(cols[1])?;
            let tier = cols[2].parse::<PopularityTier>().map_err(err)?;
            let mut min_bw = [0; 3];
            let mut max_bw = [0; 3];
            for j in 0..3 {
                min_bw[j] = int(cols[3 + 2 * j])?;
                max_bw[j] = int(cols[4 + 2 * j])?;
                if min_bw[j] == 0 || min_bw[j] >= max_bw[j] {
                    return Err(err(format!("class{} needs 0 < min < max", j + 1)));
                }
            }
            if size == 0 {
                return Err(err("size must be positive".into()));
            }
            let arrival_rate = cols[9]
                .parse::<f64>()
                .map_err(|e| err(format!("`{}`: {e}", cols[9])))?;
            videos.push(VideoMeta {
                id: VideoId(id),
                size,
                tier,
                min_bw,
                max_bw,
                arrival_rate,
            });
        }
        Catalog::from_videos(videos)
    }
}

/// `P_i = λ_i / Σλ`.
pub fn request_probability(videos: &[VideoMeta]) -> Result<Vec<f64>, ModelError> {
    if videos.is_empty() {
        return Err(ModelError::EmptyCatalog);
    }
    if let Some(v) = videos
        .iter()
        .find(|v| !v.arrival_rate.is_finite() || v.arrival_rate < 0.0)
    {
        return Err(ModelError::BadRate {
            video: v.id,
            rate: v.arrival_rate,
        });
    }
    let total: f64 = videos.iter().map(|v| v.arrival_rate).sum();
    if total <= 0.0 {
        return Err(ModelError::DegenerateCatalog);
    }
    Ok(videos.iter().map(|v| v.arrival_rate / total).collect())
}

/// Request counts `k_ij` per (video, class).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemandProfile {
    counts: Vec<[u64; 3]>,
}

impl DemandProfile {
    pub fn new(nov: usize) -> Self {
        DemandProfile {
            counts: vec![[0; 3]; nov],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn contains(&self, video: VideoId) -> bool {
        video.index() < self.counts.len()
    }

    /// Panics if `video` is outside the profile.
    pub fn record_request(&mut self, video: VideoId, class: UserClass) {
        self.counts[video.index()][class.index()] += 1;
    }

    pub fn count(&self, video: VideoId, class: UserClass) -> u64 {
        self.counts
            .get(video.index())
            .map_or(0, |row| row[class.index()])
    }

    /// `k_i`, the total over classes.
    pub fn total(&self, video: VideoId) -> u64 {
        self.counts.get(video.index()).map_or(0, |row| row.iter().sum())
    }

    pub fn grand_total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Cell-wise sum of `other` into `self`.
    pub fn accumulate(&mut self, other: &DemandProfile) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), [0; 3]);
        }
        for (dst, src) in self.counts.iter_mut().zip(&other.counts) {
            for j in 0..3 {
                dst[j] += src[j];
            }
        }
    }
}

/// `w_ij = k_ij * p_j`.
pub fn compute_weight(
    counts: &DemandProfile,
    video: VideoId,
    class: UserClass,
    profit: u64,
) -> Result<u64, ModelError> {
    if !counts.contains(video) {
        return Err(ModelError::UnknownVideo(video));
    }
    Ok(counts.count(video, class) * profit)
}

/// Weights per (video, class), derived from a demand profile.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightProfile {
    weights: Vec<[u64; 3]>,
}

impl WeightProfile {
    pub fn new(nov: usize) -> Self {
        WeightProfile {
            weights: vec![[0; 3]; nov],
        }
    }

    pub fn from_counts(counts: &DemandProfile, profits: &Profits) -> Self {
        let weights = counts
            .counts
            .iter()
            .map(|row| {
                let mut w = [0; 3];
                for class in UserClass::ALL {
                    w[class.index()] = row[class.index()] * profits.of(class);
                }
                w
            })
            .collect();
        WeightProfile { weights }
    }

    pub fn weight(&self, video: VideoId, class: UserClass) -> u64 {
        self.weights
            .get(video.index())
            .map_or(0, |row| row[class.index()])
    }
}

/// Ranks videos by total demand (descending, ties by ascending id) and cuts
/// the ranking into tiers of `nov/4`, `nov/4` and `nov/2` videos.
pub fn retier_by_rank(counts: &DemandProfile, nov: usize) -> Result<Vec<PopularityTier>, ModelError> {
    if nov == 0 || !nov.is_multiple_of(4) || counts.len() != nov {
        return Err(ModelError::BadVideoCount(nov));
    }
    let mut order: Vec<VideoId> = (0..nov as u32).map(VideoId).collect();
    order.sort_by(|a, b| counts.total(*b).cmp(&counts.total(*a)).then(a.cmp(b)));
    let mut tiers = vec![PopularityTier::LeastPopular; nov];
    for (rank, id) in order.into_iter().enumerate() {
        tiers[id.index()] = PopularityTier::for_rank(rank, nov);
    }
    Ok(tiers)
}
