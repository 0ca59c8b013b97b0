//! Measurement collection and report files.
//!
//! The simulator samples per-class bandwidth averages for each link kind,
//! instantaneous link utilization, and request outcome counters. After the
//! run the ledger of every link gives an exact time-averaged utilization.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{AllocId, LedgerEntry, LinkKind};
use crate::model::{UserClass, VideoId};
use crate::topology::{RouteSource, World};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot create output directory {path}: {source}")]
    CreateDir { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("nothing to report")]
    Empty,
}

/// Per-class averages over live streams of one link kind at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub time: f64,
    pub avg_max: Option<f64>,
    pub avg_min: Option<f64>,
    pub avg_alloc: Option<f64>,
    pub stream_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilPoint {
    pub time: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub requested: u64,
    pub local_hits: u64,
    pub served_lps: u64,
    pub served_rps: u64,
    pub served_cms: u64,
    pub rejected: u64,
    /// Streams admitted but still transferring at the horizon.
    pub in_flight_at_horizon: u64,
    pub completed: u64,
}

impl Counters {
    pub fn record(&mut self, source: RouteSource) {
        self.requested += 1;
        match source {
            RouteSource::LocalHit => self.local_hits += 1,
            RouteSource::FromLps => self.served_lps += 1,
            RouteSource::FromRps => self.served_rps += 1,
            RouteSource::FromCms => self.served_cms += 1,
            RouteSource::Rejected => self.rejected += 1,
        }
    }

    pub fn remote_requests(&self) -> u64 {
        self.requested - self.local_hits
    }

    pub fn is_conserved(&self) -> bool {
        self.requested == self.local_hits + self.served_lps + self.served_rps + self.served_cms + self.rejected
    }

    pub fn rejection_ratio(&self) -> f64 {
        ratio(self.rejected, self.requested)
    }

    /// Rejections over requests that needed a link.
    pub fn remote_rejection_ratio(&self) -> f64 {
        ratio(self.rejected, self.remote_requests())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One generated request, as seen by the arrival handler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalRecord {
    pub time: f64,
    pub proxy: usize,
    pub video: u32,
    pub class: UserClass,
}

/// A stream that finished before the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionRecord {
    pub alloc: AllocId,
    pub video: VideoId,
    pub class: UserClass,
    pub link: LinkKind,
    pub start: f64,
    pub end: f64,
    pub size: f64,
    /// Sum of rate x duration over the stream's constant-rate segments.
    pub delivered: f64,
    pub rate_changes: u64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub psg_enabled: bool,
    pub seed: u64,
    pub horizon: f64,
    /// Indexed `[link kind][class]`.
    pub series: [[Vec<SeriesPoint>; 3]; 3],
    /// Indexed by link kind.
    pub utilization: [Vec<UtilPoint>; 3],
    pub counters: Counters,
    /// Indexed by link kind.
    pub time_avg_utilization: [f64; 3],
    /// Link states found over capacity or with a rate outside its bounds.
    pub invariant_violations: u64,
    /// Largest `|delivered - size| / size` over completed streams.
    pub max_byte_error: f64,
    pub arrivals: Vec<ArrivalRecord>,
    pub completions: Vec<CompletionRecord>,
    pub agent_tours: usize,
    pub agent_audit: String,
    pub placement_start: String,
    pub placement_end: String,
    pub ledger_csv: Option<String>,
}

impl MetricsBundle {
    pub fn empty(psg_enabled: bool, seed: u64, horizon: f64) -> Self {
        MetricsBundle {
            psg_enabled,
            seed,
            horizon,
            series: Default::default(),
            utilization: Default::default(),
            counters: Counters::default(),
            time_avg_utilization: [0.0; 3],
            invariant_violations: 0,
            max_byte_error: 0.0,
            arrivals: Vec::new(),
            completions: Vec::new(),
            agent_tours: 0,
            agent_audit: String::new(),
            placement_start: String::new(),
            placement_end: String::new(),
            ledger_csv: None,
        }
    }

    pub fn series(&self, kind: LinkKind, class: UserClass) -> &[SeriesPoint] {
        &self.series[kind.index()][class.index()]
    }

    /// Stream-weighted mean of the allocated rate over all samples.
    pub fn mean_alloc_per_stream(&self, kind: LinkKind, class: UserClass) -> Option<f64> {
        mean_alloc(self.series(kind, class).iter())
    }

    /// As [`mean_alloc_per_stream`](Self::mean_alloc_per_stream), pooled over link kinds.
    pub fn mean_alloc_per_stream_class(&self, class: UserClass) -> Option<f64> {
        mean_alloc(LinkKind::ALL.iter().flat_map(|&k| self.series(k, class).iter()))
    }

    pub fn samples_taken(&self) -> usize {
        self.utilization[0].len()
    }

    /// Class 1 > class 2 > class 3 in mean allocated rate on `kind`.
    pub fn class_ordering_holds(&self, kind: LinkKind) -> bool {
        let m: Vec<Option<f64>> = UserClass::ALL
            .iter()
            .map(|&c| self.mean_alloc_per_stream(kind, c))
            .collect();
        matches!((m[0], m[1], m[2]), (Some(a), Some(b), Some(c)) if a > b && b > c)
    }
}

fn mean_alloc<'a>(points: impl Iterator<Item = &'a SeriesPoint>) -> Option<f64> {
    let (sum, n) = points.fold((0.0, 0usize), |(s, n), p| match p.avg_alloc {
        Some(a) => (s + a * p.stream_count as f64, n + p.stream_count),
        None => (s, n),
    });
    (n > 0).then(|| sum / n as f64)
}

/// Per-(link kind, class) averages over every live allocation in `world`.
pub fn snapshot(world: &World, now: f64) -> [[SeriesPoint; 3]; 3] {
    // [kind][class] -> (sum max, sum min, sum rate, count)
    let mut acc = [[(0u64, 0u64, 0u64, 0usize); 3]; 3];
    for link in &world.links {
        for a in link.allocations() {
            let cell = &mut acc[link.kind().index()][a.class.index()];
            cell.0 += u64::from(a.max_rate);
            cell.1 += u64::from(a.min_rate);
            cell.2 += u64::from(a.rate);
            cell.3 += 1;
        }
    }
    acc.map(|row| {
        row.map(|(max, min, rate, n)| {
            let avg = |s: u64| (n > 0).then(|| s as f64 / n as f64);
            SeriesPoint {
                time: now,
                avg_max: avg(max),
                avg_min: avg(min),
                avg_alloc: avg(rate),
                stream_count: n,
            }
        })
    })
}

/// Fraction of capacity in use on each link kind at this instant.
pub fn instant_utilization(world: &World) -> [f64; 3] {
    let mut used = [0u64; 3];
    let mut cap = [0u64; 3];
    for link in &world.links {
        used[link.kind().index()] += u64::from(link.used());
        cap[link.kind().index()] += u64::from(link.capacity());
    }
    std::array::from_fn(|i| ratio(used[i], cap[i]))
}

/// `(1/horizon) * integral of used(t)/capacity dt` over `[0, horizon]`,
/// from one link's ledger. Rows after the horizon are ignored.
pub fn time_avg_utilization(ledger: &[LedgerEntry], capacity: u32, horizon: f64) -> f64 {
    if horizon <= 0.0 || capacity == 0 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut t_prev = 0.0;
    let mut used = 0u32;
    for e in ledger {
        let t = e.time.min(horizon);
        area += f64::from(used) * (t - t_prev);
        t_prev = t;
        used = e.link_total;
        if e.time >= horizon {
            break;
        }
    }
    area += f64::from(used) * (horizon - t_prev);
    area / (f64::from(capacity) * horizon)
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

pub const ALLOC_HEADER: &str = "time,avg_max_bw,avg_min_bw,avg_alloc_bw,stream_count";
pub const UTIL_HEADER: &str = "time,utilization";
pub const REJECTIONS_HEADER: &str = "metric,psg,no_psg";

fn alloc_csv(points: &[SeriesPoint]) -> String {
    let mut out = format!("{ALLOC_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt6(p.time),
            fmt_opt(p.avg_max),
            fmt_opt(p.avg_min),
            fmt_opt(p.avg_alloc),
            p.stream_count
        );
    }
    out
}

fn util_csv(points: &[UtilPoint]) -> String {
    let mut out = format!("{UTIL_HEADER}\n");
    for p in points {
        let _ = writeln!(out, "{},{}", fmt6(p.time), fmt6(p.fraction));
    }
    out
}

fn rejections_csv(psg: Option<&MetricsBundle>, no_psg: Option<&MetricsBundle>) -> String {
    type Getter = fn(&Counters) -> String;
    let rows: [(&str, Getter); 9] = [
        ("requested", |c| c.requested.to_string()),
        ("local_hits", |c| c.local_hits.to_string()),
        ("remote_requests", |c| c.remote_requests().to_string()),
        ("served_lps", |c| c.served_lps.to_string()),
        ("served_rps", |c| c.served_rps.to_string()),
        ("served_cms", |c| c.served_cms.to_string()),
        ("rejected", |c| c.rejected.to_string()),
        ("rejection_ratio", |c| fmt6(c.rejection_ratio())),
        ("remote_rejection_ratio", |c| fmt6(c.remote_rejection_ratio())),
    ];
    let mut out = format!("{REJECTIONS_HEADER}\n");
    for (name, get) in rows {
        let cell = |b: Option<&MetricsBundle>| b.map(|b| get(&b.counters)).unwrap_or_default();
        let _ = writeln!(out, "{name},{},{}", cell(psg), cell(no_psg));
    }
    out
}

fn check_line(out: &mut String, name: &str, ok: bool) {
    let _ = writeln!(out, "CHECK:{name}={}", if ok { "PASS" } else { "FAIL" });
}

fn summary_txt(main: &MetricsBundle, paired: Option<(&MetricsBundle, &MetricsBundle)>) -> String {
    let mut out = String::new();
    let c = &main.counters;
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("mode", if main.psg_enabled { "psg" } else { "no_psg" }.into());
    kv("seed", main.seed.to_string());
    kv("horizon", fmt6(main.horizon));
    kv("requested", c.requested.to_string());
    kv("local_hits", c.local_hits.to_string());
    kv("served_lps", c.served_lps.to_string());
    kv("served_rps", c.served_rps.to_string());
    kv("served_cms", c.served_cms.to_string());
    kv("rejected", c.rejected.to_string());
    kv("completed", c.completed.to_string());
    kv("in_flight_at_horizon", c.in_flight_at_horizon.to_string());
    kv("rejection_ratio", fmt6(c.rejection_ratio()));
    kv("remote_rejection_ratio", fmt6(c.remote_rejection_ratio()));
    kv("agent_tours", main.agent_tours.to_string());
    kv("invariant_violations", main.invariant_violations.to_string());
    kv("max_byte_error", format!("{:.3e}", main.max_byte_error));
    for kind in LinkKind::ALL {
        kv(&format!("time_avg_util_{kind}"), fmt6(main.time_avg_utilization[kind.index()]));
    }
    for kind in LinkKind::ALL {
        for class in UserClass::ALL {
            kv(
                &format!("mean_alloc_{kind}_{class}"),
                fmt_opt(main.mean_alloc_per_stream(kind, class)),
            );
        }
    }
    if let Some((psg, no_psg)) = paired {
        kv("no_psg_rejected", no_psg.counters.rejected.to_string());
        kv("psg_rejected", psg.counters.rejected.to_string());
    }

    check_line(&mut out, "counter_conservation", c.is_conserved());
    check_line(&mut out, "link_invariants", main.invariant_violations == 0);
    check_line(&mut out, "byte_conservation", main.max_byte_error <= 1e-6);
    for kind in LinkKind::ALL {
        check_line(&mut out, &format!("class_ordering_{kind}"), main.class_ordering_holds(kind));
    }
    if let Some((psg, no_psg)) = paired {
        check_line(
            &mut out,
            "psg_benefit",
            no_psg.counters.rejected >= psg.counters.rejected,
        );
        check_line(&mut out, "paired_arrivals", psg.arrivals == no_psg.arrivals);
    }
    out
}

/// Renders the report files as `(file name, contents)` pairs. The series and
/// summary come from the PSG run when present, else from the no-PSG run.
pub fn render_reports(
    psg: Option<&MetricsBundle>,
    no_psg: Option<&MetricsBundle>,
) -> Result<Vec<(String, String)>, ReportError> {
    let main = psg.or(no_psg).ok_or(ReportError::Empty)?;
    let mut files = Vec::new();
    for kind in LinkKind::ALL {
        for class in UserClass::ALL {
            files.push((
                format!("alloc_{}_class{}.csv", kind.label(), class.number()),
                alloc_csv(main.series(kind, class)),
            ));
        }
    }
    for kind in LinkKind::ALL {
        files.push((
            format!("util_{}.csv", kind.label()),
            util_csv(&main.utilization[kind.index()]),
        ));
    }
    files.push(("rejections.csv".into(), rejections_csv(psg, no_psg)));
    let paired = psg.zip(no_psg);
    files.push(("summary.txt".into(), summary_txt(main, paired)));
    Ok(files)
}

/// Writes `files` under `out_dir`. The directory is created first, so an
/// unusable path fails before any file is written.
pub fn write_files(out_dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::CreateDir {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|source| ReportError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

pub fn emit_reports(
    psg: Option<&MetricsBundle>,
    no_psg: Option<&MetricsBundle>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let files = render_reports(psg, no_psg)?;
    write_files(out_dir, &files)
}
