//! End-to-end acceptance checks. Run with `--nocapture` to see the report.

mod common;

use std::collections::HashMap;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{engine_ba, oracle_ba, random_scenario};
use vodsim::engine::LinkKind;
use vodsim::metrics::render_reports;
use vodsim::model::{UserClass, VideoId};
use vodsim::sim::{build_world, run_with, workload_rng, RunOptions, Workload};
use vodsim::{baseline_no_psg, run, MetricsBundle, SimConfig};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn class_bounds(class: UserClass) -> ((u32, u32), (u32, u32)) {
    match class {
        UserClass::Class1 => ((8, 11), (24, 29)),
        UserClass::Class2 => ((6, 8), (18, 23)),
        UserClass::Class3 => ((4, 6), (12, 17)),
    }
}

struct LedgerAudit {
    rows: usize,
    capacity_violations: usize,
    total_mismatches: usize,
    bound_violations: usize,
    max_total: i64,
}

/// Replays the ledger link by link from its deltas alone.
fn audit_ledger(csv: &str, cfg: &SimConfig) -> LedgerAudit {
    let world = build_world(cfg).unwrap();
    let cat = world.catalog();
    let mut rates: HashMap<(String, u64), i64> = HashMap::new();
    let mut totals: HashMap<String, i64> = HashMap::new();
    let mut a = LedgerAudit {
        rows: 0,
        capacity_violations: 0,
        total_mismatches: 0,
        bound_violations: 0,
        max_total: 0,
    };
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let link = f[1].to_string();
        let id: u64 = f[3].parse().unwrap();
        let video = VideoId(f[4].parse().unwrap());
        let class = UserClass::from_index(f[5].parse::<usize>().unwrap() - 1).unwrap();
        let delta: i64 = f[6].parse().unwrap();
        let logged_total: i64 = f[8].parse().unwrap();
        a.rows += 1;

        let rate = rates.entry((link.clone(), id)).or_insert(0);
        *rate += delta;
        let total = totals.entry(link.clone()).or_insert(0);
        *total += delta;
        a.max_total = a.max_total.max(*total);
        if *total > i64::from(cfg.link_capacity) || *total < 0 {
            a.capacity_violations += 1;
        }
        if *total != logged_total {
            a.total_mismatches += 1;
        }
        if f[2] != "release" {
            let meta = cat.video(video);
            let (lo, hi) = (i64::from(meta.min_rate(class)), i64::from(meta.max_rate(class)));
            let ((min_lo, min_hi), (max_lo, max_hi)) = class_bounds(class);
            let meta_ok = (min_lo..=min_hi).contains(&(lo as u32)) && (max_lo..=max_hi).contains(&(hi as u32));
            if *rate < lo || *rate > hi || !meta_ok {
                a.bound_violations += 1;
            }
        } else if *rate != 0 {
            a.bound_violations += 1;
        }
    }
    a
}

fn par_runs(cfgs: &[SimConfig]) -> Vec<MetricsBundle> {
    thread::scope(|s| {
        let hs: Vec<_> = cfgs.iter().map(|c| s.spawn(move || run(c).unwrap())).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn remote_served(b: &MetricsBundle) -> u64 {
    b.counters.served_lps + b.counters.served_rps + b.counters.served_cms
}

#[test]
fn acceptance() {
    let base = SimConfig::default();
    let mut verdicts = Vec::new();

    // Main audited run shared by the conservation, ordering and byte checks.
    let audited_cfg = SimConfig {
        check_invariants: true,
        ..base.clone()
    };
    let audited = run_with(&audited_cfg, RunOptions { keep_ledger: true }).unwrap();
    let ledger = audit_ledger(audited.ledger_csv.as_deref().unwrap(), &audited_cfg);

    verdicts.push(Verdict {
        id: 1,
        name: "capacity conservation",
        pass: audited.invariant_violations == 0
            && ledger.capacity_violations == 0
            && ledger.total_mismatches == 0
            && audited.counters.requested >= 9000,
        detail: format!(
            "requests={} ledger_rows={} over_capacity={} total_mismatch={} engine_violations={} peak={}",
            audited.counters.requested,
            ledger.rows,
            ledger.capacity_violations,
            ledger.total_mismatches,
            audited.invariant_violations,
            ledger.max_total
        ),
    });

    verdicts.push(Verdict {
        id: 2,
        name: "bound safety",
        pass: ledger.bound_violations == 0 && ledger.rows > 0,
        detail: format!("rows={} out_of_bounds={}", ledger.rows, ledger.bound_violations),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(0xBA);
    let mut mismatches = 0;
    let n_scen = 10_000;
    for _ in 0..n_scen {
        let s = random_scenario(&mut rng);
        if engine_ba(&s).0 != oracle_ba(&s) {
            mismatches += 1;
        }
    }
    verdicts.push(Verdict {
        id: 3,
        name: "oracle equivalence",
        pass: mismatches == 0,
        detail: format!("scenarios={n_scen} mismatches={mismatches}"),
    });

    let mut ordering = Vec::new();
    let mut ok4 = remote_served(&audited) >= 1000;
    for kind in LinkKind::ALL {
        let m: Vec<Option<f64>> = UserClass::ALL
            .iter()
            .map(|&c| audited.mean_alloc_per_stream(kind, c))
            .collect();
        let strict = matches!(m[..], [Some(a), Some(b), Some(c)] if a > b && b > c);
        ok4 &= strict;
        let fmt: Vec<String> = m.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.2}"))).collect();
        ordering.push(format!("{}=[{}]", kind.label(), fmt.join(">")));
    }
    verdicts.push(Verdict {
        id: 4,
        name: "class ordering",
        pass: ok4,
        detail: format!("remote_served={} {}", remote_served(&audited), ordering.join(" ")),
    });

    // Load sweep: x0.25, x1, x4 of the default rate.
    let factors = [0.25, 1.0, 4.0];
    let sweep_cfgs: Vec<SimConfig> = factors
        .iter()
        .map(|f| SimConfig {
            total_arrival_rate: base.total_arrival_rate * f,
            ..base.clone()
        })
        .collect();
    let sweep = par_runs(&sweep_cfgs);
    let mut ok5 = true;
    let mut trend = Vec::new();
    for class in UserClass::ALL {
        let m: Vec<f64> = sweep
            .iter()
            .map(|b| b.mean_alloc_per_stream_class(class).unwrap_or(f64::NAN))
            .collect();
        ok5 &= m.windows(2).all(|w| w[1] <= w[0] * 1.02);
        trend.push(format!(
            "c{}=[{}]",
            class.number(),
            m.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",")
        ));
    }
    verdicts.push(Verdict {
        id: 5,
        name: "saturation trend",
        pass: ok5,
        detail: trend.join(" "),
    });

    let heavy = &sweep[2];
    let util = heavy.time_avg_utilization;
    verdicts.push(Verdict {
        id: 6,
        name: "utilization at x4",
        pass: util.iter().all(|&u| u >= 0.90),
        detail: format!(
            "rate={} lps={:.3} rps={:.3} cms={:.3}",
            sweep_cfgs[2].total_arrival_rate, util[0], util[1], util[2]
        ),
    });

    let seeds: Vec<u64> = (1..=10).collect();
    let pairs: Vec<(MetricsBundle, MetricsBundle)> = thread::scope(|s| {
        let hs: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = SimConfig { seed, ..base.clone() };
                s.spawn(move || (run(&cfg).unwrap(), baseline_no_psg(&cfg).unwrap()))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let dominated = pairs
        .iter()
        .filter(|(p, n)| n.counters.rejected >= p.counters.rejected)
        .count();
    let paired = pairs.iter().all(|(p, n)| p.arrivals == n.arrivals);
    let mean_ratio = pairs.iter().map(|(p, _)| p.counters.remote_rejection_ratio()).sum::<f64>() / pairs.len() as f64;
    let (psg_rej, base_rej): (u64, u64) = pairs
        .iter()
        .fold((0, 0), |(a, b), (p, n)| (a + p.counters.rejected, b + n.counters.rejected));
    verdicts.push(Verdict {
        id: 7,
        name: "psg benefit",
        pass: dominated == seeds.len() && paired && mean_ratio <= 0.05,
        detail: format!(
            "seeds_dominated={dominated}/{} rejected psg={psg_rej} no_psg={base_rej} mean_remote_ratio_psg={mean_ratio:.4}",
            seeds.len()
        ),
    });

    let world = build_world(&base).unwrap();
    let tier_of: HashMap<VideoId, usize> = world.catalog().videos().iter().map(|v| (v.id, v.tier.index())).collect();
    let wl = Workload::new(&base, world.catalog());
    let mut wrng = workload_rng(base.seed);
    let n = 100_000;
    let (mut tiers, mut classes) = ([0usize; 3], [0usize; 3]);
    for _ in 0..n {
        let a = wl.generate_arrival(&mut wrng).unwrap();
        tiers[tier_of[&a.video]] += 1;
        classes[a.class.index()] += 1;
    }
    let shares = |c: [usize; 3]| c.map(|x| x as f64 / n as f64);
    let (ts, cs) = (shares(tiers), shares(classes));
    let within = |got: [f64; 3], want: [f64; 3]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.01);
    verdicts.push(Verdict {
        id: 8,
        name: "workload mix",
        pass: within(ts, [0.50, 0.35, 0.15]) && within(cs, [0.20, 0.30, 0.50]),
        detail: format!(
            "tiers=[{:.4},{:.4},{:.4}] classes=[{:.4},{:.4},{:.4}]",
            ts[0], ts[1], ts[2], cs[0], cs[1], cs[2]
        ),
    });

    let mut worst = 0.0f64;
    let mut reduced = 0;
    let mut all_runs: Vec<&MetricsBundle> = vec![&audited];
    all_runs.extend(sweep.iter());
    let mut checked = 0;
    for b in &all_runs {
        for c in &b.completions {
            let size = c.size;
            worst = worst.max((c.delivered - size).abs() / size);
            reduced += usize::from(c.rate_changes > 0);
            checked += 1;
        }
    }
    verdicts.push(Verdict {
        id: 9,
        name: "byte conservation",
        pass: worst <= 1e-6 && checked > 0,
        detail: format!("completions={checked} with_rate_cuts={reduced} worst_rel_error={worst:.3e}"),
    });

    let first = render_reports(Some(&pairs[0].0), Some(&pairs[0].1)).unwrap();
    let again = render_reports(Some(&run(&base).unwrap()), Some(&baseline_no_psg(&base).unwrap())).unwrap();
    let identical = first == again;
    verdicts.push(Verdict {
        id: 10,
        name: "determinism",
        pass: identical && first.len() == 14,
        detail: format!("files={} identical={identical}", first.len()),
    });

    for v in &verdicts {
        println!(
            "[{}] criterion {:>2} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
