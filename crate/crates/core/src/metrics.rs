//! Ranking metrics and session-trace aggregation.
//!
//! Ranks are 1-based throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::critique::{Mode, SessionTrace, StepRecord, Strategy};
use crate::{EntityId, Error, Result};

/// Mean 1-based position of `items` in `ranking`.
pub fn average_rank(ranking: &[EntityId], items: &BTreeSet<EntityId>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::UndefinedMetric("average rank of an empty item set".to_string()));
    }
    let mut sum = 0usize;
    let mut found = 0usize;
    for (pos, item) in ranking.iter().enumerate() {
        if items.contains(item) {
            sum += pos + 1;
            found += 1;
        }
    }
    if found != items.len() {
        return Err(Error::UndefinedMetric(format!(
            "{} of {} items are missing from the ranking",
            items.len() - found,
            items.len()
        )));
    }
    Ok(sum as f64 / found as f64)
}

/// Normalized average rank change; positive when the items moved up.
pub fn narc(ar_pre: f64, ar_post: f64) -> Result<f64> {
    if !(ar_pre > 0.0) || !ar_post.is_finite() {
        return Err(Error::UndefinedMetric(format!("narc({ar_pre}, {ar_post})")));
    }
    Ok((ar_pre - ar_post) / ar_pre)
}

/// 1 if `gt` is among the first `k` entries of `ranking`.
pub fn hit_rate_at_k(ranking: &[EntityId], gt: EntityId, k: usize) -> Result<u8> {
    if k == 0 {
        return Err(Error::UndefinedMetric("hit@0".to_string()));
    }
    let pos = ranking
        .iter()
        .position(|&i| i == gt)
        .ok_or_else(|| Error::UndefinedMetric(format!("item {gt} is not in the ranking")))?;
    Ok(u8::from(pos < k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub hit5_mean: f64,
    pub hit5_se: f64,
    pub hit10_mean: f64,
    pub hit10_se: f64,
    /// Mean of the NARC values pooled at this step; `None` at step 0 or
    /// when no critique at this step had a defined NARC.
    pub narc_mean: Option<f64>,
}

/// Aggregate of all sessions sharing a strategy and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBlock {
    pub strategy: Strategy,
    pub mode: Mode,
    pub runs: Vec<usize>,
    pub sessions: usize,
    /// Length `max_steps + 1`.
    pub steps: Vec<StepStats>,
    /// NARC values per step, sorted ascending. Entry 0 is always empty.
    pub narc: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankReport {
    pub blocks: Vec<ReportBlock>,
}

impl RankReport {
    pub fn block(&self, strategy: Strategy, mode: Mode) -> Option<&ReportBlock> {
        self.blocks.iter().find(|b| b.strategy == strategy && b.mode == mode)
    }
}

impl ReportBlock {
    /// Mean NARC over every critique event in the block.
    pub fn pooled_narc_mean(&self) -> Option<f64> {
        let mut all: Vec<f64> = self.narc.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        mean(&all)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`; zero for a single value). Sums run in sorted order so the
/// result does not depend on the order of `xs`.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut xs = xs.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Record for `step`, reusing the final record once a session has ended.
fn padded(records: &[StepRecord], step: usize) -> &StepRecord {
    &records[step.min(records.len() - 1)]
}

/// Per-step hit means and standard errors within each run, then the mean
/// over runs. The cross-run standard error combines the per-run errors as
/// the error of a mean of independent means. NARC is pooled over every
/// critique event at a step.
pub fn aggregate(traces: &[SessionTrace], max_steps: usize) -> Result<RankReport> {
    if traces.is_empty() {
        return Err(Error::UndefinedMetric("no traces to aggregate".to_string()));
    }
    type Key = (Strategy, Mode);
    let mut groups: BTreeMap<Key, BTreeMap<usize, Vec<&SessionTrace>>> = BTreeMap::new();
    for t in traces {
        if t.records.is_empty() {
            return Err(Error::UndefinedMetric(format!("session {} has no records", t.session)));
        }
        groups
            .entry((t.strategy, t.mode))
            .or_default()
            .entry(t.run)
            .or_default()
            .push(t);
    }

    let mut blocks = Vec::with_capacity(groups.len());
    for ((strategy, mode), runs) in groups {
        let mut narc: Vec<Vec<f64>> = vec![Vec::new(); max_steps + 1];
        // per step: (hit5 run means, hit5 run ses, hit10 run means, hit10 run ses)
        let mut per_run: Vec<[Vec<f64>; 4]> = vec![Default::default(); max_steps + 1];
        let mut sessions = 0;
        for sess in runs.values() {
            sessions += sess.len();
            for t in sess {
                for r in &t.records {
                    if let (Some(n), true) = (&r.narc_inputs, r.step >= 1 && r.step <= max_steps) {
                        narc[r.step].push(n.narc);
                    }
                }
            }
            for (step, acc) in per_run.iter_mut().enumerate() {
                let h5: Vec<f64> = sess
                    .iter()
                    .filter_map(|t| padded(&t.records, step).hit5)
                    .map(f64::from)
                    .collect();
                let h10: Vec<f64> = sess
                    .iter()
                    .filter_map(|t| padded(&t.records, step).hit10)
                    .map(f64::from)
                    .collect();
                if h5.is_empty() || h10.is_empty() {
                    return Err(Error::UndefinedMetric(format!(
                        "{strategy}/{mode}: sessions without a ground-truth item"
                    )));
                }
                let (m5, s5) = mean_se(&h5);
                let (m10, s10) = mean_se(&h10);
                acc[0].push(m5);
                acc[1].push(s5);
                acc[2].push(m10);
                acc[3].push(s10);
            }
        }
        for v in &mut narc {
            v.sort_by(f64::total_cmp);
        }
        let r = runs.len() as f64;
        let combine = |means: &[f64], ses: &[f64]| {
            let m = means.iter().sum::<f64>() / r;
            let se = ses.iter().map(|s| s * s).sum::<f64>().sqrt() / r;
            (m, se)
        };
        let steps = per_run
            .iter()
            .enumerate()
            .map(|(step, acc)| {
                let (hit5_mean, hit5_se) = combine(&acc[0], &acc[1]);
                let (hit10_mean, hit10_se) = combine(&acc[2], &acc[3]);
                StepStats {
                    step,
                    hit5_mean,
                    hit5_se,
                    hit10_mean,
                    hit10_se,
                    narc_mean: mean(&narc[step]),
                }
            })
            .collect();
        blocks.push(ReportBlock {
            strategy,
            mode,
            runs: runs.keys().copied().collect(),
            sessions,
            steps,
            narc,
        });
    }
    Ok(RankReport { blocks })
}

pub const CSV_HEADER: &str = "strategy,mode,step,hit5_mean,hit5_se,hit10_mean,hit10_se,narc_mean";

/// CSV with one row per step per block. Floats use the shortest
/// representation that parses back to the same value.
pub fn report_csv(report: &RankReport) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for b in &report.blocks {
        for st in &b.steps {
            let narc = st.narc_mean.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                b.strategy, b.mode, st.step, st.hit5_mean, st.hit5_se, st.hit10_mean, st.hit10_se, narc
            );
        }
    }
    s
}

pub fn report_summary(report: &RankReport) -> String {
    let mut s = String::new();
    for b in &report.blocks {
        let _ = writeln!(
            s,
            "{} / {}: {} sessions over {} run(s) {:?}",
            b.strategy,
            b.mode,
            b.sessions,
            b.runs.len(),
            b.runs
        );
        for st in &b.steps {
            let narc = st.narc_mean.map(|v| format!("{v:+.4}")).unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                s,
                "  step {:>2}  hit@5 {:.4} ± {:.4}  hit@10 {:.4} ± {:.4}  narc {} (n={})",
                st.step,
                st.hit5_mean,
                st.hit5_se,
                st.hit10_mean,
                st.hit10_se,
                narc,
                b.narc[st.step].len()
            );
        }
        if let Some(p) = b.pooled_narc_mean() {
            let _ = writeln!(s, "  pooled narc {p:+.4}");
        }
    }
    s
}

/// Writes `report.csv` and `summary.txt` into `dir`.
pub fn emit_report(report: &RankReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(report))?;
    std::fs::write(dir.join("summary.txt"), report_summary(report))?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub strategy: Strategy,
    pub mode: Mode,
    pub stats: StepStats,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let origin = Path::new("<report csv>");
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(Error::parse(origin, 1, "missing or unexpected header")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::parse(origin, idx + 1, m);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        rows.push(CsvRow {
            strategy: f[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            mode: f[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            stats: StepStats {
                step: f[2].parse().map_err(|e| bad(format!("step: {e}")))?,
                hit5_mean: num(f[3])?,
                hit5_se: num(f[4])?,
                hit10_mean: num(f[5])?,
                hit10_se: num(f[6])?,
                narc_mean: if f[7].is_empty() { None } else { Some(num(f[7])?) },
            },
        });
    }
    Ok(rows)
}
