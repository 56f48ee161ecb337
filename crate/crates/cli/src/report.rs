//! Aggregation of location reports into summary lines and CSV tables.

use std::path::Path;

use anyhow::Result;
use prune_core::log::hex_digest;
use prune_core::mission::{ratio, DetectionLedger, FnCounts, FpCounts, LocationReport, StageTotals};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub locations: usize,
    pub n_targets: usize,
    pub candidates: usize,
    pub detections: DetectionLedger,
    pub targets_attempted: usize,
    pub targets_reached: usize,
    pub targets_cut: usize,
    pub attempts_sum: u64,
    pub planning_failures: usize,
    pub exhausted: usize,
    pub stage_sum: StageTotals,
}

fn add_stages(a: &mut StageTotals, b: &StageTotals) {
    a.initialize += b.initialize;
    a.offset_view += b.offset_view;
    a.arm_move += b.arm_move;
    a.axis_move += b.axis_move;
    a.detection += b.detection;
    a.to_approach += b.to_approach;
    a.approach += b.approach;
    a.cut += b.cut;
    a.retract += b.retract;
}

impl Aggregate {
    pub fn from_reports(reports: &[LocationReport]) -> Self {
        let mut fp = FpCounts::default();
        let mut fn_ = FnCounts::default();
        let mut stage_sum = StageTotals::default();
        let mut tp = 0;
        for r in reports {
            tp += r.detections.tp;
            let f = &r.detections.fp;
            fp.spur += f.spur;
            fp.wire += f.wire;
            fp.spurious_leader += f.spurious_leader;
            fp.duplicate += f.duplicate;
            fp.other += f.other;
            fn_.leader_missed += r.detections.fn_.leader_missed;
            fn_.intersection_missed += r.detections.fn_.intersection_missed;
            add_stages(&mut stage_sum, &r.stage_times);
        }
        Self {
            locations: reports.len(),
            n_targets: reports.iter().map(|r| r.n_targets).sum(),
            candidates: reports.iter().map(|r| r.candidates).sum(),
            detections: DetectionLedger { tp, fp, fn_ },
            targets_attempted: reports.iter().map(|r| r.targets_attempted).sum(),
            targets_reached: reports.iter().map(|r| r.targets_reached).sum(),
            targets_cut: reports.iter().map(|r| r.targets_cut).sum(),
            attempts_sum: reports.iter().flat_map(|r| &r.attempts_of_cuts).map(|&a| a as u64).sum(),
            planning_failures: reports.iter().map(|r| r.planning_failures).sum(),
            exhausted: reports.iter().map(|r| r.exhausted).sum(),
            stage_sum,
        }
    }

    pub fn success_rate(&self) -> f64 {
        ratio(self.targets_cut, self.targets_attempted)
    }

    pub fn reach_rate(&self) -> f64 {
        ratio(self.targets_cut, self.targets_reached)
    }

    pub fn attempts_mean(&self) -> f64 {
        if self.targets_cut == 0 {
            0.0
        } else {
            self.attempts_sum as f64 / self.targets_cut as f64
        }
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let d = &self.detections;
        let n = self.locations.max(1) as f64;
        let mut out = vec![
            format!("locations: {}", self.locations),
            format!(
                "detections: {} true positives, {} false positives (spur {}, wire {}, spurious leader {}, duplicate {}, other {}), {} false negatives (leader missed {}, intersection missed {})",
                d.tp,
                d.fp.total(),
                d.fp.spur,
                d.fp.wire,
                d.fp.spurious_leader,
                d.fp.duplicate,
                d.fp.other,
                d.fn_.total(),
                d.fn_.leader_missed,
                d.fn_.intersection_missed
            ),
            format!(
                "cutting success rate: {:.0}% ({}/{})",
                100.0 * self.success_rate(),
                self.targets_cut,
                self.targets_attempted
            ),
            format!(
                "reach success rate: {:.0}% ({}/{}), planning failures {}, attempts exhausted {}",
                100.0 * self.reach_rate(),
                self.targets_cut,
                self.targets_reached,
                self.planning_failures,
                self.exhausted
            ),
            format!("attempts per success: {:.1}", self.attempts_mean()),
            "stage times (s, mean per location):".to_string(),
        ];
        for (name, v) in self.stage_sum.rows() {
            out.push(format!("  {name:<12} {:>8.1}", v / n));
        }
        out.push(format!("  {:<12} {:>8.1}", "scan total", self.stage_sum.scan_total() / n));
        out.push(format!("  {:<12} {:>8.1}", "cut total", self.stage_sum.cut_total() / n));
        out.push(format!("  {:<12} {:>8.1}", "total", self.stage_sum.total() / n));
        out
    }
}

/// Hash of the reports' canonical JSON.
pub fn report_hash(reports: &[LocationReport]) -> String {
    hex_digest(&serde_json::to_vec(reports).expect("reports serialize"))
}

#[derive(Serialize)]
struct Row<'a> {
    location: &'a str,
    seed: String,
    targets: usize,
    candidates: usize,
    tp: usize,
    fp_spur: usize,
    fp_wire: usize,
    fp_spurious_leader: usize,
    fp_duplicate: usize,
    fp_other: usize,
    fn_leader_missed: usize,
    fn_intersection_missed: usize,
    attempted: usize,
    reached: usize,
    cut: usize,
    planning_failures: usize,
    exhausted: usize,
    attempts_mean: f64,
    success_rate: f64,
    reach_rate: f64,
    total_time_s: f64,
}

/// Per-location rows plus an `all` row.
pub fn write_csv(path: &Path, names: &[String], reports: &[LocationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (name, r) in names.iter().zip(reports) {
        let d = &r.detections;
        w.serialize(Row {
            location: name,
            seed: r.seed.to_string(),
            targets: r.n_targets,
            candidates: r.candidates,
            tp: d.tp,
            fp_spur: d.fp.spur,
            fp_wire: d.fp.wire,
            fp_spurious_leader: d.fp.spurious_leader,
            fp_duplicate: d.fp.duplicate,
            fp_other: d.fp.other,
            fn_leader_missed: d.fn_.leader_missed,
            fn_intersection_missed: d.fn_.intersection_missed,
            attempted: r.targets_attempted,
            reached: r.targets_reached,
            cut: r.targets_cut,
            planning_failures: r.planning_failures,
            exhausted: r.exhausted,
            attempts_mean: r.attempts_per_success,
            success_rate: r.success_rate(),
            reach_rate: r.reach_rate(),
            total_time_s: r.total_time_s,
        })?;
    }
    let a = Aggregate::from_reports(reports);
    let d = &a.detections;
    w.serialize(Row {
        location: "all",
        seed: String::new(),
        targets: a.n_targets,
        candidates: a.candidates,
        tp: d.tp,
        fp_spur: d.fp.spur,
        fp_wire: d.fp.wire,
        fp_spurious_leader: d.fp.spurious_leader,
        fp_duplicate: d.fp.duplicate,
        fp_other: d.fp.other,
        fn_leader_missed: d.fn_.leader_missed,
        fn_intersection_missed: d.fn_.intersection_missed,
        attempted: a.targets_attempted,
        reached: a.targets_reached,
        cut: a.targets_cut,
        planning_failures: a.planning_failures,
        exhausted: a.exhausted,
        attempts_mean: a.attempts_mean(),
        success_rate: a.success_rate(),
        reach_rate: a.reach_rate(),
        total_time_s: a.stage_sum.total(),
    })?;
    w.flush()?;
    Ok(())
}

/// Stage table: total and per-location mean.
pub fn write_stage_csv(path: &Path, agg: &Aggregate) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "total_s", "mean_s"])?;
    let n = agg.locations.max(1) as f64;
    for (name, v) in agg.stage_sum.rows() {
        w.write_record([name.to_string(), format!("{v:.3}"), format!("{:.3}", v / n)])?;
    }
    w.flush()?;
    Ok(())
}
