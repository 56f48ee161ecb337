//! Writes the field-trial fixture log used by the report tests:
//! 38 true positives (6 planning failures, 10 exhausted, 22 cut in 31
//! attempts), 115 false positives (96 spur, 10 wire, 9 spurious leader)
//! and 27 misses (2 leader, 25 intersection).
//!
//! cargo run -p prune-cli --example make_fixture -- crates/cli/tests/fixtures/field_trial.jsonl

use nalgebra::Point3;
use prune_core::control::{AbortCode, ApproachOutcome};
use prune_core::log::{EpisodeLog, Event, FnCause, FpCategory, Verdict};
use prune_core::mission::{StageTiming, TimingMode};
use prune_core::world::{BranchClass, CutOutcome};
use rand::seq::SliceRandom;
use rand::SeedableRng;

#[derive(Clone, Copy)]
enum Kind {
    PlanFail,
    Exhausted,
    Cut(u32),
    Fp(FpCategory),
}

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "crates/cli/tests/fixtures/field_trial.jsonl".into());
    let timing = StageTiming::default();
    let mut log = EpisodeLog::new(2021, 65, timing, TimingMode::Nominal);
    let mut t = 0.0;

    let mut kinds = Vec::new();
    kinds.extend(std::iter::repeat_n(Kind::PlanFail, 6));
    kinds.extend(std::iter::repeat_n(Kind::Exhausted, 10));
    kinds.extend(std::iter::repeat_n(Kind::Cut(1), 13));
    kinds.extend(std::iter::repeat_n(Kind::Cut(2), 9));
    kinds.extend(std::iter::repeat_n(Kind::Fp(FpCategory::Spur), 96));
    kinds.extend(std::iter::repeat_n(Kind::Fp(FpCategory::Wire), 10));
    kinds.extend(std::iter::repeat_n(Kind::Fp(FpCategory::SpuriousLeader), 9));
    kinds.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(7));

    // Scan, 4 rails x 7 poses; candidates are spread over the waypoints.
    let per_wp = kinds.len().div_ceil(28);
    let mut next = 0usize;
    for i in 0..28 {
        let rail = (i / 7) as f64 * 0.2;
        let rail_move = if i > 0 && i % 7 == 0 { 0.2 } else { 0.0 };
        t += if i == 0 {
            timing.initialize_s
        } else if rail_move > 0.0 {
            timing.axis_move_s(rail_move)
        } else {
            timing.arm_move_s()
        };
        log.push(t, Event::Waypoint { index: i, rail, pose_index: i % 7, plan_ok: true, rail_move_m: rail_move });
        t += timing.offset_view_s() + timing.detection_s();

        for _ in 0..per_wp {
            let Some(&kind) = kinds.get(next) else { break };
            let id = next;
            next += 1;
            let (verdict, class, leader) = match kind {
                Kind::Fp(c) => (
                    Verdict::Fp { category: c },
                    match c {
                        FpCategory::Spur => BranchClass::Spur,
                        FpCategory::Wire => BranchClass::Wire,
                        _ => BranchClass::SideBranch,
                    },
                    if c == FpCategory::SpuriousLeader { None } else { Some(0) },
                ),
                _ => (Verdict::Tp { target_branch_id: 100 + id as u32 }, BranchClass::SideBranch, Some(0)),
            };
            log.push(
                t,
                Event::Candidate {
                    id,
                    view_id: 2 * i as u64,
                    estimate: Point3::new(0.05 + rail, 1.3, 0.9 + 0.01 * (i % 7) as f64),
                    side_source: Some(100 + id as u32),
                    side_source_class: Some(class),
                    leader_source: leader,
                    target_pixels: 800,
                    verdict,
                },
            );
            let tp = verdict.is_tp();
            let outcome = |planning_failed, attempts, cut, skipped| Event::Outcome {
                candidate_id: id,
                tp,
                skipped,
                planning_failed,
                attempts,
                cut,
            };
            match kind {
                Kind::Fp(FpCategory::Spur) => {
                    log.push(t, Event::Skip { candidate_id: id, reason: "spur".into() });
                    log.push(t, outcome(false, 0, false, true));
                }
                Kind::PlanFail => {
                    log.push(
                        t,
                        Event::Plan {
                            candidate_id: id,
                            ok: false,
                            displacement_rad: Some(3.9),
                            reason: Some("displacement above threshold".into()),
                        },
                    );
                    log.push(t, outcome(true, 0, false, false));
                }
                _ => {
                    log.push(t, Event::Plan { candidate_id: id, ok: true, displacement_rad: Some(1.2), reason: None });
                    t += timing.to_approach_s;
                    let (n, success) = match kind {
                        Kind::Cut(n) => (n, true),
                        _ => (3, false),
                    };
                    for a in 1..=n {
                        t += timing.approach_s;
                        let last = a == n;
                        let outcome_a = if success && last {
                            let o = CutOutcome::Success { branch_id: 100 + id as u32 };
                            t += timing.cut_s;
                            log.push(t, Event::Cut { candidate_id: id, attempt: a, outcome: o });
                            ApproachOutcome::Cut { outcome: o }
                        } else {
                            let code = match kind {
                                Kind::Fp(FpCategory::Wire) => AbortCode::WrongObject,
                                Kind::Fp(_) => AbortCode::TargetLost,
                                _ if a % 2 == 1 => AbortCode::Miss,
                                _ => AbortCode::Timeout,
                            };
                            ApproachOutcome::Abort { code }
                        };
                        t += timing.retract_s;
                        log.push(
                            t,
                            Event::Attempt { candidate_id: id, attempt: a, duration_s: timing.approach_s, outcome: outcome_a },
                        );
                    }
                    log.push(t, outcome(false, n, success, false));
                }
            }
        }
    }
    for k in 0..27u32 {
        let cause = if k < 2 { FnCause::LeaderMissed } else { FnCause::IntersectionMissed };
        log.push(t, Event::Missed { branch_id: 500 + k, cause });
    }
    let total = prune_core::mission::LocationReport::from_log(&log).total_time_s;
    log.push(t, Event::End { total_time_s: total });
    std::fs::write(&path, log.to_bytes()).expect("write fixture");
    println!("wrote {path} (sha256 {})", log.sha256_hex());
}
