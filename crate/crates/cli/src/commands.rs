//! Subcommand implementations. Each returns the lines it prints so tests can
//! check them without spawning the binary.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prune_core::camera::CameraModel;
use prune_core::detect::detect_view;
use prune_core::log::{hex_digest, EpisodeLog};
use prune_core::mission::{mix_seed, run_location, LocationReport};
use prune_core::percept::{corrupt, render_instances, NoiseModel};
use prune_core::plan::build_scan;
use prune_core::arm::Arm;
use prune_core::world::{generate_orchard, WorldModel};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::report::{report_hash, write_csv, write_stage_csv, Aggregate};
use crate::svg;

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed:04}"))
}

pub fn load_world(path: &Path) -> Result<WorldModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    WorldModel::from_json(&text).with_context(|| format!("in world file {}", path.display()))
}

fn world_for(cfg: &RunConfig, seed: u64, world: Option<&Path>) -> Result<WorldModel> {
    match world {
        Some(p) => load_world(p),
        None => Ok(generate_orchard(&cfg.world, seed)?),
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<String>> {
    fs::create_dir_all(&cfg.out)?;
    let mut lines = Vec::new();
    for seed in cfg.seed_list() {
        let w = generate_orchard(&cfg.world, seed)?;
        let path = cfg.out.join(format!("world_{seed:04}.json"));
        fs::write(&path, w.to_json()?)?;
        lines.push(format!(
            "seed {seed}: {} branches, eligible {}, wrote {}",
            w.branches.len(),
            w.is_eligible(),
            path.display()
        ));
    }
    Ok(lines)
}

/// One seed: run, write `log.jsonl` and `report.json`, return the report.
pub fn run_seed(cfg: &RunConfig, seed: u64, world: Option<&Path>) -> Result<(LocationReport, String)> {
    let w = world_for(cfg, seed, world)?;
    let (report, log) = run_location(&w, &cfg.mission, seed).with_context(|| format!("seed {seed}"))?;
    let dir = seed_dir(&cfg.out, seed);
    fs::create_dir_all(&dir)?;
    let bytes = log.to_bytes();
    fs::write(dir.join("log.jsonl"), &bytes)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok((report, hex_digest(&bytes)))
}

/// Seeds run in parallel; failed seeds are reported and make the command fail
/// after the others finish.
pub fn cmd_run(cfg: &RunConfig, world: Option<&Path>) -> Result<Vec<String>> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml_string()?)?;
    let results: Vec<(u64, Result<(LocationReport, String)>)> =
        cfg.seed_list().into_par_iter().map(|s| (s, run_seed(cfg, s, world))).collect();
    let mut lines = Vec::new();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok((rep, sha)) => {
                lines.push(format!(
                    "seed {seed}: tp {} fp {} fn {} cut {}/{} log sha256 {sha}",
                    rep.detections.tp,
                    rep.detections.fp.total(),
                    rep.detections.fn_.total(),
                    rep.targets_cut,
                    rep.targets_attempted
                ));
                reports.push(rep);
            }
            Err(e) => {
                log::error!("{e:#}");
                failed.push(format!("seed {seed}: {e:#}"));
            }
        }
    }
    lines.extend(Aggregate::from_reports(&reports).summary_lines());
    if !failed.is_empty() {
        for l in &lines {
            println!("{l}");
        }
        bail!("{} seed(s) failed:\n{}", failed.len(), failed.join("\n"));
    }
    Ok(lines)
}

pub fn read_log(path: &Path) -> Result<EpisodeLog> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EpisodeLog::read_from(BufReader::new(f)).with_context(|| format!("in log {}", path.display()))
}

/// Recompute the report from a log and check it against the stored report;
/// with `rerun`, also regenerate the log from the config and compare bytes.
pub fn cmd_replay(log_path: &Path, stored: Option<&Path>, rerun: Option<&RunConfig>) -> Result<Vec<String>> {
    let log = read_log(log_path)?;
    let report = LocationReport::from_log(&log);
    let hash = report_hash(std::slice::from_ref(&report));
    let mut lines = vec![format!("log sha256: {}", log.sha256_hex()), format!("report hash: {hash}")];
    let stored = stored.map(Path::to_path_buf).or_else(|| {
        let p = log_path.with_file_name("report.json");
        p.exists().then_some(p)
    });
    if let Some(p) = stored {
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let old: LocationReport = serde_json::from_str(&text).with_context(|| format!("in report {}", p.display()))?;
        let old_hash = report_hash(std::slice::from_ref(&old));
        if old_hash != hash {
            bail!("report hash mismatch: stored {old_hash}, replayed {hash}");
        }
        lines.push(format!("stored report matches ({})", p.display()));
    }
    if let Some(cfg) = rerun {
        let seed = log.header.seed;
        let w = generate_orchard(&cfg.world, seed)?;
        let (_, fresh) = run_location(&w, &cfg.mission, seed)?;
        if fresh.to_bytes() != log.to_bytes() {
            bail!("rerun of seed {seed} produced a different log ({} vs {})", fresh.sha256_hex(), log.sha256_hex());
        }
        lines.push(format!("rerun of seed {seed} is byte-identical"));
    }
    lines.extend(Aggregate::from_reports(std::slice::from_ref(&report)).summary_lines());
    Ok(lines)
}

/// Log files under `paths`: files as given, directories searched for `*.jsonl`.
pub fn collect_logs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "jsonl") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no logs found");
    }
    Ok(out)
}

pub fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<Vec<String>> {
    let logs = collect_logs(paths)?;
    let mut reports = Vec::new();
    for p in &logs {
        reports.push(LocationReport::from_log(&read_log(p)?));
    }
    let agg = Aggregate::from_reports(&reports);
    let mut lines = agg.summary_lines();
    lines.push(format!("report hash: {}", report_hash(&reports)));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let names: Vec<String> = logs.iter().map(|p| p.display().to_string()).collect();
        write_csv(&dir.join("summary.csv"), &names, &reports)?;
        write_stage_csv(&dir.join("stages.csv"), &agg)?;
        lines.push(format!("wrote {}", dir.join("summary.csv").display()));
    }
    Ok(lines)
}

/// Scene view plus pipeline overlays for the requested waypoints.
pub fn cmd_render(cfg: &RunConfig, world: Option<&Path>, waypoints: &[usize]) -> Result<Vec<String>> {
    fs::create_dir_all(&cfg.out)?;
    let seed = cfg.seed;
    let w = world_for(cfg, seed, world)?;
    let mut lines = Vec::new();
    let scene = cfg.out.join("scene.svg");
    fs::write(&scene, svg::render_scene(&w, cfg.world.row_x))?;
    lines.push(format!("wrote {}", scene.display()));
    if waypoints.is_empty() {
        return Ok(lines);
    }
    let m = &cfg.mission;
    let arm = Arm::new(m.arm.clone());
    let plan = build_scan(&arm, &w.trellis, &m.scan)?;
    let cam: &CameraModel = &m.camera;
    let noise = NoiseModel { seed: mix_seed(m.noise.seed, seed), ..m.noise.clone() };
    for &i in waypoints {
        if i >= plan.len() {
            bail!("waypoint {i} out of range (scan has {})", plan.len());
        }
        let pose = plan.tool_pose(i);
        let (_, clean) = render_instances(cam, &pose, &w, &m.render);
        let view_id = 2 * i as u64;
        let noisy = corrupt(&clean, &noise, view_id, cam.width, cam.height);
        let det = detect_view(&noisy, cam, &pose, &m.matching, view_id);
        let path = cfg.out.join(format!("view_{i:02}.svg"));
        fs::write(&path, svg::render_view(cam.width, cam.height, &noisy, &det))?;
        lines.push(format!("wrote {} ({} candidates)", path.display(), det.candidates.len()));
    }
    Ok(lines)
}
