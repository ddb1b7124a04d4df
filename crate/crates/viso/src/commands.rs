//! The `run`, `suite` and `field` verbs.

use std::path::{Path, PathBuf};

use viso_core::geom::Vec3;
use viso_core::nbv::{planner_field, OccluderPoints};
use viso_core::orchestrator::{run_episode, EpisodeSummary, SuiteResult};

use crate::config::load_or_default;
use crate::error::CliError;
use crate::output::{fmt_f64, write_episode, write_suite, write_text};
use crate::scene_file::load_scene;

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn cmd_run(scene: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let (_, gt) = load_scene(scene)?;
    let cfg = load_or_default(config)?;
    let seed = seed.unwrap_or(gt.seed);
    let result = run_episode(&gt, &cfg, seed);
    write_episode(out, &stem(scene), seed, &result)
}

/// Scene files (`*.json`) in `dir`, sorted by name.
pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no scene files (*.json)", dir.display())));
    }
    Ok(files)
}

pub fn cmd_suite(dir: &Path, config: Option<&Path>, seeds: u64, base_seed: u64, out: &Path) -> Result<SuiteResult, CliError> {
    let files = scene_files(dir)?;
    let cfg = load_or_default(config)?;
    let mut names = Vec::new();
    let mut episodes = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let (_, gt) = load_scene(path)?;
        let name = stem(path);
        for seed in base_seed..base_seed + seeds {
            let result = run_episode(&gt, &cfg, seed);
            write_episode(&out.join(&name).join(format!("seed_{seed}")), &name, seed, &result)?;
            episodes.push(EpisodeSummary::of(i, seed, &result));
        }
        names.push(name);
    }
    let metrics = viso_core::orchestrator::aggregate(&episodes);
    let suite = SuiteResult { episodes, metrics };
    write_suite(out, &names, &suite)?;
    Ok(suite)
}

/// `n x n` grid over the upper hemisphere: azimuth `2 pi i / n`, elevation
/// `(j + 1/2) pi / (2 n)`. Occluders are the centers of all non-target
/// objects.
pub fn field_grid(scene: &Path, n: usize) -> Result<String, CliError> {
    let (_, gt) = load_scene(scene)?;
    let target = gt.target().expect("validated scene has a target").bbox.center;
    let occ = OccluderPoints::centers(gt.objects.iter().filter(|o| o.label() != gt.target_label).map(|o| &o.bbox));
    let mut out = String::from("azimuth,elevation,x,y,z,vx,vy,vz,beta,truncated,singular\n");
    for i in 0..n {
        for j in 0..n {
            let az = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let el = (j as f64 + 0.5) * std::f64::consts::FRAC_PI_2 / n as f64;
            let x: Vec3 = gt.sphere.point_at(az, el);
            let f = planner_field(&x, &gt.sphere, &target, &occ)
                .map_err(|e| CliError::Invalid { file: scene.display().to_string(), message: e.to_string() })?;
            let cols = [az, el, x.x, x.y, x.z, f.velocity.x, f.velocity.y, f.velocity.z, f.beta];
            let cols: Vec<String> = cols.iter().map(|c| fmt_f64(*c)).collect();
            out.push_str(&format!("{},{},{}\n", cols.join(","), f.truncated, f.singular));
        }
    }
    Ok(out)
}

pub fn cmd_field(scene: &Path, n: usize, out: &Path) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--grid must be >= 1".into()));
    }
    write_text(&out.join("field.csv"), &field_grid(scene, n)?)
}
