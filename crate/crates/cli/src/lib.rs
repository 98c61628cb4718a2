//! Scenario generation, single runs and benchmark sweeps behind the `unav`
//! binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unav_core::sim::{generate_instances, run_detailed, Metrics, RunRecord};
use unav_core::{load_map, Algorithm, GridMap, Outcome, RunConfig, RunResult, ScenarioInstance};

pub fn read_map(path: &Path) -> Result<GridMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading map {}", path.display()))?;
    load_map(&text).with_context(|| format!("parsing map {}", path.display()))
}

/// Reads a JSON run configuration; every field is optional.
pub fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

pub fn read_instance(path: &Path) -> Result<ScenarioInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
}

/// A relative map reference is looked up next to the scenario file first,
/// then in the working directory.
pub fn resolve_map(instance: &ScenarioInstance, scenario_path: &Path) -> PathBuf {
    let reference = Path::new(&instance.map);
    if reference.is_relative() {
        if let Some(dir) = scenario_path.parent() {
            let beside = dir.join(reference);
            if beside.exists() {
                return beside;
            }
        }
    }
    reference.to_path_buf()
}

fn map_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Writes `count` scenario files named `<map>-<k>.json` into `out_dir` and
/// returns their paths.
pub fn cmd_gen(map_path: &Path, count: usize, pairs: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let map = read_map(map_path)?;
    let r_safe = RunConfig::default().r_safe;
    let instances = generate_instances(&map, &map_path.display().to_string(), count, pairs, seed, r_safe)
        .with_context(|| format!("generating scenarios on {}", map_path.display()))?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stem = map_stem(map_path);
    let mut written = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        let path = out_dir.join(format!("{stem}-{k:03}.json"));
        let mut text = serde_json::to_string_pretty(inst)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

pub struct RunArgs<'a> {
    pub scenario: &'a Path,
    pub algorithm: Option<Algorithm>,
    pub n: Option<usize>,
    pub config: Option<&'a Path>,
    pub trace: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

/// Runs one scenario. The result document goes to `out` (or stdout).
pub fn cmd_run(args: &RunArgs<'_>) -> Result<RunResult> {
    let mut config = read_config(args.config)?;
    if let Some(a) = args.algorithm {
        config.algorithm = a;
    }
    let full = read_instance(args.scenario)?;
    let instance = match args.n {
        Some(n) => full.truncated(n)?,
        None => full,
    };
    let map = read_map(&resolve_map(&instance, args.scenario))?;
    let record = run_detailed(&instance, &map, &config, args.trace.is_some())?;
    if let Some(path) = args.trace {
        write_trace(&record, path)?;
    }
    let mut doc = serde_json::to_string_pretty(&record.result)?;
    doc.push('\n');
    match args.out {
        Some(path) => fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(doc.as_bytes())?,
    }
    Ok(record.result)
}

fn write_trace(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    if record.trace.is_empty() {
        w.write_record(["t", "agent", "x", "y", "goal", "status"])?;
    }
    for row in &record.trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Benchmark sweep description. Map paths are relative to the spec file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub maps: Vec<PathBuf>,
    #[serde(default = "default_agents")]
    pub agents: Vec<usize>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config: RunConfig,
}

fn default_agents() -> Vec<usize> {
    vec![10, 20, 30, 40, 50]
}

fn default_instances() -> usize {
    150
}

impl BenchSpec {
    pub fn read(path: &Path) -> Result<BenchSpec> {
        let text = fs::read_to_string(path).with_context(|| format!("reading bench spec {}", path.display()))?;
        let mut spec: BenchSpec =
            serde_json::from_str(&text).with_context(|| format!("parsing bench spec {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for m in &mut spec.maps {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.maps.is_empty(), "bench spec lists no maps");
        ensure!(!self.algorithms.is_empty(), "bench spec lists no algorithms");
        ensure!(!self.agents.is_empty(), "bench spec lists no agent counts");
        self.config.validate()?;
        Ok(())
    }
}

/// One benchmark run.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub map: String,
    pub algorithm: Algorithm,
    pub n: usize,
    pub instance: usize,
    pub result: RunResult,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub map: String,
    pub algorithm: String,
    pub n: usize,
    pub instance: usize,
    pub outcome: String,
    pub makespan: Option<u64>,
    pub flowtime: Option<u64>,
    pub maxdist: Option<f64>,
    pub sumdist: Option<f64>,
}

impl From<&BenchRun> for ResultRow {
    fn from(r: &BenchRun) -> Self {
        let m = r.result.metrics;
        ResultRow {
            map: r.map.clone(),
            algorithm: r.algorithm.to_string(),
            n: r.n,
            instance: r.instance,
            outcome: r.result.outcome.to_string(),
            makespan: m.map(|m| m.makespan),
            flowtime: m.map(|m| m.flowtime),
            maxdist: m.map(|m| m.maxdist),
            sumdist: m.map(|m| m.sumdist),
        }
    }
}

/// Runs every (map, algorithm, n, instance) combination of `spec` on a pool
/// of `jobs` threads. Results come back sorted by map, algorithm, n and
/// instance regardless of scheduling.
pub fn bench_runs(spec: &BenchSpec, jobs: usize) -> Result<Vec<BenchRun>> {
    spec.validate()?;
    let max_n = *spec.agents.iter().max().expect("validated");
    let mut tasks = Vec::new();
    for path in &spec.maps {
        let map = Arc::new(read_map(path)?);
        let name = map_stem(path);
        let instances = generate_instances(&map, &path.display().to_string(), spec.instances, max_n, spec.seed, spec.config.r_safe)
            .with_context(|| format!("generating scenarios on {}", path.display()))?;
        let instances = Arc::new(instances);
        for &algorithm in &spec.algorithms {
            for &n in &spec.agents {
                for k in 0..spec.instances {
                    tasks.push((name.clone(), Arc::clone(&map), Arc::clone(&instances), algorithm, n, k));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let mut runs: Vec<BenchRun> = pool.install(|| {
        tasks
            .into_par_iter()
            .map(|(name, map, instances, algorithm, n, k)| -> Result<BenchRun> {
                let instance = instances[k].truncated(n)?;
                let config = RunConfig { algorithm, ..spec.config.clone() };
                let started = Instant::now();
                let result = run_detailed(&instance, &map, &config, false)?.result;
                Ok(BenchRun {
                    map: name,
                    algorithm,
                    n,
                    instance: k,
                    result,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    runs.sort_by(|a, b| (&a.map, a.algorithm, a.n, a.instance).cmp(&(&b.map, b.algorithm, b.n, b.instance)));
    Ok(runs)
}

/// Per (map, algorithm, n) aggregate. The metric sums cover only instances
/// every algorithm in the sweep solved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub map: String,
    pub algorithm: String,
    pub n: usize,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: String,
    pub common_solved: usize,
    pub makespan: u64,
    pub flowtime: u64,
    pub maxdist: f64,
    pub sumdist: f64,
}

pub fn summarize(runs: &[BenchRun]) -> Vec<SummaryRow> {
    type Group = (String, usize);
    let algorithms: BTreeSet<Algorithm> = runs.iter().map(|r| r.algorithm).collect();
    let mut solved_by: BTreeMap<(Group, usize), BTreeSet<Algorithm>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.result.outcome == Outcome::Success) {
        solved_by.entry(((r.map.clone(), r.n), r.instance)).or_default().insert(r.algorithm);
    }
    let common = |r: &BenchRun| solved_by.get(&((r.map.clone(), r.n), r.instance)).is_some_and(|s| *s == algorithms);

    let mut groups: BTreeMap<(String, Algorithm, usize), Vec<&BenchRun>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.map.clone(), r.algorithm, r.n)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((map, algorithm, n), rs)| {
            let successes = rs.iter().filter(|r| r.result.outcome == Outcome::Success).count();
            let shared: Vec<Metrics> = rs.iter().filter(|r| common(r)).filter_map(|r| r.result.metrics).collect();
            SummaryRow {
                map,
                algorithm: algorithm.to_string(),
                n,
                runs: rs.len(),
                successes,
                success_rate: format!("{:.3}", successes as f64 / rs.len() as f64),
                common_solved: shared.len(),
                makespan: shared.iter().map(|m| m.makespan).sum(),
                flowtime: shared.iter().map(|m| m.flowtime).sum(),
                maxdist: shared.iter().map(|m| m.maxdist).sum(),
                sumdist: shared.iter().map(|m| m.sumdist).sum(),
            }
        })
        .collect()
}

/// Runs the sweep, writes one CSV row per run to `out` and the summary next
/// to it (`<out stem>-summary.csv`). Returns the summary.
pub fn cmd_bench(spec_path: &Path, out: &Path, jobs: usize, timing: bool) -> Result<Vec<SummaryRow>> {
    let spec = BenchSpec::read(spec_path)?;
    let runs = bench_runs(&spec, jobs)?;
    write_rows(&runs, out, timing)?;
    let summary = summarize(&runs);
    let summary_path = summary_path(out);
    let mut w = csv::Writer::from_path(&summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(summary)
}

pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "bench".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}-summary.csv"))
}

fn write_rows(runs: &[BenchRun], out: &Path, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    if timing {
        w.write_record([
            "map", "algorithm", "n", "instance", "outcome", "makespan", "flowtime", "maxdist", "sumdist", "wall_ms",
        ])?;
        for r in runs {
            let row = ResultRow::from(r);
            w.serialize((
                &row.map,
                &row.algorithm,
                row.n,
                row.instance,
                &row.outcome,
                row.makespan,
                row.flowtime,
                row.maxdist,
                row.sumdist,
                format!("{:.3}", r.wall_ms),
            ))?;
        }
    } else {
        for r in runs {
            w.serialize(ResultRow::from(r))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn print_summary(summary: &[SummaryRow], mut out: impl Write) -> Result<()> {
    writeln!(
        out,
        "{:<20} {:<9} {:>4} {:>7} {:>7} {:>9} {:>10} {:>9} {:>10}",
        "map", "algorithm", "n", "success", "common", "makespan", "flowtime", "maxdist", "sumdist"
    )?;
    for s in summary {
        writeln!(
            out,
            "{:<20} {:<9} {:>4} {:>7} {:>7} {:>9} {:>10} {:>9.1} {:>10.1}",
            s.map, s.algorithm, s.n, s.success_rate, s.common_solved, s.makespan, s.flowtime, s.maxdist, s.sumdist
        )?;
    }
    Ok(())
}

/// Exit status for a finished run: 0 on success, 2 on a failed outcome.
pub fn exit_code(result: &RunResult) -> i32 {
    if result.outcome == Outcome::Success {
        0
    } else {
        2
    }
}

pub fn parse_algorithm(s: &str) -> Result<Algorithm> {
    match s.parse() {
        Ok(a) => Ok(a),
        Err(e) => bail!(e),
    }
}
