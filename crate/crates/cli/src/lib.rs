//! `exosim` command-line front end.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use exosim_core::actuation::{CouplingSpec, MagnetChoice};
use exosim_core::analysis::{analyze_with, batch_report, AnalysisReport};
use exosim_core::hand::{Digit, JointId, JointKind};
use exosim_core::spasticity::SubjectProfile;
use exosim_core::tendon::NetworkConfig;
use exosim_core::trace::{fixed6, parse_csv, write_csv, TraceMetadata, TraceRecord};
use exosim_core::trial::{is_functional_extension, pose_response, run_trial, TrialTrace};

use config::{ConfigFile, Resolved};
use output::{Provenance, Staged, TOOL, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "exosim", version, about = "Exotendon hand orthosis simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Config file. A preset name (`extension`, `pinch`) selects the tendon
    /// configuration instead when no such file exists.
    #[arg(long, global = true, env = "EXOSIM_CONFIG")]
    pub config: Option<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "exosim-out")]
    pub out: PathBuf,

    /// Seed, or an inclusive range `a..b` for reproduce.
    #[arg(long, global = true, default_value = "0", value_parser = parse_seeds)]
    pub seed: Seeds,

    /// Subject ids: `S1..S5`, `S1,S3`, or `all`.
    #[arg(long, global = true)]
    pub subjects: Option<String>,

    #[arg(long, global = true)]
    pub trials: Option<u32>,

    #[arg(long, global = true, value_parser = ["standard", "strong"])]
    pub magnet: Option<String>,

    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,

    #[arg(long, global = true, value_parser = ["extension", "pinch"])]
    pub tendon_config: Option<String>,

    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_parser = parse_kv)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate trials and write trace CSVs with metadata sidecars.
    Simulate,
    /// Analyze trace CSVs (files or directories).
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Solve joint depth and subject stiffness; write the derived config.
    Calibrate,
    /// Regenerate the reference trial set and check it.
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub first: u64,
    pub last: u64,
}

impl Seeds {
    pub fn single(self) -> Option<u64> {
        (self.first == self.last).then_some(self.first)
    }

    pub fn iter(self) -> impl Iterator<Item = u64> {
        self.first..=self.last
    }

    fn label(self) -> String {
        match self.single() {
            Some(s) => s.to_string(),
            None => format!("{}..{}", self.first, self.last),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |v: &str| {
        v.trim()
            .parse::<u64>()
            .map_err(|_| format!("bad seed '{v}'"))
    };
    let (first, last) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => (num(s)?, num(s)?),
    };
    if last < first {
        return Err(format!("empty seed range {s}"));
    }
    Ok(Seeds { first, last })
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

/// Per-trial noise seed from the run seed, the subject's position in the bank
/// and the 1-based trial index.
pub fn trial_seed(seed: u64, subject_index: usize, trial: u32) -> u64 {
    splitmix64(splitmix64(seed) ^ (((subject_index as u64) << 32) | trial as u64))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let file = load_config(cli)?;
    match &cli.command {
        Command::Simulate => simulate(cli, &file),
        Command::Analyze { inputs } => analyze_cmd(cli, &file, inputs),
        Command::Calibrate => calibrate(cli, &file),
        Command::Reproduce => reproduce(cli, &file),
    }
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let mut overrides = cli.set.clone();
    let mut path = None;
    if let Some(c) = &cli.config {
        let p = PathBuf::from(c);
        if !p.exists() && (c == "extension" || c == "pinch") {
            overrides.insert(0, ("network.preset".into(), c.clone()));
        } else {
            path = Some(p);
        }
    }
    if let Some(t) = &cli.tendon_config {
        overrides.push(("network.preset".into(), t.clone()));
    }
    if let Some(m) = &cli.magnet {
        overrides.push(("coupling.magnet".into(), m.clone()));
    }
    if let Some(s) = cli.noise_sigma {
        overrides.push(("trial.noise_sigma_n".into(), format!("{s:?}")));
    }
    if let Some(n) = cli.trials {
        overrides.push(("trial.trials".into(), n.to_string()));
    }
    ConfigFile::from_path(path.as_deref(), &overrides)
}

/// Resolves `S1..S5`, `S1,S3` or `all` to bank positions.
pub fn select_subjects(
    resolved: &Resolved,
    spec: Option<&str>,
) -> Result<Vec<(usize, SubjectProfile)>> {
    let ids = resolved.bank.ids();
    let wanted: Vec<String> = match spec.map(str::trim) {
        None | Some("all") => ids.iter().map(|s| s.to_string()).collect(),
        Some(spec) => {
            let mut out = Vec::new();
            for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                match part.split_once("..") {
                    Some((a, b)) => out.extend(expand_range(a, b)?),
                    None => out.push(part.to_string()),
                }
            }
            out
        }
    };
    if wanted.is_empty() {
        bail!("no subjects selected");
    }
    wanted
        .iter()
        .map(|id| {
            ids.iter()
                .position(|k| k == id)
                .map(|i| (i, resolved.bank.profiles()[i].clone()))
                .ok_or_else(|| anyhow!("unknown subject '{id}' (known: {})", ids.join(", ")))
        })
        .collect()
}

fn expand_range(a: &str, b: &str) -> Result<Vec<String>> {
    let split = |s: &str| {
        let i = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (p, n) = s.split_at(i);
        n.parse::<u32>().map(|n| (p.to_string(), n))
    };
    match (split(a.trim()), split(b.trim())) {
        (Ok((pa, na)), Ok((pb, nb))) if pa == pb && na <= nb => {
            Ok((na..=nb).map(|n| format!("{pa}{n}")).collect())
        }
        _ => bail!("bad subject range '{a}..{b}'"),
    }
}

struct Simulated {
    subject: SubjectProfile,
    trial: u32,
    trace: TrialTrace,
    record: TraceRecord,
}

fn simulate_set(
    resolved: &Resolved,
    subjects: &[(usize, SubjectProfile)],
    seed: u64,
    prov: &Provenance,
) -> Result<Vec<Simulated>> {
    let mut out = Vec::new();
    for (index, subject) in subjects {
        let cfg = resolved.trial_config(subject);
        for trial in 1..=resolved.file.trial.trials {
            let trace = run_trial(&cfg, trial_seed(seed, *index, trial))
                .with_context(|| format!("subject {}", subject.id))?;
            let mut record = trace.to_record();
            record.meta.tool = Some(TOOL.into());
            record.meta.version = Some(VERSION.into());
            record.meta.seed = Some(seed);
            record.meta.config_hash = Some(prov.config_hash.clone());
            record.meta.trial = Some(trial);
            record.meta.noise_sigma_n = Some(cfg.noise_sigma);
            out.push(Simulated {
                subject: subject.clone(),
                trial,
                trace,
                record,
            });
        }
    }
    Ok(out)
}

fn stage_trace(staged: &mut Staged, dir: &Path, sim: &Simulated, prov: &Provenance) -> String {
    let stem = format!("{}_trial{}", sim.subject.id, sim.trial);
    let header = prov.header();
    staged.add(
        dir.join(format!("{stem}.csv")),
        write_csv(&sim.record.points, Some(&header)),
    );
    staged.add(
        dir.join(format!("{stem}.meta.toml")),
        sim.record.meta.to_toml(Some(&header)),
    );
    stem
}

fn simulate(cli: &Cli, file: &ConfigFile) -> Result<i32> {
    let seed = cli
        .seed
        .single()
        .ok_or_else(|| anyhow!("simulate takes a single --seed"))?;
    let resolved = file.resolve()?;
    let subjects = select_subjects(&resolved, cli.subjects.as_deref())?;
    let prov = Provenance {
        seed: seed.to_string(),
        config_hash: resolved.hash.clone(),
    };
    let sims = simulate_set(&resolved, &subjects, seed, &prov)?;
    let mut staged = Staged::default();
    for sim in &sims {
        let stem = stage_trace(&mut staged, &cli.out, sim, &prov);
        println!(
            "{stem}: peak {:.3} N, breakaway {}, functional extension {}",
            sim.trace.peak_measured_force(),
            sim.trace
                .breakaway_time
                .map_or("none".to_string(), |t| format!("at {t:.2} s")),
            if sim.trace.functional_extension {
                "yes"
            } else {
                "no"
            },
        );
    }
    let n = staged.len();
    staged.commit()?;
    println!("wrote {n} files to {}", cli.out.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    source: String,
    warnings: Vec<String>,
    report: &'a AnalysisReport,
}

fn plot_csv(report: &AnalysisReport, header: &str) -> Option<String> {
    let (slope, intercept) = (report.slope?, report.intercept?);
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("position_frac,force_frac,fitted\n");
    for (x, y) in &report.normalized_series {
        let _ = writeln!(
            out,
            "{},{},{}",
            fixed6(*x),
            fixed6(*y),
            fixed6(intercept + slope * x)
        );
    }
    Some(out)
}

fn stage_report(
    staged: &mut Staged,
    dir: &Path,
    stem: &str,
    source: &str,
    warnings: Vec<String>,
    report: &AnalysisReport,
    prov: &Provenance,
) -> Result<()> {
    let header = prov.header();
    let doc = ReportDoc {
        source: source.to_string(),
        warnings,
        report,
    };
    let mut text = prov.comment();
    text.push_str(&toml::to_string(&doc).context("serializing report")?);
    staged.add(dir.join(format!("{stem}.report.toml")), text);
    if let Some(plot) = plot_csv(report, &header) {
        staged.add(dir.join(format!("{stem}.plot.csv")), plot);
    }
    Ok(())
}

fn stage_summary(
    staged: &mut Staged,
    dir: &Path,
    reports: &[AnalysisReport],
    prov: &Provenance,
) -> Result<String> {
    let summary = batch_report(reports);
    let table = summary.render();
    staged.add(
        dir.join("summary.txt"),
        format!("{}{table}", prov.comment()),
    );
    let mut text = prov.comment();
    text.push_str(&toml::to_string(&summary).context("serializing summary")?);
    staged.add(dir.join("summary.toml"), text);
    Ok(table)
}

fn collect_csvs(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let is_trace = |p: &Path| {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.ends_with(".csv") && !name.ends_with(".plot.csv")
    };
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files = Vec::new();
            walk(input, &mut files)?;
            for f in files.into_iter().filter(|f| is_trace(f)) {
                let rel = f.strip_prefix(input).unwrap_or(&f).to_path_buf();
                out.push((f, rel));
            }
        } else if input.is_file() {
            let name = input.file_name().map(PathBuf::from).unwrap_or_default();
            out.push((input.clone(), name));
        } else {
            bail!("input {} does not exist", input.display());
        }
    }
    Ok(out)
}

/// `S1_trial2` -> (S1, 2)
fn subject_from_stem(stem: &str) -> (String, Option<u32>) {
    match stem.rsplit_once("_trial") {
        Some((s, t)) => (s.to_string(), t.parse().ok()),
        None => (stem.to_string(), None),
    }
}

fn analyze_cmd(cli: &Cli, file: &ConfigFile, inputs: &[PathBuf]) -> Result<i32> {
    let prov = Provenance {
        seed: cli.seed.label(),
        config_hash: file.hash(),
    };
    let threshold = file.trial.trim_threshold_n;
    let csvs = collect_csvs(inputs)?;
    if csvs.is_empty() {
        bail!("no trace CSVs found");
    }

    let mut staged = Staged::default();
    let mut reports = Vec::new();
    let mut failed = 0;
    for (path, rel) in &csvs {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed = match parse_csv(&text) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        let mut warnings = Vec::new();
        for w in &parsed.warnings {
            let msg = format!("line {}: {} ('{}')", w.line, w.reason, w.content);
            eprintln!("warning: {}: {msg}", path.display());
            warnings.push(msg);
        }
        let stem = rel
            .file_name()
            .map(|n| n.to_string_lossy().trim_end_matches(".csv").to_string())
            .unwrap_or_default();
        let sidecar = path.with_file_name(format!("{stem}.meta.toml"));
        let mut meta = if sidecar.is_file() {
            let t = std::fs::read_to_string(&sidecar)?;
            TraceMetadata::from_toml(&t).unwrap_or_else(|e| {
                eprintln!("warning: {}: {e}; ignoring metadata", sidecar.display());
                TraceMetadata::default()
            })
        } else {
            TraceMetadata::default()
        };
        let (subject, trial) = subject_from_stem(&stem);
        meta.subject.get_or_insert(subject);
        if meta.trial.is_none() {
            meta.trial = trial;
        }
        let record = TraceRecord {
            points: parsed.points,
            meta,
        };
        let report = analyze_with(&record, threshold);
        let out_dir = cli.out.join(rel.parent().unwrap_or(Path::new("")));
        stage_report(
            &mut staged,
            &out_dir,
            &stem,
            &path.display().to_string(),
            warnings,
            &report,
            &prov,
        )?;
        reports.push(report);
    }
    if reports.is_empty() {
        bail!("none of the {} inputs could be read", csvs.len());
    }
    reports.sort_by(|a, b| (&a.subject, a.trial).cmp(&(&b.subject, b.trial)));
    let table = stage_summary(&mut staged, &cli.out, &reports, &prov)?;
    staged.commit()?;
    print!("{table}");
    if failed > 0 {
        eprintln!("{failed} of {} inputs skipped", csvs.len());
    }
    Ok(EXIT_OK)
}

fn calibrate(cli: &Cli, file: &ConfigFile) -> Result<i32> {
    let mut unsolved = file.clone();
    unsolved.hand.center_depth_mm = None;
    let resolved = unsolved.resolve()?;
    let depth = resolved.depth();
    let excursion = resolved.index_excursion()?;

    let mut solved = file.clone();
    solved.hand.center_depth_mm = Some(depth);
    for entry in &mut solved.subjects {
        let p = resolved
            .bank
            .get(&entry.id)
            .expect("resolved from the same list");
        entry.stiffness_n_per_mm = Some(p.stiffness);
    }

    let prov = Provenance {
        seed: cli.seed.label(),
        config_hash: file.hash(),
    };
    let mut notes = String::new();
    let _ = writeln!(
        notes,
        "excursion_target_mm: {}",
        file.hand.excursion_target_mm
    );
    let _ = writeln!(notes, "center_depth_mm: {depth:.6}");
    let _ = writeln!(notes, "index_excursion_mm: {excursion:.6}");
    let travel = file.actuator.stroke - file.network.branch_slack_mm;
    for (entry, p) in file.subjects.iter().zip(resolved.bank.profiles()) {
        let source = match (entry.stiffness_n_per_mm, entry.calibration_peak_n) {
            (Some(_), _) => "given".to_string(),
            (None, Some(peak)) => format!("{peak} N over {travel} mm"),
            (None, None) => unreachable!("rejected by resolve"),
        };
        let _ = writeln!(
            notes,
            "{}: stiffness {:.6} N/mm ({source})",
            p.id, p.stiffness
        );
    }
    let mut text = prov.comment();
    for line in notes.lines() {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str(&solved.to_toml());

    let path = cli.out.join("calibrated.toml");
    output::write_atomic(&path, &text)?;
    print!("{notes}");
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seeds: Vec<u64>,
    config_hash: &'a str,
    passed: bool,
    checks: &'a [Check],
}

fn check(name: impl Into<String>, seed: Option<u64>, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        seed,
        passed,
        detail,
    }
}

fn secs(t: Option<f64>) -> String {
    t.map_or_else(|| "never".to_string(), |t| format!("{t:.2} s"))
}

fn first_functional_time(trace: &TrialTrace, threshold: f64) -> Option<f64> {
    trace
        .samples
        .iter()
        .find(|s| s.engaged && is_functional_extension(&s.pose, threshold))
        .map(|s| s.t)
}

fn seed_checks(
    seed: u64,
    resolved: &Resolved,
    sims: &[Simulated],
    reports: &[AnalysisReport],
) -> Vec<Check> {
    let mut out = Vec::new();
    let s = Some(seed);
    for p in resolved.bank.profiles() {
        let peaks: Vec<f64> = sims
            .iter()
            .zip(reports)
            .filter(|(sim, _)| sim.subject.id == p.id)
            .map(|(_, r)| r.peak_force)
            .collect();
        let ok = !peaks.is_empty() && peaks.iter().all(|f| p.peak_band.contains(*f));
        let shown: Vec<String> = peaks.iter().map(|f| format!("{f:.3}")).collect();
        out.push(check(
            format!("peak_band_{}", p.id),
            s,
            ok,
            format!("peak [{}] N, band {}", shown.join(", "), p.peak_band),
        ));
    }

    let summary = batch_report(reports);
    let n = summary.subjects.len();
    out.push(check(
        "functional_extension_count",
        s,
        summary.subjects_functional() == 4 && n == 5,
        format!("{}/{n} subjects", summary.subjects_functional()),
    ));
    out.push(check(
        "breakaway_count",
        s,
        summary.subjects_breakaway() == 2 && n == 5,
        format!("{}/{n} subjects", summary.subjects_breakaway()),
    ));

    let threshold = resolved.file.trial.functional_threshold_deg;
    let of = |id: &str| {
        sims.iter()
            .filter(|sim| sim.subject.id == id)
            .collect::<Vec<_>>()
    };
    let s5 = of("S5");
    let s5_ok = !s5.is_empty()
        && s5.iter().all(|sim| {
            match (
                first_functional_time(&sim.trace, threshold),
                sim.trace.breakaway_time,
            ) {
                (Some(f), Some(b)) => f < b,
                _ => false,
            }
        });
    let s5_detail = s5
        .iter()
        .map(|sim| {
            format!(
                "trial {}: extension at {}, breakaway at {}",
                sim.trial,
                secs(first_functional_time(&sim.trace, threshold)),
                secs(sim.trace.breakaway_time)
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push(check("S5_extension_before_breakaway", s, s5_ok, s5_detail));

    let s4 = of("S4");
    let s4_ok = !s4.is_empty()
        && s4.iter().all(|sim| {
            sim.trace.breakaway()
                && !sim.trace.functional_extension
                && !sim.trace.samples.last().is_some_and(|x| x.engaged)
        });
    let s4_detail = s4
        .iter()
        .map(|sim| {
            format!(
                "trial {}: breakaway at {}, functional {}",
                sim.trial,
                secs(sim.trace.breakaway_time),
                sim.trace.functional_extension
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push(check("S4_breakaway_without_extension", s, s4_ok, s4_detail));

    let rs: Vec<Option<f64>> = reports.iter().map(|r| r.correlation).collect();
    let ok = rs
        .iter()
        .all(|r| r.is_some_and(|r| (0.97..=1.0).contains(&r)));
    let vals: Vec<f64> = rs.iter().flatten().copied().collect();
    out.push(check(
        "correlation_range",
        s,
        ok,
        format!(
            "r in [{:.5}, {:.5}] over {} trials ({} undefined)",
            vals.iter().copied().fold(f64::INFINITY, f64::min),
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rs.len(),
            rs.len() - vals.len()
        ),
    ));

    // same subject and noise draw at both pull forces
    if let Some((index, s4)) = resolved
        .bank
        .profiles()
        .iter()
        .enumerate()
        .find(|(_, p)| p.id == "S4")
    {
        let times: Vec<Option<f64>> = [MagnetChoice::Standard, MagnetChoice::Strong]
            .into_iter()
            .map(|m| {
                let mut cfg = resolved.trial_config(s4);
                cfg.coupling = CouplingSpec {
                    breakaway_force: m.pull_force(),
                };
                run_trial(&cfg, trial_seed(seed, index, 1))
                    .ok()
                    .and_then(|t| t.breakaway_time)
            })
            .collect();
        let ok = matches!((times[0], times[1]), (Some(a), Some(b)) if a < b);
        out.push(check(
            "magnet_sweep_S4",
            s,
            ok,
            format!(
                "breakaway at {} (34 N) vs {} (41 N)",
                secs(times[0]),
                secs(times[1])
            ),
        ));
    }
    out
}

/// Checks that do not depend on the seed.
fn model_checks(resolved: &Resolved) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let target = resolved.file.hand.excursion_target_mm;
    let excursion = resolved.index_excursion()?;
    out.push(check(
        "excursion_calibration",
        None,
        (excursion - 57.0).abs() <= 0.01,
        format!(
            "index excursion {excursion:.6} mm at depth {:.6} mm (target {target} mm)",
            resolved.depth()
        ),
    ));

    let stroke = resolved.file.actuator.stroke;
    let steps = 200;
    let pinch = resolved.with_network(NetworkConfig::PinchPattern);
    let extension = resolved.with_network(NetworkConfig::Extension);
    let mut direction_violations = Vec::new();
    let mut abduction_violations = Vec::new();
    for p in resolved.bank.profiles() {
        let mut prev = p.rest_pose.clone();
        for i in 0..=steps {
            let d = stroke * i as f64 / steps as f64;
            let pose = pose_response(&pinch.hand, &pinch.network, &p.rest_pose, d)?;
            for digit in Digit::FINGERS {
                let get = |q: &exosim_core::hand::HandPose, k| {
                    q.get(JointId::new(digit, k)).unwrap_or(0.0)
                };
                if get(&pose, JointKind::Mcp) < get(&prev, JointKind::Mcp)
                    || get(&pose, JointKind::Pip) > get(&prev, JointKind::Pip)
                    || get(&pose, JointKind::Dip) > get(&prev, JointKind::Dip)
                {
                    direction_violations.push(format!("{} {digit} at {d} mm", p.id));
                }
            }
            prev = pose;

            let ext = pose_response(&extension.hand, &extension.network, &p.rest_pose, d)?;
            for digit in Digit::ALL {
                let id = JointId::new(digit, JointKind::Abduction);
                if ext.get(id) != p.rest_pose.get(id) {
                    abduction_violations.push(format!("{} {digit} at {d} mm", p.id));
                }
            }
        }
    }
    let summarize = |v: &[String]| {
        if v.is_empty() {
            format!(
                "{} subjects x {} displacements",
                resolved.bank.profiles().len(),
                steps + 1
            )
        } else {
            format!("{} violations, first: {}", v.len(), v[0])
        }
    };
    out.push(check(
        "pinch_directions",
        None,
        direction_violations.is_empty(),
        summarize(&direction_violations),
    ));
    out.push(check(
        "extension_abduction_neutral",
        None,
        abduction_violations.is_empty(),
        summarize(&abduction_violations),
    ));
    Ok(out)
}

fn reproduce(cli: &Cli, file: &ConfigFile) -> Result<i32> {
    let resolved = file.resolve()?.with_network(NetworkConfig::Extension);
    let subjects = select_subjects(&resolved, cli.subjects.as_deref())?;
    let mut staged = Staged::default();
    let mut checks = model_checks(&resolved)?;
    let run_prov = Provenance {
        seed: cli.seed.label(),
        config_hash: resolved.hash.clone(),
    };
    staged.add(
        cli.out.join("config.toml"),
        format!("{}{}", run_prov.comment(), file.to_toml()),
    );

    for seed in cli.seed.iter() {
        let prov = Provenance {
            seed: seed.to_string(),
            config_hash: resolved.hash.clone(),
        };
        let dir = cli.out.join(format!("seed-{seed}"));
        let sims = simulate_set(&resolved, &subjects, seed, &prov)?;
        let mut reports = Vec::new();
        for sim in &sims {
            let stem = stage_trace(&mut staged, &dir.join("traces"), sim, &prov);
            let report = analyze_with(&sim.record, file.trial.trim_threshold_n);
            stage_report(
                &mut staged,
                &dir.join("reports"),
                &stem,
                &format!("traces/{stem}.csv"),
                Vec::new(),
                &report,
                &prov,
            )?;
            reports.push(report);
        }
        stage_summary(&mut staged, &dir, &reports, &prov)?;
        checks.extend(seed_checks(seed, &resolved, &sims, &reports));
    }

    let passed = checks.iter().all(|c| c.passed);
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: "reproduce",
        seeds: cli.seed.iter().collect(),
        config_hash: &resolved.hash,
        passed,
        checks: &checks,
    };
    let mut text = run_prov.comment();
    text.push_str(&toml::to_string(&manifest).context("serializing manifest")?);
    staged.add(cli.out.join("manifest.toml"), text);
    staged.commit()?;

    for c in &checks {
        let seed = c.seed.map_or(String::new(), |s| format!(" [seed {s}]"));
        println!(
            "{} {}{seed}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        return Ok(EXIT_CHECK_FAILED);
    }
    println!(
        "all {} checks passed; manifest at {}",
        checks.len(),
        cli.out.join("manifest.toml").display()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("7").unwrap().single(), Some(7));
        let r = parse_seeds("1..20").unwrap();
        assert_eq!(r.iter().count(), 20);
        assert_eq!(r.label(), "1..20");
        assert_eq!(
            parse_seeds("3..=4").unwrap().iter().collect::<Vec<_>>(),
            [3, 4]
        );
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn subject_selection() {
        let r = ConfigFile::default().resolve().unwrap();
        let ids = |s| {
            select_subjects(&r, s)
                .unwrap()
                .into_iter()
                .map(|(i, p)| (i, p.id))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(None).len(), 5);
        assert_eq!(
            ids(Some("S2..S4")),
            [(1, "S2".into()), (2, "S3".into()), (3, "S4".into())]
        );
        assert_eq!(ids(Some("S5,S1")), [(4, "S5".into()), (0, "S1".into())]);
        assert!(select_subjects(&r, Some("S9")).is_err());
        assert!(select_subjects(&r, Some("S3..S1")).is_err());
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..4 {
            for i in 0..5 {
                for t in 1..4 {
                    assert!(seen.insert(trial_seed(s, i, t)));
                }
            }
        }
    }

    #[test]
    fn stem_parsing() {
        assert_eq!(subject_from_stem("S1_trial2"), ("S1".into(), Some(2)));
        assert_eq!(subject_from_stem("bench_log"), ("bench_log".into(), None));
    }
}
