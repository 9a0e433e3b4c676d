//! Command-line orchestration of the driveval pipeline: town export, data
//! collection, training, offline/online evaluation, full studies, and
//! correlation reports. Every stage is deterministic in its seeds; re-running
//! a command on identical inputs produces byte-identical artifacts.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driveval::analysis::{
    correlate_study, emit_scatter, AxisKey, FilterSpec, PairSpec, StudyRecord,
};
use driveval::dataset::{collect, read_dataset, write_dataset, Cameras, Condition};
use driveval::offline::evaluate_offline;
use driveval::online::{
    aggregate_online, run_episode, standard_suite, suite_episodes, SuiteSpec, SUITE_FORMAT,
};
use driveval::policy::{ExpertPolicy, Policy};
use driveval::study::{condition_by_name, default_config, records_from_jsonl, records_to_jsonl, run_study, StudyConfig};
use driveval::trainer::{fit_regressor, DataDistribution, FeatureDepth, Loss, RegressorPolicy, TrainConfig};
use driveval::world::{build_town, TownId};
use driveval::OfflineParams;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "driveval",
    about = "Offline-vs-online driving-policy evaluation workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output path; relative paths resolve under $DRIVEVAL_OUT when set.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Export a built-in town map as JSON.
    Town {
        /// Town id: A or B.
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Collect an expert-driving dataset (CSV + manifest sidecar).
    Collect {
        #[arg(long)]
        town: String,
        #[arg(long)]
        hours: f64,
        /// 1cam or 3cam.
        #[arg(long, default_value = "3cam")]
        cameras: String,
        /// Inject steering noise in 10% of episodes.
        #[arg(long, default_value_t = false)]
        noise: bool,
        /// Condition profile: clear or softshift.
        #[arg(long, default_value = "clear")]
        condition: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fit a branched steering regressor on a collected dataset.
    Train {
        /// Training dataset CSV (from `collect`).
        #[arg(long)]
        data: PathBuf,
        /// l2 or l1.
        #[arg(long, default_value = "l2")]
        loss: String,
        #[arg(long, default_value_t = 1e-3)]
        ridge: f64,
        #[arg(long, default_value_t = false)]
        balancing: bool,
        /// shallow, standard, or deep.
        #[arg(long, default_value = "standard")]
        depth: String,
        /// Hours of footage to use (prefix of the dataset).
        #[arg(long)]
        hours: Option<f64>,
        /// Additive feature-noise augmentation.
        #[arg(long, default_value_t = false)]
        feature_noise: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Score a policy on a validation dataset with all six offline metrics.
    EvalOffline {
        /// `expert` or a path to a trained policy JSON.
        #[arg(long)]
        policy: String,
        /// Validation dataset CSV.
        #[arg(long)]
        data: PathBuf,
        /// Cumulative window T.
        #[arg(long, default_value_t = 64)]
        window: usize,
        /// Quantization threshold.
        #[arg(long, default_value_t = 0.03)]
        sigma: f64,
        /// Relative-error threshold.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run a policy over a goal-directed navigation suite.
    EvalOnline {
        /// `expert` or a path to a trained policy JSON.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        town: String,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Condition profile: clear or softshift.
        #[arg(long, default_value = "clear")]
        condition: String,
        /// Read trials from a suite file instead of drawing them.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Also write the drawn suite definition here.
        #[arg(long)]
        emit_suite: Option<PathBuf>,
        /// Also write per-episode results as JSON lines.
        #[arg(long)]
        results: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run the full model-family study and write records as JSON lines.
    Study {
        /// Study configuration TOML; the built-in 45-model family when
        /// omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads for the study fan-out (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Write the built-in configuration to this path and exit.
        #[arg(long)]
        write_default_config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson-correlate offline and online metrics over study records.
    Correlate {
        /// Study records JSONL (from `study`).
        #[arg(long = "in")]
        input: PathBuf,
        /// `0.5` keeps the best half per metric; `mse:0.5` filters every
        /// pair by one named metric.
        #[arg(long)]
        filter_best: Option<String>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Regenerate scatter CSV/SVG artifacts from a study file.
    Report {
        /// Study records JSONL (from `study`).
        #[arg(long = "in")]
        input: PathBuf,
        /// Keep fraction for the best-model filter on offline scatters.
        #[arg(long, default_value_t = 0.5)]
        filter_best: f64,
        /// Output directory for the scatter files.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

/// Resolve an output path against $DRIVEVAL_OUT for relative paths.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("DRIVEVAL_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// FNV-1a over a serialized parameter set; stamped on artifacts.
fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("parameters serialize");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn parse_town(s: &str) -> Result<TownId> {
    TownId::parse(s).with_context(|| format!("unknown town `{s}` (expected A or B)"))
}

fn load_policy(spec: &str) -> Result<Box<dyn Policy>> {
    if spec == "expert" {
        return Ok(Box::new(ExpertPolicy));
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading policy {spec}"))?;
    let policy = RegressorPolicy::from_json(&text).with_context(|| format!("parsing policy {spec}"))?;
    Ok(Box::new(policy))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Town { id, seed, out } => {
            let town = parse_town(&id)?;
            let map = build_town(town, seed);
            let path = resolve_out(&out.out);
            write_text(&path, &map.to_json())?;
            println!("wrote town {town} to {}", path.display());
        }

        Command::Collect { town, hours, cameras, noise, condition, seed, out } => {
            #[derive(Serialize)]
            struct Params<'a> {
                town: &'a str,
                hours: f64,
                cameras: &'a str,
                noise: bool,
                condition: &'a str,
                seed: u64,
            }
            let town_id = parse_town(&town)?;
            let cams = Cameras::parse(&cameras)
                .with_context(|| format!("unknown camera setup `{cameras}`"))?;
            let cond: Condition = condition_by_name(&condition)?;
            let map = build_town(town_id, seed);
            let mut dataset = collect(&map, hours, cams, noise, &cond, seed);
            dataset.manifest.config_hash = Some(config_hash(&Params {
                town: &town,
                hours,
                cameras: &cameras,
                noise,
                condition: &condition,
                seed,
            }));
            let path = resolve_out(&out.out);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            write_dataset(&dataset, &path)?;
            println!("wrote {} samples to {}", dataset.len(), path.display());
        }

        Command::Train { data, loss, ridge, balancing, depth, hours, feature_noise, seed, out } => {
            let dataset = read_dataset(&data)?;
            let loss = Loss::parse(&loss).with_context(|| format!("unknown loss `{loss}`"))?;
            let feature_depth =
                FeatureDepth::parse(&depth).with_context(|| format!("unknown depth `{depth}`"))?;
            let data_hours = hours.unwrap_or(dataset.manifest.hours);
            if data_hours > dataset.manifest.hours {
                bail!(
                    "requested {data_hours} h but the dataset holds {} h",
                    dataset.manifest.hours
                );
            }
            let distribution = match (dataset.manifest.cameras, dataset.manifest.noise) {
                (Cameras::One, false) => DataDistribution::OneCam,
                (Cameras::One, true) => DataDistribution::OneCamNoise,
                (Cameras::Three, false) => DataDistribution::ThreeCam,
                (Cameras::Three, true) => DataDistribution::ThreeCamNoise,
            };
            let config = TrainConfig {
                loss,
                ridge,
                balancing,
                feature_depth,
                data_hours,
                data_distribution: distribution,
                feature_noise,
                seed,
            };
            let view = dataset.prefix_hours(data_hours);
            let policy = fit_regressor(&view, &config)?;

            #[derive(Serialize)]
            struct TrainArtifact<'a> {
                config_hash: String,
                config: &'a TrainConfig,
                #[serde(flatten)]
                policy: serde_json::Value,
            }
            let artifact = TrainArtifact {
                config_hash: config_hash(&config),
                config: &config,
                policy: serde_json::from_str(&policy.to_json())?,
            };
            let path = resolve_out(&out.out);
            write_text(&path, &serde_json::to_string_pretty(&artifact)?)?;
            println!("trained on {} samples, wrote {}", view.len(), path.display());
        }

        Command::EvalOffline { policy, data, window, sigma, alpha, out } => {
            #[derive(Serialize)]
            struct Params<'a> {
                policy: &'a str,
                data: &'a Path,
                window: usize,
                sigma: f64,
                alpha: f64,
            }
            let p = load_policy(&policy)?;
            let dataset = read_dataset(&data)?;
            let params = OfflineParams { window, sigma, alpha };
            let report = evaluate_offline(p.as_ref(), &dataset, &params)?;
            #[derive(Serialize)]
            struct Artifact<'a> {
                format: &'static str,
                config_hash: String,
                policy: &'a str,
                report: &'a driveval::OfflineReport,
            }
            let artifact = Artifact {
                format: "driveval-offline-report/1",
                config_hash: config_hash(&Params {
                    policy: &policy,
                    data: &data,
                    window,
                    sigma,
                    alpha,
                }),
                policy: &policy,
                report: &report,
            };
            let path = resolve_out(&out.out);
            write_text(&path, &serde_json::to_string_pretty(&artifact)?)?;
            println!(
                "offline on {} samples: mse {:.6} mae {:.6} tre {:.4} -> {}",
                report.n,
                report.mse,
                report.mae,
                report.thresholded_relative_error,
                path.display()
            );
        }

        Command::EvalOnline {
            policy,
            town,
            trials,
            seed,
            condition,
            suite,
            emit_suite,
            results,
            out,
        } => {
            #[derive(Serialize)]
            struct Params<'a> {
                policy: &'a str,
                town: &'a str,
                trials: usize,
                seed: u64,
                condition: &'a str,
            }
            let town_id = parse_town(&town)?;
            let map = build_town(town_id, seed);
            let cond = condition_by_name(&condition)?;
            let p = load_policy(&policy)?;
            let suite_spec: SuiteSpec = match &suite {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading suite {}", path.display()))?;
                    let s: SuiteSpec = serde_json::from_str(&text)?;
                    if s.format != SUITE_FORMAT {
                        bail!("suite format `{}`, expected `{SUITE_FORMAT}`", s.format);
                    }
                    if s.town != town {
                        bail!("suite is for town {}, not {town}", s.town);
                    }
                    s
                }
                None => standard_suite(&map, trials, seed),
            };
            if let Some(path) = emit_suite {
                write_text(&resolve_out(&path), &serde_json::to_string_pretty(&suite_spec)?)?;
            }
            let episodes = suite_episodes(&map, &suite_spec, &cond);
            let episode_results: Vec<_> =
                episodes.iter().map(|spec| run_episode(&map, p.as_ref(), spec)).collect();
            if let Some(path) = results {
                let mut lines = String::new();
                for r in &episode_results {
                    lines.push_str(&serde_json::to_string(r)?);
                    lines.push('\n');
                }
                write_text(&resolve_out(&path), &lines)?;
            }
            let report = aggregate_online(&episode_results)?;
            #[derive(Serialize)]
            struct Artifact<'a> {
                format: &'static str,
                config_hash: String,
                policy: &'a str,
                town: &'a str,
                condition: &'a str,
                report: &'a driveval::online::OnlineReport,
            }
            let artifact = Artifact {
                format: "driveval-online-report/1",
                config_hash: config_hash(&Params {
                    policy: &policy,
                    town: &town,
                    trials,
                    seed,
                    condition: &condition,
                }),
                policy: &policy,
                town: &town,
                condition: &condition,
                report: &report,
            };
            let path = resolve_out(&out.out);
            write_text(&path, &serde_json::to_string_pretty(&artifact)?)?;
            println!(
                "online {town}: success {:.2} completion {:.2} km/infraction {:.2} -> {}",
                report.success_rate,
                report.avg_completion,
                report.km_per_infraction,
                path.display()
            );
        }

        Command::Study { config, jobs, write_default_config, out } => {
            if let Some(path) = write_default_config {
                let cfg = default_config();
                let text = toml::to_string_pretty(&cfg)?;
                write_text(&resolve_out(&path), &text)?;
                println!("wrote default study config to {}", path.display());
                return Ok(());
            }
            let out = out.context("--out is required to run a study")?;
            let cfg: StudyConfig = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    toml::from_str(&text).context("parsing study config")?
                }
                None => default_config(),
            };
            if let Some(n) = jobs {
                rayon_pool(n)?;
            }
            let output = run_study(&cfg)?;
            let path = resolve_out(&out);
            write_text(&path, &records_to_jsonl(&output.records))?;
            let manifest_path = sibling(&path, "manifest.json");
            write_text(&manifest_path, &serde_json::to_string_pretty(&output.manifest)?)?;
            println!(
                "study: {} records -> {} (manifest {})",
                output.records.len(),
                path.display(),
                manifest_path.display()
            );
        }

        Command::Correlate { input, filter_best, out } => {
            let records = read_records(&input)?;
            let filter = match filter_best.as_deref() {
                None => None,
                Some(s) => Some(parse_filter(s)?),
            };
            let mut report = correlate_study(&records, filter)?;
            report.config_hash = Some(config_hash(&(&input, &filter_best)));
            let path = resolve_out(&out.out);
            write_text(&path, &serde_json::to_string_pretty(&report)?)?;
            println!(
                "correlations: {} offline-online rows, {} online pairs, {} warnings -> {}",
                report.rows.len(),
                report.online_pairs.len(),
                report.warnings.len(),
                path.display()
            );
        }

        Command::Report { input, filter_best, out_dir } => {
            let records = read_records(&input)?;
            let dir = resolve_out(&out_dir);
            std::fs::create_dir_all(&dir)?;
            let count = emit_report(&records, filter_best, &dir)?;
            println!("wrote {count} scatter artifacts to {}", dir.display());
        }
    }
    Ok(())
}

fn rayon_pool(n: usize) -> Result<()> {
    driveval::rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker pool")
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

fn read_records(path: &Path) -> Result<Vec<StudyRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading study records {}", path.display()))?;
    let records = records_from_jsonl(&text).context("parsing study records")?;
    if records.is_empty() {
        bail!("no study records in {}", path.display());
    }
    Ok(records)
}

/// `0.5` (respective metric) or `mse:0.5` (one named metric).
fn parse_filter(s: &str) -> Result<FilterSpec> {
    let (metric, frac) = match s.split_once(':') {
        Some((m, f)) => (Some(m.to_string()), f),
        None => (None, s),
    };
    let keep_fraction: f64 = frac.parse().with_context(|| format!("bad keep fraction `{frac}`"))?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        bail!("keep fraction must be in (0, 1], got {keep_fraction}");
    }
    Ok(FilterSpec { metric, keep_fraction })
}

/// The standard scatter set: success rate against steering MSE per
/// validation variant and against every offline metric on the basic 1cam
/// sets (best-filtered), plus the online-vs-online pairs (all models).
fn emit_report(records: &[StudyRecord], keep: f64, dir: &Path) -> Result<usize> {
    use driveval::analysis::filter_best;
    use driveval::offline::METRIC_IDS;

    let mut towns: Vec<String> = Vec::new();
    let mut variants: Vec<String> = Vec::new();
    for r in records {
        for t in r.online.keys() {
            if !towns.contains(t) {
                towns.push(t.clone());
            }
        }
        for v in r.offline.keys() {
            if !variants.contains(v) {
                variants.push(v.clone());
            }
        }
    }
    towns.sort();
    variants.sort();

    let mut count = 0;
    let sanitize = |s: &str| s.replace([':', '+'], "-");
    for town in &towns {
        // success vs mse across validation variants
        for variant in &variants {
            let kept = filter_best(records, "mse", variant, keep)?;
            let pair = PairSpec {
                x: AxisKey::Offline { metric: "mse".into(), variant: variant.clone() },
                y: AxisKey::Online { metric: "success_rate".into(), town: town.clone() },
            };
            let base = dir.join(format!(
                "scatter_success{town}_vs_mse_{}_best{}",
                sanitize(variant),
                (keep * 100.0) as u32
            ));
            emit_scatter(&kept, &pair, &base.with_extension("csv"), &base.with_extension("svg"))?;
            count += 2;
        }
        // success vs each offline metric on the town's basic 1cam set
        // (mse is already covered by the per-variant scatters above)
        let variant = format!("{town}:1cam");
        if variants.contains(&variant) {
            for metric in METRIC_IDS.into_iter().filter(|m| *m != "mse") {
                let kept = filter_best(records, metric, &variant, keep)?;
                let pair = PairSpec {
                    x: AxisKey::Offline { metric: metric.into(), variant: variant.clone() },
                    y: AxisKey::Online { metric: "success_rate".into(), town: town.clone() },
                };
                let base = dir.join(format!(
                    "scatter_success{town}_vs_{metric}_{}_best{}",
                    sanitize(&variant),
                    (keep * 100.0) as u32
                ));
                emit_scatter(&kept, &pair, &base.with_extension("csv"), &base.with_extension("svg"))?;
                count += 2;
            }
        }
        // online metrics against each other, all models
        for (a, b) in [
            ("success_rate", "avg_completion"),
            ("success_rate", "km_per_infraction"),
            ("avg_completion", "km_per_infraction"),
        ] {
            let pair = PairSpec {
                x: AxisKey::Online { metric: a.into(), town: town.clone() },
                y: AxisKey::Online { metric: b.into(), town: town.clone() },
            };
            let base = dir.join(format!("scatter_{a}_vs_{b}_town{town}_all"));
            emit_scatter(records, &pair, &base.with_extension("csv"), &base.with_extension("svg"))?;
            count += 2;
        }
    }
    Ok(count)
}
