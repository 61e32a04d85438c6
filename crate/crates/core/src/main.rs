use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netmix::dyaddesign::{build_design, Covariate, Response};
use netmix::error::Part;
use netmix::graphmetrics::{DegreeMode, MetricSettings};
use netmix::inference::{dyad_threshold_test, explain_report, mask_networks, Correction, ThresholdOptions};
use netmix::netdata::load_networks_dir;
use netmix::pipeline::{
    measure, metric_tables, observed_range, parse_dyads, parse_grid, write_networks, FitArchive, StudyConfig,
};
use netmix::predictsim::{
    gof_compare, gof_from_metrics, network_metrics, predict_curve, simulate_networks, CovariateSource,
    PredictRequest, SimulationOptions,
};
use netmix::study::{generate_synthetic_study, Truth};
use netmix::{Error, Result};

#[derive(Parser)]
#[command(name = "netmix", version, about = "Mixed models for populations of weighted brain networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StudyArgs {
    /// Directory of `<subject_id>.csv` connection matrices.
    #[arg(long)]
    networks_dir: PathBuf,
    /// `node,label,x_mm,y_mm,z_mm` node coordinates.
    #[arg(long)]
    atlas: PathBuf,
    /// `subject_id,group,sex,education_years`.
    #[arg(long)]
    subjects: PathBuf,
    /// Pre-computed centered covariates to use instead of measuring the networks.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Seed for the community search behind modularity.
    #[arg(long, default_value_t = 1)]
    louvain_seed: u64,
    /// Use binary degree in leverage centrality.
    #[arg(long)]
    binary_leverage: bool,
}

/// Optional study inputs for `predict`, used only to find the observed range.
#[derive(Args, Clone)]
struct RangeArgs {
    #[arg(long, requires_all = ["atlas", "subjects"])]
    networks_dir: Option<PathBuf>,
    #[arg(long, requires = "networks_dir")]
    atlas: Option<PathBuf>,
    #[arg(long, requires = "networks_dir")]
    subjects: Option<PathBuf>,
    #[arg(long, requires = "networks_dir")]
    covariates: Option<PathBuf>,
}

impl RangeArgs {
    fn study(&self) -> Option<StudyArgs> {
        Some(StudyArgs {
            networks_dir: self.networks_dir.clone()?,
            atlas: self.atlas.clone()?,
            subjects: self.subjects.clone()?,
            covariates: self.covariates.clone(),
            louvain_seed: 1,
            binary_leverage: false,
        })
    }
}

impl StudyArgs {
    fn config(&self, spec: Option<PathBuf>) -> StudyConfig {
        StudyConfig {
            networks_dir: self.networks_dir.clone(),
            atlas: self.atlas.clone(),
            subjects: self.subjects.clone(),
            spec,
            covariates: self.covariates.clone(),
            metrics: MetricSettings {
                louvain_seed: self.louvain_seed,
                leverage_degree: if self.binary_leverage { DegreeMode::Binary } else { DegreeMode::Weighted },
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Nodal and whole-network metrics for every network in a directory.
    Metrics {
        #[arg(long)]
        networks_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        binary_leverage: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the presence and strength models and archive full and reduced fits.
    Fit {
        #[command(flatten)]
        study: StudyArgs,
        /// Model specification (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the design matrices as text.
        #[arg(long)]
        dump_design: bool,
    },
    /// Parameter table and group-difference classification from a fit archive.
    Report {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicted probability and strength curves with prediction intervals.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        /// Covariate to vary (token such as `k`, `C`, `dist`).
        #[arg(long)]
        vary: Covariate,
        /// `from:to:n` or a comma-separated list, on the raw scale.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value = "0,1")]
        group_levels: String,
        /// Use this dyad's node variances, e.g. `3-7`.
        #[arg(long)]
        dyad: Option<String>,
        /// Study inputs; used to flag extrapolation beyond the observed range.
        #[command(flatten)]
        study: RangeArgs,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate networks from a fitted model.
    Simulate {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        n_sims: usize,
        #[arg(long)]
        seed: u64,
        /// Reuse each subject's predicted random effects instead of drawing new ones.
        #[arg(long)]
        use_blups: bool,
        /// Condition on the dyad-wise mean covariates of this group.
        #[arg(long)]
        group_mean: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare observed and simulated network metrics.
    Gof {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        n_sims: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        use_blups: bool,
        /// Use networks previously written by `simulate` instead of simulating.
        #[arg(long)]
        simulated_dir: Option<PathBuf>,
        #[arg(long, default_value = "Observed")]
        condition: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test dyads for mean strength indistinguishable from the baseline.
    Threshold {
        #[command(flatten)]
        study: StudyArgs,
        /// Strength model specification (TOML).
        #[arg(long, required_unless_present = "fit")]
        spec: Option<PathBuf>,
        /// Take the reduced strength model from a fit archive instead.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// `j-k,j-k,…` or `all`.
        #[arg(long, default_value = "all")]
        dyads: String,
        #[arg(long)]
        per_group: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "fdr")]
        correction: Correction,
        /// Mask weights below this value in removal-candidate dyads.
        #[arg(long)]
        weak_cutoff: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic study and run the whole pipeline on it.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_subjects: usize,
        #[arg(long, default_value_t = 30)]
        n_nodes: usize,
        #[arg(long, default_value_t = 100)]
        n_sims: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_convergence() { 4 } else { 3 })
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Metrics {
            networks_dir,
            seed,
            binary_leverage,
            out,
        } => {
            let networks = load_networks_dir(&networks_dir)?;
            let settings = MetricSettings {
                louvain_seed: seed,
                leverage_degree: if binary_leverage { DegreeMode::Binary } else { DegreeMode::Weighted },
            };
            let metrics = measure(&networks, &settings)?;
            let (nodal, network) = metric_tables(&networks, &metrics);
            write(&out.join("nodal_metrics.csv"), &nodal)?;
            write(&out.join("network_metrics.csv"), &network)
        }
        Command::Fit {
            study,
            spec,
            out,
            dump_design,
        } => {
            let config = study.config(Some(spec));
            let spec = config.load_spec()?;
            let loaded = config.load()?;
            if dump_design {
                for (name, response) in [("presence", Response::Presence), ("strength", Response::Strength)] {
                    let design = build_design(&loaded.table, &spec.with_response(response))?;
                    write(&out.join(format!("design_{name}.txt")), &design.to_string())?;
                }
            }
            let archive = FitArchive::fit(&loaded.table, &spec, config.metrics)?;
            archive.save(&out.join("fit.json"))?;
            write(&out.join("convergence.txt"), &archive.full.convergence_report())
        }
        Command::Report { fit, alpha, out } => {
            let archive = FitArchive::load(&fit)?;
            let report = explain_report(&archive.reduced, alpha)?;
            write(&out.join("report.csv"), &report.to_csv())?;
            write(&out.join("report.txt"), &report.to_text())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Predict {
            fit,
            vary,
            grid,
            group_levels,
            dyad,
            study,
            level,
            out,
        } => {
            let archive = FitArchive::load(&fit)?;
            let mut req = PredictRequest::new(vary, parse_grid(&grid)?);
            req.group_levels = parse_grid(&group_levels)?;
            req.level = level;
            if let Some(d) = dyad {
                req.dyad = parse_dyads(&d, archive.full.n_nodes)?.first().copied();
            }
            if let Some(study) = study.study() {
                let mut config = study.config(None);
                config.metrics = archive.metric_settings;
                let loaded = config.load()?;
                req.observed_range = observed_range(&loaded.table, vary);
            }
            for (name, part) in [("presence", Part::Presence), ("strength", Part::Strength)] {
                let curve = predict_curve(&archive.full, part, &req)?;
                for w in &curve.warnings {
                    log::warn!("{name}: {w}");
                }
                write(&out.join(format!("predict_{name}.csv")), &curve.to_csv())?;
            }
            Ok(())
        }
        Command::Simulate {
            fit,
            study,
            n_sims,
            seed,
            use_blups,
            group_mean,
            out,
        } => {
            let archive = FitArchive::load(&fit)?;
            let loaded = study.config(None).load()?;
            let source = match group_mean {
                Some(g) => CovariateSource::group_mean(&loaded.table, g)?,
                None => CovariateSource::observed(loaded.table),
            };
            let mut opts = SimulationOptions::new(n_sims, seed);
            opts.use_blups = use_blups;
            opts.metrics = archive.metric_settings;
            let ensemble = simulate_networks(&archive.full, &source, &opts)?;
            write_networks(&out.join("networks"), &ensemble.networks)?;
            write(&out.join("manifest.csv"), &ensemble.manifest())
        }
        Command::Gof {
            fit,
            study,
            n_sims,
            seed,
            use_blups,
            simulated_dir,
            condition,
            out,
        } => {
            let archive = FitArchive::load(&fit)?;
            let table = match simulated_dir {
                Some(dir) => {
                    let observed = load_networks_dir(&study.networks_dir)?;
                    let simulated = load_networks_dir(&dir)?;
                    let s = archive.metric_settings;
                    gof_from_metrics(
                        &condition,
                        &network_metrics(&observed, &s),
                        &network_metrics(&simulated, &s),
                    )?
                }
                None => {
                    let loaded = study.config(None).load()?;
                    let mut opts = SimulationOptions::new(n_sims, seed);
                    opts.use_blups = use_blups;
                    opts.metrics = archive.metric_settings;
                    let ensemble =
                        simulate_networks(&archive.full, &CovariateSource::observed(loaded.table), &opts)?;
                    gof_compare(&condition, &loaded.networks, &ensemble)?
                }
            };
            write(&out.join("gof.csv"), &table.to_csv())?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Threshold {
            study,
            spec,
            fit,
            dyads,
            per_group,
            alpha,
            correction,
            weak_cutoff,
            out,
        } => {
            let config = study.config(spec);
            let loaded = config.load()?;
            let spec = match &fit {
                Some(f) => FitArchive::load(f)?.reduced.strength_spec,
                None => config.load_spec()?,
            };
            let dyads = parse_dyads(&dyads, loaded.table.n_nodes)?;
            let opts = ThresholdOptions {
                per_group,
                correction,
                alpha,
            };
            let report = dyad_threshold_test(&loaded.table, &spec, &dyads, &opts)?;
            write(&out.join("threshold.csv"), &report.to_csv())?;
            if let Some(cut) = weak_cutoff {
                write_networks(&out.join("masked"), &mask_networks(&loaded.networks, &report, cut))?;
            }
            Ok(())
        }
        Command::Demo {
            seed,
            n_subjects,
            n_nodes,
            n_sims,
            out,
        } => demo(seed, n_subjects, n_nodes, n_sims, &out),
    }
}

/// Synthetic study → fit → report → prediction → simulation and goodness of fit → dyad tests.
fn demo(seed: u64, n_subjects: usize, n_nodes: usize, n_sims: usize, out: &Path) -> Result<()> {
    let truth = Truth::demo();
    let study = generate_synthetic_study(n_subjects, n_nodes, &truth, seed)?;
    let dir = out.join("study");
    study.write(&dir)?;
    write(&dir.join("spec.toml"), &netmix::dyaddesign::SpecFile::from_spec(&study.spec).to_toml())?;

    // Fitting on the generating covariates makes the estimates comparable with truth.json.
    let config = StudyConfig {
        networks_dir: dir.join("networks"),
        atlas: dir.join("atlas.csv"),
        subjects: dir.join("subjects.csv"),
        spec: Some(dir.join("spec.toml")),
        covariates: Some(dir.join("covariates.csv")),
        metrics: MetricSettings::default(),
    };
    let spec = config.load_spec()?;
    let loaded = config.load()?;
    let archive = FitArchive::fit(&loaded.table, &spec, config.metrics)?;
    archive.save(&out.join("fit.json"))?;
    write(&out.join("convergence.txt"), &archive.full.convergence_report())?;

    let mut recovery = String::from("part,term,truth,estimate,se\n");
    let (bp, bs) = study.true_beta();
    for (name, part, tb) in [("presence", Part::Presence, bp), ("strength", Part::Strength, bs)] {
        let lmm = archive.full.lmm(part);
        let se = lmm.std_errors();
        for (i, term) in lmm.x_names.iter().enumerate() {
            recovery.push_str(&format!("{name},{term},{},{},{}\n", tb[i], lmm.beta[i], se[i]));
        }
    }
    write(&out.join("recovery.csv"), &recovery)?;

    let report = explain_report(&archive.reduced, 0.05)?;
    write(&out.join("report.csv"), &report.to_csv())?;
    write(&out.join("report.txt"), &report.to_text())?;

    let mut req = PredictRequest::new(Covariate::DegreeDiff, parse_grid("0:10:21")?);
    req.observed_range = observed_range(&loaded.table, Covariate::DegreeDiff);
    for (name, part) in [("presence", Part::Presence), ("strength", Part::Strength)] {
        let curve = predict_curve(&archive.full, part, &req)?;
        write(&out.join(format!("predict_{name}.csv")), &curve.to_csv())?;
    }

    let mut opts = SimulationOptions::new(n_sims, seed);
    opts.metrics = archive.metric_settings;
    let ensemble = simulate_networks(&archive.full, &CovariateSource::observed(loaded.table.clone()), &opts)?;
    let gof = gof_compare("Synthetic", &loaded.networks, &ensemble)?;
    write(&out.join("gof.csv"), &gof.to_csv())?;

    let dyads: Vec<(usize, usize)> = (1..n_nodes.min(11)).map(|k| (0, k)).collect();
    let threshold = dyad_threshold_test(&loaded.table, &archive.reduced.strength_spec, &dyads, &ThresholdOptions::default())?;
    write(&out.join("threshold.csv"), &threshold.to_csv())?;

    print!("{}\n{}", report.to_text(), gof.to_csv());
    Ok(())
}
