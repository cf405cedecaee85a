use std::path::PathBuf;

use clap::{ArgMatches, Args};
use hyperzoo::encoder::HyperModel;
use hyperzoo::probe::{ood_csv, ood_transfer, run_probe_suite, ProbeConfig, ProbeTask, SourceKind, TaskKind};
use serde::{Deserialize, Serialize};

use crate::config::{
    config_err, encoder_path, load_zoo, read_json, split_list, write_file, write_json, CliResult, Overrides, CONFIG_FILE,
};
use crate::svg;

pub const PROBE_FILE: &str = "probe.csv";
pub const OOD_FILE: &str = "ood.csv";

/// Flags shared by `probe` and `ood`.
#[derive(Debug, Args)]
pub struct ProbeFlags {
    /// Zoo the representations and probes are fitted on.
    #[arg(long)]
    zoo: PathBuf,
    /// Trained encoder file or training run directory.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Comma-separated: raw, sw, pca_linear, pca_cosine, pca_rbf, hyperrep.
    #[arg(long, default_value = "raw,sw,hyperrep")]
    sources: String,
    /// Comma-separated: eph, acc, ggap, f1_<class>, lr, l2reg, drop, tf, act, init, opt.
    #[arg(long, default_value = "eph,acc,ggap")]
    tasks: String,
    /// PCA components; the encoder's latent size when unset.
    #[arg(long)]
    pca_dim: Option<usize>,
    /// RBF kernel width; 1/N when unset.
    #[arg(long)]
    rbf_gamma: Option<f64>,
    /// Skip feature standardization.
    #[arg(long)]
    no_standardize: bool,
    /// Seed of the softmax probe's batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probe config JSON; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    flags: ProbeFlags,
    /// Also write a bar chart per task comparing sources.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
pub struct OodArgs {
    #[command(flatten)]
    flags: ProbeFlags,
    /// Comma-separated zoo directories to evaluate on; the source zoo is always included.
    #[arg(long, default_value = "")]
    targets: String,
    /// Fewest test samples a target zoo needs.
    #[arg(long, default_value_t = hyperzoo::probe::MIN_OOD_SAMPLES)]
    min_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRunConfig {
    pub zoo: PathBuf,
    pub encoder: Option<PathBuf>,
    pub sources: Vec<SourceKind>,
    pub tasks: Vec<ProbeTask>,
    pub probe: ProbeConfig,
    #[serde(default)]
    pub targets: Vec<PathBuf>,
    #[serde(default)]
    pub min_samples: usize,
}

fn resolve(f: &ProbeFlags, m: &ArgMatches) -> CliResult<ProbeRunConfig> {
    let mut c = match &f.config {
        Some(p) => read_json(p)?,
        None => ProbeRunConfig {
            zoo: f.zoo.clone(),
            encoder: None,
            sources: Vec::new(),
            tasks: Vec::new(),
            probe: ProbeConfig::default(),
            targets: Vec::new(),
            min_samples: 0,
        },
    };
    let o = Overrides::new(m, f.config.is_some());
    o.set("zoo", &mut c.zoo, &f.zoo);
    if f.encoder.is_some() {
        c.encoder = f.encoder.clone();
    }
    if o.applies("sources") {
        c.sources = split_list(&f.sources).iter().map(|s| SourceKind::parse(s)).collect::<Result<_, _>>()?;
    }
    if o.applies("tasks") {
        c.tasks = split_list(&f.tasks).iter().map(|s| ProbeTask::parse(s)).collect::<Result<_, _>>()?;
    }
    if f.pca_dim.is_some() {
        c.probe.pca_dim = f.pca_dim;
    }
    if f.rbf_gamma.is_some() {
        c.probe.rbf_gamma = f.rbf_gamma;
    }
    if o.applies("no_standardize") {
        c.probe.standardize = !f.no_standardize;
    }
    o.set("seed", &mut c.probe.softmax.seed, &f.seed);
    if c.sources.is_empty() || c.tasks.is_empty() {
        return Err(config_err("at least one source and one task are required"));
    }
    if c.sources.contains(&SourceKind::HyperRep) && c.encoder.is_none() {
        return Err(config_err("the hyperrep source needs --encoder"));
    }
    Ok(c)
}

type Fitted = (hyperzoo::Zoo, hyperzoo::probe::ProbeReport, Vec<(hyperzoo::probe::FittedSource, Vec<hyperzoo::probe::FittedCell>)>);

fn fit(c: &ProbeRunConfig) -> CliResult<Fitted> {
    let zoo = load_zoo(&c.zoo)?;
    let encoder = match &c.encoder {
        Some(p) => Some(HyperModel::load(&encoder_path(p), &zoo.layout)?),
        None => None,
    };
    let (report, fitted) = run_probe_suite(&zoo, encoder.as_ref(), &c.sources, &c.tasks, &c.probe)?;
    Ok((zoo, report, fitted))
}

pub fn run_probe(a: ProbeArgs, m: &ArgMatches) -> CliResult {
    let c = resolve(&a.flags, m)?;
    write_json(&a.flags.out.join(CONFIG_FILE), &c)?;
    let (_, report, _) = fit(&c)?;
    write_file(&a.flags.out.join(PROBE_FILE), report.to_csv())?;
    for r in &report.rows {
        println!("{:<12} {:<8} {:<9} {:.4}", r.source, r.task, r.metric, r.value);
    }
    if a.svg {
        let groups: Vec<(String, Vec<(String, f64)>)> = c
            .tasks
            .iter()
            .map(|t| {
                let bars = report
                    .rows
                    .iter()
                    .filter(|r| r.task == t.name())
                    .map(|r| (r.source.clone(), r.value))
                    .collect();
                (t.name(), bars)
            })
            .collect();
        write_file(&a.flags.out.join("probe.svg"), svg::bar_chart("Probe results on the test split", &groups))?;
    }
    Ok(())
}

pub fn run_ood(a: OodArgs, m: &ArgMatches) -> CliResult {
    let mut c = resolve(&a.flags, m)?;
    let o = Overrides::new(m, a.flags.config.is_some());
    if o.applies("targets") {
        c.targets = split_list(&a.targets).into_iter().map(PathBuf::from).collect();
    }
    o.set("min_samples", &mut c.min_samples, &a.min_samples);
    c.tasks.retain(|t| t.kind() == TaskKind::Regression);
    if c.tasks.is_empty() {
        return Err(config_err("transfer needs at least one regression task"));
    }
    write_json(&a.flags.out.join(CONFIG_FILE), &c)?;
    let (zoo, _, fitted) = fit(&c)?;
    let mut targets = vec![zoo];
    for t in &c.targets {
        targets.push(load_zoo(t)?);
    }
    let mut rows = Vec::new();
    for (src, cells) in &fitted {
        let name = format!("{}/{}", targets[0].manifest.name, src.kind.name());
        for t in &targets {
            rows.extend(ood_transfer(&name, src, cells, t, c.min_samples)?);
        }
    }
    for r in &rows {
        println!("{:<24} {:<16} {:<6} tau {:.4} r2 {:.4} n {}", r.source, r.target, r.task, r.tau, r.r2, r.n);
    }
    write_file(&a.flags.out.join(OOD_FILE), ood_csv(&rows))?;
    Ok(())
}
