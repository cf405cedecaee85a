//! Probe tasks, representation sources, the probe suite and OOD transfer.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, kendall_tau, r2_score};
use super::pca::{Kernel, Pca};
use super::ridge::{alpha_grid, ridge_fit, RidgeModel, Standardizer};
use super::softmax::{softmax_probe_fit, SoftmaxConfig, SoftmaxProbe};
use crate::encoder::HyperModel;
use crate::error::{bail, Result};
use crate::store::{statistics_dim, weight_statistics};
use crate::zoo::{SampleRef, Split, Zoo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeTask {
    Eph,
    Acc,
    GGap,
    /// F1 score of one class.
    F1(usize),
    Lr,
    L2Reg,
    Drop,
    Tf,
    Act,
    Init,
    Opt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Target of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Value(f64),
    Label(String),
}

impl ProbeTask {
    pub fn name(&self) -> String {
        match self {
            ProbeTask::Eph => "Eph".into(),
            ProbeTask::Acc => "Acc".into(),
            ProbeTask::GGap => "GGap".into(),
            ProbeTask::F1(c) => format!("F1_{c}"),
            ProbeTask::Lr => "LR".into(),
            ProbeTask::L2Reg => "L2reg".into(),
            ProbeTask::Drop => "Drop".into(),
            ProbeTask::Tf => "TF".into(),
            ProbeTask::Act => "Act".into(),
            ProbeTask::Init => "Init".into(),
            ProbeTask::Opt => "Opt".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let l = s.to_ascii_lowercase();
        if let Some(c) = l.strip_prefix("f1_").or_else(|| l.strip_prefix("f1")) {
            return c
                .parse()
                .map(ProbeTask::F1)
                .map_err(|_| crate::Error::Config(format!("bad F1 class in task '{s}'")));
        }
        Ok(match l.as_str() {
            "eph" => ProbeTask::Eph,
            "acc" => ProbeTask::Acc,
            "ggap" => ProbeTask::GGap,
            "lr" => ProbeTask::Lr,
            "l2reg" | "l2" => ProbeTask::L2Reg,
            "drop" => ProbeTask::Drop,
            "tf" => ProbeTask::Tf,
            "act" => ProbeTask::Act,
            "init" => ProbeTask::Init,
            "opt" => ProbeTask::Opt,
            other => bail!(Config, "unknown probe task '{other}'"),
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            ProbeTask::Act | ProbeTask::Init | ProbeTask::Opt => TaskKind::Classification,
            _ => TaskKind::Regression,
        }
    }

    pub fn target(&self, zoo: &Zoo, s: SampleRef) -> Option<Target> {
        let r = zoo.record(s);
        let c = zoo.config(s);
        Some(match self {
            ProbeTask::Eph => Target::Value(r.epoch as f64),
            ProbeTask::Acc => Target::Value(r.test_acc),
            ProbeTask::GGap => Target::Value(r.ggap),
            ProbeTask::F1(k) => Target::Value(*r.per_class_f1.get(*k)?),
            ProbeTask::Lr => Target::Value(c.lr),
            ProbeTask::L2Reg => Target::Value(c.l2_reg),
            ProbeTask::Drop => Target::Value(c.dropout),
            ProbeTask::Tf => Target::Value(c.train_fraction),
            ProbeTask::Act => Target::Label(c.activation.name().into()),
            ProbeTask::Init => Target::Label(c.init.name().into()),
            ProbeTask::Opt => Target::Label(c.optimizer.name().into()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    RawW,
    Sw,
    PcaLinear,
    PcaCosine,
    PcaRbf,
    HyperRep,
}

impl SourceKind {
    pub const ALL: [SourceKind; 6] = [
        SourceKind::RawW,
        SourceKind::Sw,
        SourceKind::PcaLinear,
        SourceKind::PcaCosine,
        SourceKind::PcaRbf,
        SourceKind::HyperRep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::RawW => "raw",
            SourceKind::Sw => "sw",
            SourceKind::PcaLinear => "pca_linear",
            SourceKind::PcaCosine => "pca_cosine",
            SourceKind::PcaRbf => "pca_rbf",
            SourceKind::HyperRep => "hyperrep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "raw" | "raw_w" | "w" => SourceKind::RawW,
            "sw" | "s(w)" | "stats" => SourceKind::Sw,
            "pca_linear" | "pca_l" | "pca" => SourceKind::PcaLinear,
            "pca_cosine" | "pca_c" => SourceKind::PcaCosine,
            "pca_rbf" | "pca_r" => SourceKind::PcaRbf,
            "hyperrep" | "hyper" | "z" => SourceKind::HyperRep,
            other => bail!(Config, "unknown representation source '{other}'"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub alphas: Vec<f64>,
    /// z-scores features on training statistics before ridge and PCA.
    pub standardize: bool,
    /// Components of the PCA baselines; the encoder's latent size when unset.
    pub pca_dim: Option<usize>,
    /// RBF kernel width; `1/N` when unset.
    pub rbf_gamma: Option<f64>,
    pub softmax: SoftmaxConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            alphas: alpha_grid(),
            standardize: true,
            pca_dim: None,
            rbf_gamma: None,
            softmax: SoftmaxConfig::default(),
        }
    }
}

/// A representation fitted on one zoo's training split.
#[derive(Debug, Clone)]
pub struct FittedSource {
    pub kind: SourceKind,
    pub dim: usize,
    pca: Option<(Standardizer, Pca)>,
    encoder: Option<HyperModel>,
    layout_hash: u64,
    layout_name: String,
    zoo_name: String,
}

fn weights_f64(zoo: &Zoo, samples: &[SampleRef]) -> Vec<f64> {
    samples.iter().flat_map(|&s| zoo.weights_of(s).iter().map(|&x| x as f64)).collect()
}

impl FittedSource {
    pub fn fit(zoo: &Zoo, kind: SourceKind, encoder: Option<&HyperModel>, cfg: &ProbeConfig) -> Result<Self> {
        let n = zoo.layout.n;
        let mut out = Self {
            kind,
            dim: n,
            pca: None,
            encoder: None,
            layout_hash: zoo.layout.hash,
            layout_name: zoo.layout.arch_name.clone(),
            zoo_name: zoo.manifest.name.clone(),
        };
        match kind {
            SourceKind::RawW => {}
            SourceKind::Sw => out.dim = statistics_dim(&zoo.layout),
            SourceKind::HyperRep => {
                let Some(e) = encoder else {
                    bail!(Config, "the hyperrep source needs a trained encoder");
                };
                e.check_layout(&zoo.layout)?;
                out.dim = e.config.latent_dim;
                out.encoder = Some(e.clone());
            }
            SourceKind::PcaLinear | SourceKind::PcaCosine | SourceKind::PcaRbf => {
                let dim = cfg.pca_dim.or(encoder.map(|e| e.config.latent_dim)).unwrap_or(n.div_ceil(2));
                let kernel = match kind {
                    SourceKind::PcaLinear => Kernel::Linear,
                    SourceKind::PcaCosine => Kernel::Cosine,
                    _ => Kernel::Rbf {
                        gamma: cfg.rbf_gamma.unwrap_or(1.0 / n as f64),
                    },
                };
                let x = weights_f64(zoo, &zoo.samples(Split::Train));
                let st = if cfg.standardize {
                    Standardizer::fit(&x, n)?
                } else {
                    Standardizer::identity(n)
                };
                let pca = Pca::fit(&st.apply(&x), n, dim, kernel)?;
                out.dim = dim;
                out.pca = Some((st, pca));
            }
        }
        Ok(out)
    }

    /// Features of `samples` of any layout-compatible zoo, row-major.
    pub fn features(&self, zoo: &Zoo, samples: &[SampleRef]) -> Result<Vec<f64>> {
        if zoo.layout.hash != self.layout_hash {
            bail!(
                Layout,
                "representation fitted on zoo '{}' with layout {} ({:#018x}) cannot read zoo '{}' with layout {} ({:#018x})",
                self.zoo_name,
                self.layout_name,
                self.layout_hash,
                zoo.manifest.name,
                zoo.layout.arch_name,
                zoo.layout.hash
            );
        }
        match self.kind {
            SourceKind::RawW => Ok(weights_f64(zoo, samples)),
            SourceKind::Sw => Ok(samples.iter().flat_map(|&s| weight_statistics(zoo.weights_of(s), &zoo.layout)).collect()),
            SourceKind::HyperRep => {
                let e = self.encoder.as_ref().expect("hyperrep source holds its encoder");
                let x: Vec<f32> = samples.iter().flat_map(|&s| zoo.weights_of(s).iter().copied()).collect();
                Ok(e.encode(&x)?.into_iter().map(|v| v as f64).collect())
            }
            _ => {
                let (st, pca) = self.pca.as_ref().expect("pca source holds its projection");
                pca.transform(&st.apply(&weights_f64(zoo, samples)))
            }
        }
    }
}

/// A fitted probe for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedProbe {
    Ridge(RidgeModel),
    Softmax { probe: SoftmaxProbe, classes: Vec<String> },
}

impl FittedProbe {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            FittedProbe::Ridge(r) => Some(r.alpha),
            FittedProbe::Softmax { .. } => None,
        }
    }
}

/// Targets of `samples`, or a data error naming the models without one.
fn targets(zoo: &Zoo, task: ProbeTask, samples: &[SampleRef]) -> Result<Vec<Target>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut missing = Vec::new();
    for &s in samples {
        match task.target(zoo, s) {
            Some(t) => out.push(t),
            None => missing.push(zoo.manifest.models[s.model].id),
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        bail!(Data, "task {} is undefined for models {missing:?}", task.name());
    }
    Ok(out)
}

fn values(t: &[Target]) -> Vec<f64> {
    t.iter()
        .map(|t| match t {
            Target::Value(v) => *v,
            Target::Label(_) => f64::NAN,
        })
        .collect()
}

fn labels(t: &[Target], classes: &[String]) -> Vec<usize> {
    t.iter()
        .map(|t| match t {
            Target::Label(l) => classes.iter().position(|c| c == l).unwrap_or(usize::MAX),
            Target::Value(_) => usize::MAX,
        })
        .collect()
}

/// Metrics of one (source, task) cell on the test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub zoo: String,
    pub source: String,
    pub task: String,
    /// `r2` for regression, `accuracy` for classification.
    pub metric: String,
    pub value: f64,
    pub alpha: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Kendall's τ of test predictions, for regression tasks.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("zoo,source,task,metric,value,alpha,n_train,n_val,n_test,tau\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.zoo,
                r.source,
                r.task,
                r.metric,
                r.value,
                fmt_opt(r.alpha),
                r.n_train,
                r.n_val,
                r.n_test,
                fmt_opt(r.tau)
            );
        }
        s
    }

    pub fn get(&self, source: SourceKind, task: ProbeTask) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.source == source.name() && r.task == task.name())
    }
}

/// A probe cell ready to be applied to other zoos.
#[derive(Debug, Clone)]
pub struct FittedCell {
    pub task: ProbeTask,
    pub source: SourceKind,
    pub probe: FittedProbe,
}

struct SplitData {
    samples: [Vec<SampleRef>; 3],
    features: [Vec<f64>; 3],
}

/// Fits a probe on train (selecting on val) and scores it on test.
fn fit_cell(zoo: &Zoo, src: &FittedSource, data: &SplitData, task: ProbeTask, cfg: &ProbeConfig) -> Result<(ProbeRow, FittedCell)> {
    let d = src.dim;
    let [tr, va, te] = [0, 1, 2].map(|i| targets(zoo, task, &data.samples[i]));
    let (tr, va, te) = (tr?, va?, te?);
    let [ftr, fva, fte] = &data.features;
    if tr.is_empty() {
        bail!(Data, "zoo {} has an empty training split", zoo.manifest.name);
    }
    let (metric, value, tau, probe) = match task.kind() {
        TaskKind::Regression => {
            let m = ridge_fit(ftr, &values(&tr), fva, &values(&va), d, &cfg.alphas, cfg.standardize)?;
            let pred = m.predict(fte);
            let truth = values(&te);
            let (r2, tau) = if truth.len() >= 2 {
                (r2_score(&pred, &truth)?, Some(kendall_tau(&pred, &truth)?))
            } else {
                (f64::NAN, None)
            };
            ("r2", r2, tau, FittedProbe::Ridge(m))
        }
        TaskKind::Classification => {
            let mut classes: Vec<String> = tr
                .iter()
                .chain(&va)
                .chain(&te)
                .filter_map(|t| match t {
                    Target::Label(l) => Some(l.clone()),
                    Target::Value(_) => None,
                })
                .collect();
            classes.sort();
            classes.dedup();
            let p = softmax_probe_fit(ftr, &labels(&tr, &classes), fva, &labels(&va, &classes), d, classes.len(), &cfg.softmax)?;
            let acc = if te.is_empty() {
                f64::NAN
            } else {
                accuracy(&p.predict(fte), &labels(&te, &classes))?
            };
            ("accuracy", acc, None, FittedProbe::Softmax { probe: p, classes })
        }
    };
    let row = ProbeRow {
        zoo: zoo.manifest.name.clone(),
        source: src.kind.name().into(),
        task: task.name(),
        metric: metric.into(),
        value,
        alpha: probe.alpha(),
        n_train: tr.len(),
        n_val: va.len(),
        n_test: te.len(),
        tau,
    };
    Ok((
        row,
        FittedCell {
            task,
            source: src.kind,
            probe,
        },
    ))
}

/// Fits every (source, task) probe on `zoo` and reports test metrics.
pub fn run_probe_suite(
    zoo: &Zoo,
    encoder: Option<&HyperModel>,
    sources: &[SourceKind],
    tasks: &[ProbeTask],
    cfg: &ProbeConfig,
) -> Result<(ProbeReport, Vec<(FittedSource, Vec<FittedCell>)>)> {
    let samples = Split::ALL.map(|s| zoo.samples(s));
    let mut rows = Vec::new();
    let mut fitted = Vec::new();
    for &kind in sources {
        let src = FittedSource::fit(zoo, kind, encoder, cfg)?;
        let features = [0, 1, 2].map(|i| src.features(zoo, &samples[i]));
        let [a, b, c] = features;
        let data = SplitData {
            samples: samples.clone(),
            features: [a?, b?, c?],
        };
        let cells: Vec<(ProbeRow, FittedCell)> = tasks
            .par_iter()
            .map(|&t| fit_cell(zoo, &src, &data, t, cfg))
            .collect::<Result<_>>()?;
        let (r, c): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
        rows.extend(r);
        fitted.push((src, c));
    }
    Ok((ProbeReport { rows }, fitted))
}

/// One cell of the transfer table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodRow {
    pub source: String,
    pub target: String,
    pub task: String,
    pub tau: f64,
    pub r2: f64,
    pub n: usize,
}

pub const MIN_OOD_SAMPLES: usize = 100;

/// Applies representations and regression probes fitted on one zoo to the
/// test split of `target`.
pub fn ood_transfer(source_name: &str, src: &FittedSource, cells: &[FittedCell], target: &Zoo, min_samples: usize) -> Result<Vec<OodRow>> {
    let samples = target.samples(Split::Test);
    let feats = src.features(target, &samples)?;
    if samples.len() < min_samples {
        bail!(Data, "zoo {} has {} test samples, transfer needs at least {min_samples}", target.manifest.name, samples.len());
    }
    let mut out = Vec::new();
    for cell in cells {
        let FittedProbe::Ridge(m) = &cell.probe else { continue };
        let truth = values(&targets(target, cell.task, &samples)?);
        let pred = m.predict(&feats);
        out.push(OodRow {
            source: source_name.into(),
            target: target.manifest.name.clone(),
            task: cell.task.name(),
            tau: kendall_tau(&pred, &truth)?,
            r2: r2_score(&pred, &truth)?,
            n: samples.len(),
        });
    }
    Ok(out)
}

pub fn ood_csv(rows: &[OodRow]) -> String {
    let mut s = String::from("source,target,task,tau,r2,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.source, r.target, r.task, r.tau, r.r2, r.n);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{generate_zoo, ZooKind, ZooSpec};

    fn tiny_zoo() -> Zoo {
        let mut spec = ZooSpec::preset(ZooKind::TetrisSeed, 20);
        spec.base.lr = 1e-2;
        spec.base.epochs = 6;
        if let crate::zoo::DataSource::Tetris(t) = &mut spec.data {
            t.samples_per_class = 40;
        }
        generate_zoo(&spec, 1, None).unwrap()
    }

    #[test]
    fn task_names_round_trip() {
        for t in [ProbeTask::Eph, ProbeTask::F1(3), ProbeTask::L2Reg, ProbeTask::Init] {
            assert_eq!(ProbeTask::parse(&t.name()).unwrap(), t);
        }
        for s in SourceKind::ALL {
            assert_eq!(SourceKind::parse(s.name()).unwrap(), s);
        }
    }

    #[test]
    fn suite_shape_and_transfer_diagonal() {
        let zoo = tiny_zoo();
        let tasks = [ProbeTask::Eph, ProbeTask::Acc, ProbeTask::GGap];
        let sources = [SourceKind::RawW, SourceKind::Sw, SourceKind::PcaLinear, SourceKind::PcaRbf];
        let cfg = ProbeConfig {
            pca_dim: Some(10),
            ..ProbeConfig::default()
        };
        let (report, fitted) = run_probe_suite(&zoo, None, &sources, &tasks, &cfg).unwrap();
        assert_eq!(report.rows.len(), sources.len() * tasks.len());
        let eph = report.get(SourceKind::Sw, ProbeTask::Eph).unwrap();
        assert!(eph.value.is_finite() && eph.alpha.is_some());
        assert_eq!(eph.n_test, zoo.samples(Split::Test).len());
        assert!(report.to_csv().lines().count() == 1 + report.rows.len());
        let eph_targets: Vec<f64> = zoo.samples(Split::Train).iter().map(|&s| zoo.record(s).epoch as f64).collect();
        assert_eq!(eph_targets.iter().cloned().fold(f64::INFINITY, f64::min), 1.0);
        assert_eq!(eph_targets.iter().cloned().fold(0.0, f64::max), 6.0);

        // the diagonal of the transfer table equals the in-distribution tau
        for (src, cells) in &fitted {
            let rows = ood_transfer("self", src, cells, &zoo, 10).unwrap();
            for r in rows {
                let t = ProbeTask::parse(&r.task).unwrap();
                assert_eq!(Some(r.tau), report.get(src.kind, t).unwrap().tau);
            }
        }
        assert!(run_probe_suite(&zoo, None, &[SourceKind::HyperRep], &tasks, &cfg).is_err());
    }

    #[test]
    fn test_targets_do_not_leak_into_fits() {
        let zoo = tiny_zoo();
        let mut shuffled = zoo.clone();
        let test = zoo.samples(Split::Test);
        let n = test.len();
        for (i, &s) in test.iter().enumerate() {
            let from = test[(i * 7 + 3) % n];
            shuffled.manifest.models[s.model].records[s.epoch].test_acc = zoo.record(from).test_acc;
        }
        let cfg = ProbeConfig::default();
        let run = |z: &Zoo| run_probe_suite(z, None, &[SourceKind::Sw], &[ProbeTask::Acc], &cfg).unwrap();
        let (a, fa) = run(&zoo);
        let (b, fb) = run(&shuffled);
        assert_eq!(fa[0].1[0].probe, fb[0].1[0].probe);
        assert_ne!(a.rows[0].value, b.rows[0].value);
    }
}
