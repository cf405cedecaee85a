use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{ArgMatches, Args};
use hyperzoo::augment::{forward_deviation, trajectory_equivalence, PermutationSet, TrajectoryEpoch};
use hyperzoo::zoo::{init_weights, DataSource};
use hyperzoo::Split;
use serde::{Deserialize, Serialize};

use crate::config::{load_zoo, read_json, write_file, write_json, CliError, CliResult, Overrides, CONFIG_FILE};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, required_unless_present = "config")]
    zoo: Option<PathBuf>,
    /// Checkpoints tested for forward equivalence.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Permutations applied to each checkpoint.
    #[arg(long, default_value_t = 20)]
    permutations: usize,
    /// Test images fed through each pair.
    #[arg(long, default_value_t = 100)]
    inputs: usize,
    /// Epochs of the backward-equivalence trajectory.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Largest allowed logit deviation.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Largest allowed ratio ‖perm(A) − B‖ / ‖A − B‖.
    #[arg(long, default_value_t = 0.05)]
    ratio: f64,
    /// Largest allowed test accuracy difference between A and B, in points.
    #[arg(long, default_value_t = 0.5)]
    accuracy_gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Verification config JSON; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the config and the per-epoch trajectory CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub zoo: PathBuf,
    pub samples: usize,
    pub permutations: usize,
    pub inputs: usize,
    pub epochs: usize,
    pub tolerance: f64,
    pub ratio: f64,
    pub accuracy_gap: f64,
    pub seed: u64,
}

fn resolve(a: &VerifyArgs, m: &ArgMatches) -> CliResult<VerifyConfig> {
    let mut c = match &a.config {
        Some(p) => read_json(p)?,
        None => VerifyConfig {
            zoo: a.zoo.clone().unwrap_or_default(),
            samples: a.samples,
            permutations: a.permutations,
            inputs: a.inputs,
            epochs: a.epochs,
            tolerance: a.tolerance,
            ratio: a.ratio,
            accuracy_gap: a.accuracy_gap,
            seed: a.seed,
        },
    };
    let o = Overrides::new(m, a.config.is_some());
    if let Some(z) = &a.zoo {
        c.zoo = z.clone();
    }
    o.set("samples", &mut c.samples, &a.samples);
    o.set("permutations", &mut c.permutations, &a.permutations);
    o.set("inputs", &mut c.inputs, &a.inputs);
    o.set("epochs", &mut c.epochs, &a.epochs);
    o.set("tolerance", &mut c.tolerance, &a.tolerance);
    o.set("ratio", &mut c.ratio, &a.ratio);
    o.set("accuracy_gap", &mut c.accuracy_gap, &a.accuracy_gap);
    o.set("seed", &mut c.seed, &a.seed);
    Ok(c)
}

fn trajectory_csv(t: &[TrajectoryEpoch]) -> String {
    let mut s = String::from("epoch,a_ap,a_b,ap_b,acc_a,acc_ap,acc_b\n");
    for e in t {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", e.epoch, e.a_ap, e.a_b, e.ap_b, e.acc_a, e.acc_ap, e.acc_b);
    }
    s
}

pub fn run(a: VerifyArgs, m: &ArgMatches) -> CliResult {
    let c = resolve(&a, m)?;
    if let Some(out) = &a.out {
        write_json(&out.join(CONFIG_FILE), &c)?;
    }
    let zoo = load_zoo(&c.zoo)?;
    let source: DataSource = serde_json::from_value(zoo.manifest.dataset.source.clone()).map_err(hyperzoo::Error::from)?;
    let data = source.load()?;
    let n_inputs = c.inputs.min(data.test.len());
    let inputs = data.test.images[..n_inputs * data.test.image_len()].to_vec();

    let all: Vec<_> = Split::ALL.iter().flat_map(|&s| zoo.samples(s)).collect();
    let count = c.samples.min(all.len());
    let mut worst = 0.0f64;
    for k in 0..count {
        let s = all[k * all.len() / count];
        let arch = zoo.manifest.arch.clone().with_activation(zoo.config(s).activation);
        let set = PermutationSet::sample(&zoo.layout, c.permutations, c.seed.wrapping_add(k as u64))?;
        for j in 0..c.permutations {
            let perms: Vec<(usize, &[usize])> = set.layers.iter().map(|(l, ps)| (*l, ps[j % ps.len()].as_slice())).collect();
            let d = forward_deviation(&arch, &zoo.layout, zoo.weights_of(s), &perms, &inputs, n_inputs)? as f64;
            worst = worst.max(d);
        }
    }
    println!("forward: {count} checkpoints x {} permutations on {n_inputs} inputs, max |dlogit| {worst:.3e} (tolerance {:.1e})", c.permutations, c.tolerance);

    let train = zoo.samples(Split::Train);
    let Some(&first) = train.first() else {
        return Err(CliError::Core(hyperzoo::Error::Data("zoo has no training models".into())));
    };
    let mut cfg = zoo.config(first).clone();
    cfg.dropout = 0.0;
    cfg.epochs = c.epochs;
    let init = init_weights(&zoo.manifest.arch, cfg.init, cfg.seed);
    let set = PermutationSet::sample(&zoo.layout, 8, c.seed)?;
    let perms: Vec<(usize, &[usize])> = set
        .layers
        .iter()
        .map(|(l, ps)| {
            let p = ps.iter().find(|p| p.iter().enumerate().any(|(i, &v)| i != v)).unwrap_or(&ps[0]);
            (*l, p.as_slice())
        })
        .collect();
    let traj = trajectory_equivalence(&zoo.manifest.arch, &data, &cfg, init, &perms)?;
    println!("backward: epoch  |A-Ap|  |A-B|  |Ap-B|  ratio  acc A  acc B");
    let mut worst_ratio = 0.0f64;
    let mut worst_gap = 0.0f64;
    for e in &traj {
        let ratio = if e.a_b > 0.0 { e.ap_b / e.a_b } else { 0.0 };
        worst_ratio = worst_ratio.max(ratio);
        worst_gap = worst_gap.max((e.acc_a - e.acc_b).abs() * 100.0);
        println!(
            "  {:>3}  {:.4e}  {:.4e}  {:.4e}  {:.4}  {:.4}  {:.4}",
            e.epoch, e.a_ap, e.a_b, e.ap_b, ratio, e.acc_a, e.acc_b
        );
    }
    if let Some(out) = &a.out {
        write_file(&out.join("trajectory.csv"), trajectory_csv(&traj))?;
    }
    let mut failures = Vec::new();
    if worst > c.tolerance {
        failures.push(format!("forward deviation {worst:.3e} > {:.1e}", c.tolerance));
    }
    if worst_ratio >= c.ratio {
        failures.push(format!("trajectory ratio {worst_ratio:.4} >= {}", c.ratio));
    }
    if worst_gap >= c.accuracy_gap {
        failures.push(format!("accuracy gap {worst_gap:.3} pp >= {}", c.accuracy_gap));
    }
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Verification(failures.join("; ")))
    }
}
