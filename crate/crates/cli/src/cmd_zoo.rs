use std::path::PathBuf;

use clap::{ArgMatches, Args};
use hyperzoo::zoo::{generate_zoo, DataSource, ZooKind, ZooSpec};

use crate::config::{config_err, explicit, prepare_out_dir, read_json, write_json, CliResult, Overrides, CONFIG_FILE};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// tetris-seed, tetris-hyp, mnist-seed or custom-grid.
    #[arg(long, default_value = "tetris-seed")]
    kind: String,
    /// Models before crashed runs are excluded.
    #[arg(long, default_value_t = 1000)]
    models: usize,
    /// Training epochs per model; one checkpoint per epoch.
    #[arg(long, default_value_t = 75)]
    epochs: usize,
    /// Base learning rate; the kind's preset when unset.
    #[arg(long)]
    lr: Option<f64>,
    /// Base seed of the model configurations.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the train/val/test assignment.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Directory holding the IDX files of image zoos.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Zoo spec JSON; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn resolve(a: &GenerateArgs, m: &ArgMatches) -> CliResult<ZooSpec> {
    let kind = ZooKind::parse(&a.kind)?;
    let mut spec = match &a.config {
        Some(p) => {
            let spec: ZooSpec = read_json(p)?;
            if explicit(m, "kind") && spec.kind != kind {
                return Err(config_err(format!("--kind {} conflicts with kind {} in {}", a.kind, spec.kind.name(), p.display())));
            }
            spec
        }
        None => ZooSpec::preset(kind, a.models),
    };
    let o = Overrides::new(m, a.config.is_some());
    o.set("models", &mut spec.models, &a.models);
    o.set("epochs", &mut spec.base.epochs, &a.epochs);
    o.set("seed", &mut spec.base.seed, &a.seed);
    o.set("split_seed", &mut spec.split_seed, &a.split_seed);
    if let Some(lr) = a.lr {
        spec.base.lr = lr;
    }
    if let (Some(dir), DataSource::Idx { train_images, train_labels, test_images, test_labels }) = (&a.data_dir, &mut spec.data) {
        for p in [train_images, train_labels, test_images, test_labels] {
            *p = dir.join(&*p);
        }
    }
    Ok(spec)
}

pub fn run(a: GenerateArgs, m: &ArgMatches, jobs: usize) -> CliResult {
    let spec = resolve(&a, m)?;
    spec.configs()?;
    prepare_out_dir(&a.out, a.force)?;
    write_json(&a.out.join(CONFIG_FILE), &spec)?;
    let zoo = generate_zoo(&spec, jobs, Some(&a.out))?;
    let [tr, va, te] = zoo.manifest.split_sizes();
    println!("zoo {} ({})", zoo.manifest.name, zoo.manifest.kind);
    println!("models {} crashed {}", zoo.manifest.models.len(), zoo.manifest.excluded.len());
    println!("splits train {tr} val {va} test {te}");
    println!("parameters {} checkpoints per model {}", zoo.layout.n, spec.base.epochs);
    println!("manifest hash {}", zoo.manifest.content_hash()?);
    Ok(())
}
