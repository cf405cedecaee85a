use std::path::PathBuf;

use clap::{ArgMatches, Args};
use hyperzoo::encoder::{EncoderConfig, HyperModel, Tokenization};
use hyperzoo::ssl::{history_csv, reconstruction_r2, SslConfig, SslData, SslMode, Trainer};
use hyperzoo::Split;
use serde::{Deserialize, Serialize};

use crate::config::{config_err, load_zoo, prepare_out_dir, read_json, split_list, write_file, write_json, CliResult, Overrides, CONFIG_FILE};

pub const ENCODER_FILE: &str = "encoder.hze";
pub const HISTORY_FILE: &str = "history.csv";
const STATE_DIR: &str = "state";

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// ED, Ec, EcD or Ec+D.
    #[arg(long, default_value = "EcD")]
    mode: String,
    /// Weight of the contrastive term in EcD.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// NT-Xent temperature.
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    /// Latent size; `round(N / compression)` when unset.
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    compression: f64,
    /// per_weight or per_neuron.
    #[arg(long, default_value = "per_neuron")]
    tokenization: String,
    /// Summarize the sequence with a learned compression token.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    compression_token: bool,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    token_dim: usize,
    #[arg(long, default_value_t = 512)]
    ffn_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 64)]
    projection_dim: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-9)]
    weight_decay: f64,
    /// Comma-separated augmentations: permutation, erase, noise, or none.
    #[arg(long, default_value = "permutation,erase,noise")]
    augment: String,
    /// Size of the precomputed permutation set per layer.
    #[arg(long, default_value_t = 120)]
    permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    erase_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training config JSON; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue the run saved in the output directory.
    #[arg(long)]
    resume: bool,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub zoo: PathBuf,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
}

fn resolve(a: &TrainArgs, m: &ArgMatches, n: usize) -> CliResult<TrainRunConfig> {
    let file = match (&a.config, a.resume) {
        (Some(p), _) => Some(p.clone()),
        (None, true) => Some(a.out.join(CONFIG_FILE)),
        (None, false) => None,
    };
    let mut c = match &file {
        Some(p) => read_json(p)?,
        None => TrainRunConfig {
            zoo: a.zoo.clone(),
            encoder: EncoderConfig::default(),
            ssl: SslConfig::default(),
        },
    };
    let o = Overrides::new(m, file.is_some());
    o.set("zoo", &mut c.zoo, &a.zoo);
    let e = &mut c.encoder;
    e.input_dim = n;
    if o.applies("tokenization") {
        e.tokenization = Tokenization::parse(&a.tokenization)?;
    }
    o.set("compression_token", &mut e.use_compression_token, &a.compression_token);
    o.set("blocks", &mut e.blocks, &a.blocks);
    o.set("heads", &mut e.heads, &a.heads);
    o.set("token_dim", &mut e.token_dim, &a.token_dim);
    o.set("ffn_dim", &mut e.ffn_dim, &a.ffn_dim);
    o.set("dropout", &mut e.dropout, &a.dropout);
    o.set("projection_dim", &mut e.projection_dim, &a.projection_dim);
    o.set("seed", &mut e.seed, &a.seed);
    if let Some(l) = a.latent {
        e.latent_dim = l;
    } else if o.applies("compression") {
        if a.compression <= 1.0 {
            return Err(config_err(format!("compression ratio must exceed 1, got {}", a.compression)));
        }
        e.latent_dim = ((n as f64 / a.compression).round() as usize).max(1);
    }
    let s = &mut c.ssl;
    if o.applies("mode") {
        s.mode = SslMode::parse(&a.mode)?;
    }
    o.set("beta", &mut s.beta, &a.beta);
    o.set("temperature", &mut s.temperature, &a.temperature);
    o.set("epochs", &mut s.epochs, &a.epochs);
    o.set("batch_size", &mut s.batch_size, &a.batch_size);
    o.set("lr", &mut s.lr, &a.lr);
    o.set("weight_decay", &mut s.weight_decay, &a.weight_decay);
    o.set("seed", &mut s.seed, &a.seed);
    if o.applies("augment") {
        let items = split_list(&a.augment);
        let aug = &mut s.augment;
        aug.permutation = false;
        aug.erase = false;
        aug.noise = false;
        for it in &items {
            match it.as_str() {
                "permutation" | "perm" => aug.permutation = true,
                "erase" => aug.erase = true,
                "noise" => aug.noise = true,
                "none" => {}
                other => return Err(config_err(format!("unknown augmentation '{other}'"))),
            }
        }
    }
    o.set("permutations", &mut s.augment.permutation_count, &a.permutations);
    o.set("noise_std", &mut s.augment.noise_std, &a.noise_std);
    o.set("erase_prob", &mut s.augment.erase_prob, &a.erase_prob);
    c.encoder.validate()?;
    c.ssl.validate()?;
    Ok(c)
}

pub fn run(a: TrainArgs, m: &ArgMatches) -> CliResult {
    let zoo = load_zoo(&a.zoo)?;
    let c = resolve(&a, m, zoo.layout.n)?;
    let state_dir = a.out.join(STATE_DIR);
    let data = SslData::from_zoo(&zoo);
    let mut trainer = if a.resume {
        let t = Trainer::load_state(&state_dir, &zoo.layout, c.ssl.clone())?;
        if t.model.config != c.encoder {
            return Err(config_err("resumed encoder config differs from the resolved config"));
        }
        log::info!("resuming at epoch {}", t.epoch);
        t
    } else {
        prepare_out_dir(&a.out, a.force)?;
        Trainer::new(HyperModel::new(c.encoder.clone(), &zoo.layout)?, &zoo.layout, c.ssl.clone())?
    };
    write_json(&a.out.join(CONFIG_FILE), &c)?;
    println!(
        "training {} on {} ({} parameters, latent {}, {} encoder parameters)",
        c.ssl.mode.name(),
        zoo.manifest.name,
        zoo.layout.n,
        c.encoder.latent_dim,
        trainer.model.param_count()
    );
    while trainer.epoch < c.ssl.epochs {
        let log = match trainer.run_epoch(&data) {
            Ok(l) => l,
            Err(e) => {
                // the state directory still holds the last completed epoch
                if trainer.epoch > 0 {
                    trainer.best().0.save(&a.out.join(ENCODER_FILE))?;
                }
                return Err(e.into());
            }
        };
        trainer.save_state(&state_dir)?;
        write_file(&a.out.join(HISTORY_FILE), history_csv(&trainer.history))?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>4} loss {:.5} mse {:.5} contrast {:.5} train r2 {} val r2 {}",
            log.epoch,
            log.loss,
            log.mse,
            log.contrast,
            fmt(log.train_r2),
            fmt(log.val_r2)
        );
    }
    let (best, epoch) = trainer.best();
    best.save(&a.out.join(ENCODER_FILE))?;
    write_file(&a.out.join(HISTORY_FILE), history_csv(&trainer.history))?;
    if c.ssl.mode.reconstructs() {
        println!("best epoch {epoch}, test reconstruction r2 {:.4}", reconstruction_r2(best, &zoo, Split::Test)?);
    } else {
        println!("best epoch {epoch}");
    }
    Ok(())
}
