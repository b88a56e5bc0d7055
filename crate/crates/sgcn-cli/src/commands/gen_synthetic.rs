//! `sgcn gen-synthetic`: write the synthetic benchmark in dataset format.

use std::fs;

use sgcn::data::{generate_synthetic, split_synthetic, RawExample};

use crate::config::{generator_config, FileConfig};
use crate::{CliError, GenArgs};

pub fn run(args: GenArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (gen, n_train, n_dev, n_test) = generator_config(&file)?;
    let seed = args.seed.unwrap_or(1);
    let examples = generate_synthetic(&gen, seed)?;
    let (train, dev, test) = split_synthetic(examples, n_train, n_dev, n_test)?;

    fs::create_dir_all(&args.out_dir)?;
    for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = args.out_dir.join(format!("{name}.json"));
        write_split(split, &path)?;
        println!("{}\t{} sentences", path.display(), split.len());
    }
    Ok(())
}

fn write_split(split: &[RawExample], path: &std::path::Path) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(split)
        .map_err(|e| CliError::input(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, json + "\n")?;
    Ok(())
}
