//! Dataset directory layout shared by all commands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attncorr_core::synth::{embedding_table, lexicon, read_jsonl, write_jsonl};
use attncorr_core::{Dataset, EmbeddingTable, Lexicon, Sample, Split, WorldConfig};

pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const WORLD_FILE: &str = "world.toml";

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.as_str()))
}

/// Writes the three splits plus the embedding table, the chunker lexicon
/// and the generating config.
pub fn write_dataset(dir: &Path, world: &WorldConfig, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating dataset directory {}", dir.display()))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let path = split_path(dir, split);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_jsonl(BufWriter::new(file), data.split(split))?;
    }
    fs::write(dir.join(EMBEDDINGS_FILE), embedding_table(world)?.to_json())?;
    fs::write(dir.join(LEXICON_FILE), lexicon(world).to_json())?;
    fs::write(dir.join(WORLD_FILE), toml::to_string(world)?)?;
    Ok(())
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let path = split_path(dir, split);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    Ok(samples)
}

pub fn read_lexicon(dir: &Path) -> Result<Lexicon> {
    let path = dir.join(LEXICON_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Lexicon::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_embeddings(dir: &Path) -> Result<EmbeddingTable> {
    let path = dir.join(EMBEDDINGS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    EmbeddingTable::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `(channels, grid_side)` shared by every sample.
pub fn feature_shape(samples: &[Sample]) -> Result<(usize, usize)> {
    let Some(first) = samples.first() else {
        bail!("dataset split is empty");
    };
    let shape = (first.channels(), first.grid_side);
    if let Some(s) = samples.iter().find(|s| (s.channels(), s.grid_side) != shape) {
        bail!(
            "sample {} has {} channels on a {}-grid, expected {} on a {}-grid",
            s.id,
            s.channels(),
            s.grid_side,
            shape.0,
            shape.1
        );
    }
    Ok(shape)
}
