use std::path::Path;

use advcap_core::checkpoint::Checkpoint;
use advcap_core::discriminator::{DiscConfig, Discriminator};
use advcap_core::generator::{GenConfig, Generator};
use advcap_core::numcore::ParamSet;
use advcap_core::textdata::Vocabulary;
use serde_json::{json, Value};

use crate::error::CliError;

/// The networks and vocabulary of a trainer checkpoint, without the
/// optimizer and data state.
pub struct Model {
    pub vocab: Vocabulary,
    pub gen: Generator,
    pub disc: Discriminator,
}

pub fn vocab_extra(vocab: &Vocabulary) -> Value {
    json!({ "vocab": vocab.tokens() })
}

pub fn vocab_of(ck: &Checkpoint) -> Result<Vocabulary, CliError> {
    let tokens = ck
        .metadata
        .pointer("/extra/vocab")
        .ok_or_else(|| CliError::config("checkpoint carries no vocabulary"))?;
    let tokens: Vec<String> =
        serde_json::from_value(tokens.clone()).map_err(|e| CliError::config(format!("checkpoint vocabulary: {e}")))?;
    Ok(Vocabulary::from_tokens(tokens)?)
}

fn meta<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T, CliError> {
    let v = ck.metadata.get(key).ok_or_else(|| CliError::config(format!("checkpoint metadata lacks {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| CliError::config(format!("checkpoint metadata {key:?}: {e}")))
}

fn load_set(ck: &Checkpoint, layout: &ParamSet) -> Result<ParamSet, CliError> {
    let mut out = ParamSet::new();
    for name in layout.names() {
        out.push(name.clone(), ck.tensor(name)?.clone());
    }
    Ok(out)
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let ck = Checkpoint::load(path)?;
    if ck.metadata.get("kind").and_then(Value::as_str) != Some("trainer") {
        return Err(CliError::config(format!("{}: not a trainer checkpoint", path.display())));
    }
    let vocab = vocab_of(&ck)?;
    let gcfg: GenConfig = meta(&ck, "gen_config")?;
    let dcfg: DiscConfig = meta(&ck, "disc_config")?;
    if gcfg.vocab_size != vocab.len() {
        return Err(CliError::config("checkpoint vocabulary does not match the generator output size"));
    }
    let gen_layout = Generator::zeros(gcfg).map_err(|e| CliError::config(e.to_string()))?;
    let gen = Generator::from_params(gcfg, load_set(&ck, &gen_layout.params)?).map_err(|e| CliError::config(e.to_string()))?;
    let disc_layout = Discriminator::init(dcfg.clone(), &mut advcap_core::rng::SeededRng::from_seed(0), 0.0)
        .map_err(|e| CliError::config(e.to_string()))?;
    let disc =
        Discriminator::from_params(dcfg, load_set(&ck, &disc_layout.params)?).map_err(|e| CliError::config(e.to_string()))?;
    Ok(Model { vocab, gen, disc })
}
