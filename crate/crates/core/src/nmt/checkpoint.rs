//! Versioned single-file checkpoints: model structure, every
//! hyperparameter, vocabularies, frozen tables, and all parameters.
//!
//! JSON with shortest-roundtrip float formatting, so save → load → save
//! reproduces identical bytes and parameters reload bit-exactly.

use std::path::Path;

use crate::tensor::ParamSet;
use crate::{Error, Result};

use super::model::TranslationModel;
use super::train::TrainingConfig;

pub const CHECKPOINT_VERSION: &str = "uninmt-checkpoint-v1";

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    version: String,
    model: TranslationModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainingConfig>,
    params: ParamSet,
}

pub fn save_checkpoint(
    model: &TranslationModel,
    params: &ParamSet,
    train_config: Option<&TrainingConfig>,
    path: &Path,
) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION.to_string(),
        model: model.clone(),
        train_config: train_config.cloned(),
        params: params.clone(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::Format(format!("checkpoint serialization failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(TranslationModel, ParamSet, Option<TrainingConfig>)> {
    let text = std::fs::read_to_string(path)?;
    let mut file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("checkpoint parse failed: {e}")))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    file.model.after_load();
    file.params.after_load();
    Ok((file.model, file.params, file.train_config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmt::model::tests::baseline_fixture;
    use crate::nmt::translate::{translate, DecodeMode};

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("uninmt_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (params, model) = baseline_fixture(4, 4);
        let p1 = tmpfile("a.ckpt");
        let p2 = tmpfile("b.ckpt");
        save_checkpoint(&model, &params, None, &p1).unwrap();
        let (m2, ps2, _) = load_checkpoint(&p1).unwrap();
        save_checkpoint(&m2, &ps2, None, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn parameters_roundtrip_bit_exactly() {
        let (params, model) = baseline_fixture(5, 4);
        let p = tmpfile("bits.ckpt");
        save_checkpoint(&model, &params, None, &p).unwrap();
        let (_, ps2, _) = load_checkpoint(&p).unwrap();
        assert_eq!(params.len(), ps2.len());
        for (id, param) in params.iter() {
            assert_eq!(param.name, ps2.get(id).name);
            assert_eq!(params.value_bits(id), ps2.value_bits(id));
        }
    }

    #[test]
    fn loaded_model_translates_identically() {
        let (params, model) = baseline_fixture(5, 5);
        let sent: Vec<String> = ["a", "c", "e"].iter().map(|s| s.to_string()).collect();
        let before = translate(&model, &params, "xx", &sent, DecodeMode::Greedy, 10).unwrap();
        let p = tmpfile("trans.ckpt");
        save_checkpoint(&model, &params, None, &p).unwrap();
        let (m2, ps2, _) = load_checkpoint(&p).unwrap();
        let after = translate(&m2, &ps2, "xx", &sent, DecodeMode::Greedy, 10).unwrap();
        assert_eq!(before.tokens, after.tokens);
        assert_eq!(before.attention, after.attention);
    }

    #[test]
    fn truncated_file_is_a_format_error_with_no_partial_model() {
        let (params, model) = baseline_fixture(4, 4);
        let p = tmpfile("trunc.ckpt");
        save_checkpoint(&model, &params, None, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let (params, model) = baseline_fixture(4, 4);
        let p = tmpfile("ver.ckpt");
        save_checkpoint(&model, &params, None, &p).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace(CHECKPOINT_VERSION, "uninmt-checkpoint-v999");
        std::fs::write(&p, text).unwrap();
        match load_checkpoint(&p) {
            Err(Error::Version { found, expected }) => {
                assert_eq!(found, "uninmt-checkpoint-v999");
                assert_eq!(expected, CHECKPOINT_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn training_config_rides_along() {
        let (params, model) = baseline_fixture(4, 4);
        let cfg = TrainingConfig { max_steps: 123, ..TrainingConfig::default() };
        let p = tmpfile("cfg.ckpt");
        save_checkpoint(&model, &params, Some(&cfg), &p).unwrap();
        let (_, _, cfg2) = load_checkpoint(&p).unwrap();
        assert_eq!(cfg2.unwrap().max_steps, 123);
    }
}
