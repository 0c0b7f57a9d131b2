//! Self-contained binary checkpoints: a magic tag, a format version, and a
//! sequence of named f64 tensors — first the configuration scalars, then
//! every parameter in registration order. Loading rebuilds the model from
//! the embedded configuration and overwrites each parameter by name, so a
//! round trip is bit-exact and a second save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::{Ablation, ModelConfig, PhaseMode};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelState};

const MAGIC: &[u8; 4] = b"STKG";
const VERSION: u32 = 1;
/// Refuse entries that would allocate absurd buffers.
const MAX_VALUES: u64 = 1 << 28;

struct Entry {
    name: String,
    dims: Vec<u64>,
    values: Vec<f64>,
}

fn config_entries(cfg: &ModelConfig) -> Vec<Entry> {
    let scalar = |name: &str, v: f64| Entry {
        name: format!("config/{name}"),
        dims: vec![1],
        values: vec![v],
    };
    let a = &cfg.ablation;
    let ablation_bits = (a.no_dynamic_graph as u64)
        | (a.no_location as u64) << 1
        | (a.no_timestamp as u64) << 2
        | (a.no_phase_module as u64) << 3
        | (a.predefined_phase_graph as u64) << 4
        | (a.no_decompose as u64) << 5
        | (a.no_adversarial as u64) << 6
        | (a.no_revin as u64) << 7;
    vec![
        scalar("series_len", cfg.series_len as f64),
        scalar("hidden", cfg.hidden as f64),
        scalar("encoder_layers", cfg.encoder_layers as f64),
        scalar("decoder_layers", cfg.decoder_layers as f64),
        scalar("label_dim", cfg.label_dim as f64),
        scalar("meta_dim", cfg.meta_dim as f64),
        scalar("digit_dim", cfg.digit_dim as f64),
        scalar("attn_heads", cfg.attn_heads as f64),
        scalar("topk", cfg.topk as f64),
        scalar("patch_len", cfg.patch_len as f64),
        scalar("disc_hidden", cfg.disc_hidden as f64),
        scalar("steps_per_day", cfg.steps_per_day as f64),
        scalar("phase.bins", cfg.phase.bins as f64),
        scalar("phase.embed_dim", cfg.phase.embed_dim as f64),
        scalar("phase.hidden", cfg.phase.hidden as f64),
        scalar("phase.layers", cfg.phase.layers as f64),
        scalar("phase.modified", cfg.phase.modified as f64),
        scalar(
            "phase.mode",
            match cfg.phase.mode {
                PhaseMode::Offset => 0.0,
                PhaseMode::Absolute => 1.0,
            },
        ),
        scalar("phase.trend_window", cfg.phase.trend_window as f64),
        scalar("ablation", ablation_bits as f64),
    ]
}

fn config_from_entries(get: &dyn Fn(&str) -> Result<f64>) -> Result<ModelConfig> {
    let us = |name: &str| -> Result<usize> {
        let v = get(name)?;
        if !v.is_finite() || v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!("config/{name} is not a whole number: {v}")));
        }
        Ok(v as usize)
    };
    let bits = us("ablation")? as u64;
    let ablation = Ablation {
        no_dynamic_graph: bits & 1 != 0,
        no_location: bits & 2 != 0,
        no_timestamp: bits & 4 != 0,
        no_phase_module: bits & 8 != 0,
        predefined_phase_graph: bits & 16 != 0,
        no_decompose: bits & 32 != 0,
        no_adversarial: bits & 64 != 0,
        no_revin: bits & 128 != 0,
    };
    let mut cfg = ModelConfig {
        series_len: us("series_len")?,
        hidden: us("hidden")?,
        encoder_layers: us("encoder_layers")?,
        decoder_layers: us("decoder_layers")?,
        label_dim: us("label_dim")?,
        meta_dim: us("meta_dim")?,
        digit_dim: us("digit_dim")?,
        attn_heads: us("attn_heads")?,
        topk: us("topk")?,
        patch_len: us("patch_len")?,
        disc_hidden: us("disc_hidden")?,
        steps_per_day: us("steps_per_day")?,
        ablation,
        ..ModelConfig::default()
    };
    cfg.phase.bins = us("phase.bins")?;
    cfg.phase.embed_dim = us("phase.embed_dim")?;
    cfg.phase.hidden = us("phase.hidden")?;
    cfg.phase.layers = us("phase.layers")?;
    cfg.phase.modified = us("phase.modified")?;
    cfg.phase.trend_window = us("phase.trend_window")?;
    cfg.phase.mode = match us("phase.mode")? {
        0 => PhaseMode::Offset,
        1 => PhaseMode::Absolute,
        other => return Err(Error::Format(format!("unknown phase mode code {other}"))),
    };
    Ok(cfg)
}

pub fn save_to(model: &ModelState, w: &mut dyn Write) -> Result<()> {
    let mut entries = config_entries(&model.config);
    for (_, p) in model.store.iter() {
        entries.push(Entry {
            name: p.name.clone(),
            dims: vec![p.rows as u64, p.cols as u64],
            values: p.value.clone(),
        });
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in &entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
        for d in &e.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_from(r: &mut dyn Read) -> Result<ModelState> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}; not a model checkpoint")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut entries: Vec<Entry> = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("entry name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        read_exact(r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 2 {
            return Err(Error::Format(format!("entry {name}: rank {rank} unsupported")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(r)?;
            total = total.saturating_mul(d);
            dims.push(d);
        }
        if total > MAX_VALUES {
            return Err(Error::Format(format!("entry {name}: {total} values is too large")));
        }
        let mut values = vec![0.0f64; total as usize];
        for v in values.iter_mut() {
            *v = read_f64(r)?;
        }
        entries.push(Entry { name, dims, values });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing data after the last entry".into()));
    }

    let find = |name: &str| entries.iter().find(|e| e.name == name);
    let get_scalar = |name: &str| -> Result<f64> {
        let full = format!("config/{name}");
        let e = find(&full).ok_or_else(|| Error::Format(format!("missing {full}")))?;
        if e.values.len() != 1 {
            return Err(Error::Format(format!("{full} is not a scalar")));
        }
        Ok(e.values[0])
    };
    let cfg = config_from_entries(&get_scalar)?;
    let mut model = init_model(&cfg, 0)?;

    // Every parameter must be present with the right shape; every
    // non-config entry must correspond to a parameter.
    let registry = model.store.registry();
    for (name, rows, cols, _) in &registry {
        let e = find(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        if e.dims != vec![*rows as u64, *cols as u64] {
            return Err(Error::Format(format!(
                "parameter {name}: checkpoint shape {:?}, model expects {rows}x{cols}",
                e.dims
            )));
        }
        let id = model
            .store
            .by_name(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        model.store.value_mut(id).copy_from_slice(&e.values);
    }
    for e in &entries {
        if !e.name.starts_with("config/") && !registry.iter().any(|(n, ..)| n == &e.name) {
            return Err(Error::Format(format!("checkpoint entry {} is not a model parameter", e.name)));
        }
    }
    Ok(model)
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let mut r = BufReader::new(File::open(path)?);
    load_from(&mut r)
}

pub fn to_bytes(model: &ModelState) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save_to(model, &mut buf)?;
    Ok(buf)
}

fn read_exact(r: &mut dyn Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("checkpoint is truncated".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut dyn Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut dyn Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PhaseConfig;

    fn sample_model() -> ModelState {
        let mut cfg = ModelConfig {
            series_len: 12,
            hidden: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            label_dim: 4,
            meta_dim: 6,
            digit_dim: 2,
            attn_heads: 2,
            topk: 2,
            patch_len: 4,
            disc_hidden: 5,
            steps_per_day: 24,
            phase: PhaseConfig {
                bins: 8,
                embed_dim: 4,
                hidden: 5,
                layers: 1,
                modified: 1,
                mode: PhaseMode::Offset,
                trend_window: 3,
            },
            ablation: Ablation::default(),
        };
        cfg.ablation.no_decompose = true;
        init_model(&cfg, 99).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_byte_stable() {
        let model = sample_model();
        let bytes = to_bytes(&model).unwrap();
        let loaded = load_from(&mut &bytes[..]).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.store.registry(), model.store.registry());
        for ((_, a), (_, b)) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
            assert_eq!(a.trainable, b.trainable);
        }
        let bytes2 = to_bytes(&loaded).unwrap();
        assert_eq!(bytes, bytes2, "second save must be byte-identical");
    }

    #[test]
    fn file_round_trip() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stkg");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(to_bytes(&model).unwrap(), to_bytes(&loaded).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = sample_model();
        let bytes = to_bytes(&model).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_from(&mut &bad[..]), Err(Error::Format(_))), "bad magic");

        let mut bad = bytes.clone();
        bad[4] = 9;
        let err = load_from(&mut &bad[..]).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        let truncated = &bytes[..bytes.len() - 3];
        let err = load_from(&mut &truncated[..]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut extended = bytes.clone();
        extended.push(0);
        let err = load_from(&mut &extended[..]).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn unknown_and_missing_parameters_are_rejected() {
        let model = sample_model();

        // Rename one parameter entry: the loader must notice both the
        // missing original and (if the name survives scanning) the stranger.
        let mut bytes = Vec::new();
        save_to(&model, &mut bytes).unwrap();
        let needle = b"enc.0.w1";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[pos..pos + needle.len()].copy_from_slice(b"enc.9.w1");
        let err = load_from(&mut &bytes[..]).unwrap_err().to_string();
        assert!(err.contains("enc.0.w1"), "{err}");
    }

    #[test]
    fn config_survives_including_mode_and_ablation() {
        let mut cfg = sample_model().config.clone();
        cfg.phase.mode = PhaseMode::Absolute;
        cfg.ablation.no_adversarial = true;
        cfg.ablation.no_revin = true;
        let model = init_model(&cfg, 5).unwrap();
        let bytes = to_bytes(&model).unwrap();
        let loaded = load_from(&mut &bytes[..]).unwrap();
        assert_eq!(loaded.config.phase.mode, PhaseMode::Absolute);
        assert!(loaded.config.ablation.no_adversarial);
        assert!(loaded.config.ablation.no_revin);
        assert!(loaded.config.ablation.no_decompose);
        assert!(!loaded.config.ablation.no_location);
    }
}
