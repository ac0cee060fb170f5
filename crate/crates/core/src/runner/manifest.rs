//! JSON-lines sample manifests with their WAV windows.

use super::serialized::LabeledFeatures;
use crate::audio::pcm::{read_wav, write_wav};
use crate::audio::{AudioWindow, FrontEnd, MelConfig, MODEL_RATE};
use crate::error::{Error, Result};
use crate::miner::ManifestSample;
use crate::simulator::{ManifestEntry, SimConfig, Simulator};
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

pub const MANIFEST_NAME: &str = "manifest.jsonl";

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestSample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let s: ManifestSample = serde_json::from_str(&line).map_err(|e| Error::parse(at(), e.to_string()))?;
        if s.y > 1 {
            return Err(Error::parse(at(), format!("label must be 0 or 1, got {}", s.y)));
        }
        out.push(s);
    }
    Ok(out)
}

/// Features for every manifest entry, in file order. WAV paths resolve
/// against the manifest's directory and must hold one 4 kHz window.
pub fn manifest_features(path: impl AsRef<Path>, mel: &MelConfig) -> Result<Vec<LabeledFeatures>> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let front = FrontEnd::new(mel.clone())?;
    read_manifest(path)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let step = |e| Error::at_step(i, e);
            let wav = s
                .wav
                .as_ref()
                .ok_or_else(|| step(Error::Input("manifest entry has no wav".into())))?;
            let (rate, samples) = read_wav(dir.join(wav)).map_err(step)?;
            if rate != MODEL_RATE {
                return Err(step(Error::Validation(format!("{wav}: expected {MODEL_RATE} Hz, got {rate}"))));
            }
            let window = AudioWindow::from_samples(samples).map_err(step)?;
            let x = front.features(&window).map_err(step)?;
            Ok(LabeledFeatures { x: Arc::new(x), y: s.y })
        })
        .collect()
}

/// Writes `n` simulated windows from `seed` into `dir` with a manifest.
pub fn write_simulation(dir: impl AsRef<Path>, n: usize, seed: u64, sim: &SimConfig) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n);
    for s in Simulator::new(seed, sim.clone())?.take(n) {
        let wav = format!("window_{:05}.wav", s.index);
        write_wav(dir.join(&wav), MODEL_RATE, s.window.samples())?;
        entries.push(ManifestEntry {
            index: s.index,
            label: s.label,
            wav,
            scenario: s.scenario,
        });
    }
    write_jsonl(dir.join(MANIFEST_NAME), &entries)?;
    Ok(entries)
}
