//! Minimal 16-bit mono PCM WAV reader/writer, the only audio format the
//! corpus uses.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Write samples in [-1, 1] as 16-bit PCM. Values outside the range clip.
pub fn write_wav_mono16(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Read a 16-bit mono PCM WAV. Returns samples scaled to [-1, 1] and the
/// sample rate. Unknown chunks are skipped; other encodings are rejected.
pub fn read_wav_mono16<F: Real>(path: &Path) -> Result<(Vec<F>, u32)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Audio(format!("{}: {msg}", path.display()));

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }

    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad("only 16-bit mono PCM is supported"));
                }
                sample_rate = Some(u32::from_le_bytes(body[4..8].try_into().unwrap()));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned: odd sizes carry one pad byte.
        pos = body_end + (size & 1);
    }

    let sample_rate = sample_rate.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| {
            let q = i16::from_le_bytes([b[0], b[1]]);
            real::<F>(q as f64 / 32767.0)
        })
        .collect();
    Ok((samples, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> =
            (0..480).map(|i| (std::f64::consts::TAU * 440.0 * i as f64 / 16_000.0).sin()).collect();
        write_wav_mono16(&path, 16_000, &samples).unwrap();

        let (decoded, sr) = read_wav_mono16::<f64>(&path).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(decoded.len(), samples.len());
        for (d, s) in decoded.iter().zip(&samples) {
            assert!((d - s).abs() <= 0.5 / 32767.0 + 1e-12);
        }
    }

    #[test]
    fn out_of_range_samples_clip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        write_wav_mono16(&path, 8_000, &[2.0, -2.0, 0.0]).unwrap();
        let (decoded, _) = read_wav_mono16::<f64>(&path).unwrap();
        assert_eq!(decoded, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn rejects_non_wav_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.wav");
        std::fs::write(&path, b"definitely not audio").unwrap();
        assert!(read_wav_mono16::<f32>(&path).is_err());
    }
}
