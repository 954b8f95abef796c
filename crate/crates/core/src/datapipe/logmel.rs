use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::connectors::FeatureSequence;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, evenly spaced in mel from 0 Hz to
/// Nyquist. Row `m` holds the weights of filter `m` over the
/// `WINDOW / 2 + 1` STFT bins.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let n_bins = WINDOW / 2 + 1;
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / WINDOW as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < WINDOW {
        0
    } else {
        1 + (n_samples - WINDOW) / HOP
    }
}

/// 80-dim log-mel features at 100 frames per second from 16 kHz PCM:
/// periodic Hann window, magnitude spectrum, mel filterbank, natural log
/// floored at `1e-10`.
pub fn extract_logmel(samples: &[i16], sample_rate: u32) -> Result<FeatureSequence<f64>> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::Wav(format!("expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")));
    }
    let frames = frame_count(samples.len());
    if frames == 0 {
        return Err(Error::EmptyInput("audio shorter than one analysis window"));
    }
    let window: Vec<f64> = (0..WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WINDOW as f64).cos())
        .collect();
    let bank = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(WINDOW);
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut data = Vec::with_capacity(frames * N_MELS);
    for f in 0..frames {
        let chunk = &samples[f * HOP..f * HOP + WINDOW];
        for ((b, &s), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(s as f64 / 32768.0 * w, 0.0);
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..WINDOW / 2 + 1].iter().map(|c| c.norm()).collect();
        for filt in &bank {
            let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
            data.push(e.max(LOG_FLOOR).ln());
        }
    }
    FeatureSequence::new(frames, N_MELS, data, SAMPLE_RATE as f64 / HOP as f64)
}

/// Reads a 16-bit mono PCM WAV file.
pub fn read_wav(path: &Path) -> Result<(Vec<i16>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav(format!(
            "{}: need 16-bit mono PCM, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok((samples, spec.sample_rate))
}

pub fn logmel_from_wav(path: &Path) -> Result<FeatureSequence<f64>> {
    let (samples, rate) = read_wav(path)?;
    extract_logmel(&samples, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(hz: f64, n: usize) -> Vec<i16> {
        (0..n)
            .map(|i| (8000.0 * (2.0 * std::f64::consts::PI * hz * i as f64 / SAMPLE_RATE as f64).sin()) as i16)
            .collect()
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(6400), 38);
        assert_eq!(extract_logmel(&vec![0; 6400], SAMPLE_RATE).unwrap().n_x(), 38);
        assert_eq!(frame_count(400), 1);
        assert_eq!(frame_count(399), 0);
    }

    #[test]
    fn silence_hits_the_floor() {
        let x = extract_logmel(&vec![0; 1600], SAMPLE_RATE).unwrap();
        assert!(x.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_its_band() {
        // 1 kHz sits on STFT bin 25; filter 28 has the largest weight there.
        let bank = mel_filterbank();
        let expected = (0..N_MELS)
            .max_by(|&a, &b| bank[a][25].total_cmp(&bank[b][25]))
            .unwrap();
        assert_eq!(expected, 28);
        let x = extract_logmel(&sine(1000.0, 4000), SAMPLE_RATE).unwrap();
        for f in 0..x.n_x() {
            let row = x.row(f);
            let best = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, expected);
        }
    }

    #[test]
    fn wrong_rate_is_rejected() {
        assert!(matches!(extract_logmel(&vec![0; 8000], 8000), Err(Error::Wav(_))));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in sine(440.0, 1600) {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let x = logmel_from_wav(&path).unwrap();
        assert_eq!(x.n_x(), frame_count(1600));
        assert_eq!(x.frame_rate_hz, 100.0);

        std::fs::write(dir.path().join("junk.wav"), b"RIFF....garbage").unwrap();
        assert!(matches!(logmel_from_wav(&dir.path().join("junk.wav")), Err(Error::Wav(_))));
    }
}
