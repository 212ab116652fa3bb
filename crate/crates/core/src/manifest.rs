//! Dataset manifests and file ingestion.
//!
//! A manifest is a UTF-8 CSV with header `path,genre`; genres come from the
//! fixed five-genre vocabulary. Ingestion decodes each WAV, mixes to mono,
//! decimates to 8 kHz, and segments into clips; per-file failures are
//! collected rather than fatal.

use crate::audio::{self, AudioClip, AudioError};
use rayon::prelude::*;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Genre vocabulary; label indices follow this order.
pub const GENRES: [&str; 5] = ["alternative", "electronica", "pop", "rap", "rock"];

pub fn genre_index(name: &str) -> Option<usize> {
    GENRES.iter().position(|&g| g == name)
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest header must be \"path,genre\", got {0:?}")]
    BadHeader(Vec<String>),
    #[error("line {line}: unknown genre {genre:?} (expected one of {GENRES:?})")]
    UnknownGenre { line: usize, genre: String },
    #[error("line {line}: empty path")]
    EmptyPath { line: usize },
    #[error("line {line}: duplicate path {path:?}")]
    DuplicatePath { line: usize, path: PathBuf },
    #[error("manifest lists no files")]
    Empty,
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Ordered list of (audio file, genre label) records.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses a manifest CSV. Relative paths are resolved against the
    /// manifest's own directory.
    pub fn parse_csv(path: &Path) -> Result<Self, ManifestError> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;

        let headers = reader.headers()?.clone();
        let header_fields: Vec<String> = headers.iter().map(str::to_string).collect();
        if header_fields != ["path", "genre"] {
            return Err(ManifestError::BadHeader(header_fields));
        }

        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2; // header is line 1
            let record = record?;
            let raw_path = record.get(0).unwrap_or("");
            if raw_path.is_empty() {
                return Err(ManifestError::EmptyPath { line });
            }
            let genre = record.get(1).unwrap_or("");
            let label = genre_index(genre).ok_or_else(|| ManifestError::UnknownGenre {
                line,
                genre: genre.to_string(),
            })?;
            let file = if Path::new(raw_path).is_absolute() {
                PathBuf::from(raw_path)
            } else {
                base.join(raw_path)
            };
            if !seen.insert(file.clone()) {
                return Err(ManifestError::DuplicatePath { line, path: file });
            }
            entries.push(ManifestEntry { path: file, label });
        }
        if entries.is_empty() {
            return Err(ManifestError::Empty);
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no clips could be produced from any manifest entry")]
    NoClips,
}

/// A file that contributed no clips during ingestion, with the reason.
#[derive(Clone, Debug)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Ingestion output: every clip with its inherited genre label, per-genre
/// clip counts, and the skip report.
#[derive(Debug)]
pub struct IngestReport {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
    pub per_genre_clips: [usize; 5],
    pub skipped: Vec<SkippedFile>,
}

fn clips_from_file(path: &Path) -> Result<Vec<AudioClip>, String> {
    let bytes = fs::read(path).map_err(|e| format!("read failed: {e}"))?;
    let wave = audio::wav_decode(&bytes).map_err(|e: AudioError| format!("decode failed: {e}"))?;
    let mono = audio::to_mono(&wave);
    let at_8k = audio::resample_to_8k(&mono).map_err(|e| format!("resample failed: {e}"))?;
    audio::segment(&at_8k).map_err(|e| format!("segmentation failed: {e}"))
}

/// Decodes, mixes down, decimates, and segments every manifest entry.
/// Files that fail or are shorter than one clip land in the skip report;
/// the run fails only if nothing at all could be ingested.
///
/// Files are decoded in parallel; results are folded in manifest order, so
/// the output is independent of scheduling.
pub fn ingest(manifest: &Manifest) -> Result<IngestReport, IngestError> {
    let decoded: Vec<Result<Vec<AudioClip>, String>> = manifest
        .entries
        .par_iter()
        .map(|entry| clips_from_file(&entry.path))
        .collect();

    let mut report = IngestReport {
        clips: Vec::new(),
        labels: Vec::new(),
        per_genre_clips: [0; 5],
        skipped: Vec::new(),
    };
    for (entry, outcome) in manifest.entries.iter().zip(decoded) {
        match outcome {
            Ok(clips) if clips.is_empty() => report.skipped.push(SkippedFile {
                path: entry.path.clone(),
                reason: "shorter than one 5-second clip".into(),
            }),
            Ok(clips) => {
                report.per_genre_clips[entry.label] += clips.len();
                report
                    .labels
                    .extend(std::iter::repeat_n(entry.label, clips.len()));
                report.clips.extend(clips);
            }
            Err(reason) => report.skipped.push(SkippedFile {
                path: entry.path.clone(),
                reason,
            }),
        }
    }
    if report.clips.is_empty() {
        return Err(IngestError::NoClips);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{wav_encode, PcmWave};
    use std::io::Write;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        let mut f = fs::File::create(&path).unwrap();
        write!(f, "{}", body).unwrap();
        path
    }

    fn write_wav(dir: &Path, name: &str, rate: u32, samples: Vec<i16>) -> PathBuf {
        let path = dir.join(name);
        let wave = PcmWave::mono(rate, samples).unwrap();
        fs::write(&path, wav_encode(&wave)).unwrap();
        path
    }

    #[test]
    fn parse_resolves_relative_paths_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "path,genre\na.wav,rap\nb.wav,rock\n");
        let manifest = Manifest::parse_csv(&path).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert_eq!(manifest.entries[0].label, 3);
        assert_eq!(manifest.entries[0].path, dir.path().join("a.wav"));
        assert_eq!(manifest.entries[1].label, 4);
    }

    #[test]
    fn unknown_genre_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "path,genre\na.wav,rap\nb.wav,jazz\n");
        match Manifest::parse_csv(&path) {
            Err(ManifestError::UnknownGenre { line, genre }) => {
                assert_eq!(line, 3);
                assert_eq!(genre, "jazz");
            }
            other => panic!("expected UnknownGenre, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_paths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "path,genre\na.wav,rap\na.wav,rock\n");
        assert!(matches!(
            Manifest::parse_csv(&path),
            Err(ManifestError::DuplicatePath { line: 3, .. })
        ));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "file,style\na.wav,rap\n");
        assert!(matches!(
            Manifest::parse_csv(&path),
            Err(ManifestError::BadHeader(_))
        ));
    }

    #[test]
    fn ingest_fifteen_second_file_yields_three_clips() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(dir.path(), "long.wav", 8_000, vec![1_000; 120_000]);
        let manifest_path = write_manifest(dir.path(), "path,genre\nlong.wav,pop\n");
        let manifest = Manifest::parse_csv(&manifest_path).unwrap();
        let report = ingest(&manifest).unwrap();
        assert_eq!(report.clips.len(), 3);
        assert_eq!(report.labels, vec![2, 2, 2]);
        assert_eq!(report.per_genre_clips, [0, 0, 3, 0, 0]);
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn ingest_short_file_lands_in_skip_report() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(dir.path(), "long.wav", 8_000, vec![0; 40_000]);
        write_wav(dir.path(), "short.wav", 8_000, vec![0; 8_000]);
        let manifest_path = write_manifest(dir.path(), "path,genre\nlong.wav,rap\nshort.wav,rap\n");
        let manifest = Manifest::parse_csv(&manifest_path).unwrap();
        let report = ingest(&manifest).unwrap();
        assert_eq!(report.clips.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].path.ends_with("short.wav"));
        assert!(report.skipped[0].reason.contains("shorter"));
    }

    #[test]
    fn ingest_fails_only_when_nothing_survives() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = write_manifest(dir.path(), "path,genre\nmissing.wav,rap\n");
        let manifest = Manifest::parse_csv(&manifest_path).unwrap();
        assert!(matches!(ingest(&manifest), Err(IngestError::NoClips)));
    }

    #[test]
    fn ingest_resamples_multirate_input() {
        let dir = tempfile::tempdir().unwrap();
        // 16 kHz file, 80,000 samples -> 40,000 at 8 kHz -> exactly one clip
        write_wav(dir.path(), "hi.wav", 16_000, vec![500; 80_000]);
        let manifest_path = write_manifest(dir.path(), "path,genre\nhi.wav,rock\n");
        let manifest = Manifest::parse_csv(&manifest_path).unwrap();
        let report = ingest(&manifest).unwrap();
        assert_eq!(report.clips.len(), 1);
        assert_eq!(report.per_genre_clips[4], 1);
    }
}
