use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use safn_core::container::Container;
use safn_core::corpus::est::parse_est_track;
use safn_core::corpus::interchange::{read_interchange, write_interchange, KIND as UTTERANCE_KIND};
use safn_core::corpus::{clean_trajectory, Audio, ChannelMap, CorpusManifest, Utterance, UtteranceRef};
use safn_core::Error;

/// Creates `<parent>/<command>-<timestamp>`, adding a numeric suffix rather
/// than ever reusing an existing directory.
pub fn fresh_run_dir(parent: &Path, command: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for n in 1.. {
        let name = if n == 1 {
            format!("{command}-{stamp}")
        } else {
            format!("{command}-{stamp}-{n}")
        };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e).into()),
        }
    }
    unreachable!()
}

/// Accepts a missing or empty directory; refuses to write into anything else.
pub fn empty_output_dir(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", dir.display())).into());
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Reads a WAV file as mono f32 in [-1, 1]; multi-channel files are averaged.
pub fn read_wav(path: &Path) -> anyhow::Result<Audio> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let raw: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
        }
    }
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let ch = spec.channels.max(1) as usize;
    let samples = raw.chunks(ch).map(|c| c.iter().sum::<f32>() / ch as f32).collect();
    Ok(Audio {
        samples,
        rate_hz: spec.sample_rate,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Est { ema: PathBuf, wav: PathBuf },
    Interchange(PathBuf),
}

#[derive(Debug, Clone)]
struct Candidate {
    id: String,
    speaker: Option<String>,
    source: Source,
}

fn with_ext(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn scan(dir: &Path, speaker: Option<String>, out: &mut Vec<Candidate>) -> anyhow::Result<()> {
    for p in with_ext(dir, "safn")? {
        let id = p.file_stem().unwrap().to_string_lossy().into_owned();
        out.push(Candidate {
            id,
            speaker: speaker.clone(),
            source: Source::Interchange(p),
        });
    }
    for ema in with_ext(dir, "ema")? {
        let wav = ema.with_extension("wav");
        if wav.is_file() {
            out.push(Candidate {
                id: ema.file_stem().unwrap().to_string_lossy().into_owned(),
                speaker: speaker.clone(),
                source: Source::Est { ema, wav },
            });
        }
    }
    Ok(())
}

pub struct ConvertOptions<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub name: &'a str,
    pub channel_map: Option<ChannelMap>,
    /// Speaker for files directly in `input` (defaults to the corpus name).
    pub speaker: Option<String>,
}

pub struct ConvertSummary {
    pub manifest: CorpusManifest,
    pub converted: usize,
    pub skipped: usize,
}

/// Converts an EST-track corpus (`<id>.ema` + `<id>.wav`, optionally grouped
/// in per-speaker subdirectories) or a set of interchange files into an
/// interchange corpus with a manifest. The input directory is never written.
pub fn convert_corpus(opts: &ConvertOptions) -> anyhow::Result<ConvertSummary> {
    if !opts.input.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", opts.input.display())).into());
    }
    let mut found = Vec::new();
    scan(opts.input, None, &mut found)?;
    let mut subdirs: Vec<PathBuf> = fs::read_dir(opts.input)
        .map_err(|e| Error::io(opts.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let spk = d.file_name().unwrap().to_string_lossy().into_owned();
        scan(&d, Some(spk), &mut found)?;
    }
    if found.is_empty() {
        return Err(Error::Data(format!(
            "no recognised corpus layout in {}: expected EST track files `<utt>.ema` with matching `<utt>.wav` \
             audio (flat or in per-speaker subdirectories), or pre-converted `<utt>.safn` interchange files",
            opts.input.display()
        ))
        .into());
    }
    let map = match &opts.channel_map {
        Some(m) => m.clone(),
        None => ChannelMap::builtin(opts.name).unwrap_or_default(),
    };
    empty_output_dir(opts.out)?;

    let mut log = String::new();
    let mut manifest = CorpusManifest {
        name: opts.name.to_string(),
        root: opts.out.to_path_buf(),
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    let mut skipped = 0;
    for cand in found {
        let result = load_candidate(&cand, &map, opts);
        match result {
            Ok(utt) if seen.contains(&utt.id) => {
                skipped += 1;
                log.push_str(&format!("skip\t{}\tduplicate utterance id\n", utt.id));
            }
            Ok(utt) => {
                let file = format!("{}.safn", utt.id);
                match &cand.source {
                    // already interchange: copy bytes so checksums are untouched
                    Source::Interchange(p) => {
                        fs::copy(p, opts.out.join(&file)).map_err(|e| Error::io(p, e))?;
                    }
                    Source::Est { .. } => write_interchange(&utt, &opts.out.join(&file))?,
                }
                if !manifest.speakers.contains(&utt.speaker_id) {
                    manifest.speakers.push(utt.speaker_id.clone());
                }
                manifest.utterances.push(UtteranceRef {
                    id: utt.id.clone(),
                    speaker_id: utt.speaker_id.clone(),
                    path: file.into(),
                });
                log.push_str(&format!("ok\t{}\t{}\n", utt.id, utt.speaker_id));
                seen.insert(utt.id);
            }
            Err(e) => {
                skipped += 1;
                log::warn!("skipping {}: {e:#}", cand.id);
                log.push_str(&format!("skip\t{}\t{e:#}\n", cand.id));
            }
        }
    }
    fs::write(opts.out.join("convert.log"), &log).map_err(|e| Error::io(opts.out, e))?;
    if manifest.utterances.is_empty() {
        bail!(Error::Data("every utterance was skipped; see convert.log".into()));
    }
    manifest.save(opts.out)?;
    Ok(ConvertSummary {
        converted: manifest.utterances.len(),
        manifest,
        skipped,
    })
}

fn load_candidate(cand: &Candidate, map: &ChannelMap, opts: &ConvertOptions) -> anyhow::Result<Utterance> {
    match &cand.source {
        Source::Interchange(p) => {
            let c = Container::read(p)?;
            if c.kind != UTTERANCE_KIND {
                bail!(Error::Data(format!("{} is a `{}` file, not an utterance", p.display(), c.kind)));
            }
            Ok(read_interchange(p)?)
        }
        Source::Est { ema, wav } => {
            let bytes = fs::read(ema).map_err(|e| Error::io(ema, e))?;
            let traj = map.apply(parse_est_track(&bytes)?);
            let traj = if traj.is_clean() { traj } else { clean_trajectory(&traj)? };
            let utt = Utterance {
                id: cand.id.clone(),
                speaker_id: cand
                    .speaker
                    .clone()
                    .or_else(|| opts.speaker.clone())
                    .unwrap_or_else(|| opts.name.to_string()),
                audio: read_wav(wav)?,
                ema: traj,
            };
            utt.check_durations()?;
            Ok(utt)
        }
    }
}
