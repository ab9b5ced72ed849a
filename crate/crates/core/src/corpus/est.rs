//! Edinburgh Speech Tools track files, the distribution format of the
//! MOCHA-TIMIT and MNGU0 EMA data.
//!
//! ```text
//! EST_File Track
//! DataType binary
//! ByteOrder 01
//! NumFrames 2
//! NumChannels 1
//! BreaksPresent true
//! Channel_0 tt_x
//! EST_Header_End
//! <payload>
//! ```
//!
//! Each frame holds a time stamp, a break flag when `BreaksPresent` is true
//! (0 marks a frame without data), then one value per channel, all 32-bit
//! floats. `ByteOrder 01` is little-endian, `10` big-endian.

use ndarray::Array2;

use super::EmaTrajectory;
use crate::error::{Error, Result};

const SENTINEL: &str = "EST_File Track";
const HEADER_END: &str = "EST_Header_End";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstEncoding {
    Ascii,
    BinaryLittle,
    BinaryBig,
}

pub fn parse_est_track(bytes: &[u8]) -> Result<EmaTrajectory> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut read_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let rest = &bytes[*pos..];
        let nl = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
        let text = String::from_utf8_lossy(&rest[..nl]).trim_end_matches('\r').to_string();
        *pos += (nl + 1).min(rest.len());
        line_no += 1;
        Some((line_no, text))
    };

    match read_line(&mut pos) {
        Some((_, l)) if l.trim() == SENTINEL => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing `{SENTINEL}` sentinel"),
            })
        }
    }

    let mut binary = false;
    let mut little = true;
    let mut frames: Option<usize> = None;
    let mut n_channels: Option<usize> = None;
    let mut breaks = false;
    let mut rate: Option<f64> = None;
    let mut names: Vec<(usize, String)> = Vec::new();
    let end_line;
    loop {
        let Some((n, line)) = read_line(&mut pos) else {
            return Err(Error::Parse {
                line: line_no + 1,
                message: format!("header not terminated by `{HEADER_END}`"),
            });
        };
        let line = line.trim();
        if line == HEADER_END {
            end_line = n;
            break;
        }
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once(char::is_whitespace) {
            Some((k, v)) => (k, v.trim()),
            None => (line, ""),
        };
        let bad = |what: &str| Error::Parse {
            line: n,
            message: format!("bad {what} `{value}`"),
        };
        match key {
            "DataType" => match value {
                "binary" => binary = true,
                "ascii" => binary = false,
                _ => return Err(bad("DataType")),
            },
            "ByteOrder" => match value {
                "01" | "LSB" => little = true,
                "10" | "MSB" => little = false,
                _ => return Err(bad("ByteOrder")),
            },
            "NumFrames" => frames = Some(value.parse().map_err(|_| bad("NumFrames"))?),
            "NumChannels" => n_channels = Some(value.parse().map_err(|_| bad("NumChannels"))?),
            "NumAuxChannels" => {
                let aux: usize = value.parse().map_err(|_| bad("NumAuxChannels"))?;
                if aux != 0 {
                    return Err(Error::Parse {
                        line: n,
                        message: "auxiliary channels are not supported".into(),
                    });
                }
            }
            "BreaksPresent" => breaks = value == "true",
            "SampleRate" => rate = Some(value.parse().map_err(|_| bad("SampleRate"))?),
            k if k.starts_with("Channel_") => {
                let idx = k["Channel_".len()..]
                    .parse()
                    .map_err(|_| bad("channel index"))?;
                if value.is_empty() {
                    return Err(bad("channel name"));
                }
                names.push((idx, value.to_string()));
            }
            _ => {}
        }
    }

    let missing = |what: &str| Error::Parse {
        line: end_line,
        message: format!("header lacks {what}"),
    };
    let frames = frames.ok_or_else(|| missing("NumFrames"))?;
    let n_channels = n_channels.ok_or_else(|| missing("NumChannels"))?;
    if frames == 0 {
        return Err(Error::Parse {
            line: end_line,
            message: "NumFrames is zero".into(),
        });
    }
    names.sort();
    let channels: Vec<String> = (0..n_channels)
        .map(|i| {
            names
                .iter()
                .find(|(j, _)| *j == i)
                .map(|(_, n)| n.clone())
                .ok_or_else(|| missing(&format!("Channel_{i}")))
        })
        .collect::<Result<_>>()?;

    let per_frame = 1 + usize::from(breaks) + n_channels;
    let expected = frames * per_frame;
    let payload = &bytes[pos.min(bytes.len())..];
    let values: Vec<f32> = if binary {
        if payload.len() != expected * 4 {
            return Err(Error::PayloadLength {
                expected: expected * 4,
                found: payload.len(),
                unit: "bytes",
            });
        }
        payload
            .chunks_exact(4)
            .map(|b| {
                let b: [u8; 4] = b.try_into().unwrap();
                if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect()
    } else {
        let text = String::from_utf8_lossy(payload);
        let mut vals = Vec::with_capacity(expected);
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                vals.push(tok.parse::<f32>().map_err(|_| Error::Parse {
                    line: end_line + 1 + i,
                    message: format!("bad value `{tok}`"),
                })?);
            }
        }
        if vals.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: vals.len(),
                unit: "values",
            });
        }
        vals
    };

    let mut data = Array2::<f32>::zeros((frames, n_channels));
    let mut times = Vec::with_capacity(frames);
    for (t, frame) in values.chunks_exact(per_frame).enumerate() {
        times.push(frame[0] as f64);
        let present = !breaks || frame[1] != 0.0;
        let vals = &frame[1 + usize::from(breaks)..];
        for (c, &v) in vals.iter().enumerate() {
            data[[t, c]] = if present { v } else { f32::NAN };
        }
    }

    let rate = match rate {
        Some(r) => r,
        None if frames >= 2 => {
            let span = times[frames - 1] - times[0];
            if span <= 0.0 {
                return Err(Error::Parse {
                    line: end_line,
                    message: "time stamps do not increase".into(),
                });
            }
            let r = (frames - 1) as f64 / span;
            if (r - r.round()).abs() < 1e-3 * r {
                r.round()
            } else {
                r
            }
        }
        None => return Err(missing("SampleRate (single-frame track)")),
    };
    EmaTrajectory::new(channels, rate, data)
}

/// Serialises a trajectory as an EST track. Invalid cells are written as
/// NaN; `SampleRate` is recorded so the rate survives exactly.
pub fn write_est_track(ema: &EmaTrajectory, encoding: EstEncoding) -> Vec<u8> {
    let (dtype, order) = match encoding {
        EstEncoding::Ascii => ("ascii", "01"),
        EstEncoding::BinaryLittle => ("binary", "01"),
        EstEncoding::BinaryBig => ("binary", "10"),
    };
    let mut header = format!(
        "{SENTINEL}\nDataType {dtype}\nByteOrder {order}\nNumFrames {}\nNumChannels {}\nNumAuxChannels 0\nEqualSpace 1\nBreaksPresent true\nSampleRate {}\nCommentChar ;\n\n",
        ema.frames(),
        ema.channels.len(),
        ema.rate_hz
    );
    for (i, c) in ema.channels.iter().enumerate() {
        header.push_str(&format!("Channel_{i} {c}\n"));
    }
    header.push_str(HEADER_END);
    header.push('\n');
    let mut out = header.into_bytes();
    for t in 0..ema.frames() {
        let mut frame = vec![(t as f64 / ema.rate_hz) as f32, 1.0];
        frame.extend(ema.data.row(t).iter().copied());
        match encoding {
            EstEncoding::Ascii => {
                let line: Vec<String> = frame.iter().map(|v| format!("{v:?}")).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            EstEncoding::BinaryLittle => frame.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            EstEncoding::BinaryBig => frame.iter().for_each(|v| out.extend_from_slice(&v.to_be_bytes())),
        }
    }
    out
}
