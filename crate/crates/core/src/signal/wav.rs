//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float.
//!
//! 16-bit samples map to `[-1, 1)` by dividing by 32768. Float samples pass
//! through unchanged, so a float round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::MultichannelWaveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

fn bad(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Wav {
        field,
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(field, format!("truncated: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn decode_wav(buf: &[u8]) -> Result<MultichannelWaveform> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "riff_id")? != b"RIFF" {
        return Err(bad("riff_id", "expected `RIFF`"));
    }
    c.u32("riff_size")?;
    if c.take(4, "wave_id")? != b"WAVE" {
        return Err(bad("wave_id", "expected `WAVE`"));
    }
    let mut fmt: Option<Format> = None;
    loop {
        if c.pos >= buf.len() {
            return Err(bad("data", "no data chunk"));
        }
        let id = c.take(4, "chunk_id")?;
        let size = c.u32("chunk_size")? as usize;
        match id {
            b"fmt " => {
                let body = c.take(size, "fmt")?;
                let mut f = Cursor { buf: body, pos: 0 };
                let mut tag = f.u16("audio_format")?;
                let channels = f.u16("num_channels")?;
                let sample_rate = f.u32("sample_rate")?;
                f.u32("byte_rate")?;
                let block_align = f.u16("block_align")?;
                let bits = f.u16("bits_per_sample")?;
                if tag == FORMAT_EXTENSIBLE {
                    f.take(8, "extensible_header")?;
                    tag = f.u16("subformat")?;
                }
                let ok = matches!((tag, bits), (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32));
                if !ok {
                    return Err(bad("audio_format", format!("unsupported format {tag} with {bits} bits")));
                }
                if channels == 0 {
                    return Err(bad("num_channels", "zero channels"));
                }
                if sample_rate == 0 {
                    return Err(bad("sample_rate", "zero sample rate"));
                }
                if block_align as usize != channels as usize * bits as usize / 8 {
                    return Err(bad("block_align", format!("{block_align} inconsistent with {channels}×{bits} bits")));
                }
                fmt = Some(Format {
                    tag,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let f = fmt.ok_or_else(|| bad("fmt", "data chunk before fmt chunk"))?;
                let body = c.take(size, "data")?;
                let width = f.bits as usize / 8;
                let frame = width * f.channels as usize;
                if body.len() % frame != 0 {
                    return Err(bad("data", format!("{} bytes is not a whole number of frames", body.len())));
                }
                let n = body.len() / frame;
                let mut ch = vec![Vec::with_capacity(n); f.channels as usize];
                for fr in body.chunks_exact(frame) {
                    for (k, s) in fr.chunks_exact(width).enumerate() {
                        let v = if f.tag == FORMAT_PCM {
                            i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
                        } else {
                            f32::from_le_bytes(s.try_into().unwrap())
                        };
                        ch[k].push(v);
                    }
                }
                return MultichannelWaveform::new(ch, f.sample_rate);
            }
            _ => {
                c.take(size + size % 2, "chunk")?;
            }
        }
        if size % 2 == 1 && id == b"fmt " {
            c.take(1, "chunk_pad")?;
        }
    }
}

pub fn encode_wav(wave: &MultichannelWaveform, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let channels = wave.channels() as u16;
    let block = channels as u32 * bits as u32 / 8;
    let data_len = block * wave.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate() * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for n in 0..wave.len() {
        for c in 0..wave.channels() {
            let v = wave.channel(c)[n];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

pub fn read_wav(path: &Path) -> Result<MultichannelWaveform> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&buf)
}

pub fn write_wav(path: &Path, wave: &MultichannelWaveform, format: SampleFormat) -> Result<()> {
    fs::write(path, encode_wav(wave, format)).map_err(|e| Error::io(path, e))
}
