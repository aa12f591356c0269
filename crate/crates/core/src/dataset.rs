//! On-disk benchmark layout.
//!
//! ```text
//! <root>/source/{train,val}/imgNNNN.ppm, labNNNN.pgm, meta.csv
//! <root>/target/<domain>/...
//! <root>/bank/<domain>/...
//! ```
//!
//! Images are binary PPM (P6, maxval 255), labels binary PGM (P5, maxval 255,
//! value = class id). `meta.csv` lists one row per image with header
//! `file,domain,role,kind,global_intensity,field_angle`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{FormatError, Result, SidaError};
use crate::model::Image;
use crate::style_bank::DomainId;
use crate::synth::{Benchmark, DomainKind, LabelGrid, Role, ToySample};

pub const META_HEADER: &str = "file,domain,role,kind,global_intensity,field_angle";

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn encode_pgm(labels: &LabelGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.w, labels.h).into_bytes();
    out.extend_from_slice(&labels.data);
    out
}

/// Parses a binary netpbm header; returns `(width, height, payload)`.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Truncated {
                offset: pos,
                needed: 1,
            }
            .into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != magic {
        return Err(FormatError::Malformed(format!(
            "expected netpbm {magic}, found {:?}",
            tokens[0]
        ))
        .into());
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FormatError::Malformed(format!("bad netpbm number {s:?}")))
    };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(FormatError::Malformed(format!("maxval {maxval}, expected 255")).into());
    }
    Ok((w, h, bytes.get(pos..).unwrap_or(&[])))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (w, h, raster) = parse_netpbm(bytes, "P6")?;
    let n = w * h * 3;
    if raster.len() < n {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: n - raster.len(),
        }
        .into());
    }
    Image::new(h, w, raster[..n].iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelGrid> {
    let (w, h, raster) = parse_netpbm(bytes, "P5")?;
    if raster.len() < w * h {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: w * h - raster.len(),
        }
        .into());
    }
    LabelGrid::new(h, w, raster[..w * h].to_vec())
}

fn meta_row(out: &mut String, file: &str, s: &ToySample) {
    let (kind, gi, angle) = match &s.transform {
        Some(t) => (
            t.kind.name().to_string(),
            format!("{:.6}", t.global_intensity),
            t.field_angle
                .map_or_else(|| "none".to_string(), |a| format!("{a:.6}")),
        ),
        None => ("none".into(), format!("{:.6}", 0.0), "none".into()),
    };
    writeln!(out, "{file},{},{},{kind},{gi},{angle}", s.domain, s.role.as_str())
        .expect("write to string");
}

/// Writes one split directory (images, labels and `meta.csv`).
pub fn write_split(dir: &Path, samples: &[ToySample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut meta = String::from(META_HEADER);
    meta.push('\n');
    for (i, s) in samples.iter().enumerate() {
        let img = format!("img{i:04}.ppm");
        fs::write(dir.join(&img), encode_ppm(&s.image))?;
        fs::write(dir.join(format!("lab{i:04}.pgm")), encode_pgm(&s.labels))?;
        meta_row(&mut meta, &img, s);
    }
    fs::write(dir.join("meta.csv"), meta)?;
    Ok(())
}

pub fn source_dir(root: &Path, split: &str) -> PathBuf {
    root.join("source").join(split)
}

pub fn target_dir(root: &Path, domain: &str) -> PathBuf {
    root.join("target").join(domain)
}

pub fn bank_dir(root: &Path, domain: &str) -> PathBuf {
    root.join("bank").join(domain)
}

pub fn write_benchmark(root: &Path, b: &Benchmark) -> Result<()> {
    write_split(&source_dir(root, "train"), &b.source_train)?;
    write_split(&source_dir(root, "val"), &b.source_val)?;
    for (kind, samples) in &b.targets {
        write_split(&target_dir(root, kind.name()), samples)?;
    }
    for (kind, samples) in &b.bank {
        write_split(&bank_dir(root, kind.name()), samples)?;
    }
    Ok(())
}

/// Reads a split listed by its `meta.csv`. Transform metadata is restored
/// except for the rain/snow pattern seed, which is not persisted.
pub fn read_split(dir: &Path) -> Result<Vec<ToySample>> {
    let meta_path = dir.join("meta.csv");
    let meta = fs::read_to_string(&meta_path).map_err(|e| {
        SidaError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", meta_path.display()),
        ))
    })?;
    let mut lines = meta.lines();
    if lines.next() != Some(META_HEADER) {
        return Err(FormatError::Malformed(format!("{} has a bad header", meta_path.display())).into());
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(FormatError::Malformed(format!("meta row {line:?}")).into());
        }
        let file = cols[0];
        let lab = file.replacen("img", "lab", 1).replace(".ppm", ".pgm");
        let image = decode_ppm(&fs::read(dir.join(file))?)?;
        let labels = decode_pgm(&fs::read(dir.join(&lab))?)?;
        let role: Role = cols[2].parse()?;
        let transform = if cols[3] == "none" {
            None
        } else {
            let kind: DomainKind = cols[3].parse()?;
            let gi: f32 = cols[4]
                .parse()
                .map_err(|_| FormatError::Malformed(format!("intensity {:?}", cols[4])))?;
            let angle = match cols[5] {
                "none" => None,
                a => Some(
                    a.parse()
                        .map_err(|_| FormatError::Malformed(format!("angle {a:?}")))?,
                ),
            };
            Some(crate::synth::DomainTransform {
                kind,
                global_intensity: gi,
                field_angle: angle,
                pattern_seed: 0,
            })
        };
        out.push(ToySample {
            image,
            labels,
            domain: DomainId::new(cols[1])?,
            role,
            transform,
        });
    }
    Ok(out)
}

/// Subdirectory names under `<root>/<group>`, sorted.
pub fn list_domains(root: &Path, group: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root.join(group))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_benchmark, BenchmarkCounts};

    #[test]
    fn netpbm_round_trip() {
        let b = gen_benchmark(
            1,
            BenchmarkCounts {
                source_train: 1,
                source_val: 1,
                target_per_domain: 1,
                bank_per_domain: 1,
            },
        )
        .unwrap();
        let s = &b.targets[1].1[0];
        let bytes = encode_ppm(&s.image);
        assert!(bytes.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), s.image);
        assert_eq!(decode_pgm(&encode_pgm(&s.labels)).unwrap(), s.labels);
    }

    #[test]
    fn netpbm_errors() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n15\n\0").is_err());
        let with_comment = b"P5\n# hi\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(with_comment).unwrap().data, vec![1, 2]);
    }

    #[test]
    fn split_round_trip() {
        let b = gen_benchmark(
            2,
            BenchmarkCounts {
                source_train: 2,
                source_val: 1,
                target_per_domain: 2,
                bank_per_domain: 2,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_benchmark(dir.path(), &b).unwrap();
        let back = read_split(&target_dir(dir.path(), "snow")).unwrap();
        let orig = &b.targets[3].1;
        assert_eq!(back.len(), 2);
        for (x, y) in back.iter().zip(orig) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.domain, y.domain);
            let (tx, ty) = (x.transform.unwrap(), y.transform.unwrap());
            assert_eq!(tx.kind, ty.kind);
            assert!((tx.global_intensity - ty.global_intensity).abs() < 1e-6);
        }
        assert_eq!(
            list_domains(dir.path(), "bank").unwrap(),
            vec!["fog", "night", "rain", "snow"]
        );
        let meta = fs::read_to_string(bank_dir(dir.path(), "fog").join("meta.csv")).unwrap();
        assert!(meta.starts_with(META_HEADER));
        assert!(meta.contains("img0000.ppm,fog,synthetic-bank,fog,0.800000,none"));
    }
}
