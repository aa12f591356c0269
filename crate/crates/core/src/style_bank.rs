//! Per-domain style entries built from the synthetic translated images, the
//! `SIDB` file format, and auxiliary-domain selection by cosine similarity.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! "SIDB" | u32 version=1 | u32 c | u32 N | u32 domain_count
//! per domain:  u16 name_len | name bytes (UTF-8)
//! per entry:   c x f32 mu | c x f32 sigma | c x f32 gap
//! ```
//!
//! Entries are grouped by domain in declaration order, `k` ascending.

use std::fmt;
use std::path::Path;

use crate::error::{FormatError, Result, SidaError};
use crate::format::{self, ByteReader};
use crate::tensor::{channel_stats, cosine_similarity, global_average_pool, FeatureMap, StyleStats};

pub const BANK_MAGIC: &[u8; 4] = b"SIDB";
pub const BANK_VERSION: u32 = 1;

/// Name of an image domain ("night", "fog", ...). Nonempty, at most 255 bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.len() > 255 {
            return Err(SidaError::Config(format!(
                "domain name must be 1..=255 bytes, got {} bytes",
                name.len()
            )));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleEntry {
    pub domain: DomainId,
    pub stats: StyleStats,
    /// Pooled feature used for similarity ranking.
    pub gap: Vec<f32>,
    /// 1-based index of the synthetic image within its domain.
    pub source_index: usize,
}

pub fn build_entry(domain: DomainId, f: &FeatureMap, k: usize) -> StyleEntry {
    StyleEntry {
        domain,
        stats: channel_stats(f),
        gap: global_average_pool(f),
        source_index: k,
    }
}

/// Immutable collection of `N` style entries for each of at least two domains.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleBank {
    channels: usize,
    entries_per_domain: usize,
    domains: Vec<DomainId>,
    entries: Vec<StyleEntry>,
}

impl StyleBank {
    /// Groups `entries` by domain (first-appearance order, `k` ascending) and
    /// checks the structural invariants.
    pub fn new(entries: Vec<StyleEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| SidaError::Config("style bank needs entries".into()))?;
        let channels = first.stats.channels();
        let mut domains: Vec<DomainId> = Vec::new();
        for e in &entries {
            if e.stats.channels() != channels || e.gap.len() != channels {
                return Err(FormatError::Channels(format!(
                    "entry {}#{} has {} stat / {} gap channels, bank has {channels}",
                    e.domain,
                    e.source_index,
                    e.stats.channels(),
                    e.gap.len()
                ))
                .into());
            }
            if !domains.contains(&e.domain) {
                domains.push(e.domain.clone());
            }
        }
        if domains.len() < 2 {
            return Err(SidaError::Config(
                "style bank needs at least two domains".into(),
            ));
        }
        let mut grouped = Vec::with_capacity(entries.len());
        let mut per_domain = None;
        for d in &domains {
            let mut mine: Vec<StyleEntry> =
                entries.iter().filter(|e| &e.domain == d).cloned().collect();
            mine.sort_by_key(|e| e.source_index);
            let n = mine.len();
            if *per_domain.get_or_insert(n) != n {
                return Err(SidaError::Config(format!(
                    "domain {d} has {n} entries, expected {}",
                    per_domain.unwrap()
                )));
            }
            for (i, e) in mine.iter().enumerate() {
                if e.source_index != i + 1 {
                    return Err(SidaError::Config(format!(
                        "domain {d} source indices must be 1..={n}"
                    )));
                }
            }
            grouped.extend(mine);
        }
        Ok(Self {
            channels,
            entries_per_domain: per_domain.unwrap_or(0),
            domains,
            entries: grouped,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn entries_per_domain(&self) -> usize {
        self.entries_per_domain
    }

    pub fn domains(&self) -> &[DomainId] {
        &self.domains
    }

    pub fn entries(&self) -> &[StyleEntry] {
        &self.entries
    }

    pub fn contains(&self, domain: &DomainId) -> bool {
        self.domains.contains(domain)
    }

    pub fn domain_entries(&self, domain: &DomainId) -> Result<&[StyleEntry]> {
        let pos = self
            .domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| SidaError::MissingDomain(domain.to_string()))?;
        let n = self.entries_per_domain;
        Ok(&self.entries[pos * n..(pos + 1) * n])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.channels;
        let mut buf = Vec::with_capacity(20 + self.entries.len() * 12 * c);
        buf.extend_from_slice(BANK_MAGIC);
        format::put_u32(&mut buf, BANK_VERSION);
        format::put_u32(&mut buf, c as u32);
        format::put_u32(&mut buf, self.entries_per_domain as u32);
        format::put_u32(&mut buf, self.domains.len() as u32);
        for d in &self.domains {
            format::put_u16(&mut buf, d.as_str().len() as u16);
            buf.extend_from_slice(d.as_str().as_bytes());
        }
        for e in &self.entries {
            format::put_f32s(&mut buf, &e.stats.mu);
            format::put_f32s(&mut buf, &e.stats.sigma);
            format::put_f32s(&mut buf, &e.gap);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(BANK_MAGIC)?;
        let version = r.u32()?;
        if version != BANK_VERSION {
            return Err(FormatError::Version {
                expected: BANK_VERSION,
                found: version,
            }
            .into());
        }
        let c = r.u32()? as usize;
        let n = r.u32()? as usize;
        let domain_count = r.u32()? as usize;
        if c == 0 {
            return Err(FormatError::Channels("bank declares zero channels".into()).into());
        }
        if n == 0 || domain_count < 2 {
            return Err(FormatError::Malformed(format!(
                "bank declares N={n} and {domain_count} domains"
            ))
            .into());
        }
        let mut domains = Vec::with_capacity(domain_count.min(256));
        for _ in 0..domain_count {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|e| FormatError::Malformed(format!("domain name is not UTF-8: {e}")))?;
            let id = DomainId::new(name)
                .map_err(|e| FormatError::Malformed(e.to_string()))?;
            if domains.contains(&id) {
                return Err(FormatError::Malformed(format!("duplicate domain {id}")).into());
            }
            domains.push(id);
        }
        let mut entries = Vec::new();
        for d in &domains {
            for k in 1..=n {
                let mu = r.f32s(c)?;
                let sigma = r.f32s(c)?;
                let gap = r.f32s(c)?;
                entries.push(StyleEntry {
                    domain: d.clone(),
                    stats: StyleStats { mu, sigma },
                    gap,
                    source_index: k,
                });
            }
        }
        r.finish()?;
        Ok(Self {
            channels: c,
            entries_per_domain: n,
            domains,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Picks the foreign entry whose pooled feature is most cosine-similar to
/// `main.gap`. Ties go to the smaller domain name, then the smaller index.
pub fn select_auxiliary<'b>(main: &StyleEntry, bank: &'b StyleBank) -> Result<&'b StyleEntry> {
    let mut best: Option<(f64, &StyleEntry)> = None;
    for e in bank.entries().iter().filter(|e| e.domain != main.domain) {
        let sim = cosine_similarity(&main.gap, &e.gap)?;
        let better = match best {
            None => true,
            Some((s, b)) => {
                sim > s
                    || (sim == s
                        && (e.domain.as_str(), e.source_index)
                            < (b.domain.as_str(), b.source_index))
            }
        };
        if better {
            best = Some((sim, e));
        }
    }
    best.map(|(_, e)| e).ok_or_else(|| {
        SidaError::Selection(format!("bank holds no domain other than {}", main.domain))
    })
}

/// Auxiliary choice for every entry of `main_domain`, in `k` order.
pub fn auxiliary_table<'b>(
    bank: &'b StyleBank,
    main_domain: &DomainId,
) -> Result<Vec<(&'b StyleEntry, &'b StyleEntry)>> {
    bank.domain_entries(main_domain)?
        .iter()
        .map(|m| Ok((m, select_auxiliary(m, bank)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{RandomSource, SIGMA_FLOOR};

    fn d(s: &str) -> DomainId {
        DomainId::new(s).unwrap()
    }

    fn entry(domain: &str, k: usize, gap: Vec<f32>) -> StyleEntry {
        let c = gap.len();
        StyleEntry {
            domain: d(domain),
            stats: StyleStats::new(gap.clone(), vec![1.0; c]).unwrap(),
            gap,
            source_index: k,
        }
    }

    fn random_bank(seed: u64, domains: &[&str], n: usize, c: usize) -> StyleBank {
        let mut rng = RandomSource::new(seed);
        let mut entries = Vec::new();
        for dom in domains {
            for k in 1..=n {
                let f = FeatureMap::new(
                    3,
                    3,
                    c,
                    (0..9 * c).map(|_| rng.uniform() * 4.0 - 1.0).collect(),
                )
                .unwrap();
                entries.push(build_entry(d(dom), &f, k));
            }
        }
        StyleBank::new(entries).unwrap()
    }

    #[test]
    fn build_entry_of_constant_feature() {
        let f = FeatureMap::new(2, 2, 3, vec![0.5; 12]).unwrap();
        let e = build_entry(d("fog"), &f, 1);
        assert_eq!(e.stats.mu, vec![0.5; 3]);
        assert_eq!(e.stats.sigma, vec![SIGMA_FLOOR; 3]);
        assert_eq!(e.gap, e.stats.mu);
    }

    #[test]
    fn domain_name_limits() {
        assert!(DomainId::new("").is_err());
        assert!(DomainId::new("x".repeat(256)).is_err());
        assert!(DomainId::new("x".repeat(255)).is_ok());
    }

    #[test]
    fn exact_gap_match_wins() {
        let main = entry("snow", 1, vec![1.0, 2.0, 3.0]);
        let bank = StyleBank::new(vec![
            main.clone(),
            entry("night", 1, vec![3.0, 2.0, 1.0]),
            entry("rain", 1, vec![1.0, 2.0, 3.0]),
        ])
        .unwrap();
        let aux = select_auxiliary(&main, &bank).unwrap();
        assert_eq!(aux.domain, d("rain"));
    }

    #[test]
    fn ties_prefer_smaller_domain_name() {
        let main = entry("snow", 1, vec![1.0, 0.0]);
        let bank = StyleBank::new(vec![
            main.clone(),
            entry("rain", 1, vec![0.0, 1.0]),
            entry("fog", 1, vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(select_auxiliary(&main, &bank).unwrap().domain, d("fog"));
    }

    #[test]
    fn selection_needs_a_foreign_domain() {
        let bank = random_bank(1, &["a", "b"], 2, 4);
        let mut main = bank.entries()[0].clone();
        main.domain = d("a");
        let only_a = StyleBank {
            domains: vec![d("a")],
            entries: bank.entries()[..2].to_vec(),
            ..bank.clone()
        };
        assert!(matches!(
            select_auxiliary(&main, &only_a),
            Err(SidaError::Selection(_))
        ));
    }

    #[test]
    fn brute_force_agreement() {
        for seed in 0..10 {
            let bank = random_bank(seed, &["fog", "night", "snow"], 3, 6);
            for main in bank.domain_entries(&d("night")).unwrap() {
                let got = select_auxiliary(main, &bank).unwrap();
                let mut all: Vec<_> = bank
                    .entries()
                    .iter()
                    .filter(|e| e.domain != main.domain)
                    .map(|e| (cosine_similarity(&main.gap, &e.gap).unwrap(), e))
                    .collect();
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                assert_eq!(got, all[0].1);
            }
        }
    }

    #[test]
    fn never_selects_main_domain_and_is_scale_invariant() {
        let bank = random_bank(42, &["fog", "night", "rain", "snow"], 3, 5);
        let scaled = StyleBank::new(
            bank.entries()
                .iter()
                .map(|e| StyleEntry {
                    gap: e.gap.iter().map(|v| v * 7.5).collect(),
                    ..e.clone()
                })
                .collect(),
        )
        .unwrap();
        for (m, ms) in bank.entries().iter().zip(scaled.entries()) {
            let a = select_auxiliary(m, &bank).unwrap();
            let b = select_auxiliary(ms, &scaled).unwrap();
            assert_ne!(a.domain, m.domain);
            assert_eq!((&a.domain, a.source_index), (&b.domain, b.source_index));
        }
    }

    #[test]
    fn rejects_uneven_domains_and_channels() {
        let err = StyleBank::new(vec![
            entry("a", 1, vec![1.0]),
            entry("a", 2, vec![1.0]),
            entry("b", 1, vec![1.0]),
        ]);
        assert!(matches!(err, Err(SidaError::Config(_))));
        let err = StyleBank::new(vec![entry("a", 1, vec![1.0]), entry("b", 1, vec![1.0, 2.0])]);
        assert!(matches!(err, Err(SidaError::Format(FormatError::Channels(_)))));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bank = random_bank(3, &["night", "snow"], 3, 32);
        let back = StyleBank::from_bytes(&bank.to_bytes()).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.to_bytes(), bank.to_bytes());
    }

    #[test]
    fn header_layout() {
        let bank = random_bank(3, &["ab", "c"], 1, 2);
        let b = bank.to_bytes();
        assert_eq!(&b[..4], b"SIDB");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &2u32.to_le_bytes());
        assert_eq!(&b[20..24], &[2, 0, b'a', b'b']);
        assert_eq!(b.len(), 20 + 4 + 3 + 2 * 3 * 2 * 4);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let bytes = random_bank(5, &["night", "snow"], 3, 4).to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            StyleBank::from_bytes(&bad),
            Err(SidaError::Format(FormatError::BadMagic { .. }))
        ));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            StyleBank::from_bytes(&bad),
            Err(SidaError::Format(FormatError::Version { found: 2, .. }))
        ));

        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            StyleBank::from_bytes(cut),
            Err(SidaError::Format(FormatError::Truncated { .. }))
        ));

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            StyleBank::from_bytes(&bad),
            Err(SidaError::Format(FormatError::Channels(_)))
        ));

        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(
            StyleBank::from_bytes(&bad),
            Err(SidaError::Format(FormatError::TrailingBytes(1)))
        ));
    }
}
