//! Gamma-emitter database and air photon-interaction data.
//!
//! The on-disk format is line oriented UTF-8 text with `#` comments and three
//! kinds of sections:
//!
//! ```text
//! [air]
//! rho_kg_m3 1.205
//! [photon]
//! # energy_MeV mu_per_m mu_a_over_rho_m2_per_kg berger_a berger_b
//! 0.5 1.0498e-2 2.966e-3 1.43864 0.17715
//! [nuclide Cs-137]
//! half_life_s 9.4918e8
//! 0.661657 0.851
//! ```
//!
//! Photon coefficients are interpolated log-log in energy. Buildup uses the
//! Berger form `B = 1 + a(E)·μr·exp(b(E)·μr)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

/// Photons below this energy are rejected at load time.
pub const MIN_LINE_ENERGY_MEV: f64 = 0.01;
const MAX_LINE_ENERGY_MEV: f64 = 10.0;
const MAX_LINE_YIELD: f64 = 3.0;

const DEFAULT_DB: &str = include_str!("../data/nuclides.dat");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("nuclide {nuclide}: {message}")]
    Validation { nuclide: String, message: String },
    #[error("photon table: {0}")]
    Photon(String),
    #[error("nuclide {nuclide}: line energy {energy} MeV outside photon grid [{min}, {max}] MeV")]
    Coverage {
        nuclide: String,
        energy: f64,
        min: f64,
        max: f64,
    },
    #[error("energy {energy} MeV outside photon grid [{min}, {max}] MeV")]
    EnergyOutOfRange { energy: f64, min: f64, max: f64 },
    #[error("unknown nuclide {0}")]
    UnknownNuclide(String),
    #[error("cannot parse nuclide name {0:?}")]
    BadName(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLine {
    /// Photon energy, MeV.
    pub energy: f64,
    /// Photons emitted per decay.
    pub yield_per_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclideRecord {
    pub name: String,
    pub half_life_s: f64,
    /// Sorted ascending by energy.
    pub lines: Vec<GammaLine>,
}

impl NuclideRecord {
    pub fn max_energy(&self) -> f64 {
        self.lines.last().map_or(0.0, |l| l.energy)
    }

    /// Σ yield·energy, MeV per decay.
    pub fn energy_per_decay(&self) -> f64 {
        self.lines.iter().map(|l| l.yield_per_decay * l.energy).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirPhotonTable {
    pub energies: Vec<f64>,
    /// Linear attenuation coefficient, 1/m.
    pub mu: Vec<f64>,
    /// Mass energy-absorption coefficient, m²/kg.
    pub mu_a_over_rho: Vec<f64>,
    /// kg/m³.
    pub rho_air: f64,
    pub buildup_a: Vec<f64>,
    pub buildup_b: Vec<f64>,
}

impl AirPhotonTable {
    pub fn min_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn max_energy(&self) -> f64 {
        self.energies[self.energies.len() - 1]
    }

    fn check_range(&self, energy: f64) -> Result<(), DbError> {
        if !(energy >= self.min_energy() && energy <= self.max_energy()) {
            return Err(DbError::EnergyOutOfRange {
                energy,
                min: self.min_energy(),
                max: self.max_energy(),
            });
        }
        Ok(())
    }

    /// Locates `energy` on the grid: either an exact knot or the bracketing
    /// segment with its log-space weight.
    fn locate(&self, energy: f64) -> Knot {
        let e = &self.energies;
        match e.binary_search_by(|k| k.total_cmp(&energy)) {
            Ok(i) => Knot::Exact(i),
            Err(i) => {
                let hi = i.clamp(1, e.len() - 1);
                let lo = hi - 1;
                let t = (energy / e[lo]).ln() / (e[hi] / e[lo]).ln();
                Knot::Between(lo, t)
            }
        }
    }

    fn loglog(&self, values: &[f64], energy: f64) -> f64 {
        match self.locate(energy) {
            Knot::Exact(i) => values[i],
            Knot::Between(lo, t) => {
                let (a, b) = (values[lo].ln(), values[lo + 1].ln());
                (a + t * (b - a)).exp()
            }
        }
    }

    /// Berger coefficients at `energy`, clamped to the grid span.
    pub fn berger(&self, energy: f64) -> (f64, f64) {
        let e = energy.clamp(self.min_energy(), self.max_energy());
        (self.loglog(&self.buildup_a, e), self.loglog(&self.buildup_b, e))
    }

    fn validate(&self) -> Result<(), DbError> {
        let n = self.energies.len();
        if n < 2 {
            return Err(DbError::Photon("need at least two grid energies".into()));
        }
        for col in [&self.mu, &self.mu_a_over_rho, &self.buildup_a, &self.buildup_b] {
            if col.len() != n {
                return Err(DbError::Photon("column length mismatch".into()));
            }
        }
        if self.energies[0] < MIN_LINE_ENERGY_MEV {
            return Err(DbError::Photon(format!(
                "lowest grid energy {} below {} MeV",
                self.energies[0], MIN_LINE_ENERGY_MEV
            )));
        }
        if self.energies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DbError::Photon("energies must be strictly ascending".into()));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.mu) || !positive(&self.mu_a_over_rho) {
            return Err(DbError::Photon("mu and mu_a/rho must be positive".into()));
        }
        // log-log interpolation of the buildup coefficients needs a, b > 0
        if !positive(&self.buildup_a) || !positive(&self.buildup_b) {
            return Err(DbError::Photon("Berger coefficients must be positive".into()));
        }
        if !(1.0..=1.4).contains(&self.rho_air) {
            return Err(DbError::Photon(format!("rho_air {} outside [1.0, 1.4]", self.rho_air)));
        }
        Ok(())
    }
}

enum Knot {
    Exact(usize),
    Between(usize, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclideDb {
    pub nuclides: BTreeMap<String, NuclideRecord>,
    pub photon: AirPhotonTable,
}

impl NuclideDb {
    /// The database shipped with the crate (17 emitters).
    pub fn default_db() -> Self {
        load_db(DEFAULT_DB.as_bytes()).expect("shipped nuclide database is valid")
    }

    pub fn get(&self, name: &str) -> Result<&NuclideRecord, DbError> {
        let key = canonical_name(name)?;
        self.nuclides.get(&key).ok_or(DbError::UnknownNuclide(key))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nuclides.keys().map(String::as_str)
    }

    /// Linear attenuation (1/m) and mass energy-absorption (m²/kg) coefficients.
    pub fn attenuation(&self, energy: f64) -> Result<(f64, f64), DbError> {
        self.photon.check_range(energy)?;
        Ok((
            self.photon.loglog(&self.photon.mu, energy),
            self.photon.loglog(&self.photon.mu_a_over_rho, energy),
        ))
    }

    /// Berger buildup factor for path length `mu_r` (in mean free paths).
    pub fn buildup(&self, energy: f64, mu_r: f64) -> f64 {
        let (a, b) = self.photon.berger(energy);
        berger(a, b, mu_r)
    }
}

/// `1 + a·μr·exp(b·μr)`; exactly 1 at zero path length.
#[inline]
pub fn berger(a: f64, b: f64, mu_r: f64) -> f64 {
    if mu_r <= 0.0 {
        return 1.0;
    }
    1.0 + a * mu_r * (b * mu_r).exp()
}

/// Canonicalizes `Cs-137`, `137Cs`, `cs137`, `CS 137` to `Cs-137`.
pub fn canonical_name(raw: &str) -> Result<String, DbError> {
    let bad = || DbError::BadName(raw.to_string());
    let compact: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .collect();
    if compact.is_empty() || !compact.is_ascii() {
        return Err(bad());
    }
    let (symbol, mass) = if compact.as_bytes()[0].is_ascii_digit() {
        let split = compact.find(|c: char| !c.is_ascii_digit()).ok_or_else(bad)?;
        let (m, s) = compact.split_at(split);
        (s, m)
    } else {
        let split = compact.find(|c: char| c.is_ascii_digit()).ok_or_else(bad)?;
        compact.split_at(split)
    };
    if !(1..=2).contains(&symbol.len())
        || !symbol.chars().all(|c| c.is_ascii_alphabetic())
        || mass.is_empty()
        || !mass.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let mass: u32 = mass.parse().map_err(|_| bad())?;
    let mut sym = symbol.to_ascii_lowercase();
    sym[..1].make_ascii_uppercase();
    Ok(format!("{sym}-{mass}"))
}

enum Section {
    None,
    Air,
    Photon,
    Nuclide(String),
}

#[derive(Default)]
struct NuclideDraft {
    half_life: Option<f64>,
    lines: Vec<GammaLine>,
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, DbError> {
    let v: f64 = tok.parse().map_err(|_| DbError::Parse {
        line,
        message: format!("bad {what} {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(DbError::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

/// Parses and validates a database from the text format.
pub fn load_db<R: BufRead>(source: R) -> Result<NuclideDb, DbError> {
    let mut section = Section::None;
    let mut rho_air = None;
    let mut photon_rows: Vec<[f64; 5]> = Vec::new();
    let mut drafts: BTreeMap<String, NuclideDraft> = BTreeMap::new();

    for (idx, raw) in source.lines().enumerate() {
        let lineno = idx + 1;
        let raw = raw.map_err(|e| DbError::Io(e.to_string()))?;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(header) = text.strip_prefix('[') {
            let header = header.strip_suffix(']').ok_or(DbError::Parse {
                line: lineno,
                message: "unterminated section header".into(),
            })?;
            let mut parts = header.split_whitespace();
            section = match (parts.next(), parts.next(), parts.next()) {
                (Some("air"), None, _) => Section::Air,
                (Some("photon"), None, _) => Section::Photon,
                (Some("nuclide"), Some(name), None) => {
                    let name = canonical_name(name).map_err(|e| DbError::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })?;
                    if drafts.contains_key(&name) {
                        return Err(DbError::Validation {
                            nuclide: name,
                            message: format!("duplicate section at line {lineno}"),
                        });
                    }
                    drafts.insert(name.clone(), NuclideDraft::default());
                    Section::Nuclide(name)
                }
                _ => {
                    return Err(DbError::Parse {
                        line: lineno,
                        message: format!("unknown section [{header}]"),
                    })
                }
            };
            continue;
        }
        let toks: Vec<&str> = text.split_whitespace().collect();
        match &section {
            Section::None => {
                return Err(DbError::Parse {
                    line: lineno,
                    message: "data outside any section".into(),
                })
            }
            Section::Air => match toks.as_slice() {
                ["rho_kg_m3", v] => rho_air = Some(parse_f64(v, lineno, "rho_kg_m3")?),
                _ => {
                    return Err(DbError::Parse {
                        line: lineno,
                        message: "expected `rho_kg_m3 <value>`".into(),
                    })
                }
            },
            Section::Photon => {
                if toks.len() != 5 {
                    return Err(DbError::Parse {
                        line: lineno,
                        message: format!("photon row needs 5 columns, got {}", toks.len()),
                    });
                }
                let mut row = [0.0; 5];
                for (slot, tok) in row.iter_mut().zip(&toks) {
                    *slot = parse_f64(tok, lineno, "photon value")?;
                }
                photon_rows.push(row);
            }
            Section::Nuclide(name) => {
                let draft = drafts.get_mut(name).expect("section registered");
                match toks.as_slice() {
                    ["half_life_s", v] => draft.half_life = Some(parse_f64(v, lineno, "half_life_s")?),
                    [e, y] => draft.lines.push(GammaLine {
                        energy: parse_f64(e, lineno, "energy")?,
                        yield_per_decay: parse_f64(y, lineno, "yield")?,
                    }),
                    _ => {
                        return Err(DbError::Parse {
                            line: lineno,
                            message: "expected `energy yield` or `half_life_s <value>`".into(),
                        })
                    }
                }
            }
        }
    }

    let photon = AirPhotonTable {
        energies: photon_rows.iter().map(|r| r[0]).collect(),
        mu: photon_rows.iter().map(|r| r[1]).collect(),
        mu_a_over_rho: photon_rows.iter().map(|r| r[2]).collect(),
        rho_air: rho_air.ok_or_else(|| DbError::Photon("missing [air] rho_kg_m3".into()))?,
        buildup_a: photon_rows.iter().map(|r| r[3]).collect(),
        buildup_b: photon_rows.iter().map(|r| r[4]).collect(),
    };
    photon.validate()?;

    let mut nuclides = BTreeMap::new();
    for (name, draft) in drafts {
        let record = finish_nuclide(&name, draft, &photon)?;
        nuclides.insert(name, record);
    }
    Ok(NuclideDb { nuclides, photon })
}

fn finish_nuclide(
    name: &str,
    draft: NuclideDraft,
    photon: &AirPhotonTable,
) -> Result<NuclideRecord, DbError> {
    let invalid = |message: String| DbError::Validation {
        nuclide: name.to_string(),
        message,
    };
    let half_life_s = draft
        .half_life
        .ok_or_else(|| invalid("missing half_life_s".into()))?;
    if half_life_s <= 0.0 {
        return Err(invalid(format!("half_life_s must be positive, got {half_life_s}")));
    }
    if draft.lines.is_empty() {
        return Err(invalid("no gamma lines".into()));
    }
    let mut lines = draft.lines;
    for l in &lines {
        if !(l.energy >= MIN_LINE_ENERGY_MEV && l.energy <= MAX_LINE_ENERGY_MEV) {
            return Err(invalid(format!(
                "line energy {} MeV outside [{MIN_LINE_ENERGY_MEV}, {MAX_LINE_ENERGY_MEV}]",
                l.energy
            )));
        }
        if !(l.yield_per_decay > 0.0 && l.yield_per_decay <= MAX_LINE_YIELD) {
            return Err(invalid(format!(
                "yield {} at {} MeV outside (0, {MAX_LINE_YIELD}]",
                l.yield_per_decay, l.energy
            )));
        }
        if l.energy < photon.min_energy() || l.energy > photon.max_energy() {
            return Err(DbError::Coverage {
                nuclide: name.to_string(),
                energy: l.energy,
                min: photon.min_energy(),
                max: photon.max_energy(),
            });
        }
    }
    lines.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(NuclideRecord {
        name: name.to_string(),
        half_life_s,
        lines,
    })
}

/// Writes the normalized text form: no comments, canonical names, sorted lines.
pub fn serialize_db(db: &NuclideDb) -> String {
    let mut out = String::new();
    let p = &db.photon;
    let _ = writeln!(out, "[air]\nrho_kg_m3 {}\n\n[photon]", p.rho_air);
    for i in 0..p.energies.len() {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            p.energies[i], p.mu[i], p.mu_a_over_rho[i], p.buildup_a[i], p.buildup_b[i]
        );
    }
    for rec in db.nuclides.values() {
        let _ = writeln!(out, "\n[nuclide {}]\nhalf_life_s {}", rec.name, rec.half_life_s);
        for l in &rec.lines {
            let _ = writeln!(out, "{} {}", l.energy, l.yield_per_decay);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "\
# test file
[air]
rho_kg_m3 1.2
[photon]
0.1 0.0186 0.00232 3.0 0.2
1.0 0.0077 0.0028 1.1 0.09
2.0 0.0054 0.0023 0.8 0.03
[nuclide 137Cs]
half_life_s 9.5e8
0.661657 0.851
[nuclide co60]
half_life_s 1.66e8
1.332492 0.9998
1.173228 0.9985
";

    #[test]
    fn loads_two_nuclides_and_round_trips() {
        let db = load_db(TWO.as_bytes()).unwrap();
        assert_eq!(db.names().collect::<Vec<_>>(), ["Co-60", "Cs-137"]);
        assert!(db.nuclides["Co-60"].lines[0].energy < db.nuclides["Co-60"].lines[1].energy);
        let text = serialize_db(&db);
        let again = load_db(text.as_bytes()).unwrap();
        assert_eq!(db, again);
        assert_eq!(serialize_db(&again), text);
    }

    #[test]
    fn zero_yield_names_nuclide() {
        let bad = TWO.replace("0.661657 0.851", "0.661657 0");
        match load_db(bad.as_bytes()) {
            Err(DbError::Validation { nuclide, .. }) => assert_eq!(nuclide, "Cs-137"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let bad = TWO.replace("0.661657 0.851", "0.661657 abc");
        assert!(matches!(load_db(bad.as_bytes()), Err(DbError::Parse { line: 10, .. })));
    }

    #[test]
    fn energy_above_grid_is_coverage_error() {
        let bad = TWO.replace("0.661657 0.851", "2.5 0.851");
        assert!(matches!(load_db(bad.as_bytes()), Err(DbError::Coverage { .. })));
    }

    #[test]
    fn sub_10kev_line_rejected() {
        let bad = TWO.replace("0.661657 0.851", "0.005 0.851");
        assert!(matches!(load_db(bad.as_bytes()), Err(DbError::Validation { .. })));
    }

    #[test]
    fn name_forms_canonicalize() {
        for raw in ["Cs-137", "137Cs", "cs137", "CS 137", "137-cs"] {
            assert_eq!(canonical_name(raw).unwrap(), "Cs-137");
        }
        assert!(canonical_name("Xx").is_err());
        assert!(canonical_name("137").is_err());
        assert!(canonical_name("Abc-1").is_err());
    }

    #[test]
    fn default_db_has_the_seventeen() {
        let db = NuclideDb::default_db();
        let expected = [
            "Ar-41", "Co-60", "Cs-134", "Cs-137", "Eu-152", "Eu-154", "Eu-155", "I-131",
            "I-132", "Kr-85", "Kr-87", "Kr-88", "Na-22", "Ru-103", "Ru-106", "Sr-85", "Xe-135",
        ];
        assert_eq!(db.names().collect::<Vec<_>>(), expected);
        for rec in db.nuclides.values() {
            let s = rec.energy_per_decay();
            assert!(s.is_finite() && s > 0.0, "{}", rec.name);
        }
    }

    #[test]
    fn attenuation_exact_at_knots_and_geometric_between() {
        let db = load_db(TWO.as_bytes()).unwrap();
        assert_eq!(db.attenuation(1.0).unwrap(), (0.0077, 0.0028));
        // Independent hand computation: geometric mean energy of the 1-2 MeV
        // segment maps to geometric means of the knot values.
        let e = (1.0f64 * 2.0).sqrt();
        let (mu, mua) = db.attenuation(e).unwrap();
        assert!((mu - 0.006_448_255_578_061_403).abs() / mu < 1e-12);
        assert!((mua - 0.002_537_715_508_089_904).abs() / mua < 1e-12);
        assert!(db.attenuation(0.05).is_err());
        assert!(db.attenuation(2.5).is_err());
    }

    #[test]
    fn buildup_zero_path_is_one_and_monotone() {
        let db = NuclideDb::default_db();
        for e in [0.05, 0.3, 0.662, 1.33, 2.5] {
            assert_eq!(db.buildup(e, 0.0), 1.0);
            assert!(db.buildup(e, 1e-6) > 1.0);
        }
        // closed form at 1 MeV knot: a = 1.10458, b = 0.09068
        let expect = |m: f64| 1.0 + 1.10458 * m * (0.09068 * m).exp();
        let seq: Vec<f64> = [1.0, 2.0, 5.0].iter().map(|&m| db.buildup(1.0, m)).collect();
        for (got, m) in seq.iter().zip([1.0, 2.0, 5.0]) {
            assert!((got - expect(m)).abs() < 1e-12);
        }
        assert!(seq[0] < seq[1] && seq[1] < seq[2]);
    }
}
