//! Seeded synthetic crystal descriptions in the style of the real corpus.
//!
//! Band gaps depend mostly on cation, anion and geometry; volumes mostly on
//! the bond length. Both carry a little noise, so small models can learn
//! them. Used by tests, benches and offline demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::CrystalRecord;

const CATIONS: &[(&str, u8, f64)] = &[
    ("Na", 1, 0.9),
    ("K", 1, 0.8),
    ("Li", 1, 1.0),
    ("Mg", 2, 1.3),
    ("Ca", 2, 1.0),
    ("Sr", 2, 0.95),
    ("Al", 3, 1.6),
    ("Ga", 3, 1.8),
];

const ANIONS: &[(&str, u8, f64)] = &[
    ("Cl", 1, 2.2),
    ("Br", 1, 1.8),
    ("I", 1, 1.3),
    ("O", 2, 2.6),
    ("S", 2, 1.5),
    ("Se", 2, 1.1),
];

const GEOMETRIES: &[(&str, &str, u32)] = &[
    ("body-centered cubic", "eight", 8),
    ("octahedral", "six", 6),
    ("tetrahedral", "four", 4),
    ("trigonal planar", "three", 3),
];

const SYSTEMS: &[(&str, &str)] = &[
    ("cubic", "Pm-3m"),
    ("cubic", "Fm-3m"),
    ("tetragonal", "P4/nmm"),
    ("hexagonal", "P6_3/mmc"),
    ("orthorhombic", "Pnma"),
    ("trigonal", "R-3m"),
];

const PROTOTYPES: &[&str] = &["Rock Salt", "Tetraauricupride", "Matlockite", "Fluorite", "Wurtzite"];

fn formula(cation: &str, anion: &str, qc: u8, qa: u8) -> String {
    let (nc, na) = match (qc, qa) {
        (a, b) if a == b => (1, 1),
        (1, 2) => (2, 1),
        (2, 1) => (1, 2),
        (3, 1) => (1, 3),
        (3, 2) => (2, 3),
        _ => (qa, qc),
    };
    let part = |e: &str, n: u8| if n == 1 { e.to_string() } else { format!("{e}{n}") };
    format!("{}{}", part(cation, nc), part(anion, na))
}

/// `n` records with ids `syn-<seed>-<i>`.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<CrystalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ci = rng.random_range(0..CATIONS.len());
            let ai = rng.random_range(0..ANIONS.len());
            let gi = rng.random_range(0..GEOMETRIES.len());
            let si = rng.random_range(0..SYSTEMS.len());
            let pi = rng.random_range(0..PROTOTYPES.len());
            let (c, qc, c_gap) = CATIONS[ci];
            let (a, qa, a_gap) = ANIONS[ai];
            let (geom, count, coord) = GEOMETRIES[gi];
            let (system, group) = SYSTEMS[si];
            let bond: f64 = (rng.random_range(1.8..3.4f64) * 100.0).round() / 100.0;
            let with_angle = rng.random_bool(0.4);
            let angle: u32 = rng.random_range(90..=180);
            let f = formula(c, a, qc, qa);

            let mut d = format!(
                "{f} is {} structured and crystallizes in the {system} {group} space group. \
                 {c}{qc}+ is bonded in a {geom} geometry to {count} equivalent {a}{qa}- atoms. \
                 All {c}-{a} bond lengths are {bond:.2} Å.",
                PROTOTYPES[pi]
            );
            if with_angle {
                d.push_str(&format!(" The {a}-{c}-{a} bond angle is {angle} degrees."));
            }
            d.push_str(&format!(
                " {a}{qa}- is bonded to {count} equivalent {c}{qc}+ atoms to form a mixture of corner and edge-sharing {a}{c}{coord} polyhedra."
            ));

            let noise: f64 = rng.random_range(-0.05..0.05);
            let gap = (c_gap + a_gap - 0.1 * (bond - 2.5) + 0.05 * coord as f64 + noise).max(0.0);
            let sites = (qc + qa) as f64;
            let volume = 1.9 * bond.powi(3) * sites * (1.0 + 0.02 * coord as f64) + rng.random_range(-0.5..0.5);
            let direct = (ci + ai + gi) % 2 == 0;
            CrystalRecord {
                id: format!("syn-{seed}-{i}"),
                formula: f,
                description: d,
                band_gap: Some((gap * 1000.0).round() / 1000.0),
                volume: Some((volume * 100.0).round() / 100.0),
                is_gap_direct: Some(direct),
            }
        })
        .collect()
}

/// Writes records as CSV with the default schema column names.
pub fn to_csv(records: &[CrystalRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "formula", "description", "band_gap", "volume", "is_gap_direct"])
        .expect("in-memory write");
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.id.clone(),
            r.formula.clone(),
            r.description.clone(),
            opt(r.band_gap),
            opt(r.volume),
            r.is_gap_direct.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
