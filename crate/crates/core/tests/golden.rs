mod common;

use llmprop::corpus::{load_dataset, Schema, Task};
use llmprop::textprep::{has_bond_angle, has_bond_length, preprocess, PreprocessConfig, ANG_TOKEN, CLS_TOKEN, NUM_TOKEN};
use llmprop::tokenizer::TokenizerBundle;

use common::goldens;

#[test]
fn goldens_match_byte_for_byte() {
    for g in goldens() {
        let out = preprocess(&g.raw, &PreprocessConfig::all());
        assert_eq!(out.text, g.processed, "{}", g.name);
        assert_eq!(out.num_substitutions, g.num, "{}", g.name);
        assert_eq!(out.ang_substitutions, g.ang, "{}", g.name);
        assert_eq!(out.stopwords_removed, g.stopwords_removed, "{}", g.name);
        assert!(!has_bond_length(&out.text) && !has_bond_angle(&out.text));
    }
}

#[test]
fn each_transform_alone() {
    let g = &goldens()[2];
    let only = |f: fn(&mut PreprocessConfig)| {
        let mut c = PreprocessConfig::none();
        f(&mut c);
        preprocess(&g.raw, &c).text
    };
    assert_eq!(preprocess(&g.raw, &PreprocessConfig::none()).text, g.raw);
    let num = only(|c| c.replace_num = true);
    assert_eq!(num.matches(NUM_TOKEN).count(), 3);
    assert!(num.contains("bent 120 degrees geometry"));
    let ang = only(|c| c.replace_ang = true);
    assert_eq!(ang.matches(ANG_TOKEN).count(), 2);
    assert!(ang.contains("1.75 Å"));
    assert!(only(|c| c.prepend_cls = true).starts_with(&format!("{CLS_TOKEN} SbCl6N2Se3Cl is")));
}

#[test]
fn tokenizer_round_trip_on_goldens() {
    let gs = goldens();
    let texts: Vec<String> = gs.iter().map(|g| g.processed.clone()).collect();
    let squash = |s: &str| s.split_whitespace().collect::<String>();
    for vocab in [120, 300] {
        let b = TokenizerBundle::train_vocab(&texts, vocab, 888).unwrap();
        for t in &texts {
            let enc = b.encode(t);
            assert_eq!(enc.ids.len(), enc.original_length);
            let dec = b.decode(&enc.ids);
            for special in [CLS_TOKEN, NUM_TOKEN, ANG_TOKEN] {
                assert_eq!(dec.matches(special).count(), t.matches(special).count());
            }
            assert_eq!(squash(&dec), squash(t));
        }
    }
}

#[test]
fn golden_records_ingest_in_every_format() {
    let gs = goldens();
    let dir = tempfile::tempdir().unwrap();
    let yes_no = |b: bool| if b { "Yes" } else { "No" };

    let mut csv = String::from("id,formula,description,band_gap,volume,is_gap_direct\n");
    let mut tsv = String::from("id\tformula\tdescription\tband_gap\tvolume\tis_gap_direct\n");
    let mut jsonl = String::new();
    for g in &gs {
        let r = &g.record;
        let direct = r.is_gap_direct.unwrap();
        csv.push_str(&format!(
            "{},,\"{}\",{},{},{}\n",
            r.id,
            r.description.replace('"', "\"\""),
            r.band_gap.unwrap(),
            r.volume.unwrap(),
            yes_no(direct)
        ));
        tsv.push_str(&format!(
            "{}\t\t{}\t{}\t{}\t{}\n",
            r.id,
            r.description,
            r.band_gap.unwrap(),
            r.volume.unwrap(),
            yes_no(direct)
        ));
        jsonl.push_str(&serde_json::to_string(&serde_json::json!({
            "id": r.id, "formula": "", "description": r.description,
            "band_gap": r.band_gap, "volume": r.volume, "is_gap_direct": direct,
        })).unwrap());
        jsonl.push('\n');
    }
    for (name, body) in [("g.csv", csv), ("g.tsv", tsv), ("g.jsonl", jsonl)] {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        let rep = load_dataset(&p, &Schema::default()).unwrap();
        assert!(rep.rejected.is_empty(), "{name}: {:?}", rep.rejected);
        assert_eq!(rep.records.len(), 3, "{name}");
        for (got, g) in rep.records.iter().zip(&gs) {
            assert_eq!(got.description, g.raw, "{name}");
            assert_eq!(got.label(Task::BandGap), g.record.band_gap, "{name}");
            assert_eq!(got.label(Task::Volume), g.record.volume, "{name}");
            assert_eq!(got.is_gap_direct, g.record.is_gap_direct, "{name}");
        }
    }
}
