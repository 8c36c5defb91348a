//! Input-text transforms applied to crystal descriptions before tokenization.
//!
//! Four transforms, each individually switchable through [`PreprocessConfig`]:
//! bond lengths become `[NUM]`, bond angles become `[ANG]`, stopwords are
//! dropped, and `[CLS]` is prepended. [`preprocess`] always applies them in
//! that order.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLS_TOKEN: &str = "[CLS]";
pub const NUM_TOKEN: &str = "[NUM]";
pub const ANG_TOKEN: &str = "[ANG]";

const SHIPPED_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("stopword {0:?} is numeric or a unit/sign symbol and would strip physical content")]
    ProtectedStopword(String),
    #[error("cannot read stopword list {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

// The leading group stops a match from starting inside a word or a longer
// number (e.g. the `1` in `Na1+` or the `3` in `2.5.3`).
static BOND_LENGTH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(^|[^\w.])[+-]?\d+(?:\.\d+)?[ \u{00A0}]?(?:\u{00C5}|\u{212B}|[Aa]ngstroms?\b)").unwrap()
});

static BOND_ANGLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(^|[^\w.])[+-]?\d+(?:\.\d+)?(?:[ \u{00A0}]?\u{00B0}|[ \u{00A0}]?degrees?\b)").unwrap()
});

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+(?:\.\d+)?$").unwrap());

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K",
    "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb",
    "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs",
    "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta",
    "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt",
    "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

const UNIT_AND_SIGN_SYMBOLS: &[&str] = &["\u{00C5}", "\u{212B}", "\u{00B0}", "–", "−", "+", "-", "⁺", "⁻"];

fn is_special_token(s: &str) -> bool {
    matches!(s, CLS_TOKEN | NUM_TOKEN | ANG_TOKEN)
}

/// `Na1+`, `Cl1-`, `OAc4`, `SbCl6N2Se3Cl`, `In`: element symbols with
/// optional counts and a trailing charge.
pub fn is_chemical_formula(s: &str) -> bool {
    let body = s.trim_end_matches(['+', '-']);
    let chars: Vec<char> = body.chars().collect();
    if chars.is_empty() || !chars[0].is_ascii_uppercase() {
        return false;
    }
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_uppercase() {
            return false;
        }
        let two = i + 1 < chars.len() && chars[i + 1].is_ascii_lowercase();
        let sym: String = chars[i..i + if two { 2 } else { 1 }].iter().collect();
        if !ELEMENTS.contains(&sym.as_str()) {
            return false;
        }
        i += sym.len();
        while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
            i += 1;
        }
    }
    true
}

/// Tokens that stopword removal must never touch.
fn is_protected(core: &str) -> bool {
    is_special_token(core)
        || core.chars().any(|c| c.is_numeric())
        || !core.chars().any(|c| c.is_alphabetic())
        || UNIT_AND_SIGN_SYMBOLS.contains(&core)
        || is_chemical_formula(core)
}

/// Lowercase stopword set. Construction rejects numeric and symbol entries.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StopwordList(BTreeSet<String>);

impl StopwordList {
    pub fn new<I, S>(words: I) -> Result<Self, TextprepError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for w in words {
            let raw = w.as_ref().trim();
            let w = raw.to_lowercase();
            if w.is_empty() {
                continue;
            }
            if NUMBER.is_match(&w)
                || w.chars().any(|c| c.is_numeric())
                || UNIT_AND_SIGN_SYMBOLS.contains(&raw)
                || !w.chars().any(|c| c.is_alphabetic())
            {
                return Err(TextprepError::ProtectedStopword(w));
            }
            set.insert(w);
        }
        Ok(StopwordList(set))
    }

    /// One word per line; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, TextprepError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Self, TextprepError> {
        let text = std::fs::read_to_string(path).map_err(|source| TextprepError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The English list shipped with this crate.
    pub fn english() -> Self {
        Self::parse(SHIPPED_STOPWORDS).expect("shipped stopword list is valid")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for StopwordList {
    type Error = TextprepError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        StopwordList::new(v)
    }
}

impl From<StopwordList> for Vec<String> {
    fn from(s: StopwordList) -> Self {
        s.0.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub replace_num: bool,
    pub replace_ang: bool,
    pub remove_stopwords: bool,
    pub prepend_cls: bool,
    pub stopwords: StopwordList,
}

impl PreprocessConfig {
    /// Every transform on, shipped English stopwords.
    pub fn all() -> Self {
        PreprocessConfig {
            replace_num: true,
            replace_ang: true,
            remove_stopwords: true,
            prepend_cls: true,
            stopwords: StopwordList::english(),
        }
    }

    /// Identity configuration.
    pub fn none() -> Self {
        PreprocessConfig {
            replace_num: false,
            replace_ang: false,
            remove_stopwords: false,
            prepend_cls: false,
            stopwords: StopwordList::english(),
        }
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedText {
    pub text: String,
    pub num_substitutions: usize,
    pub ang_substitutions: usize,
    pub stopwords_removed: usize,
}

fn replace_with_token(re: &Regex, text: &str, token: &str) -> (String, usize) {
    let mut count = 0;
    let out = re.replace_all(text, |caps: &regex::Captures<'_>| {
        count += 1;
        format!("{}{}", &caps[1], token)
    });
    (out.into_owned(), count)
}

/// Replaces every `<number> Å` span (also `Angstrom`) with `[NUM]`.
pub fn replace_bond_lengths(text: &str) -> (String, usize) {
    replace_with_token(&BOND_LENGTH, text, NUM_TOKEN)
}

/// Replaces every `<number> degrees` / `<number>°` span with `[ANG]`.
pub fn replace_bond_angles(text: &str) -> (String, usize) {
    replace_with_token(&BOND_ANGLE, text, ANG_TOKEN)
}

pub fn has_bond_length(text: &str) -> bool {
    BOND_LENGTH.is_match(text)
}

pub fn has_bond_angle(text: &str) -> bool {
    BOND_ANGLE.is_match(text)
}

const LEADING_PUNCT: &[char] = &['(', '"', '\'', '“', '‘'];
const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', ')', '"', '\'', '”', '’'];
const SENTENCE_PUNCT: &[char] = &['.', ',', ';'];

/// Removes whole-word stopwords, case-insensitively, and collapses whitespace
/// to single spaces. Sentence punctuation (`. , ;`) trailing a removed word
/// moves onto the previous kept word; other punctuation goes with the word.
pub fn remove_stopwords(text: &str, stopwords: &StopwordList) -> (String, usize) {
    if stopwords.is_empty() {
        return (text.to_string(), 0);
    }
    let mut kept: Vec<String> = Vec::new();
    let mut removed = 0;
    for tok in text.split_whitespace() {
        let without_trail = tok.trim_end_matches(TRAILING_PUNCT);
        let core = without_trail.trim_start_matches(LEADING_PUNCT);
        if core.is_empty() || is_protected(core) || !stopwords.contains(core) {
            kept.push(tok.to_string());
            continue;
        }
        removed += 1;
        let carried: String = tok[without_trail.len()..].chars().filter(|c| SENTENCE_PUNCT.contains(c)).collect();
        if let Some(prev) = kept.last_mut() {
            prev.push_str(&carried);
        }
    }
    (kept.join(" "), removed)
}

pub fn prepend_cls(text: &str) -> String {
    format!("{CLS_TOKEN} {text}")
}

/// Applies the enabled transforms in the fixed order: lengths, angles,
/// stopwords, `[CLS]`.
pub fn preprocess(description: &str, config: &PreprocessConfig) -> ProcessedText {
    let mut text = description.to_string();
    let mut out = ProcessedText {
        text: String::new(),
        num_substitutions: 0,
        ang_substitutions: 0,
        stopwords_removed: 0,
    };
    if config.replace_num {
        let (t, n) = replace_bond_lengths(&text);
        text = t;
        out.num_substitutions = n;
    }
    if config.replace_ang {
        let (t, n) = replace_bond_angles(&text);
        text = t;
        out.ang_substitutions = n;
    }
    if config.remove_stopwords {
        let (t, n) = remove_stopwords(&text, &config.stopwords);
        text = t;
        out.stopwords_removed = n;
    }
    if config.prepend_cls {
        text = prepend_cls(&text);
    }
    out.text = text;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(ws: &[&str]) -> StopwordList {
        StopwordList::new(ws.iter().copied()).unwrap()
    }

    #[test]
    fn nacl_bond_length() {
        assert_eq!(
            replace_bond_lengths("All Na-Cl bond lengths are 3.03 Å."),
            ("All Na-Cl bond lengths are [NUM].".to_string(), 1)
        );
        assert_eq!(replace_bond_lengths(""), (String::new(), 0));
    }

    #[test]
    fn parenthesised_lengths_replaced_individually() {
        assert_eq!(
            replace_bond_lengths("There are four shorter (3.40 Å) and one longer (3.54 Å) Ac–Br bond length."),
            (
                "There are four shorter ([NUM]) and one longer ([NUM]) Ac–Br bond length.".to_string(),
                2
            )
        );
    }

    #[test]
    fn length_unit_variants() {
        assert_eq!(replace_bond_lengths("is 2.1Å long").0, "is [NUM] long");
        assert_eq!(replace_bond_lengths("is 2.1 \u{212B} long").0, "is [NUM] long");
        assert_eq!(replace_bond_lengths("is 2.10 Angstrom long").0, "is [NUM] long");
        assert_eq!(replace_bond_lengths("is 2 angstroms long").0, "is [NUM] long");
        // No unit, or number glued to a word: untouched.
        assert_eq!(replace_bond_lengths("Na1+ and 3.03 eV").1, 0);
        assert_eq!(replace_bond_lengths("2.10 Angstromx").1, 0);
    }

    #[test]
    fn bond_angles() {
        assert_eq!(
            replace_bond_angles("bonded in a bent 120 degrees geometry"),
            ("bonded in a bent [ANG] geometry".to_string(), 1)
        );
        assert_eq!(replace_bond_angles("bent 120° geometry"), ("bent [ANG] geometry".to_string(), 1));
        assert_eq!(replace_bond_angles("bent 109.5 ° and 1 degree"), ("bent [ANG] and [ANG]".to_string(), 2));
        assert_eq!(
            replace_bond_angles("the P4/nmm space group"),
            ("the P4/nmm space group".to_string(), 0)
        );
    }

    #[test]
    fn nacl_sentence_stopwords() {
        let (t, n) = remove_stopwords(
            "Na1+ is bonded in a body-centered cubic geometry to eight equivalent Cl1- atoms.",
            &words(&["is", "in", "a", "to"]),
        );
        assert_eq!(t, "Na1+ bonded body-centered cubic geometry eight equivalent Cl1- atoms.");
        assert_eq!(n, 4);
    }

    #[test]
    fn empty_stopword_list_is_identity() {
        let s = "  odd   spacing is kept ";
        assert_eq!(remove_stopwords(s, &StopwordList::default()), (s.to_string(), 0));
    }

    #[test]
    fn special_tokens_protected() {
        // `num` cannot be listed as a stopword match for `[NUM]`.
        assert_eq!(remove_stopwords("[NUM] is here", &words(&["is", "num"])), ("[NUM] here".into(), 1));
        assert_eq!(remove_stopwords("[CLS] a ([NUM]).", &words(&["a", "cls"])), ("[CLS] ([NUM]).".into(), 1));
    }

    #[test]
    fn element_symbols_protected_but_lowercase_words_removed() {
        let sw = words(&["in", "as", "no"]);
        assert_eq!(remove_stopwords("In atoms in As sites", &sw).0, "In atoms As sites");
    }

    #[test]
    fn trailing_punctuation_rules() {
        let sw = words(&["to", "the"]);
        assert_eq!(remove_stopwords("bonded to.", &sw).0, "bonded.");
        assert_eq!(remove_stopwords("bonded (to) x", &sw).0, "bonded x");
        assert_eq!(remove_stopwords("The x", &sw).0, "x");
        assert_eq!(remove_stopwords("the. x", &sw).0, "x");
    }

    #[test]
    fn stopword_list_rejects_numbers_and_symbols() {
        for bad in ["3", "3.5", "Å", "°", "+", "–", "a1"] {
            assert!(StopwordList::new([bad]).is_err(), "{bad}");
        }
        let sw = StopwordList::parse("# comment\nThe\n\nand\n").unwrap();
        assert_eq!(sw.len(), 2);
        assert!(sw.contains("THE"));
    }

    #[test]
    fn shipped_list_loads() {
        let sw = StopwordList::english();
        assert!(sw.contains("the") && sw.contains("is"));
        assert!(!sw.contains("eight"));
    }

    #[test]
    fn cls_prepend() {
        assert_eq!(prepend_cls("NaCl is"), "[CLS] NaCl is");
        assert_eq!(prepend_cls(""), "[CLS] ");
    }

    #[test]
    fn preprocess_identity_and_single_cls() {
        let d = "All Ac–O bond lengths are 2.49 Å. Bent 120° here.";
        let p = preprocess(d, &PreprocessConfig::none());
        assert_eq!(p.text, d);
        assert_eq!((p.num_substitutions, p.ang_substitutions, p.stopwords_removed), (0, 0, 0));

        let only_num = PreprocessConfig {
            replace_num: true,
            ..PreprocessConfig::none()
        };
        assert_eq!(
            preprocess("All Ac–O bond lengths are 2.49 Å.", &only_num).text,
            "All Ac–O bond lengths are [NUM]."
        );

        let all = PreprocessConfig::all();
        let p = preprocess(d, &all);
        assert!(p.text.starts_with("[CLS] "));
        assert_eq!(p.text.matches("[CLS]").count(), 1);
        assert_eq!((p.num_substitutions, p.ang_substitutions), (1, 1));
    }

    // Realistic description fragments: units only ever directly follow a number.
    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            prop::sample::select(vec![
                "is", "the", "a", "to", "in", "In", "Na1+", "Cl1-", "bonded", "geometry", "atoms.", "(the",
                "bond", "lengths", "are", "There", "of", "one", "Ac–Br", "P4/nmm", "body-centered", "7", "[NUM]",
            ])
            .prop_map(String::from),
            (0u32..500, 0u32..100).prop_map(|(a, b)| format!("{a}.{b:02} Å")),
            (0u32..180).prop_map(|a| format!("{a} degrees")),
            (0u32..180).prop_map(|a| format!("{a}°")),
            (0u32..9, 0u32..99).prop_map(|(a, b)| format!("({a}.{b} Å)")),
        ]
    }

    fn text() -> impl Strategy<Value = String> {
        prop::collection::vec(fragment(), 0..30).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent_without_cls(t in text()) {
            let cfg = PreprocessConfig { prepend_cls: false, ..PreprocessConfig::all() };
            let once = preprocess(&t, &cfg).text;
            let twice = preprocess(&once, &cfg).text;
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn no_residual_lengths_and_token_bound(t in text()) {
            let p = preprocess(&t, &PreprocessConfig::all());
            prop_assert!(!has_bond_length(&p.text));
            prop_assert!(!has_bond_angle(&p.text));
            prop_assert!(p.text.starts_with("[CLS] "));
            prop_assert!(p.text.split_whitespace().count() <= t.split_whitespace().count() + 1);
        }

        #[test]
        fn only_special_tokens_introduced(t in text()) {
            let p = preprocess(&t, &PreprocessConfig::all());
            let mut residue = p.text.replace("[CLS]", "").replace("[NUM]", "").replace("[ANG]", "");
            residue.retain(|c| c != ' ');
            let source: std::collections::HashSet<char> = t.chars().collect();
            prop_assert!(residue.chars().all(|c| source.contains(&c)));
        }
    }
}
