//! Deterministic rule-based English lemmatizer used when a source file carries
//! no lemma column. It only needs to be stable and good enough to group
//! inflections of the same target word for lemma-disjoint folds.

const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("is", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("began", "begin"),
    ("begun", "begin"),
    ("broke", "break"),
    ("broken", "break"),
    ("brought", "bring"),
    ("built", "build"),
    ("bought", "buy"),
    ("came", "come"),
    ("caught", "catch"),
    ("chose", "choose"),
    ("chosen", "choose"),
    ("died", "die"),
    ("dies", "die"),
    ("dying", "die"),
    ("drank", "drink"),
    ("drunk", "drink"),
    ("drove", "drive"),
    ("driven", "drive"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("felt", "feel"),
    ("fought", "fight"),
    ("found", "find"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("flies", "fly"),
    ("forgot", "forget"),
    ("forgotten", "forget"),
    ("froze", "freeze"),
    ("frozen", "freeze"),
    ("gave", "give"),
    ("given", "give"),
    ("got", "get"),
    ("gotten", "get"),
    ("grew", "grow"),
    ("grown", "grow"),
    ("held", "hold"),
    ("hid", "hide"),
    ("hidden", "hide"),
    ("kept", "keep"),
    ("knew", "know"),
    ("known", "know"),
    ("laid", "lay"),
    ("led", "lead"),
    ("left", "leave"),
    ("lent", "lend"),
    ("lay", "lie"),
    ("lain", "lie"),
    ("lost", "lose"),
    ("made", "make"),
    ("meant", "mean"),
    ("met", "meet"),
    ("paid", "pay"),
    ("ran", "run"),
    ("rode", "ride"),
    ("ridden", "ride"),
    ("rose", "rise"),
    ("risen", "rise"),
    ("said", "say"),
    ("saw", "see"),
    ("seen", "see"),
    ("sold", "sell"),
    ("sent", "send"),
    ("shook", "shake"),
    ("shaken", "shake"),
    ("shot", "shoot"),
    ("sang", "sing"),
    ("sung", "sing"),
    ("sank", "sink"),
    ("sunk", "sink"),
    ("sat", "sit"),
    ("slept", "sleep"),
    ("spoke", "speak"),
    ("spoken", "speak"),
    ("spent", "spend"),
    ("stood", "stand"),
    ("stole", "steal"),
    ("stolen", "steal"),
    ("stuck", "stick"),
    ("struck", "strike"),
    ("stricken", "strike"),
    ("swept", "sweep"),
    ("swam", "swim"),
    ("swum", "swim"),
    ("took", "take"),
    ("taken", "take"),
    ("taught", "teach"),
    ("tore", "tear"),
    ("torn", "tear"),
    ("told", "tell"),
    ("thought", "think"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("understood", "understand"),
    ("woke", "wake"),
    ("woken", "wake"),
    ("wore", "wear"),
    ("worn", "wear"),
    ("won", "win"),
    ("wrote", "write"),
    ("written", "write"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
];

/// Words ending in these letters keep a final `s` (e.g. "glass", "analysis").
const KEEP_FINAL_S: &[&str] = &["ss", "us", "is"];

const EED_WORDS: &[&str] = &[
    "bleed", "breed", "deed", "exceed", "feed", "greed", "heed", "need", "proceed", "reed", "seed",
    "speed", "steed", "succeed", "weed",
];

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Restores a stem after stripping `-ed`/`-ing`.
fn restore_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z' | b'f') {
        // stopped -> stop, running -> run
        return stem[..n - 1].to_string();
    }
    if n >= 2 && (stem.ends_with("at") || stem.ends_with("iz") || stem.ends_with("bl") || stem.ends_with("us")) {
        // vaporized -> vaporize, troubled -> trouble
        return format!("{stem}e");
    }
    if n >= 3 && stem.ends_with("dg") {
        return format!("{stem}e");
    }
    if n == 3 && !is_vowel(b[0]) && is_vowel(b[1]) && !is_vowel(b[2]) && !matches!(b[2], b'w' | b'x' | b'y') {
        // hoped -> hope, but only for short cvc stems
        return format!("{stem}e");
    }
    stem.to_string()
}

/// Lowercases, strips surrounding punctuation, and removes regular inflection.
/// `pos` is accepted for future use by POS-aware rules; the current rules are
/// POS-independent.
pub fn lemmatize(word: &str, _pos: Option<&str>) -> String {
    let lower = word.to_lowercase();
    let w = lower.trim_matches(|c: char| !c.is_alphanumeric());
    if w.is_empty() {
        return lower;
    }
    if let Some((_, lemma)) = IRREGULAR.iter().find(|(form, _)| *form == w) {
        return (*lemma).to_string();
    }
    if !w.is_ascii() || w.len() <= 3 {
        return w.to_string();
    }
    if let Some(stem) = w.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = w.strip_suffix("ied") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = w.strip_suffix("ing") {
        if stem.len() >= 2 && stem.bytes().any(is_vowel) {
            return restore_stem(stem);
        }
    }
    if w.ends_with("eed") {
        if EED_WORDS.contains(&w) {
            return w.to_string();
        }
        // agreed -> agree
        return w[..w.len() - 1].to_string();
    }
    if let Some(stem) = w.strip_suffix("ed") {
        if stem.len() >= 2 && stem.bytes().any(is_vowel) {
            return restore_stem(stem);
        }
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.ends_with('s') && !KEEP_FINAL_S.iter().any(|k| w.ends_with(k)) {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

#[cfg(test)]
mod tests {
    use super::lemmatize;

    #[test]
    fn regular_inflections() {
        for (form, lemma) in [
            ("walked", "walk"),
            ("walking", "walk"),
            ("walks", "walk"),
            ("stopped", "stop"),
            ("running", "run"),
            ("vaporized", "vaporize"),
            ("carries", "carry"),
            ("carried", "carry"),
            ("agreed", "agree"),
            ("hoped", "hope"),
            ("passes", "pass"),
            ("grass", "grass"),
            ("Absorbs", "absorb"),
            ("fills", "fill"),
            ("filled", "fill"),
        ] {
            assert_eq!(lemmatize(form, None), lemma, "{form}");
        }
    }

    #[test]
    fn irregular_table() {
        assert_eq!(lemmatize("struck", None), "strike");
        assert_eq!(lemmatize("Rode", None), "ride");
        assert_eq!(lemmatize("dying", None), "die");
    }

    #[test]
    fn punctuation_and_short_words() {
        assert_eq!(lemmatize("\"Sun,", None), "sun");
        assert_eq!(lemmatize(".", None), ".");
        assert_eq!(lemmatize("is", None), "be");
    }
}
