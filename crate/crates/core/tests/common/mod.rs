//! Reference values shared by several test targets.
#![allow(dead_code)]

use atelier_core::STYLE_CLASSES;

/// Per-class (precision, recall, F1) reference values, in class-index order.
pub const REFERENCE_PRF: [(&str, f64, f64, f64); 19] = [
    ("Abstract Expressionism", 0.88, 0.89, 0.88),
    ("Art Nouveau", 0.73, 0.66, 0.69),
    ("Baroque", 0.63, 0.45, 0.53),
    ("Cubism", 0.87, 0.80, 0.84),
    ("Early Renaissance", 0.83, 0.66, 0.74),
    ("Expressionism", 0.56, 0.69, 0.62),
    ("High Renaissance", 0.41, 0.72, 0.52),
    ("Impressionism", 0.86, 0.55, 0.67),
    ("Mannerism", 0.59, 0.60, 0.60),
    ("Naive Art", 0.86, 0.73, 0.79),
    ("Neoclassicism", 0.70, 0.70, 0.70),
    ("Northern Renaissance", 0.68, 0.61, 0.64),
    ("Post-Impressionism", 0.64, 0.66, 0.65),
    ("Realism", 0.47, 0.63, 0.54),
    ("Rococo", 0.61, 0.79, 0.69),
    ("Romanticism", 0.74, 0.32, 0.45),
    ("Surrealism", 0.76, 0.75, 0.75),
    ("Symbolism", 0.65, 0.69, 0.67),
    ("Ukiyo-e", 0.88, 0.95, 0.91),
];

/// Mean of the 19 reference F1 values (12.88 / 19), frozen to four decimals.
pub const REFERENCE_MACRO_F1: f64 = 0.6779;

/// Reference top-5 for the portrait example.
pub const REFERENCE_TOP5: [(&str, f32); 5] = [
    ("Rococo", 0.2942),
    ("Neoclassicism", 0.2503),
    ("Baroque", 0.1205),
    ("Realism", 0.1201),
    ("Romanticism", 0.1173),
];

/// 19-class distribution with the reference top-5 and the remaining mass
/// spread evenly over the other 14 classes.
pub fn top5_fixture_probs() -> Vec<f32> {
    let listed: f32 = REFERENCE_TOP5.iter().map(|(_, p)| p).sum();
    let rest = (1.0 - listed) / 14.0;
    STYLE_CLASSES
        .iter()
        .map(|name| REFERENCE_TOP5.iter().find(|(n, _)| n == name).map_or(rest, |(_, p)| *p))
        .collect()
}

pub const TOP5_FIXTURE_JSON: &str = r#"{"predictions":[{"class":"Rococo","confidence":0.2942},{"class":"Neoclassicism","confidence":0.2503},{"class":"Baroque","confidence":0.1205},{"class":"Realism","confidence":0.1201},{"class":"Romanticism","confidence":0.1173}]}"#;
