//! Edit distance, CER and page similarity on a few pairs, including
//! Arabic text and a composed/decomposed pair that normalizes equal.
//!
//! `cargo run --example cer_metrics`

use cerhv::metrics::{cer, edit_distance, page_similarity, Transcript};

fn main() {
    let pairs = [
        ("kitten", "sitting"),
        ("سلام عليكم", "سلام عليكن"),
        ("", "abcd"),
        ("xyz", ""),
        ("e\u{0301}t\u{00e9}", "\u{00e9}te\u{0301}"),
    ];
    for (pred, reference) in pairs {
        let (p, r) = (Transcript::new(pred), Transcript::new(reference));
        let c = cer(&p, &r);
        println!(
            "pred {pred:?} ref {reference:?}: edits {} cer {:.3} similarity {:.3}",
            edit_distance(&p, &r),
            c.value(),
            page_similarity(&p, &r)
        );
    }
}
