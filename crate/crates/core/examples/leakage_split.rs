//! Page-level split that keeps near-duplicate pages out of validation and
//! test, followed by the independent leakage audit.
//!
//! `cargo run --example leakage_split`

use cerhv::metrics::Transcript;
use cerhv::pipeline::{audit_split, split_pages, PageText, Split, SplitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pages: Vec<PageText> = (0..40)
        .map(|i| PageText {
            page_id: format!("p{i:02}"),
            text: (0..100).map(|_| (b'a' + rng.gen_range(0..26)) as char).collect(),
        })
        .collect();
    // one exact copy and three lightly edited copies
    pages.push(PageText {
        page_id: "copy".into(),
        text: pages[0].text.clone(),
    });
    for k in 1..4 {
        let mut chars: Vec<char> = pages[k].text.chars().collect();
        chars[10] = '#';
        chars[50] = '#';
        pages.push(PageText {
            page_id: format!("near{k}"),
            text: Transcript::new(chars.into_iter().collect::<String>()),
        });
    }
    let config = SplitConfig::default();
    let split = split_pages(&pages, &config)?;
    for s in Split::ALL {
        println!("{s}: {} pages", split.pages_in(s).count());
    }
    println!("dropped duplicates: {:?}", split.dropped_duplicates);
    for c in &split.conflicts {
        println!("similar: {} ~ {} ({:.3}), both kept in train", c.a, c.b, c.similarity);
    }
    let audit = audit_split(&pages, &split, config.similarity_threshold);
    println!(
        "audit: {} pairs, max similarity {:.3}, {} violations",
        audit.pairs_checked,
        audit.max_similarity,
        audit.violations.len()
    );
    Ok(())
}
