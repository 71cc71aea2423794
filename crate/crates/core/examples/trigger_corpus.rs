//! Writes the synthetic trigger-token corpus to stdout.
//!
//! Usage: cargo run -p memcause --example trigger_corpus -- [DOCUMENTS] [SEED]

use memcause::corpus::write_corpus;
use memcause::synthetic::trigger_corpus;

fn main() -> memcause::Result<()> {
    let mut args = std::env::args().skip(1);
    let documents = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    write_corpus(&trigger_corpus(documents, seed), std::io::stdout().lock())
}
