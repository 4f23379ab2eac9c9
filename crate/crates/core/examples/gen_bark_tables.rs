//! Regenerates the shipped perceptual band tables from the derivation
//! formulas. Run from the workspace root:
//!
//!     cargo run -p specfit-core --example gen_bark_tables

use specfit_core::pesq::BarkTable;

fn main() {
    let targets = [
        ("crates/core/data/bark_16k.toml", 16000u32, 512usize),
        ("crates/core/data/bark_8k.toml", 8000, 256),
    ];
    for (path, rate, fft) in targets {
        let table = BarkTable::derive(rate, fft, 49).expect("derivation");
        let header = format!(
            "# Perceptual band table, {rate} Hz / {fft}-point frames, 49 bands.\n\
             # Derived from Traunmueller's bark mapping and Terhardt's absolute\n\
             # threshold curve; regenerate with `cargo run --example gen_bark_tables`.\n\
             # band i spans one-sided bins [band_edges[i], band_edges[i+1]).\n"
        );
        let body = table.to_toml_string().expect("encode");
        std::fs::write(path, format!("{header}{body}")).expect("write");
        println!("wrote {path}");
    }
}
