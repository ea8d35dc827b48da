//! Writes an Example 1 data set in the CLI's input formats.
//!
//! `cargo run --example export_example1 -- OUT_DIR [N] [P] [SEED]`

use std::fs;
use std::path::PathBuf;

use gwire::synthetic::{gen_example1, make_omega, GenOptions};
use gwire::graph::neighborhoods_from_precision;
use gwire::CovarianceKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().ok_or("usage: export_example1 OUT_DIR [N] [P] [SEED]")?);
    let n: usize = args.get(1).map_or(Ok(100), |s| s.parse())?;
    let p: usize = args.get(2).map_or(Ok(30), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(7), |s| s.parse())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = gen_example1(n, p, CovarianceKind::Sigma1, GenOptions::default(), &mut rng)?;
    fs::create_dir_all(&out)?;

    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let mut csv = names.join(",");
    csv.push('\n');
    for row in data.sample.x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.10}")).collect();
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    fs::write(out.join("x.csv"), csv)?;

    let responses = data.responses.ok_or("example 1 carries response objects")?;
    fs::write(out.join("responses.json"), serde_json::to_string(&responses)?)?;

    let graph = neighborhoods_from_precision(&make_omega(CovarianceKind::Sigma1, p)?, 1e-8);
    let neighbors: Vec<Vec<usize>> = (0..p)
        .map(|i| graph.neighbors(i).iter().filter(|&&j| j != i).map(|&j| j + 1).collect())
        .collect();
    let adjacency = json!({ "p": p, "names": names, "neighbors": neighbors });
    fs::write(out.join("graph.json"), serde_json::to_string_pretty(&adjacency)?)?;

    let truth = json!({
        "support": data.support.iter().map(|i| i + 1).collect::<Vec<_>>(),
        "beta": data.beta.columns().column(0).iter().copied().collect::<Vec<_>>(),
    });
    fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    Ok(())
}
