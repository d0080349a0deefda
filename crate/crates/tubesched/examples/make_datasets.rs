//! Regenerates the bundled benchmark files under `data/`.
//!
//! Usage: `cargo run --example make_datasets [out_dir]` (default `data`).
//!
//! The sample pools are written with the same seeds the scheduler CLI uses
//! when it synthesizes missing pools at the default `--seed 1`, so passing
//! the bundled files explicitly and omitting them give identical runs.

use std::fs;
use std::path::Path;

use tubesched::grid::Network;
use tubesched::harness::{
    synth_dist_pool, synth_network_3, synth_network_38, synth_network_94, synth_res_pool,
    DEFAULT_DIST_POOL, DEFAULT_RES_POOL, DIST_RADIUS, RES_NOISE,
};

const DEFAULT_SEED: u64 = 1;

fn emit(dir: &Path, tag: &str, net: Network) {
    let net_path = dir.join(format!("net{tag}.json"));
    fs::write(&net_path, serde_json::to_string_pretty(&net).unwrap()).unwrap();
    println!("wrote {}", net_path.display());

    if let Some(pool) = synth_res_pool(&net, DEFAULT_RES_POOL, RES_NOISE, DEFAULT_SEED ^ 0x5e5) {
        let path = dir.join(format!("res{tag}.csv"));
        pool.write_csv(&path).unwrap();
        println!("wrote {} ({} rows)", path.display(), pool.len());
    }
    if let Some(pool) =
        synth_dist_pool(&net, DEFAULT_DIST_POOL, DIST_RADIUS, DEFAULT_SEED ^ 0xd15).unwrap()
    {
        let path = dir.join(format!("dist{tag}.csv"));
        pool.write_csv(&path).unwrap();
        println!("wrote {} ({} rows)", path.display(), pool.len());
    }
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let dir = Path::new(&out);
    fs::create_dir_all(dir).unwrap();
    emit(dir, "3", synth_network_3());
    emit(dir, "38", synth_network_38());
    emit(dir, "94", synth_network_94());
}
