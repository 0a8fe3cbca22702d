//! Trains on synthetic Gaussian blobs and prints the learning curve.
//!
//! cargo run --release -p aecl-core --example blobs -- [sep] [sigma] [seed] [key=value ...]

use aecl::embeddings_io::generate_synthetic;
use aecl::evaluation::evaluate_dataset;
use aecl::model::ModelDims;
use aecl::evaluation::accuracy;
use aecl::training::{kmeans, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let sep: f64 = args.first().map_or(Ok(10.0), |s| s.parse())?;
    let sigma: f64 = args.get(1).map_or(Ok(1.0), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(7), |s| s.parse())?;

    let mut data = generate_synthetic(4, 200, 32, sep, sigma, seed)?;
    data.view1 = None;
    let mut config = TrainConfig::new(ModelDims::new(32, 128, 4)?);
    config.epochs_total = 40;
    config.seed = seed;
    for kv in args.iter().skip(3) {
        config.apply_kv(kv)?;
    }

    if let Some(labels) = &data.labels {
        let km = kmeans(&data.view0, 4, seed)?;
        println!("kmeans acc {}", accuracy(labels, &km)?);
    }
    let start = std::time::Instant::now();
    let (params, history) = train(&data, &config)?;
    print!("{}", history.to_csv());
    let report = evaluate_dataset(&params, &data.view0, data.labels.as_deref(), config.batch_size)?;
    println!("sizes {:?} elapsed {:.1?}", report.cluster_sizes, start.elapsed());
    Ok(())
}
