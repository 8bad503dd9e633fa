//! Regenerates the committed desk-scale data fixtures under
//! `data/fixtures/`. The files mimic the layouts of the two UCI benchmark
//! tables (spambase: 57 comma-separated attributes plus a 0/1 label;
//! housing: 13 whitespace-separated features plus the median-value target)
//! with seeded synthetic rows, so tests and presets run without network
//! access. Real tables dropped into `data/` via `scripts/fetch_uci.sh` are
//! parsed by the same loaders.
//!
//! Run from the repository root: `cargo run -p nrc-core --example gen_fixtures`

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn positive_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    // Box-Muller; clipped at zero like the nonnegative frequency columns
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    (mean + sd * z).max(0.0)
}

fn spambase(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..rows {
        let spam = rng.random_range(0.0..1.0) < 0.4;
        // the three leading word-frequency columns carry the signal the
        // classification benchmark uses
        let (make, address, all) = if spam {
            (
                positive_normal(&mut rng, 0.7, 0.5),
                positive_normal(&mut rng, 0.25, 0.3),
                positive_normal(&mut rng, 0.55, 0.4),
            )
        } else {
            (
                positive_normal(&mut rng, 0.1, 0.15),
                positive_normal(&mut rng, 0.3, 0.35),
                positive_normal(&mut rng, 0.3, 0.3),
            )
        };
        let mut fields: Vec<String> = vec![
            format!("{:.2}", make),
            format!("{:.2}", address),
            format!("{:.2}", all),
        ];
        // remaining 45 word frequencies: sparse small values
        for _ in 0..45 {
            let v = if rng.random_range(0.0..1.0) < 0.8 {
                0.0
            } else {
                positive_normal(&mut rng, 0.2, 0.2)
            };
            fields.push(format!("{v:.2}"));
        }
        // 6 character frequencies
        for _ in 0..6 {
            fields.push(format!("{:.3}", positive_normal(&mut rng, 0.05, 0.08)));
        }
        // capital-run statistics
        fields.push(format!("{:.3}", 1.0 + positive_normal(&mut rng, 2.0, 2.0)));
        fields.push(format!("{}", 1 + rng.random_range(0..80u32)));
        fields.push(format!("{}", 1 + rng.random_range(0..400u32)));
        fields.push(if spam { "1".into() } else { "0".into() });
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

fn housing(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..rows {
        let crim = positive_normal(&mut rng, 1.5, 3.0).min(89.0);
        let zn = if rng.random_range(0.0..1.0) < 0.7 {
            0.0
        } else {
            rng.random_range(0.0f64..4.0).floor() * 12.5
        };
        let indus = rng.random_range(0.5..27.0);
        let chas = if rng.random_range(0.0..1.0) < 0.07 { 1.0 } else { 0.0 };
        let nox = rng.random_range(0.38..0.87);
        let rm = 6.3 + 0.7 * rng.random_range(-1.0..1.0) + 0.3 * rng.random_range(-1.0..1.0);
        let age = rng.random_range(2.0..100.0);
        let dis = rng.random_range(1.1..12.0);
        let rad = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 24.0][rng.random_range(0..9usize)];
        let tax = rng.random_range(187.0..711.0);
        let ptratio = rng.random_range(12.6..22.0);
        let b = rng.random_range(100.0..396.9);
        let lstat = positive_normal(&mut rng, 12.0, 7.0).clamp(1.7, 38.0);
        // target: linear signal in (CRIM, RM, TAX, LSTAT) plus noise and a
        // handful of clipped outliers, mirroring the capped-value quirk of
        // the original table
        let noise = 2.5 * rng.random_range(-1.0..1.0);
        let mut medv =
            22.0 + 6.0 * (rm - 6.3) - 0.35 * (lstat - 12.0) - 0.08 * crim - 0.005 * (tax - 400.0)
                + noise;
        if rng.random_range(0.0..1.0) < 0.03 {
            medv = 50.0;
        }
        let medv = medv.clamp(5.0, 50.0);
        writeln!(
            out,
            "{crim:8.4} {zn:5.1} {indus:6.2} {chas:2.0} {nox:6.3} {rm:6.3} {age:6.1} \
             {dis:7.4} {rad:3.0} {tax:5.0} {ptratio:5.1} {b:7.2} {lstat:6.2} {medv:5.2}"
        )
        .unwrap();
    }
    out
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures");
    std::fs::create_dir_all(&root).expect("create fixture directory");
    std::fs::write(root.join("spambase_sample.data"), spambase(600, 20240501))
        .expect("write spambase fixture");
    std::fs::write(root.join("housing_sample.data"), housing(400, 20240502))
        .expect("write housing fixture");
    println!("fixtures written to {}", root.display());
}
