//! Timing sweeps over party count and feature count, plus the dense-mask
//! reference encoder used as a performance foil.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use okra_client::{run_client, KeySource};
use okra_core::ml::MlTask;
use okra_core::{
    build_key, derive_plan, encode, encode_into, DataMatrix, KernelSpec, Matrix, Seed,
};
use okra_transport::{Server, SessionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

/// Columns produced per dense tile; bounds the mask memory to `f x TILE`.
const TILE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    Parties,
    Features,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Parties => "parties",
            BenchMode::Features => "features",
        }
    }
}

/// One CSV row. Stages that do not apply to a mode are left empty.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Sample {
    pub mode: String,
    pub x: usize,
    pub rep: String,
    pub encode_s: Option<f64>,
    pub transmit_s: Option<f64>,
    pub gram_s: Option<f64>,
    pub total_s: Option<f64>,
}

pub fn random_data(n: usize, f: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n * f).map(|_| rng.random::<f64>() - 0.5).collect();
    DataMatrix::new(Matrix::from_vec(n, f, v)).expect("non-empty data")
}

/// Seconds spent multiplying `data` by a dense real `f x width` mask.
/// The mask is generated tile by tile and generation is not timed; the
/// output is touched before timing starts.
pub fn dense_mask_encode(data: &DataMatrix, width: usize, seed: u64) -> (f64, f64) {
    let (n, f) = (data.n_rows(), data.n_features());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tile = vec![0.0; f * TILE];
    let mut out = vec![1.0; n * width];
    let a = data.matrix().as_slice();
    let mut elapsed = 0.0;
    let mut col = 0;
    while col < width {
        let t = TILE.min(width - col);
        for v in &mut tile[..f * t] {
            *v = rng.random::<f64>() - 0.5;
        }
        let start = Instant::now();
        // SAFETY: the slices cover n x f, f x t and n x width elements with the
        // given strides.
        unsafe {
            matrixmultiply::dgemm(
                n,
                f,
                t,
                1.0,
                a.as_ptr(),
                f as isize,
                1,
                tile.as_ptr(),
                t as isize,
                1,
                0.0,
                out.as_mut_ptr().add(col),
                width as isize,
                1,
            );
        }
        elapsed += start.elapsed().as_secs_f64();
        col += t;
    }
    (elapsed, out.iter().sum())
}

/// Seconds for each of `reps` block encodings of `data`. Key derivation and
/// a warm-up encoding that allocates the output are not timed.
pub fn okra_encode_times(
    data: &DataMatrix,
    seed: &Seed,
    block_size: usize,
    redundancy: usize,
    reps: usize,
) -> Result<Vec<f64>, CliError> {
    let input = |e: &dyn std::fmt::Display| CliError::Input(e.to_string());
    let plan = derive_plan(data.n_features(), block_size, redundancy).map_err(|e| input(&e))?;
    let key = build_key(seed, &plan).map_err(|e| input(&e))?;
    let mut out = encode(data, &key, "bench").map_err(|e| input(&e))?;
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            encode_into(data, &key, &mut out).map_err(|e| input(&e))?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub mode: BenchMode,
    pub xs: Vec<usize>,
    pub repetitions: usize,
    pub samples: usize,
    /// Feature count for the parties sweep.
    pub features: usize,
    /// Largest f for which the dense foil runs.
    pub dense_max: usize,
    pub seed: Seed,
    pub block_size: usize,
    pub redundancy: usize,
    pub kernel: KernelSpec,
}

impl BenchOptions {
    pub fn new(mode: BenchMode, xs: Vec<usize>, repetitions: usize) -> Self {
        Self {
            mode,
            xs,
            repetitions,
            samples: 400,
            features: 1000,
            dense_max: 16384,
            seed: Seed::new([7; 32]),
            block_size: 64,
            redundancy: 1,
            kernel: KernelSpec::Rbf {
                gamma: 1.0,
                length_scale: (2.0f64 * 1000.0).sqrt(),
            },
        }
    }
}

pub fn default_range(mode: BenchMode) -> Vec<usize> {
    match mode {
        BenchMode::Parties => vec![1, 2, 3, 5, 10],
        BenchMode::Features => (7..=17).map(|p| 1 << p).collect(),
    }
}

fn summary(mode: &str, x: usize, reps: &[Sample]) -> [Sample; 2] {
    let stat = |get: fn(&Sample) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let v: Option<Vec<f64>> = reps.iter().map(get).collect();
        match v {
            Some(v) if !v.is_empty() => {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var =
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
                (Some(mean), Some(var.sqrt()))
            }
            _ => (None, None),
        }
    };
    let (e, es) = stat(|s| s.encode_s);
    let (t, ts) = stat(|s| s.transmit_s);
    let (g, gs) = stat(|s| s.gram_s);
    let (tot, tots) = stat(|s| s.total_s);
    let row = |rep: &str, a, b, c, d| Sample {
        mode: mode.into(),
        x,
        rep: rep.into(),
        encode_s: a,
        transmit_s: b,
        gram_s: c,
        total_s: d,
    };
    [row("mean", e, t, g, tot), row("std", es, ts, gs, tots)]
}

/// Runs the sweep, returning per-repetition rows followed by mean and
/// standard deviation rows for each `x`.
pub async fn run_bench(opts: &BenchOptions) -> Result<Vec<Sample>, CliError> {
    if opts.repetitions == 0 {
        return Err(CliError::Input(
            "invalid repetition count: must be at least 1".into(),
        ));
    }
    if opts.xs.is_empty() || opts.xs.contains(&0) {
        return Err(CliError::Input("range values must be positive".into()));
    }
    let mut rows = Vec::new();
    for &x in &opts.xs {
        match opts.mode {
            BenchMode::Features => {
                let data = random_data(opts.samples, x, x as u64);
                let width = derive_plan(x, opts.block_size, opts.redundancy)
                    .map_err(|e| CliError::Input(e.to_string()))?
                    .encoded_width();
                let mut reps = Vec::new();
                let mut dense = Vec::new();
                let times = okra_encode_times(
                    &data,
                    &opts.seed,
                    opts.block_size,
                    opts.redundancy,
                    opts.repetitions,
                )?;
                for (r, t) in times.into_iter().enumerate() {
                    reps.push(Sample {
                        mode: "features".into(),
                        x,
                        rep: r.to_string(),
                        encode_s: Some(t),
                        total_s: Some(t),
                        ..Sample::default()
                    });
                    if x <= opts.dense_max {
                        let (t, _) = dense_mask_encode(&data, width, r as u64);
                        dense.push(Sample {
                            mode: "features-dense".into(),
                            x,
                            rep: r.to_string(),
                            encode_s: Some(t),
                            total_s: Some(t),
                            ..Sample::default()
                        });
                    }
                }
                let s = summary("features", x, &reps);
                rows.extend(reps);
                rows.extend(s);
                if !dense.is_empty() {
                    let s = summary("features-dense", x, &dense);
                    rows.extend(dense);
                    rows.extend(s);
                }
            }
            BenchMode::Parties => {
                let mut reps = Vec::new();
                for r in 0..opts.repetitions {
                    let mut s = loopback_session(opts, x).await?;
                    s.rep = r.to_string();
                    reps.push(s);
                }
                let s = summary("parties", x, &reps);
                rows.extend(reps);
                rows.extend(s);
            }
        }
    }
    Ok(rows)
}

/// One full session over loopback with `parties` concurrent clients.
async fn loopback_session(opts: &BenchOptions, parties: usize) -> Result<Sample, CliError> {
    let out_dir: PathBuf =
        std::env::temp_dir().join(format!("okra-bench-{}-{parties}", std::process::id()));
    let ids: Vec<String> = (0..parties).map(|i| format!("p{i}")).collect();
    let mut cfg = SessionConfig::new(ids.clone(), opts.kernel.clone(), &out_dir);
    cfg.host = "127.0.0.1".into();
    cfg.port = 0;
    cfg.ml = MlTask::GramOnly;
    let server = Server::bind(cfg).await?;
    let addr = server
        .local_addr()
        .map_err(|e| CliError::Session(e.to_string()))?
        .to_string();

    let start = Instant::now();
    let run = tokio::spawn(server.run(std::future::pending()));
    let key = KeySource {
        seed: opts.seed.clone(),
        block_size: opts.block_size,
        redundancy: opts.redundancy,
    };
    let mut clients = tokio::task::JoinSet::new();
    for (i, id) in ids.into_iter().enumerate() {
        let (addr, key) = (addr.clone(), key.clone());
        let data = random_data(opts.samples, opts.features, 1000 + i as u64);
        clients.spawn(async move { run_client(&addr, &id, &data, &key, None).await });
    }
    let (mut encode_s, mut transmit_s) = (0.0f64, 0.0f64);
    while let Some(r) = clients.join_next().await {
        let rep = r.map_err(|e| CliError::Session(e.to_string()))??;
        encode_s = encode_s.max(rep.encode_s);
        transmit_s = transmit_s.max(rep.transmit_s);
    }
    let outcome = run.await.map_err(|e| CliError::Session(e.to_string()))??;
    let total_s = start.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&out_dir);
    Ok(Sample {
        mode: "parties".into(),
        x: parties,
        rep: String::new(),
        encode_s: Some(encode_s),
        transmit_s: Some(transmit_s),
        gram_s: outcome.report["timings"]["gram_s"].as_f64(),
        total_s: Some(total_s),
    })
}

pub fn write_csv(w: impl Write, rows: &[Sample]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = (1..8)
            .map(|i| (i as f64, 3.0 * (i as f64).powf(1.5)))
            .collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn dense_foil_computes_a_product() {
        let d = random_data(3, 5, 1);
        let (t, sum) = dense_mask_encode(&d, 600, 2);
        assert!(t >= 0.0 && sum.is_finite() && sum != 0.0);
    }

    #[tokio::test]
    async fn zero_repetitions_is_an_error() {
        let o = BenchOptions::new(BenchMode::Features, vec![8], 0);
        let e = run_bench(&o).await.unwrap_err();
        assert!(e.to_string().contains("invalid repetition count"));
    }

    #[tokio::test]
    async fn features_sweep_rows() {
        let mut o = BenchOptions::new(BenchMode::Features, vec![16, 32], 2);
        o.samples = 10;
        let rows = run_bench(&o).await.unwrap();
        // Two reps plus mean and std, for both encoders, at both sizes.
        assert_eq!(rows.len(), 16);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mode,x,rep,encode_s,transmit_s,gram_s,total_s\n"));
        assert!(text.contains("features-dense,32,mean,"));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn parties_sweep_runs_sessions() {
        let mut o = BenchOptions::new(BenchMode::Parties, vec![2], 1);
        o.samples = 5;
        o.features = 20;
        let rows = run_bench(&o).await.unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].gram_s.is_some() && rows[0].transmit_s.is_some());
    }
}
