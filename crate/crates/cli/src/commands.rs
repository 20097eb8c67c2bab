//! The `server`, `party` and `status` commands.

use std::path::{Path, PathBuf};

use okra_client::{append, fetch_status, run_client, withdraw, SubmitReport};
use okra_core::io::{key_export::export_key, load_data, read_labels};
use okra_core::DataMatrix;
use okra_transport::run_server;
use tracing::warn;

use crate::{CliError, RunConfig};

pub async fn cmd_server(
    cfg: &RunConfig,
    out_dir: Option<PathBuf>,
    release_gram: bool,
) -> Result<(), CliError> {
    if cfg.seed.is_some() {
        warn!("the server does not use the seed; keep it off the server host");
    }
    let out = out_dir
        .or_else(|| cfg.io.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("okra-out"));
    let mut session = cfg.session_config(out.clone());
    session.release_gram |= release_gram;
    let outcome = run_server(session).await.map_err(CliError::from)?;
    println!(
        "session complete: {} rows, width {}, outputs in {}",
        outcome.gram.len(),
        outcome.gram.width(),
        out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartyAction {
    Submit,
    Append,
    Withdraw,
}

#[derive(Clone, Debug)]
pub struct PartyArgs {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub normalize: bool,
    pub party_id: Option<String>,
    pub action: PartyAction,
    pub export_key: Option<PathBuf>,
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Loads party data, scaling 8-bit intensities to `[0, 1]` if asked.
pub fn load_party_data(
    path: &Path,
    normalize: bool,
    expected_features: Option<usize>,
) -> Result<DataMatrix, CliError> {
    let data = load_data(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let data = if normalize {
        data.scaled(1.0 / 255.0)
    } else {
        data
    };
    if let Some(f) = expected_features {
        if data.n_features() != f {
            return Err(CliError::Input(format!(
                "DimensionMismatch: {} has {} features but the plan expects {f}",
                path.display(),
                data.n_features()
            )));
        }
    }
    Ok(data)
}

pub async fn cmd_party(cfg: &RunConfig, args: &PartyArgs) -> Result<(), CliError> {
    let pid = args
        .party_id
        .clone()
        .or_else(|| cfg.session.party_id.clone())
        .ok_or_else(|| {
            CliError::Config("party id missing: set session.party_id or pass --party-id".into())
        })?;
    let addr = cfg.address();
    if args.action == PartyAction::Withdraw {
        let ack = withdraw(&addr, &pid).await?;
        println!("withdrawn: server status {:?}", ack.status);
        return Ok(());
    }

    let path = args
        .data
        .clone()
        .or_else(|| cfg.io.data.clone())
        .ok_or_else(|| CliError::Config("no data: pass --data or set io.data".into()))?;
    let data = load_party_data(&path, args.normalize || cfg.io.normalize, cfg.plan.features)?;
    let labels = match args.labels.clone().or_else(|| cfg.io.labels.clone()) {
        Some(p) => {
            let l =
                read_labels(&p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            if l.len() != data.n_rows() {
                return Err(CliError::Input(format!(
                    "{} labels for {} rows",
                    l.len(),
                    data.n_rows()
                )));
            }
            Some(l)
        }
        None => None,
    };
    let key = cfg.key_source()?;
    if let Some(out) = &args.export_key {
        warn!(path = %out.display(), "exporting the secret encoding key; anyone holding this file can decode submissions");
        let k = key.build(data.n_features()).map_err(input)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(out).map_err(input)?);
        export_key(&mut f, &k).map_err(input)?;
        std::io::Write::flush(&mut f).map_err(input)?;
    }

    let report: SubmitReport = match args.action {
        PartyAction::Append => append(&addr, &pid, &data, &key, labels.as_deref()).await?,
        _ => run_client(&addr, &pid, &data, &key, labels.as_deref()).await?,
    };
    println!(
        "encoded {} rows to width {} in {:.3}s; sent {} bytes in {:.3}s; server {} {} bytes",
        report.n_rows,
        report.width,
        report.encode_s,
        report.bytes_sent,
        report.transmit_s,
        report.ack.status,
        report.ack.byte_count
    );
    Ok(())
}

pub async fn cmd_status(url: &str, path: &str) -> Result<(), CliError> {
    let v = fetch_status(url, path)
        .await
        .map_err(|e| CliError::Session(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&v).expect("JSON values serialize")
    );
    Ok(())
}
