//! In-process check that every downstream result computed from the encoded
//! Gram matrix matches the one computed from plaintext.

use std::fmt;

use okra_core::ml::cv::stratified_split;
use okra_core::ml::{
    classification_metrics, gen_synthetic, kpca_fit, kpca_transform, regression_metrics, svm_train,
};
use okra_core::ml::{SvmParams, SyntheticSpec};
use okra_core::{
    assemble_global, build_key, derive_plan, encode, plaintext_gram, DataMatrix, KernelSpec,
    Matrix, Seed,
};
use serde::Serialize;

use crate::CliError;

pub const GRAM_TOL: f64 = 1e-8;
pub const KPCA_MSE_TOL: f64 = 1e-10;
pub const KPCA_R2_TOL: f64 = 1e-10;

pub const ONE_PARTY_CAVEAT: &str = "only one input party: the privacy model assumes at least two \
     contributors, so this run checks correctness only";

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub samples_per_party: usize,
    pub features: usize,
    pub parties: usize,
    pub classes: usize,
    pub components: usize,
    pub kernels: Vec<KernelSpec>,
    pub seed: Seed,
    pub data_seed: u64,
    pub block_size: usize,
    pub redundancy: usize,
    pub svm: SvmParams,
}

impl VerifyOptions {
    pub fn new(
        samples_per_party: usize,
        features: usize,
        parties: usize,
        kernels: Vec<KernelSpec>,
        seed: Seed,
    ) -> Self {
        Self {
            samples_per_party,
            features,
            parties,
            classes: 3,
            components: 10,
            kernels,
            seed,
            data_seed: 0,
            block_size: 64,
            redundancy: 1,
            svm: SvmParams::default(),
        }
    }
}

/// Kernel defaults scaled to the feature count of synthetic data.
pub fn default_kernel(family: &str, features: usize) -> Option<KernelSpec> {
    let l = (2.0 * features as f64).sqrt();
    Some(match family {
        "linear" => KernelSpec::Linear,
        "rbf" => KernelSpec::Rbf {
            gamma: 1.0,
            length_scale: l,
        },
        "polynomial" => KernelSpec::Polynomial { degree: 2 },
        "rational_quadratic" | "rational-quadratic" => KernelSpec::RationalQuadratic {
            gamma: 1.0,
            length_scale: l,
            alpha: 1.0,
        },
        _ => return None,
    })
}

pub const FAMILIES: [&str; 4] = ["linear", "rbf", "polynomial", "rational_quadratic"];

#[derive(Clone, Debug, Serialize)]
pub struct KernelCheck {
    pub kernel: KernelSpec,
    pub gram_rel_error: f64,
    pub max_imag_residue: f64,
    pub kpca_components: usize,
    pub kpca_mse: f64,
    pub kpca_r2: f64,
    pub svm_agreement: f64,
    pub f1_okra: f64,
    pub f1_plain: f64,
    pub auc_okra: Option<f64>,
    pub auc_plain: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<KernelCheck>,
    pub caveat: Option<&'static str>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(c) = self.caveat {
            writeln!(f, "note: {c}")?;
        }
        for c in &self.checks {
            writeln!(
                f,
                "{:<19} gram_rel_err={:.3e} imag={:.1e} kpca_mse={:.3e} kpca_r2={:.12} svm_agree={:.1}% dF1={:.1e} dAUC={:.1e} {}",
                c.kernel.name(),
                c.gram_rel_error,
                c.max_imag_residue,
                c.kpca_mse,
                c.kpca_r2,
                100.0 * c.svm_agreement,
                (c.f1_okra - c.f1_plain).abs(),
                match (c.auc_okra, c.auc_plain) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => f64::NAN,
                },
                if c.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(got: &Matrix, want: &Matrix) -> f64 {
    got.max_abs_diff(want) / want.max_abs().max(f64::MIN_POSITIVE)
}

fn fail(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    if opts.parties == 0 || opts.samples_per_party < 2 || opts.features == 0 {
        return Err(CliError::Input(
            "verify needs parties >= 1, n >= 2 and f >= 1".into(),
        ));
    }
    let synth = SyntheticSpec::new(
        opts.parties,
        opts.samples_per_party,
        opts.features,
        opts.classes,
        opts.data_seed,
    );
    let parts = gen_synthetic(&synth).map_err(fail)?;
    let key = build_key(
        &opts.seed,
        &derive_plan(opts.features, opts.block_size, opts.redundancy).map_err(fail)?,
    )
    .map_err(fail)?;
    let encoded = parts
        .iter()
        .enumerate()
        .map(|(i, (d, _))| encode(d, &key, format!("party-{i}")))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let data: Vec<&DataMatrix> = parts.iter().map(|(d, _)| d).collect();
    let labels: Vec<i32> = parts.iter().flat_map(|(_, l)| l.iter().copied()).collect();

    let mut checks = Vec::new();
    for spec in &opts.kernels {
        let okra = assemble_global(&encoded, spec).map_err(fail)?;
        let plain = plaintext_gram(&data, spec).map_err(fail)?;
        checks.push(compare(
            opts,
            spec,
            okra.values(),
            &plain,
            okra.max_imag_residue(),
            &labels,
        )?);
    }
    Ok(VerifyReport {
        checks,
        caveat: (opts.parties == 1).then_some(ONE_PARTY_CAVEAT),
    })
}

/// Runs KPCA and SVM on both Gram matrices and compares their outputs.
pub fn compare(
    opts: &VerifyOptions,
    spec: &KernelSpec,
    okra: &Matrix,
    plain: &Matrix,
    max_imag: f64,
    labels: &[i32],
) -> Result<KernelCheck, CliError> {
    let gram_rel_error = relative_error(okra, plain);

    let m = opts.components.min(okra.rows().saturating_sub(1)).max(1);
    let km_o = kpca_fit(okra, m).map_err(fail)?;
    let km_p = kpca_fit(plain, m).map_err(fail)?;
    let kpca_components = km_o.n_components().min(km_p.n_components());
    let (proj_o, proj_p) = if km_o.n_components() == km_p.n_components() {
        (
            kpca_transform(&km_o, okra).map_err(fail)?,
            kpca_transform(&km_p, plain).map_err(fail)?,
        )
    } else {
        (
            Matrix::from_fn(1, 1, |_, _| 0.0),
            Matrix::from_fn(1, 1, |_, _| f64::NAN),
        )
    };
    let reg = regression_metrics(&proj_p, &proj_o).ok();
    let kpca_mse = reg.as_ref().and_then(|r| r.mse).unwrap_or(f64::INFINITY);
    let kpca_r2 = reg.as_ref().and_then(|r| r.r2).unwrap_or(f64::NEG_INFINITY);

    let (train, test) = stratified_split(labels, 0.2, opts.data_seed).map_err(fail)?;
    let y_train: Vec<i32> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<i32> = test.iter().map(|&i| labels[i]).collect();
    let run = |k: &Matrix| -> Result<_, CliError> {
        let model = svm_train(&k.select(&train, &train), &y_train, &opts.svm).map_err(fail)?;
        let kt = k.select(&test, &train);
        let pred = model.predict(&kt).map_err(fail)?;
        let scores = model.class_scores(&kt).map_err(fail)?;
        let m = classification_metrics(&y_test, &pred, Some((&model.classes, &scores)))
            .map_err(fail)?;
        Ok((pred, m))
    };
    let (pred_o, met_o) = run(okra)?;
    let (pred_p, met_p) = run(plain)?;
    let same = pred_o.iter().zip(&pred_p).filter(|(a, b)| a == b).count();
    let svm_agreement = same as f64 / pred_o.len().max(1) as f64;
    let f1_okra = met_o.f1_macro.unwrap_or(f64::NAN);
    let f1_plain = met_p.f1_macro.unwrap_or(f64::NAN);

    let passed = gram_rel_error <= GRAM_TOL
        && kpca_mse <= KPCA_MSE_TOL
        && kpca_r2 >= 1.0 - KPCA_R2_TOL
        && same == pred_o.len()
        && f1_okra == f1_plain
        && met_o.roc_auc == met_p.roc_auc;
    Ok(KernelCheck {
        kernel: spec.clone(),
        gram_rel_error,
        max_imag_residue: max_imag,
        kpca_components,
        kpca_mse,
        kpca_r2,
        svm_agreement,
        f1_okra,
        f1_plain,
        auc_okra: met_o.roc_auc,
        auc_plain: met_p.roc_auc,
        passed,
    })
}
