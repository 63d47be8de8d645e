//! Fixtures shared by the criterion benchmarks.

use bfqr_core::conformal::conformity_records;
use bfqr_core::dataset::{generate_synthetic, make_equal_mass_bins, split};
use bfqr_core::metrics::EvaluationRecord;
use bfqr_core::optimizer::{init_betas, ObjectivePoint};
use bfqr_core::{
    BetaVector, BinEdges, BinPartition, ConformityRecord, FitOptions, GeneratorOptions,
    GroupBinQuantiles, QuantileModel,
};

/// One seed of the synthetic benchmark, calibrated and ready to predict.
pub struct Fixture {
    pub records: Vec<ConformityRecord>,
    pub partition: BinPartition,
    pub quantiles: GroupBinQuantiles,
    pub betas: BetaVector,
    pub points: Vec<ObjectivePoint>,
    pub evaluations: Vec<EvaluationRecord>,
    pub alpha: f64,
}

impl Fixture {
    pub fn synthetic(n: usize, bins: usize, seed: u64) -> Self {
        let alpha = 0.1;
        let data = generate_synthetic(n, seed, GeneratorOptions::default()).with_group_feature();
        let parts = split(&data, [3.0, 1.0, 1.0], seed).expect("split");
        let fit = FitOptions {
            iterations: 300,
            ..FitOptions::default()
        };
        let model = QuantileModel::fit_dataset(&data.subset(&parts.train), (0.05, 0.95), &fit)
            .expect("fit");
        let cal = data.subset(&parts.calibration);
        let test = data.subset(&parts.test);
        let cal_preds = model.predict_dataset(&cal).expect("predict");
        let partition = make_equal_mass_bins(cal.labels(), bins).expect("bins");
        let records = conformity_records(&cal_preds, cal.labels(), cal.groups(), &partition);
        let quantiles =
            GroupBinQuantiles::build(&records, data.group_count(), bins).expect("cells");
        let betas = init_betas(&records, &partition, alpha, None).expect("targets");
        let test_preds = model.predict_dataset(&test).expect("predict");
        let points = test_preds
            .iter()
            .zip(test.groups())
            .map(|(&(q_lo, q_hi), &group)| ObjectivePoint { q_lo, q_hi, group })
            .collect::<Vec<_>>();
        let evaluations = points
            .iter()
            .zip(test.labels())
            .map(|(p, &y)| {
                let set = bfqr_core::bfqr::bfqr_interval(
                    p.q_lo,
                    p.q_hi,
                    p.group,
                    &betas,
                    &quantiles,
                    &partition,
                    BinEdges::Open,
                );
                EvaluationRecord::new(&set, p.group, y)
            })
            .collect();
        Self {
            records,
            partition,
            quantiles,
            betas,
            points,
            evaluations,
            alpha,
        }
    }
}
