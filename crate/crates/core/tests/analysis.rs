mod common;

use macau_core::analysis::{
    interaction_difference, interaction_difference_single, normalized_measurement_latents, rank_scores, rmse,
    select_divergent_dims, MeasurementLatentReport,
};
use macau_core::io::synthetic::{gen_synthetic, FeatureSpec, SyntheticSpec};
use macau_core::{run_sampler, DenseMatrix, ModeState, SamplerConfig, SamplerState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(seed: u64, dims: [usize; 3], d: usize) -> SamplerState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SamplerState {
        modes: dims
            .iter()
            .map(|&n| ModeState {
                latent: DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0)),
                mu: vec![0.0; d],
                lambda: DenseMatrix::identity(d),
                beta: None,
                lambda_beta: 5.0,
            })
            .collect(),
        alpha: 1.0,
        iteration: 0,
    }
}

fn rescale(state: &SamplerState, dim: usize, s: f64) -> SamplerState {
    let mut out = state.clone();
    for i in 0..out.modes[0].latent.nrows() {
        out.modes[0].latent.row_mut(i)[dim] *= s;
    }
    for j in 0..out.modes[1].latent.nrows() {
        out.modes[1].latent.row_mut(j)[dim] /= s;
    }
    out
}

proptest! {
    #[test]
    fn difference_and_normalized_latents_survive_cp_rescaling(
        seed in any::<u64>(),
        d in 1usize..5,
        s in prop_oneof![-8.0f64..-0.125, 0.125f64..8.0],
    ) {
        let state = random_state(seed, [5, 4, 2], d);
        let dim = (seed % d as u64) as usize;
        let scaled = rescale(&state, dim, s);
        let mask = vec![true; d];
        let a = interaction_difference_single(&state, &mask, (0, 1)).unwrap();
        let b = interaction_difference_single(&scaled, &mask, (0, 1)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let na = normalized_measurement_latents(&state).unwrap();
        let nb = normalized_measurement_latents(&scaled).unwrap();
        for (x, y) in na.as_slice().iter().zip(nb.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn rmse_is_symmetric_and_shift_invariant(
        pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50),
        c in -50.0f64..50.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = rmse(&x, &y).unwrap();
        prop_assert_eq!(r, rmse(&y, &x).unwrap());
        let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        prop_assert!((rmse(&xs, &ys).unwrap() - r).abs() <= 1e-9 * r.max(1.0));
    }

    #[test]
    fn ranking_follows_protein_relabeling(
        scores in proptest::collection::vec(prop_oneof![Just(1.0f64), 0.0f64..5.0], 1..30),
        seed in any::<u64>(),
    ) {
        let n = scores.len();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        // protein perm[j] of the relabeled set is protein j of the original
        let mut relabeled = vec![0.0; n];
        for (j, &p) in perm.iter().enumerate() {
            relabeled[p] = scores[j];
        }
        let a = rank_scores(&scores, n.min(3)).unwrap();
        let b = rank_scores(&relabeled, n.min(3)).unwrap();
        // scores line up position by position
        let sa: Vec<f64> = a.all.iter().map(|e| e.1).collect();
        let sb: Vec<f64> = b.all.iter().map(|e| e.1).collect();
        prop_assert_eq!(sa, sb);
        // and proteins map through the relabeling, up to order within ties
        let mut mapped: Vec<(u64, usize)> = a.all.iter().map(|&(j, s)| (s.to_bits(), perm[j])).collect();
        let mut got: Vec<(u64, usize)> = b.all.iter().map(|&(j, s)| (s.to_bits(), j)).collect();
        mapped.sort_unstable();
        got.sort_unstable();
        prop_assert_eq!(mapped, got);
        // ties are index-ascending
        for w in b.all.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }
}

#[test]
fn offline_difference_averages_single_samples() {
    let samples: Vec<SamplerState> = (0..4).map(|s| random_state(s, [3, 5, 2], 3)).collect();
    let mask = vec![true, false, true];
    let table = interaction_difference(&samples, &mask, (0, 1)).unwrap();
    let mut mean = DenseMatrix::zeros(3, 5);
    for s in &samples {
        let c = interaction_difference_single(s, &mask, (0, 1)).unwrap();
        for (m, v) in mean.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *m += v / 4.0;
        }
    }
    for (a, b) in table.chat.as_slice().iter().zip(mean.as_slice()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(table.chat.as_slice().iter().all(|&v| v >= 0.0));
    assert_eq!(table.q95.len(), 5);
}

/// Planted-offset recovery on a mid-sized synthetic set. Returns the number
/// of selected dimensions and, when any are selected, the correlation of the
/// masked reconstructed offset with the planted one.
fn recovery(seed: u64, offset_dims: usize) -> (usize, f64) {
    let spec = SyntheticSpec {
        mode_dims: vec![200, 30, 2],
        num_latent: 6,
        noise_sd: 0.3,
        features: Some(FeatureSpec { n_features: 500, n_prototypes: 15, ..Default::default() }),
        observe_fraction: vec![0.5, 0.5],
        holdout_fraction: 0.0,
        cold_start_fraction: 0.0,
        offset_dims,
        offset_scale: 1.5,
        seed,
        ..Default::default()
    };
    let ds = gen_synthetic(&spec).unwrap();
    let config = SamplerConfig { num_latent: 6, burn_in: 600, n_samples: 200, seed, keep_samples: true, ..Default::default() };
    let summary = run_sampler(&ds.train, &ds.modes, None, &config).unwrap();
    let report = MeasurementLatentReport::from_summary(&summary);
    let sel = select_divergent_dims(&report.samples, (0, 1), 3.0).unwrap();
    let n_sel = sel.mask.iter().filter(|&&m| m).count();
    if n_sel == 0 {
        return (0, f64::NAN);
    }
    // signed reconstruction of the slice difference on the selected dims
    let samples = summary.samples.as_ref().unwrap();
    let (nc, np) = (200, 30);
    let mut rec = vec![0.0; nc * np];
    for st in samples {
        let (c, p, t) = (&st.modes[0].latent, &st.modes[1].latent, &st.modes[2].latent);
        for i in 0..nc {
            for j in 0..np {
                for k in (0..6).filter(|&k| sel.mask[k]) {
                    rec[i * np + j] += c[(i, k)] * p[(j, k)] * (t[(1, k)] - t[(0, k)]);
                }
            }
        }
    }
    let truth: Vec<f64> = (0..nc * np).map(|x| ds.truth.planted_difference(x / np, x % np)).collect();
    (n_sel, common::pearson(&rec, &truth))
}

#[test]
fn planted_offsets_are_recovered() {
    let mut hits = 0;
    for seed in 1..=10 {
        let (n_sel, corr) = recovery(seed, 2);
        eprintln!("seed {seed}: selected {n_sel}, correlation {corr:.3}");
        if n_sel == 2 && corr >= 0.9 {
            hits += 1;
        }
    }
    assert!(hits >= 9, "recovered in {hits}/10 seeds");
}

#[test]
fn no_offset_selects_nothing() {
    let mut empty = 0;
    for seed in 1..=10 {
        let (n_sel, _) = recovery(seed, 0);
        eprintln!("seed {seed}: selected {n_sel}");
        if n_sel == 0 {
            empty += 1;
        }
    }
    assert!(empty >= 9, "empty mask in {empty}/10 seeds");
}
